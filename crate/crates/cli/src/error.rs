use std::fmt;

use carmil::ErrorKind;

pub const OTHER: u8 = 1;
pub const USAGE: u8 = 2;
pub const BAD_CONFIG: u8 = 3;
pub const IO: u8 = 4;
pub const MALFORMED: u8 = 5;
pub const UNUSABLE_SURVIVAL: u8 = 6;
pub const NUMERICAL: u8 = 7;

#[derive(Debug)]
pub enum CliError {
    /// The configuration file or a flag value is invalid.
    Config(String),
    Lib(carmil::Error),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => BAD_CONFIG,
            CliError::Other(_) => OTHER,
            CliError::Lib(e) => match e.kind() {
                ErrorKind::InvalidInput => BAD_CONFIG,
                ErrorKind::Io => IO,
                ErrorKind::MalformedData => MALFORMED,
                ErrorKind::UnusableSurvivalData => UNUSABLE_SURVIVAL,
                ErrorKind::Numerical => NUMERICAL,
            },
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            BAD_CONFIG => "bad-config",
            IO => "io",
            MALFORMED => "malformed-data",
            UNUSABLE_SURVIVAL => "unusable-survival-data",
            NUMERICAL => "numerical",
            _ => "other",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Other(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<carmil::Error> for CliError {
    fn from(e: carmil::Error) -> Self {
        CliError::Lib(e)
    }
}
