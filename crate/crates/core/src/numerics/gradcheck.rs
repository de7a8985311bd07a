use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of `f` against central finite differences.
///
/// `f` records a scalar loss on the supplied tape. Returns the maximum over
/// every scalar parameter of `|analytic - numeric| / max(1, |numeric|)`.
/// On return the store holds the analytic gradient.
pub fn finite_difference_check<F>(mut f: F, store: &mut ParamStore, step: f64) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        tape.backward(loss, store)?;
    }

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("finite_difference_check objective".into()));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let original = store.value(id).as_slice()[k];
            store.value_mut(id).as_mut_slice()[k] = original + step;
            let plus = eval(store)?;
            store.value_mut(id).as_mut_slice()[k] = original - step;
            let minus = eval(store)?;
            store.value_mut(id).as_mut_slice()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let analytic = store.grad(id).as_slice()[k];
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
