//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so trained models can be shared between checks.
//! Pass substrings as arguments to run a subset:
//! `cargo test -p carmil --test acceptance -- c4 c11`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use carmil::graph::{
    deltacon, joint_max_normalize, knn_adjacency, gaussian_kernel, mean_neighbor_distance, rewire_edges,
    DeltaConConfig, SpatialGraph,
};
use carmil::heads::{HeadConfig, HeadKind};
use carmil::losses::{car_loss, cox_loss, edge_auc, SurvivalLabel};
use carmil::model::{CarmilModel, PreparedSlide};
use carmil::numerics::{finite_difference_check, Matrix, Tape};
use carmil::synth::{generate, SynthConfig};
use carmil::train::{
    ablate_shuffle, evaluate_context_awareness, gradients_of, objective, run_nested_cv, train_one, CvPlan,
    NestedCvOutput, Pick, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = (bool, String);

fn prepare(cfg: &SynthConfig) -> Vec<PreparedSlide> {
    generate(cfg)
        .unwrap()
        .into_iter()
        .map(|s| PreparedSlide::new(s.tiles, s.label, 8).unwrap())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_slides(rng: &mut ChaCha8Rng, count: usize, n: usize, d: usize) -> Vec<PreparedSlide> {
    (0..count)
        .map(|i| {
            let mut cells: Vec<(usize, usize)> = (0..36).map(|c| (c % 6, c / 6)).collect();
            cells.shuffle(rng);
            let coords = Matrix::from_vec(n, 2, cells[..n].iter().flat_map(|&(x, y)| [x as f64, y as f64]).collect()).unwrap();
            let tiles = carmil::graph::TileSet::new(format!("r{i}"), coords, random_matrix(rng, n, d, 0.0, 1.0)).unwrap();
            let label = SurvivalLabel::new(rng.random_range(0.5..5.0), i % 3 != 1).unwrap();
            PreparedSlide::new(tiles, label, 4).unwrap()
        })
        .collect()
}

fn c1_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let slides = random_slides(&mut rng, 4, 12, 5);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for kind in HeadKind::ALL {
        // narrow heads keep the per-scalar sweep inside the time budget
        let cfg = TrainConfig {
            head: HeadConfig {
                hidden: 16,
                attention: 8,
                ..HeadConfig::new(kind)
            },
            ..TrainConfig::default()
        };
        let model = CarmilModel::new(cfg.model_config(5), 7).unwrap();
        let mut store = model.store().clone();
        let err = finite_difference_check(
            |s, tape| {
                let mut m = model.clone();
                *m.store_mut() = s.clone();
                Ok(objective(tape, &m, &slides, 0.5)?.total)
            },
            &mut store,
            1e-7,
        )
        .unwrap();
        parts.push(format!("{} {err:.1e}", kind.name()));
        worst = worst.max(err);
    }
    (worst < 1e-4, format!("max relative error {worst:.1e} ({})", parts.join(", ")))
}

/// Dense reference written independently of the library: degree by edge
/// count, ε from the larger of the two maximum degrees, nalgebra inverse.
fn deltacon_reference(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows();
    let degrees = |m: &Matrix| -> Vec<f64> {
        (0..n)
            .map(|p| (0..n).filter(|&q| m[(p, q)] != 0.0).count() as f64 + (0..n).filter(|&q| m[(q, p)] != 0.0).count() as f64)
            .collect()
    };
    let (da, db) = (degrees(a), degrees(b));
    let max_d = da.iter().chain(&db).copied().fold(0.0, f64::max);
    let eps = 1.0 / (1.0 + max_d);
    let s = |m: &Matrix, d: &[f64]| {
        let sys = nalgebra::DMatrix::from_fn(n, n, |p, q| {
            let id = if p == q { 1.0 + eps * eps * d[p] } else { 0.0 };
            id - eps * m[(p, q)]
        });
        sys.try_inverse().expect("diagonally dominant")
    };
    let diff = s(a, &da) - s(b, &db);
    1.0 / (1.0 + diff.norm())
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let density = rng.random_range(0.1..0.6);
    let mut m = Matrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            if p != q && rng.random::<f64>() < density {
                m[(p, q)] = rng.random_range(0.05..1.0);
            }
        }
    }
    m
}

fn c2_deltacon_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = DeltaConConfig::default();
    let mut worst = 0.0f64;
    let mut identical = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let (a, b) = (random_graph(&mut rng, n), random_graph(&mut rng, n));
        let (ga, gb) = (
            SpatialGraph::from_adjacency(a.clone()).unwrap(),
            SpatialGraph::from_adjacency(b.clone()).unwrap(),
        );
        worst = worst.max((deltacon(&ga, &gb, &cfg).unwrap() - deltacon_reference(&a, &b)).abs());
        identical &= deltacon(&ga, &ga, &cfg).unwrap() == 1.0;
    }
    (
        worst < 1e-10 && identical,
        format!("max deviation {worst:.1e}; identical graphs score 1.0: {identical}"),
    )
}

fn c3_monotonicity() -> Check {
    let fractions = [0.0, 0.25, 0.5, 1.0];
    let cfg = DeltaConConfig::default();
    let mut sums = [0.0; 4];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let pts = random_matrix(&mut rng, 32, 2, 0.0, 10.0);
        let g = knn_adjacency(&gaussian_kernel(&pts).unwrap(), 8).unwrap();
        for (slot, &f) in sums.iter_mut().zip(&fractions) {
            *slot += deltacon(&g, &rewire_edges(&g, f, seed).unwrap(), &cfg).unwrap();
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / 100.0).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    (decreasing, format!("mean scores {:?}", means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>()))
}

fn c4_car_sanity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_half = 0.0f64;
    let mut worst_perfect = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(2..=20);
        let soft = random_matrix(&mut rng, n, n, 0.0, 1.0);
        let binary = soft.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        for a in [&soft, &binary] {
            let mut t = Tape::new();
            let half = t.constant(Matrix::filled(n, n, 0.5));
            let l = car_loss(&mut t, half, a).unwrap();
            worst_half = worst_half.max((t.value(l).item() - std::f64::consts::LN_2).abs());
        }
        let mut t = Tape::new();
        let exact = t.constant(binary.clone());
        let l = car_loss(&mut t, exact, &binary).unwrap();
        worst_perfect = worst_perfect.max(t.value(l).item());
    }
    (
        worst_half <= 1e-12 && worst_perfect < 1e-3,
        format!("|loss(0.5) - ln 2| <= {worst_half:.1e}; perfect binary loss <= {worst_perfect:.1e}"),
    )
}

fn c5_beta_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let slides = random_slides(&mut rng, 5, 10, 4);
    let mut ok = true;
    for kind in HeadKind::ALL {
        let cfg = TrainConfig {
            head: HeadConfig {
                chowder_r: 2,
                ..HeadConfig::new(kind)
            },
            ..TrainConfig::default()
        };
        let model = CarmilModel::new(cfg.model_config(4), 3).unwrap();
        let bits = |g: Vec<Matrix>| -> Vec<u64> { g.iter().flat_map(|m| m.as_slice().iter().map(|v| v.to_bits())).collect() };
        let at0 = bits(gradients_of(&model, &slides, 0.0, Pick::Total).unwrap());
        let mil = bits(gradients_of(&model, &slides, 0.0, Pick::Mil).unwrap());
        let at1 = bits(gradients_of(&model, &slides, 1.0, Pick::Total).unwrap());
        let car = bits(gradients_of(&model, &slides, 1.0, Pick::Car).unwrap());
        ok &= at0 == mil && at1 == car;
    }
    (ok, "β=0 total == MIL and β=1 total == CAR, bitwise, all heads".into())
}

fn c6_reconstruction() -> Check {
    let slides = prepare(&SynthConfig {
        n_slides: 10,
        seed: 6,
        ..SynthConfig::default()
    });
    let cfg = TrainConfig {
        beta: 1.0,
        epochs: 200,
        learning_rate: 0.001,
        ..TrainConfig::default()
    };
    let mut model = CarmilModel::new(cfg.model_config(slides[0].tiles.feature_dim()), 6).unwrap();
    train_one(&mut model, &slides, &cfg).unwrap();
    let aucs: Vec<f64> = slides
        .iter()
        .map(|s| edge_auc(&model.reconstruct(s).unwrap().unwrap(), &s.graph.adjacency).unwrap())
        .collect();
    let m = mean(&aucs);
    (m > 0.9, format!("mean edge AUC {m:.4} over 10 slides after 200 steps"))
}

struct Trained {
    slides: Vec<PreparedSlide>,
    model: CarmilModel,
}

fn train_context_model() -> Trained {
    let slides = prepare(&SynthConfig {
        n_slides: 200,
        seed: 7,
        ..SynthConfig::default()
    });
    let cfg = TrainConfig {
        beta: 0.5,
        epochs: 30,
        learning_rate: 0.003,
        ..TrainConfig::default()
    };
    let mut model = CarmilModel::new(cfg.model_config(slides[0].tiles.feature_dim()), 7).unwrap();
    train_one(&mut model, &slides, &cfg).unwrap();
    Trained { slides, model }
}

fn c7_context(t: &Trained) -> Check {
    let report = evaluate_context_awareness(std::slice::from_ref(&t.model), &t.slides, 8).unwrap();
    let f = report.fraction_z_above_x();
    (
        f >= 0.9,
        format!(
            "DeltaCon(A, Ã(Z)) > DeltaCon(A, Ã(X)) on {:.1}% of 200 slides (means {:.4} vs {:.4})",
            100.0 * f,
            report.summary.mean_deltacon_z,
            report.summary.mean_deltacon_x
        ),
    )
}

fn c12_heatmap(t: &Trained) -> Check {
    let slide = &t.slides[0];
    let mut maps = vec![
        mean_neighbor_distance(&slide.tiles.features, &slide.graph).unwrap(),
        mean_neighbor_distance(&t.model.embeddings(slide).unwrap(), &slide.graph).unwrap(),
    ];
    joint_max_normalize(&mut maps);
    let (x, z) = (mean(&maps[0]), mean(&maps[1]));
    (z < x, format!("normalized mean neighbor distance: embeddings {z:.4}, raw features {x:.4}"))
}

const C9_SLIDES: usize = 100;

fn c9_dataset(seed: u64, permute: bool) -> Vec<PreparedSlide> {
    let mut slides = prepare(&SynthConfig {
        n_slides: C9_SLIDES,
        seed,
        ..SynthConfig::default()
    });
    if permute {
        let mut labels: Vec<SurvivalLabel> = slides.iter().map(|s| s.label).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        for (s, l) in slides.iter_mut().zip(labels) {
            s.label = l;
        }
    }
    slides
}

fn car_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        head: HeadConfig::new(HeadKind::MeanPool),
        ..TrainConfig::default()
    }
}

fn plain_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::plain(HeadConfig::new(HeadKind::MeanPool))
    }
}

fn plan(seed: u64) -> CvPlan {
    CvPlan {
        seed,
        ..CvPlan::default()
    }
}

struct MeanPoolRuns {
    car: Vec<f64>,
    plain: Vec<f64>,
    car_null: Vec<f64>,
    plain_null: Vec<f64>,
    /// CAR run on the unpermuted seed-0 dataset, reused by the shuffle ablation.
    first: Option<(Vec<PreparedSlide>, NestedCvOutput)>,
}

fn run_mean_pool_cv() -> MeanPoolRuns {
    let mut t = MeanPoolRuns {
        car: vec![],
        plain: vec![],
        car_null: vec![],
        plain_null: vec![],
        first: None,
    };
    for seed in 0..3 {
        for permute in [false, true] {
            let slides = c9_dataset(seed, permute);
            let car = run_nested_cv(&slides, &car_config(seed), &plan(seed)).unwrap();
            let plain = run_nested_cv(&slides, &plain_config(seed), &plan(seed)).unwrap();
            let (cs, ps) = if permute {
                (&mut t.car_null, &mut t.plain_null)
            } else {
                (&mut t.car, &mut t.plain)
            };
            cs.push(car.report.mean_cindex);
            ps.push(plain.report.mean_cindex);
            if seed == 0 && !permute {
                t.first = Some((slides, car));
            }
        }
    }
    t
}

fn c9_regularized_gain(t: &MeanPoolRuns) -> Check {
    let (car, plain) = (mean(&t.car), mean(&t.plain));
    let (car0, plain0) = (mean(&t.car_null), mean(&t.plain_null));
    let null_ok = (car0 - 0.5).abs() <= 0.1 && (plain0 - 0.5).abs() <= 0.1;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    (
        car - plain > 0.01 && null_ok,
        format!(
            "CAR {car:.4} ({}) vs plain {plain:.4} ({}), gap {:+.4}; permuted labels CAR {car0:.4} plain {plain0:.4}",
            fmt(&t.car),
            fmt(&t.plain),
            car - plain
        ),
    )
}

fn c8_shuffle(t: &MeanPoolRuns) -> Check {
    let (slides, out) = t.first.as_ref().expect("seed-0 run");
    let mut deltas = Vec::new();
    for (ensemble, split) in out.ensembles.iter().zip(&out.outer_splits) {
        let test: Vec<PreparedSlide> = split.test.iter().map(|&i| slides[i].clone()).collect();
        for seed in 0..5 {
            let o = ablate_shuffle(ensemble, &test, seed).unwrap();
            deltas.push(o.cindex_original - o.cindex_shuffled);
        }
    }
    let m = mean(&deltas);
    (m > 0.0, format!("mean C-index drop {m:+.4} over 5 folds x 5 shuffle seeds"))
}

fn c10_protocol() -> Check {
    let slides = prepare(&SynthConfig {
        n_slides: 50,
        seed: 10,
        ..SynthConfig::default()
    });
    let cfg = car_config(10);
    let a = run_nested_cv(&slides, &cfg, &plan(10)).unwrap();
    let b = run_nested_cv(&slides, &cfg, &plan(10)).unwrap();
    let shape = a.report.folds.len() == 5
        && a.ensembles.len() == 5
        && a.ensembles.iter().all(|e| e.len() == 15)
        && a.report.folds.iter().all(|f| f.ensemble_size == 15);
    let same_report = a.report.to_json() == b.report.to_json();
    let same_models = a
        .ensembles
        .iter()
        .zip(&b.ensembles)
        .all(|(x, y)| x.members.iter().zip(&y.members).all(|(p, q)| p.checkpoint() == q.checkpoint()));
    (
        shape && same_report && same_models,
        format!("5 folds x 15 members: {shape}; rerun report identical: {same_report}; members identical: {same_models}"),
    )
}

fn c11_cox() -> Check {
    let loss = |risks: &[f64], labels: &[SurvivalLabel]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<_> = risks.iter().map(|&r| t.constant(Matrix::scalar(r))).collect();
        let l = cox_loss(&mut t, &vars, labels).unwrap();
        t.value(l).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_shift = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let labels: Vec<SurvivalLabel> = (0..n)
            .map(|i| SurvivalLabel::new(rng.random_range(0.1..10.0), i == 0 || rng.random::<bool>()).unwrap())
            .collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = risks.iter().map(|r| r + c).collect();
        worst_shift = worst_shift.max((loss(&risks, &labels) - loss(&shifted, &labels)).abs());
    }
    let singleton = loss(&[0.7], &[SurvivalLabel::new(2.0, true).unwrap()]);
    let two = loss(
        &[0.0, 0.0],
        &[SurvivalLabel::new(1.0, true).unwrap(), SurvivalLabel::new(2.0, true).unwrap()],
    );
    let two_err = (two - std::f64::consts::LN_2 / 2.0).abs();
    (
        worst_shift < 1e-10 && singleton == 0.0 && two_err <= 1e-12,
        format!("shift deviation {worst_shift:.1e}; singleton {singleton}; two-sample error {two_err:.1e}"),
    )
}

struct Runner {
    filters: Vec<String>,
    failures: usize,
}

impl Runner {
    fn wants(&self, id: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| f == id)
    }

    fn report(&mut self, id: &str, title: &str, limit: Option<Duration>, check: impl FnOnce() -> Check) {
        let start = Instant::now();
        let (mut pass, mut detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > limit {
                pass = false;
                detail.push_str(&format!("; over the {} s limit", limit.as_secs()));
            }
        }
        if !pass {
            self.failures += 1;
        }
        println!(
            "{} {id} {title}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut r = Runner { filters, failures: 0 };
    let secs = |s| Some(Duration::from_secs(s));

    if r.wants("c1") {
        r.report("c1", "gradient correctness", secs(10), c1_gradients);
    }
    if r.wants("c2") {
        r.report("c2", "deltacon oracle", None, c2_deltacon_oracle);
    }
    if r.wants("c3") {
        r.report("c3", "deltacon monotonicity", None, c3_monotonicity);
    }
    if r.wants("c4") {
        r.report("c4", "reconstruction loss sanity", None, c4_car_sanity);
    }
    if r.wants("c5") {
        r.report("c5", "beta reduction", None, c5_beta_reduction);
    }
    if r.wants("c6") {
        r.report("c6", "graph autoencoder reconstruction", secs(120), c6_reconstruction);
    }
    if r.wants("c7") || r.wants("c12") {
        let start = Instant::now();
        let trained = catch_unwind(train_context_model);
        let train_time = start.elapsed();
        match trained {
            Ok(t) => {
                if r.wants("c7") {
                    let limit = Duration::from_secs(600).saturating_sub(train_time);
                    r.report("c7", "context awareness", Some(limit), || c7_context(&t));
                }
                if r.wants("c12") {
                    r.report("c12", "neighbor-distance heatmap", None, || c12_heatmap(&t));
                }
            }
            Err(_) => {
                r.report("c7", "context awareness", None, || (false, "training panicked".into()));
                r.report("c12", "neighbor-distance heatmap", None, || (false, "training panicked".into()));
            }
        }
    }
    if r.wants("c8") || r.wants("c9") {
        match catch_unwind(run_mean_pool_cv) {
            Ok(t) => {
                if r.wants("c8") {
                    r.report("c8", "shuffle ablation", None, || c8_shuffle(&t));
                }
                if r.wants("c9") {
                    r.report("c9", "regularized vs plain mean pooling", None, || c9_regularized_gain(&t));
                }
            }
            Err(_) => {
                r.report("c8", "shuffle ablation", None, || (false, "nested CV panicked".into()));
                r.report("c9", "regularized vs plain mean pooling", None, || (false, "nested CV panicked".into()));
            }
        }
    }
    if r.wants("c10") {
        r.report("c10", "protocol fidelity", None, c10_protocol);
    }
    if r.wants("c11") {
        r.report("c11", "cox loss properties", None, c11_cox);
    }
    if r.failures > 0 {
        println!("{} criteria failed", r.failures);
        std::process::exit(1);
    }
}
