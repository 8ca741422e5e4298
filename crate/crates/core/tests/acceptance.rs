//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not change the exit status unless
//! `ACCEPTANCE_STRICT=1` is set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rresnet::data::{build_covariance_dataset, gromov_delta, random_tree_edges};
use rresnet::experiment::{train, ExperimentConfig, RunReport};
use rresnet::featuremaps::horosphere_project;
use rresnet::gyro::hyp_matvec;
use rresnet::manifolds::{dist, exp_map, proj_tangent, Manifold, Point};
use rresnet::model::{HeadKind, ManifoldSpec, Model, ModelConfig, ModelSpec};
use rresnet::numerics::{finite_diff_grad, mat_exp_sym, relative_error, Matrix, Tape};
use rresnet::optim::ParamStore;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (
            1,
            "Euclidean reduction oracle",
            Duration::from_secs(1),
            euclidean_reduction,
        ),
        (
            2,
            "HNN collapse oracle",
            Duration::from_secs(1),
            hnn_collapse,
        ),
        (3, "geodesic speed", Duration::from_secs(10), geodesic_speed),
        (
            4,
            "gradient suite",
            Duration::from_secs(120),
            gradient_suite,
        ),
        (
            5,
            "SPD metric properties",
            Duration::from_secs(5),
            spd_metric_properties,
        ),
        (
            6,
            "closed-form spot checks",
            Duration::from_secs(1),
            closed_forms,
        ),
        (
            7,
            "geometry direction on SIR trees",
            Duration::from_secs(600),
            sir_direction,
        ),
        (8, "SPD direction", Duration::from_secs(600), spd_direction),
        (
            9,
            "Gromov delta diagnostic",
            Duration::from_secs(30),
            gromov_delta_checks,
        ),
        (
            10,
            "Cholesky filtering",
            Duration::from_secs(5),
            cholesky_filtering,
        ),
        (11, "determinism", Duration::from_secs(120), determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run)
            .unwrap_or_else(|e| outcome(false, format!("panicked: {}", panic_message(&e))));
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = result.pass && in_time;
        if !pass {
            failed += 1;
        }
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
        let late = if in_time { "" } else { ", over time budget" };
        println!(
            "{} {id:>2} {name}: {} ({timing}{late})",
            if pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    mat_exp_sym(&uniform(rng, n, n, scale).symmetrize()).unwrap()
}

// ---------------------------------------------------------------- 1

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn mm(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn tr(a: &Rows) -> Rows {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

fn add_bias(a: &Rows, b: &[f64]) -> Rows {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

fn col_sums(a: &Rows) -> Vec<f64> {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).sum())
        .collect()
}

fn zip_with(a: &Rows, b: &Rows, f: impl Fn(f64, f64) -> f64) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect())
        .collect()
}

struct PlainBlock {
    w1: Rows,
    b1: Vec<f64>,
    w2: Rows,
    b2: Vec<f64>,
}

/// Loss and gradients of `h₀ = xE`, `h ← h + W₂ᵀrelu(W₁ᵀh + b₁) + b₂`,
/// scores `hW + b`, mean softmax cross-entropy.
fn plain_resnet(
    x: &Rows,
    e: &Rows,
    blocks: &[PlainBlock],
    w: &Rows,
    b: &[f64],
    labels: &[usize],
) -> (Rows, f64, Vec<Rows>) {
    let n = x.len() as f64;
    let mut hs = vec![mm(x, e)];
    let mut pre = Vec::new();
    for blk in blocks {
        let h = hs.last().unwrap();
        let a = add_bias(&mm(h, &blk.w1), &blk.b1);
        let r: Rows = a
            .iter()
            .map(|row| row.iter().map(|v| v.max(0.0)).collect())
            .collect();
        let u = add_bias(&mm(&r, &blk.w2), &blk.b2);
        hs.push(zip_with(h, &u, |p, q| p + q));
        pre.push((a, r));
    }
    let h = hs.last().unwrap();
    let scores = add_bias(&mm(h, w), b);
    let mut loss = 0.0;
    let mut ds = Vec::new();
    for (row, &y) in scores.iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[y];
        ds.push(
            row.iter()
                .enumerate()
                .map(|(j, v)| ((v - max).exp() / z - if j == y { 1.0 } else { 0.0 }) / n)
                .collect(),
        );
    }
    loss /= n;
    let mut grads = vec![mm(&tr(h), &ds), vec![col_sums(&ds)]];
    let mut dh = mm(&ds, &tr(w));
    let mut block_grads = Vec::new();
    for (i, blk) in blocks.iter().enumerate().rev() {
        let (a, r) = &pre[i];
        let dw2 = mm(&tr(r), &dh);
        let db2 = col_sums(&dh);
        let dr = mm(&dh, &tr(&blk.w2));
        let da = zip_with(&dr, a, |g, v| if v > 0.0 { g } else { 0.0 });
        let dw1 = mm(&tr(&hs[i]), &da);
        let db1 = col_sums(&da);
        dh = zip_with(&dh, &mm(&da, &tr(&blk.w1)), |p, q| p + q);
        block_grads.push([dw1, vec![db1], dw2, vec![db2]]);
    }
    grads.push(mm(&tr(x), &dh));
    block_grads.reverse();
    for g in block_grads {
        grads.extend(g);
    }
    (scores, loss, grads)
}

fn euclidean_reduction() -> Outcome {
    let (mut fwd, mut grad) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, input, d, hidden, classes) = (5, 3, 4, 6, 3);
        let cfg = ModelConfig {
            manifold: ManifoldSpec {
                name: "euclidean".into(),
                dim: d,
                curvature: -1.0,
            },
            model: ModelSpec {
                depth: 2,
                vector_field: "embedded".into(),
                hidden: vec![hidden],
                ..Default::default()
            },
            input_dim: input,
            num_classes: classes,
            head: HeadKind::Linear,
        };
        let mut store = ParamStore::new();
        let model = Model::new(&cfg, &mut store, &mut rng).unwrap();
        let x = uniform(&mut rng, n, input, 1.5);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();

        let tape = Tape::new();
        let params = store.bind(&tape);
        let scores = model
            .scores(&params, tape.constant(x.clone()), None)
            .unwrap();
        let loss = scores.softmax_cross_entropy(&labels);
        let grads = tape.backward(loss);
        let named = |name: &str| -> (Rows, Matrix) {
            let (id, p) = store
                .iter()
                .find(|(_, p)| p.name == name)
                .unwrap_or_else(|| panic!("no parameter {name}"));
            (to_rows(&p.value), grads.wrt(params[id]))
        };
        let block = |i: usize| PlainBlock {
            w1: named(&format!("layer{i}.field.0.weight")).0,
            b1: named(&format!("layer{i}.field.0.bias")).0[0].clone(),
            w2: named(&format!("layer{i}.field.1.weight")).0,
            b2: named(&format!("layer{i}.field.1.bias")).0[0].clone(),
        };
        let blocks = [block(0), block(1)];
        let (ref_scores, ref_loss, ref_grads) = plain_resnet(
            &to_rows(&x),
            &named("embed.weight").0,
            &blocks,
            &named("head.weight").0,
            &named("head.bias").0[0],
            &labels,
        );
        let got = to_rows(&scores.value());
        for (a, b) in got.iter().flatten().zip(ref_scores.iter().flatten()) {
            fwd = fwd.max((a - b).abs());
        }
        fwd = fwd.max((loss.item() - ref_loss).abs());
        let names = [
            "head.weight",
            "head.bias",
            "embed.weight",
            "layer0.field.0.weight",
            "layer0.field.0.bias",
            "layer0.field.1.weight",
            "layer0.field.1.bias",
            "layer1.field.0.weight",
            "layer1.field.0.bias",
            "layer1.field.1.weight",
            "layer1.field.1.bias",
        ];
        for (name, reference) in names.iter().zip(&ref_grads) {
            let g = to_rows(&named(name).1);
            for (a, b) in g.iter().flatten().zip(reference.iter().flatten()) {
                grad = grad.max((a - b).abs());
            }
        }
        if store.len() != names.len() {
            return outcome(
                false,
                format!(
                    "model has {} parameters, reference has {}",
                    store.len(),
                    names.len()
                ),
            );
        }
    }
    outcome(
        fwd <= 1e-12 && grad <= 1e-10,
        format!("20 instances, max forward error {fwd:.1e}, max gradient error {grad:.1e}"),
    )
}

// ---------------------------------------------------------------- 2

fn hnn_collapse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(2..6);
        let c: f64 = rng.random_range(0.2..2.0);
        let m1 = uniform(&mut rng, d, d, 1.0);
        let m2 = uniform(&mut rng, d, d, 1.0);
        let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = rng.random_range(0.05..0.95) / c.sqrt();
        let x: Vec<f64> = dir.iter().map(|v| v * r / norm).collect();
        let direct = hyp_matvec(&m2.matmul(&m1), &x, -c).unwrap();
        let nested = hyp_matvec(&m2, &hyp_matvec(&m1, &x, -c).unwrap(), -c).unwrap();
        for (a, b) in direct.iter().zip(&nested) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("1000 draws, max deviation {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

fn random_point(m: Manifold, rng: &mut ChaCha8Rng) -> Point {
    let n = m.dim_param();
    let coords = match m {
        Manifold::Euclidean { .. } => uniform(rng, 1, n, 2.0),
        Manifold::Poincare { .. } => {
            let d = uniform(rng, 1, n, 1.0);
            d.scale(rng.random_range(0.0..0.9) * m.ball_limit() / d.frobenius_norm())
        }
        Manifold::Sphere { .. } => {
            let d = uniform(rng, 1, n + 1, 1.0);
            d.scale(1.0 / d.frobenius_norm())
        }
        Manifold::SpdAffine { .. } | Manifold::SpdLogEuclidean { .. } => random_spd(rng, n, 1.0),
    };
    Point::new(m, coords).unwrap()
}

fn five_manifolds() -> [Manifold; 5] {
    [
        Manifold::euclidean(3),
        Manifold::poincare(3, -1.0).unwrap(),
        Manifold::sphere(3),
        Manifold::spd_affine(3),
        Manifold::spd_log_euclidean(3),
    ]
}

fn geodesic_speed() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut parts = Vec::new();
    let mut pass = true;
    for m in five_manifolds() {
        let mut worst = 0.0f64;
        for _ in 0..500 {
            let p = random_point(m, &mut rng);
            let (r, c) = m.point_shape();
            let v = proj_tangent(&p, &uniform(&mut rng, r, c, 1.0)).unwrap();
            let len = rng.random_range(0.01..2.5);
            let v = p.tangent(v.coords.scale(len / v.norm().unwrap())).unwrap();
            let q = exp_map(&p, &v).unwrap();
            worst = worst.max((dist(&p, &q).unwrap() - v.norm().unwrap()).abs());
        }
        pass &= worst <= 1e-6;
        parts.push(format!("{} {worst:.1e}", m.name()));
    }
    outcome(
        pass,
        format!("max |dist - ‖v‖| per manifold: {}", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- 4

fn op_gradient_error(m: Manifold, rng: &mut ChaCha8Rng) -> f64 {
    let p = random_point(m, rng);
    let y = random_point(m, rng);
    let (r, c) = m.point_shape();
    let v = proj_tangent(&p, &uniform(rng, r, c, 0.5)).unwrap().coords;
    let weights = uniform(rng, r, c, 1.0);
    let f = |x: &Matrix, v: &Matrix| -> (f64, Vec<Matrix>) {
        let tape = Tape::new();
        let (xv, vv) = (tape.param(x.clone()), tape.param(v.clone()));
        let out = m.exp_tape(xv, vv).unwrap();
        let d2 = m
            .sq_dist_tape(out, tape.constant(y.coords.clone()))
            .unwrap();
        let s = out.mul(tape.constant(weights.clone())).sum().add(d2.sum());
        let g = tape.backward(s);
        (s.item(), vec![g.wrt(xv), g.wrt(vv)])
    };
    let (_, analytic) = f(&p.coords, &v);
    let numeric =
        finite_diff_grad(|a| Ok(f(&a[0], &a[1]).0), &[p.coords.clone(), v], 1e-6).unwrap();
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| relative_error(a, b, 1e-8))
        .fold(0.0, f64::max)
}

fn model_gradient_error(
    manifold: &str,
    dim: usize,
    input: usize,
    spec: ModelSpec,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spd = manifold.starts_with("spd");
    let cfg = ModelConfig {
        manifold: ManifoldSpec {
            name: manifold.into(),
            dim,
            curvature: -1.0,
        },
        model: spec,
        input_dim: input,
        num_classes: 3,
        head: if spd {
            HeadKind::SpdLogEig
        } else {
            HeadKind::Linear
        },
    };
    let mut store = ParamStore::new();
    let model = Model::new(&cfg, &mut store, &mut rng).unwrap();
    let inputs: Vec<Matrix> = if spd {
        (0..3).map(|_| random_spd(&mut rng, input, 0.7)).collect()
    } else {
        vec![uniform(&mut rng, 4, input, 0.5)]
    };
    let labels: Vec<usize> = if spd { vec![0, 1, 2] } else { vec![0, 1, 2, 1] };
    let loss_of = |store: &ParamStore, tape: &Tape| -> (f64, Vec<Matrix>) {
        let params = store.bind(tape);
        let mut total = tape.scalar(0.0);
        for (i, x) in inputs.iter().enumerate() {
            let s = model
                .scores(&params, tape.constant(x.clone()), None)
                .unwrap();
            let l = if spd {
                s.softmax_cross_entropy(&labels[i..=i])
            } else {
                s.softmax_cross_entropy(&labels)
            };
            total = total.add(l);
        }
        let g = tape.backward(total);
        (
            total.item(),
            params.vars().iter().map(|v| g.wrt(*v)).collect(),
        )
    };
    let (_, analytic) = loss_of(&store, &Tape::new());
    let values: Vec<Matrix> = store.iter().map(|(_, p)| p.value.clone()).collect();
    let numeric = finite_diff_grad(
        |vals| {
            let mut s = store.clone();
            s.replace_values(vals.to_vec())?;
            Ok(loss_of(&s, &Tape::new()).0)
        },
        &values,
        1e-6,
    )
    .unwrap();
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| relative_error(a, b, 1e-6))
        .fold(0.0, f64::max)
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut parts = Vec::new();
    let mut pass = true;
    for m in five_manifolds() {
        let worst = (0..5)
            .map(|_| op_gradient_error(m, &mut rng))
            .fold(0.0, f64::max);
        pass &= worst <= 1e-4;
        parts.push(format!("{} ops {worst:.1e}", m.name()));
    }
    let spec = |field: &str, features: &str| ModelSpec {
        depth: 2,
        vector_field: field.into(),
        feature_map: features.into(),
        num_features: 4,
        hidden: vec![5],
        ..Default::default()
    };
    let models = [
        (
            "euclidean",
            4,
            3,
            spec("feature", "hyperplane"),
            "euclidean hyperplane",
        ),
        (
            "euclidean",
            4,
            3,
            spec("embedded", "hyperplane"),
            "euclidean embedded",
        ),
        (
            "poincare",
            3,
            3,
            spec("feature", "horosphere"),
            "poincare horosphere",
        ),
        (
            "poincare",
            3,
            3,
            spec("embedded", "horosphere"),
            "poincare embedded",
        ),
        (
            "poincare",
            3,
            3,
            spec("feature", "pseudo_hyperplane"),
            "poincare pseudo-hyperplane",
        ),
        (
            "euclidean",
            3,
            3,
            spec("feature", "pseudo_hyperplane"),
            "euclidean pseudo-hyperplane",
        ),
        (
            "sphere",
            3,
            3,
            spec("embedded", "hyperplane"),
            "sphere embedded",
        ),
        (
            "sphere",
            3,
            3,
            spec("feature", "pseudo_hyperplane"),
            "sphere pseudo-hyperplane",
        ),
        (
            "spd_affine",
            3,
            4,
            ModelSpec {
                bimap_dims: vec![3, 3],
                ..spec("feature", "spd_eig")
            },
            "spd_affine eigenvalue",
        ),
        (
            "spd_logeuclidean",
            3,
            3,
            spec("feature", "spd_eig"),
            "spd_logeuclidean eigenvalue",
        ),
        (
            "spd_affine",
            3,
            3,
            spec("spd_spectral", "spd_eig"),
            "spd_affine spectral",
        ),
        (
            "spd_logeuclidean",
            3,
            3,
            spec("spd_structured", "spd_eig"),
            "spd_logeuclidean structured",
        ),
        (
            "spd_affine",
            3,
            3,
            spec("spd_parsimonious", "spd_eig"),
            "spd_affine parsimonious",
        ),
        (
            "spd_affine",
            2,
            2,
            spec("spd_embedded", "spd_eig"),
            "spd_affine embedded",
        ),
    ];
    for (i, (manifold, dim, input, spec, label)) in models.into_iter().enumerate() {
        let err = model_gradient_error(manifold, dim, input, spec, 40 + i as u64);
        pass &= err <= 1e-3;
        parts.push(format!("{label} model {err:.1e}"));
    }
    outcome(pass, format!("max relative error: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 5

fn spd_metric_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut invariance = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..6);
        let m = Manifold::spd_affine(n);
        let x = random_spd(&mut rng, n, 0.8);
        let y = random_spd(&mut rng, n, 0.8);
        let a = uniform(&mut rng, n, n, 1.0).add(&Matrix::identity(n).scale(2.0));
        let moved =
            |s: &Matrix| Point::new(m, a.matmul(s).matmul(&a.transpose()).symmetrize()).unwrap();
        let before = dist(
            &Point::new(m, x.clone()).unwrap(),
            &Point::new(m, y.clone()).unwrap(),
        )
        .unwrap();
        let after = dist(&moved(&x), &moved(&y)).unwrap();
        invariance = invariance.max((before - after).abs());
    }
    let mut identity = 0.0f64;
    for n in 1..=8 {
        let m = Manifold::spd_affine(n);
        let d = dist(
            &Point::origin(m),
            &Point::new(m, Matrix::identity(n).scale(std::f64::consts::E)).unwrap(),
        )
        .unwrap();
        identity = identity.max((d - (n as f64).sqrt()).abs());
    }
    let mut consistency = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..6);
        let m = Manifold::spd_log_euclidean(n);
        let p = Point::new(m, random_spd(&mut rng, n, 1.0)).unwrap();
        let v = p
            .tangent(uniform(&mut rng, n, n, 1.0).symmetrize())
            .unwrap();
        let q = exp_map(&p, &v).unwrap();
        consistency = consistency.max((dist(&p, &q).unwrap() - v.coords.frobenius_norm()).abs());
    }
    outcome(
        invariance <= 1e-8 && identity <= 1e-10 && consistency <= 1e-9,
        format!("congruence {invariance:.1e}, d(I, eI) {identity:.1e}, log-Euclidean exp/dist {consistency:.1e}"),
    )
}

// ---------------------------------------------------------------- 6

fn closed_forms() -> Outcome {
    let ball = Manifold::poincare(2, -1.0).unwrap();
    let origin = Point::origin(ball);
    let q = exp_map(
        &origin,
        &origin.tangent(Matrix::row_vector(&[0.5, 0.0])).unwrap(),
    )
    .unwrap();
    let exp_err = (q.coords[(0, 0)] - 0.5f64.tanh())
        .abs()
        .max(q.coords[(0, 1)].abs());
    let p = Point::new(ball, Matrix::row_vector(&[0.5, 0.0])).unwrap();
    let dist_err = (dist(&origin, &p).unwrap() - 2.0 * 0.5f64.atanh()).abs();
    let mut horo_err = 0.0f64;
    for (omega, b) in [([1.0, 0.0], 0.3), ([0.6, -0.8], -1.2), ([0.0, 1.0], 0.0)] {
        horo_err = horo_err.max((horosphere_project(&origin, &omega, b).unwrap() - b).abs());
    }
    outcome(
        exp_err <= 1e-12 && dist_err <= 1e-12 && horo_err <= 1e-12,
        format!("exp {exp_err:.1e}, dist {dist_err:.1e}, horosphere {horo_err:.1e}"),
    )
}

// ---------------------------------------------------------------- 7, 8, 11

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_bundled(name: &str, out: &Path, adjust: impl Fn(&mut ExperimentConfig)) -> RunReport {
    let mut cfg = ExperimentConfig::from_file(&configs_dir().join(name)).unwrap();
    cfg.output_dir = out.join(name.trim_end_matches(".toml"));
    adjust(&mut cfg);
    train(&cfg).unwrap()
}

fn sir_direction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let hyp = run_bundled("sir_poincare.toml", dir.path(), |_| {});
    let euc = run_bundled("sir_euclidean.toml", dir.path(), |_| {});
    let gap = 100.0 * (hyp.mean - euc.mean);
    outcome(
        gap >= 2.0,
        format!(
            "Poincaré F1 {:.4} ± {:.4}, Euclidean {:.4} ± {:.4}, gap {gap:.1} points",
            hyp.mean, hyp.std, euc.mean, euc.std
        ),
    )
}

fn spd_direction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let affine = run_bundled("spd_affine.toml", dir.path(), |_| {});
    let le = run_bundled("spd_logeuclidean.toml", dir.path(), |_| {});
    let euc = run_bundled("spd_euclidean.toml", dir.path(), |_| {});
    let gyro = run_bundled("spd_affine_gyro.toml", dir.path(), |_| {});
    let margin = 100.0 * (affine.mean.min(le.mean) - euc.mean);
    outcome(
        margin >= 5.0 && gyro.mean <= affine.mean,
        format!(
            "affine {:.4}, log-Euclidean {:.4}, flattened Euclidean {:.4} (margin {margin:.1} points), gyrovector {:.4}",
            affine.mean, le.mean, euc.mean, gyro.mean
        ),
    )
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut checked = Vec::new();
    for (name, epochs) in [
        ("sir_poincare.toml", 60),
        ("spd_affine.toml", 30),
        ("lp_clusters.toml", 40),
    ] {
        let shorten = |c: &mut ExperimentConfig| {
            c.seeds = vec![7];
            c.optimizer.epochs = epochs;
        };
        let ra = run_bundled(name, a.path(), shorten);
        let rb = run_bundled(name, b.path(), shorten);
        let read = |r: &RunReport| std::fs::read(&r.seeds[0].metrics_csv).unwrap();
        if read(&ra) != read(&rb) {
            return outcome(false, format!("metrics of {name} differ between runs"));
        }
        checked.push(name);
    }
    outcome(
        true,
        format!("byte-identical metric CSVs for {}", checked.join(", ")),
    )
}

// ---------------------------------------------------------------- 9

/// δ from Gromov products over all ordered quadruples of a Floyd–Warshall metric.
fn delta_oracle(n: usize, edges: &[(usize, usize)]) -> f64 {
    let inf = f64::INFINITY;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(u, v) in edges {
        d[u][v] = 1.0;
        d[v][u] = 1.0;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let gp = |x: usize, y: usize, w: usize| (d[x][w] + d[y][w] - d[x][y]) / 2.0;
    let mut delta = 0.0f64;
    for w in 0..n {
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    delta = delta.max(gp(x, z, w).min(gp(y, z, w)) - gp(x, y, w));
                }
            }
        }
    }
    delta
}

fn gromov_delta_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut nonzero = 0;
    for seed in 0..50 {
        let n = rng.random_range(4..=40);
        if gromov_delta(n, &random_tree_edges(n, seed), 200).unwrap() != 0.0 {
            nonzero += 1;
        }
    }
    let c4 = [(0, 1), (1, 2), (2, 3), (0, 3)];
    let (got, expected) = (gromov_delta(4, &c4, 200).unwrap(), delta_oracle(4, &c4));
    let c6 = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)];
    let (got6, expected6) = (gromov_delta(6, &c6, 200).unwrap(), delta_oracle(6, &c6));
    outcome(
        nonzero == 0 && got == expected && got6 == expected6,
        format!("{nonzero} of 50 trees with δ ≠ 0; δ(C4) = {got} (oracle {expected}); δ(C6) = {got6} (oracle {expected6})"),
    )
}

// ---------------------------------------------------------------- 10

fn cholesky_filtering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (count, channels, frames) = (60, 6, 30);
    let mut salted: Vec<usize> = rand::seq::index::sample(&mut rng, count, count / 10).into_vec();
    salted.sort_unstable();
    let mut sequences = Vec::new();
    for i in 0..count {
        let mut s = uniform(&mut rng, frames, channels, 1.0);
        if salted.contains(&i) {
            // alternate between a dependent channel and a constant one
            let k = salted.iter().position(|&j| j == i).unwrap();
            for t in 0..frames {
                s[(t, channels - 1)] = if k % 2 == 0 {
                    s[(t, 0)] - 2.0 * s[(t, 1)]
                } else {
                    3.0
                };
            }
        }
        sequences.push(s);
    }
    let labels: Vec<usize> = (0..count).map(|i| i % 2).collect();
    let (ds, dropped) = build_covariance_dataset(&sequences, &labels, false).unwrap();
    let kept_labels: Vec<usize> = (0..count)
        .filter(|i| !salted.contains(i))
        .map(|i| labels[i])
        .collect();
    outcome(
        dropped == salted && ds.len() == count - salted.len() && ds.labels == kept_labels,
        format!(
            "salted {:?}, dropped {:?}, kept {}",
            salted,
            dropped,
            ds.len()
        ),
    )
}
