//! Acceptance suite: prints one PASS/FAIL line per criterion. Failures are
//! reported but only change the exit status under `ACCEPTANCE_STRICT=1`, so
//! the remaining workspace test targets still run.
//!
//! This includes the desk-scale training runs, so a full pass takes close
//! to an hour on one core. Set `ACCEPTANCE_ONLY=c1,c5` to run a subset.

use std::path::Path;
use std::time::Instant;

use geonet::collocation::{sample_collocations, PairSensors};
use geonet::data::dataset::{generate, DatasetSpec, Family};
use geonet::data::{discretize, BoundaryField, DensityPair, GaussianMixture2D, MixtureRanges};
use geonet::eval::{bench_runtime, eval_table, export_superres, mse, BenchMethod, Reference, EVAL_TIMES};
use geonet::grid::{DensityGrid, Domain, MassConvention, MeshSpec};
use geonet::io::{checkpoint, geogrid};
use geonet::losses::{loss_value, total_loss, EvalOptions, LossWeights};
use geonet::operator::{residuals_at, Architecture, OperatorParams, ResidualOptions, TranslationField};
use geonet::ot::{bures_geodesic, lp_transport, sinkhorn, w2_gaussian, w2_grid_estimate, DiscreteMeasure, Gaussian2D, SinkhornOptions};
use geonet::tensor::jet::{NSLOTS, SLOT_INDEX};
use geonet::tensor::{Activation, Mlp};
use geonet::trainer::{train, LossRecord, TrainConfig, TrainState};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn config(name: &str) -> TrainConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    TrainConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn single_gaussians(n: usize, identity: bool, seed: u64) -> Vec<DensityPair> {
    let spec = DatasetSpec {
        family: Family::Gauss,
        n,
        identity,
        seed,
        ranges: MixtureRanges {
            k0: 1,
            k1: 1,
            ..MixtureRanges::default()
        },
        ..DatasetSpec::default()
    };
    generate(&spec).unwrap().pairs.remove(0)
}

fn eval_mesh() -> MeshSpec {
    MeshSpec::new(50, 50, Domain::default()).unwrap()
}

fn fmt_means(r: &geonet::eval::EvalReport) -> String {
    r.rows.iter().map(|row| format!("t={}: {:.3e}", row.time, row.mean_mse)).collect::<Vec<_>>().join(", ")
}

/// Trains one channel from scratch and returns the state and wall time.
fn run_training(cfg: &TrainConfig, pairs: &[DensityPair]) -> (TrainState, f64) {
    let mut state = TrainState::new(cfg.clone(), 1).unwrap();
    let start = Instant::now();
    let mut last = Instant::now();
    train(&mut state, &[pairs.to_vec()], None, &[], &mut |p| {
        if last.elapsed().as_secs() >= 60 {
            last = Instant::now();
            eprintln!("    epoch {} loss {:.3e} ({:.0}s)", p.record.epoch, p.record.l_total, p.wall_time);
        }
    })
    .unwrap();
    (state, start.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------- criterion 1

/// Nested central difference of network output `out` along the input axes
/// in `idx`.
fn central(net: &Mlp, p: [f64; 3], idx: &[u8], out: usize, h: f64) -> f64 {
    match idx.split_first() {
        None => net.forward(&p).unwrap()[out],
        Some((&v, rest)) => {
            let (mut lo, mut hi) = (p, p);
            lo[v as usize] -= h;
            hi[v as usize] += h;
            (central(net, hi, rest, out, h) - central(net, lo, rest, out, h)) / (2.0 * h)
        }
    }
}

/// Richardson-extrapolated central difference, accurate to O(h⁴).
fn fd_partial(net: &Mlp, p: [f64; 3], idx: &[u8], out: usize) -> f64 {
    let h = if idx.len() == 3 { 1e-2 } else { 1e-4 };
    (4.0 * central(net, p, idx, out, h / 2.0) - central(net, p, idx, out, h)) / 3.0
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 2];
    let mut rng = Pcg64::seed_from_u64(101);
    for k in 0..20 {
        let act = if k < 10 { Activation::Tanh } else { Activation::Gelu };
        let depth = rng.random_range(1..=4);
        let mut widths = vec![3];
        widths.extend((0..depth).map(|_| rng.random_range(8..=32)));
        widths.push(rng.random_range(1..=5));
        let net = Mlp::glorot(&widths, act, &mut Pcg64::seed_from_u64(k)).unwrap();
        for _ in 0..3 {
            let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            for (o, jet) in net.jet([p[0], p[1]], p[2], 3).unwrap().iter().enumerate() {
                let s = jet.to_slots();
                for slot in 1..NSLOTS {
                    let fd = fd_partial(&net, p, SLOT_INDEX[slot], o);
                    let err = (s[slot] - fd).abs() / fd.abs().max(1.0);
                    let w = &mut worst[usize::from(k >= 10)];
                    *w = w.max(err);
                }
            }
        }
    }
    let jets_ok = worst[0] <= 1e-5 && worst[1] <= 1e-4;

    // Loss gradients, with every term switched on.
    let arch = Architecture {
        branch_width: 10,
        branch_depth: 2,
        trunk_width: 12,
        trunk_depth: 2,
        p: 5,
        activation: Activation::Tanh,
        sensors: MeshSpec::new(5, 5, Domain::default()).unwrap(),
    };
    let mut params = OperatorParams::init(arch, &mut Pcg64::seed_from_u64(7)).unwrap();
    let pairs: Vec<DensityPair> = single_gaussians(3, false, 8);
    let sensors = PairSensors::from_pairs(&pairs, arch.sensors).unwrap();
    let batch = sample_collocations(&pairs, 6, Domain::default(), 9);
    let weights = LossWeights {
        alpha1: 30.0,
        alpha2: 30.0,
        beta0: 1.0,
        beta1: 1.0,
        gamma: [0.5, 0.3],
        omega: [0.2, 0.4],
        epsilon: 0.05,
    };
    let opts = EvalOptions::default();
    let (_, grads) = total_loss(&params, &sensors, &batch, &weights, opts).unwrap();
    let gmax = grads.iter().flat_map(|g| g.values()).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst_grad = 0.0f64;
    for _ in 0..50 {
        let net = rng.random_range(0..6);
        let i = rng.random_range(0..params.net(net).num_params());
        let h = 1e-6;
        let mut at = |delta: f64| {
            *params.networks_mut()[net].param_mut(i) += delta;
            let v = loss_value(&params, &sensors, &batch, &weights, opts).unwrap().l_total;
            *params.networks_mut()[net].param_mut(i) -= delta;
            v
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let g = grads[net].get(i);
        worst_grad = worst_grad.max((g - fd).abs() / fd.abs().max(1e-3 * gmax));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: "1 derivative engine",
        pass: jets_ok && worst_grad <= 1e-4 && secs < 120.0,
        detail: format!(
            "worst jet error tanh {:.1e} (<= 1e-5), gelu {:.1e} (<= 1e-4); worst gradient error {:.1e} (<= 1e-4); {secs:.1}s (< 120s)",
            worst[0], worst[1], worst_grad
        ),
    }
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let g = GaussianMixture2D::new(
        &[0.4, 0.6],
        &[[2.0, 2.3], [2.9, 2.6]],
        &[[[0.5, 0.1], [0.1, 0.6]], [[0.7, -0.2], [-0.2, 0.5]]],
    )
    .unwrap();
    let field = TranslationField::new(g, [0.7, -0.4]);
    let mut rng = Pcg64::seed_from_u64(202);
    let (mut base, mut with_ge, mut ge) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
        let t = rng.random_range(0.0..1.0);
        let r = residuals_at(&field, x, t, ResidualOptions::default()).unwrap();
        base = base.max(r.cty.abs()).max(r.hj.abs());
        let r = residuals_at(&field, x, t, ResidualOptions { epsilon: 0.0, ge: true }).unwrap();
        with_ge = with_ge.max(r.cty.abs()).max(r.hj.abs());
        for v in r.ge_cty.unwrap().iter().chain(&r.ge_hj.unwrap()) {
            ge = ge.max(v.abs());
        }
    }
    Outcome {
        id: "2 exact-solution annihilation",
        pass: base <= 1e-10 && with_ge <= 1e-10 && ge <= 1e-8,
        detail: format!("max |cty|,|hj| {base:.1e} without GE, {with_ge:.1e} with GE (<= 1e-10); max GE residual {ge:.1e} (<= 1e-8)"),
    }
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = Pcg64::seed_from_u64(505);
    let mut worst_a = 0.0f64;
    for _ in 0..50 {
        let mut m = || {
            let pts: Vec<[f64; 2]> = (0..4).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
            DiscreteMeasure::normalized(pts, &w).unwrap()
        };
        let (a, b) = (m(), m());
        let s = sinkhorn(&a, &b, 1e-3, &SinkhornOptions::default()).unwrap();
        let (_, lp) = lp_transport(&a, &b).unwrap();
        let gap = if s.converged { (s.cost - lp).abs() / lp } else { f64::INFINITY };
        worst_a = worst_a.max(gap);
    }

    // Wide enough that the unit Gaussians are not truncated.
    let mesh = MeshSpec::new(64, 64, Domain::new(-5.5, 6.5, -6.0, 6.0).unwrap()).unwrap();
    let g0 = Gaussian2D::new([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let g1 = Gaussian2D::new([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let d0 = DensityGrid::from_fn(mesh, MassConvention::Density, |x| g0.density(x));
    let d1 = DensityGrid::from_fn(mesh, MassConvention::Density, |x| g1.density(x));
    let exact = w2_gaussian(&g0, &g1).unwrap();
    let est = w2_grid_estimate(&d0, &d1, 0.01).unwrap_or(f64::INFINITY);
    let gap_b = (est - exact).abs() / exact;

    let mut worst_c = 0.0f64;
    for _ in 0..100 {
        let mut g = || {
            let (a, d) = (rng.random_range(0.2..2.0), rng.random_range(0.2..2.0));
            let c = rng.random_range(-0.9..0.9) * f64::sqrt(a * d);
            Gaussian2D::new([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], [[a, c], [c, d]]).unwrap()
        };
        let (a, b) = (g(), g());
        let total = w2_gaussian(&a, &b).unwrap();
        let (s, t): (f64, f64) = (rng.random(), rng.random());
        let (s, t) = (s.min(t), s.max(t));
        let part = w2_gaussian(&bures_geodesic(&a, &b, s).unwrap(), &bures_geodesic(&a, &b, t).unwrap()).unwrap();
        worst_c = worst_c.max((part - (t - s) * (t - s) * total).abs() / total.max(1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: "5 OT oracle stack",
        pass: worst_a <= 0.02 && gap_b <= 0.03 && worst_c <= 1e-10 && secs < 600.0,
        detail: format!(
            "(a) worst Sinkhorn/LP gap {:.2}% (<= 2%); (b) grid W2^2 {est:.4} vs {exact} ({:.2}%, <= 3%); (c) worst constant-speed defect {worst_c:.1e} (<= 1e-10); {secs:.0}s",
            100.0 * worst_a,
            100.0 * gap_b
        ),
    }
}

// ---------------------------------------------------------------- criterion 8

/// Non-overlapping window means and the number of windows whose mean
/// exceeds the previous one.
fn window_violations(history: &[LossRecord], window: usize) -> (usize, usize) {
    let means: Vec<f64> = history
        .chunks_exact(window)
        .map(|c| c.iter().map(|r| r.l_total).sum::<f64>() / window as f64)
        .collect();
    (means.len().saturating_sub(1), means.windows(2).filter(|w| w[1] > w[0]).count())
}

fn criterion_8() -> Outcome {
    let cfg = config("desk_entropic.cfg");
    let eps = cfg.weights.epsilon;
    let g0 = GaussianMixture2D::single([1.8, 2.2], [[0.5, 0.1], [0.1, 0.6]]).unwrap();
    let g1 = GaussianMixture2D::single([3.1, 2.7], [[0.7, -0.1], [-0.1, 0.5]]).unwrap();
    let pair = DensityPair {
        mu0: BoundaryField::Mixture(g0),
        mu1: BoundaryField::Mixture(g1),
    };
    let (state, secs) = run_training(&cfg, std::slice::from_ref(&pair));
    let history = &state.channels[0].history;
    let (compared, violations) = window_violations(history, 100);
    let descent = compared > 0 && violations as f64 <= 0.05 * compared as f64;

    let params = &state.channels[0].params;
    let arch = *params.arch();
    let s0 = pair.mu0.sensor_values(arch.sensors).unwrap();
    let s1 = pair.mu1.sensor_values(arch.sensors).unwrap();
    let fields = params.fields(&s0, &s1).unwrap();
    let mut rng = Pcg64::seed_from_u64(808);
    let (mut phi, mut psi) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
        let t = rng.random_range(0.0..1.0);
        let r = residuals_at(&fields, x, t, ResidualOptions { epsilon: eps, ge: false }).unwrap();
        phi = phi.max(r.cty.abs());
        psi = psi.max(r.hj.abs());
    }

    // ε = 0 against the base configuration on a fixed batch.
    let sensors = PairSensors::from_pairs(std::slice::from_ref(&pair), arch.sensors).unwrap();
    let batch = sample_collocations(std::slice::from_ref(&pair), 200, cfg.domain, 17);
    let base = LossWeights {
        epsilon: 0.0,
        ..config("desk_single_gaussian.cfg").weights
    };
    let zero = LossWeights { epsilon: 0.0, ..cfg.weights };
    let opts = EvalOptions::default();
    let (a, ga) = total_loss(params, &sensors, &batch, &LossWeights { beta0: zero.beta0, beta1: zero.beta1, ..base }, opts).unwrap();
    let (b, gb) = total_loss(params, &sensors, &batch, &zero, opts).unwrap();
    let identical = a == b && ga == gb;

    Outcome {
        id: "8 entropic-regularized training",
        pass: descent && phi <= 1e-3 && psi <= 1e-3 && identical,
        detail: format!(
            "{} epochs in {secs:.0}s; {violations}/{compared} rising 100-epoch windows (<= 5%); max |Phi| {phi:.2e}, |Psi| {psi:.2e} (<= 1e-3); eps = 0 loss bit-identical: {identical}",
            history.len()
        ),
    }
}

// ------------------------------------------------------------ criteria 4 and 9

fn criteria_4_9(only: &dyn Fn(&str) -> bool) -> Vec<Outcome> {
    let cfg = config("desk_identity.cfg");
    let train_pairs = single_gaussians(cfg.n_pairs, true, 41);
    let test_pairs = single_gaussians(20, true, 42);
    let (first, secs) = run_training(&cfg, &train_pairs);
    let mut out = Vec::new();
    if only("c4") {
        let r = eval_table(&first.channels[0].params, &test_pairs, &EVAL_TIMES, Reference::Bures, eval_mesh()).unwrap();
        let worst = r.rows.iter().map(|row| row.mean_mse).fold(0.0, f64::max);
        out.push(Outcome {
            id: "4 identity benchmark",
            pass: worst <= 5e-3 && secs <= 1200.0,
            detail: format!("test mean MSE {} (all <= 5e-3); training {secs:.0}s (<= 1200s)", fmt_means(&r)),
        });
    }
    if only("c9") {
        let (second, _) = run_training(&cfg, &train_pairs);
        let (a, b) = (checkpoint::to_string(&first).unwrap(), checkpoint::to_string(&second).unwrap());
        out.push(Outcome {
            id: "9 determinism",
            pass: a == b,
            detail: format!("two seeded sequential runs give {} checkpoints ({} bytes)", if a == b { "identical" } else { "different" }, a.len()),
        });
    }
    out
}

// ------------------------------------------------------- criteria 3, 6 and 7

fn criteria_3_6_7(only: &dyn Fn(&str) -> bool) -> Vec<Outcome> {
    let cfg = config("desk_single_gaussian.cfg");
    let test_pairs = single_gaussians(20, false, 32);
    let mut out = Vec::new();
    let params = if only("c3") || only("c6") {
        let train_pairs = single_gaussians(cfg.n_pairs, false, 31);
        let (state, secs) = run_training(&cfg, &train_pairs);
        let params = state.channels[0].params.clone();
        if only("c3") {
            let r = eval_table(&params, &test_pairs, &EVAL_TIMES, Reference::Bures, eval_mesh()).unwrap();
            let m = |t: f64| r.row(t).unwrap().mean_mse;
            out.push(Outcome {
                id: "3 desk single-Gaussian operator",
                pass: m(0.5) <= 1e-2 && m(0.0) <= m(0.5) && m(1.0) <= m(0.5) && secs <= 1800.0,
                detail: format!(
                    "test mean MSE {}; need t=0.5 <= 1e-2 and t=0, t=1 <= t=0.5; training {secs:.0}s (<= 1800s)",
                    fmt_means(&r)
                ),
            });
        }
        if only("c6") {
            out.push(super_resolution(&params, &test_pairs));
        }
        params
    } else {
        OperatorParams::init(cfg.architecture().unwrap(), &mut Pcg64::seed_from_u64(0)).unwrap()
    };
    if only("c7") {
        out.push(runtime_scaling(&params, &test_pairs[0]));
    }
    out
}

fn super_resolution(params: &OperatorParams, pairs: &[DensityPair]) -> Outcome {
    let sensors = params.arch().sensors;
    let fine = eval_mesh();
    let (mut coarse_mse, mut fine_mse) = (0.0, 0.0);
    let dir = tempfile::tempdir().unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, pair) in pairs.iter().enumerate() {
        let BoundaryField::Mixture(m0) = &pair.mu0 else { unreachable!() };
        let BoundaryField::Mixture(m1) = &pair.mu1 else { unreachable!() };
        let gridded = DensityPair {
            mu0: BoundaryField::Grid(discretize(|x| m0.density(x), sensors).unwrap()),
            mu1: BoundaryField::Grid(discretize(|x| m1.density(x), sensors).unwrap()),
        };
        let s0 = gridded.mu0.sensor_values(sensors).unwrap();
        let s1 = gridded.mu1.sensor_values(sensors).unwrap();
        for (mesh, acc) in [(sensors, &mut coarse_mse), (fine, &mut fine_mse)] {
            let pred = params.eval_geodesic_grid(&s0, &s1, mesh, 0.0).unwrap().raw;
            let exact = DensityGrid::from_fn(mesh, MassConvention::Density, |x| m0.density(x));
            *acc += mse(&pred, &exact).unwrap() / pairs.len() as f64;
        }
        let files = export_superres(params, &gridded, &EVAL_TIMES, fine, dir.path(), &format!("pair{k}"), false).unwrap();
        for f in files {
            let mass = geogrid::read(&f).unwrap().mass();
            lo = lo.min(mass);
            hi = hi.max(mass);
        }
    }
    Outcome {
        id: "6 super-resolution",
        pass: fine_mse <= 2.0 * coarse_mse && lo >= 0.9 && hi <= 1.1,
        detail: format!(
            "t=0 MSE {fine_mse:.3e} at 50x50 vs {coarse_mse:.3e} at 20x20 (ratio {:.2}, <= 2); exported mass in [{lo:.3}, {hi:.3}] (within [0.9, 1.1])",
            fine_mse / coarse_mse
        ),
    }
}

fn runtime_scaling(params: &OperatorParams, pair: &DensityPair) -> Outcome {
    let sizes = [32, 64, 128];
    let recs = bench_runtime(params, pair, &sizes, 3, Reference::sinkhorn_default()).unwrap();
    let times = |m: BenchMethod| -> Vec<f64> { recs.iter().filter(|r| r.method == m).map(|r| r.median_seconds).collect() };
    let (op, reference) = (times(BenchMethod::OperatorInference), times(BenchMethod::ReferenceSolver));
    // Each step quadruples the point count.
    let op_ratios: Vec<f64> = op.windows(2).map(|w| w[1] / w[0]).collect();
    let linear = op_ratios.iter().all(|r| *r <= 1.3 * 4.0);
    let slope = (reference[2] / reference[0]).ln() / 16f64.ln();
    let speedup = reference[2] / op[2];
    Outcome {
        id: "7 runtime scaling",
        pass: linear && slope > 1.0 && speedup >= 10.0,
        detail: format!(
            "operator {:?}s (step ratios {:.2?}, <= 5.2); reference {:?}s (log-log slope {slope:.2}, > 1); speedup at 128^2 {speedup:.0}x (>= 10)",
            op.iter().map(|t| format!("{t:.2e}")).collect::<Vec<_>>(),
            op_ratios,
            reference.iter().map(|t| format!("{t:.2e}")).collect::<Vec<_>>()
        ),
    }
}

fn main() {
    let filter: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_lowercase()).collect());
    let only = |id: &str| filter.as_ref().is_none_or(|f| f.iter().any(|x| x == id));
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut report = |o: Outcome| {
        println!("[{}] criterion {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.detail);
        outcomes.push(o);
    };
    for (id, f) in [("c1", criterion_1 as fn() -> Outcome), ("c2", criterion_2), ("c5", criterion_5), ("c8", criterion_8)] {
        if only(id) {
            report(f());
        }
    }
    if only("c4") || only("c9") {
        criteria_4_9(&only).into_iter().for_each(&mut report);
    }
    if only("c3") || only("c6") || only("c7") {
        criteria_3_6_7(&only).into_iter().for_each(&mut report);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
