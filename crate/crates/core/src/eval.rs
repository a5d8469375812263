//! Evaluation against reference geodesics: MSE tables, runtime scaling and
//! super-resolution exports.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{discretize, DensityPair};
use crate::error::{Error, Result};
use crate::grid::{DensityGrid, MassConvention, MeshSpec};
use crate::io::{geogrid, pgm, write_atomic};
use crate::operator::OperatorParams;
use crate::ot::{bures_geodesic, sinkhorn_grid, Gaussian2D, GridTransport, SinkhornOptions};

/// Times reported by [`eval_table`] unless told otherwise.
pub const EVAL_TIMES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// `Δx·Δy·Σ (pred − ref)²` over the nodes of a shared mesh.
pub fn mse(pred: &DensityGrid, reference: &DensityGrid) -> Result<f64> {
    if pred.mesh != reference.mesh {
        return Err(Error::MeshMismatch(format!(
            "prediction on {}x{} over {}, reference on {}x{} over {}",
            pred.mesh.nx, pred.mesh.ny, pred.mesh.domain, reference.mesh.nx, reference.mesh.ny, reference.mesh.domain
        )));
    }
    let pred = pred.to_convention(MassConvention::Density);
    let reference = reference.to_convention(MassConvention::Density);
    let sum: f64 = pred.values.iter().zip(&reference.values).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(sum * pred.mesh.cell_area())
}

/// How reference geodesic frames are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference {
    /// Exact Gaussian geodesic; single-Gaussian pairs only.
    Bures,
    /// Displacement interpolation of an entropic grid plan.
    Sinkhorn {
        epsilon: f64,
        /// Splat kernel width in cells of the evaluation mesh.
        splat_cells: f64,
        tol: f64,
    },
}

impl Reference {
    /// ε = 0.003, one-cell splat, tolerance 1e-6.
    pub fn sinkhorn_default() -> Self {
        Reference::Sinkhorn {
            epsilon: 0.003,
            splat_cells: 1.0,
            tol: 1e-6,
        }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reference::Bures => f.write_str("bures-closed-form"),
            Reference::Sinkhorn {
                epsilon,
                splat_cells,
                tol,
            } => write!(f, "sinkhorn-displacement(eps={epsilon};splat={splat_cells}cell;tol={tol:e})"),
        }
    }
}

/// Builds reference frames for one pair.
pub enum ReferenceFrames {
    Bures(Gaussian2D, Gaussian2D),
    Sinkhorn { plan: GridTransport, sigma: f64 },
}

impl ReferenceFrames {
    pub fn new(pair: &DensityPair, reference: Reference, mesh: MeshSpec) -> Result<Self> {
        match reference {
            Reference::Bures => {
                let gauss = |f: &crate::data::BoundaryField| match f {
                    crate::data::BoundaryField::Mixture(m) => Gaussian2D::from_mixture(m),
                    crate::data::BoundaryField::Grid(_) => {
                        Err(Error::Invalid("closed-form reference needs single-Gaussian boundaries".into()))
                    }
                };
                Ok(ReferenceFrames::Bures(gauss(&pair.mu0)?, gauss(&pair.mu1)?))
            }
            Reference::Sinkhorn {
                epsilon,
                splat_cells,
                tol,
            } => {
                let mu0 = discretize(|x| pair.mu0.value(x), mesh)?;
                let mu1 = discretize(|x| pair.mu1.value(x), mesh)?;
                let opts = SinkhornOptions {
                    tol,
                    ..SinkhornOptions::default()
                };
                let plan = sinkhorn_grid(&mu0, &mu1, epsilon, &opts)?;
                if !plan.converged {
                    return Err(Error::Invalid(format!(
                        "reference sinkhorn stopped at violation {:e} after {} iterations",
                        plan.violation, plan.iterations
                    )));
                }
                Ok(ReferenceFrames::Sinkhorn {
                    plan,
                    sigma: splat_cells * mesh.dx().min(mesh.dy()),
                })
            }
        }
    }

    pub fn frame(&self, t: f64, mesh: MeshSpec) -> Result<DensityGrid> {
        match self {
            ReferenceFrames::Bures(a, b) => {
                let g = bures_geodesic(a, b, t)?;
                Ok(DensityGrid::from_fn(mesh, MassConvention::Density, |x| g.density(x)))
            }
            ReferenceFrames::Sinkhorn { plan, sigma } => plan.interpolate(t, mesh, *sigma),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub time: f64,
    pub mean_mse: f64,
    /// Sample standard deviation over test pairs.
    pub std_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub n_pairs: usize,
    pub reference: Reference,
    pub mesh: MeshSpec,
    /// `per_pair[i][k]`: pair `i` at time `rows[k].time`.
    pub per_pair: Vec<Vec<f64>>,
}

pub const EVAL_CSV_HEADER: &str = "time,mean_mse,std_mse,n_pairs,reference,mesh";

impl EvalReport {
    pub fn row(&self, t: f64) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.time == t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6e},{:.6e},{},{},{}x{}\n",
                r.time, r.mean_mse, r.std_mse, self.n_pairs, self.reference, self.mesh.nx, self.mesh.ny
            ));
        }
        out
    }
}

/// Mean and sample standard deviation, summed in sorted order so that the
/// result does not depend on the order of `xs`.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut d: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    d.sort_by(f64::total_cmp);
    (mean, (d.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

/// MSE of the raw density operator against `reference` at each time, over
/// `mesh`, with mean and sample standard deviation over `pairs`.
pub fn eval_table(params: &OperatorParams, pairs: &[DensityPair], times: &[f64], reference: Reference, mesh: MeshSpec) -> Result<EvalReport> {
    if pairs.len() < 2 {
        return Err(Error::Invalid(format!("evaluation needs at least 2 test pairs, got {}", pairs.len())));
    }
    if times.is_empty() {
        return Err(Error::Invalid("no evaluation times".into()));
    }
    let sensors = params.arch().sensors;
    let per_pair: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|pair| -> Result<Vec<f64>> {
            let coef = params.branch_coefficients(&pair.mu0.sensor_values(sensors)?, &pair.mu1.sensor_values(sensors)?)?;
            let frames = ReferenceFrames::new(pair, reference, mesh)?;
            times
                .iter()
                .map(|&t| mse(&params.eval_grid_with(&coef, mesh, t)?.raw, &frames.frame(t, mesh)?))
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows = times
        .iter()
        .enumerate()
        .map(|(k, &time)| {
            let col: Vec<f64> = per_pair.iter().map(|p| p[k]).collect();
            let (mean_mse, std_mse) = mean_std(&col);
            EvalRow { time, mean_mse, std_mse }
        })
        .collect();
    Ok(EvalReport {
        rows,
        n_pairs: pairs.len(),
        reference,
        mesh,
        per_pair,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMethod {
    OperatorInference,
    ReferenceSolver,
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMethod::OperatorInference => "operator-inference",
            BenchMethod::ReferenceSolver => "reference-solver",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub points: usize,
    pub method: BenchMethod,
    pub median_seconds: f64,
    pub reps: usize,
}

pub const BENCH_CSV_HEADER: &str = "points,method,median_seconds,reps,log10_points,log10_seconds";

pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{:.6e},{},{:.6},{:.6}\n",
            r.points,
            r.method,
            r.median_seconds,
            r.reps,
            (r.points as f64).log10(),
            r.median_seconds.log10()
        ));
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median wall time of one `t = 0.5` frame on `n×n` meshes over the pair's
/// domain: full-grid operator inference against the Sinkhorn displacement
/// reference. Input discretization and sensor sampling are outside the timed
/// region.
pub fn bench_runtime(params: &OperatorParams, pair: &DensityPair, sizes: &[usize], reps: usize, reference: Reference) -> Result<Vec<BenchRecord>> {
    if reps < 3 {
        return Err(Error::Invalid(format!("benchmarks need at least 3 repetitions, got {reps}")));
    }
    let Reference::Sinkhorn {
        epsilon,
        splat_cells,
        tol,
    } = reference
    else {
        return Err(Error::Invalid("runtime comparison needs the sinkhorn reference".into()));
    };
    let sensors = params.arch().sensors;
    let s0 = pair.mu0.sensor_values(sensors)?;
    let s1 = pair.mu1.sensor_values(sensors)?;
    let opts = SinkhornOptions {
        tol,
        ..SinkhornOptions::default()
    };
    let mut out = Vec::new();
    for &n in sizes {
        let mesh = MeshSpec::new(n, n, params.arch().domain())?;
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            let frame = params.eval_geodesic_grid(&s0, &s1, mesh, 0.5)?;
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(frame);
        }
        out.push(BenchRecord {
            points: mesh.len(),
            method: BenchMethod::OperatorInference,
            median_seconds: median(times),
            reps,
        });
        let mu0 = discretize(|x| pair.mu0.value(x), mesh)?;
        let mu1 = discretize(|x| pair.mu1.value(x), mesh)?;
        let sigma = splat_cells * mesh.dx().min(mesh.dy());
        let mut times = Vec::with_capacity(reps);
        for _ in 0..reps {
            let start = Instant::now();
            let plan = sinkhorn_grid(&mu0, &mu1, epsilon, &opts)?;
            let frame = plan.interpolate(0.5, mesh, sigma)?;
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(frame);
        }
        out.push(BenchRecord {
            points: mesh.len(),
            method: BenchMethod::ReferenceSolver,
            median_seconds: median(times),
            reps,
        });
    }
    Ok(out)
}

/// Writes the clamped operator frame at each time as `<stem>_t<t>.geogrid`,
/// evaluated on `out_mesh`, with a `.pgm` render next to it if `render` is set.
pub fn export_superres(
    params: &OperatorParams,
    pair: &DensityPair,
    times: &[f64],
    out_mesh: MeshSpec,
    dir: &Path,
    stem: &str,
    render: bool,
) -> Result<Vec<PathBuf>> {
    let sensors = params.arch().sensors;
    let coef = params.branch_coefficients(&pair.mu0.sensor_values(sensors)?, &pair.mu1.sensor_values(sensors)?)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for &t in times {
        let frame = params.eval_grid_with(&coef, out_mesh, t)?;
        let base = format!("{stem}_t{t:.2}");
        let grid_path = dir.join(format!("{base}.geogrid"));
        geogrid::write(&grid_path, &frame.clamped)?;
        written.push(grid_path);
        if render {
            let pgm_path = dir.join(format!("{base}.pgm"));
            write_atomic(&pgm_path, &pgm::render(&frame.clamped))?;
            written.push(pgm_path);
        }
    }
    Ok(written)
}
