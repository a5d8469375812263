use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use geonet::data::dataset::{self, Dataset, DatasetSpec, Family};
use geonet::data::{load_image_density, BoundaryField, DensityPair, MixtureRanges};
use geonet::eval::{bench_csv, bench_runtime, eval_table, export_superres, Reference, EVAL_TIMES};
use geonet::grid::MeshSpec;
use geonet::io::{checkpoint, write_atomic};
use geonet::trainer::{train, RunFiles, StopReason, TrainConfig, TrainState};
use rand::SeedableRng;
use rand_pcg::Pcg64;

use crate::{Cli, Command, FamilyArg, ReferenceArg};

pub const CHECKPOINT: &str = "model.ckpt";
pub const LOG: &str = "train_log.csv";
pub const RESOLVED: &str = "config.resolved";

pub fn run(cli: Cli) -> Result<ExitCode> {
    let det = cli.deterministic;
    match cli.command {
        Command::GenData {
            family,
            n,
            grid,
            k0,
            k1,
            equal_weights,
            identity,
            channels,
            seed,
            out,
        } => {
            let base = if equal_weights {
                MixtureRanges::equal_weight_family()
            } else {
                MixtureRanges::default()
            };
            let spec = DatasetSpec {
                family: match family {
                    FamilyArg::Gauss => Family::Gauss,
                    FamilyArg::Image => Family::Image,
                },
                n,
                grid,
                channels,
                identity,
                seed,
                ranges: MixtureRanges { k0, k1, ..base },
                ..DatasetSpec::default()
            };
            gen_data(&spec, &out)
        }
        Command::Train {
            config,
            data,
            out,
            resume,
            sets,
            dry_run,
        } => cmd_train(config.as_deref(), data.as_deref(), &out, resume, &sets, dry_run, det),
        Command::Infer {
            model,
            mu0,
            mu1,
            t,
            res,
            no_pgm,
            out,
        } => infer(&model, &mu0, &mu1, &t, res.as_deref(), !no_pgm, &out),
        Command::Eval {
            model,
            testset,
            reference,
            res,
            out,
        } => eval(&model, &testset, reference, res, &out),
        Command::Bench {
            model,
            meshes,
            reps,
            testset,
            seed,
            out,
        } => bench(&model, &meshes, reps, testset.as_deref(), seed, &out),
    }
}

fn gen_data(spec: &DatasetSpec, out: &Path) -> Result<ExitCode> {
    let data = dataset::generate(spec)?;
    let files = dataset::write(out, &data)?;
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_sets(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn print_config(cfg: &TrainConfig, notes: &[String]) {
    println!("# resolved configuration");
    print!("{}", cfg.to_text());
    for n in notes {
        println!("# {n}");
    }
}

/// The first `n_pairs` pairs of every channel, after checking that the
/// dataset fits the configuration.
fn training_pairs(cfg: &TrainConfig, data: &Dataset) -> Result<Vec<Vec<DensityPair>>> {
    ensure!(
        data.spec.domain == cfg.domain,
        "dataset domain {} differs from the configured domain {}",
        data.spec.domain,
        cfg.domain
    );
    ensure!(
        data.len() >= cfg.n_pairs,
        "train.n_pairs = {} but the dataset holds only {} pairs",
        cfg.n_pairs,
        data.len()
    );
    Ok(data.pairs.iter().map(|ch| ch[..cfg.n_pairs].to_vec()).collect())
}

fn cmd_train(config: Option<&Path>, data: Option<&Path>, out: &Path, resume: bool, sets: &[String], dry_run: bool, det: bool) -> Result<ExitCode> {
    let sets = parse_sets(sets)?;
    let ckpt = out.join(CHECKPOINT);

    // Everything is validated before the run directory is touched.
    let (state, notes, cfg) = if resume {
        let base = checkpoint::load(&ckpt).with_context(|| format!("cannot resume from {}", ckpt.display()))?;
        let mut overrides = Vec::new();
        if let Some(p) = config {
            let file = TrainConfig::load(p)?;
            for (k, v) in file.entries() {
                if base.config.get(k).as_deref() != Some(v.as_str()) {
                    overrides.push((k.to_string(), v));
                }
            }
        }
        overrides.extend(sets);
        if det {
            overrides.push(("train.parallel".into(), "false".into()));
        }
        let (state, notes) = TrainState::resume(&ckpt, &overrides)?;
        let cfg = state.config.clone();
        (Some(state), notes, cfg)
    } else {
        let path = config.context("--config is required unless --resume is given")?;
        let mut cfg = TrainConfig::load(path)?;
        for (k, v) in &sets {
            cfg.set(k, v)?;
        }
        if det {
            cfg.parallel = false;
        }
        cfg.validate()?;
        (None, Vec::new(), cfg)
    };
    print_config(&cfg, &notes);
    if dry_run {
        return Ok(ExitCode::SUCCESS);
    }

    let data_dir = data.context("--data is required for training")?;
    let data = dataset::load(data_dir)?;
    let pairs = training_pairs(&cfg, &data)?;
    let mut state = match state {
        Some(s) => {
            ensure!(
                s.channels.len() == pairs.len(),
                "checkpoint has {} channels but the dataset has {}",
                s.channels.len(),
                pairs.len()
            );
            s
        }
        None => TrainState::new(cfg.clone(), pairs.len())?,
    };

    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_atomic(&out.join(RESOLVED), cfg.to_text().as_bytes())?;
    let files = RunFiles {
        checkpoint: ckpt,
        log: out.join(LOG),
    };
    let reasons = train(&mut state, &pairs, Some(&files), &notes, &mut |p| {
        let r = p.record;
        println!(
            "channel {} epoch {:>5}  total {:.4e}  cty {:.3e}  hj {:.3e}  bc {:.3e}  ge {:.3e}  {:.1}s",
            p.channel, r.epoch, r.l_total, r.l_cty, r.l_hj, r.l_bc, r.l_ge, p.wall_time
        );
    })?;
    for (c, r) in reasons.iter().enumerate() {
        match r {
            StopReason::Converged => println!("channel {c}: converged"),
            StopReason::EpochCap => println!("channel {c}: reached the epoch cap"),
            StopReason::NonFinite(m) => bail!("channel {c}: training diverged ({m}); last finite parameters saved to {}", files.checkpoint.display()),
        }
    }
    println!("checkpoint: {}", files.checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn infer(model: &Path, mu0: &Path, mu1: &Path, times: &[f64], res: Option<&[usize]>, render: bool, out: &Path) -> Result<ExitCode> {
    let state = checkpoint::load(model)?;
    ensure!(!times.is_empty(), "no times given");
    for &t in times {
        ensure!((0.0..=1.0).contains(&t), "time {t} is outside [0, 1]");
    }
    let arch = *state.channels[0].params.arch();
    let channels = state.channels.len();
    let mut pairs = Vec::with_capacity(channels);
    for c in 0..channels {
        let a = load_image_density(mu0, c)?;
        let b = load_image_density(mu1, c)?;
        for (path, g) in [(mu0, &a), (mu1, &b)] {
            if g.mesh.domain != arch.domain() {
                eprintln!(
                    "warning: {} covers {} but the model was trained on {}; it is resampled on the sensor mesh",
                    path.display(),
                    g.mesh.domain,
                    arch.domain()
                );
            }
        }
        pairs.push(DensityPair {
            mu0: BoundaryField::Grid(a),
            mu1: BoundaryField::Grid(b),
        });
    }
    let (nx, ny) = match res {
        Some(&[nx, ny]) => (nx, ny),
        Some(_) => bail!("--res takes two values"),
        None => {
            let BoundaryField::Grid(g) = &pairs[0].mu0 else { unreachable!() };
            (g.mesh.nx, g.mesh.ny)
        }
    };
    let mesh = MeshSpec::new(nx, ny, arch.domain())?;
    for (c, (ch, pair)) in state.channels.iter().zip(&pairs).enumerate() {
        let stem = if channels == 1 { "frame".to_string() } else { format!("frame_c{c}") };
        for f in export_superres(&ch.params, pair, times, mesh, out, &stem, render)? {
            println!("{}", f.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// `out` for channel 0, `<stem>.c<k>.<ext>` for the others.
fn channel_path(out: &Path, c: usize) -> PathBuf {
    RunFiles {
        checkpoint: PathBuf::new(),
        log: out.to_path_buf(),
    }
    .log_for(c)
}

fn write_report(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn eval(model: &Path, testset: &Path, reference: ReferenceArg, res: usize, out: &Path) -> Result<ExitCode> {
    let state = checkpoint::load(model)?;
    let data = dataset::load(testset)?;
    ensure!(
        data.channels() == state.channels.len(),
        "model has {} channels but the test set has {}",
        state.channels.len(),
        data.channels()
    );
    let reference = match reference {
        ReferenceArg::Bures => Reference::Bures,
        ReferenceArg::Sinkhorn => Reference::sinkhorn_default(),
    };
    let mesh = MeshSpec::new(res, res, state.channels[0].params.arch().domain())?;
    let mut reports = Vec::new();
    for (ch, pairs) in state.channels.iter().zip(&data.pairs) {
        reports.push(eval_table(&ch.params, pairs, &EVAL_TIMES, reference, mesh)?);
    }
    for (c, r) in reports.iter().enumerate() {
        let path = channel_path(out, c);
        let csv = r.to_csv();
        write_report(&path, &csv)?;
        print!("{csv}");
        println!("# written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(model: &Path, meshes: &[usize], reps: usize, testset: Option<&Path>, seed: u64, out: &Path) -> Result<ExitCode> {
    let state = checkpoint::load(model)?;
    let params = &state.channels[0].params;
    ensure!(!meshes.is_empty(), "no benchmark meshes given");
    let pair = match testset {
        Some(dir) => dataset::load(dir)?.pairs[0][0].clone(),
        None => {
            let ranges = MixtureRanges {
                k0: 1,
                k1: 1,
                ..MixtureRanges::default()
            };
            let (a, b) = ranges.sample_pair(&mut Pcg64::seed_from_u64(seed))?;
            DensityPair {
                mu0: BoundaryField::Mixture(a),
                mu1: BoundaryField::Mixture(b),
            }
        }
    };
    let records = bench_runtime(params, &pair, meshes, reps, Reference::sinkhorn_default())?;
    let csv = bench_csv(&records);
    write_report(out, &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}
