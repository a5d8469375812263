//! The training loop: per-epoch collocation resampling, mini-batch Adam
//! steps, convergence monitoring, logging and checkpoints.

pub mod config;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;

use crate::collocation::{epoch_seed, sample_collocations, PairSensors};
use crate::data::DensityPair;
use crate::error::{Error, Result};
use crate::io::checkpoint;
use crate::losses::{total_loss, EvalOptions, LossReport};
use crate::operator::{OperatorParams, NETWORK_NAMES};
use crate::tensor::adam::AdamState;
use crate::tensor::mlp::Mlp;

pub use config::TrainConfig;

/// Epoch-level loss components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: u64,
    pub l_cty: f64,
    pub l_hj: f64,
    pub l_bc: f64,
    pub l_ge: f64,
    pub l_total: f64,
}

/// Optimization state of one channel's operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    pub params: OperatorParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: u64,
    pub history: Vec<LossRecord>,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub channels: Vec<ChannelState>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopReason {
    Converged,
    EpochCap,
    /// A loss or gradient went non-finite; parameters are the last finite ones.
    NonFinite(String),
}

/// Where a run writes its checkpoint and per-channel CSV logs.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl RunFiles {
    /// Log file for a channel: the base path for channel 0, `<stem>.c<k>.<ext>` otherwise.
    pub fn log_for(&self, channel: usize) -> PathBuf {
        if channel == 0 {
            return self.log.clone();
        }
        let stem = self.log.file_stem().and_then(|s| s.to_str()).unwrap_or("train_log");
        let ext = self.log.extension().and_then(|s| s.to_str()).unwrap_or("csv");
        self.log.with_file_name(format!("{stem}.c{channel}.{ext}"))
    }
}

/// Per-epoch progress notification.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub channel: usize,
    pub record: LossRecord,
    pub wall_time: f64,
}

impl TrainState {
    /// Freshly initialized networks for `channels` channels.
    pub fn new(config: TrainConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        if channels == 0 {
            return Err(Error::Config("at least one channel is required".into()));
        }
        let arch = config.architecture()?;
        let mut out = Vec::with_capacity(channels);
        for c in 0..channels {
            let mut rng = Pcg64::seed_from_u64(epoch_seed(config.seed, u64::MAX - c as u64));
            let params = OperatorParams::init(arch, &mut rng)?;
            let adam = AdamState::new(&params.networks().iter().collect::<Vec<_>>());
            out.push(ChannelState {
                params,
                adam,
                epoch: 0,
                history: Vec::new(),
            });
        }
        Ok(TrainState { config, channels: out })
    }

    /// Loads a checkpoint and applies overrides of resumable keys. Returns
    /// the state and a description of each override for the log.
    pub fn resume(path: &Path, overrides: &[(String, String)]) -> Result<(Self, Vec<String>)> {
        let mut state = checkpoint::load(path)?;
        let mut notes = Vec::new();
        for (k, v) in overrides {
            if !config::RESUMABLE_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("{k} cannot change when resuming")));
            }
            let before = state.config.get(k).expect("resumable keys are known");
            state.config.set(k, v)?;
            let after = state.config.get(k).expect("resumable keys are known");
            if before != after {
                notes.push(format!("override {k} = {after} (was {before})"));
            }
        }
        state.config.validate()?;
        Ok((state, notes))
    }
}

/// Relative improvement of the trailing `window`-epoch mean loss over the
/// window before it, once two full windows exist.
pub fn windowed_improvement(history: &[LossRecord], window: usize) -> Option<f64> {
    let n = history.len();
    if window == 0 || n < 2 * window {
        return None;
    }
    let mean = |r: &[LossRecord]| r.iter().map(|h| h.l_total).sum::<f64>() / r.len() as f64;
    let prev = mean(&history[n - 2 * window..n - window]);
    let cur = mean(&history[n - window..]);
    Some((prev - cur) / prev.abs())
}

fn converged(cfg: &TrainConfig, history: &[LossRecord]) -> bool {
    windowed_improvement(history, cfg.convergence_window).is_some_and(|r| r < cfg.min_rel_improvement)
}

/// Trains every channel in order until it converges or reaches the epoch
/// cap. `pairs[c]` is the dataset of channel `c`.
pub fn train(
    state: &mut TrainState,
    pairs: &[Vec<DensityPair>],
    files: Option<&RunFiles>,
    header_notes: &[String],
    progress: &mut dyn FnMut(Progress),
) -> Result<Vec<StopReason>> {
    let cfg = state.config.clone();
    cfg.validate()?;
    let arch = cfg.architecture()?;
    if pairs.len() != state.channels.len() {
        return Err(Error::Invalid(format!(
            "{} channel datasets supplied for {} channel operators",
            pairs.len(),
            state.channels.len()
        )));
    }
    for (c, ch) in state.channels.iter().enumerate() {
        if *ch.params.arch() != arch {
            return Err(Error::Config(format!("channel {c} parameters do not match the configured architecture")));
        }
        if pairs[c].len() != cfg.n_pairs {
            return Err(Error::Config(format!(
                "train.n_pairs = {} but channel {c} has {} pairs",
                cfg.n_pairs,
                pairs[c].len()
            )));
        }
    }
    let sensors: Vec<PairSensors> = pairs
        .iter()
        .map(|p| PairSensors::from_pairs(p, arch.sensors))
        .collect::<Result<_>>()?;

    let mut reasons = Vec::with_capacity(pairs.len());
    for c in 0..state.channels.len() {
        let mut log = match files {
            Some(f) => Some(open_log(&f.log_for(c), &cfg, &state.channels[c].history, header_notes)?),
            None => None,
        };
        let start = Instant::now();
        let reason = loop {
            let ch = &state.channels[c];
            if ch.epoch >= cfg.epochs_max {
                break StopReason::EpochCap;
            }
            if converged(&cfg, &ch.history) {
                break StopReason::Converged;
            }
            match run_epoch(&cfg, &mut state.channels[c], &pairs[c], &sensors[c]) {
                Ok(record) => {
                    let wall_time = start.elapsed().as_secs_f64();
                    if let Some(log) = log.as_mut() {
                        write_log_line(log, &record, wall_time).map_err(|e| Error::io(files.unwrap().log_for(c), e))?;
                    }
                    progress(Progress {
                        channel: c,
                        record,
                        wall_time,
                    });
                    if let Some(f) = files {
                        if state.channels[c].epoch.is_multiple_of(cfg.checkpoint_every) {
                            checkpoint::save(&f.checkpoint, state)?;
                        }
                    }
                }
                Err(Error::NonFinite(msg)) => break StopReason::NonFinite(msg),
                Err(e) => return Err(e),
            }
        };
        if let Some(f) = files {
            checkpoint::save(&f.checkpoint, state)?;
        }
        let stop_nonfinite = matches!(reason, StopReason::NonFinite(_));
        reasons.push(reason);
        if stop_nonfinite {
            break;
        }
    }
    Ok(reasons)
}

/// One pass over freshly sampled collocations. On a non-finite loss or
/// gradient the state keeps the last finite parameters and the epoch is
/// not counted.
fn run_epoch(cfg: &TrainConfig, ch: &mut ChannelState, pairs: &[DensityPair], sensors: &PairSensors) -> Result<LossRecord> {
    let epoch = ch.epoch;
    let seed = epoch_seed(cfg.seed, epoch);
    let batch = sample_collocations(pairs, cfg.collocations, cfg.domain, seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.shuffle(&mut Pcg64::seed_from_u64(seed ^ 0x5DEE_CE66_D1A4_F87D));
    let steps = batch.len().div_ceil(cfg.batch_size).min(cfg.n_batches);
    let opts = EvalOptions {
        chunk: cfg.chunk,
        parallel: cfg.parallel,
    };

    let snapshot = (ch.params.clone(), ch.adam.clone());
    let mut sums = [0.0; 5];
    let mut used = 0usize;
    for s in 0..steps {
        let idx = &order[s * cfg.batch_size..((s + 1) * cfg.batch_size).min(batch.len())];
        let sub = batch.subset(idx);
        let (report, grads) = total_loss(&ch.params, sensors, &sub, &cfg.weights, opts)?;
        if !report.l_total.is_finite() {
            (ch.params, ch.adam) = snapshot;
            return Err(Error::NonFinite(format!("loss at epoch {epoch}, step {s}: {}", describe(&report))));
        }
        let mut nets: Vec<&mut Mlp> = ch.params.networks_mut().iter_mut().collect();
        if let Err(e) = ch.adam.step(&mut nets, &grads, &NETWORK_NAMES, cfg.lr) {
            (ch.params, ch.adam) = snapshot;
            return Err(match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}, step {s}")),
                other => other,
            });
        }
        let w = idx.len() as f64;
        for (acc, v) in sums.iter_mut().zip([report.l_cty, report.l_hj, report.l_bc, report.l_ge, report.l_total]) {
            *acc += w * v;
        }
        used += idx.len();
    }
    let n = used as f64;
    ch.epoch += 1;
    let record = LossRecord {
        epoch: ch.epoch,
        l_cty: sums[0] / n,
        l_hj: sums[1] / n,
        l_bc: sums[2] / n,
        l_ge: sums[3] / n,
        l_total: sums[4] / n,
    };
    ch.history.push(record);
    Ok(record)
}

fn describe(r: &LossReport) -> String {
    format!("cty={} hj={} bc={} ge={}", r.l_cty, r.l_hj, r.l_bc, r.l_ge)
}

pub const LOG_COLUMNS: &str = "epoch,l_cty,l_hj,l_bc,l_ge,l_total,wall_time";

/// Writes the header (resolved configuration as comments, then the column
/// names) and any earlier history, and leaves the file open for appending.
fn open_log(path: &Path, cfg: &TrainConfig, history: &[LossRecord], notes: &[String]) -> Result<File> {
    let mut text = String::new();
    for (k, v) in cfg.entries() {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    for n in notes {
        text.push_str(&format!("# {n}\n"));
    }
    text.push_str(LOG_COLUMNS);
    text.push('\n');
    for r in history {
        text.push_str(&format_record(r, f64::NAN));
    }
    crate::io::write_atomic(path, text.as_bytes())?;
    OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))
}

fn format_record(r: &LossRecord, wall: f64) -> String {
    format!("{},{:e},{:e},{:e},{:e},{:e},{:.3}\n", r.epoch, r.l_cty, r.l_hj, r.l_bc, r.l_ge, r.l_total, wall)
}

fn write_log_line(f: &mut File, r: &LossRecord, wall: f64) -> std::io::Result<()> {
    f.write_all(format_record(r, wall).as_bytes())
}
