//! Checkpoint files.
//!
//! Line-oriented text. Every float is written with 17 significant digits so
//! a save/load cycle is bit-exact. A trailing FNV-1a checksum over all
//! preceding bytes detects truncation and corruption; nothing is returned
//! unless the whole file parses.
//!
//! ```text
//! GEONET-CKPT 1
//! architecture <branch_width> <branch_depth> <trunk_width> <trunk_depth> <p> <m> <activation>
//! sensors <nx> <ny> <x_min> <x_max> <y_min> <y_max>
//! config <n>            followed by n "key = value" lines
//! channels <c>
//! channel <k>
//! epoch <e>
//! history <h>           followed by h lines: epoch l_cty l_hj l_bc l_ge l_total
//! network <name> <layers>
//! weights <out> <in>    followed by out lines of in values
//! bias <out>            followed by one line of out values
//! ...
//! optimizer <step>      optional; then per network: "m <values>" and "v <values>"
//! checksum <16 hex digits>
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::grid::{Domain, MeshSpec};
use crate::operator::{Architecture, OperatorParams, NETWORK_NAMES, TRUNK_CTY, TRUNK_HJ};
use crate::tensor::adam::AdamState;
use crate::tensor::mlp::Mlp;
use crate::trainer::{ChannelState, LossRecord, TrainConfig, TrainState};

pub const MAGIC: &str = "GEONET-CKPT";
pub const VERSION: &str = "1";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn floats(s: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            s.push(' ');
        }
        first = false;
        let _ = write!(s, "{v:.16e}");
    }
    s.push('\n');
}

pub fn to_string(state: &TrainState) -> Result<String> {
    let cfg = &state.config;
    let arch = cfg.architecture()?;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(
        s,
        "architecture {} {} {} {} {} {} {}",
        arch.branch_width,
        arch.branch_depth,
        arch.trunk_width,
        arch.trunk_depth,
        arch.p,
        arch.m(),
        arch.activation
    );
    let d = arch.sensors.domain;
    let _ = writeln!(
        s,
        "sensors {} {} {:.16e} {:.16e} {:.16e} {:.16e}",
        arch.sensors.nx, arch.sensors.ny, d.x_min, d.x_max, d.y_min, d.y_max
    );
    let entries = cfg.entries();
    let _ = writeln!(s, "config {}", entries.len());
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    let _ = writeln!(s, "channels {}", state.channels.len());
    for (c, ch) in state.channels.iter().enumerate() {
        let _ = writeln!(s, "channel {c}");
        let _ = writeln!(s, "epoch {}", ch.epoch);
        let _ = writeln!(s, "history {}", ch.history.len());
        for r in &ch.history {
            let _ = write!(s, "{} ", r.epoch);
            floats(&mut s, [r.l_cty, r.l_hj, r.l_bc, r.l_ge, r.l_total]);
        }
        for (name, net) in NETWORK_NAMES.iter().zip(ch.params.networks()) {
            let _ = writeln!(s, "network {name} {}", net.layers());
            for (w, b) in net.weights().iter().zip(net.biases()) {
                let _ = writeln!(s, "weights {} {}", w.nrows(), w.ncols());
                for row in w.rows() {
                    floats(&mut s, row.iter().copied());
                }
                let _ = writeln!(s, "bias {}", b.len());
                floats(&mut s, b.iter().copied());
            }
        }
        let _ = writeln!(s, "optimizer {}", ch.adam.step);
        for (m, v) in ch.adam.m.iter().zip(&ch.adam.v) {
            s.push_str("m ");
            floats(&mut s, m.iter().copied());
            s.push_str("v ");
            floats(&mut s, v.iter().copied());
        }
    }
    let sum = fnv1a(s.as_bytes());
    let _ = writeln!(s, "checksum {sum:016x}");
    s.push_str("end\n");
    Ok(s)
}

pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    super::write_atomic(path, to_string(state)?.as_bytes())
}

pub fn load(path: &Path) -> Result<TrainState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.path, self.pos, msg)
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = *self.lines.get(self.pos).ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(line)
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    /// Next line, which must start with `tag`; returns the remaining fields.
    fn tagged(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(tag) {
            return Err(self.err(format!("expected {tag:?}")));
        }
        Ok(it.collect())
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad number {s:?}")))
    }

    fn tagged_nums<T: std::str::FromStr>(&mut self, tag: &str, n: usize) -> Result<Vec<T>> {
        let f = self.tagged(tag)?;
        if f.len() != n {
            return Err(self.err(format!("{tag}: expected {n} fields, found {}", f.len())));
        }
        f.iter().map(|v| self.num(v)).collect()
    }

    fn float_fields(&self, fields: &[&str], n: usize) -> Result<Vec<f64>> {
        if fields.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", fields.len())));
        }
        fields.iter().map(|v| self.num::<f64>(v)).collect()
    }

    fn float_line(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        self.float_fields(&fields, n)
    }
}

pub fn parse(text: &str, path: &Path) -> Result<TrainState> {
    // Verify the trailer and checksum before interpreting anything.
    let body_end = text
        .rfind("checksum ")
        .ok_or_else(|| Error::format(path, 0, "missing checksum (file truncated?)"))?;
    let trailer: Vec<&str> = text[body_end..].lines().collect();
    if trailer.len() != 2 || trailer[1] != "end" {
        return Err(Error::format(path, 0, "missing end marker (file truncated?)"));
    }
    let stored = u64::from_str_radix(trailer[0].trim_start_matches("checksum ").trim(), 16)
        .map_err(|_| Error::format(path, 0, "malformed checksum"))?;
    if stored != fnv1a(&text.as_bytes()[..body_end]) {
        return Err(Error::format(path, 0, "checksum mismatch (file corrupted)"));
    }

    let mut cur = Cursor {
        lines: text[..body_end].lines().collect(),
        pos: 0,
        path,
    };
    let header = cur.next()?;
    let mut h = header.split_whitespace();
    if h.next() != Some(MAGIC) {
        return Err(cur.err(format!("expected {MAGIC} header")));
    }
    let version = h.next().unwrap_or("");
    if version != VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version.into(),
            expected: VERSION.into(),
        });
    }

    let a = cur.tagged("architecture")?;
    if a.len() != 7 {
        return Err(cur.err("architecture: expected 7 fields"));
    }
    let nums: Vec<usize> = a[..6].iter().map(|v| cur.num(v)).collect::<Result<_>>()?;
    let activation = a[6].parse().map_err(|e: Error| cur.err(e.to_string()))?;
    let sensors = cur.tagged("sensors")?;
    if sensors.len() != 6 {
        return Err(cur.err("sensors: expected 6 fields"));
    }
    let nx: usize = cur.num(sensors[0])?;
    let ny: usize = cur.num(sensors[1])?;
    let b: Vec<f64> = sensors[2..].iter().map(|v| cur.num(v)).collect::<Result<_>>()?;
    let domain = Domain::new(b[0], b[1], b[2], b[3]).map_err(|e| cur.err(e.to_string()))?;
    let arch = Architecture {
        branch_width: nums[0],
        branch_depth: nums[1],
        trunk_width: nums[2],
        trunk_depth: nums[3],
        p: nums[4],
        activation,
        sensors: MeshSpec::new(nx, ny, domain).map_err(|e| cur.err(e.to_string()))?,
    };
    if arch.m() != nums[5] {
        return Err(cur.err(format!("m = {} disagrees with a {nx}x{ny} sensor mesh", nums[5])));
    }

    let n_cfg: usize = cur.tagged_nums("config", 1)?[0];
    let mut config = TrainConfig::default();
    for _ in 0..n_cfg {
        let line = cur.next()?;
        let (k, v) = line.split_once('=').ok_or_else(|| cur.err("expected key = value"))?;
        config.set(k.trim(), v).map_err(|e| cur.err(e.to_string()))?;
    }
    config.validate().map_err(|e| cur.err(e.to_string()))?;
    if config.architecture()? != arch {
        return Err(cur.err("configuration disagrees with the architecture block"));
    }

    let n_channels: usize = cur.tagged_nums("channels", 1)?[0];
    if n_channels == 0 {
        return Err(cur.err("no channels"));
    }
    let mut channels = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let idx: usize = cur.tagged_nums("channel", 1)?[0];
        if idx != c {
            return Err(cur.err(format!("expected channel {c}, found {idx}")));
        }
        let epoch: u64 = cur.tagged_nums("epoch", 1)?[0];
        let n_hist: usize = cur.tagged_nums("history", 1)?[0];
        let mut history = Vec::with_capacity(n_hist);
        for _ in 0..n_hist {
            let line = cur.next()?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(cur.err("history: expected 6 fields"));
            }
            let v = cur.float_fields(&f[1..], 5)?;
            history.push(LossRecord {
                epoch: cur.num(f[0])?,
                l_cty: v[0],
                l_hj: v[1],
                l_bc: v[2],
                l_ge: v[3],
                l_total: v[4],
            });
        }
        let mut nets = Vec::with_capacity(6);
        for (k, name) in NETWORK_NAMES.iter().enumerate() {
            let f = cur.tagged("network")?;
            if f.len() != 2 || f[0] != *name {
                return Err(cur.err(format!("expected network {name}")));
            }
            let layers: usize = cur.num(f[1])?;
            let mut ws = Vec::with_capacity(layers);
            let mut bs = Vec::with_capacity(layers);
            for _ in 0..layers {
                let d: Vec<usize> = cur.tagged_nums("weights", 2)?;
                let mut w = Vec::with_capacity(d[0] * d[1]);
                for _ in 0..d[0] {
                    w.extend(cur.float_line(d[1])?);
                }
                ws.push(Array2::from_shape_vec((d[0], d[1]), w).expect("sized above"));
                let nb: usize = cur.tagged_nums("bias", 1)?[0];
                bs.push(Array1::from(cur.float_line(nb)?));
            }
            let expect = if k == TRUNK_CTY || k == TRUNK_HJ {
                arch.trunk_widths()
            } else {
                arch.branch_widths()
            };
            let net = Mlp::new(&expect, arch.activation, ws, bs).map_err(|e| cur.err(format!("{name}: {e}")))?;
            nets.push(net);
        }
        let params = OperatorParams::from_networks(arch, nets).map_err(|e| cur.err(e.to_string()))?;
        let adam = if cur.peek().is_some_and(|l| l.starts_with("optimizer")) {
            let step: u64 = cur.tagged_nums("optimizer", 1)?[0];
            let mut m = Vec::with_capacity(6);
            let mut v = Vec::with_capacity(6);
            for net in params.networks() {
                let n = net.num_params();
                let mf = cur.tagged("m")?;
                m.push(cur.float_fields(&mf, n)?);
                let vf = cur.tagged("v")?;
                v.push(cur.float_fields(&vf, n)?);
            }
            AdamState { step, m, v }
        } else {
            AdamState::new(&params.networks().iter().collect::<Vec<_>>())
        };
        channels.push(ChannelState {
            params,
            adam,
            epoch,
            history,
        });
    }
    if cur.pos != cur.lines.len() {
        return Err(cur.err("trailing content before checksum"));
    }
    Ok(TrainState { config, channels })
}
