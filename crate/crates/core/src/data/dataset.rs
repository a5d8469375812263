//! On-disk datasets: a directory of GEOGRID pairs plus a text manifest.
//!
//! Mixture datasets also record every component in the manifest at full
//! precision, so loading recovers the exact analytic boundary densities and
//! not just their discretizations.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use super::{discretize, pixmap_density, BoundaryField, DensityPair, GaussianMixture2D, MixtureRanges, Pixmap, WeightScheme};
use crate::error::{Error, Result};
use crate::grid::{Domain, MeshSpec};
use crate::io::{geogrid, write_atomic};

pub const MANIFEST: &str = "manifest.txt";
pub const MAGIC: &str = "GEONET-DATASET";
pub const VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Random Gaussian mixtures with `k0` and `k1` components.
    Gauss,
    /// Synthetic images built from soft random blobs.
    Image,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gauss => "gauss",
            Family::Image => "image",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss" => Ok(Family::Gauss),
            "image" => Ok(Family::Image),
            _ => Err(Error::Invalid(format!("unknown family {s:?} (expected gauss or image)"))),
        }
    }
}

/// Everything that determines a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub family: Family,
    pub n: usize,
    /// Nodes per side of the stored grids (image width and height).
    pub grid: usize,
    /// Image channels; mixtures always have one.
    pub channels: usize,
    /// `μ₁ = μ₀` for every pair.
    pub identity: bool,
    pub seed: u64,
    pub domain: Domain,
    pub ranges: MixtureRanges,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            family: Family::Gauss,
            n: 1,
            grid: 50,
            channels: 1,
            identity: false,
            seed: 0,
            domain: Domain::default(),
            ranges: MixtureRanges::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("a dataset needs at least one pair".into()));
        }
        if self.grid < 2 {
            return Err(Error::Invalid(format!("grid must have at least 2 nodes per side, got {}", self.grid)));
        }
        match self.family {
            Family::Gauss if self.channels != 1 => Err(Error::Invalid("mixture datasets have exactly one channel".into())),
            Family::Image if self.channels == 0 || self.channels > 4 => {
                Err(Error::Invalid(format!("images have 1 to 4 channels, got {}", self.channels)))
            }
            Family::Gauss => self.ranges.validate(),
            Family::Image => Ok(()),
        }
    }

    pub fn mesh(&self) -> Result<MeshSpec> {
        MeshSpec::new(self.grid, self.grid, self.domain)
    }
}

/// A dataset in memory. `pairs[c][i]` is pair `i` of channel `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub pairs: Vec<Vec<DensityPair>>,
}

impl Dataset {
    pub fn channels(&self) -> usize {
        self.pairs.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws a dataset from a single seeded stream, pair by pair.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Pcg64::seed_from_u64(spec.seed);
    let mut pairs = vec![Vec::with_capacity(spec.n); spec.channels];
    match spec.family {
        Family::Gauss => {
            for _ in 0..spec.n {
                let (a, b) = spec.ranges.sample_pair(&mut rng)?;
                let b = if spec.identity { a.clone() } else { b };
                pairs[0].push(DensityPair {
                    mu0: BoundaryField::Mixture(a),
                    mu1: BoundaryField::Mixture(b),
                });
            }
        }
        Family::Image => {
            for _ in 0..spec.n {
                let a = blob_image(spec.grid, spec.channels, &mut rng);
                let b = if spec.identity {
                    a.clone()
                } else {
                    blob_image(spec.grid, spec.channels, &mut rng)
                };
                for (c, ch) in pairs.iter_mut().enumerate() {
                    ch.push(DensityPair {
                        mu0: BoundaryField::Grid(pixmap_density(&a, c, spec.domain)?),
                        mu1: BoundaryField::Grid(pixmap_density(&b, c, spec.domain)?),
                    });
                }
            }
        }
    }
    Ok(Dataset { spec: spec.clone(), pairs })
}

/// An 8-bit image of two to four soft elliptical blobs with independent
/// per-channel intensities.
fn blob_image(side: usize, channels: usize, rng: &mut Pcg64) -> Pixmap {
    let blobs = rng.random_range(2..=4);
    let mut field = vec![0.0; side * side * channels];
    for _ in 0..blobs {
        let cx = rng.random_range(0.2..0.8) * side as f64;
        let cy = rng.random_range(0.2..0.8) * side as f64;
        let rx = rng.random_range(0.06..0.2) * side as f64;
        let ry = rng.random_range(0.06..0.2) * side as f64;
        let amp: Vec<f64> = (0..channels).map(|_| rng.random_range(0.2..1.0)).collect();
        for row in 0..side {
            for col in 0..side {
                let (u, v) = ((col as f64 - cx) / rx, (row as f64 - cy) / ry);
                let w = (-0.5 * (u * u + v * v)).exp();
                for (c, a) in amp.iter().enumerate() {
                    field[(row * side + col) * channels + c] += a * w;
                }
            }
        }
    }
    let max = field.iter().cloned().fold(0.0, f64::max);
    Pixmap {
        width: side,
        height: side,
        channels,
        maxval: 255,
        samples: field.iter().map(|v| (255.0 * v / max).round() as u32).collect(),
    }
}

fn file_name(pair: usize, end: usize, channel: usize, channels: usize) -> String {
    if channels == 1 {
        format!("pair_{pair:04}_mu{end}.geogrid")
    } else {
        format!("pair_{pair:04}_mu{end}.c{channel}.geogrid")
    }
}

fn weights_tag(w: WeightScheme) -> &'static str {
    match w {
        WeightScheme::Uniform => "uniform",
        WeightScheme::RandomSimplex => "random-simplex",
    }
}

/// Writes every pair discretized on the spec's grid, then the manifest.
/// Returns the written paths, manifest last.
pub fn write(dir: &Path, data: &Dataset) -> Result<Vec<PathBuf>> {
    let spec = &data.spec;
    spec.validate()?;
    let mesh = spec.mesh()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let r = &spec.ranges;
    let d = spec.domain;
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC} {VERSION}");
    let _ = writeln!(m, "family = {}", spec.family);
    let _ = writeln!(m, "n = {}", spec.n);
    let _ = writeln!(m, "grid = {}", spec.grid);
    let _ = writeln!(m, "channels = {}", spec.channels);
    let _ = writeln!(m, "identity = {}", spec.identity);
    let _ = writeln!(m, "seed = {}", spec.seed);
    let _ = writeln!(m, "domain = {} {} {} {}", d.x_min, d.x_max, d.y_min, d.y_max);
    let _ = writeln!(m, "k0 = {}", r.k0);
    let _ = writeln!(m, "k1 = {}", r.k1);
    let _ = writeln!(m, "mean = {} {}", r.mean.0, r.mean.1);
    let _ = writeln!(m, "variance = {} {}", r.variance.0, r.variance.1);
    let _ = writeln!(m, "covariance = {} {}", r.covariance.0, r.covariance.1);
    let _ = writeln!(m, "weights = {}", weights_tag(r.weights));

    let mut written = Vec::new();
    for (c, channel) in data.pairs.iter().enumerate() {
        for (i, pair) in channel.iter().enumerate() {
            let names = [0, 1].map(|end| file_name(i, end, c, spec.channels));
            for (end, field) in [&pair.mu0, &pair.mu1].into_iter().enumerate() {
                let grid = match field {
                    BoundaryField::Grid(g) => g.clone(),
                    BoundaryField::Mixture(mix) => {
                        for comp in mix.components() {
                            let _ = writeln!(
                                m,
                                "component {i} {end} {:e} {:e} {:e} {:e} {:e} {:e}",
                                comp.weight, comp.mean[0], comp.mean[1], comp.cov[0][0], comp.cov[0][1], comp.cov[1][1]
                            );
                        }
                        discretize(|x| mix.density(x), mesh)?
                    }
                };
                let path = dir.join(&names[end]);
                geogrid::write(&path, &grid)?;
                written.push(path);
            }
            let _ = writeln!(m, "pair {i} {c} {} {}", names[0], names[1]);
        }
    }
    let path = dir.join(MANIFEST);
    write_atomic(&path, m.as_bytes())?;
    written.push(path);
    Ok(written)
}

fn parse_field<T: FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::format(path, line, format!("{key}: cannot parse {v:?}")))
}

fn parse_floats<const N: usize>(path: &Path, line: usize, key: &str, v: &str) -> Result<[f64; N]> {
    let xs: Vec<f64> = v.split_whitespace().map(|t| parse_field(path, line, key, t)).collect::<Result<_>>()?;
    xs.try_into()
        .map_err(|_| Error::format(path, line, format!("{key}: expected {N} numbers")))
}

type Components = Vec<(f64, [f64; 2], [[f64; 2]; 2])>;

/// Reads a dataset directory written by [`write`].
pub fn load(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h.split_whitespace().next() == Some(MAGIC) => {
            let v = h.split_whitespace().nth(1).unwrap_or("");
            if v != VERSION {
                return Err(Error::Version {
                    path,
                    found: v.into(),
                    expected: VERSION.into(),
                });
            }
        }
        _ => return Err(Error::format(&path, 1, format!("expected {MAGIC} header"))),
    }

    let mut spec = DatasetSpec::default();
    let mut files: Vec<(usize, usize, usize, String, String)> = Vec::new();
    let mut comps: std::collections::BTreeMap<(usize, usize), Components> = Default::default();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("pair ") {
            let t: Vec<&str> = rest.split_whitespace().collect();
            let [i, c, a, b] = t[..] else {
                return Err(Error::format(&path, ln, "expected: pair <index> <channel> <mu0 file> <mu1 file>"));
            };
            files.push((ln, parse_field(&path, ln, "pair", i)?, parse_field(&path, ln, "pair", c)?, a.into(), b.into()));
            continue;
        }
        if let Some(rest) = line.strip_prefix("component ") {
            let t: Vec<&str> = rest.split_whitespace().collect();
            if t.len() != 8 {
                return Err(Error::format(&path, ln, "expected: component <pair> <end> w m0 m1 c00 c01 c11"));
            }
            let i: usize = parse_field(&path, ln, "component", t[0])?;
            let end: usize = parse_field(&path, ln, "component", t[1])?;
            let v: [f64; 6] = parse_floats(&path, ln, "component", &t[2..].join(" "))?;
            comps.entry((i, end)).or_default().push((v[0], [v[1], v[2]], [[v[3], v[4]], [v[4], v[5]]]));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(&path, ln, format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        let r = &mut spec.ranges;
        match k {
            "family" => spec.family = v.parse().map_err(|e: Error| Error::format(&path, ln, e.to_string()))?,
            "n" => spec.n = parse_field(&path, ln, k, v)?,
            "grid" => spec.grid = parse_field(&path, ln, k, v)?,
            "channels" => spec.channels = parse_field(&path, ln, k, v)?,
            "identity" => spec.identity = parse_field(&path, ln, k, v)?,
            "seed" => spec.seed = parse_field(&path, ln, k, v)?,
            "domain" => {
                let [a, b, c, d] = parse_floats(&path, ln, k, v)?;
                spec.domain = Domain::new(a, b, c, d).map_err(|e| Error::format(&path, ln, e.to_string()))?;
            }
            "k0" => r.k0 = parse_field(&path, ln, k, v)?,
            "k1" => r.k1 = parse_field(&path, ln, k, v)?,
            "mean" => r.mean = parse_floats::<2>(&path, ln, k, v)?.into(),
            "variance" => r.variance = parse_floats::<2>(&path, ln, k, v)?.into(),
            "covariance" => r.covariance = parse_floats::<2>(&path, ln, k, v)?.into(),
            "weights" => {
                r.weights = match v {
                    "uniform" => WeightScheme::Uniform,
                    "random-simplex" => WeightScheme::RandomSimplex,
                    _ => return Err(Error::format(&path, ln, format!("unknown weight scheme {v:?}"))),
                }
            }
            _ => return Err(Error::format(&path, ln, format!("unknown key {k:?}"))),
        }
    }
    spec.validate().map_err(|e| Error::format(&path, 0, e.to_string()))?;

    let mut pairs: Vec<Vec<Option<DensityPair>>> = vec![vec![None; spec.n]; spec.channels];
    for (ln, i, c, a, b) in files {
        if i >= spec.n || c >= spec.channels {
            return Err(Error::format(&path, ln, format!("pair {i} channel {c} is out of range")));
        }
        let field = |end: usize, name: &str| -> Result<BoundaryField> {
            if spec.family == Family::Gauss {
                let list = comps
                    .get(&(i, end))
                    .ok_or_else(|| Error::format(&path, ln, format!("pair {i} has no components for mu{end}")))?;
                let w: Vec<f64> = list.iter().map(|x| x.0).collect();
                let m: Vec<[f64; 2]> = list.iter().map(|x| x.1).collect();
                let s: Vec<[[f64; 2]; 2]> = list.iter().map(|x| x.2).collect();
                Ok(BoundaryField::Mixture(GaussianMixture2D::new(&w, &m, &s)?))
            } else {
                let mut g = geogrid::read(&dir.join(name))?;
                g.normalize()?;
                Ok(BoundaryField::Grid(g))
            }
        };
        pairs[c][i] = Some(DensityPair {
            mu0: field(0, &a)?,
            mu1: field(1, &b)?,
        });
    }
    let pairs = pairs
        .into_iter()
        .enumerate()
        .map(|(c, ch)| {
            ch.into_iter()
                .enumerate()
                .map(|(i, p)| p.ok_or_else(|| Error::format(&path, 0, format!("pair {i} channel {c} is missing"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { spec, pairs })
}
