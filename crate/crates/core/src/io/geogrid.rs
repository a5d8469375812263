//! GEOGRID v1: a plain-text gridded density.
//!
//! ```text
//! GEOGRID 1
//! nx ny
//! x_min x_max y_min y_max
//! density|histogram
//! v_0 v_1 ... (nx·ny values, row-major, x fastest)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Domain, MeshSpec};

pub const MAGIC: &str = "GEOGRID";
pub const VERSION: &str = "1";

/// Serializes with 17 significant digits so values round-trip exactly.
pub fn to_string(g: &DensityGrid) -> String {
    let d = g.mesh.domain;
    let mut s = String::with_capacity(g.values.len() * 25 + 64);
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "{} {}", g.mesh.nx, g.mesh.ny);
    let _ = writeln!(s, "{:.16e} {:.16e} {:.16e} {:.16e}", d.x_min, d.x_max, d.y_min, d.y_max);
    let _ = writeln!(s, "{}", g.convention);
    for row in g.values.chunks(g.mesh.nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn parse(text: &str, path: &Path) -> Result<DensityGrid> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(path, 0, format!("missing {what}")));

    let (ln, header) = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::format(path, ln, format!("expected {MAGIC} header")));
    }
    let version = parts.next().unwrap_or("");
    if version != VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version.into(),
            expected: VERSION.into(),
        });
    }

    let (ln, dims) = next("dimensions")?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(path, ln, format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let [nx, ny] = dims[..] else {
        return Err(Error::format(path, ln, "expected two dimensions"));
    };

    let (ln, bounds) = next("bounds")?;
    let b: Vec<f64> = bounds
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(path, ln, format!("bad bound {t:?}"))))
        .collect::<Result<_>>()?;
    let [x0, x1, y0, y1] = b[..] else {
        return Err(Error::format(path, ln, "expected four bounds"));
    };
    let domain = Domain::new(x0, x1, y0, y1).map_err(|e| Error::format(path, ln, e.to_string()))?;
    let mesh = MeshSpec::new(nx, ny, domain).map_err(|e| Error::format(path, 2, e.to_string()))?;

    let (ln, tag) = next("mass convention")?;
    let convention = tag.parse().map_err(|e: Error| Error::format(path, ln, e.to_string()))?;

    let mut values = Vec::with_capacity(mesh.len());
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::format(path, ln, format!("bad value {tok:?}")))?;
            if !v.is_finite() {
                return Err(Error::format(path, ln, format!("non-finite value {tok:?}")));
            }
            values.push(v);
        }
    }
    if values.len() != mesh.len() {
        return Err(Error::format(
            path,
            0,
            format!("expected {} values for a {nx}x{ny} grid, found {}", mesh.len(), values.len()),
        ));
    }
    DensityGrid::new(mesh, values, convention)
}

pub fn read(path: &Path) -> Result<DensityGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub fn write(path: &Path, g: &DensityGrid) -> Result<()> {
    super::write_atomic(path, to_string(g).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MassConvention;

    #[test]
    fn round_trip_is_exact() {
        let mesh = MeshSpec::new(3, 2, Domain::new(-1.0, 4.0, 0.5, 2.5).unwrap()).unwrap();
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0, std::f64::consts::PI, 1e17];
        let g = DensityGrid::new(mesh, values, MassConvention::Histogram).unwrap();
        let back = parse(&to_string(&g), Path::new("mem")).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn diagnostics_name_the_line() {
        let bad = "GEOGRID 1\n2 1\n0 1 0 1\ndensity\n0.5 oops\n";
        let err = parse(bad, Path::new("g.geogrid")).unwrap_err().to_string();
        assert!(err.contains("g.geogrid") && err.contains("line 5"), "{err}");
        assert!(matches!(parse("GEOGRID 2\n", Path::new("x")), Err(Error::Version { .. })));
        assert!(parse("GEOGRID 1\n2 2\n0 1 0 1\ndensity\n1 2 3\n", Path::new("x")).is_err());
    }
}
