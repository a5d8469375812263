//! Portable pixmap ingestion and conversion of image channels to densities.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Domain, MassConvention, MeshSpec};
use crate::io::geogrid;

/// Decoded pixels, row-major from the top-left, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Pixmap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u32,
    pub samples: Vec<u32>,
}

impl Pixmap {
    pub fn sample(&self, col: usize, row: usize, channel: usize) -> u32 {
        self.samples[(row * self.width + col) * self.channels + channel]
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok().filter(|s| !s.is_empty())
    }

    fn number(&mut self, what: &str) -> std::result::Result<u32, String> {
        let tok = self.token().ok_or_else(|| format!("missing {what}"))?;
        tok.parse().map_err(|_| format!("bad {what} {tok:?}"))
    }
}

/// Decodes a P2, P3, P5 or P6 image.
pub fn parse_pnm(bytes: &[u8], path: &Path) -> Result<Pixmap> {
    let fail = |m: String| Error::format(path, 1, m);
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token().ok_or_else(|| fail("empty file".into()))?.to_owned();
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P3" => (3, false),
        "P5" => (1, true),
        "P6" => (3, true),
        other => return Err(fail(format!("unsupported image magic {other:?}"))),
    };
    let width = h.number("width").map_err(fail)? as usize;
    let height = h.number("height").map_err(fail)? as usize;
    let maxval = h.number("maxval").map_err(fail)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(fail(format!("invalid image header {width}x{height} maxval {maxval}")));
    }
    let n = width * height * channels;
    let mut samples = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let start = h.pos + 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        let raster = bytes
            .get(start..start + need)
            .ok_or_else(|| fail(format!("raster truncated: need {need} bytes")))?;
        if wide {
            samples.extend(raster.chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))));
        } else {
            samples.extend(raster.iter().map(|&b| u32::from(b)));
        }
    } else {
        for k in 0..n {
            samples.push(h.number("sample").map_err(|m| fail(format!("{m} (sample {k})")))?);
        }
    }
    if let Some(v) = samples.iter().find(|&&v| v > maxval) {
        return Err(fail(format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(Pixmap {
        width,
        height,
        channels,
        maxval,
        samples,
    })
}

/// One image channel as a unit-mass density on `domain`.
///
/// Intensities are shifted up by one level before normalizing so that no
/// cell has zero mass. Image row 0 is the top edge (largest `y`).
pub fn pixmap_density(img: &Pixmap, channel: usize, domain: Domain) -> Result<DensityGrid> {
    if channel >= img.channels {
        return Err(Error::Invalid(format!("channel {channel} requested from a {}-channel image", img.channels)));
    }
    let mesh = MeshSpec::new(img.width, img.height, domain)?;
    let mut values = vec![0.0; mesh.len()];
    for row in 0..img.height {
        let j = img.height - 1 - row;
        for col in 0..img.width {
            values[j * img.width + col] = f64::from(img.sample(col, row, channel)) + 1.0;
        }
    }
    let mut g = DensityGrid::new(mesh, values, MassConvention::Density)?;
    g.normalize()?;
    Ok(g)
}

/// Loads a channel of a GEOGRID file or portable pixmap as a unit-mass
/// density. Images are placed on `[0, 5]²`; GEOGRID files keep their own mesh
/// and are only renormalized.
pub fn load_image_density(path: &Path, channel: usize) -> Result<DensityGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"GEOGRID") {
        if channel != 0 {
            return Err(Error::Invalid(format!("{}: GEOGRID files have a single channel", path.display())));
        }
        let text = String::from_utf8(bytes).map_err(|_| Error::format(path, 1, "not valid UTF-8"))?;
        let g = geogrid::parse(&text, path)?;
        if g.values.iter().any(|v| *v < 0.0) {
            return Err(Error::format(path, 5, "negative density values"));
        }
        let mut g = g.to_convention(MassConvention::Density);
        g.normalize().map_err(|_| Error::format(path, 5, "grid has zero total mass"))?;
        return Ok(g);
    }
    let img = parse_pnm(&bytes, path)?;
    pixmap_density(&img, channel, Domain::square(5.0))
}
