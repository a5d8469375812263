//! 16-bit greyscale renders of gridded fields.

use crate::grid::DensityGrid;

/// Binary P5 image, tone-mapped linearly so the frame maximum is white.
/// Negative values render black; the top image row is the largest `y`.
pub fn render(g: &DensityGrid) -> Vec<u8> {
    let (nx, ny) = (g.mesh.nx, g.mesh.ny);
    let max = g.values.iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 && max.is_finite() { 65535.0 / max } else { 0.0 };
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    out.reserve(nx * ny * 2);
    for row in 0..ny {
        let j = ny - 1 - row;
        for i in 0..nx {
            let v = g.get(i, j);
            let level = if v.is_finite() { (v.max(0.0) * scale).round().min(65535.0) as u16 } else { 0 };
            out.extend(level.to_be_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, MassConvention, MeshSpec};

    #[test]
    fn tone_maps_and_clamps() {
        let mesh = MeshSpec::new(2, 2, Domain::square(1.0)).unwrap();
        let g = DensityGrid::new(mesh, vec![-1.0, 0.5, 1.0, 2.0], MassConvention::Density).unwrap();
        let img = render(&g);
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&img[..header.len()], header);
        let px: Vec<u16> = img[header.len()..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        // top row holds y index 1
        assert_eq!(px, vec![32768, 65535, 0, 16384]);
    }
}
