use super::GanError;
use crate::volume::Volume;

/// Fraction of the mean-removed signal energy that projects onto the seven
/// Nyquist patterns `(−1)^(x·a + y·b + z·c)`, `(a, b, c) ∈ {0,1}³ \ 0`.
/// Returns 0 for a constant volume.
pub fn checkerboard_energy(vol: &Volume) -> Result<f64, GanError> {
    let dims = vol.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(GanError::TooSmall(dims));
    }
    let mean = vol.mean();
    let mut proj = [0.0f64; 8];
    let mut norm2 = 0.0f64;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let v = vol.get(x, y, z) as f64 - mean;
                norm2 += v * v;
                let parity = [x & 1, y & 1, z & 1];
                for (p, slot) in proj.iter_mut().enumerate().skip(1) {
                    let odd = (0..3)
                        .filter(|&a| p >> a & 1 == 1)
                        .map(|a| parity[a])
                        .sum::<usize>()
                        & 1;
                    if odd == 1 {
                        *slot -= v;
                    } else {
                        *slot += v;
                    }
                }
            }
        }
    }
    let n = vol.len() as f64;
    // Rounding residue of a constant volume is not signal.
    if norm2 <= f64::EPSILON * n * mean * mean || norm2 == 0.0 {
        return Ok(0.0);
    }
    Ok(proj[1..].iter().map(|p| p * p).sum::<f64>() / (norm2 * n))
}
