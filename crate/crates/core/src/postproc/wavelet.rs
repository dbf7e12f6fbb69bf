//! Separable orthonormal 3D discrete wavelet transform with periodic
//! boundaries, and detail-band thresholding.

use serde::{Deserialize, Serialize};

use super::PostprocError;
use crate::volume::Volume;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Symlet-4 decomposition low-pass filter.
const SYM4_LOW: [f64; 8] = [
    -0.075_765_714_789_273_33,
    -0.029_635_527_645_998_51,
    0.497_618_667_632_015_45,
    0.803_738_751_805_916_1,
    0.297_857_795_605_277_36,
    -0.099_219_543_576_847_22,
    -0.012_603_967_262_037_833,
    0.032_223_100_604_042_7,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    Sym4,
}

impl WaveletFamily {
    pub fn low_pass(self) -> Vec<f64> {
        match self {
            WaveletFamily::Haar => vec![SQRT_HALF, SQRT_HALF],
            WaveletFamily::Sym4 => SYM4_LOW.to_vec(),
        }
    }

    /// Quadrature mirror of the low-pass: `g[j] = (−1)^j h[L−1−j]`.
    pub fn high_pass(self) -> Vec<f64> {
        let h = self.low_pass();
        let n = h.len();
        (0..n)
            .map(|j| {
                if j % 2 == 0 {
                    h[n - 1 - j]
                } else {
                    -h[n - 1 - j]
                }
            })
            .collect()
    }
}

impl std::str::FromStr for WaveletFamily {
    type Err = PostprocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(WaveletFamily::Haar),
            "sym4" => Ok(WaveletFamily::Sym4),
            other => Err(PostprocError::InvalidArgument(format!(
                "unknown wavelet family `{other}` (expected haar or sym4)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Fixed(f32),
    /// `σ̂·√(2 ln N)` with `σ̂ = median|d| / 0.6745` estimated per detail band.
    Universal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    None,
    Soft(Threshold),
    Hard(Threshold),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub levels: usize,
    pub threshold: ThresholdRule,
    /// Pad odd extents by periodic extension instead of failing.
    pub periodic_extension: bool,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        Self {
            family: WaveletFamily::Sym4,
            levels: 2,
            threshold: ThresholdRule::Hard(Threshold::Universal),
            periodic_extension: true,
        }
    }
}

impl WaveletSpec {
    pub fn new(family: WaveletFamily, levels: usize, threshold: ThresholdRule) -> Self {
        Self {
            family,
            levels,
            threshold,
            periodic_extension: true,
        }
    }

    fn validate(&self, dims: [usize; 3]) -> Result<(), PostprocError> {
        if self.levels == 0 {
            return Err(PostprocError::InvalidArgument(
                "wavelet levels must be >= 1".into(),
            ));
        }
        match self.threshold {
            ThresholdRule::Soft(Threshold::Fixed(t)) | ThresholdRule::Hard(Threshold::Fixed(t))
                if !(t >= 0.0) =>
            {
                return Err(PostprocError::InvalidArgument(format!(
                    "threshold must be non-negative, got {t}"
                )));
            }
            _ => {}
        }
        if !self.periodic_extension {
            let block = 1usize << self.levels;
            if let Some(axis) = (0..3).find(|&a| dims[a] % block != 0) {
                return Err(PostprocError::NotDivisible {
                    axis,
                    extent: dims[axis],
                    levels: self.levels,
                });
            }
        }
        Ok(())
    }
}

/// Dense 3D coefficient block, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl Band {
    fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }
}

/// One decomposition level: seven detail bands indexed by
/// `bx + 2·by + 4·bz − 1` (bit set = high-pass along that axis), plus the
/// pre-padding extents of the block this level decomposed.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub input_dims: [usize; 3],
    pub details: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub family: WaveletFamily,
    /// Finest level first.
    pub levels: Vec<Level>,
    pub approximation: Band,
    pub spacing: [f32; 3],
}

impl WaveletPyramid {
    pub fn energy(&self) -> f64 {
        let sq = |b: &Band| b.data.iter().map(|v| v * v).sum::<f64>();
        sq(&self.approximation)
            + self
                .levels
                .iter()
                .flat_map(|l| l.details.iter())
                .map(sq)
                .sum::<f64>()
    }

    pub fn details_mut(&mut self) -> impl Iterator<Item = &mut Band> {
        self.levels.iter_mut().flat_map(|l| l.details.iter_mut())
    }

    pub fn details(&self) -> impl Iterator<Item = &Band> {
        self.levels.iter().flat_map(|l| l.details.iter())
    }
}

fn strides(dims: [usize; 3]) -> [usize; 3] {
    [1, dims[0], dims[0] * dims[1]]
}

/// Extends every odd axis by one periodic sample.
fn pad_even(band: &Band) -> Band {
    let dims = band.dims;
    let padded = dims.map(|d| d + d % 2);
    if padded == dims {
        return band.clone();
    }
    let mut data = Vec::with_capacity(padded.iter().product());
    for z in 0..padded[2] {
        for y in 0..padded[1] {
            for x in 0..padded[0] {
                let (sx, sy, sz) = (x % dims[0], y % dims[1], z % dims[2]);
                data.push(band.data[sx + dims[0] * (sy + dims[1] * sz)]);
            }
        }
    }
    Band { dims: padded, data }
}

fn crop(band: &Band, dims: [usize; 3]) -> Band {
    if band.dims == dims {
        return band.clone();
    }
    let mut data = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let row = band.dims[0] * (y + band.dims[1] * z);
            data.extend_from_slice(&band.data[row..row + dims[0]]);
        }
    }
    Band { dims, data }
}

/// Splits `band` along `axis` into (low, high) halves.
fn analyze_axis(band: &Band, axis: usize, h: &[f64], g: &[f64]) -> (Band, Band) {
    let n = band.dims[axis];
    let half = n / 2;
    let mut out_dims = band.dims;
    out_dims[axis] = half;
    let mut low = Band::zeros(out_dims);
    let mut high = Band::zeros(out_dims);
    let s_in = strides(band.dims);
    let s_out = strides(out_dims);
    let (o1, o2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut line = vec![0.0f64; n];
    for j in 0..band.dims[o2] {
        for i in 0..band.dims[o1] {
            let base_in = i * s_in[o1] + j * s_in[o2];
            let base_out = i * s_out[o1] + j * s_out[o2];
            for (t, v) in line.iter_mut().enumerate() {
                *v = band.data[base_in + t * s_in[axis]];
            }
            for k in 0..half {
                let (mut a, mut d) = (0.0, 0.0);
                for (tap, (&hv, &gv)) in h.iter().zip(g).enumerate() {
                    let x = line[(2 * k + tap) % n];
                    a += hv * x;
                    d += gv * x;
                }
                low.data[base_out + k * s_out[axis]] = a;
                high.data[base_out + k * s_out[axis]] = d;
            }
        }
    }
    (low, high)
}

/// Inverse of [`analyze_axis`].
fn synthesize_axis(low: &Band, high: &Band, axis: usize, h: &[f64], g: &[f64]) -> Band {
    let half = low.dims[axis];
    let n = 2 * half;
    let mut dims = low.dims;
    dims[axis] = n;
    let mut out = Band::zeros(dims);
    let s_in = strides(low.dims);
    let s_out = strides(dims);
    let (o1, o2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut line = vec![0.0f64; n];
    for j in 0..low.dims[o2] {
        for i in 0..low.dims[o1] {
            let base_in = i * s_in[o1] + j * s_in[o2];
            let base_out = i * s_out[o1] + j * s_out[o2];
            line.fill(0.0);
            for k in 0..half {
                let a = low.data[base_in + k * s_in[axis]];
                let d = high.data[base_in + k * s_in[axis]];
                for (tap, (&hv, &gv)) in h.iter().zip(g).enumerate() {
                    line[(2 * k + tap) % n] += hv * a + gv * d;
                }
            }
            for (t, v) in line.iter().enumerate() {
                out.data[base_out + t * s_out[axis]] = *v;
            }
        }
    }
    out
}

/// Multi-level separable analysis. Each level stores seven detail bands;
/// the coarsest approximation is kept separately.
pub fn dwt3d(vol: &Volume, spec: &WaveletSpec) -> Result<WaveletPyramid, PostprocError> {
    spec.validate(vol.dims())?;
    let h = spec.family.low_pass();
    let g = spec.family.high_pass();
    let mut current = Band {
        dims: vol.dims(),
        data: vol.data().iter().map(|&v| v as f64).collect(),
    };
    let mut levels = Vec::with_capacity(spec.levels);
    for _ in 0..spec.levels {
        let input_dims = current.dims;
        let block = pad_even(&current);
        // Eight sub-bands, index = bx + 2 by + 4 bz.
        let mut bands = vec![block];
        for axis in 0..3 {
            let mut next = Vec::with_capacity(bands.len() * 2);
            let mut highs = Vec::with_capacity(bands.len());
            for b in &bands {
                let (lo, hi) = analyze_axis(b, axis, &h, &g);
                next.push(lo);
                highs.push(hi);
            }
            next.extend(highs);
            bands = next;
        }
        // `bands` now holds index bit `axis` set for the high branch.
        current = bands.remove(0);
        levels.push(Level {
            input_dims,
            details: bands,
        });
    }
    Ok(WaveletPyramid {
        family: spec.family,
        levels,
        approximation: current,
        spacing: vol.spacing(),
    })
}

pub fn idwt3d(pyramid: &WaveletPyramid, spec: &WaveletSpec) -> Result<Volume, PostprocError> {
    if pyramid.family != spec.family || pyramid.levels.len() != spec.levels {
        return Err(PostprocError::SpecMismatch(format!(
            "pyramid is {:?} with {} levels, spec asks for {:?} with {}",
            pyramid.family,
            pyramid.levels.len(),
            spec.family,
            spec.levels
        )));
    }
    let h = spec.family.low_pass();
    let g = spec.family.high_pass();
    let mut current = pyramid.approximation.clone();
    for level in pyramid.levels.iter().rev() {
        if level.details.len() != 7 || level.details.iter().any(|b| b.dims != current.dims) {
            return Err(PostprocError::SpecMismatch(
                "detail bands do not match the approximation grid".into(),
            ));
        }
        let mut bands: Vec<Band> = std::iter::once(current)
            .chain(level.details.iter().cloned())
            .collect();
        for axis in (0..3).rev() {
            let half = bands.len() / 2;
            let highs = bands.split_off(half);
            bands = bands
                .iter()
                .zip(&highs)
                .map(|(lo, hi)| synthesize_axis(lo, hi, axis, &h, &g))
                .collect();
        }
        current = crop(&bands[0], level.input_dims);
    }
    let data = current.data.iter().map(|&v| v as f32).collect();
    Ok(Volume::new(current.dims, pyramid.spacing, data)?)
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Universal threshold for one band: `median|d| / 0.6745 · √(2 ln N)`.
pub fn universal_threshold(band: &Band, n_voxels: usize) -> f64 {
    let sigma = median(band.data.iter().map(|v| v.abs()).collect()) / 0.6745;
    sigma * (2.0 * (n_voxels.max(2) as f64).ln()).sqrt()
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn hard(v: f64, t: f64) -> f64 {
    if v.abs() > t {
        v
    } else {
        0.0
    }
}

/// Thresholds every detail band in place; the approximation is untouched.
pub fn threshold_details(pyramid: &mut WaveletPyramid, rule: ThresholdRule, n_voxels: usize) {
    let (shrink, choice): (fn(f64, f64) -> f64, Threshold) = match rule {
        ThresholdRule::None => return,
        ThresholdRule::Soft(t) => (soft, t),
        ThresholdRule::Hard(t) => (hard, t),
    };
    for band in pyramid.details_mut() {
        let t = match choice {
            Threshold::Fixed(t) => t as f64,
            Threshold::Universal => universal_threshold(band, n_voxels),
        };
        band.data.iter_mut().for_each(|v| *v = shrink(*v, t));
    }
}

/// Decompose, threshold detail bands, reconstruct. No clamping, so hard
/// thresholding is an exact projection.
pub fn wavelet_shrink(vol: &Volume, spec: &WaveletSpec) -> Result<Volume, PostprocError> {
    let mut pyramid = dwt3d(vol, spec)?;
    threshold_details(&mut pyramid, spec.threshold, vol.len());
    idwt3d(&pyramid, spec)
}

/// [`wavelet_shrink`] clamped to the input range.
pub fn wavelet_denoise(vol: &Volume, spec: &WaveletSpec) -> Result<Volume, PostprocError> {
    let (lo, hi) = vol.min_max();
    Ok(wavelet_shrink(vol, spec)?.map(|v| v.clamp(lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_are_orthonormal() {
        for family in [WaveletFamily::Haar, WaveletFamily::Sym4] {
            let h = family.low_pass();
            let g = family.high_pass();
            let n = h.len();
            let corr = |a: &[f64], b: &[f64], shift: usize| -> f64 {
                (0..n)
                    .filter(|&i| i + shift < n)
                    .map(|i| a[i] * b[i + shift])
                    .sum()
            };
            // Published sym4 taps carry about 12 significant digits.
            assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-10);
            assert!(g.iter().sum::<f64>().abs() < 1e-10);
            for shift in (0..n).step_by(2) {
                let expect = if shift == 0 { 1.0 } else { 0.0 };
                assert!(
                    (corr(&h, &h, shift) - expect).abs() < 1e-10,
                    "{family:?} hh {shift}"
                );
                assert!(
                    (corr(&g, &g, shift) - expect).abs() < 1e-10,
                    "{family:?} gg {shift}"
                );
                assert!(corr(&h, &g, shift).abs() < 1e-10);
                assert!(corr(&g, &h, shift).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn haar_pair() {
        let vol = Volume::new([2, 1, 1], [1.0; 3], vec![3.0, 1.0]).unwrap();
        let b = Band {
            dims: [2, 1, 1],
            data: vol.data().iter().map(|&v| v as f64).collect(),
        };
        let h = WaveletFamily::Haar.low_pass();
        let g = WaveletFamily::Haar.high_pass();
        let (lo, hi) = analyze_axis(&b, 0, &h, &g);
        assert!((lo.data[0] - 4.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((hi.data[0] - 2.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_volume_has_no_detail() {
        let vol = Volume::filled([8, 8, 4], [1.0; 3], 0.37).unwrap();
        for family in [WaveletFamily::Haar, WaveletFamily::Sym4] {
            let p = dwt3d(&vol, &WaveletSpec::new(family, 2, ThresholdRule::None)).unwrap();
            assert!(p.details().all(|b| b.data.iter().all(|v| v.abs() < 1e-10)));
        }
    }

    #[test]
    fn zero_pyramid_reconstructs_zero() {
        let vol = Volume::filled([8, 8, 8], [1.0; 3], 0.0).unwrap();
        let spec = WaveletSpec::new(WaveletFamily::Sym4, 2, ThresholdRule::None);
        let p = dwt3d(&vol, &spec).unwrap();
        assert!(idwt3d(&p, &spec).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn haar_integer_round_trip_to_f32_rounding() {
        let vol = Volume::from_fn([8, 4, 4], [1.0; 3], |x, y, z| {
            ((x * 7 + y * 3 + z) % 11) as f32
        })
        .unwrap();
        let spec = WaveletSpec::new(WaveletFamily::Haar, 1, ThresholdRule::None);
        let back = idwt3d(&dwt3d(&vol, &spec).unwrap(), &spec).unwrap();
        for (a, b) in back.data().iter().zip(vol.data()) {
            assert!(
                (a - b).abs() <= f32::EPSILON * b.abs().max(1.0),
                "{a} vs {b}"
            );
        }
    }

    #[test]
    fn odd_extents_need_periodic_extension() {
        let vol = Volume::from_fn([6, 5, 4], [1.0; 3], |x, y, z| (x * y + z) as f32).unwrap();
        let mut spec = WaveletSpec::new(WaveletFamily::Sym4, 2, ThresholdRule::None);
        let back = idwt3d(&dwt3d(&vol, &spec).unwrap(), &spec).unwrap();
        assert_eq!(back.dims(), vol.dims());
        for (a, b) in back.data().iter().zip(vol.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        spec.periodic_extension = false;
        assert!(matches!(
            dwt3d(&vol, &spec),
            Err(PostprocError::NotDivisible { axis: 0, .. })
        ));
    }

    #[test]
    fn mismatched_spec_rejected() {
        let vol = Volume::filled([4, 4, 4], [1.0; 3], 1.0).unwrap();
        let p = dwt3d(
            &vol,
            &WaveletSpec::new(WaveletFamily::Haar, 1, ThresholdRule::None),
        )
        .unwrap();
        let other = WaveletSpec::new(WaveletFamily::Sym4, 1, ThresholdRule::None);
        assert!(idwt3d(&p, &other).is_err());
    }

    #[test]
    fn large_soft_threshold_keeps_only_approximation() {
        let vol = Volume::from_fn([8, 8, 8], [1.0; 3], |x, y, z| {
            ((x * 13 + y * 7 + z * 3) % 10) as f32 / 10.0
        })
        .unwrap();
        let base = WaveletSpec::new(WaveletFamily::Sym4, 2, ThresholdRule::None);
        let mut p = dwt3d(&vol, &base).unwrap();
        let max_detail = p
            .details()
            .flat_map(|b| b.data.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        p.details_mut().for_each(|b| b.data.fill(0.0));
        let approx_only = idwt3d(&p, &base).unwrap();
        let (lo, hi) = vol.min_max();
        let spec = WaveletSpec::new(
            WaveletFamily::Sym4,
            2,
            ThresholdRule::Soft(Threshold::Fixed(max_detail as f32 + 1.0)),
        );
        let den = wavelet_denoise(&vol, &spec).unwrap();
        for (a, b) in den.data().iter().zip(approx_only.data()) {
            assert!((a - b.clamp(lo, hi)).abs() < 1e-6);
        }
    }
}
