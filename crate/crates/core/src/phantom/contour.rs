//! Per-slice contours: closed Catmull-Rom interpolation, uniform resampling,
//! even-odd scanline filling, and boundary extraction from label volumes.

use serde::{Deserialize, Serialize};

use super::PhantomError;
use crate::volume::{LabelVolume, Structure, BACKGROUND};

/// Closed polyline on slice `slice` (z index). Points are (x, y) voxel
/// coordinates; the first point is not repeated at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub slice: usize,
    pub class: u8,
    pub points: Vec<[f64; 2]>,
}

impl Contour {
    pub fn new(slice: usize, class: u8, points: Vec<[f64; 2]>) -> Result<Self, PhantomError> {
        let c = Self {
            slice,
            class,
            points,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), PhantomError> {
        if Structure::from_class_id(self.class).is_none() {
            return Err(PhantomError::InvalidContour(format!(
                "class {} is not a foreground structure",
                self.class
            )));
        }
        if self.points.len() < 3 {
            return Err(PhantomError::InvalidContour(format!(
                "need at least 3 points, got {}",
                self.points.len()
            )));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PhantomError::InvalidContour("non-finite point".into()));
        }
        if self.points.first() == self.points.last() {
            return Err(PhantomError::InvalidContour(
                "first point repeated as last".into(),
            ));
        }
        Ok(())
    }
}

/// A set of contours; serialized as a JSON array of
/// `{slice, class, points: [[x, y], ...]}` records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContourSet {
    contours: Vec<Contour>,
}

impl ContourSet {
    pub fn new(contours: Vec<Contour>) -> Result<Self, PhantomError> {
        for c in &contours {
            c.validate()?;
        }
        Ok(Self { contours })
    }

    pub fn contours(&self) -> &[Contour] {
        &self.contours
    }

    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("contours serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PhantomError> {
        let raw: Vec<Contour> =
            serde_json::from_str(text).map_err(|e| PhantomError::Json(e.to_string()))?;
        Self::new(raw)
    }
}

fn catmull_rom(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], p3: [f64; 2], t: f64) -> [f64; 2] {
    let t2 = t * t;
    let t3 = t2 * t;
    let mut out = [0.0; 2];
    for k in 0..2 {
        out[k] = 0.5
            * (2.0 * p1[k]
                + (p2[k] - p0[k]) * t
                + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * t2
                + (3.0 * p1[k] - p0[k] - 3.0 * p2[k] + p3[k]) * t3);
    }
    out
}

const DENSE_STEPS: usize = 32;

/// Closed uniform Catmull-Rom through `points`, resampled to `n` points at
/// equal arc-length spacing starting from the first control point.
pub(crate) fn resample_closed(points: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let m = points.len();
    let mut dense = Vec::with_capacity(m * DENSE_STEPS + 1);
    for i in 0..m {
        let p0 = points[(i + m - 1) % m];
        let p1 = points[i];
        let p2 = points[(i + 1) % m];
        let p3 = points[(i + 2) % m];
        for s in 0..DENSE_STEPS {
            dense.push(catmull_rom(p0, p1, p2, p3, s as f64 / DENSE_STEPS as f64));
        }
    }
    dense.push(points[0]);

    let mut cum = Vec::with_capacity(dense.len());
    cum.push(0.0);
    for w in dense.windows(2) {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let target = total * k as f64 / n as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let f = if span > 0.0 {
            (target - cum[seg]) / span
        } else {
            0.0
        };
        let a = dense[seg];
        let b = dense[seg + 1];
        out.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
    }
    out
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(a, b, c);
    let d2 = orient(a, b, d);
    let d3 = orient(c, d, a);
    let d4 = orient(c, d, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

pub(crate) fn self_intersects(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, poly[j], poly[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Even-odd fill of a set of polygons at voxel centres of one slice.
fn fill_even_odd(polys: &[Vec<[f64; 2]>], nx: usize, ny: usize, out: &mut [bool]) {
    let mut xs = Vec::new();
    for y in 0..ny {
        let yc = y as f64;
        xs.clear();
        for poly in polys {
            let n = poly.len();
            for i in 0..n {
                let a = poly[i];
                let b = poly[(i + 1) % n];
                // Half-open rule so shared vertices count once.
                if (a[1] <= yc) != (b[1] <= yc) {
                    xs.push(a[0] + (yc - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1].ceil().min(nx as f64);
            if lo >= hi {
                continue;
            }
            for x in lo as usize..hi as usize {
                out[x + nx * y] = true;
            }
        }
    }
}

/// Rasterizes contours into a label volume. Each contour is interpolated by
/// a closed Catmull-Rom spline, resampled to `samples_per_contour` points
/// and filled per slice with the even-odd rule; overlaps resolve as
/// LV > LA > MYO. A self-intersecting resampled contour logs a warning and
/// is filled anyway.
pub fn contours_to_label_volume(
    contours: &ContourSet,
    dims: [usize; 3],
    spacing: [f32; 3],
    samples_per_contour: usize,
) -> Result<LabelVolume, PhantomError> {
    let mut labels = LabelVolume::background(dims, spacing)?;
    let [nx, ny, nz] = dims;
    for c in contours.contours() {
        if c.points.len() > samples_per_contour {
            return Err(PhantomError::TooFewSamples {
                samples: samples_per_contour,
                points: c.points.len(),
            });
        }
        if c.slice >= nz {
            return Err(PhantomError::InvalidContour(format!(
                "slice {} outside 0..{nz}",
                c.slice
            )));
        }
    }
    if contours.is_empty() {
        return Ok(labels);
    }

    let mut classes = labels.classes().to_vec();
    // Lowest priority first so later structures overwrite.
    let order = [Structure::Myo, Structure::La, Structure::Lv];
    let mut inside = vec![false; nx * ny];
    for z in 0..nz {
        for s in order {
            let polys: Vec<Vec<[f64; 2]>> = contours
                .contours()
                .iter()
                .filter(|c| c.slice == z && c.class == s.class_id())
                .map(|c| {
                    let poly = resample_closed(&c.points, samples_per_contour);
                    if self_intersects(&poly) {
                        log::warn!(
                            "{s} contour on slice {z} self-intersects after resampling; \
                             filling with the even-odd rule"
                        );
                    }
                    poly
                })
                .collect();
            if polys.is_empty() {
                continue;
            }
            inside.iter_mut().for_each(|v| *v = false);
            fill_even_odd(&polys, nx, ny, &mut inside);
            let base = nx * ny * z;
            for (i, &hit) in inside.iter().enumerate() {
                if hit {
                    classes[base + i] = s.class_id();
                }
            }
        }
    }
    labels = LabelVolume::new(dims, spacing, classes)?;
    Ok(labels)
}

/// Traces the voxel-face boundary of every foreground structure on every
/// slice. Vertices sit on voxel corners at unit spacing, so re-rasterizing
/// with at least as many samples reproduces the slice masks.
pub fn extract_contours(labels: &LabelVolume) -> ContourSet {
    let [nx, ny, nz] = labels.dims();
    let mut contours = Vec::new();
    for z in 0..nz {
        for s in Structure::ALL {
            let id = s.class_id();
            let on = |x: i64, y: i64| {
                x >= 0
                    && y >= 0
                    && (x as usize) < nx
                    && (y as usize) < ny
                    && labels.get(x as usize, y as usize, z) == id
            };
            for points in trace_slice(nx, ny, &on) {
                contours.push(Contour {
                    slice: z,
                    class: id,
                    points,
                });
            }
        }
    }
    debug_assert!(contours.iter().all(|c| c.class != BACKGROUND));
    ContourSet { contours }
}

/// Directed boundary edges on the corner lattice (corner (i, j) sits at
/// (i − 0.5, j − 0.5)), interior on the left, chained into loops.
fn trace_slice(nx: usize, ny: usize, on: &dyn Fn(i64, i64) -> bool) -> Vec<Vec<[f64; 2]>> {
    use std::collections::BTreeMap;
    type Corner = (i64, i64);
    let mut out_edges: BTreeMap<Corner, Vec<Corner>> = BTreeMap::new();
    let mut count = 0usize;
    for y in 0..ny as i64 {
        for x in 0..nx as i64 {
            if !on(x, y) {
                continue;
            }
            let mut add = |a: Corner, b: Corner| {
                out_edges.entry(a).or_default().push(b);
                count += 1;
            };
            if !on(x, y - 1) {
                add((x, y), (x + 1, y));
            }
            if !on(x + 1, y) {
                add((x + 1, y), (x + 1, y + 1));
            }
            if !on(x, y + 1) {
                add((x + 1, y + 1), (x, y + 1));
            }
            if !on(x - 1, y) {
                add((x, y + 1), (x, y));
            }
        }
    }

    let mut loops = Vec::new();
    while count > 0 {
        let start = *out_edges
            .iter()
            .find(|(_, v)| !v.is_empty())
            .map(|(k, _)| k)
            .expect("edges remain");
        let mut corner = start;
        let mut points = Vec::new();
        loop {
            points.push([corner.0 as f64 - 0.5, corner.1 as f64 - 0.5]);
            let next = out_edges.get_mut(&corner).and_then(|v| v.pop());
            let Some(next) = next else { break };
            count -= 1;
            corner = next;
            if corner == start && out_edges.get(&start).map_or(true, |v| v.is_empty()) {
                break;
            }
        }
        if points.len() >= 3 {
            loops.push(points);
        }
    }
    loops
}
