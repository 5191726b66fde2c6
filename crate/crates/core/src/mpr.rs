//! Curved multi-planar reformatting along a vessel centerline.
//!
//! A centerline polyline is resampled to uniform arclength, equipped with
//! rotation-minimizing frames (double-reflection method), and the volume is
//! resampled on square slices orthogonal to the path. Slice stacks are cut
//! into overlapping cubes for sequence models, and slices can be remapped
//! to polar coordinates around the vessel center.
//!
//! Pixel conventions: slice pixel `(p, q)` of slice `i` sits at
//! `c_i + (p - c)*sp*u_i + (q - c)*sp*v_i` with `c = (S-1)/2`, where
//! `(u_i, v_i)` span the slice plane. The polar grid holds `A` angles by
//! `R` radii; angle index `a` is `2*pi*a/A` measured from `+u` toward `+v`,
//! radius index `r` is `r * r_max / (R-1)` millimeters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Volume;

/// Intensity used for slice pixels that fall outside the volume.
pub const OUTSIDE_PAD: f64 = -1024.0;

#[derive(Debug, Error)]
pub enum MprError {
    #[error("centerline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("resample step must be positive, got {0}")]
    BadStep(f64),
    #[error("centerline has zero length")]
    ZeroLength,
    #[error("consecutive centerline points coincide at index {0}")]
    DuplicatePoint(usize),
    #[error("slice size must be odd and >= 3, got {0}")]
    BadSliceSize(usize),
    #[error("in-plane spacing must be positive, got {0}")]
    BadInPlaneSpacing(f64),
    #[error("stack and frame counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("cube length must be positive, got {0}")]
    BadCubeLength(usize),
    #[error("stride must be in 1..=cube length, got stride {stride} for length {len}")]
    BadStride { stride: usize, len: usize },
    #[error("polar grid needs at least 4 angles and 2 radii, got {0} x {1}")]
    BadPolarGrid(usize, usize),
    #[error("r_max {r_max} exceeds slice half-extent {half}")]
    PolarOutOfSlice { r_max: f64, half: f64 },
    #[error("empty slice stack")]
    EmptyStack,
}

/// An ordered polyline in world millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    pub points: Vec<[f64; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}

impl Centerline {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, MprError> {
        if points.len() < 2 {
            return Err(MprError::TooFewPoints(points.len()));
        }
        for (i, w) in points.windows(2).enumerate() {
            if norm(sub(w[1], w[0])) == 0.0 {
                return Err(MprError::DuplicatePoint(i));
            }
        }
        Ok(Centerline { points })
    }

    /// Total arclength of the polyline.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
    }

    /// Arclength position of each stored point.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut s = 0.0;
        out.push(0.0);
        for w in self.points.windows(2) {
            s += norm(sub(w[1], w[0]));
            out.push(s);
        }
        out
    }
}

/// Resamples a polyline to uniform arclength spacing.
///
/// Output points sit at arclengths `0, step, 2*step, ...` up to the total
/// length; the endpoint is included exactly when the length is an integer
/// multiple of `step`. Positions interpolate linearly within segments.
pub fn resample_centerline(cl: &Centerline, step: f64) -> Result<Centerline, MprError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(MprError::BadStep(step));
    }
    let total = cl.length();
    if total == 0.0 {
        return Err(MprError::ZeroLength);
    }
    let cum = cl.cumulative();
    let count = (total / step).floor() as usize + 1;
    let mut points = Vec::with_capacity(count);
    let mut seg = 0usize;
    for n in 0..count {
        let s = n as f64 * step;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let seg_len = cum[seg + 1] - cum[seg];
        let t = ((s - cum[seg]) / seg_len).clamp(0.0, 1.0);
        let p = add(cl.points[seg], scale(sub(cl.points[seg + 1], cl.points[seg]), t));
        points.push(p);
    }
    Centerline::new(points)
}

/// Orthonormal frames along a polyline: tangent, and two in-plane axes.
#[derive(Debug, Clone)]
pub struct Frames {
    pub tangents: Vec<[f64; 3]>,
    pub u: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
}

/// Rotation-minimizing frames by the double-reflection method.
///
/// Tangents come from central differences (one-sided at the ends). The
/// first normal is the world axis with the smallest tangent component,
/// projected orthogonal to the tangent. Each step re-orthonormalizes, so
/// frames stay orthonormal to machine precision over long paths.
pub fn rotation_minimizing_frames(cl: &Centerline) -> Result<Frames, MprError> {
    let pts = &cl.points;
    let n = pts.len();
    if n < 2 {
        return Err(MprError::TooFewPoints(n));
    }
    let mut tangents = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            sub(pts[1], pts[0])
        } else if i == n - 1 {
            sub(pts[n - 1], pts[n - 2])
        } else {
            sub(pts[i + 1], pts[i - 1])
        };
        let len = norm(d);
        if len == 0.0 {
            return Err(MprError::DuplicatePoint(i));
        }
        tangents.push(scale(d, 1.0 / len));
    }

    let t0 = tangents[0];
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut best = 0;
    for a in 1..3 {
        if dot(axes[a], t0).abs() < dot(axes[best], t0).abs() {
            best = a;
        }
    }
    let e = axes[best];
    let mut u = vec![[0.0; 3]; n];
    let mut v = vec![[0.0; 3]; n];
    u[0] = normalize(sub(e, scale(t0, dot(e, t0))));
    v[0] = cross(t0, u[0]);

    for i in 0..n - 1 {
        let v1 = sub(pts[i + 1], pts[i]);
        let c1 = dot(v1, v1);
        let r_l = sub(u[i], scale(v1, 2.0 / c1 * dot(v1, u[i])));
        let t_l = sub(tangents[i], scale(v1, 2.0 / c1 * dot(v1, tangents[i])));
        let v2 = sub(tangents[i + 1], t_l);
        let c2 = dot(v2, v2);
        let mut next = if c2 > 0.0 {
            sub(r_l, scale(v2, 2.0 / c2 * dot(v2, r_l)))
        } else {
            r_l
        };
        let t = tangents[i + 1];
        next = sub(next, scale(t, dot(next, t)));
        u[i + 1] = normalize(next);
        v[i + 1] = cross(t, u[i + 1]);
    }
    Ok(Frames { tangents, u, v })
}

/// A stack of square orthogonal slices along a resampled centerline.
#[derive(Debug, Clone)]
pub struct MprStack {
    /// Slice side length in pixels, odd.
    pub size: usize,
    /// In-plane pixel spacing in mm.
    pub in_plane: f64,
    /// Slice data, `len * size * size`, p fastest within a slice.
    pub slices: Vec<f64>,
}

impl MprStack {
    pub fn len(&self) -> usize {
        self.slices.len() / (self.size * self.size)
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let a = self.size * self.size;
        &self.slices[i * a..(i + 1) * a]
    }
}

/// Resamples the volume on slices orthogonal to the centerline.
///
/// One slice per centerline point; points outside the volume are padded
/// with [`OUTSIDE_PAD`].
pub fn extract_mpr_stack(
    vol: &Volume,
    cl: &Centerline,
    frames: &Frames,
    size: usize,
    in_plane: f64,
) -> Result<MprStack, MprError> {
    if size < 3 || size % 2 == 0 {
        return Err(MprError::BadSliceSize(size));
    }
    if !(in_plane > 0.0) || !in_plane.is_finite() {
        return Err(MprError::BadInPlaneSpacing(in_plane));
    }
    if frames.u.len() != cl.points.len() {
        return Err(MprError::CountMismatch(cl.points.len(), frames.u.len()));
    }
    let c = (size - 1) as f64 / 2.0;
    let mut slices = Vec::with_capacity(cl.points.len() * size * size);
    for (i, &center) in cl.points.iter().enumerate() {
        let (u, v) = (frames.u[i], frames.v[i]);
        for q in 0..size {
            let dv = (q as f64 - c) * in_plane;
            for p in 0..size {
                let du = (p as f64 - c) * in_plane;
                let pos = add(center, add(scale(u, du), scale(v, dv)));
                slices.push(vol.sample_trilinear(pos).unwrap_or(OUTSIDE_PAD));
            }
        }
    }
    Ok(MprStack { size, in_plane, slices })
}

/// A contiguous run of slices cut from a stack.
#[derive(Debug, Clone)]
pub struct Cube {
    /// Index of the first stack slice covered by this cube.
    pub start: usize,
    /// Slices per cube.
    pub len: usize,
    /// Slice side length in pixels.
    pub size: usize,
    /// `len * size * size` values, same layout as the stack.
    pub data: Vec<f64>,
}

/// Start indices [`cut_cubes`] uses for a stack of `total` slices.
///
/// Starts are `0, stride, 2*stride, ...` giving `floor((total - len)/stride)
/// + 1` cubes; when that grid stops short of the last slice one more start
/// anchored at `total - len` is appended, so every slice is covered. Fewer
/// than `len` slices yield the single start 0 (the cube pads by
/// replication).
pub fn cube_starts(total: usize, len: usize, stride: usize) -> Result<Vec<usize>, MprError> {
    if len == 0 {
        return Err(MprError::BadCubeLength(len));
    }
    if stride == 0 || stride > len {
        return Err(MprError::BadStride { stride, len });
    }
    if total == 0 {
        return Err(MprError::EmptyStack);
    }
    if total < len {
        return Ok(vec![0]);
    }
    let count = (total - len) / stride + 1;
    let mut starts: Vec<usize> = (0..count).map(|n| n * stride).collect();
    let covered = (count - 1) * stride + len;
    if covered < total {
        starts.push(total - len);
    }
    Ok(starts)
}

/// Cuts a stack into overlapping cubes of `len` slices at [`cube_starts`]
/// positions. A stack shorter than `len` yields a single cube whose
/// trailing slices replicate the last stack slice.
pub fn cut_cubes(stack: &MprStack, len: usize, stride: usize) -> Result<Vec<Cube>, MprError> {
    let total = stack.len();
    let starts = cube_starts(total, len, stride)?;
    let area = stack.size * stack.size;
    if total < len {
        let mut data = Vec::with_capacity(len * area);
        data.extend_from_slice(&stack.slices);
        let last = stack.slice(total - 1).to_vec();
        for _ in total..len {
            data.extend_from_slice(&last);
        }
        return Ok(vec![Cube { start: 0, len, size: stack.size, data }]);
    }
    Ok(starts
        .into_iter()
        .map(|start| {
            let mut data = Vec::with_capacity(len * area);
            data.extend_from_slice(&stack.slices[start * area..(start + len) * area]);
            Cube { start, len, size: stack.size, data }
        })
        .collect())
}

/// Polar sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarParams {
    /// Number of angular samples.
    pub angles: usize,
    /// Number of radial samples, center included.
    pub radii: usize,
    /// Radius of the outermost sample in mm.
    pub r_max: f64,
}

impl Default for PolarParams {
    fn default() -> Self {
        PolarParams { angles: 16, radii: 12, r_max: 4.5 }
    }
}

/// Bilinear lookup in a square slice, clamped to the pixel-center hull.
#[inline]
fn bilinear(slice: &[f64], size: usize, x: f64, y: f64) -> f64 {
    let cmax = (size - 1) as f64;
    let x = x.clamp(0.0, cmax);
    let y = y.clamp(0.0, cmax);
    let x0 = (x.floor() as usize).min(size - 2);
    let y0 = (y.floor() as usize).min(size - 2);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = slice[y0 * size + x0];
    let v10 = slice[y0 * size + x0 + 1];
    let v01 = slice[(y0 + 1) * size + x0];
    let v11 = slice[(y0 + 1) * size + x0 + 1];
    let a = v00 + (v10 - v00) * fx;
    let b = v01 + (v11 - v01) * fx;
    a + (b - a) * fy
}

fn check_polar(params: &PolarParams, size: usize, in_plane: f64) -> Result<(), MprError> {
    if params.angles < 4 || params.radii < 2 {
        return Err(MprError::BadPolarGrid(params.angles, params.radii));
    }
    let half = (size - 1) as f64 / 2.0 * in_plane;
    if params.r_max > half {
        return Err(MprError::PolarOutOfSlice { r_max: params.r_max, half });
    }
    Ok(())
}

/// Maps one Cartesian slice to the polar grid; output is `angles * radii`
/// values, radius fastest. Angle 0 points along `+u` (the p axis).
pub fn slice_to_polar(
    slice: &[f64],
    size: usize,
    in_plane: f64,
    params: &PolarParams,
) -> Result<Vec<f64>, MprError> {
    check_polar(params, size, in_plane)?;
    let c = (size - 1) as f64 / 2.0;
    let mut out = Vec::with_capacity(params.angles * params.radii);
    for a in 0..params.angles {
        let theta = 2.0 * std::f64::consts::PI * a as f64 / params.angles as f64;
        let (dy, dx) = theta.sin_cos();
        for r in 0..params.radii {
            let rho = r as f64 * params.r_max / (params.radii - 1) as f64 / in_plane;
            out.push(bilinear(slice, size, c + rho * dx, c + rho * dy));
        }
    }
    Ok(out)
}

/// Inverse of [`slice_to_polar`]: resamples a polar image back onto the
/// Cartesian pixel grid. Pixels beyond `r_max` take `outside`.
pub fn polar_to_slice(
    polar: &[f64],
    params: &PolarParams,
    size: usize,
    in_plane: f64,
    outside: f64,
) -> Result<Vec<f64>, MprError> {
    check_polar(params, size, in_plane)?;
    let (na, nr) = (params.angles, params.radii);
    let c = (size - 1) as f64 / 2.0;
    let mut out = vec![outside; size * size];
    for q in 0..size {
        for p in 0..size {
            let dx = (p as f64 - c) * in_plane;
            let dy = (q as f64 - c) * in_plane;
            let rho = (dx * dx + dy * dy).sqrt();
            if rho > params.r_max {
                continue;
            }
            let theta = dy.atan2(dx).rem_euclid(2.0 * std::f64::consts::PI);
            let af = theta * na as f64 / (2.0 * std::f64::consts::PI);
            let rf = rho * (nr - 1) as f64 / params.r_max;
            let a0 = (af.floor() as usize) % na;
            let a1 = (a0 + 1) % na;
            let fa = af - af.floor();
            let r0 = (rf.floor() as usize).min(nr - 2);
            let fr = rf - r0 as f64;
            let v00 = polar[a0 * nr + r0];
            let v01 = polar[a0 * nr + r0 + 1];
            let v10 = polar[a1 * nr + r0];
            let v11 = polar[a1 * nr + r0 + 1];
            let low = v00 + (v01 - v00) * fr;
            let high = v10 + (v11 - v10) * fr;
            out[q * size + p] = low + (high - low) * fa;
        }
    }
    Ok(out)
}

/// Maps a whole cube to polar coordinates, slice by slice; output layout is
/// `len * angles * radii`.
pub fn cube_to_polar(
    cube: &Cube,
    in_plane: f64,
    params: &PolarParams,
) -> Result<Vec<f64>, MprError> {
    let area = cube.size * cube.size;
    let mut out = Vec::with_capacity(cube.len * params.angles * params.radii);
    for s in 0..cube.len {
        let slice = &cube.data[s * area..(s + 1) * area];
        out.extend(slice_to_polar(slice, cube.size, in_plane, params)?);
    }
    Ok(out)
}

/// Resamples a slice under an in-plane rigid transform, used by training
/// augmentation and geometry tests. The source pixel for output `(p, q)` is
/// `R(-theta) * (x - c - t)` (+ optional mirror of the p axis before
/// rotation); lookups clamp to the slice border.
pub fn resample_slice_rigid(
    slice: &[f64],
    size: usize,
    theta: f64,
    shift: [f64; 2],
    mirror: bool,
) -> Vec<f64> {
    let c = (size - 1) as f64 / 2.0;
    let (s, co) = theta.sin_cos();
    let mut out = Vec::with_capacity(size * size);
    for q in 0..size {
        for p in 0..size {
            let mut x = p as f64 - c - shift[0];
            let y = q as f64 - c - shift[1];
            // Inverse rotation: the output appears rotated by +theta.
            let sx = co * x + s * y;
            let sy = -s * x + co * y;
            x = if mirror { -sx } else { sx };
            out.push(bilinear(slice, size, x + c, sy + c));
        }
    }
    out
}
