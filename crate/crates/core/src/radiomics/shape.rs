//! Shape features of a binary region, computed in physical millimeters.

use crate::volume::Mask;

use super::discretize::mask_bbox;
use super::RadiomicsError;

pub const SHAPE_NAMES: [&str; 10] = [
    "volume",
    "surface_area",
    "surface_to_volume_ratio",
    "sphericity",
    "max_diameter_3d",
    "major_axis_length",
    "minor_axis_length",
    "least_axis_length",
    "elongation",
    "flatness",
];

/// Eigenvalues of a symmetric 3x3 matrix by cyclic Jacobi sweeps,
/// descending order. Tiny negative values from rounding clamp to zero.
fn symmetric_eigenvalues(m: [[f64; 3]; 3]) -> [f64; 3] {
    let mut a = m;
    for _ in 0..32 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut r = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    r[i][j] = a[i][j];
                }
            }
            for i in 0..3 {
                let aip = r[i][p];
                let aiq = r[i][q];
                a[i][p] = c * aip - s * aiq;
                a[i][q] = s * aip + c * aiq;
            }
            for j in 0..3 {
                let apj = a[p][j];
                let aqj = a[q][j];
                a[p][j] = c * apj - s * aqj;
                a[q][j] = s * apj + c * aqj;
            }
        }
    }
    let mut ev = [a[0][0].max(0.0), a[1][1].max(0.0), a[2][2].max(0.0)];
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// The 10 shape features, in [`SHAPE_NAMES`] order.
///
/// Surface area counts exposed voxel faces (the voxel-surface convention);
/// sphericity is `pi^(1/3) * (6V)^(2/3) / A`; the maximum 3D diameter is the
/// largest center-to-center distance between surface voxels; axis lengths
/// are `4*sqrt(lambda)` of the PCA eigenvalues of voxel-center coordinates.
/// A single-voxel region has zero axis lengths and, by convention here,
/// elongation = flatness = 1.
pub fn shape_features(mask: &Mask) -> Result<Vec<f64>, RadiomicsError> {
    let (lo, hi) = mask_bbox(mask).ok_or(RadiomicsError::EmptyMask)?;
    let [sx, sy, sz] = mask.grid.spacing;
    let voxel_volume = sx * sy * sz;
    let face_areas = [sy * sz, sx * sz, sx * sy];

    let mut count = 0usize;
    let mut surface = 0.0f64;
    let mut surface_voxels: Vec<[f64; 3]> = Vec::new();
    let mut sum = [0.0f64; 3];
    let mut centers: Vec<[f64; 3]> = Vec::new();

    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                if !mask.at(i, j, k) {
                    continue;
                }
                count += 1;
                let p = mask.grid.world(i, j, k);
                for (a, s) in p.iter().enumerate() {
                    sum[a] += s;
                }
                centers.push(p);
                let mut exposed = false;
                let pos = [i as i64, j as i64, k as i64];
                for (axis, &area) in face_areas.iter().enumerate() {
                    for dir in [-1i64, 1] {
                        let mut q = pos;
                        q[axis] += dir;
                        let inside = q[axis] >= 0
                            && (q[axis] as usize) < mask.grid.dims[axis]
                            && mask.at(q[0] as usize, q[1] as usize, q[2] as usize);
                        if !inside {
                            surface += area;
                            exposed = true;
                        }
                    }
                }
                if exposed {
                    surface_voxels.push(p);
                }
            }
        }
    }

    let n = count as f64;
    let volume = n * voxel_volume;
    let sphericity =
        std::f64::consts::PI.powf(1.0 / 3.0) * (6.0 * volume).powf(2.0 / 3.0) / surface;

    // The farthest pair of an arbitrary voxel set is always realized by
    // surface voxels, so the quadratic scan stays on the boundary.
    let mut max_d2 = 0.0f64;
    for (idx, a) in surface_voxels.iter().enumerate() {
        for b in &surface_voxels[idx + 1..] {
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            max_d2 = max_d2.max(d2);
        }
    }

    let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
    let mut cov = [[0.0f64; 3]; 3];
    for p in &centers {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] += d[a] * d[b];
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let ev = symmetric_eigenvalues(cov);
    let (elongation, flatness) = if ev[0] > 0.0 {
        ((ev[1] / ev[0]).sqrt(), (ev[2] / ev[0]).sqrt())
    } else {
        (1.0, 1.0)
    };

    Ok(vec![
        volume,
        surface,
        surface / volume,
        sphericity,
        max_d2.sqrt(),
        4.0 * ev[0].sqrt(),
        4.0 * ev[1].sqrt(),
        4.0 * ev[2].sqrt(),
        elongation,
        flatness,
    ])
}
