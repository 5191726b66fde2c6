//! Image transforms feeding texture extraction: Laplacian-of-Gaussian at
//! configurable physical scales, and a single-level 3D Haar wavelet.

use crate::volume::{Grid, Volume};

use super::RadiomicsError;

/// Symmetric (edge-inclusive) boundary reflection: ... 1 0 | 0 1 2 | 2 1 ...
#[inline]
fn reflect(idx: i64, n: i64) -> usize {
    let period = 2 * n;
    let mut m = idx.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// 1D convolution along one axis with symmetric boundary handling.
fn conv_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let n = dims[axis] as i64;
    let mut out = vec![0.0; data.len()];
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    // Iterate over lines along `axis`.
    let (la, lb) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut line = vec![0.0; dims[axis]];
    for b in 0..dims[lb] {
        for a in 0..dims[la] {
            let mut idx3 = [0usize; 3];
            idx3[la] = a;
            idx3[lb] = b;
            let base = idx3[0] + dims[0] * (idx3[1] + dims[1] * idx3[2]);
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[base + t * stride];
            }
            for t in 0..dims[axis] {
                let mut acc = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let src = reflect(t as i64 + ki as i64 - radius, n);
                    acc += kv * line[src];
                }
                out[base + t * stride] = acc;
            }
        }
    }
    out
}

struct LogKernels {
    /// Normalized Gaussian taps.
    smooth: Vec<f64>,
    /// Second-derivative-of-Gaussian taps, zero-DC, in 1/voxel^2 units.
    second: Vec<f64>,
}

fn log_kernels(sigma_vox: f64) -> LogKernels {
    let radius = (4.0 * sigma_vox).ceil() as i64;
    let s2 = sigma_vox * sigma_vox;
    let mut raw = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        let x = i as f64;
        raw.push((-x * x / (2.0 * s2)).exp());
    }
    let norm: f64 = raw.iter().sum();
    let smooth: Vec<f64> = raw.iter().map(|&g| g / norm).collect();
    let mut second: Vec<f64> = (-radius..=radius)
        .zip(raw.iter())
        .map(|(i, &g)| {
            let x = i as f64;
            (x * x - s2) / (s2 * s2) * g / norm
        })
        .collect();
    // Exact zero response to constants; the symmetric taps already give
    // zero response to linear ramps.
    let mean: f64 = second.iter().sum::<f64>() / second.len() as f64;
    for t in second.iter_mut() {
        *t -= mean;
    }
    LogKernels { smooth, second }
}

/// Scale-normalized Laplacian of Gaussian at physical scale `sigma_mm`.
///
/// Computed as the sum over axes of separable passes: the second-derivative
/// kernel along one axis, Gaussian smoothing along the other two, scaled by
/// `sigma_mm^2`. Kernels truncate at 4 sigma; boundaries reflect.
pub fn log_transform(vol: &Volume, sigma_mm: f64) -> Result<Volume, RadiomicsError> {
    if !(sigma_mm > 0.0) || !sigma_mm.is_finite() {
        return Err(RadiomicsError::BadSigma(sigma_mm));
    }
    let dims = vol.grid.dims;
    let mut per_axis: Vec<LogKernels> = Vec::with_capacity(3);
    for a in 0..3 {
        let sigma_vox = sigma_mm / vol.grid.spacing[a];
        let k = log_kernels(sigma_vox);
        if k.smooth.len() / 2 >= dims[a] {
            return Err(RadiomicsError::KernelTooLarge {
                sigma_mm,
                radius: k.smooth.len() / 2,
                dim: dims[a],
            });
        }
        per_axis.push(k);
    }
    let mut total = vec![0.0; vol.data.len()];
    for d2_axis in 0..3 {
        let mut cur = vol.data.clone();
        for axis in 0..3 {
            let kernel = if axis == d2_axis {
                &per_axis[axis].second
            } else {
                &per_axis[axis].smooth
            };
            cur = conv_axis(&cur, dims, axis, kernel);
        }
        let unit = vol.grid.spacing[d2_axis];
        let scale = sigma_mm * sigma_mm / (unit * unit);
        for (t, c) in total.iter_mut().zip(cur.iter()) {
            *t += scale * c;
        }
    }
    Volume::new(vol.grid, total).map_err(RadiomicsError::Volume)
}

/// One sub-band of a single-level Haar decomposition.
pub struct WaveletBand {
    /// Three letters, one per axis in (x, y, z) order: 'l' or 'h'.
    pub name: &'static str,
    pub volume: Volume,
}

const BAND_NAMES: [&str; 8] = ["lll", "hll", "lhl", "hhl", "llh", "hlh", "lhh", "hhh"];

fn haar_axis(data: &[f64], dims: [usize; 3], axis: usize) -> (Vec<f64>, Vec<f64>, [usize; 3]) {
    // Odd extents replicate the last plane so every sample pairs up.
    let padded = (dims[axis] + 1) / 2 * 2;
    let mut out_dims = dims;
    out_dims[axis] = padded / 2;
    let mut low = vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]];
    let mut high = vec![0.0; low.len()];
    let idx = |d: &[usize; 3], i: usize, j: usize, k: usize| i + d[0] * (j + d[1] * k);
    for k in 0..out_dims[2] {
        for j in 0..out_dims[1] {
            for i in 0..out_dims[0] {
                let mut src0 = [i, j, k];
                let mut src1 = [i, j, k];
                src0[axis] = 2 * src0[axis];
                src1[axis] = (2 * src1[axis] + 1).min(dims[axis] - 1);
                let a = data[idx(&dims, src0[0], src0[1], src0[2])];
                let b = data[idx(&dims, src1[0], src1[1], src1[2])];
                let at = idx(&out_dims, i, j, k);
                low[at] = (a + b) / 2.0;
                high[at] = (a - b) / 2.0;
            }
        }
    }
    (low, high, out_dims)
}

/// Single-level 3D Haar decomposition into 8 sub-bands.
///
/// Per axis, adjacent pairs map to `L = (a+b)/2` and `H = (a-b)/2`; axes are
/// processed in x, y, z order and band names list the filter letter per axis
/// in that order. Sub-band grids halve the extents (odd extents pad by edge
/// replication first) and double the spacing.
pub fn haar_wavelet_3d(vol: &Volume) -> Vec<WaveletBand> {
    let dims = vol.grid.dims;
    // After x: two half-volumes; after y: four; after z: eight, indexed by
    // bit a = 1 when the high-pass was taken on that axis.
    let (lx, hx, dims_x) = haar_axis(&vol.data, dims, 0);
    let mut stage2: Vec<(usize, Vec<f64>, [usize; 3])> = Vec::with_capacity(4);
    for (bit, data) in [(0usize, lx), (1usize, hx)] {
        let (l, h, d) = haar_axis(&data, dims_x, 1);
        stage2.push((bit, l, d));
        stage2.push((bit | 2, h, d));
    }
    let mut bands = Vec::with_capacity(8);
    for (bits, data, d2) in stage2 {
        let (l, h, d3) = haar_axis(&data, d2, 2);
        for (bit, out) in [(0usize, l), (4usize, h)] {
            let code = bits | bit;
            let grid = Grid {
                dims: d3,
                spacing: [
                    vol.grid.spacing[0] * 2.0,
                    vol.grid.spacing[1] * 2.0,
                    vol.grid.spacing[2] * 2.0,
                ],
                origin: [
                    vol.grid.origin[0] + vol.grid.spacing[0] / 2.0,
                    vol.grid.origin[1] + vol.grid.spacing[1] / 2.0,
                    vol.grid.origin[2] + vol.grid.spacing[2] / 2.0,
                ],
            };
            bands.push(WaveletBand {
                name: BAND_NAMES[code],
                volume: Volume::new(grid, out).expect("band volume is well formed"),
            });
        }
    }
    bands.sort_by_key(|b| BAND_NAMES.iter().position(|n| *n == b.name).unwrap());
    bands
}
