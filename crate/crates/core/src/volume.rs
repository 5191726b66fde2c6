//! 3D scalar volumes on regular anisotropic grids.
//!
//! Conventions used everywhere in this crate:
//!
//! * voxels are stored x-fastest: linear index `i + nx*(j + ny*k)`;
//! * the world position of voxel `(i, j, k)` is its center,
//!   `origin + (i*sx, j*sy, k*sz)` in millimeters;
//! * the on-disk container is a raw little-endian f32 stream plus a
//!   structured-text sidecar header (`.raw` / `.hdr`).
//!
//! In memory voxels are f64 so that downstream numerics (interpolation,
//! convolution, statistics) are not limited by storage precision.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("dims {dims:?} require {expect} voxels, got {got}")]
    VoxelCount { dims: [usize; 3], expect: usize, got: usize },
    #[error("spacing must be positive, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("volume has zero extent: dims {0:?}")]
    Empty([usize; 3]),
    #[error("non-finite voxel at linear index {0}")]
    NonFinite(usize),
    #[error("mask voxel at linear index {0} is {1}, expected 0 or 1")]
    NotBinary(usize, f64),
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("equalization needs lo < hi, got [{0}, {1}]")]
    BadClipRange(f64, f64),
    #[error("equalization needs at least 2 bins, got {0}")]
    BadBins(usize),
    #[error("header field {0} is invalid: {1}")]
    BadHeader(&'static str, String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("header parse error on {path}: {msg}")]
    HeaderParse { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VolumeError + '_ {
    move |source| VolumeError::Io { path: path.to_path_buf(), source }
}

/// Grid geometry shared by volumes and masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// World position of the center of voxel (i, j, k), in mm.
    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Continuous voxel coordinates of a world point.
    #[inline]
    pub fn to_continuous(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    fn validate(&self) -> Result<(), VolumeError> {
        if self.voxel_count() == 0 {
            return Err(VolumeError::Empty(self.dims));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(VolumeError::BadSpacing(self.spacing));
        }
        Ok(())
    }
}

/// A dense scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: Grid,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self, VolumeError> {
        grid.validate()?;
        if data.len() != grid.voxel_count() {
            return Err(VolumeError::VoxelCount {
                dims: grid.dims,
                expect: grid.voxel_count(),
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(pos));
        }
        Ok(Volume { grid, data })
    }

    pub fn filled(grid: Grid, value: f64) -> Result<Self, VolumeError> {
        let n = grid.voxel_count();
        Volume::new(grid, vec![value; n])
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    /// Trilinear interpolation at a world point.
    ///
    /// Returns `None` when the point lies outside the voxel-center hull
    /// (continuous coordinates outside `[0, n-1]` on any axis); the caller
    /// decides how to pad. Exact at voxel centers, linear in the voxel
    /// data by construction.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> Option<f64> {
        let c = self.grid.to_continuous(p);
        let d = self.grid.dims;
        for a in 0..3 {
            if !(c[a] >= 0.0 && c[a] <= (d[a] - 1) as f64) {
                return None;
            }
        }
        let mut i0 = [0usize; 3];
        let mut f = [0f64; 3];
        for a in 0..3 {
            // Clamp the base so a point exactly on the top face uses the last
            // voxel pair with fractional weight 1.
            let base = (c[a].floor() as usize).min(d[a].saturating_sub(2));
            i0[a] = base;
            f[a] = if d[a] == 1 { 0.0 } else { c[a] - base as f64 };
        }
        let i1 = [
            (i0[0] + 1).min(d[0] - 1),
            (i0[1] + 1).min(d[1] - 1),
            (i0[2] + 1).min(d[2] - 1),
        ];
        let g = &self.grid;
        let v000 = self.data[g.index(i0[0], i0[1], i0[2])];
        let v100 = self.data[g.index(i1[0], i0[1], i0[2])];
        let v010 = self.data[g.index(i0[0], i1[1], i0[2])];
        let v110 = self.data[g.index(i1[0], i1[1], i0[2])];
        let v001 = self.data[g.index(i0[0], i0[1], i1[2])];
        let v101 = self.data[g.index(i1[0], i0[1], i1[2])];
        let v011 = self.data[g.index(i0[0], i1[1], i1[2])];
        let v111 = self.data[g.index(i1[0], i1[1], i1[2])];
        let (fx, fy, fz) = (f[0], f[1], f[2]);
        let c00 = v000 + (v100 - v000) * fx;
        let c10 = v010 + (v110 - v010) * fx;
        let c01 = v001 + (v101 - v001) * fx;
        let c11 = v011 + (v111 - v011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        Some(c0 + (c1 - c0) * fz)
    }
}

/// A binary region on the same kind of grid as [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub grid: Grid,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self, VolumeError> {
        grid.validate()?;
        if data.len() != grid.voxel_count() {
            return Err(VolumeError::VoxelCount {
                dims: grid.dims,
                expect: grid.voxel_count(),
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(VolumeError::NotBinary(pos, f64::from(data[pos])));
        }
        Ok(Mask { grid, data })
    }

    pub fn empty(grid: Grid) -> Result<Self, VolumeError> {
        let n = grid.voxel_count();
        Mask::new(grid, vec![0u8; n])
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.grid.index(i, j, k)] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn same_grid(&self, vol: &Volume) -> Result<(), VolumeError> {
        if self.grid.dims != vol.grid.dims {
            return Err(VolumeError::GridMismatch(format!(
                "mask dims {:?} vs volume dims {:?}",
                self.grid.dims, vol.grid.dims
            )));
        }
        Ok(())
    }
}

/// Histogram equalization over a clip range.
///
/// Values are clipped to `[lo, hi]`, binned into `bins` equal-width bins,
/// and remapped to `lo + (hi - lo) * m(b)` where `m(b)` is the midpoint of
/// the cumulative histogram across bin `b`. The map is monotone
/// non-decreasing and its output spans at most the clip range.
pub fn histogram_equalize(
    vol: &Volume,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Volume, VolumeError> {
    if bins < 2 {
        return Err(VolumeError::BadBins(bins));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(VolumeError::BadClipRange(lo, hi));
    }
    let width = (hi - lo) / bins as f64;
    let bin_of = |v: f64| -> usize {
        let c = v.clamp(lo, hi);
        (((c - lo) / width) as usize).min(bins - 1)
    };
    let mut hist = vec![0u64; bins];
    for &v in &vol.data {
        hist[bin_of(v)] += 1;
    }
    let n = vol.data.len() as f64;
    // m(b) = (cdf(b-1) + cdf(b)) / 2: occupied bins map to the middle of
    // their cumulative mass, which keeps a uniform histogram in place.
    let mut level = vec![0f64; bins];
    let mut cum = 0u64;
    for b in 0..bins {
        let before = cum as f64;
        cum += hist[b];
        level[b] = lo + (hi - lo) * (before + cum as f64) / (2.0 * n);
    }
    let data = vol.data.iter().map(|&v| level[bin_of(v)]).collect();
    Volume::new(vol.grid, data)
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    order: String,
}

impl Header {
    fn new(grid: &Grid, kind: &str) -> Self {
        Header {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            dims: grid.dims,
            spacing: grid.spacing,
            origin: grid.origin,
            dtype: "f32le".to_string(),
            order: "x-fastest".to_string(),
        }
    }

    fn grid(&self) -> Grid {
        Grid { dims: self.dims, spacing: self.spacing, origin: self.origin }
    }

    fn check(&self, path: &Path, kind: &str) -> Result<(), VolumeError> {
        if self.format_version != FORMAT_VERSION {
            return Err(VolumeError::HeaderParse {
                path: path.to_path_buf(),
                msg: format!("unsupported format_version {}", self.format_version),
            });
        }
        if self.kind != kind {
            return Err(VolumeError::HeaderParse {
                path: path.to_path_buf(),
                msg: format!("kind is {:?}, expected {:?}", self.kind, kind),
            });
        }
        if self.dtype != "f32le" || self.order != "x-fastest" {
            return Err(VolumeError::HeaderParse {
                path: path.to_path_buf(),
                msg: format!("unsupported dtype/order {:?}/{:?}", self.dtype, self.order),
            });
        }
        Ok(())
    }
}

fn raw_path(stem: &Path) -> PathBuf {
    stem.with_extension("raw")
}

fn hdr_path(stem: &Path) -> PathBuf {
    stem.with_extension("hdr")
}

fn write_pair(stem: &Path, header: &Header, values: &[f64]) -> Result<(), VolumeError> {
    let hp = hdr_path(stem);
    let text = toml::to_string(header).expect("header serializes");
    fs::write(&hp, text).map_err(io_err(&hp))?;
    let rp = raw_path(stem);
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(&rp).map_err(io_err(&rp))?;
    f.write_all(&bytes).map_err(io_err(&rp))?;
    Ok(())
}

fn read_pair(stem: &Path, kind: &str) -> Result<(Grid, Vec<f64>), VolumeError> {
    let hp = hdr_path(stem);
    let text = fs::read_to_string(&hp).map_err(io_err(&hp))?;
    let header: Header = toml::from_str(&text).map_err(|e| VolumeError::HeaderParse {
        path: hp.clone(),
        msg: e.to_string(),
    })?;
    header.check(&hp, kind)?;
    let grid = header.grid();
    grid.validate()?;
    let rp = raw_path(stem);
    let mut bytes = Vec::new();
    fs::File::open(&rp)
        .map_err(io_err(&rp))?
        .read_to_end(&mut bytes)
        .map_err(io_err(&rp))?;
    let expect = grid.voxel_count() * 4;
    if bytes.len() != expect {
        return Err(VolumeError::HeaderParse {
            path: rp,
            msg: format!("raw stream holds {} bytes, header implies {}", bytes.len(), expect),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok((grid, values))
}

/// Writes `stem.raw` + `stem.hdr`. Values are stored as f32.
pub fn save_volume(vol: &Volume, stem: &Path) -> Result<(), VolumeError> {
    write_pair(stem, &Header::new(&vol.grid, "volume"), &vol.data)
}

pub fn load_volume(stem: &Path) -> Result<Volume, VolumeError> {
    let (grid, values) = read_pair(stem, "volume")?;
    Volume::new(grid, values)
}

/// Same container as [`save_volume`], values restricted to {0, 1}.
pub fn save_mask(mask: &Mask, stem: &Path) -> Result<(), VolumeError> {
    let values: Vec<f64> = mask.data.iter().map(|&v| f64::from(v)).collect();
    write_pair(stem, &Header::new(&mask.grid, "mask"), &values)
}

pub fn load_mask(stem: &Path) -> Result<Mask, VolumeError> {
    let (grid, values) = read_pair(stem, "mask")?;
    let mut data = Vec::with_capacity(values.len());
    for (pos, &v) in values.iter().enumerate() {
        if v == 0.0 {
            data.push(0u8);
        } else if v == 1.0 {
            data.push(1u8);
        } else {
            return Err(VolumeError::NotBinary(pos, v));
        }
    }
    Mask::new(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid(dims: [usize; 3]) -> Grid {
        Grid { dims, spacing: [1.0, 1.0, 1.0], origin: [0.0, 0.0, 0.0] }
    }

    #[test]
    fn trilinear_midpoint_of_two_voxels() {
        let grid = unit_grid([2, 1, 1]);
        let vol = Volume::new(grid, vec![0.0, 10.0]).unwrap();
        assert_eq!(vol.sample_trilinear([0.5, 0.0, 0.0]), Some(5.0));
    }

    #[test]
    fn trilinear_exact_at_voxel_centers() {
        let grid = Grid {
            dims: [3, 2, 2],
            spacing: [0.5, 2.0, 1.5],
            origin: [-1.0, 3.0, 0.25],
        };
        let data: Vec<f64> = (0..12).map(|i| (i * i) as f64 * 0.37 - 4.0).collect();
        let vol = Volume::new(grid, data).unwrap();
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..3 {
                    let p = grid.world(i, j, k);
                    assert_eq!(vol.sample_trilinear(p), Some(vol.at(i, j, k)));
                }
            }
        }
    }

    #[test]
    fn trilinear_outside_hull_is_none() {
        let grid = unit_grid([2, 2, 2]);
        let vol = Volume::filled(grid, 1.0).unwrap();
        assert_eq!(vol.sample_trilinear([-0.001, 0.0, 0.0]), None);
        assert_eq!(vol.sample_trilinear([1.001, 0.5, 0.5]), None);
        assert_eq!(vol.sample_trilinear([0.5, 0.5, f64::NAN]), None);
        // Exactly on the hull is inside.
        assert_eq!(vol.sample_trilinear([1.0, 1.0, 1.0]), Some(1.0));
    }

    #[test]
    fn volume_construction_rejects_bad_input() {
        let grid = unit_grid([2, 2, 2]);
        assert!(matches!(
            Volume::new(grid, vec![0.0; 7]),
            Err(VolumeError::VoxelCount { .. })
        ));
        assert!(matches!(
            Volume::new(grid, vec![f64::INFINITY; 8]),
            Err(VolumeError::NonFinite(0))
        ));
        let bad = Grid { spacing: [0.0, 1.0, 1.0], ..grid };
        assert!(matches!(
            Volume::new(bad, vec![0.0; 8]),
            Err(VolumeError::BadSpacing(_))
        ));
        assert!(matches!(
            Mask::new(grid, vec![2u8; 8]),
            Err(VolumeError::NotBinary(0, _))
        ));
    }

    #[test]
    fn equalize_constant_volume_stays_constant() {
        let grid = unit_grid([4, 4, 4]);
        let vol = Volume::filled(grid, 130.0).unwrap();
        let eq = histogram_equalize(&vol, 256, -200.0, 1000.0).unwrap();
        let first = eq.data[0];
        assert!(eq.data.iter().all(|&v| v == first));
    }

    #[test]
    fn equalize_matches_direct_cdf_mapping_on_two_valued_volume() {
        // Half the voxels at the clip floor, half three quarters up the
        // range; the oracle applies the midpoint-CDF map to the multiset.
        let grid = unit_grid([4, 4, 2]);
        let mut data = vec![-200.0; 16];
        data.extend(vec![700.0; 16]);
        let vol = Volume::new(grid, data).unwrap();
        let bins = 256;
        let (lo, hi) = (-200.0, 1000.0);
        let eq = histogram_equalize(&vol, bins, lo, hi).unwrap();

        let width = (hi - lo) / bins as f64;
        let oracle = |v: f64| {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            let below = vol.data.iter().filter(|&&x| {
                ((((x - lo) / width) as usize).min(bins - 1)) < b
            }).count() as f64;
            let incl = vol.data.iter().filter(|&&x| {
                ((((x - lo) / width) as usize).min(bins - 1)) <= b
            }).count() as f64;
            lo + (hi - lo) * (below + incl) / (2.0 * vol.data.len() as f64)
        };
        for (&v, &e) in vol.data.iter().zip(eq.data.iter()) {
            assert!((e - oracle(v)).abs() < 1e-12, "{} mapped to {}, oracle {}", v, e, oracle(v));
        }
        // Both output levels stay inside the clip range and keep order.
        assert!(eq.data[0] < eq.data[31]);
        assert!(eq.data[0] >= lo && eq.data[31] <= hi);
    }

    #[test]
    fn equalize_rejects_degenerate_parameters() {
        let vol = Volume::filled(unit_grid([2, 2, 2]), 0.0).unwrap();
        assert!(matches!(
            histogram_equalize(&vol, 1, 0.0, 1.0),
            Err(VolumeError::BadBins(1))
        ));
        assert!(matches!(
            histogram_equalize(&vol, 8, 5.0, 5.0),
            Err(VolumeError::BadClipRange(..))
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid {
            dims: [3, 4, 5],
            spacing: [0.5, 0.5, 0.4],
            origin: [-7.0, 2.0, 0.0],
        };
        let data: Vec<f64> = (0..60).map(|i| f64::from(i as f32 * 1.7 - 20.0)).collect();
        let vol = Volume::new(grid, data.clone()).unwrap();
        let stem = dir.path().join("vol");
        save_volume(&vol, &stem).unwrap();
        let back = load_volume(&stem).unwrap();
        assert_eq!(back.grid, grid);
        assert_eq!(back.data, data);

        let mask_data: Vec<u8> = (0..60).map(|i| (i % 3 == 0) as u8).collect();
        let mask = Mask::new(grid, mask_data.clone()).unwrap();
        let mstem = dir.path().join("mask");
        save_mask(&mask, &mstem).unwrap();
        let mback = load_mask(&mstem).unwrap();
        assert_eq!(mback.data, mask_data);
    }

    #[test]
    fn load_rejects_truncated_raw_stream() {
        let dir = tempfile::tempdir().unwrap();
        let grid = unit_grid([2, 2, 2]);
        let vol = Volume::filled(grid, 1.0).unwrap();
        let stem = dir.path().join("vol");
        save_volume(&vol, &stem).unwrap();
        let raw = stem.with_extension("raw");
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_volume(&stem), Err(VolumeError::HeaderParse { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn trilinear_is_linear_in_voxel_data(
            seed in 0u64..1000,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, "trilinear-prop", &[]);
            let grid = unit_grid([4, 3, 3]);
            let n = grid.voxel_count();
            let d1: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let d2: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let v1 = Volume::new(grid, d1.clone()).unwrap();
            let v2 = Volume::new(grid, d2.clone()).unwrap();
            let combo = Volume::new(
                grid,
                d1.iter().zip(&d2).map(|(x, y)| a * x + b * y).collect(),
            ).unwrap();
            for _ in 0..16 {
                let p = [
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(0.0..2.0),
                ];
                let lhs = combo.sample_trilinear(p).unwrap();
                let rhs = a * v1.sample_trilinear(p).unwrap() + b * v2.sample_trilinear(p).unwrap();
                let tol = 1e-12 * lhs.abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs - rhs).abs() <= tol, "lhs {lhs} rhs {rhs}");
            }
        }

        #[test]
        fn equalize_is_monotone_and_near_idempotent(seed in 0u64..400) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed, "equalize-prop", &[]);
            let grid = unit_grid([6, 6, 6]);
            let n = grid.voxel_count();
            // Mixture of two value clusters plus uniform spread, so the
            // histogram is lumpy but values are continuous.
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.6) {
                        rng.gen_range(-60.0..40.0)
                    } else {
                        rng.gen_range(300.0..900.0)
                    }
                })
                .collect();
            let vol = Volume::new(grid, data).unwrap();
            let bins = 256;
            let (lo, hi) = (-200.0, 1000.0);
            let width = (hi - lo) / bins as f64;
            let eq = histogram_equalize(&vol, bins, lo, hi).unwrap();

            let mut pairs: Vec<(f64, f64)> = vol.data.iter().cloned()
                .zip(eq.data.iter().cloned()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 <= w[1].1 + 1e-12, "monotonicity violated");
            }

            let eq2 = histogram_equalize(&eq, bins, lo, hi).unwrap();
            for (&a, &b) in eq.data.iter().zip(eq2.data.iter()) {
                prop_assert!((a - b).abs() <= width + 1e-9,
                    "second pass moved {a} to {b}, more than one bin width {width}");
            }
        }
    }
}
