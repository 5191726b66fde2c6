//! Radiomic feature extraction: an image-transform bank feeding shape,
//! first-order, and texture (GLCM, GLRLM) feature families computed over a
//! masked region.
//!
//! The default configuration yields 461 features: 10 shape features from the
//! mask alone, plus 18 first-order, 12 GLCM, and 11 GLRLM features for each
//! of 11 transforms (original, Laplacian-of-Gaussian at 1/2/3 mm, and the 7
//! Haar detail sub-bands). The wavelet low-pass band (lll) is excluded by
//! default because it is a half-resolution smoothed copy of the original
//! image, so its statistics duplicate the original transform; `wavelet_lll`
//! re-enables it. Feature ordering is canonical and stable: shape first,
//! then per transform in bank order, each class in declaration order.

pub mod discretize;
pub mod firstorder;
pub mod glcm;
pub mod glrlm;
pub mod shape;
pub mod transforms;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{Grid, Mask, Volume, VolumeError};

use discretize::{discretize, DiscretizationSpec};
use transforms::{haar_wavelet_3d, log_transform};

/// The 13 unique 3D direction offsets at Chebyshev distance 1 (one per
/// opposite pair of the 26-neighborhood).
pub const DIRECTIONS_13: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

#[derive(Debug, Error)]
pub enum RadiomicsError {
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("kernel for sigma {sigma_mm} mm (radius {radius}) exceeds volume extent {dim}")]
    KernelTooLarge {
        sigma_mm: f64,
        radius: usize,
        dim: usize,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("level data has {got} entries, expected {expect}")]
    LevelCount { expect: usize, got: usize },
    #[error("mask selects no voxels")]
    EmptyMask,
    #[error("bin width must be positive and finite, got {0}")]
    BadBinWidth(f64),
    #[error("bin count must be at least 1, got {0}")]
    BadBinCount(u32),
    #[error("discretization would produce {0} levels, above the supported maximum")]
    TooManyLevels(u32),
    #[error("no in-mask voxel pair exists for any co-occurrence direction")]
    NoVoxelPairs,
    #[error("feature {0} evaluated to a non-finite value")]
    NonFinite(String),
}

/// Which transforms and feature classes to extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiomicsConfig {
    /// Laplacian-of-Gaussian scales in mm; empty disables the transform.
    pub log_sigmas_mm: Vec<f64>,
    /// Include the single-level Haar detail sub-bands.
    pub wavelet: bool,
    /// Also include the wavelet low-pass (lll) band. Off by default: that
    /// band is a smoothed half-resolution copy of the original image.
    pub wavelet_lll: bool,
    pub discretization: DiscretizationSpec,
    pub shape: bool,
    pub firstorder: bool,
    pub glcm: bool,
    pub glrlm: bool,
}

impl Default for RadiomicsConfig {
    fn default() -> Self {
        RadiomicsConfig {
            log_sigmas_mm: vec![1.0, 2.0, 3.0],
            wavelet: true,
            wavelet_lll: false,
            discretization: DiscretizationSpec::default(),
            shape: true,
            firstorder: true,
            glcm: true,
            glrlm: true,
        }
    }
}

impl RadiomicsConfig {
    /// A configuration computing only mask shape features.
    pub fn shape_only() -> Self {
        RadiomicsConfig {
            log_sigmas_mm: Vec::new(),
            wavelet: false,
            firstorder: false,
            glcm: false,
            glrlm: false,
            ..RadiomicsConfig::default()
        }
    }

    fn transform_names(&self) -> Vec<String> {
        let mut names = vec!["original".to_string()];
        for &s in &self.log_sigmas_mm {
            names.push(format!("log_sigma_{s}"));
        }
        if self.wavelet {
            for band in ["lll", "hll", "lhl", "hhl", "llh", "hlh", "lhh", "hhh"] {
                if band == "lll" && !self.wavelet_lll {
                    continue;
                }
                names.push(format!("wavelet_{band}"));
            }
        }
        names
    }
}

/// One named feature value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEntry {
    /// Transform the value was computed on; empty for shape features.
    pub transform: String,
    pub class: &'static str,
    pub feature: &'static str,
    pub value: f64,
}

impl FeatureEntry {
    /// Flat column name: `shape_<feature>` or `<transform>_<class>_<feature>`.
    pub fn full_name(&self) -> String {
        if self.transform.is_empty() {
            format!("{}_{}", self.class, self.feature)
        } else {
            format!("{}_{}_{}", self.transform, self.class, self.feature)
        }
    }
}

/// Ordered, finite feature values; ordering is identical for identical
/// configurations.
#[derive(Debug, Clone, Default)]
pub struct FeatureVector {
    pub entries: Vec<FeatureEntry>,
}

impl FeatureVector {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.full_name()).collect()
    }
}

/// Transformed copies of one volume, computed once and reused across masks.
///
/// Intensity transforms are mask-independent, so extracting features for
/// several regions of the same volume should share a bank.
pub struct TransformBank {
    items: Vec<(String, Volume)>,
}

impl TransformBank {
    pub fn build(vol: &Volume, cfg: &RadiomicsConfig) -> Result<Self, RadiomicsError> {
        let mut items = vec![("original".to_string(), vol.clone())];
        for &sigma in &cfg.log_sigmas_mm {
            items.push((format!("log_sigma_{sigma}"), log_transform(vol, sigma)?));
        }
        if cfg.wavelet {
            for band in haar_wavelet_3d(vol) {
                if band.name == "lll" && !cfg.wavelet_lll {
                    continue;
                }
                items.push((format!("wavelet_{}", band.name), band.volume));
            }
        }
        Ok(TransformBank { items })
    }

    pub fn transforms(&self) -> impl Iterator<Item = (&str, &Volume)> {
        self.items.iter().map(|(n, v)| (n.as_str(), v))
    }
}

/// Downsamples a mask to the half-resolution grid of a wavelet sub-band: a
/// coarse voxel is inside when any of the fine voxels it covers is inside.
fn mask_to_half_res(mask: &Mask, grid: Grid) -> Mask {
    let [nx, ny, nz] = grid.dims;
    let fine = mask.grid.dims;
    let mut data = vec![0u8; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut inside = false;
                'block: for dk in 0..2 {
                    for dj in 0..2 {
                        for di in 0..2 {
                            let fi = (2 * i + di).min(fine[0] - 1);
                            let fj = (2 * j + dj).min(fine[1] - 1);
                            let fk = (2 * k + dk).min(fine[2] - 1);
                            if mask.at(fi, fj, fk) {
                                inside = true;
                                break 'block;
                            }
                        }
                    }
                }
                data[i + nx * (j + ny * k)] = inside as u8;
            }
        }
    }
    Mask::new(grid, data).expect("half-res mask is well formed")
}

fn masked_values(vol: &Volume, mask: &Mask) -> Vec<f64> {
    let [nx, ny, nz] = vol.grid.dims;
    let mut out = Vec::with_capacity(mask.count());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if mask.at(i, j, k) {
                    out.push(vol.at(i, j, k));
                }
            }
        }
    }
    out
}

/// Extracts the configured features for one mask using a prebuilt bank.
///
/// The mask must live on the bank's source grid; wavelet sub-bands reuse it
/// through half-resolution union downsampling.
pub fn extract_from_bank(
    bank: &TransformBank,
    mask: &Mask,
    cfg: &RadiomicsConfig,
) -> Result<FeatureVector, RadiomicsError> {
    let mut entries = Vec::new();
    if cfg.shape {
        let values = shape::shape_features(mask)?;
        for (name, value) in shape::SHAPE_NAMES.iter().zip(values) {
            entries.push(FeatureEntry {
                transform: String::new(),
                class: "shape",
                feature: name,
                value,
            });
        }
    }
    if cfg.firstorder || cfg.glcm || cfg.glrlm {
        for (tname, tvol) in bank.transforms() {
            let half_res;
            let tmask = if tvol.grid.dims == mask.grid.dims {
                mask
            } else {
                half_res = mask_to_half_res(mask, tvol.grid);
                &half_res
            };
            let levels = discretize(tvol, tmask, cfg.discretization)?;
            if cfg.firstorder {
                let values = masked_values(tvol, tmask);
                let feats =
                    firstorder::first_order_features(&values, &levels, tvol.grid.voxel_volume())?;
                for (name, value) in firstorder::FIRSTORDER_NAMES.iter().zip(feats) {
                    entries.push(FeatureEntry {
                        transform: tname.to_string(),
                        class: "firstorder",
                        feature: name,
                        value,
                    });
                }
            }
            if cfg.glcm {
                let feats = glcm::glcm_features(&levels)?;
                for (name, value) in glcm::GLCM_NAMES.iter().zip(feats) {
                    entries.push(FeatureEntry {
                        transform: tname.to_string(),
                        class: "glcm",
                        feature: name,
                        value,
                    });
                }
            }
            if cfg.glrlm {
                let feats = glrlm::glrlm_features(&levels)?;
                for (name, value) in glrlm::GLRLM_NAMES.iter().zip(feats) {
                    entries.push(FeatureEntry {
                        transform: tname.to_string(),
                        class: "glrlm",
                        feature: name,
                        value,
                    });
                }
            }
        }
    }
    for e in &entries {
        if !e.value.is_finite() {
            return Err(RadiomicsError::NonFinite(e.full_name()));
        }
    }
    Ok(FeatureVector { entries })
}

/// Builds a single-use bank and extracts features for one mask.
pub fn extract_radiomics(
    vol: &Volume,
    mask: &Mask,
    cfg: &RadiomicsConfig,
) -> Result<FeatureVector, RadiomicsError> {
    let bank = TransformBank::build(vol, cfg)?;
    extract_from_bank(&bank, mask, cfg)
}

/// Column names extraction will produce for `cfg`, in extraction order.
pub fn feature_names(cfg: &RadiomicsConfig) -> Vec<String> {
    let mut names = Vec::new();
    if cfg.shape {
        for n in shape::SHAPE_NAMES {
            names.push(format!("shape_{n}"));
        }
    }
    if cfg.firstorder || cfg.glcm || cfg.glrlm {
        for t in cfg.transform_names() {
            if cfg.firstorder {
                for n in firstorder::FIRSTORDER_NAMES {
                    names.push(format!("{t}_firstorder_{n}"));
                }
            }
            if cfg.glcm {
                for n in glcm::GLCM_NAMES {
                    names.push(format!("{t}_glcm_{n}"));
                }
            }
            if cfg.glrlm {
                for n in glrlm::GLRLM_NAMES {
                    names.push(format!("{t}_glrlm_{n}"));
                }
            }
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use rand::Rng;
    use rand::SeedableRng;

    fn ball_volume_and_mask(n: usize) -> (Volume, Mask) {
        // 2 mm spacing keeps the sigma = 3 mm kernel inside small test grids.
        let grid = Grid {
            dims: [n, n, n],
            spacing: [2.0, 2.0, 2.0],
            origin: [0.0, 0.0, 0.0],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut data = vec![0.0f64; n * n * n];
        let mut mask = vec![0u8; n * n * n];
        let c = (n as f64 - 1.0) / 2.0;
        let r = n as f64 / 3.0;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2) + (k as f64 - c).powi(2);
                    let at = i + n * (j + n * k);
                    data[at] = 100.0 * (-d2 / (r * r)).exp() + rng.gen_range(-5.0..5.0);
                    if d2 < r * r {
                        mask[at] = 1;
                    }
                }
            }
        }
        (Volume::new(grid, data).unwrap(), Mask::new(grid, mask).unwrap())
    }

    #[test]
    fn default_config_yields_461_stable_unique_names() {
        let cfg = RadiomicsConfig::default();
        let names = feature_names(&cfg);
        assert_eq!(names.len(), 461);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 461);

        let (vol, mask) = ball_volume_and_mask(14);
        let fv = extract_radiomics(&vol, &mask, &cfg).unwrap();
        assert_eq!(fv.names(), names);
        assert!(fv.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn extraction_is_deterministic() {
        let cfg = RadiomicsConfig::default();
        let (vol, mask) = ball_volume_and_mask(12);
        let a = extract_radiomics(&vol, &mask, &cfg).unwrap();
        let b = extract_radiomics(&vol, &mask, &cfg).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn shape_only_single_voxel() {
        let grid = Grid {
            dims: [3, 3, 3],
            spacing: [0.5, 0.5, 0.5],
            origin: [0.0, 0.0, 0.0],
        };
        let vol = Volume::filled(grid, 10.0).unwrap();
        let mut m = vec![0u8; 27];
        m[13] = 1;
        let mask = Mask::new(grid, m).unwrap();
        let fv = extract_radiomics(&vol, &mask, &RadiomicsConfig::shape_only()).unwrap();
        assert_eq!(fv.entries.len(), 10);
        assert_eq!(fv.entries[0].full_name(), "shape_volume");
        assert_eq!(fv.entries[0].value, 0.125);
    }

    #[test]
    fn shift_invariance_of_texture_under_fixed_count_bins() {
        let cfg = RadiomicsConfig {
            log_sigmas_mm: Vec::new(),
            wavelet: false,
            discretization: DiscretizationSpec::FixedCount { count: 8 },
            shape: false,
            firstorder: false,
            glcm: true,
            glrlm: true,
            ..RadiomicsConfig::default()
        };
        let (vol, mask) = ball_volume_and_mask(10);
        let shifted = Volume::new(
            vol.grid,
            vol.data.iter().map(|v| v + 500.0).collect(),
        )
        .unwrap();
        let a = extract_radiomics(&vol, &mask, &cfg).unwrap();
        let b = extract_radiomics(&shifted, &mask, &cfg).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn doubling_spacing_scales_volume_and_surface() {
        let dims = [6, 6, 6];
        let mut m = vec![0u8; 216];
        for k in 1..5 {
            for j in 1..5 {
                for i in 1..5 {
                    m[i + 6 * (j + 6 * k)] = 1;
                }
            }
        }
        let g1 = Grid {
            dims,
            spacing: [1.0, 1.0, 1.0],
            origin: [0.0, 0.0, 0.0],
        };
        let g2 = Grid {
            dims,
            spacing: [2.0, 2.0, 2.0],
            origin: [0.0, 0.0, 0.0],
        };
        let f1 = shape::shape_features(&Mask::new(g1, m.clone()).unwrap()).unwrap();
        let f2 = shape::shape_features(&Mask::new(g2, m).unwrap()).unwrap();
        assert!((f2[0] / f1[0] - 8.0).abs() < 1e-12);
        assert!((f2[1] / f1[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn half_res_mask_uses_union_of_covered_voxels() {
        let grid = Grid {
            dims: [4, 4, 4],
            spacing: [1.0, 1.0, 1.0],
            origin: [0.0, 0.0, 0.0],
        };
        let mut m = vec![0u8; 64];
        // One voxel inside the (1,0,0) coarse block.
        m[2] = 1;
        let mask = Mask::new(grid, m).unwrap();
        let half = Grid {
            dims: [2, 2, 2],
            spacing: [2.0, 2.0, 2.0],
            origin: [0.5, 0.5, 0.5],
        };
        let down = mask_to_half_res(&mask, half);
        assert_eq!(down.count(), 1);
        assert!(down.at(1, 0, 0));
    }

    #[test]
    fn texture_features_match_rotated_volume() {
        // Axis-aligned 90-degree rotation of volume and mask together leaves
        // direction-averaged texture features unchanged.
        let n = 8;
        let (vol, mask) = ball_volume_and_mask(n);
        let rot = |i: usize, j: usize, k: usize| (j, n - 1 - i, k);
        let mut rdata = vec![0.0; n * n * n];
        let mut rmask = vec![0u8; n * n * n];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let (ri, rj, rk) = rot(i, j, k);
                    rdata[ri + n * (rj + n * rk)] = vol.at(i, j, k);
                    rmask[ri + n * (rj + n * rk)] = mask.at(i, j, k) as u8;
                }
            }
        }
        let rvol = Volume::new(vol.grid, rdata).unwrap();
        let rmask = Mask::new(vol.grid, rmask).unwrap();
        let cfg = RadiomicsConfig {
            log_sigmas_mm: Vec::new(),
            wavelet: false,
            shape: false,
            firstorder: false,
            ..RadiomicsConfig::default()
        };
        let a = extract_radiomics(&vol, &mask, &cfg).unwrap();
        let b = extract_radiomics(&rvol, &rmask, &cfg).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}
