//! Gray-level discretization of masked intensities.

use serde::{Deserialize, Serialize};

use crate::volume::{Mask, Volume};

use super::RadiomicsError;

/// How masked intensities map to integer gray levels starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DiscretizationSpec {
    /// `level = floor((x - min) / width) + 1`; the level count follows from
    /// the data range.
    FixedWidth { width: f64 },
    /// `count` equal-width bins across `[min, max]`; the maximum maps to the
    /// top level. A constant region maps to a single level.
    FixedCount { count: u32 },
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        DiscretizationSpec::FixedWidth { width: 25.0 }
    }
}

/// Guard against degenerate configurations blowing up co-occurrence
/// matrices, which are `levels^2`.
const MAX_LEVELS: u32 = 4096;

/// Gray levels of a masked region on its bounding box.
///
/// `levels[...]` is 0 outside the mask and in `1..=ng` inside; the box is
/// the tight axis-aligned bounding box of the mask within the source grid.
#[derive(Debug, Clone)]
pub struct LevelMap {
    pub dims: [usize; 3],
    pub levels: Vec<u32>,
    pub ng: u32,
    /// Number of in-mask voxels.
    pub voxels: usize,
}

impl LevelMap {
    /// Builds a map directly from per-voxel levels (0 = outside). Intended
    /// for tests and oracles.
    pub fn from_levels(dims: [usize; 3], levels: Vec<u32>) -> Result<Self, RadiomicsError> {
        if levels.len() != dims[0] * dims[1] * dims[2] {
            return Err(RadiomicsError::LevelCount {
                expect: dims[0] * dims[1] * dims[2],
                got: levels.len(),
            });
        }
        let ng = levels.iter().copied().max().unwrap_or(0);
        let voxels = levels.iter().filter(|&&l| l > 0).count();
        if voxels == 0 {
            return Err(RadiomicsError::EmptyMask);
        }
        Ok(LevelMap { dims, levels, ng, voxels })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> u32 {
        self.levels[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Histogram over levels 1..=ng, normalized to probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut counts = vec![0u64; self.ng as usize];
        for &l in &self.levels {
            if l > 0 {
                counts[(l - 1) as usize] += 1;
            }
        }
        counts
            .iter()
            .map(|&c| c as f64 / self.voxels as f64)
            .collect()
    }
}

pub(super) fn mask_bbox(mask: &Mask) -> Option<([usize; 3], [usize; 3])> {
    let d = mask.grid.dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                if mask.at(i, j, k) {
                    any = true;
                    let p = [i, j, k];
                    for a in 0..3 {
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a]);
                    }
                }
            }
        }
    }
    any.then_some((lo, hi))
}

/// Discretizes the masked voxels of `vol` into a [`LevelMap`] on the mask's
/// bounding box.
pub fn discretize(
    vol: &Volume,
    mask: &Mask,
    spec: DiscretizationSpec,
) -> Result<LevelMap, RadiomicsError> {
    mask.same_grid(vol).map_err(RadiomicsError::Volume)?;
    let (lo, hi) = mask_bbox(mask).ok_or(RadiomicsError::EmptyMask)?;
    let dims = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];

    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                if mask.at(i, j, k) {
                    let v = vol.at(i, j, k);
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
            }
        }
    }

    let level_of: Box<dyn Fn(f64) -> u32> = match spec {
        DiscretizationSpec::FixedWidth { width } => {
            if !(width > 0.0) || !width.is_finite() {
                return Err(RadiomicsError::BadBinWidth(width));
            }
            let top = ((vmax - vmin) / width) as u32 + 1;
            if top > MAX_LEVELS {
                return Err(RadiomicsError::TooManyLevels(top));
            }
            Box::new(move |v| ((v - vmin) / width) as u32 + 1)
        }
        DiscretizationSpec::FixedCount { count } => {
            if count == 0 {
                return Err(RadiomicsError::BadBinCount(count));
            }
            if count > MAX_LEVELS {
                return Err(RadiomicsError::TooManyLevels(count));
            }
            let width = (vmax - vmin) / f64::from(count);
            Box::new(move |v| {
                if width == 0.0 {
                    1
                } else {
                    (((v - vmin) / width) as u32 + 1).min(count)
                }
            })
        }
    };

    let mut levels = vec![0u32; dims[0] * dims[1] * dims[2]];
    let mut voxels = 0usize;
    let mut ng = 0u32;
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                if mask.at(i, j, k) {
                    let l = level_of(vol.at(i, j, k));
                    ng = ng.max(l);
                    voxels += 1;
                    let at =
                        (i - lo[0]) + dims[0] * ((j - lo[1]) + dims[1] * (k - lo[2]));
                    levels[at] = l;
                }
            }
        }
    }
    Ok(LevelMap { dims, levels, ng, voxels })
}
