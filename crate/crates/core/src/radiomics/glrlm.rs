//! Gray-level run-length matrix features.

use super::discretize::LevelMap;
use super::{RadiomicsError, DIRECTIONS_13};

pub const GLRLM_NAMES: [&str; 11] = [
    "short_run_emphasis",
    "long_run_emphasis",
    "gray_level_nonuniformity",
    "run_length_nonuniformity",
    "run_percentage",
    "low_gray_level_run_emphasis",
    "high_gray_level_run_emphasis",
    "short_run_low_gray_level_emphasis",
    "short_run_high_gray_level_emphasis",
    "long_run_low_gray_level_emphasis",
    "long_run_high_gray_level_emphasis",
];

/// Run counts for one direction: entry `[level-1][length-1]` is the number
/// of maximal same-level runs of that length. Out-of-mask voxels break runs.
#[derive(Debug, Clone)]
pub struct RunMatrix {
    pub ng: usize,
    pub max_len: usize,
    counts: Vec<u64>,
}

impl RunMatrix {
    pub fn at(&self, level_idx: usize, len_idx: usize) -> u64 {
        self.counts[level_idx * self.max_len + len_idx]
    }

    pub fn total_runs(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn glrlm_counts(map: &LevelMap, dir: [i64; 3]) -> RunMatrix {
    let ng = map.ng as usize;
    let [nx, ny, nz] = map.dims;
    let max_len = nx.max(ny).max(nz);
    let mut counts = vec![0u64; ng * max_len];
    let inside = |p: [i64; 3]| {
        p[0] >= 0
            && p[1] >= 0
            && p[2] >= 0
            && (p[0] as usize) < nx
            && (p[1] as usize) < ny
            && (p[2] as usize) < nz
    };
    let level_at = |p: [i64; 3]| map.at(p[0] as usize, p[1] as usize, p[2] as usize);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let lv = map.at(i, j, k);
                if lv == 0 {
                    continue;
                }
                let p = [i as i64, j as i64, k as i64];
                let prev = [p[0] - dir[0], p[1] - dir[1], p[2] - dir[2]];
                // Count each maximal run once, from its first voxel.
                if inside(prev) && level_at(prev) == lv {
                    continue;
                }
                let mut len = 1usize;
                let mut q = [p[0] + dir[0], p[1] + dir[1], p[2] + dir[2]];
                while inside(q) && level_at(q) == lv {
                    len += 1;
                    q = [q[0] + dir[0], q[1] + dir[1], q[2] + dir[2]];
                }
                counts[(lv - 1) as usize * max_len + (len - 1)] += 1;
            }
        }
    }
    RunMatrix { ng, max_len, counts }
}

/// The 11 GLRLM features, in [`GLRLM_NAMES`] order.
///
/// Raw run counts from the 13 unique distance-1 directions are averaged
/// entrywise (every in-mask voxel starts or extends a run in every
/// direction, so no direction is ever empty).
pub fn glrlm_features(map: &LevelMap) -> Result<Vec<f64>, RadiomicsError> {
    if map.voxels == 0 {
        return Err(RadiomicsError::EmptyMask);
    }
    let ng = map.ng as usize;
    let max_len = map.dims[0].max(map.dims[1]).max(map.dims[2]);
    let mut avg = vec![0.0f64; ng * max_len];
    for dir in DIRECTIONS_13 {
        let m = glrlm_counts(map, dir);
        for (slot, &c) in avg.iter_mut().zip(m.counts.iter()) {
            *slot += c as f64 / DIRECTIONS_13.len() as f64;
        }
    }
    Ok(features_from_matrix(&avg, ng, max_len, map.voxels))
}

/// Features from one (possibly averaged) run matrix; `np` is the number of
/// in-mask voxels.
pub fn features_from_matrix(m: &[f64], ng: usize, max_len: usize, np: usize) -> Vec<f64> {
    let nr: f64 = m.iter().sum();
    let mut sre = 0.0;
    let mut lre = 0.0;
    let mut lglre = 0.0;
    let mut hglre = 0.0;
    let mut srlgle = 0.0;
    let mut srhgle = 0.0;
    let mut lrlgle = 0.0;
    let mut lrhgle = 0.0;
    let mut level_sums = vec![0.0f64; ng];
    let mut length_sums = vec![0.0f64; max_len];
    for li in 0..ng {
        let lv2 = ((li + 1) * (li + 1)) as f64;
        for ri in 0..max_len {
            let v = m[li * max_len + ri];
            if v == 0.0 {
                continue;
            }
            let rl2 = ((ri + 1) * (ri + 1)) as f64;
            sre += v / rl2;
            lre += v * rl2;
            lglre += v / lv2;
            hglre += v * lv2;
            srlgle += v / (lv2 * rl2);
            srhgle += v * lv2 / rl2;
            lrlgle += v * rl2 / lv2;
            lrhgle += v * lv2 * rl2;
            level_sums[li] += v;
            length_sums[ri] += v;
        }
    }
    let gln: f64 = level_sums.iter().map(|s| s * s).sum();
    let rln: f64 = length_sums.iter().map(|s| s * s).sum();
    vec![
        sre / nr,
        lre / nr,
        gln / nr,
        rln / nr,
        nr / np as f64,
        lglre / nr,
        hglre / nr,
        srlgle / nr,
        srhgle / nr,
        lrlgle / nr,
        lrhgle / nr,
    ]
}
