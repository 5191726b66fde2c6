//! Gray-level co-occurrence matrix features.

use super::discretize::LevelMap;
use super::{RadiomicsError, DIRECTIONS_13};

pub const GLCM_NAMES: [&str; 12] = [
    "contrast",
    "dissimilarity",
    "joint_energy",
    "joint_entropy",
    "homogeneity",
    "correlation",
    "cluster_shade",
    "cluster_prominence",
    "joint_maximum",
    "autocorrelation",
    "sum_average",
    "difference_entropy",
];

/// Symmetrized co-occurrence counts for one offset: every ordered in-mask
/// pair `(v, v+offset)` contributes to both `[a][b]` and `[b][a]`. Row-major
/// `ng x ng`, index = level - 1.
pub fn glcm_counts(map: &LevelMap, offset: [i64; 3]) -> Vec<u64> {
    let ng = map.ng as usize;
    let [nx, ny, nz] = map.dims;
    let mut counts = vec![0u64; ng * ng];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let a = map.at(i, j, k);
                if a == 0 {
                    continue;
                }
                let q = [
                    i as i64 + offset[0],
                    j as i64 + offset[1],
                    k as i64 + offset[2],
                ];
                if q[0] < 0 || q[1] < 0 || q[2] < 0 {
                    continue;
                }
                let (qi, qj, qk) = (q[0] as usize, q[1] as usize, q[2] as usize);
                if qi >= nx || qj >= ny || qk >= nz {
                    continue;
                }
                let b = map.at(qi, qj, qk);
                if b == 0 {
                    continue;
                }
                let (ai, bi) = ((a - 1) as usize, (b - 1) as usize);
                counts[ai * ng + bi] += 1;
                counts[bi * ng + ai] += 1;
            }
        }
    }
    counts
}

/// The 12 GLCM features, in [`GLCM_NAMES`] order.
///
/// Counts accumulate over the 13 unique distance-1 directions; each
/// direction's matrix is normalized to probabilities and directions with at
/// least one pair are averaged with equal weight. Errors when no direction
/// has any pair. Correlation of a single-level region is 1 by convention.
pub fn glcm_features(map: &LevelMap) -> Result<Vec<f64>, RadiomicsError> {
    let ng = map.ng as usize;
    let mut avg = vec![0.0f64; ng * ng];
    let mut used = 0usize;
    for dir in DIRECTIONS_13 {
        let counts = glcm_counts(map, dir);
        let total: u64 = counts.iter().sum();
        if total == 0 {
            continue;
        }
        used += 1;
        for (slot, &c) in avg.iter_mut().zip(counts.iter()) {
            *slot += c as f64 / total as f64;
        }
    }
    if used == 0 {
        return Err(RadiomicsError::NoVoxelPairs);
    }
    for v in avg.iter_mut() {
        *v /= used as f64;
    }
    Ok(features_from_matrix(&avg, ng))
}

/// Features from an already-averaged probability matrix (sums to 1).
pub fn features_from_matrix(p: &[f64], ng: usize) -> Vec<f64> {
    let level = |idx: usize| (idx + 1) as f64;
    let mut contrast = 0.0;
    let mut dissimilarity = 0.0;
    let mut joint_energy = 0.0;
    let mut joint_entropy = 0.0;
    let mut homogeneity = 0.0;
    let mut joint_maximum = 0.0f64;
    let mut autocorrelation = 0.0;
    let mut sum_average = 0.0;
    let mut mu_x = 0.0;
    let mut diff = vec![0.0f64; ng];
    for i in 0..ng {
        for j in 0..ng {
            let v = p[i * ng + j];
            if v == 0.0 {
                continue;
            }
            let (iv, jv) = (level(i), level(j));
            let d = iv - jv;
            contrast += v * d * d;
            dissimilarity += v * d.abs();
            joint_energy += v * v;
            joint_entropy -= v * v.log2();
            homogeneity += v / (1.0 + d * d);
            joint_maximum = joint_maximum.max(v);
            autocorrelation += v * iv * jv;
            sum_average += v * (iv + jv);
            mu_x += v * iv;
            diff[d.abs() as usize] += v;
        }
    }
    // Symmetric matrix: marginals coincide, so mu_y = mu_x, sigma_y = sigma_x.
    let mut sigma2 = 0.0;
    for i in 0..ng {
        let mut row = 0.0;
        for j in 0..ng {
            row += p[i * ng + j];
        }
        sigma2 += row * (level(i) - mu_x).powi(2);
    }
    let correlation = if sigma2 > 0.0 {
        (autocorrelation - mu_x * mu_x) / sigma2
    } else {
        1.0
    };
    let mut cluster_shade = 0.0;
    let mut cluster_prominence = 0.0;
    for i in 0..ng {
        for j in 0..ng {
            let v = p[i * ng + j];
            if v == 0.0 {
                continue;
            }
            let c = level(i) + level(j) - 2.0 * mu_x;
            cluster_shade += v * c.powi(3);
            cluster_prominence += v * c.powi(4);
        }
    }
    let difference_entropy = -diff
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.log2())
        .sum::<f64>();

    vec![
        contrast,
        dissimilarity,
        joint_energy,
        joint_entropy,
        homogeneity,
        correlation,
        cluster_shade,
        cluster_prominence,
        joint_maximum,
        autocorrelation,
        sum_average,
        difference_entropy,
    ]
}
