//! First-order intensity statistics over a masked region.

use super::discretize::LevelMap;
use super::RadiomicsError;

pub const FIRSTORDER_NAMES: [&str; 18] = [
    "mean",
    "median",
    "minimum",
    "maximum",
    "range",
    "variance",
    "skewness",
    "kurtosis",
    "energy",
    "total_energy",
    "rms",
    "mad",
    "rmad",
    "p10",
    "p90",
    "iqr",
    "entropy",
    "uniformity",
];

/// Percentile with linear interpolation between closest ranks.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let f = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * f
}

/// The 18 first-order features, in [`FIRSTORDER_NAMES`] order.
///
/// `values` are the in-mask intensities, `levels` their discretized gray
/// levels (for entropy and uniformity), `voxel_volume` the physical volume
/// of one voxel in mm^3. Moment-based features use population normalization;
/// skewness and kurtosis of a constant region are defined as 0.
pub fn first_order_features(
    values: &[f64],
    levels: &LevelMap,
    voxel_volume: f64,
) -> Result<Vec<f64>, RadiomicsError> {
    if values.is_empty() {
        return Err(RadiomicsError::EmptyMask);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    let mut energy = 0.0;
    let mut mad = 0.0;
    for &v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        energy += v * v;
        mad += d.abs();
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let minimum = sorted[0];
    let maximum = sorted[sorted.len() - 1];
    let median = percentile(&sorted, 0.5);
    let p10 = percentile(&sorted, 0.10);
    let p90 = percentile(&sorted, 0.90);
    let iqr = percentile(&sorted, 0.75) - percentile(&sorted, 0.25);

    // Robust MAD: absolute deviation within the 10th..90th percentile band.
    let band: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&v| v >= p10 && v <= p90)
        .collect();
    let rmad = if band.is_empty() {
        0.0
    } else {
        let bm = band.iter().sum::<f64>() / band.len() as f64;
        band.iter().map(|v| (v - bm).abs()).sum::<f64>() / band.len() as f64
    };

    let probs = levels.probabilities();
    let entropy = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>();
    let uniformity = probs.iter().map(|&p| p * p).sum::<f64>();

    Ok(vec![
        mean,
        median,
        minimum,
        maximum,
        maximum - minimum,
        m2,
        skewness,
        kurtosis,
        energy,
        voxel_volume * energy,
        (energy / n).sqrt(),
        mad,
        rmad,
        p10,
        p90,
        iqr,
        entropy,
        uniformity,
    ])
}
