//! Small statistical helpers shared by the attacks and the evaluation harness.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Upper tail `P(X > x)` of a chi-square variable with `dof` degrees of freedom.
pub fn chi_square_sf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof)
        .map(|d| d.sf(x))
        .unwrap_or(f64::NAN)
        .clamp(0.0, 1.0)
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of
/// `samples` and Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            let above = (i as f64 + 1.0) / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Area under the ROC curve for scores where `positives` should rank higher
/// than `negatives` (Mann-Whitney U / (n_pos * n_neg); ties count one half).
pub fn auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

/// Mean and sample standard deviation; `(NaN, NaN)` for an empty slice.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Equal-width histogram over `[lo, hi]`, normalized to a density (bars
/// integrate to 1). Values outside the range land in the edge bins.
pub fn density_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    if values.is_empty() || bins == 0 || hi <= lo {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let norm = values.len() as f64 * width;
    counts.iter_mut().for_each(|c| *c /= norm);
    counts
}
