//! Combination of dependent p-values by moment matching `-2 sum ln p` to a
//! scaled chi-square.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::chi_square_sf;

pub const P_FLOOR: f64 = 1e-12;

/// Pearson correlation between feature vectors, treating paired entries as
/// observations. Vectors with zero variance correlate 0 with everything else.
pub fn estimate_query_correlation(features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Config("correlation needs at least one query".into()));
    }
    let len = features[0].len();
    if len < 2 || features.iter().any(|f| f.len() != len) {
        return Err(Error::Dimension {
            expected: len,
            actual: features.iter().map(Vec::len).find(|&l| l != len).unwrap_or(len),
        });
    }
    let centered: Vec<(Vec<f64>, f64)> = features
        .iter()
        .map(|f| {
            let mean = f.iter().sum::<f64>() / len as f64;
            let c: Vec<f64> = f.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let mut corr = vec![vec![0.0; n]; n];
    for i in 0..n {
        corr[i][i] = 1.0;
        for j in (i + 1)..n {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            let r = if *na > 0.0 && *nb > 0.0 {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (dot / (na * nb)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            corr[i][j] = r;
            corr[j][i] = r;
        }
    }
    Ok(corr)
}

/// Covariance of `-2 ln p_i` and `-2 ln p_j` for correlation `rho` between the
/// underlying normal scores.
pub fn kost_covariance(rho: f64) -> f64 {
    3.263 * rho + 0.710 * rho * rho + 0.027 * rho * rho * rho
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedResult {
    pub p_values: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    /// `-2 sum ln p` over floored p-values.
    pub statistic: f64,
    pub scale: f64,
    pub dof: f64,
    pub p_value: f64,
    /// Some p-value was below the floor.
    pub floored: bool,
    /// Estimated variance was not positive; independence was assumed.
    pub independence_fallback: bool,
}

fn check_p(p_values: &[f64]) -> Result<bool> {
    if p_values.is_empty() {
        return Err(Error::Config("no p-values to combine".into()));
    }
    let mut floored = false;
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("p-value {p} outside [0, 1]")));
        }
        floored |= p < P_FLOOR;
    }
    Ok(floored)
}

fn fisher_statistic(p_values: &[f64]) -> f64 {
    -2.0 * p_values.iter().map(|p| p.max(P_FLOOR).ln()).sum::<f64>()
}

/// Fisher's method for independent p-values.
pub fn fisher_combine(p_values: &[f64]) -> Result<f64> {
    check_p(p_values)?;
    if p_values.len() == 1 {
        return Ok(p_values[0].max(P_FLOOR));
    }
    Ok(chi_square_sf(2.0 * p_values.len() as f64, fisher_statistic(p_values)))
}

pub fn kost_combine(p_values: &[f64], correlation: &[Vec<f64>]) -> Result<CombinedResult> {
    let floored = check_p(p_values)?;
    let n = p_values.len();
    if correlation.len() != n || correlation.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            actual: correlation.len(),
        });
    }
    let statistic = fisher_statistic(p_values);
    let mean = 2.0 * n as f64;
    let mut cross = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            cross += kost_covariance(correlation[i][j]);
        }
    }
    let mut variance = 4.0 * n as f64 + 2.0 * cross;
    let independence_fallback = !(variance > 0.0);
    if independence_fallback {
        variance = 4.0 * n as f64;
    }
    let scale = variance / (2.0 * mean);
    let dof = 2.0 * mean * mean / variance;
    let p_value = if n == 1 {
        p_values[0].max(P_FLOOR)
    } else {
        chi_square_sf(dof, statistic / scale)
    };
    Ok(CombinedResult {
        p_values: p_values.to_vec(),
        correlation: correlation.to_vec(),
        statistic,
        scale,
        dof,
        p_value: p_value.clamp(0.0, 1.0),
        floored,
        independence_fallback,
    })
}
