//! Smoothed empirical CDF of reference-model losses.
//!
//! Knot `j` of `k` sorted losses sits at plotting position `j / (k + 1)`;
//! tied losses share one knot at their averaged position. Between knots the
//! CDF is a monotone piecewise-cubic Hermite interpolant with harmonic-mean
//! slopes. Below the smallest loss it decays linearly to 0 at loss 0; above
//! the largest it rises linearly to 1 over one knot range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdfModel {
    /// Distinct sorted losses.
    pub knots: Vec<f64>,
    /// CDF value at each knot.
    pub values: Vec<f64>,
    /// Hermite slope at each knot.
    pub slopes: Vec<f64>,
    /// Number of samples the CDF was fitted on.
    pub sample_size: usize,
    /// Fewer than two distinct losses: the CDF is a unit step at the single value.
    pub degenerate: bool,
}

impl CdfModel {
    pub fn fit(losses: &[f64]) -> Result<CdfModel> {
        let k = losses.len();
        if k < 2 {
            return Err(Error::Config(format!("a loss CDF needs at least 2 samples (got {k})")));
        }
        if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config("losses must be finite and non-negative".into()));
        }
        let mut sorted = losses.to_vec();
        sorted.sort_by(f64::total_cmp);

        let denom = (k + 1) as f64;
        let mut knots = Vec::new();
        let mut values = Vec::new();
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j + 1 < k && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            // ranks i+1 ..= j+1 averaged
            let mean_rank = (i + j + 2) as f64 / 2.0;
            knots.push(sorted[i]);
            values.push(mean_rank / denom);
            i = j + 1;
        }
        let degenerate = knots.len() < 2;
        let slopes = if degenerate { vec![0.0] } else { pchip_slopes(&knots, &values) };
        Ok(CdfModel {
            knots,
            values,
            slopes,
            sample_size: k,
            degenerate,
        })
    }

    /// `F(loss)`, the left-tail p-value of `loss`.
    pub fn evaluate(&self, loss: f64) -> f64 {
        let x0 = self.knots[0];
        if self.degenerate {
            return if loss < x0 { 0.0 } else { 1.0 };
        }
        let n = self.knots.len();
        let (f0, fn_) = (self.values[0], self.values[n - 1]);
        let xn = self.knots[n - 1];
        if loss <= x0 {
            if x0 <= 0.0 {
                return f0;
            }
            return f0 * (loss.max(0.0) / x0);
        }
        if loss >= xn {
            let range = xn - x0;
            return (fn_ + (1.0 - fn_) * (loss - xn) / range).min(1.0);
        }
        let seg = self.knots.partition_point(|&x| x <= loss) - 1;
        let (xa, xb) = (self.knots[seg], self.knots[seg + 1]);
        let h = xb - xa;
        let t = (loss - xa) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let f = h00 * self.values[seg]
            + h10 * h * self.slopes[seg]
            + h01 * self.values[seg + 1]
            + h11 * h * self.slopes[seg + 1];
        f.clamp(self.values[seg], self.values[seg + 1])
    }
}

/// Shape-preserving Hermite slopes: weighted harmonic mean of neighboring
/// secants at interior knots, and the one-sided three-point estimate with
/// sign and magnitude limiting at the ends.
pub fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (a, b) = (delta[i - 1], delta[i]);
        if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}
