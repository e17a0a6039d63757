//! Formation and estimation metrics.

use nalgebra::DVector;
use serde::Serialize;

/// `E = (1/|ℰ|) Σ_(i,j)∈ℰ | ‖p_i − p_j‖ − l_des |`; `None` for an empty edge set.
pub fn formation_error(positions: &[DVector<f64>], edges: &[(usize, usize)], l_des: f64) -> Option<f64> {
    if edges.is_empty() {
        return None;
    }
    let total: f64 = edges
        .iter()
        .map(|&(i, j)| ((&positions[i] - &positions[j]).norm() - l_des).abs())
        .sum();
    Some(total / edges.len() as f64)
}

/// Running sums for a pooled mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    /// Second moment about zero, `Σv²/n`.
    pub fn mean_square(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_sq / self.count as f64)
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        Some(((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0))
    }
}

/// Mean of the finite entries, `None` if there are none.
pub fn nan_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut m = Moments::default();
    for v in values.into_iter().filter(|v| v.is_finite()) {
        m.push(v);
    }
    m.mean()
}
