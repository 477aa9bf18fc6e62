//! Tail-probability estimators: crude Monte Carlo, forced-jump importance
//! sampling, exponentially tilted lattice convolution, and the Prokhorov
//! bound.

use serde::{Deserialize, Serialize};

use crate::parallel::MeanAccumulator;

mod lattice;
mod mc;
mod prokhorov;

pub use lattice::{
    auto_tilt, convolution_pmf, lattice_convolution_tail, lattice_convolution_tail_restricted,
    small_sum_tail_exact, ConvolutionTail, LatticeDistribution, SmallSumTail, TailMode,
};
pub use mc::{crude_mc_tail, crude_mc_tail_with, forced_jump_is, forced_jump_is_with};
pub use prokhorov::prokhorov_bound;

/// Point estimate of a probabilistic quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub method: String,
    pub seed: Option<u64>,
    pub bias_note: Option<String>,
    /// Bound on `|E[value] - target|`; zero for unbiased estimators.
    pub bias_bound: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Estimate {
    pub fn exact(value: f64, method: &str) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            n_samples: 0,
            method: method.to_string(),
            seed: None,
            bias_note: None,
            bias_bound: 0.0,
            warnings: Vec::new(),
        }
    }

    pub fn from_accumulator(acc: &MeanAccumulator, method: &str, seed: u64) -> Self {
        Estimate {
            value: acc.mean(),
            stderr: acc.stderr(),
            n_samples: acc.count,
            method: method.to_string(),
            seed: Some(seed),
            bias_note: None,
            bias_bound: 0.0,
            warnings: Vec::new(),
        }
    }

    pub fn relative_stderr(&self) -> f64 {
        if self.value == 0.0 {
            f64::INFINITY
        } else {
            self.stderr / self.value.abs()
        }
    }

    /// Whether `|value - target|` is within `z` standard errors plus the
    /// bias bound.
    pub fn agrees_with(&self, target: f64, z: f64) -> bool {
        (self.value - target).abs() <= z * self.stderr + self.bias_bound
    }
}
