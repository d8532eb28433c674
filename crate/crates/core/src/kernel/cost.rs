use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Work done by one Gated-MLP forward: multiply-adds, weight bytes read and
/// the number of hidden channels that took part.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCount {
    pub mul_adds: u64,
    pub bytes_loaded: u64,
    pub channels_active: u64,
}

impl AddAssign for CostCount {
    fn add_assign(&mut self, rhs: Self) {
        self.mul_adds += rhs.mul_adds;
        self.bytes_loaded += rhs.bytes_loaded;
        self.channels_active += rhs.channels_active;
    }
}

const F32_BYTES: u64 = 4;

/// Active channel count for a given sparsity: `round(m·(1−sparsity))`.
pub fn active_channels(m: usize, sparsity: f64) -> usize {
    ((m as f64) * (1.0 - sparsity)).round().clamp(0.0, m as f64) as usize
}

/// Analytic cost of the thresholded path at `sparsity`; sparsity 0 is the
/// dense block.
///
/// Gate: d·m. Up: d per active channel. Fused scale: 1 per active channel.
/// Down: d per active channel. Only weight bytes are counted.
pub fn cost_model(d: usize, m: usize, sparsity: f64) -> CostCount {
    assert!(
        (0.0..=1.0).contains(&sparsity),
        "sparsity must lie in [0, 1], got {sparsity}"
    );
    let a = active_channels(m, sparsity) as u64;
    let (d, m) = (d as u64, m as u64);
    CostCount {
        mul_adds: d * m + d * a + a + a * d,
        bytes_loaded: F32_BYTES * (d * m + 2 * d * a),
        channels_active: a,
    }
}

/// Cost of gating `m` channels from width `d`.
pub(crate) fn gate_cost(d: usize, m: usize) -> CostCount {
    CostCount {
        mul_adds: (d * m) as u64,
        bytes_loaded: F32_BYTES * (d * m) as u64,
        channels_active: 0,
    }
}
