use crate::error::{CatsError, Result};
use crate::linalg::{random_matrix, Layout, Matrix};
use crate::seed::derive_seed;

/// Weights of one Gated-MLP block.
///
/// `w_up` is column-major and `w_down` row-major so that the up column and
/// down row of one hidden channel are each a contiguous run of `d` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedMlpWeights {
    d: usize,
    m: usize,
    w_gate: Matrix,
    w_up: Matrix,
    w_down: Matrix,
}

impl GatedMlpWeights {
    pub fn new(w_gate: Matrix, w_up: Matrix, w_down: Matrix) -> Result<Self> {
        let (d, m) = (w_gate.rows(), w_gate.cols());
        let check = |name: &'static str, w: &Matrix, rows: usize, cols: usize, layout: Layout| {
            if w.rows() != rows || w.cols() != cols {
                return Err(CatsError::shape(
                    name,
                    format!("{rows}x{cols}"),
                    format!("{}x{}", w.rows(), w.cols()),
                ));
            }
            if w.layout() != layout {
                return Err(CatsError::InvalidConfig(format!(
                    "{name} must be stored {layout:?}, found {:?}",
                    w.layout()
                )));
            }
            Ok(())
        };
        check("W_gate", &w_gate, d, m, Layout::RowMajor)?;
        check("W_up", &w_up, d, m, Layout::ColumnMajor)?;
        check("W_down", &w_down, m, d, Layout::RowMajor)?;
        Ok(Self {
            d,
            m,
            w_gate,
            w_up,
            w_down,
        })
    }

    /// Gaussian weights with standard deviation `scale`, each matrix drawn
    /// from its own stream derived from `seed`.
    pub fn random(d: usize, m: usize, seed: u64, scale: f32) -> Self {
        Self {
            d,
            m,
            w_gate: random_matrix(d, m, Layout::RowMajor, derive_seed(seed, 0), scale),
            w_up: random_matrix(d, m, Layout::ColumnMajor, derive_seed(seed, 1), scale),
            w_down: random_matrix(m, d, Layout::RowMajor, derive_seed(seed, 2), scale),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn w_gate(&self) -> &Matrix {
        &self.w_gate
    }

    pub fn w_up(&self) -> &Matrix {
        &self.w_up
    }

    pub fn w_down(&self) -> &Matrix {
        &self.w_down
    }

    pub fn into_parts(self) -> (Matrix, Matrix, Matrix) {
        (self.w_gate, self.w_up, self.w_down)
    }

    /// The block restricted to its first `width` hidden channels.
    pub fn truncated(&self, width: usize) -> Result<Self> {
        if width == 0 || width > self.m {
            return Err(CatsError::InvalidConfig(format!(
                "truncated width {width} outside 1..={}",
                self.m
            )));
        }
        Self::new(
            self.w_gate.truncate_cols(width),
            self.w_up.truncate_cols(width),
            self.w_down.truncate_rows(width),
        )
    }

    pub fn weight_bytes(&self) -> u64 {
        4 * 3 * (self.d * self.m) as u64
    }
}

/// Hidden width of the dense block standing in for the best achievable
/// latency at sparsity `k`: `max(1, round(m·(1−k)))`.
pub fn optimal_width(m: usize, k: f64) -> usize {
    (((m as f64) * (1.0 - k)).round() as usize).clamp(1, m.max(1))
}
