//! Dense and thresholded Gated-MLP forward passes for a single token.
//!
//! All paths share one arithmetic recipe so they can be compared exactly:
//! the gate and down projections accumulate rows in ascending order, and each
//! up-projection channel is one [`dot`] over its contiguous column. The
//! sparse paths skip masked-out channels entirely, which leaves every
//! surviving floating-point operation identical to the dense reference.

use rayon::prelude::*;

use super::cost::{gate_cost, CostCount};
use super::{GatedMlpWeights, Mask};
use crate::activation::{cats_apply, mask_from, ActivationKind, Threshold};
use crate::error::{CatsError, Result};
use crate::linalg::{axpy, dot, elementwise_mul, gemv, Vector};

/// Multiply-adds per call below which the kernels stay single-threaded.
const PAR_MIN_WORK: usize = 1 << 20;
/// Output columns per task in the parallel down projection.
const DOWN_TILE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelOptions {
    /// Hidden channels per tile of the fused up pass. Affects speed only.
    pub tile: usize,
    pub activation: ActivationKind,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            tile: 64,
            activation: ActivationKind::Silu,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOutput {
    pub y: Vector,
    pub mask: Mask,
    pub cost: CostCount,
}

fn check_input(x: &[f32], w: &GatedMlpWeights) -> Result<()> {
    if x.len() != w.d() {
        return Err(CatsError::shape("gated mlp input", w.d(), x.len()));
    }
    Ok(())
}

pub fn dense_mlp_forward(x: &[f32], w: &GatedMlpWeights) -> Result<Vector> {
    dense_mlp_forward_with(x, w, ActivationKind::Silu).map(|(y, _)| y)
}

/// Dense forward that also reports the work it performed.
pub fn dense_mlp_forward_with(
    x: &[f32],
    w: &GatedMlpWeights,
    activation: ActivationKind,
) -> Result<(Vector, CostCount)> {
    check_input(x, w)?;
    let mut cost = CostCount::default();
    let gate = counted_gemv(x, w.w_gate(), &mut cost)?;
    let v = activation.apply(&gate);
    let up = counted_gemv(x, w.w_up(), &mut cost)?;
    let h = elementwise_mul(&v, &up)?;
    cost.mul_adds += h.len() as u64;
    let y = counted_gemv(&h, w.w_down(), &mut cost)?;
    cost.channels_active = w.m() as u64;
    Ok((y, cost))
}

fn counted_gemv(x: &[f32], m: &crate::linalg::Matrix, cost: &mut CostCount) -> Result<Vector> {
    let out = gemv(x, m)?;
    let n = (m.rows() * m.cols()) as u64;
    cost.mul_adds += n;
    cost.bytes_loaded += 4 * n;
    Ok(out)
}

/// Dense computation with the thresholded activation in place of SiLU.
/// Nothing is skipped; this is the oracle for the sparse kernels.
pub fn cats_mlp_reference(x: &[f32], w: &GatedMlpWeights, t: &Threshold) -> Result<Vector> {
    cats_mlp_reference_with(x, w, t, ActivationKind::Silu)
}

pub fn cats_mlp_reference_with(
    x: &[f32],
    w: &GatedMlpWeights,
    t: &Threshold,
    activation: ActivationKind,
) -> Result<Vector> {
    check_input(x, w)?;
    let gate = gemv(x, w.w_gate())?;
    let v = cats_apply(&activation.apply(&gate), t);
    let up = gemv(x, w.w_up())?;
    let h = elementwise_mul(&v, &up)?;
    gemv(&h, w.w_down())
}

/// Gate projection, activation and mask: the part both sparse variants share.
fn gate_and_mask(
    x: &[f32],
    w: &GatedMlpWeights,
    t: &Threshold,
    activation: ActivationKind,
) -> Result<(Vector, Mask, CostCount)> {
    check_input(x, w)?;
    let gate = gemv(x, w.w_gate())?;
    let v = activation.apply(&gate);
    let mask = mask_from(&v, t);
    Ok((v, mask, gate_cost(w.d(), w.m())))
}

#[inline]
fn up_cost(d: usize) -> CostCount {
    CostCount {
        mul_adds: d as u64 + 1,
        bytes_loaded: 4 * d as u64,
        channels_active: 1,
    }
}

#[inline]
fn down_cost(d: usize) -> CostCount {
    CostCount {
        mul_adds: d as u64,
        bytes_loaded: 4 * d as u64,
        channels_active: 0,
    }
}

pub fn cats_mlp_masked(x: &[f32], w: &GatedMlpWeights, t: &Threshold) -> Result<SparseOutput> {
    cats_mlp_masked_with(x, w, t, KernelOptions::default())
}

/// Mask-driven sparse forward: the mask decides, channel by channel, which
/// up columns and down rows are read. The activation scale is folded into
/// the up pass so each surviving channel produces its final hidden value in
/// one step.
pub fn cats_mlp_masked_with(
    x: &[f32],
    w: &GatedMlpWeights,
    t: &Threshold,
    opts: KernelOptions,
) -> Result<SparseOutput> {
    let (v, mask, mut cost) = gate_and_mask(x, w, t, opts.activation)?;
    let (d, m) = (w.d(), w.m());
    let parallel = d * m >= PAR_MIN_WORK;
    let tile = opts.tile.max(1);

    let mut hidden = vec![0.0f32; m];
    let up_tile = |(ti, chunk): (usize, &mut [f32])| -> CostCount {
        let mut c = CostCount::default();
        let base = ti * tile;
        for (k, h) in chunk.iter_mut().enumerate() {
            let j = base + k;
            if mask.is_set(j) {
                *h = dot(x, w.w_up().col(j)) * v[j];
                c += up_cost(d);
            }
        }
        c
    };
    let up = if parallel {
        hidden
            .par_chunks_mut(tile)
            .enumerate()
            .map(up_tile)
            .reduce(CostCount::default, |mut a, b| {
                a += b;
                a
            })
    } else {
        hidden
            .chunks_mut(tile)
            .enumerate()
            .map(up_tile)
            .fold(CostCount::default(), |mut a, b| {
                a += b;
                a
            })
    };
    cost += up;

    let hidden = &hidden;
    let mask_ref = &mask;
    let active = (0..m).filter(move |&j| mask_ref.is_set(j)).map(move |j| (j, hidden[j]));
    let y = down_project(w, parallel, active);
    cost += CostCount {
        channels_active: 0,
        ..scale(down_cost(d), mask.popcount() as u64)
    };
    Ok(SparseOutput {
        y: Vector::from(y),
        mask,
        cost,
    })
}

fn scale(c: CostCount, n: u64) -> CostCount {
    CostCount {
        mul_adds: c.mul_adds * n,
        bytes_loaded: c.bytes_loaded * n,
        channels_active: c.channels_active * n,
    }
}

/// `y = Σ hidden · W_down[row,:]` over `(row, hidden)` pairs in the order
/// given. Parallel runs split `y` into column tiles and walk the whole pair
/// list for each tile, so every output element sees the same sequence of
/// additions as the serial loop.
fn down_project<I>(w: &GatedMlpWeights, parallel: bool, channels: I) -> Vec<f32>
where
    I: Iterator<Item = (usize, f32)> + Clone + Send + Sync,
{
    let mut y = vec![0.0f32; w.d()];
    if parallel {
        y.par_chunks_mut(DOWN_TILE).enumerate().for_each(|(ti, out)| {
            let start = ti * DOWN_TILE;
            let end = start + out.len();
            for (j, h) in channels.clone() {
                axpy(h, &w.w_down().row(j)[start..end], out);
            }
        });
    } else {
        for (j, h) in channels {
            axpy(h, w.w_down().row(j), &mut y);
        }
    }
    y
}

pub fn cats_mlp_compacted(x: &[f32], w: &GatedMlpWeights, t: &Threshold) -> Result<SparseOutput> {
    cats_mlp_compacted_with(x, w, t, KernelOptions::default())
}

/// Index-compaction variant: the mask is first squeezed into an ascending
/// list of active channels and all later loads go through that list.
pub fn cats_mlp_compacted_with(
    x: &[f32],
    w: &GatedMlpWeights,
    t: &Threshold,
    opts: KernelOptions,
) -> Result<SparseOutput> {
    let (v, mask, mut cost) = gate_and_mask(x, w, t, opts.activation)?;
    let (d, m) = (w.d(), w.m());
    let parallel = d * m >= PAR_MIN_WORK;
    let idcs = mask.indices();

    let fused = |&j: &usize| dot(x, w.w_up().col(j)) * v[j];
    let compact: Vec<f32> = if parallel {
        idcs.par_iter().with_min_len(opts.tile.max(1)).map(fused).collect()
    } else {
        idcs.iter().map(fused).collect()
    };
    cost += scale(up_cost(d), idcs.len() as u64);

    let pairs = idcs.iter().copied().zip(compact.iter().copied());
    let y = down_project(w, parallel, pairs);
    cost += scale(down_cost(d), idcs.len() as u64);
    Ok(SparseOutput {
        y: Vector::from(y),
        mask,
        cost,
    })
}

/// Dense forward of a block truncated to the active width. Timing only.
pub fn optimal_baseline_forward(x: &[f32], w_truncated: &GatedMlpWeights) -> Result<Vector> {
    dense_mlp_forward(x, w_truncated)
}
