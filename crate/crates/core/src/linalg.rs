//! Dense f32 matrices and vectors with explicit storage layout.
//!
//! Every reduction here runs in a fixed order so that repeated calls, and
//! calls under different thread counts, produce bit-identical results.

use std::ops::{Deref, DerefMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CatsError, Result};

/// Work (in multiply-adds) below which operations stay on the calling thread.
const PAR_MIN_WORK: usize = 1 << 20;
/// Output elements handled by one parallel task.
const PAR_TILE: usize = 1024;
/// Elements produced by one independently seeded RNG stream.
const RNG_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    RowMajor,
    ColumnMajor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    layout: Layout,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, layout: Layout, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CatsError::shape(
                "Matrix::new",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            layout,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, layout: Layout) -> Self {
        Self {
            rows,
            cols,
            layout,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize, layout: Layout) -> Self {
        let mut m = Self::zeros(n, n, layout);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from logical rows, stored in `layout`.
    pub fn from_rows(rows: &[Vec<f32>], layout: Layout) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(CatsError::shape("Matrix::from_rows", c, bad.len()));
        }
        let mut m = Self::zeros(r, c, layout);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let idx = m.offset(i, j);
                m.data[idx] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        match self.layout {
            Layout::RowMajor => i * self.cols + j,
            Layout::ColumnMajor => j * self.rows + i,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[self.offset(i, j)]
    }

    /// Contiguous row `i`. Panics unless the matrix is row-major.
    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        assert_eq!(self.layout, Layout::RowMajor, "row() needs row-major storage");
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Contiguous column `j`. Panics unless the matrix is column-major.
    #[inline]
    pub fn col(&self, j: usize) -> &[f32] {
        assert_eq!(self.layout, Layout::ColumnMajor, "col() needs column-major storage");
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Same logical matrix stored in `layout`.
    pub fn to_layout(&self, layout: Layout) -> Matrix {
        if layout == self.layout {
            return self.clone();
        }
        let mut out = Matrix::zeros(self.rows, self.cols, layout);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let dst = out.offset(i, j);
                out.data[dst] = self.get(i, j);
            }
        }
        out
    }

    /// Keeps the first `cols` columns.
    pub fn truncate_cols(&self, cols: usize) -> Matrix {
        let cols = cols.min(self.cols);
        let data = match self.layout {
            Layout::ColumnMajor => self.data[..cols * self.rows].to_vec(),
            Layout::RowMajor => (0..self.rows)
                .flat_map(|i| self.row(i)[..cols].iter().copied())
                .collect(),
        };
        Matrix {
            rows: self.rows,
            cols,
            layout: self.layout,
            data,
        }
    }

    /// Keeps the first `rows` rows.
    pub fn truncate_rows(&self, rows: usize) -> Matrix {
        let rows = rows.min(self.rows);
        let data = match self.layout {
            Layout::RowMajor => self.data[..rows * self.cols].to_vec(),
            Layout::ColumnMajor => (0..self.cols)
                .flat_map(|j| self.col(j)[..rows].iter().copied())
                .collect(),
        };
        Matrix {
            rows,
            cols: self.cols,
            layout: self.layout,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

impl From<Vec<f32>> for Vector {
    fn from(v: Vec<f32>) -> Self {
        Vector(v)
    }
}

impl From<&[f32]> for Vector {
    fn from(v: &[f32]) -> Self {
        Vector(v.to_vec())
    }
}

impl FromIterator<f32> for Vector {
    fn from_iter<I: IntoIterator<Item = f32>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

impl Deref for Vector {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f32] {
        &mut self.0
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed tree
/// and followed by the tail in ascending order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ta.iter().zip(tb) {
        sum += x * y;
    }
    sum
}

/// `out += alpha * x`, elementwise.
#[inline]
pub fn axpy(alpha: f32, x: &[f32], out: &mut [f32]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out[j] = Σ_i x[i]·W[i,j]`.
///
/// Row-major storage accumulates rows in ascending `i` into each output;
/// column-major storage takes one [`dot`] per column. Large products are split
/// across threads by output tiles, which leaves each element's summation order
/// unchanged.
pub fn gemv(x: &[f32], w: &Matrix) -> Result<Vector> {
    if x.len() != w.rows {
        return Err(CatsError::shape("gemv", w.rows, x.len()));
    }
    let mut out = vec![0.0f32; w.cols];
    let parallel = w.rows * w.cols >= PAR_MIN_WORK;
    match w.layout {
        Layout::RowMajor => {
            let tile = |t: usize, chunk: &mut [f32]| {
                let start = t * PAR_TILE;
                let end = start + chunk.len();
                for (i, &xi) in x.iter().enumerate() {
                    axpy(xi, &w.row(i)[start..end], chunk);
                }
            };
            if parallel {
                out.par_chunks_mut(PAR_TILE).enumerate().for_each(|(t, c)| tile(t, c));
            } else {
                for (i, &xi) in x.iter().enumerate() {
                    axpy(xi, w.row(i), &mut out);
                }
            }
        }
        Layout::ColumnMajor => {
            if parallel {
                out.par_iter_mut()
                    .with_min_len(PAR_TILE)
                    .enumerate()
                    .for_each(|(j, o)| *o = dot(x, w.col(j)));
            } else {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = dot(x, w.col(j));
                }
            }
        }
    }
    Ok(Vector(out))
}

pub fn elementwise_mul(a: &[f32], b: &[f32]) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(CatsError::shape("elementwise_mul", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Fills `buf` with N(0, scale²) samples. Chunk `c` of the buffer draws from
/// ChaCha stream `c` under `seed`, so the result does not depend on how many
/// threads generate it.
pub fn fill_gaussian(buf: &mut [f32], seed: u64, scale: f32) {
    let gen = |(c, chunk): (usize, &mut [f32])| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        for v in chunk.iter_mut() {
            let z: f32 = StandardNormal.sample(&mut rng);
            *v = z * scale;
        }
    };
    if buf.len() > RNG_CHUNK {
        buf.par_chunks_mut(RNG_CHUNK).enumerate().for_each(gen);
    } else {
        buf.chunks_mut(RNG_CHUNK).enumerate().for_each(gen);
    }
}

pub fn random_matrix(rows: usize, cols: usize, layout: Layout, seed: u64, scale: f32) -> Matrix {
    assert!(scale > 0.0, "scale must be positive");
    let mut data = vec![0.0f32; rows * cols];
    fill_gaussian(&mut data, seed, scale);
    Matrix {
        rows,
        cols,
        layout,
        data,
    }
}

pub fn random_vector(len: usize, seed: u64, scale: f32) -> Vector {
    let mut data = vec![0.0f32; len];
    fill_gaussian(&mut data, seed, scale);
    Vector(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gemv_identity() {
        for layout in [Layout::RowMajor, Layout::ColumnMajor] {
            let w = Matrix::identity(2, layout);
            assert_eq!(&*gemv(&[1.0, 2.0], &w).unwrap(), &[1.0, 2.0]);
        }
    }

    #[test]
    fn gemv_hand_computed() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], Layout::RowMajor).unwrap();
        assert_eq!(&*gemv(&[1.0, 1.0], &w).unwrap(), &[4.0, 6.0]);
        let w = w.to_layout(Layout::ColumnMajor);
        assert_eq!(&*gemv(&[1.0, 1.0], &w).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn gemv_zero_input() {
        let w = random_matrix(5, 7, Layout::RowMajor, 3, 1.0);
        assert!(gemv(&[0.0; 5], &w).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gemv_shape_error() {
        let w = Matrix::zeros(3, 2, Layout::RowMajor);
        assert!(matches!(gemv(&[1.0; 2], &w), Err(CatsError::Shape { .. })));
    }

    #[test]
    fn gemv_parallel_path_matches_serial_order() {
        // 1024 x 1100 crosses the parallel threshold; recompute serially.
        let w = random_matrix(1024, 1100, Layout::RowMajor, 11, 0.05);
        let x = random_vector(1024, 12, 1.0);
        let got = gemv(&x, &w).unwrap();
        let mut want = vec![0.0f32; 1100];
        for i in 0..1024 {
            axpy(x[i], w.row(i), &mut want);
        }
        assert_eq!(&*got, &want[..]);

        let wc = w.to_layout(Layout::ColumnMajor);
        let got = gemv(&x, &wc).unwrap();
        let want: Vec<f32> = (0..1100).map(|j| dot(&x, wc.col(j))).collect();
        assert_eq!(&*got, &want[..]);
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(&*elementwise_mul(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), &[3.0, 8.0]);
        assert_eq!(&*elementwise_mul(&[1.5, -2.0], &[1.0, 1.0]).unwrap(), &[1.5, -2.0]);
        assert!(elementwise_mul(&[1.5, -2.0], &[0.0, 0.0])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(elementwise_mul(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn random_matrix_is_deterministic_and_seed_sensitive() {
        let a = random_matrix(300, 500, Layout::RowMajor, 42, 0.02);
        let b = random_matrix(300, 500, Layout::RowMajor, 42, 0.02);
        let c = random_matrix(300, 500, Layout::RowMajor, 43, 0.02);
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn random_matrix_independent_of_thread_count() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| random_matrix(700, 400, Layout::ColumnMajor, 9, 1.0));
        let b = four.install(|| random_matrix(700, 400, Layout::ColumnMajor, 9, 1.0));
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn random_matrix_sample_std() {
        let m = random_matrix(1000, 1000, Layout::RowMajor, 5, 0.02);
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = m.as_slice().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((0.0195..=0.0205).contains(&std), "std = {std}");
        assert!(mean.abs() < 1e-4);
    }

    #[test]
    fn truncation_keeps_leading_channels() {
        let w = random_matrix(4, 6, Layout::ColumnMajor, 1, 1.0);
        let t = w.truncate_cols(3);
        let r = w.to_layout(Layout::RowMajor).truncate_cols(3);
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(t.get(i, j), w.get(i, j));
                assert_eq!(r.get(i, j), w.get(i, j));
            }
        }
        let d = w.to_layout(Layout::RowMajor).truncate_rows(2);
        assert_eq!((d.rows(), d.cols()), (2, 6));
        assert_eq!(d.get(1, 5), w.get(1, 5));
    }

    fn small_case() -> impl Strategy<Value = (usize, usize, u64)> {
        (1usize..40, 1usize..40, any::<u64>())
    }

    proptest! {
        #[test]
        fn gemv_is_linear((d, m, seed) in small_case(), alpha in -3.0f32..3.0, beta in -3.0f32..3.0) {
            let w = random_matrix(d, m, Layout::RowMajor, seed, 1.0);
            let x = random_vector(d, seed ^ 1, 1.0);
            let y = random_vector(d, seed ^ 2, 1.0);
            let combo: Vec<f32> = x.iter().zip(y.iter()).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = gemv(&combo, &w).unwrap();
            let gx = gemv(&x, &w).unwrap();
            let gy = gemv(&y, &w).unwrap();
            for j in 0..m {
                let rhs = alpha * gx[j] + beta * gy[j];
                // Scale by the magnitude of the summed terms; cancellation makes
                // plain relative error meaningless near zero.
                let mag: f32 = (0..d)
                    .map(|i| (alpha * x[i]).abs() * w.get(i, j).abs() + (beta * y[i]).abs() * w.get(i, j).abs())
                    .sum();
                prop_assert!((lhs[j] - rhs).abs() <= 1e-5 * mag.max(1e-30) + 1e-30,
                    "j={j} lhs={} rhs={rhs}", lhs[j]);
            }
        }

        #[test]
        fn gemv_layout_independent((d, m, seed) in small_case()) {
            let w = random_matrix(d, m, Layout::RowMajor, seed, 1.0);
            let wc = w.to_layout(Layout::ColumnMajor);
            let x = random_vector(d, seed ^ 7, 1.0);
            let a = gemv(&x, &w).unwrap();
            let b = gemv(&x, &wc).unwrap();
            for j in 0..m {
                let mag: f32 = (0..d).map(|i| (x[i] * w.get(i, j)).abs()).sum();
                prop_assert!((a[j] - b[j]).abs() <= 1e-6 * mag, "j={j} {} vs {}", a[j], b[j]);
            }
        }

        #[test]
        fn gemv_bit_reproducible((d, m, seed) in small_case()) {
            let w = random_matrix(d, m, Layout::ColumnMajor, seed, 1.0);
            let x = random_vector(d, seed ^ 3, 1.0);
            prop_assert_eq!(gemv(&x, &w).unwrap(), gemv(&x, &w).unwrap());
        }

        #[test]
        fn bounded_inputs_stay_finite((d, m, seed) in small_case()) {
            let w = random_matrix(d, m, Layout::RowMajor, seed, 1e3);
            let x: Vec<f32> = random_vector(d, seed ^ 5, 1e3).iter().map(|v| v.clamp(-1e4, 1e4)).collect();
            prop_assert!(gemv(&x, &w).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}
