//! Dense numerical primitives with exact analytic backward passes.
//!
//! Everything here is pure: the same inputs produce bit-identical outputs.
//! Parameters and activations are stored as 32-bit floats; reductions
//! accumulate in 64-bit where it is cheap to do so. The finite-difference
//! harness in [`finite_diff_grad`] is the independent oracle the analytic
//! backward passes are checked against.

pub mod rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rng::SeededRng;

// ---------------------------------------------------------------------------
// Tensor2D
// ---------------------------------------------------------------------------

/// A row-major dense matrix of f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(rows: usize, cols: usize, std: f32, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal_f32(std)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Append one row, growing the matrix to (rows+1) x cols.
    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::Dimension(format!(
                "row length {} does not match width {}",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {what}")))
        }
    }

    /// Elementwise in-place add.
    pub fn add_assign(&mut self, other: &Tensor2D) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "add {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f32) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix and vector products
// ---------------------------------------------------------------------------

/// c = a x b with 64-bit row accumulators.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    let mut acc = vec![0.0f64; b.cols];
    for i in 0..a.rows {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..a.cols {
            let aik = f64::from(a.data[i * a.cols + k]);
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (j, &bkj) in brow.iter().enumerate() {
                acc[j] += aik * f64::from(bkj);
            }
        }
        for (j, &v) in acc.iter().enumerate() {
            out.data[i * b.cols + j] = v as f32;
        }
    }
    Ok(out)
}

/// y = x . W for a row vector x, W of shape (len(x), out).
pub fn vec_mat(x: &[f32], w: &Tensor2D) -> Vec<f32> {
    debug_assert_eq!(x.len(), w.rows);
    let mut out = vec![0.0f32; w.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = w.row(i);
        for (o, &wio) in out.iter_mut().zip(row) {
            *o += xi * wio;
        }
    }
    out
}

/// dx = dy . W^T for a row vector dy, W of shape (in, len(dy)).
pub fn vec_mat_t(dy: &[f32], w: &Tensor2D) -> Vec<f32> {
    debug_assert_eq!(dy.len(), w.cols);
    let mut out = vec![0.0f32; w.rows];
    for (i, o) in out.iter_mut().enumerate() {
        let row = w.row(i);
        let mut acc = 0.0f32;
        for (&d, &wv) in dy.iter().zip(row) {
            acc += d * wv;
        }
        *o = acc;
    }
    out
}

/// dw += x^T (outer) dy, where dw has shape (len(x), len(dy)).
pub fn outer_acc(dw: &mut Tensor2D, x: &[f32], dy: &[f32]) {
    debug_assert_eq!(dw.rows, x.len());
    debug_assert_eq!(dw.cols, dy.len());
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = dw.row_mut(i);
        for (o, &d) in row.iter_mut().zip(dy) {
            *o += xi * d;
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax of one row (max subtraction).
pub fn softmax_row(x: &[f32]) -> Vec<f32> {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f32> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().map(|&v| f64::from(v)).sum();
    let inv = (1.0 / sum) as f32;
    for v in &mut out {
        *v *= inv;
    }
    out
}

/// Softmax probabilities of one row in f64 (for scoring paths).
pub fn softmax_row_f64(x: &[f32]) -> Vec<f64> {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out: Vec<f64> = x.iter().map(|&v| f64::from(v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Row-wise softmax over a matrix.
pub fn row_softmax(x: &Tensor2D) -> Tensor2D {
    let mut out = Tensor2D::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let s = softmax_row(x.row(r));
        out.row_mut(r).copy_from_slice(&s);
    }
    out
}

/// Backward pass of [`row_softmax`] given the forward output `y` and the
/// upstream gradient `dy`: dx = y * (dy - rowsum(dy * y)).
pub fn row_softmax_backward(y: &Tensor2D, dy: &Tensor2D) -> Result<Tensor2D> {
    if y.shape() != dy.shape() {
        return Err(Error::Dimension(format!(
            "softmax backward {}x{} vs {}x{}",
            y.rows, y.cols, dy.rows, dy.cols
        )));
    }
    let mut dx = Tensor2D::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let inner: f64 = yr
            .iter()
            .zip(dyr)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        for c in 0..y.cols {
            dx.data[r * y.cols + c] = yr[c] * (dyr[c] - inner as f32);
        }
    }
    Ok(dx)
}

/// Softmax backward for a single row slice, writing into `dx`.
pub fn softmax_backward_row(y: &[f32], dy: &[f32], dx: &mut [f32]) {
    let inner: f32 = dot(y, dy);
    for ((d, &yi), &dyi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (dyi - inner);
    }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Cached statistics from a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Vec<f32>,
    pub inv_std: f32,
}

/// y = gain * (x - mean) / sqrt(var + eps) + bias.
///
/// A constant row has zero centered part, so the output is exactly `bias`.
pub fn layer_norm_cached(x: &[f32], gain: &[f32], bias: &[f32]) -> Result<(Vec<f32>, LnCache)> {
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::Dimension(format!(
            "layer_norm x={} gain={} bias={}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    let n = x.len() as f64;
    let mean: f64 = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var: f64 = x
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv_std = (1.0 / (var + f64::from(LAYER_NORM_EPS)).sqrt()) as f32;
    let mean = mean as f32;
    let xhat: Vec<f32> = x.iter().map(|&v| (v - mean) * inv_std).collect();
    let y: Vec<f32> = xhat
        .iter()
        .zip(gain)
        .zip(bias)
        .map(|((&h, &g), &b)| g * h + b)
        .collect();
    Ok((y, LnCache { xhat, inv_std }))
}

pub fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32]) -> Result<Vec<f32>> {
    layer_norm_cached(x, gain, bias).map(|(y, _)| y)
}

/// Backward pass of layer norm. Returns dx and accumulates dgain/dbias.
pub fn layer_norm_backward(
    dy: &[f32],
    gain: &[f32],
    cache: &LnCache,
    dgain: &mut [f32],
    dbias: &mut [f32],
) -> Vec<f32> {
    let n = dy.len();
    let nf = n as f32;
    let mut dxhat = vec![0.0f32; n];
    for i in 0..n {
        dgain[i] += dy[i] * cache.xhat[i];
        dbias[i] += dy[i];
        dxhat[i] = dy[i] * gain[i];
    }
    let mean_dxhat: f32 = dxhat.iter().sum::<f32>() / nf;
    let mean_dxhat_xhat: f32 = dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(&a, &b)| a * b)
        .sum::<f32>()
        / nf;
    (0..n)
        .map(|i| cache.inv_std * (dxhat[i] - mean_dxhat - cache.xhat[i] * mean_dxhat_xhat))
        .collect()
}

// ---------------------------------------------------------------------------
// Cross entropy
// ---------------------------------------------------------------------------

/// loss = -log softmax(logits)[target]; dlogits = softmax(logits) - onehot.
pub fn cross_entropy(logits: &[f32], target: usize) -> Result<(f64, Vec<f32>)> {
    if target >= logits.len() {
        return Err(Error::Index(format!(
            "cross_entropy target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = softmax_row_f64(logits);
    let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
    let mut dlogits: Vec<f32> = probs.iter().map(|&p| p as f32).collect();
    dlogits[target] -= 1.0;
    Ok((loss, dlogits))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f32) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Increments `state.t`.
pub fn adam_step(
    param: &mut [f32],
    grad: &[f32],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() || param.len() != state.v.len() {
        return Err(Error::Dimension(format!(
            "adam_step param={} grad={} m={} v={}",
            param.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..param.len() {
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grad[i];
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        param[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient estimate of a scalar function of a tensor.
///
/// `f` should evaluate its result in f64 so the eps^2 truncation error
/// dominates; see the test harnesses for reference implementations.
pub fn finite_diff_grad<F>(f: F, x: &Tensor2D, eps: f32) -> Result<Tensor2D>
where
    F: Fn(&Tensor2D) -> Result<f64>,
{
    let mut grad = Tensor2D::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let fp = f(&probe)?;
        probe.data[i] = orig - eps;
        let fm = f(&probe)?;
        probe.data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_grad: non-finite f at coordinate {i}"
            )));
        }
        grad.data[i] = ((fp - fm) / (2.0 * f64::from(eps))) as f32;
    }
    Ok(grad)
}

/// True when |a - b| <= atol or relative error <= rtol.
pub fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    let diff = (a - b).abs();
    diff <= atol || diff <= rtol * a.abs().max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seeded_tensor(rows: usize, cols: usize, seed: u64) -> Tensor2D {
        let mut rng = SeededRng::new(seed);
        Tensor2D::randn(rows, cols, 1.0, &mut rng)
    }

    // triple-loop reference used as the matmul oracle
    fn matmul_reference(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
        let mut out = Tensor2D::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0f64;
                for k in 0..a.cols() {
                    s += f64::from(a.get(i, k)) * f64::from(b.get(k, j));
                }
                out.set(i, j, s as f32);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let m = Tensor2D::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = matmul(&Tensor2D::eye(2), &m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor2D::zeros(2, 3);
        let b = seeded_tensor(3, 4, 1);
        let out = matmul(&z, &b).unwrap();
        assert_eq!(out, Tensor2D::zeros(2, 4));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let a = seeded_tensor(5, 7, 42);
        let b = seeded_tensor(7, 3, 43);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_reference(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-5, "{g} vs {w}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor2D::zeros(2, 3);
        let b = Tensor2D::zeros(4, 2);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.contains("4x2"), "{err}");
    }

    #[test]
    fn softmax_uniform_row() {
        let out = softmax_row(&[0.0, 0.0, 0.0]);
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_survives_large_magnitudes() {
        let out = softmax_row(&[1000.0, 0.0]);
        assert!((out[0] - 1.0).abs() < 1e-6);
        assert!(out[1].abs() < 1e-6);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        // f(x) = sum(c * softmax(x)) per row, evaluated in f64
        let x = seeded_tensor(3, 4, 7);
        let c = seeded_tensor(3, 4, 8);
        let f = |t: &Tensor2D| -> Result<f64> {
            let mut total = 0.0f64;
            for r in 0..t.rows() {
                let p = softmax_row_f64(t.row(r));
                for (j, &pj) in p.iter().enumerate() {
                    total += f64::from(c.get(r, j)) * pj;
                }
            }
            Ok(total)
        };
        let fd = finite_diff_grad(f, &x, 1e-3).unwrap();
        let y = row_softmax(&x);
        let dx = row_softmax_backward(&y, &c).unwrap();
        for (a, n) in dx.data().iter().zip(fd.data()) {
            assert!(
                close(f64::from(*a), f64::from(*n), 1e-3, 1e-6),
                "{a} vs {n}"
            );
        }
    }

    #[test]
    fn layer_norm_constant_row_gives_bias() {
        let x = [5.0f32; 6];
        let gain = [1.0f32; 6];
        let bias = [0.25f32; 6];
        let y = layer_norm(&x, &gain, &bias).unwrap();
        for v in y {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_already_normalized_input() {
        let y = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-4);
        assert!((y[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_length_mismatch() {
        let err = layer_norm(&[1.0, 2.0], &[1.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    // f64 layer-norm reference for the gradient oracle
    fn layer_norm_f64(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + f64::from(LAYER_NORM_EPS)).sqrt();
        x.iter()
            .zip(gain)
            .zip(bias)
            .map(|((&v, &g), &b)| g * (v - mean) * inv + b)
            .collect()
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let n = 8;
        let mut rng = SeededRng::new(11);
        let x = Tensor2D::randn(1, n, 1.0, &mut rng);
        let gain: Vec<f32> = (0..n).map(|_| 1.0 + rng.normal_f32(0.2)).collect();
        let bias: Vec<f32> = (0..n).map(|_| rng.normal_f32(0.2)).collect();
        let c: Vec<f32> = (0..n).map(|_| rng.normal_f32(1.0)).collect();

        let f = |t: &Tensor2D| -> Result<f64> {
            let xs: Vec<f64> = t.row(0).iter().map(|&v| f64::from(v)).collect();
            let gs: Vec<f64> = gain.iter().map(|&v| f64::from(v)).collect();
            let bs: Vec<f64> = bias.iter().map(|&v| f64::from(v)).collect();
            let y = layer_norm_f64(&xs, &gs, &bs);
            Ok(y.iter()
                .zip(&c)
                .map(|(&yv, &cv)| yv * f64::from(cv))
                .sum::<f64>())
        };
        let fd = finite_diff_grad(f, &x, 1e-3).unwrap();

        let (_, cache) = layer_norm_cached(x.row(0), &gain, &bias).unwrap();
        let mut dgain = vec![0.0f32; n];
        let mut dbias = vec![0.0f32; n];
        let dx = layer_norm_backward(&c, &gain, &cache, &mut dgain, &mut dbias);
        for (a, nref) in dx.iter().zip(fd.data()) {
            assert!(
                close(f64::from(*a), f64::from(*nref), 1e-3, 1e-6),
                "{a} vs {nref}"
            );
        }
    }

    #[test]
    fn cross_entropy_uniform_is_log_v() {
        let v = 11;
        let logits = vec![0.7f32; v];
        let (loss, _) = cross_entropy(&logits, 3).unwrap();
        assert!((loss - (v as f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_confident_correct_is_zero() {
        let mut logits = vec![0.0f32; 5];
        logits[2] = 1e4;
        let (loss, _) = cross_entropy(&logits, 2).unwrap();
        assert!(loss.abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let err = cross_entropy(&[0.0, 0.0], 2).unwrap_err();
        assert!(matches!(err, Error::Index(_)));
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let x = seeded_tensor(1, 10, 5);
        let target = 4usize;
        let f = |t: &Tensor2D| -> Result<f64> {
            let p = softmax_row_f64(t.row(0));
            Ok(-p[target].ln())
        };
        let fd = finite_diff_grad(f, &x, 1e-3).unwrap();
        let (_, dlogits) = cross_entropy(x.row(0), target).unwrap();
        for (a, n) in dlogits.iter().zip(fd.data()) {
            assert!(
                close(f64::from(*a), f64::from(*n), 1e-3, 1e-6),
                "{a} vs {n}"
            );
        }
    }

    #[test]
    fn adam_zero_grad_leaves_param_unchanged() {
        let mut p = vec![1.0f32, -2.0, 3.0];
        let before = p.clone();
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0, 0.0, 0.0], &mut st, &AdamHyper::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // from m=v=0 the bias-corrected first step is lr * g/(|g| + eps') per element
        let hyper = AdamHyper::with_lr(0.01);
        let mut p = vec![0.5f32, -1.5, 2.0, 0.0];
        let g = [0.3f32, -0.7, 0.001, 0.9];
        let before = p.clone();
        let mut st = AdamState::new(4);
        adam_step(&mut p, &g, &mut st, &hyper).unwrap();
        for i in 0..p.len() {
            let expect = before[i]
                - hyper.lr * (g[i] / (1.0 - hyper.beta1))
                    / ((g[i] * g[i] / (1.0 - hyper.beta2)).sqrt() + hyper.eps);
            assert!(
                (p[i] - expect).abs() < 1e-7,
                "element {i}: {} vs {expect}",
                p[i]
            );
            // magnitude ~ lr, sign opposite to grad
            if g[i] != 0.0 {
                assert!((p[i] - before[i]).signum() == -g[i].signum());
                assert!(((p[i] - before[i]).abs() - hyper.lr).abs() < 1e-4);
            }
        }
    }

    // scalar reference Adam, two steps
    #[test]
    fn adam_matches_scalar_reference_over_two_steps() {
        let hyper = AdamHyper::default();
        let g = [0.25f32, -0.5];
        let mut p = vec![1.0f32, 1.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &g, &mut st, &hyper).unwrap();
        adam_step(&mut p, &g, &mut st, &hyper).unwrap();

        // reference: straightforward per-element loops
        let mut pr = [1.0f32, 1.0];
        let mut m = [0.0f32; 2];
        let mut v = [0.0f32; 2];
        for t in 1..=2 {
            for i in 0..2 {
                m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
                v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
                let mhat = m[i] / (1.0 - hyper.beta1.powi(t));
                let vhat = v[i] / (1.0 - hyper.beta2.powi(t));
                pr[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
            }
        }
        for i in 0..2 {
            assert!((p[i] - pr[i]).abs() < 1e-7);
        }
        assert_eq!(st.t, 2);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![0.0f32; 3];
        let mut st = AdamState::new(3);
        let err = adam_step(&mut p, &[0.0; 2], &mut st, &AdamHyper::default()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn finite_diff_quadratic() {
        let x = Tensor2D::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let f = |t: &Tensor2D| -> Result<f64> {
            Ok(t.data().iter().map(|&v| f64::from(v) * f64::from(v)).sum())
        };
        let g = finite_diff_grad(f, &x, 1e-3).unwrap();
        assert!((g.get(0, 0) - 2.0).abs() < 1e-4);
        assert!((g.get(0, 1) - 4.0).abs() < 1e-4);
    }

    #[test]
    fn finite_diff_constant_function() {
        let x = seeded_tensor(2, 2, 9);
        let g = finite_diff_grad(|_| Ok(3.5), &x, 1e-3).unwrap();
        for v in g.data() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn finite_diff_agrees_with_analytic_matmul_backward() {
        // f(A) = sum(C * (A x B)); df/dA = C x B^T
        let a = seeded_tensor(3, 3, 21);
        let b = seeded_tensor(3, 3, 22);
        let c = seeded_tensor(3, 3, 23);
        let f = |t: &Tensor2D| -> Result<f64> {
            let mut total = 0.0f64;
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0f64;
                    for k in 0..3 {
                        s += f64::from(t.get(i, k)) * f64::from(b.get(k, j));
                    }
                    total += f64::from(c.get(i, j)) * s;
                }
            }
            Ok(total)
        };
        let fd = finite_diff_grad(f, &a, 1e-3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut analytic = 0.0f64;
                for k in 0..3 {
                    analytic += f64::from(c.get(i, k)) * f64::from(b.get(j, k));
                }
                assert!(
                    close(analytic, f64::from(fd.get(i, j)), 1e-3, 1e-6),
                    "{analytic} vs {}",
                    fd.get(i, j)
                );
            }
        }
    }

    #[test]
    fn backward_passes_match_finite_differences_over_many_seeds() {
        // softmax + layer norm backward across >= 20 random seeds, dims <= 16
        for seed in 0..20u64 {
            let mut rng = SeededRng::new(seed);
            let rows = 1 + rng.below(3);
            let cols = 2 + rng.below(14);
            let x = Tensor2D::randn(rows, cols, 1.0, &mut rng);
            let c = Tensor2D::randn(rows, cols, 1.0, &mut rng);

            let cf = c.clone();
            let f = move |t: &Tensor2D| -> Result<f64> {
                let mut total = 0.0f64;
                for r in 0..t.rows() {
                    let p = softmax_row_f64(t.row(r));
                    for (j, &pj) in p.iter().enumerate() {
                        total += f64::from(cf.get(r, j)) * pj;
                    }
                }
                Ok(total)
            };
            let fd = finite_diff_grad(f, &x, 1e-3).unwrap();
            let dx = row_softmax_backward(&row_softmax(&x), &c).unwrap();
            for (a, n) in dx.data().iter().zip(fd.data()) {
                assert!(
                    close(f64::from(*a), f64::from(*n), 1e-3, 1e-6),
                    "seed {seed}: {a} vs {n}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn prop_softmax_rows_sum_to_one(
            vals in proptest::collection::vec(-1e4f32..1e4f32, 1..48),
        ) {
            let cols = vals.len();
            let x = Tensor2D::from_vec(1, cols, vals).unwrap();
            let y = row_softmax(&x);
            let sum: f64 = y.row(0).iter().map(|&v| f64::from(v)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "sum={sum}");
        }

        #[test]
        fn prop_kernel_ops_are_pure(seed in 0u64..1000) {
            let a = seeded_tensor(4, 5, seed);
            let b = seeded_tensor(5, 3, seed.wrapping_add(1));
            let c1 = matmul(&a, &b).unwrap();
            let c2 = matmul(&a, &b).unwrap();
            prop_assert_eq!(c1, c2);
            let s1 = row_softmax(&a);
            let s2 = row_softmax(&a);
            prop_assert_eq!(s1, s2);
        }
    }
}
