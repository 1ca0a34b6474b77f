//! Minimal dense numeric kernel.
//!
//! Row-major `f64` matrices and plain `Vec<f64>` vectors, plus the handful of
//! operations the models need: affine maps, a numerically stable softmax, the
//! logistic function, bias-corrected Adam, global-norm gradient clipping,
//! semi-orthogonal initialization, and a central-difference gradient checker.
//!
//! All model math in the crate goes through this module; each model supplies
//! its own analytic backward pass and validates it with
//! [`finite_diff_check`].

use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix storage length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(matvec(&self.data, self.rows, self.cols, x))
    }
}

// ---------------------------------------------------------------------------
// Slice kernels. The parameter structs in attncf/baselines store their
// weights in one flat buffer (so Adam, clipping, and checkpointing see a
// single slice) and call these directly.
// ---------------------------------------------------------------------------

/// `y = W x` for a row-major `rows x cols` block.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        y[r] = acc;
    }
    y
}

/// `y = W^T v` for a row-major `rows x cols` block (`v` has length `rows`).
pub fn matvec_t(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(v.len(), rows);
    let mut y = vec![0.0; cols];
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let vr = v[r];
        for (yv, wv) in y.iter_mut().zip(row) {
            *yv += vr * wv;
        }
    }
    y
}

/// `out += a b^T` where `out` is row-major `|a| x |b|`.
pub fn outer_acc(out: &mut [f64], a: &[f64], b: &[f64]) {
    debug_assert_eq!(out.len(), a.len() * b.len());
    for (i, av) in a.iter().enumerate() {
        let row = &mut out[i * b.len()..(i + 1) * b.len()];
        for (ov, bv) in row.iter_mut().zip(b) {
            *ov += av * bv;
        }
    }
}

/// `out += alpha * x`.
pub fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (ov, xv) in out.iter_mut().zip(x) {
        *ov += alpha * xv;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    dot(xs, xs).sqrt()
}

/// Cosine similarity; 0.0 when either vector is all-zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// `W x + b`.
pub fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(Error::Shape(format!(
            "affine: bias length {} does not match {} rows",
            b.len(),
            w.rows()
        )));
    }
    let mut y = w.matvec(x)?;
    axpy(&mut y, 1.0, b);
    Ok(y)
}

/// Max-subtracted softmax; output sums to 1.
pub fn softmax(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::InvalidArg("softmax of empty vector".into()));
    }
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// Softmax applied in place to avoid per-layer allocations on hot paths.
pub(crate) fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in s.iter_mut() {
        *v /= sum;
    }
}

/// Logistic function sigma(x) = 1 / (1 + e^-x).
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log sigma(x), computed without underflow for large negative x.
pub fn log_logistic(x: f64) -> f64 {
    // log sigma(x) = -log(1 + e^-x) = min(x, 0) - ln(1 + e^-|x|)
    let m = x.min(0.0);
    m - (-x.abs()).exp().ln_1p()
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Bias-corrected Adam state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: m and v accumulate, bias-corrected estimates drive
    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: state dimension {} vs params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to adam".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Scales `grads` to have L2 norm `max_norm` when it exceeds that value;
/// otherwise leaves them untouched. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// Orthogonal initialization
// ---------------------------------------------------------------------------

/// Semi-orthogonal `rows x cols` matrix with gain 1.0: a standard-Gaussian
/// draw orthonormalized along its smaller dimension, so the smaller-dimension
/// Gram matrix is the identity.
pub fn orthogonal_init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    assert!(rows > 0 && cols > 0, "orthogonal_init of empty shape");
    let (n_vecs, vec_len, rows_are_vecs) = if rows <= cols {
        (rows, cols, true)
    } else {
        (cols, rows, false)
    };

    // Modified Gram-Schmidt over Gaussian vectors; re-drawing on (measure
    // zero) near-degenerate residuals.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vecs);
    while basis.len() < n_vecs {
        let mut v: Vec<f64> = (0..vec_len).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj = dot(&v, b);
            axpy(&mut v, -proj, b);
        }
        let norm = l2_norm(&v);
        if norm < 1e-10 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        basis.push(v);
    }

    let mut m = Matrix::zeros(rows, cols);
    for (i, v) in basis.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            if rows_are_vecs {
                m.set(i, j, x);
            } else {
                m.set(j, i, x);
            }
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares `analytic_grad` against central differences of `loss` at
/// `params`, on a random subsample of at most `max_coords` coordinates
/// (all coordinates when the parameter count is small enough).
///
/// Relative error per coordinate is
/// `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &[f64],
    analytic_grad: &[f64],
    epsilon: f64,
    tolerance: f64,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic_grad.len());
    let n = params.len();
    let coords: Vec<usize> = if n <= max_coords {
        (0..n).collect()
    } else {
        // Sample without replacement by shuffling the index range.
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx.truncate(max_coords);
        idx
    };

    let mut work = params.to_vec();
    let mut max_rel = 0.0;
    let mut worst = 0;
    for &c in &coords {
        let orig = work[c];
        work[c] = orig + epsilon;
        let plus = loss(&work);
        work[c] = orig - epsilon;
        let minus = loss(&work);
        work[c] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = analytic_grad[c];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = c;
        }
    }
    GradCheckReport {
        n_checked: coords.len(),
        max_rel_error: max_rel,
        worst_coord: worst,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn affine_identity_passes_through() {
        let w = Matrix::identity(3);
        let b = vec![0.0; 3];
        let x = vec![1.5, -2.0, 0.25];
        assert_eq!(affine(&w, &b, &x).unwrap(), x);
    }

    #[test]
    fn affine_zero_matrix_returns_bias() {
        let w = Matrix::zeros(2, 3);
        let b = vec![0.7, -0.3];
        let y = affine(&w, &b, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, b);
    }

    #[test]
    fn affine_hand_case() {
        // [[1,2],[3,4]] * [1,1] + [1,0] = [4, 7]
        let w = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = affine(&w, &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(y, vec![4.0, 7.0]);
    }

    #[test]
    fn affine_shape_mismatch_errors() {
        let w = Matrix::zeros(2, 2);
        assert!(affine(&w, &[0.0, 0.0], &[1.0]).is_err());
        assert!(affine(&w, &[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn softmax_uniform_and_singleton() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax(&[3.7]).unwrap(), vec![1.0]);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn softmax_is_overflow_stable() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 1.0 - 1e-12 && p[1] < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_shift_invariance() {
        let s = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = s.iter().map(|v| v + 123.456).collect();
        let a = softmax(&s).unwrap();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let sum: f64 = a.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(2.0) - 0.8807970779778823).abs() < 1e-15);
        for &x in &[-3.0, -0.5, 0.1, 4.0] {
            assert!((logistic(-x) - (1.0 - logistic(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn log_logistic_matches_naive_and_survives_extremes() {
        for &x in &[-5.0, -0.1, 0.0, 0.3, 6.0] {
            assert!((log_logistic(x) - logistic(x).ln()).abs() < 1e-12);
        }
        assert!(log_logistic(-800.0).is_finite());
        assert!((log_logistic(-800.0) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_gradients_leave_params_unchanged() {
        // Fresh state, and states produced by further zero gradients.
        let mut adam = Adam::new(4, 0.1);
        let mut p = vec![1.0, -2.0, 0.5, 3.0];
        let p0 = p.clone();
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 4]).unwrap();
            assert_eq!(p, p0);
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        // With fresh accumulators: m_hat = g, v_hat = g^2, so the first
        // update is exactly lr * g / (|g| + eps), magnitude ~= lr.
        let lr = 0.002;
        for &g in &[0.3, -1.7, 42.0, 1e-3] {
            let mut adam = Adam::new(1, lr);
            let mut p = vec![0.0];
            adam.step(&mut p, &[g]).unwrap();
            let expected = lr * g / (g.abs() + 1e-8);
            assert!(
                (p[0] + expected).abs() < 1e-15,
                "g={g}: got {} want {}",
                p[0],
                -expected
            );
            assert!((p[0].abs() - lr).abs() / lr < 1e-4);
        }
    }

    #[test]
    fn adam_two_step_hand_trace() {
        // Scalar parameter, gradients 1.0 then 0.5, lr = 0.1; accumulators
        // traced by hand with the same constants.
        let lr = 0.1;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut adam = Adam::new(1, lr);
        let mut p = vec![0.0];

        let mut m = 0.0;
        let mut v = 0.0;
        let mut expect = 0.0;
        for (t, g) in [(1, 1.0_f64), (2, 0.5_f64)] {
            adam.step(&mut p, &[g]).unwrap();
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            expect -= lr * m_hat / (v_hat.sqrt() + eps);
            assert!((p[0] - expect).abs() < 1e-15, "step {t}");
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![0.0, 0.0];
        assert!(adam.step(&mut p, &[f64::NAN, 0.0]).is_err());
        assert!(adam.step(&mut p, &[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn clip_noop_below_cap() {
        let mut g = vec![3.0, 4.0]; // norm 5
        clip_global_norm(&mut g, 10.0);
        assert_eq!(g, vec![3.0, 4.0]);
    }

    #[test]
    fn clip_scales_to_exact_cap() {
        let mut g = vec![12.0, 16.0]; // norm 20
        let pre = clip_global_norm(&mut g, 10.0);
        assert!((pre - 20.0).abs() < 1e-12);
        assert!((l2_norm(&g) - 10.0).abs() < 1e-12);
        // idempotent
        let snapshot = g.clone();
        clip_global_norm(&mut g, 10.0);
        for (a, b) in g.iter().zip(&snapshot) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_zero_vector_stays_zero() {
        let mut g = vec![0.0; 3];
        clip_global_norm(&mut g, 10.0);
        assert_eq!(g, vec![0.0; 3]);
    }

    fn gram_error(m: &Matrix) -> f64 {
        // Gram over the smaller dimension.
        let (r, c) = (m.rows(), m.cols());
        let k = r.min(c);
        let mut worst = 0.0_f64;
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                if r <= c {
                    for t in 0..c {
                        acc += m.get(i, t) * m.get(j, t);
                    }
                } else {
                    for t in 0..r {
                        acc += m.get(t, i) * m.get(t, j);
                    }
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    #[test]
    fn orthogonal_init_gram_identity() {
        let mut rng = seeded(11);
        for &(r, c) in &[(4, 4), (4, 2), (2, 4), (7, 3), (128, 64)] {
            let m = orthogonal_init(r, c, &mut rng);
            assert!(
                gram_error(&m) < 1e-6,
                "{r}x{c}: gram error {}",
                gram_error(&m)
            );
        }
    }

    #[test]
    fn orthogonal_init_is_reproducible() {
        let a = orthogonal_init(5, 3, &mut seeded(99));
        let b = orthogonal_init(5, 3, &mut seeded(99));
        assert_eq!(a, b);
    }

    #[test]
    fn finite_diff_check_quadratic() {
        // loss = 0.5 ||x||^2, gradient = x.
        let params: Vec<f64> = (0..10).map(|i| (i as f64) * 0.37 - 1.0).collect();
        let grad = params.clone();
        let report = finite_diff_check(
            |p| 0.5 * dot(p, p),
            &params,
            &grad,
            1e-5,
            1e-9,
            1000,
            &mut seeded(1),
        );
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn finite_diff_check_logistic_loss() {
        // Scalar model: loss(x) = -log sigma(x) for label 1; d/dx = sigma(x) - 1.
        let x = vec![0.7];
        let grad = vec![logistic(0.7) - 1.0];
        let report = finite_diff_check(
            |p| -log_logistic(p[0]),
            &x,
            &grad,
            1e-5,
            1e-9,
            10,
            &mut seeded(2),
        );
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn finite_diff_check_flags_wrong_gradient() {
        let params = vec![1.0, 2.0];
        let wrong = vec![0.0, 2.0];
        let report = finite_diff_check(
            |p| 0.5 * dot(p, p),
            &params,
            &wrong,
            1e-5,
            1e-6,
            10,
            &mut seeded(3),
        );
        assert!(!report.passed());
    }
}
