//! Dense numeric kernel shared by every model: a row-major `Matrix`, stable
//! nonlinearities, softmax / cross-entropy, and a central-difference gradient
//! checker used to verify the hand-written backward passes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major values, rejecting empty shapes,
    /// mismatched lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid!("matrix shape {rows}x{cols} has an empty side"));
        }
        if data.len() != rows * cols {
            return Err(invalid!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid!("matrix value at index {i} is not finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != cols) {
            return Err(invalid!("row {r} has {} columns, expected {cols}", rows[r].len()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Uniform initialization in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(invalid!(
                "matmul shape mismatch {}x{} * {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `out += self · x`; `x.len() == cols`, `out.len() == rows`.
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_acc(x, &mut out);
        out
    }

    /// `out += selfᵀ · y`; `y.len() == rows`, `out.len() == cols`.
    #[inline]
    pub fn tmatvec_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi == 0.0 {
                continue;
            }
            axpy(yi, row, out);
        }
    }

    /// `self += a · bᵀ`.
    #[inline]
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai == 0.0 {
                continue;
            }
            axpy(ai, b, row);
        }
    }

    /// `self += s · other` (shapes must agree).
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(s, &other.data, &mut self.data);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a · x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| exp(x - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(invalid!("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid!("softmax input is not finite"));
    }
    Ok(softmax_unchecked(v))
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + ln(v.iter().map(|&x| exp(x - max)).sum::<f64>())
}

/// `-log softmax(scores)[target]`.
pub fn cross_entropy(scores: &[f64], target: usize) -> Result<f64> {
    if target >= scores.len() {
        return Err(invalid!(
            "target class {target} out of range for {} scores",
            scores.len()
        ));
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(invalid!("cross-entropy scores are not finite"));
    }
    Ok(log_sum_exp(scores) - scores[target])
}

/// Cross-entropy together with its gradient with respect to `scores`
/// (`softmax(scores) - onehot(target)`).
pub(crate) fn cross_entropy_grad(scores: &[f64], target: usize) -> (f64, Vec<f64>) {
    let loss = log_sum_exp(scores) - scores[target];
    let mut grad = softmax_unchecked(scores);
    grad[target] -= 1.0;
    (loss, grad)
}

/// A named collection of parameter matrices.
///
/// Models, cells and their gradient accumulators all implement this; the
/// visiting order is fixed and defines the flat parameter layout used by the
/// optimizer, the gradient checker and checkpoints.
pub trait ParamSet {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, m| n += m.as_slice().len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each(&mut |_, m| out.extend_from_slice(m.as_slice()));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(invalid!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            ));
        }
        let mut offset = 0;
        self.for_each_mut(&mut |_, m| {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    fn zero(&mut self) {
        self.for_each_mut(&mut |_, m| m.fill(0.0));
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(&mut |n, _| out.push(String::from(n)));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |_, m| ok &= m.is_finite());
        ok
    }
}

/// Visits a child parameter set with `prefix.` prepended to every name.
pub(crate) fn visit_child(
    prefix: &str,
    child: &dyn ParamSet,
    f: &mut dyn FnMut(&str, &Matrix),
) {
    child.for_each(&mut |n, m| f(&format!("{prefix}.{n}"), m));
}

pub(crate) fn visit_child_mut(
    prefix: &str,
    child: &mut dyn ParamSet,
    f: &mut dyn FnMut(&str, &mut Matrix),
) {
    child.for_each_mut(&mut |n, m| f(&format!("{prefix}.{n}"), m));
}

/// Denominator floor of the relative error. Central differences at
/// `ε = 1e-5` on a loss near 10 carry roundoff of a few `1e-10`, so entries
/// below this magnitude are effectively held to an absolute tolerance.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
    pub max_rel_error: f64,
    /// Flat index of the parameter attaining it.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest `|analytic - numeric|` over all entries.
    pub max_abs_error: f64,
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences `(L(θ+ε) − L(θ−ε)) / 2ε` for every parameter.
///
/// `loss_fn` maps a flat parameter vector to `(loss, gradient)`. It is
/// evaluated twice at `params` first; differing results are reported as
/// [`Error::Inconsistent`].
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(invalid!("eps must lie in (0, 1e-3], got {eps}"));
    }
    let (loss, analytic) = loss_fn(params)?;
    let (loss_again, analytic_again) = loss_fn(params)?;
    if loss.to_bits() != loss_again.to_bits() || analytic != analytic_again {
        return Err(Error::Inconsistent(format!(
            "two evaluations at the same point differ ({loss} vs {loss_again})"
        )));
    }
    if analytic.len() != params.len() {
        return Err(invalid!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        ));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        max_abs_error: 0.0,
    };
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let plus = loss_fn(&theta)?.0;
        theta[i] = orig - eps;
        let minus = loss_fn(&theta)?.0;
        theta[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let abs = (a - numeric).abs();
        report.max_abs_error = report.max_abs_error.max(abs);
        let rel = abs / denom;
        if i == 0 || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for p in &s {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[1000.0, 0.0]).unwrap();
        assert!(s.iter().all(|p| p.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-15 && s[1] < 1e-300);
        let s = softmax(&[1.0, 2.0, 3.0]).unwrap();
        let want = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 5e-9, "{a} vs {b}");
        }
        assert!(matches!(softmax(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(cross_entropy(&[50.0, 0.0, 0.0], 0).unwrap() < 1e-20);
        assert!((cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap() - 0.40760596).abs() < 5e-9);
        assert!(matches!(
            cross_entropy(&[1.0, 2.0], 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn grad_check_quadratic_and_constant() {
        let quad = |t: &[f64]| Ok((0.5 * dot(t, t), t.to_vec()));
        let r = grad_check(quad, &[1.0, 2.0], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");

        let constant = |t: &[f64]| Ok((3.0, vec![0.0; t.len()]));
        let r = grad_check(constant, &[0.3, -0.7, 2.0], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn grad_check_flags_nondeterminism_and_bad_eps() {
        let mut calls = 0u32;
        let flaky = |t: &[f64]| {
            calls += 1;
            Ok((calls as f64, vec![0.0; t.len()]))
        };
        assert!(matches!(
            grad_check(flaky, &[1.0], 1e-5),
            Err(Error::Inconsistent(_))
        ));
        let quad = |t: &[f64]| Ok((0.5 * dot(t, t), t.to_vec()));
        assert!(grad_check(quad, &[1.0], 1e-2).is_err());
    }

    #[test]
    fn grad_check_detects_wrong_gradient() {
        let wrong = |t: &[f64]| Ok((0.5 * dot(t, t), t.iter().map(|x| 2.0 * x).collect()));
        let r = grad_check(wrong, &[1.0, 2.0], 1e-5).unwrap();
        assert!(r.max_rel_error > 0.4);
    }

    #[test]
    fn matmul_identity_is_exact() {
        let a = Matrix::from_vec(2, 3, vec![1.5, -2.0, 3.25, 0.1, 0.2, 1e-9]).unwrap();
        assert_eq!(a.matmul(&Matrix::identity(3)).unwrap(), a);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn matrix_rejects_bad_values() {
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        let mut out = vec![0.0; 3];
        a.tmatvec_acc(&[1.0, -1.0], &mut out);
        assert_eq!(out, vec![-3.0, -3.0, -3.0]);
        let mut m = Matrix::zeros(2, 3);
        m.add_outer(&[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(m.as_slice(), &[1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let s = softmax(&v).unwrap();
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(s.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn cross_entropy_is_neg_log_softmax(
            v in proptest::collection::vec(-50f64..50.0, 1..20),
            t in 0usize..20,
        ) {
            let t = t % v.len();
            let ce = cross_entropy(&v, t).unwrap();
            prop_assert!(ce >= 0.0);
            let direct = -ln(softmax(&v).unwrap()[t]);
            prop_assert!((ce - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }
}
