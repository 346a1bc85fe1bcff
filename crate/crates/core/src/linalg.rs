//! Dense complex linear algebra on top of `faer`.
//!
//! Matrices are column-major `faer::Mat<c64>`. Every Hamiltonian in the model
//! catalog is real in the computational basis, so eigenbases are kept real
//! whenever possible ([`Unitary::Real`]); a real-by-complex product costs two
//! real GEMMs instead of one complex GEMM (four real ones).

use faer::linalg::matmul::matmul;
use faer::{Accum, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use faer::{c64, Mat, MatRef};

pub const ZERO: c64 = c64::new(0.0, 0.0);
pub const ONE: c64 = c64::new(1.0, 0.0);
pub const I: c64 = c64::new(0.0, 1.0);

/// Matrices at or below this dimension get exact dense spectra in norm
/// computations; above it, Lanczos is used.
pub const DENSE_SPECTRUM_LIMIT: usize = 512;

fn par() -> Par {
    faer::get_global_parallelism()
}

pub fn square_dim(m: MatRef<'_, c64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(m.nrows())
}

fn same_dim(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<usize> {
    let n = square_dim(a)?;
    let m = square_dim(b)?;
    if n != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m,
        });
    }
    Ok(n)
}

pub fn identity(n: usize) -> Mat<c64> {
    Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}

/// max_ij |M_ij - conj(M_ji)|
pub fn hermitian_deviation(m: MatRef<'_, c64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut dev = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn is_real(m: MatRef<'_, c64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].im == 0.0))
}

pub fn max_abs_diff(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let mut d = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    d
}

pub fn trace(m: MatRef<'_, c64>) -> c64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

/// tr(AB) without forming the product.
pub fn trace_of_product(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<c64> {
    same_dim(a, b)?;
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    Ok(acc)
}

pub fn matmul_checked(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<Mat<c64>> {
    same_dim(a, b)?;
    Ok(a * b)
}

/// [A, B] = AB - BA
pub fn commutator(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<Mat<c64>> {
    same_dim(a, b)?;
    let mut c = a * b;
    matmul(c.as_mut(), Accum::Add, b, a, -ONE, par());
    Ok(c)
}

pub fn kron(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Mat<c64> {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn scale(m: MatRef<'_, c64>, s: c64) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
}

pub(crate) fn real_part(m: MatRef<'_, c64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re)
}

pub(crate) fn imag_part(m: MatRef<'_, c64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].im)
}

fn combine(re: &Mat<f64>, im: &Mat<f64>) -> Mat<c64> {
    Mat::from_fn(re.nrows(), re.ncols(), |i, j| {
        c64::new(re[(i, j)], im[(i, j)])
    })
}

/// A * B for real A, complex B.
pub(crate) fn real_times_complex(a: MatRef<'_, f64>, b: MatRef<'_, c64>) -> Mat<c64> {
    let re = a * real_part(b);
    if is_real(b) {
        return Mat::from_fn(re.nrows(), re.ncols(), |i, j| c64::new(re[(i, j)], 0.0));
    }
    let im = a * imag_part(b);
    combine(&re, &im)
}

/// A * B for complex A, real B.
pub(crate) fn complex_times_real(a: MatRef<'_, c64>, b: MatRef<'_, f64>) -> Mat<c64> {
    let re = real_part(a) * b;
    if is_real(a) {
        return Mat::from_fn(re.nrows(), re.ncols(), |i, j| c64::new(re[(i, j)], 0.0));
    }
    let im = imag_part(a) * b;
    combine(&re, &im)
}

/// Unitary change of basis whose columns are eigenvectors.
#[derive(Debug, Clone)]
pub enum Unitary {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

impl Unitary {
    pub fn dim(&self) -> usize {
        match self {
            Unitary::Real(u) => u.nrows(),
            Unitary::Complex(u) => u.nrows(),
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self, Unitary::Real(_))
    }

    pub fn to_complex(&self) -> Mat<c64> {
        match self {
            Unitary::Real(u) => Mat::from_fn(u.nrows(), u.ncols(), |i, j| c64::new(u[(i, j)], 0.0)),
            Unitary::Complex(u) => u.clone(),
        }
    }

    /// U * Y
    pub fn times(&self, y: MatRef<'_, c64>) -> Mat<c64> {
        match self {
            Unitary::Real(u) => real_times_complex(u.as_ref(), y),
            Unitary::Complex(u) => u * y,
        }
    }

    /// U^dagger * Y
    pub fn adjoint_times(&self, y: MatRef<'_, c64>) -> Mat<c64> {
        match self {
            Unitary::Real(u) => real_times_complex(u.transpose(), y),
            Unitary::Complex(u) => u.adjoint() * y,
        }
    }

    /// Y * U^dagger
    pub fn times_adjoint(&self, y: MatRef<'_, c64>) -> Mat<c64> {
        match self {
            Unitary::Real(u) => complex_times_real(y, u.transpose()),
            Unitary::Complex(u) => y * u.adjoint(),
        }
    }

    /// Y * U
    pub fn right_times(&self, y: MatRef<'_, c64>) -> Mat<c64> {
        match self {
            Unitary::Real(u) => complex_times_real(y, u.as_ref()),
            Unitary::Complex(u) => y * u,
        }
    }

    /// U^dagger X U
    pub fn to_eigenbasis(&self, x: MatRef<'_, c64>) -> Mat<c64> {
        let xu = self.right_times(x);
        self.adjoint_times(xu.as_ref())
    }

    /// U X U^dagger
    pub fn from_eigenbasis(&self, x: MatRef<'_, c64>) -> Mat<c64> {
        let ux = self.times(x);
        self.times_adjoint(ux.as_ref())
    }

    /// U^dagger diag(d) U for a real diagonal operator.
    pub fn diagonal_to_eigenbasis(&self, d: &[f64]) -> Mat<c64> {
        match self {
            Unitary::Real(u) => {
                let du = Mat::from_fn(u.nrows(), u.ncols(), |i, j| d[i] * u[(i, j)]);
                let r = u.transpose() * du;
                Mat::from_fn(r.nrows(), r.ncols(), |i, j| c64::new(r[(i, j)], 0.0))
            }
            Unitary::Complex(u) => {
                let du = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * d[i]);
                u.adjoint() * du
            }
        }
    }

    /// U v
    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        let col = Mat::from_fn(v.len(), 1, |i, _| v[i]);
        let r = self.times(col.as_ref());
        (0..r.nrows()).map(|i| r[(i, 0)]).collect()
    }

    /// U^dagger v
    pub fn apply_adjoint(&self, v: &[c64]) -> Vec<c64> {
        let col = Mat::from_fn(v.len(), 1, |i, _| v[i]);
        let r = self.adjoint_times(col.as_ref());
        (0..r.nrows()).map(|i| r[(i, 0)]).collect()
    }
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// eigenvector matrix. Real input takes the real symmetric path.
pub fn hermitian_eigen(h: MatRef<'_, c64>) -> Result<(Vec<f64>, Unitary)> {
    square_dim(h)?;
    if is_real(h) {
        let r = real_part(h);
        let evd = r
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
        let vals = evd.S().column_vector().iter().copied().collect();
        Ok((vals, Unitary::Real(evd.U().to_owned())))
    } else {
        let evd = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
        let vals = evd.S().column_vector().iter().map(|z| z.re).collect();
        Ok((vals, Unitary::Complex(evd.U().to_owned())))
    }
}

pub fn hermitian_eigenvalues(h: MatRef<'_, c64>) -> Result<Vec<f64>> {
    square_dim(h)?;
    if is_real(h) {
        real_part(h)
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))
    } else {
        h.self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))
    }
}

/// A Hermitian linear map given only through its action on vectors.
pub trait HermitianOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[c64], y: &mut [c64]);
}

/// Dense matrix viewed as a Hermitian operator.
pub struct DenseOperator<'a>(pub MatRef<'a, c64>);

impl HermitianOperator for DenseOperator<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[c64], y: &mut [c64]) {
        let m = self.0;
        y.iter_mut().for_each(|v| *v = ZERO);
        for j in 0..m.ncols() {
            let xj = x[j];
            if xj == ZERO {
                continue;
            }
            for i in 0..m.nrows() {
                y[i] += m[(i, j)] * xj;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub rel_tol: f64,
    /// Absolute error floor; lets operators that vanish up to round-off converge.
    pub abs_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 0.0,
            max_iter: 400,
            seed: 0x6b6d_735f_6c61_6e63,
        }
    }
}

fn dot(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm2(a: &[c64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn tridiagonal_ritz(alpha: &[f64], beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = alpha.len();
    let t = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let evd = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let theta: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    let last: Vec<f64> = (0..k).map(|i| evd.U()[(k - 1, i)]).collect();
    Ok((theta, last))
}

/// Smallest and largest eigenvalue of a Hermitian operator.
///
/// Small operators are materialized and diagonalized densely. Larger ones use
/// Lanczos with full reorthogonalization from a seeded random start vector;
/// iteration stops once both extreme Ritz values have estimated error below
/// `rel_tol * max|theta|`.
pub fn extreme_eigenvalues(
    op: &dyn HermitianOperator,
    opts: LanczosOptions,
) -> Result<(f64, f64)> {
    lanczos(op, opts, Want::Both)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Want {
    Both,
    Top,
    LargestMagnitude,
}

/// Error estimate for Ritz value `i`: min(r, r^2 / gap) with r the residual
/// and gap the distance to the neighbouring Ritz value.
fn ritz_error(theta: &[f64], last: &[f64], b: f64, i: usize) -> f64 {
    let r = (b * last[i]).abs();
    let k = theta.len();
    let gap = match (i.checked_sub(1), (i + 1 < k).then_some(i + 1)) {
        (Some(a), Some(c)) => (theta[i] - theta[a]).min(theta[c] - theta[i]),
        (Some(a), None) => theta[i] - theta[a],
        (None, Some(c)) => theta[c] - theta[i],
        (None, None) => f64::INFINITY,
    };
    if gap > 0.0 {
        r.min(r * r / gap)
    } else {
        r
    }
}

fn lanczos(op: &dyn HermitianOperator, opts: LanczosOptions, want: Want) -> Result<(f64, f64)> {
    let n = op.dim();
    let apply = |_: &[usize], x: MatRef<'_, c64>| {
        let mut out = Mat::<c64>::zeros(n, x.ncols());
        let mut col = vec![ZERO; n];
        for j in 0..x.ncols() {
            col.iter_mut().zip(x.col(j).iter()).for_each(|(c, v)| *c = *v);
            op.apply(&col, out.col_as_slice_mut(j));
        }
        out
    };
    Ok(batched_lanczos(n, 1, &apply, opts, want)?[0])
}

/// Applies a batch of Hermitian operators: column `c` of the input is acted on
/// by operator `jobs[c]`.
pub type BatchApply<'a> = dyn Fn(&[usize], MatRef<'_, c64>) -> Mat<c64> + Sync + 'a;

/// Operator norms of `jobs` Hermitian operators of dimension `n`, computed by
/// independent Lanczos recurrences advanced in lockstep so that every
/// iteration costs one batched application.
pub fn batched_hermitian_norms(
    n: usize,
    jobs: usize,
    apply: &BatchApply<'_>,
    opts: LanczosOptions,
) -> Result<Vec<f64>> {
    Ok(batched_lanczos(n, jobs, apply, opts, Want::LargestMagnitude)?
        .into_iter()
        .map(|(lo, hi)| lo.abs().max(hi.abs()))
        .collect())
}

struct Run {
    q: Vec<c64>,
    basis: Vec<Vec<c64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    prev: Option<(f64, f64)>,
}

impl Run {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q: Vec<c64> = (0..n)
            .map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let nq = norm2(&q);
        q.iter_mut().for_each(|v| *v /= nq);
        Run {
            q,
            basis: Vec::new(),
            alpha: Vec::new(),
            beta: Vec::new(),
            prev: None,
        }
    }

    /// One Lanczos step given w = A q; returns the extreme Ritz values once converged.
    fn step(&mut self, mut w: Vec<c64>, n: usize, max_k: usize, opts: &LanczosOptions, want: Want) -> Result<Option<(f64, f64)>> {
        let k = self.alpha.len();
        let a = dot(&self.q, &w).re;
        self.alpha.push(a);
        self.basis.push(std::mem::take(&mut self.q));
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for v in &self.basis {
                let c = dot(v, &w);
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let b = norm2(&w);

        let local_scale = a.abs() + self.beta.last().copied().unwrap_or(0.0);
        let near_breakdown = b <= 1e-12 * local_scale;
        if near_breakdown || k + 1 == max_k || k < 8 || k % 4 == 0 {
            let (theta, last) = tridiagonal_ritz(&self.alpha, &self.beta)?;
            let kk = theta.len();
            let scale = theta[0].abs().max(theta[kk - 1].abs());
            let tol = (opts.rel_tol * scale).max(opts.abs_tol).max(f64::MIN_POSITIVE);
            // the gap estimate is only trusted once the Ritz value has settled
            let settled = |now: f64, before: Option<f64>| before.is_some_and(|p| (now - p).abs() <= tol);
            let pick = |i: usize, before: Option<f64>| {
                if settled(theta[i], before) {
                    ritz_error(&theta, &last, b, i)
                } else {
                    (b * last[i]).abs()
                }
            };
            let err_lo = pick(0, self.prev.map(|p| p.0));
            let err_hi = pick(kk - 1, self.prev.map(|p| p.1));
            self.prev = Some((theta[0], theta[kk - 1]));
            let converged = match want {
                Want::Both => err_lo <= tol && err_hi <= tol,
                Want::Top => err_hi <= tol,
                Want::LargestMagnitude => {
                    if theta[0].abs() > theta[kk - 1].abs() {
                        err_lo <= tol
                    } else {
                        err_hi <= tol
                    }
                }
            };
            let exhausted = near_breakdown || b <= 1e-14 * scale || k + 1 == n;
            if exhausted || converged {
                return Ok(Some((theta[0], theta[kk - 1])));
            }
            if k + 1 == max_k {
                return Err(Error::Eigensolver(format!(
                    "Lanczos did not converge within {max_k} iterations"
                )));
            }
        }
        self.beta.push(b);
        self.q = w.into_iter().map(|wi| wi / b).collect();
        Ok(None)
    }
}

fn batched_lanczos(
    n: usize,
    jobs: usize,
    apply: &BatchApply<'_>,
    opts: LanczosOptions,
    want: Want,
) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Ok(vec![(0.0, 0.0); jobs]);
    }
    if n <= 64 {
        let eye = identity(n);
        return (0..jobs)
            .map(|job| {
                let dense = apply(&vec![job; n], eye.as_ref());
                // symmetrize against round-off in the operator action
                let h = Mat::from_fn(n, n, |i, j| (dense[(i, j)] + dense[(j, i)].conj()) * 0.5);
                let vals = hermitian_eigenvalues(h.as_ref())?;
                Ok((vals[0], vals[n - 1]))
            })
            .collect();
    }

    let max_k = opts.max_iter.min(n);
    let mut runs: Vec<Run> = (0..jobs).map(|_| Run::new(n, opts.seed)).collect();
    let mut results: Vec<Option<(f64, f64)>> = vec![None; jobs];
    let mut active: Vec<usize> = (0..jobs).collect();
    while !active.is_empty() {
        let q = Mat::from_fn(n, active.len(), |i, c| runs[active[c]].q[i]);
        let w = apply(&active, q.as_ref());
        let mut still = Vec::with_capacity(active.len());
        for (c, &job) in active.iter().enumerate() {
            let wc: Vec<c64> = w.col(c).iter().copied().collect();
            match runs[job].step(wc, n, max_k, &opts, want)? {
                Some(r) => {
                    results[job] = Some(r);
                    runs[job].basis = Vec::new();
                }
                None => still.push(job),
            }
        }
        active = still;
    }
    Ok(results.into_iter().map(|r| r.unwrap()).collect())
}

/// Operator norm of a Hermitian operator: max |eigenvalue|.
pub fn hermitian_operator_norm(op: &dyn HermitianOperator) -> Result<f64> {
    let (lo, hi) = lanczos(op, LanczosOptions::default(), Want::LargestMagnitude)?;
    Ok(lo.abs().max(hi.abs()))
}

struct GramOperator<'a>(MatRef<'a, c64>);

impl HermitianOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &[c64], y: &mut [c64]) {
        let m = self.0;
        let mut tmp = vec![ZERO; m.nrows()];
        DenseOperator(m).apply(x, &mut tmp);
        for j in 0..m.ncols() {
            y[j] = (0..m.nrows()).map(|i| m[(i, j)].conj() * tmp[i]).sum();
        }
    }
}

/// Largest singular value.
pub fn operator_norm(m: MatRef<'_, c64>) -> Result<f64> {
    let n = square_dim(m)?;
    if n == 0 {
        return Ok(0.0);
    }
    let scale = (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .map(|(i, j)| m[(i, j)].norm())
        .fold(0.0f64, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let herm_dev = hermitian_deviation(m);
    if herm_dev <= 1e-13 * scale {
        if n <= DENSE_SPECTRUM_LIMIT {
            let vals = hermitian_eigenvalues(m)?;
            return Ok(vals[0].abs().max(vals[n - 1].abs()));
        }
        return hermitian_operator_norm(&DenseOperator(m));
    }
    // anti-Hermitian: i*M is Hermitian with the same norm
    let anti_dev = (0..n)
        .flat_map(|j| (0..=j).map(move |i| (i, j)))
        .map(|(i, j)| (m[(i, j)] + m[(j, i)].conj()).norm())
        .fold(0.0f64, f64::max);
    if anti_dev <= 1e-13 * scale {
        let im = scale_mat_hermitize(m);
        if n <= DENSE_SPECTRUM_LIMIT {
            let vals = hermitian_eigenvalues(im.as_ref())?;
            return Ok(vals[0].abs().max(vals[n - 1].abs()));
        }
        return hermitian_operator_norm(&DenseOperator(im.as_ref()));
    }
    if n <= DENSE_SPECTRUM_LIMIT {
        let sv = m
            .singular_values()
            .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
        return Ok(sv[0]);
    }
    let (_, hi) = lanczos(&GramOperator(m), LanczosOptions::default(), Want::Top)?;
    Ok(hi.max(0.0).sqrt())
}

fn scale_mat_hermitize(m: MatRef<'_, c64>) -> Mat<c64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| (m[(i, j)] - m[(j, i)].conj()) * c64::new(0.0, 0.5))
}
