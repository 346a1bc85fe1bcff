//! Spectral data and equilibrium states.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::lattice::{LocalSum, Region, SubregionMap, DEFAULT_LOCAL_DIM};
use crate::linalg::{self, c64, hermitian_eigen, Mat, MatRef, Unitary, ZERO};

/// Inverse temperature, possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

impl Beta {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Beta::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Beta::Finite(b) => Some(*b),
            Beta::Infinite => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Beta::Finite(b) if !(b.is_finite() && *b >= 0.0) => {
                Err(Error::invalid("beta", format!("must be finite and >= 0, got {b}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beta::Finite(b) => write!(f, "{b}"),
            Beta::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(b) => s.serialize_f64(*b),
            Beta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Ok(Beta::Finite(b)),
            Raw::Text(t) if t == "inf" => Ok(Beta::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{t}\""
            ))),
        }
    }
}

/// Eigenvalues (ascending) and eigenvectors of a Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpectralData {
    source: u64,
    label: String,
    region: Region,
    lambda: Region,
    eigenvalues: Vec<f64>,
    basis: Unitary,
}

pub fn spectral_decompose(h: &Hamiltonian) -> Result<SpectralData> {
    let (eigenvalues, basis) = hermitian_eigen(h.matrix())?;
    if eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::Eigensolver("non-finite eigenvalue".into()));
    }
    Ok(SpectralData {
        source: h.id(),
        label: h.label().to_string(),
        region: h.region().clone(),
        lambda: h.lambda().clone(),
        eigenvalues,
        basis,
    })
}

impl SpectralData {
    pub fn source_id(&self) -> u64 {
        self.source
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Region the Hamiltonian acts on.
    pub fn region(&self) -> &Region {
        &self.region
    }

    /// The region Lambda the Hamiltonian was assembled for.
    pub fn lambda(&self) -> &Region {
        &self.lambda
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &Unitary {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// ||H|| = max |E|
    pub fn norm(&self) -> f64 {
        let lo = self.eigenvalues.first().copied().unwrap_or(0.0);
        let hi = self.eigenvalues.last().copied().unwrap_or(0.0);
        lo.abs().max(hi.abs())
    }

    fn check_dim(&self, m: MatRef<'_, c64>) -> Result<()> {
        let n = linalg::square_dim(m)?;
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }

    /// U^dagger X U
    pub fn to_eigenbasis(&self, x: MatRef<'_, c64>) -> Result<Mat<c64>> {
        self.check_dim(x)?;
        Ok(self.basis.to_eigenbasis(x))
    }

    /// U X U^dagger
    pub fn from_eigenbasis(&self, x: MatRef<'_, c64>) -> Result<Mat<c64>> {
        self.check_dim(x)?;
        Ok(self.basis.from_eigenbasis(x))
    }

    /// U^dagger X U for an operator given as a local sum on this region.
    pub fn sum_to_eigenbasis(&self, x: &LocalSum) -> Result<Mat<c64>> {
        if x.region() != &self.region {
            return Err(Error::invalid(
                "observable",
                "local sum is defined on a different region than the Hamiltonian",
            ));
        }
        match &self.basis {
            Unitary::Real(u) => {
                if let Some(xu) = x.real_product(u.as_ref()) {
                    let r = u.transpose() * xu;
                    return Ok(Mat::from_fn(r.nrows(), r.ncols(), |i, j| c64::new(r[(i, j)], 0.0)));
                }
                let xu = x.apply_to_real_matrix(u.as_ref());
                Ok(self.basis.adjoint_times(xu.as_ref()))
            }
            Unitary::Complex(u) => {
                let xu = x.apply_to_matrix(u.as_ref());
                Ok(self.basis.adjoint_times(xu.as_ref()))
            }
        }
    }

    /// max |U diag(E) U^dagger - H|
    pub fn reconstruction_residual(&self, h: MatRef<'_, c64>) -> Result<f64> {
        self.check_dim(h)?;
        let back = self.basis.from_eigenbasis(diag(&self.eigenvalues).as_ref());
        Ok(linalg::max_abs_diff(back.as_ref(), h))
    }

    /// Default degeneracy tolerance 1e-9 max(1, ||H||).
    pub fn default_degeneracy_tol(&self) -> f64 {
        1e-9 * self.norm().max(1.0)
    }

    /// Dense matrix with the given eigenbasis weights: U diag(w) U^dagger.
    pub fn weighted_projector(&self, w: &[f64]) -> Mat<c64> {
        self.basis.from_eigenbasis(diag(w).as_ref())
    }
}

fn diag(d: &[f64]) -> Mat<c64> {
    Mat::from_fn(d.len(), d.len(), |i, j| {
        if i == j {
            c64::new(d[i], 0.0)
        } else {
            ZERO
        }
    })
}

/// Decompositions keyed by Hamiltonian identity; safe for concurrent use.
#[derive(Debug, Default)]
pub struct SpectralCache {
    map: Mutex<HashMap<u64, Arc<SpectralData>>>,
}

impl SpectralCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, h: &Hamiltonian) -> Result<Arc<SpectralData>> {
        if let Some(sd) = self.map.lock().unwrap().get(&h.id()) {
            return Ok(sd.clone());
        }
        // decompose outside the lock; a concurrent duplicate is discarded
        let sd = Arc::new(spectral_decompose(h)?);
        Ok(self.map.lock().unwrap().entry(h.id()).or_insert(sd).clone())
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// exp(-beta (E - E_min)) normalized.
pub fn gibbs_weights(eigenvalues: &[f64], beta: f64) -> Result<Vec<f64>> {
    Beta::Finite(beta).validate()?;
    let e0 = eigenvalues.first().copied().unwrap_or(0.0);
    let mut w: Vec<f64> = eigenvalues.iter().map(|e| (-beta * (e - e0)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    Ok(w)
}

/// Uniform weights on eigenvalues within `tol` of the minimum.
pub fn ground_weights(eigenvalues: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::invalid("degeneracy tolerance", "must be positive"));
    }
    let e0 = eigenvalues.first().copied().unwrap_or(0.0);
    let count = eigenvalues.iter().filter(|e| **e - e0 <= tol).count();
    Ok(eigenvalues
        .iter()
        .map(|e| if *e - e0 <= tol { 1.0 / count as f64 } else { 0.0 })
        .collect())
}

/// Eigenbasis weights of the equilibrium state at `beta`: Gibbs, tracial at
/// zero, uniform ground mixture at infinity.
pub fn equilibrium_weights(sd: &SpectralData, beta: Beta) -> Result<(Vec<f64>, StateKind)> {
    match beta {
        Beta::Infinite => {
            let w = ground_weights(sd.eigenvalues(), sd.default_degeneracy_tol())?;
            let degeneracy = w.iter().filter(|v| **v > 0.0).count();
            Ok((w, StateKind::Ground { degeneracy }))
        }
        Beta::Finite(b) => {
            let w = gibbs_weights(sd.eigenvalues(), b)?;
            let kind = if b == 0.0 {
                StateKind::Tracial
            } else {
                StateKind::Gibbs { beta: b }
            };
            Ok((w, kind))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateKind {
    Gibbs { beta: f64 },
    Ground { degeneracy: usize },
    Tracial,
    TimeAveraged,
    Custom,
}

impl StateKind {
    pub fn name(&self) -> &'static str {
        match self {
            StateKind::Gibbs { .. } => "gibbs",
            StateKind::Ground { .. } => "ground",
            StateKind::Tracial => "tracial",
            StateKind::TimeAveraged => "time-averaged",
            StateKind::Custom => "custom",
        }
    }
}

/// Hermitian, positive semidefinite, unit trace.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    matrix: Mat<c64>,
    region: Region,
    kind: StateKind,
}

const STATE_TOL: f64 = 1e-12;

impl DensityMatrix {
    /// Validates the density-matrix invariants.
    pub fn new(matrix: Mat<c64>, region: Region, kind: StateKind) -> Result<Self> {
        let dim = region.hilbert_dim(DEFAULT_LOCAL_DIM)?;
        let n = linalg::square_dim(matrix.as_ref())?;
        if n != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: n });
        }
        let dev = linalg::hermitian_deviation(matrix.as_ref());
        if dev > STATE_TOL {
            return Err(Error::NotHermitian {
                label: "density matrix".into(),
                deviation: dev,
            });
        }
        let tr = linalg::trace(matrix.as_ref());
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::invalid("density matrix", format!("trace {tr} is not 1")));
        }
        let min = linalg::hermitian_eigenvalues(matrix.as_ref())?[0];
        if min < -STATE_TOL {
            return Err(Error::invalid(
                "density matrix",
                format!("negative eigenvalue {min:e}"),
            ));
        }
        Ok(DensityMatrix { matrix, region, kind })
    }

    /// Pure state |v><v| for a normalized vector.
    pub fn pure(v: &[c64], region: Region) -> Result<Self> {
        let nrm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return Err(Error::invalid("state vector", "zero vector"));
        }
        let m = Mat::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj() / (nrm * nrm));
        DensityMatrix::new(m, region, StateKind::Custom)
    }

    fn from_weights(sd: &SpectralData, w: &[f64], kind: StateKind) -> Self {
        let m = sd.weighted_projector(w);
        // exact Hermitian symmetrization of round-off
        let m = Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        DensityMatrix {
            matrix: m,
            region: sd.region().clone(),
            kind,
        }
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// (1/2) sum |eigenvalues of (self - other)|
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let d = &self.matrix - &other.matrix;
        let vals = linalg::hermitian_eigenvalues(d.as_ref())?;
        Ok(0.5 * vals.iter().map(|v| v.abs()).sum::<f64>())
    }
}

pub fn gibbs_state(sd: &SpectralData, beta: f64) -> Result<DensityMatrix> {
    let w = gibbs_weights(sd.eigenvalues(), beta)?;
    let kind = if beta == 0.0 {
        StateKind::Tracial
    } else {
        StateKind::Gibbs { beta }
    };
    Ok(DensityMatrix::from_weights(sd, &w, kind))
}

/// Normalized projector onto the eigenspace within `tol` of the ground energy.
pub fn ground_state(sd: &SpectralData, tol: Option<f64>) -> Result<DensityMatrix> {
    let w = ground_weights(sd.eigenvalues(), tol.unwrap_or_else(|| sd.default_degeneracy_tol()))?;
    let degeneracy = w.iter().filter(|v| **v > 0.0).count();
    Ok(DensityMatrix::from_weights(sd, &w, StateKind::Ground { degeneracy }))
}

pub fn tracial_state(region: &Region) -> Result<DensityMatrix> {
    let dim = region.hilbert_dim(DEFAULT_LOCAL_DIM)?;
    let m = linalg::scale(linalg::identity(dim).as_ref(), c64::new(1.0 / dim as f64, 0.0));
    Ok(DensityMatrix {
        matrix: m,
        region: region.clone(),
        kind: StateKind::Tracial,
    })
}

/// tr(rho A)
pub fn expect(rho: &DensityMatrix, a: MatRef<'_, c64>) -> Result<c64> {
    linalg::trace_of_product(rho.matrix(), a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeAverage {
    /// Trapezoid rule over [0, period] with `points` nodes.
    Trapezoid { period: f64, points: usize },
    /// Infinite-time limit: drop eigenbasis coherences between distinct energies.
    Dephase,
}

impl TimeAverage {
    pub fn trapezoid(period: f64) -> Self {
        TimeAverage::Trapezoid { period, points: 64 }
    }
}

/// (1/p) int_0^p exp(-iHt) psi exp(iHt) dt
pub fn time_averaged_state(
    psi: &DensityMatrix,
    sd: &SpectralData,
    how: TimeAverage,
) -> Result<DensityMatrix> {
    let p = sd.to_eigenbasis(psi.matrix())?;
    let e = sd.eigenvalues();
    let n = e.len();
    let averaged = match how {
        TimeAverage::Trapezoid { period, points } => {
            if !(period > 0.0 && period.is_finite()) {
                return Err(Error::invalid("period", "must be positive and finite"));
            }
            if points < 2 {
                return Err(Error::invalid("points", "need at least 2 quadrature points"));
            }
            let h = period / (points - 1) as f64;
            let mut kernel = Mat::<c64>::zeros(n, n);
            for k in 0..points {
                let t = k as f64 * h;
                let wk = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
                let phase: Vec<c64> = e.iter().map(|x| c64::cis(-x * t)).collect();
                for j in 0..n {
                    for i in 0..n {
                        kernel[(i, j)] += phase[i] * phase[j].conj() * wk;
                    }
                }
            }
            let scale = h / period;
            Mat::from_fn(n, n, |i, j| p[(i, j)] * kernel[(i, j)] * scale)
        }
        TimeAverage::Dephase => {
            let tol = sd.default_degeneracy_tol();
            Mat::from_fn(n, n, |i, j| {
                if (e[i] - e[j]).abs() <= tol {
                    p[(i, j)]
                } else {
                    ZERO
                }
            })
        }
    };
    let back = sd.from_eigenbasis(averaged.as_ref())?;
    let tr = linalg::trace(back.as_ref()).re;
    let m = Mat::from_fn(n, n, |i, j| (back[(i, j)] + back[(j, i)].conj()) * (0.5 / tr));
    Ok(DensityMatrix {
        matrix: m,
        region: psi.region.clone(),
        kind: StateKind::TimeAveraged,
    })
}

/// Reduced state on `keep`, which must be a subset of the state's region.
pub fn partial_trace(rho: &DensityMatrix, keep: &Region) -> Result<DensityMatrix> {
    let map = SubregionMap::new(keep, &rho.region, DEFAULT_LOCAL_DIM)?;
    let out = map.trace_out_rest(rho.matrix());
    let kind = match rho.kind {
        StateKind::Tracial => StateKind::Tracial,
        _ => StateKind::Custom,
    };
    Ok(DensityMatrix {
        matrix: out,
        region: keep.clone(),
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{assemble, catalog, BoundaryMode, Model};
    use crate::lattice::{embed, pauli, BoxRegion, LocalOperator, Site};
    use crate::linalg::{commutator, max_abs_diff, operator_norm, tests::random_hermitian};

    fn single_site(m: Mat<c64>) -> Hamiltonian {
        Hamiltonian::from_matrix(Region::new(1, [Site::from(0)]).unwrap(), m, "h").unwrap()
    }

    fn tfi(n: usize, g: f64) -> Hamiltonian {
        let fam = catalog(Model::Tfi { j: 1.0, g }, 1).unwrap();
        assemble(&fam, BoxRegion::chain(n).unwrap().region(), BoundaryMode::Embedded, 12).unwrap()
    }

    #[test]
    fn sigma_z_and_sigma_x_spectra() {
        let sd = spectral_decompose(&single_site(pauli::z())).unwrap();
        assert_eq!(sd.eigenvalues(), &[-1.0, 1.0]);
        let sd = spectral_decompose(&single_site(pauli::x())).unwrap();
        assert!((sd.eigenvalues()[0] + 1.0).abs() < 1e-15);
        let u = sd.basis().to_complex();
        let r = 0.5f64.sqrt();
        // eigenvector of -1 is (1, -1)/sqrt 2 up to sign
        assert!((u[(0, 0)].re.abs() - r).abs() < 1e-14);
        assert!((u[(0, 0)] + u[(1, 0)]).norm() < 1e-14);
    }

    #[test]
    fn random_reconstruction_and_unitarity() {
        for seed in 0..5 {
            let m = random_hermitian(8, seed);
            let h = Hamiltonian::from_matrix(BoxRegion::chain(3).unwrap().region().clone(), m.clone(), "r").unwrap();
            let sd = spectral_decompose(&h).unwrap();
            assert!(sd.reconstruction_residual(m.as_ref()).unwrap() <= 1e-10 * sd.norm());
            let u = sd.basis().to_complex();
            let utu = u.adjoint() * &u;
            assert!(max_abs_diff(utu.as_ref(), linalg::identity(8).as_ref()) < 1e-11);
            assert!(sd.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn cache_returns_shared_decomposition() {
        let cache = SpectralCache::new();
        let h = tfi(3, 1.0);
        let a = cache.get(&h).unwrap();
        let b = cache.get(&h).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
        cache.get(&tfi(3, 1.0)).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn gibbs_single_spin() {
        let sd = spectral_decompose(&single_site(pauli::z())).unwrap();
        let rho = gibbs_state(&sd, 1.0).unwrap();
        let z = expect(&rho, pauli::z().as_ref()).unwrap();
        assert!((z.re + 1f64.tanh()).abs() < 1e-12);
        assert!((z.re + 0.7615941560).abs() < 1e-10);
        assert!(z.im.abs() < 1e-15);
    }

    #[test]
    fn beta_zero_is_tracial() {
        let h = tfi(3, 1.0);
        let sd = spectral_decompose(&h).unwrap();
        let rho = gibbs_state(&sd, 0.0).unwrap();
        assert_eq!(rho.kind(), StateKind::Tracial);
        let tr = tracial_state(h.region()).unwrap();
        assert!(max_abs_diff(rho.matrix(), tr.matrix()) < 1e-14);
    }

    #[test]
    fn gibbs_invariants_and_large_beta_limit() {
        let h = tfi(4, 1.0);
        let sd = spectral_decompose(&h).unwrap();
        for beta in [0.0, 0.3, 1.0, 5.0, 200.0] {
            let rho = gibbs_state(&sd, beta).unwrap();
            DensityMatrix::new(rho.matrix().to_owned(), h.region().clone(), rho.kind()).unwrap();
            let c = commutator(rho.matrix(), h.matrix()).unwrap();
            assert!(operator_norm(c.as_ref()).unwrap() <= 1e-11);
        }
        let g = ground_state(&sd, None).unwrap();
        let hot = gibbs_state(&sd, 10.0).unwrap();
        assert!(hot.trace_distance(&g).unwrap() < 1e-3);
    }

    #[test]
    fn gibbs_continuity_in_beta() {
        let sd = spectral_decompose(&tfi(4, 1.0)).unwrap();
        for beta in [0.2, 1.0, 3.0] {
            let a = gibbs_state(&sd, beta).unwrap();
            let mut last = f64::INFINITY;
            for db in [1e-1, 1e-2, 1e-3] {
                let d = a.trace_distance(&gibbs_state(&sd, beta + db).unwrap()).unwrap();
                assert!(d < last);
                last = d;
            }
            assert!(last < 1e-2);
        }
    }

    #[test]
    fn negative_and_nonfinite_beta_rejected() {
        let sd = spectral_decompose(&single_site(pauli::z())).unwrap();
        assert!(gibbs_state(&sd, -1.0).is_err());
        assert!(gibbs_state(&sd, f64::INFINITY).is_err());
        assert!(gibbs_state(&sd, f64::NAN).is_err());
    }

    #[test]
    fn ground_states() {
        let sd = spectral_decompose(&single_site(pauli::z())).unwrap();
        let g = ground_state(&sd, None).unwrap();
        assert_eq!(g.kind(), StateKind::Ground { degeneracy: 1 });
        assert!((g.matrix()[(1, 1)].re - 1.0).abs() < 1e-15);

        let zero = Hamiltonian::from_matrix(BoxRegion::chain(2).unwrap().region().clone(), Mat::zeros(4, 4), "0").unwrap();
        let sd = spectral_decompose(&zero).unwrap();
        let g = ground_state(&sd, None).unwrap();
        assert_eq!(g.kind(), StateKind::Ground { degeneracy: 4 });
        assert!(max_abs_diff(g.matrix(), tracial_state(zero.region()).unwrap().matrix()) < 1e-15);

        // classical Ising, free chain of 3: all-up and all-down
        let fam = catalog(Model::Tfi { j: 1.0, g: 0.0 }, 1).unwrap();
        let h = assemble(&fam, BoxRegion::chain(3).unwrap().region(), BoundaryMode::Free, 12).unwrap();
        let sd = spectral_decompose(&h).unwrap();
        let g = ground_state(&sd, None).unwrap();
        assert_eq!(g.kind(), StateKind::Ground { degeneracy: 2 });
        assert!((g.matrix()[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!((g.matrix()[(7, 7)].re - 0.5).abs() < 1e-14);
    }

    #[test]
    fn expectations() {
        let region = BoxRegion::chain(2).unwrap().region().clone();
        let tr = tracial_state(&region).unwrap();
        let z0 = embed(&LocalOperator::single_site(Site::from(0), pauli::z(), "z").unwrap(), &region).unwrap();
        assert!(expect(&tr, z0.as_ref()).unwrap().norm() < 1e-15);
        assert!((expect(&tr, linalg::identity(4).as_ref()).unwrap().re - 1.0).abs() < 1e-15);
        let a = random_hermitian(4, 1);
        let b = random_hermitian(4, 2);
        let ab = expect(&tr, (&a * &b).as_ref()).unwrap();
        let ba = expect(&tr, (&b * &a).as_ref()).unwrap();
        assert!((ab - ba).norm() < 1e-12);
        assert!(expect(&tr, linalg::identity(2).as_ref()).is_err());
    }

    #[test]
    fn time_average_of_plus_state() {
        let h = single_site(pauli::z());
        let sd = spectral_decompose(&h).unwrap();
        let r = 0.5f64.sqrt();
        let plus = DensityMatrix::pure(&[c64::new(r, 0.0), c64::new(r, 0.0)], h.region().clone()).unwrap();
        let avg = time_averaged_state(&plus, &sd, TimeAverage::trapezoid(std::f64::consts::PI)).unwrap();
        let half = tracial_state(h.region()).unwrap();
        assert!(max_abs_diff(avg.matrix(), half.matrix()) < 1e-14);
        let deph = time_averaged_state(&plus, &sd, TimeAverage::Dephase).unwrap();
        assert!(max_abs_diff(deph.matrix(), half.matrix()) < 1e-15);
    }

    #[test]
    fn time_average_fixes_invariant_states_and_dephasing_commutes() {
        let h = tfi(3, 0.8);
        let sd = spectral_decompose(&h).unwrap();
        let rho = gibbs_state(&sd, 0.7).unwrap();
        let avg = time_averaged_state(&rho, &sd, TimeAverage::trapezoid(1.3)).unwrap();
        assert!(max_abs_diff(avg.matrix(), rho.matrix()) < 1e-12);

        let v: Vec<c64> = (0..16).map(|i| c64::new((i as f64).cos(), (i as f64 * 0.3).sin())).collect();
        let psi = DensityMatrix::pure(&v, h.region().clone()).unwrap();
        let d = time_averaged_state(&psi, &sd, TimeAverage::Dephase).unwrap();
        let c = commutator(d.matrix(), h.matrix()).unwrap();
        assert!(operator_norm(c.as_ref()).unwrap() <= 1e-11);
        assert!(time_averaged_state(&psi, &sd, TimeAverage::Trapezoid { period: 0.0, points: 8 }).is_err());
        assert!(time_averaged_state(&psi, &sd, TimeAverage::Trapezoid { period: 1.0, points: 1 }).is_err());
    }

    #[test]
    fn partial_trace_of_product_state() {
        let region = BoxRegion::chain(3).unwrap().region().clone();
        // |0> (x) |+> (x) |1>
        let r = 0.5f64.sqrt();
        let mut v = vec![ZERO; 8];
        v[0b001] = c64::new(r, 0.0);
        v[0b011] = c64::new(r, 0.0);
        let rho = DensityMatrix::pure(&v, region).unwrap();
        let keep = Region::new(1, [Site::from(1)]).unwrap();
        let red = partial_trace(&rho, &keep).unwrap();
        let plus = Mat::from_fn(2, 2, |_, _| c64::new(0.5, 0.0));
        assert!(max_abs_diff(red.matrix(), plus.as_ref()) < 1e-15);
        let keep = Region::new(1, [Site::from(0), Site::from(2)]).unwrap();
        let red = partial_trace(&rho, &keep).unwrap();
        assert!((red.matrix()[(1, 1)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn partial_trace_preserves_local_expectations() {
        let h = tfi(4, 1.0);
        let sd = spectral_decompose(&h).unwrap();
        let rho = gibbs_state(&sd, 0.9).unwrap();
        let keep = Region::new(1, [Site::from(1), Site::from(2)]).unwrap();
        let red = partial_trace(&rho, &keep).unwrap();
        let op = LocalOperator::new(
            vec![Site::from(1), Site::from(2)],
            random_hermitian(4, 9),
            "r",
        )
        .unwrap();
        let full = expect(&rho, embed(&op, h.region()).unwrap().as_ref()).unwrap();
        let small = expect(&red, embed(&op, &keep).unwrap().as_ref()).unwrap();
        assert!((full - small).norm() < 1e-12);
    }

    #[test]
    fn beta_serde() {
        let b: Vec<Beta> = serde_json::from_str(r#"[0, 1.5, "inf"]"#).unwrap();
        assert_eq!(b, vec![Beta::Finite(0.0), Beta::Finite(1.5), Beta::Infinite]);
        assert_eq!(serde_json::to_string(&b).unwrap(), r#"[0.0,1.5,"inf"]"#);
        assert!(serde_json::from_str::<Beta>(r#""hot""#).is_err());
    }
}
