//! Temporal correlation functions, KMS boundary values, time invariance and
//! the ordered triple-limit scan.
//!
//! Everything is evaluated in the eigenbasis of the generating Hamiltonian
//! through one kernel, `f(t) = sum_{mn} e^{iE_m t} A_{mn} e^{-iE_n t} C_{nm}`,
//! with `C` chosen per quantity.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::hamiltonian::{assemble, BoundaryMode, Hamiltonian, TermFamily};
use crate::lattice::{
    averaged_operator, BoxRegion, LocalOperator, LocalSum, MemberPolicy, OperatorFamily, Region,
};
use crate::linalg::{self, c64, Mat, MatRef, ZERO};
use crate::states::{
    equilibrium_weights, gibbs_weights, partial_trace, Beta, DensityMatrix, SpectralCache,
    SpectralData, StateKind,
};
use crate::dynamics::TimeGrid;

fn serialize_complex<S: Serializer>(v: &[c64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|z| [z.re, z.im]))
}

/// Sampled f(t) with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationSeries {
    pub times: Vec<f64>,
    /// [re, im] pairs when serialized
    #[serde(serialize_with = "serialize_complex")]
    pub values: Vec<c64>,
    pub beta: Beta,
    pub state: &'static str,
    /// |Lambda| of the observables
    pub lambda_size: usize,
    /// sites the Hamiltonian acts on
    pub region_size: usize,
    pub a_label: String,
    pub b_label: String,
    pub hamiltonian: String,
    /// Hamiltonian generating the dynamics when it differs from the state's
    pub dynamics: Option<String>,
    pub sup_deviation: f64,
}

impl CorrelationSeries {
    /// f at t = 0; the grid always contains it.
    pub fn f0(&self) -> c64 {
        let i = self.times.iter().position(|t| *t == 0.0).unwrap_or(0);
        self.values[i]
    }

    /// |f(t) - f(0)| at each sample.
    pub fn deviations(&self) -> Vec<f64> {
        let f0 = self.f0();
        self.values.iter().map(|v| (v - f0).norm()).collect()
    }

    pub fn recompute_sup_deviation(&self) -> f64 {
        self.deviations().into_iter().fold(0.0, f64::max)
    }
}

/// f(t) = sum_{mn} e^{iE_m t} A_{mn} e^{-iE_n t} C_{nm} at each time.
fn series_kernel(e: &[f64], a: MatRef<'_, c64>, c: MatRef<'_, c64>, times: &[f64], exec: ExecMode) -> Vec<c64> {
    let n = e.len();
    // P_{mn} = A_{mn} C_{nm}, stored column-major so the inner sum over n is strided
    // once; transpose to make it contiguous.
    let p = Mat::from_fn(n, n, |nn, m| a[(m, nn)] * c[(nn, m)]);
    exec::map(exec, times, |&t| {
        let phase: Vec<c64> = e.iter().map(|x| c64::cis(-x * t)).collect();
        let mut total = ZERO;
        for m in 0..n {
            let col = p.col(m);
            let mut inner = ZERO;
            for (nn, v) in col.iter().enumerate() {
                inner += v * phase[nn];
            }
            total += inner * phase[m].conj();
        }
        total
    })
}

/// Sum of multiples of the identity: invariant under every evolution.
fn is_scalar(sum: &LocalSum) -> bool {
    sum.terms().iter().all(|(op, _)| {
        let m = op.matrix();
        let d = m[(0, 0)];
        (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)] == if i == j { d } else { ZERO }))
    })
}

/// The kernel, skipping the time dependence when A is a scalar.
fn correlation_values(
    e: &[f64],
    a_scalar: bool,
    a: MatRef<'_, c64>,
    c: MatRef<'_, c64>,
    times: &[f64],
    exec: ExecMode,
) -> Vec<c64> {
    if a_scalar {
        let f0 = series_kernel(e, a, c, &[0.0], exec)[0];
        vec![f0; times.len()]
    } else {
        series_kernel(e, a, c, times, exec)
    }
}

fn averaged(
    family: &dyn OperatorFamily,
    lambda: &Region,
    region: &Region,
) -> Result<LocalSum> {
    averaged_operator(family, lambda, region, MemberPolicy::Require)
}

#[allow(clippy::too_many_arguments)]
fn series(
    times: &[f64],
    values: Vec<c64>,
    beta: Beta,
    state: StateKind,
    lambda_size: usize,
    region_size: usize,
    a: &dyn OperatorFamily,
    b: &dyn OperatorFamily,
    hamiltonian: String,
    dynamics: Option<String>,
) -> CorrelationSeries {
    let mut s = CorrelationSeries {
        times: times.to_vec(),
        values,
        beta,
        state: state.name(),
        lambda_size,
        region_size,
        a_label: a.label(),
        b_label: b.label(),
        hamiltonian,
        dynamics,
        sup_deviation: 0.0,
    };
    s.sup_deviation = s.recompute_sup_deviation();
    s
}

/// f(t) = rho(alpha_t(A_Lambda) B_Lambda) with state and dynamics from the
/// same Hamiltonian; Lambda is the region the Hamiltonian was assembled for.
pub fn wok_correlation(
    sd: &SpectralData,
    beta: Beta,
    a: &dyn OperatorFamily,
    b: &dyn OperatorFamily,
    grid: &TimeGrid,
    exec: ExecMode,
) -> Result<CorrelationSeries> {
    beta.validate()?;
    let (w, kind) = equilibrium_weights(sd, beta)?;
    let a_sum = averaged(a, sd.lambda(), sd.region())?;
    let ae = sd.sum_to_eigenbasis(&a_sum)?;
    let be = sd.sum_to_eigenbasis(&averaged(b, sd.lambda(), sd.region())?)?;
    let n = sd.dim();
    let c = Mat::from_fn(n, n, |i, j| be[(i, j)] * w[j]);
    let values = correlation_values(sd.eigenvalues(), is_scalar(&a_sum), ae.as_ref(), c.as_ref(), grid.times(), exec);
    Ok(series(
        grid.times(),
        values,
        beta,
        kind,
        sd.lambda().len(),
        sd.region().len(),
        a,
        b,
        sd.label().to_string(),
        None,
    ))
}

/// f(t) = tr(rho_{H1} e^{itH2} A e^{-itH2} B); both Hamiltonians on one region.
pub fn cross_hamiltonian_correlation(
    state_sd: &SpectralData,
    dynamics_sd: &SpectralData,
    beta: Beta,
    a: &dyn OperatorFamily,
    b: &dyn OperatorFamily,
    grid: &TimeGrid,
    exec: ExecMode,
) -> Result<CorrelationSeries> {
    beta.validate()?;
    if state_sd.region() != dynamics_sd.region() || state_sd.lambda() != dynamics_sd.lambda() {
        return Err(Error::Nesting(
            "state and dynamics Hamiltonians act on different regions".into(),
        ));
    }
    let (w, kind) = equilibrium_weights(state_sd, beta)?;
    let rho = state_sd.weighted_projector(&w);
    let rho2 = dynamics_sd.to_eigenbasis(rho.as_ref())?;
    let a_sum = averaged(a, dynamics_sd.lambda(), dynamics_sd.region())?;
    let ae = dynamics_sd.sum_to_eigenbasis(&a_sum)?;
    let be = dynamics_sd.sum_to_eigenbasis(&averaged(b, dynamics_sd.lambda(), dynamics_sd.region())?)?;
    let c = &be * &rho2;
    let values = correlation_values(dynamics_sd.eigenvalues(), is_scalar(&a_sum), ae.as_ref(), c.as_ref(), grid.times(), exec);
    Ok(series(
        grid.times(),
        values,
        beta,
        kind,
        dynamics_sd.lambda().len(),
        dynamics_sd.region().len(),
        a,
        b,
        state_sd.label().to_string(),
        Some(dynamics_sd.label().to_string()),
    ))
}

/// Normalized random Hermitian operators on one or two neighbouring sites of
/// `lambda`, paired up.
pub fn random_probes(lambda: &Region, count: usize, seed: u64) -> Result<Vec<(LocalOperator, LocalOperator)>> {
    if lambda.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Result<LocalOperator> {
        let x = lambda.sites()[rng.random_range(0..lambda.len())].clone();
        let dim = x.dimension();
        let mut support = vec![x.clone()];
        if rng.random_bool(0.5) {
            let axis = rng.random_range(0..dim);
            let mut e = vec![0i64; dim];
            e[axis] = 1;
            let y = x.shifted(&e);
            if lambda.contains(&y) {
                support.push(y);
            }
        }
        let k = 1usize << support.len();
        let g = Mat::from_fn(k, k, |_, _| {
            c64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng))
        });
        let h = Mat::from_fn(k, k, |i, j| g[(i, j)] + g[(j, i)].conj());
        let nrm = linalg::operator_norm(h.as_ref())?;
        let h = linalg::scale(h.as_ref(), c64::new(1.0 / nrm, 0.0));
        LocalOperator::hermitian(support, h, "probe")
    };
    (0..count)
        .map(|_| Ok((draw(&mut rng)?, draw(&mut rng)?)))
        .collect()
}

/// Probe pairs transformed to an eigenbasis once, reusable across states.
pub struct PreparedProbes {
    a: Vec<Mat<c64>>,
    b: Vec<Mat<c64>>,
}

impl PreparedProbes {
    pub fn new(sd: &SpectralData, probes: &[(LocalOperator, LocalOperator)], exec: ExecMode) -> Result<Self> {
        let mats = exec::try_map(exec, probes, |(a, b)| {
            let ta = sd.sum_to_eigenbasis(&LocalSum::single(a.clone(), sd.region().clone())?)?;
            let tb = sd.sum_to_eigenbasis(&LocalSum::single(b.clone(), sd.region().clone())?)?;
            Ok::<_, Error>((ta, tb))
        })?;
        let (a, b) = mats.into_iter().unzip();
        Ok(PreparedProbes { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KmsResidualReport {
    pub beta: f64,
    pub state: &'static str,
    pub times: Vec<f64>,
    pub probes: usize,
    /// |F(t + i beta) - phi(alpha_t(B) A)|, indexed [probe][time]
    pub upper: Vec<Vec<f64>>,
    /// |F(t) - phi(A alpha_t(B))|, indexed [probe][time]
    pub lower: Vec<Vec<f64>>,
    pub max_upper: f64,
    pub max_lower: f64,
    pub max_residual: f64,
}

/// KMS boundary values for the state with eigenbasis weights `w` at inverse
/// temperature `beta`. The identity holds exactly only for Gibbs weights.
pub fn kms_check_weights(
    sd: &SpectralData,
    w: &[f64],
    state: StateKind,
    beta: f64,
    probes: &PreparedProbes,
    times: &[f64],
    exec: ExecMode,
) -> Result<KmsResidualReport> {
    Beta::Finite(beta).validate()?;
    let e = sd.eigenvalues();
    let n = e.len();
    if w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: w.len() });
    }
    let e0 = e[0];
    // F(t + i beta) = sum_m u_m e^{-iE_m t} sum_n A_mn B_nm v_n e^{iE_n t}
    let u: Vec<f64> = w
        .iter()
        .zip(e)
        .map(|(wm, em)| if *wm > 0.0 { (wm.ln() + beta * (em - e0)).exp() } else { 0.0 })
        .collect();
    let v: Vec<f64> = e.iter().map(|en| (-beta * (en - e0)).exp()).collect();

    let idx: Vec<usize> = (0..probes.len()).collect();
    let rows = exec::map(exec, &idx, |&k| {
        let (a, b) = (&probes.a[k], &probes.b[k]);
        // column m of P holds A_mn B_nm over n
        let p = Mat::from_fn(n, n, |nn, m| a[(m, nn)] * b[(nn, m)]);
        let at = a.transpose().to_owned();
        let mut upper = Vec::with_capacity(times.len());
        let mut lower = Vec::with_capacity(times.len());
        for &t in times {
            let ph: Vec<c64> = e.iter().map(|x| c64::cis(x * t)).collect();
            let mut f_shift = ZERO;
            let mut phi_ba = ZERO;
            let mut f_t = ZERO;
            for m in 0..n {
                let col = p.col(m);
                let mut s_v = ZERO;
                let mut s_w = ZERO;
                let mut s_1 = ZERO;
                for (nn, pv) in col.iter().enumerate() {
                    let z = pv * ph[nn];
                    s_v += z * v[nn];
                    s_w += z * w[nn];
                    s_1 += z;
                }
                let back = ph[m].conj();
                f_shift += s_v * back * u[m];
                phi_ba += s_w * back;
                f_t += s_1 * back * w[m];
            }
            // phi(A alpha_t(B)) row by row through the evolved B
            let mut phi_ab = ZERO;
            for m in 0..n {
                if w[m] == 0.0 {
                    continue;
                }
                let row = at.col(m);
                let bcol = b.col(m);
                let mut acc = ZERO;
                for nn in 0..n {
                    acc += row[nn] * (ph[nn] * bcol[nn]);
                }
                phi_ab += acc * ph[m].conj() * w[m];
            }
            upper.push((f_shift - phi_ba).norm());
            lower.push((f_t - phi_ab).norm());
        }
        (upper, lower)
    });
    let (upper, lower): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let fold = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().fold(0.0, f64::max);
    let (max_upper, max_lower) = (fold(&upper), fold(&lower));
    Ok(KmsResidualReport {
        beta,
        state: state.name(),
        times: times.to_vec(),
        probes: probes.len(),
        upper,
        lower,
        max_upper,
        max_lower,
        max_residual: max_upper.max(max_lower),
    })
}

/// KMS check of the Gibbs state of `sd` at `beta`.
pub fn kms_check(
    sd: &SpectralData,
    beta: f64,
    probes: &PreparedProbes,
    times: &[f64],
    exec: ExecMode,
) -> Result<KmsResidualReport> {
    let w = gibbs_weights(sd.eigenvalues(), beta)?;
    let kind = if beta == 0.0 { StateKind::Tracial } else { StateKind::Gibbs { beta } };
    kms_check_weights(sd, &w, kind, beta, probes, times, exec)
}

/// max over probes and times of |rho(alpha_t(A)) - rho(A)|.
pub fn time_invariance_residual(
    rho: &DensityMatrix,
    sd: &SpectralData,
    probes: &[Mat<c64>],
    times: &[f64],
    exec: ExecMode,
) -> Result<f64> {
    let r = sd.to_eigenbasis(rho.matrix())?;
    let mut worst = 0.0f64;
    for a in probes {
        let ae = sd.to_eigenbasis(a.as_ref())?;
        let f = series_kernel(sd.eigenvalues(), ae.as_ref(), r.as_ref(), times, exec);
        // reference value at t = 0 computed directly
        let f0 = crate::states::expect(rho, a.as_ref())?;
        worst = f.iter().map(|v| (v - f0).norm()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Box with `n` sites per axis, nested as n grows: origin -floor((n-1)/2).
pub fn nested_box(dimension: usize, n: usize) -> Result<BoxRegion> {
    if n == 0 {
        return Err(Error::invalid("size", "must be positive"));
    }
    let lo = -(((n - 1) / 2) as i64);
    BoxRegion::new(vec![lo; dimension], vec![n; dimension])
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub t: f64,
    pub re_f: f64,
    pub im_f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanTable {
    pub beta: Beta,
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    /// Series for one (n3, n2, n1) triple.
    pub fn series(&self, n3: usize, n2: usize, n1: usize) -> Vec<c64> {
        self.rows
            .iter()
            .filter(|r| (r.n1, r.n2, r.n3) == (n1, n2, n3))
            .map(|r| c64::new(r.re_f, r.im_f))
            .collect()
    }
}

/// rho_{Lambda1}(alpha_{Lambda2,t}(A_{Lambda3}) B_{Lambda3}) for each triple
/// (n3, n2, n1), with Lambda_k the nested box of n_k sites per axis. The
/// state is reduced to the region of the Lambda2 Hamiltonian, where the
/// dynamics act.
#[allow(clippy::too_many_arguments)]
pub fn ordered_limit_scan(
    terms: &TermFamily,
    a: &dyn OperatorFamily,
    b: &dyn OperatorFamily,
    triples: &[(usize, usize, usize)],
    beta: Beta,
    grid: &TimeGrid,
    mode: BoundaryMode,
    site_cap: usize,
    exec: ExecMode,
) -> Result<ScanTable> {
    beta.validate()?;
    for &(n3, n2, n1) in triples {
        if !(n3 <= n2 && n2 <= n1) {
            return Err(Error::Nesting(format!(
                "need n3 <= n2 <= n1, got ({n3}, {n2}, {n1})"
            )));
        }
    }
    let dim = terms.dimension();
    let mut sizes: Vec<usize> = triples.iter().flat_map(|&(_, n2, n1)| [n2, n1]).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let hams: BTreeMap<usize, Hamiltonian> = sizes
        .iter()
        .map(|&n| Ok((n, assemble(terms, nested_box(dim, n)?.region(), mode, site_cap)?)))
        .collect::<Result<_>>()?;
    let cache = SpectralCache::new();
    let spectra: BTreeMap<usize, Arc<SpectralData>> = exec::try_map(exec, &sizes, |n| {
        Ok::<_, Error>((*n, cache.get(&hams[n])?))
    })?
    .into_iter()
    .collect();

    let mut rows = Vec::new();
    for &(n3, n2, n1) in triples {
        let sd1 = &spectra[&n1];
        let sd2 = &spectra[&n2];
        if !sd2.region().is_subset_of(sd1.region()) {
            return Err(Error::Nesting(format!(
                "dynamics region for n2 = {n2} is not inside the state region for n1 = {n1}"
            )));
        }
        let (w, kind) = equilibrium_weights(sd1, beta)?;
        let rho1 = DensityMatrix::new(
            {
                let m = sd1.weighted_projector(&w);
                Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
            },
            sd1.region().clone(),
            kind,
        )?;
        let rho = partial_trace(&rho1, sd2.region())?;
        let lambda3 = nested_box(dim, n3)?;
        let a_sum = averaged(a, lambda3.region(), sd2.region())?;
        let ae = sd2.sum_to_eigenbasis(&a_sum)?;
        let be = sd2.sum_to_eigenbasis(&averaged(b, lambda3.region(), sd2.region())?)?;
        let r2 = sd2.to_eigenbasis(rho.matrix())?;
        let c = &be * &r2;
        let values = correlation_values(sd2.eigenvalues(), is_scalar(&a_sum), ae.as_ref(), c.as_ref(), grid.times(), exec);
        for (t, v) in grid.times().iter().zip(values) {
            rows.push(ScanRow {
                n1,
                n2,
                n3,
                t: *t,
                re_f: v.re,
                im_f: v.im,
            });
        }
    }
    Ok(ScanTable { beta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve;
    use crate::hamiltonian::{catalog, Model};
    use crate::lattice::{embed, pauli, CovariantFamily, Site};
    use crate::states::{expect, gibbs_state, ground_state, spectral_decompose, tracial_state};

    fn family(m: Mat<c64>, label: &str) -> CovariantFamily {
        CovariantFamily::single_site(1, m, label).unwrap()
    }

    fn sd(model: Model, n: usize, mode: BoundaryMode) -> SpectralData {
        let fam = catalog(model, 1).unwrap();
        spectral_decompose(&assemble(&fam, BoxRegion::chain(n).unwrap().region(), mode, 12).unwrap()).unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::uniform(0.0, 2.0, 41).unwrap()
    }

    #[test]
    fn identity_family_gives_one() {
        let s = sd(Model::Tfi { j: 1.0, g: 1.0 }, 4, BoundaryMode::Embedded);
        let id = family(pauli::identity(), "1");
        let f = wok_correlation(&s, Beta::Finite(1.0), &id, &id, &grid(), ExecMode::Parallel).unwrap();
        assert!(f.values.iter().all(|v| (v - c64::new(1.0, 0.0)).norm() < 1e-12));
        assert!(f.sup_deviation < 1e-12);
    }

    #[test]
    fn classical_ising_is_constant() {
        let s = sd(Model::Tfi { j: 1.0, g: 0.0 }, 5, BoundaryMode::Embedded);
        let z = family(pauli::z(), "z");
        for beta in [Beta::Finite(1.0), Beta::Infinite] {
            let f = wok_correlation(&s, beta, &z, &z, &grid(), ExecMode::Parallel).unwrap();
            assert!(f.sup_deviation < 1e-12, "{}", f.sup_deviation);
        }
    }

    #[test]
    fn wok_matches_dense_evaluation() {
        let s = sd(Model::Tfi { j: 1.0, g: 1.0 }, 3, BoundaryMode::Embedded);
        let z = family(pauli::z(), "z");
        let x = family(pauli::x(), "x");
        let f = wok_correlation(&s, Beta::Finite(0.7), &z, &x, &grid(), ExecMode::Sequential).unwrap();
        let rho = gibbs_state(&s, 0.7).unwrap();
        let a = averaged_operator(&z, s.lambda(), s.region(), MemberPolicy::Require).unwrap().to_dense();
        let b = averaged_operator(&x, s.lambda(), s.region(), MemberPolicy::Require).unwrap().to_dense();
        for (t, v) in f.times.iter().zip(&f.values) {
            let at = evolve(&s, a.as_ref(), *t).unwrap();
            let expect_v = expect(&rho, (&at * &b).as_ref()).unwrap();
            assert!((expect_v - v).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_symmetry_in_time() {
        let s = sd(Model::Xxz { j: 1.0, delta: 0.5 }, 4, BoundaryMode::Embedded);
        let z = family(pauli::z(), "z");
        let g = TimeGrid::uniform(-1.5, 1.5, 31).unwrap();
        let f = wok_correlation(&s, Beta::Finite(0.8), &z, &z, &g, ExecMode::Parallel).unwrap();
        let n = f.values.len();
        for k in 0..n {
            assert!((f.values[k] - f.values[n - 1 - k].conj()).norm() < 1e-10);
        }
    }

    #[test]
    fn cross_hamiltonian_cases() {
        let region = Region::new(1, [Site::from(0)]).unwrap();
        let h1 = Hamiltonian::from_matrix(region.clone(), pauli::z(), "z-field").unwrap();
        let h2 = Hamiltonian::from_matrix(region, pauli::x(), "x-field").unwrap();
        let (s1, s2) = (spectral_decompose(&h1).unwrap(), spectral_decompose(&h2).unwrap());
        let z = family(pauli::z(), "z");
        let beta = 0.6;
        let f = cross_hamiltonian_correlation(&s1, &s2, Beta::Finite(beta), &z, &z, &grid(), ExecMode::Parallel).unwrap();
        // alpha_t(Z) Z = cos 2t + i sin 2t X, and <X> = 0 in a diagonal state
        let rho = gibbs_state(&s1, beta).unwrap();
        for (t, v) in f.times.iter().zip(&f.values) {
            let at = evolve(&s2, pauli::z().as_ref(), *t).unwrap();
            let d = expect(&rho, (&at * pauli::z()).as_ref()).unwrap();
            assert!((d - v).norm() < 1e-13);
            let closed = c64::new((2.0 * t).cos(), 0.0);
            assert!((closed - v).norm() < 1e-12, "t={t} {v} vs {closed}");
        }
        assert!(f.sup_deviation > 0.5);

        // same Hamiltonian reproduces wok
        let s = sd(Model::Tfi { j: 1.0, g: 1.0 }, 3, BoundaryMode::Embedded);
        let x = family(pauli::x(), "x");
        let c = cross_hamiltonian_correlation(&s, &s, Beta::Finite(1.0), &z, &x, &grid(), ExecMode::Parallel).unwrap();
        let w = wok_correlation(&s, Beta::Finite(1.0), &z, &x, &grid(), ExecMode::Parallel).unwrap();
        for (p, q) in c.values.iter().zip(&w.values) {
            assert!((p - q).norm() < 1e-12);
        }

        // beta = 0 is the tracial two-point function
        let s2 = sd(Model::Xxz { j: 1.0, delta: 1.0 }, 3, BoundaryMode::Embedded);
        let c = cross_hamiltonian_correlation(&s, &s2, Beta::Finite(0.0), &z, &x, &grid(), ExecMode::Parallel).unwrap();
        let tr = tracial_state(s.region()).unwrap();
        let a = averaged_operator(&z, s.lambda(), s.region(), MemberPolicy::Require).unwrap().to_dense();
        let b = averaged_operator(&x, s.lambda(), s.region(), MemberPolicy::Require).unwrap().to_dense();
        for (t, v) in c.times.iter().zip(&c.values) {
            let at = evolve(&s2, a.as_ref(), *t).unwrap();
            assert!((expect(&tr, (&at * &b).as_ref()).unwrap() - v).norm() < 1e-12);
        }
    }

    #[test]
    fn kms_exact_for_gibbs_and_fails_for_ground() {
        let s = sd(Model::Tfi { j: 1.0, g: 1.0 }, 5, BoundaryMode::Embedded);
        let probes = random_probes(s.lambda(), 6, 42).unwrap();
        let prepared = PreparedProbes::new(&s, &probes, ExecMode::Parallel).unwrap();
        let times = grid();
        for beta in [0.0, 0.5, 1.0, 5.0] {
            let r = kms_check(&s, beta, &prepared, times.times(), ExecMode::Parallel).unwrap();
            assert!(r.max_residual <= 1e-9, "beta={beta}: {}", r.max_residual);
        }
        let (w, kind) = equilibrium_weights(&s, Beta::Infinite).unwrap();
        let bad = kms_check_weights(&s, &w, kind, 1.0, &prepared, times.times(), ExecMode::Parallel).unwrap();
        assert!(bad.max_upper > 1e-2, "{}", bad.max_upper);
        assert_eq!(bad.state, "ground");
    }

    #[test]
    fn kms_boundary_value_matches_dense_route() {
        let s = sd(Model::Xxz { j: 1.0, delta: 1.0 }, 3, BoundaryMode::Embedded);
        let probes = random_probes(s.lambda(), 2, 7).unwrap();
        let prepared = PreparedProbes::new(&s, &probes, ExecMode::Sequential).unwrap();
        let beta = 0.9;
        let r = kms_check(&s, beta, &prepared, &[0.0, 0.4], ExecMode::Sequential).unwrap();
        assert!(r.max_residual < 1e-12);
        // phi(alpha_t(B) A) densely
        let rho = gibbs_state(&s, beta).unwrap();
        let (a, b) = &probes[0];
        let ad = embed(a, s.region()).unwrap();
        let bd = embed(b, s.region()).unwrap();
        let bt = evolve(&s, bd.as_ref(), 0.4).unwrap();
        let dense = expect(&rho, (&bt * &ad).as_ref()).unwrap();
        // F(t + i beta) from its definition: tr(rho A e^{i(t+i beta)H} B e^{-i(t+i beta)H})
        let e = s.eigenvalues();
        let ae = &prepared.a[0];
        let be = &prepared.b[0];
        let w = gibbs_weights(e, beta).unwrap();
        let mut f = ZERO;
        for m in 0..e.len() {
            for n in 0..e.len() {
                let z = c64::new(0.4, beta) * (e[n] - e[m]);
                f += ae[(m, n)] * be[(n, m)] * w[m] * (c64::new(0.0, 1.0) * z).exp();
            }
        }
        assert!((f - dense).norm() < 1e-12);
    }

    #[test]
    fn time_invariance() {
        let s = sd(Model::Tfi { j: 1.0, g: 1.0 }, 4, BoundaryMode::Embedded);
        let probes: Vec<Mat<c64>> = random_probes(s.lambda(), 3, 1)
            .unwrap()
            .into_iter()
            .map(|(a, _)| embed(&a, s.region()).unwrap())
            .collect();
        let times = grid();
        for rho in [
            gibbs_state(&s, 1.0).unwrap(),
            ground_state(&s, None).unwrap(),
            tracial_state(s.region()).unwrap(),
        ] {
            let r = time_invariance_residual(&rho, &s, &probes, times.times(), ExecMode::Parallel).unwrap();
            assert!(r <= 1e-10, "{:?}: {r}", rho.kind());
        }
        // |+><+| under a z-field: <X>(t) = cos 2t
        let region = Region::new(1, [Site::from(0)]).unwrap();
        let h = Hamiltonian::from_matrix(region.clone(), pauli::z(), "z").unwrap();
        let sz = spectral_decompose(&h).unwrap();
        let r = 0.5f64.sqrt();
        let plus = DensityMatrix::pure(&[c64::new(r, 0.0), c64::new(r, 0.0)], region).unwrap();
        let period = TimeGrid::uniform(0.0, std::f64::consts::PI, 65).unwrap();
        let res = time_invariance_residual(&plus, &sz, &[pauli::x()], period.times(), ExecMode::Parallel).unwrap();
        assert!((res - 2.0).abs() < 1e-12);
        let res = time_invariance_residual(&plus, &sz, &[linalg::identity(2)], period.times(), ExecMode::Parallel).unwrap();
        assert!(res < 1e-15);
    }

    #[test]
    fn nested_boxes() {
        let b = nested_box(1, 4).unwrap();
        assert_eq!(b.origin(), &[-1]);
        assert_eq!(b.len(), 4);
        for n in 1..8 {
            assert!(nested_box(1, n).unwrap().region().is_subset_of(nested_box(1, n + 1).unwrap().region()));
        }
    }

    #[test]
    fn scan_consistency() {
        let terms = catalog(Model::Tfi { j: 1.0, g: 1.0 }, 1).unwrap();
        let z = family(pauli::z(), "z");
        let g = TimeGrid::uniform(0.0, 2.0, 11).unwrap();
        let table = ordered_limit_scan(
            &terms,
            &z,
            &z,
            &[(4, 4, 4), (2, 4, 6), (2, 6, 6), (2, 2, 6)],
            Beta::Finite(1.0),
            &g,
            BoundaryMode::Embedded,
            12,
            ExecMode::Parallel,
        )
        .unwrap();
        // equal sizes reproduce the wok value
        let h = assemble(&terms, nested_box(1, 4).unwrap().region(), BoundaryMode::Embedded, 12).unwrap();
        let w = wok_correlation(&spectral_decompose(&h).unwrap(), Beta::Finite(1.0), &z, &z, &g, ExecMode::Parallel).unwrap();
        for (p, q) in table.series(4, 4, 4).iter().zip(&w.values) {
            assert!((p - q).norm() < 1e-12);
        }
        // t = 0 independent of n2
        let a = table.series(2, 4, 6)[0];
        let b = table.series(2, 6, 6)[0];
        let c = table.series(2, 2, 6)[0];
        assert!((a - b).norm() < 1e-12 && (a - c).norm() < 1e-12);
        assert!(ordered_limit_scan(&terms, &z, &z, &[(4, 2, 6)], Beta::Finite(1.0), &g, BoundaryMode::Embedded, 12, ExecMode::Parallel).is_err());
    }
}
