//! Cut-off Heisenberg dynamics, nested-volume discrepancies and commutator
//! light cones.
//!
//! Norms of evolved operators on large regions are computed matrix-free:
//! `alpha_t(A) v = U e^{iEt} U^dagger A U e^{-iEt} U^dagger v`, batched over
//! many (operator, time) jobs so that each Lanczos iteration is a handful of
//! dense products with the eigenvector matrix.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::hamiltonian::{assemble, BoundaryMode, Hamiltonian, TermFamily};
use crate::lattice::{
    averaged_operator, BoxRegion, LocalOperator, LocalSum, MemberPolicy, OperatorFamily, Region,
    Site, SubregionMap, DEFAULT_LOCAL_DIM,
};
use crate::linalg::{self, batched_hermitian_norms, c64, LanczosOptions, Mat, MatRef, Unitary, I, ZERO};
use crate::states::{spectral_decompose, SpectralData};

/// Strictly ascending sample times containing t = 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("time grid", "non-finite time"));
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("time grid", "times must be strictly ascending"));
        }
        if !times.contains(&0.0) {
            return Err(Error::invalid("time grid", "must contain t = 0"));
        }
        Ok(TimeGrid(times))
    }

    /// `points` uniform samples on [t_min, t_max].
    pub fn uniform(t_min: f64, t_max: f64, points: usize) -> Result<Self> {
        if points < 2 || t_max.partial_cmp(&t_min) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::invalid(
                "time grid",
                "need at least 2 points and t_max > t_min",
            ));
        }
        let h = (t_max - t_min) / (points - 1) as f64;
        let mut times: Vec<f64> = (0..points).map(|k| t_min + k as f64 * h).collect();
        // snap the sample nearest zero so that symmetric grids hit it exactly
        if let Some(z) = times.iter_mut().find(|t| t.abs() < 1e-12 * h) {
            *z = 0.0;
        }
        TimeGrid::new(times)
    }

    /// `points` (odd) uniform samples on [-t0, t0].
    pub fn symmetric(t0: f64, points: usize) -> Result<Self> {
        if points % 2 == 0 {
            return Err(Error::invalid("points", "a symmetric grid needs an odd count"));
        }
        TimeGrid::uniform(-t0, t0, points)
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Spectral data of the generating Hamiltonian plus a time grid.
#[derive(Debug, Clone)]
pub struct EvolutionContext {
    pub spectral: Arc<SpectralData>,
    pub grid: TimeGrid,
}

impl EvolutionContext {
    pub fn new(spectral: Arc<SpectralData>, grid: TimeGrid) -> Self {
        EvolutionContext { spectral, grid }
    }

    pub fn region(&self) -> &Region {
        self.spectral.region()
    }
}

/// (e^{iEt} X e^{-iEt}) for X already in the eigenbasis.
pub fn evolve_eigen(eigenvalues: &[f64], x: MatRef<'_, c64>, t: f64) -> Mat<c64> {
    let phase: Vec<c64> = eigenvalues.iter().map(|e| c64::cis(e * t)).collect();
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| phase[i] * x[(i, j)] * phase[j].conj())
}

/// alpha_t(A) = e^{itH} A e^{-itH}
pub fn evolve(sd: &SpectralData, a: MatRef<'_, c64>, t: f64) -> Result<Mat<c64>> {
    let ae = sd.to_eigenbasis(a)?;
    sd.from_eigenbasis(evolve_eigen(sd.eigenvalues(), ae.as_ref(), t).as_ref())
}

fn phase_columns(m: &mut Mat<c64>, eigenvalues: &[f64], times: &[f64], sign: f64) {
    for (c, t) in times.iter().enumerate() {
        let col = m.col_as_slice_mut(c);
        for (v, e) in col.iter_mut().zip(eigenvalues) {
            *v *= c64::cis(sign * e * t);
        }
    }
}

/// Matrix-free action of alpha_t(A_k) for a set of observables on one region.
pub(crate) struct HeisenbergAction<'a> {
    sd: &'a SpectralData,
    ops: Vec<&'a LocalSum>,
}

impl<'a> HeisenbergAction<'a> {
    pub(crate) fn new(sd: &'a SpectralData, ops: Vec<&'a LocalSum>) -> Result<Self> {
        for op in &ops {
            if op.region() != sd.region() {
                return Err(Error::Nesting(
                    "observable region differs from the Hamiltonian's region".into(),
                ));
            }
        }
        Ok(HeisenbergAction { sd, ops })
    }

    fn basis(&self) -> &Unitary {
        self.sd.basis()
    }

    /// Column c of `y` is mapped by alpha_{times[c]}(ops[which[c]]).
    pub(crate) fn apply(&self, which: &[usize], times: &[f64], y: MatRef<'_, c64>) -> Mat<c64> {
        let e = self.sd.eigenvalues();
        let mut z = self.basis().adjoint_times(y);
        phase_columns(&mut z, e, times, -1.0);
        let z = self.basis().times(z.as_ref());
        let mut az = Mat::<c64>::zeros(z.nrows(), z.ncols());
        for (c, &k) in which.iter().enumerate() {
            self.ops[k].apply(z.col(c).try_as_col_major().unwrap().as_slice(), az.col_as_slice_mut(c));
        }
        let mut z = self.basis().adjoint_times(az.as_ref());
        phase_columns(&mut z, e, times, 1.0);
        self.basis().times(z.as_ref())
    }

    /// Same action on vectors of a larger region, as `alpha_t(A) (x) identity`.
    pub(crate) fn apply_embedded(
        &self,
        map: &SubregionMap,
        which: &[usize],
        times: &[f64],
        y: MatRef<'_, c64>,
    ) -> Mat<c64> {
        let rest = map.rest_dim();
        let k = map.sub_dim();
        let mut stacked = Mat::<c64>::zeros(k, rest * y.ncols());
        let mut w = Vec::with_capacity(rest * y.ncols());
        let mut ts = Vec::with_capacity(rest * y.ncols());
        let mut col = vec![ZERO; y.nrows()];
        for c in 0..y.ncols() {
            col.iter_mut().zip(y.col(c).iter()).for_each(|(d, s)| *d = *s);
            let g = map.gather(&col);
            for r in 0..rest {
                stacked.col_as_slice_mut(c * rest + r).copy_from_slice(g.col(r).try_as_col_major().unwrap().as_slice());
                w.push(which[c]);
                ts.push(times[c]);
            }
        }
        let out = self.apply(&w, &ts, stacked.as_ref());
        let mut res = Mat::<c64>::zeros(y.nrows(), y.ncols());
        for c in 0..y.ncols() {
            let block = out.subcols(c * rest, rest);
            map.scatter(block, res.col_as_slice_mut(c));
        }
        res
    }
}

fn norm_options() -> LanczosOptions {
    LanczosOptions {
        rel_tol: 1e-10,
        abs_tol: 1e-14,
        ..LanczosOptions::default()
    }
}

/// Whether time reversal makes the norm even in t: real eigenbasis and real observables.
fn time_reversal_symmetric(sds: &[&SpectralData], ops: &[&LocalSum]) -> bool {
    sds.iter().all(|s| s.basis().is_real()) && ops.iter().all(|o| o.is_real())
}

/// Map each time to the representative actually computed (|t| when symmetric).
fn reduce_times(times: &[f64], symmetric: bool) -> (Vec<f64>, Vec<usize>) {
    let mut reps: Vec<f64> = Vec::new();
    let mut index = Vec::with_capacity(times.len());
    for &t in times {
        let r = if symmetric { t.abs() } else { t };
        match reps.iter().position(|x| *x == r) {
            Some(p) => index.push(p),
            None => {
                reps.push(r);
                index.push(reps.len() - 1);
            }
        }
    }
    (reps, index)
}

/// Norms of alpha^outer_t(A_k) - alpha^inner_{k,t}(A_k) (x) identity for all
/// (k, t); `inner[k]` acts on a sub-region of the outer region.
fn discrepancy_norms(
    outer: &SpectralData,
    outer_ops: &[LocalSum],
    inner: &[(&SpectralData, LocalSum)],
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let sds: Vec<&SpectralData> = std::iter::once(outer).chain(inner.iter().map(|(s, _)| *s)).collect();
    let all_ops: Vec<&LocalSum> = outer_ops.iter().chain(inner.iter().map(|(_, o)| o)).collect();
    let (reps, index) = reduce_times(times, time_reversal_symmetric(&sds, &all_ops));

    let outer_action = HeisenbergAction::new(outer, outer_ops.iter().collect())?;
    let inner_parts = inner
        .iter()
        .map(|(sd, op)| {
            let map = SubregionMap::new(sd.region(), outer.region(), DEFAULT_LOCAL_DIM)?;
            Ok((HeisenbergAction::new(sd, vec![op])?, map))
        })
        .collect::<Result<Vec<_>>>()?;

    // alpha_0 is the identity on both sides
    let jobs: Vec<(usize, usize)> = (0..inner.len())
        .flat_map(|k| (0..reps.len()).map(move |ti| (k, ti)))
        .filter(|&(_, ti)| reps[ti] != 0.0)
        .collect();
    let apply = |active: &[usize], y: MatRef<'_, c64>| -> Mat<c64> {
        let which: Vec<usize> = active.iter().map(|&j| jobs[j].0).collect();
        let ts: Vec<f64> = active.iter().map(|&j| reps[jobs[j].1]).collect();
        let mut out = outer_action.apply(&which, &ts, y);
        for (k, (action, map)) in inner_parts.iter().enumerate() {
            let cols: Vec<usize> = (0..active.len()).filter(|&c| which[c] == k).collect();
            if cols.is_empty() {
                continue;
            }
            let sub = Mat::from_fn(y.nrows(), cols.len(), |i, c| y[(i, cols[c])]);
            let tsub: Vec<f64> = cols.iter().map(|&c| ts[c]).collect();
            let r = action.apply_embedded(map, &vec![0; cols.len()], &tsub, sub.as_ref());
            for (c, &dst) in cols.iter().enumerate() {
                for i in 0..y.nrows() {
                    out[(i, dst)] -= r[(i, c)];
                }
            }
        }
        out
    };
    let norms = batched_hermitian_norms(outer.dim(), jobs.len(), &apply, norm_options())?;
    let mut per_rep = vec![vec![0.0; reps.len()]; inner.len()];
    for (&(k, ti), v) in jobs.iter().zip(norms) {
        per_rep[k][ti] = v;
    }
    Ok(per_rep
        .into_iter()
        .map(|row| index.iter().map(|&i| row[i]).collect())
        .collect())
}

/// ||alpha_{outer,t}(A) - alpha_{inner,t}(A)|| at each time, with A embedded in
/// the outer region and the inner evolution padded by the identity.
pub fn local_vs_larger_discrepancy(
    a: &LocalOperator,
    inner: &SpectralData,
    outer: &SpectralData,
    times: &[f64],
) -> Result<Vec<f64>> {
    if !a.support_region().is_subset_of(inner.lambda()) {
        return Err(Error::Nesting("observable support is not inside the inner region".into()));
    }
    if !inner.region().is_subset_of(outer.region()) {
        return Err(Error::Nesting("inner region is not inside the outer region".into()));
    }
    let a_outer = LocalSum::single(a.clone(), outer.region().clone())?;
    let a_inner = LocalSum::single(a.clone(), inner.region().clone())?;
    Ok(discrepancy_norms(outer, &[a_outer], &[(inner, a_inner)], times)?.remove(0))
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    /// max over sampled x and grid times of the local discrepancy
    pub achieved: f64,
    pub sampled_sites: Vec<Vec<i64>>,
    pub per_site_max: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub times: Vec<f64>,
    pub measured: Vec<f64>,
    pub max_measured: f64,
    pub predicted: f64,
    pub eps: f64,
    pub eps_term: f64,
    pub surface_term: f64,
    pub a: f64,
    pub m: usize,
    pub t0: f64,
    pub lambda_size: usize,
    pub interior_size: usize,
    pub boundary_size: usize,
    pub proxy_size: usize,
    pub proxy_mode: BoundaryMode,
    pub lambda_mode: BoundaryMode,
    pub calibration: Calibration,
    pub holds: bool,
}

/// Inputs of [`averaged_evolution_bound`].
pub struct BoundSetup<'a> {
    pub terms: &'a TermFamily,
    pub family: &'a dyn OperatorFamily,
    pub lambda: &'a BoxRegion,
    /// Region whose free-boundary dynamics stands in for the true dynamics.
    pub proxy: &'a BoxRegion,
    pub m: usize,
    pub t0: f64,
    /// When absent, eps is set to twice the calibrated discrepancy.
    pub eps: Option<f64>,
    pub points: usize,
    /// Boundary convention for the Lambda and calibration dynamics.
    pub mode: BoundaryMode,
    pub site_cap: usize,
    pub exec: ExecMode,
}

/// Measures ||alpha_{proxy,t}(A_Lambda) - alpha_{Lambda,t}(A_Lambda)|| on a
/// symmetric grid and compares it with eps/2 + 2a |boundary| / |Lambda|.
pub fn averaged_evolution_bound(s: &BoundSetup<'_>) -> Result<BoundReport> {
    if !(s.t0 > 0.0 && s.t0.is_finite()) {
        return Err(Error::invalid("t0", "must be positive"));
    }
    if let Some(e) = s.eps {
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::invalid("eps", "must be positive"));
        }
    }
    let grid = TimeGrid::symmetric(s.t0, s.points)?;
    let lambda = s.lambda.region();
    if !lambda.is_subset_of(s.proxy.region()) {
        return Err(Error::Nesting("Lambda is not inside the proxy region".into()));
    }
    let (interior, boundary) = s.lambda.interior_split(s.m)?;
    if interior.is_empty() {
        return Err(Error::invalid("m", "no box of this size fits inside Lambda"));
    }

    let proxy_h = assemble(s.terms, s.proxy.region(), BoundaryMode::Free, s.site_cap)?;
    let lambda_h = assemble(s.terms, lambda, s.mode, s.site_cap)?;
    if !lambda_h.region().is_subset_of(proxy_h.region()) {
        return Err(Error::Nesting(
            "the Lambda Hamiltonian reaches outside the proxy region".into(),
        ));
    }
    let inner_hs: Vec<Hamiltonian> = exec::try_map(s.exec, interior.sites(), |x| {
        let b = BoxRegion::centered_at(x, s.m)?;
        let h = assemble(s.terms, b.region(), s.mode, s.site_cap)?;
        if !h.region().is_subset_of(proxy_h.region()) {
            return Err(Error::Nesting(format!(
                "calibration box at {:?} reaches outside the proxy region",
                x.coords()
            )));
        }
        Ok(h)
    })?;

    // decompositions: proxy, Lambda, one per calibration box
    let mut all: Vec<&Hamiltonian> = vec![&proxy_h, &lambda_h];
    all.extend(inner_hs.iter());
    let sds = exec::try_map(s.exec, &all, |h| spectral_decompose(h))?;
    let (proxy_sd, lambda_sd, inner_sds) = (&sds[0], &sds[1], &sds[2..]);

    let a_norm = s.family.norm_bound();
    let member = |x: &Site| -> Result<LocalOperator> {
        s.family.member(x).ok_or_else(|| Error::FamilyBounds {
            site: x.0.clone(),
            reason: "family has no member at this site".into(),
        })
    };

    // calibration
    let mut outer_ops = Vec::new();
    let mut inner_ops = Vec::new();
    for (x, sd) in interior.sites().iter().zip(inner_sds) {
        let a = member(x)?;
        outer_ops.push(LocalSum::single(a.clone(), proxy_sd.region().clone())?);
        inner_ops.push((sd, LocalSum::single(a, sd.region().clone())?));
    }
    let cal = discrepancy_norms(proxy_sd, &outer_ops, &inner_ops, grid.times())?;
    let per_site_max: Vec<f64> = cal.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect();
    let achieved = per_site_max.iter().copied().fold(0.0, f64::max);
    let eps = s.eps.unwrap_or(2.0 * achieved);
    if achieved > eps / 2.0 {
        return Err(Error::Calibration {
            achieved,
            required: eps / 2.0,
            m: s.m,
            t0: s.t0,
        });
    }

    // main measurement
    let a_outer = averaged_operator(s.family, lambda, proxy_sd.region(), MemberPolicy::Require)?;
    let a_lambda = averaged_operator(s.family, lambda, lambda_sd.region(), MemberPolicy::Require)?;
    let measured = discrepancy_norms(proxy_sd, &[a_outer], &[(lambda_sd, a_lambda)], grid.times())?.remove(0);
    let max_measured = measured.iter().copied().fold(0.0, f64::max);

    let surface_term = 2.0 * a_norm * boundary.len() as f64 / lambda.len() as f64;
    let predicted = eps / 2.0 + surface_term;
    Ok(BoundReport {
        times: grid.times().to_vec(),
        holds: measured.iter().all(|v| *v <= predicted + 1e-9),
        measured,
        max_measured,
        predicted,
        eps,
        eps_term: eps / 2.0,
        surface_term,
        a: a_norm,
        m: s.m,
        t0: s.t0,
        lambda_size: lambda.len(),
        interior_size: interior.len(),
        boundary_size: boundary.len(),
        proxy_size: s.proxy.len(),
        proxy_mode: BoundaryMode::Free,
        lambda_mode: s.mode,
        calibration: Calibration {
            achieved,
            sampled_sites: interior.sites().iter().map(|x| x.0.clone()).collect(),
            per_site_max,
        },
    })
}

/// ||[alpha_t(A0), B_x]|| over a (time, probe) grid.
#[derive(Debug, Clone, Serialize)]
pub struct LrProfile {
    pub times: Vec<f64>,
    /// distance of each probe support from the support of A0
    pub distances: Vec<i64>,
    pub probe_sites: Vec<Vec<i64>>,
    /// values[t][x]
    pub values: Vec<Vec<f64>>,
    /// probes whose support meets that of A0 (nonzero at t = 0 is expected)
    pub overlapping: Vec<bool>,
    /// threshold used for the light-cone front
    pub front_threshold: f64,
    /// largest distance at which the commutator exceeds the threshold, per time
    pub front: Vec<i64>,
    /// least-squares slope of the front against time
    pub cone_slope: Option<f64>,
}

fn support_distance(a: &LocalOperator, b: &LocalOperator) -> i64 {
    a.support()
        .iter()
        .flat_map(|x| b.support().iter().map(move |y| x.distance(y)))
        .min()
        .unwrap_or(0)
}

pub fn lr_commutator_profile(
    a0: &LocalOperator,
    probes: &[LocalOperator],
    ctx: &EvolutionContext,
    front_threshold: f64,
) -> Result<LrProfile> {
    let sd = ctx.spectral.as_ref();
    let region = sd.region();
    let a_sum = LocalSum::single(a0.clone(), region.clone())?;
    let probe_sums = probes
        .iter()
        .map(|b| LocalSum::single(b.clone(), region.clone()))
        .collect::<Result<Vec<_>>>()?;
    let times = ctx.grid.times();
    let symmetric = time_reversal_symmetric(&[sd], &[&a_sum]) && probe_sums.iter().all(|p| p.is_real());
    let (reps, index) = reduce_times(times, symmetric);
    let action = HeisenbergAction::new(sd, vec![&a_sum])?;

    let jobs: Vec<(usize, usize)> = (0..reps.len())
        .flat_map(|ti| (0..probes.len()).map(move |x| (ti, x)))
        .collect();
    // i [X, B] is Hermitian for Hermitian X, B
    let apply = |active: &[usize], y: MatRef<'_, c64>| -> Mat<c64> {
        let n = y.nrows();
        let k = active.len();
        let ts: Vec<f64> = active.iter().map(|&j| reps[jobs[j].0]).collect();
        let mut by = Mat::<c64>::zeros(n, k);
        for (c, &j) in active.iter().enumerate() {
            probe_sums[jobs[j].1].apply(y.col(c).try_as_col_major().unwrap().as_slice(), by.col_as_slice_mut(c));
        }
        // one batched evolution for both X y and X (B y)
        let stacked = Mat::from_fn(n, 2 * k, |i, c| if c < k { y[(i, c)] } else { by[(i, c - k)] });
        let mut ts2 = ts.clone();
        ts2.extend_from_slice(&ts);
        let x = action.apply(&vec![0; 2 * k], &ts2, stacked.as_ref());
        let mut out = Mat::<c64>::zeros(n, k);
        let mut bx = vec![ZERO; n];
        for (c, &j) in active.iter().enumerate() {
            probe_sums[jobs[j].1].apply(x.col(c).try_as_col_major().unwrap().as_slice(), &mut bx);
            for i in 0..n {
                out[(i, c)] = I * (x[(i, k + c)] - bx[i]);
            }
        }
        out
    };
    let norms = batched_hermitian_norms(sd.dim(), jobs.len(), &apply, norm_options())?;
    let mut per_rep = vec![vec![0.0; probes.len()]; reps.len()];
    for (&(ti, x), v) in jobs.iter().zip(norms) {
        per_rep[ti][x] = v;
    }
    let values: Vec<Vec<f64>> = index.iter().map(|&i| per_rep[i].clone()).collect();
    let distances: Vec<i64> = probes.iter().map(|b| support_distance(a0, b)).collect();
    let overlapping: Vec<bool> = distances.iter().map(|d| *d == 0).collect();
    let front: Vec<i64> = values
        .iter()
        .map(|row| {
            row.iter()
                .zip(&distances)
                .filter(|(v, _)| **v > front_threshold)
                .map(|(_, d)| *d)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let cone_slope = fit_slope(times, &front);
    Ok(LrProfile {
        times: times.to_vec(),
        distances,
        probe_sites: probes.iter().map(|b| b.anchor().0).collect(),
        values,
        overlapping,
        front_threshold,
        front,
        cone_slope,
    })
}

/// Least-squares slope of front(|t|) for t > 0.
fn fit_slope(times: &[f64], front: &[i64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(front)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, f)| (*t, *f as f64))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mf = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mf)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Dense norm of the difference, for small regions and tests.
pub fn dense_discrepancy(
    a: &LocalOperator,
    inner: &SpectralData,
    outer: &SpectralData,
    t: f64,
) -> Result<f64> {
    let ai = crate::lattice::embed(a, inner.region())?;
    let ao = crate::lattice::embed(a, outer.region())?;
    let ei = evolve(inner, ai.as_ref(), t)?;
    let eo = evolve(outer, ao.as_ref(), t)?;
    let map = SubregionMap::new(inner.region(), outer.region(), DEFAULT_LOCAL_DIM)?;
    let pad = map.embed_dense(ei.as_ref());
    linalg::operator_norm((&eo - &pad).as_ref())
}
