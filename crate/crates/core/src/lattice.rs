//! Finite lattice geometry and the algebra of local operators.
//!
//! Sites are integer vectors in Z^mu under the max-metric. A [`Region`] is a
//! lexicographically ordered site set; its Hilbert space is the tensor product
//! of one `d`-dimensional factor per site, first site most significant.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c64, Mat, MatRef, ONE, ZERO};

/// Absolute ceiling on the Hilbert-space dimension: 14 spin-1/2 sites.
pub const HARD_DIM_CAP: usize = 1 << 14;
pub const HARD_SITE_CAP: usize = 14;
pub const DEFAULT_LOCAL_DIM: usize = 2;

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn origin(dimension: usize) -> Self {
        Site(vec![0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn shifted(&self, x: &[i64]) -> Site {
        Site(self.0.iter().zip(x).map(|(a, b)| a + b).collect())
    }

    /// max_i |x_i - y_i|
    pub fn distance(&self, other: &Site) -> i64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .max()
            .unwrap_or(0)
    }
}

impl From<i64> for Site {
    fn from(x: i64) -> Self {
        Site(vec![x])
    }
}

fn diameter_of(sites: &[Site]) -> i64 {
    let Some(first) = sites.first() else {
        return 0;
    };
    (0..first.dimension())
        .map(|axis| {
            let (lo, hi) = sites.iter().fold((i64::MAX, i64::MIN), |(lo, hi), s| {
                (lo.min(s.0[axis]), hi.max(s.0[axis]))
            });
            hi - lo
        })
        .max()
        .unwrap_or(0)
}

/// Lexicographically ordered set of distinct sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Region {
    dimension: usize,
    sites: Vec<Site>,
}

impl Region {
    pub fn new(dimension: usize, sites: impl IntoIterator<Item = Site>) -> Result<Self> {
        let mut sites: Vec<Site> = sites.into_iter().collect();
        if let Some(bad) = sites.iter().find(|s| s.dimension() != dimension) {
            return Err(Error::invalid(
                "site",
                format!("{:?} does not have dimension {dimension}", bad.0),
            ));
        }
        sites.sort();
        sites.dedup();
        Ok(Region { dimension, sites })
    }

    pub fn empty(dimension: usize) -> Self {
        Region {
            dimension,
            sites: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn index_of(&self, site: &Site) -> Option<usize> {
        self.sites.binary_search(site).ok()
    }

    pub fn contains(&self, site: &Site) -> bool {
        self.index_of(site).is_some()
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.sites.iter().all(|s| other.contains(s))
    }

    pub fn union(&self, other: &Region) -> Region {
        let mut sites = self.sites.clone();
        sites.extend(other.sites.iter().cloned());
        sites.sort();
        sites.dedup();
        Region {
            dimension: self.dimension,
            sites,
        }
    }

    pub fn difference(&self, other: &Region) -> Region {
        Region {
            dimension: self.dimension,
            sites: self
                .sites
                .iter()
                .filter(|s| !other.contains(s))
                .cloned()
                .collect(),
        }
    }

    pub fn translated(&self, x: &[i64]) -> Region {
        // translation preserves lexicographic order
        Region {
            dimension: self.dimension,
            sites: self.sites.iter().map(|s| s.shifted(x)).collect(),
        }
    }

    pub fn diameter(&self) -> i64 {
        diameter_of(&self.sites)
    }

    /// d^|region|, refusing anything past the hard cap.
    pub fn hilbert_dim(&self, local_dim: usize) -> Result<usize> {
        let mut dim = 1usize;
        for _ in 0..self.len() {
            dim = dim.saturating_mul(local_dim);
            if dim > HARD_DIM_CAP {
                return Err(Error::SizeCap {
                    sites: self.len(),
                    cap: HARD_SITE_CAP,
                });
            }
        }
        Ok(dim)
    }
}

/// Axis-aligned box in Z^mu.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxRegion {
    origin: Vec<i64>,
    extents: Vec<usize>,
    region: Region,
}

impl BoxRegion {
    pub fn new(origin: Vec<i64>, extents: Vec<usize>) -> Result<Self> {
        if origin.len() != extents.len() || origin.is_empty() {
            return Err(Error::invalid(
                "extents",
                "origin and extents must have the same positive length",
            ));
        }
        if extents.contains(&0) {
            return Err(Error::EmptyRegion);
        }
        let total: usize = extents.iter().product();
        if total > 1 << 20 {
            return Err(Error::SizeCap {
                sites: total,
                cap: HARD_SITE_CAP,
            });
        }
        let mut sites = Vec::with_capacity(total);
        let mut idx = vec![0usize; extents.len()];
        for _ in 0..total {
            sites.push(Site(
                origin.iter().zip(&idx).map(|(o, i)| o + *i as i64).collect(),
            ));
            // odometer with the last axis fastest gives lexicographic order
            for axis in (0..extents.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < extents[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        let dimension = origin.len();
        Ok(BoxRegion {
            origin,
            extents,
            region: Region { dimension, sites },
        })
    }

    /// Chain {0, 1, ..., len - 1}.
    pub fn chain(len: usize) -> Result<Self> {
        Self::new(vec![0], vec![len])
    }

    /// Lambda_0(n) = { x : |x_i| <= n/2 }, side 2*floor(n/2) + 1.
    pub fn centered(dimension: usize, n: usize) -> Result<Self> {
        let half = (n / 2) as i64;
        Self::new(
            vec![-half; dimension],
            vec![2 * (n / 2) + 1; dimension],
        )
    }

    /// Lambda_x(n) = Lambda_0(n) + x.
    pub fn centered_at(x: &Site, n: usize) -> Result<Self> {
        Ok(Self::centered(x.dimension(), n)?.translated(x.coords()))
    }

    pub fn translated(&self, x: &[i64]) -> BoxRegion {
        BoxRegion {
            origin: self.origin.iter().zip(x).map(|(a, b)| a + b).collect(),
            extents: self.extents.clone(),
            region: self.region.translated(x),
        }
    }

    pub fn origin(&self) -> &[i64] {
        &self.origin
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn dimension(&self) -> usize {
        self.origin.len()
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn sites(&self) -> &[Site] {
        self.region.sites()
    }

    pub fn len(&self) -> usize {
        self.region.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region.is_empty()
    }

    pub fn contains(&self, site: &Site) -> bool {
        site.0
            .iter()
            .zip(&self.origin)
            .zip(&self.extents)
            .all(|((x, o), e)| *x >= *o && *x < o + *e as i64)
    }

    /// Split into the sites x whose box Lambda_x(m) stays inside, and the rest.
    pub fn interior_split(&self, m: usize) -> Result<(Region, Region)> {
        let probe = BoxRegion::centered(self.dimension(), m)?;
        let mut inner = Vec::new();
        let mut rim = Vec::new();
        for x in self.sites() {
            let shifted = probe.translated(x.coords());
            let fits = shifted.sites().iter().all(|s| self.contains(s));
            if fits {
                inner.push(x.clone());
            } else {
                rim.push(x.clone());
            }
        }
        Ok((
            Region::new(self.dimension(), inner)?,
            Region::new(self.dimension(), rim)?,
        ))
    }
}

impl AsRef<Region> for BoxRegion {
    fn as_ref(&self) -> &Region {
        &self.region
    }
}

impl AsRef<Region> for Region {
    fn as_ref(&self) -> &Region {
        self
    }
}

pub mod pauli {
    use crate::linalg::{c64, Mat, I, ONE, ZERO};

    pub fn identity() -> Mat<c64> {
        Mat::from_fn(2, 2, |i, j| if i == j { ONE } else { ZERO })
    }

    pub fn x() -> Mat<c64> {
        Mat::from_fn(2, 2, |i, j| if i != j { ONE } else { ZERO })
    }

    pub fn y() -> Mat<c64> {
        Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => -I,
            (1, 0) => I,
            _ => ZERO,
        })
    }

    /// diag(1, -1): index 0 is spin up.
    pub fn z() -> Mat<c64> {
        Mat::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) => ONE,
            (1, 1) => -ONE,
            _ => ZERO,
        })
    }
}

/// A matrix acting on the tensor factors of an ordered site list.
#[derive(Debug, Clone)]
pub struct LocalOperator {
    support: Vec<Site>,
    matrix: Mat<c64>,
    local_dim: usize,
    label: String,
    hermitian: bool,
    norm: OnceLock<f64>,
}

impl LocalOperator {
    pub fn new(support: Vec<Site>, matrix: Mat<c64>, label: impl Into<String>) -> Result<Self> {
        Self::with_local_dim(support, matrix, DEFAULT_LOCAL_DIM, label)
    }

    pub fn with_local_dim(
        support: Vec<Site>,
        matrix: Mat<c64>,
        local_dim: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        if local_dim < 2 {
            return Err(Error::invalid("local_dim", "must be at least 2"));
        }
        let Some(first) = support.first() else {
            return Err(Error::EmptyRegion);
        };
        let dimension = first.dimension();
        if support.iter().any(|s| s.dimension() != dimension) {
            return Err(Error::invalid("support", "mixed lattice dimensions"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "support",
                "sites must be strictly increasing in lexicographic order",
            ));
        }
        let region = Region {
            dimension,
            sites: support.clone(),
        };
        let expected = region.hilbert_dim(local_dim)?;
        if matrix.nrows() != expected || matrix.ncols() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        let hermitian = linalg::hermitian_deviation(matrix.as_ref()) <= HERMITIAN_TOL;
        Ok(LocalOperator {
            support,
            matrix,
            local_dim,
            label: label.into(),
            hermitian,
            norm: OnceLock::new(),
        })
    }

    /// Like [`LocalOperator::new`] but rejects non-Hermitian matrices.
    pub fn hermitian(support: Vec<Site>, matrix: Mat<c64>, label: impl Into<String>) -> Result<Self> {
        let op = Self::new(support, matrix, label)?;
        op.require_hermitian()?;
        Ok(op)
    }

    pub fn single_site(site: Site, matrix: Mat<c64>, label: impl Into<String>) -> Result<Self> {
        Self::new(vec![site], matrix, label)
    }

    pub fn require_hermitian(&self) -> Result<()> {
        if !self.hermitian {
            return Err(Error::NotHermitian {
                label: self.label.clone(),
                deviation: linalg::hermitian_deviation(self.matrix.as_ref()),
            });
        }
        Ok(())
    }

    pub fn support(&self) -> &[Site] {
        &self.support
    }

    pub fn support_region(&self) -> Region {
        Region {
            dimension: self.dimension(),
            sites: self.support.clone(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.support[0].dimension()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// Largest singular value, computed on first use.
    pub fn norm(&self) -> f64 {
        *self.norm.get_or_init(|| {
            linalg::operator_norm(self.matrix.as_ref()).expect("square matrix checked at construction")
        })
    }

    pub fn diameter(&self) -> i64 {
        diameter_of(&self.support)
    }

    /// Lexicographically smallest center site of the support's enclosing box.
    pub fn anchor(&self) -> Site {
        let dim = self.dimension();
        Site(
            (0..dim)
                .map(|axis| {
                    let lo = self.support.iter().map(|s| s.0[axis]).min().unwrap();
                    let hi = self.support.iter().map(|s| s.0[axis]).max().unwrap();
                    let width = hi - lo + 1;
                    // odd width: the middle; even width: the lower of the two middles
                    lo + (width - 1) / 2
                })
                .collect(),
        )
    }

    pub fn is_diagonal(&self) -> bool {
        let m = &self.matrix;
        (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == ZERO))
    }

    pub fn adjoint(&self) -> LocalOperator {
        LocalOperator {
            support: self.support.clone(),
            matrix: self.matrix.adjoint().to_owned(),
            local_dim: self.local_dim,
            label: format!("{}^dagger", self.label),
            hermitian: self.hermitian,
            norm: self.norm.clone(),
        }
    }

    /// Product on a shared support.
    pub fn product(&self, other: &LocalOperator) -> Result<LocalOperator> {
        if self.support != other.support {
            return Err(Error::invalid("support", "product requires identical supports"));
        }
        LocalOperator::with_local_dim(
            self.support.clone(),
            &self.matrix * &other.matrix,
            self.local_dim,
            format!("{}*{}", self.label, other.label),
        )
    }

    /// tau_x: same matrix, support shifted by x.
    pub fn translate(&self, x: &[i64]) -> LocalOperator {
        LocalOperator {
            support: self.support.iter().map(|s| s.shifted(x)).collect(),
            matrix: self.matrix.clone(),
            local_dim: self.local_dim,
            label: self.label.clone(),
            hermitian: self.hermitian,
            norm: self.norm.clone(),
        }
    }
}

/// Free-function form of [`LocalOperator::translate`].
pub fn translate(op: &LocalOperator, x: &[i64]) -> LocalOperator {
    op.translate(x)
}

/// Index bookkeeping for one operator placed inside a region.
#[derive(Debug, Clone)]
pub(crate) struct Placement {
    local_offsets: Vec<usize>,
    rest_offsets: Vec<usize>,
}

impl Placement {
    pub(crate) fn new(op: &LocalOperator, region: &Region) -> Result<Self> {
        Self::for_sites(&op.support, op.local_dim, region)
    }

    pub(crate) fn for_sites(support: &[Site], d: usize, region: &Region) -> Result<Self> {
        let n = region.len();
        region.hilbert_dim(d)?;
        let mut positions = Vec::with_capacity(support.len());
        for s in support {
            match region.index_of(s) {
                Some(p) => positions.push(p),
                None => {
                    return Err(Error::SupportNotContained {
                        site: s.0.clone(),
                    })
                }
            }
        }
        let stride = |p: usize| d.pow((n - 1 - p) as u32);
        let offsets = |ps: &[usize]| -> Vec<usize> {
            let count = d.pow(ps.len() as u32);
            (0..count)
                .map(|mut c| {
                    let mut off = 0;
                    for &p in ps.iter().rev() {
                        off += (c % d) * stride(p);
                        c /= d;
                    }
                    off
                })
                .collect()
        };
        let rest: Vec<usize> = (0..n).filter(|p| !positions.contains(p)).collect();
        Ok(Placement {
            local_offsets: offsets(&positions),
            rest_offsets: offsets(&rest),
        })
    }
}

fn scatter_add(op: &LocalOperator, pl: &Placement, coeff: c64, target: &mut Mat<c64>) {
    let m = &op.matrix;
    let k = pl.local_offsets.len();
    for &r in &pl.rest_offsets {
        for b in 0..k {
            let col = r + pl.local_offsets[b];
            for a in 0..k {
                let v = m[(a, b)];
                if v != ZERO {
                    target[(r + pl.local_offsets[a], col)] += coeff * v;
                }
            }
        }
    }
}

/// Placement of a sub-region inside a larger region: lets a dense operator on
/// `sub` act on vectors of `region` as `X (x) identity`.
#[derive(Debug, Clone)]
pub struct SubregionMap {
    placement: Placement,
}

impl SubregionMap {
    pub fn new(sub: &Region, region: &Region, local_dim: usize) -> Result<Self> {
        if !sub.is_subset_of(region) {
            let site = sub.sites().iter().find(|s| !region.contains(s)).unwrap();
            return Err(Error::SupportNotContained {
                site: site.0.clone(),
            });
        }
        Ok(SubregionMap {
            placement: Placement::for_sites(sub.sites(), local_dim, region)?,
        })
    }

    pub fn sub_dim(&self) -> usize {
        self.placement.local_offsets.len()
    }

    pub fn rest_dim(&self) -> usize {
        self.placement.rest_offsets.len()
    }

    /// Columns are the sub-region components of `x`, one per rest index.
    pub fn gather(&self, x: &[c64]) -> Mat<c64> {
        let pl = &self.placement;
        Mat::from_fn(pl.local_offsets.len(), pl.rest_offsets.len(), |a, r| {
            x[pl.rest_offsets[r] + pl.local_offsets[a]]
        })
    }

    /// Inverse of [`SubregionMap::gather`].
    pub fn scatter(&self, m: MatRef<'_, c64>, y: &mut [c64]) {
        let pl = &self.placement;
        for (r, &ro) in pl.rest_offsets.iter().enumerate() {
            for (a, &lo) in pl.local_offsets.iter().enumerate() {
                y[ro + lo] = m[(a, r)];
            }
        }
    }

    /// Partial trace over the complement: out[a, b] = sum_r m[(a, r), (b, r)].
    pub fn trace_out_rest(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let pl = &self.placement;
        let k = pl.local_offsets.len();
        let mut out = Mat::zeros(k, k);
        for &r in &pl.rest_offsets {
            for b in 0..k {
                for a in 0..k {
                    out[(a, b)] += m[(r + pl.local_offsets[a], r + pl.local_offsets[b])];
                }
            }
        }
        out
    }

    /// Dense `X (x) identity` on the larger region.
    pub fn embed_dense(&self, x: MatRef<'_, c64>) -> Mat<c64> {
        let pl = &self.placement;
        let k = pl.local_offsets.len();
        let dim = k * pl.rest_offsets.len();
        let mut out = Mat::zeros(dim, dim);
        for &r in &pl.rest_offsets {
            for b in 0..k {
                for a in 0..k {
                    out[(r + pl.local_offsets[a], r + pl.local_offsets[b])] = x[(a, b)];
                }
            }
        }
        out
    }
}

/// y += coeff * (op embedded) x
fn apply_add(op: &LocalOperator, pl: &Placement, coeff: c64, x: &[c64], y: &mut [c64]) {
    let m = &op.matrix;
    let k = pl.local_offsets.len();
    let mut local = vec![ZERO; k];
    for &r in &pl.rest_offsets {
        for (b, l) in local.iter_mut().enumerate() {
            *l = x[r + pl.local_offsets[b]];
        }
        for a in 0..k {
            let mut acc = ZERO;
            for (b, l) in local.iter().enumerate() {
                acc += m[(a, b)] * l;
            }
            y[r + pl.local_offsets[a]] += coeff * acc;
        }
    }
}

/// Full-region matrix acting as `op` on its support and as the identity elsewhere.
pub fn embed(op: &LocalOperator, region: &Region) -> Result<Mat<c64>> {
    let dim = region.hilbert_dim(op.local_dim)?;
    let pl = Placement::new(op, region)?;
    let mut out = Mat::zeros(dim, dim);
    scatter_add(op, &pl, ONE, &mut out);
    Ok(out)
}

/// Weighted sum of embedded local operators on a fixed region, kept in
/// factored form so that it can act on vectors and matrices without ever
/// being materialized.
#[derive(Debug, Clone)]
pub struct LocalSum {
    region: Region,
    local_dim: usize,
    terms: Vec<(LocalOperator, c64)>,
    placements: Vec<Placement>,
}

impl LocalSum {
    pub fn new(region: Region, local_dim: usize) -> Result<Self> {
        region.hilbert_dim(local_dim)?;
        Ok(LocalSum {
            region,
            local_dim,
            terms: Vec::new(),
            placements: Vec::new(),
        })
    }

    pub fn single(op: LocalOperator, region: Region) -> Result<Self> {
        let mut s = LocalSum::new(region, op.local_dim)?;
        s.push(op, ONE)?;
        Ok(s)
    }

    pub fn push(&mut self, op: LocalOperator, coeff: c64) -> Result<()> {
        if op.local_dim != self.local_dim {
            return Err(Error::invalid("local_dim", "mixed local dimensions in one sum"));
        }
        let pl = Placement::new(&op, &self.region)?;
        self.terms.push((op, coeff));
        self.placements.push(pl);
        Ok(())
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn terms(&self) -> &[(LocalOperator, c64)] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.region.hilbert_dim(self.local_dim).unwrap()
    }

    pub fn is_hermitian(&self) -> bool {
        self.terms
            .iter()
            .all(|(op, c)| op.is_hermitian() && c.im == 0.0)
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let dim = self.dim();
        let mut out = Mat::zeros(dim, dim);
        self.add_to_dense(&mut out, ONE);
        out
    }

    pub(crate) fn add_to_dense(&self, target: &mut Mat<c64>, scale: c64) {
        for ((op, c), pl) in self.terms.iter().zip(&self.placements) {
            scatter_add(op, pl, *c * scale, target);
        }
    }

    /// The diagonal, if every term is diagonal.
    pub fn diagonal(&self) -> Option<Vec<c64>> {
        if !self.terms.iter().all(|(op, _)| op.is_diagonal()) {
            return None;
        }
        let mut d = vec![ZERO; self.dim()];
        for ((op, c), pl) in self.terms.iter().zip(&self.placements) {
            let k = pl.local_offsets.len();
            for &r in &pl.rest_offsets {
                for a in 0..k {
                    d[r + pl.local_offsets[a]] += *c * op.matrix[(a, a)];
                }
            }
        }
        Some(d)
    }

    /// y = X x
    pub fn apply(&self, x: &[c64], y: &mut [c64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        for ((op, c), pl) in self.terms.iter().zip(&self.placements) {
            apply_add(op, pl, *c, x, y);
        }
    }

    /// X M, column by column.
    pub fn apply_to_matrix(&self, m: MatRef<'_, c64>) -> Mat<c64> {
        let n = m.nrows();
        let mut out = Mat::<c64>::zeros(n, m.ncols());
        let mut col = vec![ZERO; n];
        let mut res = vec![ZERO; n];
        for j in 0..m.ncols() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = m[(i, j)];
            }
            self.apply(&col, &mut res);
            out.col_as_slice_mut(j).copy_from_slice(&res);
        }
        out
    }

    /// True when every matrix entry and coefficient is real.
    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|(op, c)| {
            c.im == 0.0
                && (0..op.matrix.ncols())
                    .all(|j| (0..op.matrix.nrows()).all(|i| op.matrix[(i, j)].im == 0.0))
        })
    }

    /// X M in real arithmetic; `None` unless [`LocalSum::is_real`].
    pub fn real_product(&self, m: MatRef<'_, f64>) -> Option<Mat<f64>> {
        if !self.is_real() {
            return None;
        }
        if let Some(d) = self.diagonal() {
            return Some(Mat::from_fn(m.nrows(), m.ncols(), |i, j| d[i].re * m[(i, j)]));
        }
        let mut out = Mat::<f64>::zeros(m.nrows(), m.ncols());
        let factors: Vec<Vec<(usize, usize, f64)>> = self
            .terms
            .iter()
            .map(|(op, c)| {
                let k = op.matrix.nrows();
                (0..k)
                    .flat_map(|a| (0..k).map(move |b| (a, b)))
                    .map(|(a, b)| (a, b, c.re * op.matrix[(a, b)].re))
                    .filter(|&(_, _, v)| v != 0.0)
                    .collect()
            })
            .collect();
        for j in 0..m.ncols() {
            let src = m.col(j);
            let dst = out.col_as_slice_mut(j);
            for (nz, pl) in factors.iter().zip(&self.placements) {
                for &r in &pl.rest_offsets {
                    for &(a, b, v) in nz {
                        dst[r + pl.local_offsets[a]] += v * src[r + pl.local_offsets[b]];
                    }
                }
            }
        }
        Some(out)
    }

    /// X M for a real M.
    pub fn apply_to_real_matrix(&self, m: MatRef<'_, f64>) -> Mat<c64> {
        let n = m.nrows();
        let mut out = Mat::<c64>::zeros(n, m.ncols());
        let mut col = vec![ZERO; n];
        let mut res = vec![ZERO; n];
        for j in 0..m.ncols() {
            for (i, c) in col.iter_mut().enumerate() {
                *c = c64::new(m[(i, j)], 0.0);
            }
            self.apply(&col, &mut res);
            out.col_as_slice_mut(j).copy_from_slice(&res);
        }
        out
    }
}

/// What to do with family members whose support leaves the enclosing region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemberPolicy {
    /// Skip them; the average runs over the members that fit.
    #[default]
    Drop,
    /// Fail with a support-not-contained error.
    Require,
}

/// A family of local operators indexed by lattice sites, with uniform bounds
/// on support diameter (`range`) and norm (`norm_bound`).
pub trait OperatorFamily: Sync {
    fn member(&self, x: &Site) -> Option<LocalOperator>;
    fn range(&self) -> i64;
    fn norm_bound(&self) -> f64;
    fn label(&self) -> String;
}

/// A_x = tau_x(A_0).
#[derive(Debug, Clone)]
pub struct CovariantFamily {
    generator: LocalOperator,
    range: i64,
    norm_bound: f64,
}

impl CovariantFamily {
    /// Declared bounds are checked against the generator; translation
    /// covariance then carries them to every member.
    pub fn new(generator: LocalOperator, range: i64, norm_bound: f64) -> Result<Self> {
        let origin = Site::origin(generator.dimension());
        if generator.anchor() != origin {
            return Err(Error::invalid(
                "generator",
                format!(
                    "support must be anchored at the origin, found anchor {:?}",
                    generator.anchor().0
                ),
            ));
        }
        if !(norm_bound.is_finite() && norm_bound >= 0.0) {
            return Err(Error::invalid("norm_bound", "must be finite and non-negative"));
        }
        if generator.diameter() > range {
            return Err(Error::FamilyBounds {
                site: origin.0,
                reason: format!("diameter {} exceeds range {range}", generator.diameter()),
            });
        }
        if generator.norm() > norm_bound * (1.0 + 1e-12) {
            return Err(Error::FamilyBounds {
                site: origin.0,
                reason: format!("norm {} exceeds bound {norm_bound}", generator.norm()),
            });
        }
        Ok(CovariantFamily {
            generator,
            range,
            norm_bound,
        })
    }

    /// Tightest bounds: r = diam(supp A_0), a = ||A_0||.
    pub fn from_generator(generator: LocalOperator) -> Result<Self> {
        let r = generator.diameter();
        let a = generator.norm();
        Self::new(generator, r, a)
    }

    pub fn single_site(dimension: usize, matrix: Mat<c64>, label: &str) -> Result<Self> {
        Self::from_generator(LocalOperator::single_site(
            Site::origin(dimension),
            matrix,
            label,
        )?)
    }

    pub fn generator(&self) -> &LocalOperator {
        &self.generator
    }
}

impl OperatorFamily for CovariantFamily {
    fn member(&self, x: &Site) -> Option<LocalOperator> {
        Some(self.generator.translate(x.coords()))
    }

    fn range(&self) -> i64 {
        self.range
    }

    fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    fn label(&self) -> String {
        self.generator.label().to_string()
    }
}

/// Site-indexed operators given one by one.
#[derive(Debug, Clone)]
pub struct ExplicitFamily {
    members: BTreeMap<Site, LocalOperator>,
    range: i64,
    norm_bound: f64,
    label: String,
}

impl ExplicitFamily {
    pub fn new(
        members: BTreeMap<Site, LocalOperator>,
        range: i64,
        norm_bound: f64,
        label: impl Into<String>,
    ) -> Self {
        ExplicitFamily {
            members,
            range,
            norm_bound,
            label: label.into(),
        }
    }
}

impl OperatorFamily for ExplicitFamily {
    fn member(&self, x: &Site) -> Option<LocalOperator> {
        self.members.get(x).cloned()
    }

    fn range(&self) -> i64 {
        self.range
    }

    fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// (1/|kept|) sum_{x in lambda} A_x embedded in `enclosing`, in factored form.
pub fn averaged_operator(
    family: &dyn OperatorFamily,
    lambda: &Region,
    enclosing: &Region,
    policy: MemberPolicy,
) -> Result<LocalSum> {
    if lambda.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut kept = Vec::new();
    for x in lambda.sites() {
        let Some(op) = family.member(x) else {
            return Err(Error::FamilyBounds {
                site: x.0.clone(),
                reason: "family has no member at this site".into(),
            });
        };
        if op.diameter() > family.range() {
            return Err(Error::FamilyBounds {
                site: x.0.clone(),
                reason: format!("diameter {} exceeds range {}", op.diameter(), family.range()),
            });
        }
        if op.norm() > family.norm_bound() * (1.0 + 1e-12) {
            return Err(Error::FamilyBounds {
                site: x.0.clone(),
                reason: format!("norm {} exceeds bound {}", op.norm(), family.norm_bound()),
            });
        }
        let fits = op.support().iter().all(|s| enclosing.contains(s));
        match (fits, policy) {
            (true, _) => kept.push(op),
            (false, MemberPolicy::Drop) => {}
            (false, MemberPolicy::Require) => {
                let site = op
                    .support()
                    .iter()
                    .find(|s| !enclosing.contains(s))
                    .unwrap();
                return Err(Error::SupportNotContained {
                    site: site.0.clone(),
                });
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let local_dim = kept[0].local_dim();
    let weight = c64::new(1.0 / kept.len() as f64, 0.0);
    let mut sum = LocalSum::new(enclosing.clone(), local_dim)?;
    for op in kept {
        sum.push(op, weight)?;
    }
    Ok(sum)
}

/// Dense form of [`averaged_operator`].
pub fn averaged_order_parameter(
    family: &dyn OperatorFamily,
    lambda: &Region,
    enclosing: &Region,
    policy: MemberPolicy,
) -> Result<Mat<c64>> {
    Ok(averaged_operator(family, lambda, enclosing, policy)?.to_dense())
}

pub use crate::linalg::{commutator, operator_norm};
