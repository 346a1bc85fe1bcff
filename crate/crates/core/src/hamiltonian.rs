//! Local Hamiltonians assembled from translation-covariant term families.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{pauli, LocalOperator, LocalSum, Region, Site, DEFAULT_LOCAL_DIM};
use crate::linalg::{self, c64, Mat, MatRef};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Every term anchored in Lambda, acting on Lambda plus its exterior boundary.
    #[default]
    Embedded,
    /// Only terms whose support lies inside Lambda.
    Free,
}

impl std::fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryMode::Embedded => f.write_str("embedded"),
            BoundaryMode::Free => f.write_str("free"),
        }
    }
}

/// Model catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum Model {
    /// h_x = -J sum_i Z_x Z_{x+e_i} - g X_x
    Tfi { j: f64, g: f64 },
    /// h_x = J sum_i (X X + Y Y + delta Z Z)_{x, x+e_i}
    Xxz { j: f64, delta: f64 },
    /// H = -(J/|Lambda|) (sum_x Z_x)^2 - g sum_x X_x; not finite range.
    AllToAll { j: f64, g: f64 },
}

impl Model {
    pub fn id(&self) -> &'static str {
        match self {
            Model::Tfi { .. } => "tfi",
            Model::Xxz { .. } => "xxz",
            Model::AllToAll { .. } => "all-to-all",
        }
    }

    pub fn label(&self) -> String {
        match self {
            Model::Tfi { j, g } => format!("tfi(J={j}, g={g})"),
            Model::Xxz { j, delta } => format!("xxz(J={j}, delta={delta})"),
            Model::AllToAll { j, g } => format!("all-to-all(J={j}, g={g})"),
        }
    }
}

#[derive(Debug, Clone)]
enum Terms {
    Covariant(LocalOperator),
    AllToAll { j: f64, g: f64 },
}

/// h_x = tau_x(h_0) with uniform range and norm bounds, or the all-to-all
/// contrast model whose terms depend on the region.
#[derive(Debug, Clone)]
pub struct TermFamily {
    terms: Terms,
    dimension: usize,
    range: Option<i64>,
    norm_bound: f64,
    label: String,
}

impl TermFamily {
    pub fn covariant(
        generator: LocalOperator,
        range: i64,
        norm_bound: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        generator.require_hermitian()?;
        // reuses the anchor and bound checks
        crate::lattice::CovariantFamily::new(generator.clone(), range, norm_bound)?;
        Ok(TermFamily {
            dimension: generator.dimension(),
            terms: Terms::Covariant(generator),
            range: Some(range),
            norm_bound,
            label: label.into(),
        })
    }

    pub fn is_finite_range(&self) -> bool {
        self.range.is_some()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// R_h; for the all-to-all model this is the diameter of the region.
    pub fn range_for(&self, lambda: &Region) -> i64 {
        self.range.unwrap_or_else(|| lambda.diameter())
    }

    /// N_h
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn generator(&self) -> Option<&LocalOperator> {
        match &self.terms {
            Terms::Covariant(g) => Some(g),
            Terms::AllToAll { .. } => None,
        }
    }

    /// h_x as weighted local pieces.
    pub fn pieces(&self, x: &Site, lambda: &Region) -> Result<Vec<(LocalOperator, c64)>> {
        match &self.terms {
            Terms::Covariant(g) => Ok(vec![(g.translate(x.coords()), linalg::ONE)]),
            Terms::AllToAll { j, g } => {
                let n = lambda.len() as f64;
                let mut out = Vec::with_capacity(lambda.len() + 1);
                for y in lambda.sites() {
                    if *j == 0.0 {
                        break;
                    }
                    let coeff = c64::new(-j / n, 0.0);
                    if y == x {
                        // Z_x Z_x = 1
                        out.push((
                            LocalOperator::single_site(x.clone(), pauli::identity(), "1")?,
                            coeff,
                        ));
                    } else {
                        let (a, b) = if x < y { (x, y) } else { (y, x) };
                        out.push((
                            LocalOperator::new(
                                vec![a.clone(), b.clone()],
                                linalg::kron(pauli::z().as_ref(), pauli::z().as_ref()),
                                "ZZ",
                            )?,
                            coeff,
                        ));
                    }
                }
                if *g != 0.0 || out.is_empty() {
                    out.push((
                        LocalOperator::single_site(x.clone(), pauli::x(), "X")?,
                        c64::new(-g, 0.0),
                    ));
                }
                Ok(out)
            }
        }
    }

    /// The sites touched by h_x.
    pub fn support_of(&self, x: &Site, lambda: &Region) -> Result<Region> {
        let pieces = self.pieces(x, lambda)?;
        Region::new(
            self.dimension,
            pieces.into_iter().flat_map(|(op, _)| op.support().to_vec()),
        )
    }

    /// Dense h_x on its own support.
    pub fn term_matrix(&self, x: &Site, lambda: &Region) -> Result<(Region, Mat<c64>)> {
        let support = self.support_of(x, lambda)?;
        let mut sum = LocalSum::new(support.clone(), DEFAULT_LOCAL_DIM)?;
        for (op, c) in self.pieces(x, lambda)? {
            sum.push(op, c)?;
        }
        Ok((support, sum.to_dense()))
    }
}

fn check_param(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("non-physical value {v}")))
    }
}

fn bond_generator(dimension: usize, bond: impl Fn() -> Mat<c64>, onsite: Option<Mat<c64>>, label: &str) -> Result<LocalOperator> {
    let origin = Site::origin(dimension);
    let mut support = vec![origin.clone()];
    for axis in 0..dimension {
        let mut e = vec![0i64; dimension];
        e[axis] = 1;
        support.push(Site(e));
    }
    let support_region = Region::new(dimension, support)?;
    let mut sum = LocalSum::new(support_region.clone(), DEFAULT_LOCAL_DIM)?;
    for axis in 0..dimension {
        let mut e = vec![0i64; dimension];
        e[axis] = 1;
        sum.push(
            LocalOperator::new(vec![origin.clone(), Site(e)], bond(), "bond")?,
            linalg::ONE,
        )?;
    }
    if let Some(m) = onsite {
        sum.push(LocalOperator::single_site(origin, m, "site")?, linalg::ONE)?;
    }
    LocalOperator::hermitian(support_region.sites().to_vec(), sum.to_dense(), label)
}

/// Build the term family for a catalog model on Z^dimension.
pub fn catalog(model: Model, dimension: usize) -> Result<TermFamily> {
    if dimension == 0 {
        return Err(Error::invalid("dimension", "must be positive"));
    }
    let mu = dimension as f64;
    match model {
        Model::Tfi { j, g } => {
            check_param("J", j)?;
            check_param("g", g)?;
            let zz = move || linalg::scale(linalg::kron(pauli::z().as_ref(), pauli::z().as_ref()).as_ref(), c64::new(-j, 0.0));
            let field = linalg::scale(pauli::x().as_ref(), c64::new(-g, 0.0));
            let gen = bond_generator(dimension, zz, Some(field), &model.label())?;
            TermFamily::covariant(gen, 1, mu * j.abs() + g.abs(), model.label())
        }
        Model::Xxz { j, delta } => {
            check_param("J", j)?;
            check_param("delta", delta)?;
            let xxz = move || {
                let xx = linalg::kron(pauli::x().as_ref(), pauli::x().as_ref());
                let yy = linalg::kron(pauli::y().as_ref(), pauli::y().as_ref());
                let zz = linalg::kron(pauli::z().as_ref(), pauli::z().as_ref());
                Mat::from_fn(4, 4, |a, b| (xx[(a, b)] + yy[(a, b)] + zz[(a, b)] * delta) * j)
            };
            let gen = bond_generator(dimension, xxz, None, &model.label())?;
            TermFamily::covariant(gen, 1, mu * j.abs() * (2.0 + delta.abs()), model.label())
        }
        Model::AllToAll { j, g } => {
            check_param("J", j)?;
            check_param("g", g)?;
            Ok(TermFamily {
                terms: Terms::AllToAll { j, g },
                dimension,
                range: None,
                norm_bound: j.abs() + g.abs(),
                label: model.label(),
            })
        }
    }
}

/// H_Lambda as a dense Hermitian matrix on its acting region.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    id: u64,
    lambda: Region,
    acting: Region,
    exterior: Region,
    mode: BoundaryMode,
    matrix: Mat<c64>,
    norm_bound: f64,
    finite_range: bool,
    label: String,
    terms_used: usize,
}

impl Hamiltonian {
    /// Unique per assembled instance; keys the spectral cache.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn lambda(&self) -> &Region {
        &self.lambda
    }

    /// Region the matrix acts on: Lambda plus exterior boundary in embedded
    /// mode, Lambda alone in free mode.
    pub fn region(&self) -> &Region {
        &self.acting
    }

    /// Sites outside Lambda touched by some h_x with x in Lambda.
    pub fn exterior_boundary(&self) -> &Region {
        &self.exterior
    }

    /// |exterior boundary| / |Lambda|
    pub fn surface_ratio(&self) -> f64 {
        self.exterior.len() as f64 / self.lambda.len() as f64
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// N_h, the per-term norm bound of the generating family.
    pub fn term_norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn is_finite_range(&self) -> bool {
        self.finite_range
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn terms_used(&self) -> usize {
        self.terms_used
    }

    /// The same matrix viewed on a shifted copy of the lattice.
    pub fn translated(&self, x: &[i64]) -> Hamiltonian {
        Hamiltonian {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            lambda: self.lambda.translated(x),
            acting: self.acting.translated(x),
            exterior: self.exterior.translated(x),
            mode: self.mode,
            matrix: self.matrix.clone(),
            norm_bound: self.norm_bound,
            finite_range: self.finite_range,
            label: self.label.clone(),
            terms_used: self.terms_used,
        }
    }

    /// Wrap an arbitrary Hermitian matrix on a region (no exterior boundary).
    pub fn from_matrix(region: Region, matrix: Mat<c64>, label: impl Into<String>) -> Result<Self> {
        let dim = region.hilbert_dim(DEFAULT_LOCAL_DIM)?;
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: matrix.nrows(),
            });
        }
        let label = label.into();
        let dev = linalg::hermitian_deviation(matrix.as_ref());
        if dev > 1e-12 {
            return Err(Error::NotHermitian { label, deviation: dev });
        }
        let norm_bound = linalg::operator_norm(matrix.as_ref())?;
        Ok(Hamiltonian {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            exterior: Region::empty(region.dimension()),
            lambda: region.clone(),
            acting: region,
            mode: BoundaryMode::Free,
            matrix,
            norm_bound,
            finite_range: true,
            label,
            terms_used: 1,
        })
    }
}

struct Footprint {
    acting: Region,
    exterior: Region,
    selected: Vec<Site>,
}

fn footprint(terms: &TermFamily, lambda: &Region, mode: BoundaryMode) -> Result<Footprint> {
    if lambda.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if lambda.dimension() != terms.dimension() {
        return Err(Error::invalid(
            "region",
            format!(
                "lattice dimension {} does not match the model's {}",
                lambda.dimension(),
                terms.dimension()
            ),
        ));
    }
    let mut footprint = lambda.clone();
    let mut selected = Vec::new();
    for x in lambda.sites() {
        let support = terms.support_of(x, lambda)?;
        let inside = support.is_subset_of(lambda);
        footprint = footprint.union(&support);
        if mode == BoundaryMode::Embedded || inside {
            selected.push(x.clone());
        }
    }
    let exterior = footprint.difference(lambda);
    let acting = match mode {
        BoundaryMode::Embedded => footprint,
        BoundaryMode::Free => lambda.clone(),
    };
    Ok(Footprint {
        acting,
        exterior,
        selected,
    })
}

/// Sites H_Lambda acts on, without building it.
pub fn acting_region(terms: &TermFamily, lambda: &Region, mode: BoundaryMode) -> Result<Region> {
    Ok(footprint(terms, lambda, mode)?.acting)
}

/// H_Lambda = sum_{x in Lambda} h_x.
///
/// The exterior boundary is the minimal one: sites outside Lambda reached by
/// the support of some h_x, x in Lambda. `site_cap` bounds the acting region.
pub fn assemble(
    terms: &TermFamily,
    lambda: &Region,
    mode: BoundaryMode,
    site_cap: usize,
) -> Result<Hamiltonian> {
    let Footprint {
        acting,
        exterior,
        selected,
    } = footprint(terms, lambda, mode)?;
    let cap = site_cap.min(crate::lattice::HARD_SITE_CAP);
    if acting.len() > cap {
        return Err(Error::SizeCap {
            sites: acting.len(),
            cap,
        });
    }
    let mut sum = LocalSum::new(acting.clone(), DEFAULT_LOCAL_DIM)?;
    for x in &selected {
        for (op, c) in terms.pieces(x, lambda)? {
            sum.push(op, c)?;
        }
    }
    let matrix = sum.to_dense();
    let dev = linalg::hermitian_deviation(matrix.as_ref());
    if dev > 1e-12 {
        return Err(Error::NotHermitian {
            label: terms.label().to_string(),
            deviation: dev,
        });
    }
    Ok(Hamiltonian {
        id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        lambda: lambda.clone(),
        acting,
        exterior,
        mode,
        matrix,
        norm_bound: terms.norm_bound(),
        finite_range: terms.is_finite_range(),
        label: terms.label().to_string(),
        terms_used: selected.len(),
    })
}
