//! Run configuration: strict JSON parsing, validation and run manifests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlations::nested_box;
use crate::dynamics::TimeGrid;
use crate::error::{Error, Result};
use crate::hamiltonian::{acting_region, catalog, BoundaryMode, Model, TermFamily};
use crate::lattice::{pauli, CovariantFamily, LocalOperator, Site, HARD_SITE_CAP};
use crate::linalg::{kron, Mat};
use crate::linalg::c64;
use crate::states::Beta;

pub const DEFAULT_SIZE_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    Tfi,
    Xxz,
    AllToAll,
}

/// Observable families by name; `zz` is the nearest-neighbour bond along the first axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableId {
    Sx,
    Sy,
    Sz,
    Zz,
    Identity,
}

impl ObservableId {
    pub fn name(self) -> &'static str {
        match self {
            ObservableId::Sx => "sx",
            ObservableId::Sy => "sy",
            ObservableId::Sz => "sz",
            ObservableId::Zz => "zz",
            ObservableId::Identity => "identity",
        }
    }

    /// The generator anchored at the origin of a `dimension`-dimensional lattice.
    pub fn generator(self, dimension: usize) -> Result<LocalOperator> {
        let origin = Site::origin(dimension);
        let one = |m: Mat<c64>| LocalOperator::hermitian(vec![origin.clone()], m, self.name());
        match self {
            ObservableId::Sx => one(pauli::x()),
            ObservableId::Sy => one(pauli::y()),
            ObservableId::Sz => one(pauli::z()),
            ObservableId::Identity => one(pauli::identity()),
            ObservableId::Zz => {
                let mut e = vec![0; dimension];
                e[0] = 1;
                LocalOperator::hermitian(
                    vec![origin.clone(), origin.shifted(&e)],
                    kron(pauli::z().as_ref(), pauli::z().as_ref()),
                    self.name(),
                )
            }
        }
    }

    pub fn family(self, dimension: usize) -> Result<CovariantFamily> {
        CovariantFamily::from_generator(self.generator(dimension)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            start: 0.0,
            stop: 2.0,
            points: 41,
        }
    }
}

impl GridSpec {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.start, self.stop, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observables {
    pub a: ObservableId,
    pub b: ObservableId,
}

impl Default for Observables {
    fn default() -> Self {
        Observables {
            a: ObservableId::Sz,
            b: ObservableId::Sz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmsSection {
    /// probe pairs for `kms-check`
    pub probes: usize,
    /// probe pairs behind the kms_residual column of a sweep; 0 leaves it empty
    pub sweep_probes: usize,
    /// also check the ground state against beta = 1, which must fail
    pub negative_control: bool,
    pub tolerance: f64,
}

impl Default for KmsSection {
    fn default() -> Self {
        KmsSection {
            probes: 20,
            sweep_probes: 4,
            negative_control: true,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSection {
    /// side of Lambda
    pub lambda: usize,
    /// extra sites on each side of Lambda in the proxy region
    pub proxy_margin: usize,
    pub m: usize,
    pub t0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub points: usize,
}

impl Default for BoundSection {
    fn default() -> Self {
        BoundSection {
            lambda: 10,
            proxy_margin: 1,
            m: 3,
            t0: 0.5,
            eps: None,
            points: 21,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSection {
    /// side of the region, centred on the origin
    pub length: usize,
    pub t_max: f64,
    pub points: usize,
    pub front_threshold: f64,
    pub a0: ObservableId,
    pub probe: ObservableId,
}

impl Default for LrSection {
    fn default() -> Self {
        LrSection {
            length: 11,
            t_max: 2.0,
            points: 21,
            front_threshold: 1e-3,
            a0: ObservableId::Sz,
            probe: ObservableId::Sx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripleSection {
    /// [n3, n2, n1] with n3 <= n2 <= n1
    pub triples: Vec<[usize; 3]>,
}

impl Default for TripleSection {
    fn default() -> Self {
        TripleSection {
            triples: vec![[2, 4, 6], [2, 4, 8], [2, 6, 8], [2, 8, 8]],
        }
    }
}

fn default_dimension() -> usize {
    1
}
fn default_seed() -> u64 {
    1
}
fn default_cap() -> usize {
    DEFAULT_SIZE_CAP
}

/// One run: model, state temperatures, sizes and per-command sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: ModelId,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub beta: Vec<Beta>,
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub observables: Observables,
    #[serde(default)]
    pub boundary: BoundaryMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub size_cap: usize,
    #[serde(default)]
    pub kms: KmsSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub lr: LrSection,
    #[serde(default)]
    pub triple: TripleSection,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            model: ModelId::Tfi,
            j: None,
            g: None,
            delta: None,
            dimension: 1,
            beta: vec![Beta::Finite(1.0)],
            sizes: vec![4, 6, 8, 10],
            grid: GridSpec::default(),
            observables: Observables::default(),
            boundary: BoundaryMode::Embedded,
            seed: default_seed(),
            size_cap: DEFAULT_SIZE_CAP,
            kms: KmsSection::default(),
            bound: BoundSection::default(),
            lr: LrSection::default(),
            triple: TripleSection::default(),
        }
    }
}

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(path, format!("must be positive and finite, got {v}")))
    }
}

impl SweepConfig {
    /// Model with parameter defaults applied (all couplings 1).
    pub fn resolved_model(&self) -> Model {
        let j = self.j.unwrap_or(1.0);
        match self.model {
            ModelId::Tfi => Model::Tfi {
                j,
                g: self.g.unwrap_or(1.0),
            },
            ModelId::Xxz => Model::Xxz {
                j,
                delta: self.delta.unwrap_or(1.0),
            },
            ModelId::AllToAll => Model::AllToAll {
                j,
                g: self.g.unwrap_or(1.0),
            },
        }
    }

    /// Copy with every default written out, as echoed in manifests.
    pub fn resolved(&self) -> SweepConfig {
        let mut c = self.clone();
        match self.resolved_model() {
            Model::Tfi { j, g } | Model::AllToAll { j, g } => {
                c.j = Some(j);
                c.g = Some(g);
            }
            Model::Xxz { j, delta } => {
                c.j = Some(j);
                c.delta = Some(delta);
            }
        }
        c
    }

    pub fn terms(&self) -> Result<TermFamily> {
        catalog(self.resolved_model(), self.dimension)
    }

    /// Checks every field; errors carry the JSON path of the offending value.
    pub fn validate(&self) -> Result<()> {
        let unused = match self.model {
            ModelId::Tfi | ModelId::AllToAll => ("delta", self.delta.is_some()),
            ModelId::Xxz => ("g", self.g.is_some()),
        };
        if unused.1 {
            return Err(cfg_err(
                unused.0,
                format!("not a parameter of model {:?}", self.resolved_model().id()),
            ));
        }
        for (name, v) in [("J", self.j), ("g", self.g), ("delta", self.delta)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(cfg_err(name, "must be finite"));
                }
            }
        }
        if self.dimension == 0 || self.dimension > 3 {
            return Err(cfg_err("dimension", "must be 1, 2 or 3"));
        }
        if self.size_cap == 0 || self.size_cap > HARD_SITE_CAP {
            return Err(cfg_err(
                "size_cap",
                format!("size-cap must lie in 1..={HARD_SITE_CAP}, got {}", self.size_cap),
            ));
        }
        if self.beta.is_empty() {
            return Err(cfg_err("beta", "needs at least one entry"));
        }
        for (i, b) in self.beta.iter().enumerate() {
            if let Beta::Finite(x) = b {
                if !(x.is_finite() && *x >= 0.0) {
                    return Err(cfg_err(
                        format!("beta[{i}]"),
                        format!("beta must be a number >= 0 or \"inf\", got {x}"),
                    ));
                }
            }
        }
        if self.sizes.is_empty() {
            return Err(cfg_err("sizes", "needs at least one entry"));
        }
        let terms = self.terms().map_err(|e| cfg_err("model", e.to_string()))?;
        for (i, &n) in self.sizes.iter().enumerate() {
            if n == 0 {
                return Err(cfg_err(format!("sizes[{i}]"), "must be positive"));
            }
            if i > 0 && n <= self.sizes[i - 1] {
                return Err(cfg_err(format!("sizes[{i}]"), "sizes must be strictly ascending"));
            }
            self.check_cap(&terms, n, self.boundary, &format!("sizes[{i}]"))?;
        }
        self.grid.grid().map_err(|e| cfg_err("grid", e.to_string()))?;

        if self.kms.probes == 0 {
            return Err(cfg_err("kms.probes", "must be positive"));
        }
        positive("kms.tolerance", self.kms.tolerance)?;

        let b = &self.bound;
        if b.lambda == 0 {
            return Err(cfg_err("bound.lambda", "must be positive"));
        }
        if b.m == 0 {
            return Err(cfg_err("bound.m", "must be positive"));
        }
        positive("bound.t0", b.t0)?;
        if let Some(e) = b.eps {
            positive("bound.eps", e)?;
        }
        if b.points == 0 || b.points % 2 == 0 {
            return Err(cfg_err("bound.points", "must be odd (symmetric grid)"));
        }

        let lr = &self.lr;
        if lr.length == 0 {
            return Err(cfg_err("lr.length", "must be positive"));
        }
        positive("lr.t_max", lr.t_max)?;
        positive("lr.front_threshold", lr.front_threshold)?;
        if lr.points < 2 {
            return Err(cfg_err("lr.points", "need at least 2"));
        }

        for (i, t) in self.triple.triples.iter().enumerate() {
            let [n3, n2, n1] = *t;
            if n3 == 0 || n3 > n2 || n2 > n1 {
                return Err(cfg_err(
                    format!("triple.triples[{i}]"),
                    format!("need 0 < n3 <= n2 <= n1, got {t:?}"),
                ));
            }
        }
        Ok(())
    }

    fn check_cap(&self, terms: &TermFamily, n: usize, mode: BoundaryMode, path: &str) -> Result<()> {
        if n.checked_pow(self.dimension as u32).map_or(true, |v| v > HARD_SITE_CAP) {
            return Err(cfg_err(path, format!("size-cap: {n} per axis exceeds {HARD_SITE_CAP} sites")));
        }
        let lambda = nested_box(self.dimension, n)?;
        let acting = acting_region(terms, lambda.region(), mode)?;
        if acting.len() > self.size_cap {
            return Err(cfg_err(
                path,
                format!(
                    "size-cap: size {n} acts on {} sites, above the cap of {}",
                    acting.len(),
                    self.size_cap
                ),
            ));
        }
        Ok(())
    }

    /// Canonical JSON: keys sorted, defaults resolved.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self.resolved()).expect("config serializes");
        // serde_json::Map keeps keys sorted
        v.to_string()
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates a JSON config. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<SweepConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: SweepConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        cfg_err(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: &'static str,
    pub timestamp: String,
    pub platform: String,
    pub threads: usize,
    pub parallel: bool,
    pub resolved: SweepConfig,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &SweepConfig, threads: usize, parallel: bool) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: chrono::Utc::now().to_rfc3339(),
            platform: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
            threads,
            parallel,
            resolved: cfg.resolved(),
        }
    }
}
