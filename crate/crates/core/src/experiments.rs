//! Scaling sweeps, decay fits, command-level runs and the markdown report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::SweepConfig;
use crate::correlations::{
    kms_check, kms_check_weights, nested_box, ordered_limit_scan, random_probes,
    wok_correlation, CorrelationSeries, PreparedProbes, ScanTable,
};
use crate::dynamics::{
    averaged_evolution_bound, lr_commutator_profile, BoundReport, BoundSetup, EvolutionContext,
    LrProfile, TimeGrid,
};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::hamiltonian::{assemble, BoundaryMode};
use crate::lattice::BoxRegion;
use crate::linalg::c64;
use crate::states::{equilibrium_weights, spectral_decompose, Beta, SpectralData};

/// Differences below this are treated as ties by [`strictly_decreasing`].
pub const DECREASE_FLOOR: f64 = 1e-12;

/// v[i+1] < v[i] - floor for every consecutive pair.
pub fn strictly_decreasing(v: &[f64], floor: f64) -> bool {
    v.windows(2).all(|w| w[1] < w[0] - floor)
}

/// c |Lambda|^{-p} fitted on log-log pairs.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    /// (|Lambda|, deviation) pairs entering the fit
    pub pairs: Vec<(f64, f64)>,
    /// pairs dropped for a zero deviation
    pub excluded: Vec<(f64, f64)>,
    pub c: f64,
    pub p: f64,
    /// root mean square of the log-space residuals
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn fit_decay(pairs: &[(f64, f64)]) -> Result<DecayFit> {
    let (used, excluded): (Vec<_>, Vec<_>) = pairs.iter().copied().partition(|(_, d)| *d > 0.0);
    if let Some((x, d)) = used.iter().find(|(x, d)| !(x.is_finite() && *x > 0.0 && d.is_finite())) {
        return Err(Error::InsufficientData(format!("invalid pair ({x}, {d})")));
    }
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} positive pairs, need at least 3",
            used.len()
        )));
    }
    let xs: Vec<f64> = used.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|(_, d)| d.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-300 {
        return Err(Error::InsufficientData("all sizes equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let note = (!excluded.is_empty()).then(|| format!("{} zero deviations excluded", excluded.len()));
    Ok(DecayFit {
        pairs: used,
        excluded,
        c: intercept.exp(),
        p: -slope,
        residual,
        note,
    })
}

pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn format_beta(b: Beta) -> String {
    match b {
        Beta::Finite(x) => format_f64(x),
        Beta::Infinite => "inf".into(),
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub model: &'static str,
    pub beta: Beta,
    pub size: usize,
    pub t: f64,
    pub f: c64,
    pub f0: c64,
    pub abs_dev: f64,
    pub state: &'static str,
    /// KMS residual of the state's own boundary identity; absent for ground rows
    pub kms_residual: Option<f64>,
}

pub const CSV_HEADER: [&str; 11] = [
    "model", "beta", "size", "t", "re_f", "im_f", "f0", "abs_dev", "state", "kms_residual", "im_f0",
];

impl SweepRow {
    /// f0 is Re f(0); its imaginary part goes last.
    pub fn record(&self) -> [String; 11] {
        [
            self.model.to_string(),
            format_beta(self.beta),
            self.size.to_string(),
            format_f64(self.t),
            format_f64(self.f.re),
            format_f64(self.f.im),
            format_f64(self.f0.re),
            format_f64(self.abs_dev),
            self.state.to_string(),
            format_f64(self.kms_residual.unwrap_or(f64::NAN)),
            format_f64(self.f0.im),
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaSummary {
    pub beta: Beta,
    pub state: &'static str,
    pub sizes: Vec<usize>,
    /// |Lambda| per size
    pub volumes: Vec<usize>,
    pub sup_deviation: Vec<f64>,
    pub strictly_decreasing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<DecayFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_kms_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub model: &'static str,
    pub label: String,
    pub boundary: BoundaryMode,
    pub observables: [&'static str; 2],
    pub seed: u64,
    pub per_beta: Vec<BetaSummary>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

fn prepare(cfg: &SweepConfig, n: usize) -> Result<SpectralData> {
    let terms = cfg.terms()?;
    let lambda = nested_box(cfg.dimension, n)?;
    let h = assemble(&terms, lambda.region(), cfg.boundary, cfg.size_cap)?;
    spectral_decompose(&h)
}

/// Every (beta, size) point of a sweep; `on_size` sees the rows of each size
/// as soon as they exist, in config order.
pub fn scaling_sweep_with(
    cfg: &SweepConfig,
    exec: ExecMode,
    on_size: &mut dyn FnMut(&[SweepRow]) -> Result<()>,
) -> Result<SweepOutput> {
    cfg.validate()?;
    let model = cfg.resolved_model();
    let grid = cfg.grid.grid()?;
    let a = cfg.observables.a.family(cfg.dimension)?;
    let b = cfg.observables.b.family(cfg.dimension)?;
    let mut rows = Vec::new();
    let mut series: Vec<Vec<(CorrelationSeries, Option<f64>)>> = vec![Vec::new(); cfg.beta.len()];
    for &n in &cfg.sizes {
        let sd = prepare(cfg, n)?;
        log::info!("sweep {}: size {n}, dim {}", model.label(), sd.dim());
        let probes = if cfg.kms.sweep_probes > 0 && cfg.beta.iter().any(|b| !b.is_infinite()) {
            let p = random_probes(sd.lambda(), cfg.kms.sweep_probes, cfg.seed.wrapping_add(n as u64))?;
            Some(PreparedProbes::new(&sd, &p, exec)?)
        } else {
            None
        };
        let mut size_rows = Vec::new();
        for (k, &beta) in cfg.beta.iter().enumerate() {
            let s = wok_correlation(&sd, beta, &a, &b, &grid, exec)?;
            let kms = match (beta, &probes) {
                (Beta::Finite(x), Some(p)) => Some(kms_check(&sd, x, p, grid.times(), exec)?.max_residual),
                _ => None,
            };
            let f0 = s.f0();
            for (t, f) in s.times.iter().zip(&s.values) {
                size_rows.push(SweepRow {
                    model: model.id(),
                    beta,
                    size: n,
                    t: *t,
                    f: *f,
                    f0,
                    abs_dev: (f - f0).norm(),
                    state: s.state,
                    kms_residual: kms,
                });
            }
            series[k].push((s, kms));
        }
        on_size(&size_rows)?;
        rows.extend(size_rows);
    }
    let per_beta = cfg
        .beta
        .iter()
        .zip(series)
        .map(|(&beta, ss)| {
            let sup: Vec<f64> = ss.iter().map(|(s, _)| s.sup_deviation).collect();
            let volumes: Vec<usize> = ss.iter().map(|(s, _)| s.lambda_size).collect();
            let pairs: Vec<(f64, f64)> = volumes.iter().map(|&v| v as f64).zip(sup.iter().copied()).collect();
            let (fit, fit_error) = match fit_decay(&pairs) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let kms = ss.iter().filter_map(|(_, k)| *k).reduce(f64::max);
            BetaSummary {
                beta,
                state: ss[0].0.state,
                sizes: cfg.sizes.clone(),
                volumes,
                strictly_decreasing: strictly_decreasing(&sup, DECREASE_FLOOR),
                sup_deviation: sup,
                fit,
                fit_error,
                max_kms_residual: kms,
            }
        })
        .collect();
    Ok(SweepOutput {
        rows,
        summary: SweepSummary {
            model: model.id(),
            label: model.label(),
            boundary: cfg.boundary,
            observables: [cfg.observables.a.name(), cfg.observables.b.name()],
            seed: cfg.seed,
            per_beta,
        },
    })
}

pub fn scaling_sweep(cfg: &SweepConfig, exec: ExecMode) -> Result<SweepOutput> {
    scaling_sweep_with(cfg, exec, &mut |_| Ok(()))
}

/// Runs the sweep, writing rows to `csv_path` size by size so that a failure
/// leaves the completed sizes on disk.
pub fn scaling_sweep_to(cfg: &SweepConfig, exec: ExecMode, csv_path: &Path) -> Result<SweepOutput> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(CSV_HEADER)?;
    w.flush()?;
    let out = scaling_sweep_with(cfg, exec, &mut |rows| {
        for r in rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
        Ok(())
    });
    w.flush()?;
    out
}

/// CSV text of a sweep.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Correlation series for every (size, beta) of the config.
pub fn wok_runs(cfg: &SweepConfig, exec: ExecMode) -> Result<Vec<CorrelationSeries>> {
    cfg.validate()?;
    let grid = cfg.grid.grid()?;
    let a = cfg.observables.a.family(cfg.dimension)?;
    let b = cfg.observables.b.family(cfg.dimension)?;
    let mut out = Vec::new();
    for &n in &cfg.sizes {
        let sd = prepare(cfg, n)?;
        for &beta in &cfg.beta {
            out.push(wok_correlation(&sd, beta, &a, &b, &grid, exec)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct KmsRun {
    pub model: &'static str,
    pub size: usize,
    pub beta: f64,
    pub state: &'static str,
    pub probes: usize,
    pub max_upper: f64,
    pub max_lower: f64,
    pub max_residual: f64,
    /// ground state tested at beta = 1; expected to violate the identity
    pub control: bool,
    /// residual within tolerance, or above 1e-2 for a control
    pub passed: bool,
}

/// Residual a negative control must exceed.
pub const CONTROL_THRESHOLD: f64 = 1e-2;

/// KMS check for every size and finite beta of the config, plus the ground
/// state control when enabled. Infinite beta entries are skipped.
pub fn kms_suite(cfg: &SweepConfig, exec: ExecMode) -> Result<Vec<KmsRun>> {
    cfg.validate()?;
    let model = cfg.resolved_model();
    let times = cfg.grid.grid()?;
    let mut out = Vec::new();
    for &n in &cfg.sizes {
        let sd = prepare(cfg, n)?;
        let probes = random_probes(sd.lambda(), cfg.kms.probes, cfg.seed.wrapping_add(n as u64))?;
        let prepared = PreparedProbes::new(&sd, &probes, exec)?;
        for beta in cfg.beta.iter().filter_map(Beta::finite) {
            let r = kms_check(&sd, beta, &prepared, times.times(), exec)?;
            out.push(KmsRun {
                model: model.id(),
                size: n,
                beta,
                state: r.state,
                probes: r.probes,
                max_upper: r.max_upper,
                max_lower: r.max_lower,
                max_residual: r.max_residual,
                control: false,
                passed: r.max_residual <= cfg.kms.tolerance,
            });
        }
        if cfg.kms.negative_control {
            let (w, kind) = equilibrium_weights(&sd, Beta::Infinite)?;
            let r = kms_check_weights(&sd, &w, kind, 1.0, &prepared, times.times(), exec)?;
            out.push(KmsRun {
                model: model.id(),
                size: n,
                beta: 1.0,
                state: r.state,
                probes: r.probes,
                max_upper: r.max_upper,
                max_lower: r.max_lower,
                max_residual: r.max_residual,
                control: true,
                passed: r.max_residual > CONTROL_THRESHOLD,
            });
        }
    }
    Ok(out)
}

/// Lambda: the bound section's box anchored at the origin; proxy: Lambda
/// widened by the margin on every side.
pub fn bound_run(cfg: &SweepConfig, exec: ExecMode) -> Result<BoundReport> {
    cfg.validate()?;
    let b = &cfg.bound;
    let d = cfg.dimension;
    let terms = cfg.terms()?;
    let family = cfg.observables.a.family(d)?;
    let lambda = BoxRegion::new(vec![0; d], vec![b.lambda; d])?;
    let proxy = BoxRegion::new(
        vec![-(b.proxy_margin as i64); d],
        vec![b.lambda + 2 * b.proxy_margin; d],
    )?;
    averaged_evolution_bound(&BoundSetup {
        terms: &terms,
        family: &family,
        lambda: &lambda,
        proxy: &proxy,
        m: b.m,
        t0: b.t0,
        eps: b.eps,
        points: b.points,
        mode: cfg.boundary,
        site_cap: cfg.size_cap,
        exec,
    })
}

/// Commutator profile of the `a0` observable at the origin against the
/// probe observable at every site.
pub fn lr_run(cfg: &SweepConfig, _exec: ExecMode) -> Result<LrProfile> {
    cfg.validate()?;
    let lr = &cfg.lr;
    let d = cfg.dimension;
    let terms = cfg.terms()?;
    let region = nested_box(d, lr.length)?;
    let h = assemble(&terms, region.region(), cfg.boundary, cfg.size_cap)?;
    let sd = std::sync::Arc::new(spectral_decompose(&h)?);
    let a0 = lr.a0.generator(d)?;
    let probe = lr.probe.generator(d)?;
    let probes: Vec<_> = region
        .sites()
        .iter()
        .map(|x| probe.translate(x.coords()))
        .filter(|p| p.support().iter().all(|s| region.contains(s)))
        .collect();
    let ctx = EvolutionContext::new(sd, TimeGrid::uniform(0.0, lr.t_max, lr.points)?);
    lr_commutator_profile(&a0, &probes, &ctx, lr.front_threshold)
}

/// One scan table per beta of the config.
pub fn triple_run(cfg: &SweepConfig, exec: ExecMode) -> Result<Vec<ScanTable>> {
    cfg.validate()?;
    let terms = cfg.terms()?;
    let a = cfg.observables.a.family(cfg.dimension)?;
    let b = cfg.observables.b.family(cfg.dimension)?;
    let grid = cfg.grid.grid()?;
    let triples: Vec<(usize, usize, usize)> =
        cfg.triple.triples.iter().map(|t| (t[0], t[1], t[2])).collect();
    cfg.beta
        .iter()
        .map(|&beta| {
            ordered_limit_scan(&terms, &a, &b, &triples, beta, &grid, cfg.boundary, cfg.size_cap, exec)
        })
        .collect()
}

/// Artifact JSON: `{"kind": ..., "data": ...}`.
pub fn envelope<T: Serialize>(kind: &str, data: &T) -> Result<Value> {
    Ok(serde_json::json!({ "kind": kind, "data": serde_json::to_value(data)? }))
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub value: Value,
}

/// Reads artifact files; unreadable or malformed ones are returned by name.
pub fn load_artifacts<P: AsRef<Path>>(paths: &[P]) -> (Vec<Artifact>, Vec<String>) {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let name = p.display().to_string();
        let parsed = std::fs::read_to_string(p)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<Value>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(v) if v.get("kind").and_then(Value::as_str).is_some() => found.push(Artifact { name, value: v }),
            Ok(_) => missing.push(format!("{name}: not an artifact (no kind)")),
            Err(e) => missing.push(format!("{name}: {e}")),
        }
    }
    (found, missing)
}

/// Round values such as 0.5 or 10 print as they are, the rest in scientific notation.
fn short(x: f64) -> String {
    let round = x == 0.0 || (x.abs() >= 1e-3 && x.abs() < 1e6 && (x * 1e6).round() == x * 1e6);
    if round { format!("{x}") } else { format!("{x:.6e}") }
}

fn num(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map(short).unwrap_or_default(),
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn of_kind<'a>(artifacts: &'a [Artifact], kind: &str) -> Vec<&'a Artifact> {
    artifacts
        .iter()
        .filter(|a| a.value["kind"].as_str() == Some(kind))
        .collect()
}

fn kms_section(out: &mut String, items: &[&Artifact]) {
    let _ = writeln!(out, "## kms: F(t + i beta) = phi(alpha_t(B) A)\n");
    let _ = writeln!(out, "| source | model | size | beta | state | probes | max residual | control | passed |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|");
    for a in items {
        for r in a.value["data"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                a.name,
                num(&r["model"]),
                r["size"],
                num(&r["beta"]),
                num(&r["state"]),
                r["probes"],
                num(&r["max_residual"]),
                r["control"],
                r["passed"]
            );
        }
    }
    out.push('\n');
}

fn wok_section(out: &mut String, sweeps: &[&Artifact], series: &[&Artifact]) {
    let _ = writeln!(out, "## wok: sup_t |f(t) - f(0)| against volume\n");
    for a in sweeps {
        let d = &a.value["data"];
        let _ = writeln!(out, "{} ({}, {} boundary)\n", a.name, num(&d["label"]), num(&d["boundary"]));
        let _ = writeln!(out, "| beta | state | sizes | sup deviation | strictly decreasing | c | p | fit residual |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
        for b in d["per_beta"].as_array().into_iter().flatten() {
            let list = |v: &Value, f: &dyn Fn(&Value) -> String| {
                v.as_array().map(|xs| xs.iter().map(f).collect::<Vec<_>>().join(", ")).unwrap_or_default()
            };
            let fit = &b["fit"];
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                num(&b["beta"]),
                num(&b["state"]),
                list(&b["sizes"], &|v| v.to_string()),
                list(&b["sup_deviation"], &num),
                b["strictly_decreasing"],
                num(&fit["c"]),
                num(&fit["p"]),
                if fit.is_null() { num(&b["fit_error"]) } else { num(&fit["residual"]) },
            );
        }
        out.push('\n');
    }
    if !series.is_empty() {
        let _ = writeln!(out, "| source | hamiltonian | beta | state | volume | sup deviation |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for a in series {
            for s in a.value["data"].as_array().into_iter().flatten() {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    a.name,
                    num(&s["hamiltonian"]),
                    num(&s["beta"]),
                    num(&s["state"]),
                    s["lambda_size"],
                    num(&s["sup_deviation"])
                );
            }
        }
        out.push('\n');
    }
}

fn bound_section(out: &mut String, items: &[&Artifact]) {
    let _ = writeln!(
        out,
        "## bound: ||alpha_proxy,t(A_Lambda) - alpha_Lambda,t(A_Lambda)|| <= eps/2 + 2a |boundary| / |Lambda|\n"
    );
    let _ = writeln!(out, "| source | \\|Lambda\\| | m | t0 | eps | max measured | predicted | holds |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for a in items {
        let d = &a.value["data"];
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            a.name,
            d["lambda_size"],
            d["m"],
            num(&d["t0"]),
            num(&d["eps"]),
            num(&d["max_measured"]),
            num(&d["predicted"]),
            d["holds"]
        );
    }
    out.push('\n');
}

fn lr_section(out: &mut String, items: &[&Artifact]) {
    let _ = writeln!(out, "## lr-cone: ||[alpha_t(A0), B_x]|| front\n");
    let _ = writeln!(out, "| source | threshold | final front | cone slope |");
    let _ = writeln!(out, "|---|---|---|---|");
    for a in items {
        let d = &a.value["data"];
        let front = d["front"].as_array().and_then(|f| f.last()).cloned().unwrap_or(Value::Null);
        let _ = writeln!(out, "| {} | {} | {} | {} |", a.name, num(&d["front_threshold"]), front, num(&d["cone_slope"]));
    }
    out.push('\n');
}

fn triple_section(out: &mut String, items: &[&Artifact]) {
    let _ = writeln!(out, "## triple-limit: rho_n1(alpha_n2,t(A_n3) B_n3)\n");
    let _ = writeln!(out, "| source | beta | (n3, n2, n1) | sup_t |f(t) - f(0)| |");
    let _ = writeln!(out, "|---|---|---|---|");
    for a in items {
        for table in a.value["data"].as_array().into_iter().flatten() {
            let rows = table["rows"].as_array().cloned().unwrap_or_default();
            let mut keys: Vec<(u64, u64, u64)> = Vec::new();
            for r in &rows {
                let k = (r["n3"].as_u64().unwrap_or(0), r["n2"].as_u64().unwrap_or(0), r["n1"].as_u64().unwrap_or(0));
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
            for k in keys {
                let vals: Vec<(f64, f64, f64)> = rows
                    .iter()
                    .filter(|r| (r["n3"].as_u64(), r["n2"].as_u64(), r["n1"].as_u64()) == (Some(k.0), Some(k.1), Some(k.2)))
                    .map(|r| (r["t"].as_f64().unwrap_or(0.0), r["re_f"].as_f64().unwrap_or(0.0), r["im_f"].as_f64().unwrap_or(0.0)))
                    .collect();
                let f0 = vals.iter().find(|v| v.0 == 0.0).map(|v| c64::new(v.1, v.2)).unwrap_or_default();
                let sup = vals.iter().map(|v| (c64::new(v.1, v.2) - f0).norm()).fold(0.0, f64::max);
                let _ = writeln!(out, "| {} | {} | ({}, {}, {}) | {:.6e} |", a.name, num(&table["beta"]), k.0, k.1, k.2, sup);
            }
        }
    }
    out.push('\n');
}

/// Markdown summary of the given artifacts. Missing inputs are listed, not fatal.
pub fn report(artifacts: &[Artifact], missing: &[String]) -> String {
    let mut out = String::from("# kmslab report\n\n");
    let kms = of_kind(artifacts, "kms");
    let sweeps = of_kind(artifacts, "sweep");
    let wok = of_kind(artifacts, "wok");
    let bound = of_kind(artifacts, "bound");
    let lr = of_kind(artifacts, "lr");
    let triple = of_kind(artifacts, "triple");
    let any = !(kms.is_empty() && sweeps.is_empty() && wok.is_empty() && bound.is_empty() && lr.is_empty() && triple.is_empty());
    if !any {
        out.push_str("no runs\n\n");
    }
    if !kms.is_empty() {
        kms_section(&mut out, &kms);
    }
    if !sweeps.is_empty() || !wok.is_empty() {
        wok_section(&mut out, &sweeps, &wok);
    }
    if !bound.is_empty() {
        bound_section(&mut out, &bound);
    }
    if !lr.is_empty() {
        lr_section(&mut out, &lr);
    }
    if !triple.is_empty() {
        triple_section(&mut out, &triple);
    }
    if !missing.is_empty() {
        out.push_str("## missing artifacts\n\n");
        for m in missing {
            let _ = writeln!(out, "- {m}");
        }
        out.push('\n');
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelId, ObservableId, Observables};

    fn small(model: ModelId) -> SweepConfig {
        SweepConfig {
            model,
            sizes: vec![2, 3, 4],
            beta: vec![Beta::Finite(0.0), Beta::Finite(1.0), Beta::Infinite],
            ..SweepConfig::default()
        }
    }

    #[test]
    fn exact_power_laws() {
        let f = fit_decay(&[(4.0, 0.25), (6.0, 1.0 / 6.0), (8.0, 0.125), (10.0, 0.1)]).unwrap();
        assert!((f.p - 1.0).abs() < 1e-6 && (f.c - 1.0).abs() < 1e-6 && f.residual < 1e-12);
        let f = fit_decay(&[(4.0, 0.3), (6.0, 0.3), (8.0, 0.3)]).unwrap();
        assert!(f.p.abs() < 1e-6);
        let f = fit_decay(&[(2.0, 0.0), (4.0, 0.5), (8.0, 0.25), (16.0, 0.125)]).unwrap();
        assert_eq!(f.excluded.len(), 1);
        assert!(f.note.is_some());
        assert!(fit_decay(&[(4.0, 0.1), (6.0, 0.0), (8.0, 0.05)]).is_err());
        assert!(fit_decay(&[(4.0, 0.1), (4.0, 0.2), (4.0, 0.05)]).is_err());
    }

    #[test]
    fn decrease_floor() {
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0], DECREASE_FLOOR));
        assert!(!strictly_decreasing(&[0.0, 0.0, 0.0], DECREASE_FLOOR));
        assert!(!strictly_decreasing(&[1.0, 1.0 - 1e-14], DECREASE_FLOOR));
        assert!(strictly_decreasing(&[1.0], DECREASE_FLOOR));
    }

    #[test]
    fn identity_observables_have_zero_deviation() {
        let cfg = SweepConfig {
            sizes: vec![4],
            observables: Observables { a: ObservableId::Identity, b: ObservableId::Identity },
            ..SweepConfig::default()
        };
        let out = scaling_sweep(&cfg, ExecMode::Parallel).unwrap();
        assert_eq!(out.rows.len(), 41);
        assert!(out.rows.iter().all(|r| r.abs_dev == 0.0));
    }

    #[test]
    fn sweep_rows_and_states() {
        let cfg = small(ModelId::Tfi);
        let out = scaling_sweep(&cfg, ExecMode::Parallel).unwrap();
        assert_eq!(out.rows.len(), 3 * 3 * 41);
        for r in &out.rows {
            match r.beta {
                Beta::Finite(0.0) => {
                    assert_eq!(r.state, "tracial");
                    assert!(r.kms_residual.unwrap() <= 1e-9);
                }
                Beta::Finite(_) => assert!(r.kms_residual.unwrap() <= 1e-9),
                Beta::Infinite => {
                    assert_eq!(r.state, "ground");
                    assert!(r.kms_residual.is_none());
                }
            }
        }
        let csv = sweep_csv(&out.rows).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let ground = csv.lines().find(|l| l.contains(",inf,")).unwrap();
        assert!(ground.contains(",ground,nan,"));
        assert_eq!(out.summary.per_beta.len(), 3);
    }

    #[test]
    fn rows_replay_through_correlations() {
        let cfg = small(ModelId::Xxz);
        let out = scaling_sweep(&cfg, ExecMode::Sequential).unwrap();
        let row = out.rows.iter().find(|r| r.size == 3 && r.beta == Beta::Finite(1.0) && r.t == 1.0).unwrap();
        let sd = prepare(&cfg, 3).unwrap();
        let fam = ObservableId::Sz.family(1).unwrap();
        let single = wok_correlation(&sd, Beta::Finite(1.0), &fam, &fam, &TimeGrid::new(vec![0.0, 1.0]).unwrap(), ExecMode::Sequential).unwrap();
        assert!((single.values[1] - row.f).norm() < 1e-12);
    }

    #[test]
    fn partial_results_flushed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let cfg = SweepConfig { sizes: vec![2, 3], ..small(ModelId::Tfi) };
        let mut calls = 0;
        let err = scaling_sweep_with(&cfg, ExecMode::Parallel, &mut |_| {
            calls += 1;
            if calls == 2 { Err(Error::Eigensolver("injected".into())) } else { Ok(()) }
        });
        assert!(err.is_err());
        let out = scaling_sweep_to(&cfg, ExecMode::Parallel, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, sweep_csv(&out.rows).unwrap());
    }

    #[test]
    fn kms_suite_with_control() {
        let cfg = SweepConfig { sizes: vec![3], beta: vec![Beta::Finite(0.5), Beta::Infinite], ..SweepConfig::default() };
        let runs = kms_suite(&cfg, ExecMode::Parallel).unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs.iter().all(|r| r.passed));
        assert!(runs[1].control && runs[1].max_residual > CONTROL_THRESHOLD);
    }

    #[test]
    fn report_sections() {
        assert!(report(&[], &[]).contains("no runs"));
        let cfg = small(ModelId::Tfi);
        let sweep = scaling_sweep(&cfg, ExecMode::Parallel).unwrap();
        let kms = kms_suite(&SweepConfig { sizes: vec![3], ..SweepConfig::default() }, ExecMode::Parallel).unwrap();
        let bound = bound_run(
            &SweepConfig {
                bound: crate::config::BoundSection { lambda: 4, m: 1, points: 5, ..Default::default() },
                ..SweepConfig::default()
            },
            ExecMode::Parallel,
        )
        .unwrap();
        let arts = vec![
            Artifact { name: "kms.json".into(), value: envelope("kms", &kms).unwrap() },
            Artifact { name: "sweep.json".into(), value: envelope("sweep", &sweep.summary).unwrap() },
            Artifact { name: "bound.json".into(), value: envelope("bound", &bound).unwrap() },
        ];
        let r = report(&arts, &["gone.json: missing".into()]);
        for h in ["## kms", "## wok", "## bound", "## missing artifacts", "gone.json"] {
            assert!(r.contains(h), "{h}");
        }
        assert!(!r.contains("no runs"));
    }
}
