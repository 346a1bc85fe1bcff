//! The report for a fixed small pipeline matches the checked-in document.
//! Regenerate with `UPDATE_GOLDEN=1 cargo test --test report_golden`.

use kmslab::config::{BoundSection, GridSpec, SweepConfig};
use kmslab::exec::ExecMode;
use kmslab::experiments::{bound_run, envelope, kms_suite, report, scaling_sweep, Artifact};
use kmslab::states::Beta;

fn artifact(name: &str, kind: &str, value: &impl serde::Serialize) -> Artifact {
    Artifact { name: name.into(), value: envelope(kind, value).unwrap() }
}

#[test]
fn tfi_pipeline_report() {
    let cfg = SweepConfig {
        beta: vec![Beta::Finite(1.0), Beta::Infinite],
        sizes: vec![3, 4, 5, 6],
        grid: GridSpec { start: 0.0, stop: 2.0, points: 21 },
        bound: BoundSection { lambda: 4, m: 1, points: 5, ..BoundSection::default() },
        seed: 11,
        ..SweepConfig::default()
    };
    // KMS residuals sit at rounding level; keep only the pass flags and the control
    let mut kms = kms_suite(&SweepConfig { sizes: vec![4], ..cfg.clone() }, ExecMode::Sequential).unwrap();
    for r in kms.iter_mut().filter(|r| !r.control) {
        assert!(r.max_residual <= 1e-9);
        r.max_upper = 0.0;
        r.max_lower = 0.0;
        r.max_residual = 0.0;
    }
    let mut sweep = scaling_sweep(&cfg, ExecMode::Sequential).unwrap().summary;
    for b in &mut sweep.per_beta {
        b.max_kms_residual = None;
    }
    let bound = bound_run(&cfg, ExecMode::Sequential).unwrap();
    let doc = report(
        &[
            artifact("kms.json", "kms", &kms),
            artifact("sweep.json", "sweep", &sweep),
            artifact("bound.json", "bound", &bound),
        ],
        &[],
    );
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.md");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &doc).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    assert_eq!(doc, golden);
}
