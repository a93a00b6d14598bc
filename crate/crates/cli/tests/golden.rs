//! Regression tests pinning the metastability and localization outputs.
//! Set `SHEARLAB_UPDATE_GOLDEN=1` to rewrite the reference files.

mod common;

use std::fs;
use std::path::Path;

use common::*;

const RTOL: f64 = 1e-9;
const ATOL: f64 = 1e-12;

fn compare(name: &str, got: &Path) {
    let reference = golden_dir().join(name);
    let new = fs::read_to_string(got).unwrap();
    if std::env::var_os("SHEARLAB_UPDATE_GOLDEN").is_some() {
        fs::write(&reference, &new).unwrap();
        return;
    }
    let old = fs::read_to_string(&reference).unwrap_or_else(|_| panic!("missing golden file {name}"));
    // the version line is allowed to change
    let body = |s: &str| s.lines().filter(|l| !l.starts_with("# shearlab")).map(String::from).collect::<Vec<_>>();
    let (a, b) = (body(&old), body(&new));
    assert_eq!(a.len(), b.len(), "{name}: line count");
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        if x.starts_with('#') {
            assert_eq!(x, y, "{name}:{i}");
            continue;
        }
        let (fx, fy): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        assert_eq!(fx.len(), fy.len(), "{name}:{i}");
        for (p, q) in fx.iter().zip(&fy) {
            match (p.parse::<f64>(), q.parse::<f64>()) {
                (Ok(p), Ok(q)) => {
                    assert!((p - q).abs() <= ATOL + RTOL * p.abs().max(q.abs()), "{name}:{i}: {p} vs {q}")
                }
                _ => assert_eq!(p, q, "{name}:{i}"),
            }
        }
    }
}

#[test]
fn metastability_run_matches_reference() {
    let d = tempfile::tempdir().unwrap();
    let cfg = golden_dir().join("fig2.json");
    let s = ok(d.path(), &["simulate", "--config", cfg.to_str().unwrap(), "-o", "fig2"]);
    assert!(s["aborted"].is_null());
    compare("fig2.diagnostics.csv", &d.path().join("fig2.diagnostics.csv"));
    compare("fig2.snapshots.csv", &d.path().join("fig2.snapshots.csv"));
}

#[test]
fn localizing_solution_matches_reference() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "localize", "--n", "0.1", "--alpha", "0.5", "--theta0", "10", "--lambda", "0.1", "--sigma0", "1.88", "--tmax",
            "200", "--nx", "201", "-o", "fig3",
        ],
    );
    for part in ["profile", "fields", "diagnostics"] {
        compare(&format!("fig3.{part}.csv"), &d.path().join(format!("fig3.{part}.csv")));
    }
}
