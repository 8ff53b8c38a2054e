//! Acceptance criteria at full size, seed 7. Each test prints one
//! PASS/FAIL line to stderr (uncaptured) and asserts the verdict.
//!
//! Run with `cargo test --release -p aaflow --test acceptance -- --nocapture`
//! for the complete report; the run takes several minutes.

use std::io::Write;
use std::sync::OnceLock;

use aaflow::checks::{self, Check, CheckScale, RoofSample, SpectralStudy};
use aaflow::model::Preset;

fn scale() -> CheckScale {
    CheckScale::full()
}

fn roofs() -> &'static [RoofSample] {
    static R: OnceLock<Vec<RoofSample>> = OnceLock::new();
    R.get_or_init(|| Preset::ALL.iter().map(|&p| checks::roof_sample(p, &scale()).unwrap()).collect())
}

fn studies() -> &'static [SpectralStudy] {
    static S: OnceLock<Vec<SpectralStudy>> = OnceLock::new();
    S.get_or_init(|| Preset::ALL.iter().map(|&p| checks::spectral_study(p, &scale()).unwrap()).collect())
}

fn verdict(c: aaflow::Result<Check>) {
    let c = c.expect("check ran");
    writeln!(std::io::stderr(), "{}", c.line()).ok();
    assert!(c.passed, "{}", c.line());
}

#[test]
fn c01_derived_constants() {
    verdict(checks::derived_identities(&scale()));
}

#[test]
fn c02_first_integral() {
    verdict(checks::first_integral_conservation(&scale()));
}

#[test]
fn c03_passage_oracle() {
    verdict(checks::passage_oracle(&scale()));
}

#[test]
fn c04_entry_asymptotics() {
    verdict(checks::entry_asymptotics(&scale()));
}

#[test]
fn c05_theta_regimes() {
    verdict(checks::theta_regimes(&scale()));
}

#[test]
fn c06_roof_tails() {
    verdict(checks::roof_tails(roofs()));
}

#[test]
fn c07_roof_oscillation() {
    verdict(checks::roof_level_oscillation(roofs()));
}

#[test]
fn c08_clt_limit() {
    verdict(checks::clt_limit(&scale()));
}

#[test]
fn c09_stable_limit() {
    verdict(checks::stable_limit(&scale()));
}

#[test]
fn c10_nonstandard_limit() {
    verdict(checks::nonstandard_limit(&scale()));
}

#[test]
fn c11_eigenvalue_asymptotics() {
    verdict(checks::eigenvalue_asymptotics(studies()));
}

#[test]
fn c12_pressure_relation() {
    verdict(checks::pressure_relation(studies()));
}

#[test]
fn c13_determinism() {
    verdict(checks::determinism(&scale()));
}
