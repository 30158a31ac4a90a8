//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with the observed residual. Run with `cargo test --test acceptance` (add
//! `-- --nocapture` to see every line).

use std::time::Instant;

use shellspec::verify::{self, PropertyResult};

fn report(criterion: &str, result: &PropertyResult, started: Instant, budget_s: Option<f64>) {
    let elapsed = started.elapsed().as_secs_f64();
    let within_budget = budget_s.map(|b| elapsed <= b).unwrap_or(true);
    println!(
        "acceptance {criterion}: {} [{:.1}s] {}",
        if result.passed && within_budget { "PASS" } else { "FAIL" },
        elapsed,
        result.line()
    );
    assert!(result.passed, "{criterion}: {}", result.line());
    if let Some(b) = budget_s {
        assert!(elapsed <= b, "{criterion}: runtime {elapsed:.1}s exceeds {b}s");
    }
}

#[test]
fn criterion_01_composition_oracle() {
    let t = Instant::now();
    let r = verify::check_composition_oracle();
    report("criterion 1 (composition oracle)", &r, t, Some(60.0));
}

#[test]
fn criterion_02_associativity() {
    let t = Instant::now();
    let r = verify::check_associativity();
    report("criterion 2 (associativity)", &r, t, None);
}

#[test]
fn criterion_03_symplectic_identities() {
    let t = Instant::now();
    let r = verify::check_symplectic();
    report("criterion 3 (symplectic identities)", &r, t, None);
}

#[test]
fn criterion_04_right_inverse_products() {
    let t = Instant::now();
    let r = verify::check_right_inverse_products();
    report("criterion 4 (right-inverse products)", &r, t, None);
}

#[test]
fn criterion_05_triple_density_equality() {
    let t = Instant::now();
    let r = verify::check_triple_equality();
    report("criterion 5 (triple density equality)", &r, t, None);
}

#[test]
fn criterion_06_free_wire_convergence() {
    let t = Instant::now();
    let semicircle = verify::check_semicircle();
    let limit = verify::check_weyl_limit_point();
    let merged = PropertyResult {
        name: "free_wire_convergence",
        passed: semicircle.passed && limit.passed,
        residual: semicircle.residual.max(limit.residual / 1e-3 * 0.01),
        threshold: 0.01,
        detail: format!("{} | {}", semicircle.detail, limit.detail),
    };
    report("criterion 6 (free wire convergence)", &merged, t, Some(30.0));
}

#[test]
fn criterion_07_weyl_geometry() {
    let t = Instant::now();
    let nesting = verify::check_weyl_nesting();
    report("criterion 7a (disc nesting)", &nesting, t, None);
    let t = Instant::now();
    let fill = verify::check_weyl_containment_fill();
    report("criterion 7b (containment and fill)", &fill, t, None);
    let t = Instant::now();
    let duality = verify::check_weyl_duality();
    report("criterion 7c (radius duality)", &duality, t, None);
}

#[test]
fn criterion_08_mass_bound() {
    let t = Instant::now();
    let r = verify::check_mass_bound();
    report("criterion 8 (mass bound)", &r, t, None);
}

#[test]
fn criterion_09_point_masses() {
    let t = Instant::now();
    let r = verify::check_point_masses();
    report("criterion 9 (point masses)", &r, t, None);
}

#[test]
fn criterion_10_tree_reduction() {
    let t = Instant::now();
    let r = verify::check_tree_reduction();
    report("criterion 10 (tree reduction)", &r, t, None);
}

#[test]
fn criterion_11_monte_carlo() {
    let t = Instant::now();
    let r = verify::check_mc_plateau();
    report("criterion 11 (fourth-moment Monte Carlo)", &r, t, Some(300.0));
}

#[test]
fn criterion_12_determinism() {
    let t = Instant::now();
    let r = verify::check_mc_determinism();
    report("criterion 12 (byte determinism)", &r, t, None);
}
