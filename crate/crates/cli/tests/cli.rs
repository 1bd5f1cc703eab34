//! Subcommand behaviour through the library entry points and the binary.

use std::process::Command;

use ratchet_ruin_cli::scenario::{Consumption, Market, SimOverrides, State};
use ratchet_ruin_cli::{
    cmd_curve, cmd_evaluate, cmd_mstar, cmd_simulate, cmd_verify, CliError, Format, RunOptions,
    Scenario, StrategyChoice, Sweep,
};
use serde_json::Value;

fn market() -> Market {
    Market {
        riskless_rate_per_year: 0.05,
        risky_drift_per_year: 0.10,
        volatility_per_sqrt_year: 0.20,
        hazard_rate_per_year: 0.04,
    }
}

fn scenario(consumption: Consumption, wealth: f64, max_wealth: f64) -> Scenario {
    Scenario {
        market: market(),
        consumption,
        state: State { wealth, max_wealth },
        sim: None,
    }
}

fn fixed(w: f64) -> Scenario {
    scenario(
        Consumption::Affine {
            slope_per_year: 0.0,
            intercept_per_year: 4.0,
        },
        w,
        100.0,
    )
}

fn blocked(w: f64) -> Scenario {
    scenario(
        Consumption::Affine {
            slope_per_year: 0.06,
            intercept_per_year: 0.0,
        },
        w,
        100.0,
    )
}

fn concave() -> Scenario {
    scenario(
        Consumption::Power {
            scale_per_year: 1.0,
            exponent: 0.5,
        },
        50.0,
        100.0,
    )
}

fn result(text: &str) -> Value {
    let v: Value = serde_json::from_str(text).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["library_version"], ratchet_ruin::VERSION);
    assert!(v["config"]["scenario"].is_object());
    v["result"].clone()
}

fn json() -> RunOptions {
    RunOptions::default()
}

#[test]
fn scenario_round_trips_through_toml() {
    let mut s = concave();
    s.sim = Some(SimOverrides {
        dt_years: Some(1e-3),
        seed: Some(42),
        ..SimOverrides::default()
    });
    let text = s.to_toml();
    assert!(text.contains("riskless_rate_per_year"));
    assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    let odd = scenario(
        Consumption::Affine {
            slope_per_year: 0.1 + 0.2,
            intercept_per_year: 1.0 / 3.0,
        },
        0.1,
        0.7,
    );
    assert_eq!(Scenario::from_toml(&odd.to_toml()).unwrap(), odd);
}

#[test]
fn unknown_keys_are_rejected() {
    let text = fixed(40.0)
        .to_toml()
        .replace("hazard_rate_per_year", "hazard_rate");
    assert!(matches!(
        Scenario::from_toml(&text),
        Err(CliError::Scenario(_))
    ));
}

#[test]
fn evaluate_fixed_max_baseline() {
    let r = result(&cmd_evaluate(&fixed(40.0), &json()).unwrap().text);
    assert_eq!(r["regime"], "FixedMaxBelowSafe");
    assert!((r["psi"].as_f64().unwrap() - 0.2447).abs() < 1e-4);
    assert!(r["pi_star"].as_f64().unwrap() > 0.0);
}

#[test]
fn evaluate_trivial_states() {
    let r = result(&cmd_evaluate(&fixed(85.0), &json()).unwrap().text);
    assert_eq!(
        (
            r["regime"].as_str(),
            r["psi"].as_f64(),
            r["strategy"].as_str()
        ),
        (Some("SafeLevel"), Some(0.0), Some("all riskless"))
    );
    let r = result(&cmd_evaluate(&fixed(0.0), &json()).unwrap().text);
    assert_eq!(
        (r["regime"].as_str(), r["psi"].as_f64()),
        (Some("Ruined"), Some(1.0))
    );
}

#[test]
fn evaluate_reports_boundary_data() {
    let r = result(&cmd_evaluate(&blocked(50.0), &json()).unwrap().text);
    assert_eq!(r["regime"], "RatchetBlocked");
    assert!(r["boundary"]["y_m"].as_f64().unwrap() > 0.0);
    let r = result(&cmd_evaluate(&concave(), &json()).unwrap().text);
    assert_eq!(r["regime"], "RatchetActive");
    assert_eq!(r["boundary"]["binding"], "SafeLevel");
}

#[test]
fn results_carry_twelve_significant_digits() {
    let r = result(&cmd_evaluate(&blocked(50.0), &json()).unwrap().text);
    let psi = r["psi"].as_f64().unwrap();
    assert_eq!(psi, format!("{psi:.11e}").parse::<f64>().unwrap());
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn curve_csv_shape_and_ordering() {
    let opts = RunOptions {
        format: Format::Csv,
        ..RunOptions::default()
    };
    let sweep: Sweep = "w:0:100:101".parse().unwrap();
    let text = cmd_curve(&blocked(50.0), Some(sweep), &opts).unwrap().text;
    assert!(text.contains("w,m,regime,psi,pi_star,comparison_phi"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 101);
    let psi: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(psi.windows(2).all(|p| p[1] <= p[0]));
    for r in rows.iter().filter(|r| r[2] == "RatchetBlocked") {
        let (p, phi): (f64, f64) = (r[3].parse().unwrap(), r[5].parse().unwrap());
        assert!(p >= phi, "{r:?}");
    }
}

#[test]
fn curve_over_maximum_wealth() {
    let s = scenario(
        Consumption::Affine {
            slope_per_year: 0.04,
            intercept_per_year: 1.0,
        },
        10.0,
        20.0,
    );
    let r = result(
        &cmd_curve(&s, Some("m:10:40:7".parse().unwrap()), &json())
            .unwrap()
            .text,
    );
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0]["regime"], "RatchetActive");
    assert_eq!(rows[6]["regime"], "RatchetBlocked");
    let psi: Vec<f64> = rows.iter().map(|x| x["psi"].as_f64().unwrap()).collect();
    assert!(psi.windows(2).all(|p| p[1] > p[0]));
}

#[test]
fn bad_sweeps_rejected() {
    for s in ["w:0:1", "x:0:1:5", "w:1:0:5", "w:0:1:1"] {
        assert!(s.parse::<Sweep>().is_err(), "{s}");
    }
    let e = cmd_curve(&blocked(50.0), Some("w:0:150:5".parse().unwrap()), &json()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn mstar_bounds_and_stability() {
    let r = result(&cmd_mstar(&concave(), None, &json()).unwrap().text);
    let m_star = r["m_star"].as_f64().unwrap();
    let m_hat = r["safe_crossing"].as_f64().unwrap();
    assert!((m_hat - 400.0).abs() < 1e-9);
    assert!(m_star <= m_hat * (1.0 + 1e-8));
    let fine = result(
        &cmd_mstar(&concave(), Some(1.05f64.sqrt()), &json())
            .unwrap()
            .text,
    );
    let m_fine = fine["m_star"].as_f64().unwrap();
    assert!((m_fine - m_star).abs() <= 1e-6 * m_star);
    assert_eq!(r["profile"].as_array().unwrap().len(), 21);
}

#[test]
fn mstar_rejects_blocked_regime() {
    let e = cmd_mstar(&blocked(50.0), None, &json()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

fn sim_opts(paths: usize, threads: usize) -> RunOptions {
    RunOptions {
        sim: SimOverrides {
            paths: Some(paths),
            dt_years: Some(0.01),
            threads: Some(threads),
            ..SimOverrides::default()
        },
        ..RunOptions::default()
    }
}

#[test]
fn simulate_repeats_bytewise() {
    let a = cmd_simulate(&blocked(50.0), StrategyChoice::Optimal, &sim_opts(2000, 1))
        .unwrap()
        .text;
    let b = cmd_simulate(&blocked(50.0), StrategyChoice::Optimal, &sim_opts(2000, 1))
        .unwrap()
        .text;
    let c = cmd_simulate(&blocked(50.0), StrategyChoice::Optimal, &sim_opts(2000, 4))
        .unwrap()
        .text;
    assert_eq!(a, b);
    assert_eq!(a, c);
    let r = result(&a);
    assert_eq!(r["strategy"], "blocked");
    assert_eq!(r["check"]["check_name"], "mc_cross_check");
}

#[test]
fn constant_proportion_does_not_beat_optimum() {
    let r = result(
        &cmd_simulate(
            &blocked(50.0),
            StrategyChoice::ConstantProportion(0.5),
            &sim_opts(4000, 1),
        )
        .unwrap()
        .text,
    );
    assert_eq!(r["check"]["check_name"], "mc_optimality_check");
    assert_eq!(r["check"]["pass"], true);
    assert!(r["estimate"]["point"].as_f64().unwrap() >= r["analytic_optimum"].as_f64().unwrap());
}

#[test]
fn strategy_selector_parsing() {
    assert_eq!(
        "optimal".parse::<StrategyChoice>().unwrap(),
        StrategyChoice::Optimal
    );
    assert_eq!(
        "constant_amount:12.5".parse::<StrategyChoice>().unwrap(),
        StrategyChoice::ConstantAmount(12.5)
    );
    assert!("constant_amount".parse::<StrategyChoice>().is_err());
    assert!("leveraged:2".parse::<StrategyChoice>().is_err());
}

#[test]
fn verify_passes_and_negative_control_fails() {
    for s in [fixed(40.0), blocked(50.0), concave()] {
        let out = cmd_verify(&s, None, &json()).unwrap();
        assert_eq!(out.exit_code, 0, "{}", out.text);
        let out = cmd_verify(&s, Some(1.01), &json()).unwrap();
        assert_eq!(out.exit_code, 1);
        assert_eq!(result(&out.text)["pass"], false);
    }
}

#[test]
fn csv_only_where_tabular() {
    let opts = RunOptions {
        format: Format::Csv,
        ..RunOptions::default()
    };
    assert!(cmd_verify(&fixed(40.0), None, &opts).is_err());
    let text = cmd_evaluate(&fixed(40.0), &opts).unwrap().text;
    assert_eq!(csv_rows(&text).len(), 1);
}

#[test]
fn boundary_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("boundary.json");
    let opts = RunOptions {
        boundary_cache: Some(path.clone()),
        ..RunOptions::default()
    };
    let a = cmd_evaluate(&concave(), &opts).unwrap().text;
    assert!(path.exists());
    let b = cmd_evaluate(&concave(), &opts).unwrap().text;
    assert_eq!(a, b);
    // A cache for a different scenario is ignored and replaced.
    let other = scenario(
        Consumption::Power {
            scale_per_year: 1.0,
            exponent: 0.5,
        },
        50.0,
        120.0,
    );
    cmd_evaluate(&other, &opts).unwrap();
    let c = cmd_evaluate(&concave(), &opts).unwrap().text;
    assert_eq!(a, c);
}

// ---------------------------------------------------------------------------
// Binary
// ---------------------------------------------------------------------------

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ratchet-ruin"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
    )
}

fn write(dir: &tempfile::TempDir, name: &str, s: &Scenario) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, s.to_toml()).unwrap();
    p.display().to_string()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(&dir, "fixed.toml", &fixed(40.0));
    let (code, out) = run(&["evaluate", "--scenario", &good]);
    assert_eq!(code, 0);
    assert_eq!(result(&out)["regime"], "FixedMaxBelowSafe");

    let (code, _) = run(&["verify", "--scenario", &good, "--perturb-d1", "1.01"]);
    assert_eq!(code, 1);

    let bad = write(
        &dir,
        "bad.toml",
        &scenario(
            Consumption::Affine {
                slope_per_year: 0.0,
                intercept_per_year: 4.0,
            },
            120.0,
            100.0,
        ),
    );
    let (code, out) = run(&["evaluate", "--scenario", &bad]);
    assert_eq!(code, 2);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["error"]["kind"], "validation");
}

#[test]
fn convergence_failures_map_to_exit_three() {
    let e = CliError::from(ratchet_ruin::Error::Unbounded { m_max: 1e8 });
    assert_eq!(e.exit_code(), 3);
    assert_eq!(e.to_json()["error"]["kind"], "convergence");
    let e = CliError::from(ratchet_ruin::Error::InvalidState("w > m".into()));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn binary_writes_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(&dir, "blocked.toml", &blocked(50.0));
    let out = dir.path().join("curve.csv");
    let (code, stdout) = run(&[
        "curve",
        "--scenario",
        &good,
        "--format",
        "csv",
        "--sweep",
        "w:0:100:11",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.is_empty());
    assert_eq!(csv_rows(&std::fs::read_to_string(out).unwrap()).len(), 11);
}
