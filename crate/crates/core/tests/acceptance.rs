//! Acceptance suite: each criterion runs its registry experiment at the
//! default (acceptance-scale) configuration and re-checks the pinned
//! tolerances against independently computed oracles. One PASS/FAIL line
//! is printed per criterion; the process exits nonzero if any fail.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use localtime_lab::experiment::{run_experiment, ExperimentConfig, RunOutput};
use localtime_lab::verify::kolmogorov_critical_value;

struct Line {
    ok: bool,
    detail: String,
}

impl Line {
    fn new() -> Self {
        Self {
            ok: true,
            detail: String::new(),
        }
    }

    /// Records `what` with its value and requirement.
    fn require(&mut self, what: &str, value: f64, cond: bool, requirement: &str) {
        self.ok &= cond;
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail
            .push_str(&format!("{what} = {value:.6} ({requirement}{})", if cond { "" } else { ", violated" }));
    }
}

fn run(name: &str) -> RunOutput {
    let config = ExperimentConfig::defaults(name).expect("registry entry");
    run_experiment(&config).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn stat(out: &RunOutput, check: &str) -> f64 {
    out.report
        .check(check)
        .unwrap_or_else(|| panic!("missing check {check}"))
        .statistic
}

fn measure(out: &RunOutput, key: &str) -> f64 {
    out.report
        .measurement(key)
        .unwrap_or_else(|| panic!("missing measurement {key}"))
}

fn criterion_1() -> Line {
    let out = run("expected_localtime");
    let target = (2.0 / PI).sqrt();
    let mean = measure(&out, "mean");
    let mut l = Line::new();
    l.require("mean band L_1^0", mean, true, "50000 paths, dt = 2^-14, eps = dt^(1/3)");
    l.require("relative error vs sqrt(2/pi)", mean / target - 1.0, (mean / target - 1.0).abs() <= 0.02, "|.| <= 0.02");
    l.require("estimator expectation at this (dt, eps)", measure(&out, "band_expected"), true, "diagnostic");
    l
}

fn criterion_2() -> Line {
    let out = run("localtime_maximum");
    let mut l = Line::new();
    let d = stat(&out, "identity.two_sample_ks");
    l.require("two-sample KS L^0 vs S", d, d < 0.03, "< 0.03");
    let d = stat(&out, "identity.maximum_half_normal_ks");
    let crit = kolmogorov_critical_value(0.01) / (20_000f64).sqrt();
    l.require("half-normal KS on S_1", d, d <= crit, &format!("<= {crit:.5}"));
    l
}

fn criterion_3() -> Line {
    let out = run("joint_identity");
    let mut l = Line::new();
    for name in ["reflected_marginal_ks", "local_time_marginal_ks"] {
        let d = stat(&out, &format!("identity.{name}"));
        l.require(name, d, d < 0.03, "< 0.03");
    }
    let a = measure(&out, "identity.correlation_drawdown_maximum");
    let b = measure(&out, "identity.correlation_abs_w_local_time");
    l.require("correlation gap", (a - b).abs(), (a - b).abs() <= 0.03, "<= 0.03");
    l
}

fn criterion_4() -> Line {
    let out = run("abs_w_factor2");
    let mut l = Line::new();
    let r = measure(&out, "abs_w.ratio");
    l.require("L^0(|W|) / L^0(W)", r, (1.9..=2.1).contains(&r), "in [1.9, 2.1]");
    let z = stat(&out, "abs_w.negative_level_zero");
    l.require("max L^x(|W|), x < -3 eps", z, z == 0.0, "== 0 exactly");
    l
}

fn criterion_5() -> Line {
    let out = run("occupation_density");
    let mut l = Line::new();
    for f in ["constant_one", "gaussian_bump"] {
        let g = stat(&out, &format!("{f}_max_relative_gap"));
        l.require(&format!("{f} worst relative gap"), g, g < 0.02, "< 0.02");
    }
    l
}

fn criterion_6() -> Line {
    let out = run("ito_tanaka_square");
    let mut l = Line::new();
    let m = stat(&out, "square_median_abs_residual");
    l.require("x^2 median |residual|, dt = 2^-14", m, m < 0.05, "< 0.05");
    let h = measure(&out, "square_median_abs_residual_half_dt");
    l.require("x^2 median |residual|, dt = 2^-15", h, h < m, "decreases");
    let z = stat(&out, "linear_max_abs_residual");
    l.require("linear max |residual|", z, z == 0.0, "== 0 exactly");
    l
}

fn criterion_7() -> Line {
    let out = run("skorohod_unit");
    let mut l = Line::new();
    for name in ["property_failures", "idempotence_failures", "minimality_mismatches", "random_staircase_undercuts"] {
        let v = stat(&out, name);
        l.require(name, v, v == 0.0, "== 0");
    }
    let n = out.report.check("minimality_mismatches").expect("present").n;
    l.require("oracle paths", n as f64, n >= 1000, ">= 1000");
    l
}

fn criterion_8() -> Line {
    let out = run("regulated_unit");
    let mut l = Line::new();
    for name in ["terminal_folded_normal_ks", "regulator_half_normal_ks"] {
        let d = stat(&out, name);
        l.require(name, d, d <= 0.03, "<= 0.03");
    }
    let f = measure(&out, "mean_regulator");
    let h = measure(&out, "mean_half_local_time");
    let gap = (f - h).abs() / f.abs().max(h.abs());
    l.require("regulator vs half local time", gap, gap < 0.1, "< 0.1");
    let s = stat(&out, "skorohod_failures");
    l.require("Skorohod property failures", s, s == 0.0, "== 0");
    l
}

fn criterion_9() -> Line {
    let out = run("timechange_standardize");
    let mut l = Line::new();
    for tag in ["sigma_0.5", "sigma_2"] {
        let standard = out
            .report
            .checks
            .iter()
            .filter(|c| c.name.starts_with(&format!("{tag}.standard.")))
            .collect::<Vec<_>>();
        let all = !standard.is_empty() && standard.iter().all(|c| c.pass);
        l.require(&format!("{tag} standard-Wiener checks passed"), standard.iter().filter(|c| c.pass).count() as f64, all, &format!("all {}", standard.len()));
        let q = stat(&out, &format!("{tag}.qv_transform_gap"));
        l.require(&format!("{tag} QV transform gap"), q, q < 0.05, "< 0.05");
        let g = stat(&out, &format!("{tag}.localtime_transform_gap"));
        l.require(&format!("{tag} local-time transform gap"), g, g < 0.1, "< 0.1");
    }
    l
}

fn criterion_10() -> Line {
    let out = run("deterministic_ramp");
    let mut l = Line::new();
    let eps = (1.0f64 / (1 << 14) as f64).cbrt();
    let r = stat(&out, "ramp_unit_local_time");
    l.require("ramp max |L - 1| on interior", r, r <= eps, "<= eps");
    let b = stat(&out, "constant_point_mass_bins");
    l.require("constant path extra occupied bins", b, b == 0.0, "== 0");
    let controls: Vec<_> = out.report.checks.iter().filter(|c| c.name.starts_with("control_")).collect();
    for c in &controls {
        l.require(&format!("{} inner statistic", c.name), c.statistic, c.pass, &format!("inner check fails vs {:.6}", c.threshold));
    }
    l
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Line);
    let criteria: [Criterion; 10] = [
        ("expected local time", criterion_1),
        ("local time at 0 equals running maximum in law", criterion_2),
        ("joint identity", criterion_3),
        ("factor two for |W|", criterion_4),
        ("occupation density", criterion_5),
        ("Ito-Tanaka residual", criterion_6),
        ("Skorohod map", criterion_7),
        ("regulated SDE", criterion_8),
        ("time change", criterion_9),
        ("deterministic oracles and negative controls", criterion_10),
    ];
    let mut failed = 0;
    for (k, (title, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let line = f();
        if !line.ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} [{:.1}s] {}",
            k + 1,
            if line.ok { "PASS" } else { "FAIL" },
            title,
            start.elapsed().as_secs_f64(),
            line.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
