//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=5,6` restricts the run to the listed criteria.

use std::time::{Duration, Instant};

use levy_penalization::cli::{cmd_verify, parse_selector, RunConfig};
use levy_penalization::models::LevyModel;
use levy_penalization::pathsim::{path_rng, PathWalker, SimGrid};
use levy_penalization::penalization::{
    estimate_h_const, h_c, hitting_prob, indicator_or_occupation, phi, PenalizationParams, Weights,
};
use levy_penalization::resolvent::{
    h, resolvent_density, HExtrapolationConfig, HFunction, QuadratureConfig,
};
use levy_penalization::verify::{
    check_identity_hb, check_identity_hc, check_inverse_clock_martingale, check_inverse_lt_laplace,
    check_martingales, check_penalization_limit, reports_to_json, run_paths, CheckReport, LimitClock, LimitOptions, MCConfig,
    TestFunctional,
};

const INF: f64 = f64::INFINITY;
const SEED: u64 = 20240611;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    title: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn bm() -> LevyModel {
    LevyModel::brownian(1.0).unwrap()
}

fn stable() -> LevyModel {
    LevyModel::stable(1.5).unwrap()
}

fn mc(n_paths: usize, dt: f64, horizon: f64, censor_budget: f64) -> MCConfig {
    MCConfig {
        n_paths,
        master_seed: SEED,
        z: 3.0,
        grid: SimGrid::with_default_eps(dt, horizon).unwrap(),
        censor_budget,
    }
}

fn grid20(lo: f64, hi: f64) -> Vec<f64> {
    (0..20).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / 20.0).collect()
}

fn summarize(reports: &[CheckReport]) -> Verdict {
    let failed: Vec<String> = reports.iter().filter(|r| !r.pass).map(|r| r.summary()).collect();
    for r in reports {
        println!("    {}", r.summary());
    }
    Verdict::new(
        failed.is_empty() && reports.iter().all(|r| r.recompute_pass() == r.pass),
        format!("{} of {} checks pass", reports.len() - failed.len(), reports.len()),
    )
}

fn c1_resolvent() -> Verdict {
    let cfg = QuadratureConfig::default();
    let mut worst: f64 = 0.0;
    for q in [0.1, 0.5, 1.0, 10.0] {
        for x in [-5.0, -1.0, 0.0, 1.0, 5.0] {
            let s = (2.0f64 * q).sqrt();
            let exact = (-s * f64::abs(x)).exp() / s;
            let got = resolvent_density(&bm(), q, x, &cfg).unwrap();
            worst = worst.max(((got - exact) / exact).abs());
        }
    }
    Verdict::new(worst < 1e-8, format!("max relative error {worst:.2e} (< 1e-8)"))
}

fn c2_h_brownian() -> Verdict {
    let (cfg, ext) = (QuadratureConfig::default(), HExtrapolationConfig::default());
    let mut worst: f64 = 0.0;
    for x in [-3.0, -1.0, 0.5, 2.0] {
        let got = h(&bm(), x, &cfg, &ext).unwrap();
        worst = worst.max((got - f64::abs(x)).abs());
    }
    Verdict::new(worst < 1e-6, format!("max |h(x) - |x|| = {worst:.2e} (< 1e-6)"))
}

fn c3_hc_closed() -> Verdict {
    let hf = HFunction::direct(bm());
    let v = h_c(&hf, 1.0, -2.0).unwrap();
    let w = h_c(&hf, -2.0, 1.0).unwrap();
    let err = (v - 4.0 / 3.0).abs();
    Verdict::new(
        err < 1e-6 && v.to_bits() == w.to_bits(),
        format!("h_C(1,-2) = {v:.12}, error {err:.2e}, symmetric bitwise: {}", v.to_bits() == w.to_bits()),
    )
}

fn c4_gamblers_ruin() -> Verdict {
    let hf = HFunction::direct(bm());
    let mut worst: f64 = 0.0;
    for x in [0.25, 0.5, 0.75] {
        let p = hitting_prob(&hf, x, 0.0, 1.0).unwrap().value;
        worst = worst.max((p - (1.0 - x)).abs());
    }
    let st = HFunction::direct(stable());
    let mut worst_c: f64 = 0.0;
    for x in grid20(-2.0, 3.0) {
        let p = hitting_prob(&st, x, 0.0, 1.0).unwrap().value;
        let q = hitting_prob(&st, x, 1.0, 0.0).unwrap().value;
        worst_c = worst_c.max((p + q - 1.0).abs());
    }
    Verdict::new(
        worst < 1e-8 && worst_c < 1e-8,
        format!("ruin error {worst:.2e}, stable complement error {worst_c:.2e} (both < 1e-8)"),
    )
}

fn c5_hb_mc() -> Verdict {
    let hf = HFunction::direct(bm());
    let r = check_identity_hb(&hf, 1.0, &mc(10_000, 1e-4, 50.0, 0.2), 0.01).unwrap();
    let target_ok = (r.target - 2.0).abs() < 1e-9;
    let v = summarize(std::slice::from_ref(&r));
    Verdict::new(v.pass && target_ok, format!("target {:.9}; {}", r.target, v.detail))
}

fn c6_hc_mc() -> Verdict {
    let hf = HFunction::direct(bm());
    let r = check_identity_hc(&hf, 1.0, -2.0, &mc(10_000, 1e-4, 50.0, 0.2), 0.01).unwrap();
    let target_ok = (r.target - 4.0 / 3.0).abs() < 1e-9;
    let v = summarize(std::slice::from_ref(&r));
    Verdict::new(v.pass && target_ok, format!("target {:.9}; {}", r.target, v.detail))
}

fn c7_laplace() -> Verdict {
    let hf = HFunction::direct(bm());
    let r = check_inverse_lt_laplace(&hf, 1.0, 0.5, &mc(10_000, 1e-4, 50.0, 0.2), 0.02).unwrap();
    let exact = (-0.5 * 2f64.sqrt()).exp();
    let target_ok = (r.target - exact).abs() < 1e-9;
    let v = summarize(std::slice::from_ref(&r));
    Verdict::new(v.pass && target_ok, format!("target {:.6}; {}", r.target, v.detail))
}

fn c8_martingales() -> Verdict {
    let cfg = mc(10_000, 1e-4, 0.5, 0.0);
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for model in [bm(), stable()] {
        let hf = HFunction::direct(model);
        // Each combination starts from the first admissible point of {2, -1}.
        let mut groups: [(f64, Vec<PenalizationParams>); 2] = [(2.0, vec![]), (-1.0, vec![])];
        for (la, lb) in [(1.0, 1.0), (1.0, INF), (INF, INF)] {
            for gamma in [-1.0, 0.0, 1.0] {
                let p = PenalizationParams::new(0.0, 1.0, la, lb, gamma).unwrap();
                match groups.iter_mut().find(|(x0, _)| phi(&hf, &p, *x0).unwrap().value > 0.0) {
                    Some((_, combos)) => combos.push(p),
                    None => skipped.push(format!("{} {:?}", model.label(), p)),
                }
            }
        }
        for (x0, combos) in groups.iter().filter(|g| !g.1.is_empty()) {
            for rs in check_martingales(&hf, combos, &[0.1, 0.5], *x0, &cfg, 0.03).unwrap() {
                reports.extend(rs);
            }
        }
    }
    for s in &skipped {
        println!("    inadmissible at x0 in {{2, -1}}: {s}");
    }
    let v = summarize(&reports);
    Verdict::new(v.pass, format!("{}; {} inadmissible combinations", v.detail, skipped.len()))
}

fn c9_gamma_collapse() -> Verdict {
    let hf = HFunction::direct(stable());
    let mut worst: f64 = 0.0;
    for (la, lb) in [(1.0, 1.0), (1.0, INF), (INF, INF)] {
        for x in grid20(-2.0, 3.0) {
            let vals: Vec<f64> = [-1.0, 0.0, 1.0]
                .iter()
                .map(|&g| phi(&hf, &PenalizationParams::new(0.0, 1.0, la, lb, g).unwrap(), x).unwrap().value)
                .collect();
            worst = worst.max((vals[0] - vals[1]).abs()).max((vals[2] - vals[1]).abs());
        }
    }
    Verdict::new(worst < 1e-10, format!("max spread across gamma {worst:.2e} (< 1e-10)"))
}

/// Deviation relative to the larger of the pointwise value and the grid
/// maximum, so that points where the limit vanishes are measured on the
/// scale of the function.
fn c10_regime_continuity() -> Verdict {
    let mut worst: f64 = 0.0;
    for model in [bm(), stable()] {
        let hf = HFunction::direct(model);
        for gamma in [-1.0, 0.0, 1.0] {
            for (big, limit) in [((1.0, 1e6), (1.0, INF)), ((1e6, 1e6), (INF, INF))] {
                let xs = grid20(-2.0, 3.0);
                let eval = |(la, lb): (f64, f64), x: f64| {
                    phi(&hf, &PenalizationParams::new(0.0, 1.0, la, lb, gamma).unwrap(), x).unwrap().value
                };
                let targets: Vec<f64> = xs.iter().map(|&x| eval(limit, x)).collect();
                let scale = targets.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (&x, &t) in xs.iter().zip(&targets) {
                    let d = (eval(big, x) - t).abs() / t.abs().max(scale);
                    worst = worst.max(d);
                }
            }
        }
    }
    Verdict::new(worst < 1e-4, format!("max relative deviation {worst:.2e} (< 1e-4)"))
}

fn c11_limits() -> Verdict {
    let hf = HFunction::direct(bm());
    let p = PenalizationParams::new(0.0, 1.0, INF, INF, 0.0).unwrap();
    let cfg = mc(10_000, 1e-4, 1e4, 0.02);
    let opts = |x0: f64| LimitOptions {
        t: 0.5,
        x0,
        coarse_dt: 1e-2,
        tol_rel: 0.05,
    };
    let families: Vec<(f64, Vec<LimitClock>)> = vec![
        (2.0, vec![LimitClock::Exponential { q: 1e-2 }, LimitClock::Exponential { q: 1e-3 }]),
        (2.0, vec![LimitClock::Hitting { c: 10.0 }, LimitClock::Hitting { c: 50.0 }]),
        (-1.0, vec![LimitClock::Hitting { c: -10.0 }, LimitClock::Hitting { c: -50.0 }]),
        (-1.0, vec![LimitClock::TwoPoint { gamma: -1.0, r: 10.0 }, LimitClock::TwoPoint { gamma: -1.0, r: 50.0 }]),
        (2.0, vec![LimitClock::TwoPoint { gamma: 0.0, r: 10.0 }, LimitClock::TwoPoint { gamma: 0.0, r: 50.0 }]),
        (2.0, vec![LimitClock::TwoPoint { gamma: 1.0, r: 10.0 }, LimitClock::TwoPoint { gamma: 1.0, r: 50.0 }]),
        (
            2.0,
            vec![LimitClock::InverseLocalTime { c: 10.0, u: 1.0 }, LimitClock::InverseLocalTime { c: 50.0, u: 1.0 }],
        ),
        (
            -1.0,
            vec![LimitClock::InverseLocalTime { c: -10.0, u: 1.0 }, LimitClock::InverseLocalTime { c: -50.0, u: 1.0 }],
        ),
    ];
    let mut finals = Vec::new();
    for (x0, schedule) in families {
        let reports = check_penalization_limit(&hf, &p, &schedule, TestFunctional::AboveMedian, &opts(x0), &cfg).unwrap();
        for r in &reports[..reports.len() - 1] {
            println!("    (schedule) {}", r.summary());
        }
        finals.push(reports.last().unwrap().clone());
    }
    let v = summarize(&finals);
    Verdict::new(v.pass, format!("extreme parameters: {}", v.detail))
}

/// `P_y[Γ_{T_0}]` for Brownian motion, a=1, b=2, λ_a=λ_b=1: piecewise linear
/// with kinks 2λ·g at the penalized levels and flat beyond b.
fn g_exit_weight(y: f64) -> f64 {
    if y <= 0.0 {
        1.0
    } else if y <= 1.0 {
        1.0 - 8.0 * y / 11.0
    } else if y <= 2.0 {
        3.0 / 11.0 - 2.0 * (y - 1.0) / 11.0
    } else {
        1.0 / 11.0
    }
}

fn c12_inverse_clock() -> Verdict {
    let (a, b, c) = (1.0, 2.0, 0.0);
    let weights = Weights::new(1.0, 1.0).unwrap();
    let est = estimate_h_const(&bm(), a, b, c, &weights, 0.25, &mc(10_000, 1e-4, 400.0, 0.06)).unwrap();
    println!(
        "    H estimate {:.5} ± {:.5}; -log means {:?}; max residual/stderr {:.3}; censored {:.4}",
        est.estimate, est.stderr, est.neg_log_means, est.max_residual_ratio, est.censored_fraction
    );
    let fit_ok = est.max_residual_ratio < 2.0 && est.estimate > 0.0 && est.censored_fraction <= 0.06;
    let cfg = mc(10_000, 1e-4, 0.25, 0.0);
    let reports =
        check_inverse_clock_martingale(&bm(), a, b, c, &weights, &est, &[0.1, 0.25], c, &cfg, 0.05).unwrap();
    let v = summarize(&reports);

    // Diagnostic only: the exact constant for this configuration and the
    // process with the exit-weight factor g(X_t) restored.
    let h_exact = 4.0 / 11.0;
    println!(
        "    diagnostic: exact H = 4/11 = {h_exact:.5}; estimate off by {:.2} stderr",
        (est.estimate - h_exact) / est.stderr
    );
    let n_steps = cfg.grid.n_steps();
    let model = bm();
    let vals: Vec<f64> = run_paths(cfg.n_paths, |i| {
        let mut rng = path_rng(cfg.master_seed, i);
        let mut walker = PathWalker::new(&model, c, cfg.grid.dt, cfg.grid.eps, &[a, b, c]);
        for _ in 0..n_steps {
            walker.step(&mut rng);
        }
        let w = weights.gamma(
            indicator_or_occupation(1.0, false, walker.local_time(0)),
            indicator_or_occupation(1.0, false, walker.local_time(1)),
        );
        g_exit_weight(walker.x()) * (h_exact * walker.local_time(2)).exp() * w
    });
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() as f64 - 1.0)).sqrt();
    println!(
        "    diagnostic: E_0[g(X_t) e^(H L^0_t) Γ_t] at t=0.25 = {mean:.5} ± {:.5} (expected 1)",
        sd / (vals.len() as f64).sqrt()
    );
    Verdict::new(
        fit_ok && v.pass,
        format!("log-linear fit ok: {fit_ok}; martingale: {}", v.detail),
    )
}

fn c13_condition_a() -> Verdict {
    let rejected = LevyModel::stable(1.0).is_err() && LevyModel::stable(0.9).is_err();
    let finite = stable().check_condition_a(1.0).finite;
    Verdict::new(
        rejected && finite,
        format!("alpha in {{1, 0.9}} rejected: {rejected}; stable 1.5 at q=1 finite: {finite}"),
    )
}

fn c14_determinism() -> Verdict {
    let text = "[grid]\ndt = 1e-3\nhorizon = 20\n\n[mc]\nn_paths = 2000\nseed = 7\n";
    let cfg = RunConfig::parse(text).unwrap();
    let suites = parse_selector("identities,martingales").unwrap();
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| reports_to_json(&cmd_verify(&cfg, &suites).unwrap()))
    };
    let first = run_with(1);
    let second = run_with(1);
    let third = run_with(4);
    Verdict::new(
        first == second && first == third,
        format!(
            "{} bytes; repeat identical: {}; 1 vs 4 workers identical: {}",
            first.len(),
            first == second,
            first == third
        ),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, title: "Brownian resolvent oracle", budget: secs(1), run: c1_resolvent },
        Criterion { id: 2, title: "Brownian h oracle", budget: secs(5), run: c2_h_brownian },
        Criterion { id: 3, title: "h_C closed case and symmetry", budget: secs(5), run: c3_hc_closed },
        Criterion { id: 4, title: "gambler's ruin and complement", budget: secs(5), run: c4_gamblers_ruin },
        Criterion { id: 5, title: "MC local time before T_a vs h_B", budget: secs(120), run: c5_hb_mc },
        Criterion { id: 6, title: "MC local time before T_a^T_b vs h_C", budget: secs(120), run: c6_hc_mc },
        Criterion { id: 7, title: "MC inverse local time Laplace transform", budget: secs(120), run: c7_laplace },
        Criterion { id: 8, title: "martingale suites", budget: secs(900), run: c8_martingales },
        Criterion { id: 9, title: "gamma collapse for stable", budget: secs(5), run: c9_gamma_collapse },
        Criterion { id: 10, title: "regime continuity", budget: secs(30), run: c10_regime_continuity },
        Criterion { id: 11, title: "penalization-limit ratios", budget: secs(1200), run: c11_limits },
        Criterion { id: 12, title: "inverse-local-time clock at fixed level", budget: secs(300), run: c12_inverse_clock },
        Criterion { id: 13, title: "condition (A) gate", budget: secs(1), run: c13_condition_a },
        Criterion { id: 14, title: "verify report determinism", budget: secs(300), run: c14_determinism },
    ];
    let mut failures = 0;
    for c in criteria.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        let start = Instant::now();
        let v = (c.run)();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed <= c.budget;
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {} {}: {} [{:.1}s of {}s]",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.title,
            v.detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    println!("acceptance: {failures} criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
