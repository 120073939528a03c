//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use faustmann_core::diffusion::DiffusionModel;
use faustmann_core::hitting::XiEvaluator;
use faustmann_core::impulse::ImpulseSolver;
use faustmann_core::meanfield::{self, Interaction, MeanField, PayoffSpec, PriceFunction, Stability};
use faustmann_core::numerics::quad::{integrate, integrate_from_zero, Tolerance};
use faustmann_core::numerics::roots::log_space;
use faustmann_core::simulation::{self, LevelMode, SimConfig};
use faustmann_core::stationary::{self, StationaryDensity};
use faustmann_core::NumericsConfig;

// pinned tolerances
const Y_G: (f64, f64) = (5.13, 0.05);
const V_G: (f64, f64) = (0.243, 0.003);
const Y_P: (f64, f64) = (5.9, 0.1);
const V_P: (f64, f64) = (0.254, 0.003);
const MULTI: [f64; 3] = [4.55, 6.8, 55.5];
const MULTI_REL: f64 = 0.02;
const SWEEP_DRAWS: usize = 100;
const SWEEP_MARGIN: f64 = -1e-6;
const XI_POINTS: [f64; 5] = [1.5, 2.0, 5.0, 10.0, 55.5];
const XI_REL: f64 = 1e-6;
const MC_PATHS: usize = 100_000;
const MC_HORIZON: f64 = 1e5;
const MC_DT: f64 = 1e-3;
const MC_SE: f64 = 3.0;
const SCALE_SPEED_TOL: f64 = 1e-6;
const MS_SIGMA_TOL: f64 = 1e-8;
const NORMALIZATION_TOL: f64 = 1e-8;
const VERIFY_TOL: f64 = 1e-6;

fn model() -> DiffusionModel {
    DiffusionModel::logistic(-1.0, 0.5, 1.0, 1.0).unwrap()
}

fn payoff(phi: &str, interaction: Interaction) -> PayoffSpec {
    PayoffSpec {
        cost: 1.0,
        phi: PriceFunction::parse(phi).unwrap(),
        interaction,
    }
}

fn within(x: f64, (target, tol): (f64, f64)) -> bool {
    (x - target).abs() <= tol
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn harvest_rate_game() -> Outcome {
    let t = Instant::now();
    let mf = MeanField::new(&model(), payoff("1/(z+1)", Interaction::HarvestRate), NumericsConfig::default()).unwrap();
    let set = mf.mfg_equilibrium().unwrap();
    let secs = t.elapsed().as_secs_f64();
    let e = &set.equilibria[0];
    let ok = set.equilibria.len() == 1 && within(e.threshold, Y_G) && within(e.value, V_G) && secs < 10.0;
    outcome(
        ok,
        format!(
            "harvest-rate MFG: {} equilibrium, y_g = {:.6} ({} ± {}), value = {:.6} ({} ± {}), {secs:.2} s",
            set.equilibria.len(),
            e.threshold,
            Y_G.0,
            Y_G.1,
            e.value,
            V_G.0,
            V_G.1
        ),
    )
}

fn harvest_rate_control() -> Outcome {
    let t = Instant::now();
    let mf = MeanField::new(&model(), payoff("1/(z+1)", Interaction::HarvestRate), NumericsConfig::default()).unwrap();
    let c = mf.compare_unchecked().unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (yp, vp) = (c.mfc.threshold, c.mfc.value);
    let yg = c.mfg.equilibria[0].threshold;
    let ok = within(yp, Y_P) && within(vp, V_P) && yp >= yg && secs < 10.0;
    outcome(
        ok,
        format!(
            "harvest-rate MFC: y_p = {yp:.6} ({} ± {}), value = {vp:.6} ({} ± {}), y_p - y_g = {:.6}, {secs:.2} s",
            Y_P.0,
            Y_P.1,
            V_P.0,
            V_P.1,
            yp - yg
        ),
    )
}

fn stock_game() -> Outcome {
    let t = Instant::now();
    let mf = MeanField::new(
        &model(),
        payoff("1/(1+exp(10*(z-1.9)))", Interaction::ExpectedStock),
        NumericsConfig::default(),
    )
    .unwrap();
    let set = mf.mfg_equilibrium().unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ys: Vec<f64> = set.equilibria.iter().map(|e| e.threshold).collect();
    let labels: Vec<Stability> = set.equilibria.iter().map(|e| e.stability.label).collect();
    let ok = ys.len() == 3
        && ys.iter().zip(MULTI).all(|(y, w)| (y - w).abs() <= MULTI_REL * w)
        && labels == [Stability::Stable, Stability::Unstable, Stability::Stable]
        && secs < 60.0;
    let found = set
        .equilibria
        .iter()
        .map(|e| format!("{:.4} {}", e.threshold, e.stability.label))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        ok,
        format!(
            "stock MFG: found [{found}], want 3 within {}% of {MULTI:?} (stable, unstable, stable), {secs:.2} s",
            MULTI_REL * 100.0
        ),
    )
}

fn sweeps() -> Outcome {
    let cfg = NumericsConfig::default();
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in [Interaction::HarvestRate, Interaction::ExpectedStock] {
        let rows = meanfield::sweep(kind, SWEEP_DRAWS, cfg.seed, &cfg);
        let good = rows
            .iter()
            .filter(|r| r.error.is_none() && r.holds && r.min_margin >= SWEEP_MARGIN)
            .count();
        let min = rows.iter().map(|r| r.min_margin).fold(f64::INFINITY, f64::min);
        ok &= good == SWEEP_DRAWS;
        parts.push(format!("{kind} {good}/{SWEEP_DRAWS} (min margin {min:.3e})"));
    }
    outcome(
        ok,
        format!("ordering sweeps: {}, {:.1} s", parts.join(", "), t.elapsed().as_secs_f64()),
    )
}

fn xi_agreement() -> Outcome {
    let ev = XiEvaluator::new(&model()).unwrap();
    let worst = XI_POINTS
        .iter()
        .map(|&y| {
            let a = ev.xi_series(y).unwrap();
            let b = ev.xi_quadrature(y).unwrap();
            (a - b).abs() / a
        })
        .fold(0.0, f64::max);
    outcome(
        worst < XI_REL,
        format!("xi series vs quadrature on {XI_POINTS:?}: max relative gap {worst:.2e} (< {XI_REL:e})"),
    )
}

fn monte_carlo() -> Outcome {
    let m = model();
    let ev = XiEvaluator::new(&m).unwrap();
    let cfg = SimConfig {
        dt: MC_DT,
        paths: MC_PATHS,
        horizon: MC_HORIZON,
        ..SimConfig::default()
    };
    let t = Instant::now();
    let xi = ev.xi(2.0).unwrap();
    let hit = simulation::estimate_hitting_time(&m, 2.0, &cfg).unwrap();
    let stock = stationary::expected_stock(&ev, 4.0).unwrap();
    let stock_est = simulation::estimate_stationary_mean(&m, 4.0, &cfg).unwrap();
    let y = 5.13;
    let p = payoff("1/(z+1)", Interaction::HarvestRate);
    let xi_y = ev.xi(y).unwrap();
    let j = (p.phi.eval((y - 1.0) / xi_y) * (y - 1.0) - p.cost) / xi_y;
    let j_est = simulation::estimate_value(&m, &p, y, LevelMode::SelfConsistent, &cfg).unwrap().estimate;
    let z = [hit.z_score(xi), stock_est.z_score(stock), j_est.z_score(j)];
    let ok = z.iter().all(|&z| z < MC_SE) && hit.capped == 0;
    outcome(
        ok,
        format!(
            "Monte Carlo: xi(2) {xi:.5} vs {:.5} ± {:.5} (z {:.2}); stock(4) {stock:.5} vs {:.5} ± {:.5} (z {:.2}); J(5.13) {j:.5} vs {:.5} ± {:.5} (z {:.2}); {:.1} s",
            hit.mean,
            hit.se,
            z[0],
            stock_est.mean,
            stock_est.se,
            z[1],
            j_est.mean,
            j_est.se,
            z[2],
            t.elapsed().as_secs_f64()
        ),
    )
}

fn identities() -> Outcome {
    let m = model();
    let ev = XiEvaluator::new(&m).unwrap();
    let grid = log_space(0.05, 50.0, 50);
    let scale_speed = grid
        .iter()
        .map(|&x| (m.scale_density(x).unwrap() * m.drift_speed_integral(x).unwrap() - 1.0).abs())
        .fold(0.0, f64::max);
    let ms = grid
        .iter()
        .map(|&x| {
            let sig = m.volatility(x);
            (m.speed_density(x).unwrap() * m.scale_density(x).unwrap() * sig * sig - 2.0).abs()
        })
        .fold(0.0, f64::max);
    let signs: Vec<bool> = log_space(1.0 + 1e-3, 100.0, 1000)
        .iter()
        .map(|&y| ev.xi_second(y).unwrap() > 0.0)
        .collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    let tight = Tolerance { abs: 1e-13, rel: 1e-12 };
    let mut norm = 0.0f64;
    for y in [1.5, 3.0, 5.0, 12.0] {
        let d = StationaryDensity::controlled(&ev, y).unwrap();
        let f = |x: f64| d.pdf(x).unwrap_or(f64::NAN);
        let total = integrate_from_zero(f, 1.0, tight).unwrap().value + integrate(f, 1.0, y, tight).unwrap().value;
        norm = norm.max((total - 1.0).abs());
    }
    let mut ordering = true;
    for (a, b) in [(3.0, 6.0), (5.0, 20.0)] {
        let da = StationaryDensity::controlled(&ev, a).unwrap();
        let db = StationaryDensity::controlled(&ev, b).unwrap();
        ordering &= log_space(1e-3, b, 300)
            .iter()
            .all(|&x| da.cdf(x).unwrap() >= db.cdf(x).unwrap() - NORMALIZATION_TOL);
    }
    let ok = scale_speed < SCALE_SPEED_TOL && ms < MS_SIGMA_TOL && changes == 1 && norm < NORMALIZATION_TOL && ordering;
    outcome(
        ok,
        format!(
            "identities: max|s∫μm - 1| {scale_speed:.1e}, max|msσ² - 2| {ms:.1e}, xi'' sign changes {changes}, normalization gap {norm:.1e}, CDF ordering {ordering}"
        ),
    )
}

fn verification() -> Outcome {
    let m = model();
    let mf = MeanField::new(&m, payoff("1/(z+1)", Interaction::HarvestRate), NumericsConfig::default()).unwrap();
    let yg = mf.mfg_equilibrium().unwrap().equilibria[0].threshold;
    let price = mf.payoff().phi.eval(mf.interaction_level(yg).unwrap());
    let f = move |y: f64| price * (y - 1.0);
    let h = |_: f64| 0.0;
    let solver = ImpulseSolver::new(XiEvaluator::new(&m).unwrap(), NumericsConfig::default());
    let sol = solver.solve_auxiliary(f, h, 1.0).unwrap();
    let v = solver.verify_solution(&sol, f, h, 1.0).unwrap();
    let mut off = sol;
    off.threshold *= 1.1;
    let w = solver.verify_solution(&off, f, h, 1.0).unwrap();
    let ok = v.g_at_restart.abs() <= VERIFY_TOL
        && v.min_excess >= -VERIFY_TOL
        && v.u_at_threshold.abs() <= VERIFY_TOL
        && !w.passed;
    outcome(
        ok,
        format!(
            "verification at y* = {:.6}: g(y0) {:.1e}, min(g - (f - K)) {:.1e}, u(y*) {:.1e}; perturbed y = {:.4} passes: {}",
            v.threshold, v.g_at_restart, v.min_excess, v.u_at_threshold, off.threshold, w.passed
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, harvest_rate_game),
        (2, harvest_rate_control),
        (3, stock_game),
        (4, sweeps),
        (5, xi_agreement),
        (6, monte_carlo),
        (7, identities),
        (8, verification),
    ];
    let mut failed = Vec::new();
    for (id, run) in criteria {
        let o = run();
        println!("{} {id}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        if !o.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
