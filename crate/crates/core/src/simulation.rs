//! Euler–Maruyama simulation of threshold-controlled paths and Monte-Carlo
//! estimators for hitting times, stationary means and long-run rewards.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::hitting::XiEvaluator;
use crate::meanfield::{Interaction, PayoffSpec};
use crate::stationary::{self, MIN_GAP};

/// How a step that ends below the threshold can still count as a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// Brownian-bridge test between grid points; the pre-impulse state is
    /// the threshold itself.
    #[default]
    Bridge,
    /// Only grid values at or above the threshold count; the pre-impulse
    /// state is that grid value.
    GridOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    /// Independent paths for hitting-time estimates.
    pub paths: usize,
    /// Length of long controlled paths after burn-in.
    pub horizon: f64,
    /// Path `i` uses stream `i` of a ChaCha8 generator seeded with `seed`.
    pub seed: u64,
    pub floor: f64,
    pub crossing: CrossingRule,
    /// Hitting-time paths still running at this time are dropped and counted.
    pub time_cap: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            paths: 100_000,
            horizon: 1e5,
            seed: 0x5eed_f00d,
            floor: 1e-8,
            crossing: CrossingRule::Bridge,
            time_cap: 1e4,
        }
    }
}

impl SimConfig {
    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain(format!("time step {} must be positive", self.dt)));
        }
        if !(self.horizon > 0.0) || !(self.time_cap > 0.0) || !(self.floor > 0.0) {
            return Err(Error::domain("horizon, time cap and floor must be positive"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Sampled controlled path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub threshold: f64,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub impulse_times: Vec<f64>,
    pub pre_impulse: Vec<f64>,
    /// `sum (X_{tau_n-} - y0)`.
    pub harvested: f64,
    pub floor_hits: u64,
    pub steps: u64,
}

impl PathRecord {
    /// `t,x,impulse_flag`; an impulse appears as the pre-impulse row with
    /// flag 1 followed by the restart row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,impulse_flag")?;
        let mut k = 0;
        for (&t, &x) in self.times.iter().zip(&self.states) {
            while k < self.impulse_times.len() && self.impulse_times[k] <= t {
                writeln!(w, "{},{},1", self.impulse_times[k], self.pre_impulse[k])?;
                k += 1;
            }
            writeln!(w, "{t},{x},0")?;
        }
        Ok(())
    }
}

/// Mean with standard error and the diagnostics of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    /// Completed paths or regeneration cycles.
    pub n: u64,
    pub mean: f64,
    pub se: f64,
    pub capped: u64,
    pub floor_hits: u64,
    pub steps: u64,
    /// More than 0.1% of paths hit the time cap.
    pub flagged: bool,
}

impl Estimate {
    /// `|mean - target| / se`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub estimate: Estimate,
    pub z: f64,
    pub price: f64,
    pub impulse_rate: f64,
    pub mean_cycle_reward: f64,
}

/// Interaction level used when rewarding a simulated strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelMode {
    Fixed(f64),
    /// Everybody plays the simulated threshold; the level is computed analytically.
    SelfConsistent,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Continue(f64),
    /// Crossing detected; carries the pre-impulse state.
    Crossed(f64),
}

struct Stepper<'a> {
    model: &'a DiffusionModel,
    rng: ChaCha8Rng,
    dt: f64,
    sqrt_dt: f64,
    threshold: f64,
    floor: f64,
    rule: CrossingRule,
    floor_hits: u64,
    steps: u64,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a DiffusionModel, threshold: f64, cfg: &SimConfig, stream: u64) -> Self {
        Self {
            model,
            rng: cfg.rng(stream),
            dt: cfg.dt,
            sqrt_dt: cfg.dt.sqrt(),
            threshold,
            floor: cfg.floor,
            rule: cfg.crossing,
            floor_hits: 0,
            steps: 0,
        }
    }

    fn step(&mut self, x: f64) -> Step {
        self.steps += 1;
        let sigma = self.model.volatility(x);
        let z: f64 = self.rng.sample(StandardNormal);
        let mut next = x + self.model.drift(x) * self.dt + sigma * self.sqrt_dt * z;
        if next < self.floor || next.is_nan() {
            next = self.floor;
            self.floor_hits += 1;
        }
        let y = self.threshold;
        if next >= y {
            return Step::Crossed(match self.rule {
                CrossingRule::Bridge => y,
                CrossingRule::GridOnly => next,
            });
        }
        if self.rule == CrossingRule::Bridge && y.is_finite() {
            let p = (-2.0 * (y - x) * (y - next) / (sigma * sigma * self.dt)).exp();
            if self.rng.random::<f64>() < p {
                return Step::Crossed(y);
            }
        }
        Step::Continue(next)
    }
}

fn check_threshold(model: &DiffusionModel, y: f64) -> Result<()> {
    let y0 = model.y0();
    if !(y > y0 + MIN_GAP) {
        return Err(Error::domain(format!("threshold {y} must exceed y0 = {y0}")));
    }
    Ok(())
}

/// One controlled path on `[0, horizon]` started at `y0`, keeping every
/// `record_every`-th state. `y = inf` gives the uncontrolled path.
pub fn simulate_path(model: &DiffusionModel, y: f64, cfg: &SimConfig, horizon: f64, record_every: usize) -> Result<PathRecord> {
    cfg.check()?;
    check_threshold(model, y)?;
    let y0 = model.y0();
    let every = record_every.max(1) as u64;
    let mut st = Stepper::new(model, y, cfg, 0);
    let n = (horizon / cfg.dt).ceil() as u64;
    let mut rec = PathRecord {
        threshold: y,
        times: vec![0.0],
        states: vec![y0],
        impulse_times: vec![],
        pre_impulse: vec![],
        harvested: 0.0,
        floor_hits: 0,
        steps: 0,
    };
    let mut x = y0;
    for i in 1..=n {
        let t = i as f64 * cfg.dt;
        let mut impulse = false;
        x = match st.step(x) {
            Step::Continue(v) => v,
            Step::Crossed(pre) => {
                rec.impulse_times.push(t);
                rec.pre_impulse.push(pre);
                rec.harvested += pre - y0;
                impulse = true;
                y0
            }
        };
        if impulse || i % every == 0 || i == n {
            rec.times.push(t);
            rec.states.push(x);
        }
    }
    rec.floor_hits = st.floor_hits;
    rec.steps = st.steps;
    Ok(rec)
}

/// `E_{y0}[tau_y]` from `cfg.paths` independent paths.
pub fn estimate_hitting_time(model: &DiffusionModel, y: f64, cfg: &SimConfig) -> Result<Estimate> {
    cfg.check()?;
    check_threshold(model, y)?;
    if !y.is_finite() {
        return Err(Error::domain("hitting time of an infinite level"));
    }
    let max_steps = (cfg.time_cap / cfg.dt).ceil() as u64;
    let runs: Vec<(Option<f64>, u64, u64)> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut st = Stepper::new(model, y, cfg, i);
            let mut x = model.y0();
            let mut hit = None;
            for k in 1..=max_steps {
                match st.step(x) {
                    Step::Continue(v) => x = v,
                    Step::Crossed(_) => {
                        hit = Some(k as f64 * cfg.dt);
                        break;
                    }
                }
            }
            (hit, st.floor_hits, st.steps)
        })
        .collect();
    let times: Vec<f64> = runs.iter().filter_map(|r| r.0).collect();
    let capped = (runs.len() - times.len()) as u64;
    let (mean, se) = mean_se(&times);
    Ok(Estimate {
        n: times.len() as u64,
        mean,
        se,
        capped,
        floor_hits: runs.iter().map(|r| r.1).sum(),
        steps: runs.iter().map(|r| r.2).sum(),
        flagged: capped as f64 > 1e-3 * cfg.paths as f64,
    })
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Per-cycle totals of one long controlled path.
struct Cycles {
    lengths: Vec<f64>,
    /// `∫ X dt` over each cycle.
    areas: Vec<f64>,
    pre_impulse: Vec<f64>,
    floor_hits: u64,
    steps: u64,
}

/// Runs a controlled path for `burn_in + horizon` time units and returns the
/// complete regeneration cycles that start after `burn_in`.
fn run_cycles(model: &DiffusionModel, y: f64, cfg: &SimConfig, burn_in: f64) -> Cycles {
    let y0 = model.y0();
    let mut st = Stepper::new(model, y, cfg, 0);
    let n = ((burn_in + cfg.horizon) / cfg.dt).ceil() as u64;
    let mut out = Cycles {
        lengths: vec![],
        areas: vec![],
        pre_impulse: vec![],
        floor_hits: 0,
        steps: 0,
    };
    let mut x = y0;
    let mut counting = false;
    let (mut len, mut area) = (0.0, 0.0);
    for i in 1..=n {
        match st.step(x) {
            Step::Continue(v) => {
                area += 0.5 * (x + v) * cfg.dt;
                len += cfg.dt;
                x = v;
            }
            Step::Crossed(pre) => {
                area += 0.5 * (x + pre.min(y)) * cfg.dt;
                len += cfg.dt;
                if counting {
                    out.lengths.push(len);
                    out.areas.push(area);
                    out.pre_impulse.push(pre);
                }
                counting = i as f64 * cfg.dt >= burn_in;
                len = 0.0;
                area = 0.0;
                x = y0;
            }
        }
    }
    out.floor_hits = st.floor_hits;
    out.steps = st.steps;
    out
}

/// Regenerative ratio estimator `sum r / sum l` with its delta-method error.
fn ratio(rewards: &[f64], lengths: &[f64]) -> (f64, f64) {
    let n = lengths.len() as f64;
    let total: f64 = lengths.iter().sum();
    let theta = rewards.iter().sum::<f64>() / total;
    let resid = rewards
        .iter()
        .zip(lengths)
        .map(|(r, l)| (r - theta * l).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    let mean_len = total / n;
    (theta, (resid / n).sqrt() / mean_len)
}

fn cycle_estimate(mean: f64, se: f64, c: &Cycles) -> Result<Estimate> {
    if c.lengths.len() < 2 {
        return Err(Error::Convergence {
            what: format!("fewer than two complete cycles ({}) in the horizon", c.lengths.len()),
            iterations: c.lengths.len(),
        });
    }
    Ok(Estimate {
        n: c.lengths.len() as u64,
        mean,
        se,
        capped: 0,
        floor_hits: c.floor_hits,
        steps: c.steps,
        flagged: false,
    })
}

/// Long-run average of `phi(z) (X_{tau_n-} - y0) - K` per unit time under `R(y)`.
pub fn estimate_value(model: &DiffusionModel, payoff: &PayoffSpec, y: f64, level: LevelMode, cfg: &SimConfig) -> Result<ValueEstimate> {
    cfg.check()?;
    check_threshold(model, y)?;
    let ev = XiEvaluator::new(model)?;
    let xi = ev.xi(y)?;
    let z = match level {
        LevelMode::Fixed(z) => z,
        LevelMode::SelfConsistent => match payoff.interaction {
            Interaction::HarvestRate => (y - model.y0()) / xi,
            Interaction::ExpectedStock => stationary::expected_stock(&ev, y)?,
        },
    };
    let price = payoff.phi.eval(z);
    let c = run_cycles(model, y, cfg, 10.0 * xi);
    let rewards: Vec<f64> = c
        .pre_impulse
        .iter()
        .map(|&pre| price * (pre - model.y0()) - payoff.cost)
        .collect();
    let (mean, se) = ratio(&rewards, &c.lengths);
    let estimate = cycle_estimate(mean, se, &c)?;
    let n = c.lengths.len() as f64;
    Ok(ValueEstimate {
        estimate,
        z,
        price,
        impulse_rate: n / c.lengths.iter().sum::<f64>(),
        mean_cycle_reward: rewards.iter().sum::<f64>() / n,
    })
}

/// Time average of the controlled path after a burn-in of `10 xi(y)`.
pub fn estimate_stationary_mean(model: &DiffusionModel, y: f64, cfg: &SimConfig) -> Result<Estimate> {
    cfg.check()?;
    check_threshold(model, y)?;
    let xi = XiEvaluator::new(model)?.xi(y)?;
    let c = run_cycles(model, y, cfg, 10.0 * xi);
    let (mean, se) = ratio(&c.areas, &c.lengths);
    cycle_estimate(mean, se, &c)
}

/// Time average of the path reflected downwards at `y0`, with batch-means
/// error over 100 batches.
pub fn estimate_reflected_mean(model: &DiffusionModel, cfg: &SimConfig) -> Result<Estimate> {
    cfg.check()?;
    let y0 = model.y0();
    let mut st = Stepper::new(model, f64::INFINITY, cfg, 0);
    let burn = (cfg.horizon / 100.0 / cfg.dt).ceil() as u64;
    let n = (cfg.horizon / cfg.dt).ceil() as u64;
    let batch = (n / 100).max(1);
    let mut x = y0;
    for _ in 0..burn {
        x = reflect(st.step(x), y0);
    }
    let mut means = Vec::with_capacity(100);
    let mut acc = 0.0;
    for i in 1..=batch * 100 {
        let v = reflect(st.step(x), y0);
        acc += 0.5 * (x + v);
        x = v;
        if i % batch == 0 {
            means.push(acc / batch as f64);
            acc = 0.0;
        }
    }
    let (mean, se) = mean_se(&means);
    Ok(Estimate {
        n: means.len() as u64,
        mean,
        se,
        capped: 0,
        floor_hits: st.floor_hits,
        steps: st.steps,
        flagged: false,
    })
}

fn reflect(s: Step, y0: f64) -> f64 {
    match s {
        Step::Continue(v) | Step::Crossed(v) => {
            if v > y0 {
                2.0 * y0 - v
            } else {
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::PriceFunction;

    fn model() -> DiffusionModel {
        DiffusionModel::logistic(-1.0, 0.5, 1.0, 1.0).unwrap()
    }

    fn small(paths: usize, horizon: f64) -> SimConfig {
        SimConfig {
            paths,
            horizon,
            ..SimConfig::default()
        }
    }

    #[test]
    fn restarts_at_y0_and_is_reproducible() {
        let m = model();
        let cfg = small(1, 50.0);
        let a = simulate_path(&m, 3.0, &cfg, 50.0, 10).unwrap();
        let b = simulate_path(&m, 3.0, &cfg, 50.0, 10).unwrap();
        assert_eq!(a, b);
        assert!(!a.impulse_times.is_empty());
        assert!(a.pre_impulse.iter().all(|&p| p == 3.0));
        for &t in &a.impulse_times {
            let i = a.times.iter().position(|&s| s == t).unwrap();
            assert_eq!(a.states[i], 1.0);
        }
        assert!(a.states.iter().all(|&x| x < 3.0));
        assert_eq!(a.floor_hits, 0);
        let other = simulate_path(&m, 3.0, &SimConfig { seed: 1, ..cfg }, 50.0, 10).unwrap();
        assert_ne!(a.states, other.states);
    }

    #[test]
    fn infinite_threshold_is_the_uncontrolled_path() {
        let m = model();
        let cfg = small(1, 20.0);
        let free = simulate_path(&m, f64::INFINITY, &cfg, 20.0, 1).unwrap();
        assert!(free.impulse_times.is_empty());
        let mut rng = cfg.rng(0);
        let mut x = 1.0;
        for (i, &got) in free.states.iter().enumerate().skip(1).take(1000) {
            let z: f64 = rng.sample(StandardNormal);
            x = (x + m.drift(x) * cfg.dt + m.volatility(x) * cfg.dt.sqrt() * z).max(cfg.floor);
            assert_eq!(got, x, "step {i}");
        }
    }

    #[test]
    fn grid_only_records_overshoot() {
        let cfg = SimConfig {
            crossing: CrossingRule::GridOnly,
            ..small(1, 50.0)
        };
        let p = simulate_path(&model(), 3.0, &cfg, 50.0, 100).unwrap();
        assert!(p.pre_impulse.iter().all(|&v| v >= 3.0));
        assert!(p.pre_impulse.iter().any(|&v| v > 3.0));
    }

    #[test]
    fn hitting_time_matches_xi() {
        let m = model();
        let xi = XiEvaluator::new(&m).unwrap().xi(2.0).unwrap();
        let est = estimate_hitting_time(&m, 2.0, &small(10_000, 1.0)).unwrap();
        assert!(est.z_score(xi) < 3.0, "{est:?} vs {xi}");
        assert_eq!(est.capped, 0);
        assert!(!est.flagged);
        let big = estimate_hitting_time(&m, 2.0, &small(40_000, 1.0)).unwrap();
        let r = est.se / big.se;
        assert!((r - 2.0).abs() < 0.2, "se ratio {r}");
    }

    #[test]
    fn hitting_time_vanishes_near_y0() {
        let m = model();
        let xi = XiEvaluator::new(&m).unwrap().xi(1.01).unwrap();
        let est = estimate_hitting_time(&m, 1.01, &small(2000, 1.0)).unwrap();
        assert!(xi < 0.02 && est.mean < 0.02, "{est:?}");
        assert!(est.z_score(xi) < 3.0, "{est:?} vs {xi}");
        assert!(estimate_hitting_time(&model(), 0.5, &small(10, 1.0)).is_err());
    }

    #[test]
    fn capped_paths_are_counted() {
        let cfg = SimConfig {
            time_cap: 0.5,
            ..small(500, 1.0)
        };
        let est = estimate_hitting_time(&model(), 3.0, &cfg).unwrap();
        assert!(est.capped > 0 && est.flagged);
        assert_eq!(est.n + est.capped, 500);
    }

    #[test]
    fn stationary_mean_matches_expected_stock() {
        let m = model();
        let ev = XiEvaluator::new(&m).unwrap();
        let want = stationary::expected_stock(&ev, 4.0).unwrap();
        let est = estimate_stationary_mean(&m, 4.0, &small(1, 2e4)).unwrap();
        assert!(est.z_score(want) < 3.0, "{est:?} vs {want}");
        let (z1, z2) = stationary::stock_bounds(&ev).unwrap();
        assert!(est.mean > z1 - 3.0 * est.se && est.mean < z2 + 3.0 * est.se);
    }

    #[test]
    fn reflected_mean_matches_z1() {
        let m = model();
        let z1 = stationary::reflected_mean(&XiEvaluator::new(&m).unwrap()).unwrap();
        let est = estimate_reflected_mean(&m, &small(1, 2e4)).unwrap();
        assert!(est.z_score(z1) < 3.0, "{est:?} vs {z1}");
    }

    #[test]
    fn value_matches_renewal_ratio() {
        let m = model();
        let payoff = PayoffSpec {
            cost: 1.0,
            phi: PriceFunction::parse("1/(z+1)").unwrap(),
            interaction: Interaction::HarvestRate,
        };
        let ev = XiEvaluator::new(&m).unwrap();
        let y = 5.0;
        let est = estimate_value(&m, &payoff, y, LevelMode::SelfConsistent, &small(1, 2e4)).unwrap();
        let z = (y - 1.0) / ev.xi(y).unwrap();
        let want = ((y - 1.0) / (1.0 + z) - 1.0) / ev.xi(y).unwrap();
        assert!((est.z - z).abs() < 1e-12);
        assert!(est.estimate.z_score(want) < 3.0, "{est:?} vs {want}");
        let product = est.impulse_rate * est.mean_cycle_reward;
        assert!((product - est.estimate.mean).abs() < 1e-12);

        let costly = PayoffSpec { cost: 20.0, ..payoff };
        let neg = estimate_value(&m, &costly, y, LevelMode::Fixed(0.0), &small(1, 2e4)).unwrap();
        let want = ((y - 1.0) - 20.0) / ev.xi(y).unwrap();
        assert!(neg.estimate.mean < 0.0);
        assert!(neg.estimate.z_score(want) < 3.0, "{neg:?} vs {want}");
    }

    #[test]
    fn path_csv_marks_impulses() {
        let p = simulate_path(&model(), 2.0, &small(1, 10.0), 10.0, 50).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let flagged = text.lines().filter(|l| l.ends_with(",1")).count();
        assert_eq!(flagged, p.impulse_times.len());
        assert_eq!(text.lines().count(), 1 + p.times.len() + flagged);
    }
}
