//! Mean field equilibria and mean field type control in threshold strategies.
//!
//! An agent playing `R(y)` against interaction level `z` earns
//! `(phi(z) (y - y0) - K) / xi(y)` per unit time. The interaction generated
//! by `R(y)` is either the harvesting rate `(y - y0) / xi(y)` or the
//! stationary mean stock under `R(y)`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::NumericsConfig;
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::hitting::{RunningProfile, XiEvaluator};
use crate::impulse::{self, ImpulseSolver, ThresholdSolution};
use crate::numerics::roots::{bisect, golden_max, log_space};
use crate::stationary::{self, MIN_GAP};

/// Price as a function of the interaction level.
#[derive(Clone)]
pub struct PriceFunction {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl PriceFunction {
    /// Parses an expression in `z` (or `x`).
    pub fn parse(source: &str) -> Result<Self> {
        Ok(Self::from_expr(Expr::parse(source)?))
    }

    pub fn from_expr(e: Expr) -> Self {
        Self {
            label: e.source().to_string(),
            f: Arc::new(move |z| e.eval(z)),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            label: format!("{c}"),
            f: Arc::new(move |_| c),
        }
    }

    /// `label` must be an expression in the scenario grammar if the payoff
    /// is going to be serialized and read back.
    pub fn from_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(label: impl Into<String>, f: F) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        (self.f)(z)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for PriceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PriceFunction({:?})", self.label)
    }
}

impl Serialize for PriceFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label)
    }
}

impl<'de> Deserialize<'de> for PriceFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PriceFunction::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// `c(y) = (y - y0) / xi(y)`.
    HarvestRate,
    /// `c(y)` is the stationary mean of the controlled process.
    ExpectedStock,
}

impl fmt::Display for Interaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interaction::HarvestRate => "harvest_rate",
            Interaction::ExpectedStock => "expected_stock",
        })
    }
}

/// Cost per impulse, price function and interaction channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PayoffSpec {
    #[serde(alias = "K")]
    pub cost: f64,
    pub phi: PriceFunction,
    pub interaction: Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stability::Stable => "stable",
            Stability::Unstable => "unstable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub label: Stability,
    /// Central difference of the fixed-point map.
    pub derivative: f64,
    /// `|derivative|` within `1e-3` of one.
    pub marginal: bool,
    /// Whether five best-response iterations from `±2%` agree with the label.
    pub iteration_agrees: bool,
    pub iterates_below: Vec<f64>,
    pub iterates_above: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub threshold: f64,
    pub value: f64,
    pub level: f64,
    pub residual: f64,
    pub stability: StabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    pub interaction: Interaction,
    /// Ascending in the threshold.
    pub equilibria: Vec<Equilibrium>,
    /// Interval on which fixed points were searched.
    pub search: (f64, f64),
    /// Grid points whose interaction level had to be clamped.
    pub clamped: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfcSolution {
    pub threshold: f64,
    pub value: f64,
    pub level: f64,
    /// Other local maxima within `1e-6` of the best value.
    pub ties: Vec<f64>,
    pub tie_flag: bool,
    /// Best value is negative.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub interaction: Interaction,
    pub mfg: EquilibriumSet,
    pub mfc: MfcSolution,
    /// `y^p - y^g` for harvest rates, `y^g - y^p` for stocks, per equilibrium.
    pub margins: Vec<f64>,
    pub tol: f64,
    pub holds: bool,
}

/// Value of the fixed-point map at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiValue {
    pub threshold: f64,
    pub level: f64,
    pub clamped: bool,
}

/// A model, a payoff and everything the mean field solvers precompute.
pub struct MeanField {
    solver: ImpulseSolver,
    payoff: PayoffSpec,
    y_hat0: ThresholdSolution,
    domain: (f64, f64),
    y_cap: f64,
    stock: Option<RunningProfile<fn(f64) -> f64>>,
    phi_decreasing: bool,
}

fn identity(x: f64) -> f64 {
    x
}

impl MeanField {
    pub fn new(model: &DiffusionModel, payoff: PayoffSpec, cfg: NumericsConfig) -> Result<Self> {
        let mut model = model.clone();
        model.set_tolerance(cfg.quad());
        let solver = ImpulseSolver::new(XiEvaluator::new(&model)?, cfg);
        Self::from_solver(solver, payoff)
    }

    pub fn from_solver(solver: ImpulseSolver, payoff: PayoffSpec) -> Result<Self> {
        if !(payoff.cost > 0.0 && payoff.cost.is_finite()) {
            return Err(Error::domain(format!("cost per impulse {} must be positive", payoff.cost)));
        }
        let ev = solver.evaluator().clone();
        let y_hat0 = solver.optimal_threshold_basic(0.0)?;
        let mut y_cap = 20.0 * y_hat0.threshold;
        let (domain, stock) = match payoff.interaction {
            Interaction::HarvestRate => ((0.0, y_hat0.value), None),
            Interaction::ExpectedStock => {
                let (z1, z2) = stationary::stock_bounds(&ev)?;
                y_cap = y_cap.max(saturation_point(&ev, y_hat0.threshold, 0.999 * z2)?);
                let f: fn(f64) -> f64 = identity;
                let profile = ev.running_profile(f, ev.y0(), ev.y0(), 2.0 * y_cap, 4000).ok();
                ((z1, z2), profile)
            }
        };
        let zs = log_space(1.0, 2.0, 201)
            .into_iter()
            .map(|t| domain.0 + (t - 1.0) * (domain.1 - domain.0))
            .collect::<Vec<_>>();
        let phis: Vec<f64> = zs.iter().map(|&z| payoff.phi.eval(z)).collect();
        let phi_decreasing = phis.windows(2).all(|w| w[1] < w[0]);
        if let Some(bad) = phis.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::domain(format!(
                "price phi({}) = {} is not positive on the interaction domain",
                zs[bad], phis[bad]
            )));
        }
        Ok(Self {
            solver,
            payoff,
            y_hat0,
            domain,
            y_cap,
            stock,
            phi_decreasing,
        })
    }

    pub fn solver(&self) -> &ImpulseSolver {
        &self.solver
    }

    pub fn payoff(&self) -> &PayoffSpec {
        &self.payoff
    }

    fn ev(&self) -> &XiEvaluator {
        self.solver.evaluator()
    }

    fn cfg(&self) -> &NumericsConfig {
        self.solver.config()
    }

    /// Single-agent threshold without costs.
    pub fn y_hat0(&self) -> &ThresholdSolution {
        &self.y_hat0
    }

    /// `[0, max rate]` or `[z1, z2]`.
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Right end of the threshold grids.
    pub fn y_cap(&self) -> f64 {
        self.y_cap
    }

    /// Whether `phi` is strictly decreasing on a grid over the domain.
    pub fn phi_decreasing(&self) -> bool {
        self.phi_decreasing
    }

    /// `c(y)`.
    pub fn interaction_level(&self, y: f64) -> Result<f64> {
        let y0 = self.ev().y0();
        if !(y > y0 + MIN_GAP) {
            return Err(Error::domain(format!("interaction needs a threshold above y0 = {y0}, got {y}")));
        }
        match self.payoff.interaction {
            Interaction::HarvestRate => Ok((y - y0) / self.ev().xi(y)?),
            Interaction::ExpectedStock => match &self.stock {
                Some(p) if y <= p.range().1 => Ok(p.eval(y)? / self.ev().xi(y)?),
                _ => stationary::expected_stock(self.ev(), y),
            },
        }
    }

    pub fn best_response(&self, z: f64) -> Result<ThresholdSolution> {
        impulse::best_response(&self.solver, z, &self.payoff)
    }

    /// `Phi(y)`, the best response to the interaction generated by `R(y)`.
    pub fn phi_map(&self, y: f64) -> Result<PhiValue> {
        let raw = self.interaction_level(y)?;
        let level = raw.clamp(self.domain.0, self.domain.1);
        let threshold = self.best_response(level)?.threshold;
        Ok(PhiValue {
            threshold,
            level,
            clamped: level != raw,
        })
    }

    pub fn critical_bounds(&self) -> Result<(f64, f64)> {
        impulse::critical_bounds(&self.solver, &self.payoff, self.domain)
    }

    /// `H(y) = (phi(c(y)) (y - y0) - K) / xi(y)`, the common value when every
    /// agent plays `R(y)`.
    pub fn common_value(&self, y: f64) -> Result<f64> {
        let y0 = self.ev().y0();
        let c = self.interaction_level(y)?;
        Ok((self.payoff.phi.eval(c) * (y - y0) - self.payoff.cost) / self.ev().xi(y)?)
    }

    pub fn mfg_equilibrium(&self) -> Result<EquilibriumSet> {
        match self.payoff.interaction {
            Interaction::HarvestRate => self.unique_equilibrium(),
            Interaction::ExpectedStock => self.scan_equilibria(),
        }
    }

    fn psi(&self, y: f64) -> Result<f64> {
        Ok(self.phi_map(y)?.threshold - y)
    }

    fn fixed_point(&self, a: f64, b: f64) -> Result<f64> {
        let tol = self.cfg().fixed_point_tol;
        let root = bisect(|y| self.psi(y), a, b, |_, fy, _| fy.abs() < tol, self.cfg().fixed_point_max_iter)?;
        Ok(root.x)
    }

    fn equilibrium_at(&self, y: f64) -> Result<Equilibrium> {
        let phi = self.phi_map(y)?;
        Ok(Equilibrium {
            threshold: y,
            value: self.common_value(y)?,
            level: phi.level,
            residual: (phi.threshold - y).abs(),
            stability: self.classify_stability(y)?,
        })
    }

    /// Harvest-rate interaction: `Phi - id` is decreasing, so bisection on
    /// the critical bounds finds the only fixed point.
    fn unique_equilibrium(&self) -> Result<EquilibriumSet> {
        let (lo, hi) = self.critical_bounds()?;
        let y = if hi - lo <= 1e-12 * hi { lo } else { self.fixed_point(lo, hi)? };
        Ok(EquilibriumSet {
            interaction: self.payoff.interaction,
            equilibria: vec![self.equilibrium_at(y)?],
            search: (lo, hi),
            clamped: 0,
            note: None,
        })
    }

    /// Stock interaction: scan a log grid for sign changes of `Phi - id`.
    fn scan_equilibria(&self) -> Result<EquilibriumSet> {
        let y0 = self.ev().y0();
        let grid = log_space(y0 * (1.0 + 1e-3), self.y_cap, self.cfg().scan_points.max(3));
        let vals: Vec<(f64, bool)> = grid
            .par_iter()
            .map(|&y| self.phi_map(y).map(|p| (p.threshold - y, p.clamped)))
            .collect::<Result<Vec<_>>>()?;
        let clamped = vals.iter().filter(|v| v.1).count();
        let mut roots = Vec::new();
        for i in 0..grid.len() - 1 {
            let (a, b) = (vals[i].0, vals[i + 1].0);
            if a == 0.0 {
                roots.push(grid[i]);
            } else if a.signum() != b.signum() && b != 0.0 {
                roots.push(self.fixed_point(grid[i], grid[i + 1])?);
            }
        }
        if vals.last().is_some_and(|v| v.0 == 0.0) {
            roots.push(*grid.last().unwrap());
        }
        let equilibria = roots
            .par_iter()
            .map(|&y| self.equilibrium_at(y))
            .collect::<Result<Vec<_>>>()?;
        let note = equilibria.is_empty().then(|| {
            format!(
                "no sign change of Phi(y) - y on [{:.6}, {:.6}]; check that phi is positive and decreasing on [z1, z2]",
                grid[0],
                self.y_cap
            )
        });
        Ok(EquilibriumSet {
            interaction: self.payoff.interaction,
            equilibria,
            search: (grid[0], self.y_cap),
            clamped,
            note,
        })
    }

    /// Stable iff `|Phi'(y)| < 1`, cross-checked by iterating `Phi` from `y (1 ± 0.02)`.
    pub fn classify_stability(&self, y: f64) -> Result<StabilityReport> {
        let h = 1e-3 * y;
        let derivative = (self.phi_map(y + h)?.threshold - self.phi_map(y - h)?.threshold) / (2.0 * h);
        let label = if derivative.abs() < 1.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        };
        let iterate = |start: f64| -> Result<Vec<f64>> {
            let mut path = vec![start];
            let mut x = start;
            for _ in 0..5 {
                x = self.phi_map(x)?.threshold;
                path.push(x);
            }
            Ok(path)
        };
        let below = iterate(0.98 * y)?;
        let above = iterate(1.02 * y)?;
        let closer = |p: &[f64]| (p[p.len() - 1] - y).abs() < (p[0] - y).abs();
        let converging = closer(&below) && closer(&above);
        Ok(StabilityReport {
            label,
            derivative,
            marginal: (derivative.abs() - 1.0).abs() < 1e-3,
            iteration_agrees: converging == (label == Stability::Stable),
            iterates_below: below,
            iterates_above: above,
        })
    }

    /// Maximizes `H` on a log grid and refines every local maximum by golden section.
    pub fn mfc_optimum(&self) -> Result<MfcSolution> {
        let y0 = self.ev().y0();
        let lo = y0 * (1.0 + 1e-3);
        let mut hi = self.y_cap;
        let n = self.cfg().scan_points.max(3);
        for _ in 0..20 {
            let grid = log_space(lo, hi, n);
            let vals = grid
                .par_iter()
                .map(|&y| match self.common_value(y) {
                    Err(Error::Overflow(_)) => Ok(f64::NEG_INFINITY),
                    r => r,
                })
                .collect::<Result<Vec<f64>>>()?;
            let best = argmax(&vals);
            if best + 1 == n {
                hi *= 2.0;
                continue;
            }
            let mut peaks = Vec::new();
            for i in 0..n - 1 {
                let left = if i == 0 { f64::NEG_INFINITY } else { vals[i - 1] };
                if vals[i] >= left && vals[i] >= vals[i + 1] && vals[i].is_finite() {
                    let a = grid[i.saturating_sub(1)];
                    let b = grid[i + 1];
                    let m = golden_max(|y| self.common_value(y), a, b, 1e-12 * b, 500)?;
                    peaks.push(if m.fx >= vals[i] { (m.x, m.fx) } else { (grid[i], vals[i]) });
                }
            }
            let top = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let mut near: Vec<(f64, f64)> = peaks.into_iter().filter(|p| p.1 >= top - 1e-6).collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0));
            near.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-6 * b.0);
            let (threshold, _) = near[0];
            let best_value = near.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let value = if near.len() == 1 { best_value } else { near[0].1 };
            return Ok(MfcSolution {
                threshold,
                value,
                level: self.interaction_level(threshold)?,
                ties: near[1..].iter().map(|p| p.0).collect(),
                tie_flag: near.len() > 1,
                degenerate: value < 0.0,
            });
        }
        Err(Error::NoRoot(format!("common value still increasing at y = {hi}")))
    }

    /// Solves both problems and measures the ordering margin.
    pub fn compare_unchecked(&self) -> Result<Comparison> {
        let mfg = self.mfg_equilibrium()?;
        let mfc = self.mfc_optimum()?;
        let tol = self.cfg().compare_tol;
        let margins: Vec<f64> = mfg
            .equilibria
            .iter()
            .map(|e| match self.payoff.interaction {
                Interaction::HarvestRate => mfc.threshold - e.threshold,
                Interaction::ExpectedStock => e.threshold - mfc.threshold,
            })
            .collect();
        let holds = !margins.is_empty() && margins.iter().all(|&m| m >= -tol);
        Ok(Comparison {
            interaction: self.payoff.interaction,
            mfg,
            mfc,
            margins,
            tol,
            holds,
        })
    }

    /// Like [`Self::compare_unchecked`], failing when the ordering is violated.
    pub fn compare(&self) -> Result<Comparison> {
        let c = self.compare_unchecked()?;
        if c.holds {
            Ok(c)
        } else {
            Err(Error::OrderingViolation(format!(
                "{} interaction: margins {:?} below -{}",
                c.interaction, c.margins, c.tol
            )))
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// First threshold (to bisection accuracy) whose expected stock exceeds `level`.
fn saturation_point(ev: &XiEvaluator, start: f64, level: f64) -> Result<f64> {
    let stock = |y: f64| stationary::expected_stock(ev, y);
    let mut hi = start.max(ev.y0() + 1.0);
    let mut lo = ev.y0() + 2.0 * MIN_GAP;
    for _ in 0..30 {
        match stock(hi) {
            Ok(v) if v > level => break,
            Ok(_) => {
                lo = hi;
                hi *= 2.0;
            }
            // past the overflow point the stock is as saturated as it gets
            Err(Error::Overflow(_)) | Err(Error::Domain(_)) => return Ok(lo),
            Err(e) => return Err(e),
        }
    }
    let root = bisect(|y| Ok(stock(y)? - level), lo, hi, |_, _, w| w < 1e-6 * hi, 200);
    Ok(root.map(|r| r.x).unwrap_or(hi))
}

/// One draw of the randomized ordering check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub q: f64,
    pub b: f64,
    pub beta: f64,
    pub cost: f64,
    pub interaction: Interaction,
    pub mfg_thresholds: Vec<f64>,
    pub mfg_values: Vec<f64>,
    pub mfc_threshold: f64,
    pub mfc_value: f64,
    pub min_margin: f64,
    pub holds: bool,
    pub error: Option<String>,
}

/// Parameter ranges of the sweep; `phi(z) = 1/(1+z)`, `beta = 1`, `y0 = 1`.
pub const SWEEP_Q: (f64, f64) = (-2.0, -0.2);
pub const SWEEP_B: (f64, f64) = (0.2, 1.0);
pub const SWEEP_K: (f64, f64) = (0.5, 2.0);

/// Randomized logistic scenarios, checked for the ordering of `y^p` and `y^g`.
///
/// Draws are made sequentially from `seed`, then solved in parallel; rows
/// come back in draw order.
pub fn sweep(interaction: Interaction, draws: usize, seed: u64, cfg: &NumericsConfig) -> Vec<SweepRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<(f64, f64, f64)> = (0..draws)
        .map(|_| {
            (
                rng.random_range(SWEEP_Q.0..SWEEP_Q.1),
                rng.random_range(SWEEP_B.0..SWEEP_B.1),
                rng.random_range(SWEEP_K.0..SWEEP_K.1),
            )
        })
        .collect();
    params
        .par_iter()
        .enumerate()
        .map(|(index, &(q, b, cost))| {
            let row = SweepRow {
                index,
                q,
                b,
                beta: 1.0,
                cost,
                interaction,
                mfg_thresholds: vec![],
                mfg_values: vec![],
                mfc_threshold: f64::NAN,
                mfc_value: f64::NAN,
                min_margin: f64::NAN,
                holds: false,
                error: None,
            };
            let solved = (|| {
                let model = DiffusionModel::logistic(q, b, 1.0, 1.0)?;
                let payoff = PayoffSpec {
                    cost,
                    phi: PriceFunction::parse("1/(1+z)")?,
                    interaction,
                };
                MeanField::new(&model, payoff, cfg.clone())?.compare_unchecked()
            })();
            match solved {
                Ok(c) => SweepRow {
                    mfg_thresholds: c.mfg.equilibria.iter().map(|e| e.threshold).collect(),
                    mfg_values: c.mfg.equilibria.iter().map(|e| e.value).collect(),
                    mfc_threshold: c.mfc.threshold,
                    mfc_value: c.mfc.value,
                    min_margin: c.margins.iter().cloned().fold(f64::INFINITY, f64::min),
                    holds: c.holds,
                    ..row
                },
                Err(e) => SweepRow {
                    error: Some(e.to_string()),
                    ..row
                },
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "index,interaction,q,b,beta,K,y_g,value_g,y_p,value_p,min_margin,holds,error")?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.interaction,
            r.q,
            r.b,
            r.beta,
            r.cost,
            join(&r.mfg_thresholds),
            join(&r.mfg_values),
            r.mfc_threshold,
            r.mfc_value,
            r.min_margin,
            r.holds,
            r.error.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_model() -> DiffusionModel {
        DiffusionModel::logistic(-1.0, 0.5, 1.0, 1.0).unwrap()
    }

    fn problem(phi: &str, interaction: Interaction) -> MeanField {
        let payoff = PayoffSpec {
            cost: 1.0,
            phi: PriceFunction::parse(phi).unwrap(),
            interaction,
        };
        MeanField::new(&base_model(), payoff, NumericsConfig::default()).unwrap()
    }

    #[test]
    fn harvest_rate_equilibrium_and_control() {
        let p = problem("1/(z+1)", Interaction::HarvestRate);
        let set = p.mfg_equilibrium().unwrap();
        assert_eq!(set.equilibria.len(), 1);
        let e = &set.equilibria[0];
        assert!((e.threshold - 5.130843097092451).abs() < 1e-6, "{e:?}");
        assert!((e.value - 0.24288268857491047).abs() < 1e-8);
        assert!(e.residual < 1e-7 * e.threshold);
        assert!(e.stability.derivative < 0.0);
        let (lo, hi) = p.critical_bounds().unwrap();
        assert!(lo <= e.threshold && e.threshold <= hi);

        let mfc = p.mfc_optimum().unwrap();
        assert!((mfc.threshold - 5.898698106762678).abs() < 1e-5, "{mfc:?}");
        assert!((mfc.value - 0.2536035981736404).abs() < 1e-9);
        assert!(!mfc.tie_flag && !mfc.degenerate);
        assert!(mfc.value >= e.value);
        assert!(mfc.threshold >= p.y_hat0().threshold);
    }

    #[test]
    fn harvest_rate_map_is_decreasing() {
        let p = problem("1/(z+1)", Interaction::HarvestRate);
        let (lo, hi) = p.critical_bounds().unwrap();
        let ys = log_space(lo, hi, 40);
        let phis: Vec<f64> = ys.iter().map(|&y| p.phi_map(y).unwrap().threshold).collect();
        assert!(phis.windows(2).all(|w| w[1] < w[0]));
        let levels: Vec<f64> = log_space(p.y_hat0().threshold, 40.0, 40)
            .iter()
            .map(|&y| p.interaction_level(y).unwrap())
            .collect();
        assert!(levels.windows(2).all(|w| w[1] < w[0]));
        let at_hat = p.interaction_level(p.y_hat0().threshold).unwrap();
        assert!((at_hat - p.domain().1).abs() < 1e-12);
    }

    #[test]
    fn constant_price_reduces_to_single_agent() {
        let p = problem("0.8", Interaction::HarvestRate);
        let single = p.solver().optimal_threshold_basic(1.0 / 0.8).unwrap();
        let set = p.mfg_equilibrium().unwrap();
        assert_eq!(set.equilibria.len(), 1);
        assert!((set.equilibria[0].threshold - single.threshold).abs() < 1e-9);
        assert_eq!(set.equilibria[0].stability.label, Stability::Stable);
        assert_eq!(set.equilibria[0].stability.derivative, 0.0);
        let mfc = p.mfc_optimum().unwrap();
        assert!((mfc.threshold - single.threshold).abs() < 1e-5);
        assert!((mfc.value - 0.8 * single.value).abs() < 1e-10);
        assert!(!p.phi_decreasing());
        let c = p.compare().unwrap();
        assert!(c.margins[0].abs() < 1e-5);
    }

    #[test]
    fn stock_interaction_with_three_equilibria() {
        // a steeper price drop than the bundled scenario; gives three fixed points
        let p = problem("1/(1+exp(10*(z-1.7)))", Interaction::ExpectedStock);
        let set = p.mfg_equilibrium().unwrap();
        let ys: Vec<f64> = set.equilibria.iter().map(|e| e.threshold).collect();
        let want = [4.4579559023723316, 8.5653097168947843, 23.242876343977777];
        assert_eq!(ys.len(), 3, "{ys:?}");
        for (y, w) in ys.iter().zip(want) {
            assert!((y - w).abs() < 1e-6 * w, "{ys:?}");
        }
        let labels: Vec<Stability> = set.equilibria.iter().map(|e| e.stability.label).collect();
        assert_eq!(labels, [Stability::Stable, Stability::Unstable, Stability::Stable]);
        for e in &set.equilibria {
            assert!(e.residual < 1e-7 * e.threshold);
            assert!(e.stability.iteration_agrees, "{e:?}");
        }
        let (lo, hi) = p.critical_bounds().unwrap();
        assert!(ys.iter().all(|&y| lo <= y && y <= hi));
    }

    #[test]
    fn stock_map_is_nondecreasing() {
        let p = problem("1/(1+z)", Interaction::ExpectedStock);
        let ys = log_space(1.01, 30.0, 40);
        let phis: Vec<f64> = ys.iter().map(|&y| p.phi_map(y).unwrap().threshold).collect();
        assert!(phis.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        let levels: Vec<f64> = ys.iter().map(|&y| p.interaction_level(y).unwrap()).collect();
        assert!(levels.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn stock_ordering_reverses() {
        let p = problem("1/(1+z)", Interaction::ExpectedStock);
        let c = p.compare().unwrap();
        assert!(c.holds, "{c:?}");
        for e in &c.mfg.equilibria {
            assert!(c.mfc.threshold <= e.threshold + 1e-6);
        }
    }

    #[test]
    fn profile_and_direct_stock_agree() {
        let p = problem("1/(1+z)", Interaction::ExpectedStock);
        let ev = p.solver().evaluator();
        for y in [1.3, 4.0, 6.8, 30.0] {
            let a = p.interaction_level(y).unwrap();
            let b = stationary::expected_stock(ev, y).unwrap();
            assert!((a - b).abs() < 1e-9, "{y}: {a} vs {b}");
        }
    }

    #[test]
    fn invalid_payoffs_are_rejected() {
        let bad = PayoffSpec {
            cost: 1.0,
            phi: PriceFunction::parse("z - 5").unwrap(),
            interaction: Interaction::HarvestRate,
        };
        assert!(MeanField::new(&base_model(), bad, NumericsConfig::default()).is_err());
        let zero_cost = PayoffSpec {
            cost: 0.0,
            phi: PriceFunction::constant(1.0),
            interaction: Interaction::HarvestRate,
        };
        assert!(MeanField::new(&base_model(), zero_cost, NumericsConfig::default()).is_err());
    }

    #[test]
    fn payoff_serde_round_trip() {
        let p = PayoffSpec {
            cost: 1.0,
            phi: PriceFunction::parse("1/(z+1)").unwrap(),
            interaction: Interaction::ExpectedStock,
        };
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"cost":1.0,"phi":"1/(z+1)","interaction":"expected_stock"}"#);
        let back: PayoffSpec = serde_json::from_str(r#"{"K":2,"phi":"1/(z+1)","interaction":"harvest_rate"}"#).unwrap();
        assert_eq!(back.cost, 2.0);
        assert_eq!(back.phi.eval(1.0), 0.5);
        assert!(serde_json::from_str::<PayoffSpec>(r#"{"K":2,"phi":"1/(z+","interaction":"harvest_rate"}"#).is_err());
    }

    #[test]
    fn small_sweep_is_deterministic() {
        let cfg = NumericsConfig::default();
        let a = sweep(Interaction::HarvestRate, 3, 7, &cfg);
        let b = sweep(Interaction::HarvestRate, 3, 7, &cfg);
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.holds && r.error.is_none()), "{a:?}");
        let mut buf = Vec::new();
        write_sweep_csv(&a, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
