//! Single-agent long-run-average impulse control with restart at `y0`.

use serde::{Deserialize, Serialize};

use crate::config::NumericsConfig;
use crate::error::{Error, Result};
use crate::hitting::XiEvaluator;
use crate::meanfield::PayoffSpec;
use crate::numerics::roots::{bisect, expand_right, golden_max, log_space};

const MAX_DOUBLINGS: usize = 60;
/// Nodes of the running-cost profile behind the auxiliary objective.
const PROFILE_NODES: usize = 2000;
/// Acceptance tolerance of the stopping-value checks.
pub const VERIFY_TOL: f64 = 1e-6;

/// An optimal threshold `y*` together with its long-run value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSolution {
    pub threshold: f64,
    pub value: f64,
    /// First-order residual at the threshold, relative to the objective scale.
    pub residual: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
    /// False when no threshold earns a positive long-run value.
    pub profitable: bool,
}

/// `g` on a grid together with the optimal stopping level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingValue {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub threshold: f64,
    /// `g(y0)`.
    pub at_restart: f64,
}

/// Outcome of the pointwise verification of a threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub threshold: f64,
    /// Long-run value of the checked threshold, recomputed from scratch.
    pub rho: f64,
    pub g_at_restart: f64,
    /// `u(y, y0)` at the checked threshold.
    pub u_at_threshold: f64,
    /// Largest `u(x, y0)` on the grid.
    pub max_u: f64,
    /// Smallest `g(x) - (f(x) - K)` on the grid.
    pub min_excess: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ImpulseSolver {
    ev: XiEvaluator,
    cfg: NumericsConfig,
}

impl ImpulseSolver {
    pub fn new(ev: XiEvaluator, cfg: NumericsConfig) -> Self {
        Self { ev, cfg }
    }

    pub fn evaluator(&self) -> &XiEvaluator {
        &self.ev
    }

    pub fn config(&self) -> &NumericsConfig {
        &self.cfg
    }

    /// `(y - y0 - k) / xi(y)`.
    pub fn basic_objective(&self, k_tilde: f64, y: f64) -> Result<f64> {
        Ok((y - self.ev.y0() - k_tilde) / self.ev.xi(y)?)
    }

    /// Maximizer of `(y - y0 - k) / xi(y)`, the root of
    /// `xi(y) - (y - y0 - k) xi'(y)` to the right of `max(y0 + k, y2)`.
    ///
    /// With `k = 0` and `y2 <= y0` there is no interior root; the threshold
    /// is then `y0` itself and the value the limit `1 / xi'(y0)`.
    pub fn optimal_threshold_basic(&self, k_tilde: f64) -> Result<ThresholdSolution> {
        if !(k_tilde >= 0.0 && k_tilde.is_finite()) {
            return Err(Error::domain(format!("effective cost {k_tilde} must be nonnegative")));
        }
        let ev = &self.ev;
        let y0 = ev.y0();
        let start = (y0 + k_tilde).max(ev.y2().unwrap_or(y0)) + 1e-6;
        // first-order condition divided by xi, which keeps it of order one
        let foc = |y: f64| -> Result<f64> { Ok(1.0 - (y - y0 - k_tilde) * ev.xi_prime(y)? / ev.xi(y)?) };
        if k_tilde == 0.0 && foc(start)? <= 0.0 {
            // xi convex on all of (y0, inf): the rate decreases from its limit 1 / xi'(y0)
            return Ok(ThresholdSolution {
                threshold: y0,
                value: 1.0 / ev.xi_prime(y0)?,
                residual: 0.0,
                bracket: (y0, y0),
                iterations: 0,
                profitable: true,
            });
        }
        let (a, b) = expand_right(foc, start, 2.0 * start, MAX_DOUBLINGS)?;
        let (tol, width) = (self.cfg.root_rel_tol, self.cfg.root_width_rel);
        let root = bisect(foc, a, b, |x, fx, w| fx.abs() < tol && w < width * x, 400)?;
        let y = root.x;
        let value = self.basic_objective(k_tilde, y)?;
        Ok(ThresholdSolution {
            threshold: y,
            value,
            residual: root.fx,
            bracket: (a, b),
            iterations: root.iterations,
            profitable: value > 0.0,
        })
    }

    /// `(y_hat_0 - y0) / xi(y_hat_0)`, the largest achievable harvesting rate.
    pub fn max_harvest_rate(&self) -> Result<f64> {
        Ok(self.optimal_threshold_basic(0.0)?.value)
    }

    /// Maximizes `(f(y) - K - E_{y0}[∫_0^{tau_y} h]) / xi(y)` over `y > y0`.
    ///
    /// A log grid is scanned (its right end doubling while the best point
    /// sits on it) and the best cell is refined by golden section.
    pub fn solve_auxiliary<F, H>(&self, f: F, h: H, k: f64) -> Result<ThresholdSolution>
    where
        F: Fn(f64) -> f64,
        H: Fn(f64) -> f64,
    {
        let ev = &self.ev;
        let y0 = ev.y0();
        let lo = y0 * (1.0 + 1e-3);
        let mut hi = 20.0 * y0;
        if let Some(y2) = ev.y2() {
            hi = hi.max(4.0 * y2);
        }
        // right end of the last grid whose best point sat on that end
        let mut edge: Option<(f64, f64)> = None;
        for _ in 0..MAX_DOUBLINGS {
            let profile = match ev.running_profile(&h, y0, y0, hi, PROFILE_NODES) {
                Ok(p) => p,
                Err(_) if edge.is_some() => break,
                Err(e) => return Err(e),
            };
            let objective = |y: f64| -> Result<f64> { Ok((f(y) - k - profile.eval(y)?) / ev.xi(y)?) };
            let grid = log_space(lo, hi, self.cfg.scan_points.max(3));
            let mut best = (0, f64::NEG_INFINITY);
            let mut saturated = false;
            for (i, &y) in grid.iter().enumerate() {
                let v = match objective(y) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) | Err(Error::Overflow(_)) | Err(Error::Domain(_)) => {
                        saturated = true;
                        f64::NEG_INFINITY
                    }
                    Err(e) => return Err(e),
                };
                if v > best.1 {
                    best = (i, v);
                }
            }
            let i = best.0;
            if i + 1 == grid.len() {
                edge = Some((grid[i], best.1));
                if saturated {
                    break;
                }
                hi *= 2.0;
                continue;
            }
            let (a, b) = (grid[i.saturating_sub(1)], grid[i + 1]);
            let m = golden_max(objective, a, b, 1e-12 * b, 500)?;
            let (y, value) = if best.1 > m.fx { (grid[i], best.1) } else { (m.x, m.fx) };
            let step = 1e-5 * y;
            let slope = (objective(y + step)? - objective((y - step).max(lo))?) / (2.0 * step);
            return Ok(ThresholdSolution {
                threshold: y,
                value,
                residual: slope * y / value.abs().max(f64::MIN_POSITIVE),
                bracket: (a, b),
                iterations: m.iterations,
                profitable: value > 0.0,
            });
        }
        match edge {
            // the supremum is approached as y grows without bound and is not attained
            Some((y, value)) if value <= 0.0 => Ok(ThresholdSolution {
                threshold: y,
                value,
                residual: 0.0,
                bracket: (y, y),
                iterations: 0,
                profitable: false,
            }),
            _ => Err(Error::NoRoot(format!(
                "auxiliary objective still increasing at y = {hi}; no maximizer found"
            ))),
        }
    }

    /// Long-run value of the threshold `y` in the auxiliary problem.
    pub fn auxiliary_value<F, H>(&self, f: F, h: H, k: f64, y: f64) -> Result<f64>
    where
        F: Fn(f64) -> f64,
        H: Fn(f64) -> f64,
    {
        let y0 = self.ev.y0();
        Ok((f(y) - k - self.ev.expected_running_cost(h, y0, y)?) / self.ev.xi(y)?)
    }

    /// `g(x) = sup_{y >= max(x, y0)} f(y) - K - E_x[∫_0^{tau_y} (h + rho)]` on `grid`.
    ///
    /// With `W` the running-cost profile of `h + rho` anchored at `y0`,
    /// `g(x) = W(x) + sup_{y >= max(x, y0)} (f - K - W)(y)`. The supremum is
    /// located on a fine grid and refined by golden section.
    pub fn stopping_value<F, H>(&self, f: F, h: H, k: f64, rho: f64, grid: &[f64]) -> Result<StoppingValue>
    where
        F: Fn(f64) -> f64,
        H: Fn(f64) -> f64,
    {
        let ev = &self.ev;
        let y0 = ev.y0();
        if grid.is_empty() || grid.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::domain("stopping grid must be nonempty and positive"));
        }
        let x_min = grid.iter().cloned().fold(y0, f64::min);
        let x_max = grid.iter().cloned().fold(y0, f64::max);
        let y_hi = 2.0 * x_max;
        let profile = ev.running_profile(|u| h(u) + rho, y0, x_min, y_hi, PROFILE_NODES)?;
        let psi = |y: f64| -> Result<f64> { Ok(f(y) - k - profile.eval(y)?) };

        // Fine grid on [y0, y_hi] with suffix maxima.
        let fine = log_space(y0, y_hi, PROFILE_NODES);
        let fine_vals = fine.iter().map(|&y| psi(y)).collect::<Result<Vec<f64>>>()?;
        let mut suffix = vec![fine.len() - 1; fine.len()];
        for j in (0..fine.len() - 1).rev() {
            let best = suffix[j + 1];
            suffix[j] = if fine_vals[j] >= fine_vals[best] { j } else { best };
        }
        let sup_from = |x: f64| -> Result<(f64, f64)> {
            let start = x.max(y0);
            let at_start = psi(start)?;
            let j0 = fine.partition_point(|&y| y < start).min(fine.len() - 1);
            let j = suffix[j0];
            let a = fine[j.saturating_sub(1)].max(start);
            let b = fine[(j + 1).min(fine.len() - 1)];
            let mut best = (start, at_start);
            if fine_vals[j] > best.1 {
                best = (fine[j], fine_vals[j]);
            }
            if b > a {
                let m = golden_max(psi, a, b, 1e-12 * b, 500)?;
                if m.fx > best.1 {
                    best = (m.x, m.fx);
                }
            }
            Ok(best)
        };

        let (threshold, sup_at_y0) = sup_from(y0)?;
        let at_restart = profile.eval(y0)? + sup_at_y0;
        let values = grid
            .iter()
            .map(|&x| Ok(profile.eval(x)? + sup_from(x)?.1))
            .collect::<Result<Vec<f64>>>()?;
        Ok(StoppingValue {
            grid: grid.to_vec(),
            values,
            threshold,
            at_restart,
        })
    }

    /// Checks `g(y0) = 0`, `g >= f - K` and `u(x, y0) <= 0` with equality at
    /// the threshold, where `u(x, y0) = f(x) - f(y0) - K - g(x) + g(y0)`.
    /// The inequalities are checked on grid points `x >= y0`, where an
    /// impulse down to `y0` is admissible.
    ///
    /// The long-run value is recomputed from the threshold, so a threshold
    /// that is not optimal leaves `g(y0) > 0`.
    pub fn verify_solution<F, H>(&self, solution: &ThresholdSolution, f: F, h: H, k: f64) -> Result<Verification>
    where
        F: Fn(f64) -> f64,
        H: Fn(f64) -> f64,
    {
        let y0 = self.ev.y0();
        let y = solution.threshold;
        let rho = self.auxiliary_value(&f, &h, k, y)?;
        let mut grid = log_space(1e-2 * y0, 1.5 * y, self.cfg.stopping_grid.max(2));
        if let Err(i) = grid.binary_search_by(|x| x.total_cmp(&y)) {
            grid.insert(i, y);
        }
        let sv = self.stopping_value(&f, &h, k, rho, &grid)?;
        let g0 = sv.at_restart;
        let f0 = f(y0);
        let mut max_u = f64::NEG_INFINITY;
        let mut min_excess = f64::INFINITY;
        let mut u_at_threshold = f64::NAN;
        for (&x, &g) in sv.grid.iter().zip(&sv.values).filter(|(&x, _)| x >= y0) {
            let u = f(x) - f0 - k - g + g0;
            max_u = max_u.max(u);
            min_excess = min_excess.min(g - (f(x) - k));
            if x == y {
                u_at_threshold = u;
            }
        }
        let tol = VERIFY_TOL;
        let passed = g0.abs() <= tol && min_excess >= -tol && max_u <= tol && u_at_threshold.abs() <= tol;
        Ok(Verification {
            threshold: y,
            rho,
            g_at_restart: g0,
            u_at_threshold,
            max_u,
            min_excess,
            tol,
            passed,
        })
    }
}

/// Optimal threshold against a fixed interaction level `z`: the basic
/// problem with effective cost `K / phi(z)`, value scaled by `phi(z)`.
pub fn best_response(solver: &ImpulseSolver, z: f64, payoff: &PayoffSpec) -> Result<ThresholdSolution> {
    let price = payoff.phi.eval(z);
    if !(price > 0.0 && price.is_finite()) {
        return Err(Error::domain(format!("price phi({z}) = {price} must be positive")));
    }
    let mut sol = solver.optimal_threshold_basic(payoff.cost / price)?;
    sol.value *= price;
    Ok(sol)
}

/// Best responses at both ends of the interaction domain, in ascending order.
pub fn critical_bounds(solver: &ImpulseSolver, payoff: &PayoffSpec, domain: (f64, f64)) -> Result<(f64, f64)> {
    let a = best_response(solver, domain.0, payoff)?.threshold;
    let b = best_response(solver, domain.1, payoff)?.threshold;
    Ok((a.min(b), a.max(b)))
}
