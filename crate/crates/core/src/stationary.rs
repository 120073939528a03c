//! Stationary distributions of the uncontrolled, the reflected and the
//! threshold-controlled process.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::hitting::XiEvaluator;
use crate::numerics::quad::integrate_running;
use crate::numerics::roots::log_space;

/// Thresholds closer than this to `y0` are refused.
pub const MIN_GAP: f64 = 1e-6;
/// Default number of rows in exported density tables.
pub const TABLE_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityKind {
    Uncontrolled,
    /// Reflected downwards at `y0`.
    Reflected,
    /// Restarted at `y0` whenever `threshold` is reached.
    Controlled { threshold: f64 },
}

#[derive(Debug, Clone)]
pub struct StationaryDensity {
    kind: DensityKind,
    kappa: f64,
    upper: f64,
    /// `S[y0, y]` for the controlled kind.
    scale_span: f64,
    ev: XiEvaluator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityRow {
    pub x: f64,
    pub pdf: f64,
    pub cdf: f64,
}

impl StationaryDensity {
    /// `kappa m(x) S[x, y]` on `[y0, y]`, `kappa m(x) S[y0, y]` below `y0`,
    /// zero above `y`. The normalising constant is `1 / xi(y)`.
    pub fn controlled(ev: &XiEvaluator, y: f64) -> Result<Self> {
        let y0 = ev.y0();
        if !(y > y0 + MIN_GAP) {
            return Err(Error::domain(format!(
                "controlled density needs a threshold above y0 = {y0}, got {y}"
            )));
        }
        Ok(Self {
            kind: DensityKind::Controlled { threshold: y },
            kappa: 1.0 / ev.xi(y)?,
            upper: y,
            scale_span: ev.model().scale_difference(y0, y)?,
            ev: ev.clone(),
        })
    }

    /// Speed density restricted to `(0, y0]`.
    pub fn reflected(ev: &XiEvaluator) -> Result<Self> {
        let mass = ev.model().speed_below(ev.y0())?;
        Ok(Self {
            kind: DensityKind::Reflected,
            kappa: 1.0 / mass,
            upper: ev.y0(),
            scale_span: 0.0,
            ev: ev.clone(),
        })
    }

    pub fn uncontrolled(ev: &XiEvaluator) -> Result<Self> {
        let mass = ev
            .model()
            .speed_measure(0.0, f64::INFINITY)
            .map_err(|e| Error::domain(format!("no stationary distribution: {e}")))?;
        Ok(Self {
            kind: DensityKind::Uncontrolled,
            kappa: 1.0 / mass,
            upper: f64::INFINITY,
            scale_span: 0.0,
            ev: ev.clone(),
        })
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Right end of the support.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    fn model(&self) -> &DiffusionModel {
        self.ev.model()
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::domain(format!("density argument {x} must be positive")));
        }
        if x > self.upper {
            return Ok(0.0);
        }
        let m = self.model().speed_density(x)?;
        let y0 = self.ev.y0();
        Ok(match self.kind {
            DensityKind::Controlled { threshold } if x > y0 => {
                self.kappa * m * self.model().scale_difference(x, threshold)?
            }
            DensityKind::Controlled { .. } => self.kappa * m * self.scale_span,
            _ => self.kappa * m,
        })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::domain(format!("distribution argument {x} must be positive")));
        }
        if x >= self.upper {
            return Ok(1.0);
        }
        let model = self.model();
        let y0 = self.ev.y0();
        match self.kind {
            DensityKind::Controlled { threshold } if x > y0 => {
                // mass above x is ∫_x^y m(w) S[w, y] dw = ∫_x^y s(v) M[x, v] dv
                let above = integrate_running(|v| model.s(v), |w| model.m(w), x, threshold, 0.0, model.tolerance())?;
                Ok(1.0 - self.kappa * above.value)
            }
            DensityKind::Controlled { .. } => Ok(self.kappa * self.scale_span * model.speed_below(x)?),
            _ => Ok(self.kappa * model.speed_below(x)?),
        }
    }

    pub fn mean(&self) -> Result<f64> {
        match self.kind {
            DensityKind::Controlled { threshold } => {
                Ok(self.kappa * self.ev.expected_running_cost(|u| u, self.ev.y0(), threshold)?)
            }
            DensityKind::Reflected => Ok(self.kappa * self.model().speed_integral(|u| u, 0.0, self.ev.y0())?),
            DensityKind::Uncontrolled => {
                let model = self.model();
                let a = model.reference();
                let below = model.speed_integral(|u| u, 0.0, a)?;
                let tail = crate::numerics::quad::integrate_to_infinity(|u| u * model.m(u), a, model.tolerance())?;
                Ok(self.kappa * (below + tail.value))
            }
        }
    }

    /// `n` log-spaced rows on `(1e-3 y0, upper)`; the uncontrolled kind is
    /// cut at `100 y0`.
    pub fn table(&self, n: usize) -> Result<Vec<DensityRow>> {
        let y0 = self.ev.y0();
        let hi = if self.upper.is_finite() { self.upper } else { 100.0 * y0 };
        log_space(1e-3 * y0, hi, n.max(2))
            .into_iter()
            .map(|x| {
                Ok(DensityRow {
                    x,
                    pdf: self.pdf(x)?,
                    cdf: self.cdf(x)?,
                })
            })
            .collect()
    }
}

/// Mean of the controlled stationary distribution, `E[X_inf]` under `R(y)`.
pub fn expected_stock(ev: &XiEvaluator, y: f64) -> Result<f64> {
    StationaryDensity::controlled(ev, y)?.mean()
}

/// `z1`, the stationary mean of the diffusion reflected downwards at `y0`.
pub fn reflected_mean(ev: &XiEvaluator) -> Result<f64> {
    StationaryDensity::reflected(ev)?.mean()
}

/// `z2`, the stationary mean of the uncontrolled diffusion.
pub fn uncontrolled_mean(ev: &XiEvaluator) -> Result<f64> {
    StationaryDensity::uncontrolled(ev)?.mean()
}

/// `(z1, z2)`, the range of every controlled stationary mean.
pub fn stock_bounds(ev: &XiEvaluator) -> Result<(f64, f64)> {
    Ok((reflected_mean(ev)?, uncontrolled_mean(ev)?))
}

pub fn write_density_csv<W: Write>(rows: &[DensityRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "x,pdf,cdf")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.x, r.pdf, r.cdf)?;
    }
    Ok(())
}
