use serde::{Deserialize, Serialize};

/// Tolerances, grid sizes and seeds shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NumericsConfig {
    /// Absolute tolerance of adaptive quadrature.
    pub quad_abs_tol: f64,
    /// Relative tolerance of adaptive quadrature.
    pub quad_rel_tol: f64,
    /// Relative residual accepted on the first-order condition, `|F| < tol * xi(y)`.
    pub root_rel_tol: f64,
    /// Bracket width accepted by threshold root finding, relative to the threshold.
    pub root_width_rel: f64,
    /// Absolute tolerance on `Phi(y) - y` for fixed points.
    pub fixed_point_tol: f64,
    /// Bisection cap for fixed points.
    pub fixed_point_max_iter: usize,
    /// Points in the equilibrium scan and in the coarse control grid.
    pub scan_points: usize,
    /// Grid points used by the stopping-value check.
    pub stopping_grid: usize,
    /// Tolerance of the ordering comparisons.
    pub compare_tol: f64,
    /// Master seed for anything random.
    pub seed: u64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            quad_abs_tol: 1e-10,
            quad_rel_tol: 1e-9,
            root_rel_tol: 1e-10,
            root_width_rel: 1e-9,
            fixed_point_tol: 1e-8,
            fixed_point_max_iter: 200,
            scan_points: 500,
            stopping_grid: 400,
            compare_tol: 1e-6,
            seed: 0x5eed_f00d,
        }
    }
}

impl NumericsConfig {
    pub(crate) fn quad(&self) -> crate::numerics::quad::Tolerance {
        crate::numerics::quad::Tolerance {
            abs: self.quad_abs_tol,
            rel: self.quad_rel_tol,
        }
    }
}
