//! Quadrature, root finding and cached antiderivatives.

pub mod quad;
pub mod roots;
pub mod table;
