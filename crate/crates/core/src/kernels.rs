//! Spacelike two-point kernels `f(z)` with metric (+,-,-,-).

use serde::{Deserialize, Serialize};

/// Which two-point kernel weights multi-point expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    /// `u(-z^2)`.
    Step,
    /// `u(-z^2) / (2|z|)`.
    #[serde(rename = "invdist", alias = "inverse_distance")]
    InverseDistance,
    /// `u(-z^2) / (pi sqrt(-z^2))`.
    #[default]
    Covariant,
}

impl KernelChoice {
    pub const ALL: [KernelChoice; 3] = [Self::Step, Self::InverseDistance, Self::Covariant];

    pub fn name(self) -> &'static str {
        match self {
            Self::Step => "step",
            Self::InverseDistance => "invdist",
            Self::Covariant => "covariant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "step" => Some(Self::Step),
            "invdist" | "inverse_distance" => Some(Self::InverseDistance),
            "covariant" => Some(Self::Covariant),
            _ => None,
        }
    }
}

/// `z^mu z_mu`.
#[inline]
pub fn interval(z: [f64; 4]) -> f64 {
    z[0] * z[0] - z[1] * z[1] - z[2] * z[2] - z[3] * z[3]
}

/// Kernel value at separation `z`. Zero unless `z` is strictly spacelike;
/// the lightlike boundary (to relative round-off) is assigned zero.
pub fn kernel_f2(z: [f64; 4], choice: KernelChoice) -> f64 {
    let s = -interval(z);
    let scale = z.iter().map(|c| c * c).sum::<f64>();
    if s <= 1e-12 * scale {
        return 0.0;
    }
    match choice {
        KernelChoice::Step => 1.0,
        KernelChoice::InverseDistance => {
            let r = (z[1] * z[1] + z[2] * z[2] + z[3] * z[3]).sqrt();
            1.0 / (2.0 * r)
        }
        KernelChoice::Covariant => 1.0 / (std::f64::consts::PI * s.sqrt()),
    }
}

/// `int dz0 f(z0, r, 0, 0)` over the spacelike window `(-r, r)`, by
/// double-exponential quadrature (robust to the covariant kernel's
/// inverse-square-root endpoint singularities).
pub fn kernel_time_integral(choice: KernelChoice, r: f64, tol: f64) -> f64 {
    quadrature::double_exponential::integrate(|z0| kernel_f2([z0, r, 0.0, 0.0], choice), -r, r, tol)
        .integral
}
