//! Two distinguishable spin-1/2 particles, each with its own time and space
//! coordinate on a copy of the single-particle lattice.
//!
//! Amplitudes are 4x4 complex matrices `M[(alpha, beta)]` (particle a's
//! spinor index down the rows, b's across the columns) at every
//! configuration `(t_a, x_a, t_b, x_b)`. An operator `O_a (x) O_b` acts as
//! `O_a M O_b^T`.

use nalgebra::Matrix4;
use serde::Serialize;

use crate::dirac::{DiracOperator, Mass, Potential};
use crate::error::{Error, Result};
use crate::grid::{check_same_grid, SpacetimeGrid, Spinor, SpinorField, C64};

pub type PairAmplitude = Matrix4<C64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoParticleField {
    pub grid: SpacetimeGrid,
    /// Index `site_a * grid.len() + site_b`, sites as in [`SpacetimeGrid::index`].
    pub values: Vec<PairAmplitude>,
}

/// Always reported with two-particle output.
pub const TIME_REPRESENTATION: &str = "independent time coordinate per particle";

impl TwoParticleField {
    pub fn zeros(grid: SpacetimeGrid) -> Self {
        Self {
            grid,
            values: vec![PairAmplitude::zeros(); grid.len() * grid.len()],
        }
    }

    pub fn from_fn(grid: SpacetimeGrid, mut f: impl FnMut(usize, usize) -> PairAmplitude) -> Self {
        let n = grid.len();
        let mut values = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                values.push(f(a, b));
            }
        }
        Self { grid, values }
    }

    /// `psi_a (x) psi_b`.
    pub fn product(a: &SpinorField, b: &SpinorField) -> Result<Self> {
        check_same_grid(&a.grid, &b.grid)?;
        Ok(Self::from_fn(a.grid, |sa, sb| {
            a.values[sa] * b.values[sb].transpose()
        }))
    }

    pub fn at(&self, site_a: usize, site_b: usize) -> &PairAmplitude {
        &self.values[site_a * self.grid.len() + site_b]
    }

    pub fn add_scaled(&mut self, alpha: C64, other: &TwoParticleField) -> Result<()> {
        check_same_grid(&self.grid, &other.grid)?;
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += o * alpha;
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }

    /// `sum |M|^2 (dt dx)^2`.
    pub fn norm(&self) -> Result<f64> {
        let n = plain_norm(&self.values) * self.grid.cell() * self.grid.cell();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(n)
    }

    /// Particle a's single-particle field at fixed `(site_b, beta)`.
    fn column_a(&self, site_b: usize, beta: usize) -> SpinorField {
        let n = self.grid.len();
        SpinorField {
            grid: self.grid,
            values: (0..n)
                .map(|sa| self.at(sa, site_b).column(beta).into_owned())
                .collect(),
        }
    }

    /// Particle b's single-particle field at fixed `(site_a, alpha)`.
    fn row_b(&self, site_a: usize, alpha: usize) -> SpinorField {
        let n = self.grid.len();
        SpinorField {
            grid: self.grid,
            values: (0..n)
                .map(|sb| self.at(site_a, sb).row(alpha).transpose())
                .collect(),
        }
    }
}

fn plain_norm(values: &[PairAmplitude]) -> f64 {
    values.iter().map(|m| m.norm_squared()).sum()
}

/// `O_a (x) O_b`, sitewise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOperator {
    pub on_a: Matrix4<C64>,
    pub on_b: Matrix4<C64>,
}

impl PairOperator {
    pub fn identity() -> Self {
        Self {
            on_a: Matrix4::identity(),
            on_b: Matrix4::identity(),
        }
    }

    pub fn on_a(op: Matrix4<C64>) -> Self {
        Self {
            on_a: op,
            on_b: Matrix4::identity(),
        }
    }

    pub fn on_b(op: Matrix4<C64>) -> Self {
        Self {
            on_a: Matrix4::identity(),
            on_b: op,
        }
    }

    fn apply(&self, m: &PairAmplitude) -> PairAmplitude {
        self.on_a * m * self.on_b.transpose()
    }
}

/// Configuration-space ratio `sum psi^dagger O psi / sum psi^dagger psi`.
pub fn expect_1_nparticle(op: &PairOperator, psi: &TwoParticleField) -> Result<C64> {
    let den = psi.norm()?;
    let num: C64 = psi
        .values
        .iter()
        .map(|m| {
            let o = op.apply(m);
            m.iter()
                .zip(o.iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
        })
        .sum();
    Ok(num * psi.grid.cell() * psi.grid.cell() / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoParticleA1 {
    pub a: f64,
    pub b: f64,
    pub total: f64,
}

/// `<<D_a^dagger D_a>> + <<D_b^dagger D_b>>`, each Dirac operator acting on
/// its own particle's coordinates and spinor slot.
pub fn a1_nparticle(
    psi: &TwoParticleField,
    pot_a: &Potential,
    pot_b: &Potential,
    mass: Mass,
) -> Result<TwoParticleA1> {
    let g = psi.grid;
    let den = plain_norm(&psi.values);
    if den == 0.0 || !den.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let da = DiracOperator::new(&g, pot_a, mass)?;
    let db = DiracOperator::new(&g, pot_b, mass)?;
    let sum_sq = |f: &SpinorField| f.values.iter().map(Spinor::norm_squared).sum::<f64>();
    let mut num_a = 0.0;
    let mut num_b = 0.0;
    for site in 0..g.len() {
        for c in 0..4 {
            num_a += sum_sq(&da.apply(&psi.column_a(site, c))?);
            num_b += sum_sq(&db.apply(&psi.row_b(site, c))?);
        }
    }
    let (a, b) = (num_a / den, num_b / den);
    Ok(TwoParticleA1 { a, b, total: a + b })
}

/// Swaps the particle labels: `M'(s_a, s_b) = M(s_b, s_a)^T`.
pub fn swap_particles(psi: &TwoParticleField) -> TwoParticleField {
    TwoParticleField::from_fn(psi.grid, |a, b| psi.at(b, a).transpose())
}
