//! Gamma matrices, minimal coupling and the lattice Dirac operator.
//!
//! Conventions: natural units, metric signature (+,-,-,-), potentials stored
//! with upper indices `A^mu = (Phi, A_x, A_y, A_z)`. Only the x axis is
//! resolved on the lattice; derivatives along y and z vanish but all four
//! spinor components and all four gamma matrices are kept.
//!
//! The Dirac operator is `D = slash(pi)/m - 1`, which on the lattice is
//! evaluated through the equivalent form `D psi = gamma^0 (i d_t psi - H psi) / m`
//! with `H = gamma^0 (gamma . pi + m) + e A^0`.

use nalgebra::{DMatrix, Matrix4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SliceOperator, SpacetimeGrid, Spinor, SpinorField, SpinorSlice, C64};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Minkowski metric diagonal.
pub const METRIC: [f64; 4] = [1.0, -1.0, -1.0, -1.0];

/// The four Dirac matrices in the standard (Dirac) representation.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSet {
    pub gamma: [Matrix4<C64>; 4],
}

impl GammaSet {
    pub fn gamma0(&self) -> &Matrix4<C64> {
        &self.gamma[0]
    }

    /// `{gamma^mu, gamma^nu}`
    pub fn anticommutator(&self, mu: usize, nu: usize) -> Matrix4<C64> {
        self.gamma[mu] * self.gamma[nu] + self.gamma[nu] * self.gamma[mu]
    }

    /// `gamma^0 gamma^i`, the Dirac alpha matrices.
    pub fn alpha(&self, i: usize) -> Matrix4<C64> {
        self.gamma[0] * self.gamma[i]
    }
}

fn pauli(i: usize) -> [[C64; 2]; 2] {
    match i {
        1 => [[ZERO, ONE], [ONE, ZERO]],
        2 => [[ZERO, -I], [I, ZERO]],
        3 => [[ONE, ZERO], [ZERO, -ONE]],
        _ => panic!("pauli index must be 1..=3"),
    }
}

/// `gamma^0 = diag(1, 1, -1, -1)`, `gamma^i = [[0, sigma_i], [-sigma_i, 0]]`.
pub fn build_gamma_set() -> GammaSet {
    let mut gamma = [Matrix4::<C64>::zeros(); 4];
    gamma[0] = Matrix4::from_diagonal(&nalgebra::Vector4::new(ONE, ONE, -ONE, -ONE));
    for (i, g) in gamma.iter_mut().enumerate().skip(1) {
        let s = pauli(i);
        for r in 0..2 {
            for c in 0..2 {
                g[(r, c + 2)] = s[r][c];
                g[(r + 2, c)] = -s[r][c];
            }
        }
    }
    GammaSet { gamma }
}

/// Spin along x, `diag(sigma_1, sigma_1)`. Commutes with the 1D Dirac Hamiltonian.
pub fn spin_x() -> Matrix4<C64> {
    let s = pauli(1);
    let mut m = Matrix4::zeros();
    for r in 0..2 {
        for c in 0..2 {
            m[(r, c)] = s[r][c];
            m[(r + 2, c + 2)] = s[r][c];
        }
    }
    m
}

/// Antiunitary time-reversal matrix `T = i gamma^1 gamma^3`; the reversed
/// field is `T psi*(-t)`.
pub fn time_reversal_matrix() -> Matrix4<C64> {
    let g = build_gamma_set();
    g.gamma[1] * g.gamma[3] * I
}

/// Particle mass; sets the zitterbewegung scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mass(f64);

impl Mass {
    pub fn new(m: f64) -> Result<Self> {
        if m > 0.0 && m.is_finite() {
            Ok(Self(m))
        } else {
            Err(Error::InvalidParameter {
                name: "mass",
                reason: format!("must be positive and finite, got {m}"),
            })
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Electromagnetic four-potential `A^mu` on every lattice site plus the charge.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub charge: f64,
    pub n_t: usize,
    pub n_x: usize,
    pub values: Vec<[f64; 4]>,
}

impl Potential {
    pub fn zero(grid: &SpacetimeGrid, charge: f64) -> Self {
        Self {
            charge,
            n_t: grid.n_t,
            n_x: grid.n_x,
            values: vec![[0.0; 4]; grid.len()],
        }
    }

    pub fn from_fn(
        grid: &SpacetimeGrid,
        charge: f64,
        mut f: impl FnMut(usize, usize) -> [f64; 4],
    ) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for t in 0..grid.n_t {
            for x in 0..grid.n_x {
                values.push(f(t, x));
            }
        }
        Self {
            charge,
            n_t: grid.n_t,
            n_x: grid.n_x,
            values,
        }
    }

    pub fn check_grid(&self, grid: &SpacetimeGrid) -> Result<()> {
        if self.n_t != grid.n_t || self.n_x != grid.n_x || self.values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "potential is {}x{}, grid is {}x{}",
                self.n_t, self.n_x, grid.n_t, grid.n_x
            )));
        }
        Ok(())
    }

    /// Potential values on slice `t`.
    pub fn slice(&self, t: usize) -> &[[f64; 4]] {
        &self.values[t * self.n_x..(t + 1) * self.n_x]
    }

    #[inline]
    pub fn at(&self, t: usize, x: usize) -> [f64; 4] {
        self.values[t * self.n_x + x]
    }

    /// Largest change between neighbouring sites relative to the potential
    /// scale (max |A| over the grid, floored at `floor`).
    pub fn max_relative_step(&self, floor: f64) -> f64 {
        let scale = self
            .values
            .iter()
            .flat_map(|a| a.iter().map(|v| v.abs()))
            .fold(floor, f64::max);
        let mut worst = 0.0f64;
        for t in 0..self.n_t {
            for x in 0..self.n_x {
                let a = self.at(t, x);
                if x + 1 < self.n_x {
                    let b = self.at(t, x + 1);
                    worst = worst.max(max_abs_diff(&a, &b));
                }
                if t + 1 < self.n_t {
                    let b = self.at(t + 1, x);
                    worst = worst.max(max_abs_diff(&a, &b));
                }
            }
        }
        worst / scale
    }

    /// Errors if the smoothness proxy exceeds `bound`.
    pub fn check_smoothness(&self, bound: f64, floor: f64) -> Result<f64> {
        let step = self.max_relative_step(floor);
        if step > bound {
            return Err(Error::InvalidParameter {
                name: "potential",
                reason: format!(
                    "relative site-to-site change {step:.3e} exceeds bound {bound:.3e}"
                ),
            });
        }
        Ok(step)
    }
}

fn max_abs_diff(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Site-local part of `H`: `m gamma^0 + e A^0 - e A^i gamma^0 gamma^i`.
fn local_hamiltonian(g: &GammaSet, a: &[f64; 4], charge: f64, m: f64) -> Matrix4<C64> {
    let mut h = g.gamma[0] * C64::new(m, 0.0) + Matrix4::identity() * C64::new(charge * a[0], 0.0);
    for i in 1..4 {
        if a[i] != 0.0 {
            h -= g.alpha(i) * C64::new(charge * a[i], 0.0);
        }
    }
    h
}

/// Sparse block operator on the lattice: every output site is a sum of 4x4
/// blocks applied to a few input sites. Stores both the rows and the
/// conjugate-transposed rows so that the operator and its adjoint (with
/// respect to the plain site sum) are both gathers.
#[derive(Debug, Clone)]
pub struct BlockOperator {
    n_sites: usize,
    row_start: Vec<usize>,
    entries: Vec<(usize, Matrix4<C64>)>,
    adj_start: Vec<usize>,
    adj_entries: Vec<(usize, Matrix4<C64>)>,
}

impl BlockOperator {
    fn from_rows(rows: Vec<Vec<(usize, Matrix4<C64>)>>) -> Self {
        let n_sites = rows.len();
        let mut adj_rows: Vec<Vec<(usize, Matrix4<C64>)>> = vec![Vec::new(); n_sites];
        for (out, row) in rows.iter().enumerate() {
            for (inp, m) in row {
                adj_rows[*inp].push((out, m.adjoint()));
            }
        }
        let (row_start, entries) = flatten(rows);
        let (adj_start, adj_entries) = flatten(adj_rows);
        Self {
            n_sites,
            row_start,
            entries,
            adj_start,
            adj_entries,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn apply(&self, input: &[Spinor]) -> Vec<Spinor> {
        gather(&self.row_start, &self.entries, input)
    }

    pub fn apply_adjoint(&self, input: &[Spinor]) -> Vec<Spinor> {
        gather(&self.adj_start, &self.adj_entries, input)
    }

    /// Dense matrix (`4 n` square); only sensible for small operators.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.n_sites;
        let mut m = DMatrix::zeros(4 * n, 4 * n);
        for out in 0..n {
            for (inp, b) in &self.entries[self.row_start[out]..self.row_start[out + 1]] {
                for r in 0..4 {
                    for c in 0..4 {
                        m[(4 * out + r, 4 * inp + c)] += b[(r, c)];
                    }
                }
            }
        }
        m
    }
}

fn flatten(rows: Vec<Vec<(usize, Matrix4<C64>)>>) -> (Vec<usize>, Vec<(usize, Matrix4<C64>)>) {
    let mut start = Vec::with_capacity(rows.len() + 1);
    let mut entries = Vec::new();
    start.push(0);
    for row in rows {
        entries.extend(row);
        start.push(entries.len());
    }
    (start, entries)
}

fn gather(start: &[usize], entries: &[(usize, Matrix4<C64>)], input: &[Spinor]) -> Vec<Spinor> {
    (0..start.len() - 1)
        .into_par_iter()
        .map(|out| {
            let mut acc = Spinor::zeros();
            for (inp, m) in &entries[start[out]..start[out + 1]] {
                acc += m * input[*inp];
            }
            acc
        })
        .collect()
}

/// Discrete `H` on one slice given that slice's potential values.
pub fn slice_hamiltonian(
    grid: &SpacetimeGrid,
    pot_slice: &[[f64; 4]],
    charge: f64,
    mass: Mass,
) -> Result<BlockOperator> {
    if grid.n_x < 3 {
        return Err(Error::StencilTooSmall {
            axis: "space",
            len: grid.n_x,
        });
    }
    if pot_slice.len() != grid.n_x {
        return Err(Error::GridMismatch(format!(
            "potential slice has {} sites, grid has {}",
            pot_slice.len(),
            grid.n_x
        )));
    }
    let g = build_gamma_set();
    let kinetic = g.alpha(1) * (-I);
    let rows = (0..grid.n_x)
        .map(|x| {
            let mut row = Vec::with_capacity(3);
            for (xs, w) in grid.space_stencil(x) {
                row.push((xs, kinetic * C64::new(w, 0.0)));
            }
            row.push((
                x,
                local_hamiltonian(&g, &pot_slice[x], charge, mass.value()),
            ));
            row
        })
        .collect();
    Ok(BlockOperator::from_rows(rows))
}

/// `H psi` on a fixed-time slice.
pub fn apply_hamiltonian(slice: &SpinorSlice, pot: &Potential, mass: Mass) -> Result<SpinorSlice> {
    pot.check_grid(&slice.grid)?;
    let h = slice_hamiltonian(&slice.grid, pot.slice(slice.t_index), pot.charge, mass)?;
    Ok(SpinorSlice {
        grid: slice.grid,
        t_index: slice.t_index,
        values: h.apply(&slice.values),
    })
}

/// Dense `4 n_x` square Hamiltonian for slice `t`.
pub fn hamiltonian_matrix(
    grid: &SpacetimeGrid,
    pot: &Potential,
    mass: Mass,
    t: usize,
) -> Result<DMatrix<C64>> {
    pot.check_grid(grid)?;
    Ok(slice_hamiltonian(grid, pot.slice(t), pot.charge, mass)?.to_dense())
}

/// Slice Hamiltonian bound to a potential, usable as a [`SliceOperator`].
pub struct SliceHamiltonian<'a> {
    pub pot: &'a Potential,
    pub mass: Mass,
}

impl SliceOperator for SliceHamiltonian<'_> {
    fn apply(&self, slice: &SpinorSlice) -> Result<SpinorSlice> {
        apply_hamiltonian(slice, self.pot, self.mass)
    }
}

/// The lattice Dirac operator `D = slash(pi)/m - 1` on a full field.
#[derive(Debug, Clone)]
pub struct DiracOperator {
    pub grid: SpacetimeGrid,
    pub mass: Mass,
    op: BlockOperator,
}

impl DiracOperator {
    pub fn new(grid: &SpacetimeGrid, pot: &Potential, mass: Mass) -> Result<Self> {
        grid.require_stencil()?;
        pot.check_grid(grid)?;
        let g = build_gamma_set();
        let m = mass.value();
        let inv_m = 1.0 / m;
        // D psi = gamma^0 (i d_t psi - H psi)/m, and -gamma^0 (-i alpha^1 w) = i gamma^1 w.
        let time_block = g.gamma[0] * C64::new(0.0, inv_m);
        let space_block = g.gamma[1] * C64::new(0.0, inv_m);
        let mut rows = Vec::with_capacity(grid.len());
        for t in 0..grid.n_t {
            let ts = grid.time_stencil(t);
            for x in 0..grid.n_x {
                let mut row = Vec::with_capacity(5);
                for (tt, w) in ts {
                    row.push((grid.index(tt, x), time_block * C64::new(w, 0.0)));
                }
                for (xs, w) in grid.space_stencil(x) {
                    row.push((grid.index(t, xs), space_block * C64::new(w, 0.0)));
                }
                let local = -(g.gamma[0] * local_hamiltonian(&g, &pot.at(t, x), pot.charge, m))
                    * C64::new(inv_m, 0.0);
                row.push((grid.index(t, x), local));
                rows.push(row);
            }
        }
        Ok(Self {
            grid: *grid,
            mass,
            op: BlockOperator::from_rows(rows),
        })
    }

    pub fn apply(&self, psi: &SpinorField) -> Result<SpinorField> {
        crate::grid::check_same_grid(&self.grid, &psi.grid)?;
        Ok(SpinorField {
            grid: psi.grid,
            values: self.op.apply(&psi.values),
        })
    }

    /// Adjoint with respect to the plain site sum `sum_s u_s^dagger v_s`.
    pub fn apply_adjoint(&self, psi: &SpinorField) -> Result<SpinorField> {
        crate::grid::check_same_grid(&self.grid, &psi.grid)?;
        Ok(SpinorField {
            grid: psi.grid,
            values: self.op.apply_adjoint(&psi.values),
        })
    }
}

/// `(slash(pi)/m - 1) psi` site by site.
pub fn apply_dirac(field: &SpinorField, pot: &Potential, mass: Mass) -> Result<SpinorField> {
    DiracOperator::new(&field.grid, pot, mass)?.apply(field)
}
