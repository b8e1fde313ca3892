//! Spacetime lattice, spinor storage and the lattice quadratures used by every
//! expectation value.
//!
//! Fields live on an `n_t x n_x` lattice in natural units (the particle mass
//! sets the length and time scale). Values are stored row-major with the time
//! index outermost. All reductions run in that fixed order so repeated
//! evaluations are bit-identical.
//!
//! Quadrature is a plain Riemann sum with spacing weights: `dx` for a
//! fixed-time slice and `dt * dx` for the full region.

use nalgebra::Vector4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Spinor = Vector4<C64>;

/// Treatment of the spatial edges of the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpatialBoundary {
    /// Wrap-around neighbours; the discrete Hamiltonian is Hermitian.
    #[default]
    Periodic,
    /// One-sided first-order differences at the two edges.
    Open,
}

/// A two-point finite-difference stencil: `sum_k weight_k * f(index_k)`.
pub type Stencil = [(usize, f64); 2];

/// Bounded `(t, x)` lattice defining the experiment region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeGrid {
    pub n_t: usize,
    pub n_x: usize,
    pub dt: f64,
    pub dx: f64,
    /// Lab time of the first slice.
    pub origin_t: f64,
    #[serde(default)]
    pub boundary: SpatialBoundary,
}

impl SpacetimeGrid {
    pub fn new(n_t: usize, n_x: usize, dt: f64, dx: f64) -> Result<Self> {
        let grid = Self {
            n_t,
            n_x,
            dt,
            dx,
            origin_t: 0.0,
            boundary: SpatialBoundary::Periodic,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn with_origin(mut self, origin_t: f64) -> Self {
        self.origin_t = origin_t;
        self
    }

    pub fn with_boundary(mut self, boundary: SpatialBoundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_x == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {}x{}",
                self.n_t, self.n_x
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite() && self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacings must be positive and finite, got dt={} dx={}",
                self.dt, self.dx
            )));
        }
        if !self.origin_t.is_finite() {
            return Err(Error::InvalidGrid("origin_t must be finite".into()));
        }
        Ok(())
    }

    /// Errors unless both axes can carry the three-point-wide stencils.
    pub fn require_stencil(&self) -> Result<()> {
        if self.n_t < 3 {
            return Err(Error::StencilTooSmall {
                axis: "time",
                len: self.n_t,
            });
        }
        if self.n_x < 3 {
            return Err(Error::StencilTooSmall {
                axis: "space",
                len: self.n_x,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_t * self.n_x
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, x: usize) -> usize {
        t * self.n_x + x
    }

    #[inline]
    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site / self.n_x, site % self.n_x)
    }

    /// Lab time of slice `t`.
    #[inline]
    pub fn time(&self, t: usize) -> f64 {
        self.origin_t + t as f64 * self.dt
    }

    #[inline]
    pub fn position(&self, x: usize) -> f64 {
        x as f64 * self.dx
    }

    /// Spatial distance between columns `a` and `b` (minimum image when periodic).
    pub fn separation(&self, a: usize, b: usize) -> f64 {
        self.separation_steps(a, b) as f64 * self.dx
    }

    /// [`Self::separation`] in units of `dx`.
    pub fn separation_steps(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b);
        match self.boundary {
            SpatialBoundary::Periodic => d.min(self.n_x - d),
            SpatialBoundary::Open => d,
        }
    }

    /// Signed displacement `x_a - x_b` (minimum image when periodic).
    pub fn displacement(&self, a: usize, b: usize) -> f64 {
        let mut d = a as isize - b as isize;
        if self.boundary == SpatialBoundary::Periodic {
            let n = self.n_x as isize;
            if d > n / 2 {
                d -= n;
            } else if d < -(n / 2) {
                d += n;
            }
        }
        d as f64 * self.dx
    }

    pub fn length(&self) -> f64 {
        self.n_x as f64 * self.dx
    }

    pub fn duration(&self) -> f64 {
        self.n_t as f64 * self.dt
    }

    /// Cell volume `dt * dx`.
    #[inline]
    pub fn cell(&self) -> f64 {
        self.dt * self.dx
    }

    /// First-derivative stencil along time for slice `t`: centered in the
    /// interior, one-sided first order on the first and last slice.
    pub fn time_stencil(&self, t: usize) -> Stencil {
        let n = self.n_t;
        if t == 0 {
            [(1, 1.0 / self.dt), (0, -1.0 / self.dt)]
        } else if t + 1 == n {
            [(n - 1, 1.0 / self.dt), (n - 2, -1.0 / self.dt)]
        } else {
            [(t + 1, 0.5 / self.dt), (t - 1, -0.5 / self.dt)]
        }
    }

    /// First-derivative stencil along x for column `x`.
    pub fn space_stencil(&self, x: usize) -> Stencil {
        let n = self.n_x;
        match self.boundary {
            SpatialBoundary::Periodic => [
                ((x + 1) % n, 0.5 / self.dx),
                ((x + n - 1) % n, -0.5 / self.dx),
            ],
            SpatialBoundary::Open => {
                if x == 0 {
                    [(1, 1.0 / self.dx), (0, -1.0 / self.dx)]
                } else if x + 1 == n {
                    [(n - 1, 1.0 / self.dx), (n - 2, -1.0 / self.dx)]
                } else {
                    [(x + 1, 0.5 / self.dx), (x - 1, -0.5 / self.dx)]
                }
            }
        }
    }

    pub fn same_shape(&self, other: &SpacetimeGrid) -> bool {
        self.n_t == other.n_t
            && self.n_x == other.n_x
            && self.dt == other.dt
            && self.dx == other.dx
            && self.boundary == other.boundary
    }

    /// Human-readable description of the discretization, recorded in output metadata.
    pub fn discretization_note(&self) -> String {
        format!(
            "time: centered 2nd-order interior, one-sided 1st-order at first/last slice; \
             space: {}; quadrature: Riemann sum with weights dt*dx (4D) and dx (3D)",
            match self.boundary {
                SpatialBoundary::Periodic => "centered 2nd-order, periodic",
                SpatialBoundary::Open =>
                    "centered 2nd-order interior, one-sided 1st-order at edges",
            }
        )
    }
}

/// Four-component amplitude on every lattice site.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub grid: SpacetimeGrid,
    pub values: Vec<Spinor>,
}

impl SpinorField {
    pub fn zeros(grid: SpacetimeGrid) -> Self {
        Self {
            grid,
            values: vec![Spinor::zeros(); grid.len()],
        }
    }

    pub fn from_fn(grid: SpacetimeGrid, mut f: impl FnMut(usize, usize) -> Spinor) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for t in 0..grid.n_t {
            for x in 0..grid.n_x {
                values.push(f(t, x));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: SpacetimeGrid, values: Vec<Spinor>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} sites",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn at(&self, t: usize, x: usize) -> &Spinor {
        &self.values[self.grid.index(t, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, x: usize) -> &mut Spinor {
        let i = self.grid.index(t, x);
        &mut self.values[i]
    }

    pub fn slice(&self, t: usize) -> SpinorSlice {
        let start = self.grid.index(t, 0);
        SpinorSlice {
            grid: self.grid,
            t_index: t,
            values: self.values[start..start + self.grid.n_x].to_vec(),
        }
    }

    pub fn set_slice(&mut self, slice: &SpinorSlice) -> Result<()> {
        if slice.values.len() != self.grid.n_x || slice.t_index >= self.grid.n_t {
            return Err(Error::GridMismatch(format!(
                "slice of length {} at t={} does not fit a {}x{} grid",
                slice.values.len(),
                slice.t_index,
                self.grid.n_t,
                self.grid.n_x
            )));
        }
        let start = self.grid.index(slice.t_index, 0);
        self.values[start..start + self.grid.n_x].copy_from_slice(&slice.values);
        Ok(())
    }

    pub fn scale(&mut self, alpha: C64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: C64, other: &SpinorField) -> Result<Self> {
        check_same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b * alpha)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("spinor field"))
        }
    }

    /// Probability density `psi^dagger psi` per site.
    pub fn densities(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_squared()).collect()
    }

    /// Per-slice 3D norms `<psi|psi>_t`.
    pub fn slice_norms(&self) -> Vec<f64> {
        (0..self.grid.n_t)
            .map(|t| {
                let start = self.grid.index(t, 0);
                self.values[start..start + self.grid.n_x]
                    .iter()
                    .map(|v| v.norm_squared())
                    .sum::<f64>()
                    * self.grid.dx
            })
            .collect()
    }

    /// Flattens into `(re, im)` pairs in (t, x, component) order.
    pub fn to_real_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            for c in v.iter() {
                out.push(c.re);
                out.push(c.im);
            }
        }
        out
    }

    pub fn from_real_slice(grid: SpacetimeGrid, data: &[f64]) -> Result<Self> {
        if data.len() != grid.len() * 8 {
            return Err(Error::GridMismatch(format!(
                "{} reals for a grid of {} sites",
                data.len(),
                grid.len()
            )));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| {
                Spinor::new(
                    C64::new(c[0], c[1]),
                    C64::new(c[2], c[3]),
                    C64::new(c[4], c[5]),
                    C64::new(c[6], c[7]),
                )
            })
            .collect();
        Ok(Self { grid, values })
    }
}

/// Fixed-time restriction of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorSlice {
    pub grid: SpacetimeGrid,
    pub t_index: usize,
    pub values: Vec<Spinor>,
}

impl SpinorSlice {
    pub fn zeros(grid: SpacetimeGrid, t_index: usize) -> Self {
        Self {
            grid,
            t_index,
            values: vec![Spinor::zeros(); grid.n_x],
        }
    }

    pub fn from_fn(grid: SpacetimeGrid, t_index: usize, f: impl FnMut(usize) -> Spinor) -> Self {
        Self {
            grid,
            t_index,
            values: (0..grid.n_x).map(f).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_squared()).sum::<f64>() * self.grid.dx).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v /= C64::new(n, 0.0);
        }
        Ok(out)
    }

    pub fn scale(&mut self, alpha: C64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn add_scaled(&mut self, alpha: C64, other: &SpinorSlice) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b * alpha;
        }
    }

    /// Column-vector view (`4 * n_x` entries, site-major).
    pub fn to_dvector(&self) -> nalgebra::DVector<C64> {
        nalgebra::DVector::from_iterator(
            self.values.len() * 4,
            self.values.iter().flat_map(|v| v.iter().copied()),
        )
    }

    pub fn from_dvector(grid: SpacetimeGrid, t_index: usize, v: &nalgebra::DVector<C64>) -> Self {
        Self::from_fn(grid, t_index, |x| {
            Spinor::new(v[4 * x], v[4 * x + 1], v[4 * x + 2], v[4 * x + 3])
        })
    }
}

/// Linear map between slices on the same grid.
pub trait SliceOperator {
    fn apply(&self, slice: &SpinorSlice) -> Result<SpinorSlice>;
}

/// Identity operator.
pub struct Identity;

impl SliceOperator for Identity {
    fn apply(&self, slice: &SpinorSlice) -> Result<SpinorSlice> {
        Ok(slice.clone())
    }
}

/// A constant 4x4 matrix applied site by site (e.g. a gamma matrix).
impl SliceOperator for nalgebra::Matrix4<C64> {
    fn apply(&self, slice: &SpinorSlice) -> Result<SpinorSlice> {
        Ok(SpinorSlice {
            grid: slice.grid,
            t_index: slice.t_index,
            values: slice.values.iter().map(|v| self * v).collect(),
        })
    }
}

pub(crate) fn check_same_grid(a: &SpacetimeGrid, b: &SpacetimeGrid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{}x{} (dt={}, dx={}) vs {}x{} (dt={}, dx={})",
            a.n_t, a.n_x, a.dt, a.dx, b.n_t, b.n_x, b.dt, b.dx
        )))
    }
}

fn check_same_slice_grid(a: &SpinorSlice, b: &SpinorSlice) -> Result<()> {
    if a.values.len() != b.values.len() || a.grid.dx != b.grid.dx || a.grid.n_x != b.grid.n_x {
        return Err(Error::GridMismatch(format!(
            "slices of length {} (dx={}) and {} (dx={})",
            a.values.len(),
            a.grid.dx,
            b.values.len(),
            b.grid.dx
        )));
    }
    Ok(())
}

/// `<a|b>_t = sum_x a^dagger(x) b(x) dx`
pub fn inner_product_3d(a: &SpinorSlice, b: &SpinorSlice) -> Result<C64> {
    check_same_slice_grid(a, b)?;
    let sum: C64 = a.values.iter().zip(&b.values).map(|(u, v)| u.dotc(v)).sum();
    Ok(sum * a.grid.dx)
}

/// `<a|O|b>_t`
pub fn matrix_element(a: &SpinorSlice, op: &dyn SliceOperator, b: &SpinorSlice) -> Result<C64> {
    let ob = op.apply(b)?;
    inner_product_3d(a, &ob)
}

/// `sum_{t,x} psi^dagger psi dt dx`; errors on a zero field.
pub fn norm_4d(psi: &SpinorField) -> Result<f64> {
    let sum: f64 = psi.values.iter().map(|v| v.norm_squared()).sum();
    let n = sum * psi.grid.cell();
    if !n.is_finite() {
        return Err(Error::NonFinite("4D norm"));
    }
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(n)
}
