//! Instantaneous eigenbasis of the slice Hamiltonian and the phase-evolved
//! Dirac basis built from it.
//!
//! Modes are labelled on the first slice by ascending energy (degenerate
//! clusters are split deterministically, see [`refine_cluster`]). On every
//! later slice each label is carried to the new eigenvector with the largest
//! overlap; degenerate clusters are aligned to the previous slice with an
//! orthogonal Procrustes rotation, which also fixes the phase so that
//! `<chi_j(tau)|chi_j(tau + dtau)>` is real and non-negative.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::dirac::{build_gamma_set, slice_hamiltonian, spin_x, Mass, Potential};
use crate::error::{Error, Result};
use crate::grid::{
    inner_product_3d, SpacetimeGrid, SpatialBoundary, SpinorField, SpinorSlice, C64,
};

/// Mode retention policy.
#[derive(Debug, Clone)]
pub enum Retain {
    All,
    /// Keep the `k` modes with the largest overlap with a reference slice on
    /// the first slice.
    TopKByOverlap {
        k: usize,
        reference: SpinorSlice,
    },
}

#[derive(Debug, Clone)]
pub struct BasisOptions {
    /// Relative gap below which eigenvalues are treated as degenerate.
    pub degeneracy_tol: f64,
    /// Minimum |overlap| between a mode and its predecessor before the slice
    /// is flagged as a crossing.
    pub crossing_threshold: f64,
    pub retain: Retain,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self {
            degeneracy_tol: 1e-9,
            crossing_threshold: 0.5,
            retain: Retain::All,
        }
    }
}

/// Eigenpairs on every slice, labelled consistently in time.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    pub grid: SpacetimeGrid,
    /// `E_j` per slice: `energies[slice][mode]`.
    pub energies: Vec<Vec<f64>>,
    /// Eigenvectors per slice, one column per retained mode, normalized so
    /// that the 3D inner product of a column with itself is one.
    pub vectors: Vec<DMatrix<C64>>,
    /// Energy-order index on the first slice of every retained mode.
    pub mode_ids: Vec<usize>,
    /// `|<chi_j(prev)|chi_j(this)>|` per slice (1 on the first slice).
    pub continuity: Vec<Vec<f64>>,
    /// Slices where the overlap matrix was far from a permutation.
    pub flagged: Vec<usize>,
}

impl ModeBasis {
    pub fn retained_count(&self) -> usize {
        self.mode_ids.len()
    }

    pub fn n_slices(&self) -> usize {
        self.vectors.len()
    }

    /// `chi_j` on slice `t` as a [`SpinorSlice`].
    pub fn mode_slice(&self, t: usize, j: usize) -> SpinorSlice {
        let col: DVector<C64> = self.vectors[t].column(j).into_owned();
        SpinorSlice::from_dvector(self.grid, t, &col)
    }

    /// Position of the mode with first-slice energy index `id`.
    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.mode_ids.iter().position(|&m| m == id)
    }

    /// Positions of the positive-energy, spin-x up, long-wavelength modes on
    /// the first slice, in energy order. One representative per physical
    /// level: spin partners and lattice doublers are skipped.
    pub fn smooth_positive_modes(&self) -> Vec<usize> {
        let sx = spin_x();
        let n = self.grid.n_x;
        (0..self.retained_count())
            .filter(|&j| self.energies[0][j] > 0.0)
            .filter(|&j| {
                let s = self.mode_slice(0, j);
                let spin: f64 = s
                    .values
                    .iter()
                    .map(|v| (v.adjoint() * sx * v)[(0, 0)].re)
                    .sum::<f64>()
                    * self.grid.dx;
                let rough: f64 = (0..n)
                    .map(|x| (s.values[(x + 1) % n] - s.values[x]).norm_squared())
                    .sum::<f64>()
                    * self.grid.dx;
                spin > 0.0 && rough < 1.0
            })
            .collect()
    }

    /// `sum_j a_j chi_j` on slice `t`, with `amps` given as (position, amplitude).
    pub fn superpose(&self, t: usize, amps: &[(usize, C64)]) -> SpinorSlice {
        let mut out = SpinorSlice::zeros(self.grid, t);
        for &(j, a) in amps {
            out.add_scaled(a, &self.mode_slice(t, j));
        }
        out
    }

    /// Builds the basis for every slice of `grid` from the potential on that slice.
    pub fn build(
        grid: &SpacetimeGrid,
        pot: &Potential,
        mass: Mass,
        opts: &BasisOptions,
    ) -> Result<Self> {
        pot.check_grid(grid)?;
        let mut energies: Vec<Vec<f64>> = Vec::with_capacity(grid.n_t);
        let mut vectors: Vec<DMatrix<C64>> = Vec::with_capacity(grid.n_t);
        let mut continuity = Vec::with_capacity(grid.n_t);
        let mut flagged = Vec::new();
        let mut mode_ids = Vec::new();

        for t in 0..grid.n_t {
            let unchanged = t > 0 && pot.slice(t) == pot.slice(t - 1);
            if unchanged {
                let prev = vectors[t - 1].clone();
                energies.push(energies[t - 1].clone());
                continuity.push(vec![1.0; prev.ncols()]);
                vectors.push(prev);
                continue;
            }
            let h = slice_hamiltonian(grid, pot.slice(t), pot.charge, mass)?.to_dense();
            let solved = solve_instantaneous(grid, &h, vectors.last(), opts)?;
            if t == 0 {
                let keep = select_retained(&solved, opts)?;
                mode_ids = keep.clone();
                let cols: Vec<DVector<C64>> = keep
                    .iter()
                    .map(|&j| solved.vectors.column(j).into_owned())
                    .collect();
                vectors.push(DMatrix::from_columns(&cols));
                energies.push(keep.iter().map(|&j| solved.energies[j]).collect());
                continuity.push(vec![1.0; keep.len()]);
            } else {
                if solved.crossing {
                    log::warn!("eigenbasis: overlap matrix far from a permutation on slice {t}");
                    flagged.push(t);
                }
                energies.push(solved.energies);
                continuity.push(solved.continuity);
                vectors.push(solved.vectors);
            }
        }
        Ok(Self {
            grid: *grid,
            energies,
            vectors,
            mode_ids,
            continuity,
            flagged,
        })
    }

    /// Writes `slice,tau_index,mode_id,energy,continuity,flagged` rows.
    pub fn write_mode_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "slice",
            "time",
            "mode_id",
            "energy",
            "continuity",
            "flagged",
        ])?;
        for t in 0..self.n_slices() {
            let flag = self.flagged.contains(&t);
            for (j, id) in self.mode_ids.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    format!("{:?}", self.grid.time(t)),
                    id.to_string(),
                    format!("{:?}", self.energies[t][j]),
                    format!("{:?}", self.continuity[t][j]),
                    flag.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of diagonalizing one slice.
#[derive(Debug, Clone)]
pub struct SliceEigen {
    pub energies: Vec<f64>,
    pub vectors: DMatrix<C64>,
    pub continuity: Vec<f64>,
    pub crossing: bool,
}

fn select_retained(solved: &SliceEigen, opts: &BasisOptions) -> Result<Vec<usize>> {
    let n = solved.energies.len();
    match &opts.retain {
        Retain::All => Ok((0..n).collect()),
        Retain::TopKByOverlap { k, reference } => {
            let k = (*k).min(n);
            let mut scored: Vec<(usize, f64)> = (0..n)
                .map(|j| {
                    let chi = SpinorSlice::from_dvector(
                        reference.grid,
                        reference.t_index,
                        &solved.vectors.column(j).into_owned(),
                    );
                    inner_product_3d(&chi, reference).map(|c| (j, c.norm_sqr()))
                })
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut keep: Vec<usize> = scored.into_iter().take(k).map(|(j, _)| j).collect();
            keep.sort_unstable();
            Ok(keep)
        }
    }
}

fn hermitian_defect(h: &DMatrix<C64>) -> f64 {
    let d = h - h.adjoint();
    d.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Dense lattice momentum `-i d_x` (identity in spinor space).
fn lattice_momentum(grid: &SpacetimeGrid) -> DMatrix<C64> {
    let n = grid.n_x;
    let mut p = DMatrix::zeros(4 * n, 4 * n);
    for x in 0..n {
        for (xs, w) in grid.space_stencil(x) {
            for c in 0..4 {
                p[(4 * x + c, 4 * xs + c)] += C64::new(0.0, -w);
            }
        }
    }
    p
}

/// Dense `2 - shift - shift^-1`, i.e. `2 - 2 cos(k dx)` on plane waves.
/// Separates smooth modes from their lattice doublers.
fn lattice_roughness(grid: &SpacetimeGrid) -> DMatrix<C64> {
    let n = grid.n_x;
    let mut r = DMatrix::zeros(4 * n, 4 * n);
    for x in 0..n {
        for c in 0..4 {
            r[(4 * x + c, 4 * x + c)] += C64::new(2.0, 0.0);
        }
        let periodic = grid.boundary == SpatialBoundary::Periodic;
        let right = (x + 1 < n || periodic).then(|| (x + 1) % n);
        let left = (x > 0 || periodic).then(|| (x + n - 1) % n);
        for xs in [right, left].into_iter().flatten() {
            for c in 0..4 {
                r[(4 * x + c, 4 * xs + c)] -= C64::new(1.0, 0.0);
            }
        }
    }
    r
}

fn dense_spin_x(n_x: usize) -> DMatrix<C64> {
    let s = spin_x();
    let mut m = DMatrix::zeros(4 * n_x, 4 * n_x);
    for x in 0..n_x {
        for r in 0..4 {
            for c in 0..4 {
                m[(4 * x + r, 4 * x + c)] = s[(r, c)];
            }
        }
    }
    m
}

/// Splits a degenerate cluster deterministically: diagonalize each tie-break
/// operator restricted to the cluster in turn, sub-clustering by its
/// eigenvalues. Columns come back ordered by the tie-break eigenvalues.
fn refine_cluster(v: DMatrix<C64>, ops: &[DMatrix<C64>], dx: f64, tol: f64) -> DMatrix<C64> {
    if v.ncols() <= 1 || ops.is_empty() {
        return v;
    }
    let restricted = v.adjoint() * &ops[0] * &v * C64::new(dx, 0.0);
    let herm = (&restricted + restricted.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let rotated = &v * &eig.eigenvectors;
    let mut out_cols = Vec::with_capacity(v.ncols());
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len()
            && (eig.eigenvalues[order[j]] - eig.eigenvalues[order[i]]).abs()
                <= tol * (1.0 + eig.eigenvalues[order[i]].abs())
        {
            j += 1;
        }
        let cols: Vec<DVector<C64>> = order[i..j]
            .iter()
            .map(|&k| rotated.column(k).into_owned())
            .collect();
        let sub = refine_cluster(DMatrix::from_columns(&cols), &ops[1..], dx, tol);
        out_cols.extend(sub.column_iter().map(|c| c.into_owned()));
        i = j;
    }
    DMatrix::from_columns(&out_cols)
}

/// Deterministic phase: make `sum_i w_i v_i` real positive for a fixed
/// generic weight vector.
fn fix_phase(col: &mut DVector<C64>) {
    let s: C64 = col
        .iter()
        .enumerate()
        .map(|(i, c)| c * C64::new((0.7 * i as f64).cos(), (1.3 * i as f64).sin() + 0.1))
        .sum();
    if s.norm() > 1e-12 * col.norm() {
        let ph = s.conj() / s.norm();
        *col *= ph;
    }
}

fn clusters(energies: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < energies.len() {
        let mut j = i + 1;
        while j < energies.len()
            && (energies[j] - energies[j - 1]).abs() <= tol * (1.0 + energies[j].abs())
        {
            j += 1;
        }
        out.push(i..j);
        i = j;
    }
    out
}

/// Polar factor `A B^dagger` of `M = A S B^dagger`.
fn polar_factor(m: &DMatrix<C64>) -> DMatrix<C64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    u * vt
}

/// Diagonalizes a Hermitian slice Hamiltonian. Without `prev`, modes are
/// ordered by energy with degenerate clusters split by spin-x, lattice
/// roughness and lattice momentum. With `prev`, the returned columns follow `prev`'s labelling.
pub fn solve_instantaneous(
    grid: &SpacetimeGrid,
    h: &DMatrix<C64>,
    prev: Option<&DMatrix<C64>>,
    opts: &BasisOptions,
) -> Result<SliceEigen> {
    let scale = h.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let defect = hermitian_defect(h);
    if defect > 1e-10 * scale {
        return Err(Error::NonHermitian(format!(
            "max |H - H^dagger| = {defect:.3e} (use a periodic spatial boundary)"
        )));
    }
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let norm = C64::new(1.0 / grid.dx.sqrt(), 0.0);
    let evals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let evecs: Vec<DVector<C64>> = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).into_owned() * norm)
        .collect();
    let groups = clusters(&evals, opts.degeneracy_tol);
    let dxc = C64::new(grid.dx, 0.0);

    let Some(prev) = prev else {
        let ops = [
            dense_spin_x(grid.n_x),
            lattice_roughness(grid),
            lattice_momentum(grid),
        ];
        let mut cols = Vec::with_capacity(evecs.len());
        for g in &groups {
            let block = DMatrix::from_columns(&evecs[g.clone()]);
            let refined = refine_cluster(block, &ops, grid.dx, 1e-8);
            for c in refined.column_iter() {
                let mut c = c.into_owned();
                fix_phase(&mut c);
                cols.push(c);
            }
        }
        let n = cols.len();
        return Ok(SliceEigen {
            energies: evals,
            vectors: DMatrix::from_columns(&cols),
            continuity: vec![1.0; n],
            crossing: false,
        });
    };

    let k_prev = prev.ncols();
    let all = DMatrix::from_columns(&evecs);
    // overlap[j, k] = <prev_j | new_k>
    let overlap = prev.adjoint() * &all * dxc;
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    for j in 0..k_prev {
        let best = groups
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                (
                    gi,
                    g.clone().map(|k| overlap[(j, k)].norm_sqr()).sum::<f64>(),
                )
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(gi, _)| gi)
            .expect("at least one cluster");
        assigned[best].push(j);
    }

    let mut crossing = false;
    let mut new_cols: Vec<Option<DVector<C64>>> = vec![None; k_prev];
    let mut leftovers: Vec<usize> = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let js = &assigned[gi];
        if js.is_empty() {
            continue;
        }
        if js.len() > g.len() {
            crossing = true;
            leftovers.extend(js.iter().copied());
            continue;
        }
        let vc = DMatrix::from_columns(&evecs[g.clone()]);
        let pj = DMatrix::from_columns(
            &js.iter()
                .map(|&j| prev.column(j).into_owned())
                .collect::<Vec<_>>(),
        );
        let m = vc.adjoint() * &pj * dxc;
        let aligned = &vc * polar_factor(&m);
        for (c, &j) in js.iter().enumerate() {
            new_cols[j] = Some(aligned.column(c).into_owned());
        }
    }
    if !leftovers.is_empty() {
        // Greedy maximum-overlap fallback over eigenvectors not yet used.
        let mut used = vec![false; evecs.len()];
        for c in new_cols.iter().flatten() {
            for (k, e) in evecs.iter().enumerate() {
                if (e.dotc(c) * dxc).norm() > 0.999 {
                    used[k] = true;
                }
            }
        }
        for j in leftovers {
            let best = (0..evecs.len())
                .filter(|&k| !used[k])
                .max_by(|&a, &b| overlap[(j, a)].norm().total_cmp(&overlap[(j, b)].norm()))
                .ok_or_else(|| {
                    Error::NonHermitian("ran out of eigenvectors while matching".into())
                })?;
            used[best] = true;
            let o = overlap[(j, best)];
            let ph = if o.norm() > 0.0 {
                o.conj() / o.norm()
            } else {
                C64::new(1.0, 0.0)
            };
            new_cols[j] = Some(&evecs[best] * ph);
        }
    }
    let cols: Vec<DVector<C64>> = new_cols
        .into_iter()
        .map(|c| c.expect("every mode matched"))
        .collect();
    let vectors = DMatrix::from_columns(&cols);
    let hv = h * &vectors;
    let mut energies = Vec::with_capacity(k_prev);
    let mut continuity = Vec::with_capacity(k_prev);
    for j in 0..k_prev {
        let c = vectors.column(j);
        energies.push((c.dotc(&hv.column(j)) * dxc).re);
        let ov = (prev.column(j).dotc(&c) * dxc).norm();
        if ov < opts.crossing_threshold {
            crossing = true;
        }
        continuity.push(ov);
    }
    Ok(SliceEigen {
        energies,
        vectors,
        continuity,
        crossing,
    })
}

/// Phase-evolved basis `psi_j(t, x; t_i) = chi_j(t - t_i, x) exp(-i Phi_j(t))`
/// with `Phi_j(t) = int_0^t E_j(t' - t_i) dt'`.
///
/// The basis slices are taken to sit at `tau = t - t_i` for the lab times of
/// the grid. Before the first slice the energies are held at their first-slice
/// values; the integral across the grid uses the trapezoid rule.
#[derive(Debug, Clone)]
pub struct PhasedBasis {
    pub basis: ModeBasis,
    pub t_i: f64,
    /// `phases[slice][mode]`
    pub phases: Vec<Vec<f64>>,
}

impl PhasedBasis {
    pub fn mode_slice(&self, t: usize, j: usize) -> SpinorSlice {
        let mut s = self.basis.mode_slice(t, j);
        s.scale(C64::from_polar(1.0, -self.phases[t][j]));
        s
    }

    /// Index of the slice closest to `t_i`, clamped to the grid.
    pub fn start_slice(&self) -> usize {
        let g = &self.basis.grid;
        let k = ((self.t_i - g.origin_t) / g.dt).round();
        k.clamp(0.0, (g.n_t - 1) as f64) as usize
    }
}

pub fn build_phased_basis(basis: ModeBasis, t_i: f64) -> PhasedBasis {
    let g = basis.grid;
    let k = basis.retained_count();
    let mut phases = Vec::with_capacity(basis.n_slices());
    let mut current: Vec<f64> = basis.energies[0].iter().map(|e| e * g.origin_t).collect();
    phases.push(current.clone());
    for t in 1..basis.n_slices() {
        for j in 0..k {
            current[j] += 0.5 * g.dt * (basis.energies[t - 1][j] + basis.energies[t][j]);
        }
        phases.push(current.clone());
    }
    PhasedBasis { basis, t_i, phases }
}

/// Expansion coefficients of a field in the phased basis.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientTrack {
    /// `coeffs[slice][mode]`
    pub coeffs: Vec<Vec<C64>>,
    /// `||psi - sum_j C_j psi_j||_3d` per slice.
    pub residuals: Vec<f64>,
    /// Initial weights `|C_j(t_i; t_i)|^2`.
    pub initial_weights: Vec<f64>,
    pub mode_ids: Vec<usize>,
}

impl CoefficientTrack {
    pub fn populations(&self, t: usize) -> Vec<f64> {
        self.coeffs[t].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn total_population(&self, t: usize) -> f64 {
        self.coeffs[t].iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// `C_j(t) = <psi_j(t)|psi(t)>_t`. Logs a warning when the completeness
/// residual on any slice exceeds `residual_warn`.
pub fn project_coefficients(
    psi: &SpinorField,
    basis: &PhasedBasis,
    residual_warn: f64,
) -> Result<CoefficientTrack> {
    let g = &basis.basis.grid;
    crate::grid::check_same_grid(g, &psi.grid)?;
    let dxc = C64::new(g.dx, 0.0);
    let k = basis.basis.retained_count();
    let mut coeffs = Vec::with_capacity(g.n_t);
    let mut residuals = Vec::with_capacity(g.n_t);
    for t in 0..g.n_t {
        let v = psi.slice(t).to_dvector();
        let raw = basis.basis.vectors[t].adjoint() * &v * dxc;
        let c: Vec<C64> = (0..k)
            .map(|j| raw[j] * C64::from_polar(1.0, basis.phases[t][j]))
            .collect();
        let recon = &basis.basis.vectors[t] * &raw;
        let r = ((&v - recon).norm_squared() * g.dx).sqrt();
        if r > residual_warn {
            log::warn!("completeness residual {r:.3e} on slice {t}");
        }
        residuals.push(r);
        coeffs.push(c);
    }
    let start = basis.start_slice();
    let initial_weights = coeffs[start].iter().map(|c| c.norm_sqr()).collect();
    Ok(CoefficientTrack {
        coeffs,
        residuals,
        initial_weights,
        mode_ids: basis.basis.mode_ids.clone(),
    })
}

/// Builds `sum_j C_j(t) psi_j(t)` from per-slice coefficients.
pub fn synthesize_field(basis: &PhasedBasis, coeffs: &[Vec<C64>]) -> Result<SpinorField> {
    let g = basis.basis.grid;
    if coeffs.len() != g.n_t {
        return Err(Error::GridMismatch(format!(
            "{} coefficient rows for {} slices",
            coeffs.len(),
            g.n_t
        )));
    }
    let mut field = SpinorField::zeros(g);
    for (t, row) in coeffs.iter().enumerate() {
        let k = basis.basis.retained_count();
        if row.len() != k {
            return Err(Error::GridMismatch(format!(
                "{} coefficients for {} modes",
                row.len(),
                k
            )));
        }
        let a = DVector::from_iterator(
            k,
            (0..k).map(|j| row[j] * C64::from_polar(1.0, -basis.phases[t][j])),
        );
        let v = &basis.basis.vectors[t] * a;
        field.set_slice(&SpinorSlice::from_dvector(g, t, &v))?;
    }
    Ok(field)
}

/// `max_{j,k,tau} |<chi_k|d_tau chi_j>| / m` with a forward difference in tau.
pub fn check_adiabaticity(basis: &ModeBasis, mass: Mass) -> f64 {
    let g = &basis.grid;
    let dxc = C64::new(g.dx / g.dt, 0.0);
    let mut worst = 0.0f64;
    for t in 0..basis.n_slices().saturating_sub(1) {
        let diff = &basis.vectors[t + 1] - &basis.vectors[t];
        let m = basis.vectors[t].adjoint() * diff * dxc;
        worst = worst.max(m.iter().map(|c| c.norm()).fold(0.0, f64::max));
    }
    worst / mass.value()
}

/// `<chi_j|gamma^0|chi_k>` on slice `t`.
pub fn gamma0_element(basis: &ModeBasis, t: usize, j: usize, k: usize) -> C64 {
    let g0 = build_gamma_set().gamma[0];
    let a = basis.mode_slice(t, j);
    let b = basis.mode_slice(t, k);
    crate::grid::matrix_element(&a, &g0, &b).expect("slices from one basis")
}
