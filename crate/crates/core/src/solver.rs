//! Scenario setup, unitary initialization, action minimization and collapse
//! diagnostics.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dirac::{slice_hamiltonian, time_reversal_matrix, Mass, Potential};
use crate::eigenbasis::{project_coefficients, PhasedBasis};
use crate::error::{Error, Result};
use crate::fourpoint::{FourPointOptions, FourPointSamples};
use crate::functionals::{Action, ActionReport, BoundaryMask};
use crate::grid::{SpacetimeGrid, SpinorField, SpinorSlice, C64};
use crate::lbfgs::{self, LbfgsOptions, Status};
use crate::weight::WeightTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    #[default]
    FixInitial,
    FixBoth,
}

impl BoundaryPolicy {
    pub fn mask(self, n_t: usize) -> BoundaryMask {
        match self {
            Self::FixInitial => BoundaryMask::initial(n_t),
            Self::FixBoth => BoundaryMask::both(n_t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: SpacetimeGrid,
    /// Potential on every slice, already evaluated at `tau = t - t_i`.
    pub potential: Potential,
    pub mass: Mass,
    /// First slice, normalized to unit 3D norm on construction.
    pub initial: SpinorSlice,
    /// Last slice for [`BoundaryPolicy::FixBoth`]; taken from the propagated
    /// field when absent.
    pub final_slice: Option<SpinorSlice>,
    pub boundary: BoundaryPolicy,
    pub t_i: f64,
    pub epsilon: f64,
    pub optimizer: LbfgsOptions,
    pub four_point: FourPointOptions,
    /// Population above which a mode counts as dominant.
    pub dominance_threshold: f64,
}

impl Scenario {
    pub fn new(
        grid: SpacetimeGrid,
        potential: Potential,
        mass: Mass,
        initial: SpinorSlice,
    ) -> Result<Self> {
        grid.require_stencil()?;
        potential.check_grid(&grid)?;
        if initial.values.len() != grid.n_x {
            return Err(Error::GridMismatch(format!(
                "initial slice has {} sites, grid has {}",
                initial.values.len(),
                grid.n_x
            )));
        }
        let mut initial = initial.normalized()?;
        initial.t_index = 0;
        initial.grid = grid;
        Ok(Self {
            grid,
            potential,
            mass,
            initial,
            final_slice: None,
            boundary: BoundaryPolicy::FixInitial,
            t_i: grid.origin_t,
            epsilon: 0.0,
            optimizer: LbfgsOptions::default(),
            four_point: FourPointOptions::default(),
            dominance_threshold: 0.9,
        })
    }

    pub fn mask(&self) -> BoundaryMask {
        self.boundary.mask(self.grid.n_t)
    }

    /// Draws the frozen four-point samples and assembles the action.
    pub fn build_action(&self, table: &mut WeightTable) -> Result<Action> {
        let samples = if self.four_point.samples > 0 {
            Some(FourPointSamples::draw(&self.grid, &self.four_point, table)?)
        } else {
            None
        };
        Action::new(
            &self.grid,
            self.potential.clone(),
            self.mass,
            self.epsilon,
            samples,
        )
    }

    /// The same scenario run backwards in time: reversed potential (the
    /// vector part changes sign) and boundary data mapped by [`time_reverse_slice`].
    pub fn time_reversed(&self, propagated_final: &SpinorSlice) -> Result<Self> {
        let g = self.grid;
        let pot = Potential::from_fn(&g, self.potential.charge, |t, x| {
            let a = self.potential.at(g.n_t - 1 - t, x);
            [a[0], -a[1], -a[2], -a[3]]
        });
        let last = self.final_slice.as_ref().unwrap_or(propagated_final);
        let mut rev = self.clone();
        rev.potential = pot;
        rev.initial = time_reverse_slice(last, 0);
        rev.final_slice = Some(time_reverse_slice(&self.initial, g.n_t - 1));
        Ok(rev)
    }
}

/// `T psi*` with `T = i gamma^1 gamma^3`, placed on slice `t_index`.
pub fn time_reverse_slice(s: &SpinorSlice, t_index: usize) -> SpinorSlice {
    let tm = time_reversal_matrix();
    SpinorSlice {
        grid: s.grid,
        t_index,
        values: s.values.iter().map(|v| tm * v.conjugate()).collect(),
    }
}

/// `(R psi)(n, x) = T psi*(N - 1 - n, x)`.
pub fn time_reverse(psi: &SpinorField) -> SpinorField {
    let g = psi.grid;
    let tm = time_reversal_matrix();
    SpinorField::from_fn(g, |t, x| tm * psi.at(g.n_t - 1 - t, x).conjugate())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Propagation {
    pub substeps: usize,
    pub max_norm_drift: f64,
}

fn crank_nicolson(sc: &Scenario, substeps: usize) -> Result<(SpinorField, f64)> {
    let g = sc.grid;
    let n = 4 * g.n_x;
    let mut field = SpinorField::zeros(g);
    let mut current = sc.initial.to_dvector();
    field.set_slice(&SpinorSlice::from_dvector(g, 0, &current))?;
    let norm0 = current.norm();
    let mut drift: f64 = 0.0;
    let hs: Vec<DMatrix<C64>> = (0..g.n_t)
        .map(|t| {
            Ok(
                slice_hamiltonian(&g, sc.potential.slice(t), sc.potential.charge, sc.mass)?
                    .to_dense(),
            )
        })
        .collect::<Result<_>>()?;
    let eye = DMatrix::<C64>::identity(n, n);
    let h = g.dt / substeps as f64;
    for t in 0..g.n_t - 1 {
        for k in 0..substeps {
            let a = (k as f64 + 0.5) / substeps as f64;
            let hbar = &hs[t] * C64::new(1.0 - a, 0.0) + &hs[t + 1] * C64::new(a, 0.0);
            let half = C64::new(0.0, 0.5 * h);
            let lhs = &eye + &hbar * half;
            let rhs: DVector<C64> = (&eye - &hbar * half) * &current;
            current = lhs
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::UnstablePropagation {
                    drift: f64::INFINITY,
                    substeps,
                })?;
        }
        drift = drift.max((current.norm() - norm0).abs() / norm0);
        field.set_slice(&SpinorSlice::from_dvector(g, t + 1, &current))?;
    }
    Ok((field, drift))
}

/// Fills the grid by Crank-Nicolson propagation of the initial slice,
/// retrying with 2, 4 and 8 substeps if the slice norm drifts by more than 1%.
/// With [`BoundaryPolicy::FixBoth`] and an explicit final slice, that slice
/// replaces the propagated one.
pub fn initialize_field(sc: &Scenario) -> Result<(SpinorField, Propagation)> {
    let mut last = (0.0, 1);
    for substeps in [1, 2, 4, 8] {
        let (mut field, drift) = crank_nicolson(sc, substeps)?;
        if drift <= 0.01 {
            if substeps > 1 {
                log::warn!("propagation needed {substeps} substeps per slice (drift {drift:.2e})");
            }
            if let (BoundaryPolicy::FixBoth, Some(f)) = (sc.boundary, &sc.final_slice) {
                let mut f = f.clone();
                f.t_index = sc.grid.n_t - 1;
                f.grid = sc.grid;
                field.set_slice(&f)?;
            }
            return Ok((
                field,
                Propagation {
                    substeps,
                    max_norm_drift: drift,
                },
            ));
        }
        last = (drift, substeps);
    }
    Err(Error::UnstablePropagation {
        drift: last.0,
        substeps: last.1,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub step: f64,
    pub evaluations: usize,
    #[serde(flatten)]
    pub report: ActionReport,
}

#[derive(Debug, Clone)]
pub struct Minimized {
    pub field: SpinorField,
    pub status: Status,
    pub initial: ActionReport,
    pub final_report: ActionReport,
    pub log: Vec<LogEntry>,
}

/// Quasi-Newton descent of the total action over the free slices.
pub fn minimize_action(field0: &SpinorField, sc: &Scenario, action: &Action) -> Result<Minimized> {
    let g = sc.grid;
    let mask = sc.mask();
    let (initial, _) = action.evaluate_with_gradient(field0, &mask)?;
    let seen: RefCell<HashMap<u64, ActionReport>> = RefCell::new(HashMap::new());
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let psi = SpinorField::from_real_slice(g, x)?;
        let (rep, grad) = action.evaluate_with_gradient(&psi, &mask)?;
        seen.borrow_mut().insert(rep.total.to_bits(), rep);
        Ok((rep.total, grad.to_real_vec()))
    };
    let log = RefCell::new(Vec::new());
    let outcome = lbfgs::minimize(objective, field0.to_real_vec(), &sc.optimizer, |it, _| {
        let mut s = seen.borrow_mut();
        if let Some(rep) = s.get(&it.value.to_bits()).copied() {
            log.borrow_mut().push(LogEntry {
                iteration: it.iteration,
                step: it.step,
                evaluations: it.evaluations,
                report: rep,
            });
        }
        s.clear();
    })?;
    let field = SpinorField::from_real_slice(g, &outcome.x)?;
    let (final_report, _) = action.evaluate_with_gradient(&field, &mask)?;
    if outcome.status == Status::LineSearchFailed {
        log::warn!(
            "line search failed after {} iterations",
            outcome.iterations.len()
        );
    }
    Ok(Minimized {
        field,
        status: outcome.status,
        initial,
        final_report,
        log: log.into_inner(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapseDiagnostics {
    /// `populations[slice][mode]`
    pub populations: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
    pub mode_ids: Vec<usize>,
    /// Position (in `mode_ids`) of the dominant mode on the last slice.
    pub dominance_index: Option<usize>,
    /// First slice from which that mode stays above the threshold.
    pub dominance_time: Option<usize>,
    pub winner: Option<usize>,
    /// Completeness residual per slice.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub reliable: bool,
    pub final_a1: Option<f64>,
    pub final_a2: Option<f64>,
}

/// Completeness residual above which diagnostics are marked unreliable.
pub const RESIDUAL_LIMIT: f64 = 1e-3;

pub fn collapse_metrics(
    field: &SpinorField,
    basis: &PhasedBasis,
    threshold: f64,
    report: Option<&ActionReport>,
) -> Result<CollapseDiagnostics> {
    let track = project_coefficients(field, basis, RESIDUAL_LIMIT)?;
    let n = field.grid.n_t;
    let populations: Vec<Vec<f64>> = (0..n).map(|t| track.populations(t)).collect();
    let totals: Vec<f64> = (0..n).map(|t| track.total_population(t)).collect();
    let argmax = |row: &[f64]| {
        row.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, &p)| (j, p))
    };
    let mut dominance_index = None;
    let mut dominance_time = None;
    if let Some((j, p)) = argmax(&populations[n - 1]) {
        if p > threshold {
            dominance_index = Some(j);
            let mut first = n - 1;
            while first > 0 && populations[first - 1][j] > threshold {
                first -= 1;
            }
            dominance_time = Some(first);
        }
    }
    let max_residual = track.max_residual();
    Ok(CollapseDiagnostics {
        winner: dominance_index.map(|j| track.mode_ids[j]),
        populations,
        totals,
        mode_ids: track.mode_ids.clone(),
        dominance_index,
        dominance_time,
        residuals: track.residuals.clone(),
        reliable: max_residual <= RESIDUAL_LIMIT,
        max_residual,
        final_a1: report.map(|r| r.a1),
        final_a2: report.map(|r| r.a2),
    })
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationRow {
    pub epsilon: f64,
    /// Largest final-slice population.
    pub max_population: f64,
    /// Largest final-slice population over the final total.
    pub dominance: f64,
    /// `max_t |sum_j |C_j(t)|^2 - 1|`.
    pub norm_deviation: f64,
    pub a1: f64,
    pub a2: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub rows: Vec<CalibrationRow>,
    pub chosen: f64,
}

/// Allowed `max_t |sum_j |C_j|^2 - 1|` for a calibrated run.
pub const NORM_TOLERANCE: f64 = 0.02;

/// Runs the minimizer for each `epsilon` on one frozen sample set. Picks the
/// smallest value whose final slice is dominated (raw population above the
/// scenario threshold) with the norm inside [`NORM_TOLERANCE`]; failing
/// that, the smallest value with normalized dominance above threshold;
/// failing that, the value with the largest normalized dominance.
pub fn calibrate_epsilon(
    sc: &Scenario,
    basis: &PhasedBasis,
    epsilons: &[f64],
    table: &mut WeightTable,
) -> Result<Calibration> {
    if epsilons.is_empty() {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: "empty calibration sweep".into(),
        });
    }
    let base = sc.build_action(table)?;
    let (field0, _) = initialize_field(sc)?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut run = sc.clone();
        run.epsilon = eps;
        let action = base.clone().with_epsilon(eps)?;
        let out = minimize_action(&field0, &run, &action)?;
        let d = collapse_metrics(
            &out.field,
            basis,
            sc.dominance_threshold,
            Some(&out.final_report),
        )?;
        let last = d.populations.last().expect("at least one slice");
        let max_population = last.iter().copied().fold(0.0, f64::max);
        let total = *d.totals.last().expect("at least one slice");
        let row = CalibrationRow {
            epsilon: eps,
            max_population,
            dominance: if total > 0.0 {
                max_population / total
            } else {
                0.0
            },
            norm_deviation: d.totals.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max),
            a1: out.final_report.a1,
            a2: out.final_report.a2,
            iterations: out.log.len(),
        };
        log::info!("calibration: {row:?}");
        rows.push(row);
    }
    let thr = sc.dominance_threshold;
    let chosen = rows
        .iter()
        .find(|r| r.max_population > thr && r.norm_deviation <= NORM_TOLERANCE)
        .or_else(|| rows.iter().find(|r| r.dominance > thr))
        .or_else(|| {
            rows.iter()
                .max_by(|a, b| a.dominance.total_cmp(&b.dominance))
        })
        .map(|r| r.epsilon)
        .expect("non-empty sweep");
    Ok(Calibration { rows, chosen })
}
