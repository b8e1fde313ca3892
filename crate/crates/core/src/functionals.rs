//! The Dirac penalty `A1`, its modal form, and the total action
//! `A1 + epsilon * A2` with gradients over the free sites.

use rayon::prelude::*;
use serde::Serialize;

use crate::dirac::{DiracOperator, Mass, Potential};
use crate::eigenbasis::CoefficientTrack;
use crate::error::{Error, Result};
use crate::fourpoint::{a2, a2_with_gradient, FourPointSamples};
use crate::grid::{check_same_grid, norm_4d, SpacetimeGrid, SpinorField, C64};

fn sum_sq(psi: &SpinorField) -> f64 {
    psi.values.iter().map(|v| v.norm_squared()).sum()
}

/// `||D psi||^2 / ||psi||^2`.
pub fn a1(psi: &SpinorField, pot: &Potential, mass: Mass) -> Result<f64> {
    a1_with(&DiracOperator::new(&psi.grid, pot, mass)?, psi)
}

pub fn a1_with(dirac: &DiracOperator, psi: &SpinorField) -> Result<f64> {
    norm_4d(psi)?;
    let d = dirac.apply(psi)?;
    Ok(sum_sq(&d) / sum_sq(psi))
}

/// `A1` and `dA1/d(Re psi, Im psi)` as a field (see [`SpinorField::to_real_vec`]).
pub fn a1_with_gradient(dirac: &DiracOperator, psi: &SpinorField) -> Result<(f64, SpinorField)> {
    norm_4d(psi)?;
    let d = dirac.apply(psi)?;
    let den = sum_sq(psi);
    let value = sum_sq(&d) / den;
    let mut grad = dirac.apply_adjoint(&d)?.axpy(C64::new(-value, 0.0), psi)?;
    grad.scale(C64::new(2.0 / den, 0.0));
    Ok((value, grad))
}

/// Largest sitewise `|D psi|` (for checking that a small `A1` really means
/// the Dirac equation holds everywhere).
pub fn max_site_residual(psi: &SpinorField, pot: &Potential, mass: Mass) -> Result<f64> {
    let d = DiracOperator::new(&psi.grid, pot, mass)?.apply(psi)?;
    Ok(d.values.iter().map(|v| v.norm()).fold(0.0, f64::max))
}

/// `sum_t sum_j |C_j'|^2 / (m^2 sum_t sum_j |C_j|^2)` with the lattice time stencil.
pub fn a1_modal(track: &CoefficientTrack, grid: &SpacetimeGrid, mass: Mass) -> Result<f64> {
    let n = track.coeffs.len();
    if n < 3 {
        return Err(Error::InvalidParameter {
            name: "coefficients",
            reason: format!("need at least 3 slices, got {n}"),
        });
    }
    if n != grid.n_t {
        return Err(Error::GridMismatch(format!(
            "{n} coefficient slices for {} grid slices",
            grid.n_t
        )));
    }
    let k = track.coeffs[0].len();
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..n {
        for j in 0..k {
            let d: C64 = grid
                .time_stencil(t)
                .iter()
                .map(|&(ts, w)| track.coeffs[ts][j] * w)
                .sum();
            num += d.norm_sqr();
            den += track.coeffs[t][j].norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let m = mass.value();
    Ok(num / (m * m * den))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Slices whose values are held fixed during minimization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMask {
    pub frozen: Vec<bool>,
}

impl BoundaryMask {
    pub fn none(n_t: usize) -> Self {
        Self {
            frozen: vec![false; n_t],
        }
    }

    pub fn initial(n_t: usize) -> Self {
        let mut frozen = vec![false; n_t];
        frozen[0] = true;
        Self { frozen }
    }

    pub fn both(n_t: usize) -> Self {
        let mut frozen = vec![false; n_t];
        frozen[0] = true;
        frozen[n_t - 1] = true;
        Self { frozen }
    }

    pub fn free_sites(&self, grid: &SpacetimeGrid) -> usize {
        self.frozen.iter().filter(|f| !**f).count() * grid.n_x
    }

    /// Zeroes frozen slices of a gradient field.
    pub fn apply(&self, grad: &mut SpinorField) {
        let n_x = grad.grid.n_x;
        for (t, &f) in self.frozen.iter().enumerate() {
            if f {
                for v in &mut grad.values[t * n_x..(t + 1) * n_x] {
                    *v = crate::grid::Spinor::zeros();
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionReport {
    pub a1: f64,
    pub a2: f64,
    pub a2_stderr: f64,
    pub epsilon: f64,
    pub total: f64,
    pub gradient_norm: Option<f64>,
}

/// Total action with everything that must stay fixed during a run: the
/// Dirac operator, the potential and the frozen four-point sample set.
#[derive(Debug, Clone)]
pub struct Action {
    pub grid: SpacetimeGrid,
    pub pot: Potential,
    pub epsilon: f64,
    pub gradient_mode: GradientMode,
    dirac: DiracOperator,
    samples: Option<FourPointSamples>,
}

impl Action {
    /// `samples` is required when `epsilon > 0`; when given with
    /// `epsilon = 0`, `A2` is still evaluated and reported.
    pub fn new(
        grid: &SpacetimeGrid,
        pot: Potential,
        mass: Mass,
        epsilon: f64,
        samples: Option<FourPointSamples>,
    ) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("must be finite and non-negative, got {epsilon}"),
            });
        }
        if epsilon > 0.0 && samples.is_none() {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: "a positive epsilon needs a four-point sample set".into(),
            });
        }
        if let Some(s) = &samples {
            check_same_grid(grid, &s.grid)?;
        }
        let dirac = DiracOperator::new(grid, &pot, mass)?;
        Ok(Self {
            grid: *grid,
            pot,
            epsilon,
            gradient_mode: GradientMode::Analytic,
            dirac,
            samples,
        })
    }

    pub fn with_gradient_mode(mut self, mode: GradientMode) -> Self {
        self.gradient_mode = mode;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && self.samples.is_none() {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: "a positive epsilon needs a four-point sample set".into(),
            });
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn mass(&self) -> Mass {
        self.dirac.mass
    }

    pub fn samples(&self) -> Option<&FourPointSamples> {
        self.samples.as_ref()
    }

    pub fn evaluate(&self, psi: &SpinorField) -> Result<ActionReport> {
        let a1v = a1_with(&self.dirac, psi)?;
        let (a2v, err) = match &self.samples {
            Some(s) => {
                let e = a2(s, psi, &self.pot)?;
                (e.value, e.stderr)
            }
            None => (0.0, 0.0),
        };
        Ok(self.report(a1v, a2v, err, None))
    }

    /// Total only (what the optimizer minimizes).
    pub fn total(&self, psi: &SpinorField) -> Result<f64> {
        let a1v = a1_with(&self.dirac, psi)?;
        if self.epsilon == 0.0 {
            return Ok(a1v);
        }
        let s = self.samples.as_ref().expect("checked in constructor");
        Ok(a1v + self.epsilon * a2(s, psi, &self.pot)?.value)
    }

    fn report(&self, a1v: f64, a2v: f64, err: f64, gnorm: Option<f64>) -> ActionReport {
        ActionReport {
            a1: a1v,
            a2: a2v,
            a2_stderr: err,
            epsilon: self.epsilon,
            total: a1v + self.epsilon * a2v,
            gradient_norm: gnorm,
        }
    }

    /// Report and gradient of the total with respect to the real and
    /// imaginary parts of every site, frozen slices zeroed.
    pub fn evaluate_with_gradient(
        &self,
        psi: &SpinorField,
        mask: &BoundaryMask,
    ) -> Result<(ActionReport, SpinorField)> {
        let (report, mut grad) = match self.gradient_mode {
            GradientMode::Analytic => self.analytic(psi)?,
            GradientMode::FiniteDifference => {
                (self.evaluate(psi)?, self.finite_difference(psi, mask)?)
            }
        };
        mask.apply(&mut grad);
        let gnorm = grad
            .values
            .iter()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            .sqrt();
        Ok((
            ActionReport {
                gradient_norm: Some(gnorm),
                ..report
            },
            grad,
        ))
    }

    fn analytic(&self, psi: &SpinorField) -> Result<(ActionReport, SpinorField)> {
        let (a1v, mut grad) = a1_with_gradient(&self.dirac, psi)?;
        let (a2v, err) = match &self.samples {
            Some(s) if self.epsilon > 0.0 => {
                let (e, g2) = a2_with_gradient(s, psi, &self.pot)?;
                grad = grad.axpy(C64::new(self.epsilon, 0.0), &g2)?;
                (e.value, e.stderr)
            }
            Some(s) => {
                let e = a2(s, psi, &self.pot)?;
                (e.value, e.stderr)
            }
            None => (0.0, 0.0),
        };
        Ok((self.report(a1v, a2v, err, None), grad))
    }

    fn finite_difference(&self, psi: &SpinorField, mask: &BoundaryMask) -> Result<SpinorField> {
        let base = psi.to_real_vec();
        let g = psi.grid;
        let h = 1e-6 * base.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        let grad: Vec<f64> = (0..base.len())
            .into_par_iter()
            .map(|k| {
                let t = k / (8 * g.n_x);
                if mask.frozen[t] {
                    return Ok(0.0);
                }
                let mut v = base.clone();
                v[k] = base[k] + h;
                let up = self.total(&SpinorField::from_real_slice(g, &v)?)?;
                v[k] = base[k] - h;
                let down = self.total(&SpinorField::from_real_slice(g, &v)?)?;
                Ok((up - down) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        SpinorField::from_real_slice(g, &grad)
    }
}

/// Real-vector gradient of the total action, frozen slices zeroed.
pub fn action_gradient(
    action: &Action,
    psi: &SpinorField,
    mask: &BoundaryMask,
) -> Result<Vec<f64>> {
    Ok(action.evaluate_with_gradient(psi, mask)?.1.to_real_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigenbasis::{
        build_phased_basis, project_coefficients, synthesize_field, BasisOptions, ModeBasis,
    };
    use crate::fourpoint::FourPointOptions;
    use crate::grid::Spinor;
    use crate::weight::WeightTable;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rest_wave(g: SpacetimeGrid, m: f64) -> SpinorField {
        SpinorField::from_fn(g, |t, _| {
            Spinor::new(
                C64::from_polar(1.0, -m * g.time(t)),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
            )
        })
    }

    fn random_field(g: SpacetimeGrid, seed: u64) -> SpinorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpinorField::from_fn(g, |_, _| {
            Spinor::from_fn(|_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        })
    }

    fn mass() -> Mass {
        Mass::new(1.0).unwrap()
    }

    #[test]
    fn exact_rest_solution_sits_at_the_discretization_floor() {
        let g = SpacetimeGrid::new(32, 8, 0.05, 0.2).unwrap();
        let pot = Potential::zero(&g, 1.0);
        let v = a1(&rest_wave(g, 1.0), &pot, mass()).unwrap();
        assert!(v < 1e-3, "{v}");
        let g2 = SpacetimeGrid::new(64, 8, 0.025, 0.2).unwrap();
        let v2 = a1(&rest_wave(g2, 1.0), &Potential::zero(&g2, 1.0), mass()).unwrap();
        assert!(v2 < v / 4.0, "{v} -> {v2}");
    }

    #[test]
    fn a1_is_phase_and_scale_invariant() {
        let g = SpacetimeGrid::new(6, 6, 0.1, 0.2).unwrap();
        let pot = Potential::zero(&g, 1.0);
        let psi = random_field(g, 1);
        let a = a1(&psi, &pot, mass()).unwrap();
        let b = a1(&psi.scaled(C64::from_polar(2.5, 1.1)), &pot, mass()).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn a1_grows_quadratically_with_perturbation() {
        let g = SpacetimeGrid::new(16, 8, 0.05, 0.2).unwrap();
        let pot = Potential::zero(&g, 1.0);
        let exact = rest_wave(g, 1.0);
        let noise = random_field(g, 2);
        let floor = a1(&exact, &pot, mass()).unwrap();
        let excess = |d: f64| {
            a1(&exact.axpy(C64::new(d, 0.0), &noise).unwrap(), &pot, mass()).unwrap() - floor
        };
        let ds = [1e-2f64, 2e-2, 4e-2];
        let logs: Vec<(f64, f64)> = ds.iter().map(|&d| (d.ln(), excess(d).ln())).collect();
        let slope = (logs[2].1 - logs[0].1) / (logs[2].0 - logs[0].0);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn a1_bounds_the_sitewise_residual() {
        let g = SpacetimeGrid::new(6, 6, 0.1, 0.2).unwrap();
        let pot = Potential::zero(&g, 1.0);
        for seed in 0..5 {
            let psi = random_field(g, seed);
            let a = a1(&psi, &pot, mass()).unwrap();
            let r = max_site_residual(&psi, &pot, mass()).unwrap();
            let total: f64 = psi.values.iter().map(|v| v.norm_squared()).sum();
            assert!(r * r <= a * total * (1.0 + 1e-12));
        }
    }

    #[test]
    fn a1_gradient_matches_finite_differences() {
        let g = SpacetimeGrid::new(5, 4, 0.1, 0.3).unwrap();
        let pot = Potential::from_fn(&g, 1.0, |t, x| [0.1 * x as f64, 0.05 * t as f64, 0.0, 0.0]);
        let dirac = DiracOperator::new(&g, &pot, mass()).unwrap();
        let psi = random_field(g, 3);
        let (_, grad) = a1_with_gradient(&dirac, &psi).unwrap();
        let gr = grad.to_real_vec();
        let base = psi.to_real_vec();
        let h = 1e-6;
        for k in (0..base.len()).step_by(7) {
            let eval = |d: f64| {
                let mut v = base.clone();
                v[k] += d;
                a1_with(&dirac, &SpinorField::from_real_slice(g, &v).unwrap()).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (fd - gr[k]).abs() < 1e-7 * (1.0 + fd.abs()),
                "k={k}: {fd} vs {}",
                gr[k]
            );
        }
    }

    #[test]
    fn modal_form_of_constant_coefficients_is_zero() {
        let g = SpacetimeGrid::new(5, 4, 0.1, 0.3).unwrap();
        let track = CoefficientTrack {
            coeffs: vec![vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]; 5],
            residuals: vec![0.0; 5],
            initial_weights: vec![0.36, 0.64],
            mode_ids: vec![0, 1],
        };
        assert_eq!(a1_modal(&track, &g, mass()).unwrap(), 0.0);
        let short = CoefficientTrack {
            coeffs: vec![vec![C64::new(1.0, 0.0)]; 2],
            ..track
        };
        assert!(a1_modal(&short, &SpacetimeGrid::new(2, 4, 0.1, 0.3).unwrap(), mass()).is_err());
    }

    #[test]
    fn modal_form_of_rotation_is_omega_squared() {
        let (w, m) = (0.3, 2.0);
        let g = SpacetimeGrid::new(4000, 4, 0.01, 0.3).unwrap();
        let coeffs = (0..g.n_t)
            .map(|t| {
                let s = g.time(t);
                vec![C64::new((w * s).cos(), 0.0), C64::new((w * s).sin(), 0.0)]
            })
            .collect();
        let track = CoefficientTrack {
            coeffs,
            residuals: vec![0.0; g.n_t],
            initial_weights: vec![1.0, 0.0],
            mode_ids: vec![0, 1],
        };
        let v = a1_modal(&track, &g, Mass::new(m).unwrap()).unwrap();
        assert_relative_eq!(v, w * w / (m * m), max_relative = 1e-3);
    }

    #[test]
    fn lattice_and_modal_forms_agree_for_slowly_rotating_coefficients() {
        let g = SpacetimeGrid::new(48, 8, 0.05, 0.25).unwrap();
        let pot = Potential::zero(&g, 1.0);
        let basis = ModeBasis::build(&g, &pot, mass(), &BasisOptions::default()).unwrap();
        let pb = build_phased_basis(basis, 0.0);
        let k = pb.basis.retained_count();
        let (a, b, c) = (16, 18, 20);
        let w = 0.2;
        let coeffs: Vec<Vec<C64>> = (0..g.n_t)
            .map(|t| {
                let s = g.time(t);
                let mut row = vec![C64::new(0.0, 0.0); k];
                row[a] = C64::new((w * s).cos(), 0.0);
                row[b] = C64::new((w * s).sin() * 0.6, 0.0);
                row[c] = C64::new((w * s).sin() * 0.8, 0.0);
                row
            })
            .collect();
        let psi = synthesize_field(&pb, &coeffs).unwrap();
        let track = project_coefficients(&psi, &pb, 1e-8).unwrap();
        let lattice = a1(&psi, &pot, mass()).unwrap();
        let modal = a1_modal(&track, &g, mass()).unwrap();
        assert!(
            (lattice - modal).abs() / lattice < 0.05,
            "{lattice} vs {modal}"
        );
    }

    fn action_with_samples(g: SpacetimeGrid, pot: Potential, eps: f64) -> Action {
        let s = FourPointSamples::draw(
            &g,
            &FourPointOptions {
                samples: 2000,
                seed: 5,
                ..Default::default()
            },
            &mut WeightTable::new(),
        )
        .unwrap();
        Action::new(&g, pot, mass(), eps, Some(s)).unwrap()
    }

    #[test]
    fn epsilon_scales_the_a2_contribution_linearly() {
        let g = SpacetimeGrid::new(8, 8, 0.05, 0.2).unwrap();
        let psi = random_field(g, 4);
        let pot = Potential::zero(&g, 1.0);
        let r0 = action_with_samples(g, pot.clone(), 0.0)
            .evaluate(&psi)
            .unwrap();
        assert_eq!(r0.total, r0.a1);
        let r1 = action_with_samples(g, pot.clone(), 0.1)
            .evaluate(&psi)
            .unwrap();
        let r2 = action_with_samples(g, pot, 0.2).evaluate(&psi).unwrap();
        assert_relative_eq!(
            r2.total - r2.a1,
            2.0 * (r1.total - r1.a1),
            max_relative = 1e-12
        );
    }

    #[test]
    fn positive_epsilon_without_samples_is_rejected() {
        let g = SpacetimeGrid::new(4, 4, 0.05, 0.2).unwrap();
        assert!(Action::new(&g, Potential::zero(&g, 1.0), mass(), 0.1, None).is_err());
        assert!(Action::new(&g, Potential::zero(&g, 1.0), mass(), -1.0, None).is_err());
    }

    #[test]
    fn total_gradient_matches_finite_differences_and_respects_mask() {
        let g = SpacetimeGrid::new(6, 6, 0.05, 0.2).unwrap();
        let pot = Potential::from_fn(&g, 1.0, |_, x| [0.2 * (x as f64).cos(), 0.0, 0.0, 0.0]);
        let action = action_with_samples(g, pot, 0.3);
        let psi = random_field(g, 6);
        let mask = BoundaryMask::both(g.n_t);
        let (_, grad) = action.evaluate_with_gradient(&psi, &mask).unwrap();
        let fd_action = action
            .clone()
            .with_gradient_mode(GradientMode::FiniteDifference);
        let (_, fd) = fd_action.evaluate_with_gradient(&psi, &mask).unwrap();
        let (a, b) = (grad.to_real_vec(), fd.to_real_vec());
        let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for k in 0..a.len() {
            assert!(
                (a[k] - b[k]).abs() < 1e-5 * scale,
                "k={k}: {} vs {}",
                a[k],
                b[k]
            );
        }
        for t in [0, g.n_t - 1] {
            for x in 0..g.n_x {
                assert_eq!(*grad.at(t, x), Spinor::zeros());
            }
        }
    }

    #[test]
    fn gradient_is_orthogonal_to_scale_and_phase_directions() {
        let g = SpacetimeGrid::new(6, 6, 0.05, 0.2).unwrap();
        let action = action_with_samples(g, Potential::zero(&g, 1.0), 0.2);
        let psi = random_field(g, 7);
        let (_, grad) = action
            .evaluate_with_gradient(&psi, &BoundaryMask::none(g.n_t))
            .unwrap();
        let gr = grad.to_real_vec();
        let scale_dir = psi.to_real_vec();
        let phase_dir = psi.scaled(C64::new(0.0, 1.0)).to_real_vec();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let gn = dot(&gr, &gr).sqrt() * dot(&scale_dir, &scale_dir).sqrt();
        assert!(dot(&gr, &scale_dir).abs() < 1e-10 * gn);
        assert!(dot(&gr, &phase_dir).abs() < 1e-10 * gn);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn a1_and_total_are_non_negative(seed in 0u64..10_000) {
            let g = SpacetimeGrid::new(4, 4, 0.1, 0.2).unwrap();
            let pot = Potential::from_fn(&g, 1.0, |t, x| [0.3 * (t + x) as f64, 0.1, 0.0, 0.0]);
            let psi = random_field(g, seed);
            prop_assert!(a1(&psi, &pot, mass()).unwrap() >= 0.0);
        }
    }
}
