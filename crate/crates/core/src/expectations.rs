//! One- and two-point spacetime expectation values and the local momentum
//! density they use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dirac::{DiracOperator, Potential};
use crate::error::{Error, Result};
use crate::grid::{check_same_grid, norm_4d, Identity, SpacetimeGrid, Spinor, SpinorField, C64};
use crate::kernels::{kernel_f2, KernelChoice};

/// An operator acting on a whole field.
pub trait FieldOperator {
    fn apply_field(&self, psi: &SpinorField) -> Result<SpinorField>;
}

impl FieldOperator for Identity {
    fn apply_field(&self, psi: &SpinorField) -> Result<SpinorField> {
        Ok(psi.clone())
    }
}

impl FieldOperator for nalgebra::Matrix4<C64> {
    fn apply_field(&self, psi: &SpinorField) -> Result<SpinorField> {
        Ok(SpinorField {
            grid: psi.grid,
            values: psi.values.iter().map(|v| self * v).collect(),
        })
    }
}

impl FieldOperator for DiracOperator {
    fn apply_field(&self, psi: &SpinorField) -> Result<SpinorField> {
        self.apply(psi)
    }
}

/// `sum psi^dagger O psi dV / sum psi^dagger psi dV`.
pub fn expect_1(op: &dyn FieldOperator, psi: &SpinorField) -> Result<C64> {
    let norm = norm_4d(psi)?;
    let o = op.apply_field(psi)?;
    check_same_grid(&psi.grid, &o.grid)?;
    let num: C64 = psi
        .values
        .iter()
        .zip(&o.values)
        .map(|(a, b)| a.dotc(b))
        .sum();
    Ok(num * psi.grid.cell() / norm)
}

/// Monte Carlo or deterministic estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    /// Fraction of samples (or sites) dropped because the density was below
    /// the floor.
    pub excluded_fraction: f64,
}

/// Density, current and local momentum `p^mu = Re[psi^dagger i D^mu psi] / rho`
/// (gauge covariant, contravariant components `(p^0, p^1)`).
#[derive(Debug, Clone)]
pub struct MomentumDensity {
    pub rho: Vec<f64>,
    /// `Re[psi^dagger i d_t psi]`, `Re[psi^dagger (-i) d_x psi]`
    pub current: Vec<[f64; 2]>,
    pub p: Vec<[f64; 2]>,
    /// Sites whose density is above the floor.
    pub valid: Vec<bool>,
}

/// Relative density floor below which the local momentum is undefined.
pub const DENSITY_FLOOR: f64 = 1e-12;

pub(crate) fn time_derivative(psi: &SpinorField, t: usize, x: usize) -> Spinor {
    let g = &psi.grid;
    g.time_stencil(t)
        .iter()
        .map(|&(ts, w)| psi.at(ts, x) * C64::new(w, 0.0))
        .sum()
}

pub(crate) fn space_derivative(psi: &SpinorField, t: usize, x: usize) -> Spinor {
    let g = &psi.grid;
    g.space_stencil(x)
        .iter()
        .map(|&(xs, w)| psi.at(t, xs) * C64::new(w, 0.0))
        .sum()
}

impl MomentumDensity {
    pub fn compute(psi: &SpinorField, pot: &Potential) -> Result<Self> {
        pot.check_grid(&psi.grid)?;
        let g = psi.grid;
        let i = C64::new(0.0, 1.0);
        let rho = psi.densities();
        let max_rho = rho.iter().copied().fold(0.0, f64::max);
        let floor = DENSITY_FLOOR * max_rho;
        let rows: Vec<([f64; 2], [f64; 2], bool)> = (0..g.len())
            .into_par_iter()
            .map(|site| {
                let (t, x) = g.coords(site);
                let v = psi.at(t, x);
                let j0 = v.dotc(&(time_derivative(psi, t, x) * i)).re;
                let j1 = v.dotc(&(space_derivative(psi, t, x) * -i)).re;
                let r = rho[site];
                if r > floor && r > 0.0 {
                    let a = pot.at(t, x);
                    let e = pot.charge;
                    ([j0, j1], [j0 / r - e * a[0], j1 / r - e * a[1]], true)
                } else {
                    ([j0, j1], [0.0, 0.0], false)
                }
            })
            .collect();
        let mut current = Vec::with_capacity(rows.len());
        let mut p = Vec::with_capacity(rows.len());
        let mut valid = Vec::with_capacity(rows.len());
        for (c, m, ok) in rows {
            current.push(c);
            p.push(m);
            valid.push(ok);
        }
        Ok(Self {
            rho,
            current,
            p,
            valid,
        })
    }

    pub fn excluded_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| !**v).count() as f64 / self.valid.len().max(1) as f64
    }
}

/// Two-point evaluation strategy.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoPointOptions {
    pub kernel: KernelChoice,
    /// Above this many site pairs the double sum is sampled.
    pub pair_threshold: usize,
    /// Partner sites sampled per first site in the sampled path.
    pub partners_per_site: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for TwoPointOptions {
    fn default() -> Self {
        Self {
            kernel: KernelChoice::Covariant,
            pair_threshold: 1 << 26,
            partners_per_site: 256,
            batches: 16,
            seed: 0,
        }
    }
}

/// Separation four-vector `x_a - x_b` (1+1D, minimum image in space).
#[inline]
pub fn separation(g: &SpacetimeGrid, a: usize, b: usize) -> [f64; 4] {
    let (ta, xa) = g.coords(a);
    let (tb, xb) = g.coords(b);
    [
        (ta as f64 - tb as f64) * g.dt,
        g.displacement(xa, xb),
        0.0,
        0.0,
    ]
}

/// `<<O2>>_2 = sum rho_a rho_b f(x_a - x_b) O2(a, b) / sum rho_a rho_b f(x_a - x_b)`.
///
/// `op` returns `None` for pairs that must be excluded from both sums.
pub fn expect_2(
    psi: &SpinorField,
    opts: &TwoPointOptions,
    op: &(dyn Fn(usize, usize, [f64; 4]) -> Option<f64> + Sync),
) -> Result<Estimate> {
    norm_4d(psi)?;
    let g = psi.grid;
    let rho = psi.densities();
    let n = g.len();
    let batches = opts.batches.max(2);
    // Per batch: (num, den, excluded pairs, considered pairs)
    let per_site =
        |a: usize, partners: &mut dyn Iterator<Item = usize>| -> (f64, f64, usize, usize) {
            let mut acc = (0.0, 0.0, 0usize, 0usize);
            if rho[a] == 0.0 {
                return acc;
            }
            for b in partners {
                let z = separation(&g, a, b);
                let f = kernel_f2(z, opts.kernel);
                if f == 0.0 {
                    continue;
                }
                acc.3 += 1;
                let w = rho[a] * rho[b] * f;
                match op(a, b, z) {
                    Some(o) => {
                        acc.0 += w * o;
                        acc.1 += w;
                    }
                    None => acc.2 += 1,
                }
            }
            acc
        };
    let sampled = n.saturating_mul(n) > opts.pair_threshold;
    let rows: Vec<(f64, f64, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|a| {
            if sampled {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(a as u64);
                let mut it = (0..opts.partners_per_site).map(|_| rng.gen_range(0..n));
                per_site(a, &mut it)
            } else {
                per_site(a, &mut (0..n))
            }
        })
        .collect();
    let mut batch = vec![(0.0, 0.0); batches];
    let (mut num, mut den, mut excl, mut seen) = (0.0, 0.0, 0usize, 0usize);
    for (a, r) in rows.iter().enumerate() {
        num += r.0;
        den += r.1;
        excl += r.2;
        seen += r.3;
        batch[a % batches].0 += r.0;
        batch[a % batches].1 += r.1;
    }
    let den_err = if sampled {
        batch_stderr(&batch.iter().map(|b| b.1).collect::<Vec<_>>()) * batches as f64
    } else {
        0.0
    };
    if den <= 0.0 || den <= 2.0 * den_err {
        return Err(Error::DegenerateDenominator {
            value: den,
            stderr: den_err,
        });
    }
    let value = num / den;
    let stderr = if sampled {
        ratio_batch_stderr(&batch)
    } else {
        0.0
    };
    Ok(Estimate {
        value,
        stderr,
        excluded_fraction: if seen == 0 {
            0.0
        } else {
            excl as f64 / seen as f64
        },
    })
}

/// Standard error of the mean of batch values.
pub(crate) fn batch_stderr(v: &[f64]) -> f64 {
    let k = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (var / k).sqrt()
}

/// Standard error of `sum num / sum den` from per-batch ratios.
pub(crate) fn ratio_batch_stderr(batches: &[(f64, f64)]) -> f64 {
    let ratios: Vec<f64> = batches
        .iter()
        .filter(|b| b.1 > 0.0)
        .map(|b| b.0 / b.1)
        .collect();
    batch_stderr(&ratios)
}

/// Position uncertainty `<<-(x1 - x2)^2>>_2`.
pub fn delta_x2(psi: &SpinorField, opts: &TwoPointOptions) -> Result<Estimate> {
    expect_2(psi, opts, &|_, _, z| Some(z[1] * z[1] - z[0] * z[0]))
}

/// Momentum uncertainty `<<-(p(x1) - p(x2))^2>>_2` with the local momentum density.
pub fn delta_p2(psi: &SpinorField, pot: &Potential, opts: &TwoPointOptions) -> Result<Estimate> {
    let md = MomentumDensity::compute(psi, pot)?;
    expect_2(psi, opts, &|a, b, _| {
        if !md.valid[a] || !md.valid[b] {
            return None;
        }
        let q0 = md.p[a][0] - md.p[b][0];
        let q1 = md.p[a][1] - md.p[b][1];
        Some(q1 * q1 - q0 * q0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirac::build_gamma_set;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn plane_wave(g: SpacetimeGrid, e: f64, k: f64, amp: Spinor) -> SpinorField {
        SpinorField::from_fn(g, |t, x| {
            amp * C64::from_polar(1.0, k * g.position(x) - e * g.time(t))
        })
    }

    fn up() -> Spinor {
        Spinor::new(
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        )
    }

    fn gaussian(g: SpacetimeGrid, center: f64, sigma: f64) -> SpinorField {
        SpinorField::from_fn(g, |t, x| {
            let d = g.position(x) - center;
            up() * C64::from_polar((-d * d / (4.0 * sigma * sigma)).exp(), -g.time(t))
        })
    }

    #[test]
    fn identity_expectation_is_one() {
        let g = SpacetimeGrid::new(4, 5, 0.1, 0.2).unwrap();
        let psi = SpinorField::from_fn(g, |t, x| up() * C64::new(1.0 + t as f64, x as f64));
        let v = expect_1(&Identity, &psi).unwrap();
        assert_relative_eq!(v.re, 1.0, epsilon = 1e-14);
        assert!(v.im.abs() < 1e-14);
    }

    #[test]
    fn expect_1_is_scale_invariant_and_rejects_zero() {
        let g = SpacetimeGrid::new(4, 5, 0.1, 0.2).unwrap();
        let psi = SpinorField::from_fn(g, |t, x| {
            Spinor::new(
                C64::new(1.0, t as f64),
                C64::new(0.2, 0.0),
                C64::new(0.0, x as f64 * 0.1),
                C64::new(0.3, 0.0),
            )
        });
        let g0 = build_gamma_set().gamma[0];
        let a = expect_1(&g0, &psi).unwrap();
        let b = expect_1(&g0, &psi.scaled(C64::new(2.0, -1.0))).unwrap();
        assert!((a - b).norm() < 1e-14);
        assert!(matches!(
            expect_1(&g0, &SpinorField::zeros(g)),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn gamma0_on_positive_energy_mode_is_m_over_e() {
        // Free positive-energy spinor u(p) = (E + m, 0, 0, p)^T (spin up, motion along x).
        let (m, p) = (1.0f64, 0.15f64);
        let e = (m * m + p * p).sqrt();
        let u = Spinor::new(
            C64::new(e + m, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(p, 0.0),
        );
        let g = SpacetimeGrid::new(3, 8, 0.1, 0.25).unwrap();
        let psi = plane_wave(g, e, p, u);
        let v = expect_1(&build_gamma_set().gamma[0], &psi).unwrap();
        assert_relative_eq!(v.re, m / e, epsilon = 1e-12);
        assert!(v.re > 1.0 - p * p / (2.0 * m * m) - 1e-3);
    }

    #[test]
    fn plane_wave_momentum_density_is_lattice_wavenumber() {
        let g = SpacetimeGrid::new(6, 16, 0.05, 0.25).unwrap();
        let k = 2.0 * PI * 3.0 / g.length();
        let e = 1.3;
        let psi = plane_wave(g, e, k, up());
        let pot = Potential::zero(&g, 1.0);
        let md = MomentumDensity::compute(&psi, &pot).unwrap();
        let p1 = (k * g.dx).sin() / g.dx;
        let p0 = (e * g.dt).sin() / g.dt;
        for t in 1..g.n_t - 1 {
            for x in 0..g.n_x {
                let s = g.index(t, x);
                assert_relative_eq!(md.p[s][1], p1, epsilon = 1e-12);
                assert_relative_eq!(md.p[s][0], p0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn momentum_density_subtracts_potential() {
        let g = SpacetimeGrid::new(4, 8, 0.05, 0.25).unwrap();
        let psi = plane_wave(g, 1.0, 0.0, up());
        let pot = Potential::from_fn(&g, 2.0, |_, _| [0.1, 0.3, 0.0, 0.0]);
        let md = MomentumDensity::compute(&psi, &pot).unwrap();
        let s = g.index(1, 2);
        assert_relative_eq!(md.p[s][1], -0.6, epsilon = 1e-12);
        assert_relative_eq!(md.p[s][0], (g.dt).sin() / g.dt - 0.2, epsilon = 1e-12);
    }

    #[test]
    fn constant_operator_gives_one() {
        let g = SpacetimeGrid::new(10, 12, 0.1, 0.2).unwrap();
        let psi = gaussian(g, 1.2, 0.4);
        let v = expect_2(&psi, &TwoPointOptions::default(), &|_, _, _| Some(1.0)).unwrap();
        assert_relative_eq!(v.value, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_operator_is_label_symmetric() {
        let g = SpacetimeGrid::new(8, 10, 0.1, 0.2).unwrap();
        let psi = gaussian(g, 0.7, 0.3);
        let opts = TwoPointOptions::default();
        let a = expect_2(&psi, &opts, &|a, b, _| Some((a as f64 - b as f64).powi(2))).unwrap();
        let b = expect_2(&psi, &opts, &|a, b, _| Some((b as f64 - a as f64).powi(2))).unwrap();
        assert_relative_eq!(a.value, b.value, max_relative = 1e-14);
    }

    #[test]
    fn squared_distance_on_stationary_density() {
        // Stationary density: the pair sum factorizes into a spatial double sum
        // weighted by the number of spacelike time pairs at each separation.
        let g = SpacetimeGrid::new(160, 40, 0.02, 0.1).unwrap();
        let psi = gaussian(g, 2.0, 0.3);
        let opts = TwoPointOptions {
            kernel: KernelChoice::InverseDistance,
            ..Default::default()
        };
        let got = expect_2(&psi, &opts, &|_, _, z| Some(z[1] * z[1])).unwrap();

        let rho: Vec<f64> = (0..g.n_x).map(|x| psi.at(0, x).norm_squared()).collect();
        let time_weight = |d: f64| -> f64 {
            let mut w = 0.0;
            for lag in -(g.n_t as i64 - 1)..(g.n_t as i64) {
                if (lag as f64 * g.dt).abs() < d - 1e-12 {
                    w += (g.n_t as i64 - lag.abs()) as f64;
                }
            }
            w / (2.0 * d)
        };
        let (mut num, mut den) = (0.0, 0.0);
        for a in 0..g.n_x {
            for b in 0..g.n_x {
                let d = g.separation(a, b);
                if d == 0.0 {
                    continue;
                }
                let w = rho[a] * rho[b] * time_weight(d);
                num += w * d * d;
                den += w;
            }
        }
        assert_relative_eq!(got.value, num / den, max_relative = 1e-10);

        // Continuum identity: twice the spatial variance, up to lattice effects.
        let tot: f64 = rho.iter().sum();
        let mean: f64 = (0..g.n_x).map(|x| rho[x] * g.position(x)).sum::<f64>() / tot;
        let var: f64 = (0..g.n_x)
            .map(|x| rho[x] * (g.position(x) - mean).powi(2))
            .sum::<f64>()
            / tot;
        assert_relative_eq!(got.value, 2.0 * var, max_relative = 0.1);
    }

    #[test]
    fn position_uncertainty_scales_with_width_squared() {
        let g = SpacetimeGrid::new(120, 64, 0.02, 0.05).unwrap();
        let opts = TwoPointOptions {
            kernel: KernelChoice::InverseDistance,
            ..Default::default()
        };
        let a = delta_x2(&gaussian(g, 1.6, 0.12), &opts).unwrap().value;
        let b = delta_x2(&gaussian(g, 1.6, 0.24), &opts).unwrap().value;
        assert!(a > 0.0);
        assert_relative_eq!(b / a, 4.0, max_relative = 0.1);
    }

    #[test]
    fn position_uncertainty_is_translation_invariant() {
        let g = SpacetimeGrid::new(20, 32, 0.05, 0.1).unwrap();
        let opts = TwoPointOptions::default();
        let psi = gaussian(g, 1.0, 0.3);
        let shifted = SpinorField::from_fn(g, |t, x| *psi.at(t, (x + g.n_x - 5) % g.n_x));
        let a = delta_x2(&psi, &opts).unwrap().value;
        let b = delta_x2(&shifted, &opts).unwrap().value;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn plane_wave_has_no_momentum_spread() {
        let g = SpacetimeGrid::new(12, 16, 0.05, 0.2).unwrap();
        let psi = plane_wave(g, 1.1, 2.0 * PI * 2.0 / g.length(), up());
        let v = delta_p2(&psi, &Potential::zero(&g, 1.0), &TwoPointOptions::default()).unwrap();
        assert!(v.value.abs() < 1e-20, "{}", v.value);
    }

    fn two_momenta(g: SpacetimeGrid, n: f64) -> SpinorField {
        let k = 2.0 * PI * n / g.length();
        let e = (1.0 + k * k).sqrt();
        let a = plane_wave(g, e, k, up());
        let b = plane_wave(g, e, -k, up());
        a.axpy(C64::new(0.5, 0.0), &b).unwrap()
    }

    #[test]
    fn counter_propagating_superposition_has_momentum_spread() {
        let g = SpacetimeGrid::new(16, 32, 0.05, 0.1).unwrap();
        let pot = Potential::zero(&g, 1.0);
        let opts = TwoPointOptions::default();
        let v1 = delta_p2(&two_momenta(g, 1.0), &pot, &opts).unwrap().value;
        let v2 = delta_p2(&two_momenta(g, 2.0), &pot, &opts).unwrap().value;
        assert!(v1 > 0.0);
        assert!(v2 > 3.0 * v1, "{v1} {v2}");
        // Oracle: direct double loop over the same momentum density.
        let psi = two_momenta(g, 1.0);
        let md = MomentumDensity::compute(&psi, &pot).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for a in 0..g.len() {
            for b in 0..g.len() {
                let z = separation(&g, a, b);
                let f = kernel_f2(z, KernelChoice::Covariant);
                let w = md.rho[a] * md.rho[b] * f;
                let q = [md.p[a][0] - md.p[b][0], md.p[a][1] - md.p[b][1]];
                num += w * (q[1] * q[1] - q[0] * q[0]);
                den += w;
            }
        }
        assert_relative_eq!(v1, num / den, max_relative = 1e-10);
    }

    #[test]
    fn global_phase_leaves_momentum_spread_unchanged() {
        let g = SpacetimeGrid::new(10, 16, 0.05, 0.2).unwrap();
        let pot = Potential::zero(&g, 1.0);
        let psi = two_momenta(g, 1.0);
        let opts = TwoPointOptions::default();
        let a = delta_p2(&psi, &pot, &opts).unwrap().value;
        let b = delta_p2(&psi.scaled(C64::from_polar(3.0, 0.7)), &pot, &opts)
            .unwrap()
            .value;
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn sampled_path_agrees_with_exact_sum() {
        let g = SpacetimeGrid::new(24, 24, 0.05, 0.1).unwrap();
        let psi = gaussian(g, 1.2, 0.3);
        let exact = delta_x2(&psi, &TwoPointOptions::default()).unwrap();
        let sampled = delta_x2(
            &psi,
            &TwoPointOptions {
                pair_threshold: 0,
                partners_per_site: 400,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(sampled.stderr > 0.0);
        assert!(
            (sampled.value - exact.value).abs() < 5.0 * sampled.stderr,
            "{sampled:?} vs {exact:?}"
        );
    }

    #[test]
    fn single_column_density_has_degenerate_denominator() {
        let g = SpacetimeGrid::new(6, 8, 0.1, 0.2).unwrap();
        let psi = SpinorField::from_fn(g, |_, x| if x == 3 { up() } else { Spinor::zeros() });
        assert!(matches!(
            delta_x2(&psi, &TwoPointOptions::default()),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn time_translation_leaves_two_point_values_unchanged() {
        let g = SpacetimeGrid::new(12, 16, 0.05, 0.1).unwrap();
        let psi = two_momenta(g, 1.0);
        let moved = SpinorField {
            grid: g.with_origin(3.7),
            values: psi.values.clone(),
        };
        let pot = Potential::zero(&g, 1.0);
        let opts = TwoPointOptions::default();
        assert_eq!(
            delta_p2(&psi, &pot, &opts).unwrap().value,
            delta_p2(&moved, &pot, &opts).unwrap().value
        );
    }
}
