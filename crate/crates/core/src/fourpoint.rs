//! Four-point expectations over mutually spacelike site quadruples and the
//! uncertainty functional `A2 = <<dx^2 dp^2>>_4`.
//!
//! Quadruples are drawn once per run and frozen, so `A2` is a deterministic,
//! differentiable function of the field. The proposal picks four distinct
//! columns, a uniform first slice, and each remaining slice uniformly inside
//! its spacelike window around the first; the remaining pairs are accepted by
//! rejection. Every accepted quadruple is stored together with its time
//! mirror image, which makes the estimator exactly invariant under time
//! reversal of the field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dirac::Potential;
use crate::error::{Error, Result};
use crate::expectations::{
    batch_stderr, ratio_batch_stderr, space_derivative, time_derivative, Estimate, MomentumDensity,
};
use crate::grid::{check_same_grid, norm_4d, SpacetimeGrid, SpinorField, C64};
use crate::weight::WeightTable;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FourPointOptions {
    /// Number of accepted quadruples to keep (mirror images included).
    pub samples: usize,
    pub max_attempts: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for FourPointOptions {
    fn default() -> Self {
        Self {
            samples: 20_000,
            max_attempts: 20_000_000,
            batches: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    /// Site indices of the four points.
    pub sites: [usize; 4],
    /// Inverse proposal probability divided by `W` (up to a global constant).
    pub factor: f64,
}

/// Frozen set of mutually spacelike quadruples for one grid.
#[derive(Debug, Clone)]
pub struct FourPointSamples {
    pub grid: SpacetimeGrid,
    pub quads: Vec<Quad>,
    pub attempts: usize,
    pub seed: u64,
    pub batches: usize,
}

/// Largest step count `n` with `n * dt < d` (strict, robust to round-off).
fn max_lag(d: f64, dt: f64) -> usize {
    let r = d / dt;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.max(1.0) {
        (n as usize).saturating_sub(1)
    } else {
        r.floor() as usize
    }
}

impl FourPointSamples {
    pub fn draw(
        grid: &SpacetimeGrid,
        opts: &FourPointOptions,
        table: &mut WeightTable,
    ) -> Result<Self> {
        let g = *grid;
        if g.n_x < 4 {
            return Err(Error::InvalidGrid(format!(
                "four-point sampling needs at least 4 spatial sites, got {}",
                g.n_x
            )));
        }
        if opts.samples == 0 {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "must be positive".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut quads = Vec::with_capacity(opts.samples + 1);
        let mut attempts = 0;
        while quads.len() < opts.samples && attempts < opts.max_attempts {
            attempts += 1;
            let mut xs = [0usize; 4];
            for k in 0..4 {
                loop {
                    let x = rng.gen_range(0..g.n_x);
                    if !xs[..k].contains(&x) {
                        xs[k] = x;
                        break;
                    }
                }
            }
            let steps = [
                g.separation_steps(xs[0], xs[1]),
                g.separation_steps(xs[0], xs[2]),
                g.separation_steps(xs[0], xs[3]),
                g.separation_steps(xs[1], xs[2]),
                g.separation_steps(xs[1], xs[3]),
                g.separation_steps(xs[2], xs[3]),
            ];
            let lags = steps.map(|s| max_lag(s as f64 * g.dx, g.dt));
            let t1 = rng.gen_range(0..g.n_t);
            let mut ts = [t1, 0, 0, 0];
            let mut count = 1.0;
            for k in 1..4 {
                let lag = lags[k - 1];
                let lo = t1.saturating_sub(lag);
                let hi = (t1 + lag).min(g.n_t - 1);
                ts[k] = rng.gen_range(lo..=hi);
                count *= (hi - lo + 1) as f64;
            }
            let ok = ts[1].abs_diff(ts[2]) <= lags[3]
                && ts[1].abs_diff(ts[3]) <= lags[4]
                && ts[2].abs_diff(ts[3]) <= lags[5];
            if !ok {
                continue;
            }
            let w = table.get(steps.map(|s| s as u32));
            if w <= 0.0 {
                continue;
            }
            let factor = count / w;
            let sites = [0, 1, 2, 3].map(|k| g.index(ts[k], xs[k]));
            let mirror = [0, 1, 2, 3].map(|k| g.index(g.n_t - 1 - ts[k], xs[k]));
            quads.push(Quad { sites, factor });
            quads.push(Quad {
                sites: mirror,
                factor,
            });
        }
        if quads.is_empty() {
            return Err(Error::NoSpacelikeSupport { attempts });
        }
        if quads.len() < opts.samples {
            log::warn!(
                "four-point sampler stopped at {} of {} samples",
                quads.len(),
                opts.samples
            );
        }
        Ok(Self {
            grid: g,
            quads,
            attempts,
            seed: opts.seed,
            batches: opts.batches.max(2),
        })
    }

    pub fn len(&self) -> usize {
        self.quads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quads.is_empty()
    }

    /// Acceptance rate of the proposal.
    pub fn acceptance(&self) -> f64 {
        self.quads.len() as f64 / (2 * self.attempts.max(1)) as f64
    }

    fn batch_of(&self, s: usize) -> usize {
        // Mirror pairs stay in the same batch.
        (s / 2) * self.batches / self.quads.len().div_ceil(2)
    }
}

/// What a four-point operator sees at one sample.
#[derive(Debug, Clone, Copy)]
pub struct FourPointContext {
    /// `x1 - x2` as `(t, x)`.
    pub z12: [f64; 2],
    /// Local momentum density `(p^0, p^1)` at each point.
    pub p: [[f64; 2]; 4],
}

fn context(g: &SpacetimeGrid, q: &Quad, md: &MomentumDensity) -> FourPointContext {
    let (t1, x1) = g.coords(q.sites[0]);
    let (t2, x2) = g.coords(q.sites[1]);
    FourPointContext {
        z12: [(t1 as f64 - t2 as f64) * g.dt, g.displacement(x1, x2)],
        p: q.sites.map(|s| md.p[s]),
    }
}

/// `<<O4>>_4` with a shared-sample ratio estimator and batch standard error.
/// Samples touching a site below the density floor are dropped.
pub fn expect_4(
    samples: &FourPointSamples,
    psi: &SpinorField,
    pot: &Potential,
    op: &dyn Fn(&FourPointContext) -> f64,
) -> Result<Estimate> {
    check_same_grid(&samples.grid, &psi.grid)?;
    norm_4d(psi)?;
    let md = MomentumDensity::compute(psi, pot)?;
    let g = &samples.grid;
    let mut batches = vec![(0.0, 0.0); samples.batches];
    let (mut num, mut den) = (0.0, 0.0);
    let mut excluded = 0usize;
    for (s, q) in samples.quads.iter().enumerate() {
        if q.sites.iter().any(|&i| !md.valid[i]) {
            excluded += 1;
            continue;
        }
        let w = q.factor * q.sites.iter().map(|&i| md.rho[i]).product::<f64>();
        let o = op(&context(g, q, &md));
        num += w * o;
        den += w;
        let b = samples.batch_of(s);
        batches[b].0 += w * o;
        batches[b].1 += w;
    }
    let den_err =
        batch_stderr(&batches.iter().map(|b| b.1).collect::<Vec<_>>()) * samples.batches as f64;
    if den <= 0.0 {
        return Err(Error::DegenerateDenominator {
            value: den,
            stderr: den_err,
        });
    }
    Ok(Estimate {
        value: num / den,
        stderr: ratio_batch_stderr(&batches),
        excluded_fraction: excluded as f64 / samples.len() as f64,
    })
}

/// `{(x1 - x2)^mu [p_mu(x3) - p_mu(x4)]}^2`.
pub fn uncertainty_product(c: &FourPointContext) -> f64 {
    let q0 = c.p[2][0] - c.p[3][0];
    let q1 = c.p[2][1] - c.p[3][1];
    let zq = c.z12[0] * q0 - c.z12[1] * q1;
    zq * zq
}

/// `A2` on a frozen sample set.
pub fn a2(samples: &FourPointSamples, psi: &SpinorField, pot: &Potential) -> Result<Estimate> {
    expect_4(samples, psi, pot, &uncertainty_product)
}

/// `A2` and its gradient. The gradient is returned as a field whose real
/// layout ([`SpinorField::to_real_vec`]) is `dA2 / d(Re psi, Im psi)`.
pub fn a2_with_gradient(
    samples: &FourPointSamples,
    psi: &SpinorField,
    pot: &Potential,
) -> Result<(Estimate, SpinorField)> {
    let est = a2(samples, psi, pot)?;
    let g = samples.grid;
    let md = MomentumDensity::compute(psi, pot)?;
    let a2v = est.value;

    let mut den = 0.0;
    let mut rho_bar = vec![0.0; g.len()];
    let mut p_bar = vec![[0.0f64; 2]; g.len()];
    for q in &samples.quads {
        if q.sites.iter().any(|&i| !md.valid[i]) {
            continue;
        }
        let w = q.factor * q.sites.iter().map(|&i| md.rho[i]).product::<f64>();
        den += w;
        let c = context(&g, q, &md);
        let o = uncertainty_product(&c);
        // d/d rho_k of w (O - A2)
        for &i in &q.sites {
            rho_bar[i] += w * (o - a2v) / md.rho[i];
        }
        // d/dp of w O
        let q0 = c.p[2][0] - c.p[3][0];
        let q1 = c.p[2][1] - c.p[3][1];
        let zq = c.z12[0] * q0 - c.z12[1] * q1;
        let dq = [2.0 * zq * c.z12[0] * w, -2.0 * zq * c.z12[1] * w];
        for mu in 0..2 {
            p_bar[q.sites[2]][mu] += dq[mu];
            p_bar[q.sites[3]][mu] -= dq[mu];
        }
    }

    // Back through p = j / rho - eA and j = Re[psi^dagger (i d_t, -i d_x) psi].
    let half_i = C64::new(0.0, 0.5);
    let mut grad = SpinorField::zeros(g);
    for site in 0..g.len() {
        let (t, x) = g.coords(site);
        let r = md.rho[site];
        let mut rb = rho_bar[site];
        let pb = p_bar[site];
        let v = *psi.at(t, x);
        if md.valid[site] && (pb[0] != 0.0 || pb[1] != 0.0) {
            let jb = [pb[0] / r, pb[1] / r];
            rb -= (pb[0] * md.current[site][0] + pb[1] * md.current[site][1]) / (r * r);
            // j0: (i/2) D_t psi at the site, -(i/2) c psi_a at stencil partners.
            *grad.at_mut(t, x) += time_derivative(psi, t, x) * (half_i * jb[0]);
            for (ts, c) in g.time_stencil(t) {
                *grad.at_mut(ts, x) -= v * (half_i * c * jb[0]);
            }
            // j1: (-i/2) D_x psi at the site, (i/2) c psi_a at stencil partners.
            *grad.at_mut(t, x) -= space_derivative(psi, t, x) * (half_i * jb[1]);
            for (xs, c) in g.space_stencil(x) {
                *grad.at_mut(t, xs) += v * (half_i * c * jb[1]);
            }
        }
        if rb != 0.0 {
            *grad.at_mut(t, x) += v * C64::new(rb, 0.0);
        }
    }
    // Wirtinger derivative -> real gradient, divided by the denominator.
    grad.scale(C64::new(2.0 / den, 0.0));
    Ok((est, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Spinor;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn up() -> Spinor {
        Spinor::new(
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        )
    }

    fn packet(g: SpacetimeGrid, centers: &[(f64, f64)], sigma: f64) -> SpinorField {
        SpinorField::from_fn(g, |t, x| {
            let amp: f64 = centers
                .iter()
                .map(|&(c, a)| {
                    let d = g.displacement(x, 0) - c;
                    a * (-d * d / (4.0 * sigma * sigma)).exp()
                })
                .sum();
            up() * C64::from_polar(amp, -g.time(t))
        })
    }

    fn samples(g: &SpacetimeGrid, n: usize, seed: u64) -> FourPointSamples {
        let opts = FourPointOptions {
            samples: n,
            seed,
            ..Default::default()
        };
        FourPointSamples::draw(g, &opts, &mut WeightTable::new()).unwrap()
    }

    #[test]
    fn strict_lag_bound() {
        assert_eq!(max_lag(0.1, 0.02), 4);
        assert_eq!(max_lag(0.1, 0.03), 3);
        assert_eq!(max_lag(0.05, 0.1), 0);
    }

    #[test]
    fn samples_are_mutually_spacelike_and_mirrored() {
        let g = SpacetimeGrid::new(12, 10, 0.05, 0.1).unwrap();
        let s = samples(&g, 400, 3);
        for pair in s.quads.chunks(2) {
            for q in pair {
                for a in 0..4 {
                    for b in a + 1..4 {
                        let (ta, xa) = g.coords(q.sites[a]);
                        let (tb, xb) = g.coords(q.sites[b]);
                        let z0 = (ta as f64 - tb as f64) * g.dt;
                        assert!(z0.abs() < g.separation(xa, xb), "{q:?}");
                    }
                }
            }
            let (ta, _) = g.coords(pair[0].sites[0]);
            let (tb, _) = g.coords(pair[1].sites[0]);
            assert_eq!(ta + tb, g.n_t - 1);
        }
    }

    #[test]
    fn too_narrow_grid_is_rejected() {
        let g = SpacetimeGrid::new(6, 3, 0.05, 0.1).unwrap();
        assert!(
            FourPointSamples::draw(&g, &FourPointOptions::default(), &mut WeightTable::new())
                .is_err()
        );
    }

    #[test]
    fn constant_operator_gives_exactly_one() {
        let g = SpacetimeGrid::new(12, 12, 0.05, 0.1).unwrap();
        let s = samples(&g, 2000, 1);
        let psi = packet(g, &[(0.0, 1.0)], 0.3);
        let pot = Potential::zero(&g, 1.0);
        let v = expect_4(&s, &psi, &pot, &|_| 1.0).unwrap();
        assert_relative_eq!(v.value, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sampler_reproduces_the_exact_quadruple_sum() {
        // Oracle: exhaustive sum over all quadruples on a tiny grid.
        let g = SpacetimeGrid::new(4, 5, 0.06, 0.1).unwrap();
        let psi = packet(g, &[(0.0, 1.0), (0.2, 0.6)], 0.1);
        let pot = Potential::zero(&g, 1.0);
        let mut table = WeightTable::new();
        let op = |c: &FourPointContext| c.z12[1] * c.z12[1] + 0.3 * c.z12[0];
        let sites: Vec<(usize, usize)> = (0..g.len()).map(|s| g.coords(s)).collect();
        let rho = psi.densities();
        let (mut num, mut den) = (0.0, 0.0);
        for a in 0..g.len() {
            for b in 0..g.len() {
                for c in 0..g.len() {
                    for d in 0..g.len() {
                        let idx = [a, b, c, d];
                        let mut ok = true;
                        for i in 0..4 {
                            for j in i + 1..4 {
                                let (ti, xi) = sites[idx[i]];
                                let (tj, xj) = sites[idx[j]];
                                let dt = (ti as f64 - tj as f64).abs() * g.dt;
                                if !(dt < g.separation(xi, xj) - 1e-12) {
                                    ok = false;
                                }
                            }
                        }
                        if !ok {
                            continue;
                        }
                        let x = idx.map(|i| sites[i].1);
                        let steps = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
                            .map(|(i, j)| g.separation_steps(x[i], x[j]) as u32);
                        let w = rho[a] * rho[b] * rho[c] * rho[d] / table.get(steps);
                        let z = [
                            (sites[a].0 as f64 - sites[b].0 as f64) * g.dt,
                            g.displacement(x[0], x[1]),
                        ];
                        num += w * (z[1] * z[1] + 0.3 * z[0]);
                        den += w;
                    }
                }
            }
        }
        let exact = num / den;
        let s = samples(&g, 200_000, 9);
        let est = expect_4(&s, &psi, &pot, &op).unwrap();
        assert!(
            (est.value - exact).abs() < 4.0 * est.stderr + 1e-12,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn relabelling_symmetric_operator_is_invariant() {
        let g = SpacetimeGrid::new(12, 12, 0.05, 0.1).unwrap();
        let s = samples(&g, 3000, 2);
        let psi = packet(g, &[(-0.3, 1.0), (0.3, 1.0)], 0.15);
        let pot = Potential::zero(&g, 1.0);
        let a = a2(&s, &psi, &pot).unwrap().value;
        let swapped = FourPointSamples {
            quads: s
                .quads
                .iter()
                .map(|q| Quad {
                    sites: [q.sites[1], q.sites[0], q.sites[3], q.sites[2]],
                    factor: q.factor,
                })
                .collect(),
            ..s.clone()
        };
        let b = a2(&swapped, &psi, &pot).unwrap().value;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    fn two_momenta(g: SpacetimeGrid, k: f64, amp2: f64) -> SpinorField {
        let e = (1.0 + k * k).sqrt();
        SpinorField::from_fn(g, |t, x| {
            let ph = |kk: f64| C64::from_polar(1.0, kk * g.position(x) - e * g.time(t));
            up() * (ph(k) + ph(-k) * amp2)
        })
    }

    #[test]
    fn plane_wave_has_zero_a2() {
        let g = SpacetimeGrid::new(12, 16, 0.05, 0.1).unwrap();
        let s = samples(&g, 2000, 4);
        let k = 2.0 * PI / g.length();
        let psi = two_momenta(g, k, 0.0);
        let v = a2(&s, &psi, &Potential::zero(&g, 1.0)).unwrap();
        assert!(v.value.abs() < 1e-18, "{v:?}");
    }

    #[test]
    fn a2_is_non_negative_and_scale_invariant() {
        let g = SpacetimeGrid::new(12, 16, 0.05, 0.1).unwrap();
        let s = samples(&g, 2000, 5);
        let pot = Potential::zero(&g, 1.0);
        let psi = two_momenta(g, 2.0 * PI / g.length(), 0.5);
        let a = a2(&s, &psi, &pot).unwrap().value;
        assert!(a > 0.0);
        let b = a2(&s, &psi.scaled(C64::from_polar(0.3, 2.1)), &pot)
            .unwrap()
            .value;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn eigenstate_has_smaller_a2_than_two_humped_superposition() {
        // Standing wave from two momenta vs a single momentum with the same |k|.
        let g = SpacetimeGrid::new(16, 24, 0.05, 0.1).unwrap();
        let s = samples(&g, 6000, 6);
        let pot = Potential::zero(&g, 1.0);
        let k = 2.0 * PI / g.length();
        let single = a2(&s, &two_momenta(g, k, 0.0), &pot).unwrap().value;
        let mixed = a2(&s, &two_momenta(g, k, 0.7), &pot).unwrap().value;
        assert!(single < mixed, "{single} vs {mixed}");
    }

    #[test]
    fn a2_grows_with_separation_of_components() {
        let g = SpacetimeGrid::new(16, 32, 0.05, 0.1).unwrap();
        let s = samples(&g, 8000, 7);
        let pot = Potential::zero(&g, 1.0);
        let k = 2.0 * PI / g.length();
        let values: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&n| a2(&s, &two_momenta(g, n * k, 0.6), &pot).unwrap().value)
            .collect();
        assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let g = SpacetimeGrid::new(8, 8, 0.05, 0.1).unwrap();
        let s = samples(&g, 3000, 8);
        let pot = Potential::from_fn(&g, 1.0, |t, x| {
            [0.1 * (x as f64).sin(), 0.05 * t as f64, 0.0, 0.0]
        });
        let psi = SpinorField::from_fn(g, |t, x| {
            let a = (0.3 * x as f64 + 0.2 * t as f64).sin();
            Spinor::new(
                C64::new(1.0 + 0.3 * a, 0.2 * t as f64),
                C64::new(0.1 * x as f64, -0.3),
                C64::new(0.05, 0.2 * a),
                C64::new(-0.1, 0.4 * a),
            )
        });
        let (_, grad) = a2_with_gradient(&s, &psi, &pot).unwrap();
        let gr = grad.to_real_vec();
        let base = psi.to_real_vec();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.gen_range(0..base.len());
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[k] += delta;
                a2(&s, &SpinorField::from_real_slice(g, &v).unwrap(), &pot)
                    .unwrap()
                    .value
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let scale = gr.iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(
                (fd - gr[k]).abs() < 1e-6 * scale,
                "coord {k}: fd {fd} analytic {}",
                gr[k]
            );
        }
    }
}
