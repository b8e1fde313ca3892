//! Zitterbewegung-driven population bookkeeping and `t_i` ensembles.
//!
//! Coefficients follow a prescribed smooth step
//! `C_j(tau) = C_j(0) + (C_j^end - C_j(0)) S(tau)`, which stands in for the
//! decay the action would produce. Populations then evolve only through the
//! opposite-energy beats
//! `d|C_j|^2/dt = -sgn(E_j) 2 Re sum_k C_j^* C_k' <chi_j|gamma^0|chi_k> e^{i phi_jk(t)}`
//! with `phi_jk(t) = int_0^t (E_j - E_k)(t' - t_i) dt'`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::C64;

/// `hbar` in eV s.
pub const HBAR_EV_S: f64 = 6.582_119_569e-16;
/// Electron rest energy in eV.
pub const ELECTRON_MASS_EV: f64 = 510_998.95;

/// Zitterbewegung period `2 pi / 2m = pi / m` in natural units.
pub fn zb_period(mass: f64) -> f64 {
    std::f64::consts::PI / mass
}

/// The same period in seconds for a rest energy given in eV.
pub fn zb_period_seconds(mass_ev: f64) -> f64 {
    zb_period(mass_ev) * HBAR_EV_S
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergyProfile {
    Constant {
        energy: f64,
    },
    /// `E(tau) = energy + slope tau`.
    Ramp {
        energy: f64,
        slope: f64,
    },
}

impl EnergyProfile {
    pub fn at(&self, tau: f64) -> f64 {
        match *self {
            Self::Constant { energy } => energy,
            Self::Ramp { energy, slope } => energy + slope * tau,
        }
    }

    fn parts(&self) -> (f64, f64) {
        match *self {
            Self::Constant { energy } => (energy, 0.0),
            Self::Ramp { energy, slope } => (energy, slope),
        }
    }
}

/// Smooth step `S` with `S(0) = 0` and `S -> 1` late.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    /// Gaussian-shaped rate (an erf step).
    Gaussian {
        center: f64,
        width: f64,
    },
    Tanh {
        center: f64,
        width: f64,
    },
    /// `1 - exp(-rate tau)`.
    Exponential {
        rate: f64,
    },
}

impl Envelope {
    /// Characteristic rate `1 / width`.
    pub fn rate(&self) -> f64 {
        match *self {
            Self::Gaussian { width, .. } | Self::Tanh { width, .. } => 1.0 / width,
            Self::Exponential { rate } => rate,
        }
    }

    fn raw(&self, tau: f64) -> f64 {
        match *self {
            Self::Gaussian { center, width } => 0.5 * (1.0 + libm::erf((tau - center) / width)),
            Self::Tanh { center, width } => 0.5 * (1.0 + ((tau - center) / width).tanh()),
            Self::Exponential { rate } => 1.0 - (-rate * tau).exp(),
        }
    }

    fn raw_rate(&self, tau: f64) -> f64 {
        match *self {
            Self::Gaussian { center, width } => {
                let u = (tau - center) / width;
                (-u * u).exp() / (width * std::f64::consts::PI.sqrt())
            }
            Self::Tanh { center, width } => {
                let s = 1.0 / ((tau - center) / width).cosh();
                0.5 * s * s / width
            }
            Self::Exponential { rate } => rate * (-rate * tau).exp(),
        }
    }

    pub fn step(&self, tau: f64) -> f64 {
        let s0 = self.raw(0.0);
        (self.raw(tau) - s0) / (1.0 - s0)
    }

    pub fn step_rate(&self, tau: f64) -> f64 {
        self.raw_rate(tau) / (1.0 - self.raw(0.0))
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gaussian { center, width } | Self::Tanh { center, width } => {
                width > 0.0 && center.is_finite()
            }
            Self::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok && self.raw(0.0) < 1.0 - 1e-12 {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "envelope",
                reason: format!("{self:?} is not a usable step"),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalMode {
    pub energy: EnergyProfile,
    /// `C_j(t_i; t_i)` as `[re, im]`.
    pub initial: [f64; 2],
    /// Coefficient after the drive has acted, `[re, im]`.
    #[serde(rename = "final")]
    pub end: [f64; 2],
}

impl ModalMode {
    fn c0(&self) -> C64 {
        C64::new(self.initial[0], self.initial[1])
    }

    fn delta(&self) -> C64 {
        C64::new(self.end[0], self.end[1]) - self.c0()
    }
}

#[derive(Debug, Clone)]
pub struct ModalSystem {
    pub mass: f64,
    pub modes: Vec<ModalMode>,
    /// `<chi_j|gamma^0|chi_k>`, Hermitian.
    pub gamma0: DMatrix<C64>,
    pub envelope: Envelope,
    /// Outcome groups (degenerate final states are summed); singletons by default.
    pub groups: Vec<Vec<usize>>,
    /// Pairs with `|E_j - E_k|` below this are excluded from the stationary form.
    pub gap_floor: f64,
}

impl ModalSystem {
    pub fn new(
        mass: f64,
        modes: Vec<ModalMode>,
        gamma0: DMatrix<C64>,
        envelope: Envelope,
    ) -> Result<Self> {
        let n = modes.len();
        if n == 0 || gamma0.nrows() != n || gamma0.ncols() != n {
            return Err(Error::InvalidParameter {
                name: "gamma0",
                reason: format!("expected {n}x{n} overlap matrix"),
            });
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "mass",
                reason: format!("{mass}"),
            });
        }
        if (&gamma0 - gamma0.adjoint())
            .iter()
            .any(|c| c.norm() > 1e-12)
        {
            return Err(Error::InvalidParameter {
                name: "gamma0",
                reason: "overlap matrix must be Hermitian".into(),
            });
        }
        envelope.validate()?;
        Ok(Self {
            mass,
            groups: (0..n).map(|j| vec![j]).collect(),
            modes,
            gamma0,
            envelope,
            gap_floor: 1e-6,
        })
    }

    /// Two positive-energy outcomes with weights `(y1, 1 - y1)` and one
    /// negative-energy mode whose amplitude `zb` is driven to zero; the only
    /// off-diagonal `gamma^0` elements couple the outcomes to that mode with
    /// magnitude `coupling`.
    pub fn two_outcome(
        mass: f64,
        y1: f64,
        split: f64,
        zb: f64,
        coupling: f64,
        envelope: Envelope,
    ) -> Result<Self> {
        let pos = |e: f64, y: f64| ModalMode {
            energy: EnergyProfile::Constant { energy: e },
            initial: [y.sqrt(), 0.0],
            end: [y.sqrt(), 0.0],
        };
        let modes = vec![
            pos(mass, y1),
            pos(mass + split, 1.0 - y1),
            ModalMode {
                energy: EnergyProfile::Constant { energy: -mass },
                initial: [zb, 0.0],
                end: [0.0, 0.0],
            },
        ];
        let mut g = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(-1.0, 0.0),
        ]));
        for j in 0..2 {
            g[(j, 2)] = C64::new(coupling, 0.0);
            g[(2, j)] = C64::new(coupling, 0.0);
        }
        let mut sys = Self::new(mass, modes, g, envelope)?;
        sys.groups = vec![vec![0], vec![1]];
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// `Y_j = |C_j(t_i; t_i)|^2`.
    pub fn initial_weights(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.c0().norm_sqr()).collect()
    }

    /// Opposite-energy pairs `(j, k)` at `tau = 0`.
    pub fn opposite_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.len() {
            for k in 0..self.len() {
                if j != k && self.modes[j].energy.at(0.0) * self.modes[k].energy.at(0.0) < 0.0 {
                    out.push((j, k));
                }
            }
        }
        out
    }

    pub fn coefficient(&self, j: usize, tau: f64) -> C64 {
        let m = &self.modes[j];
        m.c0() + m.delta() * self.envelope.step(tau)
    }

    pub fn coefficient_rate(&self, j: usize, tau: f64) -> C64 {
        self.modes[j].delta() * self.envelope.step_rate(tau)
    }

    /// `phi_jk(t) = int_0^t (E_j - E_k)(t' - t_i) dt'`.
    pub fn phase(&self, j: usize, k: usize, t: f64, t_i: f64) -> f64 {
        let (ej, sj) = self.modes[j].energy.parts();
        let (ek, sk) = self.modes[k].energy.parts();
        let (de, ds) = (ej - ek, sj - sk);
        de * t + ds * (0.5 * t * t - t_i * t)
    }

    fn gap(&self, j: usize, k: usize, t: f64, t_i: f64) -> f64 {
        self.modes[j].energy.at(t - t_i) - self.modes[k].energy.at(t - t_i)
    }

    /// Largest `|E_j - E_k|` over opposite pairs during `[t_i, t_i + duration]`.
    pub fn max_gap(&self, t_i: f64, duration: f64) -> f64 {
        self.opposite_pairs()
            .iter()
            .flat_map(|&(j, k)| {
                [
                    self.gap(j, k, t_i, t_i).abs(),
                    self.gap(j, k, t_i + duration, t_i).abs(),
                ]
            })
            .fold(0.0, f64::max)
    }

    /// Smallest `|E_j - E_k|` over opposite pairs at `tau = 0`.
    pub fn min_gap(&self) -> Option<f64> {
        self.opposite_pairs()
            .iter()
            .map(|&(j, k)| self.gap(j, k, 0.0, 0.0).abs())
            .min_by(f64::total_cmp)
    }

    fn sign(&self, j: usize, tau: f64) -> f64 {
        self.modes[j].energy.at(tau).signum()
    }
}

/// `d|C_j|^2/dt` for every mode at lab time `t`.
pub fn zb_rhs(t: f64, sys: &ModalSystem, t_i: f64) -> Vec<f64> {
    let tau = t - t_i;
    let mut out = vec![0.0; sys.len()];
    for (j, k) in sys.opposite_pairs() {
        let term = sys.coefficient(j, tau).conj()
            * sys.coefficient_rate(k, tau)
            * sys.gamma0[(j, k)]
            * C64::from_polar(1.0, sys.phase(j, k, t, t_i));
        out[j] -= sys.sign(j, tau) * 2.0 * term.re;
    }
    out
}

/// Minimum resolution for [`integrate_direct`].
pub const STEPS_PER_PERIOD: usize = 20;

const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_2),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

/// `Y_j + int_{t_i}^{t_i + duration} zb_rhs dt` by composite 4-point
/// Gauss-Legendre on panels of width `dt`.
pub fn integrate_direct(sys: &ModalSystem, t_i: f64, duration: f64, dt: f64) -> Result<Vec<f64>> {
    let gap = sys.max_gap(t_i, duration);
    if gap > 0.0 {
        let period = 2.0 * std::f64::consts::PI / gap;
        if period / dt < STEPS_PER_PERIOD as f64 {
            return Err(Error::UnresolvedOscillation {
                dt,
                period,
                steps_per_period: period / dt,
                required: STEPS_PER_PERIOD,
            });
        }
    }
    let panels = (duration / dt).ceil().max(1.0) as usize;
    let h = duration / panels as f64;
    let mut pops = sys.initial_weights();
    for p in 0..panels {
        let mid = t_i + (p as f64 + 0.5) * h;
        for (x, w) in GL4 {
            let r = zb_rhs(mid + 0.5 * h * x, sys, t_i);
            for (a, b) in pops.iter_mut().zip(r) {
                *a += 0.5 * h * w * b;
            }
        }
    }
    Ok(pops)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryResult {
    pub populations: Vec<f64>,
    /// Pairs dropped because their gap was below the floor.
    pub excluded_pairs: Vec<(usize, usize)>,
}

/// Boundary terms of one integration by parts: the phase factor is
/// integrated exactly and the remainder integral is dropped.
pub fn integrate_stationary(sys: &ModalSystem, t_i: f64, duration: f64) -> StationaryResult {
    let mut pops = sys.initial_weights();
    let mut excluded = Vec::new();
    let t_end = t_i + duration;
    for (j, k) in sys.opposite_pairs() {
        let boundary = |t: f64| -> Option<f64> {
            let tau = t - t_i;
            let de = sys.gap(j, k, t, t_i);
            if de.abs() < sys.gap_floor {
                return None;
            }
            let f =
                sys.coefficient(j, tau).conj() * sys.coefficient_rate(k, tau) * sys.gamma0[(j, k)];
            let v = f * C64::from_polar(1.0, sys.phase(j, k, t, t_i)) / C64::new(0.0, de);
            Some(-sys.sign(j, tau) * 2.0 * v.re)
        };
        match (boundary(t_end), boundary(t_i)) {
            (Some(hi), Some(lo)) => pops[j] += hi - lo,
            _ => {
                log::warn!(
                    "stationary form: pair ({j}, {k}) has a gap below {}",
                    sys.gap_floor
                );
                excluded.push((j, k));
            }
        }
    }
    StationaryResult {
        populations: pops,
        excluded_pairs: excluded,
    }
}

/// Angular frequency of the strongest peak in the spectrum of mode `j`'s
/// `zb_rhs` over `n` samples, and the bin width `2 pi / (n dt)`.
pub fn zb_spectrum_peak(sys: &ModalSystem, j: usize, t_i: f64, dt: f64, n: usize) -> (f64, f64) {
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = (0..n)
        .map(|i| rustfft::num_complex::Complex::new(zb_rhs(t_i + i as f64 * dt, sys, t_i)[j], 0.0))
        .collect();
    let mean = buf.iter().map(|c| c.re).sum::<f64>() / n as f64;
    for c in &mut buf {
        c.re -= mean;
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (peak, _) = buf[1..n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    let bin = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    (peak as f64 * bin, bin)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleOptions {
    pub samples: usize,
    /// Drive duration after each `t_i`.
    pub duration: f64,
    /// Quadrature panel width.
    pub dt: f64,
    /// `t_i` window in zitterbewegung periods of the slowest opposite pair.
    pub window_periods: f64,
    pub seed: u64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            duration: 20.0,
            dt: 0.1,
            window_periods: 100.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSample {
    pub t_i: f64,
    pub winner: Option<usize>,
    /// Final outcome-group populations.
    pub populations: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleResult {
    pub samples: Vec<EnsembleSample>,
    /// `Y` summed over outcome groups.
    pub initial_weights: Vec<f64>,
    /// `t_i` average of the normalized final group populations.
    pub frequencies: Vec<f64>,
    /// Standard error of each frequency.
    pub frequency_stderr: Vec<f64>,
    /// Fraction of samples whose largest final group is `j`.
    pub winner_frequencies: Vec<f64>,
    /// 95% Wilson intervals for the winner frequencies.
    pub winner_intervals: Vec<(f64, f64)>,
    pub ties: usize,
    pub window: f64,
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn group_sums(sys: &ModalSystem, pops: &[f64]) -> Vec<f64> {
    sys.groups
        .iter()
        .map(|g| g.iter().map(|&j| pops[j]).sum())
        .collect()
}

/// Draws `t_i` uniformly over the window and integrates each sample directly.
pub fn run_ensemble(sys: &ModalSystem, opts: &EnsembleOptions) -> Result<EnsembleResult> {
    let slowest = sys.min_gap().filter(|g| *g > 0.0).unwrap_or(2.0 * sys.mass);
    let window = opts.window_periods * 2.0 * std::f64::consts::PI / slowest;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let t_is: Vec<f64> = (0..opts.samples)
        .map(|_| rng.gen::<f64>() * window)
        .collect();
    let samples: Vec<EnsembleSample> = t_is
        .par_iter()
        .map(|&t_i| {
            let pops = integrate_direct(sys, t_i, opts.duration, opts.dt)?;
            let groups = group_sums(sys, &pops);
            let mut order: Vec<usize> = (0..groups.len()).collect();
            order.sort_by(|&a, &b| groups[b].total_cmp(&groups[a]));
            let winner = match order.as_slice() {
                [a, b, ..] if (groups[*a] - groups[*b]).abs() <= 1e-12 => None,
                [a, ..] => Some(*a),
                [] => None,
            };
            Ok(EnsembleSample {
                t_i,
                winner,
                populations: groups,
            })
        })
        .collect::<Result<_>>()?;
    let n_groups = sys.groups.len();
    let kept: Vec<&EnsembleSample> = samples.iter().filter(|s| s.winner.is_some()).collect();
    let ties = samples.len() - kept.len();
    let n = kept.len();
    let mut frequencies = vec![0.0; n_groups];
    let mut second = vec![0.0; n_groups];
    let mut wins = vec![0usize; n_groups];
    for s in &kept {
        let total: f64 = s.populations.iter().sum();
        for (g, &p) in s.populations.iter().enumerate() {
            let f = p / total;
            frequencies[g] += f;
            second[g] += f * f;
        }
        wins[s.winner.expect("kept samples have winners")] += 1;
    }
    let nf = n.max(1) as f64;
    let frequency_stderr = frequencies
        .iter()
        .zip(&second)
        .map(|(s, q)| {
            let mean = s / nf;
            ((q / nf - mean * mean).max(0.0) / (nf - 1.0).max(1.0)).sqrt()
        })
        .collect();
    for f in &mut frequencies {
        *f /= nf;
    }
    Ok(EnsembleResult {
        initial_weights: group_sums(sys, &sys.initial_weights()),
        frequencies,
        frequency_stderr,
        winner_frequencies: wins.iter().map(|&w| w as f64 / nf).collect(),
        winner_intervals: wins.iter().map(|&w| wilson_interval(w, n, 1.96)).collect(),
        ties,
        window,
        samples,
    })
}

/// `|mean_i exp(i phi_jk(t_i))|` over the given start times, evaluated at
/// `t = t_i`.
pub fn phase_average(sys: &ModalSystem, j: usize, k: usize, t_is: &[f64]) -> f64 {
    let s: C64 = t_is
        .iter()
        .map(|&t| C64::from_polar(1.0, sys.phase(j, k, t, t)))
        .sum();
    s.norm() / t_is.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gauss() -> Envelope {
        Envelope::Gaussian {
            center: 5.0,
            width: 2.0,
        }
    }

    fn sys(zb: f64) -> ModalSystem {
        ModalSystem::two_outcome(1.0, 0.7, 0.05, zb, 0.1, gauss()).unwrap()
    }

    /// One positive and one negative mode with `C_-` prescribed and `C_+`
    /// following from `<chi_+|D|psi> = 0`: `C_+' = -sgn(E_+) g C_-' e^{i phi}`.
    fn constrained_pair() -> ModalSystem {
        let modes = vec![
            ModalMode {
                energy: EnergyProfile::Constant { energy: 1.0 },
                initial: [0.8, 0.1],
                end: [0.8, 0.1],
            },
            ModalMode {
                energy: EnergyProfile::Constant { energy: -1.0 },
                initial: [0.3, -0.2],
                end: [0.0, 0.0],
            },
        ];
        let g = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(0.2, 0.1),
                C64::new(0.2, -0.1),
                C64::new(-1.0, 0.0),
            ],
        );
        ModalSystem::new(
            1.0,
            modes,
            g,
            Envelope::Tanh {
                center: 3.0,
                width: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn product_rule_agrees_with_projected_rhs() {
        // Independent oracle: integrate the complex constraint ODE for C_+
        // by RK4 and differentiate |C_+|^2 directly.
        let s = constrained_pair();
        let t_i = 0.37;
        let rate = |t: f64, _c: C64| -> C64 {
            let tau = t - t_i;
            -s.gamma0[(0, 1)]
                * s.coefficient_rate(1, tau)
                * C64::from_polar(1.0, s.phase(0, 1, t, t_i))
        };
        let h = 1e-3;
        let mut c = s.coefficient(0, 0.0);
        let mut t = t_i;
        for _ in 0..4000 {
            let k1 = rate(t, c);
            let k2 = rate(t + 0.5 * h, c + k1 * (0.5 * h));
            let k3 = rate(t + 0.5 * h, c + k2 * (0.5 * h));
            let k4 = rate(t + h, c + k3 * h);
            c += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            t += h;
            let direct = 2.0 * (c.conj() * rate(t, c)).re;
            // zb_rhs evaluated with the integrated C_+.
            let g = s.gamma0[(0, 1)];
            let projected = -2.0
                * (c.conj()
                    * s.coefficient_rate(1, t - t_i)
                    * g
                    * C64::from_polar(1.0, s.phase(0, 1, t, t_i)))
                .re;
            assert_relative_eq!(direct, projected, epsilon = 1e-12);
        }
        // And the library formula at the prescribed coefficients.
        let r = zb_rhs(t, &s, t_i)[0];
        let by_hand = -2.0
            * (s.coefficient(0, t - t_i).conj()
                * s.coefficient_rate(1, t - t_i)
                * s.gamma0[(0, 1)]
                * C64::from_polar(1.0, s.phase(0, 1, t, t_i)))
            .re;
        assert_relative_eq!(r, by_hand, epsilon = 1e-15);
    }

    #[test]
    fn no_opposite_pairs_or_frozen_drive_gives_zero() {
        let mut s = sys(0.05);
        s.modes[2].end = s.modes[2].initial;
        for t in [0.0, 1.3, 7.0] {
            assert!(zb_rhs(t, &s, 0.0).iter().all(|v| *v == 0.0));
        }
        let mut s = sys(0.05);
        s.modes[2].energy = EnergyProfile::Constant { energy: 1.2 };
        assert!(s.opposite_pairs().is_empty());
        assert!(zb_rhs(2.0, &s, 0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_drive_keeps_initial_weights() {
        let s = sys(0.0);
        let d = integrate_direct(&s, 1.0, 20.0, 0.1).unwrap();
        let st = integrate_stationary(&s, 1.0, 20.0);
        for (a, y) in d.iter().zip(s.initial_weights()) {
            assert_eq!(*a, y);
        }
        assert_eq!(st.populations, s.initial_weights());
    }

    #[test]
    fn direct_quadrature_is_converged() {
        let s = sys(0.1);
        let a = integrate_direct(&s, 0.3, 20.0, 0.1).unwrap();
        let b = integrate_direct(&s, 0.3, 20.0, 0.05).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{x} {y}");
        }
        for p in &a {
            assert!((0.0..=1.0).contains(p));
        }
    }

    #[test]
    fn coarse_step_is_rejected() {
        let s = sys(0.1);
        // Period pi / m ~ 3.1; 0.2 gives ~15 steps per period.
        assert!(matches!(
            integrate_direct(&s, 0.0, 10.0, 0.2),
            Err(Error::UnresolvedOscillation { .. })
        ));
    }

    #[test]
    fn stationary_form_tracks_direct_quadrature() {
        let s = sys(0.1);
        let bound = 10.0 * s.envelope.rate() / (2.0 * s.mass);
        for t_i in [0.0, 0.77, 3.1, 12.5] {
            let d = integrate_direct(&s, t_i, 20.0, 0.05).unwrap();
            let st = integrate_stationary(&s, t_i, 20.0);
            for (a, b) in d.iter().zip(&st.populations) {
                assert!((a - b).abs() < bound, "{a} {b}");
            }
        }
    }

    #[test]
    fn late_boundary_term_vanishes_after_the_drive() {
        let s = sys(0.1);
        let st = integrate_stationary(&s, 2.0, 60.0);
        let early_only = {
            let mut p = s.initial_weights();
            for (j, k) in s.opposite_pairs() {
                let f =
                    s.coefficient(j, 0.0).conj() * s.coefficient_rate(k, 0.0) * s.gamma0[(j, k)];
                let de = s.modes[j].energy.at(0.0) - s.modes[k].energy.at(0.0);
                let v = f * C64::from_polar(1.0, s.phase(j, k, 2.0, 2.0)) / C64::new(0.0, de);
                p[j] += s.modes[j].energy.at(0.0).signum() * 2.0 * v.re;
            }
            p
        };
        for (a, b) in st.populations.iter().zip(&early_only) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_gap_is_excluded() {
        let mut s = sys(0.1);
        s.modes[2].energy = EnergyProfile::Ramp {
            energy: -1.0,
            slope: 0.0,
        };
        s.gap_floor = 10.0;
        let st = integrate_stationary(&s, 0.0, 5.0);
        assert_eq!(st.excluded_pairs.len(), s.opposite_pairs().len());
    }

    #[test]
    fn ramp_phase_matches_numeric_integral() {
        let mut s = sys(0.1);
        s.modes[0].energy = EnergyProfile::Ramp {
            energy: 1.0,
            slope: 0.03,
        };
        let (t_i, t) = (1.5, 4.0);
        let n = 4000;
        let h = t / n as f64;
        let numeric: f64 = (0..n)
            .map(|i| {
                let tp = (i as f64 + 0.5) * h;
                s.modes[0].energy.at(tp - t_i) - s.modes[2].energy.at(tp - t_i)
            })
            .sum::<f64>()
            * h;
        assert_relative_eq!(s.phase(0, 2, t, t_i), numeric, max_relative = 1e-9);
    }

    #[test]
    fn spectrum_peak_sits_at_the_gap() {
        let s = ModalSystem::two_outcome(
            1.0,
            0.7,
            0.0,
            0.1,
            0.1,
            Envelope::Exponential { rate: 0.01 },
        )
        .unwrap();
        let (dt, n) = (0.05, 4096);
        let (w, bin) = zb_spectrum_peak(&s, 0, 0.0, dt, n);
        assert!((w - 2.0).abs() <= bin, "{w} vs 2 (bin {bin})");
    }

    #[test]
    fn electron_period_is_a_few_zeptoseconds() {
        let t = zb_period_seconds(ELECTRON_MASS_EV);
        assert!((t - 4.05e-21).abs() < 0.02e-21, "{t}");
        assert_relative_eq!(zb_period(2.0), std::f64::consts::PI / 2.0);
    }

    #[test]
    fn single_mode_ensemble_is_certain() {
        let modes = vec![ModalMode {
            energy: EnergyProfile::Constant { energy: 1.0 },
            initial: [1.0, 0.0],
            end: [1.0, 0.0],
        }];
        let s = ModalSystem::new(
            1.0,
            modes,
            DMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            gauss(),
        )
        .unwrap();
        let r = run_ensemble(
            &s,
            &EnsembleOptions {
                samples: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.frequencies, vec![1.0]);
        assert_eq!(r.winner_frequencies, vec![1.0]);
    }

    #[test]
    fn ensemble_reproduces_initial_weights_and_is_deterministic() {
        let s = sys(0.1);
        let opts = EnsembleOptions {
            samples: 2000,
            duration: 20.0,
            dt: 0.1,
            seed: 9,
            ..Default::default()
        };
        let a = run_ensemble(&s, &opts).unwrap();
        let n = a.samples.len() as f64;
        assert!(
            (a.frequencies[0] - 0.7).abs() < 3.0 * (0.21 / n).sqrt(),
            "{:?}",
            a.frequencies
        );
        assert_relative_eq!(a.frequencies.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let b = run_ensemble(&s, &opts).unwrap();
        let wa: Vec<_> = a.samples.iter().map(|s| s.winner).collect();
        let wb: Vec<_> = b.samples.iter().map(|s| s.winner).collect();
        assert_eq!(wa, wb);
    }

    #[test]
    fn wilson_interval_oracle() {
        // Closed form at p = 0.5, n = 100, z = 1.96.
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert_relative_eq!(lo, 0.403_829_0, epsilon = 1e-6);
        assert_relative_eq!(hi, 0.596_171_0, epsilon = 1e-6);
    }

    #[test]
    fn ti_average_of_the_beat_phase_vanishes() {
        let s = sys(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let t_is: Vec<f64> = (0..n)
            .map(|_| rand::Rng::gen::<f64>(&mut rng) * 100.0 * zb_period(1.0))
            .collect();
        assert!(phase_average(&s, 0, 2, &t_is) < 5.0 / (n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn coupling_scales_linearly(g in 0.01f64..0.5, t in 0.0f64..10.0) {
            let a = ModalSystem::two_outcome(1.0, 0.6, 0.0, 0.1, g, gauss()).unwrap();
            let b = ModalSystem::two_outcome(1.0, 0.6, 0.0, 0.1, 2.0 * g, gauss()).unwrap();
            let (ra, rb) = (zb_rhs(t, &a, 0.0), zb_rhs(t, &b, 0.0));
            for (x, y) in ra.iter().zip(&rb) {
                prop_assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-12));
            }
        }

        #[test]
        fn steps_start_at_zero_and_end_at_one(c in 0.5f64..5.0, w in 0.1f64..2.0) {
            for e in [Envelope::Gaussian { center: c, width: w }, Envelope::Tanh { center: c, width: w }, Envelope::Exponential { rate: 1.0 / w }] {
                prop_assert!(e.step(0.0).abs() < 1e-12);
                prop_assert!((e.step(c + 60.0 * w) - 1.0).abs() < 1e-9);
            }
        }
    }
}
