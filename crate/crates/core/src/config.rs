//! TOML scenario and ensemble files. Every table rejects unknown keys.
//!
//! All quantities are in natural units (`hbar = c = 1`); the particle mass
//! sets the scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::born::{EnergyProfile, EnsembleOptions, Envelope, ModalMode, ModalSystem};
use crate::dirac::{Mass, Potential};
use crate::eigenbasis::{build_phased_basis, BasisOptions, ModeBasis, PhasedBasis};
use crate::error::{Error, Result};
use crate::fourpoint::FourPointOptions;
use crate::grid::{SpacetimeGrid, SpatialBoundary, Spinor, SpinorSlice, C64};
use crate::kernels::KernelChoice;
use crate::lbfgs::LbfgsOptions;
use crate::solver::{log_spaced, BoundaryPolicy, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_t: usize,
    pub n_x: usize,
    pub dt: f64,
    pub dx: f64,
    #[serde(default)]
    pub origin_t: f64,
    #[serde(default)]
    pub spatial_boundary: SpatialBoundary,
}

impl GridConfig {
    pub fn build(&self) -> Result<SpacetimeGrid> {
        Ok(SpacetimeGrid::new(self.n_t, self.n_x, self.dt, self.dx)?
            .with_origin(self.origin_t)
            .with_boundary(self.spatial_boundary))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub mass: f64,
    #[serde(default = "one")]
    pub charge: f64,
}

fn one() -> f64 {
    1.0
}

/// Four-potential `A^mu(tau, x)`, `tau = t - t_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero,
    /// Constant `A^0` and `A^1`.
    Uniform {
        a0: f64,
        #[serde(default)]
        a1: f64,
    },
    /// `A^0 = -(depth + depth_rate tau) cos(2 pi x / L)`: one period across the region.
    CosineWell {
        depth: f64,
        #[serde(default)]
        depth_rate: f64,
    },
}

impl PotentialConfig {
    pub fn build(&self, g: &SpacetimeGrid, charge: f64, t_i: f64) -> Potential {
        let l = g.length();
        Potential::from_fn(g, charge, |t, x| match *self {
            Self::Zero => [0.0; 4],
            Self::Uniform { a0, a1 } => [a0, a1, 0.0, 0.0],
            Self::CosineWell { depth, depth_rate } => {
                let tau = g.time(t) - t_i;
                let k = 2.0 * std::f64::consts::PI / l;
                [
                    -(depth + depth_rate * tau) * (k * g.position(x)).cos(),
                    0.0,
                    0.0,
                    0.0,
                ]
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeAmplitude {
    /// Index into the smooth positive-energy levels (0 = lowest).
    pub level: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// A slice state; normalized when used as a boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateConfig {
    /// Superposition of instantaneous eigenmodes of that slice.
    Modes { modes: Vec<ModeAmplitude> },
    /// Free lattice plane wave `e^{ikx}` with `k = 2 pi harmonic / L`.
    PlaneWave {
        harmonic: i64,
        #[serde(default = "yes")]
        positive_energy: bool,
    },
    /// Upper-component Gaussian packet `exp(-(x-center)^2 / (2 width^2) + i k x)`.
    Gaussian {
        center: f64,
        width: f64,
        #[serde(default)]
        wavenumber: f64,
    },
}

fn yes() -> bool {
    true
}

/// Positive- or negative-energy spin-up eigenspinor of the free lattice
/// Hamiltonian at lattice momentum `p = sin(k dx) / dx`.
pub fn free_spinor(mass: f64, p: f64, positive: bool) -> Spinor {
    let e = (mass * mass + p * p).sqrt();
    let v = if positive {
        Spinor::new(
            C64::new(e + mass, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(p, 0.0),
        )
    } else {
        Spinor::new(
            C64::new(-p, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(e + mass, 0.0),
        )
    };
    v / C64::new(v.norm(), 0.0)
}

impl StateConfig {
    pub fn build(&self, basis: &ModeBasis, t: usize, mass: f64) -> Result<SpinorSlice> {
        let g = basis.grid;
        let s = match self {
            Self::Modes { modes } => {
                let levels = basis.smooth_positive_modes();
                let mut amps = Vec::with_capacity(modes.len());
                for m in modes {
                    let j = *levels.get(m.level).ok_or_else(|| {
                        Error::Config(format!(
                            "mode level {} not available ({} smooth levels)",
                            m.level,
                            levels.len()
                        ))
                    })?;
                    amps.push((j, C64::new(m.re, m.im)));
                }
                basis.superpose(t, &amps)
            }
            Self::PlaneWave {
                harmonic,
                positive_energy,
            } => {
                let k = 2.0 * std::f64::consts::PI * *harmonic as f64 / g.length();
                let u = free_spinor(mass, (k * g.dx).sin() / g.dx, *positive_energy);
                SpinorSlice::from_fn(g, t, |x| u * C64::from_polar(1.0, k * g.position(x)))
            }
            Self::Gaussian {
                center,
                width,
                wavenumber,
            } => SpinorSlice::from_fn(g, t, |x| {
                let d = g.position(x) - center;
                let a = (-d * d / (2.0 * width * width)).exp();
                Spinor::new(
                    C64::from_polar(a, wavenumber * g.position(x)),
                    C64::new(0.0, 0.0),
                    C64::new(0.0, 0.0),
                    C64::new(0.0, 0.0),
                )
            }),
        };
        s.normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourPointConfig {
    pub samples: usize,
    pub max_attempts: usize,
    pub batches: usize,
}

impl Default for FourPointConfig {
    fn default() -> Self {
        let d = FourPointOptions::default();
        Self {
            samples: d.samples,
            max_attempts: d.max_attempts,
            batches: d.batches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            min: 1e-3,
            max: 1e-1,
            count: 5,
        }
    }
}

impl CalibrationConfig {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max >= self.min && self.count > 0) {
            return Err(Error::Config(format!(
                "calibration: need 0 < min <= max and count > 0, got {self:?}"
            )));
        }
        Ok(log_spaced(self.min, self.max, self.count))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Weight of the uncertainty term (dimensionless, >= 0).
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kernel: KernelChoice,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
    /// Lab start time; potentials are evaluated at `tau = t - t_i`.
    #[serde(default)]
    pub t_i: f64,
    #[serde(default = "default_threshold")]
    pub dominance_threshold: f64,
    pub grid: GridConfig,
    pub particle: ParticleConfig,
    pub potential: PotentialConfig,
    pub initial: StateConfig,
    /// Last-slice state for `fix_both`; the propagated slice when absent.
    #[serde(default, rename = "final", skip_serializing_if = "Option::is_none")]
    pub final_state: Option<StateConfig>,
    #[serde(default)]
    pub four_point: FourPointConfig,
    #[serde(default)]
    pub optimizer: LbfgsOptions,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

fn default_threshold() -> f64 {
    0.9
}

/// Parses TOML, mapping errors to [`Error::Config`] with the parser's
/// line and field diagnostics.
pub fn parse_toml<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

/// Everything a run needs, built from a [`ScenarioConfig`].
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub basis: PhasedBasis,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = parse_toml(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.dominance_threshold > 0.0 && self.dominance_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "dominance_threshold must be in (0, 1], got {}",
                self.dominance_threshold
            )));
        }
        if self.four_point.samples == 0 && self.epsilon > 0.0 {
            return Err(Error::Config(
                "four_point.samples must be positive when epsilon > 0".into(),
            ));
        }
        self.grid.build()?;
        Mass::new(self.particle.mass)?;
        Ok(())
    }

    pub fn build(&self) -> Result<BuiltScenario> {
        self.validate()?;
        let g = self.grid.build()?;
        let mass = Mass::new(self.particle.mass)?;
        let pot = self.potential.build(&g, self.particle.charge, self.t_i);
        let basis = ModeBasis::build(&g, &pot, mass, &BasisOptions::default())?;
        let init = self.initial.build(&basis, 0, mass.value())?;
        let final_slice = match &self.final_state {
            Some(s) => Some(s.build(&basis, g.n_t - 1, mass.value())?),
            None => None,
        };
        let mut sc = Scenario::new(g, pot, mass, init)?;
        sc.final_slice = final_slice;
        sc.boundary = self.boundary;
        sc.t_i = self.t_i;
        sc.epsilon = self.epsilon;
        sc.optimizer = self.optimizer;
        sc.dominance_threshold = self.dominance_threshold;
        sc.four_point = FourPointOptions {
            samples: self.four_point.samples,
            max_attempts: self.four_point.max_attempts,
            batches: self.four_point.batches,
            seed: self.seed,
        };
        let phased = build_phased_basis(basis, self.t_i);
        Ok(BuiltScenario {
            scenario: sc,
            basis: phased,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub j: usize,
    pub k: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub mass: f64,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Drive duration after each `t_i`.
    pub duration: f64,
    /// Quadrature panel width (at least 20 per beat period).
    pub dt: f64,
    #[serde(default = "default_window")]
    pub window_periods: f64,
    pub envelope: Envelope,
    pub modes: Vec<ModalMode>,
    /// Off-diagonal `<chi_j|gamma^0|chi_k>`; the Hermitian partner is implied
    /// and the diagonal is `sgn(E_j)`.
    #[serde(default)]
    pub couplings: Vec<CouplingConfig>,
    /// Outcome groups summed as one outcome; each mode alone when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
}

fn default_window() -> f64 {
    EnsembleOptions::default().window_periods
}

impl EnsembleConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = parse_toml(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        if !(self.duration > 0.0 && self.dt > 0.0 && self.window_periods > 0.0) {
            return Err(Error::Config(
                "duration, dt and window_periods must be positive".into(),
            ));
        }
        let n = self.modes.len();
        for c in &self.couplings {
            if c.j >= n || c.k >= n || c.j == c.k {
                return Err(Error::Config(format!(
                    "coupling ({}, {}) is not an off-diagonal pair of {n} modes",
                    c.j, c.k
                )));
            }
        }
        if let Some(groups) = &self.groups {
            let mut seen = vec![false; n];
            for &j in groups.iter().flatten() {
                if j >= n || seen[j] {
                    return Err(Error::Config(format!(
                        "outcome group entry {j} is out of range or repeated"
                    )));
                }
                seen[j] = true;
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<ModalSystem> {
        self.validate()?;
        let n = self.modes.len();
        let mut g = DMatrix::from_fn(n, n, |j, k| {
            if j == k {
                C64::new(self.modes[j].energy.at(0.0).signum(), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        for c in &self.couplings {
            g[(c.j, c.k)] = C64::new(c.re, c.im);
            g[(c.k, c.j)] = C64::new(c.re, -c.im);
        }
        let mut sys = ModalSystem::new(self.mass, self.modes.clone(), g, self.envelope)?;
        if let Some(groups) = &self.groups {
            sys.groups = groups.clone();
        }
        Ok(sys)
    }

    pub fn options(&self) -> EnsembleOptions {
        EnsembleOptions {
            samples: self.samples,
            duration: self.duration,
            dt: self.dt,
            window_periods: self.window_periods,
            seed: self.seed,
        }
    }

    /// The two-outcome `Y = (y1, 1 - y1)` system used by the examples.
    pub fn two_outcome(y1: f64, samples: usize, seed: u64) -> Self {
        let m = 1.0;
        let pos = |e: f64, y: f64| ModalMode {
            energy: EnergyProfile::Constant { energy: e },
            initial: [y.sqrt(), 0.0],
            end: [y.sqrt(), 0.0],
        };
        Self {
            mass: m,
            samples,
            seed,
            duration: 20.0,
            dt: 0.1,
            window_periods: default_window(),
            envelope: Envelope::Gaussian {
                center: 5.0,
                width: 2.0,
            },
            modes: vec![
                pos(m, y1),
                pos(m + 0.05, 1.0 - y1),
                ModalMode {
                    energy: EnergyProfile::Constant { energy: -m },
                    initial: [0.1, 0.0],
                    end: [0.0, 0.0],
                },
            ],
            couplings: vec![
                CouplingConfig {
                    j: 0,
                    k: 2,
                    re: 0.1,
                    im: 0.0,
                },
                CouplingConfig {
                    j: 1,
                    k: 2,
                    re: 0.1,
                    im: 0.0,
                },
            ],
            groups: Some(vec![vec![0], vec![1]]),
        }
    }
}
