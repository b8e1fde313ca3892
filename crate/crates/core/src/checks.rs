//! Named verification suites behind `vpcollapse check <suite>`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::born::{integrate_direct, integrate_stationary, Envelope, ModalSystem};
use crate::dirac::{Mass, Potential};
use crate::eigenbasis::{
    build_phased_basis, project_coefficients, synthesize_field, BasisOptions, ModeBasis,
};
use crate::error::{Error, Result};
use crate::fourpoint::{FourPointOptions, FourPointSamples};
use crate::functionals::{a1, a1_modal, Action, BoundaryMask};
use crate::grid::{SpacetimeGrid, Spinor, SpinorField, C64};
use crate::kernels::{kernel_time_integral, KernelChoice};
use crate::weight::{weight_w_trivial, WeightTable};

pub const SUITES: [&str; 4] = ["kernels", "gradcheck", "a1-modal", "stationary-vs-direct"];

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    fn new(name: String, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            passed: value.is_finite() && value < tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub suite: String,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<44} {:>14} {:>10}  result\n", "check", "value", "tol");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<44} {:>14.6e} {:>10.1e}  {}\n",
                r.name,
                r.value,
                r.tolerance,
                if r.passed { "pass" } else { "FAIL" }
            ));
        }
        s
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<CheckReport> {
    let rows = match name {
        "kernels" => kernels(seed),
        "gradcheck" => gradcheck(seed)?,
        "a1-modal" => a1_modal_check()?,
        "stationary-vs-direct" => stationary_vs_direct(seed)?,
        _ => {
            return Err(Error::InvalidParameter {
                name: "suite",
                reason: format!("unknown suite {name:?}; available: {}", SUITES.join(", ")),
            })
        }
    };
    Ok(CheckReport {
        suite: name.to_string(),
        rows,
    })
}

/// Adaptive Simpson on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Volume of `(t2, t3, t4)` with `t1 = 0` where all six pairs of points at
/// 1D positions `x` are spacelike, by nested adaptive Simpson with the
/// innermost `t4` length taken from interval intersection.
pub fn spacelike_time_volume(x: [f64; 4], tol: f64) -> f64 {
    let d = |i: usize, j: usize| (x[i] - x[j]).abs();
    let t4_len = |t2: f64, t3: f64| {
        let lo = (-d(0, 3)).max(t2 - d(1, 3)).max(t3 - d(2, 3));
        let hi = d(0, 3).min(t2 + d(1, 3)).min(t3 + d(2, 3));
        (hi - lo).max(0.0)
    };
    let over_t3 = |t2: f64| {
        let lo = (-d(0, 2)).max(t2 - d(1, 2));
        let hi = d(0, 2).min(t2 + d(1, 2));
        adaptive_simpson(&|t3| t4_len(t2, t3), lo, hi, tol)
    };
    adaptive_simpson(&over_t3, -d(0, 1), d(0, 1), tol)
}

fn seps_of(x: [f64; 4]) -> [f64; 6] {
    let d = |i: usize, j: usize| (x[i] - x[j]).abs();
    [d(0, 1), d(0, 2), d(0, 3), d(1, 2), d(1, 3), d(2, 3)]
}

fn kernels(seed: u64) -> Vec<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for _ in 0..10 {
        let r = 10f64.powf(rng.gen_range(-2.0..1.0));
        for k in [KernelChoice::InverseDistance, KernelChoice::Covariant] {
            let v = kernel_time_integral(k, r, 1e-12);
            rows.push(CheckRow::new(
                format!("{} two-point r={r:.4}", k.name()),
                (v - 1.0).abs(),
                1e-6,
            ));
        }
    }
    for _ in 0..5 {
        let x = [
            0.0,
            rng.gen_range(0.2..2.0),
            rng.gen_range(-2.0..-0.2),
            rng.gen_range(2.2..4.0),
        ];
        let seps = seps_of(x);
        let v = spacelike_time_volume(x, 1e-10) / weight_w_trivial(seps);
        rows.push(CheckRow::new(
            format!("four-point x=({:.2},{:.2},{:.2})", x[1], x[2], x[3]),
            (v - 1.0).abs(),
            1e-3,
        ));
    }
    rows
}

/// Relative FD error `|g - fd| / max(|g|, |fd|, 1e-3 max|g|)`.
pub fn relative_gradient_error(analytic: f64, fd: f64, scale: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3 * scale)
}

fn gradcheck(seed: u64) -> Result<Vec<CheckRow>> {
    let g = SpacetimeGrid::new(8, 8, 0.05, 0.2)?;
    let m = Mass::new(1.0)?;
    let pot = Potential::from_fn(&g, 1.0, |_, x| {
        [0.3 * (x as f64 * 0.7).cos(), 0.1, 0.0, 0.0]
    });
    let samples = FourPointSamples::draw(
        &g,
        &FourPointOptions {
            samples: 2000,
            seed,
            ..Default::default()
        },
        &mut WeightTable::new(),
    )?;
    let action = Action::new(&g, pot, m, 0.3, Some(samples))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let psi = SpinorField::from_fn(g, |_, _| {
        Spinor::from_fn(|_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    });
    let mask = BoundaryMask::initial(g.n_t);
    let (_, grad) = action.evaluate_with_gradient(&psi, &mask)?;
    let grad = grad.to_real_vec();
    let scale = grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let base = psi.to_real_vec();
    let first_free = 8 * g.n_x;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.gen_range(first_free..base.len());
        let h = 1e-5;
        let mut v = base.clone();
        v[k] += h;
        let up = action.total(&SpinorField::from_real_slice(g, &v)?)?;
        v[k] = base[k] - h;
        let down = action.total(&SpinorField::from_real_slice(g, &v)?)?;
        worst = worst.max(relative_gradient_error(
            grad[k],
            (up - down) / (2.0 * h),
            scale,
        ));
    }
    Ok(vec![CheckRow::new(
        "max relative FD error (20 coordinates)".into(),
        worst,
        1e-5,
    )])
}

fn a1_modal_check() -> Result<Vec<CheckRow>> {
    let g = SpacetimeGrid::new(48, 8, 0.05, 0.25)?;
    let m = Mass::new(1.0)?;
    let pot = Potential::zero(&g, 1.0);
    let pb = build_phased_basis(
        ModeBasis::build(&g, &pot, m, &BasisOptions::default())?,
        0.0,
    );
    let modes = pb.basis.smooth_positive_modes();
    if modes.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "a1-modal",
            reason: format!("only {} smooth modes available", modes.len()),
        });
    }
    let k = pb.basis.retained_count();
    let w = 0.2;
    let coeffs: Vec<Vec<C64>> = (0..g.n_t)
        .map(|t| {
            let s = g.time(t);
            let mut row = vec![C64::new(0.0, 0.0); k];
            row[modes[0]] = C64::new((w * s).cos(), 0.0);
            row[modes[1]] = C64::new(0.6 * (w * s).sin(), 0.0);
            row[modes[2]] = C64::new(0.8 * (w * s).sin(), 0.0);
            row
        })
        .collect();
    let psi = synthesize_field(&pb, &coeffs)?;
    let track = project_coefficients(&psi, &pb, 1e-8)?;
    let lattice = a1(&psi, &pot, m)?;
    let modal = a1_modal(&track, &g, m)?;
    Ok(vec![CheckRow::new(
        format!("|a1 - a1_modal| / a1 (a1={lattice:.4e})"),
        (lattice - modal).abs() / lattice,
        0.05,
    )])
}

fn stationary_vs_direct(seed: u64) -> Result<Vec<CheckRow>> {
    let sys = ModalSystem::two_outcome(
        1.0,
        0.7,
        0.05,
        0.1,
        0.1,
        Envelope::Gaussian {
            center: 5.0,
            width: 2.0,
        },
    )?;
    let bound = 10.0 * sys.envelope.rate() / (2.0 * sys.mass);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for _ in 0..10 {
        let t_i = rng.gen_range(0.0..100.0 * crate::born::zb_period(sys.mass));
        let direct = integrate_direct(&sys, t_i, 20.0, 0.05)?;
        let stat = integrate_stationary(&sys, t_i, 20.0);
        let gap = direct
            .iter()
            .zip(&stat.populations)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rows.push(CheckRow::new(
            format!("max |direct - stationary| t_i={t_i:.3}"),
            gap,
            bound,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_and_kinked_functions() {
        assert!(
            (adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12) - 2.0).abs()
                < 1e-10
        );
        assert!((adaptive_simpson(&|x: f64| x.abs(), -1.0, 2.0, 1e-12) - 2.5).abs() < 1e-10);
    }

    #[test]
    fn time_volume_matches_midpoint_counting() {
        let x = [0.0, 1.0, -0.7, 2.5];
        let v = spacelike_time_volume(x, 1e-10);
        let d = |i: usize, j: usize| x[i] - x[j];
        let n = 120;
        let (a, b, c) = (d(0, 1).abs(), d(0, 2).abs(), d(0, 3).abs());
        let mut hits = 0usize;
        for i in 0..n {
            let t2 = -a + 2.0 * a * (i as f64 + 0.5) / n as f64;
            for j in 0..n {
                let t3 = -b + 2.0 * b * (j as f64 + 0.5) / n as f64;
                for k in 0..n {
                    let t4 = -c + 2.0 * c * (k as f64 + 0.5) / n as f64;
                    let ok = (t2 - t3).abs() < d(1, 2).abs()
                        && (t2 - t4).abs() < d(1, 3).abs()
                        && (t3 - t4).abs() < d(2, 3).abs();
                    hits += ok as usize;
                }
            }
        }
        let counted = hits as f64 * 8.0 * a * b * c / (n * n * n) as f64;
        assert!((v - counted).abs() < 0.02 * v, "{v} vs {counted}");
    }

    #[test]
    fn kernels_suite_passes() {
        let r = run_suite("kernels", 1).unwrap();
        assert_eq!(r.rows.len(), 25);
        assert!(r.passed(), "{}", r.table());
    }

    #[test]
    fn gradcheck_suite_passes() {
        let r = run_suite("gradcheck", 2).unwrap();
        assert!(r.passed(), "{}", r.table());
    }

    #[test]
    fn modal_and_stationary_suites_pass() {
        for s in ["a1-modal", "stationary-vs-direct"] {
            let r = run_suite(s, 3).unwrap();
            assert!(r.passed(), "{}", r.table());
        }
    }

    #[test]
    fn unknown_suite_lists_the_available_ones() {
        let e = run_suite("nope", 0).unwrap_err().to_string();
        for s in SUITES {
            assert!(e.contains(s), "{e}");
        }
    }
}
