//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Every accepted step satisfies the sufficient-decrease condition, so the
//! objective sequence is non-increasing. Coordinates whose gradient is
//! identically zero never move.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    pub max_evaluations: usize,
    /// Stop when `||g|| <= grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when the relative decrease over the last `f_window` iterations
    /// falls below this.
    pub f_tol: f64,
    pub f_window: usize,
    /// Sufficient-decrease and curvature constants.
    pub c1: f64,
    pub c2: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 500,
            max_evaluations: 2000,
            grad_tol: 1e-8,
            f_tol: 1e-13,
            f_window: 1,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    GradientConverged,
    ObjectiveConverged,
    IterationBudget,
    EvaluationBudget,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Iteration {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub status: Status,
    pub iterations: Vec<Iteration>,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Counter<'a, E> {
    f: &'a mut dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    evals: usize,
}

impl<E> Counter<'_, E> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), E> {
        self.evals += 1;
        (self.f)(x)
    }
}

struct Point {
    alpha: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Cubic interpolation minimizer on `[lo, hi]`, falling back to bisection.
fn interpolate(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha {
        (a.alpha, b.alpha)
    } else {
        (b.alpha, a.alpha)
    };
    let d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.d * b.d;
    let mut t = 0.5 * (lo + hi);
    if disc >= 0.0 {
        let d2 = disc.sqrt() * (b.alpha - a.alpha).signum();
        let c = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / (b.d - a.d + 2.0 * d2);
        if c.is_finite() {
            t = c;
        }
    }
    let width = hi - lo;
    t.clamp(lo + 0.1 * width, hi - 0.1 * width)
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` when no
/// acceptable point is found within the evaluation allowance.
fn line_search<E>(
    fun: &mut Counter<'_, E>,
    x: &[f64],
    f0: f64,
    d0: f64,
    dir: &[f64],
    alpha0: f64,
    opts: &LbfgsOptions,
    max_evals: usize,
) -> Result<Option<Point>, E> {
    let start = fun.evals;
    let probe = |fun: &mut Counter<'_, E>, alpha: f64| -> Result<Point, E> {
        let xn: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + alpha * b).collect();
        let (f, g) = fun.eval(&xn)?;
        let d = dot(&g, dir);
        Ok(Point {
            alpha,
            f,
            d,
            x: xn,
            g,
        })
    };
    let zero = Point {
        alpha: 0.0,
        f: f0,
        d: d0,
        x: x.to_vec(),
        g: Vec::new(),
    };
    let mut prev = zero;
    let mut alpha = alpha0;
    let mut first = true;
    loop {
        if fun.evals - start >= max_evals {
            return Ok(None);
        }
        let p = probe(fun, alpha)?;
        if !p.f.is_finite() {
            alpha *= 0.5;
            continue;
        }
        if p.f > f0 + opts.c1 * alpha * d0 || (!first && p.f >= prev.f) {
            return zoom(fun, prev, p, f0, d0, opts, &probe, start, max_evals);
        }
        if p.d.abs() <= -opts.c2 * d0 {
            return Ok(Some(p));
        }
        if p.d >= 0.0 {
            return zoom(fun, p, prev, f0, d0, opts, &probe, start, max_evals);
        }
        first = false;
        alpha *= 2.0;
        prev = p;
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<E>(
    fun: &mut Counter<'_, E>,
    mut lo: Point,
    mut hi: Point,
    f0: f64,
    d0: f64,
    opts: &LbfgsOptions,
    probe: &dyn Fn(&mut Counter<'_, E>, f64) -> Result<Point, E>,
    start: usize,
    max_evals: usize,
) -> Result<Option<Point>, E> {
    loop {
        if fun.evals - start >= max_evals
            || (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1e-300)
        {
            // Fall back to the best sufficient-decrease point seen, if any.
            return Ok((lo.alpha > 0.0 && lo.f < f0).then_some(lo));
        }
        let alpha = interpolate(&lo, &hi);
        let p = probe(fun, alpha)?;
        if !p.f.is_finite() || p.f > f0 + opts.c1 * alpha * d0 || p.f >= lo.f {
            hi = p;
        } else {
            if p.d.abs() <= -opts.c2 * d0 {
                return Ok(Some(p));
            }
            if p.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
}

/// Minimizes `f` from `x0`. `f` returns the value and the gradient.
pub fn minimize<E>(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    x0: Vec<f64>,
    opts: &LbfgsOptions,
    mut on_iteration: impl FnMut(&Iteration, &[f64]),
) -> Result<Outcome, E> {
    let mut fun = Counter {
        f: &mut f,
        evals: 0,
    };
    let mut x = x0;
    let (mut fx, mut g) = fun.eval(&x)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = Vec::new();
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(opts.f_window.max(1) + 1);
    recent.push_back(fx);
    let status = loop {
        let gn = norm(&g);
        if gn <= opts.grad_tol * fx.abs().max(1.0) {
            break Status::GradientConverged;
        }
        if iterations.len() >= opts.max_iterations {
            break Status::IterationBudget;
        }
        if fun.evals >= opts.max_evaluations {
            break Status::EvaluationBudget;
        }

        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0 / gn);
        for qi in &mut q {
            *qi *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut d0 = dot(&g, &dir);
        if d0 >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v / gn).collect();
            d0 = -gn;
        }

        let remaining = opts.max_evaluations.saturating_sub(fun.evals).max(1);
        let mut accepted = None;
        let mut alpha0 = 1.0;
        for _ in 0..4 {
            if let Some(p) =
                line_search(&mut fun, &x, fx, d0, &dir, alpha0, opts, remaining.min(40))?
            {
                accepted = Some(p);
                break;
            }
            // Halve the trial step; drop curvature memory that may be stale.
            alpha0 *= 0.5;
            history.clear();
            dir = g.iter().map(|v| -v / gn).collect();
            d0 = -gn;
        }
        let Some(p) = accepted else {
            break Status::LineSearchFailed;
        };
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = p.x;
        fx = p.f;
        g = p.g;
        let it = Iteration {
            iteration: iterations.len() + 1,
            value: fx,
            grad_norm: norm(&g),
            step: p.alpha,
            evaluations: fun.evals,
        };
        on_iteration(&it, &x);
        iterations.push(it);
        recent.push_back(fx);
        if recent.len() > opts.f_window.max(1) + 1 {
            recent.pop_front();
        }
        let full = recent.len() == opts.f_window.max(1) + 1;
        if full && recent[0] - fx <= opts.f_tol * fx.abs().max(f64::MIN_POSITIVE) {
            break Status::ObjectiveConverged;
        }
    };
    let grad_norm = norm(&g);
    Ok(Outcome {
        x,
        value: fx,
        grad_norm,
        status,
        iterations,
        evaluations: fun.evals,
    })
}
