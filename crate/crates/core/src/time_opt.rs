//! Classical time allocation: reference times, uniform splits, descent on the
//! durations with finite-difference or implicit gradients, and rescue of
//! infeasible allocations by temporal scaling.

use alloc::vec;
use alloc::vec::Vec;

use crate::clock::Clock;
use crate::corridor::Point;
use crate::error::{invalid, Result};
use crate::implicit_diff::{loss_gradient, matrix_jacobians, trajectory_loss};
use crate::linalg::{dot, norm_inf};
use crate::qp_builder::{assemble, ProblemInstance, QpProblem};
use crate::qp_solver::{solve_with, QpSettings, QpSolution};
use crate::T_MIN;

/// Trapezoidal-velocity traversal time of a straight segment of length `len`,
/// clamped at [`T_MIN`].
pub fn trapezoid_time(len: f64, v_max: f64, a_max: f64) -> f64 {
    let t = if len >= v_max * v_max / a_max {
        len / v_max + v_max / a_max
    } else {
        2.0 * crate::math::sqrt(len / a_max)
    };
    t.max(T_MIN)
}

/// Per-segment trapezoid times along start → overlap witnesses → goal.
pub fn reference_time(inst: &ProblemInstance) -> Vec<f64> {
    let mut points: Vec<Point> = vec![inst.q0()[0]];
    points.extend(inst.corridors().witnesses());
    points.push(inst.qf()[0]);
    let (v, a) = (inst.d_m()[0], inst.d_m()[1]);
    points
        .windows(2)
        .map(|w| {
            let len = crate::math::sqrt(
                (0..3)
                    .map(|k| {
                        let d = w[1][k] - w[0][k];
                        d * d
                    })
                    .sum(),
            );
            trapezoid_time(len, v, a)
        })
        .collect()
}

pub fn uniform_allocation(inst: &ProblemInstance, total: f64) -> Result<Vec<f64>> {
    let m = inst.num_segments();
    if !(total >= m as f64 * T_MIN) || !total.is_finite() {
        return Err(invalid("total time below the per-segment floor"));
    }
    Ok(vec![total / m as f64; m])
}

/// QP at one allocation together with its solution and loss.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub durations: Vec<f64>,
    pub problem: QpProblem,
    pub solution: QpSolution,
    /// `c*ᵀQc* + w_t·Σt`; only meaningful when the solve is optimal.
    pub loss: f64,
}

impl Evaluation {
    pub fn is_feasible(&self) -> bool {
        self.solution.is_optimal()
    }
}

pub fn evaluate(
    inst: &ProblemInstance,
    t: &[f64],
    qp: &QpSettings,
    clock: &dyn Clock,
) -> Result<Evaluation> {
    let problem = assemble(inst, t)?;
    let solution = solve_with(&problem, qp, clock);
    let loss = trajectory_loss(&problem, &solution.c, t, inst.w_t());
    Ok(Evaluation {
        durations: t.to_vec(),
        problem,
        solution,
        loss,
    })
}

/// Outcome of [`scale_to_feasible`].
#[derive(Debug, Clone)]
pub struct Rescue {
    pub evaluation: Evaluation,
    pub scalings: usize,
}

/// Multiplies all durations by `factor` until the QP becomes feasible, at
/// most `cap` times. `None` when still infeasible.
pub fn scale_to_feasible(
    inst: &ProblemInstance,
    t: &[f64],
    factor: f64,
    cap: usize,
    qp: &QpSettings,
    clock: &dyn Clock,
) -> Result<Option<Rescue>> {
    if !(factor > 1.0) {
        return Err(invalid("scaling factor must exceed 1"));
    }
    let mut cur = t.to_vec();
    for scalings in 0..=cap {
        let evaluation = evaluate(inst, &cur, qp, clock)?;
        if evaluation.is_feasible() {
            return Ok(Some(Rescue {
                evaluation,
                scalings,
            }));
        }
        for v in cur.iter_mut() {
            *v *= factor;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeSettings {
    pub max_iters: usize,
    /// Stop once `‖∇ℓ‖₂` falls below this.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Backtracking trials per iteration.
    pub max_backtracks: usize,
    pub qp: QpSettings,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        OptimizeSettings {
            max_iters: 100,
            grad_tol: 1e-3,
            armijo_c: 1e-4,
            shrink: 0.5,
            fd_step: 1e-4,
            max_backtracks: 30,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizeStatus {
    Converged,
    IterCap,
    InfeasibleStart,
    /// The line search found no acceptable step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub durations: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Every QP solve issued, line-search trials included.
    pub solves: usize,
    /// Solves spent on gradient evaluation, including the base point of each.
    pub gradient_solves: usize,
    /// Iterations on which the implicit gradient failed and FD was used.
    pub fd_fallbacks: usize,
    pub wall_time: f64,
    pub status: OptimizeStatus,
    /// Loss at the start and after each accepted step.
    pub cost_trace: Vec<f64>,
    /// Final QP; `None` only for an infeasible start.
    pub evaluation: Option<Evaluation>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum GradientKind {
    FiniteDifference,
    Implicit,
}

/// Descent with finite-difference gradients (one forward re-solve per
/// duration).
pub fn optimize_fd(
    inst: &ProblemInstance,
    t0: &[f64],
    settings: &OptimizeSettings,
    clock: &dyn Clock,
) -> Result<OptimizeReport> {
    descend(inst, t0, settings, clock, GradientKind::FiniteDifference)
}

/// Descent with gradients from the KKT sensitivities.
pub fn optimize_implicit(
    inst: &ProblemInstance,
    t0: &[f64],
    settings: &OptimizeSettings,
    clock: &dyn Clock,
) -> Result<OptimizeReport> {
    descend(inst, t0, settings, clock, GradientKind::Implicit)
}

struct Counter<'a> {
    inst: &'a ProblemInstance,
    qp: &'a QpSettings,
    clock: &'a dyn Clock,
    solves: usize,
}

impl Counter<'_> {
    fn eval(&mut self, t: &[f64]) -> Result<Evaluation> {
        self.solves += 1;
        evaluate(self.inst, t, self.qp, self.clock)
    }
}

fn fd_gradient(c: &mut Counter, cur: &Evaluation, step: f64) -> Result<Vec<f64>> {
    let t = &cur.durations;
    let mut g = vec![0.0; t.len()];
    for i in 0..t.len() {
        let h = step * t[i];
        let mut tp = t.clone();
        tp[i] += h;
        let e = c.eval(&tp)?;
        if e.is_feasible() {
            g[i] = (e.loss - cur.loss) / h;
            continue;
        }
        let mut tm = t.clone();
        tm[i] -= h;
        if tm[i] >= T_MIN {
            let e = c.eval(&tm)?;
            if e.is_feasible() {
                g[i] = (cur.loss - e.loss) / h;
            }
        }
    }
    Ok(g)
}

fn descend(
    inst: &ProblemInstance,
    t0: &[f64],
    settings: &OptimizeSettings,
    clock: &dyn Clock,
    kind: GradientKind,
) -> Result<OptimizeReport> {
    let started = clock.now();
    inst.check_durations(t0)?;
    let mut counter = Counter {
        inst,
        qp: &settings.qp,
        clock,
        solves: 0,
    };
    let mut cur = counter.eval(t0)?;
    let mut gradient_solves = 1;
    if !cur.is_feasible() {
        return Ok(OptimizeReport {
            durations: t0.to_vec(),
            cost: f64::INFINITY,
            iterations: 0,
            solves: counter.solves,
            gradient_solves,
            fd_fallbacks: 0,
            wall_time: clock.now() - started,
            status: OptimizeStatus::InfeasibleStart,
            cost_trace: Vec::new(),
            evaluation: None,
        });
    }
    let mut trace = vec![cur.loss];
    let mut fd_fallbacks = 0;
    let mut iterations = 0;
    let mut status = OptimizeStatus::IterCap;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    loop {
        let g = match kind {
            GradientKind::FiniteDifference => {
                let before = counter.solves;
                let g = fd_gradient(&mut counter, &cur, settings.fd_step)?;
                gradient_solves += counter.solves - before;
                g
            }
            GradientKind::Implicit => {
                let jac = matrix_jacobians(inst, &cur.durations, &cur.problem)?;
                match loss_gradient(&cur.solution, &cur.problem, &jac, inst.w_t()) {
                    Ok(g) => g,
                    Err(e) => {
                        log::warn!("implicit gradient failed ({e}); using finite differences");
                        fd_fallbacks += 1;
                        let before = counter.solves;
                        let g = fd_gradient(&mut counter, &cur, settings.fd_step)?;
                        gradient_solves += counter.solves - before;
                        g
                    }
                }
            }
        };
        let gnorm = crate::math::sqrt(dot(&g, &g));
        if gnorm < settings.grad_tol {
            status = OptimizeStatus::Converged;
            break;
        }
        if iterations == settings.max_iters {
            break;
        }

        // Barzilai–Borwein initial step; the very first step moves the
        // shortest duration by at most half.
        let t = &cur.durations;
        let first = 0.5 * t.iter().cloned().fold(f64::INFINITY, f64::min) / norm_inf(&g);
        let mut step = match &prev {
            Some((tp, gp)) => {
                let s: Vec<f64> = t.iter().zip(tp).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g.iter().zip(gp).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    dot(&s, &s) / sy
                } else {
                    first
                }
            }
            None => first,
        };

        let mut accepted = None;
        let mut infeasible_hits = 0;
        for _ in 0..settings.max_backtracks {
            let trial: Vec<f64> = t
                .iter()
                .zip(&g)
                .map(|(ti, gi)| (ti - step * gi).max(T_MIN))
                .collect();
            let decrease: f64 = g
                .iter()
                .zip(t)
                .zip(&trial)
                .map(|((gi, a), b)| gi * (a - b))
                .sum();
            let e = counter.eval(&trial)?;
            if !e.is_feasible() {
                // An infeasible trial gets one more shrink, then the
                // iteration ends.
                infeasible_hits += 1;
                if infeasible_hits > 1 {
                    break;
                }
                step *= settings.shrink;
                continue;
            }
            if e.loss <= cur.loss - settings.armijo_c * decrease {
                accepted = Some(e);
                break;
            }
            step *= settings.shrink;
        }
        let Some(next) = accepted else {
            status = OptimizeStatus::Stalled;
            break;
        };
        iterations += 1;
        prev = Some((cur.durations.clone(), g));
        trace.push(next.loss);
        cur = next;
        if kind == GradientKind::Implicit {
            // The accepted trial's solve doubles as the next gradient's base.
            gradient_solves += 1;
        }
    }

    Ok(OptimizeReport {
        durations: cur.durations.clone(),
        cost: cur.loss,
        iterations,
        solves: counter.solves,
        gradient_solves,
        fd_fallbacks,
        wall_time: clock.now() - started,
        status,
        cost_trace: trace,
        evaluation: Some(cur),
    })
}
