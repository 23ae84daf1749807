//! Implicit gradients against central finite differences of re-solved QPs.

use trajalloc_core::clock::NoClock;
use trajalloc_core::implicit_diff::{loss_gradient, matrix_jacobians};
use trajalloc_core::qp_builder::ProblemInstance;
use trajalloc_core::qp_solver::QpSettings;
use trajalloc_core::time_opt::{evaluate, Evaluation};
use trajalloc_core::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSettings {
    /// Relative FD steps tried in order until the active set is stable.
    pub steps: [f64; 3],
    /// Pass threshold on the relative error.
    pub tol: f64,
    pub qp: QpSettings,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        GradcheckSettings {
            steps: [1e-5, 1e-6, 1e-7],
            tol: 1e-3,
            qp: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub durations: Vec<f64>,
    pub implicit: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// `‖g − fd‖∞ / max(‖g‖∞, ‖fd‖∞)`.
    pub rel_error: f64,
    /// Relative step that was used.
    pub step: f64,
    /// Every step changed the active set; the comparison is not meaningful.
    pub active_set_crossing: bool,
}

impl GradcheckResult {
    pub fn passed(&self, tol: f64) -> bool {
        !self.active_set_crossing && self.rel_error <= tol
    }
}

/// Rows where the dual dominates the slack.
fn active_set(ev: &Evaluation) -> Vec<bool> {
    let p = &ev.problem;
    let gc = p.g.mul_vec(&ev.solution.c);
    gc.iter()
        .zip(&p.h)
        .zip(&ev.solution.lambda)
        .map(|((g, h), l)| *l > h - g)
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf(a).max(inf(b)).max(1e-12)
}

/// `None` when the QP at `t` is not optimal.
pub fn check_instance(
    inst: &ProblemInstance,
    t: &[f64],
    settings: &GradcheckSettings,
) -> Result<Option<GradcheckResult>> {
    let base = evaluate(inst, t, &settings.qp, &NoClock)?;
    if !base.is_feasible() {
        return Ok(None);
    }
    let jac = matrix_jacobians(inst, t, &base.problem)?;
    let implicit = loss_gradient(&base.solution, &base.problem, &jac, inst.w_t())?;
    let active = active_set(&base);

    let mut fallback = None;
    for &step in &settings.steps {
        let mut fd = Vec::with_capacity(t.len());
        let mut stable = true;
        let mut solved = true;
        for i in 0..t.len() {
            let h = step * t[i];
            let mut tp = t.to_vec();
            tp[i] += h;
            let mut tm = t.to_vec();
            tm[i] -= h;
            let ep = evaluate(inst, &tp, &settings.qp, &NoClock)?;
            let em = evaluate(inst, &tm, &settings.qp, &NoClock)?;
            if !ep.is_feasible() || !em.is_feasible() {
                solved = false;
                break;
            }
            stable &= active_set(&ep) == active && active_set(&em) == active;
            fd.push((ep.loss - em.loss) / (2.0 * h));
        }
        if !solved {
            continue;
        }
        let result = GradcheckResult {
            durations: t.to_vec(),
            rel_error: relative_error(&implicit, &fd),
            implicit: implicit.clone(),
            finite_difference: fd,
            step,
            active_set_crossing: !stable,
        };
        if stable {
            return Ok(Some(result));
        }
        fallback.get_or_insert(result);
    }
    Ok(fallback)
}
