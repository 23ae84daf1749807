//! Dense convex QP solver: primal-dual interior point with Mehrotra
//! predictor-corrector steps.
//!
//! Solves `min cᵀQc + qᵀc  s.t.  Ac = b, Gc ≤ h` and returns primal and dual
//! variables in the convention of the Lagrangian
//! `L = cᵀQc + qᵀc + νᵀ(Ac − b) + λᵀ(Gc − h)`, so that at optimality
//! `2Qc + q + Aᵀν + Gᵀλ = 0`, `λ ≥ 0`, `λ ∘ (Gc − h) = 0`.
//!
//! The problem is Ruiz-equilibrated internally. Termination is judged on the
//! residuals of the original (unscaled) problem.

use alloc::vec;
use alloc::vec::Vec;

use crate::clock::{Clock, NoClock};
use crate::linalg::{axpy, dot, independent_rows, norm_inf, Lu, Mat, SparseRows};
use crate::qp_builder::QpProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iters: usize,
    /// Residual level at which iterations stop.
    pub tol: f64,
    /// Residual level at which a stalled or capped run is still reported optimal.
    pub accept_tol: f64,
    /// Wall-clock budget in seconds; only enforced with a real [`Clock`].
    pub time_budget: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iters: 200,
            tol: 1e-8,
            accept_tol: 1e-6,
            time_budget: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub c: Vec<f64>,
    /// Duals of the equality rows kept in the problem.
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub status: QpStatus,
    /// Max of the scaled residuals in [`Residuals`].
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// KKT residuals measured on the original problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `‖2Qc + q + Aᵀν + Gᵀλ‖∞ / (1 + ‖c‖∞)`
    pub stationarity: f64,
    /// `‖Ac − b‖∞`
    pub equality: f64,
    /// `max(0, max_i (Gc − h)_i)`
    pub inequality: f64,
    /// `max(0, −min_i λ_i (Gc − h)_i)`
    pub complementarity: f64,
    /// `max(0, −min_i λ_i)`
    pub dual_sign: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.equality)
            .max(self.inequality)
            .max(self.complementarity)
            .max(self.dual_sign)
    }

    /// The four certification bounds at tolerance `tol`.
    pub fn certified(&self, tol: f64) -> bool {
        self.stationarity <= tol
            && self.equality <= tol
            && self.inequality <= tol
            && self.complementarity <= tol
            && self.dual_sign <= 1e-9
    }
}

/// Residuals of a candidate primal-dual point on `prob`.
pub fn residuals(prob: &QpProblem, c: &[f64], nu: &[f64], lambda: &[f64]) -> Residuals {
    let g = SparseRows::from_dense(&prob.g);
    residuals_sparse(prob, &g, c, nu, lambda)
}

fn residuals_sparse(
    prob: &QpProblem,
    g: &SparseRows,
    c: &[f64],
    nu: &[f64],
    lambda: &[f64],
) -> Residuals {
    let mut stat = prob.q.mul_vec(c);
    for v in stat.iter_mut() {
        *v *= 2.0;
    }
    for (s, l) in stat.iter_mut().zip(&prob.linear) {
        *s += l;
    }
    let at = prob.a.tr_mul_vec(nu);
    let gt = g.tr_mul_vec(lambda);
    for i in 0..stat.len() {
        stat[i] += at[i] + gt[i];
    }
    let ac = prob.a.mul_vec(c);
    let eq = ac
        .iter()
        .zip(&prob.b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let mut ineq: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for r in 0..g.rows() {
        let v = g.row_dot(r, c) - prob.h[r];
        ineq = ineq.max(v);
        comp = comp.max(-(lambda[r] * v));
    }
    let dual_sign = lambda.iter().fold(0.0f64, |m, &l| m.max(-l));
    Residuals {
        stationarity: norm_inf(&stat) / (1.0 + norm_inf(c)),
        equality: eq,
        inequality: ineq.max(0.0),
        complementarity: comp.max(0.0),
        dual_sign,
    }
}

/// Solves with default settings and no wall-clock budget.
pub fn solve(prob: &QpProblem) -> QpSolution {
    solve_with(prob, &QpSettings::default(), &NoClock)
}

pub fn solve_with(prob: &QpProblem, settings: &QpSettings, clock: &dyn Clock) -> QpSolution {
    let started = clock.now();
    let scaled = Scaled::new(prob);
    let g_orig = SparseRows::from_dense(&prob.g);
    if prob.g.rows() == 0 {
        return solve_equality_only(prob, &scaled, &g_orig);
    }
    let first = interior_point(prob, &scaled, &g_orig, settings, clock, started, None);
    if first.status != QpStatus::MaxIterations {
        return first;
    }
    // Fall back on a feasibility problem: it either proves infeasibility or
    // supplies a strictly interior start.
    let Some((margin, c0)) = phase_one(prob, settings, clock, started) else {
        return first;
    };
    if margin > PHASE_ONE_TOL * (1.0 + norm_inf(&prob.h)) {
        log::debug!("qp: phase one margin {margin:e}, infeasible");
        return QpSolution {
            status: QpStatus::Infeasible,
            ..first
        };
    }
    let c0: Vec<f64> = c0.iter().zip(&scaled.d).map(|(v, d)| v / d).collect();
    let second = interior_point(prob, &scaled, &g_orig, settings, clock, started, Some(c0));
    let iterations = first.iterations + second.iterations;
    if second.kkt_residual < first.kkt_residual {
        QpSolution {
            iterations,
            ..second
        }
    } else {
        QpSolution {
            iterations,
            ..first
        }
    }
}

/// `min t  s.t.  Ac = b, Gc − t ≤ h, t ≥ −1`; returns the optimal margin `t`
/// and the primal point.
fn phase_one(
    prob: &QpProblem,
    settings: &QpSettings,
    clock: &dyn Clock,
    started: f64,
) -> Option<(f64, Vec<f64>)> {
    let n = prob.num_vars();
    let me = prob.a.rows();
    let mi = prob.g.rows();
    let mut a = Mat::zeros(me, n + 1);
    for r in 0..me {
        a.row_mut(r)[..n].copy_from_slice(prob.a.row(r));
    }
    let mut g = Mat::zeros(mi + 1, n + 1);
    for r in 0..mi {
        let row = g.row_mut(r);
        row[..n].copy_from_slice(prob.g.row(r));
        row[n] = -1.0;
    }
    g[(mi, n)] = -1.0;
    let mut h = prob.h.clone();
    h.push(1.0);
    let mut linear = vec![0.0; n + 1];
    linear[n] = 1.0;
    let lp = QpProblem {
        q: Mat::zeros(n + 1, n + 1),
        linear,
        a,
        b: prob.b.clone(),
        g,
        h,
        eq_rows: prob.eq_rows.clone(),
    };
    let scaled = Scaled::new(&lp);
    let g_sparse = SparseRows::from_dense(&lp.g);
    let sol = interior_point(&lp, &scaled, &g_sparse, settings, clock, started, None);
    if !sol.is_optimal() {
        return None;
    }
    let mut c = sol.c;
    let t = c.pop()?;
    Some((t, c))
}

/// Best-iterate state carried through the interior-point loop.
struct Best {
    res: f64,
    c: Vec<f64>,
    nu: Vec<f64>,
    lam: Vec<f64>,
    /// Scaled `λ_i / s_i`, used to guess the active set.
    ratio: Vec<f64>,
}

fn interior_point(
    prob: &QpProblem,
    scaled: &Scaled,
    g_orig: &SparseRows,
    settings: &QpSettings,
    clock: &dyn Clock,
    started: f64,
    warm: Option<Vec<f64>>,
) -> QpSolution {
    let n = prob.num_vars();
    let me = prob.a.rows();
    let mi = prob.g.rows();

    let mut nu = vec![0.0; me];
    let mut c = match warm {
        Some(c0) => c0,
        None => {
            // Least-squares fit of the inequality rows subject to Ac = b.
            let mut h = scaled.q2.clone();
            scaled.g.add_weighted_gram(&vec![1.0; mi], &mut h);
            let mut rhs: Vec<f64> = scaled.g.tr_mul_vec(&scaled.h);
            for (r, l) in rhs.iter_mut().zip(&scaled.linear) {
                *r -= l;
            }
            match solve_newton(&h, &scaled.a, &rhs, &scaled.b) {
                Some((x, y)) => {
                    nu = y;
                    x
                }
                None => vec![0.0; n],
            }
        }
    };
    let gc = scaled.g.mul_vec(&c);
    let mut s: Vec<f64> = (0..mi).map(|r| (scaled.h[r] - gc[r]).max(1.0)).collect();
    let mut lam = vec![1.0; mi];

    let mut best: Option<Best> = None;
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut status = QpStatus::MaxIterations;

    for it in 0..=settings.max_iters {
        iterations = it;
        let (uc, unu, ulam) = scaled.unscale(&c, &nu, &lam);
        let res = residuals_sparse(prob, g_orig, &uc, &unu, &ulam).max();
        if !res.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|b| res < b.res) {
            best = Some(Best {
                res,
                c: uc,
                nu: unu,
                lam: ulam,
                ratio: (0..mi).map(|r| lam[r] / s[r]).collect(),
            });
        }
        if res <= settings.tol {
            status = QpStatus::Optimal;
            break;
        }
        history.push(res);
        let best_res = best.as_ref().map_or(f64::INFINITY, |b| b.res);
        let window = if best_res <= settings.accept_tol {
            ACCEPTED_STALL_WINDOW
        } else {
            STALL_WINDOW
        };
        if history.len() > window && best_res > 0.5 * history[history.len() - 1 - window] {
            log::debug!("qp: residual stalled at {best_res:e} after {it} iterations");
            break;
        }
        if it == settings.max_iters || clock.now() - started > settings.time_budget {
            break;
        }
        if farkas_certificate(scaled, &nu, &lam) {
            status = QpStatus::Infeasible;
            break;
        }

        // Residuals of the scaled problem.
        let mut rd = scaled.q2.mul_vec(&c);
        for (r, l) in rd.iter_mut().zip(&scaled.linear) {
            *r += l;
        }
        let at = scaled.a.tr_mul_vec(&nu);
        let gt = scaled.g.tr_mul_vec(&lam);
        for i in 0..n {
            rd[i] += at[i] + gt[i];
        }
        let ac = scaled.a.mul_vec(&c);
        let gc = scaled.g.mul_vec(&c);
        let r1: Vec<f64> = rd.iter().map(|v| -v).collect();
        let r2: Vec<f64> = ac.iter().zip(&scaled.b).map(|(x, y)| y - x).collect();
        let r3: Vec<f64> = (0..mi).map(|r| scaled.h[r] - gc[r] - s[r]).collect();
        let mu = dot(&s, &lam) / mi as f64;

        let w: Vec<f64> = (0..mi).map(|r| lam[r] / s[r]).collect();
        let mut hmat = scaled.q2.clone();
        scaled.g.add_weighted_gram(&w, &mut hmat);
        let Some(kkt) = NewtonKkt::factor(&hmat, &scaled.a) else {
            break;
        };
        let newton = Newton {
            kkt: &kkt,
            p: scaled,
            s: &s,
            lam: &lam,
            w: &w,
        };

        // Predictor.
        let rc_aff: Vec<f64> = (0..mi).map(|r| -lam[r] * s[r]).collect();
        let aff = newton.refined(&r1, &r2, &r3, &rc_aff);
        let a_aff = max_step(&s, &aff.ds).min(max_step(&lam, &aff.dl));
        let mu_aff = (0..mi)
            .map(|r| (s[r] + a_aff * aff.ds[r]) * (lam[r] + a_aff * aff.dl[r]))
            .sum::<f64>()
            / mi as f64;
        let sigma = {
            let ratio = (mu_aff / mu).clamp(0.0, 1.0);
            ratio * ratio * ratio
        };

        // Corrector.
        let target = (sigma * mu).max(MU_FLOOR);
        let rc: Vec<f64> = (0..mi)
            .map(|r| -lam[r] * s[r] - aff.ds[r] * aff.dl[r] + target)
            .collect();
        let d = newton.refined(&r1, &r2, &r3, &rc);
        let alpha = (0.995 * max_step(&s, &d.ds).min(max_step(&lam, &d.dl))).min(1.0);
        if !(alpha > 1e-14) {
            log::debug!("qp: step length collapsed at iteration {it}");
            break;
        }
        axpy(alpha, &d.dc, &mut c);
        axpy(alpha, &d.dnu, &mut nu);
        for r in 0..mi {
            // Kept strictly interior in floating point.
            s[r] = (s[r] + alpha * d.ds[r]).max(1e-300);
            lam[r] = (lam[r] + alpha * d.dl[r]).max(1e-300);
        }
    }

    let Some(mut b) = best else {
        let (uc, unu, ulam) = scaled.unscale(&c, &nu, &lam);
        return QpSolution {
            c: uc,
            nu: unu,
            lambda: ulam,
            status: QpStatus::MaxIterations,
            kkt_residual: f64::INFINITY,
            iterations,
        };
    };
    if status == QpStatus::MaxIterations {
        for threshold in [1.0, 1e-2, 1e2, 1e-4, 1e4] {
            let active: Vec<usize> = (0..mi).filter(|&r| b.ratio[r] > threshold).collect();
            if let Some((pc, pnu, plam)) = polish(scaled, &active) {
                let (pc, pnu, plam) = scaled.unscale(&pc, &pnu, &plam);
                let pres = residuals_sparse(prob, g_orig, &pc, &pnu, &plam).max();
                if pres < b.res {
                    log::debug!("qp: polish improved residual {:e} -> {pres:e}", b.res);
                    (b.res, b.c, b.nu, b.lam) = (pres, pc, pnu, plam);
                }
            }
            if b.res <= settings.tol {
                break;
            }
        }
        if b.res <= settings.accept_tol {
            status = QpStatus::Optimal;
        }
    }
    QpSolution {
        c: b.c,
        nu: b.nu,
        lambda: b.lam,
        status,
        kkt_residual: b.res,
        iterations,
    }
}

struct Step {
    dc: Vec<f64>,
    dnu: Vec<f64>,
    ds: Vec<f64>,
    dl: Vec<f64>,
}

/// Linearized KKT system at the current iterate:
/// `Q̂dc + Âᵀdν + Ĝᵀdλ = r1`, `Âdc = r2`, `Ĝdc + ds = r3`, `Λds + Sdλ = r4`.
struct Newton<'a> {
    kkt: &'a NewtonKkt<'a>,
    p: &'a Scaled,
    s: &'a [f64],
    lam: &'a [f64],
    w: &'a [f64],
}

impl Newton<'_> {
    fn reduced(&self, r1: &[f64], r2: &[f64], r3: &[f64], r4: &[f64]) -> Step {
        let mi = self.s.len();
        let t: Vec<f64> = (0..mi)
            .map(|r| (r4[r] - self.lam[r] * r3[r]) / self.s[r])
            .collect();
        let gtt = self.p.g.tr_mul_vec(&t);
        let rhs1: Vec<f64> = r1.iter().zip(&gtt).map(|(a, b)| a - b).collect();
        let (dc, dnu) = self.kkt.solve(&rhs1, r2);
        let gdc = self.p.g.mul_vec(&dc);
        let ds = (0..mi).map(|r| r3[r] - gdc[r]).collect();
        let dl = (0..mi).map(|r| t[r] + self.w[r] * gdc[r]).collect();
        Step { dc, dnu, ds, dl }
    }

    /// Reduced solve plus refinement against the unreduced system, which
    /// recovers accuracy lost when forming `ĜᵀWĜ` with widely spread weights.
    fn refined(&self, r1: &[f64], r2: &[f64], r3: &[f64], r4: &[f64]) -> Step {
        let p = self.p;
        let mut d = self.reduced(r1, r2, r3, r4);
        for _ in 0..2 {
            let mut e1 = p.q2.mul_vec(&d.dc);
            let at = p.a.tr_mul_vec(&d.dnu);
            let gt = p.g.tr_mul_vec(&d.dl);
            for i in 0..e1.len() {
                e1[i] = r1[i] - e1[i] - at[i] - gt[i];
            }
            let ad = p.a.mul_vec(&d.dc);
            let e2: Vec<f64> = r2.iter().zip(&ad).map(|(a, b)| a - b).collect();
            let gd = p.g.mul_vec(&d.dc);
            let e3: Vec<f64> = (0..self.s.len()).map(|r| r3[r] - gd[r] - d.ds[r]).collect();
            let e4: Vec<f64> = (0..self.s.len())
                .map(|r| r4[r] - self.lam[r] * d.ds[r] - self.s[r] * d.dl[r])
                .collect();
            let corr = self.reduced(&e1, &e2, &e3, &e4);
            axpy(1.0, &corr.dc, &mut d.dc);
            axpy(1.0, &corr.dnu, &mut d.dnu);
            axpy(1.0, &corr.ds, &mut d.ds);
            axpy(1.0, &corr.dl, &mut d.dl);
        }
        d
    }
}

fn solve_equality_only(prob: &QpProblem, scaled: &Scaled, g: &SparseRows) -> QpSolution {
    let rhs: Vec<f64> = scaled.linear.iter().map(|v| -v).collect();
    let out = solve_newton(&scaled.q2, &scaled.a, &rhs, &scaled.b);
    let Some((c, nu)) = out else {
        return QpSolution {
            c: vec![0.0; prob.num_vars()],
            nu: vec![0.0; prob.a.rows()],
            lambda: Vec::new(),
            status: QpStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            iterations: 0,
        };
    };
    let (uc, unu, ulam) = scaled.unscale(&c, &nu, &[]);
    let res = residuals_sparse(prob, g, &uc, &unu, &ulam).max();
    QpSolution {
        c: uc,
        nu: unu,
        lambda: ulam,
        status: if res <= 1e-6 {
            QpStatus::Optimal
        } else {
            QpStatus::Infeasible
        },
        kkt_residual: res,
        iterations: 1,
    }
}

/// Solves the equality-constrained QP obtained by fixing `active` inequality
/// rows to equalities; dependent rows get a zero multiplier.
fn polish(p: &Scaled, active: &[usize]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = p.q2.rows();
    let me = p.a.rows();
    let k = active.len();
    let mut m = Mat::zeros(me + k, n);
    let mut rhs = Vec::with_capacity(me + k);
    for r in 0..me {
        m.row_mut(r).copy_from_slice(p.a.row(r));
        rhs.push(p.b[r]);
    }
    for (i, &r) in active.iter().enumerate() {
        let (idx, vals) = p.g.row(r);
        let row = m.row_mut(me + i);
        for (&c, &v) in idx.iter().zip(vals) {
            row[c] = v;
        }
        rhs.push(p.h[r]);
    }
    let keep = independent_rows(&m, 1e-9);
    let mk = m.select_rows(&keep);
    let bk: Vec<f64> = keep.iter().map(|&r| rhs[r]).collect();
    let r1: Vec<f64> = p.linear.iter().map(|v| -v).collect();
    let (c, y) = solve_newton(&p.q2, &mk, &r1, &bk)?;
    let mut nu = vec![0.0; me];
    let mut lam = vec![0.0; p.g.rows()];
    for (&r, &v) in keep.iter().zip(&y) {
        if r < me {
            nu[r] = v;
        } else {
            lam[active[r - me]] = v;
        }
    }
    Some((c, nu, lam))
}

/// Complementarity target floor in scaled units; keeps the Newton matrix
/// from becoming numerically singular once residuals are at round-off.
const MU_FLOOR: f64 = 1e-13;
/// Iterations without halving the residual before giving up.
const STALL_WINDOW: usize = 15;
/// Same, once the best iterate already meets the acceptance level.
const ACCEPTED_STALL_WINDOW: usize = 3;
/// Relative phase-one margin above which a problem is declared infeasible.
const PHASE_ONE_TOL: f64 = 1e-7;

/// Largest `α ∈ (0, 1/0.995]`-ish with `x + α dx ≥ 0`.
fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    let mut a = f64::INFINITY;
    for (&xi, &di) in x.iter().zip(dx) {
        if di < 0.0 {
            a = a.min(-xi / di);
        }
    }
    a.min(1.0 / 0.995)
}

/// Farkas test on the scaled duals: `Aᵀν + Gᵀλ ≈ 0` with `bᵀν + hᵀλ < 0`.
fn farkas_certificate(p: &Scaled, nu: &[f64], lam: &[f64]) -> bool {
    let ray = dot(&p.b, nu) + dot(&p.h, lam);
    if !(ray < 0.0) {
        return false;
    }
    let mut r = p.a.tr_mul_vec(nu);
    let gt = p.g.tr_mul_vec(lam);
    for (ri, gi) in r.iter_mut().zip(&gt) {
        *ri += gi;
    }
    let scale = norm_inf(nu).max(norm_inf(lam));
    scale > 1e6 && norm_inf(&r) <= 1e-6 * (-ray) && -ray > 1e-6 * scale
}

/// Factored `[[H, Aᵀ], [A, −δI]]` with iterative refinement against the
/// unregularized system.
struct NewtonKkt<'a> {
    n: usize,
    h: &'a Mat,
    a: &'a Mat,
    lu: Lu,
}

impl<'a> NewtonKkt<'a> {
    fn factor(h: &'a Mat, a: &'a Mat) -> Option<NewtonKkt<'a>> {
        let n = h.rows();
        let me = a.rows();
        let dim = n + me;
        let mut reg_h = 1e-14 * h.max_abs().max(1.0);
        let mut reg = 1e-13 * a.max_abs().max(1.0);
        for _ in 0..6 {
            let mut k = Mat::zeros(dim, dim);
            for r in 0..n {
                k.row_mut(r)[..n].copy_from_slice(h.row(r));
                k[(r, r)] += reg_h;
            }
            for r in 0..me {
                for c in 0..n {
                    let v = a[(r, c)];
                    k[(n + r, c)] = v;
                    k[(c, n + r)] = v;
                }
                k[(n + r, n + r)] = -reg;
            }
            if let Some(lu) = Lu::factor(&k) {
                if lu.pivot_ratio() > 1e-30 {
                    return Some(NewtonKkt { n, h, a, lu });
                }
            }
            reg *= 100.0;
            reg_h *= 100.0;
        }
        None
    }

    fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut rhs = Vec::with_capacity(r1.len() + r2.len());
        rhs.extend_from_slice(r1);
        rhs.extend_from_slice(r2);
        let mut x = self.lu.solve(&rhs);
        for _ in 0..3 {
            let (dc, dnu) = x.split_at(n);
            let mut res = self.h.mul_vec(dc);
            let at = self.a.tr_mul_vec(dnu);
            for i in 0..n {
                res[i] = r1[i] - res[i] - at[i];
            }
            let ad = self.a.mul_vec(dc);
            res.extend(r2.iter().zip(&ad).map(|(b, v)| b - v));
            if norm_inf(&res) <= 1e-15 * norm_inf(&rhs) {
                break;
            }
            let corr = self.lu.solve(&res);
            for (xi, ci) in x.iter_mut().zip(&corr) {
                *xi += ci;
            }
        }
        let y = x.split_off(n);
        (x, y)
    }
}

fn solve_newton(h: &Mat, a: &Mat, r1: &[f64], r2: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    NewtonKkt::factor(h, a).map(|k| k.solve(r1, r2))
}

/// Equilibrated copy of a problem: `c = D ĉ`, rows scaled by `E`, cost by `σ`.
struct Scaled {
    q2: Mat,
    linear: Vec<f64>,
    a: Mat,
    b: Vec<f64>,
    g: SparseRows,
    h: Vec<f64>,
    d: Vec<f64>,
    ea: Vec<f64>,
    eg: Vec<f64>,
    sigma: f64,
}

impl Scaled {
    fn new(p: &QpProblem) -> Scaled {
        let n = p.num_vars();
        let me = p.a.rows();
        let mi = p.g.rows();
        let mut q = p.q.clone();
        let mut a = p.a.clone();
        let mut g = p.g.clone();
        let mut d = vec![1.0; n];
        let mut ea = vec![1.0; me];
        let mut eg = vec![1.0; mi];
        let inv_sqrt = |v: f64| {
            if v > 0.0 {
                1.0 / crate::math::sqrt(v)
            } else {
                1.0
            }
        };
        for _ in 0..15 {
            let mut col = vec![0.0f64; n];
            for r in 0..n {
                for c in 0..n {
                    col[c] = col[c].max(q[(r, c)].abs());
                }
            }
            let mut ra = vec![0.0f64; me];
            for r in 0..me {
                for c in 0..n {
                    let v = a[(r, c)].abs();
                    col[c] = col[c].max(v);
                    ra[r] = ra[r].max(v);
                }
            }
            let mut rg = vec![0.0f64; mi];
            for r in 0..mi {
                for (c, &v) in g.row(r).iter().enumerate() {
                    let v = v.abs();
                    if v > 0.0 {
                        col[c] = col[c].max(v);
                        rg[r] = rg[r].max(v);
                    }
                }
            }
            let dc: Vec<f64> = col.iter().map(|&v| inv_sqrt(v)).collect();
            let da: Vec<f64> = ra.iter().map(|&v| inv_sqrt(v)).collect();
            let dg: Vec<f64> = rg.iter().map(|&v| inv_sqrt(v)).collect();
            for r in 0..n {
                for c in 0..n {
                    q[(r, c)] *= dc[r] * dc[c];
                }
            }
            for r in 0..me {
                for c in 0..n {
                    a[(r, c)] *= da[r] * dc[c];
                }
            }
            for r in 0..mi {
                for (c, v) in g.row_mut(r).iter_mut().enumerate() {
                    *v *= dg[r] * dc[c];
                }
            }
            for i in 0..n {
                d[i] *= dc[i];
            }
            for i in 0..me {
                ea[i] *= da[i];
            }
            for i in 0..mi {
                eg[i] *= dg[i];
            }
        }
        let mut linear: Vec<f64> = p.linear.iter().zip(&d).map(|(l, di)| l * di).collect();
        let cost_scale = (2.0 * q.max_abs()).max(norm_inf(&linear));
        let sigma = if cost_scale > 0.0 {
            (1.0 / cost_scale).clamp(1e-6, 1e6)
        } else {
            1.0
        };
        let mut q2 = q;
        for r in 0..n {
            for v in q2.row_mut(r) {
                *v *= 2.0 * sigma;
            }
        }
        for l in linear.iter_mut() {
            *l *= sigma;
        }
        let b = p.b.iter().zip(&ea).map(|(v, e)| v * e).collect();
        let h = p.h.iter().zip(&eg).map(|(v, e)| v * e).collect();
        Scaled {
            q2,
            linear,
            a,
            b,
            g: SparseRows::from_dense(&g),
            h,
            d,
            ea,
            eg,
            sigma,
        }
    }

    fn unscale(&self, c: &[f64], nu: &[f64], lam: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let uc = c.iter().zip(&self.d).map(|(v, d)| v * d).collect();
        let unu = nu
            .iter()
            .zip(&self.ea)
            .map(|(v, e)| v * e / self.sigma)
            .collect();
        let ulam = lam
            .iter()
            .zip(&self.eg)
            .map(|(v, e)| v * e / self.sigma)
            .collect();
        (uc, unu, ulam)
    }
}
