//! Assembly of the duration-parameterized trajectory QP
//!
//! ```text
//! min  cᵀ Q(t) c   s.t.  A(t) c = b,  G(t) c ≤ h
//! ```
//!
//! Variables are ordered `(segment, axis, power)`:
//! `index = (3·i + axis)·(N+1) + j`.
//!
//! Equality rows, in order:
//! 1. start state, `(axis, order)` for order `0..κ`;
//! 2. end state, same layout;
//! 3. continuity at each junction `i`, `(axis, order)`.
//!
//! Inequality rows, in order:
//! 1. corridor rows, `(segment, sample, face)`;
//! 2. derivative bounds, `(segment, sample, order 1..κ−1, axis, sign)` with
//!    `+` before `−`.
//!
//! Samples are `τ_j = j·Δt_i/N_res` for `j = 0..=N_res`. Every matrix entry
//! is a polynomial in the durations; the `*_derivative` functions return the
//! termwise derivative with respect to one duration, in the same layout.

use alloc::vec;
use alloc::vec::Vec;

use crate::corridor::{CorridorSequence, Point};
use crate::error::{invalid, Result};
use crate::linalg::{independent_rows, Mat};
use crate::math::{falling_factorial, powi};
use crate::polynomial::gram;
use crate::T_MIN;

/// One planning problem: corridors, boundary states and limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    corridors: CorridorSequence,
    /// `q0[k]` is the `k`-th derivative at the start, `k = 0..κ`.
    q0: Vec<Point>,
    qf: Vec<Point>,
    /// `[v_max, a_max(, j_max)]`, length `κ−1`.
    d_m: Vec<f64>,
    n_res: usize,
    w_t: f64,
    kappa: usize,
}

impl ProblemInstance {
    pub fn new(
        corridors: CorridorSequence,
        q0: Vec<Point>,
        qf: Vec<Point>,
        d_m: Vec<f64>,
        n_res: usize,
        w_t: f64,
        kappa: usize,
    ) -> Result<Self> {
        if kappa != 3 && kappa != 4 {
            return Err(invalid("kappa must be 3 or 4"));
        }
        if q0.len() != kappa || qf.len() != kappa {
            return Err(invalid("boundary states need kappa derivative orders"));
        }
        if q0.iter().chain(&qf).flatten().any(|v| !v.is_finite()) {
            return Err(invalid("boundary states must be finite"));
        }
        if d_m.len() != kappa - 1 || d_m.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(invalid("derivative bounds must be kappa-1 positive values"));
        }
        if n_res < 2 {
            return Err(invalid("n_res must be at least 2"));
        }
        if !(w_t >= 0.0) || !w_t.is_finite() {
            return Err(invalid("w_t must be non-negative"));
        }
        let polys = corridors.polytopes();
        if !polys[0].contains(q0[0], 1e-9) {
            return Err(invalid("start position outside the first corridor"));
        }
        if !polys[polys.len() - 1].contains(qf[0], 1e-9) {
            return Err(invalid("goal position outside the last corridor"));
        }
        Ok(ProblemInstance {
            corridors,
            q0,
            qf,
            d_m,
            n_res,
            w_t,
            kappa,
        })
    }

    /// Rest-to-rest instance with Table I style limits.
    pub fn rest_to_rest(
        corridors: CorridorSequence,
        start: Point,
        goal: Point,
        d_m: Vec<f64>,
        n_res: usize,
        w_t: f64,
        kappa: usize,
    ) -> Result<Self> {
        let mut q0 = vec![[0.0; 3]; kappa];
        let mut qf = vec![[0.0; 3]; kappa];
        q0[0] = start;
        qf[0] = goal;
        ProblemInstance::new(corridors, q0, qf, d_m, n_res, w_t, kappa)
    }

    /// Same instance with boundary positions not checked against the corridors.
    /// Only meant for constructing deliberately infeasible problems.
    pub fn new_unchecked_endpoints(
        corridors: CorridorSequence,
        q0: Vec<Point>,
        qf: Vec<Point>,
        d_m: Vec<f64>,
        n_res: usize,
        w_t: f64,
        kappa: usize,
    ) -> Self {
        ProblemInstance {
            corridors,
            q0,
            qf,
            d_m,
            n_res,
            w_t,
            kappa,
        }
    }

    pub fn corridors(&self) -> &CorridorSequence {
        &self.corridors
    }

    pub fn q0(&self) -> &[Point] {
        &self.q0
    }

    pub fn qf(&self) -> &[Point] {
        &self.qf
    }

    pub fn d_m(&self) -> &[f64] {
        &self.d_m
    }

    pub fn n_res(&self) -> usize {
        self.n_res
    }

    pub fn w_t(&self) -> f64 {
        self.w_t
    }

    pub fn with_w_t(mut self, w_t: f64) -> Self {
        self.w_t = w_t;
        self
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn degree(&self) -> usize {
        2 * self.kappa - 1
    }

    pub fn num_segments(&self) -> usize {
        self.corridors.len()
    }

    pub fn num_vars(&self) -> usize {
        3 * self.num_segments() * (self.degree() + 1)
    }

    #[inline]
    pub fn var_index(&self, seg: usize, axis: usize, power: usize) -> usize {
        (3 * seg + axis) * (self.degree() + 1) + power
    }

    pub fn num_equalities(&self) -> usize {
        3 * self.kappa * (2 + self.num_segments() - 1)
    }

    pub fn num_corridor_rows(&self) -> usize {
        let faces: usize = self
            .corridors
            .polytopes()
            .iter()
            .map(|p| p.num_faces())
            .sum();
        faces * (self.n_res + 1)
    }

    pub fn num_inequalities(&self) -> usize {
        self.num_corridor_rows() + self.num_segments() * (self.n_res + 1) * 6 * (self.kappa - 1)
    }

    pub fn check_durations(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.num_segments() {
            return Err(invalid("duration vector length differs from segment count"));
        }
        if t.iter().any(|&v| !(v >= T_MIN) || !v.is_finite()) {
            return Err(invalid("durations must be finite and at least T_MIN"));
        }
        Ok(())
    }
}

/// Assembled QP. `linear` is zero for trajectory problems.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: Mat,
    pub linear: Vec<f64>,
    pub a: Mat,
    pub b: Vec<f64>,
    pub g: Mat,
    pub h: Vec<f64>,
    /// Indices into the full equality list of the rows kept in `a`.
    pub eq_rows: Vec<usize>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.q.rows()
    }

    /// `min linᵀx  s.t.  Gx ≤ h`.
    pub fn linear_program(linear: Vec<f64>, g: Mat, h: Vec<f64>) -> Self {
        let n = linear.len();
        QpProblem {
            q: Mat::zeros(n, n),
            linear,
            a: Mat::zeros(0, n),
            b: Vec::new(),
            g,
            h,
            eq_rows: Vec::new(),
        }
    }

    pub fn objective(&self, c: &[f64]) -> f64 {
        let qc = self.q.mul_vec(c);
        crate::linalg::dot(c, &qc) + crate::linalg::dot(&self.linear, c)
    }
}

/// Tolerance for dropping linearly dependent equality rows.
pub const EQ_RANK_TOL: f64 = 1e-10;

/// Block-diagonal Gram matrix `Q(t)`.
pub fn build_cost(inst: &ProblemInstance, t: &[f64]) -> Result<Mat> {
    inst.check_durations(t)?;
    let n = inst.num_vars();
    let d = inst.degree();
    let mut q = Mat::zeros(n, n);
    for (i, &dt) in t.iter().enumerate() {
        let g = gram(dt, d, inst.kappa);
        write_gram_blocks(inst, i, &g, &mut |r, c, v| q[(r, c)] = v);
    }
    Ok(q)
}

/// `∂Q/∂Δt_seg` as `(row, col, value)` triplets.
pub fn cost_derivative(inst: &ProblemInstance, t: &[f64], seg: usize) -> Vec<(usize, usize, f64)> {
    let g = crate::polynomial::gram_dt(t[seg], inst.degree(), inst.kappa);
    let mut out = Vec::new();
    write_gram_blocks(inst, seg, &g, &mut |r, c, v| out.push((r, c, v)));
    out
}

fn write_gram_blocks(
    inst: &ProblemInstance,
    seg: usize,
    g: &[f64],
    emit: &mut dyn FnMut(usize, usize, f64),
) {
    let np1 = inst.degree() + 1;
    for axis in 0..3 {
        let base = inst.var_index(seg, axis, 0);
        for j in inst.kappa..np1 {
            for k in inst.kappa..np1 {
                emit(base + j, base + k, g[j * np1 + k]);
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Mode {
    Value,
    /// Derivative with respect to this segment's duration.
    Deriv(usize),
}

/// Entry `β^(order)(τ)_p` or its derivative with respect to the segment
/// duration, where `τ = frac·Δt`.
#[inline]
fn basis_entry(p: usize, order: usize, dt: f64, frac: f64, deriv: bool) -> f64 {
    if deriv {
        if p < order + 1 {
            return 0.0;
        }
        frac * falling_factorial(p, order + 1) * powi(frac * dt, (p - order - 1) as u32)
    } else {
        if p < order {
            return 0.0;
        }
        falling_factorial(p, order) * powi(frac * dt, (p - order) as u32)
    }
}

fn fill_equalities(
    inst: &ProblemInstance,
    t: &[f64],
    mode: Mode,
    emit: &mut dyn FnMut(usize, usize, f64),
) {
    let m = inst.num_segments();
    let kappa = inst.kappa;
    let np1 = inst.degree() + 1;
    let mut row = 0;
    // start: segment 0 at τ = 0, independent of durations
    for axis in 0..3 {
        for k in 0..kappa {
            if let Mode::Value = mode {
                emit(row, inst.var_index(0, axis, k), falling_factorial(k, k));
            }
            row += 1;
        }
    }
    // end: last segment at τ = Δt_M
    let last = m - 1;
    for axis in 0..3 {
        for k in 0..kappa {
            let deriv = match mode {
                Mode::Value => Some(false),
                Mode::Deriv(s) if s == last => Some(true),
                _ => None,
            };
            if let Some(d) = deriv {
                for p in 0..np1 {
                    let v = basis_entry(p, k, t[last], 1.0, d);
                    if v != 0.0 {
                        emit(row, inst.var_index(last, axis, p), v);
                    }
                }
            }
            row += 1;
        }
    }
    // continuity: σ_i^(k)(Δt_i) − σ_{i+1}^(k)(0) = 0
    for i in 0..m.saturating_sub(1) {
        for axis in 0..3 {
            for k in 0..kappa {
                let deriv = match mode {
                    Mode::Value => Some(false),
                    Mode::Deriv(s) if s == i => Some(true),
                    _ => None,
                };
                if let Some(d) = deriv {
                    for p in 0..np1 {
                        let v = basis_entry(p, k, t[i], 1.0, d);
                        if v != 0.0 {
                            emit(row, inst.var_index(i, axis, p), v);
                        }
                    }
                }
                if let Mode::Value = mode {
                    emit(
                        row,
                        inst.var_index(i + 1, axis, k),
                        -falling_factorial(k, k),
                    );
                }
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, inst.num_equalities());
}

fn equality_rhs(inst: &ProblemInstance) -> Vec<f64> {
    let mut b = vec![0.0; inst.num_equalities()];
    let kappa = inst.kappa;
    for axis in 0..3 {
        for k in 0..kappa {
            b[axis * kappa + k] = inst.q0[k][axis];
            b[3 * kappa + axis * kappa + k] = inst.qf[k][axis];
        }
    }
    b
}

/// Full equality system (before redundant-row elimination).
pub fn build_equalities(inst: &ProblemInstance, t: &[f64]) -> Result<(Mat, Vec<f64>)> {
    inst.check_durations(t)?;
    let mut a = Mat::zeros(inst.num_equalities(), inst.num_vars());
    fill_equalities(inst, t, Mode::Value, &mut |r, c, v| a[(r, c)] = v);
    Ok((a, equality_rhs(inst)))
}

/// `∂A/∂Δt_seg` over the full equality list.
pub fn equality_derivative(
    inst: &ProblemInstance,
    t: &[f64],
    seg: usize,
) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    fill_equalities(inst, t, Mode::Deriv(seg), &mut |r, c, v| {
        out.push((r, c, v))
    });
    out
}

fn fill_inequalities(
    inst: &ProblemInstance,
    t: &[f64],
    mode: Mode,
    emit: &mut dyn FnMut(usize, usize, f64),
    mut rhs: Option<&mut Vec<f64>>,
) {
    let np1 = inst.degree() + 1;
    let nres = inst.n_res;
    let polys = inst.corridors.polytopes();
    let mut row = 0;
    let mut b = vec![0.0; np1];
    let active = |seg: usize| match mode {
        Mode::Value => Some(false),
        Mode::Deriv(s) if s == seg => Some(true),
        _ => None,
    };
    for (i, poly) in polys.iter().enumerate() {
        let a = active(i);
        for j in 0..=nres {
            let frac = j as f64 / nres as f64;
            if let Some(d) = a {
                for (p, slot) in b.iter_mut().enumerate() {
                    *slot = basis_entry(p, 0, t[i], frac, d);
                }
            }
            for (n, &o) in poly.normals().iter().zip(poly.offsets()) {
                if a.is_some() {
                    for axis in 0..3 {
                        if n[axis] == 0.0 {
                            continue;
                        }
                        for (p, &bp) in b.iter().enumerate() {
                            let v = n[axis] * bp;
                            if v != 0.0 {
                                emit(row, inst.var_index(i, axis, p), v);
                            }
                        }
                    }
                }
                if let Some(h) = rhs.as_deref_mut() {
                    h.push(o);
                }
                row += 1;
            }
        }
    }
    for i in 0..polys.len() {
        let a = active(i);
        for j in 0..=nres {
            let frac = j as f64 / nres as f64;
            for k in 1..inst.kappa {
                if let Some(d) = a {
                    for (p, slot) in b.iter_mut().enumerate() {
                        *slot = basis_entry(p, k, t[i], frac, d);
                    }
                }
                for axis in 0..3 {
                    for sign in [1.0, -1.0] {
                        if a.is_some() {
                            for (p, &bp) in b.iter().enumerate() {
                                if bp != 0.0 {
                                    emit(row, inst.var_index(i, axis, p), sign * bp);
                                }
                            }
                        }
                        if let Some(h) = rhs.as_deref_mut() {
                            h.push(inst.d_m[k - 1]);
                        }
                        row += 1;
                    }
                }
            }
        }
    }
    debug_assert_eq!(row, inst.num_inequalities());
}

/// Sampled corridor and derivative-bound rows.
pub fn build_inequalities(inst: &ProblemInstance, t: &[f64]) -> Result<(Mat, Vec<f64>)> {
    inst.check_durations(t)?;
    let mut g = Mat::zeros(inst.num_inequalities(), inst.num_vars());
    let mut h = Vec::with_capacity(inst.num_inequalities());
    fill_inequalities(
        inst,
        t,
        Mode::Value,
        &mut |r, c, v| g[(r, c)] = v,
        Some(&mut h),
    );
    Ok((g, h))
}

/// `∂G/∂Δt_seg`; nonzero only on rows of segment `seg`.
pub fn inequality_derivative(
    inst: &ProblemInstance,
    t: &[f64],
    seg: usize,
) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    fill_inequalities(
        inst,
        t,
        Mode::Deriv(seg),
        &mut |r, c, v| out.push((r, c, v)),
        None,
    );
    out
}

/// Full QP at durations `t`, with dependent equality rows removed.
pub fn assemble(inst: &ProblemInstance, t: &[f64]) -> Result<QpProblem> {
    let q = build_cost(inst, t)?;
    let (a_full, b_full) = build_equalities(inst, t)?;
    let (g, h) = build_inequalities(inst, t)?;
    let eq_rows = independent_rows(&a_full, EQ_RANK_TOL);
    let (a, b) = if eq_rows.len() == a_full.rows() {
        (a_full, b_full)
    } else {
        log::debug!(
            "dropping {} dependent equality rows",
            a_full.rows() - eq_rows.len()
        );
        let b = eq_rows.iter().map(|&r| b_full[r]).collect();
        (a_full.select_rows(&eq_rows), b)
    };
    Ok(QpProblem {
        linear: vec![0.0; q.rows()],
        q,
        a,
        b,
        g,
        h,
        eq_rows,
    })
}
