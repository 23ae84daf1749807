//! Sensitivities of the QP solution and of the trajectory loss with respect
//! to the segment durations, by implicit differentiation of the KKT system
//!
//! ```text
//! Γ(y, t) = [ 2Qc + q + Aᵀν + Gᵀλ ;  Ac − b ;  diag(λ)(Gc − h) ] = 0,   y = (c, ν, λ).
//! ```
//!
//! `b` and `h` do not depend on the durations, so `∂Γ/∂t_i` only involves
//! `∂Q/∂t_i`, `∂A/∂t_i` and `∂G/∂t_i`.
//!
//! The Jacobian `∂Γ/∂y` is used unsymmetrized, with `ε·I` added to its
//! diagonal (`ε = 1e-10·‖∂Γ/∂y‖∞`). Rows whose slack dominates their
//! multiplier are eliminated exactly through their complementarity equation,
//! so the dense LU only sees the primal, the equality duals and the
//! (near-)active inequality duals.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, Lu, Mat, SparseRows};
use crate::qp_builder::{
    cost_derivative, equality_derivative, inequality_derivative, ProblemInstance, QpProblem,
};
use crate::qp_solver::QpSolution;

/// Sparse matrix entry `(row, col, value)`.
pub type Triplet = (usize, usize, f64);

/// Derivative matrices `∂Q/∂t_i`, `∂A/∂t_i`, `∂G/∂t_i`, one list per duration.
///
/// Row indices of `da` refer to the equality rows kept in the assembled
/// problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixJacobians {
    pub dq: Vec<Vec<Triplet>>,
    pub da: Vec<Vec<Triplet>>,
    pub dg: Vec<Vec<Triplet>>,
}

impl MatrixJacobians {
    pub fn num_durations(&self) -> usize {
        self.dq.len()
    }
}

pub fn matrix_jacobians(
    inst: &ProblemInstance,
    t: &[f64],
    prob: &QpProblem,
) -> Result<MatrixJacobians> {
    inst.check_durations(t)?;
    let mut kept = vec![usize::MAX; inst.num_equalities()];
    for (k, &r) in prob.eq_rows.iter().enumerate() {
        kept[r] = k;
    }
    let m = t.len();
    let mut out = MatrixJacobians {
        dq: Vec::with_capacity(m),
        da: Vec::with_capacity(m),
        dg: Vec::with_capacity(m),
    };
    for seg in 0..m {
        out.dq.push(cost_derivative(inst, t, seg));
        out.da.push(
            equality_derivative(inst, t, seg)
                .into_iter()
                .filter(|&(r, _, _)| kept[r] != usize::MAX)
                .map(|(r, c, v)| (kept[r], c, v))
                .collect(),
        );
        out.dg.push(inequality_derivative(inst, t, seg));
    }
    Ok(out)
}

/// Stacked `Γ` at the solution, in the order `(stationarity, equality,
/// complementarity)`.
pub fn kkt_residual(sol: &QpSolution, prob: &QpProblem) -> Vec<f64> {
    let c = &sol.c;
    let mut stat = prob.q.mul_vec(c);
    for (s, l) in stat.iter_mut().zip(&prob.linear) {
        *s = 2.0 * *s + l;
    }
    let at = prob.a.tr_mul_vec(&sol.nu);
    let gt = prob.g.tr_mul_vec(&sol.lambda);
    for i in 0..stat.len() {
        stat[i] += at[i] + gt[i];
    }
    let ac = prob.a.mul_vec(c);
    let gc = prob.g.mul_vec(c);
    let mut out = stat;
    out.extend(ac.iter().zip(&prob.b).map(|(x, b)| x - b));
    out.extend((0..gc.len()).map(|r| sol.lambda[r] * (gc[r] - prob.h[r])));
    out
}

/// `∂y*/∂t_i` for every duration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionJacobian {
    /// `dc[i]` is `∂c*/∂t_i`.
    pub dc: Vec<Vec<f64>>,
    pub dnu: Vec<Vec<f64>>,
    pub dlambda: Vec<Vec<f64>>,
}

/// Pivot ratio below which the regularized KKT matrix counts as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-16;
const REFINEMENT_PASSES: usize = 5;

pub fn solution_jacobian(
    sol: &QpSolution,
    prob: &QpProblem,
    jac: &MatrixJacobians,
) -> Result<SolutionJacobian> {
    if !sol.is_optimal() {
        return Err(invalid("solution jacobian needs an optimal solve"));
    }
    let n = prob.num_vars();
    let me = prob.a.rows();
    let mi = prob.g.rows();
    let g = SparseRows::from_dense(&prob.g);
    let gc = g.mul_vec(&sol.c);
    let slack: Vec<f64> = (0..mi).map(|r| gc[r] - prob.h[r]).collect();
    let lam = &sol.lambda;

    let eps = 1e-10 * kkt_norm_inf(prob, &g, lam, &slack);
    let kept: Vec<usize> = (0..mi)
        .filter(|&r| !(slack[r].abs() > lam[r].abs()))
        .collect();
    let mut kept_pos = vec![usize::MAX; mi];
    for (k, &r) in kept.iter().enumerate() {
        kept_pos[r] = k;
    }
    let elim_w: Vec<f64> = (0..mi)
        .map(|r| {
            if kept_pos[r] == usize::MAX {
                lam[r] / slack[r]
            } else {
                0.0
            }
        })
        .collect();

    // Reduced matrix over (c, ν, λ_kept).
    let k = kept.len();
    let dim = n + me + k;
    let mut kmat = Mat::zeros(dim, dim);
    for r in 0..n {
        for (c, &v) in prob.q.row(r).iter().enumerate() {
            kmat[(r, c)] = 2.0 * v;
        }
    }
    // Eliminated rows contribute −Gᵢᵀ (λᵢ/sᵢ) Gᵢ to the primal block.
    let mut elim = Mat::zeros(n, n);
    g.add_weighted_gram(&elim_w, &mut elim);
    for r in 0..n {
        for c in 0..n {
            kmat[(r, c)] -= elim[(r, c)];
        }
    }
    for r in 0..me {
        for (c, &v) in prob.a.row(r).iter().enumerate() {
            kmat[(n + r, c)] = v;
            kmat[(c, n + r)] = v;
        }
    }
    for (kk, &r) in kept.iter().enumerate() {
        let (idx, vals) = g.row(r);
        let row = n + me + kk;
        for (&c, &v) in idx.iter().zip(vals) {
            kmat[(c, row)] = v;
            kmat[(row, c)] = lam[r] * v;
        }
        kmat[(row, row)] = slack[r];
    }
    let mut reg = kmat.clone();
    for d in 0..dim {
        reg[(d, d)] += eps;
    }
    let lu = Lu::factor(&reg).ok_or(Error::SingularKkt {
        condition: f64::INFINITY,
    })?;
    let ratio = lu.pivot_ratio();
    if !(ratio > SINGULAR_PIVOT_RATIO) {
        return Err(Error::SingularKkt {
            condition: 1.0 / ratio,
        });
    }
    // The regularized factor preconditions a few refinement passes on the
    // unregularized system; when that system is singular the passes stall
    // harmlessly near the regularized solution.
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let mut x = lu.solve(rhs);
        let target = 1e-14 * crate::linalg::norm_inf(rhs);
        for _ in 0..REFINEMENT_PASSES {
            let kx = kmat.mul_vec(&x);
            let res: Vec<f64> = rhs.iter().zip(&kx).map(|(b, v)| b - v).collect();
            if crate::linalg::norm_inf(&res) <= target {
                break;
            }
            let corr = lu.solve(&res);
            crate::linalg::axpy(1.0, &corr, &mut x);
        }
        x
    };

    let m = jac.num_durations();
    let mut out = SolutionJacobian {
        dc: Vec::with_capacity(m),
        dnu: Vec::with_capacity(m),
        dlambda: Vec::with_capacity(m),
    };
    for i in 0..m {
        // Right-hand side −∂Γ/∂t_i.
        let mut r1 = vec![0.0; n];
        for &(r, c, v) in &jac.dq[i] {
            r1[r] -= 2.0 * v * sol.c[c];
        }
        let mut r2 = vec![0.0; me];
        for &(r, c, v) in &jac.da[i] {
            r1[c] -= v * sol.nu[r];
            r2[r] -= v * sol.c[c];
        }
        let mut r3 = vec![0.0; mi];
        for &(r, c, v) in &jac.dg[i] {
            r1[c] -= v * lam[r];
            r3[r] -= lam[r] * v * sol.c[c];
        }
        // Eliminated rows: dλᵣ = (r3ᵣ − λᵣ Gᵣ dc) / dᵣ.
        for r in 0..mi {
            if kept_pos[r] == usize::MAX && r3[r] != 0.0 {
                let (idx, vals) = g.row(r);
                let f = r3[r] / slack[r];
                for (&c, &v) in idx.iter().zip(vals) {
                    r1[c] -= v * f;
                }
            }
        }
        let mut rhs = r1;
        rhs.extend_from_slice(&r2);
        rhs.extend(kept.iter().map(|&r| r3[r]));
        let x = solve(&rhs);
        let dc = x[..n].to_vec();
        let dnu = x[n..n + me].to_vec();
        let mut dl = vec![0.0; mi];
        for r in 0..mi {
            dl[r] = if kept_pos[r] == usize::MAX {
                (r3[r] - lam[r] * g.row_dot(r, &dc)) / slack[r]
            } else {
                x[n + me + kept_pos[r]]
            };
        }
        out.dc.push(dc);
        out.dnu.push(dnu);
        out.dlambda.push(dl);
    }
    Ok(out)
}

/// `‖∂Γ/∂y‖∞` (largest absolute row sum) without forming the matrix.
fn kkt_norm_inf(prob: &QpProblem, g: &SparseRows, lam: &[f64], slack: &[f64]) -> f64 {
    let n = prob.num_vars();
    let mut rows = vec![0.0f64; n];
    for (r, acc) in rows.iter_mut().enumerate() {
        *acc = prob.q.row(r).iter().map(|v| 2.0 * v.abs()).sum();
    }
    let mut norm: f64 = 0.0;
    for r in 0..prob.a.rows() {
        let row = prob.a.row(r);
        norm = norm.max(row.iter().map(|v| v.abs()).sum());
        for (c, v) in row.iter().enumerate() {
            rows[c] += v.abs();
        }
    }
    for r in 0..g.rows() {
        let (idx, vals) = g.row(r);
        let mut sum = slack[r].abs();
        for (&c, &v) in idx.iter().zip(vals) {
            rows[c] += v.abs();
            sum += lam[r].abs() * v.abs();
        }
        norm = norm.max(sum);
    }
    rows.iter().fold(norm, |m, &v| m.max(v))
}

/// `ℓ_F(t) = c*ᵀQ(t)c* + w_t·Σt`.
pub fn trajectory_loss(prob: &QpProblem, c: &[f64], t: &[f64], w_t: f64) -> f64 {
    prob.objective(c) + w_t * t.iter().sum::<f64>()
}

/// `∇_t ℓ_F` through the solution Jacobian:
/// `∂ℓ/∂t_i = c*ᵀ(∂Q/∂t_i)c* + (∂c*/∂t_i)ᵀ(2Qc*) + w_t`.
pub fn loss_gradient(
    sol: &QpSolution,
    prob: &QpProblem,
    jac: &MatrixJacobians,
    w_t: f64,
) -> Result<Vec<f64>> {
    let sj = solution_jacobian(sol, prob, jac)?;
    let mut grad_c = prob.q.mul_vec(&sol.c);
    for v in grad_c.iter_mut() {
        *v *= 2.0;
    }
    Ok((0..jac.num_durations())
        .map(|i| quad_form(&jac.dq[i], &sol.c, &sol.c) + dot(&sj.dc[i], &grad_c) + w_t)
        .collect())
}

/// Envelope form of the same gradient: the partial derivative of the
/// Lagrangian, `c*ᵀ∂Q c* + ν*ᵀ∂A c* + λ*ᵀ∂G c* + w_t`.
pub fn lagrangian_gradient(sol: &QpSolution, jac: &MatrixJacobians, w_t: f64) -> Vec<f64> {
    (0..jac.num_durations())
        .map(|i| {
            quad_form(&jac.dq[i], &sol.c, &sol.c)
                + quad_form(&jac.da[i], &sol.nu, &sol.c)
                + quad_form(&jac.dg[i], &sol.lambda, &sol.c)
                + w_t
        })
        .collect()
}

/// `xᵀ M y` for a triplet matrix.
fn quad_form(m: &[Triplet], x: &[f64], y: &[f64]) -> f64 {
    m.iter().map(|&(r, c, v)| x[r] * v * y[c]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::{
        generate_corridor_sequence, CorridorSequence, GeneratorConfig, HPolytope,
    };
    use crate::qp_builder::assemble;
    use crate::qp_solver::{solve, QpStatus};

    fn single(w_t: f64, goal: f64) -> ProblemInstance {
        let boxes = CorridorSequence::new(vec![HPolytope::from_box(
            [-10.0, -10.0, -10.0],
            [10.0, 10.0, 10.0],
        )
        .unwrap()])
        .unwrap();
        ProblemInstance::rest_to_rest(
            boxes,
            [0.0; 3],
            [goal, 0.0, 0.0],
            vec![40.0, 60.0],
            20,
            w_t,
            3,
        )
        .unwrap()
    }

    fn random(seed: u64) -> (ProblemInstance, Vec<f64>) {
        let g = generate_corridor_sequence(seed, &GeneratorConfig::default()).unwrap();
        let inst = ProblemInstance::rest_to_rest(
            g.corridors.clone(),
            g.start(),
            g.goal(),
            vec![4.0, 6.0],
            20,
            17.5,
            3,
        )
        .unwrap();
        let t = g
            .path
            .windows(2)
            .map(|w| {
                let d: f64 = (0..3)
                    .map(|k| (w[1][k] - w[0][k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                d / 2.0 + 0.5
            })
            .collect();
        (inst, t)
    }

    fn gradient_at(inst: &ProblemInstance, t: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = assemble(inst, t).unwrap();
        let sol = solve(&p);
        assert!(sol.is_optimal());
        let jac = matrix_jacobians(inst, t, &p).unwrap();
        (
            loss_gradient(&sol, &p, &jac, inst.w_t()).unwrap(),
            lagrangian_gradient(&sol, &jac, inst.w_t()),
        )
    }

    #[test]
    fn closed_form_single_segment() {
        let inst = single(17.5, 1.0);
        let (g, env) = gradient_at(&inst, &[1.0]);
        assert!((g[0] + 3582.5).abs() < 1e-3 * 3582.5, "{}", g[0]);
        assert!((env[0] + 3582.5).abs() < 1e-3 * 3582.5);

        let t_star = libm::pow(3600.0 / 17.5, 1.0 / 6.0);
        assert!((t_star - 2.4298).abs() < 5e-4);
        let (g, _) = gradient_at(&inst, &[t_star]);
        assert!(g[0].abs() < 1e-4, "{}", g[0]);
    }

    #[test]
    fn zero_displacement_zero_gradient() {
        let inst = single(0.0, 0.0);
        let (g, _) = gradient_at(&inst, &[1.7]);
        assert!(g[0].abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_kkt_point() {
        // min x² s.t. 1 − x ≤ 0 at (x, λ) = (1, 2).
        let prob = QpProblem {
            q: Mat::identity(1),
            linear: vec![0.0],
            a: Mat::zeros(0, 1),
            b: Vec::new(),
            g: Mat::from_rows(1, 1, vec![-1.0]),
            h: vec![-1.0],
            eq_rows: Vec::new(),
        };
        let mut sol = QpSolution {
            c: vec![1.0],
            nu: Vec::new(),
            lambda: vec![2.0],
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
        };
        assert_eq!(kkt_residual(&sol, &prob), vec![0.0, 0.0]);
        sol.c[0] += 0.25;
        let r = kkt_residual(&sol, &prob);
        assert_eq!(r[0], 2.0 * 0.25);
    }

    #[test]
    fn solution_jacobian_matches_finite_differences() {
        let inst = single(17.5, 1.0);
        let t = 1.3;
        let p = assemble(&inst, &[t]).unwrap();
        let sol = solve(&p);
        let jac = matrix_jacobians(&inst, &[t], &p).unwrap();
        let sj = solution_jacobian(&sol, &p, &jac).unwrap();
        let h = 1e-5 * t;
        let cp = solve(&assemble(&inst, &[t + h]).unwrap()).c;
        let cm = solve(&assemble(&inst, &[t - h]).unwrap()).c;
        let fd: Vec<f64> = cp
            .iter()
            .zip(&cm)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let scale = crate::linalg::norm_inf(&fd);
        let err = sj.dc[0]
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-4 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn derivative_matrices_match_finite_differences() {
        let (inst, t) = random(4);
        let p = assemble(&inst, &t).unwrap();
        let jac = matrix_jacobians(&inst, &t, &p).unwrap();
        for i in 0..t.len() {
            let h = 1e-6;
            let mut tp = t.clone();
            tp[i] += h;
            let mut tm = t.clone();
            tm[i] -= h;
            let pp = assemble(&inst, &tp).unwrap();
            let pm = assemble(&inst, &tm).unwrap();
            for (dense, (mp, mm)) in [
                (&jac.dq[i], (&pp.q, &pm.q)),
                (&jac.da[i], (&pp.a, &pm.a)),
                (&jac.dg[i], (&pp.g, &pm.g)),
            ] {
                let mut d = Mat::zeros(mp.rows(), mp.cols());
                for &(r, c, v) in dense {
                    d[(r, c)] += v;
                }
                for r in 0..mp.rows() {
                    for c in 0..mp.cols() {
                        let fd = (mp[(r, c)] - mm[(r, c)]) / (2.0 * h);
                        assert!(
                            (fd - d[(r, c)]).abs() <= 1e-6 * (1.0 + fd.abs()),
                            "segment {i} entry ({r},{c}): {fd} vs {}",
                            d[(r, c)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn block_elimination_matches_full_lu() {
        let (inst, t) = random(7);
        let p = assemble(&inst, &t).unwrap();
        let sol = solve(&p);
        assert!(sol.is_optimal());
        let jac = matrix_jacobians(&inst, &t, &p).unwrap();
        let sj = solution_jacobian(&sol, &p, &jac).unwrap();

        let (n, me, mi) = (p.num_vars(), p.a.rows(), p.g.rows());
        let gc = p.g.mul_vec(&sol.c);
        let dim = n + me + mi;
        let mut j = Mat::zeros(dim, dim);
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] = 2.0 * p.q[(r, c)];
            }
        }
        for r in 0..me {
            for c in 0..n {
                j[(n + r, c)] = p.a[(r, c)];
                j[(c, n + r)] = p.a[(r, c)];
            }
        }
        for r in 0..mi {
            for c in 0..n {
                j[(c, n + me + r)] = p.g[(r, c)];
                j[(n + me + r, c)] = sol.lambda[r] * p.g[(r, c)];
            }
            j[(n + me + r, n + me + r)] = gc[r] - p.h[r];
        }
        let lu = Lu::factor(&j).unwrap();
        for i in 0..t.len() {
            let mut rhs = vec![0.0; dim];
            for &(r, c, v) in &jac.dq[i] {
                rhs[r] -= 2.0 * v * sol.c[c];
            }
            for &(r, c, v) in &jac.da[i] {
                rhs[c] -= v * sol.nu[r];
                rhs[n + r] -= v * sol.c[c];
            }
            for &(r, c, v) in &jac.dg[i] {
                rhs[c] -= v * sol.lambda[r];
                rhs[n + me + r] -= sol.lambda[r] * v * sol.c[c];
            }
            let mut x = lu.solve(&rhs);
            let jx = j.mul_vec(&x);
            let res: Vec<f64> = rhs.iter().zip(&jx).map(|(a, b)| a - b).collect();
            crate::linalg::axpy(1.0, &lu.solve(&res), &mut x);
            let scale = crate::linalg::norm_inf(&x[..n]).max(1.0);
            for k in 0..n {
                assert!(
                    (x[k] - sj.dc[i][k]).abs() <= 1e-7 * scale,
                    "dc[{i}][{k}]: {} vs {}",
                    x[k],
                    sj.dc[i][k]
                );
            }
        }
    }

    #[test]
    fn duplicate_inequality_row_leaves_primal_sensitivity() {
        let (inst, t) = random(9);
        let p = assemble(&inst, &t).unwrap();
        let sol = solve(&p);
        let jac = matrix_jacobians(&inst, &t, &p).unwrap();
        let base = solution_jacobian(&sol, &p, &jac).unwrap();

        // Duplicate the row with the largest multiplier.
        let dup = (0..p.g.rows())
            .max_by(|&a, &b| sol.lambda[a].total_cmp(&sol.lambda[b]))
            .unwrap();
        let mut p2 = p.clone();
        let mut data = p.g.as_slice().to_vec();
        data.extend_from_slice(p.g.row(dup));
        p2.g = Mat::from_rows(p.g.rows() + 1, p.num_vars(), data);
        p2.h.push(p.h[dup]);
        let mut jac2 = jac.clone();
        for rows in jac2.dg.iter_mut() {
            let extra: Vec<Triplet> = rows
                .iter()
                .filter(|e| e.0 == dup)
                .map(|&(_, c, v)| (p.g.rows(), c, v))
                .collect();
            rows.extend(extra);
        }
        let sol2 = solve(&p2);
        assert!(sol2.is_optimal());
        let other = solution_jacobian(&sol2, &p2, &jac2).unwrap();
        for i in 0..t.len() {
            let scale = crate::linalg::norm_inf(&base.dc[i]).max(1.0);
            for (a, b) in base.dc[i].iter().zip(&other.dc[i]) {
                assert!((a - b).abs() <= 1e-4 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn envelope_agrees_with_implicit_gradient() {
        let mut checked = 0;
        for seed in 0..30 {
            let (inst, t) = random(seed);
            let p = assemble(&inst, &t).unwrap();
            let sol = solve(&p);
            if !sol.is_optimal() {
                continue;
            }
            let jac = matrix_jacobians(&inst, &t, &p).unwrap();
            let g = loss_gradient(&sol, &p, &jac, inst.w_t()).unwrap();
            let e = lagrangian_gradient(&sol, &jac, inst.w_t());
            let scale = crate::linalg::norm_inf(&g).max(crate::linalg::norm_inf(&e));
            for (a, b) in g.iter().zip(&e) {
                assert!((a - b).abs() <= 1e-4 * scale, "seed {seed}: {a} vs {b}");
            }
            checked += 1;
        }
        assert!(checked >= 25);
    }

    #[test]
    fn inactive_rows_have_zero_dual_sensitivity() {
        let inst = single(17.5, 1.0);
        let p = assemble(&inst, &[1.0]).unwrap();
        let sol = solve(&p);
        let jac = matrix_jacobians(&inst, &[1.0], &p).unwrap();
        let sj = solution_jacobian(&sol, &p, &jac).unwrap();
        assert!(sj.dlambda[0].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn boundary_rows_of_equalities_are_constant() {
        let (inst, t) = random(2);
        let p = assemble(&inst, &t).unwrap();
        let jac = matrix_jacobians(&inst, &t, &p).unwrap();
        // Start rows (first 3κ) never depend on durations.
        for da in &jac.da {
            assert!(da.iter().all(|&(r, _, _)| r >= 9));
        }
    }
}
