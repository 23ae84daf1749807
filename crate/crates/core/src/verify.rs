//! Post-solve re-check of a trajectory against its instance.
//!
//! Works from the polynomial segments alone: positions and derivatives are
//! re-evaluated with [`PolySegment::eval`], so nothing here shares code with
//! the QP assembly.

use crate::polynomial::PiecewiseTrajectory;
use crate::qp_builder::ProblemInstance;

/// Worst observed violations; all are `≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Violations {
    /// `max n·p − o` over samples and faces.
    pub corridor: f64,
    /// `max |σ^(k)_axis| − d_m[k−1]` over samples, orders `1..κ`, axes.
    pub derivative: f64,
    /// Largest jump of orders `0..κ` across a junction.
    pub continuity: f64,
    /// Largest mismatch with the start or goal state.
    pub boundary: f64,
}

impl Violations {
    pub fn max(&self) -> f64 {
        self.corridor
            .max(self.derivative)
            .max(self.continuity)
            .max(self.boundary)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Re-checks `traj` at the instance's sample grid `τ_j = j·Δt/N_res`.
pub fn check(inst: &ProblemInstance, traj: &PiecewiseTrajectory) -> Violations {
    let mut v = Violations::default();
    let segs = traj.segments();
    if segs.len() != inst.num_segments() {
        v.boundary = f64::INFINITY;
        return v;
    }
    let kappa = inst.kappa();
    let nres = inst.n_res();
    let polys = inst.corridors().polytopes();
    for (seg, poly) in segs.iter().zip(polys) {
        for j in 0..=nres {
            let tau = seg.duration() * j as f64 / nres as f64;
            let p = seg.eval(tau, 0);
            for (n, &o) in poly.normals().iter().zip(poly.offsets()) {
                let s = n[0] * p[0] + n[1] * p[1] + n[2] * p[2] - o;
                v.corridor = v.corridor.max(s);
            }
            for k in 1..kappa {
                let d = seg.eval(tau, k);
                let lim = inst.d_m()[k - 1];
                for x in d {
                    v.derivative = v.derivative.max(x.abs() - lim);
                }
            }
        }
    }
    for w in segs.windows(2) {
        for k in 0..kappa {
            let a = w[0].eval(w[0].duration(), k);
            let b = w[1].eval(0.0, k);
            for axis in 0..3 {
                v.continuity = v.continuity.max((a[axis] - b[axis]).abs());
            }
        }
    }
    let first = &segs[0];
    let last = &segs[segs.len() - 1];
    for k in 0..kappa {
        let a = first.eval(0.0, k);
        let b = last.eval(last.duration(), k);
        for axis in 0..3 {
            v.boundary = v.boundary.max((a[axis] - inst.q0()[k][axis]).abs());
            v.boundary = v.boundary.max((b[axis] - inst.qf()[k][axis]).abs());
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corridor::{CorridorSequence, HPolytope};
    use crate::polynomial::PolySegment;
    use crate::qp_builder::assemble;
    use crate::qp_solver::solve;
    use alloc::vec;
    use alloc::vec::Vec;

    fn inst() -> ProblemInstance {
        let boxes = CorridorSequence::new(vec![
            HPolytope::from_box([-1.0, -1.0, -1.0], [2.0, 1.0, 1.0]).unwrap(),
            HPolytope::from_box([1.0, -1.0, -1.0], [4.0, 1.0, 1.0]).unwrap(),
        ])
        .unwrap();
        ProblemInstance::rest_to_rest(
            boxes,
            [0.0; 3],
            [3.0, 0.0, 0.0],
            vec![4.0, 6.0],
            20,
            17.5,
            3,
        )
        .unwrap()
    }

    #[test]
    fn solved_trajectory_passes() {
        let inst = inst();
        let t = [1.5, 1.5];
        let sol = solve(&assemble(&inst, &t).unwrap());
        let traj = PiecewiseTrajectory::from_stacked(&sol.c, &t, 5).unwrap();
        let v = check(&inst, &traj);
        assert!(v.within(1e-6), "{v:?}");
    }

    #[test]
    fn detects_each_violation() {
        let inst = inst();
        let t = [1.5, 1.5];
        let sol = solve(&assemble(&inst, &t).unwrap());
        let base: Vec<f64> = sol.c.clone();

        // Shifting segment 2 breaks continuity only at the junction.
        let mut c = base.clone();
        c[18] += 0.01;
        let v = check(
            &inst,
            &PiecewiseTrajectory::from_stacked(&c, &t, 5).unwrap(),
        );
        assert!(v.continuity > 0.009);

        // Pushing y of segment 1 outside the box.
        let mut c = base.clone();
        c[6] += 2.0;
        let v = check(
            &inst,
            &PiecewiseTrajectory::from_stacked(&c, &t, 5).unwrap(),
        );
        assert!(v.corridor > 0.5 && v.boundary > 1.0);

        // A fast straight line violates the velocity bound.
        let z = vec![0.0; 6];
        let fast = PiecewiseTrajectory::new(vec![
            PolySegment::new(
                [vec![0.0, 10.0, 0.0, 0.0, 0.0, 0.0], z.clone(), z.clone()],
                0.1,
            )
            .unwrap(),
            PolySegment::new([vec![1.0, 10.0, 0.0, 0.0, 0.0, 0.0], z.clone(), z], 0.1).unwrap(),
        ])
        .unwrap();
        assert!(check(&inst, &fast).derivative > 5.0);
    }
}
