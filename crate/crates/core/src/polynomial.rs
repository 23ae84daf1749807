//! Monomial basis, piecewise polynomial trajectories and their control cost.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{falling_factorial, powi};

/// Derivative of order `order` of the monomial basis `[1, t, …, t^degree]`.
///
/// Entry `j` is `d^order/dt^order t^j`; entries with `j < order` are zero.
pub fn basis(t: f64, degree: usize, order: usize) -> Vec<f64> {
    let mut out = vec![0.0; degree + 1];
    basis_into(t, order, &mut out);
    out
}

/// Writes the basis row into `out` (its length sets the degree).
pub fn basis_into(t: f64, order: usize, out: &mut [f64]) {
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = if j < order {
            0.0
        } else {
            falling_factorial(j, order) * powi(t, (j - order) as u32)
        };
    }
}

/// Gram matrix `∫₀^T β^(κ)(t) β^(κ)(t)ᵀ dt` of size `(degree+1)²`, row-major.
pub fn gram(duration: f64, degree: usize, kappa: usize) -> Vec<f64> {
    let n = degree + 1;
    let mut g = vec![0.0; n * n];
    for j in kappa..n {
        for k in kappa..n {
            let p = (j + k + 1 - 2 * kappa) as u32;
            g[j * n + k] =
                falling_factorial(j, kappa) * falling_factorial(k, kappa) * powi(duration, p)
                    / p as f64;
        }
    }
    g
}

/// Derivative of [`gram`] with respect to the duration.
pub fn gram_dt(duration: f64, degree: usize, kappa: usize) -> Vec<f64> {
    let n = degree + 1;
    let mut g = vec![0.0; n * n];
    for j in kappa..n {
        for k in kappa..n {
            let p = (j + k + 1 - 2 * kappa) as u32;
            g[j * n + k] =
                falling_factorial(j, kappa) * falling_factorial(k, kappa) * powi(duration, p - 1);
        }
    }
    g
}

/// One polynomial piece: coefficient columns per axis over `[0, duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySegment {
    /// `coeffs[axis][j]` multiplies `t^j`.
    coeffs: [Vec<f64>; 3],
    duration: f64,
}

impl PolySegment {
    pub fn new(coeffs: [Vec<f64>; 3], duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(invalid("segment duration must be positive"));
        }
        let len = coeffs[0].len();
        if coeffs.iter().any(|c| c.len() != len) {
            return Err(invalid("coefficient columns differ in length"));
        }
        if len != 6 && len != 8 {
            return Err(invalid("degree must be 5 or 7"));
        }
        Ok(PolySegment { coeffs, duration })
    }

    pub fn degree(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn coeffs(&self, axis: usize) -> &[f64] {
        &self.coeffs[axis]
    }

    /// `σ_i^(order)(τ)` at local time `τ`.
    pub fn eval(&self, tau: f64, order: usize) -> [f64; 3] {
        let b = basis(tau, self.degree(), order);
        let mut out = [0.0; 3];
        for (o, c) in out.iter_mut().zip(&self.coeffs) {
            *o = crate::linalg::dot(c, &b);
        }
        out
    }
}

/// Concatenation of polynomial segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    segments: Vec<PolySegment>,
}

impl PiecewiseTrajectory {
    pub fn new(segments: Vec<PolySegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("trajectory needs at least one segment"));
        }
        let d = segments[0].degree();
        if segments.iter().any(|s| s.degree() != d) {
            return Err(invalid("segments differ in degree"));
        }
        Ok(PiecewiseTrajectory { segments })
    }

    /// Splits a stacked coefficient vector (segment, axis, power) into segments.
    pub fn from_stacked(c: &[f64], durations: &[f64], degree: usize) -> Result<Self> {
        let per_seg = 3 * (degree + 1);
        if c.len() != per_seg * durations.len() {
            return Err(invalid(
                "coefficient vector length does not match durations",
            ));
        }
        let segments = durations
            .iter()
            .enumerate()
            .map(|(i, &dt)| {
                let base = i * per_seg;
                let col =
                    |a: usize| c[base + a * (degree + 1)..base + (a + 1) * (degree + 1)].to_vec();
                PolySegment::new([col(0), col(1), col(2)], dt)
            })
            .collect::<Result<Vec<_>>>()?;
        PiecewiseTrajectory::new(segments)
    }

    pub fn segments(&self) -> &[PolySegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment index and local time for global time `t`. Junctions resolve to
    /// the left segment.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let total = self.total_duration();
        if !(0.0..=total).contains(&t) {
            return Err(Error::OutOfDomain { t, total });
        }
        let mut start = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            let end = start + s.duration;
            if t <= end || i + 1 == self.segments.len() {
                return Ok((i, (t - start).clamp(0.0, s.duration)));
            }
            start = end;
        }
        unreachable!("non-empty trajectory")
    }

    /// `σ^(order)(t)` at global time.
    pub fn eval(&self, t: f64, order: usize) -> Result<[f64; 3]> {
        let (i, tau) = self.locate(t)?;
        Ok(self.segments[i].eval(tau, order))
    }

    /// `∫ ‖σ^(κ)‖² dt`, computed exactly from Gram matrices.
    pub fn control_cost(&self, kappa: usize) -> f64 {
        let mut total = 0.0;
        for s in &self.segments {
            let n = s.degree() + 1;
            let g = gram(s.duration, s.degree(), kappa);
            for c in &s.coeffs {
                for j in 0..n {
                    let row = &g[j * n..(j + 1) * n];
                    total += c[j] * crate::linalg::dot(row, c);
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn min_jerk(dx: f64, t: f64) -> PiecewiseTrajectory {
        // x(τ) = dx (10 s³ − 15 s⁴ + 6 s⁵), s = τ/T
        let c = vec![
            0.0,
            0.0,
            0.0,
            10.0 * dx / powi(t, 3),
            -15.0 * dx / powi(t, 4),
            6.0 * dx / powi(t, 5),
        ];
        let z = vec![0.0; 6];
        PiecewiseTrajectory::new(vec![PolySegment::new([c, z.clone(), z], t).unwrap()]).unwrap()
    }

    #[test]
    fn basis_examples() {
        assert_eq!(basis(0.0, 5, 0), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(basis(0.0, 5, 3), vec![0.0, 0.0, 0.0, 6.0, 0.0, 0.0]);
        assert_eq!(basis(1.0, 5, 0), vec![1.0; 6]);
        assert_eq!(basis(2.0, 5, 7), vec![0.0; 6]);
    }

    #[test]
    fn eval_examples() {
        let z = PiecewiseTrajectory::new(vec![PolySegment::new(
            [vec![0.0; 6], vec![0.0; 6], vec![0.0; 6]],
            1.0,
        )
        .unwrap()])
        .unwrap();
        assert_eq!(z.eval(0.3, 0).unwrap(), [0.0; 3]);

        let q = min_jerk(1.0, 1.0);
        let mid = q.eval(0.5, 0).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-15 && mid[1] == 0.0 && mid[2] == 0.0);
        assert_eq!(q.eval(0.0, 1).unwrap(), [0.0; 3]);
        assert!(matches!(q.eval(1.5, 0), Err(Error::OutOfDomain { .. })));
        assert!(q.eval(-0.1, 0).is_err());
    }

    #[test]
    fn control_cost_examples() {
        assert!((min_jerk(1.0, 1.0).control_cost(3) - 720.0).abs() < 1e-9);
        assert!((min_jerk(1.0, 2.0).control_cost(3) - 22.5).abs() < 1e-12);
        let z = PiecewiseTrajectory::new(vec![PolySegment::new(
            [vec![0.0; 6], vec![0.0; 6], vec![0.0; 6]],
            3.0,
        )
        .unwrap()])
        .unwrap();
        assert_eq!(z.control_cost(3), 0.0);
    }

    #[test]
    fn gram_block_for_jerk() {
        let g = gram(1.0, 5, 3);
        let expect = [
            [36.0, 72.0, 120.0],
            [72.0, 192.0, 360.0],
            [120.0, 360.0, 720.0],
        ];
        for j in 0..3 {
            for k in 0..3 {
                assert_eq!(g[(j + 3) * 6 + k + 3], expect[j][k]);
            }
        }
        for j in 0..3 {
            for k in 0..6 {
                assert_eq!(g[j * 6 + k], 0.0);
                assert_eq!(g[k * 6 + j], 0.0);
            }
        }
        assert_eq!(gram_dt(1.7, 5, 3)[3 * 6 + 3], 36.0);
    }

    #[test]
    fn junction_uses_left_segment() {
        let a = PolySegment::new(
            [vec![1.0, 0., 0., 0., 0., 0.], vec![0.0; 6], vec![0.0; 6]],
            1.0,
        )
        .unwrap();
        let b = PolySegment::new(
            [vec![5.0, 0., 0., 0., 0., 0.], vec![0.0; 6], vec![0.0; 6]],
            1.0,
        )
        .unwrap();
        let tr = PiecewiseTrajectory::new(vec![a, b]).unwrap();
        assert_eq!(tr.eval(1.0, 0).unwrap()[0], 1.0);
        assert_eq!(tr.eval(1.25, 0).unwrap()[0], 5.0);
        assert_eq!(tr.locate(2.0).unwrap(), (1, 1.0));
    }

    #[test]
    fn rejects_bad_segments() {
        assert!(PolySegment::new([vec![0.0; 6], vec![0.0; 6], vec![0.0; 6]], 0.0).is_err());
        assert!(PolySegment::new([vec![0.0; 5], vec![0.0; 5], vec![0.0; 5]], 1.0).is_err());
        assert!(PiecewiseTrajectory::new(vec![]).is_err());
    }
}
