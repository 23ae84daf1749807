//! Half-space corridors, synthetic box chains and fixed-size network input.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::qp_builder::QpProblem;
use crate::qp_solver::{self, QpStatus};
use crate::F_MAX_LIMIT;

pub type Point = [f64; 3];

/// Convex polytope `{x : Nx ≤ o}` with unit-length rows of `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    normals: Vec<Point>,
    offsets: Vec<f64>,
}

impl HPolytope {
    /// Builds a polytope, rescaling every row to a unit normal.
    pub fn new(normals: Vec<Point>, offsets: Vec<f64>) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(invalid("normals and offsets differ in length"));
        }
        if normals.is_empty() {
            return Err(invalid("polytope needs at least one face"));
        }
        if normals.len() > F_MAX_LIMIT {
            return Err(Error::OversizeCorridor {
                faces: normals.len(),
                limit: F_MAX_LIMIT,
            });
        }
        let mut out_n = Vec::with_capacity(normals.len());
        let mut out_o = Vec::with_capacity(normals.len());
        for (n, &o) in normals.iter().zip(&offsets) {
            let norm = crate::math::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
            if !(norm > 1e-12) || !norm.is_finite() || !o.is_finite() {
                return Err(invalid("degenerate or non-finite face"));
            }
            out_n.push([n[0] / norm, n[1] / norm, n[2] / norm]);
            out_o.push(o / norm);
        }
        Ok(HPolytope {
            normals: out_n,
            offsets: out_o,
        })
    }

    /// Axis-aligned box `[lo, hi]` as six half-spaces (+x, −x, +y, −y, +z, −z).
    pub fn from_box(lo: Point, hi: Point) -> Result<Self> {
        if (0..3).any(|k| !(hi[k] > lo[k])) {
            return Err(invalid("box must have positive extent on every axis"));
        }
        let mut normals = Vec::with_capacity(6);
        let mut offsets = Vec::with_capacity(6);
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            normals.push(e);
            offsets.push(hi[k]);
            e[k] = -1.0;
            normals.push(e);
            offsets.push(-lo[k]);
        }
        HPolytope::new(normals, offsets)
    }

    pub fn num_faces(&self) -> usize {
        self.normals.len()
    }

    pub fn normals(&self) -> &[Point] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// `Nx ≤ o + slack` on every face.
    pub fn contains(&self, p: Point, slack: f64) -> bool {
        self.signed_violation(p) <= slack
    }

    /// `max_f (n_f·p − o_f)`; non-positive inside.
    pub fn signed_violation(&self, p: Point) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, o)| n[0] * p[0] + n[1] * p[1] + n[2] * p[2] - o)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Center and radius of the largest inscribed ball, if the interior is nonempty.
    pub fn chebyshev_center(&self) -> Option<(Point, f64)> {
        chebyshev_center(&[self])
    }

    /// True when the polytope is bounded and has nonempty interior.
    pub fn is_bounded_solid(&self) -> bool {
        if self.chebyshev_center().is_none() {
            return false;
        }
        const CAP: f64 = 1e5;
        for k in 0..3 {
            for sign in [1.0, -1.0] {
                let mut dir = [0.0; 3];
                dir[k] = sign;
                match support(&[self], dir, CAP) {
                    Some(v) if v < 0.5 * CAP => {}
                    _ => return false,
                }
            }
        }
        true
    }
}

/// Sequence of overlapping polytopes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorSequence {
    polytopes: Vec<HPolytope>,
}

impl CorridorSequence {
    /// Validates that consecutive polytopes share interior points.
    pub fn new(polytopes: Vec<HPolytope>) -> Result<Self> {
        if polytopes.is_empty() {
            return Err(invalid("corridor sequence is empty"));
        }
        for (i, w) in polytopes.windows(2).enumerate() {
            if overlap_witness(&w[0], &w[1]).is_none() {
                return Err(invalid(alloc::format!(
                    "corridors {i} and {} do not overlap",
                    i + 1
                )));
            }
        }
        Ok(CorridorSequence { polytopes })
    }

    pub fn polytopes(&self) -> &[HPolytope] {
        &self.polytopes
    }

    pub fn len(&self) -> usize {
        self.polytopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polytopes.is_empty()
    }

    /// Overlap witnesses between consecutive polytopes.
    pub fn witnesses(&self) -> Vec<Point> {
        self.polytopes
            .windows(2)
            .map(|w| overlap_witness(&w[0], &w[1]).expect("overlap checked at construction"))
            .collect()
    }
}

/// Chebyshev center of `a ∩ b` when the intersection has positive inradius.
pub fn overlap_witness(a: &HPolytope, b: &HPolytope) -> Option<Point> {
    chebyshev_center(&[a, b]).map(|(c, _)| c)
}

/// Inradius of `a ∩ b`, zero when disjoint.
pub fn overlap_radius(a: &HPolytope, b: &HPolytope) -> f64 {
    chebyshev_center(&[a, b]).map_or(0.0, |(_, r)| r)
}

const RADIUS_CAP: f64 = 1e3;
const COORD_CAP: f64 = 1e4;

/// LP `max r  s.t.  n_f·x + r ≤ o_f` over the faces of all polytopes.
fn chebyshev_center(polys: &[&HPolytope]) -> Option<(Point, f64)> {
    let faces: usize = polys.iter().map(|p| p.num_faces()).sum();
    // variables (x, y, z, r); extra rows: r ≤ cap, |x_k| ≤ coord cap
    let rows = faces + 1 + 6;
    let mut g = Mat::zeros(rows, 4);
    let mut h = vec![0.0; rows];
    let mut r = 0;
    for p in polys {
        for (n, &o) in p.normals.iter().zip(&p.offsets) {
            g.row_mut(r).copy_from_slice(&[n[0], n[1], n[2], 1.0]);
            h[r] = o;
            r += 1;
        }
    }
    g[(r, 3)] = 1.0;
    h[r] = RADIUS_CAP;
    r += 1;
    for k in 0..3 {
        g[(r, k)] = 1.0;
        h[r] = COORD_CAP;
        g[(r + 1, k)] = -1.0;
        h[r + 1] = COORD_CAP;
        r += 2;
    }
    let prob = QpProblem::linear_program(vec![0.0, 0.0, 0.0, -1.0], g, h);
    let sol = qp_solver::solve(&prob);
    if sol.status != QpStatus::Optimal {
        return None;
    }
    let radius = sol.c[3];
    if radius > 1e-9 {
        Some(([sol.c[0], sol.c[1], sol.c[2]], radius))
    } else {
        None
    }
}

/// `max dir·x` over the intersection, capped by a coordinate box.
fn support(polys: &[&HPolytope], dir: Point, cap: f64) -> Option<f64> {
    let faces: usize = polys.iter().map(|p| p.num_faces()).sum();
    let mut g = Mat::zeros(faces + 6, 3);
    let mut h = vec![0.0; faces + 6];
    let mut r = 0;
    for p in polys {
        for (n, &o) in p.normals.iter().zip(&p.offsets) {
            g.row_mut(r).copy_from_slice(n);
            h[r] = o;
            r += 1;
        }
    }
    for k in 0..3 {
        g[(r, k)] = 1.0;
        h[r] = cap;
        g[(r + 1, k)] = -1.0;
        h[r + 1] = cap;
        r += 2;
    }
    let prob = QpProblem::linear_program(vec![-dir[0], -dir[1], -dir[2]], g, h);
    let sol = qp_solver::solve(&prob);
    (sol.status == QpStatus::Optimal)
        .then(|| dir[0] * sol.c[0] + dir[1] * sol.c[1] + dir[2] * sol.c[2])
}

/// Parameters of the synthetic box-chain generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Inclusive range of corridor counts to draw from.
    pub segments: (usize, usize),
    /// Hard limit `M_max`.
    pub m_max: usize,
    pub edge: (f64, f64),
    /// Overlap length along the step axis as a fraction of the shorter edge.
    pub overlap: (f64, f64),
    /// Boxes stay inside `[-half, half]³`.
    pub workspace_half: f64,
    pub min_inradius: f64,
    /// Clearance of start and goal from their box faces.
    pub endpoint_margin: f64,
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            segments: (1, 3),
            m_max: 3,
            edge: (2.0, 5.0),
            overlap: (0.25, 0.5),
            workspace_half: 10.0,
            min_inradius: 0.25,
            endpoint_margin: 0.4,
            max_attempts: 200,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.segments;
        if lo < 1 || lo > hi {
            return Err(invalid("segment range must satisfy 1 ≤ lo ≤ hi"));
        }
        if hi > self.m_max {
            return Err(Error::OversizeSequence {
                len: hi,
                limit: self.m_max,
            });
        }
        if !(self.edge.0 > 0.0 && self.edge.0 <= self.edge.1) {
            return Err(invalid("edge range must be positive and ordered"));
        }
        if !(self.overlap.0 > 0.0 && self.overlap.0 <= self.overlap.1 && self.overlap.1 < 1.0) {
            return Err(invalid("overlap fractions must lie in (0, 1)"));
        }
        if !(self.workspace_half > self.edge.1) {
            return Err(invalid("workspace too small for the box edges"));
        }
        if !(2.0 * self.endpoint_margin < self.edge.0) {
            return Err(invalid("endpoint margin too large for the smallest edge"));
        }
        Ok(())
    }
}

/// A generated chain plus its seed path `[start, witnesses…, goal]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorridors {
    pub corridors: CorridorSequence,
    pub path: Vec<Point>,
}

impl GeneratedCorridors {
    pub fn start(&self) -> Point {
        self.path[0]
    }

    pub fn goal(&self) -> Point {
        *self.path.last().expect("path is never empty")
    }
}

#[derive(Debug, Clone, Copy)]
struct BoxSpec {
    lo: Point,
    hi: Point,
}

/// Deterministic chain of overlapping axis-aligned boxes for `seed`.
pub fn generate_corridor_sequence(seed: u64, cfg: &GeneratorConfig) -> Result<GeneratedCorridors> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(cfg.segments.0..=cfg.segments.1);
    for _ in 0..cfg.max_attempts {
        if let Some(out) = try_chain(&mut rng, m, cfg) {
            return Ok(out);
        }
    }
    Err(Error::GenerationFailed {
        attempts: cfg.max_attempts,
    })
}

fn try_chain(rng: &mut ChaCha8Rng, m: usize, cfg: &GeneratorConfig) -> Option<GeneratedCorridors> {
    let w = cfg.workspace_half;
    let edge = |rng: &mut ChaCha8Rng| -> Point {
        [
            rng.gen_range(cfg.edge.0..=cfg.edge.1),
            rng.gen_range(cfg.edge.0..=cfg.edge.1),
            rng.gen_range(cfg.edge.0..=cfg.edge.1),
        ]
    };
    let e0 = edge(rng);
    let mut lo = [0.0; 3];
    for k in 0..3 {
        lo[k] = rng.gen_range(-w..=(w - e0[k]));
    }
    let mut boxes = vec![BoxSpec {
        lo,
        hi: [lo[0] + e0[0], lo[1] + e0[1], lo[2] + e0[2]],
    }];
    let mut steps: Vec<(usize, f64)> = Vec::new();
    let need = 2.0 * cfg.min_inradius;
    while boxes.len() < m {
        let prev = *boxes.last()?;
        let e = edge(rng);
        let axis = rng.gen_range(0..3usize);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        if let Some(&(pa, ps)) = steps.last() {
            if pa == axis && ps != sign {
                return None;
            }
        }
        let mut nlo = [0.0; 3];
        for k in 0..3 {
            let pe = prev.hi[k] - prev.lo[k];
            let shorter = pe.min(e[k]);
            if k == axis {
                let ov = rng.gen_range(cfg.overlap.0..=cfg.overlap.1) * shorter;
                if ov < need {
                    return None;
                }
                nlo[k] = if sign > 0.0 {
                    prev.hi[k] - ov
                } else {
                    prev.lo[k] + ov - e[k]
                };
            } else {
                // lateral offset keeping at least half the shorter edge in common
                let keep = (0.5 * shorter).max(need);
                let a = prev.lo[k] - e[k] + keep;
                let b = prev.hi[k] - keep;
                if !(b > a) {
                    return None;
                }
                nlo[k] = rng.gen_range(a..=b);
            }
        }
        let nb = BoxSpec {
            lo: nlo,
            hi: [nlo[0] + e[0], nlo[1] + e[1], nlo[2] + e[2]],
        };
        if (0..3).any(|k| nb.lo[k] < -w || nb.hi[k] > w) {
            return None;
        }
        // Non-consecutive boxes must not make the chain fold back on itself.
        if boxes.len() >= 2 {
            let far = boxes[boxes.len() - 2];
            if (0..3).all(|k| nb.lo[k] < far.hi[k] && far.lo[k] < nb.hi[k]) {
                return None;
            }
        }
        boxes.push(nb);
        steps.push((axis, sign));
    }

    let polys: Vec<HPolytope> = boxes
        .iter()
        .map(|b| HPolytope::from_box(b.lo, b.hi))
        .collect::<Result<_>>()
        .ok()?;
    let corridors = CorridorSequence::new(polys).ok()?;
    let mut witnesses = Vec::with_capacity(m.saturating_sub(1));
    for pair in corridors.polytopes().windows(2) {
        let (c, r) = chebyshev_center(&[&pair[0], &pair[1]])?;
        if r < cfg.min_inradius - 1e-9 {
            return None;
        }
        witnesses.push(c);
    }

    let start = sample_endpoint(rng, &boxes, 0, cfg.endpoint_margin)?;
    let goal = sample_endpoint(rng, &boxes, m - 1, cfg.endpoint_margin)?;
    if m == 1 {
        let d: f64 = (0..3)
            .map(|k| (goal[k] - start[k]) * (goal[k] - start[k]))
            .sum();
        if d < cfg.edge.0 * cfg.edge.0 * 0.25 {
            return None;
        }
    }
    let mut path = Vec::with_capacity(m + 1);
    path.push(start);
    path.extend(witnesses);
    path.push(goal);
    Some(GeneratedCorridors { corridors, path })
}

/// Point with clearance `margin` inside box `idx`, outside its neighbours when possible.
fn sample_endpoint(
    rng: &mut ChaCha8Rng,
    boxes: &[BoxSpec],
    idx: usize,
    margin: f64,
) -> Option<Point> {
    let b = boxes[idx];
    let neighbour = if boxes.len() == 1 {
        None
    } else if idx == 0 {
        Some(boxes[1])
    } else {
        Some(boxes[idx - 1])
    };
    let mut last = None;
    for _ in 0..32 {
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = rng.gen_range((b.lo[k] + margin)..=(b.hi[k] - margin));
        }
        last = Some(p);
        match neighbour {
            Some(nb) if (0..3).all(|k| p[k] > nb.lo[k] && p[k] < nb.hi[k]) => continue,
            _ => return Some(p),
        }
    }
    last
}

/// Fixed-size encoding of a corridor sequence: `m_max × f_max × 4` values
/// `(n_x, n_y, n_z, offset)` per face, zero rows for padding, plus stop targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedCorridorTensor {
    m_max: usize,
    f_max: usize,
    len: usize,
    data: Vec<f64>,
    stop_targets: Vec<f64>,
}

impl PaddedCorridorTensor {
    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn f_max(&self) -> usize {
        self.f_max
    }

    /// Number of real corridors `M`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn stop_targets(&self) -> &[f64] {
        &self.stop_targets
    }

    /// `(n_x, n_y, n_z, offset)` of face `f` in slot `i`.
    pub fn face(&self, i: usize, f: usize) -> &[f64] {
        let base = (i * self.f_max + f) * 4;
        &self.data[base..base + 4]
    }

    /// Recovers the real polytopes (rows with a zero normal are padding).
    pub fn unpad(&self) -> Vec<HPolytope> {
        (0..self.len)
            .map(|i| {
                let mut normals = Vec::new();
                let mut offsets = Vec::new();
                for f in 0..self.f_max {
                    let row = self.face(i, f);
                    if row[..3].iter().any(|&v| v != 0.0) {
                        normals.push([row[0], row[1], row[2]]);
                        offsets.push(row[3]);
                    }
                }
                HPolytope { normals, offsets }
            })
            .collect()
    }
}

/// Stop targets: `0` before the last real slot, `1` from it onwards.
pub fn stop_targets(len: usize, m_max: usize) -> Vec<f64> {
    (0..m_max)
        .map(|i| if i + 1 >= len { 1.0 } else { 0.0 })
        .collect()
}

pub fn pad(seq: &CorridorSequence, f_max: usize, m_max: usize) -> Result<PaddedCorridorTensor> {
    if seq.len() > m_max {
        return Err(Error::OversizeSequence {
            len: seq.len(),
            limit: m_max,
        });
    }
    let mut data = vec![0.0; m_max * f_max * 4];
    for (i, p) in seq.polytopes().iter().enumerate() {
        if p.num_faces() > f_max {
            return Err(Error::OversizeCorridor {
                faces: p.num_faces(),
                limit: f_max,
            });
        }
        for (f, (n, &o)) in p.normals.iter().zip(&p.offsets).enumerate() {
            let base = (i * f_max + f) * 4;
            data[base..base + 4].copy_from_slice(&[n[0], n[1], n[2], o]);
        }
    }
    Ok(PaddedCorridorTensor {
        m_max,
        f_max,
        len: seq.len(),
        data,
        stop_targets: stop_targets(seq.len(), m_max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(lo: f64, hi: f64) -> HPolytope {
        HPolytope::from_box([lo; 3], [hi; 3]).unwrap()
    }

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (0..3).all(|k| (a[k] - b[k]).abs() <= tol)
    }

    #[test]
    fn contains_examples() {
        let u = cube(0.0, 1.0);
        assert!(u.contains([0.5, 0.5, 0.5], 0.0));
        assert!(u.contains([1.0, 0.5, 0.5], 0.0));
        assert!(!u.contains([1.1, 0.5, 0.5], 0.0));
        assert!(u.contains([1.1, 0.5, 0.5], 0.2));
    }

    #[test]
    fn overlap_witness_examples() {
        let w = overlap_witness(&cube(0.0, 2.0), &cube(1.0, 3.0)).unwrap();
        assert!(close(w, [1.5; 3], 1e-6), "{w:?}");
        let w = overlap_witness(&cube(0.0, 1.0), &cube(0.0, 1.0)).unwrap();
        assert!(close(w, [0.5; 3], 1e-6), "{w:?}");
        assert!(overlap_witness(&cube(0.0, 1.0), &cube(2.0, 3.0)).is_none());
        // touching faces: zero inradius
        assert!(overlap_witness(&cube(0.0, 1.0), &cube(1.0, 2.0)).is_none());
    }

    #[test]
    fn normals_are_rescaled() {
        let p = HPolytope::new(vec![[2.0, 0.0, 0.0], [0.0, -3.0, 4.0]], vec![4.0, 10.0]).unwrap();
        assert_eq!(p.normals()[0], [1.0, 0.0, 0.0]);
        assert_eq!(p.offsets()[0], 2.0);
        assert!((p.normals()[1][2] - 0.8).abs() < 1e-15);
        assert!((p.offsets()[1] - 2.0).abs() < 1e-15);
        assert!(HPolytope::new(vec![[0.0; 3]], vec![1.0]).is_err());
    }

    #[test]
    fn boundedness() {
        assert!(cube(0.0, 1.0).is_bounded_solid());
        let half = HPolytope::new(vec![[1.0, 0.0, 0.0]], vec![1.0]).unwrap();
        assert!(!half.is_bounded_solid());
        let empty =
            HPolytope::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], vec![0.0, -1.0]).unwrap();
        assert!(!empty.is_bounded_solid());
    }

    #[test]
    fn generator_single_box_contains_endpoints() {
        let cfg = GeneratorConfig {
            segments: (1, 1),
            ..GeneratorConfig::default()
        };
        let g = generate_corridor_sequence(0, &cfg).unwrap();
        assert_eq!(g.corridors.len(), 1);
        let p = &g.corridors.polytopes()[0];
        assert!(p.contains(g.start(), 0.0) && p.contains(g.goal(), 0.0));
        assert_eq!(g.path.len(), 2);
    }

    #[test]
    fn generator_chain_overlaps() {
        let cfg = GeneratorConfig {
            segments: (3, 3),
            overlap: (0.3, 0.3),
            ..GeneratorConfig::default()
        };
        let g = generate_corridor_sequence(1, &cfg).unwrap();
        assert_eq!(g.corridors.len(), 3);
        for w in g.corridors.polytopes().windows(2) {
            assert!(overlap_radius(&w[0], &w[1]) >= cfg.min_inradius - 1e-9);
        }
        assert_eq!(generate_corridor_sequence(1, &cfg).unwrap(), g);
    }

    #[test]
    fn generator_rejects_oversize() {
        let cfg = GeneratorConfig {
            segments: (1, 4),
            m_max: 3,
            ..GeneratorConfig::default()
        };
        assert!(matches!(
            generate_corridor_sequence(5, &cfg),
            Err(Error::OversizeSequence { .. })
        ));
    }

    #[test]
    fn pad_examples() {
        let two = CorridorSequence::new(vec![cube(0.0, 2.0), cube(1.0, 3.0)]).unwrap();
        let t = pad(&two, 6, 3).unwrap();
        assert_eq!(t.stop_targets(), &[0.0, 1.0, 1.0]);
        assert!(t.data()[2 * 6 * 4..].iter().all(|&v| v == 0.0));

        let three =
            CorridorSequence::new(vec![cube(0.0, 2.0), cube(1.0, 3.0), cube(2.0, 4.0)]).unwrap();
        assert_eq!(pad(&three, 6, 3).unwrap().stop_targets(), &[0.0, 0.0, 1.0]);

        let one = CorridorSequence::new(vec![cube(0.0, 1.0)]).unwrap();
        let t = pad(&one, 50, 1).unwrap();
        let zero_rows = (0..50)
            .filter(|&f| t.face(0, f).iter().all(|&v| v == 0.0))
            .count();
        assert_eq!(zero_rows, 44);

        assert!(matches!(
            pad(&three, 6, 2),
            Err(Error::OversizeSequence { .. })
        ));
        assert!(matches!(
            pad(&one, 5, 1),
            Err(Error::OversizeCorridor { .. })
        ));
    }

    #[test]
    fn pad_unpad_roundtrip() {
        let seq = generate_corridor_sequence(11, &GeneratorConfig::default())
            .unwrap()
            .corridors;
        let t = pad(&seq, 8, 3).unwrap();
        assert_eq!(t.unpad(), seq.polytopes().to_vec());
    }
}
