//! Best-first branch and bound over planar poses, followed by a local polish
//! of the incumbent.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::consensus::{consensus, SearchBox, DEFAULT_EPS};
use crate::map::PlanarPatchMap;
use crate::pose::PoseHypothesis;
use crate::RelocError;

#[derive(Debug, Clone, PartialEq)]
pub struct BnbConfig {
    pub eps: f64,
    /// Smallest full box widths `(theta rad, x m, y m)`; boxes this small are not split.
    pub min_size: [f64; 3],
    /// Half-widths of the search domain around the origin.
    pub domain: [f64; 3],
    /// Known sensor height in the map frame, m.
    pub z_star: f64,
    /// Refine the incumbent locally inside its terminal neighbourhood.
    pub polish: bool,
    pub max_nodes: usize,
    /// Keep every pruned box for inspection.
    pub trace: bool,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            min_size: [1f64.to_radians(), 0.02, 0.02],
            domain: [PI, 2.0, 2.0],
            z_star: 0.0,
            polish: true,
            max_nodes: 2_000_000,
            trace: false,
        }
    }
}

impl BnbConfig {
    pub fn validate(&self) -> Result<(), RelocError> {
        let positive = |v: &[f64; 3]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !(self.eps > 0.0) || !positive(&self.min_size) || !positive(&self.domain) || !self.z_star.is_finite() {
            return Err(RelocError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// A box discarded because its upper bound could not beat the incumbent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrunedBox {
    pub bx: SearchBox,
    pub incumbent: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbResult {
    /// Polished pose (equal to `coarse` without polishing).
    pub pose: PoseHypothesis,
    pub inliers: usize,
    /// Best box centre found by the search.
    pub coarse: PoseHypothesis,
    pub coarse_inliers: usize,
    pub nodes_expanded: usize,
    /// Largest upper bound left unexplored when the search stopped.
    pub remaining_upper: usize,
    pub pruned: Vec<PrunedBox>,
}

impl BnbResult {
    /// True when no unexplored box could hold more inliers than the incumbent.
    pub fn proved_optimal(&self) -> bool {
        self.remaining_upper <= self.coarse_inliers
    }
}

/// Heap entry: highest upper bound first, ties to the lexicographically smallest centre.
struct Node(SearchBox);

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.upper.cmp(&other.0.upper).then_with(|| {
            let lex = (0..3)
                .map(|i| self.0.center[i].total_cmp(&other.0.center[i]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal);
            lex.reverse()
        })
    }
}

fn splittable(b: &SearchBox, min_size: &[f64; 3]) -> [bool; 3] {
    std::array::from_fn(|i| 2.0 * b.half[i] > min_size[i])
}

/// Planar pose directions that no patch of `map` can pin down.
///
/// Translation needs horizontal normals in two non-parallel directions and
/// yaw needs at least one; otherwise every box bound stays loose and the
/// search degenerates into enumerating the whole domain.
pub fn unobservable_directions(map: &PlanarPatchMap) -> Vec<String> {
    let horizontal: Vec<Vector3<f64>> = map
        .patches()
        .iter()
        .map(|p| Vector3::new(p.normal().x, p.normal().y, 0.0))
        .filter(|h| h.norm() > MIN_HORIZONTAL)
        .map(|h| h.normalize())
        .collect();
    let Some(first) = horizontal.first() else {
        return ["rotation about z", "translation along x", "translation along y"].map(String::from).to_vec();
    };
    if horizontal.iter().any(|h| h.cross(first).norm() > MIN_SPREAD) {
        return Vec::new();
    }
    vec![format!("translation along ({:+.3}, {:+.3}, 0)", -first.y, first.x)]
}

/// Smallest horizontal normal component that counts as a wall.
const MIN_HORIZONTAL: f64 = 0.1;
/// Smallest sine of the angle between two wall normals.
const MIN_SPREAD: f64 = 0.17;

pub fn bnb_search(points: &[nalgebra::Vector3<f64>], map: &PlanarPatchMap, cfg: &BnbConfig) -> Result<BnbResult, RelocError> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(RelocError::EmptyCloud);
    }
    let missing = unobservable_directions(map);
    if !missing.is_empty() {
        return Err(RelocError::Degenerate(missing));
    }
    let z = cfg.z_star;
    let root = SearchBox::new([0.0; 3], cfg.domain, z, points, map, cfg.eps)?;
    let mut best = (root.lower, root.center);
    let mut heap = BinaryHeap::new();
    heap.push(Node(root));
    let mut nodes = 0;
    let mut pruned = Vec::new();
    let mut remaining_upper = 0;

    while let Some(Node(b)) = heap.pop() {
        if b.upper <= best.0 {
            if cfg.trace {
                pruned.push(PrunedBox { bx: b, incumbent: best.0 });
                pruned.extend(heap.drain().map(|Node(bx)| PrunedBox { bx, incumbent: best.0 }));
            }
            break;
        }
        let split = splittable(&b, &cfg.min_size);
        if !split.iter().any(|s| *s) {
            remaining_upper = remaining_upper.max(b.upper);
            continue;
        }
        if nodes >= cfg.max_nodes {
            remaining_upper = remaining_upper.max(b.upper);
            heap.into_iter().for_each(|Node(bx)| remaining_upper = remaining_upper.max(bx.upper));
            break;
        }
        nodes += 1;
        let half: [f64; 3] = std::array::from_fn(|i| if split[i] { b.half[i] / 2.0 } else { b.half[i] });
        for corner in 0..8u8 {
            if (0..3).any(|i| !split[i] && corner & (1 << i) != 0) {
                continue;
            }
            let center: [f64; 3] = std::array::from_fn(|i| {
                if split[i] {
                    b.center[i] + if corner & (1 << i) != 0 { half[i] } else { -half[i] }
                } else {
                    b.center[i]
                }
            });
            let child = SearchBox::new(center, half, z, points, map, cfg.eps)?;
            if child.lower > best.0 {
                best = (child.lower, child.center);
            }
            if child.upper > best.0 {
                heap.push(Node(child));
            } else if cfg.trace {
                pruned.push(PrunedBox { bx: child, incumbent: best.0 });
            }
        }
    }

    let coarse = PoseHypothesis::from_box(&best.1, z);
    let pose = if cfg.polish { polish(&coarse, points, map, cfg) } else { coarse };
    Ok(BnbResult {
        pose,
        inliers: consensus(&pose, points, map, cfg.eps),
        coarse,
        coarse_inliers: best.0,
        nodes_expanded: nodes,
        remaining_upper,
        pruned,
    })
}

/// Truncated quadratic cost: sum over points of `min(r, eps)^2`.
fn truncated_cost(b: &PoseHypothesis, points: &[Vector3<f64>], map: &PlanarPatchMap, eps: f64) -> f64 {
    let (rot, t) = (b.rotation(), b.translation());
    points.iter().map(|p| map.distance(&(rot * p + t)).min(eps).powi(2)).sum()
}

/// Grid search over a small window at terminal resolution, then damped
/// Gauss-Newton on the truncated cost. A box centre only pins the pose to
/// within the inlier threshold; the polish recovers it to the resolution of
/// the data.
fn polish(start: &PoseHypothesis, points: &[Vector3<f64>], map: &PlanarPatchMap, cfg: &BnbConfig) -> PoseHypothesis {
    let eps = cfg.eps;
    let steps = [cfg.min_size[0], cfg.min_size[1], cfg.min_size[2]];
    let reach = [
        (4f64.to_radians() / steps[0]).ceil() as i64,
        (0.15 / steps[1]).ceil() as i64,
        (0.15 / steps[2]).ceil() as i64,
    ];
    let mut best = (truncated_cost(start, points, map, eps), *start);
    for i in -reach[0]..=reach[0] {
        for j in -reach[1]..=reach[1] {
            for k in -reach[2]..=reach[2] {
                let b = PoseHypothesis::new(
                    start.theta + i as f64 * steps[0],
                    start.x + j as f64 * steps[1],
                    start.y + k as f64 * steps[2],
                    start.z,
                );
                let c = truncated_cost(&b, points, map, eps);
                if c < best.0 {
                    best = (c, b);
                }
            }
        }
    }

    let (mut cost, mut b) = best;
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let (rot, t) = (b.rotation(), b.translation());
        let drot = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), b.theta + std::f64::consts::FRAC_PI_2);
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for p in points {
            let q = rot * p + t;
            let (j, r) = map.nearest(&q);
            if r.abs() >= eps {
                continue;
            }
            let n = map.patches()[j].normal();
            // d(R p)/d theta for a yaw rotation, with the z component unaffected.
            let dq = drot * Vector3::new(p.x, p.y, 0.0);
            let row = Vector3::new(n.dot(&dq), n.x, n.y);
            h += row * row.transpose();
            g += row * r;
        }
        let mut improved = false;
        while lambda < 1e8 {
            let damped = h + Matrix3::from_diagonal(&h.diagonal().map(|d| lambda * d.max(1e-12)));
            let Some(step) = damped.lu().solve(&(-g)) else { break };
            let cand = PoseHypothesis::new(b.theta + step[0], b.x + step[1], b.y + step[2], b.z);
            let c = truncated_cost(&cand, points, map, eps);
            if c < cost {
                improved = (cost - c) > 1e-15 * cost.max(1e-300);
                b = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-9);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::angle_diff;
    use crate::synthetic::{random_map, Scene};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn within_resolution(found: &PoseHypothesis, truth: &PoseHypothesis, cfg: &BnbConfig) -> bool {
        angle_diff(found.theta, truth.theta).abs() <= cfg.min_size[0]
            && (found.x - truth.x).abs() <= cfg.min_size[1]
            && (found.y - truth.y).abs() <= cfg.min_size[2]
    }

    fn scene(seed: u64, truth: PoseHypothesis, outliers: f64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = random_map(8, &mut rng);
        Scene::generate(&map, truth, 300, outliers, 0.0, &mut rng)
    }

    #[test]
    fn recovers_known_pose() {
        let truth = PoseHypothesis::new(30f64.to_radians(), 0.8, -0.5, 0.3);
        let s = scene(11, truth, 0.0);
        let cfg = BnbConfig { z_star: 0.3, ..Default::default() };
        let r = bnb_search(&s.points, &s.map, &cfg).unwrap();
        assert_eq!(r.inliers, s.points.len());
        assert!(within_resolution(&r.pose, &truth, &cfg), "{:?}", r.pose);
        assert!(r.proved_optimal());
    }

    #[test]
    fn identity_pose_is_found() {
        let truth = PoseHypothesis::new(0.0, 0.0, 0.0, 0.3);
        let s = scene(12, truth, 0.0);
        let cfg = BnbConfig { z_star: 0.3, ..Default::default() };
        let r = bnb_search(&s.points, &s.map, &cfg).unwrap();
        assert!(within_resolution(&r.pose, &truth, &cfg), "{:?}", r.pose);
    }

    #[test]
    fn survives_thirty_percent_outliers() {
        let truth = PoseHypothesis::new(-1.2, -0.6, 1.1, 0.3);
        let s = scene(13, truth, 0.3);
        let cfg = BnbConfig { z_star: 0.3, ..Default::default() };
        let r = bnb_search(&s.points, &s.map, &cfg).unwrap();
        assert!(r.inliers as f64 >= 0.7 * s.points.len() as f64);
        assert!(within_resolution(&r.pose, &truth, &cfg), "{:?}", r.pose);
    }

    #[test]
    fn pruned_boxes_hold_nothing_better() {
        let truth = PoseHypothesis::new(0.7, 0.4, 0.2, 0.3);
        let s = scene(14, truth, 0.2);
        let cfg = BnbConfig {
            z_star: 0.3,
            trace: true,
            polish: false,
            ..Default::default()
        };
        let r = bnb_search(&s.points, &s.map, &cfg).unwrap();
        assert!(!r.pruned.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in r.pruned.iter().step_by((r.pruned.len() / 200).max(1)) {
            for _ in 0..5 {
                let b: [f64; 3] = std::array::from_fn(|i| p.bx.center[i] + rng.random_range(-1.0..=1.0) * p.bx.half[i]);
                let e = consensus(&PoseHypothesis::from_box(&b, 0.3), &s.points, &s.map, cfg.eps);
                assert!(e <= p.incumbent, "box {:?} holds {e} > {}", p.bx, p.incumbent);
            }
        }
    }

    #[test]
    fn maps_without_two_wall_directions_are_degenerate() {
        use crate::map::Patch;
        let floor = Patch::new(Vector3::z(), 0.0).unwrap();
        let wall = Patch::new(Vector3::x(), -2.0).unwrap();
        let facing = Patch::new(-Vector3::x(), -2.0).unwrap();
        let side = Patch::new(Vector3::y(), -1.0).unwrap();
        let names = |v: Vec<Patch>| unobservable_directions(&PlanarPatchMap::new(v).unwrap());
        assert_eq!(names(vec![floor]).len(), 3);
        let one = names(vec![floor, wall, facing]);
        assert_eq!(one.len(), 1);
        assert!(one[0].contains("(-0.000, +1.000, 0)") || one[0].contains("(+0.000, +1.000, 0)"), "{one:?}");
        assert!(names(vec![floor, wall, side]).is_empty());
        let pts = vec![Vector3::new(1.0, 0.0, 0.0)];
        let map = PlanarPatchMap::new(vec![floor]).unwrap();
        assert!(matches!(bnb_search(&pts, &map, &BnbConfig::default()), Err(RelocError::Degenerate(_))));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let s = scene(15, PoseHypothesis::new(0.0, 0.0, 0.0, 0.3), 0.0);
        assert!(matches!(bnb_search(&[], &s.map, &BnbConfig::default()), Err(RelocError::EmptyCloud)));
        let bad = BnbConfig { eps: 0.0, ..Default::default() };
        assert!(bnb_search(&s.points, &s.map, &bad).is_err());
    }
}
