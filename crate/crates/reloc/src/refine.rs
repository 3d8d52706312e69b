//! Levenberg-Marquardt refinement of a full 6-DOF pose on robust
//! point-to-plane residuals.

use nalgebra::{Isometry3, Matrix6, Rotation3, SymmetricEigen, Translation3, UnitQuaternion, Vector3, Vector6};

use crate::consensus::DEFAULT_EPS;
use crate::map::PlanarPatchMap;
use crate::RelocError;

/// Tangent-space axis names, rotation first.
const AXES: [&str; 6] = [
    "rotation about x",
    "rotation about y",
    "rotation about z",
    "translation along x",
    "translation along y",
    "translation along z",
];

/// Relative eigenvalue below which a direction counts as unconstrained.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Huber scale on the residual, m.
    pub huber: f64,
    pub lambda0: f64,
    /// Stop once the step norm or the relative cost change drops below this.
    pub tol: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { iterations: 30, huber: DEFAULT_EPS, lambda0: 1e-3, tol: 1e-12 }
    }
}

/// Pose measurement from another source, fused as an extra residual.
/// Covariance is ordered `[rotation; translation]` in the tangent space.
#[derive(Debug, Clone, PartialEq)]
pub struct PosePrior {
    pub pose: Isometry3<f64>,
    pub covariance: Matrix6<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub pose: Isometry3<f64>,
    pub cost: f64,
    /// Cost at the seed followed by the cost after each accepted step.
    pub costs: Vec<f64>,
    pub iterations: usize,
}

fn huber(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        0.5 * r * r
    } else {
        k * (a - 0.5 * k)
    }
}

fn huber_weight(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        1.0
    } else {
        k / a
    }
}

fn retract(pose: &Isometry3<f64>, delta: &Vector6<f64>) -> Isometry3<f64> {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let rot = UnitQuaternion::from_scaled_axis(w) * pose.rotation;
    Isometry3::from_parts(Translation3::from(pose.translation.vector + v), rot)
}

/// Tangent-space error of `pose` relative to `prior`, same ordering as the update.
fn prior_error(pose: &Isometry3<f64>, prior: &Isometry3<f64>) -> Vector6<f64> {
    let w = (pose.rotation * prior.rotation.inverse()).scaled_axis();
    let v = pose.translation.vector - prior.translation.vector;
    Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

struct Prior {
    pose: Isometry3<f64>,
    info: Matrix6<f64>,
}

fn cost(pose: &Isometry3<f64>, points: &[Vector3<f64>], map: &PlanarPatchMap, k: f64, prior: Option<&Prior>) -> f64 {
    let data: f64 = points.iter().map(|p| huber(map.nearest(&(pose * nalgebra::Point3::from(*p)).coords).1, k)).sum();
    let extra = prior.map_or(0.0, |pr| {
        let e = prior_error(pose, &pr.pose);
        0.5 * (e.transpose() * pr.info * e)[0]
    });
    data + extra
}

/// Gauss-Newton system `(H, g)` with IRLS weights at `pose`.
fn normal_equations(
    pose: &Isometry3<f64>,
    points: &[Vector3<f64>],
    map: &PlanarPatchMap,
    k: f64,
    prior: Option<&Prior>,
) -> (Matrix6<f64>, Vector6<f64>) {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for p in points {
        let rp = pose.rotation * p;
        let q = rp + pose.translation.vector;
        let (j, r) = map.nearest(&q);
        let n = map.patches()[j].normal();
        let rot = rp.cross(n);
        let row = Vector6::new(rot.x, rot.y, rot.z, n.x, n.y, n.z);
        let w = huber_weight(r, k);
        h += w * row * row.transpose();
        g += w * r * row;
    }
    if let Some(pr) = prior {
        // The prior error is linear in the update to first order.
        h += pr.info;
        g += pr.info * prior_error(pose, &pr.pose);
    }
    (h, g)
}

/// Directions with (relatively) vanishing information, named by the unit axes
/// that lie mostly inside the null space.
fn unconstrained(h: &Matrix6<f64>) -> Vec<String> {
    let eig = SymmetricEigen::new(*h);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let null: Vec<Vector6<f64>> = (0..6)
        .filter(|&i| eig.eigenvalues[i] <= RANK_TOL * top.max(f64::MIN_POSITIVE))
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if null.is_empty() {
        return Vec::new();
    }
    let mut names: Vec<String> = (0..6)
        .filter(|&k| null.iter().map(|v| v[k] * v[k]).sum::<f64>() > 0.5)
        .map(|k| AXES[k].to_string())
        .collect();
    if names.is_empty() {
        // A mixed direction: report the axes it mostly moves.
        names = (0..6)
            .filter(|&k| null.iter().map(|v| v[k] * v[k]).sum::<f64>() > 0.1)
            .map(|k| AXES[k].to_string())
            .collect();
    }
    names
}

pub fn refine_pose(
    seed: &Isometry3<f64>,
    points: &[Vector3<f64>],
    map: &PlanarPatchMap,
    cfg: &RefineConfig,
    prior: Option<&PosePrior>,
) -> Result<RefineResult, RelocError> {
    if points.is_empty() {
        return Err(RelocError::EmptyCloud);
    }
    if !(cfg.huber > 0.0) || !(cfg.lambda0 > 0.0) || !(cfg.tol >= 0.0) {
        return Err(RelocError::InvalidConfig(format!("{cfg:?}")));
    }
    let prior = match prior {
        Some(p) => Some(Prior {
            pose: p.pose,
            info: p
                .covariance
                .try_inverse()
                .ok_or_else(|| RelocError::InvalidConfig("prior covariance is singular".into()))?,
        }),
        None => None,
    };
    let k = cfg.huber;

    // Observability is judged on the unweighted system so that far-off seeds
    // with down-weighted residuals do not look degenerate.
    let (h0, _) = normal_equations(seed, points, map, f64::INFINITY, prior.as_ref());
    let missing = unconstrained(&h0);
    if !missing.is_empty() {
        return Err(RelocError::Degenerate(missing));
    }

    let mut pose = *seed;
    let mut current = cost(&pose, points, map, k, prior.as_ref());
    let mut costs = vec![current];
    let mut lambda = cfg.lambda0;
    let mut iterations = 0;
    while iterations < cfg.iterations && current > 0.0 {
        iterations += 1;
        let (h, g) = normal_equations(&pose, points, map, k, prior.as_ref());
        let mut accepted = None;
        while lambda < 1e12 {
            let damped = h + Matrix6::from_diagonal(&h.diagonal().map(|d| lambda * d));
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = retract(&pose, &step);
            let c = cost(&cand, points, map, k, prior.as_ref());
            if c < current {
                accepted = Some((cand, c, step.norm()));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((cand, c, step)) = accepted else { break };
        let change = (current - c) / current;
        pose = cand;
        current = c;
        costs.push(c);
        if step < cfg.tol || change < cfg.tol {
            break;
        }
    }
    Ok(RefineResult { pose, cost: current, costs, iterations })
}

/// Covariance of the pose error predicted by the Gauss-Newton information of
/// noiseless residuals at `pose` under isotropic point noise `sigma`.
pub fn predicted_covariance(pose: &Isometry3<f64>, points: &[Vector3<f64>], map: &PlanarPatchMap, sigma: f64) -> Option<Matrix6<f64>> {
    let (h, _) = normal_equations(pose, points, map, f64::INFINITY, None);
    h.try_inverse().map(|inv| inv * sigma * sigma)
}

/// Rotation that maps the measured gravity direction onto `-z`.
pub fn leveling_rotation(gravity: &Vector3<f64>) -> Option<Rotation3<f64>> {
    Rotation3::rotation_between(gravity, &-Vector3::z())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Patch;
    use crate::pose::PoseHypothesis;
    use crate::synthetic::{three_plane_map, Scene};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn tilted_pose() -> Isometry3<f64> {
        Isometry3::new(Vector3::new(0.4, -0.3, 0.25), Vector3::new(0.02, -0.03, 0.5))
    }

    fn scene_points(truth: &Isometry3<f64>, n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> (PlanarPatchMap, Vec<Vector3<f64>>) {
        let map = three_plane_map();
        let base = Scene::generate(&map, PoseHypothesis::new(0.0, 0.0, 0.0, 0.0), n, 0.0, 0.0, rng);
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
        let inv = truth.inverse();
        let pts = base
            .points
            .iter()
            .map(|w| {
                let jitter = if sigma > 0.0 {
                    Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
                } else {
                    Vector3::zeros()
                };
                (inv * nalgebra::Point3::from(w + jitter)).coords
            })
            .collect();
        (map, pts)
    }

    fn tangent_error(a: &Isometry3<f64>, b: &Isometry3<f64>) -> Vector6<f64> {
        prior_error(a, b)
    }

    #[test]
    fn seed_at_truth_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = tilted_pose();
        let (map, pts) = scene_points(&truth, 300, 0.0, &mut rng);
        let r = refine_pose(&truth, &pts, &map, &RefineConfig::default(), None).unwrap();
        assert!(r.iterations <= 2, "{}", r.iterations);
        assert!(r.cost < 1e-12, "{}", r.cost);
    }

    #[test]
    fn single_plane_is_degenerate() {
        let map = PlanarPatchMap::new(vec![Patch::new(Vector3::z(), 0.0).unwrap()]).unwrap();
        let pts: Vec<Vector3<f64>> = (0..100).map(|k| Vector3::new((k % 10) as f64 * 0.2, (k / 10) as f64 * 0.2, 0.0)).collect();
        let err = refine_pose(&Isometry3::identity(), &pts, &map, &RefineConfig::default(), None).unwrap_err();
        let RelocError::Degenerate(axes) = err else { panic!("{err}") };
        for name in ["translation along x", "translation along y", "rotation about z"] {
            assert!(axes.iter().any(|a| a == name), "{axes:?}");
        }
        assert!(!axes.iter().any(|a| a == "translation along z"), "{axes:?}");
    }

    #[test]
    fn prior_fills_the_missing_directions() {
        let map = PlanarPatchMap::new(vec![Patch::new(Vector3::z(), 0.0).unwrap()]).unwrap();
        let pts: Vec<Vector3<f64>> = (0..100).map(|k| Vector3::new((k % 10) as f64 * 0.2, (k / 10) as f64 * 0.2, 0.0)).collect();
        let prior = PosePrior { pose: Isometry3::identity(), covariance: Matrix6::identity() * 1e-4 };
        let seed = Isometry3::translation(0.0, 0.0, 0.03);
        let r = refine_pose(&seed, &pts, &map, &RefineConfig::default(), Some(&prior)).unwrap();
        assert!(r.pose.translation.vector.norm() < 1e-6);
    }

    #[test]
    fn noisy_recovery_stays_near_the_noise_floor() {
        let sigma = 0.005;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = tilted_pose();
        let trials = 100;
        let mut sq = Vector6::zeros();
        let mut predicted = Vector6::zeros();
        for _ in 0..trials {
            let (map, pts) = scene_points(&truth, 300, sigma, &mut rng);
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let off = Vector6::from_iterator(axis.iter().map(|a| a * 2f64.to_radians()).chain(dir.iter().map(|d| d * 0.05)));
            let seed = retract(&truth, &off);
            let r = refine_pose(&seed, &pts, &map, &RefineConfig::default(), None).unwrap();
            assert!(r.costs.windows(2).all(|w| w[1] <= w[0]));
            let e = tangent_error(&r.pose, &truth);
            sq += e.component_mul(&e);
            predicted += predicted_covariance(&truth, &pts, &map, sigma).unwrap().diagonal();
        }
        let rms = (sq / trials as f64).map(f64::sqrt);
        let floor = (predicted / trials as f64).map(f64::sqrt);
        for i in 0..6 {
            assert!(rms[i] <= 3.0 * floor[i], "axis {i}: rms {} floor {}", rms[i], floor[i]);
        }
    }

    #[test]
    fn leveling_maps_gravity_down() {
        let g = Vector3::new(0.1, -0.2, -0.97);
        let r = leveling_rotation(&g).unwrap();
        let down = r * g.normalize();
        assert!((down + Vector3::z()).norm() < 1e-12);
    }
}
