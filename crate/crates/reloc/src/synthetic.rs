//! Synthetic maps and clouds with known poses, for tests and benchmarks.

use nalgebra::Vector3;
use rand::{Rng, RngExt};
use rand_distr::{Distribution, Normal};

use crate::map::{Patch, PlanarPatchMap};
use crate::pose::PoseHypothesis;

/// Floor plus two perpendicular walls.
pub fn three_plane_map() -> PlanarPatchMap {
    PlanarPatchMap::new(vec![
        Patch::new(Vector3::z(), 0.0).unwrap(),
        Patch::new(Vector3::x(), -2.0).unwrap(),
        Patch::new(-Vector3::y(), -1.5).unwrap(),
    ])
    .unwrap()
}

/// Floor and `n_planes - 1` walls or slanted planes 1.5-4 m from the origin.
/// At least two walls differ in heading by more than 30 degrees.
pub fn random_map<R: Rng + ?Sized>(n_planes: usize, rng: &mut R) -> PlanarPatchMap {
    assert!(n_planes >= 3, "need a floor and two walls");
    loop {
        let mut patches = vec![Patch::new(Vector3::z(), 0.0).unwrap()];
        let mut headings = Vec::new();
        for k in 1..n_planes {
            let az: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let tilt: f64 = if k > 2 && rng.random_bool(0.3) { rng.random_range(0.3..0.9) } else { 0.0 };
            let n = Vector3::new(az.cos() * tilt.cos(), az.sin() * tilt.cos(), tilt.sin());
            let dist = rng.random_range(1.5..4.0);
            if tilt == 0.0 {
                headings.push(az);
            }
            patches.push(Patch::new(n, -dist).unwrap());
        }
        let spread = headings.iter().any(|a| {
            headings.iter().any(|b| {
                let d = (a - b).rem_euclid(std::f64::consts::PI);
                d.min(std::f64::consts::PI - d) > 30f64.to_radians()
            })
        });
        if spread {
            return PlanarPatchMap::new(patches).unwrap();
        }
    }
}

/// Cloud in the sensor frame generated from a map under a known pose.
#[derive(Debug, Clone)]
pub struct Scene {
    pub map: PlanarPatchMap,
    pub truth: PoseHypothesis,
    pub points: Vec<Vector3<f64>>,
    pub inlier: Vec<bool>,
}

impl Scene {
    /// `n` points, a fraction `outliers` of them uniform in the workspace, the
    /// rest on bounded regions of the patches with isotropic Gaussian noise `sigma`.
    pub fn generate<R: Rng + ?Sized>(
        map: &PlanarPatchMap,
        truth: PoseHypothesis,
        n: usize,
        outliers: f64,
        sigma: f64,
        rng: &mut R,
    ) -> Self {
        let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let n_out = (outliers * n as f64).round() as usize;
        let rot_inv = truth.rotation().inverse();
        let t = truth.translation();
        let mut points = Vec::with_capacity(n);
        let mut inlier = Vec::with_capacity(n);
        for k in 0..n {
            let world = if k < n_out {
                Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-0.5..2.5))
            } else {
                let patch = &map.patches()[rng.random_range(0..map.len())];
                let on = sample_on(patch, rng);
                on + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
            };
            points.push(rot_inv * (world - t));
            inlier.push(k >= n_out);
        }
        Self {
            map: map.clone(),
            truth,
            points,
            inlier,
        }
    }
}

/// Uniform point on a 4 m by 2.4 m region of the patch near the origin.
fn sample_on<R: Rng + ?Sized>(patch: &Patch, rng: &mut R) -> Vector3<f64> {
    let n = patch.normal();
    let foot = -patch.offset() * n;
    let u = {
        let h = n.cross(&Vector3::z());
        if h.norm() < 1e-6 {
            Vector3::x()
        } else {
            h.normalize()
        }
    };
    let v = n.cross(&u);
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-1.2..1.2));
    let lift = if v.z.abs() > 1e-6 { 1.2 * v * v.z.signum() } else { Vector3::zeros() };
    foot + lift + a * u + b * v
}
