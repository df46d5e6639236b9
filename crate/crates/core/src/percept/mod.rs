//! Synthetic camera and perception oracle.
//!
//! Depth and instance masks come from exact ray/sphere intersection. The
//! detection and pose oracles stand in for learned perception: detections
//! are dropped and poses perturbed in proportion to how occluded a body is.

mod raycast;

pub use raycast::{ray_sphere, Hit, RayScene};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose, UnitQuat, Vec3};
use crate::mapping::{BinaryImage, Detection};
use crate::sim::{BodyId, Scene};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("unknown body {0}")]
    UnknownBody(BodyId),
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),
}

/// Pinhole camera. Camera frame: +Z forward, +X right, +Y down. Pixel
/// `(u, v)` looks along `((u - cx) / fx, (v - cy) / fy, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub pose: Pose,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

pub const MAP_VIEW_WIDTH: usize = 160;
pub const MAP_VIEW_HEIGHT: usize = 120;

impl Camera {
    pub fn new(
        pose: Pose,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, PerceptError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(PerceptError::InvalidCamera("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(PerceptError::InvalidCamera("empty image".into()));
        }
        Ok(Self { pose, fx, fy, cx, cy, width, height })
    }

    /// 160x120 camera with roughly 60 degrees horizontal field of view.
    pub fn mapping_view(pose: Pose) -> Self {
        Self {
            pose,
            fx: 140.0,
            fy: 140.0,
            cx: MAP_VIEW_WIDTH as f64 / 2.0,
            cy: MAP_VIEW_HEIGHT as f64 / 2.0,
            width: MAP_VIEW_WIDTH,
            height: MAP_VIEW_HEIGHT,
        }
    }

    /// Camera pose at `eye` looking at `target`, with world +Z as up.
    pub fn look_at(eye: Vec3, target: Vec3) -> Result<Pose, PerceptError> {
        let forward = (target - eye)
            .normalized()
            .map_err(|_| PerceptError::InvalidCamera("eye equals target".into()))?;
        let up = if forward.cross(Vec3::Z).norm() < 1e-9 { Vec3::Y } else { Vec3::Z };
        let right = forward.cross(up).normalized().expect("non-parallel");
        let down = forward.cross(right);
        let m = crate::geom::Mat3::from_cols(right, down, forward);
        Ok(Pose::new(eye, quat_from_matrix(&m)))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unnormalized camera-frame direction with unit z.
    pub fn pixel_direction_cam(&self, u: usize, v: usize) -> Vec3 {
        Vec3::new((u as f64 - self.cx) / self.fx, (v as f64 - self.cy) / self.fy, 1.0)
    }

    /// World-frame origin and unit direction of a pixel ray.
    pub fn ray(&self, u: usize, v: usize) -> (Vec3, Vec3) {
        let d = self.pixel_direction_cam(u, v);
        let dir = self.pose.orientation.rotate(d / d.norm());
        (self.pose.position, dir)
    }

    /// Pixel coordinates and z-depth of a world point; `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.pose.inverse().transform_point(p);
        if c.z <= 1e-9 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// World point at z-depth `depth` along pixel `(u, v)`.
    pub fn back_project(&self, u: usize, v: usize, depth: f64) -> Vec3 {
        self.pose.transform_point(self.pixel_direction_cam(u, v) * depth)
    }
}

pub(crate) fn quat_from_matrix(m: &crate::geom::Mat3) -> UnitQuat {
    let m = &m.0;
    let trace = m[0][0] + m[1][1] + m[2][2];
    let (x, y, z, w);
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[2][1] - m[1][2]) / s;
        y = (m[0][2] - m[2][0]) / s;
        z = (m[1][0] - m[0][1]) / s;
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        w = (m[2][1] - m[1][2]) / s;
        x = 0.25 * s;
        y = (m[0][1] + m[1][0]) / s;
        z = (m[0][2] + m[2][0]) / s;
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        w = (m[0][2] - m[2][0]) / s;
        x = (m[0][1] + m[1][0]) / s;
        y = 0.25 * s;
        z = (m[1][2] + m[2][1]) / s;
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        w = (m[1][0] - m[0][1]) / s;
        x = (m[0][2] + m[2][0]) / s;
        y = (m[1][2] + m[2][1]) / s;
        z = 0.25 * s;
    }
    UnitQuat::from_xyzw(x, y, z, w).expect("rotation matrix").canonical()
}

pub const BACKGROUND: i32 = -1;

/// Depth (z along the optical axis, `+inf` for background) and per-pixel
/// body ids (`BACKGROUND` where nothing was hit), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub ids: Vec<i32>,
}

impl Rendered {
    pub fn count(&self, body: BodyId) -> usize {
        self.ids.iter().filter(|&&i| i == body as i32).count()
    }

    pub fn foreground_count(&self) -> usize {
        self.ids.iter().filter(|&&i| i != BACKGROUND).count()
    }

    pub fn mask(&self, body: BodyId) -> BinaryImage {
        BinaryImage::from_fn(self.width, self.height, |i| self.ids[i] == body as i32)
    }
}

pub fn render(scene: &Scene, camera: &Camera) -> Rendered {
    render_rays(&RayScene::new(scene), camera)
}

pub fn render_rays(rays: &RayScene, camera: &Camera) -> Rendered {
    let n = camera.pixel_count();
    let mut depth = vec![f64::INFINITY; n];
    let mut ids = vec![BACKGROUND; n];
    if !rays.is_empty() {
        let axis = camera.pose.orientation.rotate(Vec3::Z);
        for v in 0..camera.height {
            for u in 0..camera.width {
                let (o, d) = camera.ray(u, v);
                if let Some(hit) = rays.cast(o, d) {
                    let i = v * camera.width + u;
                    depth[i] = hit.t * d.dot(axis);
                    ids[i] = hit.body as i32;
                }
            }
        }
    }
    Rendered { width: camera.width, height: camera.height, depth, ids }
}

/// Pixel count of `body` rendered alone.
fn solo_count(scene: &Scene, camera: &Camera, body: BodyId) -> usize {
    render_rays(&RayScene::filtered(scene, |id| id == body), camera).count(body)
}

fn ratio(visible: usize, solo: usize) -> f64 {
    if solo == 0 {
        0.0
    } else {
        (visible as f64 / solo as f64).min(1.0)
    }
}

/// Visible pixels of `body` in the full scene divided by its pixels rendered alone.
pub fn visibility(scene: &Scene, camera: &Camera, body: BodyId) -> Result<f64, PerceptError> {
    scene.body(body).map_err(|_| PerceptError::UnknownBody(body))?;
    let full = render(scene, camera);
    Ok(ratio(full.count(body), solo_count(scene, camera, body)))
}

/// Visibility of every body, plus the full render it was computed from.
pub fn visibilities(scene: &Scene, camera: &Camera) -> (Vec<f64>, Vec<usize>, Rendered) {
    let full = render(scene, camera);
    let solo: Vec<usize> = (0..scene.bodies.len()).map(|b| solo_count(scene, camera, b)).collect();
    let vis = solo.iter().enumerate().map(|(b, &s)| ratio(full.count(b), s)).collect();
    (vis, solo, full)
}

/// Perception noise, scaled per body by `(1 - visibility)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub miss_scale: f64,
    pub trans_sigma: f64,
    pub rot_sigma_deg: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn off(seed: u64) -> Self {
        Self { miss_scale: 0.0, trans_sigma: 0.0, rot_sigma_deg: 0.0, seed }
    }

    /// The noisy setting used by the ablation benchmark.
    pub fn ablation(seed: u64) -> Self {
        Self { miss_scale: 0.5, trans_sigma: 0.02, rot_sigma_deg: 10.0, seed }
    }

    pub fn validate(&self) -> Result<(), PerceptError> {
        if !(0.0..=1.0).contains(&self.miss_scale) {
            return Err(PerceptError::InvalidNoise("miss_scale must be in [0, 1]".into()));
        }
        if !(self.trans_sigma >= 0.0 && self.rot_sigma_deg >= 0.0) {
            return Err(PerceptError::InvalidNoise("sigmas must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        self.miss_scale == 0.0 && self.trans_sigma == 0.0 && self.rot_sigma_deg == 0.0
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct OracleDetection {
    pub body: BodyId,
    pub visibility: f64,
    pub detection: Detection,
}

/// Detects each body in view with probability `1 - miss_scale * (1 - visibility)`
/// and reports that probability as the confidence, so a perfect detector
/// (`miss_scale = 0`) is always confident. Deterministic in `(noise.seed, call_index)`.
pub fn oracle_detect(
    scene: &Scene,
    camera: &Camera,
    noise: &NoiseParams,
    call_index: u64,
) -> Vec<OracleDetection> {
    let (vis, solo, full) = visibilities(scene, camera);
    let mut rng = noise.rng(call_index << 1);
    let mut out = Vec::new();
    for (body, &phi) in vis.iter().enumerate() {
        if solo[body] == 0 {
            continue;
        }
        let u: f64 = rng.random();
        let p_detect = 1.0 - noise.miss_scale * (1.0 - phi);
        if phi <= 0.0 || u >= p_detect {
            continue;
        }
        let mask = full.mask(body);
        let depth = full
            .depth
            .iter()
            .zip(mask.data())
            .map(|(&d, &m)| if m { d } else { f64::INFINITY })
            .collect();
        out.push(OracleDetection {
            body,
            visibility: phi,
            detection: Detection {
                mask,
                depth,
                category: scene.bodies[body].category(),
                confidence: p_detect,
                pose: None,
            },
        });
    }
    out
}

/// Perturbs `true_pose` with Gaussian translation (sigma `trans_sigma * (1 - phi)`
/// per axis) and a random-axis rotation of angle `|N(0, rot_sigma * (1 - phi))|`.
pub fn oracle_pose(true_pose: &Pose, phi: f64, noise: &NoiseParams, call_index: u64) -> Pose {
    let scale = (1.0 - phi.clamp(0.0, 1.0)).max(0.0);
    let ts = noise.trans_sigma * scale;
    let rs = noise.rot_sigma_deg * scale;
    let mut rng = noise.rng((call_index << 1) | 1);
    let mut pose = *true_pose;
    if ts > 0.0 {
        let n = Normal::new(0.0, ts).expect("finite sigma");
        pose.position += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
    }
    if rs > 0.0 {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let axis = loop {
            let a = Vec3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng));
            if let Ok(a) = a.normalized() {
                break a;
            }
        };
        let angle = (unit.sample(&mut rng) * rs).abs().to_radians();
        let dq = UnitQuat::from_axis_angle(axis, angle).expect("unit axis");
        pose.orientation = dq.mul(&pose.orientation);
    }
    pose
}
