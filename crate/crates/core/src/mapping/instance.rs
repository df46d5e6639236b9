use serde::{Deserialize, Serialize};

use super::octree::{OcTree, VoxelRecord};
use super::{
    mask_iou, BinaryImage, Detection, MappingError, CONFIDENCE_THRESHOLD, IOU_THRESHOLD,
    VOXEL_RESOLUTION,
};
use crate::geom::{Pose, UnitQuat, Vec3};
use crate::percept::{render_rays, Camera, RayScene, BACKGROUND};
use crate::sim::{BodyShape, Scene};

pub const MAP_FORMAT: &str = "pilepick-map";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub resolution: f64,
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    /// Agreeing pose hypotheses needed before the shape model replaces the volume.
    pub k_required: usize,
    pub cad_tol: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: VOXEL_RESOLUTION,
            iou_threshold: IOU_THRESHOLD,
            confidence_threshold: CONFIDENCE_THRESHOLD,
            k_required: 3,
            cad_tol: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseHypothesis {
    pub pose: Pose,
    pub view: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: usize,
    pub category: u8,
    pub tree: OcTree,
    pub hypotheses: Vec<PoseHypothesis>,
    pub views: usize,
    /// Consensus pose once enough hypotheses agree.
    pub cad_pose: Option<Pose>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationReport {
    /// `(detection index, instance id)` for detections fused into existing instances.
    pub matched: Vec<(usize, usize)>,
    /// `(detection index, instance id)` for detections that started a new instance.
    pub created: Vec<(usize, usize)>,
    /// Detections below the confidence threshold.
    pub ignored: Vec<usize>,
}

impl AssociationReport {
    /// Instance that received detection `det`, if any.
    pub fn instance_of(&self, det: usize) -> Option<usize> {
        self.matched.iter().chain(&self.created).find(|(d, _)| *d == det).map(|&(_, i)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetQuery {
    pub id: usize,
    pub pose: Option<Pose>,
    /// Centers of occupied voxels that have no occupied voxel directly above.
    pub surface: Vec<Vec3>,
}

/// Mean distance between corresponding model sphere centers under two poses.
fn model_distance(model: &[Vec3], a: &Pose, b: &Pose) -> f64 {
    if model.is_empty() {
        return (a.position - b.position).norm();
    }
    model.iter().map(|&c| (a.transform_point(c) - b.transform_point(c)).norm()).sum::<f64>()
        / model.len() as f64
}

fn average_pose(poses: &[Pose]) -> Pose {
    let n = poses.len() as f64;
    let position = poses.iter().fold(Vec3::ZERO, |s, p| s + p.position) / n;
    let reference = poses[0].orientation;
    let mut sum = [0.0; 4];
    for p in poses {
        let q = p.orientation.to_xyzw();
        let sign = if p.orientation.dot(&reference) < 0.0 { -1.0 } else { 1.0 };
        for (s, v) in sum.iter_mut().zip(q) {
            *s += sign * v;
        }
    }
    let orientation = UnitQuat::from_xyzw(sum[0], sum[1], sum[2], sum[3]).unwrap_or(reference);
    Pose::new(position, orientation.canonical())
}

/// Pose consensus over per-view estimates of one object.
///
/// Two hypotheses agree when the mean distance between the model's sphere
/// centers placed at either pose is within `tol`. The hypothesis with the most
/// partners (lowest index on ties) wins if it has at least `k_required - 1`;
/// the result averages it with its partners.
pub fn try_cad_replace(
    hypotheses: &[PoseHypothesis],
    model: &BodyShape,
    k_required: usize,
    tol: f64,
) -> Option<Pose> {
    let centers: Vec<Vec3> = model.spheres().iter().map(|s| s.center).collect();
    let n = hypotheses.len();
    let mut best: Option<(usize, Vec<usize>)> = None;
    for i in 0..n {
        let partners: Vec<usize> = (0..n)
            .filter(|&j| {
                j != i && model_distance(&centers, &hypotheses[i].pose, &hypotheses[j].pose) <= tol
            })
            .collect();
        if best.as_ref().map_or(true, |(_, p)| partners.len() > p.len()) {
            best = Some((i, partners));
        }
    }
    let (i, partners) = best?;
    if partners.len() + 1 < k_required.max(1) {
        return None;
    }
    let cluster: Vec<Pose> =
        std::iter::once(i).chain(partners).map(|j| hypotheses[j].pose).collect();
    Some(average_pose(&cluster))
}

/// Per-instance occupancy volumes, pose hypotheses and camera history.
#[derive(Debug, Clone)]
pub struct InstanceMap {
    pub config: MapConfig,
    catalog: Vec<BodyShape>,
    instances: Vec<Instance>,
    cameras: Vec<Camera>,
}

impl InstanceMap {
    pub fn new(catalog: Vec<BodyShape>, config: MapConfig) -> Self {
        Self { config, catalog, instances: Vec::new(), cameras: Vec::new() }
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn model(&self, category: u8) -> Option<&BodyShape> {
        self.catalog.iter().find(|s| s.category() == category)
    }

    /// Renders every instance into `camera` with a shared z-buffer: shape
    /// models for replaced instances, voxel splats otherwise. Pixels lying
    /// behind the observed `scene_depth` are dropped.
    pub fn render_masks(&self, camera: &Camera, scene_depth: &[f64]) -> Vec<BinaryImage> {
        let npx = camera.pixel_count();
        let mut zbuf = vec![f64::INFINITY; npx];
        let mut owner = vec![usize::MAX; npx];

        let mut models = Scene::new(0);
        let mut model_owner = Vec::new();
        for (idx, inst) in self.instances.iter().enumerate() {
            if let (Some(pose), Some(shape)) = (inst.cad_pose, self.model(inst.category)) {
                models.add_body(shape.clone(), pose);
                model_owner.push(idx);
            }
        }
        if !model_owner.is_empty() {
            let r = render_rays(&RayScene::new(&models), camera);
            for i in 0..npx {
                if r.ids[i] != BACKGROUND {
                    zbuf[i] = r.depth[i];
                    owner[i] = model_owner[r.ids[i] as usize];
                }
            }
        }

        let res = self.config.resolution;
        for (idx, inst) in self.instances.iter().enumerate() {
            if inst.cad_pose.is_some() && self.model(inst.category).is_some() {
                continue;
            }
            for key in inst.tree.occupied() {
                let Some((pu, pv, z)) = camera.project(inst.tree.center_of(key)) else {
                    continue;
                };
                let half = 0.65 * res * camera.fx / z;
                let u0 = (pu - half).ceil().max(0.0) as usize;
                let v0 = (pv - half).ceil().max(0.0) as usize;
                let u1 = (pu + half).floor().min(camera.width as f64 - 1.0);
                let v1 = (pv + half).floor().min(camera.height as f64 - 1.0);
                if u1 < 0.0 || v1 < 0.0 {
                    continue;
                }
                for v in v0..=v1 as usize {
                    for u in u0..=u1 as usize {
                        let i = v * camera.width + u;
                        if z < zbuf[i] {
                            zbuf[i] = z;
                            owner[i] = idx;
                        }
                    }
                }
            }
        }

        let margin = 2.0 * res;
        let mut masks = vec![BinaryImage::new(camera.width, camera.height); self.instances.len()];
        for i in 0..npx {
            if owner[i] != usize::MAX && zbuf[i] <= scene_depth.get(i).copied().unwrap_or(f64::INFINITY) + margin {
                let (u, v) = (i % camera.width, i / camera.width);
                masks[owner[i]].set(u, v, true);
            }
        }
        masks
    }

    /// Associates and fuses one view's detections.
    pub fn integrate_view(
        &mut self,
        detections: &[Detection],
        camera: &Camera,
        scene_depth: &[f64],
    ) -> Result<AssociationReport, MappingError> {
        for d in detections {
            if d.mask.width() != camera.width || d.mask.height() != camera.height {
                return Err(MappingError::DimensionMismatch(
                    d.mask.width(),
                    d.mask.height(),
                    camera.width,
                    camera.height,
                ));
            }
        }
        let view = self.cameras.len();
        self.cameras.push(*camera);
        let rendered = self.render_masks(camera, scene_depth);
        let mut report = AssociationReport::default();
        for (di, det) in detections.iter().enumerate() {
            if det.confidence < self.config.confidence_threshold {
                report.ignored.push(di);
                continue;
            }
            let idx = match self.best_match(&rendered, det)? {
                Some(idx) => {
                    report.matched.push((di, self.instances[idx].id));
                    idx
                }
                None => {
                    let id = self.instances.len();
                    self.instances.push(Instance {
                        id,
                        category: det.category,
                        tree: OcTree::new(self.config.resolution),
                        hypotheses: Vec::new(),
                        views: 0,
                        cad_pose: None,
                    });
                    report.created.push((di, id));
                    id
                }
            };
            self.fuse(idx, det, camera, view);
        }
        Ok(report)
    }

    /// Index of the same-category instance whose rendered mask has the highest
    /// IoU with the detection (lower index on ties), if above the threshold.
    fn best_match(&self, rendered: &[BinaryImage], det: &Detection) -> Result<Option<usize>, MappingError> {
        let mut best: Option<(usize, f64)> = None;
        for (idx, mask) in rendered.iter().enumerate() {
            if self.instances[idx].category != det.category {
                continue;
            }
            let iou = mask_iou(mask, &det.mask)?;
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((idx, iou));
            }
        }
        Ok(best.filter(|&(_, iou)| iou > self.config.iou_threshold).map(|(idx, _)| idx))
    }

    fn fuse(&mut self, idx: usize, det: &Detection, camera: &Camera, view: usize) {
        let mut points = Vec::new();
        for (i, (&m, &z)) in det.mask.data().iter().zip(&det.depth).enumerate() {
            if m && z.is_finite() {
                points.push(camera.back_project(i % camera.width, i / camera.width, z));
            }
        }
        let (k, tol) = (self.config.k_required, self.config.cad_tol);
        let model = self.model(det.category).cloned();
        let inst = &mut self.instances[idx];
        inst.tree.integrate_scan(camera.pose.position, &points);
        inst.views += 1;
        if let Some(pose) = det.pose {
            inst.hypotheses.push(PoseHypothesis { pose, view });
            if let Some(model) = model {
                inst.cad_pose = try_cad_replace(&inst.hypotheses, &model, k, tol);
            }
        }
    }

    /// The instance of `category` with the most occupied voxels (lower id on ties).
    pub fn query_target(&self, category: u8) -> Result<TargetQuery, MappingError> {
        let mut best: Option<(&Instance, usize)> = None;
        for inst in self.instances.iter().filter(|i| i.category == category) {
            let n = inst.tree.occupied_count();
            if best.map_or(true, |(_, b)| n > b) {
                best = Some((inst, n));
            }
        }
        let (inst, _) = best.ok_or(MappingError::NotFound(category))?;
        let surface = inst
            .tree
            .occupied()
            .filter(|k| !inst.tree.is_occupied([k[0], k[1], k[2] + 1]))
            .map(|k| inst.tree.center_of(k))
            .collect();
        Ok(TargetQuery { id: inst.id, pose: inst.cad_pose, surface })
    }

    pub fn dump(&self) -> MapDump {
        MapDump {
            format: MAP_FORMAT.into(),
            version: 1,
            resolution: self.config.resolution,
            instances: self
                .instances
                .iter()
                .map(|i| InstanceDump {
                    id: i.id,
                    category: i.category,
                    views: i.views,
                    cad_pose: i.cad_pose,
                    hypotheses: i.hypotheses.clone(),
                    voxels: i.tree.records(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDump {
    pub id: usize,
    pub category: u8,
    pub views: usize,
    pub cad_pose: Option<Pose>,
    pub hypotheses: Vec<PoseHypothesis>,
    pub voxels: Vec<VoxelRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDump {
    pub format: String,
    pub version: u32,
    pub resolution: f64,
    pub instances: Vec<InstanceDump>,
}
