//! Object-level occupancy mapping.
//!
//! Every object instance owns a log-odds octree. Detections are associated
//! to instances by mask IoU against the current map rendered into the live
//! camera, and an instance's volume is replaced by its full shape model once
//! enough per-view pose estimates agree.

mod instance;
mod octree;
mod scan;

pub use instance::{
    try_cad_replace, AssociationReport, Instance, InstanceDump, InstanceMap, MapConfig, MapDump,
    PoseHypothesis, TargetQuery, MAP_FORMAT,
};
pub use octree::{traverse_ray, OcTree, VoxelKey, VoxelRecord};
pub use scan::{orbit_cameras, orbit_scan, ScanReport, ORBIT_HEIGHT, ORBIT_RADIUS, ORBIT_VIEWS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Pose;

pub const P_HIT: f64 = 0.7;
pub const P_MISS: f64 = 0.4;
pub const LOGODDS_MIN: f64 = -2.0;
pub const LOGODDS_MAX: f64 = 3.5;
pub const VOXEL_RESOLUTION: f64 = 0.01;
pub const IOU_THRESHOLD: f64 = 0.4;
pub const CONFIDENCE_THRESHOLD: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no mapped instance of category {0}")]
    NotFound(u8),
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn logistic(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// One Bayesian log-odds fusion step, clamped to `[LOGODDS_MIN, LOGODDS_MAX]`.
pub fn logodds_update(prev: f64, p_obs: f64) -> Result<f64, MappingError> {
    if !(p_obs > 0.0 && p_obs < 1.0) {
        return Err(MappingError::InvalidArgument(format!("observation probability {p_obs}")));
    }
    Ok((prev + logit(p_obs)).clamp(LOGODDS_MIN, LOGODDS_MAX))
}

/// Row-major boolean image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize) -> bool) -> Self {
        Self { width, height, data: (0..width * height).map(f).collect() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

/// Intersection over union; 0 when both masks are empty.
pub fn mask_iou(a: &BinaryImage, b: &BinaryImage) -> Result<f64, MappingError> {
    if a.width != b.width || a.height != b.height {
        return Err(MappingError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// A single instance detection in one camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: BinaryImage,
    /// z-depth per pixel, `+inf` outside the mask.
    pub depth: Vec<f64>,
    pub category: u8,
    pub confidence: f64,
    /// Pose estimate for this view, when a pose estimator ran.
    pub pose: Option<Pose>,
}
