use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ObsError;
use crate::geom::{Pose, Vec3};
use crate::sim::{BodyId, Scene};

pub const HEIGHTMAP_SIZE: usize = 128;
pub const CELL_SIZE: f64 = 0.004;
pub const MAX_HEIGHT: f64 = 0.5;
const CENTER: i64 = (HEIGHTMAP_SIZE / 2) as i64;

/// Top-down height grid centered on the grasp XY. Row 0 is the +Y edge,
/// column 0 the −X edge; cell `(r, c)` is centered at
/// `grasp + ((c − 64)·0.004, (64 − r)·0.004)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightmap {
    data: Vec<f64>,
}

impl Default for Heightmap {
    fn default() -> Self {
        Self { data: vec![0.0; HEIGHTMAP_SIZE * HEIGHTMAP_SIZE] }
    }
}

/// Cell offset from the grasp point, in meters.
pub fn cell_offset(r: usize, c: usize) -> (f64, f64) {
    ((c as i64 - CENTER) as f64 * CELL_SIZE, (CENTER - r as i64) as f64 * CELL_SIZE)
}

/// Cell containing an offset from the grasp point, if inside the grid.
pub fn cell_of(dx: f64, dy: f64) -> Option<(usize, usize)> {
    let c = (dx / CELL_SIZE).round() as i64 + CENTER;
    let r = CENTER - (dy / CELL_SIZE).round() as i64;
    let n = HEIGHTMAP_SIZE as i64;
    ((0..n).contains(&r) && (0..n).contains(&c)).then_some((r as usize, c as usize))
}

impl Heightmap {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * HEIGHTMAP_SIZE + c]
    }

    /// Exact max surface height of the scene's spheres over each cell's
    /// footprint, skipping `exclude`. Also returns the body owning each cell's
    /// top surface.
    pub fn from_scene_with_owner(
        scene: &Scene,
        grasp: &Pose,
        exclude: Option<BodyId>,
    ) -> (Heightmap, Vec<Option<BodyId>>) {
        let n = HEIGHTMAP_SIZE;
        let mut best = vec![0.0f64; n * n];
        let mut owner = vec![None; n * n];
        let half = 0.5 * CELL_SIZE;
        let (gx, gy) = (grasp.position.x, grasp.position.y);
        for body in scene.bodies.iter().filter(|b| Some(b.id) != exclude) {
            // body position relative to the grasp first, so a common XY shift
            // of scene and grasp cancels before any other rounding happens
            let rel = Vec3::new(body.pose.position.x - gx, body.pose.position.y - gy, body.pose.position.z);
            for s in body.shape.spheres() {
                let c = rel + body.pose.orientation.rotate(s.center);
                let r = s.radius;
                if c.z + r <= 0.0 {
                    continue;
                }
                let c_lo = (((c.x - r - half) / CELL_SIZE).floor() as i64 + CENTER).max(0);
                let c_hi = (((c.x + r + half) / CELL_SIZE).ceil() as i64 + CENTER).min(n as i64 - 1);
                let r_lo = (CENTER - ((c.y + r + half) / CELL_SIZE).ceil() as i64).max(0);
                let r_hi = (CENTER - ((c.y - r - half) / CELL_SIZE).floor() as i64).min(n as i64 - 1);
                for row in r_lo..=r_hi {
                    for col in c_lo..=c_hi {
                        let (x, y) = cell_offset(row as usize, col as usize);
                        let dx = ((c.x - x).abs() - half).max(0.0);
                        let dy = ((c.y - y).abs() - half).max(0.0);
                        let d2 = dx * dx + dy * dy;
                        if d2 >= r * r {
                            continue;
                        }
                        let h = c.z + (r * r - d2).sqrt();
                        let i = row as usize * n + col as usize;
                        if h > best[i] {
                            best[i] = h;
                            owner[i] = Some(body.id);
                        }
                    }
                }
            }
        }
        let data = best.iter().map(|&h| h.clamp(0.0, MAX_HEIGHT)).collect();
        (Heightmap { data }, owner)
    }

    pub fn from_scene(scene: &Scene, grasp: &Pose) -> Heightmap {
        Self::from_scene_with_owner(scene, grasp, None).0
    }

    /// Max-pools world points into their cells.
    pub fn from_points(points: &[Vec3], grasp: &Pose) -> Heightmap {
        let mut hm = Heightmap::default();
        for p in points {
            if let Some((r, c)) = cell_of(p.x - grasp.position.x, p.y - grasp.position.y) {
                let h = p.z.clamp(0.0, MAX_HEIGHT);
                let cell = &mut hm.data[r * HEIGHTMAP_SIZE + c];
                *cell = cell.max(h);
            }
        }
        hm
    }

    /// 16-bit grayscale PNG, one gray level per millimeter.
    pub fn write_png(&self, path: &Path) -> Result<(), ObsError> {
        let file = std::fs::File::create(path).map_err(|e| ObsError::Io(e.to_string()))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), HEIGHTMAP_SIZE as u32, HEIGHTMAP_SIZE as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| ObsError::Io(e.to_string()))?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .flat_map(|&h| ((h * 1000.0).round() as u16).to_be_bytes())
            .collect();
        writer.write_image_data(&bytes).map_err(|e| ObsError::Io(e.to_string()))
    }
}
