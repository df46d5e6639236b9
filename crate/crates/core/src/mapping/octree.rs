use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{logistic, logodds_update, P_HIT, P_MISS};
use crate::geom::Vec3;

/// Integer voxel coordinates: `floor(p / resolution)` per axis.
pub type VoxelKey = [i32; 3];

const DEPTH: u32 = 16;
const OFFSET: i64 = 1 << (DEPTH - 1);
const NONE: u32 = u32::MAX;

/// Sparse log-odds occupancy octree with a fixed depth of 16 levels
/// (±327 m at 1 cm leaves). Unobserved voxels have no leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct OcTree {
    resolution: f64,
    /// Interior nodes; at the last interior level children index `leaves`.
    nodes: Vec<[u32; 8]>,
    leaves: Vec<(VoxelKey, f64)>,
}

fn child_slot(k: [u32; 3], level: u32) -> usize {
    let bit = DEPTH - 1 - level;
    (((k[0] >> bit) & 1) | (((k[1] >> bit) & 1) << 1) | (((k[2] >> bit) & 1) << 2)) as usize
}

fn unsigned(key: VoxelKey) -> Option<[u32; 3]> {
    let mut out = [0; 3];
    for (o, &k) in out.iter_mut().zip(&key) {
        let u = k as i64 + OFFSET;
        if !(0..(1i64 << DEPTH)).contains(&u) {
            return None;
        }
        *o = u as u32;
    }
    Some(out)
}

impl OcTree {
    pub fn new(resolution: f64) -> Self {
        assert!(resolution > 0.0, "octree resolution must be positive");
        Self { resolution, nodes: vec![[NONE; 8]], leaves: Vec::new() }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn key_of(&self, p: Vec3) -> VoxelKey {
        [
            (p.x / self.resolution).floor() as i32,
            (p.y / self.resolution).floor() as i32,
            (p.z / self.resolution).floor() as i32,
        ]
    }

    pub fn center_of(&self, key: VoxelKey) -> Vec3 {
        Vec3::new(
            (key[0] as f64 + 0.5) * self.resolution,
            (key[1] as f64 + 0.5) * self.resolution,
            (key[2] as f64 + 0.5) * self.resolution,
        )
    }

    fn find(&self, key: VoxelKey) -> Option<usize> {
        let k = unsigned(key)?;
        let mut node = 0usize;
        for level in 0..DEPTH {
            let next = self.nodes[node][child_slot(k, level)];
            if next == NONE {
                return None;
            }
            if level == DEPTH - 1 {
                return Some(next as usize);
            }
            node = next as usize;
        }
        None
    }

    fn find_or_insert(&mut self, key: VoxelKey) -> Option<usize> {
        let k = unsigned(key)?;
        let mut node = 0usize;
        for level in 0..DEPTH {
            let slot = child_slot(k, level);
            let next = self.nodes[node][slot];
            if level == DEPTH - 1 {
                if next == NONE {
                    self.leaves.push((key, 0.0));
                    let idx = (self.leaves.len() - 1) as u32;
                    self.nodes[node][slot] = idx;
                    return Some(idx as usize);
                }
                return Some(next as usize);
            }
            node = if next == NONE {
                self.nodes.push([NONE; 8]);
                let idx = (self.nodes.len() - 1) as u32;
                self.nodes[node][slot] = idx;
                idx as usize
            } else {
                next as usize
            };
        }
        None
    }

    pub fn logodds(&self, key: VoxelKey) -> Option<f64> {
        self.find(key).map(|i| self.leaves[i].1)
    }

    pub fn occupancy(&self, key: VoxelKey) -> Option<f64> {
        self.logodds(key).map(logistic)
    }

    pub fn is_occupied(&self, key: VoxelKey) -> bool {
        self.logodds(key).is_some_and(|l| l > 0.0)
    }

    /// Fuses one observation into a voxel. Keys outside the tree's extent are ignored.
    pub fn update(&mut self, key: VoxelKey, p_obs: f64) {
        if let Some(i) = self.find_or_insert(key) {
            let l = &mut self.leaves[i].1;
            *l = logodds_update(*l, p_obs).expect("sensor model probability in (0, 1)");
        }
    }

    /// Number of observed voxels.
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Observed voxels in first-observation order.
    pub fn leaves(&self) -> &[(VoxelKey, f64)] {
        &self.leaves
    }

    pub fn occupied(&self) -> impl Iterator<Item = VoxelKey> + '_ {
        self.leaves.iter().filter(|(_, l)| *l > 0.0).map(|(k, _)| *k)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied().count()
    }

    /// One range scan from `origin`: the voxel of each endpoint receives a hit,
    /// voxels crossed on the way receive a miss unless some endpoint of this
    /// scan falls in them. Each voxel is updated at most once per scan.
    pub fn integrate_scan(&mut self, origin: Vec3, endpoints: &[Vec3]) {
        let mut hits = BTreeSet::new();
        let mut free = BTreeSet::new();
        for &e in endpoints {
            let end = self.key_of(e);
            hits.insert(end);
            for k in traverse_ray(origin, e, self.resolution) {
                if k != end {
                    free.insert(k);
                }
            }
        }
        for k in free.difference(&hits) {
            self.update(*k, P_MISS);
        }
        for k in &hits {
            self.update(*k, P_HIT);
        }
    }
}

/// Voxels crossed by the segment `from -> to`, in order, both end voxels included.
pub fn traverse_ray(from: Vec3, to: Vec3, resolution: f64) -> Vec<VoxelKey> {
    let o = [from.x / resolution, from.y / resolution, from.z / resolution];
    let e = [to.x / resolution, to.y / resolution, to.z / resolution];
    let mut key = [o[0].floor() as i32, o[1].floor() as i32, o[2].floor() as i32];
    let end = [e[0].floor() as i32, e[1].floor() as i32, e[2].floor() as i32];
    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let d = e[a] - o[a];
        if d > 0.0 {
            step[a] = 1;
            t_max[a] = (key[a] as f64 + 1.0 - o[a]) / d;
            t_delta[a] = 1.0 / d;
        } else if d < 0.0 {
            step[a] = -1;
            t_max[a] = (key[a] as f64 - o[a]) / d;
            t_delta[a] = -1.0 / d;
        }
    }
    let budget: i64 = (0..3).map(|a| (end[a] as i64 - key[a] as i64).abs()).sum();
    let mut out = Vec::with_capacity(budget as usize + 1);
    out.push(key);
    for _ in 0..budget {
        if key == end {
            break;
        }
        // only axes that still have to move are candidates, so the walk
        // always ends exactly in the end voxel despite rounding
        let mut a = 3;
        for i in 0..3 {
            if key[i] != end[i] && (a == 3 || t_max[i] < t_max[a]) {
                a = i;
            }
        }
        key[a] += step[a];
        t_max[a] += t_delta[a];
        out.push(key);
    }
    out
}

/// Serializable voxel record for map dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelRecord {
    pub key: VoxelKey,
    pub logodds: f64,
}

impl OcTree {
    pub fn records(&self) -> Vec<VoxelRecord> {
        let mut v: Vec<_> =
            self.leaves.iter().map(|&(key, logodds)| VoxelRecord { key, logodds }).collect();
        v.sort_by_key(|r| r.key);
        v
    }
}
