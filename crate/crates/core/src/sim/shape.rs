use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geom::{Mat3, Vec3};

/// Number of object categories in the primitive catalog.
pub const NUM_CATEGORIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

/// Rigid sphere compound. Sphere centers are stored relative to the center
/// of mass, which is the body-frame origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeRecord", into = "ShapeRecord")]
pub struct BodyShape {
    category: u8,
    spheres: Vec<Sphere>,
    mass: f64,
    inertia: Mat3,
    inv_inertia: Mat3,
    bounding_radius: f64,
}

#[derive(Serialize, Deserialize)]
struct ShapeRecord {
    category: u8,
    spheres: Vec<Sphere>,
    mass: f64,
}

impl TryFrom<ShapeRecord> for BodyShape {
    type Error = SimError;
    fn try_from(r: ShapeRecord) -> Result<Self, SimError> {
        BodyShape::from_centered(r.category, r.spheres, r.mass)
    }
}

impl From<BodyShape> for ShapeRecord {
    fn from(s: BodyShape) -> Self {
        ShapeRecord { category: s.category, spheres: s.spheres, mass: s.mass }
    }
}

impl BodyShape {
    /// Builds a shape and shifts the spheres so the volume-weighted centroid
    /// sits at the origin.
    pub fn new(category: u8, spheres: Vec<Sphere>, mass: f64) -> Result<Self, SimError> {
        Self::validate(&spheres, mass)?;
        let total: f64 = spheres.iter().map(|s| s.radius.powi(3)).sum();
        let com = spheres
            .iter()
            .fold(Vec3::ZERO, |acc, s| acc + s.center * s.radius.powi(3))
            / total;
        let spheres = spheres
            .into_iter()
            .map(|s| Sphere { center: s.center - com, radius: s.radius })
            .collect();
        Self::from_centered(category, spheres, mass)
    }

    fn validate(spheres: &[Sphere], mass: f64) -> Result<(), SimError> {
        if spheres.is_empty() {
            return Err(SimError::InvalidShape("shape needs at least one sphere".into()));
        }
        if spheres.iter().any(|s| !(s.radius > 0.0) || !s.center.is_finite()) {
            return Err(SimError::InvalidShape("sphere radii must be positive".into()));
        }
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(SimError::InvalidShape("mass must be positive".into()));
        }
        Ok(())
    }

    fn from_centered(category: u8, spheres: Vec<Sphere>, mass: f64) -> Result<Self, SimError> {
        Self::validate(&spheres, mass)?;
        let total: f64 = spheres.iter().map(|s| s.radius.powi(3)).sum();
        let mut inertia = Mat3::ZERO;
        for s in &spheres {
            let m = mass * s.radius.powi(3) / total;
            let c = s.center;
            let own = 0.4 * m * s.radius * s.radius;
            let c2 = c.norm_squared();
            let shift = Mat3([
                [c2 - c.x * c.x, -c.x * c.y, -c.x * c.z],
                [-c.y * c.x, c2 - c.y * c.y, -c.y * c.z],
                [-c.z * c.x, -c.z * c.y, c2 - c.z * c.z],
            ]);
            inertia = inertia
                .add(&Mat3::diagonal(Vec3::new(own, own, own)))
                .add(&shift.scale(m));
        }
        let inv_inertia = inertia
            .inverse()
            .ok_or_else(|| SimError::InvalidShape("singular inertia".into()))?;
        let bounding_radius = spheres
            .iter()
            .map(|s| s.center.norm() + s.radius)
            .fold(0.0, f64::max);
        Ok(Self { category, spheres, mass, inertia, inv_inertia, bounding_radius })
    }

    pub fn category(&self) -> u8 {
        self.category
    }

    pub fn spheres(&self) -> &[Sphere] {
        &self.spheres
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Mat3 {
        &self.inertia
    }

    pub fn inv_inertia(&self) -> &Mat3 {
        &self.inv_inertia
    }

    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// Lowest point below the center of mass in the body frame.
    pub fn half_height(&self) -> f64 {
        self.spheres
            .iter()
            .map(|s| s.radius - s.center.z)
            .fold(0.0, f64::max)
    }
}

fn sph(x: f64, y: f64, z: f64, r: f64) -> Sphere {
    Sphere { center: Vec3::new(x, y, z), radius: r }
}

fn grid(xs: &[f64], ys: &[f64], zs: &[f64], r: f64) -> Vec<Sphere> {
    let mut out = Vec::new();
    for &z in zs {
        for &y in ys {
            for &x in xs {
                out.push(sph(x, y, z, r));
            }
        }
    }
    out
}

/// The eight primitive categories, indexed by category id: cube, tall box,
/// flat box, cylinder, sphere, L-shape, bar, dome.
pub fn primitive_catalog() -> Vec<BodyShape> {
    let third = 0.05 / 3.0;
    let mut cylinder = Vec::new();
    for &z in &[-0.045, -0.015, 0.015, 0.045] {
        for k in 0..3 {
            let a = k as f64 * std::f64::consts::TAU / 3.0;
            cylinder.push(sph(0.015 * a.cos(), 0.015 * a.sin(), z, 0.02));
        }
    }
    let mut dome: Vec<Sphere> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 6.0;
            sph(0.028 * a.cos(), 0.028 * a.sin(), 0.0, 0.022)
        })
        .collect();
    dome.push(sph(0.0, 0.0, 0.012, 0.032));

    let specs: Vec<(Vec<Sphere>, f64)> = vec![
        (grid(&[-0.0175, 0.0175], &[-0.0175, 0.0175], &[-0.0175, 0.0175], 0.0175), 0.25),
        (grid(&[-0.01, 0.01], &[-0.01, 0.01], &[-0.04, 0.0, 0.04], 0.02), 0.3),
        (grid(&[-0.05, -third, third, 0.05], &[-0.03, 0.0, 0.03], &[0.0], 0.02), 0.2),
        (cylinder, 0.35),
        (vec![sph(0.0, 0.0, 0.0, 0.035)], 0.15),
        (
            vec![
                sph(-0.04, -0.02, 0.0, 0.02),
                sph(-0.0133, -0.02, 0.0, 0.02),
                sph(0.0133, -0.02, 0.0, 0.02),
                sph(0.04, -0.02, 0.0, 0.02),
                sph(-0.04, 0.0067, 0.0, 0.02),
                sph(-0.04, 0.0333, 0.0, 0.02),
            ],
            0.2,
        ),
        (grid(&[-0.07, -0.042, -0.014, 0.014, 0.042, 0.07], &[0.0], &[0.0], 0.02), 0.15),
        (dome, 0.2),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (s, m))| BodyShape::new(i as u8, s, m).expect("catalog shapes are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_eight_small_compounds() {
        let cat = primitive_catalog();
        assert_eq!(cat.len(), NUM_CATEGORIES);
        for (i, s) in cat.iter().enumerate() {
            assert_eq!(s.category() as usize, i);
            assert!(!s.spheres().is_empty() && s.spheres().len() <= 12);
            assert!(s.bounding_radius() < 0.12);
        }
    }

    #[test]
    fn centered_at_com() {
        let s = BodyShape::new(
            0,
            vec![sph(1.0, 0.0, 0.0, 0.1), sph(2.0, 0.0, 0.0, 0.1)],
            1.0,
        )
        .unwrap();
        let com: Vec3 = s.spheres().iter().fold(Vec3::ZERO, |a, x| a + x.center);
        assert!(com.norm() < 1e-12);
    }

    #[test]
    fn single_sphere_inertia() {
        let s = BodyShape::new(4, vec![sph(0.0, 0.0, 0.0, 0.1)], 2.0).unwrap();
        let expected = 0.4 * 2.0 * 0.01;
        assert!((s.inertia().0[0][0] - expected).abs() < 1e-15);
        assert!((s.inv_inertia().0[2][2] - 1.0 / expected).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid() {
        assert!(BodyShape::new(0, vec![], 1.0).is_err());
        assert!(BodyShape::new(0, vec![sph(0.0, 0.0, 0.0, 0.0)], 1.0).is_err());
        assert!(BodyShape::new(0, vec![sph(0.0, 0.0, 0.0, 0.1)], 0.0).is_err());
    }
}
