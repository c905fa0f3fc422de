//! Instrument–tissue and instrument–instrument proximity tests.

use serde::{Deserialize, Serialize};

use crate::geometry::{point_segment_distance, segment_segment_distance, segment_triangle_distance, triangle_bounds, Vec3};
use crate::scene::TriMesh;
use crate::softbody::DeformableBody;

/// Instrument shaft: the segment from trocar pivot to tip, swept by `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairContact {
    pub collided: bool,
    pub contacts: u32,
}

impl PairContact {
    fn from_count(contacts: u32) -> Self {
        Self { collided: contacts > 0, contacts }
    }
}

/// Collision flags for one simulation step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub gripper_liver: PairContact,
    pub cauter_liver: PairContact,
    pub cauter_gallbladder: PairContact,
    pub instrument_instrument: PairContact,
}

impl CollisionReport {
    pub fn any(&self) -> bool {
        self.gripper_liver.collided || self.cauter_liver.collided || self.cauter_gallbladder.collided || self.instrument_instrument.collided
    }
}

/// Counts triangles whose distance to the capsule axis is strictly below
/// `capsule.radius + offset`. Triangles whose bounding sphere is clearly out
/// of reach are skipped before the exact test.
fn capsule_mesh_contacts<'a>(capsule: &Capsule, offset: f64, triangles: impl Iterator<Item = (Vec3, Vec3, Vec3)> + 'a) -> u32 {
    let reach = capsule.radius + offset;
    let mut n = 0;
    for (a, b, c) in triangles {
        let (centroid, r) = triangle_bounds(&a, &b, &c);
        if point_segment_distance(&centroid, &capsule.a, &capsule.b) - r >= reach {
            continue;
        }
        if segment_triangle_distance(&capsule.a, &capsule.b, &a, &b, &c) < reach {
            n += 1;
        }
    }
    n
}

pub fn capsule_vs_mesh(capsule: &Capsule, offset: f64, mesh: &TriMesh) -> PairContact {
    PairContact::from_count(capsule_mesh_contacts(capsule, offset, (0..mesh.triangles.len()).map(|t| mesh.triangle(t))))
}

/// Capsule against the deformable body, ignoring triangles that touch any of
/// `excluded` vertices.
pub fn capsule_vs_body(capsule: &Capsule, offset: f64, body: &DeformableBody, excluded: &[u32]) -> PairContact {
    let tris = body
        .triangles
        .iter()
        .filter(|t| !t.iter().any(|v| excluded.contains(v)))
        .map(|t| (body.vertices[t[0] as usize], body.vertices[t[1] as usize], body.vertices[t[2] as usize]));
    PairContact::from_count(capsule_mesh_contacts(capsule, offset, tris))
}

pub fn capsule_vs_capsule(a: &Capsule, b: &Capsule) -> PairContact {
    let d = segment_segment_distance(&a.a, &a.b, &b.a, &b.b);
    PairContact::from_count(u32::from(d < a.radius + b.radius))
}

/// Evaluates the four reported pairs. Gripper–gallbladder contact is not a
/// reported pair: the gripper holds the gallbladder by design.
pub fn detect_collisions(
    body: &DeformableBody,
    liver: &TriMesh,
    gripper: &Capsule,
    cauter: &Capsule,
    tissue_offset: f64,
) -> CollisionReport {
    assert!(gripper.radius > 0.0 && cauter.radius > 0.0, "capsule radii must be positive");
    CollisionReport {
        gripper_liver: capsule_vs_mesh(gripper, tissue_offset, liver),
        cauter_liver: capsule_vs_mesh(cauter, tissue_offset, liver),
        cauter_gallbladder: capsule_vs_body(cauter, tissue_offset, body, &[]),
        instrument_instrument: capsule_vs_capsule(gripper, cauter),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;

    fn far_capsule(x: f64) -> Capsule {
        Capsule { a: Vec3::new(x, 300.0, 0.0), b: Vec3::new(x, 200.0, 0.0), radius: 2.5 }
    }

    #[test]
    fn separated_bodies_report_nothing() {
        let s = Scene::procedural();
        let r = detect_collisions(&s.gallbladder, &s.liver, &far_capsule(-100.0), &far_capsule(100.0), 0.5);
        assert_eq!(r, CollisionReport::default());
    }

    #[test]
    fn shaft_through_liver_sets_flag() {
        let s = Scene::procedural();
        let cauter = Capsule { a: Vec3::new(60.0, 40.0, 30.0), b: Vec3::new(60.0, -20.0, 30.0), radius: 2.5 };
        let r = detect_collisions(&s.gallbladder, &s.liver, &far_capsule(-100.0), &cauter, 0.5);
        assert!(r.cauter_liver.collided);
        assert!(!r.gripper_liver.collided && !r.instrument_instrument.collided);
    }

    #[test]
    fn tangency_is_not_a_collision() {
        // flat triangle at y = 0, capsule axis exactly radius + offset above it
        let mesh = TriMesh {
            vertices: vec![Vec3::new(-50.0, 0.0, -50.0), Vec3::new(50.0, 0.0, -50.0), Vec3::new(0.0, 0.0, 50.0)],
            triangles: vec![[0, 2, 1]],
        };
        let c = Capsule { a: Vec3::new(-10.0, 3.0, 0.0), b: Vec3::new(10.0, 3.0, 0.0), radius: 2.5 };
        assert!(!capsule_vs_mesh(&c, 0.5, &mesh).collided);
        let closer = Capsule { a: Vec3::new(-10.0, 2.999, 0.0), b: Vec3::new(10.0, 3.0, 0.0), radius: 2.5 };
        assert!(capsule_vs_mesh(&closer, 0.5, &mesh).collided);
    }

    #[test]
    fn instrument_pair_is_symmetric() {
        let a = Capsule { a: Vec3::new(0.0, 0.0, 0.0), b: Vec3::new(10.0, 0.0, 0.0), radius: 2.5 };
        let b = Capsule { a: Vec3::new(5.0, 4.0, -5.0), b: Vec3::new(5.0, 4.0, 5.0), radius: 2.5 };
        assert_eq!(capsule_vs_capsule(&a, &b), capsule_vs_capsule(&b, &a));
        assert!(capsule_vs_capsule(&a, &b).collided);
    }
}
