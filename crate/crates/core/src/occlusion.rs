//! Target visibility by ray casting against the gallbladder surface.

use crate::geometry::{point_segment_distance, segment_triangle_hit, triangle_bounds, Vec3};
use crate::scene::TargetSphere;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    pub visible_fraction: f64,
    pub obstructing_triangles: u32,
}

/// Deterministic sample points on the hemisphere of `target` that faces
/// `eye`. Points are uniform over the projected disc (golden-angle spiral), so
/// the unobstructed share approximates the visible share of the target's image.
pub fn hemisphere_samples(eye: &Vec3, target: &TargetSphere, n: usize) -> Vec<Vec3> {
    let axis = (eye - target.center_mm).normalize();
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let s = (k as f64 + 0.5) / n as f64;
            let r = s.sqrt();
            let h = (1.0 - s).sqrt();
            let phi = golden * k as f64;
            target.center_mm + (u * (r * phi.cos()) + v * (r * phi.sin()) + axis * h) * target.radius_mm
        })
        .collect()
}

/// Casts `n_rays` segments from `eye` to sample points on the target and
/// tests them against `triangles`. Returns the unobstructed fraction and the
/// number of distinct triangles crossed by obstructed rays.
pub fn occlusion_query(vertices: &[Vec3], triangles: &[[u32; 3]], eye: &Vec3, target: &TargetSphere, n_rays: usize) -> Visibility {
    assert!(n_rays >= 1, "n_rays must be at least 1");
    // every ray lies within the target radius of the eye-to-centre segment
    let candidates: Vec<(usize, [Vec3; 3])> = triangles
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let (a, b, c) = (vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]);
            let (centroid, r) = triangle_bounds(&a, &b, &c);
            (point_segment_distance(&centroid, eye, &target.center_mm) <= r + target.radius_mm + 1e-9).then_some((i, [a, b, c]))
        })
        .collect();
    let mut hit_tris: Vec<usize> = Vec::new();
    let mut visible = 0usize;
    for p in hemisphere_samples(eye, target, n_rays) {
        let dir = p - eye;
        let mut blocked = false;
        for (i, [a, b, c]) in &candidates {
            if let Some(t) = segment_triangle_hit(eye, &dir, a, b, c) {
                if t < 1.0 {
                    blocked = true;
                    hit_tris.push(*i);
                }
            }
        }
        if !blocked {
            visible += 1;
        }
    }
    hit_tris.sort_unstable();
    hit_tris.dedup();
    Visibility { visible_fraction: visible as f64 / n_rays as f64, obstructing_triangles: hit_tris.len() as u32 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;
    use proptest::prelude::*;

    fn target() -> TargetSphere {
        TargetSphere { center_mm: Vec3::new(0.0, 0.0, 0.0), radius_mm: 2.5 }
    }

    /// Large wall in the plane x = 50 covering the half space z > 0.
    fn half_wall() -> (Vec<Vec3>, Vec<[u32; 3]>) {
        let v =
            vec![Vec3::new(50.0, -100.0, 0.0), Vec3::new(50.0, 100.0, 0.0), Vec3::new(50.0, 100.0, 100.0), Vec3::new(50.0, -100.0, 100.0)];
        (v, vec![[0, 1, 2], [0, 2, 3]])
    }

    #[test]
    fn empty_scene_is_fully_visible() {
        let v = hemisphere_samples(&Vec3::new(100.0, 0.0, 0.0), &target(), 1);
        assert_eq!(v.len(), 1);
        let vis = occlusion_query(&[], &[], &Vec3::new(100.0, 0.0, 0.0), &target(), 32);
        assert_eq!(vis, Visibility { visible_fraction: 1.0, obstructing_triangles: 0 });
    }

    #[test]
    fn initial_gallbladder_envelops_every_target() {
        let s = Scene::procedural();
        for t in &s.targets {
            let vis = occlusion_query(&s.gallbladder.vertices, &s.gallbladder.triangles, &s.camera.position, t, 64);
            assert_eq!(vis.visible_fraction, 0.0, "{t:?} {vis:?}");
            assert!(vis.obstructing_triangles > 0);
        }
    }

    #[test]
    fn half_wall_blocks_half_the_rays() {
        let (v, t) = half_wall();
        let eye = Vec3::new(100.0, 0.0, 0.0);
        // ground truth with 100x the rays
        let n = 32;
        let truth = occlusion_query(&v, &t, &eye, &target(), n * 100).visible_fraction;
        assert!((truth - 0.5).abs() < 0.01);
        let vis = occlusion_query(&v, &t, &eye, &target(), n);
        assert!((vis.visible_fraction - 0.5).abs() <= 1.0 / n as f64);
        assert!((vis.visible_fraction - truth).abs() <= 1.0 / n as f64);
    }

    proptest! {
        #[test]
        fn removing_triangles_never_reduces_visibility(mask in proptest::collection::vec(any::<bool>(), 384), lift in 0.0..30.0f64) {
            let s = Scene::procedural();
            let verts: Vec<Vec3> = s.gallbladder.vertices.iter().map(|p| {
                // shear the neck half upwards so partial occlusions occur
                let k = ((-p.x).max(0.0) / 27.5) * lift;
                Vec3::new(p.x, p.y + k, p.z)
            }).collect();
            let all = &s.gallbladder.triangles;
            let subset: Vec<[u32; 3]> = all.iter().zip(&mask).filter(|(_, &m)| m).map(|(t, _)| *t).collect();
            for t in &s.targets {
                let full = occlusion_query(&verts, all, &s.camera.position, t, 32).visible_fraction;
                let part = occlusion_query(&verts, &subset, &s.camera.position, t, 32).visible_fraction;
                prop_assert!(part >= full);
            }
        }
    }
}
