//! Position-based dynamics for the gallbladder surface mesh.
//!
//! The body is a closed triangle mesh held together by edge-distance
//! constraints and one global volume constraint. A subset of vertices is
//! fixed to the liver; grasp bindings pin further vertices to the gripper tip.
//! Constraint projection is Gauss-Seidel in a fixed order, so a step is a
//! deterministic function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::Vec3;
use crate::kinematics::TipTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeConstraint {
    pub i: u32,
    pub j: u32,
    pub rest_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformableBody {
    pub vertices: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub edges: Vec<EdgeConstraint>,
    pub rest_volume: f64,
    pub fixed_vertices: Vec<u32>,
    pub masses: Vec<f64>,
}

impl DeformableBody {
    /// Builds a body at rest from a closed, outward-oriented triangle mesh.
    pub fn from_mesh(
        vertices: Vec<Vec3>,
        triangles: Vec<[u32; 3]>,
        fixed_vertices: Vec<u32>,
        total_mass_kg: f64,
    ) -> Result<Self, SimError> {
        let n = vertices.len();
        if triangles.iter().flatten().any(|&i| i as usize >= n) {
            return Err(SimError::Scene("triangle index out of range".into()));
        }
        if fixed_vertices.iter().any(|&i| i as usize >= n) {
            return Err(SimError::Scene("fixed vertex index out of range".into()));
        }
        let mut pairs: Vec<(u32, u32)> =
            triangles.iter().flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]).map(|(a, b)| (a.min(b), a.max(b))).collect();
        pairs.sort_unstable();
        pairs.dedup();
        let edges = pairs
            .into_iter()
            .map(|(i, j)| EdgeConstraint { i, j, rest_length: (vertices[i as usize] - vertices[j as usize]).norm() })
            .collect::<Vec<_>>();
        if edges.iter().any(|e| !(e.rest_length > 0.0)) {
            return Err(SimError::Scene("degenerate edge with zero rest length".into()));
        }
        let rest_volume = enclosed_volume(&vertices, &triangles);
        let mut fixed_vertices = fixed_vertices;
        fixed_vertices.sort_unstable();
        fixed_vertices.dedup();
        Ok(Self {
            velocities: vec![Vec3::zeros(); n],
            masses: vec![total_mass_kg / n as f64; n],
            vertices,
            triangles,
            edges,
            rest_volume,
            fixed_vertices,
        })
    }

    pub fn volume(&self) -> f64 {
        enclosed_volume(&self.vertices, &self.triangles)
    }

    pub fn is_fixed(&self, v: usize) -> bool {
        self.fixed_vertices.binary_search(&(v as u32)).is_ok()
    }
}

/// Signed enclosed volume: sum of tetrahedra spanned by the origin and each face.
pub fn enclosed_volume(vertices: &[Vec3], triangles: &[[u32; 3]]) -> f64 {
    triangles
        .iter()
        .map(|t| {
            let a = vertices[t[0] as usize];
            let b = vertices[t[1] as usize];
            let c = vertices[t[2] as usize];
            a.cross(&b).dot(&c) / 6.0
        })
        .sum()
}

/// Point attachment of a gallbladder vertex to the gripper tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspBinding {
    pub vertex_id: u32,
    pub local_offset_mm: Vec3,
    pub elongation_mm: f64,
    pub broken: bool,
}

impl GraspBinding {
    /// Attaches `vertex_id` at its current world position relative to `tip`.
    pub fn attach(body: &DeformableBody, vertex_id: u32, tip: &TipTransform) -> Self {
        let local = tip.inverse_apply(&body.vertices[vertex_id as usize]);
        Self { vertex_id, local_offset_mm: local, elongation_mm: 0.0, broken: false }
    }

    pub fn target(&self, tip: &TipTransform) -> Vec3 {
        tip.apply(&self.local_offset_mm)
    }
}

/// Rigid support surface `y = base - depth * exp(-(dx/rx)^2 - (dz/rz)^2)`;
/// body vertices are kept at least `offset_mm` above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub base_y: f64,
    pub fossa_depth: f64,
    pub fossa_center: [f64; 2],
    pub fossa_radii: [f64; 2],
}

impl Heightfield {
    pub fn height(&self, x: f64, z: f64) -> f64 {
        let dx = (x - self.fossa_center[0]) / self.fossa_radii[0];
        let dz = (z - self.fossa_center[1]) / self.fossa_radii[1];
        self.base_y - self.fossa_depth * (-(dx * dx) - dz * dz).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// mm/s²
    pub gravity: Vec3,
    /// Velocity multiplier applied once per substep.
    pub damping: f64,
    pub iterations_per_substep: u32,
    pub support: Option<Heightfield>,
    pub support_offset_mm: f64,
    /// Projection iterations used when measuring grasp elongation.
    pub relax_iterations: u32,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            gravity: Vec3::new(0.0, -9810.0, 0.0),
            damping: 0.98,
            iterations_per_substep: 4,
            support: None,
            support_offset_mm: 0.0,
            relax_iterations: 4,
        }
    }
}

/// Index of the first non-finite vertex, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diverged {
    pub vertex: usize,
}

fn project_edges(p: &mut [Vec3], w: &[f64], edges: &[EdgeConstraint]) {
    for e in edges {
        let (i, j) = (e.i as usize, e.j as usize);
        let wsum = w[i] + w[j];
        if wsum == 0.0 {
            continue;
        }
        let d = p[i] - p[j];
        let len = d.norm();
        if len < 1e-12 {
            continue;
        }
        let corr = d * ((len - e.rest_length) / (len * wsum));
        p[i] -= corr * w[i];
        p[j] += corr * w[j];
    }
}

fn project_volume(p: &mut [Vec3], w: &[f64], triangles: &[[u32; 3]], rest: f64, grad: &mut [Vec3]) {
    grad.iter_mut().for_each(|g| *g = Vec3::zeros());
    let mut vol = 0.0;
    for t in triangles {
        let (a, b, c) = (t[0] as usize, t[1] as usize, t[2] as usize);
        let ab = p[a].cross(&p[b]);
        vol += ab.dot(&p[c]) / 6.0;
        grad[a] += p[b].cross(&p[c]) / 6.0;
        grad[b] += p[c].cross(&p[a]) / 6.0;
        grad[c] += ab / 6.0;
    }
    let c = vol - rest;
    let denom: f64 = grad.iter().zip(w).map(|(g, wi)| wi * g.norm_squared()).sum();
    if denom < 1e-12 {
        return;
    }
    let lambda = c / denom;
    for (pi, (g, wi)) in p.iter_mut().zip(grad.iter().zip(w)) {
        *pi -= g * (lambda * wi);
    }
}

fn project_support(p: &mut [Vec3], w: &[f64], support: &Heightfield, offset: f64) {
    // the surface never rises above base_y when the fossa depth is non-negative
    let ceiling = support.base_y + offset.max(0.0) + support.fossa_depth.min(0.0).abs();
    for (pi, &wi) in p.iter_mut().zip(w) {
        if wi == 0.0 || pi.y >= ceiling {
            continue;
        }
        let floor = support.height(pi.x, pi.z) + offset;
        if pi.y < floor {
            pi.y = floor;
        }
    }
}

fn inverse_masses(body: &DeformableBody) -> Vec<f64> {
    let mut w: Vec<f64> = body.masses.iter().map(|m| if *m > 0.0 { 1.0 / m } else { 0.0 }).collect();
    for &f in &body.fixed_vertices {
        w[f as usize] = 0.0;
    }
    w
}

/// Advances the body by `dt` seconds split into `substeps` PBD substeps.
/// Unbroken bindings pin their vertex to `gripper_tip · local_offset`.
pub fn step_physics(
    body: &mut DeformableBody,
    grasp: &[GraspBinding],
    gripper_tip: &TipTransform,
    dt: f64,
    substeps: u32,
    params: &PhysicsParams,
) -> Result<(), Diverged> {
    assert!(dt > 0.0 && substeps >= 1, "dt must be positive and substeps >= 1");
    let h = dt / f64::from(substeps);
    let mut w = inverse_masses(body);
    let pins: Vec<(usize, Vec3)> = grasp.iter().filter(|b| !b.broken).map(|b| (b.vertex_id as usize, b.target(gripper_tip))).collect();
    let n = body.vertices.len();
    let mut pinned = vec![false; n];
    for &(v, _) in &pins {
        w[v] = 0.0;
        pinned[v] = true;
    }
    let mut p = vec![Vec3::zeros(); n];
    let mut grad = vec![Vec3::zeros(); n];
    for _ in 0..substeps {
        for i in 0..n {
            if w[i] > 0.0 {
                let v = (body.velocities[i] + params.gravity * h) * params.damping;
                body.velocities[i] = v;
                p[i] = body.vertices[i] + v * h;
            } else {
                p[i] = body.vertices[i];
            }
        }
        for &(v, target) in &pins {
            p[v] = target;
        }
        for _ in 0..params.iterations_per_substep {
            project_edges(&mut p, &w, &body.edges);
            project_volume(&mut p, &w, &body.triangles, body.rest_volume, &mut grad);
            if let Some(s) = &params.support {
                project_support(&mut p, &w, s, params.support_offset_mm);
            }
        }
        for i in 0..n {
            if w[i] > 0.0 || pinned[i] {
                body.velocities[i] = (p[i] - body.vertices[i]) / h;
                body.vertices[i] = p[i];
            }
        }
    }
    match body.vertices.iter().position(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite())) {
        Some(vertex) => Err(Diverged { vertex }),
        None => Ok(()),
    }
}

/// Measures each unbroken binding's elongation as the distance between its
/// pin target and where the tissue pulls the vertex when the pins are
/// released (a short relaxation of the constraints from the current shape).
/// Bindings whose elongation exceeds `break_threshold_mm` break for good.
/// Returns the number of bindings that broke during this call.
pub fn update_grasp(
    grasp: &mut [GraspBinding],
    body: &DeformableBody,
    gripper_tip: &TipTransform,
    break_threshold_mm: f64,
    params: &PhysicsParams,
) -> usize {
    assert!(break_threshold_mm > 0.0, "break threshold must be positive");
    if grasp.iter().all(|b| b.broken) {
        return 0;
    }
    let w = inverse_masses(body);
    let mut p = body.vertices.clone();
    let mut grad = vec![Vec3::zeros(); p.len()];
    for _ in 0..params.relax_iterations {
        project_edges(&mut p, &w, &body.edges);
        project_volume(&mut p, &w, &body.triangles, body.rest_volume, &mut grad);
        if let Some(s) = &params.support {
            project_support(&mut p, &w, s, params.support_offset_mm);
        }
    }
    let mut newly_broken = 0;
    for b in grasp.iter_mut().filter(|b| !b.broken) {
        b.elongation_mm = (p[b.vertex_id as usize] - b.target(gripper_tip)).norm();
        if b.elongation_mm > break_threshold_mm {
            b.broken = true;
            newly_broken += 1;
        }
    }
    newly_broken
}
