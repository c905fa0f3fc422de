//! Procedural cholecystectomy scene and its versioned text file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::geometry::Vec3;
use crate::kinematics::{DofLimits, InstrumentPose, TrocarFrame};
use crate::softbody::{DeformableBody, Heightfield};

pub const SCENE_FORMAT: &str = "cholec-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn triangle(&self, t: usize) -> (Vec3, Vec3, Vec3) {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSphere {
    pub center_mm: Vec3,
    pub radius_mm: f64,
}

/// Fixed pinhole endoscope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y_deg: f64,
}

impl Camera {
    /// Orthonormal (right, up, forward) basis of the view.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        (right, up, forward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gallbladder: DeformableBody,
    pub liver: TriMesh,
    pub liver_surface: Heightfield,
    /// Gallbladder vertices attached to the liver (the fixed set).
    pub attachment_patch: Vec<u32>,
    /// Neck vertices held by the gripper at episode start.
    pub grasp_vertices: Vec<u32>,
    pub targets: Vec<TargetSphere>,
    pub camera: Camera,
    pub gripper_trocar: TrocarFrame,
    pub cauter_trocar: TrocarFrame,
    pub gripper_start: InstrumentPose,
    pub cauter_start: InstrumentPose,
    pub limits: DofLimits,
    pub instrument_radius_mm: f64,
    pub tissue_offset_mm: f64,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    format: String,
    version: u32,
    scene: Scene,
}

/// Ellipsoid semi-axes of the gallbladder (mm), long axis along x.
const GB_AXES: [f64; 3] = [27.5, 12.5, 12.5];
const GB_RINGS: usize = 12;
const GB_SEGMENTS: usize = 16;

fn ellipsoid_mesh(center: Vec3, axes: [f64; 3], rings: usize, segments: usize) -> TriMesh {
    let mut vertices = Vec::with_capacity(rings * segments + 2);
    // neck pole first, at -x
    vertices.push(center + Vec3::new(-axes[0], 0.0, 0.0));
    for i in 1..=rings {
        let theta = std::f64::consts::PI * i as f64 / (rings + 1) as f64;
        for j in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            vertices
                .push(center + Vec3::new(-axes[0] * theta.cos(), -axes[1] * theta.sin() * phi.cos(), axes[2] * theta.sin() * phi.sin()));
        }
    }
    vertices.push(center + Vec3::new(axes[0], 0.0, 0.0));
    let last = (vertices.len() - 1) as u32;
    let ring = |i: usize, j: usize| (1 + (i - 1) * segments + (j % segments)) as u32;
    let mut triangles = Vec::new();
    for j in 0..segments {
        triangles.push([0, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..rings {
        for j in 0..segments {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    for j in 0..segments {
        triangles.push([last, ring(rings, j), ring(rings, j + 1)]);
    }
    let mut mesh = TriMesh { vertices, triangles };
    if crate::softbody::enclosed_volume(&mesh.vertices, &mesh.triangles) < 0.0 {
        for t in &mut mesh.triangles {
            t.swap(1, 2);
        }
    }
    mesh
}

fn heightfield_mesh(surface: &Heightfield, x_range: [f64; 2], z_range: [f64; 2], step: f64) -> TriMesh {
    let nx = ((x_range[1] - x_range[0]) / step).round() as usize + 1;
    let nz = ((z_range[1] - z_range[0]) / step).round() as usize + 1;
    let mut vertices = Vec::with_capacity(nx * nz);
    for iz in 0..nz {
        for ix in 0..nx {
            let x = x_range[0] + ix as f64 * step;
            let z = z_range[0] + iz as f64 * step;
            vertices.push(Vec3::new(x, surface.height(x, z), z));
        }
    }
    let idx = |ix: usize, iz: usize| (iz * nx + ix) as u32;
    let mut triangles = Vec::new();
    for iz in 0..nz - 1 {
        for ix in 0..nx - 1 {
            // counter-clockwise seen from +y
            triangles.push([idx(ix, iz), idx(ix, iz + 1), idx(ix + 1, iz)]);
            triangles.push([idx(ix + 1, iz), idx(ix, iz + 1), idx(ix + 1, iz + 1)]);
        }
    }
    TriMesh { vertices, triangles }
}

impl Scene {
    /// The default procedurally generated scene: a ~55×25×25 mm gallbladder
    /// lying in the fossa of a rigid liver slab, attached along its fundus
    /// underside, with three targets along the attachment border.
    pub fn procedural() -> Self {
        let liver_surface = Heightfield { base_y: 0.0, fossa_depth: 6.0, fossa_center: [0.0, 0.0], fossa_radii: [35.0, 18.0] };
        let tissue_offset_mm = 0.5;
        let center = Vec3::new(0.0, liver_surface.height(0.0, 0.0) + GB_AXES[1] + tissue_offset_mm, 0.0);
        let mesh = ellipsoid_mesh(center, GB_AXES, GB_RINGS, GB_SEGMENTS);
        let attachment_patch: Vec<u32> = mesh
            .vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| v.x > 8.0 && v.y < center.y - 0.3 * GB_AXES[1])
            .map(|(i, _)| i as u32)
            .collect();
        let grasp_vertices: Vec<u32> = std::iter::once(0).chain((0..3).map(|k| (1 + k * GB_SEGMENTS / 3) as u32)).collect();
        let gallbladder = DeformableBody::from_mesh(mesh.vertices, mesh.triangles, attachment_patch.clone(), 0.05)
            .expect("procedural gallbladder mesh is valid");

        let liver = heightfield_mesh(&liver_surface, [-90.0, 90.0], [-60.0, 60.0], 10.0);
        let targets = [-4.0, 0.0, 4.0]
            .iter()
            .map(|&z| {
                let (x, r) = (-6.0, 2.5);
                // resting on the liver surface
                TargetSphere { center_mm: Vec3::new(x, liver_surface.height(x, z) + r, z), radius_mm: r }
            })
            .collect();

        let neck = gallbladder.vertices[0];
        let gripper_pivot = Vec3::new(-105.0, 75.0, -45.0);
        let gripper_tip = neck - Vec3::new(1.0, 0.0, 0.0);
        let gripper_trocar = TrocarFrame::looking_at(gripper_pivot, gripper_tip, Vec3::y());
        let cauter_pivot = Vec3::new(-95.0, 85.0, 55.0);
        let cauter_standoff = Vec3::new(-40.0, 25.0, 25.0);
        let cauter_trocar = TrocarFrame::looking_at(cauter_pivot, cauter_standoff, Vec3::y());

        Scene {
            gallbladder,
            liver,
            liver_surface,
            attachment_patch,
            grasp_vertices,
            targets,
            camera: Camera {
                position: Vec3::new(-140.0, 105.0, 25.0),
                look_at: Vec3::new(-10.0, 0.0, 0.0),
                up: Vec3::y(),
                fov_y_deg: 45.0,
            },
            gripper_trocar,
            cauter_trocar,
            gripper_start: InstrumentPose::new(0.0, 0.0, 0.0, (gripper_tip - gripper_pivot).norm()),
            cauter_start: InstrumentPose::new(0.0, 0.0, 0.0, (cauter_standoff - cauter_pivot).norm()),
            limits: DofLimits::default(),
            instrument_radius_mm: 2.5,
            tissue_offset_mm,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.gallbladder.vertices.len();
        if self.gallbladder.triangles.iter().flatten().any(|&i| i as usize >= n) {
            return Err(SimError::Scene("gallbladder triangle index out of range".into()));
        }
        let nl = self.liver.vertices.len();
        if self.liver.triangles.iter().flatten().any(|&i| i as usize >= nl) {
            return Err(SimError::Scene("liver triangle index out of range".into()));
        }
        if self.grasp_vertices.is_empty() || self.grasp_vertices.iter().any(|&i| i as usize >= n) {
            return Err(SimError::Scene("grasp vertices missing or out of range".into()));
        }
        if self.targets.is_empty() || self.targets.iter().any(|t| !(t.radius_mm > 0.0)) {
            return Err(SimError::Scene("targets missing or with non-positive radius".into()));
        }
        if !self.gripper_trocar.is_orthonormal(1e-9) || !self.cauter_trocar.is_orthonormal(1e-9) {
            return Err(SimError::Scene("trocar rest orientation is not orthonormal".into()));
        }
        if !(self.instrument_radius_mm > 0.0) {
            return Err(SimError::Scene("instrument radius must be positive".into()));
        }
        self.limits.validate()
    }

    pub fn to_json(&self) -> Result<String, SimError> {
        let file = SceneFile { format: SCENE_FORMAT.into(), version: SCENE_VERSION, scene: self.clone() };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let file: SceneFile = serde_json::from_str(text)?;
        if file.format != SCENE_FORMAT {
            return Err(SimError::Scene(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != SCENE_VERSION {
            return Err(SimError::Scene(format!("unsupported scene version {} (expected {SCENE_VERSION})", file.version)));
        }
        file.scene.validate()?;
        Ok(file.scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_json()?).map_err(|e| SimError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }
}
