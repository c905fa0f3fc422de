//! Software rasterizer for the endoscope view.
//!
//! Flat-shaded triangles with a depth buffer. Colors follow the usual scene
//! scheme: liver red, gallbladder yellow, gripper blue, cauter green, target
//! white. Instruments cast a vertical drop shadow onto the liver.

use crate::geometry::Vec3;
use crate::scene::{Camera, TargetSphere, TriMesh};
use crate::softbody::Heightfield;

pub const LIVER_RGB: [u8; 3] = [170, 40, 35];
pub const GALLBLADDER_RGB: [u8; 3] = [225, 200, 60];
pub const GRIPPER_RGB: [u8; 3] = [40, 70, 210];
pub const CAUTER_RGB: [u8; 3] = [40, 180, 60];
pub const TARGET_RGB: [u8; 3] = [255, 255, 255];
const BACKGROUND_RGB: [u8; 3] = [20, 10, 10];
const SHADOW_FACTOR: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB bytes.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn count_color(&self, rgb: [u8; 3]) -> usize {
        self.data.chunks_exact(3).filter(|p| p == &rgb).count()
    }
}

/// Objects drawn in one frame.
pub struct FrameContents<'a> {
    pub liver: &'a TriMesh,
    pub liver_surface: &'a Heightfield,
    pub gallbladder_vertices: &'a [Vec3],
    pub gallbladder_triangles: &'a [[u32; 3]],
    /// (pivot, tip) of each shaft.
    pub gripper: (Vec3, Vec3),
    pub cauter: (Vec3, Vec3),
    pub instrument_radius: f64,
    pub target: TargetSphere,
}

struct Raster<'c> {
    camera: &'c Camera,
    basis: (Vec3, Vec3, Vec3),
    focal: f64,
    width: usize,
    height: usize,
    color: Vec<[u8; 3]>,
    depth: Vec<f64>,
    light: Vec3,
}

impl<'c> Raster<'c> {
    fn new(camera: &'c Camera, width: u32, height: u32) -> Self {
        let (w, h) = (width as usize, height as usize);
        Self {
            camera,
            basis: camera.basis(),
            focal: 0.5 * h as f64 / (0.5 * camera.fov_y_deg.to_radians()).tan(),
            width: w,
            height: h,
            color: vec![BACKGROUND_RGB; w * h],
            depth: vec![f64::INFINITY; w * h],
            light: Vec3::new(-0.3, 1.0, 0.2).normalize(),
        }
    }

    /// Screen coordinates (pixels) and view depth; `None` behind the camera.
    fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let (right, up, forward) = self.basis;
        let d = p - self.camera.position;
        let z = d.dot(&forward);
        if z <= 1.0 {
            return None;
        }
        let x = 0.5 * self.width as f64 + self.focal * d.dot(&right) / z;
        let y = 0.5 * self.height as f64 - self.focal * d.dot(&up) / z;
        Some((x, y, z))
    }

    fn shade(&self, rgb: [u8; 3], normal: &Vec3) -> [u8; 3] {
        let k = 0.35 + 0.65 * normal.dot(&self.light).abs();
        rgb.map(|c| (f64::from(c) * k).round().clamp(0.0, 255.0) as u8)
    }

    /// Rasterizes one triangle. `paint` maps the existing pixel color to the
    /// new one; `bias` shifts the depth test towards the camera.
    fn triangle(&mut self, a: &Vec3, b: &Vec3, c: &Vec3, bias: f64, paint: &dyn Fn([u8; 3]) -> [u8; 3], write_depth: bool) {
        let (Some(pa), Some(pb), Some(pc)) = (self.project(a), self.project(b), self.project(c)) else {
            return;
        };
        let area = (pb.0 - pa.0) * (pc.1 - pa.1) - (pb.1 - pa.1) * (pc.0 - pa.0);
        if area.abs() < 1e-12 {
            return;
        }
        let min_x = pa.0.min(pb.0).min(pc.0).floor().max(0.0) as usize;
        let max_x = (pa.0.max(pb.0).max(pc.0).ceil() as isize).min(self.width as isize - 1);
        let min_y = pa.1.min(pb.1).min(pc.1).floor().max(0.0) as usize;
        let max_y = (pa.1.max(pb.1).max(pc.1).ceil() as isize).min(self.height as isize - 1);
        if max_x < 0 || max_y < 0 {
            return;
        }
        for py in min_y..=max_y as usize {
            for px in min_x..=max_x as usize {
                let (sx, sy) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = ((pb.0 - sx) * (pc.1 - sy) - (pb.1 - sy) * (pc.0 - sx)) / area;
                let w1 = ((pc.0 - sx) * (pa.1 - sy) - (pc.1 - sy) * (pa.0 - sx)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // perspective-correct depth
                let inv_z = w0 / pa.2 + w1 / pb.2 + w2 / pc.2;
                let z = 1.0 / inv_z - bias;
                let i = py * self.width + px;
                if z < self.depth[i] {
                    self.color[i] = paint(self.color[i]);
                    if write_depth {
                        self.depth[i] = z + bias;
                    }
                }
            }
        }
    }

    fn mesh(&mut self, vertices: &[Vec3], triangles: &[[u32; 3]], rgb: [u8; 3]) {
        for t in triangles {
            let (a, b, c) = (vertices[t[0] as usize], vertices[t[1] as usize], vertices[t[2] as usize]);
            let n = (b - a).cross(&(c - a));
            if n.norm() < 1e-12 {
                continue;
            }
            let shaded = self.shade(rgb, &n.normalize());
            self.triangle(&a, &b, &c, 0.0, &|_| shaded, true);
        }
    }
}

/// Triangulated cylinder around segment `a-b`.
fn cylinder(a: &Vec3, b: &Vec3, radius: f64, sides: usize) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let axis = (b - a).normalize();
    let helper = if axis.y.abs() < 0.9 { Vec3::y() } else { Vec3::x() };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    let mut verts = Vec::with_capacity(2 * sides);
    for k in 0..sides {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
        let off = (u * phi.cos() + v * phi.sin()) * radius;
        verts.push(a + off);
        verts.push(b + off);
    }
    let mut tris = Vec::with_capacity(2 * sides);
    for k in 0..sides {
        let (i0, i1) = (2 * k as u32, 2 * k as u32 + 1);
        let (j0, j1) = (2 * ((k + 1) % sides) as u32, 2 * ((k + 1) % sides) as u32 + 1);
        tris.push([i0, j0, j1]);
        tris.push([i0, j1, i1]);
    }
    (verts, tris)
}

/// Low-poly UV sphere.
fn sphere(center: &Vec3, radius: f64) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let (rings, segs) = (6usize, 10usize);
    let mut verts = vec![center + Vec3::new(0.0, radius, 0.0)];
    for i in 1..rings {
        let th = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segs {
            let ph = 2.0 * std::f64::consts::PI * j as f64 / segs as f64;
            verts.push(center + Vec3::new(th.sin() * ph.cos(), th.cos(), th.sin() * ph.sin()) * radius);
        }
    }
    verts.push(center - Vec3::new(0.0, radius, 0.0));
    let last = (verts.len() - 1) as u32;
    let ring = |i: usize, j: usize| (1 + (i - 1) * segs + j % segs) as u32;
    let mut tris = Vec::new();
    for j in 0..segs {
        tris.push([0, ring(1, j), ring(1, j + 1)]);
        tris.push([last, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segs {
            tris.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            tris.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    (verts, tris)
}

/// Renders the scene from `camera` into a `width × height` RGB image.
pub fn render(camera: &Camera, frame: &FrameContents<'_>, width: u32, height: u32) -> RgbImage {
    let mut r = Raster::new(camera, width, height);
    r.mesh(&frame.liver.vertices, &frame.liver.triangles, LIVER_RGB);

    // drop shadows: shafts projected straight down onto the liver surface
    for (a, b) in [frame.gripper, frame.cauter] {
        let (verts, tris) = cylinder(&a, &b, frame.instrument_radius, 6);
        let flat: Vec<Vec3> = verts.iter().map(|p| Vec3::new(p.x, frame.liver_surface.height(p.x, p.z) + 0.2, p.z)).collect();
        for t in &tris {
            let (pa, pb, pc) = (flat[t[0] as usize], flat[t[1] as usize], flat[t[2] as usize]);
            r.triangle(
                &pa,
                &pb,
                &pc,
                0.5,
                &|c| {
                    if c == BACKGROUND_RGB {
                        c
                    } else {
                        c.map(|v| (f64::from(v) * SHADOW_FACTOR) as u8)
                    }
                },
                false,
            );
        }
    }

    let (tv, tt) = sphere(&frame.target.center_mm, frame.target.radius_mm);
    for t in &tt {
        let (a, b, c) = (tv[t[0] as usize], tv[t[1] as usize], tv[t[2] as usize]);
        r.triangle(&a, &b, &c, 0.0, &|_| TARGET_RGB, true);
    }
    r.mesh(frame.gallbladder_vertices, frame.gallbladder_triangles, GALLBLADDER_RGB);
    for ((a, b), rgb) in [(frame.gripper, GRIPPER_RGB), (frame.cauter, CAUTER_RGB)] {
        let (verts, tris) = cylinder(&a, &b, frame.instrument_radius, 8);
        r.mesh(&verts, &tris, rgb);
    }

    let mut data = Vec::with_capacity(r.width * r.height * 3);
    for c in &r.color {
        data.extend_from_slice(c);
    }
    RgbImage { width, height, data }
}
