//! Depth-buffered software rasterizer with one directional Lambertian light.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Result, SelectionError};
use crate::geometry::{MeshQuery, TriangleMesh};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSpec {
    pub width: u32,
    pub height: u32,
    pub camera: Camera,
    /// Vertical field of view.
    pub fov_deg: f64,
    /// Direction the light travels, in world coordinates.
    pub light_dir: Vec3,
    pub background: [u8; 3],
    pub hand_color: [u8; 3],
    pub object_color: [u8; 3],
    pub ambient: f64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            camera: Camera { eye: Vec3::new(0.5, 0.0, 0.2), target: Vec3::zeros(), up: Vec3::z() },
            fov_deg: 40.0,
            light_dir: Vec3::new(-0.3, -0.4, -1.0),
            background: [255, 255, 255],
            hand_color: [200, 160, 120],
            object_color: [90, 130, 200],
            ambient: 0.25,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SelectionError::Render("image dimensions must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(SelectionError::Render("field of view must lie in (0, 180) degrees".into()));
        }
        let forward = self.camera.target - self.camera.eye;
        if forward.norm() == 0.0 || forward.cross(&self.camera.up).norm() == 0.0 || self.light_dir.norm() == 0.0 {
            return Err(SelectionError::Render("degenerate camera or light direction".into()));
        }
        Ok(())
    }

    /// Camera looking at the bounding sphere of `meshes` from `azimuth_deg`
    /// around +z at `elevation_deg`, far enough that the sphere fits the view.
    pub fn fitted(&self, meshes: &[&TriangleMesh], azimuth_deg: f64, elevation_deg: f64) -> RenderSpec {
        let verts: Vec<&Vec3> = meshes.iter().flat_map(|m| m.vertices.iter()).collect();
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for v in &verts {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let center = if verts.is_empty() { Vec3::zeros() } else { (lo + hi) / 2.0 };
        let radius = verts.iter().map(|v| (*v - center).norm()).fold(1e-3, f64::max);
        let half = (self.fov_deg.to_radians() / 2.0).min((self.fov_deg.to_radians() / 2.0) * f64::from(self.width) / f64::from(self.height));
        let dist = 1.1 * radius / half.sin();
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
        RenderSpec { camera: Camera { eye: center + dist * dir, target: center, up: Vec3::z() }, ..self.clone() }
    }
}

/// 8-bit RGB raster, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn fraction_not(&self, color: [u8; 3]) -> f64 {
        let n = self.data.chunks_exact(3).filter(|p| *p != color).count();
        n as f64 / (self.width as f64 * self.height as f64)
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| SelectionError::Render(e.to_string()))?;
        writer.write_image_data(&self.data).map_err(|e| SelectionError::Render(e.to_string()))?;
        writer.finish().map_err(|e| SelectionError::Render(e.to_string()))
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_png(&mut buf)?;
        Ok(buf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Render {
    pub image: RgbImage,
    /// The eye lies inside one of the meshes.
    pub camera_inside: bool,
}

const NEAR: f64 = 1e-4;

/// Renders the hand and object meshes. Triangles crossing the near plane are
/// dropped; a camera inside geometry still renders and is flagged.
pub fn render_grasp(hand_mesh: &TriangleMesh, object_mesh: &TriangleMesh, spec: &RenderSpec) -> Result<Render> {
    spec.validate()?;
    let (w, h) = (spec.width as usize, spec.height as usize);
    let cam = &spec.camera;
    let f = (cam.target - cam.eye).normalize();
    let r = f.cross(&cam.up).normalize();
    let u = r.cross(&f);
    let focal = (h as f64 / 2.0) / (spec.fov_deg.to_radians() / 2.0).tan();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let light = -spec.light_dir.normalize();

    let mut color = vec![spec.background; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let mut camera_inside = false;
    for (mesh, base) in [(hand_mesh, spec.hand_color), (object_mesh, spec.object_color)] {
        if mesh.triangles.is_empty() {
            continue;
        }
        let q = MeshQuery::new(mesh);
        if q.near_bounds(&cam.eye, 0.0) && q.winding_number(&cam.eye) > 0.5 {
            camera_inside = true;
        }
        for t in 0..mesh.triangles.len() {
            let tri = mesh.triangle_vertices(t);
            let n = mesh.triangle_normal(t);
            let shade = (spec.ambient + (1.0 - spec.ambient) * n.dot(&light).abs()).min(1.0);
            let rgb = base.map(|c| (f64::from(c) * shade).round() as u8);
            // Camera space: x right, y up, z forward.
            let cs: Vec<Vec3> = tri.iter().map(|p| {
                let d = p - cam.eye;
                Vec3::new(d.dot(&r), d.dot(&u), d.dot(&f))
            }).collect();
            if cs.iter().any(|p| p.z <= NEAR) {
                continue;
            }
            let sp: Vec<(f64, f64)> = cs.iter().map(|p| (cx + focal * p.x / p.z, cy - focal * p.y / p.z)).collect();
            let area = edge(sp[0], sp[1], sp[2]);
            if area.abs() < 1e-12 {
                continue;
            }
            let xmin = sp.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let xmax = sp.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(w as f64 - 1.0);
            let ymin = sp.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let ymax = sp.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64 - 1.0);
            if xmax < 0.0 || ymax < 0.0 {
                continue;
            }
            for y in ymin..=ymax as usize {
                for x in xmin..=xmax as usize {
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    let (w0, w1, w2) = (edge(sp[1], sp[2], p) / area, edge(sp[2], sp[0], p) / area, edge(sp[0], sp[1], p) / area);
                    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                        continue;
                    }
                    // Perspective-correct depth: 1/z is affine in screen space.
                    let z = 1.0 / (w0 / cs[0].z + w1 / cs[1].z + w2 / cs[2].z);
                    let i = y * w + x;
                    if z < depth[i] {
                        depth[i] = z;
                        color[i] = rgb;
                    }
                }
            }
        }
    }
    let data = color.into_iter().flatten().collect();
    Ok(Render { image: RgbImage { width: spec.width, height: spec.height, data }, camera_inside })
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> TriangleMesh {
        TriangleMesh::default()
    }

    #[test]
    fn empty_scene_is_background() {
        let spec = RenderSpec { width: 64, height: 48, ..RenderSpec::default() };
        let img = render_grasp(&empty(), &empty(), &spec).unwrap().image;
        assert_eq!(img.data.len(), 64 * 48 * 3);
        assert_eq!(img.fraction_not(spec.background), 0.0);
    }

    #[test]
    fn centered_cube_covers_part_of_view() {
        let cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let spec = RenderSpec::default().fitted(&[&cube], 30.0, 25.0);
        let r = render_grasp(&empty(), &cube, &spec).unwrap();
        let frac = r.image.fraction_not(spec.background);
        assert!(frac > 0.05 && frac < 0.95, "{frac}");
        assert!(!r.camera_inside);
        assert_eq!(r.image.pixel(256, 256) != spec.background, true);
    }

    #[test]
    fn deterministic_bytes_and_png() {
        let cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(0.05, 0.03, 0.08));
        let hand = TriangleMesh::cuboid(Vec3::new(0.0, 0.04, 0.0), Vec3::new(0.08, 0.02, 0.09));
        let spec = RenderSpec { width: 128, height: 96, ..RenderSpec::default() }.fitted(&[&cube, &hand], 0.0, 20.0);
        let a = render_grasp(&hand, &cube, &spec).unwrap();
        let b = render_grasp(&hand, &cube, &spec).unwrap();
        assert_eq!(a, b);
        let png = a.image.to_png().unwrap();
        assert_eq!(&png[1..4], b"PNG");
        assert_eq!(png, b.image.to_png().unwrap());
    }

    #[test]
    fn nearer_surface_wins_and_inside_is_flagged() {
        let far = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let near = TriangleMesh::cuboid(Vec3::new(2.0, 0.0, 0.0), Vec3::repeat(0.5));
        let spec = RenderSpec {
            width: 32,
            height: 32,
            camera: Camera { eye: Vec3::new(5.0, 0.0, 0.0), target: Vec3::zeros(), up: Vec3::z() },
            ambient: 1.0,
            ..RenderSpec::default()
        };
        let img = render_grasp(&near, &far, &spec).unwrap().image;
        assert_eq!(img.pixel(16, 16), spec.hand_color);
        let inside = RenderSpec { camera: Camera { eye: Vec3::new(0.1, 0.0, 0.0), target: Vec3::new(-1.0, 0.0, 0.0), up: Vec3::z() }, ..spec };
        assert!(render_grasp(&near, &far, &inside).unwrap().camera_inside);
        assert!(render_grasp(&near, &far, &RenderSpec { width: 0, ..RenderSpec::default() }).is_err());
    }
}
