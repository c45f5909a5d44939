//! Pinhole depth camera: rendering, projection and differentiable lookups.
//!
//! Depth images store camera-frame z (plane depth), not ray length, so a
//! projected waypoint's `z_c` compares directly against the pixel value.
//! Pixel `(u, v)` samples the ray through integer pixel coordinates; the
//! bilinear sampler therefore interpolates on the index grid and reproduces
//! pixel values exactly at integer coordinates.

use crate::world::World;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Near-plane cutoff below which projection is considered invalid.
pub const Z_NEAR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("pfm: {0}")]
    Pfm(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// 96x72 image with an 87 degree horizontal field of view.
    pub fn default_for(width: usize, height: usize, hfov_deg: f64) -> Self {
        let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self::default_for(96, 72, 87.0)
    }
}

/// Body pose in the world frame (rotation body-to-world plus translation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl BodyPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pose with roll and pitch zero: a yaw rotation about world z.
    pub fn from_position_yaw(position: Vector3<f64>, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: position,
        }
    }

    pub fn is_orthonormal(&self) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).norm() < 1e-9
            && (r.determinant() - 1.0).abs() < 1e-9
    }
}

/// Camera mount: rotation camera-to-body plus lever arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for CameraExtrinsics {
    /// Forward-facing optical convention: body x (forward) maps to camera
    /// +z, body y (left) to camera -x, body z (up) to camera -y.
    fn default() -> Self {
        Self {
            rotation: Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0),
            translation: Vector3::zeros(),
        }
    }
}

/// Metric depth frame; every value lies in `(0, max_range]` and no-hit
/// pixels equal `max_range`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub max_range: f64,
}

impl DepthImage {
    pub fn constant(width: usize, height: usize, value: f64, max_range: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            max_range,
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.values[v * self.width + u] = value;
    }

    /// Nearest-pixel lookup for continuous coordinates, clamped to the
    /// image border. The shield uses this deterministic path.
    pub fn sample_nearest(&self, u: f64, v: f64) -> f64 {
        let ui = (u.round() as i64).clamp(0, self.width as i64 - 1) as usize;
        let vi = (v.round() as i64).clamp(0, self.height as i64 - 1) as usize;
        self.at(ui, vi)
    }

    /// Bilinear interpolation on the index grid, clamped to the border.
    /// Exact at integer coordinates; used by the differentiable safety loss.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        self.sample_bilinear_with_gradient(u, v).0
    }

    /// Bilinear value plus its partial derivatives with respect to (u, v).
    pub fn sample_bilinear_with_gradient(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let uc = u.clamp(0.0, (self.width - 1) as f64);
        let vc = v.clamp(0.0, (self.height - 1) as f64);
        let u0 = (uc.floor() as usize).min(self.width.saturating_sub(2));
        let v0 = (vc.floor() as usize).min(self.height.saturating_sub(2));
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = uc - u0 as f64;
        let fv = vc - v0 as f64;
        let d00 = self.at(u0, v0);
        let d10 = self.at(u1, v0);
        let d01 = self.at(u0, v1);
        let d11 = self.at(u1, v1);
        let value = d00 * (1.0 - fu) * (1.0 - fv)
            + d10 * fu * (1.0 - fv)
            + d01 * (1.0 - fu) * fv
            + d11 * fu * fv;
        let du = (d10 - d00) * (1.0 - fv) + (d11 - d01) * fv;
        let dv = (d01 - d00) * (1.0 - fu) + (d11 - d10) * fu;
        // Clamped coordinates have zero sensitivity outside the grid.
        let du = if (0.0..=(self.width - 1) as f64).contains(&u) { du } else { 0.0 };
        let dv = if (0.0..=(self.height - 1) as f64).contains(&v) { dv } else { 0.0 };
        (value, du, dv)
    }
}

/// World point to camera coordinates.
#[inline]
pub fn world_to_camera(
    point_world: &Vector3<f64>,
    pose: &BodyPose,
    extr: &CameraExtrinsics,
) -> Vector3<f64> {
    extr.rotation.transpose()
        * (pose.rotation.transpose() * (point_world - pose.translation) - extr.translation)
}

/// Project a world point onto the pixel plane. Returns `(u, v, z_c)` or
/// `None` when the point is behind the near plane or outside the image.
pub fn project(
    point_world: &Vector3<f64>,
    pose: &BodyPose,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
) -> Option<(f64, f64, f64)> {
    let p_c = world_to_camera(point_world, pose, extr);
    if p_c.z <= Z_NEAR {
        return None;
    }
    let u = intr.fx * p_c.x / p_c.z + intr.cx;
    let v = intr.fy * p_c.y / p_c.z + intr.cy;
    if u < 0.0 || u >= intr.width as f64 || v < 0.0 || v >= intr.height as f64 {
        return None;
    }
    Some((u, v, p_c.z))
}

/// Inverse of [`project`]: the world point at pixel `(u, v)` and plane
/// depth `depth`.
pub fn back_project(
    u: f64,
    v: f64,
    depth: f64,
    pose: &BodyPose,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
) -> Vector3<f64> {
    let p_c = Vector3::new(
        (u - intr.cx) / intr.fx * depth,
        (v - intr.cy) / intr.fy * depth,
        depth,
    );
    pose.rotation * (extr.rotation * p_c + extr.translation) + pose.translation
}

/// Render a metric depth image of the world from the given pose.
///
/// Each pixel stores the camera-frame z of the first wall hit along the
/// pixel ray, clamped to `max_range`; pixels with no hit store `max_range`.
pub fn render_depth(
    world: &World,
    pose: &BodyPose,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
    max_range: f64,
) -> DepthImage {
    let mut image = DepthImage::constant(intr.width, intr.height, max_range, max_range);
    let origin = pose.translation + pose.rotation * extr.translation;
    let rotation_wc = pose.rotation * extr.rotation;
    // Only walls within reach of the camera can appear in the frame.
    let reachable = world.walls_within(&origin, max_range * 1.7320508075688772 + 1e-9);
    if reachable.is_empty() {
        return image;
    }
    for v in 0..intr.height {
        for u in 0..intr.width {
            let dir_cam = Vector3::new(
                (u as f64 - intr.cx) / intr.fx,
                (v as f64 - intr.cy) / intr.fy,
                1.0,
            );
            let len = dir_cam.norm();
            let dir_world = rotation_wc * (dir_cam / len);
            // z_c = t / len along this ray, so t_max = max_range * len.
            let t_max = max_range * len;
            if let Some(t) = world.ray_hit_subset(&reachable, &origin, &dir_world, t_max) {
                let z_c = (t / len).min(max_range);
                image.set(u, v, z_c);
            }
        }
    }
    image
}

/// Write a depth image as a binary PFM ("Pf", single channel). The scale
/// header is -1.0, marking little-endian 32-bit floats; rows are stored
/// bottom-to-top per PFM convention.
pub fn write_pfm(image: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + image.values.len() * 4);
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", image.width, image.height).as_bytes());
    for v in (0..image.height).rev() {
        for u in 0..image.width {
            out.extend_from_slice(&(image.at(u, v) as f32).to_le_bytes());
        }
    }
    out
}

/// Parse a PFM produced by [`write_pfm`].
pub fn read_pfm(bytes: &[u8], max_range: f64) -> Result<DepthImage, CameraError> {
    let header_end = find_header_end(bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| CameraError::Pfm("non-utf8 header".into()))?;
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or("");
    if magic != "Pf" {
        return Err(CameraError::Pfm(format!("bad magic {magic:?}")));
    }
    let dims = lines
        .next()
        .ok_or_else(|| CameraError::Pfm("missing dimensions".into()))?;
    let mut parts = dims.split_whitespace();
    let width: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CameraError::Pfm("bad width".into()))?;
    let height: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CameraError::Pfm("bad height".into()))?;
    let scale: f64 = lines
        .next()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CameraError::Pfm("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(CameraError::Pfm("big-endian pfm not supported".into()));
    }
    let payload = &bytes[header_end..];
    if payload.len() != width * height * 4 {
        return Err(CameraError::Pfm(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            width * height * 4
        )));
    }
    let mut image = DepthImage::constant(width, height, max_range, max_range);
    let mut offset = 0;
    for v in (0..height).rev() {
        for u in 0..width {
            let raw: [u8; 4] = payload[offset..offset + 4].try_into().unwrap();
            image.set(u, v, f32::from_le_bytes(raw) as f64);
            offset += 4;
        }
    }
    Ok(image)
}

fn find_header_end(bytes: &[u8]) -> Result<usize, CameraError> {
    let mut newlines = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            newlines += 1;
            if newlines == 3 {
                return Ok(i + 1);
            }
        }
    }
    Err(CameraError::Pfm("truncated header".into()))
}
