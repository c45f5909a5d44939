//! Dual Mapping: physical-bounds activation and the depth-pixel safety
//! shield.
//!
//! Mapping 1 squashes raw network outputs into the physical envelope with a
//! scaled tanh. Mapping 2 samples waypoints along a candidate primitive,
//! projects them into the current depth frame and deterministically rejects
//! the candidate at the first waypoint whose camera depth breaches the
//! observed depth minus the safety margin. The shield sees only the current
//! frame; it takes no world reference at all, so there is no map fusion to
//! go stale.

use crate::camera::{world_to_camera, BodyPose, CameraExtrinsics, DepthImage, Intrinsics};
use crate::primitives::{solve_obvp, KinodynamicState, Primitive, PrimitiveSet};
use serde::{Deserialize, Serialize};

/// Component-wise output bounds: terminal displacement, velocity and
/// acceleration magnitudes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalEnvelope {
    pub p_max: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for PhysicalEnvelope {
    fn default() -> Self {
        Self {
            p_max: 4.0,
            v_max: 2.0,
            a_max: 6.0,
        }
    }
}

impl PhysicalEnvelope {
    /// The nine per-component bounds in `[p, p, p, v, v, v, a, a, a]` order.
    pub fn bounds(&self) -> [f64; 9] {
        [
            self.p_max, self.p_max, self.p_max, self.v_max, self.v_max, self.v_max, self.a_max,
            self.a_max, self.a_max,
        ]
    }
}

/// How to treat waypoints that project outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OovPolicy {
    /// Reject candidates that leave the field of view (don't fly where you
    /// can't see). The inference default.
    Conservative,
    /// Skip out-of-view waypoints; used for lateral exploration during
    /// training-time evaluation.
    Permissive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    /// Physical radius of the vehicle, meters.
    pub radius: f64,
    /// Additional safety buffer, meters.
    pub buffer: f64,
    pub oov_policy: OovPolicy,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self {
            radius: 0.3,
            buffer: 0.2,
            oov_policy: OovPolicy::Conservative,
        }
    }
}

impl SafetyParams {
    pub fn margin(&self) -> f64 {
        self.radius + self.buffer
    }
}

/// First offending waypoint of a rejected candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Waypoint index within the checked sequence.
    pub m: usize,
    pub u: f64,
    pub v: f64,
    pub z_c: f64,
    /// Minimum observed depth over the projected footprint patch; 0.0 for
    /// out-of-view rejections, where nothing was observed at all.
    pub d_obs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldVerdict {
    pub accepted: bool,
    pub first_violation: Option<Violation>,
}

impl ShieldVerdict {
    pub fn accept() -> Self {
        Self {
            accepted: true,
            first_violation: None,
        }
    }

    pub fn reject(violation: Violation) -> Self {
        Self {
            accepted: false,
            first_violation: Some(violation),
        }
    }
}

/// Mapping 1: squash a raw 9-vector into the open envelope box with a
/// component-wise scaled tanh.
///
/// tanh saturates to exactly 1.0 in f64 around |h| > 19; the squash value
/// is clamped just inside so the output box stays strictly open for any
/// finite input.
pub fn bound_activation(h_kin: &[f64; 9], envelope: &PhysicalEnvelope) -> [f64; 9] {
    const OPEN: f64 = 1.0 - 1e-12;
    let bounds = envelope.bounds();
    let mut out = [0.0; 9];
    for i in 0..9 {
        out[i] = bounds[i] * h_kin[i].tanh().clamp(-OPEN, OPEN);
    }
    out
}

/// Diagonal Jacobian of [`bound_activation`]: `U_max * (1 - tanh^2 h)`.
pub fn bound_activation_jacobian(h_kin: &[f64; 9], envelope: &PhysicalEnvelope) -> [f64; 9] {
    let bounds = envelope.bounds();
    let mut out = [0.0; 9];
    for i in 0..9 {
        let t = h_kin[i].tanh();
        out[i] = bounds[i] * (1.0 - t * t);
    }
    out
}

/// Mapping 2: check one primitive against the current depth frame.
///
/// Samples `m` waypoints, skips only those essentially on the camera plane
/// (see [`Z_SHIELD_MIN`]), and rejects at the first waypoint that fails
/// either test:
///
/// * depth margin at the waypoint's own pixel, `z_c > d_obs(u, v) - (r +
///   eps)` with nearest-pixel lookup; this also rejects waypoints hidden
///   behind observed surfaces, which the camera cannot certify;
/// * footprint proximity: over the pixel patch the vehicle radius covers
///   at the waypoint's depth, some observed surface point lies within `r +
///   eps` of the waypoint in 3D. A bare point lookup would let
///   trajectories graze wall edges one pixel outside their own ray.
///
/// Out-of-view waypoints reject under [`OovPolicy::Conservative`] and are
/// skipped under [`OovPolicy::Permissive`].
/// Shield-specific depth floor. Waypoints this close to the camera plane
/// coincide with the vehicle body; anything beyond it projects fine and is
/// checked. Using the render near plane (0.1 m) here would leave a blind
/// slab that slow trajectories can creep through sideways, entirely
/// unverified.
pub const Z_SHIELD_MIN: f64 = 0.02;

pub fn shield_check(
    prim: &Primitive,
    image: &DepthImage,
    pose: &BodyPose,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
    safety: &SafetyParams,
    m: usize,
) -> ShieldVerdict {
    let margin = safety.margin();
    // Any waypoint this much shallower than every pixel passes both tests;
    // patch scans only run for the rest.
    let frame_min = image.values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let waypoints = prim
        .sample_waypoints(m.max(2))
        .expect("waypoint count >= 2");
    for (index, point) in waypoints.iter().enumerate() {
        let p_c = world_to_camera(point, pose, extr);
        if p_c.z <= Z_SHIELD_MIN {
            continue;
        }
        let u = intr.fx * p_c.x / p_c.z + intr.cx;
        let v = intr.fy * p_c.y / p_c.z + intr.cy;
        let in_view =
            u >= 0.0 && u < intr.width as f64 && v >= 0.0 && v < intr.height as f64;
        if !in_view {
            match safety.oov_policy {
                OovPolicy::Conservative => {
                    return ShieldVerdict::reject(Violation {
                        m: index,
                        u,
                        v,
                        z_c: p_c.z,
                        d_obs: 0.0,
                    });
                }
                OovPolicy::Permissive => continue,
            }
        }
        let d_center = image.sample_nearest(u, v);
        if p_c.z > d_center - margin {
            return ShieldVerdict::reject(Violation {
                m: index,
                u,
                v,
                z_c: p_c.z,
                d_obs: d_center,
            });
        }
        if p_c.z <= frame_min - margin {
            continue;
        }
        if let Some((d_obs, pu, pv)) = footprint_conflict(image, intr, u, v, &p_c, margin) {
            return ShieldVerdict::reject(Violation {
                m: index,
                u: pu,
                v: pv,
                z_c: p_c.z,
                d_obs,
            });
        }
    }
    ShieldVerdict::accept()
}

/// Scan the pixel patch covered by the vehicle radius at the waypoint's
/// depth for an observed surface point within `margin` of the waypoint in
/// 3D. Returns the first conflicting pixel in scan order, if any.
fn footprint_conflict(
    image: &DepthImage,
    intr: &Intrinsics,
    u: f64,
    v: f64,
    waypoint_cam: &nalgebra::Vector3<f64>,
    margin: f64,
) -> Option<(f64, f64, f64)> {
    let z_c = waypoint_cam.z;
    let ru = (intr.fx * margin / z_c).ceil() as i64;
    let rv = (intr.fy * margin / z_c).ceil() as i64;
    let uc = u.round() as i64;
    let vc = v.round() as i64;
    let u_lo = (uc - ru).clamp(0, image.width as i64 - 1) as usize;
    let u_hi = (uc + ru).clamp(0, image.width as i64 - 1) as usize;
    let v_lo = (vc - rv).clamp(0, image.height as i64 - 1) as usize;
    let v_hi = (vc + rv).clamp(0, image.height as i64 - 1) as usize;
    let margin_sq = margin * margin;
    for pv in v_lo..=v_hi {
        for pu in u_lo..=u_hi {
            let d = image.at(pu, pv);
            // A surface point can only conflict when its depth is within
            // the margin of the waypoint depth.
            if d >= image.max_range || (d - z_c).abs() >= margin {
                continue;
            }
            // Surface point on this pixel's ray at its observed depth.
            let sx = (pu as f64 - intr.cx) / intr.fx * d;
            let sy = (pv as f64 - intr.cy) / intr.fy * d;
            let dx = sx - waypoint_cam.x;
            let dy = sy - waypoint_cam.y;
            let dz = d - z_c;
            if dx * dx + dy * dy + dz * dz < margin_sq {
                return Some((d, pu as f64, pv as f64));
            }
        }
    }
    None
}

/// Check every candidate of a set, preserving order.
///
/// Returns the surviving subset plus one verdict per input candidate,
/// aligned index-wise with the input.
#[allow(clippy::too_many_arguments)]
pub fn filter_primitives(
    set: &PrimitiveSet,
    x0: &KinodynamicState,
    t_f: f64,
    image: &DepthImage,
    pose: &BodyPose,
    intr: &Intrinsics,
    extr: &CameraExtrinsics,
    safety: &SafetyParams,
    m: usize,
) -> (PrimitiveSet, Vec<ShieldVerdict>) {
    let mut survivors = PrimitiveSet::default();
    let mut verdicts = Vec::with_capacity(set.len());
    for (terminal, &confidence) in set.terminals.iter().zip(&set.confidences) {
        let prim = solve_obvp(x0, terminal, t_f).expect("positive horizon");
        let verdict = shield_check(&prim, image, pose, intr, extr, safety, m);
        if verdict.accepted {
            survivors.terminals.push(*terminal);
            survivors.confidences.push(confidence);
        }
        verdicts.push(verdict);
    }
    (survivors, verdicts)
}
