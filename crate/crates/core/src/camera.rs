//! Projection models: stereo and monocular pin-hole cameras, the
//! classical image-based visual-servoing interaction matrix, a one-link
//! rotating camera, and the tool-on-arm combined model with visibility
//! and linearization helpers.
//!
//! Image coordinates carry the same length unit as the focal lengths
//! (mm by default); pixel conversion is a configuration-level scale.
//! A positive joint angle turns the camera clockwise.

use nalgebra::{Matrix2, Matrix2x6, Rotation3, Vector2, Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {reason}")]
    InvalidIntrinsics { reason: &'static str },
    #[error("stereo baseline must be nonnegative, got {value}")]
    NegativeBaseline { value: f64 },
    #[error("point is behind the camera, depth {z}")]
    PointBehindCamera { z: f64 },
    #[error("depth must be positive, got {z}")]
    NonPositiveDepth { z: f64 },
    #[error("point is behind the lens, bearing {angle} rad")]
    BehindLens { angle: f64 },
    #[error("projection denominator vanishes near bearing pi/2")]
    ProjectionSingularity,
    #[error("no angle keeps the tool inside the view cone")]
    EmptyInterval,
    #[error("invalid scene: {reason}")]
    InvalidScene { reason: &'static str },
}

/// Pin-hole intrinsics. `f_u`, `f_v`, `s_c`, `u0`, `v0` share the image
/// length unit; `alpha_view` is the full angle of view in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub f_u: f64,
    pub f_v: f64,
    pub s_c: f64,
    pub u0: f64,
    pub v0: f64,
    pub alpha_view: f64,
}

impl CameraIntrinsics {
    pub fn new(
        f_u: f64,
        f_v: f64,
        s_c: f64,
        u0: f64,
        v0: f64,
        alpha_view: f64,
    ) -> Result<Self, CameraError> {
        if !(f_u > 0.0) || !(f_v > 0.0) {
            return Err(CameraError::InvalidIntrinsics { reason: "focal lengths must be positive" });
        }
        if !(alpha_view > 0.0 && alpha_view < std::f64::consts::PI) {
            return Err(CameraError::InvalidIntrinsics {
                reason: "angle of view must lie in (0, pi)",
            });
        }
        Ok(CameraIntrinsics { f_u, f_v, s_c, u0, v0, alpha_view })
    }

    /// Skew-free, centered intrinsics with equal focal lengths.
    pub fn symmetric(f: f64, alpha_view: f64) -> Result<Self, CameraError> {
        CameraIntrinsics::new(f, f, 0.0, 0.0, 0.0, alpha_view)
    }
}

/// Two identical parallel cameras separated by `baseline`, with the
/// reference frame at the baseline midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: CameraIntrinsics, baseline: f64) -> Result<Self, CameraError> {
        if !(baseline >= 0.0) {
            return Err(CameraError::NegativeBaseline { value: baseline });
        }
        Ok(StereoRig { intrinsics, baseline })
    }
}

/// One image point, in focal-length units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

/// Stereo pair of image points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoProjection {
    pub left: ImagePoint,
    pub right: ImagePoint,
}

/// Fixed scene point observed by a camera rotating about its own axis.
/// `phi` is the point bearing at zero joint angle; `q_v0` is the initial
/// joint angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneLinkScene {
    pub x_p: f64,
    pub y_p: f64,
    pub phi: f64,
    pub q_v0: f64,
}

impl OneLinkScene {
    pub fn new(x_p: f64, y_p: f64, q_v0: f64) -> Result<Self, CameraError> {
        if !(x_p > 0.0) {
            return Err(CameraError::InvalidScene {
                reason: "scene point must start in front of the camera (x_p > 0)",
            });
        }
        Ok(OneLinkScene { x_p, y_p, phi: y_p.atan2(x_p), q_v0 })
    }

    /// Builds the scene from a bearing angle and range instead of
    /// Cartesian coordinates.
    pub fn from_bearing(phi: f64, range: f64, q_v0: f64) -> Result<Self, CameraError> {
        if !(phi.abs() < std::f64::consts::FRAC_PI_2) || !(range > 0.0) {
            return Err(CameraError::InvalidScene {
                reason: "bearing must satisfy |phi| < pi/2 with positive range",
            });
        }
        OneLinkScene::new(range * phi.cos(), range * phi.sin(), q_v0)
    }
}

/// Camera on one arm watching a tool of length `l_t` mounted on a second
/// arm a distance `l` away. `q_v_bar` is the fixed camera angle, `q_m0`
/// the initial tool angle; `l1` records the common link height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolScene {
    pub l: f64,
    pub l_t: f64,
    pub q_v_bar: f64,
    pub q_m0: f64,
    pub l1: f64,
}

impl ToolScene {
    pub fn new(l: f64, l_t: f64, q_v_bar: f64, q_m0: f64, l1: f64) -> Result<Self, CameraError> {
        // l > l_t keeps the tool strictly in front of the camera plane
        // for every tool angle.
        if !(l > l_t && l_t > 0.0) {
            return Err(CameraError::InvalidScene { reason: "need l > l_t > 0" });
        }
        Ok(ToolScene { l, l_t, q_v_bar, q_m0, l1 })
    }
}

/// Stereo projection of a camera-frame point: the pin-hole map through
/// the shared intrinsics, shifted by half the baseline disparity on
/// each side. The disparity obeys `u_r - u_l = f_u b / z`.
pub fn project_stereo(
    p_cam: &Vector3<f64>,
    rig: &StereoRig,
) -> Result<StereoProjection, CameraError> {
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    if z <= 0.0 {
        return Err(CameraError::PointBehindCamera { z });
    }
    let k = &rig.intrinsics;
    let u_center = (k.f_u * x + k.s_c * y + k.u0 * z) / z;
    let v = (k.f_v * y + k.v0 * z) / z;
    let half_disparity = k.f_u * rig.baseline / (2.0 * z);
    Ok(StereoProjection {
        left: ImagePoint { u: u_center - half_disparity, v },
        right: ImagePoint { u: u_center + half_disparity, v },
    })
}

/// Monocular pin-hole projection `u = f_u x/z + u0`, `v = f_v y/z + v0`.
pub fn project_mono(
    p_cam: &Vector3<f64>,
    k: &CameraIntrinsics,
) -> Result<ImagePoint, CameraError> {
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    if z <= 0.0 {
        return Err(CameraError::PointBehindCamera { z });
    }
    Ok(ImagePoint { u: k.f_u * x / z + k.u0, v: k.f_v * y / z + k.v0 })
}

/// Interaction matrix mapping the point's rigid-body twist in the camera
/// frame, `(v, omega)` with `p_dot = v + omega x p`, to the image
/// velocity `(u_dot, v_dot)`.
pub fn interaction_matrix(
    u: f64,
    v: f64,
    z: f64,
    k: &CameraIntrinsics,
) -> Result<Matrix2x6<f64>, CameraError> {
    if z <= 0.0 {
        return Err(CameraError::NonPositiveDepth { z });
    }
    let du = u - k.u0;
    let dv = v - k.v0;
    Ok(Matrix2x6::new(
        k.f_u / z,
        0.0,
        -du / z,
        -du * dv / k.f_v,
        (k.f_u * k.f_u + du * du) / k.f_u,
        -k.f_u * dv / k.f_v,
        0.0,
        k.f_v / z,
        -dv / z,
        -(k.f_v * k.f_v + dv * dv) / k.f_v,
        du * dv / k.f_u,
        k.f_v * du / k.f_u,
    ))
}

/// Classical visual-servoing control law: the minimum-norm twist
/// `k_gain * pinv(l_e) * e` through the Moore-Penrose pseudoinverse.
pub fn ibvs_velocity(e: &Vector2<f64>, l_e: &Matrix2x6<f64>, k_gain: f64) -> Vector6<f64> {
    let pinv = l_e
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .expect("SVD of a 2x6 matrix always yields a pseudoinverse");
    pinv * (k_gain * e)
}

/// Image coordinate of the fixed scene point after the camera rotates
/// clockwise by `q`: `u = f_u tan(phi + q)`.
pub fn one_link_project(
    scene: &OneLinkScene,
    q: f64,
    k: &CameraIntrinsics,
) -> Result<f64, CameraError> {
    let bearing = scene.phi + q;
    if bearing.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(CameraError::BehindLens { angle: bearing });
    }
    Ok(k.f_u * bearing.tan())
}

/// Tool-tip offset ratio `Q = l_t sin(angle) / (l - l_t cos(angle))`;
/// `atan(Q)` is the tip bearing seen from the camera position at zero
/// camera angle. The denominator stays positive because `l > l_t`.
fn tool_offset_ratio(scene: &ToolScene, angle: f64) -> f64 {
    scene.l_t * angle.sin() / (scene.l - scene.l_t * angle.cos())
}

/// Bearing of the tool tip in the camera frame: `atan(Q) + q_v_bar`.
pub fn tool_bearing(scene: &ToolScene, angle: f64) -> f64 {
    tool_offset_ratio(scene, angle).atan() + scene.q_v_bar
}

/// Image coordinate of the tool tip at the given tool angle:
/// `u = f_u (Q + tan q_v_bar) / (1 - Q tan q_v_bar)`, the tangent
/// addition of the tip bearing and the fixed camera angle. Serves both
/// the measured feature (current angle) and the estimated feature
/// (commanded angle).
pub fn tool_project(
    scene: &ToolScene,
    angle: f64,
    k: &CameraIntrinsics,
) -> Result<f64, CameraError> {
    let q = tool_offset_ratio(scene, angle);
    let t = scene.q_v_bar.tan();
    let den = 1.0 - q * t;
    if den.abs() < 1e-9 {
        return Err(CameraError::ProjectionSingularity);
    }
    Ok(k.f_u * (q + t) / den)
}

/// Connected range of tool angles over which the tool tip stays inside
/// the camera view cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleInterval {
    pub lo: f64,
    pub hi: f64,
}

impl AngleInterval {
    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.lo && angle <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Number of visibility samples over one turn; endpoint refinement
/// tightens the sampled crossings far below this resolution.
const VISIBILITY_SAMPLES: usize = 14400;
const VISIBILITY_BISECTIONS: usize = 60;

/// Tool angles where the tip bearing `atan(Q) + q_v_bar` stays within
/// half the view angle. Returns the connected visible arc containing
/// the best-aligned angle; endpoints are refined by bisection. A tool
/// visible at every angle yields the full turn `[-pi, pi]`.
pub fn visibility_interval(
    scene: &ToolScene,
    k: &CameraIntrinsics,
) -> Result<AngleInterval, CameraError> {
    let half_view = k.alpha_view / 2.0;
    let visible = |angle: f64| tool_bearing(scene, angle).abs() <= half_view;
    let n = VISIBILITY_SAMPLES;
    let step = 2.0 * std::f64::consts::PI / n as f64;
    let sample = |i: usize| -std::f64::consts::PI + step * i as f64;

    let flags: Vec<bool> = (0..n).map(|i| visible(sample(i))).collect();
    if flags.iter().all(|&f| f) {
        return Ok(AngleInterval { lo: -std::f64::consts::PI, hi: std::f64::consts::PI });
    }
    if flags.iter().all(|&f| !f) {
        return Err(CameraError::EmptyInterval);
    }
    // Best-aligned visible sample selects the arc when several exist.
    let best = (0..n)
        .filter(|&i| flags[i])
        .min_by(|&a, &b| {
            tool_bearing(scene, sample(a))
                .abs()
                .total_cmp(&tool_bearing(scene, sample(b)).abs())
        })
        .expect("some sample is visible");
    // Walk outward, wrapping across the seam, to the arc edges.
    let mut lo_idx = best;
    while flags[(lo_idx + n - 1) % n] && (lo_idx + n - 1) % n != best {
        lo_idx = (lo_idx + n - 1) % n;
    }
    let mut hi_idx = best;
    while flags[(hi_idx + 1) % n] && (hi_idx + 1) % n != best {
        hi_idx = (hi_idx + 1) % n;
    }
    // Refine each crossing between the edge sample and its invisible
    // neighbour. Indices are unwrapped so lo < hi even across the seam.
    let refine = |inside: f64, outside: f64| {
        let (mut a, mut b) = (inside, outside);
        for _ in 0..VISIBILITY_BISECTIONS {
            let mid = 0.5 * (a + b);
            if visible(mid) {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    let unwrap_from = |idx: usize| {
        let mut a = sample(idx % n);
        while a > sample(best % n) {
            a -= 2.0 * std::f64::consts::PI;
        }
        a
    };
    let lo_in = unwrap_from(lo_idx);
    let lo = refine(lo_in, lo_in - step);
    let hi_in = {
        let mut a = sample(hi_idx % n);
        while a < sample(best % n) {
            a += 2.0 * std::f64::consts::PI;
        }
        a
    };
    let hi = refine(hi_in, hi_in + step);
    Ok(AngleInterval { lo, hi })
}

/// First-order model of [`one_link_project`] about the operating angle:
/// slope `c1 = f_u / cos^2(phi + q_bar_0)` and offset
/// `c2 = f_u tan(phi + q_bar_0)`.
pub fn linearize_one_link(
    scene: &OneLinkScene,
    q_bar_0: f64,
    k: &CameraIntrinsics,
) -> Result<(f64, f64), CameraError> {
    let bearing = scene.phi + q_bar_0;
    if bearing.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(CameraError::BehindLens { angle: bearing });
    }
    let c = bearing.cos();
    Ok((k.f_u / (c * c), k.f_u * bearing.tan()))
}

/// Slope of [`tool_project`] in the tool angle at angle zero:
/// `c1 = f_u (1 + tan^2 q_v_bar) (l l_t - l_t^2) / (l - l_t)^2`.
pub fn linearize_tool(scene: &ToolScene, k: &CameraIntrinsics) -> f64 {
    let t = scene.q_v_bar.tan();
    let d = scene.l - scene.l_t;
    k.f_u * (1.0 + t * t) * (scene.l * scene.l_t - scene.l_t * scene.l_t) / (d * d)
}
