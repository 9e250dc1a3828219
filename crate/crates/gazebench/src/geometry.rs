//! Exact pinhole camera math: projection, relative extrinsics and the
//! cross-view gaze mapping.
//!
//! The cross-view mapping is the closed-form stand-in for a learned
//! correspondence model: the synthetic generator knows the true 3D gaze
//! target, so transferring a gaze point from the head camera to the neck
//! camera is back-projection at known depth followed by re-projection.
//!
//! Conventions: camera frames are x-right, y-down, z-forward; poses map
//! world coordinates into camera coordinates (`p_cam = R p_world + t`).
//! Pixel coordinates are continuous; rasterization to integer indices only
//! happens in heatmap generation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points with camera-frame depth at or below this count as behind the
/// camera; avoids division blow-up near the image plane.
pub const EPS_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics with an image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::ConfigInvalid("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::ConfigInvalid("cx outside [0, width)".into()));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::ConfigInvalid("cy outside [0, height)".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && x < self.width as f64 && y >= 0.0 && y < self.height as f64
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

pub const ROTATION_TOL: f64 = 1e-9;

impl Pose {
    /// Build a pose, rejecting rotation matrices that are not orthonormal
    /// with determinant 1 within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ROTATION_TOL {
            return Err(Error::NotARotation);
        }
        if (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotARotation);
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// World point into this camera's frame.
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Camera-frame point back into world coordinates.
    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }
}

/// Continuous pixel location plus whether it falls inside the image of the
/// camera it was projected into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
    pub in_bounds: bool,
}

impl PixelPoint {
    pub fn new(x: f64, y: f64, intr: &Intrinsics) -> Self {
        PixelPoint {
            x,
            y,
            in_bounds: intr.contains(x, y),
        }
    }
}

/// Project a world point into a camera. Returns the pixel and the
/// camera-frame depth.
///
/// Errors with [`Error::BehindCamera`] when the point sits at or behind the
/// image plane; an out-of-bounds pixel is a valid result, not an error.
pub fn project(point: &Vector3<f64>, intr: &Intrinsics, pose: &Pose) -> Result<(PixelPoint, f64)> {
    let p = pose.to_camera(point);
    if p.z <= EPS_DEPTH {
        return Err(Error::BehindCamera);
    }
    let x = intr.fx * p.x / p.z + intr.cx;
    let y = intr.fy * p.y / p.z + intr.cy;
    Ok((PixelPoint::new(x, y, intr), p.z))
}

/// Invert the projection at a known depth, returning the world point.
pub fn back_project(x: f64, y: f64, depth: f64, intr: &Intrinsics, pose: &Pose) -> Vector3<f64> {
    let cam = Vector3::new(
        (x - intr.cx) / intr.fx * depth,
        (y - intr.cy) / intr.fy * depth,
        depth,
    );
    pose.to_world(&cam)
}

/// Transform taking head-camera coordinates to neck-camera coordinates:
/// `R_rel = R_neck R_head^T`, `t_rel = t_neck - R_rel t_head`.
pub fn relative_extrinsics(head: &Pose, neck: &Pose) -> Pose {
    let rotation = neck.rotation * head.rotation.transpose();
    let translation = neck.translation - rotation * head.translation;
    Pose {
        rotation,
        translation,
    }
}

/// Map a gaze pixel observed in the head camera, at the given camera-frame
/// depth, into the neck camera.
///
/// An out-of-bounds result is a valid output (it becomes a `truncated`
/// label downstream); [`Error::BehindCamera`] means the gaze target lies
/// behind the neck camera (downstream: `untracked`).
pub fn map_gaze_cross_view(
    gaze: &PixelPoint,
    depth: f64,
    head: (&Intrinsics, &Pose),
    neck: (&Intrinsics, &Pose),
) -> Result<PixelPoint> {
    let world = back_project(gaze.x, gaze.y, depth, head.0, head.1);
    let (pixel, _) = project(&world, neck.0, neck.1)?;
    Ok(pixel)
}
