//! Two-view triangulation of landmarks, reprojection residuals and 3D
//! distance-ratio metrics.

pub mod pose;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector2, Vector3, Vector4};
use std::path::Path;

use crate::dataset::calibration::load_calibration;
use crate::error::{Error, Result};

pub use pose::{
    parse_pose_csv, pose_csv, ratio_metrics, reconstruct_pose, Landmark3, Pose3D, RatioMetrics,
    POSE_HEADER,
};

/// Rays closer than this (degrees) are treated as parallel.
pub const MIN_RAY_ANGLE_DEG: f64 = 0.1;
/// Largest accepted condition number of the row-normalized DLT system.
pub const MAX_CONDITION: f64 = 1e8;

/// A finite projective camera `x ~ P X`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub camera_id: String,
    pub projection: Matrix3x4<f64>,
}

impl CameraModel {
    pub fn new(camera_id: impl Into<String>, projection: Matrix3x4<f64>) -> Result<Self> {
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("projection matrix has non-finite entries".into()));
        }
        let m: Matrix3<f64> = projection.fixed_view::<3, 3>(0, 0).into();
        let scale = m.norm().powi(3);
        if scale == 0.0 || (m.determinant() / scale).abs() < 1e-12 {
            return Err(Error::Validation(
                "left 3x3 block of the projection matrix is singular".into(),
            ));
        }
        Ok(CameraModel {
            camera_id: camera_id.into(),
            projection,
        })
    }

    pub fn from_rows(camera_id: impl Into<String>, rows: [[f64; 4]; 3]) -> Result<Self> {
        Self::new(camera_id, Matrix3x4::from_fn(|r, c| rows[r][c]))
    }

    /// Reads a 12-number calibration file; the file stem becomes the id.
    pub fn load(path: &Path) -> Result<Self> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_rows(id, load_calibration(path)?)
    }

    pub fn rows(&self) -> [[f64; 4]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.projection[(r, c)]))
    }

    fn left_block(&self) -> Matrix3<f64> {
        self.projection.fixed_view::<3, 3>(0, 0).into()
    }

    /// Optical center `C` with `P [C; 1] = 0`.
    pub fn center(&self) -> Vector3<f64> {
        let m = self.left_block();
        let p4 = self.projection.column(3).into_owned();
        -m.lu().solve(&p4).expect("finite camera")
    }

    /// Direction of the back-projected ray through image point `p`, oriented
    /// towards positive depth.
    pub fn ray(&self, p: [f64; 2]) -> Vector3<f64> {
        let m = self.left_block();
        let d = m.lu().solve(&Vector3::new(p[0], p[1], 1.0)).expect("finite camera");
        if m.determinant() < 0.0 {
            -d
        } else {
            d
        }
    }
}

/// Projects `x` through `cam`.
pub fn reproject(x: [f64; 3], cam: &CameraModel) -> Result<[f64; 2]> {
    let h = cam.projection * Vector4::new(x[0], x[1], x[2], 1.0);
    let row3 = cam.projection.row(2).norm() * Vector4::new(x[0], x[1], x[2], 1.0).norm();
    if !h.iter().all(|v| v.is_finite()) || h[2].abs() <= 1e-14 * row3 {
        return Err(Error::Projection(format!(
            "point ({}, {}, {}) projects to infinity in camera {:?}",
            x[0], x[1], x[2], cam.camera_id
        )));
    }
    Ok([h[0] / h[2], h[1] / h[2]])
}

/// Angle in degrees between the two back-projected rays.
pub fn ray_angle_deg(p1: [f64; 2], p2: [f64; 2], cam1: &CameraModel, cam2: &CameraModel) -> f64 {
    let (d1, d2) = (cam1.ray(p1), cam2.ray(p2));
    d1.cross(&d2).norm().atan2(d1.dot(&d2).abs()).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Triangulation {
    /// Smallest singular vector of the linear system.
    #[default]
    Linear,
    /// Linear estimate followed by Gauss-Newton on reprojection error.
    Refined,
}

/// A triangulated point with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulatedPoint {
    pub position: [f64; 3],
    /// Root-mean-square reprojection error over both views, in pixels.
    pub residual_px: f64,
    pub condition: f64,
    pub ray_angle_deg: f64,
}

/// RMS reprojection error of `x` in both views.
pub fn reprojection_residual(
    x: [f64; 3],
    p1: [f64; 2],
    p2: [f64; 2],
    cam1: &CameraModel,
    cam2: &CameraModel,
) -> Result<f64> {
    let e = |p: [f64; 2], cam: &CameraModel| -> Result<f64> {
        let q = reproject(x, cam)?;
        Ok((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2))
    };
    Ok(((e(p1, cam1)? + e(p2, cam2)?) / 2.0).sqrt())
}

/// Linear two-view triangulation.
pub fn triangulate(p1: [f64; 2], p2: [f64; 2], cam1: &CameraModel, cam2: &CameraModel) -> Result<[f64; 3]> {
    triangulate_with(p1, p2, cam1, cam2, Triangulation::Linear).map(|t| t.position)
}

pub fn triangulate_with(
    p1: [f64; 2],
    p2: [f64; 2],
    cam1: &CameraModel,
    cam2: &CameraModel,
    method: Triangulation,
) -> Result<TriangulatedPoint> {
    if p1.iter().chain(&p2).any(|v| !v.is_finite()) {
        return Err(Error::Validation("image points must be finite".into()));
    }
    let angle = ray_angle_deg(p1, p2, cam1, cam2);
    if (cam1.center() - cam2.center()).norm() <= 1e-12 * (cam1.center().norm() + cam2.center().norm() + 1.0) {
        return Err(Error::DegenerateGeometry(format!(
            "cameras {:?} and {:?} share an optical center",
            cam1.camera_id, cam2.camera_id
        )));
    }
    if angle < MIN_RAY_ANGLE_DEG {
        return Err(Error::DegenerateGeometry(format!(
            "rays meet at {angle:.4} deg (< {MIN_RAY_ANGLE_DEG} deg)"
        )));
    }
    let mut a = Matrix4::<f64>::zeros();
    for (k, (p, cam)) in [(p1, cam1), (p2, cam2)].into_iter().enumerate() {
        let pm = &cam.projection;
        a.set_row(2 * k, &(pm.row(2) * p[0] - pm.row(0)));
        a.set_row(2 * k + 1, &(pm.row(2) * p[1] - pm.row(1)));
    }
    for mut row in a.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (mut smax, mut smin_idx, mut s) = (0.0f64, 0, svd.singular_values);
    for i in 0..4 {
        smax = smax.max(s[i]);
        if s[i] < s[smin_idx] {
            smin_idx = i;
        }
    }
    let null = v_t.row(smin_idx).transpose();
    s[smin_idx] = f64::INFINITY;
    let third = s.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if third > 0.0 { smax / third } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::DegenerateGeometry(format!(
            "triangulation system condition number {condition:.3e} exceeds {MAX_CONDITION:e}"
        )));
    }
    if null[3].abs() <= 1e-14 * null.norm() {
        return Err(Error::DegenerateGeometry("intersection at infinity".into()));
    }
    let mut x = Vector3::new(null[0] / null[3], null[1] / null[3], null[2] / null[3]);
    if method == Triangulation::Refined {
        x = refine(x, p1, p2, cam1, cam2);
    }
    let position = [x[0], x[1], x[2]];
    Ok(TriangulatedPoint {
        position,
        residual_px: reprojection_residual(position, p1, p2, cam1, cam2)?,
        condition,
        ray_angle_deg: angle,
    })
}

fn residual_and_jacobian(x: &Vector3<f64>, p: [f64; 2], cam: &CameraModel) -> Option<(Vector2<f64>, nalgebra::Matrix2x3<f64>)> {
    let pm = &cam.projection;
    let h = pm * Vector4::new(x[0], x[1], x[2], 1.0);
    if h[2].abs() < 1e-300 {
        return None;
    }
    let (u, v) = (h[0] / h[2], h[1] / h[2]);
    let r = Vector2::new(u - p[0], v - p[1]);
    let w2 = h[2] * h[2];
    let j = nalgebra::Matrix2x3::from_fn(|i, c| {
        let num = if i == 0 { pm[(0, c)] * h[2] - h[0] * pm[(2, c)] } else { pm[(1, c)] * h[2] - h[1] * pm[(2, c)] };
        num / w2
    });
    Some((r, j))
}

fn refine(mut x: Vector3<f64>, p1: [f64; 2], p2: [f64; 2], cam1: &CameraModel, cam2: &CameraModel) -> Vector3<f64> {
    let cost = |x: &Vector3<f64>| -> f64 {
        [(p1, cam1), (p2, cam2)]
            .iter()
            .filter_map(|(p, c)| residual_and_jacobian(x, *p, c))
            .map(|(r, _)| r.norm_squared())
            .sum()
    };
    let mut current = cost(&x);
    for _ in 0..20 {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (p, c) in [(p1, cam1), (p2, cam2)] {
            let Some((r, j)) = residual_and_jacobian(&x, p, c) else {
                return x;
            };
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.lu().solve(&(-jtr)) else {
            return x;
        };
        let cand = x + step;
        let next = cost(&cand);
        if !(next < current) {
            break;
        }
        x = cand;
        current = next;
    }
    x
}
