use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::dataset::annotations::LANDMARK_NAMES;
use crate::error::{Error, Result};
use crate::multiview::{triangulate_with, CameraModel, Triangulation};

pub const POSE_HEADER: &str = "frame_id,landmark,X,Y,Z,residual_px";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark3 {
    pub position: [f64; 3],
    pub residual_px: f64,
}

/// Reconstructed landmarks at one time index, in [`LANDMARK_NAMES`] order;
/// `None` marks a landmark whose triangulation was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub time_index: u32,
    pub landmarks: [Option<Landmark3>; 4],
}

impl Pose3D {
    pub fn from_points(time_index: u32, points: [[f64; 3]; 4]) -> Self {
        Pose3D {
            time_index,
            landmarks: points.map(|position| {
                Some(Landmark3 {
                    position,
                    residual_px: 0.0,
                })
            }),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.landmarks.iter().flatten().count()
    }

    pub fn is_partial(&self) -> bool {
        self.valid_count() < 4
    }

    pub fn point(&self, k: usize) -> Option<[f64; 3]> {
        self.landmarks[k].map(|l| l.position)
    }

    fn distance(&self, a: usize, b: usize) -> Option<f64> {
        let (p, q) = (self.point(a)?, self.point(b)?);
        Some(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
    }

    /// Head to abdomen-tip distance.
    pub fn head_abdomen(&self) -> Option<f64> {
        self.distance(0, 1)
    }

    /// Left to right wing-tip distance.
    pub fn wingspan(&self) -> Option<f64> {
        self.distance(2, 3)
    }
}

/// Triangulates each landmark from two native-coordinate label vectors.
/// Degenerate landmarks are left out and logged.
pub fn reconstruct_pose(
    view1: &[f64; 8],
    view2: &[f64; 8],
    cam1: &CameraModel,
    cam2: &CameraModel,
    time_index: u32,
    method: Triangulation,
) -> Pose3D {
    let landmarks = std::array::from_fn(|k| {
        let p1 = [view1[2 * k], view1[2 * k + 1]];
        let p2 = [view2[2 * k], view2[2 * k + 1]];
        match triangulate_with(p1, p2, cam1, cam2, method) {
            Ok(t) => Some(Landmark3 {
                position: t.position,
                residual_px: t.residual_px,
            }),
            Err(e) => {
                warn!("frame {time_index}: {} not reconstructed: {e}", LANDMARK_NAMES[k]);
                None
            }
        }
    });
    Pose3D {
        time_index,
        landmarks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioMetrics {
    /// Mean predicted/true head-abdomen distance.
    pub head_abdomen: f64,
    /// Mean predicted/true wingspan.
    pub wingspan: f64,
    pub head_abdomen_frames: usize,
    pub wingspan_frames: usize,
}

/// Mean 3D distance ratios of `pred` against `gt`, matched by position.
/// Frames with a zero or missing ground-truth distance are skipped.
pub fn ratio_metrics(pred: &[Pose3D], gt: &[Pose3D]) -> Result<RatioMetrics> {
    if pred.len() != gt.len() {
        return Err(Error::mismatch(format!("{} poses", gt.len()), pred.len()));
    }
    let mean = |f: fn(&Pose3D) -> Option<f64>, what: &str| -> Result<(f64, usize)> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (p, g) in pred.iter().zip(gt) {
            match (f(p), f(g)) {
                (Some(dp), Some(dg)) if dg > 0.0 => {
                    sum += dp / dg;
                    n += 1;
                }
                _ => warn!("frame {}: {what} ratio skipped", g.time_index),
            }
        }
        if n == 0 {
            return Err(Error::Empty(format!("no frames with a usable {what} distance")));
        }
        Ok((sum / n as f64, n))
    };
    let (head_abdomen, head_abdomen_frames) = mean(Pose3D::head_abdomen, "head-abdomen")?;
    let (wingspan, wingspan_frames) = mean(Pose3D::wingspan, "wingspan")?;
    Ok(RatioMetrics {
        head_abdomen,
        wingspan,
        head_abdomen_frames,
        wingspan_frames,
    })
}

/// One row per reconstructed landmark, values at 15 significant digits.
pub fn pose_csv(poses: &[Pose3D]) -> String {
    let mut s = String::from(POSE_HEADER);
    s.push('\n');
    for pose in poses {
        for (name, l) in LANDMARK_NAMES.iter().zip(&pose.landmarks) {
            if let Some(l) = l {
                let [x, y, z] = l.position;
                let _ = writeln!(
                    s,
                    "{},{name},{x:.14e},{y:.14e},{z:.14e},{:.14e}",
                    pose.time_index, l.residual_px
                );
            }
        }
    }
    s
}

pub fn parse_pose_csv(text: &str, source: &Path) -> Result<Vec<Pose3D>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == POSE_HEADER => {}
        _ => return Err(err(1, format!("expected header {POSE_HEADER:?}"))),
    }
    let mut poses: Vec<Pose3D> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let id: u32 = f[0].parse().map_err(|_| err(i + 1, format!("bad frame id {:?}", f[0])))?;
        let k = LANDMARK_NAMES
            .iter()
            .position(|&n| n == f[1])
            .ok_or_else(|| err(i + 1, format!("unknown landmark {:?}", f[1])))?;
        let mut v = [0.0; 4];
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = f[2 + j]
                .parse()
                .map_err(|_| err(i + 1, format!("bad number {:?}", f[2 + j])))?;
        }
        if poses.last().is_none_or(|p| p.time_index != id) {
            poses.push(Pose3D {
                time_index: id,
                landmarks: [None; 4],
            });
        }
        poses.last_mut().expect("pushed").landmarks[k] = Some(Landmark3 {
            position: [v[0], v[1], v[2]],
            residual_px: v[3],
        });
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(t: u32, scale: f64) -> Pose3D {
        Pose3D::from_points(
            t,
            [
                [0.0, 0.0, 0.0],
                [scale * 3.0, scale * 4.0, 0.0],
                [1.0, 1.0, 1.0],
                [1.0, 1.0 + scale * 2.0, 1.0],
            ],
        )
    }

    #[test]
    fn identical_sequences_give_exact_ones() {
        let p: Vec<_> = (0..5).map(|t| pose(t, 1.0 + t as f64 * 0.37)).collect();
        let r = ratio_metrics(&p, &p).unwrap();
        assert_eq!((r.head_abdomen, r.wingspan), (1.0, 1.0));
    }

    #[test]
    fn doubled_distances_give_two() {
        let gt: Vec<_> = (0..3).map(|t| pose(t, 1.0)).collect();
        let pred: Vec<_> = (0..3).map(|t| pose(t, 2.0)).collect();
        let r = ratio_metrics(&pred, &gt).unwrap();
        assert_eq!((r.head_abdomen, r.wingspan), (2.0, 2.0));
    }

    #[test]
    fn zero_gt_distance_excluded() {
        let gt = vec![pose(0, 0.0), pose(1, 1.0)];
        let pred = vec![pose(0, 1.0), pose(1, 1.5)];
        let r = ratio_metrics(&pred, &gt).unwrap();
        assert_eq!(r.head_abdomen_frames, 1);
        assert_eq!(r.head_abdomen, 1.5);
    }

    #[test]
    fn csv_round_trip_partial() {
        let mut p = pose(7, 1.0 / 3.0);
        p.landmarks[2] = None;
        let text = pose_csv(&[p.clone(), pose(8, 2.0)]);
        let back = parse_pose_csv(&text, Path::new("p.csv")).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].landmarks[2].is_none());
        let (a, b) = (p.point(1).unwrap(), back[0].point(1).unwrap());
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-14 * a[k].abs());
        }
    }
}
