//! Procedural two-camera recordings of a moth-like figure with four coloured
//! landmark blobs on a textured background.
//!
//! The figure flies a smooth 3D path, flaps its wings and slowly turns, so
//! frames far apart in time differ more than neighbouring ones. Landmark
//! coordinates are exact projections of the 3D pose through each camera.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::annotations::{annotations_to_csv, AnnotatedFrame, BBox};
use crate::dataset::calibration::calibration_to_text;
use crate::dataset::image::RawImage;
use crate::error::{Error, Result};
use crate::multiview::{pose_csv, reproject, CameraModel, Pose3D};

/// Blob colours in landmark order: red, green, blue, yellow.
pub const BLOB_COLOURS: [[u8; 3]; 4] = [[225, 30, 30], [30, 200, 45], [35, 70, 235], [240, 220, 35]];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Landmark blob radius in pixels.
    pub blob_radius: f64,
    /// Total heading change over the sequence, degrees.
    pub heading_sweep_deg: f64,
    /// Peak amplitude of the background texture, grey levels.
    pub texture_contrast: f64,
    /// Background brightness change from first to last frame.
    pub lighting_drift: f64,
    /// Focal length in pixels for both cameras.
    pub focal_px: f64,
    /// Angle between the two viewing directions, degrees.
    pub baseline_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 200,
            width: 800,
            height: 600,
            seed: 0,
            blob_radius: 20.0,
            heading_sweep_deg: 90.0,
            texture_contrast: 30.0,
            lighting_drift: 25.0,
            focal_px: 900.0,
            baseline_deg: 35.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.width < 64 || self.height < 64 {
            return Err(Error::Validation(
                "synthetic sequence needs >= 1 frame of at least 64x64".into(),
            ));
        }
        if !(self.blob_radius > 0.0 && self.focal_px > 0.0) {
            return Err(Error::Validation("blob radius and focal length must be > 0".into()));
        }
        Ok(())
    }
}

const CAMERA_DISTANCE: f64 = 3.0;
const BODY_LENGTH: f64 = 0.55;
const WINGSPAN: f64 = 0.7;

/// Camera at `center` looking at the world origin, image y pointing along
/// world +y.
fn look_at_camera(id: &str, center: Vector3<f64>, cfg: &SynthConfig) -> Result<CameraModel> {
    let z = (-center).normalize();
    let down = Vector3::new(0.0, 1.0, 0.0);
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let k = Matrix3::new(
        cfg.focal_px,
        0.0,
        cfg.width as f64 / 2.0,
        0.0,
        cfg.focal_px,
        cfg.height as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    );
    let t = -(r * center);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &t);
    CameraModel::new(id, k * rt)
}

/// The two calibrated cameras: one head-on, one rotated about the vertical
/// axis by `baseline_deg`.
pub fn camera_rig(cfg: &SynthConfig) -> Result<[CameraModel; 2]> {
    let a = cfg.baseline_deg.to_radians();
    Ok([
        look_at_camera("cam1", Vector3::new(0.0, 0.0, -CAMERA_DISTANCE), cfg)?,
        look_at_camera(
            "cam2",
            Vector3::new(CAMERA_DISTANCE * a.sin(), 0.0, -CAMERA_DISTANCE * a.cos()),
            cfg,
        )?,
    ])
}

/// Ground-truth 3D landmarks of frame `index` (0-based).
pub fn moth_pose(cfg: &SynthConfig, index: usize) -> [[f64; 3]; 4] {
    let t = if cfg.frames > 1 {
        index as f64 / (cfg.frames - 1) as f64
    } else {
        0.0
    };
    let tau = std::f64::consts::TAU;
    let c = Vector3::new(
        0.35 * (tau * 0.6 * t).sin(),
        0.18 * (tau * 1.1 * t + 0.4).sin(),
        0.15 * (tau * t).cos(),
    );
    let heading = (-cfg.heading_sweep_deg / 2.0 + cfg.heading_sweep_deg * t - 90.0).to_radians();
    let pitch = 0.25 * (tau * 2.3 * t).sin();
    let dir = Vector3::new(heading.cos() * pitch.cos(), heading.sin() * pitch.cos(), pitch.sin());
    let side = Vector3::new(-heading.sin(), heading.cos(), 0.0);
    let flap = (tau * index as f64 / 6.3).sin();
    let lift = Vector3::new(0.0, 0.0, 1.0).cross(&side).normalize();
    let half_span = WINGSPAN / 2.0 * (0.85 + 0.15 * flap);
    let wing_base = c + dir * 0.08;
    let wing = |s: f64| wing_base + side * (s * half_span) + lift * (0.12 * flap) - dir * 0.05;
    let head = c + dir * (BODY_LENGTH / 2.0);
    let abdomen = c - dir * (BODY_LENGTH / 2.0);
    [head, abdomen, wing(-1.0), wing(1.0)].map(|v| [v[0], v[1], v[2]])
}

pub fn ground_truth_poses(cfg: &SynthConfig) -> Vec<Pose3D> {
    (0..cfg.frames)
        .map(|i| Pose3D::from_points(i as u32 + 1, moth_pose(cfg, i)))
        .collect()
}

fn hash_noise(seed: u64, x: usize, y: usize) -> f64 {
    let mut h = seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

struct Texture {
    waves: Vec<([f64; 3], f64, f64, f64)>,
    base: [f64; 3],
    seed: u64,
}

impl Texture {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..7)
            .map(|_| {
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let wavelength: f64 = rng.gen_range(40.0..220.0);
                let k = std::f64::consts::TAU / wavelength;
                let tint = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.5..0.9)];
                (tint, k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Texture {
            waves,
            base: [128.0, 124.0, 105.0],
            seed,
        }
    }

    fn value(&self, c: usize, x: usize, y: usize, contrast: f64, offset: f64) -> f64 {
        let (fx, fy) = (x as f64, y as f64);
        let mut v = 0.0;
        for (tint, kx, ky, phase) in &self.waves {
            v += tint[c] * (kx * fx + ky * fy + phase).sin();
        }
        self.base[c] + offset + contrast * v / self.waves.len() as f64 * 2.0 + 10.0 * hash_noise(self.seed, x, y)
    }
}

fn blend(img: &mut RawImage, x: usize, y: usize, colour: [f64; 3], alpha: f64) {
    for (c, &col) in colour.iter().enumerate() {
        let old = img.at(c, y, x) as f64;
        img.put(c, y, x, (old + alpha * (col - old)).round().clamp(0.0, 255.0) as u8);
    }
}

fn draw_segment(img: &mut RawImage, a: [f64; 2], b: [f64; 2], half_width: f64, colour: [f64; 3], alpha: f64) {
    let (w, h) = (img.width, img.height);
    let x0 = (a[0].min(b[0]) - half_width - 1.0).floor().max(0.0) as usize;
    let x1 = ((a[0].max(b[0]) + half_width + 1.0).ceil().max(0.0) as usize).min(w);
    let y0 = (a[1].min(b[1]) - half_width - 1.0).floor().max(0.0) as usize;
    let y1 = ((a[1].max(b[1]) + half_width + 1.0).ceil().max(0.0) as usize).min(h);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 - a[0], y as f64 - a[1]);
            let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
            let d = (px - t * dx).hypot(py - t * dy);
            let cover = (half_width + 0.5 - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                blend(img, x, y, colour, alpha * cover);
            }
        }
    }
}

/// Renders one frame of one view and its annotation.
pub fn render_frame(cfg: &SynthConfig, cam: &CameraModel, view_seed: u64, index: usize, image_ref: PathBuf) -> Result<(RawImage, AnnotatedFrame)> {
    let pose = moth_pose(cfg, index);
    let mut pts = [[0.0; 2]; 4];
    for (k, p) in pose.iter().enumerate() {
        pts[k] = reproject(*p, cam)?;
    }
    let t = if cfg.frames > 1 { index as f64 / (cfg.frames - 1) as f64 } else { 0.0 };
    let texture = Texture::new(view_seed);
    let offset = cfg.lighting_drift * (t - 0.5);
    let mut data = vec![0u8; 3 * cfg.width * cfg.height];
    let plane = cfg.width * cfg.height;
    data.par_chunks_mut(cfg.width).enumerate().for_each(|(row, line)| {
        let (c, y) = (row / cfg.height, row % cfg.height);
        for (x, v) in line.iter_mut().enumerate() {
            *v = texture.value(c, x, y, cfg.texture_contrast, offset).round().clamp(0.0, 255.0) as u8;
        }
    });
    debug_assert_eq!(data.len(), 3 * plane);
    let mut img = RawImage::new(cfg.width, cfg.height, 3, data)?;

    let r = cfg.blob_radius;
    let mid = [(pts[0][0] + pts[1][0]) / 2.0, (pts[0][1] + pts[1][1]) / 2.0];
    for wing in [pts[2], pts[3]] {
        draw_segment(&mut img, mid, wing, r * 0.45, [95.0, 80.0, 60.0], 0.75);
    }
    draw_segment(&mut img, pts[0], pts[1], r * 0.7, [70.0, 45.0, 30.0], 0.95);
    for (p, colour) in pts.iter().zip(BLOB_COLOURS) {
        draw_segment(&mut img, *p, *p, r, colour.map(f64::from), 1.0);
    }

    let margin = r + 6.0;
    let hull = BBox::hull(pts).expect("four points");
    let x = (hull.x - margin).max(0.0);
    let y = (hull.y - margin).max(0.0);
    let bbox = BBox {
        x,
        y,
        w: (hull.right() + margin).min(cfg.width as f64) - x,
        h: (hull.bottom() + margin).min(cfg.height as f64) - y,
    };
    let frame = AnnotatedFrame {
        frame_id: index as u32 + 1,
        image_ref,
        landmarks: pts,
        occluded: [false; 4],
        bbox,
    };
    frame.validate(cfg.width, cfg.height)?;
    Ok((img, frame))
}

fn view_seed(cfg: &SynthConfig, view: usize) -> u64 {
    cfg.seed.wrapping_mul(31).wrapping_add(view as u64 + 1)
}

/// Every frame of camera `view` (0 or 1), in order.
pub fn render_view(cfg: &SynthConfig, view: usize) -> Result<Vec<(RawImage, AnnotatedFrame)>> {
    cfg.validate()?;
    let rig = camera_rig(cfg)?;
    let cam = rig
        .get(view)
        .ok_or_else(|| Error::Validation(format!("view {view} does not exist (0 or 1)")))?;
    (0..cfg.frames)
        .map(|i| render_frame(cfg, cam, view_seed(cfg, view), i, PathBuf::from(frame_file_name(i as u32 + 1))))
        .collect()
}

pub fn frame_file_name(frame_id: u32) -> String {
    format!("frame_{frame_id:05}.png")
}

/// Files written for one synthetic view.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthView {
    pub annotations: PathBuf,
    pub calibration: PathBuf,
    pub frames: Vec<AnnotatedFrame>,
}

/// Writes both views under `dir/view1` and `dir/view2` (PNG frames,
/// `annotations.csv`, `camera.txt`) plus `dir/poses_gt.csv`.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig) -> Result<[SynthView; 2]> {
    cfg.validate()?;
    let rig = camera_rig(cfg)?;
    let mut out = Vec::with_capacity(2);
    for (v, cam) in rig.iter().enumerate() {
        let vdir = dir.join(format!("view{}", v + 1));
        fs::create_dir_all(&vdir)?;
        let mut frames = Vec::with_capacity(cfg.frames);
        for i in 0..cfg.frames {
            let path = vdir.join(frame_file_name(i as u32 + 1));
            let (img, frame) = render_frame(cfg, cam, view_seed(cfg, v), i, path.clone())?;
            img.save_png(&path)?;
            frames.push(frame);
        }
        let annotations = vdir.join("annotations.csv");
        fs::write(&annotations, annotations_to_csv(&frames, Some(&vdir)))?;
        let calibration = vdir.join("camera.txt");
        fs::write(&calibration, calibration_to_text(&cam.rows()))?;
        out.push(SynthView {
            annotations,
            calibration,
            frames,
        });
    }
    fs::write(dir.join("poses_gt.csv"), pose_csv(&ground_truth_poses(cfg)))?;
    Ok(out.try_into().expect("two views"))
}
