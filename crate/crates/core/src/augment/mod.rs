//! Label-consistent geometric augmentation: random translated crops,
//! optionally preceded by a rotation or scaling about the body center.
//!
//! Every sample is rendered with a single bilinear pass through the composed
//! affine map (pre-transform, crop, resize), and its label goes through the
//! same map, so image and label never disagree by more than interpolation
//! blur.

pub mod crop;
pub mod warp;

use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use crop::{CropGeometry, CropSpec};
pub use warp::{bilinear_resize, warp_bilinear, Affine2, Border};

use crate::dataset::annotations::{AnnotatedFrame, BBox};
use crate::dataset::image::{ChannelMeans, PixelSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Redraws allowed when a random rotation/scale leaves no feasible crop.
pub const MAX_DRAW_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    None,
    /// Translation.
    T,
    /// Translation and rotation.
    TR,
    /// Translation and scaling.
    TS,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['+', '-', '_'], "").as_str() {
            "none" => Ok(SchemeKind::None),
            "t" => Ok(SchemeKind::T),
            "tr" => Ok(SchemeKind::TR),
            "ts" => Ok(SchemeKind::TS),
            other => Err(Error::Validation(format!(
                "unknown augmentation scheme {other:?} (none, t, tr, ts)"
            ))),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::None => "none",
            SchemeKind::T => "t",
            SchemeKind::TR => "tr",
            SchemeKind::TS => "ts",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentScheme {
    pub kind: SchemeKind,
    /// Originals plus generated samples.
    pub target_total: usize,
    pub rng_seed: u64,
    pub rotation_range_deg: (f64, f64),
    pub scale_range: (f64, f64),
}

impl AugmentScheme {
    pub fn new(kind: SchemeKind, target_total: usize, rng_seed: u64) -> Self {
        AugmentScheme {
            kind,
            target_total,
            rng_seed,
            rotation_range_deg: (-45.0, 45.0),
            scale_range: (0.5, 1.5),
        }
    }
}

/// One network-ready sample with its label in output-pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample<T> {
    pub index: usize,
    pub frame_id: u32,
    pub generated: bool,
    /// `(1, 3, out_h, out_w)`, channel means already subtracted.
    pub image: Tensor4<T>,
    pub label: [f64; 8],
    pub crop: CropSpec,
}

/// Per-channel mean of the one-pixel frame border.
pub fn border_mean<S: PixelSource + ?Sized>(image: &S) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    (0..image.channels())
        .map(|c| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for x in 0..w {
                sum += image.value(c, 0, x);
                n += 1;
                if h > 1 {
                    sum += image.value(c, h - 1, x);
                    n += 1;
                }
            }
            for y in 1..h.saturating_sub(1) {
                sum += image.value(c, y, 0);
                n += 1;
                if w > 1 {
                    sum += image.value(c, y, w - 1);
                    n += 1;
                }
            }
            sum / n as f64
        })
        .collect()
}

/// Renders the crop described by `spec` and maps the frame's label.
pub fn render_sample<S: PixelSource + ?Sized, T: Scalar>(
    frame: &AnnotatedFrame,
    image: &S,
    spec: CropSpec,
    means: &ChannelMeans,
) -> Result<AugmentedSample<T>> {
    let border = if spec.rotation_deg == 0.0 && spec.scale == 1.0 {
        Border::Clamp
    } else {
        Border::Fill(border_mean(image))
    };
    let image = warp_bilinear(image, spec.out_w, spec.out_h, &spec.native_map(), &border, means)?;
    Ok(AugmentedSample {
        index: 0,
        frame_id: frame.frame_id,
        generated: false,
        image,
        label: spec.map_label(&frame.label_vector()),
        crop: spec,
    })
}

fn check_frame_size<S: PixelSource + ?Sized>(image: &S, geom: &CropGeometry) -> Result<()> {
    if (image.width(), image.height()) != (geom.frame_w, geom.frame_h) {
        return Err(Error::mismatch(
            format!("{}x{} frame", geom.frame_w, geom.frame_h),
            format!("{}x{} image", image.width(), image.height()),
        ));
    }
    Ok(())
}

/// Body box after rotating/scaling about its own center.
fn transformed_body(frame: &AnnotatedFrame, rotation_deg: f64, scale: f64) -> (BBox, [f64; 2]) {
    let body = frame.body_box();
    let center = body.center();
    let m = Affine2::about_center(center, rotation_deg, scale);
    let hull = BBox::hull(body.corners().map(|p| m.apply(p))).expect("four corners");
    (hull, center)
}

/// Crop spec for a given pre-transform with a uniformly drawn feasible
/// origin.
pub fn draw_crop<R: Rng + ?Sized>(
    frame: &AnnotatedFrame,
    geom: &CropGeometry,
    rotation_deg: f64,
    scale: f64,
    rng: &mut R,
) -> Result<CropSpec> {
    let (hull, center) = transformed_body(frame, rotation_deg, scale);
    let (xs, ys) = geom.feasible_origins(&hull).ok_or_else(|| {
        Error::InfeasibleAugmentation(format!(
            "frame {}: body {:.1}x{:.1} (rotation {rotation_deg:.2} deg, scale {scale:.3}) has no {}x{} crop inside the frame",
            frame.frame_id, hull.w, hull.h, geom.crop_w, geom.crop_h
        ))
    })?;
    let ox = rng.gen_range(xs);
    let oy = rng.gen_range(ys);
    Ok(CropSpec {
        center,
        rotation_deg,
        scale,
        ..CropSpec::translation_only(geom, [ox as f64, oy as f64])
    })
}

/// Translated crop with explicit pre-transform parameters.
pub fn make_sample_with<S: PixelSource + ?Sized, T: Scalar, R: Rng + ?Sized>(
    frame: &AnnotatedFrame,
    image: &S,
    geom: &CropGeometry,
    means: &ChannelMeans,
    rotation_deg: f64,
    scale: f64,
    rng: &mut R,
) -> Result<AugmentedSample<T>> {
    check_frame_size(image, geom)?;
    let spec = draw_crop(frame, geom, rotation_deg, scale, rng)?;
    render_sample(frame, image, spec, means)
}

pub fn make_translated_sample<S: PixelSource + ?Sized, T: Scalar, R: Rng + ?Sized>(
    frame: &AnnotatedFrame,
    image: &S,
    geom: &CropGeometry,
    means: &ChannelMeans,
    rng: &mut R,
) -> Result<AugmentedSample<T>> {
    make_sample_with(frame, image, geom, means, 0.0, 1.0, rng)
}

pub fn make_rotated_sample<S: PixelSource + ?Sized, T: Scalar, R: Rng + ?Sized>(
    frame: &AnnotatedFrame,
    image: &S,
    geom: &CropGeometry,
    means: &ChannelMeans,
    range_deg: (f64, f64),
    rng: &mut R,
) -> Result<AugmentedSample<T>> {
    let angle = rng.gen_range(range_deg.0..=range_deg.1);
    make_sample_with(frame, image, geom, means, angle, 1.0, rng)
}

pub fn make_scaled_sample<S: PixelSource + ?Sized, T: Scalar, R: Rng + ?Sized>(
    frame: &AnnotatedFrame,
    image: &S,
    geom: &CropGeometry,
    means: &ChannelMeans,
    range: (f64, f64),
    rng: &mut R,
) -> Result<AugmentedSample<T>> {
    let factor = rng.gen_range(range.0..=range.1);
    make_sample_with(frame, image, geom, means, 0.0, factor, rng)
}

/// Deterministic crop centered on the body, clamped into the frame. Used for
/// original (non-generated) samples and at test time.
pub fn centered_crop(frame: &AnnotatedFrame, geom: &CropGeometry) -> CropSpec {
    CropSpec::translation_only(geom, geom.centered_origin(&frame.body_box()))
}

/// Whether the centered crop holds the whole body.
pub fn centered_crop_feasible(frame: &AnnotatedFrame, geom: &CropGeometry) -> bool {
    let spec = centered_crop(frame, geom);
    let body = frame.body_box();
    body.x >= spec.origin_x
        && body.y >= spec.origin_y
        && body.right() <= spec.origin_x + geom.crop_w as f64
        && body.bottom() <= spec.origin_y + geom.crop_h as f64
}

/// Per-sample random stream: stream `index` of the scheme seed.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The ordered sample stream for a frame set: every usable original once,
/// then generated samples round-robin over those frames. Any sample can be
/// produced independently from its index.
pub struct AugmentPlan<'a, S> {
    frames: &'a [AnnotatedFrame],
    images: &'a [S],
    scheme: AugmentScheme,
    geometry: CropGeometry,
    means: ChannelMeans,
    usable: Vec<usize>,
}

impl<'a, S: PixelSource> AugmentPlan<'a, S> {
    pub fn new(
        frames: &'a [AnnotatedFrame],
        images: &'a [S],
        scheme: AugmentScheme,
        geometry: CropGeometry,
        means: ChannelMeans,
    ) -> Result<Self> {
        geometry.validate()?;
        if frames.is_empty() {
            return Err(Error::Empty("no frames to augment".into()));
        }
        if frames.len() != images.len() {
            return Err(Error::mismatch(
                format!("{} images", frames.len()),
                images.len(),
            ));
        }
        let mut usable = Vec::with_capacity(frames.len());
        for (i, (f, img)) in frames.iter().zip(images).enumerate() {
            check_frame_size(img, &geometry)?;
            if centered_crop_feasible(f, &geometry) {
                usable.push(i);
            } else {
                warn!(
                    "skipping frame {}: body does not fit a {}x{} crop",
                    f.frame_id, geometry.crop_w, geometry.crop_h
                );
            }
        }
        if usable.is_empty() {
            return Err(Error::InfeasibleAugmentation(
                "no frame admits a feasible crop".into(),
            ));
        }
        if scheme.kind != SchemeKind::None && scheme.target_total < usable.len() {
            return Err(Error::Validation(format!(
                "target total {} is below the {} usable originals",
                scheme.target_total,
                usable.len()
            )));
        }
        Ok(AugmentPlan {
            frames,
            images,
            scheme,
            geometry,
            means,
            usable,
        })
    }

    pub fn originals(&self) -> usize {
        self.usable.len()
    }

    pub fn len(&self) -> usize {
        match self.scheme.kind {
            SchemeKind::None => self.usable.len(),
            _ => self.scheme.target_total,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn generated(&self) -> usize {
        self.len() - self.originals()
    }

    pub fn geometry(&self) -> &CropGeometry {
        &self.geometry
    }

    pub fn sample<T: Scalar>(&self, index: usize) -> Result<AugmentedSample<T>> {
        if index >= self.len() {
            return Err(Error::Size(format!(
                "sample {index} requested from a plan of {}",
                self.len()
            )));
        }
        let originals = self.usable.len();
        if index < originals {
            let fi = self.usable[index];
            let frame = &self.frames[fi];
            let mut s = render_sample(frame, &self.images[fi], centered_crop(frame, &self.geometry), &self.means)?;
            s.index = index;
            return Ok(s);
        }
        let fi = self.usable[(index - originals) % originals];
        let (frame, image) = (&self.frames[fi], &self.images[fi]);
        let mut rng = sample_rng(self.scheme.rng_seed, index);
        let (rot, scale) = (self.scheme.rotation_range_deg, self.scheme.scale_range);
        let mut last_err = None;
        for _ in 0..MAX_DRAW_ATTEMPTS {
            let attempt = match self.scheme.kind {
                SchemeKind::T | SchemeKind::None => {
                    make_translated_sample(frame, image, &self.geometry, &self.means, &mut rng)
                }
                SchemeKind::TR => {
                    make_rotated_sample(frame, image, &self.geometry, &self.means, rot, &mut rng)
                }
                SchemeKind::TS => {
                    make_scaled_sample(frame, image, &self.geometry, &self.means, scale, &mut rng)
                }
            };
            match attempt {
                Ok(mut s) => {
                    s.index = index;
                    s.generated = true;
                    return Ok(s);
                }
                Err(e @ Error::InfeasibleAugmentation(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Samples `range`, rendered in parallel, returned in index order.
    pub fn samples<T: Scalar>(&self, range: std::ops::Range<usize>) -> Result<Vec<AugmentedSample<T>>>
    where
        S: Sync,
    {
        range.into_par_iter().map(|i| self.sample(i)).collect()
    }
}

/// Stacks samples into network inputs `(n, 3, h, w)` and targets
/// `(n, 1, 1, 8)`.
pub fn stack_samples<T: Scalar>(samples: &[AugmentedSample<T>]) -> Result<(Tensor4<T>, Tensor4<T>)> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to stack".into()));
    }
    let images: Vec<Tensor4<T>> = samples.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<T> = samples
        .iter()
        .flat_map(|s| s.label.iter().map(|&v| T::lit(v)))
        .collect();
    Ok((
        Tensor4::stack(&images)?,
        Tensor4::from_vec(Shape4::new(samples.len(), 1, 1, 8), labels)?,
    ))
}

pub const CROP_SIDECAR_HEADER: &str =
    "index,frame_id,generated,origin_x,origin_y,crop_w,crop_h,out_w,out_h,center_x,center_y,rotation_deg,scale";

/// One row per sample describing its crop, so predictions can be mapped
/// back to native coordinates.
pub fn crop_sidecar_csv<T>(samples: &[AugmentedSample<T>]) -> String {
    let mut out = String::from(CROP_SIDECAR_HEADER);
    out.push('\n');
    for s in samples {
        write_sidecar_row(&mut out, s.index, s.frame_id, s.generated, &s.crop);
    }
    out
}

pub fn write_sidecar_row(out: &mut String, index: usize, frame_id: u32, generated: bool, c: &CropSpec) {
    let _ = writeln!(
        out,
        "{index},{frame_id},{},{},{},{},{},{},{},{},{},{},{}",
        generated as u8,
        c.origin_x,
        c.origin_y,
        c.crop_w,
        c.crop_h,
        c.out_w,
        c.out_h,
        c.center[0],
        c.center[1],
        c.rotation_deg,
        c.scale
    );
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SidecarRow {
    pub index: usize,
    pub frame_id: u32,
    pub generated: bool,
    pub crop: CropSpec,
}

pub fn parse_crop_sidecar(text: &str) -> Result<Vec<SidecarRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CROP_SIDECAR_HEADER) {
        return Err(Error::Format("crop sidecar header missing".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |m: String| Error::Format(format!("crop sidecar line {}: {m}", i + 2));
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 13 {
                return Err(bad(format!("expected 13 columns, got {}", c.len())));
            }
            let f = |k: usize| c[k].parse::<f64>().map_err(|e| bad(format!("{e}")));
            let u = |k: usize| c[k].parse::<usize>().map_err(|e| bad(format!("{e}")));
            Ok(SidecarRow {
                index: u(0)?,
                frame_id: c[1].parse().map_err(|e| bad(format!("{e}")))?,
                generated: c[2] == "1",
                crop: CropSpec {
                    origin_x: f(3)?,
                    origin_y: f(4)?,
                    crop_w: u(5)?,
                    crop_h: u(6)?,
                    out_w: u(7)?,
                    out_h: u(8)?,
                    center: [f(9)?, f(10)?],
                    rotation_deg: f(11)?,
                    scale: f(12)?,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::image::RawImage;
    use std::path::PathBuf;

    fn frame(bbox: BBox, landmarks: [[f64; 2]; 4]) -> AnnotatedFrame {
        AnnotatedFrame {
            frame_id: 1,
            image_ref: PathBuf::from("x.png"),
            landmarks,
            occluded: [false; 4],
            bbox,
        }
    }

    fn centered_frame() -> AnnotatedFrame {
        let b = BBox {
            x: 350.0,
            y: 250.0,
            w: 100.0,
            h: 100.0,
        };
        frame(b, [[400.0, 300.0], [410.0, 340.0], [360.0, 260.0], [440.0, 260.0]])
    }

    fn gray() -> RawImage {
        let mut img = RawImage::filled(800, 600, 1, 0).unwrap();
        for y in 0..600 {
            for x in 0..800 {
                img.put(0, y, x, ((x * 7 + y * 3) % 251) as u8);
            }
        }
        img
    }

    #[test]
    fn exact_fit_is_deterministic() {
        let f = frame(
            BBox {
                x: 100.0,
                y: 100.0,
                w: 600.0,
                h: 400.0,
            },
            [[200.0, 200.0], [300.0, 300.0], [400.0, 400.0], [500.0, 450.0]],
        );
        let g = CropGeometry::default();
        let a = draw_crop(&f, &g, 0.0, 1.0, &mut sample_rng(1, 0)).unwrap();
        let b = draw_crop(&f, &g, 0.0, 1.0, &mut sample_rng(99, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.origin_x, a.origin_y), (100.0, 100.0));
    }

    #[test]
    fn zero_angle_matches_translation() {
        let (f, img, g) = (centered_frame(), gray(), CropGeometry::default().with_output(32, 32));
        let a: AugmentedSample<f64> =
            make_translated_sample(&f, &img, &g, &[0.0; 3], &mut sample_rng(3, 7)).unwrap();
        let b: AugmentedSample<f64> =
            make_sample_with(&f, &img, &g, &[0.0; 3], 0.0, 1.0, &mut sample_rng(3, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_about_center() {
        let f = centered_frame();
        let c = f.body_box().center();
        let spec = CropSpec {
            center: c,
            rotation_deg: 90.0,
            scale: 1.0,
            ..CropSpec::translation_only(&CropGeometry::default(), [0.0, 0.0])
        };
        let p = spec.pre_transform().apply([c[0] + 10.0, c[1]]);
        assert!((p[0] - c[0]).abs() < 1e-9 && (p[1] - (c[1] + 10.0)).abs() < 1e-9);
        let q = spec.pre_transform().apply(c);
        assert!((q[0] - c[0]).abs() < 1e-9 && (q[1] - c[1]).abs() < 1e-9);
    }

    #[test]
    fn half_scale_halves_offsets() {
        let c = [400.0, 300.0];
        let m = Affine2::about_center(c, 0.0, 0.5);
        assert_eq!(m.apply([420.0, 300.0]), [410.0, 300.0]);
    }

    #[test]
    fn oversized_scaled_body_infeasible() {
        let f = frame(
            BBox {
                x: 175.0,
                y: 250.0,
                w: 450.0,
                h: 100.0,
            },
            [[200.0, 300.0], [300.0, 300.0], [400.0, 300.0], [500.0, 300.0]],
        );
        let g = CropGeometry::default();
        assert!(matches!(
            draw_crop(&f, &g, 0.0, 1.5, &mut sample_rng(0, 0)),
            Err(Error::InfeasibleAugmentation(_))
        ));
        assert!(draw_crop(&f, &g, 0.0, 1.0, &mut sample_rng(0, 0)).is_ok());
    }

    #[test]
    fn plan_counts() {
        let frames: Vec<_> = (0..4).map(|_| centered_frame()).collect();
        let img = RawImage::filled(800, 600, 1, 9).unwrap();
        let images = vec![img; 4];
        let g = CropGeometry::default().with_output(8, 8);
        let p = AugmentPlan::new(&frames, &images, AugmentScheme::new(SchemeKind::T, 10, 0), g, [0.0; 3]).unwrap();
        assert_eq!((p.originals(), p.generated(), p.len()), (4, 6, 10));
        let none = AugmentPlan::new(&frames, &images, AugmentScheme::new(SchemeKind::None, 99, 0), g, [0.0; 3]).unwrap();
        assert_eq!(none.len(), 4);
        let exact = AugmentPlan::new(&frames, &images, AugmentScheme::new(SchemeKind::T, 4, 0), g, [0.0; 3]).unwrap();
        assert_eq!(exact.generated(), 0);
    }

    #[test]
    fn plan_is_order_independent() {
        let frames: Vec<_> = (0..3).map(|_| centered_frame()).collect();
        let images = vec![gray(); 3];
        let g = CropGeometry::default().with_output(16, 16);
        let p = AugmentPlan::new(&frames, &images, AugmentScheme::new(SchemeKind::TR, 12, 5), g, [1.0; 3]).unwrap();
        let all: Vec<AugmentedSample<f64>> = p.samples(0..12).unwrap();
        let one: AugmentedSample<f64> = p.sample(9).unwrap();
        assert_eq!(all[9], one);
        assert!(all[3..].iter().all(|s| s.generated));
    }

    #[test]
    fn sidecar_round_trip() {
        let frames = vec![centered_frame()];
        let images = vec![gray()];
        let g = CropGeometry::default().with_output(8, 8);
        let p = AugmentPlan::new(&frames, &images, AugmentScheme::new(SchemeKind::TS, 3, 2), g, [0.0; 3]).unwrap();
        let s: Vec<AugmentedSample<f32>> = p.samples(0..3).unwrap();
        let rows = parse_crop_sidecar(&crop_sidecar_csv(&s)).unwrap();
        assert_eq!(rows.len(), 3);
        for (r, s) in rows.iter().zip(&s) {
            assert_eq!(r.crop, s.crop);
            assert_eq!(r.generated, s.generated);
        }
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("T+R".parse::<SchemeKind>().unwrap(), SchemeKind::TR);
        assert_eq!("none".parse::<SchemeKind>().unwrap(), SchemeKind::None);
        assert!("x".parse::<SchemeKind>().is_err());
    }
}
