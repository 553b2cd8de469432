use std::ops::RangeInclusive;

use crate::augment::warp::Affine2;
use crate::dataset::annotations::{BBox, NATIVE_HEIGHT, NATIVE_WIDTH};
use crate::error::{Error, Result};

/// Frame, crop and network-input sizes in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropGeometry {
    pub frame_w: usize,
    pub frame_h: usize,
    pub crop_w: usize,
    pub crop_h: usize,
    pub out_w: usize,
    pub out_h: usize,
}

impl Default for CropGeometry {
    /// 600x400 crops of 800x600 frames, resized to 224x224.
    fn default() -> Self {
        CropGeometry {
            frame_w: NATIVE_WIDTH,
            frame_h: NATIVE_HEIGHT,
            crop_w: 600,
            crop_h: 400,
            out_w: 224,
            out_h: 224,
        }
    }
}

impl CropGeometry {
    pub fn with_output(mut self, out_w: usize, out_h: usize) -> Self {
        self.out_w = out_w;
        self.out_h = out_h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_w == 0 || self.crop_h == 0 || self.out_w == 0 || self.out_h == 0 {
            return Err(Error::InvalidGeometry("crop and output sizes must be >= 1".into()));
        }
        if self.crop_w > self.frame_w || self.crop_h > self.frame_h {
            return Err(Error::InvalidGeometry(format!(
                "{}x{} crop does not fit a {}x{} frame",
                self.crop_w, self.crop_h, self.frame_w, self.frame_h
            )));
        }
        Ok(())
    }

    /// Integer crop origins keeping the crop inside the frame and `body`
    /// inside the crop, or `None` when no origin works.
    pub fn feasible_origins(&self, body: &BBox) -> Option<(RangeInclusive<i64>, RangeInclusive<i64>)> {
        let axis = |lo: f64, hi: f64, crop: usize, frame: usize| -> Option<RangeInclusive<i64>> {
            if !(lo.is_finite() && hi.is_finite()) {
                return None;
            }
            let min = ((hi - crop as f64).ceil() as i64).max(0);
            let max = (lo.floor() as i64).min(frame as i64 - crop as i64);
            (min <= max).then_some(min..=max)
        };
        Some((
            axis(body.x, body.right(), self.crop_w, self.frame_w)?,
            axis(body.y, body.bottom(), self.crop_h, self.frame_h)?,
        ))
    }

    /// Crop centered on `body`, clamped into the frame.
    pub fn centered_origin(&self, body: &BBox) -> [f64; 2] {
        let [cx, cy] = body.center();
        let ox = (cx - self.crop_w as f64 / 2.0)
            .round()
            .clamp(0.0, (self.frame_w - self.crop_w) as f64);
        let oy = (cy - self.crop_h as f64 / 2.0)
            .round()
            .clamp(0.0, (self.frame_h - self.crop_h) as f64);
        [ox, oy]
    }
}

/// The full geometric record linking a network-input image to its native
/// frame: an optional rotation/scale about `center`, then a crop at
/// `origin` of `crop_w x crop_h` resized to `out_w x out_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub crop_w: usize,
    pub crop_h: usize,
    pub out_w: usize,
    pub out_h: usize,
    pub center: [f64; 2],
    pub rotation_deg: f64,
    pub scale: f64,
}

impl CropSpec {
    pub fn translation_only(geom: &CropGeometry, origin: [f64; 2]) -> Self {
        CropSpec {
            origin_x: origin[0],
            origin_y: origin[1],
            crop_w: geom.crop_w,
            crop_h: geom.crop_h,
            out_w: geom.out_w,
            out_h: geom.out_h,
            center: [0.0, 0.0],
            rotation_deg: 0.0,
            scale: 1.0,
        }
    }

    /// Native frame -> transformed frame (rotation/scale about the center).
    pub fn pre_transform(&self) -> Affine2 {
        if self.rotation_deg == 0.0 && self.scale == 1.0 {
            Affine2::IDENTITY
        } else {
            Affine2::about_center(self.center, self.rotation_deg, self.scale)
        }
    }

    /// Transformed frame -> output pixels.
    pub fn crop_map(&self) -> Affine2 {
        let sx = self.out_w as f64 / self.crop_w as f64;
        let sy = self.out_h as f64 / self.crop_h as f64;
        Affine2 {
            a: sx,
            d: sy,
            tx: -self.origin_x * sx,
            ty: -self.origin_y * sy,
            ..Affine2::IDENTITY
        }
    }

    /// Native frame -> output pixels.
    pub fn label_map(&self) -> Affine2 {
        self.crop_map().then_after(&self.pre_transform())
    }

    /// Output pixels -> native frame; also the sampling map for rendering.
    pub fn native_map(&self) -> Affine2 {
        self.label_map()
            .inverse()
            .expect("crop maps have positive scale")
    }

    pub fn map_label(&self, native: &[f64; 8]) -> [f64; 8] {
        let pre = map_points(&self.pre_transform(), native);
        let mut out = [0.0; 8];
        for k in 0..4 {
            out[2 * k] = (pre[2 * k] - self.origin_x) * self.out_w as f64 / self.crop_w as f64;
            out[2 * k + 1] = (pre[2 * k + 1] - self.origin_y) * self.out_h as f64 / self.crop_h as f64;
        }
        out
    }

    /// Inverse of [`CropSpec::map_label`]: `origin + p * crop / out` per
    /// axis, then the inverse pre-transform.
    pub fn unmap_label(&self, output: &[f64; 8]) -> [f64; 8] {
        let mut pre = [0.0; 8];
        for k in 0..4 {
            pre[2 * k] = self.origin_x + output[2 * k] * self.crop_w as f64 / self.out_w as f64;
            pre[2 * k + 1] = self.origin_y + output[2 * k + 1] * self.crop_h as f64 / self.out_h as f64;
        }
        let pre_inv = self
            .pre_transform()
            .inverse()
            .expect("pre-transforms have positive scale");
        map_points(&pre_inv, &pre)
    }
}

pub(crate) fn map_points(m: &Affine2, v: &[f64; 8]) -> [f64; 8] {
    let mut out = [0.0; 8];
    for k in 0..4 {
        let p = m.apply([v[2 * k], v[2 * k + 1]]);
        out[2 * k] = p[0];
        out[2 * k + 1] = p[1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_examples() {
        let g = CropGeometry::default();
        let spec = CropSpec::translation_only(&g, [100.0, 100.0]);
        let l = spec.map_label(&[100.0, 100.0, 400.0, 300.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&l[..4], &[0.0, 0.0, 112.0, 112.0]);
        let back = spec.unmap_label(&l);
        assert_eq!(&back[..4], &[100.0, 100.0, 400.0, 300.0]);
    }

    #[test]
    fn exact_fit_has_single_origin() {
        let g = CropGeometry::default();
        let b = BBox {
            x: 100.0,
            y: 100.0,
            w: 600.0,
            h: 400.0,
        };
        let (xs, ys) = g.feasible_origins(&b).unwrap();
        assert_eq!((xs, ys), (100..=100, 100..=100));
    }

    #[test]
    fn oversized_body_infeasible() {
        let g = CropGeometry::default();
        let b = BBox {
            x: 10.0,
            y: 10.0,
            w: 675.0,
            h: 100.0,
        };
        assert!(g.feasible_origins(&b).is_none());
    }

    #[test]
    fn centered_origin_clamps() {
        let g = CropGeometry::default();
        let b = BBox {
            x: 0.0,
            y: 0.0,
            w: 20.0,
            h: 20.0,
        };
        assert_eq!(g.centered_origin(&b), [0.0, 0.0]);
        let b = BBox {
            x: 390.0,
            y: 290.0,
            w: 20.0,
            h: 20.0,
        };
        assert_eq!(g.centered_origin(&b), [100.0, 100.0]);
    }
}
