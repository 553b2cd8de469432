use crate::dataset::image::PixelSource;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// 2D affine map `p -> M p + t` with `M = [[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine2 {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Affine2 {
            a: sx,
            d: sy,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `degrees` in image coordinates (y down), so +90 takes
    /// `+x` to `+y`.
    pub fn rotation_deg(degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Affine2 {
            a: c,
            b: -s,
            c: s,
            d: c,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// Similarity about `center`: rotate by `degrees`, then scale by `scale`.
    pub fn about_center(center: [f64; 2], degrees: f64, scale: f64) -> Self {
        Self::translation(center[0], center[1])
            .then_after(&Self::scaling(scale, scale))
            .then_after(&Self::rotation_deg(degrees))
            .then_after(&Self::translation(-center[0], -center[1]))
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn then_after(&self, inner: &Affine2) -> Affine2 {
        Affine2 {
            a: self.a * inner.a + self.b * inner.c,
            b: self.a * inner.b + self.b * inner.d,
            c: self.c * inner.a + self.d * inner.c,
            d: self.c * inner.b + self.d * inner.d,
            tx: self.a * inner.tx + self.b * inner.ty + self.tx,
            ty: self.c * inner.tx + self.d * inner.ty + self.ty,
        }
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] + self.b * p[1] + self.tx,
            self.c * p[0] + self.d * p[1] + self.ty,
        ]
    }

    pub fn inverse(&self) -> Result<Affine2> {
        let det = self.a * self.d - self.b * self.c;
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(Error::InvalidGeometry("singular affine map".into()));
        }
        let (a, b, c, d) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Ok(Affine2 {
            a,
            b,
            c,
            d,
            tx: -(a * self.tx + b * self.ty),
            ty: -(c * self.tx + d * self.ty),
        })
    }
}

/// What to read for bilinear taps that fall outside the source.
#[derive(Debug, Clone, PartialEq)]
pub enum Border {
    /// Clamp tap coordinates to the nearest edge pixel.
    Clamp,
    /// Use a constant per channel.
    Fill(Vec<f64>),
}

/// Resamples `src` onto an `out_w x out_h` grid. `out_to_src` maps output
/// pixel centers (integer coordinates) to continuous source coordinates;
/// each output value blends the four surrounding source pixels. `offsets`
/// is subtracted per channel from every output value.
pub fn warp_bilinear<S: PixelSource + ?Sized, T: Scalar>(
    src: &S,
    out_w: usize,
    out_h: usize,
    out_to_src: &Affine2,
    border: &Border,
    offsets: &[f64; 3],
) -> Result<Tensor4<T>> {
    let (ch, sh, sw) = (src.channels(), src.height(), src.width());
    if ch == 0 || sh == 0 || sw == 0 {
        return Err(Error::InvalidShape("empty source image".into()));
    }
    let out_c = if ch == 1 { 3 } else { ch };
    if let Border::Fill(v) = border {
        if v.len() != ch {
            return Err(Error::mismatch(format!("{ch} fill values"), v.len()));
        }
    }
    let mut out = Tensor4::zeros(Shape4::new(1, out_c, out_h, out_w))?;
    let plane = out_w * out_h;
    let (maxx, maxy) = (sw as isize - 1, sh as isize - 1);
    let tap = |c: usize, y: isize, x: isize| -> f64 {
        if x >= 0 && y >= 0 && x <= maxx && y <= maxy {
            return src.value(c, y as usize, x as usize);
        }
        match border {
            Border::Clamp => src.value(c, y.clamp(0, maxy) as usize, x.clamp(0, maxx) as usize),
            Border::Fill(v) => v[c],
        }
    };
    let data = out.data_mut();
    for v in 0..out_h {
        for u in 0..out_w {
            let [sx, sy] = out_to_src.apply([u as f64, v as f64]);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..ch {
                let top = tap(c, y0, x0) * (1.0 - fx) + tap(c, y0, x0 + 1) * fx;
                let bot = tap(c, y0 + 1, x0) * (1.0 - fx) + tap(c, y0 + 1, x0 + 1) * fx;
                let val = top * (1.0 - fy) + bot * fy;
                if ch == 1 {
                    for oc in 0..3 {
                        data[oc * plane + v * out_w + u] = T::lit(val - offsets[oc]);
                    }
                } else {
                    data[c * plane + v * out_w + u] = T::lit(val - offsets[c]);
                }
            }
        }
    }
    Ok(out)
}

/// Center-aligned bilinear resize of sample 0 of `image` (edge-clamped).
pub fn bilinear_resize<T: Scalar>(image: &Tensor4<T>, out_w: usize, out_h: usize) -> Result<Tensor4<T>> {
    let s = image.shape();
    if out_w == 0 || out_h == 0 || s.w == 0 || s.h == 0 {
        return Err(Error::InvalidShape("resize dimensions must be >= 1".into()));
    }
    if (out_w, out_h) == (s.w, s.h) && s.n == 1 {
        return Ok(image.clone());
    }
    let src_coord = |o: usize, n_in: usize, n_out: usize| (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    let (ch, plane_in, plane_out) = (s.c, s.h * s.w, out_w * out_h);
    let mut out = Tensor4::zeros(Shape4::new(1, ch, out_h, out_w))?;
    let src = image.sample(0);
    let (maxx, maxy) = (s.w - 1, s.h - 1);
    let dst = out.data_mut();
    for v in 0..out_h {
        for u in 0..out_w {
            let sx = src_coord(u, s.w, out_w).clamp(0.0, maxx as f64);
            let sy = src_coord(v, s.h, out_h).clamp(0.0, maxy as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(maxx), (y0 + 1).min(maxy));
            let (fx, fy) = (T::lit(sx - x0 as f64), T::lit(sy - y0 as f64));
            let one = T::one();
            for c in 0..ch {
                let p = &src[c * plane_in..(c + 1) * plane_in];
                let at = |y: usize, x: usize| p[y * s.w + x];
                let top = at(y0, x0) * (one - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (one - fx) + at(y1, x1) * fx;
                dst[c * plane_out + v * out_w + u] = top * (one - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, v: Vec<f64>) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, h, w), v).unwrap()
    }

    #[test]
    fn constant_stays_constant() {
        let t = img(3, 5, vec![7.0; 15]);
        let r = bilinear_resize(&t, 9, 4).unwrap();
        assert_eq!(r.shape(), Shape4::new(1, 1, 4, 9));
        assert!(r.data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn identity_resize_is_bit_identical() {
        let t = img(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(bilinear_resize(&t, 3, 2).unwrap(), t);
    }

    #[test]
    fn two_by_two_to_three_by_three_center() {
        let t = img(2, 2, vec![0.0, 2.0, 4.0, 6.0]);
        let r = bilinear_resize(&t, 3, 3).unwrap();
        assert_eq!(r.at(0, 0, 1, 1), 3.0);
    }

    #[test]
    fn affine_inverse_and_rotation() {
        let m = Affine2::about_center([10.0, 20.0], 30.0, 1.3);
        let inv = m.inverse().unwrap();
        let p = [3.0, -4.0];
        let q = inv.apply(m.apply(p));
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        let r = Affine2::about_center([5.0, 5.0], 90.0, 1.0).apply([15.0, 5.0]);
        assert!((r[0] - 5.0).abs() < 1e-12 && (r[1] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn warp_fill_outside() {
        let t = img(2, 2, vec![1.0; 4]);
        let out: Tensor4<f64> = warp_bilinear(
            &t,
            1,
            1,
            &Affine2::translation(10.0, 10.0),
            &Border::Fill(vec![5.0]),
            &[0.0; 3],
        )
        .unwrap();
        assert_eq!(out.data(), &[5.0, 5.0, 5.0]);
    }
}
