//! Test loss in network-input space, per-landmark MAE at native resolution,
//! and CSV/SVG report emission.

pub mod report;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::augment::{render_sample, stack_samples, CropGeometry, CropSpec};
use crate::dataset::annotations::{AnnotatedFrame, LANDMARK_NAMES};
use crate::dataset::image::{ChannelMeans, PixelSource};
use crate::error::{Error, Result};
use crate::nn::{dataset_loss, forward_predictions, predict, Batch, NetworkSpec, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub use report::{emit_report, loss_svg, mae_csv, mae_svg, parse_mae_csv, ReferenceLine, ReportFiles};

/// Whether frames with any occluded landmark count toward MAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OcclusionMode {
    #[default]
    IncludeAll,
    ExcludeOccludedFrames,
}

impl FromStr for OcclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "include-all" => Ok(OcclusionMode::IncludeAll),
            "exclude-occluded" => Ok(OcclusionMode::ExcludeOccludedFrames),
            other => Err(Error::Validation(format!(
                "unknown occlusion mode {other:?} (include-all, exclude-occluded)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Squared loss in network-input space, when computed.
    pub test_loss: Option<f64>,
    /// Mean Euclidean error per landmark in native pixels, in
    /// [`LANDMARK_NAMES`] order.
    pub mae: [f64; 4],
    pub total_mae: f64,
    pub frames_evaluated: usize,
    pub occlusion_excluded: usize,
}

impl EvalResult {
    pub fn with_test_loss(mut self, loss: f64) -> Self {
        self.test_loss = Some(loss);
        self
    }

    pub fn landmark_mae(&self, name: &str) -> Option<f64> {
        LANDMARK_NAMES.iter().position(|&n| n == name).map(|i| self.mae[i])
    }
}

/// Mean squared loss of `net` over a preprocessed test set.
pub fn test_loss<T: Scalar>(net: &NetworkSpec, params: &Parameters<T>, test: &Batch<T>) -> Result<f64> {
    dataset_loss(net, params, test, 32)
}

/// Network-output coordinates back to native frame pixels.
pub fn map_to_native(pred: &[f64; 8], crop: &CropSpec) -> [f64; 8] {
    crop.unmap_label(pred)
}

/// Euclidean error of each landmark.
pub fn landmark_errors(pred: &[f64; 8], gt: &[f64; 8]) -> [f64; 4] {
    std::array::from_fn(|k| (pred[2 * k] - gt[2 * k]).hypot(pred[2 * k + 1] - gt[2 * k + 1]))
}

/// Per-landmark MAE of native-space predictions against `gts`.
pub fn mae_per_landmark(preds: &[[f64; 8]], gts: &[AnnotatedFrame], mode: OcclusionMode) -> Result<EvalResult> {
    if preds.len() != gts.len() {
        return Err(Error::mismatch(format!("{} predictions", gts.len()), preds.len()));
    }
    let mut sums = [0.0; 4];
    let mut kept = 0usize;
    for (p, gt) in preds.iter().zip(gts) {
        if mode == OcclusionMode::ExcludeOccludedFrames && gt.any_occluded() {
            continue;
        }
        let e = landmark_errors(p, &gt.label_vector());
        for k in 0..4 {
            sums[k] += e[k];
        }
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::Empty(format!(
            "no frames left to evaluate ({} excluded as occluded)",
            gts.len()
        )));
    }
    let mae = sums.map(|s| s / kept as f64);
    Ok(EvalResult {
        test_loss: None,
        mae,
        total_mae: mae.iter().sum(),
        frames_evaluated: kept,
        occlusion_excluded: gts.len() - kept,
    })
}

/// Test-time crop: centered on the body box, clamped into the frame.
pub fn test_crop(frame: &AnnotatedFrame, geom: &CropGeometry) -> CropSpec {
    crate::augment::centered_crop(frame, geom)
}

/// Predicts native-space landmarks for one frame through its test crop.
pub fn predict_native<S: PixelSource + ?Sized, T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    frame: &AnnotatedFrame,
    image: &S,
    geom: &CropGeometry,
    means: &ChannelMeans,
) -> Result<[f64; 8]> {
    let crop = test_crop(frame, geom);
    let sample = render_sample::<S, T>(frame, image, crop, means)?;
    let out = predict(net, params, &sample.image)?;
    if out.len() != 8 {
        return Err(Error::mismatch("8 network outputs", out.len()));
    }
    let pred: [f64; 8] = std::array::from_fn(|i| out[i].as_f64());
    Ok(map_to_native(&pred, &crop))
}

/// Test-crop samples for every frame, stacked into a batch, with the crops
/// used.
pub fn test_samples<S: PixelSource + Sync, T: Scalar>(
    frames: &[AnnotatedFrame],
    images: &[S],
    geom: &CropGeometry,
    means: &ChannelMeans,
) -> Result<(Batch<T>, Vec<CropSpec>)> {
    if frames.len() != images.len() {
        return Err(Error::mismatch(format!("{} images", frames.len()), images.len()));
    }
    let samples = frames
        .par_iter()
        .zip(images)
        .map(|(f, img)| render_sample::<S, T>(f, img, test_crop(f, geom), means))
        .collect::<Result<Vec<_>>>()?;
    let (inputs, targets) = stack_samples(&samples)?;
    Ok((Batch::new(inputs, targets)?, samples.iter().map(|s| s.crop).collect()))
}

/// Native-space predictions for a stacked batch given each sample's crop.
pub fn predict_batch_native<T: Scalar>(
    net: &NetworkSpec,
    params: &Parameters<T>,
    inputs: &Tensor4<T>,
    crops: &[CropSpec],
) -> Result<Vec<[f64; 8]>> {
    let n = inputs.shape().n;
    if crops.len() != n {
        return Err(Error::mismatch(format!("{n} crops"), crops.len()));
    }
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(32) {
        let idx: Vec<usize> = (start..(start + 32).min(n)).collect();
        let pred = forward_predictions(net, params, &inputs.gather(&idx)?)?;
        for (j, &i) in idx.iter().enumerate() {
            let row = &pred.data()[j * 8..(j + 1) * 8];
            let p: [f64; 8] = std::array::from_fn(|k| row[k].as_f64());
            out.push(map_to_native(&p, &crops[i]));
        }
    }
    Ok(out)
}

pub const PREDICTION_HEADER: &str = "frame_id,head_x,head_y,abd_x,abd_y,lw_x,lw_y,rw_x,rw_y";

/// One row per frame of native-space landmark predictions.
pub fn predictions_csv(rows: &[(u32, [f64; 8])]) -> String {
    let mut s = String::from(PREDICTION_HEADER);
    s.push('\n');
    for (id, p) in rows {
        let _ = write!(s, "{id}");
        for v in p {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_predictions_csv(text: &str, source: &Path) -> Result<Vec<(u32, [f64; 8])>> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PREDICTION_HEADER => {}
        _ => return Err(err(1, format!("expected header {PREDICTION_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != 9 {
            return Err(err(i + 1, format!("expected 9 columns, got {}", c.len())));
        }
        let id = c[0].parse().map_err(|_| err(i + 1, format!("bad frame id {:?}", c[0])))?;
        let mut p = [0.0; 8];
        for (k, v) in p.iter_mut().enumerate() {
            *v = c[k + 1]
                .parse()
                .map_err(|_| err(i + 1, format!("bad number {:?}", c[k + 1])))?;
        }
        rows.push((id, p));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::annotations::BBox;
    use std::path::PathBuf;

    fn frame(id: u32, pts: [f64; 8], occ: [bool; 4]) -> AnnotatedFrame {
        AnnotatedFrame {
            frame_id: id,
            image_ref: PathBuf::from("x.png"),
            landmarks: crate::dataset::annotations::unflatten(&pts),
            occluded: occ,
            bbox: BBox {
                x: 0.0,
                y: 0.0,
                w: 1.0,
                h: 1.0,
            },
        }
    }

    #[test]
    fn predictions_round_trip() {
        let rows = vec![(3, [0.1, 2.0 / 3.0, 5.0, 6.0, 7.0, 8.0, 9.5, 1e-7])];
        let text = predictions_csv(&rows);
        assert_eq!(parse_predictions_csv(&text, Path::new("p.csv")).unwrap(), rows);
        assert!(parse_predictions_csv(&predictions_csv(&[]), Path::new("p.csv")).unwrap().is_empty());
    }

    #[test]
    fn mae_table_round_trip() {
        let r = EvalResult {
            test_loss: None,
            mae: [1.5, 2.0 / 3.0, 0.0, 4.0],
            total_mae: 1.5 + 2.0 / 3.0 + 4.0,
            frames_evaluated: 12,
            occlusion_excluded: 0,
        };
        assert_eq!(parse_mae_csv(&mae_csv(&r)).unwrap(), r);
    }

    #[test]
    fn map_to_native_examples() {
        let c = CropSpec::translation_only(&CropGeometry::default(), [100.0, 100.0]);
        let n = map_to_native(&[0.0, 0.0, 112.0, 112.0, 0.0, 0.0, 0.0, 0.0], &c);
        assert_eq!(&n[..4], &[100.0, 100.0, 400.0, 300.0]);
    }

    #[test]
    fn head_errors_three_and_five() {
        let gts = [frame(1, [0.0; 8], [false; 4]), frame(2, [0.0; 8], [false; 4])];
        let mut a = [0.0; 8];
        a[0] = 3.0;
        let mut b = [0.0; 8];
        b[0] = 3.0;
        b[1] = 4.0;
        b[2] = 5.0;
        let r = mae_per_landmark(&[a, b], &gts, OcclusionMode::IncludeAll).unwrap();
        assert_eq!(r.mae, [4.0, 2.5, 0.0, 0.0]);
        assert_eq!(r.total_mae, 6.5);
    }

    #[test]
    fn occlusion_filter_counts() {
        let gts = [
            frame(1, [0.0; 8], [false, true, false, false]),
            frame(2, [0.0; 8], [false; 4]),
        ];
        let r = mae_per_landmark(&[[1.0; 8], [0.0; 8]], &gts, OcclusionMode::ExcludeOccludedFrames).unwrap();
        assert_eq!((r.frames_evaluated, r.occlusion_excluded), (1, 1));
        assert_eq!(r.total_mae, 0.0);
        let only = [gts[0].clone()];
        assert!(matches!(
            mae_per_landmark(&[[0.0; 8]], &only, OcclusionMode::ExcludeOccludedFrames),
            Err(Error::Empty(_))
        ));
    }
}
