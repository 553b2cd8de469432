use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Native frame width in pixels.
pub const NATIVE_WIDTH: usize = 800;
/// Native frame height in pixels.
pub const NATIVE_HEIGHT: usize = 600;

/// Landmark order used everywhere a label vector appears.
pub const LANDMARK_NAMES: [&str; 4] = ["head", "abdomen_tip", "left_wing_tip", "right_wing_tip"];

pub const ANNOTATION_HEADER: &str = "frame_id,image,head_x,head_y,abd_x,abd_y,lw_x,lw_y,rw_x,rw_y,occ_head,occ_abd,occ_lw,occ_rw,bbox_x,bbox_y,bbox_w,bbox_h";

/// Axis-aligned box `(x, y, w, h)` in native pixels, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn center(&self) -> [f64; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x, self.y],
            [self.right(), self.y],
            [self.x, self.bottom()],
            [self.right(), self.bottom()],
        ]
    }

    /// Smallest box holding all `points`.
    pub fn hull(points: impl IntoIterator<Item = [f64; 2]>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first[0], first[1], first[0], first[1]);
        for [x, y] in it {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Some(BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::hull(self.corners().into_iter().chain(other.corners())).unwrap()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x && p[0] <= self.right() && p[1] >= self.y && p[1] <= self.bottom()
    }
}

/// One annotated video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    /// 1-based.
    pub frame_id: u32,
    pub image_ref: PathBuf,
    /// Head, abdomen tip, left wing tip, right wing tip.
    pub landmarks: [[f64; 2]; 4],
    pub occluded: [bool; 4],
    pub bbox: BBox,
}

impl AnnotatedFrame {
    /// The 8-scalar label `(x0, y0, ..., x3, y3)`.
    pub fn label_vector(&self) -> [f64; 8] {
        flatten(&self.landmarks)
    }

    pub fn any_occluded(&self) -> bool {
        self.occluded.iter().any(|&o| o)
    }

    /// The bbox grown to cover every landmark.
    pub fn body_box(&self) -> BBox {
        let hull = BBox::hull(self.landmarks).expect("four landmarks");
        self.bbox.union(&hull)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let (w, h) = (width as f64, height as f64);
        for (name, &[x, y]) in LANDMARK_NAMES.iter().zip(&self.landmarks) {
            if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x >= w || y >= h {
                return Err(Error::Validation(format!(
                    "frame {}: {name} ({x}, {y}) lies outside the {width}x{height} frame",
                    self.frame_id
                )));
            }
        }
        let b = self.bbox;
        if !(b.w >= 0.0 && b.h >= 0.0) || b.x < 0.0 || b.y < 0.0 || b.right() > w || b.bottom() > h
        {
            return Err(Error::Validation(format!(
                "frame {}: bbox {b:?} outside the {width}x{height} frame",
                self.frame_id
            )));
        }
        Ok(())
    }
}

pub fn flatten(points: &[[f64; 2]; 4]) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (i, p) in points.iter().enumerate() {
        out[2 * i] = p[0];
        out[2 * i + 1] = p[1];
    }
    out
}

pub fn unflatten(v: &[f64; 8]) -> [[f64; 2]; 4] {
    [[v[0], v[1]], [v[2], v[3]], [v[4], v[5]], [v[6], v[7]]]
}

fn parse_occluded(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(format!("occlusion flag must be 0/1, got {other:?}")),
    }
}

/// Parses the annotation CSV. Relative image paths are resolved against the
/// CSV's directory. Frames come back sorted by `frame_id`.
pub fn parse_annotations(text: &str, source: &Path, width: usize, height: usize) -> Result<Vec<AnnotatedFrame>> {
    let base = source.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    match lines.next() {
        Some((_, h)) if h.trim() == ANNOTATION_HEADER => {}
        Some((_, h)) => return Err(parse_err(1, format!("unexpected header {h:?}"))),
        None => return Ok(Vec::new()),
    }
    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 18 {
            return Err(parse_err(line_no, format!("expected 18 columns, got {}", cols.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cols[i]
                .parse::<f64>()
                .map_err(|e| parse_err(line_no, format!("column {}: {e}", i + 1)))
        };
        let frame_id = cols[0]
            .parse::<u32>()
            .map_err(|e| parse_err(line_no, format!("frame_id: {e}")))?;
        let mut landmarks = [[0.0; 2]; 4];
        for (k, lm) in landmarks.iter_mut().enumerate() {
            *lm = [num(2 + 2 * k)?, num(3 + 2 * k)?];
        }
        let mut occluded = [false; 4];
        for (k, o) in occluded.iter_mut().enumerate() {
            *o = parse_occluded(cols[10 + k]).map_err(|m| parse_err(line_no, m))?;
        }
        let image = PathBuf::from(cols[1]);
        let frame = AnnotatedFrame {
            frame_id,
            image_ref: if image.is_absolute() { image } else { base.join(image) },
            landmarks,
            occluded,
            bbox: BBox {
                x: num(14)?,
                y: num(15)?,
                w: num(16)?,
                h: num(17)?,
            },
        };
        frame.validate(width, height)?;
        frames.push(frame);
    }
    frames.sort_by_key(|f| f.frame_id);
    if let Some(w) = frames.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
        return Err(Error::Validation(format!("duplicate frame_id {}", w[0].frame_id)));
    }
    Ok(frames)
}

/// Reads an annotation CSV for native-resolution frames.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedFrame>> {
    let text = fs::read_to_string(path)?;
    parse_annotations(&text, path, NATIVE_WIDTH, NATIVE_HEIGHT)
}

/// Serializes frames in the annotation CSV schema. Image paths are written
/// relative to `relative_to` when possible.
pub fn annotations_to_csv(frames: &[AnnotatedFrame], relative_to: Option<&Path>) -> String {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for f in frames {
        let image = relative_to
            .and_then(|base| f.image_ref.strip_prefix(base).ok())
            .unwrap_or(&f.image_ref);
        let _ = write!(out, "{},{}", f.frame_id, image.display());
        for [x, y] in f.landmarks {
            let _ = write!(out, ",{x},{y}");
        }
        for o in f.occluded {
            let _ = write!(out, ",{}", o as u8);
        }
        let b = f.bbox;
        let _ = writeln!(out, ",{},{},{},{}", b.x, b.y, b.w, b.h);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROW: &str = "1,f0001.png,400,300,420,350,350,280,450,280,0,0,1,0,340,270,120,90";

    fn parse(body: &str) -> Result<Vec<AnnotatedFrame>> {
        let text = format!("{ANNOTATION_HEADER}\n{body}");
        parse_annotations(&text, Path::new("/data/ann.csv"), NATIVE_WIDTH, NATIVE_HEIGHT)
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn one_row() {
        let frames = parse(ROW).unwrap();
        assert_eq!(frames.len(), 1);
        let f = &frames[0];
        assert_eq!(f.landmarks[0], [400.0, 300.0]);
        assert_eq!(f.occluded, [false, false, true, false]);
        assert_eq!(f.image_ref, PathBuf::from("/data/f0001.png"));
    }

    #[test]
    fn out_of_frame_coordinate_rejected() {
        let row = ROW.replacen("400,300", "900,300", 1);
        assert!(matches!(parse(&row), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let body = format!("{ROW}\n2,f.png,1,2");
        match parse(&body) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn sorted_by_frame_id_and_csv_round_trip() {
        let row2 = ROW.replacen("1,", "2,", 1);
        let frames = parse(&format!("{row2}\n{ROW}")).unwrap();
        assert_eq!(frames[0].frame_id, 1);
        let csv = annotations_to_csv(&frames, Some(Path::new("/data")));
        let again =
            parse_annotations(&csv, Path::new("/data/ann.csv"), NATIVE_WIDTH, NATIVE_HEIGHT).unwrap();
        assert_eq!(again, frames);
    }

    #[test]
    fn body_box_covers_landmarks() {
        let mut f = parse(ROW).unwrap().remove(0);
        f.landmarks[2] = [300.0, 280.0];
        let b = f.body_box();
        assert!(f.landmarks.iter().all(|&p| b.contains(p)));
        assert_eq!(b.x, 300.0);
    }
}
