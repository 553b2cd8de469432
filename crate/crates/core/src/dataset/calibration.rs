use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Parses a 3x4 projection matrix given as 12 whitespace-separated numbers
/// in row-major order. Lines starting with `#` are ignored.
pub fn parse_calibration(text: &str, source: &Path) -> Result<[[f64; 4]; 3]> {
    let mut values = Vec::with_capacity(12);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: format!("not a number: {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: source.to_path_buf(),
                    line: i + 1,
                    message: format!("non-finite value {tok:?}"),
                });
            }
            values.push(v);
        }
    }
    if values.len() != 12 {
        return Err(Error::Parse {
            path: source.to_path_buf(),
            line: 0,
            message: format!("expected 12 numbers, found {}", values.len()),
        });
    }
    Ok(std::array::from_fn(|r| std::array::from_fn(|c| values[4 * r + c])))
}

pub fn load_calibration(path: &Path) -> Result<[[f64; 4]; 3]> {
    parse_calibration(&fs::read_to_string(path)?, path)
}

/// Row-major text form readable by [`parse_calibration`].
pub fn calibration_to_text(p: &[[f64; 4]; 3]) -> String {
    p.iter()
        .map(|row| row.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_twelve_numbers_any_layout() {
        let p = parse_calibration("# cam 1\n1 0 0 0\n0 1 0 0 0 0\n1 0\n", Path::new("c")).unwrap();
        assert_eq!(p, [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
    }

    #[test]
    fn wrong_count_and_garbage_rejected() {
        assert!(parse_calibration("1 2 3", Path::new("c")).is_err());
        assert!(matches!(
            parse_calibration("1 2 x", Path::new("c")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let p = [[0.1, 2.0 / 3.0, -1e-9, 5.0], [1.0, 2.0, 3.0, 4.0], [7.0, 8.0, 9.0, 1e12]];
        assert_eq!(parse_calibration(&calibration_to_text(&p), Path::new("c")).unwrap(), p);
    }
}
