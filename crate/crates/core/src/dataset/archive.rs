//! Weight archive files.
//!
//! ```text
//! magic      8 bytes  "PKWEIGHT"
//! version    u32      1
//! dtype      u8       1 = f32, 2 = f64
//! count      u32      number of layers
//! per layer (sorted by name):
//!   name     u16 length + UTF-8 bytes
//!   wdims    4 x u64  (out, in, kh, kw)
//!   nbias    u64
//!   weights  product(wdims) values
//!   biases   nbias values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::binio::*;
use crate::error::{Error, Result};
use crate::nn::{LayerParams, WeightArchive};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub const WEIGHT_MAGIC: &[u8; 8] = b"PKWEIGHT";
pub const WEIGHT_VERSION: u32 = 1;

pub fn write_weight_archive<T: Scalar>(w: &mut impl Write, archive: &WeightArchive<T>) -> Result<()> {
    w.write_all(WEIGHT_MAGIC)?;
    put_u32(w, WEIGHT_VERSION)?;
    put_u8(w, T::DTYPE.tag())?;
    put_u32(w, archive.entries.len() as u32)?;
    for (name, layer) in &archive.entries {
        put_name(w, name)?;
        for d in layer.weights.shape().dims() {
            put_u64(w, d as u64)?;
        }
        put_u64(w, layer.biases.len() as u64)?;
        put_values(w, layer.weights.data())?;
        put_values(w, &layer.biases)?;
    }
    Ok(())
}

pub fn read_weight_archive<T: Scalar>(r: &mut impl Read) -> Result<WeightArchive<T>> {
    expect_magic(r, WEIGHT_MAGIC, WEIGHT_VERSION)?;
    let dtype = get_dtype(r)?;
    let count = get_u32(r)?;
    let mut archive = WeightArchive::default();
    for _ in 0..count {
        let name = get_name(r)?;
        let [o, i, h, w] = [get_usize(r)?, get_usize(r)?, get_usize(r)?, get_usize(r)?];
        let shape = Shape4::new(o, i, h, w);
        let len = shape
            .checked_len()
            .map_err(|e| Error::Format(format!("layer {name}: {e}")))?;
        let nbias = get_usize(r)?;
        let weights = Tensor4::from_vec(shape, get_values(r, dtype, len)?)?;
        let biases = get_values(r, dtype, nbias)?;
        if archive.entries.contains_key(&name) {
            return Err(Error::Format(format!("duplicate layer {name}")));
        }
        archive.insert(LayerParams { name, weights, biases });
    }
    Ok(archive)
}

pub fn save_weight_archive<T: Scalar>(path: &Path, archive: &WeightArchive<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weight_archive(&mut w, archive)?;
    w.flush()?;
    Ok(())
}

pub fn load_weight_archive<T: Scalar>(path: &Path) -> Result<WeightArchive<T>> {
    let mut r = BufReader::new(File::open(path)?);
    read_weight_archive(&mut r).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(name: &str, shape: Shape4, nb: usize) -> LayerParams<f64> {
        let v = (0..shape.len()).map(|i| (i as f64).sin() * 1e-7).collect();
        LayerParams {
            name: name.into(),
            weights: Tensor4::from_vec(shape, v).unwrap(),
            biases: (0..nb).map(|i| i as f64 / 3.0).collect(),
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut a = WeightArchive::default();
        a.insert(layer("conv1_1", Shape4::new(4, 3, 3, 3), 4));
        a.insert(layer("fc8", Shape4::new(8, 36, 1, 1), 8));
        let mut buf = Vec::new();
        write_weight_archive(&mut buf, &a).unwrap();
        let b: WeightArchive<f64> = read_weight_archive(&mut buf.as_slice()).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.entries.values().zip(b.entries.values()) {
            assert!(x.weights.data().iter().zip(y.weights.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn truncated_archive_errors() {
        let mut a = WeightArchive::default();
        a.insert(layer("fc8", Shape4::new(2, 2, 1, 1), 2));
        let mut buf = Vec::new();
        write_weight_archive(&mut buf, &a).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_weight_archive::<f64>(&mut buf.as_slice()).is_err());
    }
}
