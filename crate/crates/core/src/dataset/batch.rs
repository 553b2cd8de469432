//! Batch container files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "PKBATCH\0"
//! version    u32      1
//! count      u32      number of datasets (2: "/data", "/label")
//! per dataset:
//!   name     u16 length + UTF-8 bytes
//!   dtype    u8       1 = f32, 2 = f64
//!   rank     u8       4
//!   dims     4 x u64  fastest-varying first: (W, H, C, N)
//!   payload  W*H*C*N values, W varying fastest
//! ```
//!
//! The dims are the reverse of the in-memory `(N, C, H, W)` order while the
//! payload is the same linear buffer, which is how column-major writers see
//! a row-major `N x C x H x W` array.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use std::borrow::Cow;

use crate::dataset::binio::*;
use crate::nn::{Batch, BatchSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub const BATCH_MAGIC: &[u8; 8] = b"PKBATCH\0";
pub const BATCH_VERSION: u32 = 1;
pub const DATA_FIELD: &str = "/data";
pub const LABEL_FIELD: &str = "/label";
pub const DEFAULT_SAMPLES_PER_FILE: usize = 1000;
/// Name of the list file written next to the batch files.
pub const BATCH_LIST: &str = "batches.txt";

/// One container's contents: `data` is `(n, c, h, w)`, `label` is
/// `(n, 1, 1, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchFile<T> {
    pub data: Tensor4<T>,
    pub label: Tensor4<T>,
}

impl<T: Scalar> BatchFile<T> {
    pub fn new(data: Tensor4<T>, label: Tensor4<T>) -> Result<Self> {
        let (d, l) = (data.shape(), label.shape());
        if d.n != l.n {
            return Err(Error::mismatch(format!("{} labels", d.n), l.n));
        }
        if l.c != 1 || l.h != 1 {
            return Err(Error::mismatch("label shape (n, 1, 1, d)", l));
        }
        Ok(BatchFile { data, label })
    }

    pub fn len(&self) -> usize {
        self.data.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// On-disk dims for an in-memory shape.
pub fn disk_dims(shape: Shape4) -> [usize; 4] {
    [shape.w, shape.h, shape.c, shape.n]
}

fn write_dataset<T: Scalar>(w: &mut impl Write, name: &str, t: &Tensor4<T>) -> Result<()> {
    put_name(w, name)?;
    put_u8(w, T::DTYPE.tag())?;
    put_u8(w, 4)?;
    for d in disk_dims(t.shape()) {
        put_u64(w, d as u64)?;
    }
    put_values(w, t.data())
}

fn read_dataset<T: Scalar>(r: &mut impl Read) -> Result<(String, Tensor4<T>)> {
    let name = get_name(r)?;
    let dtype = get_dtype(r)?;
    let rank = get_u8(r)?;
    if rank != 4 {
        return Err(Error::Format(format!("{name}: rank {rank}, expected 4")));
    }
    let [w, h, c, n] = [get_usize(r)?, get_usize(r)?, get_usize(r)?, get_usize(r)?];
    let shape = Shape4::new(n, c, h, w);
    let len = shape
        .checked_len()
        .map_err(|e| Error::Format(format!("{name}: {e}")))?;
    let values = get_values(r, dtype, len)?;
    Ok((name, Tensor4::from_vec(shape, values)?))
}

pub fn write_batch_file<T: Scalar>(path: &Path, batch: &BatchFile<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BATCH_MAGIC)?;
    put_u32(&mut w, BATCH_VERSION)?;
    put_u32(&mut w, 2)?;
    write_dataset(&mut w, DATA_FIELD, &batch.data)?;
    write_dataset(&mut w, LABEL_FIELD, &batch.label)?;
    w.flush()?;
    Ok(())
}

pub fn read_batch_file<T: Scalar>(path: &Path) -> Result<BatchFile<T>> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, BATCH_MAGIC, BATCH_VERSION)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let count = get_u32(&mut r)?;
    let (mut data, mut label) = (None, None);
    for _ in 0..count {
        let (name, t) = read_dataset(&mut r)?;
        match name.as_str() {
            DATA_FIELD => data = Some(t),
            LABEL_FIELD => label = Some(t),
            _ => {}
        }
    }
    let missing = |f: &str| Error::Format(format!("{}: missing dataset {f}", path.display()));
    let data = data.ok_or_else(|| missing(DATA_FIELD))?;
    let label = label.ok_or_else(|| missing(LABEL_FIELD))?;
    BatchFile::new(data, label).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Name of the `index`-th batch file.
pub fn batch_file_name(index: usize) -> String {
    format!("batch_{index:05}.pkb")
}

/// Splits `data`/`labels` into files of `samples_per_file` under `dir`
/// and writes the list file. Returns the file paths in order.
pub fn write_batches<T: Scalar>(
    data: &Tensor4<T>,
    labels: &Tensor4<T>,
    dir: &Path,
    samples_per_file: usize,
) -> Result<Vec<PathBuf>> {
    let n = data.shape().n;
    if labels.shape().n != n {
        return Err(Error::mismatch(format!("{n} labels"), labels.shape().n));
    }
    if samples_per_file == 0 {
        return Err(Error::Validation("samples_per_file must be >= 1".into()));
    }
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(n.div_ceil(samples_per_file));
    for (k, start) in (0..n).step_by(samples_per_file).enumerate() {
        let idx: Vec<usize> = (start..(start + samples_per_file).min(n)).collect();
        let file = BatchFile::new(data.gather(&idx)?, labels.gather(&idx)?)?;
        let path = dir.join(batch_file_name(k));
        write_batch_file(&path, &file)?;
        paths.push(path);
    }
    write_batch_list(dir, &paths)?;
    Ok(paths)
}

pub fn write_batch_list(dir: &Path, paths: &[PathBuf]) -> Result<()> {
    let mut list = String::new();
    for p in paths {
        let name = p.file_name().map(Path::new).unwrap_or(p);
        list.push_str(&name.display().to_string());
        list.push('\n');
    }
    fs::write(dir.join(BATCH_LIST), list)?;
    Ok(())
}

/// Batch file paths named by a directory's list file (or the list file
/// itself), in order.
pub fn list_batch_files(path: &Path) -> Result<Vec<PathBuf>> {
    let (dir, list) = if path.is_dir() {
        (path.to_path_buf(), path.join(BATCH_LIST))
    } else {
        (path.parent().unwrap_or(Path::new("")).to_path_buf(), path.to_path_buf())
    };
    let text = fs::read_to_string(&list)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| dir.join(l))
        .collect())
}

/// Reads a single batch file, or every file named by a directory's list
/// file, concatenated in order.
pub fn read_batches<T: Scalar>(path: &Path) -> Result<BatchFile<T>> {
    let looks_like_file = path.is_file() && path.extension().is_some_and(|e| e == "pkb");
    if looks_like_file {
        return read_batch_file(path);
    }
    let files = list_batch_files(path)?;
    if files.is_empty() {
        return Err(Error::Empty(format!("{} lists no batch files", path.display())));
    }
    let parts = files
        .iter()
        .map(|p| read_batch_file(p))
        .collect::<Result<Vec<BatchFile<T>>>>()?;
    let data: Vec<_> = parts.iter().map(|p| p.data.clone()).collect();
    let label: Vec<_> = parts.iter().map(|p| p.label.clone()).collect();
    BatchFile::new(Tensor4::stack(&data)?, Tensor4::stack(&label)?)
}

/// Sample count of a batch file, read from its header alone.
pub fn read_batch_len(path: &Path) -> Result<usize> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, BATCH_MAGIC, BATCH_VERSION)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if get_u32(&mut r)? == 0 {
        return Err(Error::Format(format!("{}: no datasets", path.display())));
    }
    let _name = get_name(&mut r)?;
    let _dtype = get_dtype(&mut r)?;
    if get_u8(&mut r)? != 4 {
        return Err(Error::Format(format!("{}: rank must be 4", path.display())));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = get_usize(&mut r)?;
    }
    Ok(dims[3])
}

/// Mini-batches cut from a list of batch files without loading them all:
/// the samples of every file form one sequence, and batch `b` takes
/// samples `b*size .. (b+1)*size`, wrapping to the start to fill the last.
/// At most the files touched by one mini-batch are held in memory.
pub struct BatchStream<T> {
    files: Vec<PathBuf>,
    /// Cumulative sample counts; `starts[i]` is the first sample of file i.
    starts: Vec<usize>,
    total: usize,
    batch_size: usize,
    cache: Vec<(usize, BatchFile<T>)>,
}

impl<T: Scalar> BatchStream<T> {
    /// Streams the files named by `path` (see [`list_batch_files`]).
    pub fn open(path: &Path, batch_size: usize) -> Result<Self> {
        let files = if path.is_file() && path.extension().is_some_and(|e| e == "pkb") {
            vec![path.to_path_buf()]
        } else {
            list_batch_files(path)?
        };
        Self::from_files(files, batch_size)
    }

    pub fn from_files(files: Vec<PathBuf>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Validation("batch_size must be >= 1".into()));
        }
        let mut starts = Vec::with_capacity(files.len());
        let mut total = 0usize;
        for f in &files {
            starts.push(total);
            total += read_batch_len(f)?;
        }
        if total == 0 {
            return Err(Error::Empty("batch files hold no samples".into()));
        }
        Ok(BatchStream {
            files,
            starts,
            total,
            batch_size,
            cache: Vec::new(),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.total
    }

    fn locate(&self, sample: usize) -> (usize, usize) {
        let f = self.starts.partition_point(|&s| s <= sample) - 1;
        (f, sample - self.starts[f])
    }

    fn load(&mut self, file: usize) -> Result<usize> {
        if let Some(pos) = self.cache.iter().position(|(i, _)| *i == file) {
            return Ok(pos);
        }
        let b = read_batch_file(&self.files[file])?;
        if b.len() != self.starts.get(file + 1).unwrap_or(&self.total) - self.starts[file] {
            return Err(Error::Consistency(format!(
                "{} changed while streaming",
                self.files[file].display()
            )));
        }
        self.cache.push((file, b));
        Ok(self.cache.len() - 1)
    }
}

impl<T: Scalar> BatchSource<T> for BatchStream<T> {
    fn batch_count(&self) -> usize {
        self.total.div_ceil(self.batch_size)
    }

    fn batch(&mut self, index: usize) -> Result<Cow<'_, Batch<T>>> {
        let samples: Vec<(usize, usize)> = (0..self.batch_size)
            .map(|k| self.locate((index * self.batch_size + k) % self.total))
            .collect();
        let mut needed: Vec<usize> = samples.iter().map(|&(f, _)| f).collect();
        needed.sort_unstable();
        needed.dedup();
        self.cache.retain(|(f, _)| needed.contains(f));
        let mut data = Vec::with_capacity(samples.len());
        let mut label = Vec::with_capacity(samples.len());
        for &(f, i) in &samples {
            let pos = self.load(f)?;
            let b = &self.cache[pos].1;
            data.push(b.data.gather(&[i])?);
            label.push(b.label.gather(&[i])?);
        }
        Ok(Cow::Owned(Batch::new(Tensor4::stack(&data)?, Tensor4::stack(&label)?)?))
    }
}
