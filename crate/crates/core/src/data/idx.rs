use std::fs;
use std::path::Path;

use crate::array::Array;
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }

    pub fn parse(bytes: &[u8], expected_magic: Option<u32>) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Data("IDX file shorter than its magic number".into()));
        }
        let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        if let Some(m) = expected_magic {
            if magic != m {
                return Err(Error::Data(format!("bad IDX magic {magic:#010x}, expected {m:#010x}")));
            }
        }
        if magic >> 8 != 0x08 {
            return Err(Error::Data(format!("unsupported IDX magic {magic:#010x}; only unsigned bytes are read")));
        }
        let nd = (magic & 0xff) as usize;
        let header = 4 + 4 * nd;
        if bytes.len() < header {
            return Err(Error::Data("truncated IDX header".into()));
        }
        let dims: Vec<usize> = (0..nd)
            .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
            .collect();
        let count: usize = dims.iter().product();
        if bytes.len() != header + count {
            return Err(Error::Data(format!("IDX payload has {} bytes, dims {dims:?} need {count}", bytes.len() - header)));
        }
        Ok(Self { dims, data: bytes[header..].to_vec() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn read_idx(path: impl AsRef<Path>, expected_magic: Option<u32>) -> Result<IdxTensor> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    IdxTensor::parse(&bytes, expected_magic).map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))
}

pub fn write_idx(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    fs::write(path.as_ref(), tensor.to_bytes()).map_err(|e| Error::io(path.as_ref(), e))
}

/// Reads an image/label IDX pair. Pixels are scaled by 1/255 and flattened row-major.
///
/// Only rows whose label is in `classes` are kept, one-hot encoded in the order given;
/// without a filter every label present is used in ascending order.
pub fn load_idx<T: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>, classes: Option<&[u8]>) -> Result<Dataset<T>> {
    let img = read_idx(images, Some(IDX_IMAGES_MAGIC))?;
    let lab = read_idx(labels, Some(IDX_LABELS_MAGIC))?;
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::Data(format!("{n} images but {} labels", lab.dims[0])));
    }
    let width: usize = img.dims[1..].iter().product();
    let classes: Vec<u8> = match classes {
        Some(c) => c.to_vec(),
        None => {
            let mut c = lab.data.clone();
            c.sort_unstable();
            c.dedup();
            c
        }
    };
    if classes.is_empty() {
        return Err(Error::Data("no classes selected".into()));
    }
    let k = classes.len();
    let mut features = Vec::new();
    let mut onehot = Vec::new();
    let scale = T::lit(255.0);
    for (i, &l) in lab.data.iter().enumerate() {
        let Some(c) = classes.iter().position(|&x| x == l) else { continue };
        features.extend(img.data[i * width..(i + 1) * width].iter().map(|&b| T::lit(b as f64) / scale));
        let mut row = vec![T::zero(); k];
        row[c] = T::one();
        onehot.extend(row);
    }
    let rows = onehot.len() / k;
    if rows == 0 {
        return Err(Error::Data(format!("no images with labels {classes:?}")));
    }
    Dataset::new(Array::matrix(rows, width, features)?, Array::matrix(rows, k, onehot)?, Task::Classification)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut pixels = vec![0u8; 3 * 4];
        pixels[4..8].copy_from_slice(&[255, 128, 1, 0]);
        pixels[8..12].fill(255);
        let img = IdxTensor { dims: vec![3, 2, 2], data: pixels };
        let lab = IdxTensor { dims: vec![3], data: vec![0, 7, 1] };
        let (a, b) = (dir.join("img"), dir.join("lab"));
        write_idx(&a, &img).unwrap();
        write_idx(&b, &lab).unwrap();
        (a, b)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = pair(dir.path());
        let t = read_idx(&a, Some(IDX_IMAGES_MAGIC)).unwrap();
        let b = dir.path().join("copy");
        write_idx(&b, &t).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(read_idx(&b, None).unwrap(), t);
    }

    #[test]
    fn images_scale_and_filter() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = pair(dir.path());
        let ds: Dataset<f64> = load_idx(&a, &b, None).unwrap();
        assert_eq!((ds.len(), ds.n_input(), ds.n_output()), (3, 4, 3));
        assert_eq!(ds.features.row(0), &[0.0; 4]);
        assert_eq!(ds.features.row(1)[0], 1.0);
        assert_eq!(ds.class_indices(), vec![0, 2, 1]);
        let ds: Dataset<f64> = load_idx(&a, &b, Some(&[0, 1])).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.features.row(1), &[1.0; 4]);
    }

    #[test]
    fn bad_magic_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = pair(dir.path());
        assert!(load_idx::<f64>(&b, &a, None).unwrap_err().to_string().contains("magic"));
        write_idx(&b, &IdxTensor { dims: vec![2], data: vec![0, 1] }).unwrap();
        assert!(load_idx::<f64>(&a, &b, None).is_err());
        assert!(IdxTensor::parse(&[0, 0, 8, 1, 0, 0, 0, 5, 1], None).is_err());
    }
}
