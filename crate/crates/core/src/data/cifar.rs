use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One label byte plus 3 x 32 x 32 channel-planar pixel bytes.
pub const CIFAR_RECORD_LEN: usize = 3073;
const PIXELS: usize = 3072;

/// Concatenates CIFAR-10 binary batch files into one dataset of shape
/// `[N, 3, 32, 32]`.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::BadRecordLength {
                path: path.to_path_buf(),
                len: bytes.len() as u64,
                record: CIFAR_RECORD_LEN,
            });
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            labels.push(rec[0] as usize);
            data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = labels.len();
    LabeledDataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10)
}

/// Writes a `[N, 3, 32, 32]` dataset as one binary batch file.
pub fn write_cifar10(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    if ds.sample_shape() != [3, 32, 32] {
        return Err(Error::invalid(
            "write_cifar10",
            format!("need [N, 3, 32, 32], got {:?}", ds.images().shape()),
        ));
    }
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD_LEN);
    for i in 0..ds.len() {
        out.push(ds.labels()[i] as u8);
        out.extend(
            ds.images()
                .row(i)
                .iter()
                .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    debug_assert_eq!(out.len(), ds.len() * (PIXELS + 1));
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
