//! Big-endian IDX files as distributed with MNIST-style datasets.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX payload with its extents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let b = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::format(offset as u64, format!("truncated: need 4 bytes, {} left", bytes.len().saturating_sub(offset))))?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Decode an unsigned-byte IDX buffer of any rank.
pub fn decode_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0)?;
    if magic >> 8 != 0x08 || magic & 0xff == 0 {
        return Err(Error::format(0, format!("bad magic {magic:#010x}: expected unsigned-byte IDX")));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for d in 0..rank {
        let v = read_u32(bytes, 4 + 4 * d)? as usize;
        if v == 0 {
            return Err(Error::format(4 + 4 * d as u64, "zero extent"));
        }
        dims.push(v);
    }
    let header = 4 + 4 * rank;
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(4, "extents overflow"))?;
    let body = &bytes[header..];
    if body.len() < n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated: header declares {n} bytes of data, found {}", body.len()),
        ));
    }
    if body.len() > n {
        return Err(Error::format((header + n) as u64, format!("{} trailing bytes", body.len() - n)));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * arr.dims.len() + arr.data.len());
    out.extend_from_slice(&arr.magic().to_be_bytes());
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn expect_magic(arr: &IdxArray, magic: u32, path: &Path) -> Result<()> {
    if arr.magic() != magic {
        return Err(Error::format(
            0,
            format!("{}: magic {:#010x}, expected {magic:#010x}", path.display(), arr.magic()),
        ));
    }
    Ok(())
}

/// Raw pixel values `[n × rows × cols]` in `0..=255`.
pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    let arr = decode_idx(&read_file(path)?)?;
    expect_magic(&arr, IMAGES_MAGIC, path)?;
    Tensor::new(arr.dims, arr.data.into_iter().map(f32::from).collect())
}

/// Labels `[n]`.
pub fn load_idx_labels(path: &Path) -> Result<Tensor> {
    let arr = decode_idx(&read_file(path)?)?;
    expect_magic(&arr, LABELS_MAGIC, path)?;
    Tensor::new(arr.dims, arr.data.into_iter().map(f32::from).collect())
}

/// Images and matching labels.
pub fn load_idx(images: &Path, labels: &Path) -> Result<(Tensor, Tensor)> {
    let x = load_idx_images(images)?;
    let y = load_idx_labels(labels)?;
    if x.dims()[0] != y.dims()[0] {
        return Err(Error::Input(format!(
            "{} holds {} images but {} holds {} labels",
            images.display(),
            x.dims()[0],
            labels.display(),
            y.dims()[0]
        )));
    }
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_only_is_truncated() {
        let err = decode_idx(&IMAGES_MAGIC.to_be_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 4, .. }), "{err}");
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let err = decode_idx(&[0, 0, 9, 1, 0, 0, 0, 1, 0]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn hand_built_image() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        fs::write(&p, &bytes).unwrap();
        let t = load_idx_images(&p).unwrap();
        assert_eq!(t.dims(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0., 255., 128., 64.]);
        assert_eq!(encode_idx(&decode_idx(&bytes).unwrap()), bytes);
    }

    #[test]
    fn hand_built_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 0, 5, 9];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lab");
        fs::write(&p, bytes).unwrap();
        assert_eq!(load_idx_labels(&p).unwrap().data(), &[0., 5., 9.]);
        assert!(load_idx_images(&p).is_err());
    }

    #[test]
    fn truncated_body() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 0, 5];
        assert!(matches!(decode_idx(&bytes), Err(Error::Format { offset: 10, .. })));
    }

    proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(1usize..5, 1..4), seed in any::<u8>()) {
            let n: usize = dims.iter().product();
            let arr = IdxArray { dims, data: (0..n).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect() };
            let bytes = encode_idx(&arr);
            prop_assert_eq!(encode_idx(&decode_idx(&bytes).unwrap()), bytes);
        }
    }
}
