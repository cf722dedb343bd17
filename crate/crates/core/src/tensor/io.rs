//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   magic    b"FSRT"
//! offset 4   version  u32 = 1
//! offset 8   dtype    u8 (0 = single, 1 = double)
//! offset 9   complex  u8 (0 or 1)
//! offset 10  ndim     u8
//! offset 11  ndim x u64 extents
//! ...        row-major payload; complex tensors store the full real plane
//!            followed by the full imaginary plane
//! ```

use std::fs;
use std::path::Path;

use super::{ComplexTensor, Precision, Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSRT";
pub const VERSION: u32 = 1;
/// Bytes before the extents list.
pub const HEADER_PREFIX_LEN: usize = 11;

fn encode<T: Scalar>(shape: &[usize], planes: &[&[T]], complex: bool) -> Vec<u8> {
    let numel: usize = shape.iter().product();
    let mut out = Vec::with_capacity(
        HEADER_PREFIX_LEN + 8 * shape.len() + planes.len() * numel * T::PRECISION.byte_width(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::PRECISION.tag());
    out.push(complex as u8);
    out.push(u8::try_from(shape.len()).expect("rank fits in u8"));
    for &e in shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for plane in planes {
        for &v in plane.iter() {
            v.write_le(&mut out);
        }
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn take(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    bytes
        .get(offset..offset + len)
        .ok_or_else(|| format_err(offset, format!("truncated: need {len} bytes")))
}

/// Decodes a container, returning its shape and `planes` payload planes.
fn decode<T: Scalar>(bytes: &[u8], complex: bool) -> Result<(Vec<usize>, Vec<Vec<T>>)> {
    if take(bytes, 0, 4)? != MAGIC {
        return Err(format_err(0, "bad magic"));
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let dtype = take(bytes, 8, 1)?[0];
    match Precision::from_tag(dtype) {
        Some(p) if p == T::PRECISION => {}
        Some(p) => {
            return Err(format_err(8, format!("dtype is {p}, expected {}", T::PRECISION)));
        }
        None => return Err(format_err(8, format!("unknown dtype tag {dtype}"))),
    }
    let flag = take(bytes, 9, 1)?[0];
    if flag > 1 {
        return Err(format_err(9, format!("invalid complex flag {flag}")));
    }
    if (flag == 1) != complex {
        return Err(format_err(
            9,
            if complex { "expected a complex tensor" } else { "expected a real tensor" },
        ));
    }
    let ndim = take(bytes, 10, 1)?[0] as usize;
    if ndim == 0 {
        return Err(format_err(10, "ndim must be at least 1"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for axis in 0..ndim {
        let offset = HEADER_PREFIX_LEN + 8 * axis;
        let e = u64::from_le_bytes(take(bytes, offset, 8)?.try_into().unwrap());
        if e == 0 {
            return Err(format_err(offset, "zero extent"));
        }
        shape.push(usize::try_from(e).map_err(|_| format_err(offset, "extent overflow"))?);
    }
    let header_len = HEADER_PREFIX_LEN + 8 * ndim;
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| format_err(HEADER_PREFIX_LEN, "element count overflow"))?;
    let width = T::PRECISION.byte_width();
    let n_planes = if complex { 2 } else { 1 };
    let expected = numel * width * n_planes;
    let payload_len = bytes.len() - header_len;
    if payload_len != expected {
        return Err(format_err(
            header_len,
            format!("payload is {payload_len} bytes, expected {expected}"),
        ));
    }
    let planes = bytes[header_len..]
        .chunks_exact(numel * width)
        .map(|plane| plane.chunks_exact(width).map(T::read_le).collect())
        .collect();
    Ok((shape, planes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_tensor<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode(t.shape(), &[t.data()], false))
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = read_file(path.as_ref())?;
    let (shape, mut planes) = decode::<T>(&bytes, false)?;
    Tensor::new(&shape, planes.remove(0))
}

pub fn save_complex_tensor<T: Scalar>(t: &ComplexTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(t.shape(), &[t.re().data(), t.im().data()], true);
    write_file(path.as_ref(), &bytes)
}

pub fn load_complex_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<ComplexTensor<T>> {
    let bytes = read_file(path.as_ref())?;
    let (shape, mut planes) = decode::<T>(&bytes, true)?;
    let im = planes.pop().expect("two planes");
    let re = planes.pop().expect("two planes");
    ComplexTensor::new(Tensor::new(&shape, re)?, Tensor::new(&shape, im)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_for_2x3_double() {
        let t = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let bytes = encode(t.shape(), &[t.data()], false);
        assert_eq!(&bytes[0..4], b"FSRT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 0);
        assert_eq!(bytes[10], 2);
        assert_eq!(u64::from_le_bytes(bytes[11..19].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[19..27].try_into().unwrap()), 3);
        assert_eq!(bytes.len() - 27, 48);
    }

    #[test]
    fn round_trip_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fsrt");
        let t = Tensor::<f64>::from_fn(&[3, 7, 7], |i| (i as f64 * 0.37).sin() * 1e3);
        save_tensor(&t, &path).unwrap();
        let back: Tensor<f64> = load_tensor(&path).unwrap();
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.shape(), t.shape());
    }

    #[test]
    fn wrong_magic_is_format_error_at_zero() {
        let mut bytes = encode::<f64>(&[1], &[&[1.0]], false);
        bytes[0] = b'X';
        match decode::<f64>(&bytes, false) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn dtype_and_kind_mismatches() {
        let bytes = encode::<f32>(&[2], &[&[1.0, 2.0]], false);
        assert!(matches!(decode::<f64>(&bytes, false), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(decode::<f32>(&bytes, true), Err(Error::Format { offset: 9, .. })));
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode::<f32>(truncated, false),
            Err(Error::Format { offset: 19, .. })
        ));
    }

    #[test]
    fn complex_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fsrt");
        let re = Tensor::<f32>::from_fn(&[2, 2], |i| i as f32);
        let im = Tensor::<f32>::from_fn(&[2, 2], |i| -(i as f32) - 0.5);
        let c = ComplexTensor::new(re, im).unwrap();
        save_complex_tensor(&c, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Real plane precedes imaginary plane.
        let payload = &bytes[HEADER_PREFIX_LEN + 16..];
        assert_eq!(f32::from_le_bytes(payload[12..16].try_into().unwrap()), 3.0);
        assert_eq!(f32::from_le_bytes(payload[16..20].try_into().unwrap()), -0.5);
        assert_eq!(load_complex_tensor::<f32>(&path).unwrap(), c);
    }

    proptest! {
        #[test]
        fn bitwise_round_trip_both_precisions(
            dims in proptest::collection::vec(1usize..4, 1..4),
            bits in proptest::collection::vec(any::<u64>(), 64),
        ) {
            let numel: usize = dims.iter().product();
            let d: Vec<f64> = (0..numel).map(|i| f64::from_bits(bits[i % 64])).collect();
            let s: Vec<f32> = (0..numel).map(|i| f32::from_bits(bits[i % 64] as u32)).collect();
            let (shape, planes) = decode::<f64>(&encode(&dims, &[&d], false), false).unwrap();
            prop_assert_eq!(&shape, &dims);
            prop_assert!(planes[0].iter().zip(&d).all(|(a, b)| a.to_bits() == b.to_bits()));
            let (_, planes) = decode::<f32>(&encode(&dims, &[&s], false), false).unwrap();
            prop_assert!(planes[0].iter().zip(&s).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
