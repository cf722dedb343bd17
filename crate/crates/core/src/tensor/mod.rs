//! Dense row-major real and complex tensors.
//!
//! Tensors are immutable values: every operation returns a new tensor. Complex
//! data is kept as two separate real planes so that real-valued filters can be
//! applied to each plane independently.

mod io;

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rustfft::FftNum;

use crate::error::{Error, Result};

pub use io::{load_complex_tensor, load_tensor, save_complex_tensor, save_tensor, HEADER_PREFIX_LEN, MAGIC, VERSION};

/// Floating-point precision of a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    /// Dtype tag used by the tensor container.
    pub fn tag(self) -> u8 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Single => f.write_str("single"),
            Precision::Double => f.write_str("double"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

/// Real scalar type a tensor can carry.
pub trait Scalar:
    Float
    + FftNum
    + Default
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from exactly `PRECISION.byte_width()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Config("tensor rank must be at least 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Config(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    strides
}

/// Dense real tensor in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("precision", &T::PRECISION)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != data.len() {
            return Err(Error::dim("Tensor::new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// # Panics
    /// If `shape` has rank zero or a zero extent.
    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = check_shape(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let numel = check_shape(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            debug_assert!(i < e);
            flat = flat * e + i;
        }
        self.data[flat]
    }

    /// Reinterprets the row-major data under a new shape.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(new_shape)
    }

    pub fn into_reshape(self, new_shape: &[usize]) -> Result<Self> {
        let numel = check_shape(new_shape)?;
        if numel != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, new_shape));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Contiguous slice for a fixed leading index (e.g. one channel of a
    /// `(C, H, W)` tensor).
    pub fn outer_slice(&self, i: usize) -> &[T] {
        let block = self.data.len() / self.shape[0];
        &self.data[i * block..(i + 1) * block]
    }
}

/// Largest absolute element-wise difference, or `None` on shape mismatch.
pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Option<f64> {
    if a.shape() != b.shape() {
        return None;
    }
    Some(
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs().as_f64())
            .fold(0.0, f64::max),
    )
}

/// Relative L-infinity distance `max|a-b| / max|b|` (denominator floored at 1e-300).
pub fn rel_linf<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Option<f64> {
    let diff = max_abs_diff(a, b)?;
    Some(diff / b.max_abs().as_f64().max(1e-300))
}

/// Complex tensor stored as separate real and imaginary planes.
#[derive(Clone, PartialEq)]
pub struct ComplexTensor<T: Scalar = f64> {
    re: Tensor<T>,
    im: Tensor<T>,
}

impl<T: Scalar> Debug for ComplexTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComplexTensor")
            .field("shape", &self.re.shape)
            .field("precision", &T::PRECISION)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape != im.shape {
            return Err(Error::dim("ComplexTensor::new", &re.shape, &im.shape));
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        ComplexTensor {
            re: Tensor::zeros(shape),
            im: Tensor::zeros(shape),
        }
    }

    /// Complex tensor with a zero imaginary plane.
    pub fn from_real(re: Tensor<T>) -> Self {
        let im = Tensor::zeros(&re.shape);
        ComplexTensor { re, im }
    }

    pub fn shape(&self) -> &[usize] {
        &self.re.shape
    }

    pub fn numel(&self) -> usize {
        self.re.numel()
    }

    pub fn re(&self) -> &Tensor<T> {
        &self.re
    }

    pub fn im(&self) -> &Tensor<T> {
        &self.im
    }

    pub fn into_parts(self) -> (Tensor<T>, Tensor<T>) {
        (self.re, self.im)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(new_shape)
    }

    pub fn into_reshape(self, new_shape: &[usize]) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.into_reshape(new_shape)?,
            im: self.im.into_reshape(new_shape)?,
        })
    }

    pub fn conj(&self) -> Self {
        ComplexTensor {
            re: self.re.clone(),
            im: self.im.map(|v| -v),
        }
    }

    pub fn add(&self, other: &ComplexTensor<T>) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.add(&other.re)?,
            im: self.im.add(&other.im)?,
        })
    }

    pub fn sub(&self, other: &ComplexTensor<T>) -> Result<Self> {
        Ok(ComplexTensor {
            re: self.re.sub(&other.re)?,
            im: self.im.sub(&other.im)?,
        })
    }

    pub fn max_abs_diff(&self, other: &ComplexTensor<T>) -> Option<f64> {
        Some(max_abs_diff(&self.re, &other.re)?.max(max_abs_diff(&self.im, &other.im)?))
    }

    pub(crate) fn planes_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.re.data_mut(), self.im.data_mut())
    }
}

/// Walks `out_shape` in row-major order, yielding runs of consecutive output
/// elements that share one element of a broadcast operand of shape
/// `operand_shape`. Calls `f(operand_index, output_start, run_len)`.
fn for_each_broadcast_run(
    operand_shape: &[usize],
    out_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    // Trailing axes over which the operand is constant.
    let mut split = rank;
    while split > 0 && operand_shape[split - 1] == 1 {
        split -= 1;
    }
    let run: usize = out_shape[split..].iter().product();
    let outer: usize = out_shape[..split].iter().product();

    let op_strides = strides(operand_shape);
    let mut counter = vec![0usize; split];
    let mut op_index = 0usize;
    for block in 0..outer {
        f(op_index, block * run, run);
        // Advance the odometer over the leading axes.
        for axis in (0..split).rev() {
            counter[axis] += 1;
            if operand_shape[axis] != 1 {
                op_index += op_strides[axis];
            }
            if counter[axis] < out_shape[axis] {
                break;
            }
            if operand_shape[axis] != 1 {
                op_index -= op_strides[axis] * out_shape[axis];
            }
            counter[axis] = 0;
        }
    }
}

fn check_broadcast(context: &str, a: &[usize], b: &[usize]) -> Result<()> {
    let ok = a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| x == y || x == 1);
    if ok {
        Ok(())
    } else {
        Err(Error::dim(context, a, b))
    }
}

/// Multiplies `b` by a real operand whose size-1 extents are virtually
/// expanded to `b`'s shape.
pub fn broadcast_mul_real<T: Scalar>(a: &Tensor<T>, b: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    check_broadcast("broadcast_mul", a.shape(), b.shape())?;
    let mut out = b.clone();
    let av = a.data();
    let (re, im) = out.planes_mut();
    for_each_broadcast_run(a.shape(), b.shape(), |ai, start, len| {
        let w = av[ai];
        for v in &mut re[start..start + len] {
            *v = w * *v;
        }
        for v in &mut im[start..start + len] {
            *v = w * *v;
        }
    });
    Ok(out)
}

/// Complex element-wise product with `a` broadcast to `b`'s shape.
pub fn broadcast_mul<T: Scalar>(a: &ComplexTensor<T>, b: &ComplexTensor<T>) -> Result<ComplexTensor<T>> {
    check_broadcast("broadcast_mul", a.shape(), b.shape())?;
    let mut out = b.clone();
    let (ar, ai) = (a.re().data(), a.im().data());
    let (re, im) = out.planes_mut();
    for_each_broadcast_run(a.shape(), b.shape(), |idx, start, len| {
        let (wr, wi) = (ar[idx], ai[idx]);
        for (r, i) in re[start..start + len].iter_mut().zip(&mut im[start..start + len]) {
            let (br, bi) = (*r, *i);
            *r = wr * br - wi * bi;
            *i = wr * bi + wi * br;
        }
    });
    Ok(out)
}
