//! Dense rank-4 tensors.
//!
//! Everything in this crate is an `(n, c, h, w)` array of `f64` stored
//! row-major in one flat `Vec` (w fastest, n slowest). Scalars are
//! `1x1x1x1`, vectors (e.g. biases) are `1xCx1x1`. Keeping a single
//! concrete rank removes a whole class of broadcasting bugs and makes
//! the wire format trivial: 4 little-endian `u64` dims followed by the
//! values as little-endian `f64`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense `(n, c, h, w)` array of `f64`.
///
/// ```
/// use r2unet::Tensor4;
/// let t = Tensor4::zeros([2, 3, 4, 5]).unwrap();
/// assert_eq!(t.shape(), [2, 3, 4, 5]);
/// assert_eq!(t.len(), 120);
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

/// Validated element count, or an error for zero/overflowing dims.
fn checked_len(shape: [usize; 4]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::InvalidDim { context: format!("zero dimension in {shape:?}") });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::InvalidDim { context: format!("element count of {shape:?} overflows usize") })
}

impl Tensor4 {
    /// All-zero tensor.
    pub fn zeros(shape: [usize; 4]) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(Tensor4 { shape, data: vec![0.0; len] })
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: [usize; 4], value: f64) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(Tensor4 { shape, data: vec![value; len] })
    }

    /// Wrap an existing buffer; `data.len()` must equal the shape product.
    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len = checked_len(shape)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "buffer of {} values cannot fill shape {shape:?} ({len} values)",
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Kaiming-normal initialisation: `N(0, sqrt(2 / fan_in))`, seeded.
    ///
    /// Same `(shape, fan_in, seed)` always yields bitwise-identical values.
    pub fn he_init(shape: [usize; 4], fan_in: usize, seed: u64) -> Result<Self> {
        if fan_in == 0 {
            return Err(Error::InvalidDim { context: "he_init fan_in must be >= 1".into() });
        }
        let len = checked_len(shape)?;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..len).map(|_| normal.sample(&mut rng)).collect();
        Ok(Tensor4 { shape, data })
    }

    /// Uniform values in `[lo, hi)`, seeded. Handy for test fixtures and
    /// gradient-check probes.
    pub fn rand_uniform(shape: [usize; 4], lo: f64, hi: f64, seed: u64) -> Result<Self> {
        let len = checked_len(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
        Ok(Tensor4 { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat offset of `(n, c, y, x)`. Bounds are `debug_assert`ed only;
    /// hot loops rely on callers staying in range.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.shape[0] && c < self.shape[1] && y < self.shape[2] && x < self.shape[3]);
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// True when every entry is finite (no NaN or infinity).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of all entries.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Write as 4 little-endian `u64` dims followed by the values as
    /// little-endian `f64`. Wrap `w` in a `BufWriter` for large tensors.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`write_to`](Self::write_to); round-trips bitwise.
    ///
    /// ```
    /// use r2unet::Tensor4;
    /// let t = Tensor4::rand_uniform([2, 1, 3, 3], -1.0, 1.0, 7).unwrap();
    /// let mut buf = Vec::new();
    /// t.write_to(&mut buf).unwrap();
    /// let back = Tensor4::read_from(&mut buf.as_slice()).unwrap();
    /// assert_eq!(t, back);
    /// ```
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut dim_bytes = [0u8; 32];
        r.read_exact(&mut dim_bytes)?;
        let mut shape = [0usize; 4];
        for (i, chunk) in dim_bytes.chunks_exact(8).enumerate() {
            let d = u64::from_le_bytes(chunk.try_into().expect("chunk is 8 bytes"));
            shape[i] = usize::try_from(d).map_err(|_| Error::InvalidDim {
                context: format!("dimension {d} does not fit in usize"),
            })?;
        }
        let len = checked_len(shape)?;
        let byte_len = len.checked_mul(8).ok_or(Error::InvalidDim {
            context: format!("byte length of {shape:?} overflows usize"),
        })?;
        let mut bytes = vec![0u8; byte_len];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        Ok(Tensor4 { shape, data })
    }
}
