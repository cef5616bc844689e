use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, TensorError};
use crate::real::{DType, Real};

pub const BLOB_MAGIC: &[u8; 4] = b"RFLT";

/// How to populate a freshly created tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Constant(f64),
    /// Uniform on `[low, high)`.
    Uniform {
        low: f64,
        high: f64,
        seed: u64,
    },
    /// Zero-mean normal with variance `2 / fan_in`.
    He {
        seed: u64,
        fan_in: usize,
    },
}

/// Row-major dense array.
///
/// `grad` is allocated exactly when `requires_grad` is set; it is only used by
/// long-lived tensors (model parameters) that accumulate gradients across
/// backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected: n,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn scalar(x: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![x],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn create(shape: &[usize], fill: Fill) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match fill {
            Fill::Constant(v) => vec![T::of(v); n],
            Fill::Uniform { low, high, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| T::of(low + (high - low) * rng.random::<f64>()))
                    .collect()
            }
            Fill::He { seed, fan_in } => {
                if fan_in == 0 {
                    return Err(TensorError::ZeroFanIn);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .expect("positive standard deviation");
                (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
            }
        };
        Self::new(shape, data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Constant(0.0))
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Constant(1.0))
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

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if on {
            if self.grad.is_none() {
                self.grad = Some(vec![T::ZERO; self.data.len()]);
            }
        } else {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient buffer. No-op when gradients are off.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if let Some(buf) = self.grad.as_mut() {
            if buf.len() != g.len() {
                return Err(TensorError::DataLength {
                    shape: self.shape.clone(),
                    expected: buf.len(),
                    actual: g.len(),
                });
            }
            for (b, &x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(buf) = self.grad.as_mut() {
            buf.iter_mut().for_each(|b| *b = T::ZERO);
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts element type, dropping any gradient buffer.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.to_f64())).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Binary blob: `"RFLT"`, dtype byte, rank byte, u32 extents, values; all
    /// little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.rank() + T::DTYPE.size_of() * self.numel());
        out.extend_from_slice(BLOB_MAGIC);
        out.push(T::DTYPE.code());
        out.push(self.rank() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &self.data {
            x.write_le(&mut out);
        }
        out
    }

    /// Decodes a blob written by [`Tensor::encode`], converting precision when
    /// the stored dtype differs from `T`. Returns the tensor and the number of
    /// bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let err = |m: &str| TensorError::Decode(m.to_string());
        if bytes.len() < 6 || &bytes[..4] != BLOB_MAGIC {
            return Err(err("missing RFLT magic"));
        }
        let dtype = DType::from_code(bytes[4]).ok_or_else(|| err("unknown dtype code"))?;
        let rank = bytes[5] as usize;
        let mut pos = 6;
        if bytes.len() < pos + 4 * rank {
            return Err(err("truncated extents"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
            shape.push(d as usize);
            pos += 4;
        }
        let n = check_shape(&shape)?;
        let width = dtype.size_of();
        if bytes.len() < pos + n * width {
            return Err(err("truncated values"));
        }
        let data: Vec<T> = (0..n)
            .map(|i| {
                let at = &bytes[pos + i * width..];
                match dtype {
                    DType::F32 => T::of(f32::read_le(at) as f64),
                    DType::F64 => T::of(f64::read_le(at)),
                }
            })
            .collect();
        pos += n * width;
        Ok((Self::new(&shape, data)?, pos))
    }
}
