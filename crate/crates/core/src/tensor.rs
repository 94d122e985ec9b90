//! Dense row-major tensors.
//!
//! All arithmetic runs in f64; the dtype tag only controls checkpoint
//! encoding width. Tensors are plain values and immutable by convention
//! once handed to a [`crate::tape::Tape`].

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("invalid shape {shape:?} for {len} data values")]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
}

/// Storage width used when a tensor is written to a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&e| e == 0) {
            return Err(NumericsError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            dtype: DType::F64,
            data,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            dtype: DType::F64,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape,
            dtype: DType::F64,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            dtype: DType::F64,
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            dtype: DType::F64,
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(NumericsError::ShapeDataMismatch {
                shape: vec![rows.len(), n],
                len: rows.iter().map(|r| r.len()).sum(),
            });
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(Self {
            shape: vec![rows.len(), n],
            dtype: DType::F64,
            data,
        })
    }

    pub fn uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, lo: f64, hi: f64) -> Self {
        let numel: usize = shape.iter().product();
        let dist = Uniform::new(lo, hi);
        let data = (0..numel).map(|_| dist.sample(rng)).collect();
        Self {
            shape,
            dtype: DType::F64,
            data,
        }
    }

    /// Xavier-uniform init for a `fan_in x fan_out` weight matrix.
    pub fn xavier<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(rng, vec![fan_in, fan_out], -a, a)
    }

    pub fn gaussian<R: Rng>(rng: &mut R, shape: Vec<usize>, std: f64) -> Self {
        let numel: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std must be finite and positive");
        let data = (0..numel).map(|_| dist.sample(rng)).collect();
        Self {
            shape,
            dtype: DType::F64,
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar extraction; errors unless the tensor holds exactly one value.
    pub fn item(&self) -> Result<f64, NumericsError> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(NumericsError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    /// Number of rows when viewed as a matrix (1 for vectors).
    pub fn nrows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Row length when viewed as a matrix.
    pub fn ncols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.ncols() + col]
    }

    pub fn row_slice(&self, row: usize) -> &[f64] {
        let n = self.ncols();
        &self.data[row * n..(row + 1) * n]
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        Self::new(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the flattened data.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Little-endian byte encoding at the tensor's dtype width.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self.dtype {
            DType::F64 => self
                .data
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect(),
            DType::F32 => self
                .data
                .iter()
                .flat_map(|v| (*v as f32).to_le_bytes())
                .collect(),
        }
    }

    pub fn from_le_bytes(
        shape: Vec<usize>,
        dtype: DType,
        bytes: &[u8],
    ) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        let width = match dtype {
            DType::F32 => 4,
            DType::F64 => 8,
        };
        if bytes.len() != numel * width {
            return Err(NumericsError::ShapeDataMismatch {
                shape,
                len: bytes.len() / width,
            });
        }
        let data: Vec<f64> = match dtype {
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        Ok(Self {
            shape,
            dtype,
            data,
        })
    }
}
