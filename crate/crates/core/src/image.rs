//! Row-major scalar images.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!("image dims must be positive, got {width}x{height}")));
        }
        Ok(Self { width, height })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_pow2(&self) -> bool {
        self.width.is_power_of_two() && self.height.is_power_of_two()
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: Dims,
    data: Vec<f64>,
}

impl Image {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                context: "image data",
                expected: dims.len().to_string(),
                got: data.len().to_string(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                data.push(f(x, y));
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.dims.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = self.dims.index(x, y);
        self.data[i] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Point reflection through the image centre (r → −r).
    pub fn inverted(&self) -> Self {
        let mut data = self.data.clone();
        data.reverse();
        Self { dims: self.dims, data }
    }

    /// Pads to power-of-two dims by replicating the last row/column.
    pub fn pad_to_pow2(&self) -> Self {
        let w = self.dims.width.next_power_of_two();
        let h = self.dims.height.next_power_of_two();
        let dims = Dims { width: w, height: h };
        Self::from_fn(dims, |x, y| {
            self.get(x.min(self.dims.width - 1), y.min(self.dims.height - 1))
        })
    }

    pub fn crop(&self, dims: Dims) -> Result<Self> {
        if dims.width > self.dims.width || dims.height > self.dims.height {
            return Err(Error::param(format!("cannot crop {} to {}", self.dims, dims)));
        }
        Ok(Self::from_fn(dims, |x, y| self.get(x, y)))
    }
}
