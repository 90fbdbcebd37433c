//! Dense 4-D tensors in NCHW layout.
//!
//! One flat `Vec<f64>` per tensor, row-major in (n, c, h, w) order. All
//! layer kernels live in [`ops`] and the segmentation loss in [`loss`];
//! every backward pass is an exact analytic gradient of its forward map.

mod loss;
mod ops;

pub use loss::bce_dice_loss;
pub use ops::{
    concat_backward, concat_channels, conv2d_backward, conv2d_forward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward, upsample2x_backward,
    upsample2x_nearest,
};

use crate::error::{Error, Result};

/// Shape of a 4-D tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat index of element (n, c, h, w).
    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    fn validate(&self) -> Result<()> {
        for (dim, v) in [("n", self.n), ("c", self.c), ("h", self.h), ("w", self.w)] {
            if v == 0 {
                return Err(Error::shape("tensor", format!("dimension {dim} is zero")));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array of f64, the carrier for activations, weights and
/// gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Tensor {
        shape.validate().expect("zero-sized tensor dimension");
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Tensor {
        shape.validate().expect("zero-sized tensor dimension");
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("data length {} != {} numel {}", data.len(), shape, shape.numel()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.idx(n, c, h, w)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.shape.idx(n, c, h, w);
        self.data[i] = v;
    }

    /// Elementwise `self += other`. Shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_assign",
                format!("{} vs {}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Elementwise `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add_scaled",
                format!("{} vs {}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Stack single-sample tensors along the batch dimension.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "empty input list".to_string()))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(items.len() * s.numel());
        for (i, t) in items.iter().enumerate() {
            if t.shape.c != s.c || t.shape.h != s.h || t.shape.w != s.w {
                return Err(Error::shape(
                    "stack",
                    format!("item {i} has shape {}, expected {}", t.shape, s),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let n: usize = items.iter().map(|t| t.shape.n).sum();
        Tensor::from_vec(Shape::new(n, s.c, s.h, s.w), data)
    }

    /// Extract sample `i` as a 1-batch tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        let per = self.shape.c * self.shape.h * self.shape.w;
        let data = self.data[i * per..(i + 1) * per].to_vec();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-element argmax positions recorded by 2x2 max-pooling, needed to
/// route gradients back to exactly the winning cell.
#[derive(Clone, Debug)]
pub struct PoolIndex {
    /// Shape of the pooled output.
    pub out_shape: Shape,
    /// For each output element, the winner's flat index within its 2x2
    /// source window: 0 = top-left, 1 = top-right, 2 = bottom-left,
    /// 3 = bottom-right.
    pub argmax: Vec<u8>,
}
