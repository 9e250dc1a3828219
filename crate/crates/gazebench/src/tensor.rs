//! Small dense tensor containers shared across the pipeline.
//!
//! All numerics run in `f64`; frame pixels are kept as `f32`, matching the
//! on-disk layout, and widened on entry to the model.

/// Dense n-dimensional `f64` tensor, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A single-channel `f64` grid; the shape of heatmap targets and
/// predicted probability maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(h * w, data.len());
        Grid { h, w, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut f64 {
        &mut self.data[y * self.w + x]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the maximum entry as (y, x); ties resolve to the first in
    /// row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.w, best % self.w)
    }
}

/// Clip input to the model: T grayscale frames of H×W, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl ClipTensor {
    pub fn zeros(t: usize, h: usize, w: usize) -> Self {
        ClipTensor {
            t,
            h,
            w,
            data: vec![0.0; t * h * w],
        }
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[i * n..(i + 1) * n]
    }
}

/// A stream of grayscale frames stored as `f32`, as rendered by the
/// synthetic world and as written to `frames_<view>.gzt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub len: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FrameStack {
    pub fn zeros(len: usize, h: usize, w: usize) -> Self {
        FrameStack {
            len,
            h,
            w,
            data: vec![0.0; len * h * w],
        }
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.h * self.w;
        &mut self.data[i * n..(i + 1) * n]
    }
}
