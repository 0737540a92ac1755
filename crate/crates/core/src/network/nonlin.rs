//! Parameter-free nonlinear transfers: relu, tanh, max-pooling.
//!
//! Each kind exposes its Jacobian as a pair of matrix-free maps
//! (`jac_apply`, `jac_adjoint`); for the elementwise kinds both reduce to a
//! componentwise product with the derivative. Relu uses derivative 0 at the
//! kink; max-pooling routes ties to the first maximal index in scan order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Nonlin {
    Relu,
    Tanh,
    MaxPool2d {
        /// Input geometry (channels, height, width).
        in_shape: (usize, usize, usize),
        window: usize,
        stride: usize,
    },
}

impl Nonlin {
    pub fn maxpool(in_shape: (usize, usize, usize), window: usize, stride: usize) -> Self {
        Nonlin::MaxPool2d {
            in_shape,
            window,
            stride,
        }
    }

    pub fn out_dim(&self, in_dim: usize) -> Result<usize> {
        match self {
            Nonlin::Relu | Nonlin::Tanh => Ok(in_dim),
            Nonlin::MaxPool2d {
                in_shape: (c, h, w),
                window,
                stride,
            } => {
                if c * h * w != in_dim {
                    return Err(Error::Dim(format!(
                        "pool geometry {:?} does not cover {} features",
                        (c, h, w),
                        in_dim
                    )));
                }
                if *window == 0 || *stride == 0 || window > h.min(w) {
                    return Err(Error::Input(format!(
                        "pool window {window} / stride {stride} invalid for {h}x{w}"
                    )));
                }
                let (oh, ow) = self.pooled_hw();
                Ok(c * oh * ow)
            }
        }
    }

    fn pooled_hw(&self) -> (usize, usize) {
        match self {
            Nonlin::MaxPool2d {
                in_shape: (_, h, w),
                window,
                stride,
            } => ((h - window) / stride + 1, (w - window) / stride + 1),
            _ => unreachable!(),
        }
    }

    /// Output geometry after this stage, when spatial.
    pub fn out_image_shape(
        &self,
        in_shape: Option<(usize, usize, usize)>,
    ) -> Option<(usize, usize, usize)> {
        match self {
            Nonlin::Relu | Nonlin::Tanh => in_shape,
            Nonlin::MaxPool2d {
                in_shape: (c, _, _),
                ..
            } => {
                let (oh, ow) = self.pooled_hw();
                Some((*c, oh, ow))
            }
        }
    }

    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Nonlin::Relu => Ok(x.map(|v| v.max(0.0))),
            Nonlin::Tanh => Ok(x.map(f64::tanh)),
            Nonlin::MaxPool2d { .. } => {
                let args = self.argmax_indices(x)?;
                let n = x.cols();
                let mut out = Tensor::zeros(&[args.len() / n, n]);
                let od = out.data_mut();
                let xd = x.data();
                for (k, &src) in args.iter().enumerate() {
                    od[k] = xd[src];
                }
                Ok(out)
            }
        }
    }

    /// Derivative values for elementwise kinds; `None` for pooling.
    pub fn derivative(&self, x: &Tensor) -> Option<Tensor> {
        match self {
            Nonlin::Relu => Some(x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })),
            Nonlin::Tanh => Some(x.map(|v| {
                let t = v.tanh();
                1.0 - t * t
            })),
            Nonlin::MaxPool2d { .. } => None,
        }
    }

    /// Directional derivative: `J(x_at) v`.
    pub fn jac_apply(&self, x_at: &Tensor, v: &Tensor) -> Result<Tensor> {
        match self {
            Nonlin::Relu | Nonlin::Tanh => {
                let d = self.derivative(x_at).expect("elementwise");
                d.hadamard(v)
            }
            Nonlin::MaxPool2d { .. } => {
                let args = self.argmax_indices(x_at)?;
                let n = x_at.cols();
                let out_rows = args.len() / n;
                let mut out = Tensor::zeros(&[out_rows, n]);
                let od = out.data_mut();
                let vd = v.data();
                if v.shape() != x_at.shape() {
                    return Err(Error::Dim("pool jacobian: probe shape mismatch".into()));
                }
                for (k, &src) in args.iter().enumerate() {
                    od[k] = vd[src];
                }
                Ok(out)
            }
        }
    }

    /// Adjoint directional derivative: `J(x_at)^T r`.
    pub fn jac_adjoint(&self, x_at: &Tensor, r: &Tensor) -> Result<Tensor> {
        match self {
            Nonlin::Relu | Nonlin::Tanh => {
                let d = self.derivative(x_at).expect("elementwise");
                d.hadamard(r)
            }
            Nonlin::MaxPool2d { .. } => {
                let args = self.argmax_indices(x_at)?;
                let n = x_at.cols();
                if r.len() != args.len() || r.cols() != n {
                    return Err(Error::Dim(format!(
                        "pool adjoint: residual shape {:?} does not match output",
                        r.shape()
                    )));
                }
                let mut out = Tensor::zeros(x_at.shape());
                let od = out.data_mut();
                let rd = r.data();
                for (k, &dst) in args.iter().enumerate() {
                    od[dst] += rd[k];
                }
                Ok(out)
            }
        }
    }

    /// Flat input index of each pooled maximum, in output scan order.
    fn argmax_indices(&self, x: &Tensor) -> Result<Vec<usize>> {
        let (c, h, w, window, stride) = match self {
            Nonlin::MaxPool2d {
                in_shape: (c, h, w),
                window,
                stride,
            } => (*c, *h, *w, *window, *stride),
            _ => unreachable!(),
        };
        if x.shape().len() != 2 || x.rows() != c * h * w {
            return Err(Error::Dim(format!(
                "pool input shape {:?}, expected {} rows",
                x.shape(),
                c * h * w
            )));
        }
        let n = x.cols();
        let (oh, ow) = self.pooled_hw();
        let xd = x.data();
        let mut idx = Vec::with_capacity(c * oh * ow * n);
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    for sample in 0..n {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0usize;
                        for ky in 0..window {
                            let y = oy * stride + ky;
                            for kx in 0..window {
                                let x_pos = ox * stride + kx;
                                let flat = ((ci * h + y) * w + x_pos) * n + sample;
                                if xd[flat] > best {
                                    best = xd[flat];
                                    best_at = flat;
                                }
                            }
                        }
                        idx.push(best_at);
                    }
                }
            }
        }
        Ok(idx)
    }

}
