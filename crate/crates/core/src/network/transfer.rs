//! Parametric linear transfers: fully-connected and 2-d convolution.
//!
//! Both kinds are reduced to one matrix product against a prepared input. A
//! dense layer multiplies the augmented parameter block `[W b]` with the
//! activations extended by an all-ones row, so the bias needs no special
//! casing anywhere. A convolution is lowered to a patch matrix (with an
//! optional constant-one row playing the bias role), which makes its
//! parameter adjoint the same `gemm` call as the dense case.

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use rand_core::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum LinearTransfer {
    Dense(DenseTransfer),
    Conv2d(ConvTransfer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTransfer {
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvTransfer {
    /// Input geometry (channels, height, width).
    pub in_shape: (usize, usize, usize),
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

/// Input activations transformed into the matrix the layer multiplies.
#[derive(Debug, Clone)]
pub enum Prepared {
    /// `[a; 1]`, shape `(in_dim + 1) x N`.
    Dense { augmented: Tensor },
    /// im2col patches, shape `patch_rows x (N * out_h * out_w)`.
    Conv { patches: Tensor, batch: usize },
}

impl ConvTransfer {
    pub fn out_hw(&self) -> (usize, usize) {
        let (_, h, w) = self.in_shape;
        let oh = (h + 2 * self.padding - self.kernel_h) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel_w) / self.stride + 1;
        (oh, ow)
    }

    pub fn patch_rows(&self) -> usize {
        let (c, _, _) = self.in_shape;
        c * self.kernel_h * self.kernel_w + usize::from(self.bias)
    }

    fn kernel_cols(&self) -> usize {
        let (c, _, _) = self.in_shape;
        c * self.kernel_h * self.kernel_w
    }

    fn validate(&self) -> Result<()> {
        let (_, h, w) = self.in_shape;
        if self.stride == 0 {
            return Err(Error::Input("conv stride must be positive".into()));
        }
        if h + 2 * self.padding < self.kernel_h || w + 2 * self.padding < self.kernel_w {
            return Err(Error::Dim(format!(
                "conv kernel {}x{} does not fit input {:?} with padding {}",
                self.kernel_h, self.kernel_w, self.in_shape, self.padding
            )));
        }
        Ok(())
    }

    /// Lowers `a` (one flattened c-major image per column) to the patch
    /// matrix; columns are ordered sample-major, then output row, then
    /// output column.
    fn im2col(&self, a: &Tensor) -> Tensor {
        let (c_in, h, w) = self.in_shape;
        let n = a.cols();
        let (oh, ow) = self.out_hw();
        let l = n * oh * ow;
        let rows = self.patch_rows();
        let mut p = Tensor::zeros(&[rows, l]);
        let pd = p.data_mut();
        let ad = a.data();
        let pad = self.padding as isize;
        let s = self.stride;
        for ci in 0..c_in {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let prow = (ci * self.kernel_h + ky) * self.kernel_w + kx;
                    let base = prow * l;
                    for sample in 0..n {
                        let col0 = sample * oh * ow;
                        for oy in 0..oh {
                            let y = (oy * s + ky) as isize - pad;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let frow = (ci * h + y as usize) * w;
                            for ox in 0..ow {
                                let x = (ox * s + kx) as isize - pad;
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                pd[base + col0 + oy * ow + ox] =
                                    ad[(frow + x as usize) * n + sample];
                            }
                        }
                    }
                }
            }
        }
        if self.bias {
            let start = (rows - 1) * l;
            pd[start..start + l].fill(1.0);
        }
        p
    }

    /// Adjoint of `im2col`: scatter-adds patch-space values back onto the
    /// input feature map.
    fn col2im(&self, g: &Tensor, n: usize) -> Tensor {
        let (c_in, h, w) = self.in_shape;
        let (oh, ow) = self.out_hw();
        let l = n * oh * ow;
        let mut out = Tensor::zeros(&[c_in * h * w, n]);
        let od = out.data_mut();
        let gd = g.data();
        let pad = self.padding as isize;
        let s = self.stride;
        for ci in 0..c_in {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let prow = (ci * self.kernel_h + ky) * self.kernel_w + kx;
                    let base = prow * l;
                    for sample in 0..n {
                        let col0 = sample * oh * ow;
                        for oy in 0..oh {
                            let y = (oy * s + ky) as isize - pad;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let frow = (ci * h + y as usize) * w;
                            for ox in 0..ow {
                                let x = (ox * s + kx) as isize - pad;
                                if x < 0 || x >= w as isize {
                                    continue;
                                }
                                od[(frow + x as usize) * n + sample] +=
                                    gd[base + col0 + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// `out_ch x L` patch-space output -> feature-per-row layout
    /// `(out_ch * oh * ow) x N`.
    fn pack_output(&self, z: &Tensor, n: usize) -> Tensor {
        let (oh, ow) = self.out_hw();
        let spatial = oh * ow;
        let l = n * spatial;
        let mut out = Tensor::zeros(&[self.out_channels * spatial, n]);
        let od = out.data_mut();
        let zd = z.data();
        for oc in 0..self.out_channels {
            for pos in 0..spatial {
                let dst = (oc * spatial + pos) * n;
                let src = oc * l + pos;
                for sample in 0..n {
                    od[dst + sample] = zd[src + sample * spatial];
                }
            }
        }
        out
    }

    /// Inverse of `pack_output`.
    fn unpack_output(&self, r: &Tensor, n: usize) -> Tensor {
        let (oh, ow) = self.out_hw();
        let spatial = oh * ow;
        let l = n * spatial;
        let mut out = Tensor::zeros(&[self.out_channels, l]);
        let od = out.data_mut();
        let rd = r.data();
        for oc in 0..self.out_channels {
            for pos in 0..spatial {
                let src = (oc * spatial + pos) * n;
                let dst = oc * l + pos;
                for sample in 0..n {
                    od[dst + sample * spatial] = rd[src + sample];
                }
            }
        }
        out
    }
}

impl LinearTransfer {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LinearTransfer::Dense(DenseTransfer { in_dim, out_dim })
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LinearTransfer::Dense(d) => d.in_dim,
            LinearTransfer::Conv2d(c) => {
                let (ci, h, w) = c.in_shape;
                ci * h * w
            }
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearTransfer::Dense(d) => d.out_dim,
            LinearTransfer::Conv2d(c) => {
                let (oh, ow) = c.out_hw();
                c.out_channels * oh * ow
            }
        }
    }

    /// Shape of the parameter block theta.
    pub fn theta_shape(&self) -> [usize; 2] {
        match self {
            LinearTransfer::Dense(d) => [d.out_dim, d.in_dim + 1],
            LinearTransfer::Conv2d(c) => [c.out_channels, c.patch_rows()],
        }
    }

    /// Output geometry carried forward for later spatial layers, if any.
    pub fn out_image_shape(&self) -> Option<(usize, usize, usize)> {
        match self {
            LinearTransfer::Dense(_) => None,
            LinearTransfer::Conv2d(c) => {
                let (oh, ow) = c.out_hw();
                Some((c.out_channels, oh, ow))
            }
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_theta<R: Rng>(&self, rng: &mut R) -> Tensor {
        let fan_in = match self {
            LinearTransfer::Dense(d) => d.in_dim,
            LinearTransfer::Conv2d(c) => c.kernel_cols(),
        };
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let [r, c] = self.theta_shape();
        Tensor::uniform(&[r, c], -bound, bound, rng)
    }

    pub fn check_theta(&self, theta: &Tensor) -> Result<()> {
        let want = self.theta_shape();
        if theta.shape() != want {
            return Err(Error::Dim(format!(
                "parameter shape {:?}, expected {:?}",
                theta.shape(),
                want
            )));
        }
        Ok(())
    }

    /// Transforms input activations into the matrix this layer multiplies.
    pub fn prepare(&self, a: &Tensor) -> Result<Prepared> {
        if a.shape().len() != 2 || a.rows() != self.in_dim() {
            return Err(Error::Dim(format!(
                "layer input has shape {:?}, expected {} rows",
                a.shape(),
                self.in_dim()
            )));
        }
        match self {
            LinearTransfer::Dense(_) => Ok(Prepared::Dense {
                augmented: a.with_ones_row(),
            }),
            LinearTransfer::Conv2d(c) => {
                c.validate()?;
                Ok(Prepared::Conv {
                    patches: c.im2col(a),
                    batch: a.cols(),
                })
            }
        }
    }

    /// `phi(theta, a)` on a prepared input; linear in `theta`.
    pub fn apply(&self, theta: &Tensor, prep: &Prepared) -> Result<Tensor> {
        self.check_theta(theta)?;
        match (self, prep) {
            (LinearTransfer::Dense(_), Prepared::Dense { augmented }) => gemm(theta, augmented),
            (LinearTransfer::Conv2d(c), Prepared::Conv { patches, batch }) => {
                let z = gemm(theta, patches)?;
                Ok(c.pack_output(&z, *batch))
            }
            _ => Err(Error::Inconsistent(
                "prepared input does not match transfer kind".into(),
            )),
        }
    }

    /// Adjoint in the parameters: maps an output-shaped residual to a
    /// theta-shaped tensor. Paired with `apply` by
    /// `<apply(v, a), r> == <v, param_adjoint(r, a)>`.
    pub fn param_adjoint(&self, residual: &Tensor, prep: &Prepared) -> Result<Tensor> {
        if residual.shape().len() != 2 || residual.rows() != self.out_dim() {
            return Err(Error::Dim(format!(
                "residual shape {:?}, expected {} rows",
                residual.shape(),
                self.out_dim()
            )));
        }
        match (self, prep) {
            (LinearTransfer::Dense(_), Prepared::Dense { augmented }) => {
                gemm_nt(residual, augmented)
            }
            (LinearTransfer::Conv2d(c), Prepared::Conv { patches, batch }) => {
                let r = c.unpack_output(residual, *batch);
                gemm_nt(&r, patches)
            }
            _ => Err(Error::Inconsistent(
                "prepared input does not match transfer kind".into(),
            )),
        }
    }

    /// Adjoint in the input activations: maps an output-shaped residual back
    /// to input space (the bias row/column does not participate).
    pub fn input_adjoint(&self, residual: &Tensor, theta: &Tensor) -> Result<Tensor> {
        self.check_theta(theta)?;
        if residual.shape().len() != 2 || residual.rows() != self.out_dim() {
            return Err(Error::Dim(format!(
                "residual shape {:?}, expected {} rows",
                residual.shape(),
                self.out_dim()
            )));
        }
        match self {
            LinearTransfer::Dense(d) => {
                let w = theta.left_columns(d.in_dim);
                gemm_tn(&w, residual)
            }
            LinearTransfer::Conv2d(c) => {
                let w = theta.left_columns(c.kernel_cols());
                let n = residual.cols();
                let r = c.unpack_output(residual, n);
                let g = gemm_tn(&w, &r)?;
                Ok(c.col2im(&g, n))
            }
        }
    }

    /// Convenience: prepare and apply in one call.
    pub fn forward(&self, theta: &Tensor, a: &Tensor) -> Result<Tensor> {
        let prep = self.prepare(a)?;
        self.apply(theta, &prep)
    }
}
