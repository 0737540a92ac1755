//! Matrix-free conjugate gradient, dense symmetric solves, and spectral
//! probes.
//!
//! The CG solver always starts from the zero vector: every iterate then lies
//! in a Krylov subspace of the right-hand side, which is what makes truncated
//! solves usable as descent directions downstream.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{gemm, gemm_nt, gemm_tn, Tensor};

/// A symmetric positive (semi-)definite operator, applied matrix-free.
pub trait LinearOperator {
    /// Number of degrees of freedom.
    fn dim(&self) -> usize;

    /// Shape of the tensors this operator acts on. Defaults to a flat vector.
    fn shape(&self) -> Vec<usize> {
        vec![self.dim()]
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor>;
}

/// Dense symmetric matrix as an operator; mostly for tests and probes.
pub struct DenseOperator {
    a: Tensor,
}

impl DenseOperator {
    pub fn new(a: Tensor) -> Result<Self> {
        if a.shape().len() != 2 || a.rows() != a.cols() {
            return Err(Error::Dim(format!(
                "dense operator needs a square matrix, got {:?}",
                a.shape()
            )));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.a
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.dim() {
            return Err(Error::Dim(format!(
                "operator dim {} vs vector length {}",
                self.dim(),
                x.len()
            )));
        }
        let n = self.dim();
        let mut out = Tensor::zeros(&[n]);
        let ad = self.a.data();
        let xd = x.data();
        for i in 0..n {
            let row = &ad[i * n..(i + 1) * n];
            out.data_mut()[i] = row.iter().zip(xd).map(|(&a, &b)| a * b).sum();
        }
        Ok(out)
    }
}

/// Conjugate gradient for `op(x) = b`, starting from `x = 0`.
///
/// Stops after `max_iters` iterations or once `||op(x) - b|| <= tol * ||b||`.
/// Returns the iterate together with the number of iterations taken.
/// `b = 0` returns the zero vector immediately.
pub fn cg_solve(
    op: &dyn LinearOperator,
    b: &Tensor,
    max_iters: usize,
    tol: f64,
) -> Result<(Tensor, usize)> {
    if b.len() != op.dim() {
        return Err(Error::Dim(format!(
            "cg: operator dim {} vs rhs length {}",
            op.dim(),
            b.len()
        )));
    }
    let b_norm = b.norm();
    let mut x = Tensor::zeros(b.shape());
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let threshold = tol * b_norm;
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r)?;
    for iter in 0..max_iters {
        let ap = op.apply(&p)?;
        let pap = p.dot(&ap)?;
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Numerical {
                context: format!("cg: directional curvature {pap} is not positive"),
                iter,
            });
        }
        let alpha = rs / pap;
        x.add_scaled(&p, alpha)?;
        r.add_scaled(&ap, -alpha)?;
        let rs_next = r.dot(&r)?;
        if !rs_next.is_finite() {
            return Err(Error::Numerical {
                context: "cg: residual became non-finite".into(),
                iter,
            });
        }
        if rs_next.sqrt() <= threshold {
            return Ok((x, iter + 1));
        }
        let beta = rs_next / rs;
        p.scale_in_place(beta);
        p.add_scaled(&r, 1.0)?;
        rs = rs_next;
    }
    Ok((x, max_iters))
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(a: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || a.rows() != a.cols() {
        return Err(Error::Dim(format!(
            "cholesky needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let n = a.rows();
    let mut l = Tensor::zeros(&[n, n]);
    for j in 0..n {
        let mut d = a[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Factorization(format!(
                "non-positive pivot {d:e} at column {j}"
            )));
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solves `A X = B` for symmetric positive-definite `A` via Cholesky.
pub fn direct_spd_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let n = a.rows();
    if b.shape().len() != 2 || b.rows() != n {
        return Err(Error::Dim(format!(
            "spd solve: lhs is {n}x{n}, rhs has shape {:?}",
            b.shape()
        )));
    }
    let l = cholesky_lower(a)?;
    let m = b.cols();
    let mut x = b.clone();
    // forward substitution L Y = B
    for i in 0..n {
        for p in 0..i {
            let lip = l[(i, p)];
            for c in 0..m {
                let v = x[(p, c)];
                x[(i, c)] -= lip * v;
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x[(i, c)] /= d;
        }
    }
    // back substitution L^T X = Y
    for i in (0..n).rev() {
        for p in i + 1..n {
            let lpi = l[(p, i)];
            for c in 0..m {
                let v = x[(p, c)];
                x[(i, c)] -= lpi * v;
            }
        }
        let d = l[(i, i)];
        for c in 0..m {
            x[(i, c)] /= d;
        }
    }
    Ok(x)
}

/// Largest-eigenvalue estimate by power iteration with a seeded start vector.
///
/// Returns the Rayleigh quotient of the final iterate; for a positive
/// semi-definite operator that sequence is nondecreasing in the iteration
/// count. A zero operator yields 0.
pub fn power_iteration(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let mut v = Tensor::uniform(&op.shape(), -1.0, 1.0, &mut r);
    let vn = v.norm();
    if vn == 0.0 || op.dim() == 0 {
        return Ok(0.0);
    }
    v.scale_in_place(1.0 / vn);
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let w = op.apply(&v)?;
        lambda = v.dot(&w)?;
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w.scale(1.0 / wn);
    }
    Ok(lambda)
}

/// Smallest-eigenvalue estimate by inverse power iteration; each step inverts
/// the operator with CG run to near machine precision.
pub fn smallest_eigenvalue(op: &dyn LinearOperator, iters: usize, seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let mut v = Tensor::uniform(&op.shape(), -1.0, 1.0, &mut r);
    let vn = v.norm();
    if vn == 0.0 || op.dim() == 0 {
        return Ok(0.0);
    }
    v.scale_in_place(1.0 / vn);
    for _ in 0..iters.max(1) {
        let (w, _) = cg_solve(op, &v, 8 * op.dim() + 16, 1e-14)?;
        let wn = w.norm();
        if wn == 0.0 {
            return Err(Error::Numerical {
                context: "inverse iteration produced a zero vector".into(),
                iter: 0,
            });
        }
        v = w.scale(1.0 / wn);
    }
    let av = op.apply(&v)?;
    v.dot(&av)
}

/// All eigenvalues of a symmetric matrix, ascending, by the cyclic Jacobi
/// method.
pub fn sym_eigenvalues(a: &Tensor) -> Result<Vec<f64>> {
    if a.shape().len() != 2 || a.rows() != a.cols() {
        return Err(Error::Dim(format!(
            "eigendecomposition needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(vec![]);
    }
    let mut m = a.clone();
    let frob = m.norm();
    let stop = frob * 1e-14 + f64::MIN_POSITIVE;
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= stop / (n as f64) {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eig)
}

/// Random symmetric positive-definite matrix `G G^T + shift I` for tests and
/// probes.
pub fn random_spd(n: usize, shift: f64, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let g = Tensor::uniform(&[n, n], -1.0, 1.0, &mut r);
    let mut a = gemm_nt(&g, &g).expect("square");
    for i in 0..n {
        a[(i, i)] += shift;
    }
    a
}

/// The Gram operator `v -> X (X^T v)` of a data matrix, applied matrix-free.
pub struct GramOperator<'a> {
    x: &'a Tensor,
}

impl<'a> GramOperator<'a> {
    pub fn new(x: &'a Tensor) -> Self {
        Self { x }
    }
}

impl LinearOperator for GramOperator<'_> {
    fn dim(&self) -> usize {
        self.x.rows()
    }

    fn shape(&self) -> Vec<usize> {
        vec![self.x.rows(), 1]
    }

    fn apply(&self, v: &Tensor) -> Result<Tensor> {
        let col = v.clone().reshape(&[self.x.rows(), 1])?;
        let xtv = gemm_tn(self.x, &col)?;
        gemm(self.x, &xtv)
    }
}
