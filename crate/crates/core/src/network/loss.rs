//! Softmax cross-entropy over logit columns, averaged over the batch.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Returns the mean cross-entropy and its gradient in the logits.
///
/// Each column of `logits` is one sample; the log-sum-exp is shifted by the
/// column maximum so saturated logits stay finite. The gradient is
/// `(softmax - onehot) / N`, matching the mean in the loss.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::Dim(format!(
            "logits must be a matrix, got {:?}",
            logits.shape()
        )));
    }
    let (k, n) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Dim(format!(
            "{} labels for {} logit columns",
            labels.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Input(format!(
                "label {y} at position {i} outside [0, {k})"
            )));
        }
    }
    let ld = logits.data();
    let mut grad = Tensor::zeros(&[k, n]);
    let gd = grad.data_mut();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for j in 0..n {
        let mut max = f64::NEG_INFINITY;
        for i in 0..k {
            max = max.max(ld[i * n + j]);
        }
        let mut denom = 0.0;
        for i in 0..k {
            denom += (ld[i * n + j] - max).exp();
        }
        let log_denom = denom.ln();
        let y = labels[j];
        loss += log_denom - (ld[y * n + j] - max);
        for i in 0..k {
            let p = (ld[i * n + j] - max).exp() / denom;
            gd[i * n + j] = (p - if i == y { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Fraction of columns whose arg-max logit matches the label. Ties go to the
/// lowest row index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (k, n) = (logits.rows(), logits.cols());
    if labels.len() != n || n == 0 {
        return Err(Error::Dim(format!(
            "{} labels for {} logit columns",
            labels.len(),
            n
        )));
    }
    let ld = logits.data();
    let mut hits = 0usize;
    for j in 0..n {
        let mut best = 0usize;
        for i in 1..k {
            if ld[i * n + j] > ld[best * n + j] {
                best = i;
            }
        }
        if best == labels[j] {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::zeros(&[10, 4]);
        let labels = [0usize, 3, 7, 9];
        let (loss, _) = softmax_xent(&logits, &labels).unwrap();
        assert!((loss - 10.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn two_class_hand_example() {
        // logits (0,0), two identical columns, labels 0: grad = (p - onehot)/N
        let logits = Tensor::zeros(&[2, 2]);
        let (loss, grad) = softmax_xent(&logits, &[0, 0]).unwrap();
        assert!((loss - 2.0f64.ln()).abs() <= 1e-12);
        assert_eq!(grad.data(), &[-0.25, -0.25, 0.25, 0.25]);
    }

    #[test]
    fn saturated_softmax_loss_vanishes() {
        let mut logits = Tensor::zeros(&[10, 3]);
        for j in 0..3 {
            logits[(j, j)] = 30.0;
        }
        let (loss, _) = softmax_xent(&logits, &[0, 1, 2]).unwrap();
        assert!(loss <= 1e-9);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            softmax_xent(&logits, &[0, 3]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded(4);
        let logits = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let labels = [2usize, 0, 4];
        let (_, grad) = softmax_xent(&logits, &labels).unwrap();
        let h = 1e-6;
        for idx in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[idx] += h;
            let mut minus = logits.clone();
            minus.data_mut()[idx] -= h;
            let (lp, _) = softmax_xent(&plus, &labels).unwrap();
            let (lm, _) = softmax_xent(&minus, &labels).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad.data()[idx]).abs() <= 1e-6);
        }
    }

    #[test]
    fn loss_is_invariant_to_per_column_shifts() {
        let mut rng = seeded(6);
        let logits = Tensor::uniform(&[4, 5], -2.0, 2.0, &mut rng);
        let labels = [0usize, 1, 2, 3, 0];
        let (base, _) = softmax_xent(&logits, &labels).unwrap();
        let mut shifted = logits.clone();
        for j in 0..5 {
            for i in 0..4 {
                shifted[(i, j)] += 17.5;
            }
        }
        let (moved, _) = softmax_xent(&shifted, &labels).unwrap();
        assert!((base - moved).abs() <= 1e-12);
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let logits =
            Tensor::matrix(2, 3, vec![1.0, 0.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
        let acc = accuracy(&logits, &[0, 1, 0]).unwrap();
        assert!((acc - 1.0).abs() <= 1e-15);
    }
}
