use crate::error::{QnnError, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over a batch, with its logit gradient
/// `(softmax − onehot) / N`. Uses max-subtraction for stability.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let &[n, c] = logits.shape() else {
        return Err(QnnError::Dimension {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    };
    if labels.len() != n {
        return Err(QnnError::Dimension {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(QnnError::Input(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut grad = vec![0.0f32; n * c];
    let mut total = 0.0f64;
    for (i, (row, &label)) in logits.data().chunks(c).zip(labels).enumerate() {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut denom = 0.0f64;
        for &v in row {
            denom += ((v - max) as f64).exp();
        }
        let log_denom = denom.ln();
        total += log_denom - (row[label] - max) as f64;
        let g = &mut grad[i * c..(i + 1) * c];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (((v - max) as f64 - log_denom).exp() / n as f64) as f32;
        }
        g[label] -= 1.0 / n as f32;
    }
    Ok((
        (total / n as f64) as f32,
        Tensor::from_parts(vec![n, c], grad),
    ))
}
