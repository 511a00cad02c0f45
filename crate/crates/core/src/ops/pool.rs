use crate::error::{QnnError, Result};
use crate::tensor::Tensor;

/// Averages each channel over its spatial extent: `[N×C×H×W]` → `[N×C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let &[n, c, h, w] = x.shape() else {
        return Err(QnnError::Dimension {
            op: "global_avg_pool",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    let hw = h * w;
    let out = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f32>() / hw as f32)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let &[n, c, h, w] = input_shape else {
        return Err(QnnError::Dimension {
            op: "global_avg_pool_backward",
            lhs: input_shape.to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    };
    if grad_out.shape() != [n, c] {
        return Err(QnnError::Dimension {
            op: "global_avg_pool_backward",
            lhs: vec![n, c],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c * hw);
    for &g in grad_out.data() {
        out.extend(std::iter::repeat_n(g / hw as f32, hw));
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), out))
}
