use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{QnnError, Result};
use crate::tensor::Tensor;

fn matrix_dims(t: &Tensor, op: &'static str, other: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(QnnError::Dimension {
            op,
            lhs: t.shape().to_vec(),
            rhs: other.shape().to_vec(),
        }),
    }
}

/// Matrix product `a[M×K] · b[K×N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul", b)?;
    let (k2, n) = matrix_dims(b, "matmul", a)?;
    if k != k2 {
        return Err(QnnError::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(m, k, n, a.data(), b.data(), &mut out);
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Gradients of `matmul`: `(g·bᵀ, aᵀ·g)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = matrix_dims(a, "matmul_backward", b)?;
    let (_, n) = matrix_dims(b, "matmul_backward", a)?;
    if g.shape() != [m, n] {
        return Err(QnnError::Dimension {
            op: "matmul_backward",
            lhs: vec![m, n],
            rhs: g.shape().to_vec(),
        });
    }
    let mut ga = vec![0.0; m * k];
    gemm_nt(m, n, k, g.data(), b.data(), &mut ga);
    let mut gb = vec![0.0; k * n];
    gemm_tn(k, m, n, a.data(), g.data(), &mut gb);
    Ok((
        Tensor::from_parts(vec![m, k], ga),
        Tensor::from_parts(vec![k, n], gb),
    ))
}

/// Fully connected layer `x[N×I] · w[O×I]ᵀ + bias[O]`.
pub fn dense(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, i) = matrix_dims(x, "dense", w)?;
    let (o, i2) = matrix_dims(w, "dense", x)?;
    if i != i2 || bias.len() != o {
        return Err(QnnError::Dimension {
            op: "dense",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm_nt(n, i, o, x.data(), w.data(), &mut out);
    Ok(Tensor::from_parts(vec![n, o], out))
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, i) = matrix_dims(x, "dense_backward", w)?;
    let (o, _) = matrix_dims(w, "dense_backward", x)?;
    if g.shape() != [n, o] {
        return Err(QnnError::Dimension {
            op: "dense_backward",
            lhs: vec![n, o],
            rhs: g.shape().to_vec(),
        });
    }
    let mut gx = vec![0.0; n * i];
    gemm_nn(n, o, i, g.data(), w.data(), &mut gx);
    let mut gw = vec![0.0; o * i];
    gemm_tn(o, n, i, g.data(), x.data(), &mut gw);
    let mut gb = vec![0.0; o];
    for row in g.data().chunks(o) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok((
        Tensor::from_parts(vec![n, i], gx),
        Tensor::from_parts(vec![o, i], gw),
        Tensor::from_parts(vec![o], gb),
    ))
}
