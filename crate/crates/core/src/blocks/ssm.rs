//! Unfused state-space discretisation and recurrence on explicit matrices.
//!
//! The model uses the fused tape op (`Graph::selective_scan`), which folds
//! these two steps together; this form exposes the discretised `Abar`/`Bbar`.

use xlm_tensor::{Float, Tensor};

use crate::error::{CoreError, Result};

fn dim<T>(msg: String) -> Result<T> {
    Err(CoreError::Dimension(msg))
}

/// `Abar[t,e,n] = exp(delta[t,e] * A[e,n])`, `Bbar[t,e,n] = delta[t,e] * B[t,n]`.
pub fn ssm_discretize<T: Float>(a: &Tensor<T>, delta: &Tensor<T>, b_seq: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (&[e, n], &[l, e2], &[l2, n2]) = (a.shape(), delta.shape(), b_seq.shape()) else {
        return dim(format!("discretize shapes A {:?}, delta {:?}, B {:?}", a.shape(), delta.shape(), b_seq.shape()));
    };
    if e != e2 || n != n2 || l != l2 {
        return dim(format!("discretize shapes A {:?}, delta {:?}, B {:?}", a.shape(), delta.shape(), b_seq.shape()));
    }
    let mut abar = Vec::with_capacity(l * e * n);
    let mut bbar = Vec::with_capacity(l * e * n);
    for t in 0..l {
        for ei in 0..e {
            let dt = delta.data()[t * e + ei];
            for j in 0..n {
                abar.push((dt * a.data()[ei * n + j]).exp());
                bbar.push(dt * b_seq.data()[t * n + j]);
            }
        }
    }
    Ok((Tensor::new(&[l, e, n], abar)?, Tensor::new(&[l, e, n], bbar)?))
}

/// `h_t = Abar_t * h_{t-1} + Bbar_t * x_t`, `y_t = C_t . h_t + D * x_t`, `h_0 = 0`.
pub fn selective_scan<T: Float>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    c_seq: &Tensor<T>,
    d: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let &[l, e, n] = abar.shape() else {
        return dim(format!("Abar must be (L,E,N), got {:?}", abar.shape()));
    };
    if bbar.shape() != abar.shape() || c_seq.shape() != [l, n] || d.shape() != [e] || x.shape() != [l, e] {
        return dim(format!(
            "scan shapes Abar {:?}, Bbar {:?}, C {:?}, D {:?}, x {:?}",
            abar.shape(),
            bbar.shape(),
            c_seq.shape(),
            d.shape(),
            x.shape()
        ));
    }
    let mut h = vec![T::zero(); e * n];
    let mut y = Vec::with_capacity(l * e);
    for t in 0..l {
        for ei in 0..e {
            let xv = x.data()[t * e + ei];
            let mut out = d.data()[ei] * xv;
            for j in 0..n {
                let k = (t * e + ei) * n + j;
                let hj = &mut h[ei * n + j];
                *hj = abar.data()[k] * *hj + bbar.data()[k] * xv;
                out += c_seq.data()[t * n + j] * *hj;
            }
            y.push(out);
        }
    }
    Ok(Tensor::new(&[l, e], y)?)
}
