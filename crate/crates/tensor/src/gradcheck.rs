//! Central-difference gradient checking in f64.

use crate::error::{dim_err, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Relative error used by the gradient checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` at `x` with central differences of
/// step `h` and returns the largest relative error over all elements.
///
/// `f` must map its input to a one-element output.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    finite_diff_gradcheck_many(|g, vs| f(g, vs[0]), std::slice::from_ref(x), h)
}

/// Multi-input form of [`finite_diff_gradcheck`]; checks every element of
/// every input.
pub fn finite_diff_gradcheck_many<F>(f: F, xs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return dim_err(format!("finite-difference step must be positive, got {h}"));
    }
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vs)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vs)?;
    let grads = g.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe = xs.to_vec();
    for (k, v) in vs.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for i in 0..xs[k].numel() {
            let orig = xs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_passes() {
        let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
        let err = finite_diff_gradcheck(
            |g, v| {
                let s = g.square(v);
                Ok(g.sum(s))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
