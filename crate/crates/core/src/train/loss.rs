use xlm_tensor::{Float, Graph, Tensor, Var};

use crate::error::{contract, CoreError, Result};

/// Probability clamp applied before the logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy on the softmax probability of class 1 of a (B,2)
/// logit batch; targets must be 0 or 1.
pub fn bce_loss<T: Float>(g: &mut Graph<T>, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != 2 || shape[0] != targets.len() {
        return Err(CoreError::Dimension(format!(
            "bce expects (B,2) logits for {} targets, got {shape:?}",
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t > 1) {
        return contract(format!("target {t} outside {{0,1}}"));
    }
    let probs = g.softmax(logits)?;
    let p = g.narrow(probs, 1, 1, 1)?;
    let p = g.clamp(p, T::c(PROB_CLAMP), T::c(1.0 - PROB_CLAMP));
    let q = g.affine(p, -T::one(), T::one());
    let lp = g.ln(p);
    let lq = g.ln(q);
    let t = Tensor::from_fn(&[targets.len(), 1], |i| T::c(targets[i] as f64));
    let tc = t.map(|v| T::one() - v);
    let t = g.constant(t);
    let tc = g.constant(tc);
    let a = g.mul(lp, t)?;
    let b = g.mul(lq, tc)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.neg(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Logit pair whose class-1 softmax probability is `p`.
    fn logits_for(p: &[f64]) -> Tensor<f64> {
        Tensor::from_fn(&[p.len(), 2], |i| if i % 2 == 0 { 0.0 } else { (p[i / 2] / (1.0 - p[i / 2])).ln() })
    }

    fn loss(p: &[f64], t: &[usize]) -> f64 {
        let mut g = Graph::new();
        let l = g.constant(logits_for(p));
        let v = bce_loss(&mut g, l, t).unwrap();
        g.value(v).item()
    }

    #[test]
    fn reference_values() {
        assert!((loss(&[0.5], &[1]) - std::f64::consts::LN_2).abs() < 1e-6);
        assert!((loss(&[0.9, 0.1], &[1, 0]) - 0.105361).abs() < 1e-6);
    }

    #[test]
    fn confident_predictions_hit_the_clamp_floor() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::from_f64(&[2, 2], &[-50.0, 50.0, 50.0, -50.0]).unwrap());
        let v = bce_loss(&mut g, l, &[1, 0]).unwrap();
        assert!(g.value(v).item() <= 1.7e-7);
    }

    #[test]
    fn bad_target_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(bce_loss(&mut g, l, &[2]), Err(CoreError::Contract(_))));
    }
}
