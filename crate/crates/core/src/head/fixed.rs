//! Fixed column-orthonormal classifier matrices.

use xlm_tensor::{Float, Graph, RngStream, Tensor, Var};

use crate::error::{config, CoreError, Result};

/// Fixed weights `W` (F,D) plus a positive logit scale.
#[derive(Clone, Debug)]
pub struct FixedOrthogonalMatrix {
    pub w: Tensor<f64>,
    pub gamma: f64,
    /// Class group of each feature index; empty for Hadamard matrices.
    pub groups: Vec<usize>,
    pub normalize_input: bool,
}

impl FixedOrthogonalMatrix {
    pub fn features(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.w.shape()[1]
    }

    /// Logits `gamma * W^T x` for a (B,F) batch.
    pub fn forward(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w = g.constant(self.w.clone());
        let gamma = g.constant(Tensor::scalar(self.gamma));
        let z = project(&mut g, xv, w, gamma, self.normalize_input)?;
        Ok(g.value(z).clone())
    }
}

/// Splits F feature indices into D groups of near-equal size after a random
/// permutation; each class column is the normalised indicator of its group.
pub fn fno_init(f: usize, d: usize, rng: &mut RngStream, normalize_input: bool) -> Result<FixedOrthogonalMatrix> {
    if d < 2 || f < d {
        return config(format!("fixed classifier needs F >= D >= 2, got F={f}, D={d}"));
    }
    let mut perm: Vec<usize> = (0..f).collect();
    rng.shuffle(&mut perm);
    let mut classes: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut classes);
    let mut sizes = vec![f / d; d];
    for &c in &classes[..f % d] {
        sizes[c] += 1;
    }
    let mut groups = vec![0; f];
    let mut w = Tensor::zeros(&[f, d]);
    let mut next = 0;
    for (c, &size) in sizes.iter().enumerate() {
        let v = 1.0 / (size as f64).sqrt();
        for &i in &perm[next..next + size] {
            groups[i] = c;
            w.data_mut()[i * d + c] = v;
        }
        next += size;
    }
    Ok(FixedOrthogonalMatrix { w, gamma: 1.0, groups, normalize_input })
}

/// Sylvester Hadamard matrix of order `n` (a power of two), entries +-1.
pub fn sylvester(n: usize) -> Result<Tensor<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return config(format!("Sylvester order {n} is not a power of two"));
    }
    Ok(Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        if (i & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }))
}

/// First D columns of the Sylvester matrix of order `next_pow2(max(F,D))`,
/// restricted to its first F rows and scaled by `1/sqrt(F)`.
///
/// Fails unless the truncated columns are orthonormal (always the case when
/// F is a power of two).
pub fn hadamard_matrix(f: usize, d: usize) -> Result<Tensor<f64>> {
    if d == 0 || f < d {
        return config(format!("Hadamard layer needs F >= D >= 1, got F={f}, D={d}"));
    }
    let n = f.max(d).next_power_of_two();
    let h = sylvester(n)?;
    let scale = 1.0 / (f as f64).sqrt();
    let w = Tensor::from_fn(&[f, d], |k| h.data()[(k / d) * n + k % d] * scale);
    let err = gram_identity_error(&w);
    if err > 1e-9 {
        return config(format!("no orthonormal Hadamard truncation for F={f}, D={d} (error {err:e})"));
    }
    Ok(w)
}

pub fn hadamard_layer_init(f: usize, d: usize, normalize_input: bool) -> Result<FixedOrthogonalMatrix> {
    Ok(FixedOrthogonalMatrix { w: hadamard_matrix(f, d)?, gamma: 1.0, groups: Vec::new(), normalize_input })
}

/// Largest entry of `|W^T W - I|`.
pub fn gram_identity_error(w: &Tensor<f64>) -> f64 {
    let (f, d) = (w.shape()[0], w.shape()[1]);
    let mut worst = 0.0f64;
    for a in 0..d {
        for b in 0..d {
            let dot: f64 = (0..f).map(|i| w.data()[i * d + a] * w.data()[i * d + b]).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    worst
}

/// `gamma * W^T x` for x (B,F), W (F,D), gamma a one-element tensor;
/// optionally scales each x to unit norm first (zero rows pass through).
pub fn project<T: Float>(g: &mut Graph<T>, x: Var, w: Var, gamma: Var, normalize: bool) -> Result<Var> {
    let xs = g.shape(x);
    let ws = g.shape(w);
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(CoreError::Dimension(format!("fixed projection of {xs:?} by W {ws:?}")));
    }
    let x = if normalize { g.l2_normalize(x)? } else { x };
    let wt = g.permute(w, &[1, 0])?;
    let z = g.linear(x, wt, None)?;
    Ok(g.mul(z, gamma)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_features_two_classes() {
        let m = fno_init(4, 2, &mut RngStream::new(1), true).unwrap();
        let h = 1.0 / 2f64.sqrt();
        for c in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| m.w.at(&[i, c])).collect();
            assert_eq!(col.iter().filter(|&&v| v == h).count(), 2);
            assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), 2);
        }
        assert!(gram_identity_error(&m.w) < 1e-15);
    }

    #[test]
    fn five_features_two_classes() {
        let m = fno_init(5, 2, &mut RngStream::new(2), true).unwrap();
        let mut sizes = [0; 2];
        for &c in &m.groups {
            sizes[c] += 1;
        }
        sizes.sort();
        assert_eq!(sizes, [2, 3]);
        let allowed = [0.0, 1.0 / 3f64.sqrt(), 1.0 / 2f64.sqrt()];
        assert!(m.w.data().iter().all(|v| allowed.contains(v)));
        for c in 0..2 {
            let norm: f64 = (0..5).map(|i| m.w.at(&[i, c]).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fewer_features_than_classes_is_config_error() {
        assert!(matches!(fno_init(1, 2, &mut RngStream::new(0), true), Err(CoreError::Config(_))));
    }

    #[test]
    fn logits_of_a_column_are_one_hot() {
        let m = fno_init(6, 3, &mut RngStream::new(3), true).unwrap();
        for d in 0..3 {
            let x = Tensor::from_fn(&[1, 6], |i| m.w.at(&[i, d]));
            let z = m.forward(&x).unwrap();
            for k in 0..3 {
                assert!((z.data()[k] - if k == d { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gamma_gives_zero_logits() {
        let mut m = fno_init(6, 2, &mut RngStream::new(3), true).unwrap();
        m.gamma = 0.0;
        let z = m.forward(&Tensor::from_fn(&[2, 6], |i| i as f64)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hadamard_order_two() {
        let w = hadamard_matrix(2, 2).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert_eq!(w.data(), &[h, h, h, -h]);
    }

    #[test]
    fn hadamard_entries_and_orthonormality() {
        let w = hadamard_matrix(8, 2).unwrap();
        assert!(w.data().iter().all(|v| (v.abs() - 1.0 / 8f64.sqrt()).abs() < 1e-15));
        assert!(gram_identity_error(&w) <= 1e-6);
        // Truncated rows still give orthonormal leading columns here.
        assert!(gram_identity_error(&hadamard_matrix(192, 16).unwrap()) <= 1e-9);
    }

    #[test]
    fn hadamard_without_orthonormal_truncation_is_config_error() {
        assert!(matches!(hadamard_matrix(3, 2), Err(CoreError::Config(_))));
    }
}
