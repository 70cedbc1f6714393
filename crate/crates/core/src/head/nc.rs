//! Neural-collapse geometry of penultimate features.

use xlm_tensor::Tensor;

use crate::error::{contract, CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NcReport {
    /// Mean of `|x - mu_label|^2` over samples.
    pub within_class_variance: f64,
    /// `|sum_d psi_d mu_d|`.
    pub mean_center_norm: f64,
    /// `max_d |mu_d| - min_d |mu_d|`.
    pub norm_spread: f64,
    /// Gram matrix (D,D) of the centred, unit-normalised class means.
    pub etf_gram: Tensor<f64>,
    /// Classifier margin of the class means, when a classifier is given.
    pub margin: Option<f64>,
}

impl NcReport {
    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let d = self.etf_gram.shape()[0];
        let mut out = format!(
            "within_class_variance={}\nmean_center_norm={}\nnorm_spread={}\n",
            self.within_class_variance, self.mean_center_norm, self.norm_spread
        );
        for i in 0..d {
            for j in 0..d {
                out.push_str(&format!("etf_gram_{i}_{j}={}\n", self.etf_gram.at(&[i, j])));
            }
        }
        match self.margin {
            Some(m) => out.push_str(&format!("margin={m}\n")),
            None => out.push_str("margin=none\n"),
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Class means (D,F) and sample counts; every class in `0..classes` must
/// occur.
pub fn class_means(features: &Tensor<f64>, labels: &[usize], classes: usize) -> Result<(Tensor<f64>, Vec<usize>)> {
    let &[m, f] = features.shape() else {
        return Err(CoreError::Dimension(format!("features must be (M,F), got {:?}", features.shape())));
    };
    if labels.len() != m {
        return Err(CoreError::Dimension(format!("{} labels for {m} samples", labels.len())));
    }
    let mut sums = vec![0.0; classes * f];
    let mut counts = vec![0usize; classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return contract(format!("label {l} outside 0..{classes}"));
        }
        counts[l] += 1;
        for k in 0..f {
            sums[l * f + k] += features.data()[i * f + k];
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return contract(format!("class {empty} has no samples"));
    }
    for (d, &c) in counts.iter().enumerate() {
        for v in &mut sums[d * f..(d + 1) * f] {
            *v /= c as f64;
        }
    }
    Ok((Tensor::new(&[classes, f], sums)?, counts))
}

/// Collapse diagnostics for labelled features (M,F). The class count is the
/// largest label plus one; `priors` default to class frequencies.
/// `classifier` (F,D), when given, yields the margin.
pub fn nc_metrics(
    features: &Tensor<f64>,
    labels: &[usize],
    priors: Option<&[f64]>,
    classifier: Option<&Tensor<f64>>,
) -> Result<NcReport> {
    let classes = labels.iter().max().map_or(0, |&l| l + 1);
    if classes == 0 {
        return contract("no samples");
    }
    let (means, counts) = class_means(features, labels, classes)?;
    let f = features.shape()[1];
    let m = labels.len();
    let priors: Vec<f64> = match priors {
        Some(p) if p.len() == classes => p.to_vec(),
        Some(p) => return contract(format!("{} priors for {classes} classes", p.len())),
        None => counts.iter().map(|&c| c as f64 / m as f64).collect(),
    };
    let mu = |d: usize| &means.data()[d * f..(d + 1) * f];

    let within = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let x = &features.data()[i * f..(i + 1) * f];
            x.iter().zip(mu(l)).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        / m as f64;

    let mut global = vec![0.0; f];
    for d in 0..classes {
        for (gk, &v) in global.iter_mut().zip(mu(d)) {
            *gk += priors[d] * v;
        }
    }
    let norms: Vec<f64> = (0..classes).map(|d| norm(mu(d))).collect();
    let spread =
        norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - norms.iter().cloned().fold(f64::INFINITY, f64::min);

    let centred: Vec<Vec<f64>> = (0..classes)
        .map(|d| {
            let c: Vec<f64> = mu(d).iter().zip(&global).map(|(a, b)| a - b).collect();
            let n = norm(&c);
            if n > 0.0 {
                c.iter().map(|v| v / n).collect()
            } else {
                c
            }
        })
        .collect();
    let gram = Tensor::from_fn(&[classes, classes], |k| dot(&centred[k / classes], &centred[k % classes]));

    let margin = match classifier {
        Some(w) => Some(margin_score(w, &means)?),
        None => None,
    };
    Ok(NcReport {
        within_class_variance: within,
        mean_center_norm: norm(&global),
        norm_spread: spread,
        etf_gram: gram,
        margin,
    })
}

fn check_classifier(w: &Tensor<f64>, means: &Tensor<f64>) -> Result<(usize, usize)> {
    let (&[f, d], &[dm, fm]) = (w.shape(), means.shape()) else {
        return Err(CoreError::Dimension(format!("W {:?} / means {:?} must be matrices", w.shape(), means.shape())));
    };
    if f != fm || d != dm {
        return Err(CoreError::Dimension(format!("W {:?} does not match class means {:?}", w.shape(), means.shape())));
    }
    Ok((f, d))
}

/// `sum_d psi_d * -ln softmax_d(gamma W^T mu_d)`.
pub fn classmean_objective(w: &Tensor<f64>, gamma: f64, means: &Tensor<f64>, priors: &[f64]) -> Result<f64> {
    let (f, d) = check_classifier(w, means)?;
    if priors.len() != d {
        return contract(format!("{} priors for {d} classes", priors.len()));
    }
    let mut total = 0.0;
    for c in 0..d {
        let mu = &means.data()[c * f..(c + 1) * f];
        let z: Vec<f64> = (0..d).map(|k| gamma * (0..f).map(|i| w.data()[i * d + k] * mu[i]).sum::<f64>()).collect();
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += priors[c] * (lse - z[c]);
    }
    Ok(total)
}

/// `min_d min_{m != d} (w_d . mu_d - w_m . mu_d)`.
pub fn margin_score(w: &Tensor<f64>, means: &Tensor<f64>) -> Result<f64> {
    let (f, d) = check_classifier(w, means)?;
    if d < 2 {
        return contract("margin needs at least two classes");
    }
    let score = |k: usize, c: usize| (0..f).map(|i| w.data()[i * d + k] * means.data()[c * f + i]).sum::<f64>();
    let mut best = f64::INFINITY;
    for c in 0..d {
        for k in (0..d).filter(|&k| k != c) {
            best = best.min(score(c, c) - score(k, c));
        }
    }
    Ok(best)
}
