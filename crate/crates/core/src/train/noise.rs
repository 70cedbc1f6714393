use xlm_tensor::{Float, Graph, RngStream, Var};

use crate::error::{config, CoreError, Result};

pub fn check_probabilities(p_salt: f64, p_pepper: f64) -> Result<()> {
    let ok = |p: f64| (0.0..=1.0).contains(&p);
    if !ok(p_salt) || !ok(p_pepper) || p_salt + p_pepper > 1.0 {
        return config(format!("salt/pepper probabilities {p_salt}/{p_pepper} must lie in [0,1] and sum to at most 1"));
    }
    Ok(())
}

/// Replaces each element of a (B,C,H,W) activation by its (sample, channel)
/// spatial maximum with probability `p_salt`, by the minimum with
/// probability `p_pepper`, and leaves it otherwise. Replaced elements carry
/// no gradient.
pub fn inject_salt_pepper_latent<T: Float>(
    g: &mut Graph<T>,
    x: Var,
    p_salt: f64,
    p_pepper: f64,
    rng: &mut RngStream,
) -> Result<Var> {
    check_probabilities(p_salt, p_pepper)?;
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 {
        return Err(CoreError::Dimension(format!("latent noise expects (B,C,H,W), got {shape:?}")));
    }
    if p_salt == 0.0 && p_pepper == 0.0 {
        return Ok(x);
    }
    let plane = shape[2] * shape[3];
    let data = g.value(x).data();
    let mut mask = Vec::with_capacity(data.len());
    let mut fill = Vec::with_capacity(data.len());
    for chunk in data.chunks(plane) {
        let hi = chunk.iter().copied().fold(T::neg_infinity(), T::max);
        let lo = chunk.iter().copied().fold(T::infinity(), T::min);
        for _ in chunk {
            let u = rng.uniform();
            if u < p_salt {
                mask.push(true);
                fill.push(hi);
            } else if u < p_salt + p_pepper {
                mask.push(true);
                fill.push(lo);
            } else {
                mask.push(false);
                fill.push(T::zero());
            }
        }
    }
    Ok(g.masked_fill(x, mask, &fill)?)
}
