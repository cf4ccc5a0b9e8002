//! Central finite-difference gradient verification.
//!
//! Runs in `f64`: single precision leaves too little headroom between the
//! O(ε²) truncation error and round-off for a 1e-4 tolerance.

use super::graph::{Graph, NodeId};
use super::{Result, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Builds a scalar loss from differentiable leaves. Called repeatedly with
/// perturbed copies of the same inputs.
pub type LossBuilder<'a> = &'a dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>;

/// Compare reverse-mode gradients of `build` against central finite
/// differences for every element of every input. Returns the maximum
/// normalized error; callers assert it is below [`DEFAULT_TOL`].
pub fn max_gradient_error(inputs: &[Tensor<f64>], eps: f64, build: LossBuilder) -> Result<f64> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    // Analytic gradients.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            g.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.numel() {
            let orig = input.data()[ei];
            work[ti].data_mut()[ei] = orig + eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[ei] = orig - eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let ana = analytic[ti].data()[ei];
            let denom = (numeric.abs() + ana.abs()).max(1e-6);
            worst = worst.max((numeric - ana).abs() / denom);
        }
    }
    Ok(worst)
}

/// Uniform values in `[lo, hi]` that stay at least `margin` away from zero,
/// so finite differences never straddle a ReLU kink.
pub fn random_away_from_zero(
    rng: &mut rand_chacha::ChaCha8Rng,
    shape: &[usize],
    lo: f64,
    hi: f64,
    margin: f64,
) -> Tensor<f64> {
    use rand::Rng;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(lo..hi);
            if v.abs() < margin {
                if v >= 0.0 {
                    margin
                } else {
                    -margin
                }
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}
