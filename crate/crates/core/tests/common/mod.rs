//! Helpers shared by integration test targets.
#![allow(dead_code)]

use b2b::autodiff::{Activation, Graph, Mlp, MlpSpec};
use b2b::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Norm-wise relative error between the reverse-mode gradient of `Σ mlp(x)` and central
/// differences with step `1e-5`, over a random batch and randomized biases.
pub fn mlp_gradient_error(layer_sizes: Vec<usize>, activation: Activation, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = MlpSpec::new(layer_sizes.clone(), activation).unwrap();
    let mut mlp = Mlp::new(spec.clone(), seed);
    let mut flat = mlp.params.flatten();
    for v in flat.iter_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    mlp.params.assign_flat(&flat).unwrap();
    let batch = 5;
    let x = Tensor::new(
        vec![batch, layer_sizes[0]],
        (0..batch * layer_sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let mut graph = Graph::new();
    let binding = graph.bind(&mlp.params);
    let xn = graph.constant(x.clone());
    let out = mlp.record(&mut graph, &binding, xn).unwrap();
    let loss = graph.sum(out);
    let grads = graph.backward(loss).unwrap().for_binding(&binding).flatten();

    let h = 1e-5;
    let eval = |p: &[f64]| {
        let mut m = mlp.clone();
        m.params.assign_flat(p).unwrap();
        m.predict(&x).unwrap().sum()
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        num += (grads[i] - fd).powi(2);
        den += fd * fd;
    }
    num.sqrt() / den.sqrt().max(1e-12)
}
