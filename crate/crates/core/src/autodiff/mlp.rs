use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, Graph, NodeId, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Architecture of a fully connected network; hidden layers are activated,
/// the output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes must be ≥ 1, got {layer_sizes:?}")));
        }
        Ok(MlpSpec {
            layer_sizes,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_scalars(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

pub(crate) fn weight_name(layer: usize) -> String {
    format!("layer{layer}.weight")
}

pub(crate) fn bias_name(layer: usize) -> String {
    format!("layer{layer}.bias")
}

/// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
pub fn mlp_init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<ParameterStore> {
    let spec = MlpSpec::new(layer_sizes.to_vec(), activation)?;
    Ok(init_params(&spec, seed))
}

fn init_params(spec: &MlpSpec, seed: u64) -> ParameterStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for (l, w) in spec.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        store
            .insert(weight_name(l), Tensor::from_parts(vec![fan_in, fan_out], weights))
            .expect("fresh names");
        store
            .insert(bias_name(l), Tensor::zeros(&[1, fan_out]))
            .expect("fresh names");
    }
    store
}

/// A network architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParameterStore,
}

impl Mlp {
    pub fn new(spec: MlpSpec, seed: u64) -> Self {
        let params = init_params(&spec, seed);
        Mlp { spec, params }
    }

    pub fn from_parts(spec: MlpSpec, params: ParameterStore) -> Result<Self> {
        for (l, w) in spec.layer_sizes.windows(2).enumerate() {
            let ok_w = params.get(&weight_name(l)).map(|t| t.shape() == [w[0], w[1]]);
            let ok_b = params.get(&bias_name(l)).map(|t| t.shape() == [1, w[1]]);
            if ok_w != Some(true) || ok_b != Some(true) {
                return Err(Error::Dimension(format!(
                    "parameters do not match layer {l} of {:?}",
                    spec.layer_sizes
                )));
            }
        }
        Ok(Mlp { spec, params })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 2 || x.cols() != self.spec.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects [batch, {}] input, got {:?}",
                self.spec.input_dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Evaluation without recording a tape.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let batch = x.rows();
        let mut h = x.data().to_vec();
        let n_layers = self.spec.num_layers();
        for l in 0..n_layers {
            let w = self.params.get(&weight_name(l)).expect("validated");
            let b = self.params.get(&bias_name(l)).expect("validated");
            let (fan_in, fan_out) = (w.rows(), w.cols());
            let mut out = vec![0.0; batch * fan_out];
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(b.data());
            }
            gemm(batch, fan_in, fan_out, &h, false, w.data(), false, &mut out, 1.0);
            if l + 1 < n_layers {
                let act = self.spec.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = out;
        }
        Ok(Tensor::from_parts(vec![batch, self.spec.output_dim()], h))
    }

    /// Records the network on `graph` using already-bound parameters.
    pub fn record(&self, graph: &mut Graph, binding: &Binding, x: NodeId) -> Result<NodeId> {
        self.check_input(graph.value(x))?;
        let n_layers = self.spec.num_layers();
        let mut h = x;
        for l in 0..n_layers {
            let w = binding.node(2 * l);
            let b = binding.node(2 * l + 1);
            let z = graph.matmul(h, w)?;
            let z = graph.add(z, b)?;
            h = if l + 1 < n_layers {
                match self.spec.activation {
                    Activation::Relu => graph.relu(z),
                    Activation::Tanh => graph.tanh(z),
                }
            } else {
                z
            };
        }
        Ok(h)
    }

    /// Forward pass on a fresh tape, returning the output value and the tape.
    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        let mut graph = Graph::new();
        let binding = graph.bind(&self.params);
        let xin = graph.constant(x.clone());
        let output = self.record(&mut graph, &binding, xin)?;
        Ok(Forward {
            graph,
            binding,
            output,
        })
    }
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub graph: Graph,
    pub binding: Binding,
    pub output: NodeId,
}

impl Forward {
    pub fn value(&self) -> &Tensor {
        self.graph.value(self.output)
    }
}
