//! Fully connected networks `x ↦ σ(A x + b)` with row-major weights.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Activation, Bound, Jet, Var};
use crate::error::{Error, Result};
use crate::manifolds::{ParamGroup, ParamId, Point, ProductPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths including input and output.
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

/// Pre-activations recorded during a forward pass.
pub struct MlpTrace<'t> {
    pre: Vec<Var<'t>>,
}

/// Uniform `±1/√fan_in` initialization.
pub fn fan_in_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let s = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-s..s))
}

impl Mlp {
    /// Registers a new network's parameters in `params`.
    pub fn new(
        params: &mut ProductPoint,
        name: &str,
        group: ParamGroup,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("network {name}: invalid layer sizes {sizes:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 1..sizes.len() {
            let (i, o) = (sizes[l - 1], sizes[l]);
            weights.push(params.push(format!("{name}.{l}.weight"), group, Point::Euclidean(fan_in_uniform(rng, o, i, i))));
            biases.push(params.push(format!("{name}.{l}.bias"), group, Point::Euclidean(fan_in_uniform(rng, 1, o, i))));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    fn act(&self, l: usize) -> Activation {
        if l + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    /// All parameter ids of the network.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    /// Pushes a jet through the network.
    pub fn jet<'t>(&self, b: &Bound<'t>, x: &Jet<'t>) -> (Jet<'t>, MlpTrace<'t>) {
        assert_eq!(x.x.cols(), self.input_dim(), "network input width");
        let mut j = x.clone();
        let mut pre = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let w = b.mat(self.weights[l]);
            j = j.affine(|v| v.matmul_t(w), b.mat(self.biases[l]));
            pre.push(j.x);
            j = j.act(self.act(l));
        }
        (j, MlpTrace { pre })
    }

    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.jet(b, &Jet::point(x)).0.x
    }

    /// Vector-Jacobian product `g_outᵀ ∂f/∂x` as graph nodes, using the
    /// pre-activations of a previous pass. `g_out` may be a single row.
    pub fn input_grad<'t>(&self, b: &Bound<'t>, trace: &MlpTrace<'t>, g_out: Var<'t>) -> Var<'t> {
        let mut g = g_out;
        for l in (0..self.num_layers()).rev() {
            let act = self.act(l);
            if !act.is_linear() {
                g = g.mul(trace.pre[l].act(act, 1));
            }
            g = g.matmul(b.mat(self.weights[l]));
        }
        g
    }
}
