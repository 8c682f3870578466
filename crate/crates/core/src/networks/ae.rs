//! Constrained autoencoder with biorthogonal layer pairs.
//!
//! Layer `l` maps `ℝ^{n_{l-1}} → ℝ^{n_l}` in the decoder and back in the
//! encoder:
//!
//! ```text
//! φ_l(z) = σ₊(Φ_l z + b_l)        ρ_l(x) = Ψ_lᵀ(σ₋(x) − b_l)
//! ```
//!
//! With `Ψ_lᵀΦ_l = I` and `σ₋∘σ₊ = id` every layer satisfies
//! `ρ_l∘φ_l = id`, hence so do the composed maps and their differentials.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffengine::{Activation, AeSigma, Bound, Jet, Var};
use crate::error::{Error, Result};
use crate::manifolds::{BiorthPair, ParamGroup, ParamId, Point, ProductPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AeActivation {
    /// Smooth leaky pair with slope angle `α ∈ (0, π/4)`.
    Smooth(AeSigma),
    Identity,
}

impl AeActivation {
    pub fn smooth(alpha: f64) -> Result<Self> {
        Ok(AeActivation::Smooth(AeSigma::new(alpha)?))
    }

    fn decoder(self) -> Activation {
        match self {
            AeActivation::Smooth(s) => Activation::SigmaPlus(s),
            AeActivation::Identity => Activation::Identity,
        }
    }

    fn encoder(self) -> Activation {
        match self {
            AeActivation::Smooth(s) => Activation::SigmaMinus(s),
            AeActivation::Identity => Activation::Identity,
        }
    }
}

/// Weights of one layer: a point on the biorthogonal manifold, or an
/// unconstrained pair `(Φ_d, Φ_e)` for the penalty-based baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AeWeights {
    Biorth(ParamId),
    Overparam { phi_d: ParamId, phi_e: ParamId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: AeWeights,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedAe {
    /// Layer widths `d = n_0 ≤ … ≤ n_L = n`.
    pub sizes: Vec<usize>,
    pub act: AeActivation,
    pub layers: Vec<AeLayer>,
}

/// Decoder pre-activations, needed for transposed Jacobian products.
pub struct DecoderTrace<'t> {
    pre: Vec<Var<'t>>,
}

/// Random `n x d` matrix with orthonormal columns.
pub fn random_orthonormal(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((n, d));
    let mut j = 0;
    while j < d {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for k in 0..j {
                let dot: f64 = (0..n).map(|i| q[[i, k]] * v[i]).sum();
                for (i, vi) in v.iter_mut().enumerate() {
                    *vi -= dot * q[[i, k]];
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for (i, vi) in v.iter().enumerate() {
            q[[i, j]] = vi / norm;
        }
        j += 1;
    }
    q
}

impl ConstrainedAe {
    /// Registers the layers in `params`, initialized with `Φ = Ψ` a random
    /// orthonormal basis and zero biases. With `overparam` the pair is
    /// stored as two unconstrained matrices.
    pub fn new(
        params: &mut ProductPoint,
        name: &str,
        sizes: &[usize],
        act: AeActivation,
        overparam: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid(format!("autoencoder widths must be nondecreasing and positive, got {sizes:?}")));
        }
        let mut layers = Vec::new();
        for l in 1..sizes.len() {
            let (n_in, n_out) = (sizes[l - 1], sizes[l]);
            let q = random_orthonormal(rng, n_out, n_in);
            let weights = if overparam {
                AeWeights::Overparam {
                    phi_d: params.push(format!("{name}.{l}.phi_d"), ParamGroup::Ae, Point::Euclidean(q.clone())),
                    phi_e: params.push(format!("{name}.{l}.phi_e"), ParamGroup::Ae, Point::Euclidean(q)),
                }
            } else {
                AeWeights::Biorth(params.push(format!("{name}.{l}.pair"), ParamGroup::Ae, Point::Biorth(BiorthPair::from_orthonormal(q)?)))
            };
            let bias = params.push(format!("{name}.{l}.bias"), ParamGroup::Ae, Point::Euclidean(Array2::zeros((1, n_out))));
            layers.push(AeLayer {
                n_in,
                n_out,
                weights,
                bias,
            });
        }
        Ok(ConstrainedAe {
            sizes: sizes.to_vec(),
            act,
            layers,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn full_dim(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    pub fn is_overparam(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.weights, AeWeights::Overparam { .. }))
    }

    /// `(Φ_l, Ψ_l)` as graph nodes.
    pub fn weights<'t>(&self, b: &Bound<'t>, l: usize) -> (Var<'t>, Var<'t>) {
        match self.layers[l].weights {
            AeWeights::Biorth(id) => b.pair(id),
            AeWeights::Overparam { phi_d, phi_e } => (b.mat(phi_d), b.mat(phi_e)),
        }
    }

    /// `(Φ_l, Ψ_l)` as plain matrices.
    pub fn weight_values(&self, p: &ProductPoint, l: usize) -> (Array2<f64>, Array2<f64>) {
        match &self.layers[l].weights {
            AeWeights::Biorth(id) => match p.get(*id) {
                Point::Biorth(pair) => (pair.phi.clone(), pair.psi.clone()),
                _ => panic!("layer {l} is not a biorthogonal pair"),
            },
            AeWeights::Overparam { phi_d, phi_e } => (p.get(*phi_d).matrix().clone(), p.get(*phi_e).matrix().clone()),
        }
    }

    /// All parameter ids of the autoencoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l.weights {
                AeWeights::Biorth(id) => out.push(id),
                AeWeights::Overparam { phi_d, phi_e } => {
                    out.push(phi_d);
                    out.push(phi_e);
                }
            }
            out.push(l.bias);
        }
        out
    }

    /// Decoder `φ` applied to a jet: position, pushforward of the tangents
    /// and the curvature term `dφ[ẍ] + d²φ[ẋ₁, ẋ₁]`.
    pub fn decode_jet<'t>(&self, b: &Bound<'t>, z: &Jet<'t>) -> (Jet<'t>, DecoderTrace<'t>) {
        assert_eq!(z.x.cols(), self.latent_dim(), "decoder input width");
        let act = self.act.decoder();
        let mut j = z.clone();
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (phi, _) = self.weights(b, l);
            j = j.affine(|v| v.matmul_t(phi), b.mat(layer.bias));
            pre.push(j.x);
            j = j.act(act);
        }
        (j, DecoderTrace { pre })
    }

    /// Encoder `ρ` applied to a jet.
    pub fn encode_jet<'t>(&self, b: &Bound<'t>, x: &Jet<'t>) -> Jet<'t> {
        assert_eq!(x.x.cols(), self.full_dim(), "encoder input width");
        let act = self.act.encoder();
        let mut j = x.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (_, psi) = self.weights(b, l);
            j = j.act(act);
            j.x = j.x.sub(b.mat(layer.bias));
            j = j.linear(|v| v.matmul(psi));
        }
        j
    }

    pub fn decode<'t>(&self, b: &Bound<'t>, z: Var<'t>) -> Var<'t> {
        self.decode_jet(b, &Jet::point(z)).0.x
    }

    pub fn encode<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.encode_jet(b, &Jet::point(x)).x
    }

    /// `dφ|_z ᵀ v` for the point `z` of a previous decoder pass.
    pub fn decoder_vjp<'t>(&self, b: &Bound<'t>, trace: &DecoderTrace<'t>, v: Var<'t>) -> Var<'t> {
        let act = self.act.decoder();
        let mut g = v;
        for l in (0..self.layers.len()).rev() {
            if !act.is_linear() {
                g = g.mul(trace.pre[l].act(act, 1));
            }
            let (phi, _) = self.weights(b, l);
            g = g.matmul(phi);
        }
        g
    }

    /// Largest `‖Ψ_lᵀΦ_l − I‖_max` over layers.
    pub fn biorth_residual(&self, p: &ProductPoint) -> f64 {
        (0..self.layers.len())
            .map(|l| {
                let (phi, psi) = self.weight_values(p, l);
                let m = psi.t().dot(&phi);
                m.indexed_iter()
                    .map(|((i, j), &x)| (x - if i == j { 1.0 } else { 0.0 }).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}
