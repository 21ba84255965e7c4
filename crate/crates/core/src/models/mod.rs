//! Parametric models: a direct-map baseline, a Hamiltonian-only network and
//! the dual-potential dissipative network.
//!
//! Every network exists in three evaluation forms:
//!
//! * plain `f64` evaluation of a single point (rollouts, exports, metrics),
//! * tape evaluation returning [`Var`]s, with parameters either frozen as
//!   constants or registered as inputs (gradient checks),
//! * batched closed-form kernels in [`batched`] used by the training loop.

mod batched;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::{Error, Result};

pub use batched::{DirectCache, PotentialCache};
pub use checkpoint::{CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const DEFAULT_HIDDEN: usize = 256;

/// Affine map `y = W x + b` with `W` stored row-major as `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    rows: usize,
    cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: weights.len(),
            });
        }
        if biases.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: biases.len(),
            });
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite layer parameter".into()));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            biases,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }

    /// Weights ~ N(0, 1/cols), biases zero.
    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (cols as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            })
            .collect();
        Self {
            rows,
            cols,
            weights,
            biases: vec![0.0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> TapedLayer<'t> {
        let reg = |v: f64| if trainable { tape.input(v) } else { tape.constant(v) };
        TapedLayer {
            rows: self.rows,
            cols: self.cols,
            weights: self.weights.iter().map(|&v| reg(v)).collect(),
            biases: self.biases.iter().map(|&v| reg(v)).collect(),
        }
    }
}

struct TapedLayer<'t> {
    rows: usize,
    cols: usize,
    weights: Vec<Var<'t>>,
    biases: Vec<Var<'t>>,
}

impl<'t> TapedLayer<'t> {
    fn apply(&self, tape: &'t Tape, x: &[Var<'t>]) -> Vec<Var<'t>> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| tape.dot(&self.weights[r * self.cols..(r + 1) * self.cols], x) + self.biases[r])
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = Var<'t>> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }
}

/// Scalar potential network: `h1 = tanh(W1 x + b1)`,
/// `h2 = tanh(W2 h1 + b2) + h1`, `out = w3 · h2 + b3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialNet {
    pub layer1: DenseLayer,
    pub layer2: DenseLayer,
    pub head: DenseLayer,
}

/// Direct-map network: `tanh`, `tanh`, linear, two outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectNet {
    pub layer1: DenseLayer,
    pub layer2: DenseLayer,
    pub head: DenseLayer,
}

fn tanh_layer(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    let mut a = layer.apply(x);
    a.iter_mut().for_each(|v| *v = v.tanh());
    a
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

impl PotentialNet {
    fn random(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            layer1: DenseLayer::random(hidden, input_dim, rng),
            layer2: DenseLayer::random(hidden, hidden, rng),
            head: DenseLayer::random(1, hidden, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            layer1: DenseLayer::zeros(hidden, input_dim),
            layer2: DenseLayer::zeros(hidden, hidden),
            head: DenseLayer::zeros(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.cols
    }

    pub fn hidden(&self) -> usize {
        self.layer1.rows
    }

    pub fn param_count(&self) -> usize {
        self.layer1.param_count() + self.layer2.param_count() + self.head.param_count()
    }

    fn hidden_state(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h1 = tanh_layer(&self.layer1, x);
        let mut h2 = tanh_layer(&self.layer2, &h1);
        h2.iter_mut().zip(&h1).for_each(|(a, b)| *a += b);
        (h1, h2)
    }

    /// Potential value at `x`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x.len())?;
        let (_, h2) = self.hidden_state(x);
        Ok(self.head.apply(&h2)[0])
    }

    /// Potential value and its gradient with respect to the input.
    pub fn value_and_input_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.input_dim(), x.len())?;
        let h = self.hidden();
        let h1 = tanh_layer(&self.layer1, x);
        let t2 = tanh_layer(&self.layer2, &h1);
        let w3 = &self.head.weights;
        let value = t2
            .iter()
            .zip(&h1)
            .zip(w3)
            .map(|((a, b), w)| (a + b) * w)
            .sum::<f64>()
            + self.head.biases[0];
        let e2: Vec<f64> = t2.iter().zip(w3).map(|(t, w)| w * (1.0 - t * t)).collect();
        let mut gh1 = w3.clone();
        for (i, e) in e2.iter().enumerate() {
            let row = &self.layer2.weights[i * h..(i + 1) * h];
            gh1.iter_mut().zip(row).for_each(|(g, w)| *g += e * w);
        }
        let d = self.input_dim();
        let mut gx = vec![0.0; d];
        for (i, (g, a)) in gh1.iter().zip(&h1).enumerate() {
            let e1 = g * (1.0 - a * a);
            let row = &self.layer1.weights[i * d..(i + 1) * d];
            gx.iter_mut().zip(row).for_each(|(o, w)| *o += e1 * w);
        }
        Ok((value, gx))
    }

    /// Potential on `tape` with frozen (constant) parameters.
    pub fn potential_value<'t>(&self, tape: &'t Tape, x: &[Var<'t>]) -> Result<Var<'t>> {
        self.on_tape(tape, false).value(tape, x)
    }

    /// Records the parameters on `tape`; `trainable` registers them as inputs.
    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> TapedPotential<'t> {
        TapedPotential {
            layer1: self.layer1.on_tape(tape, trainable),
            layer2: self.layer2.on_tape(tape, trainable),
            head: self.head.on_tape(tape, trainable),
        }
    }

    fn layers(&self) -> [&DenseLayer; 3] {
        [&self.layer1, &self.layer2, &self.head]
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 3] {
        [&mut self.layer1, &mut self.layer2, &mut self.head]
    }
}

/// A [`PotentialNet`] whose parameters live on a tape.
pub struct TapedPotential<'t> {
    layer1: TapedLayer<'t>,
    layer2: TapedLayer<'t>,
    head: TapedLayer<'t>,
}

impl<'t> TapedPotential<'t> {
    pub fn value(&self, tape: &'t Tape, x: &[Var<'t>]) -> Result<Var<'t>> {
        check_dim(self.layer1.cols, x.len())?;
        let h1: Vec<Var<'t>> = self.layer1.apply(tape, x).into_iter().map(Var::tanh).collect();
        let h2: Vec<Var<'t>> = self
            .layer2
            .apply(tape, &h1)
            .into_iter()
            .zip(&h1)
            .map(|(a, &skip)| a.tanh() + skip)
            .collect();
        Ok(self.head.apply(tape, &h2)[0])
    }

    /// Parameters in canonical order (layer by layer, weights then biases).
    pub fn params(&self) -> Vec<Var<'t>> {
        self.layer1
            .params()
            .chain(self.layer2.params())
            .chain(self.head.params())
            .collect()
    }
}

impl DirectNet {
    fn random(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            layer1: DenseLayer::random(hidden, input_dim, rng),
            layer2: DenseLayer::random(hidden, hidden, rng),
            head: DenseLayer::random(2, hidden, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            layer1: DenseLayer::zeros(hidden, input_dim),
            layer2: DenseLayer::zeros(hidden, hidden),
            head: DenseLayer::zeros(2, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.cols
    }

    pub fn hidden(&self) -> usize {
        self.layer1.rows
    }

    pub fn param_count(&self) -> usize {
        self.layer1.param_count() + self.layer2.param_count() + self.head.param_count()
    }

    /// Predicted `(dq/dt, dp/dt)` at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<[f64; 2]> {
        check_dim(self.input_dim(), x.len())?;
        let h1 = tanh_layer(&self.layer1, x);
        let h2 = tanh_layer(&self.layer2, &h1);
        let y = self.head.apply(&h2);
        Ok([y[0], y[1]])
    }

    pub fn direct_value<'t>(&self, tape: &'t Tape, x: &[Var<'t>]) -> Result<[Var<'t>; 2]> {
        self.on_tape(tape, false).value(tape, x)
    }

    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> TapedDirect<'t> {
        TapedDirect {
            layer1: self.layer1.on_tape(tape, trainable),
            layer2: self.layer2.on_tape(tape, trainable),
            head: self.head.on_tape(tape, trainable),
        }
    }

    fn layers(&self) -> [&DenseLayer; 3] {
        [&self.layer1, &self.layer2, &self.head]
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 3] {
        [&mut self.layer1, &mut self.layer2, &mut self.head]
    }
}

pub struct TapedDirect<'t> {
    layer1: TapedLayer<'t>,
    layer2: TapedLayer<'t>,
    head: TapedLayer<'t>,
}

impl<'t> TapedDirect<'t> {
    pub fn value(&self, tape: &'t Tape, x: &[Var<'t>]) -> Result<[Var<'t>; 2]> {
        check_dim(self.layer1.cols, x.len())?;
        let h1: Vec<Var<'t>> = self.layer1.apply(tape, x).into_iter().map(Var::tanh).collect();
        let h2: Vec<Var<'t>> = self.layer2.apply(tape, &h1).into_iter().map(Var::tanh).collect();
        let y = self.head.apply(tape, &h2);
        Ok([y[0], y[1]])
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        self.layer1
            .params()
            .chain(self.layer2.params())
            .chain(self.head.params())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Direct map from coordinates to time derivatives.
    #[serde(rename = "baseline", alias = "mlp")]
    Baseline,
    /// Symplectic gradient of a single learned Hamiltonian.
    #[serde(rename = "hnn", alias = "hamiltonian")]
    Hamiltonian,
    /// Symplectic gradient of `H` plus ordinary gradient of `D`.
    #[serde(rename = "dhnn", alias = "dissipative")]
    Dissipative,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Baseline, ModelKind::Hamiltonian, ModelKind::Dissipative];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Hamiltonian => "hnn",
            ModelKind::Dissipative => "dhnn",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::Baseline => 0,
            ModelKind::Hamiltonian => 1,
            ModelKind::Dissipative => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Baseline),
            1 => Some(ModelKind::Hamiltonian),
            2 => Some(ModelKind::Dissipative),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "mlp" => Ok(ModelKind::Baseline),
            "hnn" | "hamiltonian" => Ok(ModelKind::Hamiltonian),
            "dhnn" | "dissipative" => Ok(ModelKind::Dissipative),
            other => Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Baseline(DirectNet),
    Hamiltonian(PotentialNet),
    /// Two networks with independent parameters.
    Dissipative {
        hamiltonian: PotentialNet,
        dissipation: PotentialNet,
    },
}

impl Model {
    /// Seeded initialization with the default hidden width.
    pub fn init(kind: ModelKind, input_dim: usize, seed: u64) -> Result<Self> {
        Self::init_with_width(kind, input_dim, DEFAULT_HIDDEN, seed)
    }

    pub fn init_with_width(kind: ModelKind, input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if !(input_dim == 2 || input_dim == 3) {
            return Err(Error::InvalidArgument(format!(
                "input dimension must be 2 or 3, got {input_dim}"
            )));
        }
        if hidden == 0 {
            return Err(Error::InvalidArgument("hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match kind {
            ModelKind::Baseline => Model::Baseline(DirectNet::random(input_dim, hidden, &mut rng)),
            ModelKind::Hamiltonian => Model::Hamiltonian(PotentialNet::random(input_dim, hidden, &mut rng)),
            ModelKind::Dissipative => {
                let hamiltonian = PotentialNet::random(input_dim, hidden, &mut rng);
                let dissipation = PotentialNet::random(input_dim, hidden, &mut rng);
                Model::Dissipative {
                    hamiltonian,
                    dissipation,
                }
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Baseline(_) => ModelKind::Baseline,
            Model::Hamiltonian(_) => ModelKind::Hamiltonian,
            Model::Dissipative { .. } => ModelKind::Dissipative,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Baseline(n) => n.input_dim(),
            Model::Hamiltonian(n) => n.input_dim(),
            Model::Dissipative { hamiltonian, .. } => hamiltonian.input_dim(),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Model::Baseline(n) => n.hidden(),
            Model::Hamiltonian(n) => n.hidden(),
            Model::Dissipative { hamiltonian, .. } => hamiltonian.hidden(),
        }
    }

    /// All-zero model with the same shapes, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let (d, h) = (self.input_dim(), self.hidden());
        match self {
            Model::Baseline(_) => Model::Baseline(DirectNet::zeros(d, h)),
            Model::Hamiltonian(_) => Model::Hamiltonian(PotentialNet::zeros(d, h)),
            Model::Dissipative { .. } => Model::Dissipative {
                hamiltonian: PotentialNet::zeros(d, h),
                dissipation: PotentialNet::zeros(d, h),
            },
        }
    }

    /// Layers in canonical order (`H` before `D` for the dissipative kind).
    pub fn layers(&self) -> Vec<&DenseLayer> {
        match self {
            Model::Baseline(n) => n.layers().to_vec(),
            Model::Hamiltonian(n) => n.layers().to_vec(),
            Model::Dissipative {
                hamiltonian,
                dissipation,
            } => hamiltonian.layers().into_iter().chain(dissipation.layers()).collect(),
        }
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        match self {
            Model::Baseline(n) => n.layers_mut().into_iter().collect(),
            Model::Hamiltonian(n) => n.layers_mut().into_iter().collect(),
            Model::Dissipative {
                hamiltonian,
                dissipation,
            } => hamiltonian
                .layers_mut()
                .into_iter()
                .chain(dissipation.layers_mut())
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Flat parameter vector in canonical order: per layer, weights
    /// (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim(self.param_count(), flat.len())?;
        let mut offset = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn serialize(&self) -> Vec<u8> {
        checkpoint::encode(self)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, CheckpointError> {
        checkpoint::decode(bytes)
    }
}

/// A model whose parameters are registered as tape inputs.
pub enum TapedModel<'t> {
    Baseline(TapedDirect<'t>),
    Hamiltonian(TapedPotential<'t>),
    Dissipative {
        hamiltonian: TapedPotential<'t>,
        dissipation: TapedPotential<'t>,
    },
}

impl Model {
    /// Records the model on `tape`; `trainable` registers parameters as inputs.
    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> TapedModel<'t> {
        match self {
            Model::Baseline(n) => TapedModel::Baseline(n.on_tape(tape, trainable)),
            Model::Hamiltonian(n) => TapedModel::Hamiltonian(n.on_tape(tape, trainable)),
            Model::Dissipative {
                hamiltonian,
                dissipation,
            } => TapedModel::Dissipative {
                hamiltonian: hamiltonian.on_tape(tape, trainable),
                dissipation: dissipation.on_tape(tape, trainable),
            },
        }
    }
}

impl<'t> TapedModel<'t> {
    /// Parameters in the same order as [`Model::params`].
    pub fn params(&self) -> Vec<Var<'t>> {
        match self {
            TapedModel::Baseline(n) => n.params(),
            TapedModel::Hamiltonian(n) => n.params(),
            TapedModel::Dissipative {
                hamiltonian,
                dissipation,
            } => {
                let mut p = hamiltonian.params();
                p.extend(dissipation.params());
                p
            }
        }
    }
}
