use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sample::SampleRecord;
use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};
use crate::seed;

/// Initial value of the inverse temperature `1/τ`.
pub const INV_TEMPERATURE_INIT: f64 = 0.07;
/// Upper clip of `1/τ`; logits are never scaled beyond this.
pub const INV_TEMPERATURE_MAX: f64 = 100.0;
/// Lower floor of `1/τ`.
pub const INV_TEMPERATURE_MIN: f64 = 1e-4;

/// Width of the box descriptor appended to every visual feature.
pub const POSITIONAL_DIM: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Instruction feature width.
    pub d_inst: usize,
    /// Candidate and context feature width.
    pub d_vis: usize,
    /// Trunk width (#H).
    pub hidden: usize,
    /// Number of hidden-to-hidden trunk layers (#L).
    pub layers: usize,
    /// Attention heads (#A). Kept so the full-scale shape is expressible; the
    /// MLP trunk has no attention.
    pub heads: usize,
    /// Embedding dimension `d`.
    pub embed_dim: usize,
    pub classifier_hidden: usize,
    /// EMA smoothing coefficient of the momentum encoder.
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_inst: 16,
            d_vis: 16,
            hidden: 64,
            layers: 1,
            heads: 12,
            embed_dim: 32,
            classifier_hidden: 32,
            gamma: 0.999,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.d_inst + 2 * (self.d_vis + POSITIONAL_DIM)
    }

    /// `[input, hidden, (hidden) x layers, d]`.
    pub fn encoder_layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim(), self.hidden];
        sizes.extend(std::iter::repeat_n(self.hidden, self.layers));
        sizes.push(self.embed_dim);
        sizes
    }

    pub fn classifier_layer_sizes(&self) -> Vec<usize> {
        vec![self.embed_dim, self.classifier_hidden, 2]
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("model.d_inst", self.d_inst),
            ("model.d_vis", self.d_vis),
            ("model.hidden", self.hidden),
            ("model.embed_dim", self.embed_dim),
            ("model.classifier_hidden", self.classifier_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "model.gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `f_θ`, the trained encoder.
    Online,
    /// `f_θ′`, the moving-average copy. Never receives gradients.
    Momentum,
}

/// Learning-rate group of a trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    General = 0,
    /// The encoder trunk, which stands in for the transformer layers.
    Body = 1,
}

/// Encoder, momentum encoder, classifier and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    encoder: Vec<Tensor>,
    momentum: Vec<Tensor>,
    classifier: Vec<Tensor>,
    inv_temperature: Tensor,
    gamma: f64,
}

/// Graph handles for the online parameters of one step.
#[derive(Debug, Clone)]
pub struct OnlineVars {
    pub encoder: Vec<Var>,
    pub classifier: Vec<Var>,
    pub inv_temperature: Var,
}

fn init_linear(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> [Tensor; 2] {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..=bound)).collect::<Vec<_>>();
    let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("sized");
    let b = Tensor::vector(draw(fan_out));
    [w, b]
}

fn init_mlp(rng: &mut impl Rng, sizes: &[usize]) -> Vec<Tensor> {
    sizes
        .windows(2)
        .flat_map(|w| init_linear(rng, w[0], w[1]))
        .collect()
}

fn shapes_for(sizes: &[usize]) -> Vec<Vec<usize>> {
    sizes
        .windows(2)
        .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
        .collect()
}

/// Applies `tanh(x W + b)` layers, leaving the last layer linear.
fn mlp_graph(g: &mut Graph, weights: &[Var], input: Var) -> Result<Var> {
    let n_layers = weights.len() / 2;
    let mut h = input;
    for (i, wb) in weights.chunks(2).enumerate() {
        let z = g.matmul(h, wb[0])?;
        let z = g.add_bias(z, wb[1])?;
        h = if i + 1 < n_layers { g.tanh(z)? } else { z };
    }
    Ok(h)
}

pub fn encoder_graph(g: &mut Graph, weights: &[Var], input: Var) -> Result<Var> {
    mlp_graph(g, weights, input)
}

/// Two-class logits `[n, 2]`; column 1 is the "matches" class.
pub fn classifier_graph(g: &mut Graph, weights: &[Var], embedding: Var) -> Result<Var> {
    mlp_graph(g, weights, embedding)
}

impl ModelState {
    /// Fresh model with weights drawn uniformly from `±1/√fan_in` and the
    /// momentum encoder initialised as an exact copy of the encoder.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, &[seed::INIT]);
        let encoder = init_mlp(&mut rng, &config.encoder_layer_sizes());
        let classifier = init_mlp(&mut rng, &config.classifier_layer_sizes());
        Ok(Self {
            config: config.clone(),
            momentum: encoder.clone(),
            encoder,
            classifier,
            inv_temperature: Tensor::scalar(INV_TEMPERATURE_INIT),
            gamma: config.gamma,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        encoder: Vec<Tensor>,
        momentum: Vec<Tensor>,
        classifier: Vec<Tensor>,
        inv_temperature: f64,
        gamma: f64,
    ) -> Result<Self> {
        config.validate()?;
        let check = |what: &str, ts: &[Tensor], sizes: &[usize]| -> Result<()> {
            let want = shapes_for(sizes);
            let got: Vec<Vec<usize>> = ts.iter().map(|t| t.shape().to_vec()).collect();
            if want != got {
                return Err(Error::shape(
                    "model_state",
                    format!("{what}: expected shapes {want:?}, got {got:?}"),
                ));
            }
            Ok(())
        };
        check("encoder", &encoder, &config.encoder_layer_sizes())?;
        check("momentum encoder", &momentum, &config.encoder_layer_sizes())?;
        check("classifier", &classifier, &config.classifier_layer_sizes())?;
        Ok(Self {
            config,
            encoder,
            momentum,
            classifier,
            inv_temperature: Tensor::scalar(inv_temperature),
            gamma,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
        }
        self.gamma = gamma;
        Ok(())
    }

    pub fn inv_temperature(&self) -> f64 {
        self.inv_temperature.item()
    }

    /// Overwrites `1/τ` without clamping.
    pub fn set_inv_temperature(&mut self, value: f64) {
        self.inv_temperature = Tensor::scalar(value);
    }

    /// Clips `1/τ` into `[1e-4, 100]` and returns the new value.
    pub fn clamp_temperature(&mut self) -> f64 {
        let v = self
            .inv_temperature()
            .clamp(INV_TEMPERATURE_MIN, INV_TEMPERATURE_MAX);
        self.set_inv_temperature(v);
        v
    }

    pub fn encoder_params(&self) -> &[Tensor] {
        &self.encoder
    }

    pub fn momentum_params(&self) -> &[Tensor] {
        &self.momentum
    }

    pub fn classifier_params(&self) -> &[Tensor] {
        &self.classifier
    }

    pub fn encoder_params_mut(&mut self) -> &mut [Tensor] {
        &mut self.encoder
    }

    pub fn momentum_params_mut(&mut self) -> &mut [Tensor] {
        &mut self.momentum
    }

    pub fn classifier_params_mut(&mut self) -> &mut [Tensor] {
        &mut self.classifier
    }

    /// Every trainable tensor, in the same order as
    /// [`ModelState::param_groups`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain(self.classifier.iter_mut())
            .chain(std::iter::once(&mut self.inv_temperature))
            .collect()
    }

    /// The embedder (first encoder layer), the classifier and the temperature
    /// train at the general rate; the rest of the encoder is the body.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let enc = (0..self.encoder.len()).map(|i| {
            if i < 2 {
                ParamGroup::General
            } else {
                ParamGroup::Body
            }
        });
        enc.chain(self.classifier.iter().map(|_| ParamGroup::General))
            .chain(std::iter::once(ParamGroup::General))
            .collect()
    }

    /// Registers the online parameters as differentiable leaves.
    pub fn register(&self, g: &mut Graph) -> OnlineVars {
        OnlineVars {
            encoder: self.encoder.iter().map(|t| g.param(t.clone())).collect(),
            classifier: self.classifier.iter().map(|t| g.param(t.clone())).collect(),
            inv_temperature: g.param(self.inv_temperature.clone()),
        }
    }

    /// Gradients from a backward pass, ordered like [`ModelState::trainable_mut`].
    /// Leaves that did not take part in the loss contribute zeros.
    pub fn collect_grads(&self, g: &Graph, vars: &OnlineVars) -> Vec<Vec<f64>> {
        vars.encoder
            .iter()
            .chain(&vars.classifier)
            .chain(std::iter::once(&vars.inv_temperature))
            .map(|&v| g.grad(v).expect("registered as param").to_vec())
            .collect()
    }

    /// Encoder input: instruction ⊕ candidate ⊕ PE(candidate box) ⊕
    /// mean over context of (feature ⊕ PE(box)).
    pub fn sample_input(&self, s: &SampleRecord) -> Result<Vec<f64>> {
        s.validate()?;
        let c = &self.config;
        if s.inst.len() != c.d_inst {
            return Err(Error::shape(
                "encode",
                format!("sample {}: instruction width {} != d_inst {}", s.id, s.inst.len(), c.d_inst),
            ));
        }
        if s.cand.len() != c.d_vis {
            return Err(Error::shape(
                "encode",
                format!("sample {}: candidate width {} != d_vis {}", s.id, s.cand.len(), c.d_vis),
            ));
        }
        let mut pooled = vec![0.0; c.d_vis + POSITIONAL_DIM];
        for (feat, bx) in s.cont.iter().zip(&s.cont_boxes) {
            if feat.len() != c.d_vis {
                return Err(Error::shape(
                    "encode",
                    format!("sample {}: context width {} != d_vis {}", s.id, feat.len(), c.d_vis),
                ));
            }
            for (p, v) in pooled.iter_mut().zip(feat.iter().chain(&bx.positional_encoding())) {
                *p += v;
            }
        }
        if !s.cont.is_empty() {
            let n = s.cont.len() as f64;
            pooled.iter_mut().for_each(|p| *p /= n);
        }
        let mut x = Vec::with_capacity(c.input_dim());
        x.extend_from_slice(&s.inst);
        x.extend_from_slice(&s.cand);
        x.extend_from_slice(&s.cand_box.positional_encoding());
        x.extend_from_slice(&pooled);
        Ok(x)
    }

    pub fn input_matrix(&self, samples: &[&SampleRecord]) -> Result<Tensor> {
        let rows = samples
            .iter()
            .map(|s| self.sample_input(s))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Tensor::zeros(&[0, self.config.input_dim()]));
        }
        Tensor::from_rows(&rows)
    }

    /// Embeddings `[n, d]` of a batch, computed without recording gradients.
    pub fn encode_batch(&self, samples: &[&SampleRecord], which: Branch) -> Result<Tensor> {
        let input = self.input_matrix(samples)?;
        if samples.is_empty() {
            return Ok(Tensor::zeros(&[0, self.config.embed_dim]));
        }
        let params = match which {
            Branch::Online => &self.encoder,
            Branch::Momentum => &self.momentum,
        };
        let mut g = Graph::new();
        let weights: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
        let x = g.constant(input);
        let out = encoder_graph(&mut g, &weights, x)?;
        Ok(g.value(out).clone())
    }

    pub fn encode(&self, sample: &SampleRecord, which: Branch) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&[sample], which)?.into_data())
    }

    /// Classifier logits `[n, 2]` for raw embeddings.
    pub fn logits(&self, embeddings: &Tensor) -> Result<Tensor> {
        let (_, d) = embeddings.rows_cols();
        if embeddings.shape().len() != 2 || d != self.config.embed_dim {
            return Err(Error::shape(
                "classify",
                format!("embeddings {:?}, d = {}", embeddings.shape(), self.config.embed_dim),
            ));
        }
        let mut g = Graph::new();
        let weights: Vec<Var> = self.classifier.iter().map(|t| g.constant(t.clone())).collect();
        let e = g.constant(embeddings.clone());
        let out = classifier_graph(&mut g, &weights, e)?;
        Ok(g.value(out).clone())
    }

    /// `p(ŷ = 1)` for one embedding.
    pub fn classify(&self, embedding: &[f64]) -> Result<f64> {
        let e = Tensor::matrix(1, embedding.len(), embedding.to_vec())?;
        let z = self.logits(&e)?;
        Ok(prob_positive(z.row(0)))
    }

    /// Moves the momentum encoder toward the encoder:
    /// `θ′ ← γ θ′ + (1 − γ) θ`.
    pub fn momentum_update(&mut self) -> Result<()> {
        if self.encoder.len() != self.momentum.len() {
            return Err(Error::shape("momentum_update", "tensor counts differ"));
        }
        for (m, e) in self.momentum.iter().zip(&self.encoder) {
            if m.shape() != e.shape() {
                return Err(Error::shape(
                    "momentum_update",
                    format!("{:?} vs {:?}", m.shape(), e.shape()),
                ));
            }
        }
        let gamma = self.gamma;
        for (m, e) in self.momentum.iter_mut().zip(&self.encoder) {
            for (mv, &ev) in m.data_mut().iter_mut().zip(e.data()) {
                *mv = gamma * *mv + (1.0 - gamma) * ev;
            }
        }
        Ok(())
    }
}

/// `p(ŷ = 1)` from logits `[z0, z1]`.
pub fn prob_positive(logits: &[f64]) -> f64 {
    let (z0, z1) = (logits[0], logits[1]);
    let m = z0.max(z1);
    let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
    e1 / (e0 + e1)
}

/// Decision rule; a tie counts as a match.
pub fn predicted_label(p_positive: f64) -> usize {
    usize::from(p_positive >= 0.5)
}
