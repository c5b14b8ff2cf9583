use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::StanceLabel;
use crate::encoder::{social_dim, AggregatorKind, EncoderParams, HistoryKind};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Architecture of the classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Text embedding width `d`.
    pub input_dim: usize,
    /// Encoder width `h`.
    pub hidden: usize,
    /// Neighborhood order, which is also the number of layers.
    pub k: usize,
    /// Number of recent posts per user.
    pub lambda: usize,
    pub aggregator: AggregatorKind,
    pub history: HistoryKind,
    /// When false the social encoder is skipped and the head sees only the
    /// post's own text embedding.
    pub social: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 64,
            hidden: 64,
            k: 2,
            lambda: 3,
            aggregator: AggregatorKind::Gat,
            history: HistoryKind::PositionEncoding,
            social: true,
        }
    }
}

impl ModelConfig {
    pub fn text_only(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            social: false,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if self.social && self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.lambda == 0 {
            return Err(Error::invalid("lambda must be at least 1"));
        }
        Ok(())
    }

    pub fn social_dim(&self) -> usize {
        if self.social {
            social_dim(self.hidden, self.k)
        } else {
            0
        }
    }

    /// Width of the head input, `dim(z_social) + d`.
    pub fn head_input(&self) -> usize {
        self.social_dim() + self.input_dim
    }

    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        [
            ("model.input_dim", self.input_dim.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.k", self.k.to_string()),
            ("model.lambda", self.lambda.to_string()),
            ("model.aggregator", self.aggregator.to_string()),
            ("model.history", self.history.to_string()),
            ("model.social", self.social.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
            pairs
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for `{key}`")))
        }
        let config = ModelConfig {
            input_dim: get(pairs, "model.input_dim")?,
            hidden: get(pairs, "model.hidden")?,
            k: get(pairs, "model.k")?,
            lambda: get(pairs, "model.lambda")?,
            aggregator: get(pairs, "model.aggregator")?,
            history: get(pairs, "model.history")?,
            social: get(pairs, "model.social")?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Every trainable tensor of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Position weights, most recent post first.
    pub alpha: Vec<f64>,
    /// Absent for the text-only baseline.
    pub encoder: Option<EncoderParams>,
    /// `head_input × 4`
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

impl ModelParams {
    /// Xavier-uniform matrices, zero biases, `α = 1/λ`.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let encoder = config
            .social
            .then(|| EncoderParams::init(config.input_dim, config.hidden, config.k, rng));
        ModelParams {
            alpha: vec![1.0 / config.lambda as f64; config.lambda],
            encoder,
            head_weight: Matrix::xavier(config.head_input(), StanceLabel::COUNT, rng),
            head_bias: vec![0.0; StanceLabel::COUNT],
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams {
            alpha: vec![0.0; config.lambda],
            encoder: config
                .social
                .then(|| EncoderParams::zeros(config.input_dim, config.hidden, config.k)),
            head_weight: Matrix::zeros(config.head_input(), StanceLabel::COUNT),
            head_bias: vec![0.0; StanceLabel::COUNT],
        }
    }

    /// Named tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![("alpha".into(), vec![self.alpha.len()], &self.alpha)];
        if let Some(enc) = &self.encoder {
            let p = &enc.input_proj;
            out.push(("input_proj".into(), vec![p.rows(), p.cols()], p.as_slice()));
            for (l, layer) in enc.layers.iter().enumerate() {
                for (o, agg) in layer.iter().enumerate() {
                    let prefix = format!("layer{}.order{}", l + 1, o + 1);
                    out.push((
                        format!("{prefix}.proj"),
                        vec![agg.proj.rows(), agg.proj.cols()],
                        agg.proj.as_slice(),
                    ));
                    out.push((format!("{prefix}.attn"), vec![agg.attn.len()], &agg.attn));
                }
            }
        }
        let w = &self.head_weight;
        out.push(("head.weight".into(), vec![w.rows(), w.cols()], w.as_slice()));
        out.push(("head.bias".into(), vec![self.head_bias.len()], &self.head_bias));
        out
    }

    /// Mutable views in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.alpha];
        if let Some(enc) = &mut self.encoder {
            out.push(enc.input_proj.as_mut_slice());
            for layer in &mut enc.layers {
                for agg in layer {
                    out.push(agg.proj.as_mut_slice());
                    out.push(&mut agg.attn);
                }
            }
        }
        out.push(self.head_weight.as_mut_slice());
        out.push(&mut self.head_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|t| t.2).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            crate::linalg::axpy(scale, src, dst);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.2.iter().any(|x| !x.is_finite()))
            .map(|t| t.0)
    }
}
