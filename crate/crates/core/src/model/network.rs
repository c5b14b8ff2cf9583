use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::{Corpus, Post, PostKind, StanceLabel};
use crate::embed::EmbeddingProvider;
use crate::encoder::{EgoNet, EncoderTrace, HistoryKind};
use crate::error::{Error, Result};
use crate::graph::SocialGraph;
use crate::linalg::{argmax, axpy, dot, softmax};

use super::params::{ModelConfig, ModelParams};

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Samples per parallel work unit. Fixed so that the reduction order, and
/// therefore every gradient bit, does not depend on the thread count.
const CHUNK: usize = 8;

/// Everything a forward pass reads besides the parameters.
#[derive(Clone, Copy)]
pub struct ModelInputs<'a> {
    pub corpus: &'a Corpus,
    pub graph: &'a SocialGraph,
    pub provider: &'a dyn EmbeddingProvider,
}

/// Class probabilities and the chosen label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probs: [f64; StanceLabel::COUNT],
    pub label: StanceLabel,
}

impl Prediction {
    /// Argmax with the lowest index winning ties.
    pub fn from_probs(probs: [f64; StanceLabel::COUNT]) -> Self {
        let label = StanceLabel::from_index(argmax(&probs)).expect("four classes");
        Prediction { probs, label }
    }
}

/// Post embeddings, deduplicated by post id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, u32>,
}

impl EmbeddingTable {
    fn intern(&mut self, post: &Post, inputs: &ModelInputs) -> Result<u32> {
        if let Some(&i) = self.index.get(&post.id) {
            return Ok(i);
        }
        let v = match inputs.provider.embed_post(post) {
            // a retweet carries its source's text, so the source's vector
            // stands in when the provider has none for the retweet itself
            Err(Error::UnknownPostId(_)) if post.kind == PostKind::Retweet => {
                let source = post
                    .source_post_id
                    .as_deref()
                    .and_then(|id| inputs.corpus.get(id))
                    .ok_or_else(|| Error::UnknownPostId(post.id.clone()))?;
                inputs.provider.embed_post(source)?
            }
            other => other?,
        };
        if v.len() != inputs.provider.dim() {
            return Err(Error::DimensionMismatch {
                expected: inputs.provider.dim(),
                got: v.len(),
            });
        }
        let i = self.vectors.len() as u32;
        self.vectors.push(v);
        self.index.insert(post.id.clone(), i);
        Ok(i)
    }

    pub fn get(&self, i: u32) -> &[f64] {
        &self.vectors[i as usize]
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// One classifiable post with everything its forward pass needs.
#[derive(Debug, Clone)]
pub struct Sample {
    pub post_id: String,
    pub gold: Option<StanceLabel>,
    text: u32,
    ego: Option<Arc<EgoNet>>,
    /// Recent posts of every ego node, most recent first.
    histories: Vec<Vec<u32>>,
}

/// Samples sharing one embedding table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: ModelConfig,
    table: Arc<EmbeddingTable>,
    samples: Vec<Sample>,
}

impl Dataset {
    /// Builds samples for `items`. Ego networks are cached per author and
    /// histories are cut at each target post's timestamp.
    pub fn build<'p>(
        items: impl IntoIterator<Item = (&'p Post, Option<StanceLabel>)>,
        inputs: &ModelInputs,
        config: &ModelConfig,
    ) -> Result<Self> {
        config.validate()?;
        if inputs.provider.dim() != config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: config.input_dim,
                got: inputs.provider.dim(),
            });
        }
        let mut table = EmbeddingTable::default();
        let mut egos: HashMap<&str, Arc<EgoNet>> = HashMap::new();
        let mut samples = Vec::new();
        for (post, gold) in items {
            let text = table.intern(post, inputs)?;
            let (ego, histories) = if config.social {
                let ego = match egos.get(post.author_id.as_str()) {
                    Some(e) => Arc::clone(e),
                    None => {
                        let center = inputs
                            .graph
                            .node(&post.author_id)
                            .ok_or_else(|| Error::UserNotInGraph(post.author_id.clone()))?;
                        let e = Arc::new(EgoNet::new(inputs.graph, center, config.k)?);
                        egos.insert(post.author_id.as_str(), Arc::clone(&e));
                        e
                    }
                };
                let mut histories = Vec::with_capacity(ego.nodes.len());
                for &node in &ego.nodes {
                    let user = inputs.graph.id(node);
                    let recent = inputs.corpus.recent_posts(user, post.timestamp, config.lambda);
                    histories.push(
                        recent
                            .into_iter()
                            .map(|p| table.intern(p, inputs))
                            .collect::<Result<Vec<u32>>>()?,
                    );
                }
                (Some(ego), histories)
            } else {
                (None, Vec::new())
            };
            samples.push(Sample {
                post_id: post.id.clone(),
                gold,
                text,
                ego,
                histories,
            });
        }
        Ok(Dataset {
            config: *config,
            table: Arc::new(table),
            samples,
        })
    }

    /// Samples for every post that carries a label.
    pub fn labelled(posts: &[&Post], inputs: &ModelInputs, config: &ModelConfig) -> Result<Self> {
        Self::build(
            posts.iter().filter(|p| p.label.is_some()).map(|p| (*p, p.label)),
            inputs,
            config,
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// A dataset over a subset of samples, sharing the embedding table.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            config: self.config,
            table: Arc::clone(&self.table),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    fn z_hist(&self, params: &ModelParams, sample: &Sample) -> Vec<Vec<f64>> {
        let d = self.config.input_dim;
        sample
            .histories
            .iter()
            .map(|hist| {
                let mut out = vec![0.0; d];
                match self.config.history {
                    HistoryKind::PositionEncoding => {
                        for (&i, &a) in hist.iter().zip(&params.alpha) {
                            axpy(a, self.table.get(i), &mut out);
                        }
                    }
                    HistoryKind::Mean => {
                        if !hist.is_empty() {
                            let w = 1.0 / hist.len() as f64;
                            for &i in hist {
                                axpy(w, self.table.get(i), &mut out);
                            }
                        }
                    }
                }
                out
            })
            .collect()
    }

    fn forward_sample(&self, params: &ModelParams, sample: &Sample) -> Result<SampleTrace> {
        let mut z = Vec::with_capacity(self.config.head_input());
        let encoder = match (&params.encoder, &sample.ego) {
            (Some(enc), Some(ego)) => {
                let trace =
                    EncoderTrace::forward(&ego.shells, self.z_hist(params, sample), enc, self.config.aggregator, 1)?;
                z.extend(trace.social(0));
                Some(trace)
            }
            (None, None) => None,
            _ => return Err(Error::invalid("parameters do not match the model configuration")),
        };
        z.extend_from_slice(self.table.get(sample.text));
        if z.len() != params.head_weight.rows() {
            return Err(Error::DimensionMismatch {
                expected: params.head_weight.rows(),
                got: z.len(),
            });
        }
        let relu: Vec<f64> = z.iter().map(|&x| x.max(0.0)).collect();
        let mut logits = params.head_weight.matvec_t(&relu);
        axpy(1.0, &params.head_bias, &mut logits);
        let probs = softmax(&logits);
        Ok(SampleTrace {
            z,
            relu,
            probs,
            encoder,
        })
    }

    /// Class probabilities for one sample.
    pub fn predict(&self, params: &ModelParams, index: usize) -> Result<Prediction> {
        let trace = self.forward_sample(params, &self.samples[index])?;
        let mut probs = [0.0; StanceLabel::COUNT];
        probs.copy_from_slice(&trace.probs);
        Ok(Prediction::from_probs(probs))
    }

    /// Predictions for every sample, in order.
    pub fn predict_all(&self, params: &ModelParams) -> Result<Vec<Prediction>> {
        (0..self.samples.len())
            .into_par_iter()
            .map(|i| self.predict(params, i))
            .collect()
    }

    /// Fraction of samples whose argmax equals the gold label.
    pub fn accuracy(&self, params: &ModelParams) -> Result<f64> {
        let preds = self.predict_all(params)?;
        let golds = self.golds()?;
        let correct = preds.iter().zip(&golds).filter(|(p, g)| p.label == **g).count();
        Ok(correct as f64 / golds.len().max(1) as f64)
    }

    pub fn golds(&self) -> Result<Vec<StanceLabel>> {
        self.samples
            .iter()
            .map(|s| {
                s.gold
                    .ok_or_else(|| Error::invalid(format!("post `{}` has no label", s.post_id)))
            })
            .collect()
    }

    /// Mean cross-entropy over the samples at `indices`.
    pub fn loss(&self, params: &ModelParams, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let losses: Vec<f64> = indices
            .par_iter()
            .map(|&i| {
                let s = &self.samples[i];
                let gold = gold_of(s)?;
                let trace = self.forward_sample(params, s)?;
                Ok(-trace.probs[gold.index()].max(PROB_FLOOR).ln())
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / indices.len() as f64)
    }

    /// Mean loss and its exact gradient over the samples at `indices`.
    pub fn gradients(&self, params: &ModelParams, indices: &[usize]) -> Result<(f64, ModelParams)> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let partials: Vec<(f64, ModelParams)> = indices
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = ModelParams::zeros(&self.config);
                let mut loss = 0.0;
                for &i in chunk {
                    loss += self.accumulate(params, &self.samples[i], &mut grads)?;
                }
                Ok((loss, grads))
            })
            .collect::<Result<_>>()?;
        let mut parts = partials.into_iter();
        let (mut loss, mut grads) = parts.next().expect("non-empty batch");
        for (l, g) in parts {
            loss += l;
            grads.add_scaled(1.0, &g);
        }
        let scale = 1.0 / indices.len() as f64;
        grads.scale(scale);
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite(name));
        }
        Ok((loss * scale, grads))
    }

    /// Adds one sample's loss gradient to `grads` and returns its loss.
    fn accumulate(&self, params: &ModelParams, sample: &Sample, grads: &mut ModelParams) -> Result<f64> {
        let gold = gold_of(sample)?.index();
        let trace = self.forward_sample(params, sample)?;
        let p_gold = trace.probs[gold];
        if !p_gold.is_finite() {
            return Err(Error::NonFinite("probabilities".into()));
        }
        if p_gold < PROB_FLOOR {
            // the clamped loss is constant in every parameter
            return Ok(-PROB_FLOOR.ln());
        }
        let mut d_logits = trace.probs.clone();
        d_logits[gold] -= 1.0;

        axpy(1.0, &d_logits, &mut grads.head_bias);
        grads.head_weight.add_outer(&trace.relu, &d_logits);
        let d_relu = params.head_weight.matvec(&d_logits);
        let d_z: Vec<f64> = d_relu
            .iter()
            .zip(&trace.z)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();

        if let (Some(enc_trace), Some(ego), Some(enc), Some(enc_grads)) =
            (&trace.encoder, &sample.ego, &params.encoder, &mut grads.encoder)
        {
            let social = self.config.social_dim();
            let d_social = vec![d_z[..social].to_vec()];
            let d_hist = enc_trace.backward(&ego.shells, enc, &d_social, enc_grads);
            if self.config.history == HistoryKind::PositionEncoding {
                for (hist, d) in sample.histories.iter().zip(&d_hist) {
                    for (m, &i) in hist.iter().enumerate() {
                        grads.alpha[m] += dot(d, self.table.get(i));
                    }
                }
            }
        }
        Ok(-p_gold.ln())
    }
}

fn gold_of(sample: &Sample) -> Result<StanceLabel> {
    sample
        .gold
        .ok_or_else(|| Error::invalid(format!("post `{}` has no label", sample.post_id)))
}

struct SampleTrace {
    z: Vec<f64>,
    relu: Vec<f64>,
    probs: Vec<f64>,
    encoder: Option<EncoderTrace>,
}
