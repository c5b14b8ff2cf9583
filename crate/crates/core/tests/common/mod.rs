//! Fixtures, the finite-difference harness and straight-line reference
//! implementations shared by the integration tests. The reference functions
//! never call into the encoder or model code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stance_core::corpus::{Corpus, Post, StanceLabel};
use stance_core::embed::PrecomputedStore;
use stance_core::encoder::{AggregatorKind, EncoderParams, HistoryKind};
use stance_core::graph::SocialGraph;
use stance_core::model::{Dataset, ModelConfig, ModelInputs, ModelParams};

pub struct Fixture {
    pub corpus: Corpus,
    pub graph: SocialGraph,
    pub store: PrecomputedStore,
    pub users: Vec<String>,
}

impl Fixture {
    pub fn inputs(&self) -> ModelInputs<'_> {
        ModelInputs {
            corpus: &self.corpus,
            graph: &self.graph,
            provider: &self.store,
        }
    }

    /// The last post of every user, with its label.
    pub fn targets(&self) -> Vec<(&Post, StanceLabel)> {
        self.users
            .iter()
            .map(|u| {
                let p = self.corpus.timeline(u).last().expect("user has posts");
                (p, p.label.expect("labelled"))
            })
            .collect()
    }
}

pub fn user(i: usize) -> String {
    format!("u{i:02}")
}

/// A ring of `nodes` users plus `chords` random extra edges; every user
/// writes `posts` labelled posts with random `dim`-wide embeddings.
pub fn fixture(nodes: usize, chords: usize, dim: usize, posts: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users: Vec<String> = (0..nodes).map(user).collect();
    let mut edges = Vec::new();
    for i in 0..nodes {
        if nodes > 1 {
            edges.push((users[i].clone(), users[(i + 1) % nodes].clone()));
        }
    }
    for _ in 0..chords {
        let a = rng.random_range(0..nodes);
        let b = rng.random_range(0..nodes);
        if a != b {
            edges.push((users[a].clone(), users[b].clone()));
        }
    }
    let graph = SocialGraph::from_edges(&users, &edges).unwrap();
    let mut store = PrecomputedStore::new(dim);
    let mut all = Vec::new();
    for j in 0..posts {
        for (i, u) in users.iter().enumerate() {
            let id = format!("p{j}_{i}");
            let label = StanceLabel::from_index(rng.random_range(0..4)).unwrap();
            let ts = (j * 100 + i) as i64;
            all.push(Post::original(&id, u, ts, "text").with_label(label));
            store
                .insert(id, (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
        }
    }
    Fixture {
        corpus: Corpus::new(all).unwrap(),
        graph,
        store,
        users,
    }
}

pub fn small_config(dim: usize, hidden: usize, k: usize, lambda: usize) -> ModelConfig {
    ModelConfig {
        input_dim: dim,
        hidden,
        k,
        lambda,
        aggregator: AggregatorKind::Gat,
        history: HistoryKind::PositionEncoding,
        social: true,
    }
}

pub fn random_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(config, seed);
    // move α away from the uniform start and give the biases some signal
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for a in &mut p.alpha {
        *a = rng.random_range(-1.0..1.0);
    }
    for b in &mut p.head_bias {
        *b = rng.random_range(-0.5..0.5);
    }
    p
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

/// Distance every activation input must keep from its kink so that the
/// ±1e-3 central differences only ever see a smooth loss.
pub const KINK_MARGIN: f64 = 3e-3;
pub const FD_SAMPLES: usize = 4;

/// The first seed from `base` whose fixture keeps every piecewise-linear
/// activation at least [`KINK_MARGIN`] away from its kink.
pub fn smooth_fixture(config: &ModelConfig, base: u64) -> (Fixture, ModelParams) {
    for seed in base..base + 10_000 {
        let fx = fixture(10, 5, config.input_dim, 4, seed);
        let params = random_params(config, seed);
        let mut kinks = Vec::new();
        for (post, _) in fx.targets().into_iter().take(FD_SAMPLES) {
            ref_forward_traced(&fx, post, &params, config, &mut kinks);
        }
        if kinks.iter().all(|k| k.abs() >= KINK_MARGIN) {
            return (fx, params);
        }
    }
    panic!("no smooth fixture found");
}

/// Names and relative errors of every tensor whose analytic gradient differs
/// from ±1e-3 central differences by 1e-4 or more.
pub fn finite_difference_failures(config: &ModelConfig, base: u64) -> Vec<String> {
    let (fx, params) = smooth_fixture(config, base);
    let targets = fx.targets();
    let batch = targets.iter().take(FD_SAMPLES).map(|(p, g)| (*p, Some(*g)));
    let data = Dataset::build(batch, &fx.inputs(), config).unwrap();
    let all: Vec<usize> = (0..data.len()).collect();
    let (_, analytic) = data.gradients(&params, &all).unwrap();

    let step = 1e-3;
    let names: Vec<String> = params.tensors().into_iter().map(|t| t.0).collect();
    let analytic: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|t| t.2.to_vec()).collect();
    let mut failures = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = analytic[ti].len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][i] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][i] -= step;
            *slot = (data.loss(&plus, &all).unwrap() - data.loss(&minus, &all).unwrap()) / (2.0 * step);
        }
        let err = relative_error(&analytic[ti], &numeric);
        if !(err < 1e-4) {
            failures.push(format!("{name}: {err:e}"));
        }
    }
    failures
}

// ---------- reference implementations ----------

/// Hop distances from `src` using only nodes with `allowed[u]`.
pub fn ref_distances(adj: &[Vec<usize>], src: usize, allowed: &[bool]) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut frontier = vec![src];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in &adj[u] {
                if allowed[v] && dist[v].is_none() {
                    dist[v] = Some(d);
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist
}

pub fn adjacency(graph: &SocialGraph) -> Vec<Vec<usize>> {
    (0..graph.node_count()).map(|u| graph.neighbors(u).to_vec()).collect()
}

fn mat_vec(rows: usize, cols: usize, data: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        for c in 0..cols {
            out[r] += data[r * cols + c] * x[c];
        }
    }
    out
}

/// Full-graph encoder with explicit loops. `shell_of(i, o)` lists the nodes at
/// distance exactly `o` from `i`.
pub fn ref_encode(
    n: usize,
    shell_of: &dyn Fn(usize, usize) -> Vec<usize>,
    z_hist: &[Vec<f64>],
    params: &EncoderParams,
    kind: AggregatorKind,
    kinks: &mut Vec<f64>,
) -> Vec<Vec<f64>> {
    let h = params.input_proj.rows();
    let d = params.input_proj.cols();
    let mut states: Vec<Vec<f64>> = z_hist
        .iter()
        .map(|z| mat_vec(h, d, params.input_proj.as_slice(), z))
        .collect();
    let mut out: Vec<Vec<f64>> = states.clone();
    for layer in &params.layers {
        let mut next = vec![Vec::new(); n];
        for (i, next_i) in next.iter_mut().enumerate() {
            for (o, agg) in layer.iter().enumerate() {
                let cols = agg.proj.cols();
                let w = |x: &[f64]| mat_vec(h, cols, agg.proj.as_slice(), x);
                let shell = shell_of(i, o + 1);
                let mut res = vec![0.0; h];
                if !shell.is_empty() {
                    match kind {
                        AggregatorKind::Gcn => {
                            for &j in &shell {
                                let wj = w(&states[j]);
                                for t in 0..h {
                                    res[t] += wj[t] / shell.len() as f64;
                                }
                            }
                        }
                        AggregatorKind::Gat => {
                            let wc = w(&states[i]);
                            let mut e = Vec::new();
                            for &j in &shell {
                                let wj = w(&states[j]);
                                let mut s = 0.0;
                                for t in 0..h {
                                    s += agg.attn[t] * wc[t] + agg.attn[h + t] * wj[t];
                                }
                                kinks.push(s);
                                e.push(if s > 0.0 { s } else { 0.2 * s });
                            }
                            let m = e.iter().cloned().fold(f64::MIN, f64::max);
                            let z: f64 = e.iter().map(|x| (x - m).exp()).sum();
                            for (pos, &j) in shell.iter().enumerate() {
                                let a = (e[pos] - m).exp() / z;
                                let wj = w(&states[j]);
                                for t in 0..h {
                                    res[t] += a * wj[t];
                                }
                            }
                        }
                    }
                }
                next_i.extend(res);
            }
        }
        for (o, s) in out.iter_mut().zip(&next) {
            o.extend_from_slice(s);
        }
        states = next;
    }
    out
}

/// Straight-line forward pass for one post: ego ball, shells inside the
/// induced ball, histories cut at the post's timestamp, head and softmax.
pub fn ref_forward(fx: &Fixture, post: &Post, params: &ModelParams, config: &ModelConfig) -> Vec<f64> {
    ref_forward_traced(fx, post, params, config, &mut Vec::new())
}

/// [`ref_forward`] that also records every input of a piecewise-linear
/// activation (attention LeakyReLU and head ReLU).
pub fn ref_forward_traced(
    fx: &Fixture,
    post: &Post,
    params: &ModelParams,
    config: &ModelConfig,
    kinks: &mut Vec<f64>,
) -> Vec<f64> {
    let mut z: Vec<f64> = Vec::new();
    if config.social {
        let adj = adjacency(&fx.graph);
        let n = adj.len();
        let center = fx.graph.node(&post.author_id).unwrap();
        let all = vec![true; n];
        let d0 = ref_distances(&adj, center, &all);
        let ball: Vec<bool> = d0.iter().map(|d| matches!(d, Some(x) if *x <= config.k)).collect();
        let dists: Vec<Vec<Option<usize>>> = (0..n)
            .map(|u| {
                if ball[u] {
                    ref_distances(&adj, u, &ball)
                } else {
                    vec![None; n]
                }
            })
            .collect();
        let shell_of = |i: usize, o: usize| -> Vec<usize> {
            if !ball[i] {
                return Vec::new();
            }
            (0..n).filter(|&j| ball[j] && dists[i][j] == Some(o)).collect()
        };
        let z_hist: Vec<Vec<f64>> = (0..n)
            .map(|u| {
                let name = fx.graph.id(u);
                let mut hist: Vec<&Post> = fx
                    .corpus
                    .posts()
                    .iter()
                    .filter(|p| p.author_id == name && p.timestamp < post.timestamp)
                    .collect();
                hist.sort_by_key(|p| std::cmp::Reverse(p.timestamp));
                hist.truncate(config.lambda);
                let mut v = vec![0.0; config.input_dim];
                for (m, p) in hist.iter().enumerate() {
                    let w = match config.history {
                        HistoryKind::PositionEncoding => params.alpha[m],
                        HistoryKind::Mean => 1.0 / hist.len() as f64,
                    };
                    let e = fx.store.get(&p.id).unwrap();
                    for t in 0..v.len() {
                        v[t] += w * e[t];
                    }
                }
                v
            })
            .collect();
        let enc = params.encoder.as_ref().unwrap();
        let social = ref_encode(n, &shell_of, &z_hist, enc, config.aggregator, kinks);
        z.extend_from_slice(&social[center]);
    }
    z.extend_from_slice(fx.store.get(&post.id).unwrap());
    let w = &params.head_weight;
    kinks.extend(z.iter().copied().filter(|&x| x != 0.0));
    let mut logits = params.head_bias.clone();
    for (r, &zr) in z.iter().enumerate() {
        let a = zr.max(0.0);
        for c in 0..4 {
            logits[c] += a * w.get(r, c);
        }
    }
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}
