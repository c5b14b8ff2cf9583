//! Seeded synthetic data: a heterophilous stance graph and a theme-exposure
//! change-prediction table.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, Post, StanceLabel};
use crate::embed::PrecomputedStore;
use crate::error::{Error, Result};
use crate::graph::SocialGraph;
use crate::hesitancy::{ChangeClass, Theme, THEME_COUNT};
use crate::model::ModelInputs;

/// Settings for [`heterophily_benchmark`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeterophilySettings {
    pub nodes: usize,
    /// Edges per node; each edge has one random endpoint from this node.
    pub edges_per_node: usize,
    /// Probability that an edge joins the two populations.
    pub cross_fraction: f64,
    /// Probability that a post's embedding carries the opposite stance.
    pub flip_rate: f64,
    pub noise: f64,
    pub dim: usize,
    /// Unlabelled posts written before each user's labelled final post.
    pub history: usize,
}

impl Default for HeterophilySettings {
    fn default() -> Self {
        HeterophilySettings {
            nodes: 500,
            edges_per_node: 4,
            cross_fraction: 0.8,
            flip_rate: 0.3,
            noise: 0.5,
            dim: 8,
            history: 3,
        }
    }
}

/// Corpus, graph and embeddings of a generated benchmark.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub corpus: Corpus,
    pub graph: SocialGraph,
    pub store: PrecomputedStore,
}

impl Benchmark {
    pub fn inputs(&self) -> ModelInputs<'_> {
        ModelInputs {
            corpus: &self.corpus,
            graph: &self.graph,
            provider: &self.store,
        }
    }
}

/// Two stance populations (PO and NG) wired mostly across populations.
///
/// Every post embedding is a one-hot stance signal plus Gaussian noise, and
/// with probability `flip_rate` shows the opposite stance. Only each user's
/// final post is labelled, so the text alone is right about `1 − flip_rate`
/// of the time while the histories of the user and their neighbours reveal
/// the stance.
pub fn heterophily_benchmark(settings: &HeterophilySettings, seed: u64) -> Result<Benchmark> {
    let s = settings;
    if s.nodes < 2 || s.dim < 2 || !(0.0..=1.0).contains(&s.cross_fraction) || !(0.0..=1.0).contains(&s.flip_rate) {
        return Err(Error::invalid(
            "benchmark needs ≥ 2 nodes, dim ≥ 2 and probabilities in [0, 1]",
        ));
    }
    let noise = Normal::new(0.0, s.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users: Vec<String> = (0..s.nodes).map(|i| format!("user{i:04}")).collect();
    let stances: Vec<StanceLabel> = (0..s.nodes)
        .map(|_| {
            if rng.random_bool(0.5) {
                StanceLabel::PO
            } else {
                StanceLabel::NG
            }
        })
        .collect();
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..s.nodes).partition(|&i| stances[i] == StanceLabel::PO);

    let mut edges = Vec::with_capacity(s.nodes * s.edges_per_node);
    for a in 0..s.nodes {
        let own = if stances[a] == StanceLabel::PO { &pos } else { &neg };
        let other = if stances[a] == StanceLabel::PO { &neg } else { &pos };
        for _ in 0..s.edges_per_node {
            let pool = if rng.random_bool(s.cross_fraction) && !other.is_empty() {
                other
            } else {
                own
            };
            if let Some(&b) = pool.choose(&mut rng) {
                edges.push((users[a].clone(), users[b].clone()));
            }
        }
    }
    let graph = SocialGraph::from_edges(&users, &edges)?;

    let mut store = PrecomputedStore::new(s.dim);
    let mut posts = Vec::with_capacity(s.nodes * (s.history + 1));
    for step in 0..=s.history {
        for (i, user) in users.iter().enumerate() {
            let id = format!("{user}-{step}");
            let shown = if rng.random_bool(s.flip_rate) {
                opposite(stances[i])
            } else {
                stances[i]
            };
            let mut v: Vec<f64> = (0..s.dim).map(|_| noise.sample(&mut rng)).collect();
            v[usize::from(shown == StanceLabel::NG)] += 1.0;
            store.insert(id.clone(), v)?;
            let post = Post::original(&id, user, (step * s.nodes + i) as i64, "");
            posts.push(if step == s.history {
                post.with_label(stances[i])
            } else {
                post
            });
        }
    }
    Ok(Benchmark {
        corpus: Corpus::new(posts)?,
        graph,
        store,
    })
}

fn opposite(label: StanceLabel) -> StanceLabel {
    match label {
        StanceLabel::PO => StanceLabel::NG,
        _ => StanceLabel::PO,
    }
}

/// Themes that push the score up or down in [`change_benchmark`].
const RAISING: [Theme; 3] = [Theme::PositiveNews, Theme::PositivePersonal, Theme::PositiveInfo];
const LOWERING: [Theme; 4] = [
    Theme::NegativeNews,
    Theme::Conspiracy,
    Theme::NegativePersonal,
    Theme::NegativeInfo,
];

/// Theme-exposure counts with change classes driven by the balance of
/// score-raising and score-lowering themes plus Gaussian noise. With
/// `prior_score` a twelfth feature holds the starting score, which pulls the
/// change toward zero.
pub fn change_benchmark(n: usize, prior_score: bool, seed: u64) -> (Vec<Vec<f64>>, Vec<ChangeClass>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<f64> = (0..THEME_COUNT).map(|_| f64::from(rng.random_range(0..6u32))).collect();
        let mut drive: f64 = RAISING.iter().map(|t| row[t.index()]).sum::<f64>()
            - LOWERING.iter().map(|t| row[t.index()]).sum::<f64>() * 0.75
            + noise.sample(&mut rng);
        if prior_score {
            let prior: f64 = rng.random_range(-1.0..1.0);
            drive -= 4.0 * prior;
            row.push(prior);
        }
        labels.push(if drive > 1.5 {
            ChangeClass::Increased
        } else if drive < -1.5 {
            ChangeClass::Decreased
        } else {
            ChangeClass::Unchanged
        });
        features.push(row);
    }
    (features, labels)
}
