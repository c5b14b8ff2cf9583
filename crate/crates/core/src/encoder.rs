//! Social context encoder.
//!
//! Each user's recent posts are folded into one history vector with trainable
//! position weights. Message passing then runs over exact-order shells: at
//! every layer, node `i` aggregates the previous states of the nodes at
//! distance exactly `1, 2, …, k` separately and concatenates the `k` results.
//! The ego state never enters a shell aggregate; it is carried by `H⁰` and the
//! final representation concatenates `H⁰, H¹, …, Hᵏ`.
//!
//! Dimensions: `H⁰` has width `h`, every later layer `k·h`, so the social
//! representation has width `h·(1 + k²)`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeId, SocialGraph};
use crate::linalg::{axpy, dot, Matrix};

/// Negative-side slope of the attention LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Shell aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregatorKind {
    /// Single-head additive attention over the shell.
    Gat,
    /// Mean of projected shell states.
    Gcn,
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregatorKind::Gat => "h2gat",
            AggregatorKind::Gcn => "h2gcn",
        })
    }
}

impl FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h2gat" | "gat" => Ok(AggregatorKind::Gat),
            "h2gcn" | "gcn" => Ok(AggregatorKind::Gcn),
            other => Err(Error::invalid(format!("unknown aggregator `{other}`"))),
        }
    }
}

/// How a user's recent posts are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HistoryKind {
    /// Trainable per-position weights.
    PositionEncoding,
    Mean,
}

impl fmt::Display for HistoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HistoryKind::PositionEncoding => "pe",
            HistoryKind::Mean => "mean",
        })
    }
}

impl FromStr for HistoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pe" | "position" => Ok(HistoryKind::PositionEncoding),
            "mean" => Ok(HistoryKind::Mean),
            other => Err(Error::invalid(format!("unknown history aggregator `{other}`"))),
        }
    }
}

fn check_dims(history: &[&[f64]], dim: usize) -> Result<()> {
    for v in history {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }
    Ok(())
}

/// `Σ_m α_m z_m` over a most-recent-first history.
///
/// Positions past the end of the history contribute nothing.
pub fn aggregate_history_pe(history: &[&[f64]], alpha: &[f64], dim: usize) -> Result<Vec<f64>> {
    check_dims(history, dim)?;
    if history.len() > alpha.len() {
        return Err(Error::invalid(format!(
            "history of {} posts exceeds {} position weights",
            history.len(),
            alpha.len()
        )));
    }
    let mut out = vec![0.0; dim];
    for (z, &a) in history.iter().zip(alpha) {
        axpy(a, z, &mut out);
    }
    Ok(out)
}

/// Arithmetic mean of the history; the zero vector when it is empty.
pub fn aggregate_history_mean(history: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    check_dims(history, dim)?;
    let mut out = vec![0.0; dim];
    if history.is_empty() {
        return Ok(out);
    }
    for z in history {
        axpy(1.0, z, &mut out);
    }
    let n = history.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Parameters of one shell aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateParams {
    /// `h × in` projection.
    pub proj: Matrix,
    /// `[a_center ; a_neighbor]`, length `2h`.
    pub attn: Vec<f64>,
}

impl AggregateParams {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (2 * hidden + 1) as f64).sqrt();
        AggregateParams {
            proj: Matrix::xavier(hidden, input, rng),
            attn: (0..2 * hidden).map(|_| rng.random_range(-limit..=limit)).collect(),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        AggregateParams {
            proj: Matrix::zeros(hidden, input),
            attn: vec![0.0; 2 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.proj.rows()
    }

    pub fn input(&self) -> usize {
        self.proj.cols()
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input() {
            return Err(Error::DimensionMismatch {
                expected: self.input(),
                got: state.len(),
            });
        }
        Ok(())
    }
}

/// Attention over one shell: weights and LeakyReLU inputs, aligned with the
/// neighbor order the caller passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub weights: Vec<f64>,
    pub scores: Vec<f64>,
    pub output: Vec<f64>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn total_cmp_slices(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Additive attention over already-projected states.
///
/// Sums run in a canonical order of the neighbors (by score, then by
/// projected state), so the result does not depend on how the caller ordered
/// the shell.
pub fn attend(center: &[f64], neighbors: &[&[f64]], attn: &[f64]) -> Attention {
    let h = center.len();
    if neighbors.is_empty() {
        return Attention {
            weights: Vec::new(),
            scores: Vec::new(),
            output: vec![0.0; h],
        };
    }
    let (a_center, a_neighbor) = attn.split_at(h);
    let base = dot(a_center, center);
    let scores: Vec<f64> = neighbors.iter().map(|g| base + dot(a_neighbor, g)).collect();
    let logits: Vec<f64> = scores.iter().map(|&s| leaky(s)).collect();

    let mut order: Vec<usize> = (0..neighbors.len()).collect();
    order.sort_by(|&i, &j| {
        logits[i]
            .total_cmp(&logits[j])
            .then_with(|| total_cmp_slices(neighbors[i], neighbors[j]))
    });
    let max = logits[*order.last().expect("non-empty")];
    let mut weights = vec![0.0; neighbors.len()];
    let mut total = 0.0;
    for &i in &order {
        weights[i] = (logits[i] - max).exp();
        total += weights[i];
    }
    let mut output = vec![0.0; h];
    for &i in &order {
        weights[i] /= total;
        axpy(weights[i], neighbors[i], &mut output);
    }
    Attention {
        weights,
        scores,
        output,
    }
}

/// Attention aggregate of raw neighbor states around `center`.
pub fn gat_aggregate_with_attention(
    center: &[f64],
    neighbors: &[&[f64]],
    params: &AggregateParams,
) -> Result<Attention> {
    params.check_input(center)?;
    for n in neighbors {
        params.check_input(n)?;
    }
    let c = params.proj.matvec(center);
    let projected: Vec<Vec<f64>> = neighbors.iter().map(|n| params.proj.matvec(n)).collect();
    let refs: Vec<&[f64]> = projected.iter().map(Vec::as_slice).collect();
    Ok(attend(&c, &refs, &params.attn))
}

/// `Σ_j softmax_j(LeakyReLU(aᵀ[W h_c ∥ W h_j])) · W h_j`; zero for no neighbors.
pub fn gat_aggregate(center: &[f64], neighbors: &[&[f64]], params: &AggregateParams) -> Result<Vec<f64>> {
    Ok(gat_aggregate_with_attention(center, neighbors, params)?.output)
}

/// Mean of the projected neighbor states; zero for no neighbors.
pub fn gcn_aggregate(neighbors: &[&[f64]], params: &AggregateParams) -> Result<Vec<f64>> {
    let mut out = vec![0.0; params.hidden()];
    if neighbors.is_empty() {
        return Ok(out);
    }
    let scale = 1.0 / neighbors.len() as f64;
    for n in neighbors {
        params.check_input(n)?;
        axpy(scale, &params.proj.matvec(n), &mut out);
    }
    Ok(out)
}

/// Exact-order shells `N̂^1 … N̂^k` for every node of a (sub)graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shells {
    order: usize,
    // lists[node][k' - 1], ascending
    lists: Vec<Vec<Vec<usize>>>,
}

impl Shells {
    /// Shells of every node of `graph` up to `order`.
    pub fn from_graph(graph: &SocialGraph, order: usize) -> Self {
        let lists = (0..graph.node_count())
            .map(|v| shells_of(graph, v, order, Some))
            .collect();
        Shells { order, lists }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn node_count(&self) -> usize {
        self.lists.len()
    }

    /// Nodes at distance exactly `k` (1-based) from `node`.
    pub fn shell(&self, node: usize, k: usize) -> &[usize] {
        &self.lists[node][k - 1]
    }
}

fn shells_of(graph: &SocialGraph, v: NodeId, order: usize, local: impl Fn(NodeId) -> Option<usize>) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); order];
    for (u, d) in graph.bfs_distances(v, order).expect("node in graph") {
        if d > 0 {
            if let Some(l) = local(u) {
                out[d - 1].push(l);
            }
        }
    }
    for s in &mut out {
        s.sort_unstable();
    }
    out
}

/// The subgraph induced by a node's `k`-hop ball, with shells measured inside
/// that subgraph. Local index 0 is the center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoNet {
    pub nodes: Vec<NodeId>,
    pub shells: Shells,
}

impl EgoNet {
    pub fn new(graph: &SocialGraph, center: NodeId, k: usize) -> Result<Self> {
        let ball = graph.bfs_distances(center, k)?;
        let mut nodes: Vec<NodeId> = ball.iter().map(|&(u, _)| u).collect();
        nodes[1..].sort_unstable();
        let sub = graph.induced(&nodes);
        // `sub` is indexed by sorted id; map back to our local order
        let mut to_local = vec![usize::MAX; sub.node_count()];
        for (l, &g) in nodes.iter().enumerate() {
            let s = sub.node(graph.id(g)).expect("ball node in subgraph");
            to_local[s] = l;
        }
        let lists = nodes
            .iter()
            .map(|&g| {
                let s = sub.node(graph.id(g)).expect("ball node in subgraph");
                shells_of(&sub, s, k, |u| Some(to_local[u]))
            })
            .collect();
        Ok(EgoNet {
            nodes,
            shells: Shells { order: k, lists },
        })
    }
}

/// Trainable encoder state: input projection plus `k` layers of `k` shell
/// aggregates each.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `h × d`, maps history vectors to `H⁰`.
    pub input_proj: Matrix,
    /// `layers[ℓ-1][k'-1]`
    pub layers: Vec<Vec<AggregateParams>>,
}

impl EncoderParams {
    pub fn init(input_dim: usize, hidden: usize, k: usize, rng: &mut impl Rng) -> Self {
        let input_proj = Matrix::xavier(hidden, input_dim, rng);
        let layers = (1..=k)
            .map(|l| {
                let input = if l == 1 { hidden } else { k * hidden };
                (0..k).map(|_| AggregateParams::init(input, hidden, rng)).collect()
            })
            .collect();
        EncoderParams { input_proj, layers }
    }

    pub fn zeros(input_dim: usize, hidden: usize, k: usize) -> Self {
        EncoderParams {
            input_proj: Matrix::zeros(hidden, input_dim),
            layers: (1..=k)
                .map(|l| {
                    let input = if l == 1 { hidden } else { k * hidden };
                    (0..k).map(|_| AggregateParams::zeros(input, hidden)).collect()
                })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_proj.cols()
    }

    pub fn hidden(&self) -> usize {
        self.input_proj.rows()
    }

    pub fn k(&self) -> usize {
        self.layers.len()
    }

    /// Width of the social representation, `h·(1 + k²)`.
    pub fn output_dim(&self) -> usize {
        social_dim(self.hidden(), self.k())
    }
}

pub fn social_dim(hidden: usize, k: usize) -> usize {
    hidden * (1 + k * k)
}

fn aggregate_projected(
    kind: AggregatorKind,
    projected: &[Vec<f64>],
    center: usize,
    shell: &[usize],
    attn: &[f64],
) -> (Vec<f64>, Option<Attention>) {
    let refs: Vec<&[f64]> = shell.iter().map(|&j| projected[j].as_slice()).collect();
    match kind {
        AggregatorKind::Gat => {
            let a = attend(&projected[center], &refs, attn);
            (a.output.clone(), Some(a))
        }
        AggregatorKind::Gcn => {
            let h = projected[center].len();
            let mut out = vec![0.0; h];
            if !refs.is_empty() {
                let scale = 1.0 / refs.len() as f64;
                for r in refs {
                    axpy(scale, r, &mut out);
                }
            }
            (out, None)
        }
    }
}

/// One message-passing layer over precomputed shells.
///
/// For each node, the aggregates over shells `1..=k` are concatenated; the
/// output width is `k·h`.
pub fn h2_layer_on(
    shells: &Shells,
    states: &[Vec<f64>],
    layer: &[AggregateParams],
    kind: AggregatorKind,
) -> Result<Vec<Vec<f64>>> {
    Ok(LayerTrace::forward(shells, states, layer, kind, states.len())?.output)
}

/// [`h2_layer_on`] over the shells of a whole graph.
pub fn h2_layer(
    graph: &SocialGraph,
    states: &[Vec<f64>],
    layer: &[AggregateParams],
    kind: AggregatorKind,
) -> Result<Vec<Vec<f64>>> {
    if states.len() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            got: states.len(),
        });
    }
    h2_layer_on(&Shells::from_graph(graph, layer.len()), states, layer, kind)
}

/// Social representations `H⁰ ∥ H¹ ∥ … ∥ Hᵏ` for every node of `graph`.
pub fn social_encode(
    graph: &SocialGraph,
    z_hist: &[Vec<f64>],
    params: &EncoderParams,
    kind: AggregatorKind,
) -> Result<Vec<Vec<f64>>> {
    if z_hist.len() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            got: z_hist.len(),
        });
    }
    let shells = Shells::from_graph(graph, params.k());
    let trace = EncoderTrace::forward(&shells, z_hist.to_vec(), params, kind, z_hist.len())?;
    Ok((0..z_hist.len()).map(|i| trace.social(i)).collect())
}

#[derive(Debug, Clone)]
struct LayerTrace {
    // projected[k'-1][node]
    projected: Vec<Vec<Vec<f64>>>,
    // attention[k'-1][node], present for GAT on nodes that were computed
    attention: Vec<Vec<Option<Attention>>>,
    output: Vec<Vec<f64>>,
}

impl LayerTrace {
    fn forward(
        shells: &Shells,
        states: &[Vec<f64>],
        layer: &[AggregateParams],
        kind: AggregatorKind,
        active: usize,
    ) -> Result<Self> {
        let k = layer.len();
        if shells.order() < k {
            return Err(Error::invalid("shells shallower than layer order"));
        }
        if states.len() != shells.node_count() {
            return Err(Error::DimensionMismatch {
                expected: shells.node_count(),
                got: states.len(),
            });
        }
        for p in layer {
            for s in states {
                p.check_input(s)?;
            }
        }
        let mut projected = Vec::with_capacity(k);
        let mut attention = Vec::with_capacity(k);
        let mut output: Vec<Vec<f64>> = (0..active)
            .map(|_| Vec::with_capacity(k * layer.first().map_or(0, |p| p.hidden())))
            .collect();
        for (order, p) in layer.iter().enumerate() {
            let proj: Vec<Vec<f64>> = states.iter().map(|s| p.proj.matvec(s)).collect();
            let mut att = Vec::with_capacity(active);
            for (i, out) in output.iter_mut().enumerate() {
                let (agg, a) = aggregate_projected(kind, &proj, i, shells.shell(i, order + 1), &p.attn);
                out.extend_from_slice(&agg);
                att.push(a);
            }
            projected.push(proj);
            attention.push(att);
        }
        Ok(LayerTrace {
            projected,
            attention,
            output,
        })
    }
}

/// Forward pass with every intermediate kept for back-propagation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    kind: AggregatorKind,
    z_hist: Vec<Vec<f64>>,
    /// `states[ℓ][node]`; the last layer holds only the first `active` nodes.
    states: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerTrace>,
    active: usize,
}

impl EncoderTrace {
    /// Runs the encoder; final-layer states are computed only for nodes
    /// `0..active`.
    pub fn forward(
        shells: &Shells,
        z_hist: Vec<Vec<f64>>,
        params: &EncoderParams,
        kind: AggregatorKind,
        active: usize,
    ) -> Result<Self> {
        let d = params.input_dim();
        for z in &z_hist {
            if z.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: z.len(),
                });
            }
        }
        let active = active.min(z_hist.len());
        let h0: Vec<Vec<f64>> = z_hist.iter().map(|z| params.input_proj.matvec(z)).collect();
        let mut states = vec![h0];
        let mut layers = Vec::with_capacity(params.k());
        for (l, layer) in params.layers.iter().enumerate() {
            let last = l + 1 == params.k();
            let n = if last { active } else { z_hist.len() };
            let trace = LayerTrace::forward(shells, states.last().expect("H0"), layer, kind, n)?;
            states.push(trace.output.clone());
            layers.push(trace);
        }
        Ok(EncoderTrace {
            kind,
            z_hist,
            states,
            layers,
            active,
        })
    }

    pub fn z_hist(&self) -> &[Vec<f64>] {
        &self.z_hist
    }

    /// `H⁰_i ∥ … ∥ Hᵏ_i` for an active node.
    pub fn social(&self, node: usize) -> Vec<f64> {
        assert!(node < self.active, "node {node} not active");
        self.states
            .iter()
            .flat_map(|layer| layer[node].iter().copied())
            .collect()
    }

    /// Attention of layer `l` (1-based), shell `order` (1-based) at `node`.
    pub fn attention(&self, l: usize, order: usize, node: usize) -> Option<&Attention> {
        self.layers[l - 1].attention[order - 1].get(node)?.as_ref()
    }

    /// Back-propagates `d_social` (one gradient per active node, in node
    /// order) into `grads` and returns the gradient for every `z_hist`.
    pub fn backward(
        &self,
        shells: &Shells,
        params: &EncoderParams,
        d_social: &[Vec<f64>],
        grads: &mut EncoderParams,
    ) -> Vec<Vec<f64>> {
        let n = self.z_hist.len();
        let h = params.hidden();
        let k = params.k();

        // d_states[ℓ][node]
        let mut d_states: Vec<Vec<Vec<f64>>> = self
            .states
            .iter()
            .map(|layer| layer.iter().map(|s| vec![0.0; s.len()]).collect())
            .collect();
        for (node, d) in d_social.iter().enumerate().take(self.active) {
            let mut offset = 0;
            for (l, layer) in d_states.iter_mut().enumerate() {
                let width = self.states[l][node].len();
                axpy(1.0, &d[offset..offset + width], &mut layer[node]);
                offset += width;
            }
        }

        for l in (1..=k).rev() {
            let trace = &self.layers[l - 1];
            let inputs = &self.states[l - 1];
            let (lower, upper) = d_states.split_at_mut(l);
            let d_out = &upper[0];
            let d_in = &mut lower[l - 1];
            for order in 1..=k {
                let p = &params.layers[l - 1][order - 1];
                let g = &mut grads.layers[l - 1][order - 1];
                let projected = &trace.projected[order - 1];
                let mut d_proj = vec![vec![0.0; h]; n];
                for (i, d_node) in d_out.iter().enumerate() {
                    let d_agg = &d_node[(order - 1) * h..order * h];
                    let shell = shells.shell(i, order);
                    if shell.is_empty() || d_agg.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    match self.kind {
                        AggregatorKind::Gcn => {
                            let scale = 1.0 / shell.len() as f64;
                            for &j in shell {
                                axpy(scale, d_agg, &mut d_proj[j]);
                            }
                        }
                        AggregatorKind::Gat => {
                            let att = trace.attention[order - 1][i]
                                .as_ref()
                                .expect("attention recorded for GAT");
                            let d_w: Vec<f64> = shell.iter().map(|&j| dot(d_agg, &projected[j])).collect();
                            let mean: f64 = att.weights.iter().zip(&d_w).map(|(w, dw)| w * dw).sum();
                            let (a_center, a_neighbor) = p.attn.split_at(h);
                            let mut d_score_total = 0.0;
                            for (pos, &j) in shell.iter().enumerate() {
                                let w = att.weights[pos];
                                axpy(w, d_agg, &mut d_proj[j]);
                                let d_score = w * (d_w[pos] - mean) * leaky_grad(att.scores[pos]);
                                d_score_total += d_score;
                                axpy(d_score, &projected[j], &mut g.attn[h..]);
                                axpy(d_score, a_neighbor, &mut d_proj[j]);
                            }
                            axpy(d_score_total, &projected[i], &mut g.attn[..h]);
                            axpy(d_score_total, a_center, &mut d_proj[i]);
                        }
                    }
                }
                for (j, dp) in d_proj.iter().enumerate() {
                    if dp.iter().any(|&x| x != 0.0) {
                        g.proj.add_outer(dp, &inputs[j]);
                        p.proj.matvec_t_acc(dp, &mut d_in[j]);
                    }
                }
            }
        }

        let mut d_hist = vec![vec![0.0; params.input_dim()]; n];
        for (j, dh) in d_states[0].iter().enumerate() {
            if dh.iter().any(|&x| x != 0.0) {
                grads.input_proj.add_outer(dh, &self.z_hist[j]);
                params.input_proj.matvec_t_acc(dh, &mut d_hist[j]);
            }
        }
        d_hist
    }
}
