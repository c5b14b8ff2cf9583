//! Multiclass gradient-boosted regression trees with a softmax objective.
//!
//! Each round fits one tree per class to the pseudo-residuals `y − p` by
//! exact greedy squared-error splits; leaf values take Friedman's one-step
//! Newton update `(K−1)/K · Σr / Σ|r|(1−|r|)`.

use std::fs::File;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{classification_metrics_indexed, MetricReport};
use crate::hesitancy::{ChangeClass, Theme, THEME_COUNT};
use crate::linalg::{argmax, softmax};
use crate::model::split_dataset;

const PRIOR_FLOOR: f64 = 1e-15;

// Gains below this are rounding noise, not structure.
const MIN_GAIN: f64 = 1e-12;

// Relative gain difference below which two candidate splits tie.
const TIE_TOLERANCE: f64 = 1e-12;

const MAGIC: &str = "gbdt 1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 100,
            max_depth: 5,
            shrinkage: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    /// Left child follows immediately; `right` is the index of the right child.
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf(f64),
}

/// Binary regression tree stored in preorder.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf(value)],
        }
    }

    /// Samples with `x[feature] ≤ threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if x[feature] <= threshold { i + 1 } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            // (depth below i, index after the subtree)
            match nodes[i] {
                Node::Leaf(_) => (0, i + 1),
                Node::Split { right, .. } => {
                    let (l, _) = walk(nodes, i + 1);
                    let (r, end) = walk(nodes, right);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// `(feature, threshold)` of every internal node, in preorder.
    pub fn splits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { feature, threshold, .. } => Some((feature, threshold)),
                Node::Leaf(_) => None,
            })
            .collect()
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    residuals: &'a [f64],
    classes: usize,
    max_depth: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, samples: &[usize]) -> f64 {
        let k = self.classes as f64;
        let num: f64 = samples.iter().map(|&i| self.residuals[i]).sum();
        let den: f64 = samples
            .iter()
            .map(|&i| {
                let a = self.residuals[i].abs();
                a * (1.0 - a)
            })
            .sum();
        if den == 0.0 {
            0.0
        } else {
            (k - 1.0) / k * num / den
        }
    }

    /// Samples on the side of the split `x[feature] ≤ threshold` that holds
    /// the smallest sample index, sorted. Identical partitions get identical
    /// keys whichever feature produced them.
    fn partition_key(&self, samples: &[usize], feature: usize, threshold: f64) -> Vec<usize> {
        let first = *samples.iter().min().expect("non-empty");
        let first_left = self.x[first][feature] <= threshold;
        let mut side: Vec<usize> = samples
            .iter()
            .copied()
            .filter(|&i| (self.x[i][feature] <= threshold) == first_left)
            .collect();
        side.sort_unstable();
        side
    }

    /// Best `(feature, threshold, gain)`.
    ///
    /// Gains equal up to rounding are ties. Ties go to the partition with the
    /// smaller key, so the choice does not depend on column order; only
    /// candidates that split the samples identically fall back to the lowest
    /// feature, then the lowest threshold.
    fn best_split(&self, samples: &[usize]) -> Option<(usize, f64, f64)> {
        let n = samples.len() as f64;
        let total: f64 = samples.iter().map(|&i| self.residuals[i]).sum();
        let parent = total * total / n;
        let features = self.x[samples[0]].len();
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..features {
            let mut order = samples.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_sum = 0.0;
            for pos in 0..order.len() - 1 {
                left_sum += self.residuals[order[pos]];
                let lo = self.x[order[pos]][f];
                let hi = self.x[order[pos + 1]][f];
                if lo == hi {
                    continue;
                }
                let nl = (pos + 1) as f64;
                let nr = n - nl;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent;
                if gain <= MIN_GAIN {
                    continue;
                }
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                let better = match best {
                    None => true,
                    Some((bf, bt, bg)) => {
                        if (gain - bg).abs() <= TIE_TOLERANCE * bg.abs().max(1.0) {
                            self.partition_key(samples, f, threshold) < self.partition_key(samples, bf, bt)
                        } else {
                            gain > bg
                        }
                    }
                };
                if better {
                    best = Some((f, threshold, gain));
                }
            }
        }
        best
    }

    fn build(&mut self, samples: &[usize], depth: usize) {
        let split = if depth < self.max_depth && samples.len() >= 2 {
            self.best_split(samples)
        } else {
            None
        };
        match split {
            None => {
                let v = self.leaf_value(samples);
                self.nodes.push(Node::Leaf(v));
            }
            Some((feature, threshold, _)) => {
                let at = self.nodes.len();
                self.nodes.push(Node::Split {
                    feature,
                    threshold,
                    right: 0,
                });
                let (left, right): (Vec<usize>, Vec<usize>) =
                    samples.iter().partition(|&&i| self.x[i][feature] <= threshold);
                self.build(&left, depth + 1);
                let right_at = self.nodes.len();
                self.build(&right, depth + 1);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    right: right_at,
                };
            }
        }
    }
}

/// A fitted boosted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    classes: usize,
    features: usize,
    shrinkage: f64,
    base: Vec<f64>,
    /// `trees[round][class]`
    trees: Vec<Vec<RegressionTree>>,
}

fn check_matrix(x: &[Vec<f64>], features: usize) -> Result<()> {
    for row in x {
        if row.len() != features {
            return Err(Error::DimensionMismatch {
                expected: features,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
    }
    Ok(())
}

/// Fits `config.rounds` rounds of one tree per class.
pub fn fit(x: &[Vec<f64>], labels: &[usize], classes: usize, config: &GbdtConfig) -> Result<GbdtModel> {
    if x.len() < 2 {
        return Err(Error::invalid("need at least 2 training samples"));
    }
    if x.len() != labels.len() {
        return Err(Error::invalid(format!("{} rows for {} labels", x.len(), labels.len())));
    }
    if classes < 2 || labels.iter().any(|&l| l >= classes) {
        return Err(Error::invalid("labels must be class indices below the class count"));
    }
    if !(config.shrinkage > 0.0 && config.shrinkage.is_finite()) {
        return Err(Error::invalid("shrinkage must be positive"));
    }
    let features = x[0].len();
    check_matrix(x, features)?;

    let n = x.len();
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let base: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).max(PRIOR_FLOOR).ln())
        .collect();
    let mut scores = vec![base.clone(); n];
    let all: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut round = Vec::with_capacity(classes);
        for c in 0..classes {
            let residuals: Vec<f64> = (0..n)
                .map(|i| f64::from(u8::from(labels[i] == c)) - probs[i][c])
                .collect();
            let mut builder = TreeBuilder {
                x,
                residuals: &residuals,
                classes,
                max_depth: config.max_depth,
                nodes: Vec::new(),
            };
            builder.build(&all, 0);
            round.push(RegressionTree { nodes: builder.nodes });
        }
        for (s, row) in scores.iter_mut().zip(x) {
            for (c, tree) in round.iter().enumerate() {
                s[c] += config.shrinkage * tree.predict(row);
            }
        }
        trees.push(round);
    }
    Ok(GbdtModel {
        classes,
        features,
        shrinkage: config.shrinkage,
        base,
        trees,
    })
}

impl GbdtModel {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn base_scores(&self) -> &[f64] {
        &self.base
    }

    pub fn tree(&self, round: usize, class: usize) -> &RegressionTree {
        &self.trees[round][class]
    }

    /// The same model stopped after the first `rounds` rounds.
    pub fn truncated(&self, rounds: usize) -> GbdtModel {
        GbdtModel {
            trees: self.trees[..rounds.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }

    /// Raw class scores: base plus shrunken tree outputs.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.base.is_empty() {
            return Err(Error::NotFitted);
        }
        if x.len() != self.features {
            return Err(Error::DimensionMismatch {
                expected: self.features,
                got: x.len(),
            });
        }
        let mut s = self.base.clone();
        for round in &self.trees {
            for (c, tree) in round.iter().enumerate() {
                s[c] += self.shrinkage * tree.predict(x);
            }
        }
        Ok(s)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores(x)?))
    }

    /// Most probable class; the lowest index wins ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    /// Mean negative log-likelihood of `labels`.
    pub fn log_loss(&self, x: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if x.is_empty() || x.len() != labels.len() {
            return Err(Error::invalid("log loss needs equally many non-empty rows and labels"));
        }
        let mut total = 0.0;
        for (row, &l) in x.iter().zip(labels) {
            total -= self.predict_proba(row)?[l].max(PRIOR_FLOOR).ln();
        }
        Ok(total / x.len() as f64)
    }

    pub fn evaluate(&self, x: &[Vec<f64>], labels: &[usize]) -> Result<MetricReport> {
        let predicted = x.iter().map(|row| self.predict(row)).collect::<Result<Vec<_>>>()?;
        classification_metrics_indexed(&predicted, labels)
    }

    /// Text form: a header, then every tree in preorder, one node per line.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "classes {}", self.classes)?;
        writeln!(out, "features {}", self.features)?;
        writeln!(out, "shrinkage {}", self.shrinkage)?;
        let base: Vec<String> = self.base.iter().map(f64::to_string).collect();
        writeln!(out, "base {}", base.join(" "))?;
        writeln!(out, "rounds {}", self.trees.len())?;
        for (r, round) in self.trees.iter().enumerate() {
            for (c, tree) in round.iter().enumerate() {
                writeln!(out, "tree {r} {c}")?;
                for node in &tree.nodes {
                    match *node {
                        Node::Split { feature, threshold, .. } => writeln!(out, "split {feature} {threshold}")?,
                        Node::Leaf(v) => writeln!(out, "leaf {v}")?,
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("write to memory");
        String::from_utf8(out).expect("utf-8")
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = reader
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::invalid(e.to_string()))?;
        let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (no, line) = it
                .next()
                .ok_or_else(|| Error::parse(lines.len(), "unexpected end of model"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::parse(no, format!("expected `{key}`")));
            }
            Ok((no, parts.collect()))
        };
        fn num<T: std::str::FromStr>(no: usize, s: Option<&&str>) -> Result<T> {
            s.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(no, "bad number"))
        }

        let (no, magic) = next("gbdt")?;
        if magic != ["1"] {
            return Err(Error::parse(no, "unsupported model version"));
        }
        let (no, v) = next("classes")?;
        let classes: usize = num(no, v.first())?;
        let (no, v) = next("features")?;
        let features: usize = num(no, v.first())?;
        let (no, v) = next("shrinkage")?;
        let shrinkage: f64 = num(no, v.first())?;
        let (no, v) = next("base")?;
        let base = v.iter().map(|s| num(no, Some(s))).collect::<Result<Vec<f64>>>()?;
        if base.len() != classes {
            return Err(Error::parse(no, "base score count differs from class count"));
        }
        let (no, v) = next("rounds")?;
        let rounds: usize = num(no, v.first())?;

        let mut rest: Vec<(usize, &str)> = lines
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .skip(6)
            .filter(|(_, l)| !l.is_empty())
            .collect();
        rest.reverse();
        let mut trees = Vec::with_capacity(rounds);
        for r in 0..rounds {
            let mut round = Vec::with_capacity(classes);
            for c in 0..classes {
                let (no, header) = rest.pop().ok_or_else(|| Error::parse(lines.len(), "missing tree"))?;
                if header != format!("tree {r} {c}") {
                    return Err(Error::parse(no, format!("expected `tree {r} {c}`")));
                }
                let mut nodes = Vec::new();
                read_subtree(&mut rest, &mut nodes, features, lines.len())?;
                round.push(RegressionTree { nodes });
            }
            trees.push(round);
        }
        if let Some((no, _)) = rest.pop() {
            return Err(Error::parse(no, "trailing content"));
        }
        Ok(GbdtModel {
            classes,
            features,
            shrinkage,
            base,
            trees,
        })
    }
}

fn read_subtree(rest: &mut Vec<(usize, &str)>, nodes: &mut Vec<Node>, features: usize, last: usize) -> Result<()> {
    let (no, line) = rest.pop().ok_or_else(|| Error::parse(last, "truncated tree"))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts.as_slice() {
        ["leaf", v] => {
            let v: f64 = v.parse().map_err(|_| Error::parse(no, "bad leaf value"))?;
            nodes.push(Node::Leaf(v));
        }
        ["split", f, t] => {
            let feature: usize = f.parse().map_err(|_| Error::parse(no, "bad feature index"))?;
            let threshold: f64 = t.parse().map_err(|_| Error::parse(no, "bad threshold"))?;
            if feature >= features {
                return Err(Error::parse(no, "feature index out of range"));
            }
            let at = nodes.len();
            nodes.push(Node::Split {
                feature,
                threshold,
                right: 0,
            });
            read_subtree(rest, nodes, features, last)?;
            let right = nodes.len();
            read_subtree(rest, nodes, features, last)?;
            nodes[at] = Node::Split {
                feature,
                threshold,
                right,
            };
        }
        _ => return Err(Error::parse(no, "expected `leaf` or `split`")),
    }
    Ok(())
}

/// Reads a training table: numeric feature columns followed by a final
/// `label` column holding change class names.
pub fn read_training_data(path: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, Vec<ChangeClass>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_training_from(file)
}

pub fn read_training_from(reader: impl Read) -> Result<(Vec<Vec<f64>>, Vec<ChangeClass>)> {
    let mut reader = csv::Reader::from_reader(reader);
    let header = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let width = header.len();
    if width < 2 || &header[width - 1] != "label" {
        return Err(Error::parse(1, "last column must be `label`"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::parse(line, e.to_string()))?;
        let row = record
            .iter()
            .take(width - 1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(line, format!("bad number `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = record[width - 1]
            .parse()
            .map_err(|e: Error| Error::parse(line, e.to_string()))?;
        features.push(row);
        labels.push(label);
    }
    Ok((features, labels))
}

/// Writes a training table with theme-named feature columns, an optional
/// `prior_score` column and a `label` column.
pub fn write_training_data(mut out: impl Write, features: &[Vec<f64>], labels: &[ChangeClass]) -> Result<()> {
    let width = features.first().map_or(THEME_COUNT, Vec::len);
    if !(width == THEME_COUNT || width == THEME_COUNT + 1) || features.iter().any(|r| r.len() != width) {
        return Err(Error::invalid(format!(
            "training rows need {THEME_COUNT} or {} features",
            THEME_COUNT + 1
        )));
    }
    if features.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let mut header: Vec<&str> = Theme::ALL.iter().map(|t| t.as_str()).collect();
    if width > THEME_COUNT {
        header.push("prior_score");
    }
    header.push("label");
    let io = |e: std::io::Error| Error::invalid(e.to_string());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (row, label) in features.iter().zip(labels) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{},{label}", cells.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Held-out metrics of repeated seeded fits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub seeds: Vec<u64>,
    pub sessions: Vec<MetricReport>,
    pub mean: MetricReport,
    /// Mean test accuracy of always predicting the training split's most
    /// frequent class.
    pub majority_accuracy: f64,
}

/// Fits one model per seed on a seeded `1 − test_fraction` split and scores
/// it on the rest.
pub fn change_sessions(
    x: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    config: &GbdtConfig,
    test_fraction: f64,
    seeds: &[u64],
) -> Result<SessionReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("need at least one seed"));
    }
    if x.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let fractions = [1.0 - test_fraction, 0.0, test_fraction];
    let mut sessions = Vec::with_capacity(seeds.len());
    let mut majority = 0.0;
    for &seed in seeds {
        let split = split_dataset(x.len(), &fractions, seed)?;
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
            (
                idx.iter().map(|&i| x[i].clone()).collect(),
                idx.iter().map(|&i| labels[i]).collect(),
            )
        };
        let (train_x, train_y) = pick(&split.train);
        let (test_x, test_y) = pick(&split.test);
        let model = fit(&train_x, &train_y, classes, config)?;
        sessions.push(model.evaluate(&test_x, &test_y)?);
        let mut counts = vec![0usize; classes];
        for &l in &train_y {
            counts[l] += 1;
        }
        let top = (0..classes)
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .unwrap_or(0);
        majority += test_y.iter().filter(|&&l| l == top).count() as f64 / test_y.len() as f64;
    }
    Ok(SessionReport {
        seeds: seeds.to_vec(),
        mean: MetricReport::mean(&sessions).expect("non-empty"),
        sessions,
        majority_accuracy: majority / seeds.len() as f64,
    })
}
