//! Inter-annotator agreement: average observed agreement, Fleiss' kappa and
//! Krippendorff's alpha (nominal).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::StanceLabel;
use crate::error::{Error, Result};

/// Items × categories table of rating counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    counts: Vec<Vec<u32>>,
    categories: usize,
}

impl RatingMatrix {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self> {
        let categories = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|row| row.len() != categories) {
            return Err(Error::invalid("rating matrix rows differ in length"));
        }
        Ok(RatingMatrix { counts, categories })
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn row(&self, item: usize) -> &[u32] {
        &self.counts[item]
    }

    fn raters(&self, item: usize) -> u32 {
        self.counts[item].iter().sum()
    }

    /// One-vs-rest collapse: column 0 counts `category`, column 1 the rest.
    pub fn binarize(&self, category: usize) -> RatingMatrix {
        let counts = self
            .counts
            .iter()
            .map(|row| {
                let hit = row[category];
                vec![hit, row.iter().sum::<u32>() - hit]
            })
            .collect();
        RatingMatrix { counts, categories: 2 }
    }

    fn item_agreement(&self, item: usize) -> f64 {
        let r = self.raters(item) as f64;
        let pairs: f64 = self.counts[item].iter().map(|&n| n as f64 * (n as f64 - 1.0)).sum();
        pairs / (r * (r - 1.0))
    }
}

/// Mean over items of the share of rater pairs that agree.
pub fn average_observed_agreement(m: &RatingMatrix) -> Result<f64> {
    if m.items() == 0 {
        return Err(Error::invalid("no items"));
    }
    if let Some(i) = (0..m.items()).find(|&i| m.raters(i) < 2) {
        return Err(Error::invalid(format!("item {i} has fewer than 2 ratings")));
    }
    Ok((0..m.items()).map(|i| m.item_agreement(i)).sum::<f64>() / m.items() as f64)
}

/// Fleiss' kappa; every item must carry the same number of ratings (≥ 2).
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64> {
    let observed = average_observed_agreement(m)?;
    let r = m.raters(0);
    if (0..m.items()).any(|i| m.raters(i) != r) {
        return Err(Error::invalid("items carry different numbers of ratings"));
    }
    let total = (m.items() as u64 * r as u64) as f64;
    let expected: f64 = (0..m.categories())
        .map(|c| {
            let p = (0..m.items()).map(|i| m.row(i)[c] as f64).sum::<f64>() / total;
            p * p
        })
        .sum();
    if expected == 1.0 {
        return if observed == 1.0 {
            Ok(1.0)
        } else {
            Err(Error::DegenerateAgreement)
        };
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Krippendorff's alpha with the nominal metric.
///
/// `units[u]` holds the ratings given to unit `u`, `None` where a rater
/// skipped it. Units with fewer than two ratings are not pairable and are
/// ignored.
pub fn krippendorff_alpha<L: Ord + Clone>(units: &[Vec<Option<L>>]) -> Result<f64> {
    let mut coincidence: BTreeMap<(L, L), f64> = BTreeMap::new();
    for unit in units {
        let mut values: BTreeMap<&L, f64> = BTreeMap::new();
        for v in unit.iter().flatten() {
            *values.entry(v).or_default() += 1.0;
        }
        let m: f64 = values.values().sum();
        if m < 2.0 {
            continue;
        }
        for (&c, &nc) in &values {
            for (&k, &nk) in &values {
                let pairs = if c == k { nc * (nc - 1.0) } else { nc * nk };
                if pairs > 0.0 {
                    *coincidence.entry((c.clone(), k.clone())).or_default() += pairs / (m - 1.0);
                }
            }
        }
    }
    let mut marginals: BTreeMap<&L, f64> = BTreeMap::new();
    for ((c, _), &o) in &coincidence {
        *marginals.entry(c).or_default() += o;
    }
    let n: f64 = marginals.values().sum();
    if n < 2.0 {
        return Err(Error::invalid("fewer than two pairable ratings"));
    }
    let disagree: f64 = coincidence.iter().filter(|((c, k), _)| c != k).map(|(_, &o)| o).sum();
    let expected: f64 = marginals
        .iter()
        .flat_map(|(c, &nc)| {
            marginals
                .iter()
                .filter(move |(k, _)| *k != c)
                .map(move |(_, &nk)| nc * nk)
        })
        .sum();
    if expected == 0.0 {
        return Err(Error::NoVariation);
    }
    Ok(1.0 - (n - 1.0) * disagree / expected)
}

/// Stance ratings keyed by item, then rater.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationSet {
    items: BTreeMap<String, BTreeMap<String, StanceLabel>>,
    raters: BTreeSet<String>,
}

#[derive(Deserialize)]
struct RatingRow {
    item_id: String,
    rater_id: String,
    label: String,
}

impl AnnotationSet {
    pub fn insert(&mut self, item: &str, rater: &str, label: StanceLabel) {
        self.raters.insert(rater.to_string());
        self.items
            .entry(item.to_string())
            .or_default()
            .insert(rater.to_string(), label);
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Reads `item_id,rater_id,label` rows.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(0, format!("{other:?}")),
        })?;
        let mut set = AnnotationSet::default();
        for (i, row) in reader.deserialize::<RatingRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::parse(line, e.to_string()))?;
            let label = row
                .label
                .parse()
                .map_err(|e: Error| Error::parse(line, e.to_string()))?;
            set.insert(&row.item_id, &row.rater_id, label);
        }
        Ok(set)
    }

    /// Counts over the four labels for items rated at least twice.
    pub fn matrix(&self) -> RatingMatrix {
        let counts = self
            .items
            .values()
            .filter(|r| r.len() >= 2)
            .map(|ratings| {
                let mut row = vec![0; StanceLabel::COUNT];
                for l in ratings.values() {
                    row[l.index()] += 1;
                }
                row
            })
            .collect();
        RatingMatrix {
            counts,
            categories: StanceLabel::COUNT,
        }
    }

    /// One entry per known rater for every item, `None` where missing.
    pub fn units(&self) -> Vec<Vec<Option<StanceLabel>>> {
        self.items
            .values()
            .map(|ratings| self.raters.iter().map(|r| ratings.get(r).copied()).collect())
            .collect()
    }
}

/// The three statistics; `None` where a statistic is undefined for the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub aoa: Option<f64>,
    pub fleiss_kappa: Option<f64>,
    pub krippendorff_alpha: Option<f64>,
}

impl AgreementStats {
    fn compute<L: Ord + Clone>(matrix: &RatingMatrix, units: &[Vec<Option<L>>]) -> Self {
        AgreementStats {
            aoa: average_observed_agreement(matrix).ok(),
            fleiss_kappa: fleiss_kappa(matrix).ok(),
            krippendorff_alpha: krippendorff_alpha(units).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub overall: AgreementStats,
    /// One-vs-rest statistics per label.
    pub per_label: BTreeMap<String, AgreementStats>,
}

pub fn agreement_report(set: &AnnotationSet) -> AgreementReport {
    let matrix = set.matrix();
    let units = set.units();
    let per_label = StanceLabel::ALL
        .iter()
        .map(|&label| {
            let bin_units: Vec<Vec<Option<bool>>> = units
                .iter()
                .map(|u| u.iter().map(|r| r.map(|l| l == label)).collect())
                .collect();
            (
                label.to_string(),
                AgreementStats::compute(&matrix.binarize(label.index()), &bin_units),
            )
        })
        .collect();
    AgreementReport {
        overall: AgreementStats::compute(&matrix, &units),
        per_label,
    }
}
