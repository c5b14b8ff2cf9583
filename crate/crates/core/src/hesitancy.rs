//! Individual hesitancy scores, attitude-change classes, daily label
//! proportions and the perceived-information features built from popular
//! posts spread by a user's neighbors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Post, PostKind, StanceLabel};
use crate::error::{Error, Result};
use crate::graph::SocialGraph;

pub const THEME_COUNT: usize = 11;

/// Default change threshold: smaller absolute changes count as unchanged.
pub const CHANGE_THRESHOLD: f64 = 0.05;

/// Default minimum number of stance-bearing posts per window.
pub const MIN_POSTS: usize = 3;

/// Default length, in days, of the windows before and after a period.
pub const WINDOW_DAYS: i64 = 14;

/// Default share of originals kept as popular.
pub const POPULAR_QUANTILE: f64 = 0.25;

/// Topic of a widely propagated post.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Theme {
    PositiveNews,
    NegativeNews,
    DistrustGovernment,
    DissatisfactionPolicy,
    PharmaPerception,
    Conspiracy,
    HealthBeliefs,
    PositivePersonal,
    NegativePersonal,
    PositiveInfo,
    NegativeInfo,
}

impl Theme {
    pub const ALL: [Theme; THEME_COUNT] = [
        Theme::PositiveNews,
        Theme::NegativeNews,
        Theme::DistrustGovernment,
        Theme::DissatisfactionPolicy,
        Theme::PharmaPerception,
        Theme::Conspiracy,
        Theme::HealthBeliefs,
        Theme::PositivePersonal,
        Theme::NegativePersonal,
        Theme::PositiveInfo,
        Theme::NegativeInfo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Theme::PositiveNews => "PositiveNews",
            Theme::NegativeNews => "NegativeNews",
            Theme::DistrustGovernment => "DistrustGovernment",
            Theme::DissatisfactionPolicy => "DissatisfactionPolicy",
            Theme::PharmaPerception => "PharmaPerception",
            Theme::Conspiracy => "Conspiracy",
            Theme::HealthBeliefs => "HealthBeliefs",
            Theme::PositivePersonal => "PositivePersonal",
            Theme::NegativePersonal => "NegativePersonal",
            Theme::PositiveInfo => "PositiveInfo",
            Theme::NegativeInfo => "NegativeInfo",
        }
    }
}

impl fmt::Display for Theme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Theme {
    type Err = Error;

    /// Accepts the canonical name in any case, with or without `_`/`-`.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        Theme::ALL
            .into_iter()
            .find(|t| t.as_str().to_lowercase() == key)
            .ok_or_else(|| Error::invalid(format!("unknown theme `{s}`")))
    }
}

/// Half-open time interval `[start, end)` in Unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(Error::invalid(format!(
                "window ends before it starts ({start} > {end})"
            )));
        }
        Ok(Window { start, end })
    }

    /// Whole UTC days `first..=last`.
    pub fn days(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        Window::new(day_start(first), day_start(last) + 86_400)
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t < self.end
    }

    /// The `days` days immediately before this window.
    pub fn before(&self, days: i64) -> Window {
        Window {
            start: self.start - days * 86_400,
            end: self.start,
        }
    }

    /// The `days` days immediately after this window.
    pub fn after(&self, days: i64) -> Window {
        Window {
            start: self.end,
            end: self.end + days * 86_400,
        }
    }
}

fn day_start(d: NaiveDate) -> i64 {
    d.and_time(NaiveTime::MIN).and_utc().timestamp()
}

fn utc_day(t: i64) -> NaiveDate {
    DateTime::from_timestamp(t, 0)
        .map(|d| d.date_naive())
        .unwrap_or(NaiveDate::MIN)
}

/// The two analysis periods used by default.
pub fn default_periods() -> [Window; 2] {
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
    [
        Window::days(d(2020, 12, 27), d(2021, 1, 20)).expect("ordered"),
        Window::days(d(2021, 1, 25), d(2021, 2, 8)).expect("ordered"),
    ]
}

/// Stance counts and score of one user over one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HesitancyRecord {
    pub user: String,
    pub window_start: i64,
    pub window_end: i64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub score: f64,
}

fn is_positive(label: StanceLabel) -> bool {
    matches!(label, StanceLabel::PO | StanceLabel::PD)
}

fn polarity_counts<'a>(posts: impl IntoIterator<Item = &'a Post>) -> (usize, usize) {
    posts
        .into_iter()
        .filter_map(|p| p.label)
        .fold((0, 0), |(pos, neg), l| match l {
            l if is_positive(l) => (pos + 1, neg),
            StanceLabel::NG => (pos, neg + 1),
            _ => (pos, neg),
        })
}

/// `(N_p − N_n)/(N_p + N_n)`.
pub fn score_from_counts(n_pos: usize, n_neg: usize) -> Result<f64> {
    if n_pos + n_neg == 0 {
        return Err(Error::NoStancePosts);
    }
    Ok((n_pos as f64 - n_neg as f64) / (n_pos + n_neg) as f64)
}

/// Score of one user's labelled posts. PO and PD count as positive, NG as
/// negative and NE is ignored; originals, retweets and quotes all count.
pub fn hesitancy_score<'a>(
    user: &str,
    window: Window,
    posts: impl IntoIterator<Item = &'a Post>,
) -> Result<HesitancyRecord> {
    let (n_pos, n_neg) = polarity_counts(posts);
    Ok(HesitancyRecord {
        user: user.to_string(),
        window_start: window.start,
        window_end: window.end,
        n_pos,
        n_neg,
        score: score_from_counts(n_pos, n_neg)?,
    })
}

fn posts_in<'c>(corpus: &'c Corpus, user: &str, window: Window) -> impl Iterator<Item = &'c Post> {
    corpus.timeline(user).filter(move |p| window.contains(p.timestamp))
}

/// [`hesitancy_score`] over the user's posts that fall in `window`.
pub fn user_hesitancy(corpus: &Corpus, user: &str, window: Window) -> Result<HesitancyRecord> {
    hesitancy_score(user, window, posts_in(corpus, user, window))
}

/// Users with at least `min_posts` stance-bearing (PO, PD or NG) posts in the
/// window.
pub fn eligible_users(corpus: &Corpus, window: Window, min_posts: usize) -> Result<BTreeSet<String>> {
    if min_posts == 0 {
        return Err(Error::invalid("min_posts must be at least 1"));
    }
    Ok(corpus
        .authors()
        .filter(|u| {
            let (p, n) = polarity_counts(posts_in(corpus, u, window));
            p + n >= min_posts
        })
        .map(str::to_string)
        .collect())
}

/// Direction of a change in score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeClass {
    Increased,
    Decreased,
    Unchanged,
}

impl ChangeClass {
    pub const ALL: [ChangeClass; 3] = [ChangeClass::Increased, ChangeClass::Decreased, ChangeClass::Unchanged];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeClass::Increased => "increased",
            ChangeClass::Decreased => "decreased",
            ChangeClass::Unchanged => "unchanged",
        }
    }
}

impl fmt::Display for ChangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChangeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_lowercase();
        ChangeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::invalid(format!("unknown change class `{s}`")))
    }
}

// Differences this close to the threshold are treated as equal to it, so
// that 0.15 − 0.10 counts as a change of 0.05.
const BOUNDARY_SLACK: f64 = 1e-12;

/// A change strictly smaller than `threshold` is unchanged; otherwise the
/// sign of `after − before` decides. Categories refer to the score, so
/// "increased" means the score went up.
pub fn classify_change(before: f64, after: f64, threshold: f64) -> ChangeClass {
    let delta = after - before;
    if delta.abs() < threshold - BOUNDARY_SLACK {
        ChangeClass::Unchanged
    } else if delta > 0.0 {
        ChangeClass::Increased
    } else {
        ChangeClass::Decreased
    }
}

/// Label fractions for one UTC day; `None` when the day has no labelled posts.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyProportions {
    pub date: NaiveDate,
    pub fractions: Option<[f64; StanceLabel::COUNT]>,
}

/// Per-day label fractions for every day in `first..=last`.
pub fn daily_label_proportions<'a>(
    posts: impl IntoIterator<Item = &'a Post>,
    first: NaiveDate,
    last: NaiveDate,
) -> Result<Vec<DailyProportions>> {
    if last < first {
        return Err(Error::invalid("date range ends before it starts"));
    }
    let mut counts: BTreeMap<NaiveDate, [usize; StanceLabel::COUNT]> = BTreeMap::new();
    for p in posts {
        if let Some(l) = p.label {
            let day = utc_day(p.timestamp);
            if first <= day && day <= last {
                counts.entry(day).or_default()[l.index()] += 1;
            }
        }
    }
    Ok(first
        .iter_days()
        .take_while(|d| *d <= last)
        .map(|date| {
            let fractions = counts.get(&date).map(|c| {
                let total: usize = c.iter().sum();
                let mut f = [0.0; StanceLabel::COUNT];
                for (fi, &ci) in f.iter_mut().zip(c) {
                    *fi = ci as f64 / total as f64;
                }
                f
            });
            DailyProportions { date, fractions }
        })
        .collect())
}

/// The `ceil(quantile·n)` originals with the most retweets, ties broken by id.
pub fn select_popular<'a>(posts: impl IntoIterator<Item = &'a Post>, quantile: f64) -> Result<Vec<&'a Post>> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::invalid("quantile must be in (0, 1]"));
    }
    let mut originals: Vec<&Post> = posts.into_iter().filter(|p| p.kind == PostKind::Original).collect();
    originals.sort_by(|a, b| b.retweet_count.cmp(&a.retweet_count).then_with(|| a.id.cmp(&b.id)));
    let take = (quantile * originals.len() as f64).ceil() as usize;
    originals.truncate(take);
    Ok(originals)
}

/// Who spread each popular post, and when: the author at posting time and
/// every retweeter at retweet time.
#[derive(Debug, Clone, Default)]
pub struct PropagationIndex {
    themes: BTreeMap<String, Theme>,
    spreaders: HashMap<String, Vec<(String, i64)>>,
}

impl PropagationIndex {
    /// Index over the posts of `popular` that carry a theme annotation.
    pub fn new(corpus: &Corpus, popular: &[&Post], themes: &HashMap<String, Theme>) -> Self {
        let mut index = PropagationIndex::default();
        for p in popular {
            if let Some(&t) = themes.get(&p.id) {
                index.themes.insert(p.id.clone(), t);
                index
                    .spreaders
                    .insert(p.id.clone(), vec![(p.author_id.clone(), p.timestamp)]);
            }
        }
        for p in corpus.posts() {
            if p.kind != PostKind::Retweet {
                continue;
            }
            if let Some(list) = p.source_post_id.as_ref().and_then(|s| index.spreaders.get_mut(s)) {
                list.push((p.author_id.clone(), p.timestamp));
            }
        }
        index
    }

    pub fn len(&self) -> usize {
        self.themes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.themes.is_empty()
    }

    /// Per theme, the number of distinct popular posts that at least one of
    /// the user's direct neighbors originated or retweeted during `period`.
    pub fn perceived_theme_vector(
        &self,
        user: &str,
        graph: &SocialGraph,
        period: Window,
    ) -> Result<[u32; THEME_COUNT]> {
        let node = graph
            .node(user)
            .ok_or_else(|| Error::UserNotInGraph(user.to_string()))?;
        let neighbors: BTreeSet<&str> = graph.neighbors(node).iter().map(|&n| graph.id(n)).collect();
        let mut counts = [0u32; THEME_COUNT];
        for (post, theme) in &self.themes {
            let reached = self.spreaders[post]
                .iter()
                .any(|(u, t)| period.contains(*t) && neighbors.contains(u.as_str()));
            if reached {
                counts[theme.index()] += 1;
            }
        }
        Ok(counts)
    }
}

/// Features and change classes for every user eligible before and after a
/// period.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeDataset {
    pub users: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<ChangeClass>,
    pub before: Vec<HesitancyRecord>,
    pub after: Vec<HesitancyRecord>,
}

/// Settings for building a [`ChangeDataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeSettings {
    pub window_days: i64,
    pub min_posts: usize,
    pub threshold: f64,
    pub quantile: f64,
    /// Append the score before the period as a twelfth feature.
    pub prior_score_feature: bool,
}

impl Default for ChangeSettings {
    fn default() -> Self {
        ChangeSettings {
            window_days: WINDOW_DAYS,
            min_posts: MIN_POSTS,
            threshold: CHANGE_THRESHOLD,
            quantile: POPULAR_QUANTILE,
            prior_score_feature: false,
        }
    }
}

/// Builds the change-prediction data for one period.
///
/// Popular posts are the top originals posted during the period; a user is
/// kept when they are in the graph and eligible in both surrounding windows.
pub fn change_dataset(
    corpus: &Corpus,
    graph: &SocialGraph,
    themes: &HashMap<String, Theme>,
    period: Window,
    settings: &ChangeSettings,
) -> Result<ChangeDataset> {
    let before_w = period.before(settings.window_days);
    let after_w = period.after(settings.window_days);
    let in_period = corpus.posts().iter().filter(|p| period.contains(p.timestamp));
    let popular = select_popular(in_period, settings.quantile)?;
    let index = PropagationIndex::new(corpus, &popular, themes);

    let before_users = eligible_users(corpus, before_w, settings.min_posts)?;
    let after_users = eligible_users(corpus, after_w, settings.min_posts)?;
    let mut out = ChangeDataset {
        users: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
        before: Vec::new(),
        after: Vec::new(),
    };
    for user in before_users.intersection(&after_users) {
        if !graph.contains(user) {
            continue;
        }
        let before = user_hesitancy(corpus, user, before_w)?;
        let after = user_hesitancy(corpus, user, after_w)?;
        let mut features: Vec<f64> = index
            .perceived_theme_vector(user, graph, period)?
            .iter()
            .map(|&c| c as f64)
            .collect();
        if settings.prior_score_feature {
            features.push(before.score);
        }
        out.labels
            .push(classify_change(before.score, after.score, settings.threshold));
        out.users.push(user.clone());
        out.features.push(features);
        out.before.push(before);
        out.after.push(after);
    }
    Ok(out)
}

/// Reads `post_id,theme` rows.
pub fn load_theme_annotations(path: impl AsRef<Path>) -> Result<HashMap<String, Theme>> {
    #[derive(Deserialize)]
    struct Row {
        post_id: String,
        theme: String,
    }
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = HashMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(line, e.to_string()))?;
        let theme = row
            .theme
            .parse()
            .map_err(|e: Error| Error::parse(line, e.to_string()))?;
        if out.insert(row.post_id.clone(), theme).is_some() {
            return Err(Error::DuplicateId(row.post_id));
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// `date,PO,NG,NE,PD`; days without labelled posts have empty fields.
pub fn write_time_series(mut out: impl Write, rows: &[DailyProportions]) -> std::io::Result<()> {
    writeln!(out, "date,PO,NG,NE,PD")?;
    for r in rows {
        match r.fractions {
            Some(f) => writeln!(out, "{},{},{},{},{}", r.date, f[0], f[1], f[2], f[3])?,
            None => writeln!(out, "{},,,,", r.date)?,
        }
    }
    Ok(())
}

/// `user,window_start,window_end,n_pos,n_neg,score`
pub fn write_hesitancy(mut out: impl Write, rows: &[HesitancyRecord]) -> std::io::Result<()> {
    writeln!(out, "user,window_start,window_end,n_pos,n_neg,score")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.user, r.window_start, r.window_end, r.n_pos, r.n_neg, r.score
        )?;
    }
    Ok(())
}
