//! Posts, stance labels and corpus-level queries.
//!
//! A [`Corpus`] is loaded from a line-delimited JSON file and keeps a
//! per-author index sorted by `(timestamp, id)`, which backs the "last λ
//! posts before `t`" history query used by the classifier.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Substrings used to keep vaccination-related posts.
pub const DEFAULT_KEYWORDS: [&str; 7] = ["vax", "vaccin", "covidvic", "impfstoff", "vacin", "vacuna", "impfung"];

/// Attitude towards vaccination carried by a post.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StanceLabel {
    /// Positive.
    PO,
    /// Negative.
    NG,
    /// Neutral.
    NE,
    /// Positive towards vaccination, dissatisfied with government management.
    PD,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 4] = [StanceLabel::PO, StanceLabel::NG, StanceLabel::NE, StanceLabel::PD];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::PO => "PO",
            StanceLabel::NG => "NG",
            StanceLabel::NE => "NE",
            StanceLabel::PD => "PD",
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StanceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PO" => Ok(StanceLabel::PO),
            "NG" => Ok(StanceLabel::NG),
            "NE" => Ok(StanceLabel::NE),
            "PD" => Ok(StanceLabel::PD),
            other => Err(Error::invalid(format!("unknown stance label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostKind {
    Original,
    Retweet,
    Quote,
}

/// One social-media message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Post {
    pub id: String,
    pub author_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub text: String,
    pub kind: PostKind,
    #[serde(default)]
    pub source_post_id: Option<String>,
    pub retweet_count: u64,
    #[serde(default)]
    pub label: Option<StanceLabel>,
}

impl Post {
    /// An original, unlabelled post with no retweets.
    pub fn original(id: &str, author_id: &str, timestamp: i64, text: &str) -> Self {
        Post {
            id: id.to_string(),
            author_id: author_id.to_string(),
            timestamp,
            text: text.to_string(),
            kind: PostKind::Original,
            source_post_id: None,
            retweet_count: 0,
            label: None,
        }
    }

    pub fn retweet_of(id: &str, author_id: &str, timestamp: i64, source: &Post) -> Self {
        Post {
            id: id.to_string(),
            author_id: author_id.to_string(),
            timestamp,
            text: source.text.clone(),
            kind: PostKind::Retweet,
            source_post_id: Some(source.id.clone()),
            retweet_count: 0,
            label: source.label,
        }
    }

    pub fn with_label(mut self, label: StanceLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_retweet_count(mut self, count: u64) -> Self {
        self.retweet_count = count;
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.kind != PostKind::Original && self.source_post_id.is_none() {
            return Err(format!("field `source_post_id` is required for a {:?} post", self.kind));
        }
        Ok(())
    }
}

/// An immutable collection of posts with a per-author timeline index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    posts: Vec<Post>,
    by_id: HashMap<String, usize>,
    by_author: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate post ids.
    pub fn new(posts: Vec<Post>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(posts.len());
        let mut by_author: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, post) in posts.iter().enumerate() {
            if by_id.insert(post.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(post.id.clone()));
            }
            by_author.entry(post.author_id.clone()).or_default().push(i);
        }
        for timeline in by_author.values_mut() {
            timeline.sort_by(|&a, &b| (posts[a].timestamp, &posts[a].id).cmp(&(posts[b].timestamp, &posts[b].id)));
        }
        Ok(Corpus {
            posts,
            by_id,
            by_author,
        })
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Post> {
        self.by_id.get(id).map(|&i| &self.posts[i])
    }

    /// Author ids in ascending order.
    pub fn authors(&self) -> impl Iterator<Item = &str> {
        self.by_author.keys().map(String::as_str)
    }

    pub fn author_count(&self) -> usize {
        self.by_author.len()
    }

    /// The author's posts in ascending `(timestamp, id)` order.
    pub fn timeline(&self, author_id: &str) -> impl Iterator<Item = &Post> {
        self.by_author
            .get(author_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.posts[i])
    }

    /// The last `lambda` posts of `user` strictly before `t`, most recent first.
    pub fn recent_posts(&self, user: &str, t: i64, lambda: usize) -> Vec<&Post> {
        let Some(timeline) = self.by_author.get(user) else {
            return Vec::new();
        };
        let end = timeline.partition_point(|&i| self.posts[i].timestamp < t);
        timeline[..end]
            .iter()
            .rev()
            .take(lambda)
            .map(|&i| &self.posts[i])
            .collect()
    }

    /// A new corpus holding the posts accepted by `keep`, in original order.
    pub fn filtered(&self, mut keep: impl FnMut(&Post) -> bool) -> Corpus {
        let posts: Vec<Post> = self.posts.iter().filter(|p| keep(p)).cloned().collect();
        Corpus::new(posts).expect("ids of a subset stay unique")
    }

    /// Overrides labels by post id; ids absent from the corpus are ignored.
    pub fn relabel(&self, labels: &HashMap<String, StanceLabel>) -> Corpus {
        let posts = self
            .posts
            .iter()
            .map(|p| {
                let mut p = p.clone();
                if let Some(&label) = labels.get(&p.id) {
                    p.label = Some(label);
                }
                p
            })
            .collect();
        Corpus::new(posts).expect("ids unchanged")
    }

    /// Retweets grouped by the id of the post they share.
    pub fn retweets_by_source(&self) -> HashMap<&str, Vec<&Post>> {
        let mut out: HashMap<&str, Vec<&Post>> = HashMap::new();
        for post in &self.posts {
            if post.kind == PostKind::Retweet {
                if let Some(src) = &post.source_post_id {
                    out.entry(src.as_str()).or_default().push(post);
                }
            }
        }
        out
    }
}

/// Reads a posts file: one JSON object per line.
pub fn load_posts(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_posts(BufReader::new(file)).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn read_posts(reader: impl BufRead) -> Result<Corpus> {
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        post.validate().map_err(|m| Error::parse(lineno, m))?;
        if !seen.insert(post.id.clone()) {
            return Err(Error::DuplicateId(post.id));
        }
        posts.push(post);
    }
    Corpus::new(posts)
}

/// Writes posts in the line-delimited JSON format read by [`load_posts`].
pub fn write_posts(path: impl AsRef<Path>, posts: &[Post]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for post in posts {
        let line = serde_json::to_string(post).expect("posts always serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Keeps the posts whose lower-cased text contains a lower-cased keyword.
pub fn filter_vaccine_related<S: AsRef<str>>(corpus: &Corpus, keywords: &[S]) -> Corpus {
    let keywords: Vec<String> = keywords
        .iter()
        .map(|k| k.as_ref().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    corpus.filtered(|p| matches_keywords(&p.text, &keywords))
}

fn matches_keywords(text: &str, lowered_keywords: &[String]) -> bool {
    let text = text.to_lowercase();
    lowered_keywords.iter().any(|k| text.contains(k.as_str()))
}

/// Removes user mentions, http(s) links and a leading retweet marker.
pub fn clean_text(text: &str) -> String {
    let tokens: Vec<&str> = text
        .split_whitespace()
        .filter(|t| !t.starts_with('@'))
        .filter(|t| !is_url(t))
        .collect();
    let skip = tokens.iter().take_while(|t| matches!(**t, "RT" | "RT:")).count();
    tokens[skip..].join(" ")
}

fn is_url(token: &str) -> bool {
    let rest = token.strip_prefix("https://").or_else(|| token.strip_prefix("http://"));
    matches!(rest, Some(r) if !r.is_empty())
}

/// Greedy cover of all authors by the most retweeted originals.
///
/// Originals are taken in descending `retweet_count` order (ties by id) until
/// every author has originated or retweeted at least one taken post.
pub fn select_annotation_set(corpus: &Corpus) -> Vec<&Post> {
    let mut originals: Vec<&Post> = corpus.posts().iter().filter(|p| p.kind == PostKind::Original).collect();
    originals.sort_by(|a, b| b.retweet_count.cmp(&a.retweet_count).then_with(|| a.id.cmp(&b.id)));
    let retweets = corpus.retweets_by_source();

    let mut uncovered: BTreeSet<&str> = corpus.authors().collect();
    let mut selected = Vec::new();
    for post in originals {
        if uncovered.is_empty() {
            break;
        }
        uncovered.remove(post.author_id.as_str());
        for rt in retweets.get(post.id.as_str()).into_iter().flatten() {
            uncovered.remove(rt.author_id.as_str());
        }
        selected.push(post);
    }
    selected
}
