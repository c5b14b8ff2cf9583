//! `stance`: batch front end for graph building, stance classification,
//! tracking, hesitancy scoring and change prediction.

mod config;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use stance_core::corpus::{load_posts, Corpus, Post};
use stance_core::embed::{load_embedding_store, EmbeddingProvider, PrecomputedStore};
use stance_core::encoder::{AggregatorKind, HistoryKind};
use stance_core::eval::{agreement_report, AnnotationSet};
use stance_core::gbdt::{change_sessions, read_training_data, write_training_data, GbdtConfig};
use stance_core::graph::{
    build_interaction_graph, largest_weakly_connected_component, load_edge_list, load_interactions, load_social_graph,
    prune_edges, SocialGraph,
};
use stance_core::hesitancy::{
    change_dataset, daily_label_proportions, eligible_users, load_theme_annotations, user_hesitancy, write_hesitancy,
    write_time_series, ChangeClass, ChangeSettings, Window,
};
use stance_core::model::{
    best_cell, metric_log_csv, sweep, train, Checkpoint, Dataset, ModelConfig, ModelInputs, TrainConfig,
};
use stance_core::Error;

#[derive(Parser)]
#[command(
    name = "stance",
    version,
    about = "Stance classification and vaccine-hesitancy analysis"
)]
struct Cli {
    /// File of key=value settings; flags on the command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the pruned interaction graph and keep its largest component
    BuildGraph(BuildGraphArgs),
    /// Train the classifier and report test metrics as JSON
    Train(TrainArgs),
    /// Label posts with a trained checkpoint
    Classify(ClassifyArgs),
    /// Daily label proportions as CSV
    Track(TrackArgs),
    /// Hesitancy scores in the windows before and after a period
    Hesitancy(HesitancyArgs),
    /// Predict attitude change from perceived themes over seeded sessions
    PredictChange(PredictChangeArgs),
    /// Inter-annotator agreement statistics as JSON
    Agreement(AgreementArgs),
    /// Validation accuracy over a (k, lambda) grid as CSV
    Sweep(SweepArgs),
}

#[derive(Args)]
#[command(args_override_self = true)]
struct BuildGraphArgs {
    /// Interaction CSV: source,target,kind,timestamp
    #[arg(long)]
    interactions: Option<PathBuf>,
    /// Optional follower edge list CSV: u,v
    #[arg(long)]
    followers: Option<PathBuf>,
    /// Directory for edges.csv, nodes.txt and stats.json
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Edges lighter than this are removed
    #[arg(long, default_value_t = 2)]
    min_weight: u32,
}

#[derive(Args)]
struct GraphInputs {
    /// Posts file, one JSON object per line
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Graph edge list CSV (u,v) as written by build-graph
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Optional node list so isolated users are kept
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Embedding store: header d=<int>, then <post_id>\t<values>
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Encoder width
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Shell aggregator: h2gat or h2gcn
    #[arg(long, default_value_t = AggregatorKind::Gat)]
    aggregator: AggregatorKind,
    /// History aggregator: pe or mean
    #[arg(long, default_value_t = HistoryKind::PositionEncoding)]
    history: HistoryKind,
    /// Use the social encoder; false trains the text-only baseline
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    social: bool,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    /// Seed for initialisation, splits and batch order
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn train_config(&self, input_dim: usize, k: usize, lambda: usize) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                input_dim,
                hidden: self.hidden,
                k,
                lambda,
                aggregator: self.aggregator,
                history: self.history,
                social: self.social,
            },
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: self.seed,
            fractions: [self.train_fraction, self.val_fraction, self.test_fraction],
            batch_size: self.batch_size,
        }
    }
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[command(flatten)]
    inputs: GraphInputs,
    #[command(flatten)]
    model: ModelArgs,
    /// Neighborhood order and number of layers
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Recent posts per user
    #[arg(long, default_value_t = 3)]
    lambda: usize,
    /// Where to write the trained checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Per-epoch metric log CSV [default: <checkpoint>.log.csv]
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct ClassifyArgs {
    #[command(flatten)]
    inputs: GraphInputs,
    /// Checkpoint written by train
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TrackArgs {
    /// Posts file, one JSON object per line
    #[arg(long)]
    posts: Option<PathBuf>,
    /// First day, UTC
    #[arg(long, default_value = "2020-12-27")]
    first: NaiveDate,
    /// Last day, UTC, inclusive
    #[arg(long, default_value = "2021-02-08")]
    last: NaiveDate,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PeriodArgs {
    /// First day of the analysis period, UTC
    #[arg(long, default_value = "2020-12-27")]
    period_start: NaiveDate,
    /// Last day of the analysis period, UTC, inclusive
    #[arg(long, default_value = "2021-01-20")]
    period_end: NaiveDate,
    /// Length of the windows before and after the period
    #[arg(long, default_value_t = 14)]
    window_days: i64,
    /// Stance-bearing posts a user needs in a window
    #[arg(long, default_value_t = 3)]
    min_posts: usize,
}

impl PeriodArgs {
    fn period(&self) -> Result<Window, Failure> {
        if self.window_days < 1 {
            return Err(Failure::Input("window-days must be at least 1".into()));
        }
        Ok(Window::days(self.period_start, self.period_end)?)
    }
}

#[derive(Args)]
#[command(args_override_self = true)]
struct HesitancyArgs {
    /// Posts file, one JSON object per line
    #[arg(long)]
    posts: Option<PathBuf>,
    #[command(flatten)]
    period: PeriodArgs,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct PredictChangeArgs {
    /// Training CSV of theme counts and a label column; replaces the posts, graph and themes inputs
    #[arg(long)]
    training: Option<PathBuf>,
    /// Posts file, one JSON object per line
    #[arg(long)]
    posts: Option<PathBuf>,
    /// Graph edge list CSV (u,v)
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Optional node list so isolated users are kept
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Theme annotations CSV: post_id,theme
    #[arg(long)]
    themes: Option<PathBuf>,
    #[command(flatten)]
    period: PeriodArgs,
    /// Smaller absolute score changes count as unchanged
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    /// Share of originals in the period kept as popular
    #[arg(long, default_value_t = 0.25)]
    quantile: f64,
    /// Add the score before the period as a twelfth feature
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    prior_score: bool,
    /// Write the built training table to this CSV
    #[arg(long)]
    write_training: Option<PathBuf>,
    /// Boosting rounds
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    shrinkage: f64,
    /// Share of users held out in each session
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Training sessions; session i uses seed + i
    #[arg(long, default_value_t = 5)]
    sessions: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct AgreementArgs {
    /// Ratings CSV: item_id,rater_id,label
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct SweepArgs {
    #[command(flatten)]
    inputs: GraphInputs,
    #[command(flatten)]
    model: ModelArgs,
    /// Neighborhood orders to try
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3], action = ArgAction::Set, num_args = 1..)]
    ks: Vec<usize>,
    /// History lengths to try
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5], action = ArgAction::Set, num_args = 1..)]
    lambdas: Vec<usize>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed run and its exit code.
#[derive(Debug)]
enum Failure {
    /// Bad input, configuration or I/O: exit 2.
    Input(String),
    /// The computation itself failed: exit 3.
    Runtime(String),
    /// Nothing to report: exit 4.
    Empty(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Empty(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Runtime(m) | Failure::Empty(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Diverged { .. }
            | Error::NonFinite(_)
            | Error::NotFitted
            | Error::DegenerateAgreement
            | Error::NoVariation => Failure::Runtime(message),
            Error::NoStancePosts => Failure::Empty(message),
            _ => Failure::Input(message),
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match std::panic::catch_unwind(|| run(cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
        Err(_) => ExitCode::from(3),
    }
}

/// Parses `argv`, splicing in the config file when one is given.
fn parse(argv: &[OsString]) -> Result<Cli, ExitCode> {
    let first = parse_clap(argv)?;
    let Some(path) = first.config else {
        return Ok(first);
    };
    let pairs = match config::read(&path).and_then(|pairs| {
        let name = subcommand_name(&first.command);
        config::check_keys(&pairs, &flag_names(name)).map(|_| pairs)
    }) {
        Ok(pairs) => pairs,
        Err(message) => {
            eprintln!("error: {message}");
            return Err(ExitCode::from(2));
        }
    };
    let at = config::subcommand_index(argv).expect("parsed with a subcommand");
    parse_clap(&config::splice(argv, at, &pairs))
}

fn parse_clap(argv: &[OsString]) -> Result<Cli, ExitCode> {
    let result = Cli::command()
        .try_get_matches_from(argv)
        .and_then(|m| Cli::from_arg_matches(&m));
    result.map_err(|e| {
        let _ = e.print();
        ExitCode::from(if e.use_stderr() { 2 } else { 0 })
    })
}

fn subcommand_name(command: &Command) -> &'static str {
    match command {
        Command::BuildGraph(_) => "build-graph",
        Command::Train(_) => "train",
        Command::Classify(_) => "classify",
        Command::Track(_) => "track",
        Command::Hesitancy(_) => "hesitancy",
        Command::PredictChange(_) => "predict-change",
        Command::Agreement(_) => "agreement",
        Command::Sweep(_) => "sweep",
    }
}

/// Long flag names a config file may set for a subcommand.
fn flag_names(subcommand: &str) -> BTreeSet<String> {
    let cli = Cli::command();
    cli.find_subcommand(subcommand)
        .map(|sub| {
            sub.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|l| !matches!(*l, "config" | "help"))
                .map(String::from)
                .collect()
        })
        .unwrap_or_default()
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::BuildGraph(a) => build_graph(a),
        Command::Train(a) => train_cmd(a),
        Command::Classify(a) => classify(a),
        Command::Track(a) => track(a),
        Command::Hesitancy(a) => hesitancy(a),
        Command::PredictChange(a) => predict_change(a),
        Command::Agreement(a) => agreement(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

/// A required input file: it must be set and exist.
fn input<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    let path = path
        .as_deref()
        .ok_or_else(|| Failure::Input(format!("missing --{flag} (or `{flag}=` in the config file)")))?;
    optional_input(Some(path))?;
    Ok(path)
}

fn optional_input(path: Option<&Path>) -> Result<Option<&Path>, Failure> {
    match path {
        Some(p) if !p.is_file() => Err(Failure::Input(format!("{}: no such file", p.display()))),
        other => Ok(other),
    }
}

fn output<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| Failure::Input(format!("missing --{flag} (or `{flag}=` in the config file)")))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or to stdout when it is absent.
fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    text
}

fn io_text(render: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> String {
    let mut out = Vec::new();
    render(&mut out).expect("write to memory");
    String::from_utf8(out).expect("utf-8")
}

fn build_graph(a: BuildGraphArgs) -> Result<(), Failure> {
    let interactions = input(&a.interactions, "interactions")?;
    let followers = optional_input(a.followers.as_deref())?;
    let out_dir = output(&a.out_dir, "out-dir")?;
    if a.min_weight < 1 {
        return Err(Failure::Input("min-weight must be at least 1".into()));
    }

    let records = load_interactions(interactions)?;
    let pruned = prune_edges(&build_interaction_graph(&records), a.min_weight);
    let mut graph = largest_weakly_connected_component(&pruned)?;
    if let Some(path) = followers {
        graph = graph.restrict_to_followers(&load_edge_list(path)?)?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::Input(format!("{}: {e}", out_dir.display())))?;
    graph.write_edge_list(out_dir.join("edges.csv"))?;
    graph.write_nodes(out_dir.join("nodes.txt"))?;
    let stats = to_json(&graph.stats());
    write_file(&out_dir.join("stats.json"), &stats)?;
    print!("{stats}");
    Ok(())
}

/// Corpus, graph and embeddings named by [`GraphInputs`].
struct Loaded {
    corpus: Corpus,
    graph: SocialGraph,
    store: PrecomputedStore,
}

impl Loaded {
    fn inputs(&self) -> ModelInputs<'_> {
        ModelInputs {
            corpus: &self.corpus,
            graph: &self.graph,
            provider: &self.store,
        }
    }
}

impl GraphInputs {
    /// Checks every path first, then loads. The graph may be omitted for the
    /// text-only model.
    fn load(&self, social: bool) -> Result<Loaded, Failure> {
        let posts = input(&self.posts, "posts")?;
        let embeddings = input(&self.embeddings, "embeddings")?;
        let graph = if social {
            Some(input(&self.graph, "graph")?)
        } else {
            optional_input(self.graph.as_deref())?
        };
        let nodes = optional_input(self.nodes.as_deref())?;
        let graph = match graph {
            Some(g) => load_social_graph(g, nodes)?,
            None => SocialGraph::from_edge_list::<&str>(&[]),
        };
        if social && graph.is_empty() {
            return Err(Error::EmptyGraph.into());
        }
        Ok(Loaded {
            corpus: load_posts(posts)?,
            graph,
            store: load_embedding_store(embeddings, None)?,
        })
    }
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let checkpoint = output(&a.checkpoint, "checkpoint")?;
    let log = a.log.clone().unwrap_or_else(|| {
        let mut name = checkpoint.as_os_str().to_owned();
        name.push(".log.csv");
        PathBuf::from(name)
    });
    let data = a.inputs.load(a.model.social)?;
    let config = a.model.train_config(data.store.dim(), a.k, a.lambda);
    config.validate()?;
    let outcome = train(&data.inputs(), &config)?;
    Checkpoint {
        config,
        params: outcome.params,
    }
    .save(checkpoint)?;
    write_file(&log, &metric_log_csv(&outcome.log))?;
    print!("{}", to_json(&outcome.test));
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<(), Failure> {
    let checkpoint = Checkpoint::load(input(&a.checkpoint, "checkpoint")?)?;
    let model = checkpoint.config.model;
    let data = a.inputs.load(model.social)?;

    let mut kept: Vec<&Post> = Vec::new();
    let mut skipped = BTreeSet::new();
    for post in data.corpus.posts() {
        if model.social && !data.graph.contains(&post.author_id) {
            skipped.insert(post.author_id.as_str());
        } else {
            kept.push(post);
        }
    }
    for user in &skipped {
        eprintln!("skipped posts by user not in graph: {user}");
    }
    if kept.is_empty() {
        return Err(Failure::Empty("no post could be classified".into()));
    }
    let dataset = Dataset::build(kept.iter().map(|p| (*p, None)), &data.inputs(), &model)?;
    let predictions = dataset.predict_all(&checkpoint.params)?;
    let mut text = String::from("post_id,label,p_PO,p_NG,p_NE,p_PD\n");
    for (post, p) in kept.iter().zip(&predictions) {
        let [po, ng, ne, pd] = p.probs;
        writeln!(text, "{},{},{po},{ng},{ne},{pd}", post.id, p.label).expect("write to string");
    }
    emit(a.out.as_deref(), &text)
}

fn track(a: TrackArgs) -> Result<(), Failure> {
    let corpus = load_posts(input(&a.posts, "posts")?)?;
    let rows = daily_label_proportions(corpus.posts(), a.first, a.last)?;
    if rows.iter().all(|r| r.fractions.is_none()) {
        return Err(Failure::Empty("no labelled posts in the date range".into()));
    }
    emit(a.out.as_deref(), &io_text(|out| write_time_series(out, &rows)))
}

fn hesitancy(a: HesitancyArgs) -> Result<(), Failure> {
    let posts = input(&a.posts, "posts")?;
    let period = a.period.period()?;
    let corpus = load_posts(posts)?;
    let mut rows = Vec::new();
    for window in [period.before(a.period.window_days), period.after(a.period.window_days)] {
        for user in eligible_users(&corpus, window, a.period.min_posts)? {
            rows.push(user_hesitancy(&corpus, &user, window)?);
        }
    }
    if rows.is_empty() {
        return Err(Failure::Empty("no user is eligible in either window".into()));
    }
    emit(a.out.as_deref(), &io_text(|out| write_hesitancy(out, &rows)))
}

fn predict_change(a: PredictChangeArgs) -> Result<(), Failure> {
    let (features, labels) = match &a.training {
        Some(_) => read_training_data(input(&a.training, "training")?)?,
        None => {
            let posts = input(&a.posts, "posts")?;
            let graph = input(&a.graph, "graph")?;
            let themes = input(&a.themes, "themes")?;
            let nodes = optional_input(a.nodes.as_deref())?;
            let period = a.period.period()?;
            let settings = ChangeSettings {
                window_days: a.period.window_days,
                min_posts: a.period.min_posts,
                threshold: a.threshold,
                quantile: a.quantile,
                prior_score_feature: a.prior_score,
            };
            let corpus = load_posts(posts)?;
            let graph = load_social_graph(graph, nodes)?;
            let themes = load_theme_annotations(themes)?;
            let data = change_dataset(&corpus, &graph, &themes, period, &settings)?;
            (data.features, data.labels)
        }
    };
    if features.is_empty() {
        return Err(Failure::Empty("no user is eligible before and after the period".into()));
    }
    if let Some(path) = &a.write_training {
        let text = {
            let mut out = Vec::new();
            write_training_data(&mut out, &features, &labels)?;
            String::from_utf8(out).expect("utf-8")
        };
        write_file(path, &text)?;
    }
    if a.sessions == 0 {
        return Err(Failure::Input("sessions must be at least 1".into()));
    }
    let config = GbdtConfig {
        rounds: a.rounds,
        max_depth: a.max_depth,
        shrinkage: a.shrinkage,
    };
    let y: Vec<usize> = labels.iter().map(|c| c.index()).collect();
    let seeds: Vec<u64> = (0..a.sessions).map(|i| a.seed.wrapping_add(i)).collect();
    let report = change_sessions(&features, &y, ChangeClass::ALL.len(), &config, a.test_fraction, &seeds)?;
    print!("{}", to_json(&report));
    Ok(())
}

fn agreement(a: AgreementArgs) -> Result<(), Failure> {
    let set = AnnotationSet::load(input(&a.annotations, "annotations")?)?;
    if set.is_empty() {
        return Err(Failure::Empty("no ratings".into()));
    }
    print!("{}", to_json(&agreement_report(&set)));
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<(), Failure> {
    let data = a.inputs.load(a.model.social)?;
    let base = a.model.train_config(data.store.dim(), a.ks[0], a.lambdas[0]);
    base.validate()?;
    let cells = sweep(&data.inputs(), &base, &a.ks, &a.lambdas)?;
    let mut text = String::from("k,lambda,val_accuracy,best_epoch\n");
    for c in &cells {
        writeln!(text, "{},{},{},{}", c.k, c.lambda, c.val_accuracy, c.best_epoch).expect("write to string");
    }
    if let Some(best) = best_cell(&cells) {
        eprintln!(
            "best: k={} lambda={} val_accuracy={}",
            best.k, best.lambda, best.val_accuracy
        );
    }
    emit(a.out.as_deref(), &text)
}
