//! `fairaudit`: run each stage of an individual-fairness audit, or all of them.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 on data errors.
//! `FAIRAUDIT_THREADS` caps the worker pool.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairaudit_core::audit::{compare_sources, render_report, run_audit, AuditConfig, AuditReport, ReportFormat, Scope};
use fairaudit_core::classifiers::{
    random_search, train_family, Family, KnnClassifier, LabeledSet, TrainConfig, TrainedModel, DEFAULT_K,
};
use fairaudit_core::dataset::{
    apply_rater_labels, binarize_labels, generate_synthetic_corpus, load_corpus, save_corpus, simulate_raters,
    source_name_for_stage, split_corpus, write_latents, CorpusFormat, DecisionVector, Profile, RaterConfig,
    SplitAssignment, OUTCOME_STAGE,
};
use fairaudit_core::embed::{embed_corpus, load_matrix, write_matrix_binary, EmbeddingSource, DEFAULT_DIM};
use fairaudit_core::fairness::{classification_metrics, consistency, Averaging};
use fairaudit_core::simindex::{default_candidate_pool, find_neighbors, Metric, NeighborList, NeighborMode};
use fairaudit_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "fairaudit",
    version,
    about = "Individual-fairness audits of human and model decisions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with latent sidecar and simulated rater labels.
    Synth(SynthArgs),
    /// Embed every profile field and write the matrix file.
    Embed(EmbedArgs),
    /// Write a seeded train/validation/test split.
    Split(SplitArgs),
    /// Train one classifier on the training split.
    Train(TrainArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Consistency score of one decision vector.
    Consistency(ConsistencyArgs),
    /// Precision, recall, F1 and accuracy of predictions against ground truth.
    Metrics(MetricsArgs),
    /// Run the whole pipeline and write a run directory.
    Audit(AuditArgs),
    /// Render or compare a saved report.
    Report(ReportArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EmbedderKind {
    Hash,
    Ingest,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Exact,
    Batched,
    Reranked,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FamilyArg {
    Knn,
    Gbstumps,
    Birnn,
}

#[derive(Args, Debug)]
struct EmbedderOpts {
    /// Embedding source.
    #[arg(long, value_enum, default_value_t = EmbedderKind::Hash)]
    embedder: EmbedderKind,
    /// Precomputed matrix file, required with `--embedder ingest`.
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// Dimension per field.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    d: usize,
    /// Token cap per field for the hashing embedder.
    #[arg(long)]
    max_tokens: Option<usize>,
}

impl EmbedderOpts {
    fn source(&self, seed: u64) -> Result<EmbeddingSource, CliError> {
        match self.embedder {
            EmbedderKind::Hash => Ok(EmbeddingSource::Hash {
                seed,
                max_tokens: self.max_tokens,
            }),
            EmbedderKind::Ingest => {
                let path = self
                    .vectors
                    .clone()
                    .ok_or_else(|| CliError::Usage("--embedder ingest needs --vectors <file>".into()))?;
                Ok(EmbeddingSource::Ingest { path })
            }
        }
    }
}

#[derive(Args, Debug)]
struct NeighborOpts {
    /// Neighbors per profile.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = Metric::Cosine)]
    metric: Metric,
    /// Neighbor search strategy.
    #[arg(long, value_enum, default_value_t = ModeArg::Reranked)]
    mode: ModeArg,
    /// Query rows per block for `--mode batched`.
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Stage-one pool for `--mode reranked` [default: max(4k, 50)].
    #[arg(long)]
    candidate_pool: Option<usize>,
    /// Per-field weights for `--mode reranked`, comma separated [default: equal].
    #[arg(long, value_delimiter = ',')]
    field_weights: Vec<f64>,
    /// Count each profile among its own neighbors.
    #[arg(long)]
    include_self: bool,
}

impl NeighborOpts {
    fn mode(&self) -> NeighborMode {
        match self.mode {
            ModeArg::Exact => NeighborMode::Exact,
            ModeArg::Batched => NeighborMode::Batched {
                batch_size: self.batch_size,
            },
            ModeArg::Reranked => NeighborMode::Reranked {
                candidate_pool: Some(self.candidate_pool.unwrap_or_else(|| default_candidate_pool(self.k))),
                field_weights: self.field_weights.clone(),
            },
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of profiles.
    #[arg(long, default_value_t = 870)]
    n: usize,
    /// Vocabulary size of the token generator.
    #[arg(long, default_value_t = 200)]
    vocab: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus file; `.csv` writes CSV, anything else JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Latent sidecar [default: <out>.latents.jsonl].
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Rater judgment noise.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Threshold shift per latent group, as GROUP=SHIFT; repeatable.
    #[arg(long = "bias", value_parser = parse_bias)]
    bias: Vec<(u8, f64)>,
    /// SL,AR,OF thresholds.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.5, 0.5, 0.5])]
    thresholds: Vec<f64>,
    /// Weights over the four source-field qualities [default: rater sees overall quality].
    #[arg(long, value_delimiter = ',')]
    quality_weights: Vec<f64>,
    /// Seed for rater noise [default: --seed].
    #[arg(long)]
    rater_seed: Option<u64>,
    /// Leave stage labels out of the corpus.
    #[arg(long)]
    no_raters: bool,
}

fn parse_bias(s: &str) -> Result<(u8, f64), String> {
    let (g, v) = s.split_once('=').ok_or("expected GROUP=SHIFT")?;
    let g = g.trim().parse::<u8>().map_err(|e| format!("group: {e}"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("shift: {e}"))?;
    Ok((g, v))
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    embedder: EmbedderOpts,
    /// Hashing seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// L2-normalize each field block.
    #[arg(long)]
    normalize: bool,
    /// Output matrix file (binary FAEM format).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train,validation,test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    /// Stage whose labels are balanced across splits.
    #[arg(long)]
    stratify_on: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Matrix file from `embed`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Split file from `split`.
    #[arg(long)]
    splits: PathBuf,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Label the model learns.
    #[arg(long, default_value = OUTCOME_STAGE)]
    target: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Randomized search trials; 0 trains the base configuration once.
    #[arg(long)]
    trials: Option<usize>,
    /// Training configuration as JSON, overriding the family defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Neighbors per vote for the k-NN family.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = Metric::Cosine)]
    metric: Metric,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Matrix file; must contain the reference rows of a k-NN model.
    #[arg(long)]
    embeddings: PathBuf,
    /// Decision vector JSON [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConsistencyArgs {
    /// Decision vector JSON.
    #[arg(long, required_unless_present = "corpus")]
    decisions: Option<PathBuf>,
    /// Take decisions from a corpus stage instead.
    #[arg(long, requires = "stage")]
    corpus: Option<PathBuf>,
    /// Stage label to use with `--corpus` (SL, AR, OF or Type).
    #[arg(long)]
    stage: Option<String>,
    /// Neighbor list JSON.
    #[arg(long, required_unless_present = "embeddings")]
    neighbors: Option<PathBuf>,
    /// Build neighbors from this matrix file instead.
    #[arg(long, conflicts_with = "neighbors")]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    search: NeighborOpts,
    /// Also write the neighbor list built from `--embeddings`.
    #[arg(long)]
    save_neighbors: Option<PathBuf>,
    /// Print the full result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Predicted decision vector JSON.
    #[arg(long)]
    predicted: PathBuf,
    /// Ground-truth decision vector JSON.
    #[arg(long, required_unless_present = "corpus")]
    truth: Option<PathBuf>,
    /// Take ground truth from a corpus label instead.
    #[arg(long, conflicts_with = "truth")]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = OUTCOME_STAGE)]
    stage: String,
    #[arg(long, default_value_t = Averaging::Weighted)]
    averaging: Averaging,
    /// Restrict to the ids of one split, given with `--splits`.
    #[arg(long, requires = "splits")]
    split: Option<String>,
    #[arg(long)]
    splits: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    embedder: EmbedderOpts,
    /// Seed for hashing, split and training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Full audit configuration as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    search: NeighborOpts,
    #[arg(long)]
    averaging: Option<Averaging>,
    /// Randomized search trials per learned family; 0 disables search.
    #[arg(long)]
    trials: Option<usize>,
    /// Profiles scored by the classification metrics.
    #[arg(long)]
    metric_scope: Option<Scope>,
    /// Profiles scored by consistency.
    #[arg(long)]
    consistency_scope: Option<Scope>,
    /// Stage whose labels are balanced across splits.
    #[arg(long)]
    stratify_on: Option<String>,
    /// Skip per-field L2 normalization.
    #[arg(long)]
    no_normalize: bool,
    /// Decision sources to report, comma separated [default: all six].
    #[arg(long, value_delimiter = ',')]
    sources: Vec<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// `report.json` from an audit run.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Compare two sources instead of rendering: `--compare A B`.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    compare: Vec<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(Error::Json(e))
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("FAIRAUDIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("FAIRAUDIT_THREADS must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err("FAIRAUDIT_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Embed(a) => embed(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Consistency(a) => consistency_cmd(a),
        Command::Metrics(a) => metrics(a),
        Command::Audit(a) => audit(a),
        Command::Report(a) => report(a),
    }
}

fn read_corpus(path: &Path) -> CliResult<Vec<Profile>> {
    Ok(load_corpus(path, CorpusFormat::from_path(path))?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| {
        CliError::Data(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

/// Writes data to stdout; a closed pipe ends output quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
        std::process::exit(0);
    }
}

fn ratios(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

fn synth(a: SynthArgs) -> CliResult {
    let mut corpus = generate_synthetic_corpus(a.n, a.vocab, a.seed)?;
    if !a.no_raters {
        let cfg = RaterConfig {
            quality_weights: a.quality_weights.clone(),
            noise_sigma: a.noise_sigma,
            bias_shift: a.bias.iter().copied().collect::<BTreeMap<_, _>>(),
            stage_thresholds: ratios(&a.thresholds),
            seed: a.rater_seed.unwrap_or(a.seed),
        };
        let decisions = simulate_raters(&corpus.profiles, &corpus.latents, &cfg)?;
        apply_rater_labels(&mut corpus.profiles, &decisions)?;
    }
    save_corpus(&a.out, &corpus.profiles, CorpusFormat::from_path(&a.out))?;
    let latents = a.latents.unwrap_or_else(|| {
        let mut name = a.out.file_stem().unwrap_or_default().to_os_string();
        name.push(".latents.jsonl");
        a.out.with_file_name(name)
    });
    write_latents(&latents, &corpus.latents)?;
    eprintln!(
        "wrote {} profiles to {} and latents to {}",
        corpus.profiles.len(),
        a.out.display(),
        latents.display()
    );
    Ok(())
}

fn embed(a: EmbedArgs) -> CliResult {
    let profiles = read_corpus(&a.corpus)?;
    let source = a.embedder.source(a.seed)?;
    let mut m = embed_corpus(&profiles, &source, a.embedder.d)?;
    if a.normalize {
        m.normalize_blocks();
    }
    write_matrix_binary(&a.out, &m)?;
    eprintln!("wrote {} x {} matrix to {}", m.n_rows(), m.dim(), a.out.display());
    Ok(())
}

fn split(a: SplitArgs) -> CliResult {
    let profiles = read_corpus(&a.corpus)?;
    let s = split_corpus(&profiles, ratios(&a.ratios), a.seed, a.stratify_on.as_deref())?;
    s.save(&a.out)?;
    let [tr, va, te] = s.sizes();
    eprintln!("split {} profiles into {tr}/{va}/{te}", profiles.len());
    Ok(())
}

fn family_of(f: FamilyArg) -> Option<Family> {
    match f {
        FamilyArg::Knn => None,
        FamilyArg::Gbstumps => Some(Family::Stumps),
        FamilyArg::Birnn => Some(Family::BiRnn),
    }
}

fn train(a: TrainArgs) -> CliResult {
    let profiles = read_corpus(&a.corpus)?;
    let ids: Vec<String> = profiles.iter().map(|p| p.id.clone()).collect();
    let x = load_matrix(&a.embeddings)?.select_rows(&ids)?;
    let split: SplitAssignment = SplitAssignment::load(&a.splits)?;
    let truth = binarize_labels(&profiles, &a.target)?;
    let train_x = x.select_rows(&split.train)?;
    let train_y = truth.select(&split.train)?;

    let model = match family_of(a.family) {
        None => TrainedModel::Knn(KnnClassifier::new(a.k, a.metric, train_x, &train_y)?.snapshot()),
        Some(family) => {
            let mut cfg = match &a.config {
                Some(path) => read_json::<TrainConfig>(path)?,
                None => TrainConfig::for_family(family),
            };
            cfg.seed = a.seed;
            if let Some(t) = a.trials {
                if t > 0 {
                    cfg.search_trials = t;
                }
            }
            let val_x = x.select_rows(&split.validation)?;
            let val_y = truth.select(&split.validation)?;
            let tr = LabeledSet::new(&train_x, &train_y)?;
            let va = LabeledSet::new(&val_x, &val_y)?;
            if a.trials == Some(0) || cfg.search_space.is_empty() {
                let (model, acc, _) = train_family(tr, va, family, &cfg)?;
                eprintln!("validation accuracy {acc:.4}");
                model
            } else {
                let found = random_search(tr, va, family, &cfg)?;
                eprintln!(
                    "best of {} trials: #{} with validation accuracy {:.4}",
                    found.trials.len(),
                    found.best_trial,
                    found.best_validation_accuracy
                );
                let log = a.out.with_extension("trials.json");
                write_text(&log, &(serde_json::to_string_pretty(&found.trials)? + "\n"))?;
                found.model
            }
        }
    };
    model.save(&a.out)?;
    eprintln!("wrote {} to {}", model.source_name(), a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> CliResult {
    let model = TrainedModel::load(&a.model)?;
    let x = load_matrix(&a.embeddings)?;
    let decisions = model.predict(&x)?;
    let text = serde_json::to_string_pretty(&decisions)? + "\n";
    match &a.out {
        Some(path) => write_text(path, &text),
        None => {
            emit(&text);
            Ok(())
        }
    }
}

fn load_decisions(path: &Path) -> CliResult<DecisionVector> {
    let dv: DecisionVector = read_json(path)?;
    dv.validate()?;
    Ok(dv)
}

fn consistency_cmd(a: ConsistencyArgs) -> CliResult {
    let decisions = match (&a.decisions, &a.corpus, &a.stage) {
        (Some(path), _, _) => load_decisions(path)?,
        (None, Some(corpus), Some(stage)) => {
            let mut dv = binarize_labels(&read_corpus(corpus)?, stage)?;
            dv.source = source_name_for_stage(stage);
            dv
        }
        _ => return Err(CliError::Usage("give --decisions or --corpus with --stage".into())),
    };
    let neighbors = match (&a.neighbors, &a.embeddings) {
        (Some(path), _) => NeighborList::load(path)?,
        (None, Some(path)) => {
            let x = load_matrix(path)?.select_rows(&decisions.index_order)?;
            let s = &a.search;
            let nl = find_neighbors(&x, s.k, s.metric, !s.include_self, &s.mode())?;
            if let Some(out) = &a.save_neighbors {
                nl.save(out)?;
            }
            nl
        }
        _ => return Err(CliError::Usage("give --neighbors or --embeddings".into())),
    };
    let decisions = if decisions.index_order == neighbors.index_order {
        decisions
    } else {
        decisions.select(&neighbors.index_order)?
    };
    let result = consistency(&decisions, &neighbors)?;
    if a.json {
        emit(&(serde_json::to_string_pretty(&result)? + "\n"));
    } else {
        emit(&format!("{:.4}\n", result.score));
    }
    Ok(())
}

fn metrics(a: MetricsArgs) -> CliResult {
    let predicted = load_decisions(&a.predicted)?;
    let truth = match (&a.truth, &a.corpus) {
        (Some(path), _) => load_decisions(path)?,
        (None, Some(corpus)) => binarize_labels(&read_corpus(corpus)?, &a.stage)?,
        _ => return Err(CliError::Usage("give --truth or --corpus".into())),
    };
    let ids: Vec<String> = match (&a.split, &a.splits) {
        (Some(which), Some(path)) => {
            let s = SplitAssignment::load(path)?;
            match which.parse::<Scope>()? {
                Scope::Train => s.train,
                Scope::Validation => s.validation,
                Scope::Test => s.test,
                Scope::All => predicted.index_order.clone(),
            }
        }
        _ => predicted.index_order.clone(),
    };
    let m = classification_metrics(&predicted.select(&ids)?, &truth.select(&ids)?, a.averaging)?;
    emit(&(serde_json::to_string_pretty(&m)? + "\n"));
    Ok(())
}

fn audit(a: AuditArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(path) => read_json::<AuditConfig>(path)?,
        None => AuditConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.dim_per_field = a.embedder.d;
    cfg.k = a.search.k;
    cfg.metric = a.search.metric;
    cfg.exclude_self = !a.search.include_self;
    cfg.neighbor_mode = a.search.mode();
    if let Some(avg) = a.averaging {
        cfg.averaging = avg;
    }
    match a.trials {
        Some(0) => cfg.search = false,
        Some(t) => {
            cfg.search = true;
            cfg.stumps.search_trials = t;
            cfg.birnn.search_trials = t;
        }
        None => {}
    }
    if let Some(s) = a.metric_scope {
        cfg.metric_scope = s;
    }
    if let Some(s) = a.consistency_scope {
        cfg.consistency_scope = s;
    }
    if a.stratify_on.is_some() {
        cfg.stratify_on = a.stratify_on.clone();
    }
    if a.no_normalize {
        cfg.normalize_blocks = false;
    }
    if !a.sources.is_empty() {
        cfg.sources = a.sources.clone();
    }
    let source = a.embedder.source(a.seed)?;
    let run = run_audit(&a.corpus, &source, &cfg)?;
    run.write_dir(&a.out)?;
    emit(&render_report(&run.report, ReportFormat::Markdown)?);
    eprintln!("wrote run directory {}", a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> CliResult {
    let report: AuditReport = read_json(&a.report)?;
    if let [x, y] = a.compare.as_slice() {
        let cmp = compare_sources(&report, x, y)?;
        emit(&(serde_json::to_string_pretty(&cmp)? + "\n"));
    } else {
        emit(&render_report(&report, a.format)?);
    }
    Ok(())
}
