use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cpkit", version, about = "Contrastive retrieval pipeline for competitive-programming corpora")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat `key = value` file supplying defaults for flags not given.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate problem and solution files and print corpus statistics.
    Ingest(IngestArgs),
    /// Build one retrieval task (queries, corpus, qrels).
    BuildTasks(BuildTasksArgs),
    /// Train an encoder (stage 1) or fine-tune one on triplets (stage 2).
    Train(TrainArgs),
    /// Encode texts into an embedding file, or validate one with --import.
    Embed(EmbedArgs),
    /// Score embeddings against task qrels.
    Eval(EvalArgs),
    /// Mine verified hard negatives for positive pairs.
    Mine(MineArgs),
    /// Similarity audit of evaluation problems against a historical corpus.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub problems: PathBuf,
    #[arg(long)]
    pub solutions: PathBuf,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub dup_pairs: Option<PathBuf>,
    #[arg(long)]
    pub simplified_pairs: Option<PathBuf>,
    /// Write validated copies and stats.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    T2c,
    C2c,
    P2dup,
    S2full,
}

#[derive(Debug, Args)]
pub struct BuildTasksArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub problems: PathBuf,
    /// Required for t2c and c2c.
    #[arg(long)]
    pub solutions: Option<PathBuf>,
    /// Required for p2dup.
    #[arg(long)]
    pub dup_pairs: Option<PathBuf>,
    /// Required for s2full.
    #[arg(long)]
    pub simplified_pairs: Option<PathBuf>,
    #[arg(long, default_value = "2023-01-01")]
    pub cutoff: String,
    #[arg(long, default_value_t = 0.30)]
    pub cluster_fraction: f64,
    #[arg(long, default_value_t = 10_000)]
    pub test_count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict p2dup distractors to this source platform.
    #[arg(long)]
    pub distractor_source: Option<String>,
    /// Keep only these duplicate levels (comma-separated: exact,near,method).
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Infonce,
    Multipos,
    GroupInfonce,
    Triplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adamw,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long)]
    pub problems: PathBuf,
    /// Stage 1 positives.
    #[arg(long)]
    pub solutions: Option<PathBuf>,
    /// Stage 2: model to fine-tune.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Stage 2: duplicate pairs the mined triplets belong to.
    #[arg(long)]
    pub dup_pairs: Option<PathBuf>,
    /// Stage 2: simplified pairs the mined triplets belong to.
    #[arg(long)]
    pub simplified_pairs: Option<PathBuf>,
    /// Stage 2: mined triplet files (repeatable).
    #[arg(long)]
    pub triplets: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "group-infonce")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability of masking each optional statement section (0 disables).
    #[arg(long, default_value_t = 0.5)]
    pub mask_prob: f64,
    #[arg(long, value_enum, default_value = "adamw")]
    pub optimizer: OptimizerArg,
    #[arg(long)]
    pub no_variance_penalty: bool,
    /// Use the other query's first positive, not the query itself, as negative.
    #[arg(long)]
    pub no_cross_query_negatives: bool,
    #[arg(long, default_value_t = 1000)]
    pub per_task_cap: usize,
    #[arg(long, default_value_t = 1 << 18)]
    pub vocab_dim: u32,
    #[arg(long, default_value_t = 128)]
    pub embed_dim: u32,
    /// Only train on problems dated strictly before this date.
    #[arg(long)]
    pub before: Option<String>,
    /// Per-epoch CSV log (default: <out>.log.csv).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, required_unless_present = "import")]
    pub model: Option<PathBuf>,
    /// JSON lines with `id` and one of `text`, `statement`, `code`.
    #[arg(long, required_unless_present = "import")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "import")]
    pub out: Option<PathBuf>,
    /// Validate an existing embedding file and print its shape.
    #[arg(long = "import", conflicts_with_all = ["model", "input", "out"])]
    pub import: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Ndcg,
    Recall,
    Mrr,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Task directories (repeatable; paired in order with the embedding flags).
    #[arg(long, requires = "embeddings_query")]
    pub task: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings_query: Vec<PathBuf>,
    #[arg(long)]
    pub embeddings_corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "ndcg")]
    pub metric: MetricArg,
    /// Average four precomputed task scores instead (comma-separated).
    #[arg(long, value_delimiter = ',', conflicts_with = "task")]
    pub scores: Vec<f64>,
    /// Write the ranked run (`qid docid rank score`) here; one file per task
    /// is written as `<run>.<task>` when several tasks are given.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifierArg {
    Heuristic,
    External,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Positive pairs: JSON lines of duplicate pairs, simplified pairs, or `{anchor, positive}`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Candidate pool embeddings.
    #[arg(long)]
    pub pool: PathBuf,
    /// Anchor embeddings (default: the pool).
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "heuristic")]
    pub verifier: VerifierArg,
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
    /// Known duplicate pairs the heuristic verifier always rejects.
    #[arg(long)]
    pub duplicates: Option<PathBuf>,
    /// External verifier command (line protocol on stdin/stdout).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Texts for the external verifier (JSON lines with `id` and text).
    #[arg(long)]
    pub texts: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StratumArg {
    Difficulty,
    Model,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV: problem_id,model,pass_rate,difficulty,release_date
    #[arg(long)]
    pub pass_records: PathBuf,
    #[arg(long)]
    pub eval_emb: PathBuf,
    #[arg(long)]
    pub hist_emb: PathBuf,
    /// Comma-separated bin edges, or `auto` for 0.1-wide bins over the data.
    #[arg(long, default_value = "auto")]
    pub bins: String,
    /// Require every historical problem to predate every evaluation problem.
    #[arg(long, requires = "hist_problems")]
    pub date_guard: bool,
    /// Historical problems (JSON lines) supplying dates for the guard.
    #[arg(long)]
    pub hist_problems: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "difficulty")]
    pub stratum: StratumArg,
    #[arg(long)]
    pub out: PathBuf,
}
