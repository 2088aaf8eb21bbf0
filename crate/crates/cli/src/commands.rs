use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use cpkit_core::analysis::{self, DateGuard, Stratum};
use cpkit_core::corpus::{self, Corpus, DuplicateLevel, Rejection};
use cpkit_core::embedder::{export_embeddings, import_embeddings, EmbeddingMatrix, EncoderModel, MaskingPolicy};
use cpkit_core::index::SearchIndex;
use cpkit_core::losses::{LossConfig, Objective};
use cpkit_core::metrics::{self, RunResult};
use cpkit_core::mining::{self, ExternalVerifier, HeuristicVerifier, MiningConfig, Verifier};
use cpkit_core::taskbuilder::{self, TaskKind, TaskManifest};
use cpkit_core::trainer::{self, OptimizerKind, TrainConfig};
use cpkit_core::Error;

use crate::args::*;
use crate::error::{usage, CliError};
use crate::manifest::{file_digest, Recorder};

type CliResult<T> = Result<T, CliError>;

/// Manifest location for a file output.
fn beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run-manifest.json");
    path.with_file_name(name)
}

fn in_dir(dir: &Path) -> PathBuf {
    dir.join("run-manifest.json")
}

fn report_rejections(path: &Path, rejections: &[Rejection]) {
    for r in rejections {
        eprintln!("{}: {r}", path.display());
    }
}

fn first_rejection(rejections: &[Rejection]) -> CliResult<()> {
    match rejections.first() {
        Some(r) => Err(Error::Schema {
            line: r.line,
            reason: r.reason.clone(),
        }
        .into()),
        None => Ok(()),
    }
}

fn load_problems(path: &Path, strict: bool, rec: &mut Recorder) -> CliResult<Corpus> {
    rec.input(path)?;
    let (c, rej) = corpus::ingest_problems(path, strict)?;
    report_rejections(path, &rej);
    Ok(c)
}

fn load_solutions(path: &Path, c: &Corpus, strict: bool, rec: &mut Recorder) -> CliResult<Vec<corpus::Solution>> {
    rec.input(path)?;
    let (s, rej) = corpus::ingest_solutions(path, c)?;
    report_rejections(path, &rej);
    if strict {
        first_rejection(&rej)?;
    }
    Ok(s)
}

fn load_dup_pairs(path: &Path, c: &Corpus, rec: &mut Recorder) -> CliResult<Vec<corpus::DuplicatePair>> {
    rec.input(path)?;
    let (p, rej) = corpus::ingest_dup_pairs(path, c)?;
    report_rejections(path, &rej);
    Ok(p)
}

fn load_simplified(path: &Path, c: &Corpus, rec: &mut Recorder) -> CliResult<Vec<corpus::SimplifiedPair>> {
    rec.input(path)?;
    let (p, rej) = corpus::ingest_simplified_pairs(path, c)?;
    report_rejections(path, &rej);
    Ok(p)
}

fn load_embeddings(path: &Path, rec: &mut Recorder) -> CliResult<EmbeddingMatrix> {
    rec.input(path)?;
    Ok(import_embeddings(path)?)
}

fn parse_date(s: &str) -> CliResult<chrono::NaiveDate> {
    corpus::parse_date(s).ok_or_else(|| CliError::Usage(format!("bad date {s:?} (expected YYYY-MM-DD)")))
}

pub fn ingest(a: &IngestArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    let c = load_problems(&a.problems, a.strict, rec)?;
    let sols = load_solutions(&a.solutions, &c, a.strict, rec)?;
    let dups = match &a.dup_pairs {
        Some(p) => load_dup_pairs(p, &c, rec)?,
        None => Vec::new(),
    };
    let simp = match &a.simplified_pairs {
        Some(p) => load_simplified(p, &c, rec)?,
        None => Vec::new(),
    };
    let stats = corpus::corpus_stats(&c, &sols);
    let json = serde_json::to_string_pretty(&stats).map_err(|e| Error::Format(e.to_string()))?;
    println!("{json}");
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            corpus::write_jsonl(&dir.join("problems.jsonl"), c.problems())?;
            corpus::write_jsonl(&dir.join("solutions.jsonl"), &sols)?;
            if a.dup_pairs.is_some() {
                corpus::write_jsonl(&dir.join("dup_pairs.jsonl"), &dups)?;
            }
            if a.simplified_pairs.is_some() {
                corpus::write_jsonl(&dir.join("simplified_pairs.jsonl"), &simp)?;
            }
            let p = dir.join("stats.json");
            fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
            rec.output_dir(dir)?;
            Ok(in_dir(dir))
        }
        None => Ok(PathBuf::from("cpkit-ingest.run-manifest.json")),
    }
}

pub fn build_tasks(a: &BuildTasksArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    if !(a.cluster_fraction > 0.0 && a.cluster_fraction < 1.0) {
        return usage(format!("--cluster-fraction {} outside (0, 1)", a.cluster_fraction));
    }
    let cutoff = parse_date(&a.cutoff)?;
    let c = load_problems(&a.problems, false, rec)?;
    let mut m = TaskManifest {
        kind: TaskKind::T2c,
        seed: a.seed,
        cutoff: None,
        cluster_fraction: None,
        test_count: None,
        input_digests: BTreeMap::new(),
        queries: 0,
        corpus: 0,
        qrels: 0,
    };
    let task = match a.task {
        TaskArg::T2c | TaskArg::C2c => {
            let Some(sp) = &a.solutions else {
                return usage("--solutions is required for t2c and c2c");
            };
            let sols = load_solutions(sp, &c, false, rec)?;
            let split = taskbuilder::temporal_split(&c, &sols, cutoff);
            m.cutoff = Some(cutoff.to_string());
            if a.task == TaskArg::T2c {
                taskbuilder::build_t2c(&split)?
            } else {
                taskbuilder::build_c2c(&split, a.seed)?
            }
        }
        TaskArg::P2dup => {
            let Some(dp) = &a.dup_pairs else {
                return usage("--dup-pairs is required for p2dup");
            };
            let mut pairs = load_dup_pairs(dp, &c, rec)?;
            if !a.levels.is_empty() {
                let keep: HashSet<DuplicateLevel> = a
                    .levels
                    .iter()
                    .map(|l| l.parse().map_err(CliError::Usage))
                    .collect::<CliResult<_>>()?;
                pairs.retain(|p| keep.contains(&p.level));
            }
            let clusters = taskbuilder::cluster_duplicates(&pairs);
            m.cluster_fraction = Some(a.cluster_fraction);
            taskbuilder::build_p2dup(&clusters, &c, a.cluster_fraction, a.seed, a.distractor_source.as_deref())?
        }
        TaskArg::S2full => {
            let Some(sp) = &a.simplified_pairs else {
                return usage("--simplified-pairs is required for s2full");
            };
            let pairs = load_simplified(sp, &c, rec)?;
            m.test_count = Some(a.test_count);
            taskbuilder::build_s2full(&pairs, &c, a.test_count, a.seed)?
        }
    };
    for w in &task.warnings {
        log::warn!("{w}");
    }
    if !task.is_leak_free() {
        return Err(Error::Invalid("training remainder overlaps the test split".into()).into());
    }
    for path in [Some(&a.problems), a.solutions.as_ref(), a.dup_pairs.as_ref(), a.simplified_pairs.as_ref()]
        .into_iter()
        .flatten()
    {
        m.input_digests.insert(path.display().to_string(), file_digest(path)?);
    }
    m.kind = task.kind;
    m.queries = task.queries.len();
    m.corpus = task.corpus.len();
    m.qrels = task.qrels.relevant_count();
    let dir = taskbuilder::write_task(&task, &a.out, &m)?;
    let remainder = dir.join("train_remainder.jsonl");
    match &task.train_remainder {
        taskbuilder::TrainRemainder::Problems(ids) => {
            let rows: Vec<serde_json::Value> = ids.iter().map(|id| serde_json::json!({ "problem_id": id })).collect();
            corpus::write_jsonl(&remainder, &rows)?
        }
        taskbuilder::TrainRemainder::DupPairs(p) => corpus::write_jsonl(&remainder, p)?,
        taskbuilder::TrainRemainder::SimplifiedPairs(p) => corpus::write_jsonl(&remainder, p)?,
    }
    println!("{}: {} queries, {} corpus, {} qrels", task.kind, m.queries, m.corpus, m.qrels);
    rec.output_dir(&dir)?;
    Ok(in_dir(&dir))
}

fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let objective = match a.loss {
        LossArg::Infonce => Objective::InfoNce,
        LossArg::Multipos => Objective::MultiPos,
        LossArg::GroupInfonce => Objective::GroupInfoNce,
        LossArg::Triplet => Objective::Triplet,
    };
    if !(0.0..=1.0).contains(&a.mask_prob) {
        return usage(format!("--mask-prob {} outside [0, 1]", a.mask_prob));
    }
    let cfg = TrainConfig {
        loss: LossConfig {
            objective,
            tau: a.tau,
            margin: a.margin,
            variance_penalty: !a.no_variance_penalty,
            cross_query_negatives: !a.no_cross_query_negatives,
            ..LossConfig::default()
        },
        batch_size: a.batch,
        group_size: a.m,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        seed: a.seed,
        masking: if a.mask_prob > 0.0 {
            MaskingPolicy::uniform(a.mask_prob, a.seed)
        } else {
            MaskingPolicy::disabled()
        },
        optimizer: match a.optimizer {
            OptimizerArg::Adamw => OptimizerKind::AdamW,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        per_task_cap: a.per_task_cap,
        vocab_dim: a.vocab_dim,
        embed_dim: a.embed_dim,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    let cfg = train_config(a)?;
    let mut c = load_problems(&a.problems, false, rec)?;
    if let Some(d) = &a.before {
        let cutoff = parse_date(d)?;
        c = Corpus::new(c.problems().iter().filter(|p| p.timestamp < cutoff).cloned().collect())?;
    }
    let (model, report) = match a.stage {
        1 => {
            if cfg.loss.objective == Objective::Triplet {
                return usage("stage 1 needs a contrastive loss (infonce, multipos, group-infonce)");
            }
            let Some(sp) = &a.solutions else {
                return usage("--solutions is required for stage 1");
            };
            let sols = load_solutions(sp, &c, false, rec)?;
            trainer::train_stage1(&c, &sols, &cfg)?
        }
        _ => {
            let Some(init) = &a.init else {
                return usage("--init is required for stage 2");
            };
            if a.triplets.is_empty() {
                return usage("--triplets is required for stage 2");
            }
            rec.input(init)?;
            let model = EncoderModel::load(init)?;
            let dups = match &a.dup_pairs {
                Some(p) => load_dup_pairs(p, &c, rec)?,
                None => Vec::new(),
            };
            let simp = match &a.simplified_pairs {
                Some(p) => load_simplified(p, &c, rec)?,
                None => Vec::new(),
            };
            let mut mined = Vec::new();
            for t in &a.triplets {
                rec.input(t)?;
                mined.extend(mining::read_triplets(t)?);
            }
            let tasks = trainer::stage2_tasks(&c, &dups, &simp, &mined)?;
            trainer::train_stage2(model, &tasks, &cfg)?
        }
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    model.save(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut n = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        n.push(".log.csv");
        a.out.with_file_name(n)
    });
    report.write_csv(&log_path)?;
    for e in &report.epochs {
        match e.val_loss {
            Some(v) => eprintln!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train_loss, v),
            None => eprintln!("epoch {:>3}  train {:.6}", e.epoch, e.train_loss),
        }
    }
    eprintln!("selected epoch {}", report.selected_epoch);
    rec.output(&a.out)?;
    rec.output(&log_path)?;
    Ok(beside(&a.out))
}

pub fn embed(a: &EmbedArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    if let Some(path) = &a.import {
        let m = load_embeddings(path, rec)?;
        println!("{}: {} rows, dim {}", path.display(), m.len(), m.dim());
        return Ok(beside(path));
    }
    let (Some(model_path), Some(input), Some(out)) = (&a.model, &a.input, &a.out) else {
        return usage("embed needs --model, --input and --out (or --import)");
    };
    rec.input(model_path)?;
    rec.input(input)?;
    let model = EncoderModel::load(model_path)?;
    let records = taskbuilder::read_text_records(input)?;
    let m = model.encode_all(&records)?;
    export_embeddings(&m, out)?;
    println!("{}: {} rows, dim {}", out.display(), m.len(), m.dim());
    rec.output(out)?;
    Ok(beside(out))
}

fn select_rows(m: &EmbeddingMatrix, ids: &[String], what: &str) -> CliResult<EmbeddingMatrix> {
    let mut vectors = Vec::with_capacity(ids.len() * m.dim());
    for id in ids {
        let row = m
            .row_by_id(id)
            .ok_or_else(|| Error::Invalid(format!("no {what} embedding for {id:?}")))?;
        vectors.extend_from_slice(row);
    }
    Ok(EmbeddingMatrix::new(ids.to_vec(), m.dim(), vectors)?)
}

fn metric_name(m: MetricArg) -> &'static str {
    match m {
        MetricArg::Ndcg => "ndcg",
        MetricArg::Recall => "recall",
        MetricArg::Mrr => "mrr",
    }
}

pub fn eval(a: &EvalArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    if !a.scores.is_empty() {
        let avg = metrics::task_average(&a.scores).map_err(|e| CliError::Usage(e.to_string()))?;
        println!("Avg {}", metrics::format_score(avg));
        return Ok(PathBuf::from("cpkit-eval.run-manifest.json"));
    }
    if a.task.is_empty() {
        return usage("eval needs --task (with embeddings) or --scores");
    }
    if a.embeddings_query.len() != a.task.len() || a.embeddings_corpus.len() != a.task.len() {
        return usage("give one --embeddings-query and one --embeddings-corpus per --task");
    }
    if a.k == 0 {
        return usage("--k must be at least 1");
    }
    let mut scores: BTreeMap<TaskKind, f64> = BTreeMap::new();
    for (i, dir) in a.task.iter().enumerate() {
        let task = taskbuilder::read_task(dir)?;
        for f in ["queries.jsonl", "corpus.jsonl", "qrels.txt"] {
            rec.input(&dir.join(f))?;
        }
        let q_all = load_embeddings(&a.embeddings_query[i], rec)?;
        let c_all = load_embeddings(&a.embeddings_corpus[i], rec)?;
        let q_ids: Vec<String> = task.queries.iter().map(|(id, _)| id.clone()).collect();
        let c_ids: Vec<String> = task.corpus.iter().map(|(id, _)| id.clone()).collect();
        let queries = select_rows(&q_all, &q_ids, "query")?;
        let index = SearchIndex::build(&select_rows(&c_all, &c_ids, "corpus")?)?;
        let hits = index.batch_top_k(&queries, a.k, None)?;
        let run: RunResult = hits.into_iter().collect();
        let value = match a.metric {
            MetricArg::Ndcg => metrics::ndcg_at_k(&run, &task.qrels, a.k)?,
            MetricArg::Recall => metrics::recall_at_k(&run, &task.qrels, a.k)?,
            MetricArg::Mrr => metrics::mrr(&run, &task.qrels, a.k)?,
        };
        let name = task
            .kind
            .map(|k| k.to_string())
            .unwrap_or_else(|| dir.display().to_string());
        println!("{name} {}@{} {}", metric_name(a.metric), a.k, metrics::format_score(value * 100.0));
        if let Some(run_path) = &a.run {
            let path = if a.task.len() == 1 {
                run_path.clone()
            } else {
                let mut n = run_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                n.push(format!(".{name}"));
                run_path.with_file_name(n)
            };
            fs::write(&path, metrics::run_to_text(&run)).map_err(|e| Error::io(&path, e))?;
            rec.output(&path)?;
        }
        if let Some(k) = task.kind {
            scores.insert(k, value * 100.0);
        }
    }
    if scores.len() == TaskKind::ALL.len() {
        let all: Vec<f64> = TaskKind::ALL.iter().map(|k| scores[k]).collect();
        println!("Avg {}", metrics::format_score(metrics::task_average(&all)?));
    }
    Ok(match &a.run {
        Some(r) => beside(r),
        None => PathBuf::from("cpkit-eval.run-manifest.json"),
    })
}

/// Reads `(anchor, positive)` pairs from duplicate-pair, simplified-pair,
/// or `{anchor, positive}` JSON lines.
fn read_pairs(path: &Path) -> CliResult<Vec<(String, String)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |reason: String| Error::Schema { line: i + 1, reason };
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let get = |k: &str| v.get(k).and_then(|x| x.as_str()).map(str::to_owned);
        let pair = [("anchor", "positive"), ("problem_a", "problem_b"), ("simplified_id", "full_id")]
            .iter()
            .find_map(|(a, b)| Some((get(a)?, get(b)?)))
            .ok_or_else(|| schema("expected anchor/positive, problem_a/problem_b, or simplified_id/full_id".into()))?;
        out.push(pair);
    }
    Ok(out)
}

pub fn mine(a: &MineArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    rec.seed(a.seed);
    rec.input(&a.pairs)?;
    let pairs = read_pairs(&a.pairs)?;
    let pool = load_embeddings(&a.pool, rec)?;
    let anchors = match &a.anchors {
        Some(p) => load_embeddings(p, rec)?,
        None => pool.clone(),
    };
    let index = SearchIndex::build(&pool)?;
    let mut known: HashMap<String, HashSet<String>> = HashMap::new();
    for (x, y) in &pairs {
        known.entry(x.clone()).or_default().insert(y.clone());
        known.entry(y.clone()).or_default().insert(x.clone());
    }
    let texts: Option<HashMap<String, String>> = match &a.texts {
        Some(p) => {
            rec.input(p)?;
            Some(taskbuilder::read_text_records(p)?.into_iter().collect())
        }
        None => None,
    };
    let verifier: Box<dyn Verifier> = match a.verifier {
        VerifierArg::Heuristic => {
            let mut v = HeuristicVerifier::new(a.threshold).map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(d) = &a.duplicates {
                rec.input(d)?;
                v = v.with_duplicates(read_pairs(d)?);
            }
            Box::new(v)
        }
        VerifierArg::External => {
            let Some(cmd) = &a.endpoint else {
                return usage("--endpoint is required for the external verifier");
            };
            if texts.is_none() {
                return usage("--texts is required for the external verifier");
            }
            Box::new(ExternalVerifier::spawn(cmd)?)
        }
    };
    let out = mining::mine_negatives(
        &index,
        &anchors,
        &pairs,
        &known,
        MiningConfig { k: a.k, seed: a.seed },
        verifier.as_ref(),
        texts.as_ref(),
    )?;
    mining::write_triplets(&a.out, &out.records)?;
    println!(
        "{} pairs: {} accepted, {} rejected candidates, {} skipped",
        pairs.len(),
        out.accepted().count(),
        out.records.len() - out.accepted().count(),
        out.skipped.len()
    );
    rec.output(&a.out)?;
    Ok(beside(&a.out))
}

fn parse_edges(spec: &str) -> CliResult<Option<Vec<f64>>> {
    if spec == "auto" {
        return Ok(None);
    }
    let edges = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("bad bin edge {s:?}: {e}"))))
        .collect::<CliResult<Vec<f64>>>()?;
    analysis::validate_edges(&edges).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(Some(edges))
}

pub fn analyze(a: &AnalyzeArgs, rec: &mut Recorder) -> CliResult<PathBuf> {
    let edges = parse_edges(&a.bins)?;
    rec.input(&a.pass_records)?;
    let records = analysis::read_pass_records(&a.pass_records)?;
    let eval = load_embeddings(&a.eval_emb, rec)?;
    let hist = SearchIndex::build(&load_embeddings(&a.hist_emb, rec)?)?;
    let guard = if a.date_guard {
        let hp = a.hist_problems.as_ref().expect("clap enforces --hist-problems");
        let hc = load_problems(hp, false, rec)?;
        let mut eval_dates = HashMap::new();
        for r in &records {
            eval_dates
                .entry(r.problem_id.clone())
                .and_modify(|d: &mut chrono::NaiveDate| *d = (*d).min(r.release_date))
                .or_insert(r.release_date);
        }
        Some(DateGuard {
            eval_dates,
            hist_dates: hc.problems().iter().map(|p| (p.id.clone(), p.timestamp)).collect(),
        })
    } else {
        None
    };
    let sims = analysis::compute_max_similarity(&eval, &hist, guard.as_ref())?;
    let stratum = match a.stratum {
        StratumArg::Difficulty => Stratum::Difficulty,
        StratumArg::Model => Stratum::Model,
    };
    let report = analysis::build_report(&records, sims, edges.as_deref(), stratum)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    report.write(&a.out)?;
    let models: BTreeSet<&str> = records.iter().map(|r| r.model.as_str()).collect();
    println!(
        "{} problems, {} bins, {} regression lines, {} models",
        report.points.len(),
        report.bins.rows.len(),
        report.regression.len(),
        models.len()
    );
    rec.output_dir(&a.out)?;
    Ok(in_dir(&a.out))
}
