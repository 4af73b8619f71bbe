//! `epiwatch`: offline pipeline stages and the HTTP service.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use epiwatch_core::classifier::{Classifier, HashingVectorizer, LabelSource, LabeledMessage, Relevance};
use epiwatch_core::drift::{detect_feature_change, novelty_score, select_indices, train_virtual_classifier, DriftParams, DriftReport, SelectionStrategy};
use epiwatch_core::evaluation::{benchmark, match_alerts, parse_ground_truth};
use epiwatch_core::ingest::{parse_messages, Annotator, Message};
use epiwatch_core::labeling::LabelTask;
use epiwatch_core::linear::SvmHyperparams;
use epiwatch_core::ranking::{
    cross_validate, extract_rank_features, fit_lda, majority_judgments, rank_scored, read_judgments, tfidf_scores, topic_tokens, train_ranker,
    write_ranked, CandidateIndex, ExpandedContext, FeatureSet, JudgedCandidate, LdaParams, RankMode, RankerParams, Stopwords, UserContext,
};
use epiwatch_core::series::{build_series, DateRange, DiseaseContext, SeriesOptions, SeriesRecord, TimeSeries};
use epiwatch_core::simulator::{generate_stream, preset, read_label_key};
use epiwatch_core::surveillance::{run_surveillance, Alert, Algorithm, EarsParams, EarsVariant, FarringtonParams};
use epiwatch_service::{RankerWeights, Service, ServiceConfig};
use serde::Serialize;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "epiwatch", version, about = "Outbreak signals from social-media streams")]
struct Cli {
    /// Machine-readable reports on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a synthetic stream with ground truth and true series.
    Simulate(SimulateArgs),
    /// Parse, classify and store a messages file.
    Ingest(IngestArgs),
    /// Train a relevance classifier from a label key.
    Train(TrainArgs),
    /// Classify every stored message with a model artifact.
    Classify(ClassifyArgs),
    /// Test a week for feature change and queue messages for labeling.
    Drift(DriftArgs),
    /// Build a daily series for one disease and country.
    Aggregate(AggregateArgs),
    /// Run an outbreak detector over a series.
    Surveil(SurveilArgs),
    /// Score alerts against ground-truth events.
    Evaluate(EvaluateArgs),
    /// Fit a topic model and print the top terms.
    Lda(LdaArgs),
    /// Train a context ranker from judgments and rank the candidates.
    Rank(RankArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Lines per journal record.
    #[arg(long, default_value_t = 1000)]
    batch: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Messages file (JSON lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// `message_id,relevance` key.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also import the labels and publish the model into this store.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Predictions CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label key to score the predictions against.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Make this model the store's live model.
    #[arg(long)]
    publish: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    None,
    Random,
    Novelty,
}

impl From<StrategyArg> for SelectionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::None => SelectionStrategy::None,
            StrategyArg::Random => SelectionStrategy::Random,
            StrategyArg::Novelty => SelectionStrategy::Novelty,
        }
    }
}

#[derive(Debug, Args)]
struct DriftArgs {
    #[arg(long)]
    store: PathBuf,
    /// Fraction of the week sent for labeling.
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "novelty")]
    strategy: StrategyArg,
    /// Week to test, counted from the first stored message; default is the last complete week.
    #[arg(long)]
    week: Option<u32>,
    #[arg(long, default_value_t = 3)]
    min_workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    #[arg(long)]
    disease: String,
    #[arg(long)]
    country: String,
    #[arg(long, conflicts_with = "input")]
    store: Option<PathBuf>,
    /// Messages file; counts keyword-filtered messages, or those the key marks relevant.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    labels: Option<PathBuf>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    /// Count identical normalized texts once per series.
    #[arg(long)]
    dedup: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgoArg {
    C1,
    C2,
    C3,
    Farrington,
}

#[derive(Debug, Args)]
struct SurveilArgs {
    #[arg(long, value_enum)]
    algo: AlgoArg,
    /// EARS threshold in standard deviations.
    #[arg(long)]
    k: Option<f64>,
    /// Farrington half-window in weeks.
    #[arg(long)]
    w: Option<usize>,
    /// Series CSV (`date,count`).
    #[arg(long, conflicts_with = "store", required_unless_present = "store")]
    series: Option<PathBuf>,
    /// Defaults to the part of the series file name before the last `_`.
    #[arg(long)]
    disease: Option<String>,
    #[arg(long)]
    country: Option<String>,
    /// Run over every series in the store and journal the new alerts.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Alerts as JSON lines; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth CSV.
    #[arg(long)]
    truth: PathBuf,
    /// Alerts file (JSON lines).
    #[arg(long, conflicts_with = "series", required_unless_present = "series")]
    alerts: Option<PathBuf>,
    /// Directory of series CSVs to benchmark with the standard grid.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Days before an event's start that still count as detection.
    #[arg(long, default_value_t = 10)]
    margin: i64,
}

#[derive(Debug, Args)]
struct LdaArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    McL,
    Mc,
    Tfidf,
}

impl From<ModeArg> for RankMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => RankMode::Learned(FeatureSet::Full),
            ModeArg::McL => RankMode::Learned(FeatureSet::McL),
            ModeArg::Mc => RankMode::Learned(FeatureSet::Mc),
            ModeArg::Tfidf => RankMode::TfIdf,
        }
    }
}

#[derive(Debug, Args)]
struct RankArgs {
    /// Expanded context (JSON), as saved by the service.
    #[arg(long)]
    context: PathBuf,
    /// `message_id,context_id,0|1` rows.
    #[arg(long)]
    judgments: PathBuf,
    /// Messages file (JSON lines).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Cross-validation splits (80/20) to report; 0 skips it.
    #[arg(long, default_value_t = 10)]
    cv: usize,
    /// Ranked candidates CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ranker weights for `serve --ranker`.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Bearer token required on write routes.
    #[arg(long, env = "EPIWATCH_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Ranker weights written by `rank --model-out`.
    #[arg(long)]
    ranker: Option<PathBuf>,
    /// Disable background retraining and surveillance.
    #[arg(long)]
    no_jobs: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.cmd {
        Cmd::Simulate(a) => simulate(a, json),
        Cmd::Ingest(a) => ingest(a, json),
        Cmd::Train(a) => train(a, json),
        Cmd::Classify(a) => classify(a, json),
        Cmd::Drift(a) => drift(a, json),
        Cmd::Aggregate(a) => aggregate(a, json),
        Cmd::Surveil(a) => surveil(a, json),
        Cmd::Evaluate(a) => evaluate(a, json),
        Cmd::Lda(a) => lda(a, json),
        Cmd::Rank(a) => rank(a, json),
        Cmd::Serve(a) => serve(a),
    }
}

/// Prints `value` as JSON, or `text` otherwise.
fn report<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn open_reader(p: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
}

fn read_key(p: &Path) -> Result<BTreeMap<String, Relevance>> {
    Ok(read_label_key(open_reader(p)?)?)
}

fn read_messages(p: &Path) -> Result<Vec<Message>> {
    let out = parse_messages(open_reader(p)?)?;
    if out.messages.is_empty() {
        bail!("{}: no valid messages ({} malformed lines)", p.display(), out.stats.malformed);
    }
    Ok(out.messages)
}

fn offline_service(store: &Path) -> Result<Service> {
    let cfg = ServiceConfig {
        background_jobs: false,
        ..ServiceConfig::new(store)
    };
    Service::open(cfg).with_context(|| format!("opening store {}", store.display()))
}

fn series_file_name(ctx: &DiseaseContext) -> String {
    format!("{}_{}.csv", ctx.disease, ctx.country)
}

fn simulate(a: SimulateArgs, json: bool) -> Result<()> {
    let cfg = preset(&a.preset)?.with_seed(a.seed);
    let out = generate_stream(&cfg)?;
    out.write_to_dir(&a.out)?;
    let dir = a.out.join("series");
    fs::create_dir_all(&dir)?;
    for (ctx, s) in &out.counts {
        let mut w = BufWriter::new(File::create(dir.join(series_file_name(ctx)))?);
        s.write_csv(&mut w)?;
        w.flush()?;
    }
    let relevant = out.key.values().filter(|r| **r == Relevance::Relevant).count();
    let summary = json!({
        "preset": a.preset,
        "seed": a.seed,
        "messages": out.messages.len(),
        "relevant": relevant,
        "contexts": out.counts.keys().map(|c| c.to_string()).collect::<Vec<_>>(),
        "events": out.events.len(),
        "out": a.out,
    });
    report(json, &summary, || {
        format!(
            "{}: {} messages ({} relevant), {} contexts, {} events -> {}\n",
            a.preset,
            out.messages.len(),
            relevant,
            out.counts.len(),
            out.events.len(),
            a.out.display()
        )
    })
}

fn ingest(a: IngestArgs, json: bool) -> Result<()> {
    if a.batch == 0 {
        bail!("--batch must be at least 1");
    }
    let svc = offline_service(&a.store)?;
    let lines: Vec<String> = open_reader(&a.input)?.lines().collect::<io::Result<_>>()?;
    let mut total = epiwatch_service::IngestReport::default();
    for (i, chunk) in lines.chunks(a.batch).enumerate() {
        match svc.ingest(&chunk.join("\n")) {
            Ok(r) => {
                total.accepted += r.accepted;
                total.duplicates += r.duplicates;
                total.rejected += r.rejected;
                total.errors.extend(r.errors.into_iter().map(|mut e| {
                    e.line += i * a.batch;
                    e
                }));
            }
            Err(epiwatch_service::ServiceError::BadRequest(_)) => {
                let bad = chunk.iter().filter(|l| !l.trim().is_empty()).count();
                total.rejected += bad;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if total.accepted + total.duplicates == 0 {
        bail!("{}: no valid messages ({} rejected)", a.input.display(), total.rejected);
    }
    for e in total.errors.iter().take(5) {
        eprintln!("warning: line {}: {}", e.line, e.reason);
    }
    let model = svc.health().model_version;
    report(json, &total, || {
        format!(
            "accepted {}, duplicates {}, rejected {} (model: {})\n",
            total.accepted,
            total.duplicates,
            total.rejected,
            model.as_deref().unwrap_or("none, keyword filter only")
        )
    })
}

fn labeled_from_key(messages: Vec<Message>, key: &BTreeMap<String, Relevance>) -> Vec<LabeledMessage> {
    messages
        .into_iter()
        .filter_map(|m| key.get(&m.id).map(|&r| LabeledMessage::new(m, r, LabelSource::Expert)))
        .collect()
}

fn train(a: TrainArgs, json: bool) -> Result<()> {
    let key = read_key(&a.labels)?;
    let data = labeled_from_key(read_messages(&a.input)?, &key);
    if data.is_empty() {
        bail!("no message in {} has a label in {}", a.input.display(), a.labels.display());
    }
    let h = SvmHyperparams::default().with_epochs(a.epochs).with_seed(a.seed);
    let c = Classifier::<f64>::train(HashingVectorizer::default(), &data, &h)?;
    let acc = c.evaluate(&data)?;
    let mut w = output(Some(&a.out))?;
    c.write_artifact(&mut w)?;
    w.flush()?;
    let mut published = false;
    if let Some(store) = &a.store {
        let svc = offline_service(store)?;
        svc.import_labels(data.clone())?;
        let generation = svc.state().labels_generation;
        svc.publish_model(c.clone(), generation)?;
        published = true;
    }
    let summary = json!({"version": c.version, "examples": data.len(), "training_accuracy": acc.accuracy, "published": published});
    report(json, &summary, || {
        format!(
            "model {} trained on {} labels (training accuracy {:.4}){}\n",
            c.version,
            data.len(),
            acc.accuracy,
            if published { ", published" } else { "" }
        )
    })
}

fn classify(a: ClassifyArgs, json: bool) -> Result<()> {
    let c = Classifier::<f64>::read_artifact(open_reader(&a.model)?)?;
    let svc = offline_service(&a.store)?;
    let key = a.labels.as_deref().map(read_key).transpose()?;
    let (mut relevant, mut pairs) = (0usize, Vec::new());
    {
        let st = svc.state();
        let mut w = output(a.out.as_deref())?;
        writeln!(w, "message_id,relevance,margin")?;
        for m in st.messages.values() {
            let (r, margin) = c.classify(&m.message);
            relevant += usize::from(r == Relevance::Relevant);
            if let Some(t) = key.as_ref().and_then(|k| k.get(&m.message.id)) {
                pairs.push((r, *t));
            }
            writeln!(w, "{},{},{margin}", m.message.id, r.as_str())?;
        }
        w.flush()?;
    }
    if a.publish {
        let generation = svc.state().labels_generation;
        svc.publish_model(c.clone(), generation)?;
    }
    let acc = key.map(|_| epiwatch_core::classifier::AccuracyReport::from_pairs(pairs));
    let summary = json!({"version": c.version, "messages": svc.state().messages.len(), "relevant": relevant, "accuracy": acc, "published": a.publish});
    // predictions may be on stdout; the summary goes to stderr then
    let text = format!(
        "model {}: {} of {} messages relevant{}\n",
        c.version,
        relevant,
        svc.state().messages.len(),
        acc.map(|r| format!(", accuracy {:.4}", r.accuracy)).unwrap_or_default()
    );
    if a.out.is_none() {
        eprint!("{text}");
        return Ok(());
    }
    report(json, &summary, || text)
}

fn drift(a: DriftArgs, json: bool) -> Result<()> {
    let params = DriftParams {
        q: a.q,
        alpha: a.alpha,
        ..DriftParams::default()
    };
    params.validate()?;
    let svc = offline_service(&a.store)?;
    let model = svc.model();
    let vectorizer = model.as_ref().map_or_else(HashingVectorizer::default, |c| c.vectorizer);
    let (old_msgs, new_msgs, week) = {
        let st = svc.state();
        let span = st.date_span().context("store has no messages")?;
        let week_of = |d: NaiveDate| ((d - span.start).num_days() / 7) as u32;
        let last = week_of(span.end);
        // default to the last complete week; a trailing partial week is tiny
        let complete = if (span.end - span.start).num_days() % 7 == 6 { last } else { last.saturating_sub(1) };
        let week = a.week.unwrap_or(complete);
        if week > last {
            bail!("week {week} is past the last stored week {last}");
        }
        let mut new: Vec<Message> = Vec::new();
        let mut before: Vec<Message> = Vec::new();
        for m in st.messages.values() {
            match week_of(m.message.date()).cmp(&week) {
                std::cmp::Ordering::Equal => new.push(m.message.clone()),
                std::cmp::Ordering::Less => before.push(m.message.clone()),
                std::cmp::Ordering::Greater => {}
            }
        }
        // compare against what the model learned from before this week, when
        // there is such a label set
        let labeled: Vec<Message> = st
            .labels
            .iter()
            .filter(|l| week_of(l.message.date()) < week)
            .map(|l| l.message.clone())
            .collect();
        let old = if labeled.len() >= params.cv_folds { labeled } else { before };
        if new.len() < params.cv_folds {
            bail!("week {week} has {} messages; the drift test needs at least {}", new.len(), params.cv_folds);
        }
        (old, new, week)
    };
    let old: Vec<_> = old_msgs.iter().map(|m| vectorizer.vectorize_text::<f64>(&m.text)).collect();
    let new: Vec<_> = new_msgs.iter().map(|m| vectorizer.vectorize_text::<f64>(&m.text)).collect();
    let verdict = detect_feature_change(&old, &new, &params, a.seed)?;
    let strategy: SelectionStrategy = a.strategy.into();
    let scores: Vec<f64> = if strategy == SelectionStrategy::Novelty {
        let vc = train_virtual_classifier(&old, &new, a.seed)?;
        new.iter().map(|x| novelty_score(&vc, x)).collect::<epiwatch_core::Result<_>>()?
    } else {
        Vec::new()
    };
    let picked = select_indices(&new_msgs, &scores, params.q, strategy, a.seed)?;
    let tasks: Vec<LabelTask> = picked.iter().map(|&i| LabelTask::new(new_msgs[i].clone(), a.min_workers)).collect();
    let temporary: Vec<LabeledMessage> = match &model {
        Some(c) => picked
            .iter()
            .map(|&i| {
                let m = &new_msgs[i];
                let source = LabelSource::Temporary { model_version: c.version.clone() };
                LabeledMessage::new(m.clone(), c.classify(m).0, source)
            })
            .collect(),
        None => Vec::new(),
    };
    let rep = DriftReport::new(week, &verdict, tasks.len());
    if !tasks.is_empty() {
        svc.create_tasks(tasks, temporary)?;
    }
    svc.record_drift(rep.clone())?;
    report(json, &rep, || {
        format!(
            "week {}: virtual classifier accuracy {:.3}, p = {:.3e}, {}; {} messages queued for labeling\n",
            rep.week,
            rep.vc_accuracy,
            rep.p_value,
            if rep.changed { "feature change" } else { "no change" },
            rep.n_selected
        )
    })
}

fn aggregate(a: AggregateArgs, json: bool) -> Result<()> {
    let ctx = DiseaseContext::new(&a.disease, &a.country)?;
    let s = if let Some(store) = &a.store {
        let svc = offline_service(store)?;
        let st = svc.state();
        let span = st.date_span().context("store has no messages")?;
        let range = DateRange::new(a.from.unwrap_or(span.start), a.to.unwrap_or(span.end))?;
        if a.dedup {
            bail!("--dedup applies to --in only");
        }
        st.series(&ctx, Some(range)).expect("range given")
    } else if let Some(input) = &a.input {
        let messages = read_messages(input)?;
        let key = a.labels.as_deref().map(read_key).transpose()?;
        let annot = Annotator::builtin();
        let records: Vec<SeriesRecord> = messages
            .iter()
            .map(|m| annot.annotate(m))
            .filter(|am| match &key {
                Some(k) => k.get(&am.message.id) == Some(&Relevance::Relevant),
                None => am.filter.passed(),
            })
            .filter_map(|am| SeriesRecord::from_annotated(&am))
            .collect();
        let first = messages.iter().map(Message::date).min().expect("nonempty");
        let last = messages.iter().map(Message::date).max().expect("nonempty");
        let range = DateRange::new(a.from.unwrap_or(first), a.to.unwrap_or(last))?;
        build_series(&records, &ctx, range, SeriesOptions { dedup_text: a.dedup })
    } else {
        bail!("give --store or --in");
    };
    let mut w = output(a.out.as_deref())?;
    s.write_csv(&mut w)?;
    w.flush()?;
    if a.out.is_some() {
        let summary = json!({"context": ctx.to_string(), "start": s.start, "days": s.len(), "total": s.total()});
        report(json, &summary, || format!("{ctx}: {} days from {}, {} messages\n", s.len(), s.start, s.total()))?;
    }
    Ok(())
}

fn algorithm(a: &SurveilArgs) -> Result<Algorithm> {
    let algo = match a.algo {
        AlgoArg::Farrington => {
            if a.k.is_some() {
                bail!("--k applies to the EARS detectors; Farrington takes --w");
            }
            Algorithm::Farrington(FarringtonParams::new(a.w.unwrap_or(3)))
        }
        ears => {
            if a.w.is_some() {
                bail!("--w applies to Farrington; EARS detectors take --k");
            }
            let variant = match ears {
                AlgoArg::C1 => EarsVariant::C1,
                AlgoArg::C2 => EarsVariant::C2,
                _ => EarsVariant::C3,
            };
            let mut p = EarsParams::new(variant);
            if let Some(k) = a.k {
                p.k = k;
            }
            Algorithm::Ears(p)
        }
    };
    Ok(algo)
}

fn context_from_file_name(p: &Path) -> Option<(String, String)> {
    let stem = p.file_stem()?.to_str()?;
    let (d, c) = stem.rsplit_once('_')?;
    Some((d.to_string(), c.to_string()))
}

fn surveil(a: SurveilArgs, json: bool) -> Result<()> {
    let algo = algorithm(&a)?;
    let mut alerts: Vec<Alert> = if let Some(store) = &a.store {
        let cfg = ServiceConfig {
            background_jobs: false,
            algorithms: vec![algo],
            ..ServiceConfig::new(store)
        };
        let svc = Service::open(cfg)?;
        let before: std::collections::BTreeSet<String> = svc.state().alerts.keys().cloned().collect();
        svc.run_surveillance()?;
        let st = svc.state();
        st.alerts
            .iter()
            .filter(|(id, a)| !before.contains(*id) && a.algorithm == algo.id())
            .map(|(_, a)| a.clone())
            .collect()
    } else {
        let path = a.series.as_ref().expect("clap requires --series without --store");
        let guessed = context_from_file_name(path);
        let disease = a.disease.clone().or_else(|| guessed.as_ref().map(|g| g.0.clone()));
        let country = a.country.clone().or_else(|| guessed.as_ref().map(|g| g.1.clone()));
        let (Some(disease), Some(country)) = (disease, country) else {
            bail!("cannot tell the context from {}; pass --disease and --country", path.display());
        };
        let s = TimeSeries::read_csv(DiseaseContext::new(disease, country)?, open_reader(path)?)?;
        run_surveillance(&s, &algo)?
    };
    alerts.sort_by(|x, y| (&x.context, x.date).cmp(&(&y.context, y.date)));
    let mut w = output(a.out.as_deref())?;
    for al in &alerts {
        writeln!(w, "{}", al.to_line())?;
    }
    w.flush()?;
    if a.out.is_some() || a.store.is_some() {
        let summary = json!({"algorithm": algo.id(), "params_digest": algo.params_digest(), "alerts": alerts.len()});
        report(json, &summary, || format!("{}: {} alerts\n", algo.id(), alerts.len()))?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, json: bool) -> Result<()> {
    let events = parse_ground_truth(open_reader(&a.truth)?)?;
    if let Some(dir) = &a.series {
        let mut series = Vec::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        for p in paths {
            let (d, c) = context_from_file_name(&p).with_context(|| format!("cannot tell the context from {}", p.display()))?;
            series.push(TimeSeries::read_csv(DiseaseContext::new(d, c)?, open_reader(&p)?)?);
        }
        let table = benchmark(&series, &events, &Algorithm::standard_grid(), a.margin);
        for w in &table.warnings {
            eprintln!("warning: {w}");
        }
        return report(json, &table, || table.render());
    }
    let path = a.alerts.as_ref().expect("clap requires --alerts without --series");
    let mut groups: BTreeMap<(DiseaseContext, String), Vec<Alert>> = BTreeMap::new();
    for (n, line) in open_reader(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let al: Alert = serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), n + 1))?;
        groups.entry((al.context.clone(), al.algorithm.clone())).or_default().push(al);
    }
    let rows: Vec<_> = groups
        .iter()
        .map(|((ctx, algo), alerts)| {
            let evs: Vec<_> = events.iter().filter(|e| &e.context == ctx).cloned().collect();
            (ctx.to_string(), algo.clone(), match_alerts(alerts, &evs, a.margin))
        })
        .collect();
    let value: Vec<_> = rows.iter().map(|(c, g, r)| json!({"context": c, "algorithm": g, "report": r})).collect();
    report(json, &value, || {
        let mut s = format!("{:<16} {:<18} {:>5} {:>5} {:>9} {:>7} {:>9}\n", "context", "algorithm", "tp", "fp", "precision", "recall", "f_measure");
        for (c, g, r) in &rows {
            s.push_str(&format!(
                "{c:<16} {g:<18} {:>5} {:>5} {:>9.3} {:>7.3} {:>9.3}\n",
                r.tp, r.fp, r.precision, r.recall, r.f_measure
            ));
        }
        s
    })
}

fn lda(a: LdaArgs, json: bool) -> Result<()> {
    let messages = read_messages(&a.input)?;
    let stop = Stopwords::builtin();
    let docs: Vec<Vec<String>> = messages.iter().map(|m| topic_tokens(&m.text, &stop)).collect();
    let p = LdaParams {
        topics: a.k,
        alpha: a.alpha,
        beta: a.beta,
        iterations: a.iters,
        seed: a.seed,
    };
    let tm = fit_lda(&docs, &p)?;
    let topics: Vec<Vec<(String, f64)>> = (0..tm.topics())
        .map(|k| tm.top_terms(k, a.top).into_iter().map(|(w, p)| (w.to_string(), p)).collect())
        .collect();
    report(json, &json!({"topics": topics, "vocab": tm.vocab_size(), "docs": tm.docs()}), || {
        let mut s = String::new();
        for (k, terms) in topics.iter().enumerate() {
            let words: Vec<&str> = terms.iter().map(|(w, _)| w.as_str()).collect();
            s.push_str(&format!("topic {k:>2}: {}\n", words.join(" ")));
        }
        s
    })
}

fn read_context(p: &Path) -> Result<ExpandedContext> {
    let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let v: serde_json::Value = serde_json::from_str(&raw).with_context(|| format!("parsing {}", p.display()))?;
    // accept the service's {id, context} wrapper, a bare expansion, or a bare base context
    let v = v.get("context").cloned().unwrap_or(v);
    if let Ok(e) = serde_json::from_value::<ExpandedContext>(v.clone()) {
        return Ok(e);
    }
    let base: UserContext = serde_json::from_value(v).with_context(|| format!("{} is not a context", p.display()))?;
    Ok(ExpandedContext::unexpanded(base))
}

fn rank(a: RankArgs, json: bool) -> Result<()> {
    let context = read_context(&a.context)?;
    let messages = read_messages(&a.input)?;
    let rows = read_judgments(open_reader(&a.judgments)?)?;
    let votes = majority_judgments(&rows);
    let annot = Annotator::builtin();
    let index = CandidateIndex::build(&messages, &annot);
    let docs = index.retrieve(&context, context.base.range());
    if docs.is_empty() {
        bail!("no message matches context {:?}", context.base.id);
    }
    let tfidf = tfidf_scores(&docs, &context, &annot);
    let features: Vec<_> = docs.iter().map(|d| extract_rank_features(d, &context)).collect();
    let judged: Vec<JudgedCandidate> = docs
        .iter()
        .zip(&features)
        .zip(&tfidf)
        .filter_map(|((d, f), t)| {
            votes.get(&(context.base.id.clone(), d.message.id.clone())).map(|&relevant| JudgedCandidate {
                id: d.message.id.clone(),
                features: *f,
                relevant,
                tfidf: *t,
            })
        })
        .collect();
    let mode: RankMode = a.mode.into();
    let params = RankerParams { seed: a.seed, ..RankerParams::default() };
    let (scored, weights): (Vec<(String, f64)>, Option<RankerWeights>) = match mode {
        RankMode::TfIdf => (docs.iter().zip(&tfidf).map(|(d, t)| (d.message.id.clone(), *t)).collect(), None),
        RankMode::Learned(set) => {
            if !judged.iter().any(|c| c.relevant) || judged.iter().all(|c| c.relevant) {
                bail!("judgments for {:?} need both relevant and irrelevant candidates", context.base.id);
            }
            let pairs: Vec<_> = judged.iter().map(|c| (c.features, c.relevant)).collect();
            let model = train_ranker::<f64>(&pairs, set, &params)?;
            let w = RankerWeights { features: set, model };
            (docs.iter().zip(&features).map(|(d, f)| (d.message.id.clone(), w.score(f))).collect(), Some(w))
        }
    };
    let ranked = rank_scored(scored);
    let mut out = output(a.out.as_deref())?;
    write_ranked(&mut out, &ranked)?;
    out.flush()?;
    if let (Some(p), Some(w)) = (&a.model_out, &weights) {
        fs::write(p, serde_json::to_string_pretty(w)?)?;
    }
    let cv = (a.cv > 0 && judged.len() >= 5).then(|| cross_validate(&judged, mode, a.n, a.cv, &params)).transpose()?;
    let summary = json!({"context": context.base.id, "candidates": docs.len(), "judged": judged.len(), "cv": cv});
    let text = format!(
        "{}: {} candidates, {} judged{}\n",
        context.base.id,
        docs.len(),
        judged.len(),
        cv.as_ref().map(|r| format!(", cross-validated P@{} {:.3}", r.n, r.mean)).unwrap_or_default()
    );
    if a.out.is_none() {
        eprint!("{text}");
        return Ok(());
    }
    report(json, &summary, || text)
}

fn serve(a: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let ranker = match &a.ranker {
        Some(p) => Some(serde_json::from_str::<RankerWeights>(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    let cfg = ServiceConfig {
        token: a.token,
        ranker,
        background_jobs: !a.no_jobs,
        ..ServiceConfig::new(&a.store)
    };
    let svc = Service::open(cfg).with_context(|| format!("opening store {}", a.store.display()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(epiwatch_service::serve(svc, SocketAddr::new(a.host, a.port)))?;
    Ok(())
}
