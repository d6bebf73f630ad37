//! One function per subcommand; each is a thin composition of library
//! calls plus file plumbing.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use valprof_core::analytics::{
    accuracy_report, band_from_csv, band_to_csv, calibration_report, quantile_band, top_sentences,
    Aspect, ProgressCurve, QuantileBand, RewardMode,
};
use valprof_core::corpus::{
    build_vocab, generate_synthetic, parse_corpus_reader, serialize_corpus, tokenize_dialog,
    tokenize_turns, write_oracle_table, DialogRecord, SyntheticConfig, Utterance, Vocab,
};
use valprof_core::encoder::{
    load_model, save_model, ModelFile, OptimizerKind, Predictor, ReferenceEncoder, TaskSchema,
    TrainConfig,
};
use valprof_core::integrate::{
    rerank as rerank_candidates, training_weights, Candidate, ScoreOrientation,
};
use valprof_core::value::{
    calibrate_scales, estimate_prior, trace, CollapseMode, Prior, ScaleCalibration, ValueOptions,
    ValueTrace,
};

/// Flags shared by every subcommand.
pub struct Globals {
    pub seed: u64,
    pub model: Option<PathBuf>,
    pub band: Option<PathBuf>,
    pub max_len: usize,
    pub patience: usize,
}

impl Globals {
    fn load_model(&self) -> Result<ModelFile> {
        let path = self
            .model
            .as_ref()
            .context("this command needs --model/-m")?;
        load_model(path).with_context(|| format!("loading model {}", path.display()))
    }

    fn load_band(&self) -> Result<Option<QuantileBand>> {
        match &self.band {
            None => Ok(None),
            Some(path) => {
                let csv = std::fs::read_to_string(path)
                    .with_context(|| format!("reading band {}", path.display()))?;
                Ok(Some(band_from_csv(&csv)?))
            }
        }
    }
}

/// Vocab, prior and calibration out of a model bundle, or a clear error.
fn profiler_parts(model: &ModelFile) -> Result<(&Vocab, &Prior, &ScaleCalibration)> {
    let vocab = model
        .vocab
        .as_ref()
        .context("model file carries no vocabulary section; retrain with `valprof train`")?;
    let prior = model
        .prior
        .as_ref()
        .context("model file carries no prior section; retrain with `valprof train`")?;
    let calib = model
        .calibration
        .as_ref()
        .context("model file carries no calibration section; retrain with `valprof train`")?;
    if vocab.hash() != model.tokenizer_hash {
        bail!("model tokenizer hash does not match its vocabulary section");
    }
    Ok((vocab, prior, calib))
}

fn read_corpus(path: &Path) -> Result<Vec<DialogRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(parse_corpus_reader(BufReader::new(file))?)
}

fn out_writer(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

#[derive(Args)]
pub struct GenCorpusArgs {
    /// Number of dialogs.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Number of issue classes.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Number of action labels.
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Label noise probability in [0, 0.5).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Filler vocabulary size.
    #[arg(long, default_value_t = 50)]
    filler_vocab: usize,
    /// Earliest revealing turn index.
    #[arg(long, default_value_t = 1)]
    reveal_min: usize,
    /// Latest revealing turn index.
    #[arg(long, default_value_t = 4)]
    reveal_max: usize,
    /// Fewest turns after the revealing turn.
    #[arg(long, default_value_t = 1)]
    tail_min: usize,
    /// Most turns after the revealing turn.
    #[arg(long, default_value_t = 3)]
    tail_max: usize,
    /// Attach cost labels.
    #[arg(long, default_value_t = false)]
    with_cost: bool,
    /// Corpus JSONL output path.
    #[arg(short, long)]
    out: PathBuf,
    /// Oracle table JSONL output path.
    #[arg(long)]
    oracle: Option<PathBuf>,
}

pub fn gen_corpus(globals: &Globals, args: GenCorpusArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_dialogs: args.n,
        n_issues: args.k,
        n_actions: args.m,
        reveal_min: args.reveal_min,
        reveal_max: args.reveal_max,
        tail_min: args.tail_min,
        tail_max: args.tail_max,
        noise: args.noise,
        filler_vocab: args.filler_vocab,
        with_cost: args.with_cost,
        seed: globals.seed,
    };
    let (corpus, oracle) = generate_synthetic(&cfg)?;
    let mut w = out_writer(Some(&args.out))?;
    w.write_all(serialize_corpus(&corpus).as_bytes())?;
    w.flush()?;
    if let Some(oracle_path) = &args.oracle {
        let mut w = out_writer(Some(oracle_path))?;
        write_oracle_table(&mut w, &oracle)?;
        w.flush()?;
    }
    eprintln!("wrote {} dialogs to {}", corpus.len(), args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training corpus JSONL.
    #[arg(short = 'i', long)]
    input: PathBuf,
    /// Model output path.
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerChoice::Adam)]
    optimizer: OptimizerChoice,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// State decay factor in (0, 1].
    #[arg(long, default_value_t = 0.2)]
    decay: f64,
    /// Minimum token frequency for the vocabulary.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Dialogs sampled for scale calibration.
    #[arg(long, default_value_t = 500)]
    calib_dialogs: usize,
    #[arg(long, value_enum, default_value_t = CalibModeChoice::WeightedAverage)]
    calib_mode: CalibModeChoice,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum CalibModeChoice {
    WeightedAverage,
    QuantileSum,
}

pub fn train(globals: &Globals, args: TrainArgs) -> Result<()> {
    let corpus = read_corpus(&args.input)?;
    let schema = TaskSchema::from_corpus(&corpus)?;
    let vocab = build_vocab(&corpus, args.min_count);
    eprintln!(
        "training on {} dialogs, {} issues, {} actions, vocab {}",
        corpus.len(),
        schema.n_issues(),
        schema.n_actions(),
        vocab.len()
    );

    let mut encoder =
        ReferenceEncoder::new(schema.clone(), vocab.len(), args.dim, args.decay, globals.seed);
    let cfg = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        max_len: globals.max_len,
        seed: globals.seed,
        optimizer: match args.optimizer {
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
            OptimizerChoice::Adam => OptimizerKind::Adam,
        },
    };
    let log = valprof_core::encoder::train(&mut encoder, &corpus, &vocab, &cfg)?;
    for (e, loss) in log.epoch_mean_loss.iter().enumerate() {
        eprintln!("epoch {:>3}: mean token loss {loss:.6}", e + 1);
    }

    let prior = estimate_prior(&corpus, &schema)?;
    let mut samples = Vec::new();
    let identity = ScaleCalibration::identity();
    for record in corpus.iter().take(args.calib_dialogs.max(1)) {
        let tokens = tokenize_dialog(record, &vocab, globals.max_len);
        let frames = encoder.forward(&tokens.token_ids)?;
        for frame in &frames {
            let v = valprof_core::value::value_frame(frame, &prior, &identity, ValueOptions::default())?;
            samples.push((v.issue, v.action, v.norecon));
        }
    }
    if samples.len() < 100 {
        eprintln!(
            "warning: only {} calibration samples; scale weights may be unstable",
            samples.len()
        );
    }
    let mode = match args.calib_mode {
        CalibModeChoice::WeightedAverage => CollapseMode::WeightedAverage,
        CalibModeChoice::QuantileSum => CollapseMode::QuantileSum,
    };
    let calibration = calibrate_scales(&samples, mode)?;
    eprintln!("calibrated alpha={:.6} beta={:.6}", calibration.alpha, calibration.beta);

    let model = ModelFile {
        tokenizer_hash: vocab.hash(),
        encoder,
        vocab: Some(vocab),
        prior: Some(prior),
        calibration: Some(calibration),
    };
    save_model(&model, &args.out)?;
    eprintln!("wrote model to {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Labeled test corpus JSONL.
    #[arg(short = 'i', long)]
    input: PathBuf,
    /// Token positions for accuracy-by-position, comma separated.
    #[arg(long, default_value = "0,511", value_delimiter = ',')]
    positions: Vec<usize>,
    /// Reliability bins.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Metrics JSON output (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn eval(globals: &Globals, args: EvalArgs) -> Result<()> {
    let model = globals.load_model()?;
    let (vocab, _, _) = profiler_parts(&model)?;
    let corpus = read_corpus(&args.input)?;
    let acc = accuracy_report(&model.encoder, &corpus, vocab, &args.positions, globals.max_len)?;
    let cal = calibration_report(&model.encoder, &corpus, vocab, args.bins, globals.max_len)?;

    // Task-keyed export shape.
    let actions_json: serde_json::Value = serde_json::json!({
        "per_action": acc.actions.iter().map(|a| {
            (a.name.clone(), serde_json::json!({
                "precision": a.precision,
                "recall": a.recall,
                "support": a.support,
            }))
        }).collect::<serde_json::Map<String, serde_json::Value>>(),
        "ece": cal.actions.as_ref().map(|c| c.ece),
        "reliability": cal.actions.as_ref().map(|c| &c.bins),
    });
    let report = serde_json::json!({
        "n_dialogs": acc.n_dialogs,
        "n_bins": cal.n_bins,
        "issue": {
            "accuracy_by_position": acc.issue_accuracy,
            "ece": cal.issue.ece,
            "reliability": cal.issue.bins,
        },
        "no_recontact": {
            "accuracy_by_position": acc.no_recontact_accuracy,
            "ece": cal.no_recontact.ece,
            "reliability": cal.no_recontact.bins,
        },
        "actions": actions_json,
    });
    let mut w = out_writer(args.out.as_ref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct ProfileArgs {
    /// Corpus JSONL to profile.
    #[arg(short = 'i', long)]
    input: PathBuf,
    /// Trace JSONL output, one line per input dialog.
    #[arg(short, long)]
    out: PathBuf,
}

pub fn profile(globals: &Globals, args: ProfileArgs) -> Result<()> {
    let model = globals.load_model()?;
    let (vocab, prior, calib) = profiler_parts(&model)?;
    let corpus = read_corpus(&args.input)?;
    let mut w = out_writer(Some(&args.out))?;
    for record in &corpus {
        let tokens = tokenize_dialog(record, vocab, globals.max_len);
        let frames = model.encoder.forward(&tokens.token_ids)?;
        let tr = trace(&record.id, &frames, &tokens.turn_starts, prior, calib)?;
        serde_json::to_writer(&mut w, &tr)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    eprintln!("profiled {} dialogs to {}", corpus.len(), args.out.display());
    Ok(())
}

fn read_traces(path: &Path) -> Result<Vec<ValueTrace>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut traces = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tr: ValueTrace = serde_json::from_str(&line)
            .with_context(|| format!("trace line {}", i + 1))?;
        traces.push(tr);
    }
    Ok(traces)
}

#[derive(Args)]
pub struct CurvesArgs {
    /// Trace JSONL from `profile`.
    #[arg(short = 'i', long)]
    input: PathBuf,
    /// Band CSV output.
    #[arg(short, long)]
    out: PathBuf,
    /// Quantile levels, comma separated, ascending.
    #[arg(long, default_value = "0.1,0.5,0.9", value_delimiter = ',')]
    levels: Vec<f64>,
    /// Minimum dialogs per turn index.
    #[arg(long, default_value_t = 20)]
    min_support: usize,
    /// Value aspect the curves read.
    #[arg(long, default_value = "total", value_parser = parse_aspect)]
    aspect: Aspect,
}

fn parse_aspect(s: &str) -> Result<Aspect, String> {
    s.parse::<Aspect>().map_err(|e| e.to_string())
}

pub fn curves(_globals: &Globals, args: CurvesArgs) -> Result<()> {
    let traces = read_traces(&args.input)?;
    let curves: Vec<ProgressCurve> = traces
        .iter()
        .map(|t| ProgressCurve::from_trace(t, args.aspect))
        .collect();
    let band = quantile_band(&curves, &args.levels, args.min_support)?;
    let mut w = out_writer(Some(&args.out))?;
    w.write_all(band_to_csv(&band).as_bytes())?;
    w.flush()?;
    eprintln!(
        "band over {} curves, {} turn indices, to {}",
        curves.len(),
        band.rows.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct InspectArgs {
    /// Trace JSONL from `profile`.
    #[arg(short = 'i', long)]
    input: PathBuf,
    /// Matching corpus JSONL (for turn texts).
    #[arg(short = 'c', long)]
    corpus: PathBuf,
    #[arg(long, default_value = "total", value_parser = parse_aspect)]
    aspect: Aspect,
    /// positive, negative or zero.
    #[arg(long, default_value = "positive")]
    mode: String,
    /// How many turns to list.
    #[arg(short = 'k', long, default_value_t = 10)]
    top: usize,
    /// TSV output (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn inspect(_globals: &Globals, args: InspectArgs) -> Result<()> {
    let traces = read_traces(&args.input)?;
    let corpus = read_corpus(&args.corpus)?;
    let mode: RewardMode = args.mode.parse()?;
    let ranked = top_sentences(&traces, &corpus, args.aspect, args.top, mode)?;
    let mut w = out_writer(args.out.as_ref())?;
    writeln!(w, "rank\tdialog_id\tturn\taspect\tdelta_v\ttext")?;
    let aspect_name = match args.aspect {
        Aspect::Issue => "issue",
        Aspect::Action => "action",
        Aspect::Recontact => "recontact",
        Aspect::Total => "total",
    };
    for (i, s) in ranked.iter().enumerate() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            i + 1,
            s.dialog_id,
            s.turn,
            aspect_name,
            s.delta_v,
            s.text.replace(['\t', '\n'], " ")
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Wire format of a rerank request.
#[derive(Deserialize)]
struct RerankRequest {
    context: Vec<Utterance>,
    score_orientation: ScoreOrientation,
    candidates: Vec<Candidate>,
}

#[derive(Args)]
pub struct RerankArgs {
    /// Request JSON file; `-` reads stdin.
    #[arg(long)]
    request: PathBuf,
    /// Response JSON output (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn rerank(globals: &Globals, args: RerankArgs) -> Result<()> {
    let model = globals.load_model()?;
    let (vocab, prior, calib) = profiler_parts(&model)?;
    let raw = if args.request.as_os_str() == "-" {
        let mut buf = String::new();
        io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        std::fs::read_to_string(&args.request)
            .with_context(|| format!("reading {}", args.request.display()))?
    };
    let request: RerankRequest = serde_json::from_str(&raw).context("parsing rerank request")?;
    let context = tokenize_turns("context", &request.context, vocab);
    let ranked = rerank_candidates(
        &context,
        &request.candidates,
        request.score_orientation,
        &model.encoder,
        vocab,
        prior,
        calib,
    )?;
    let mut w = out_writer(args.out.as_ref())?;
    serde_json::to_writer_pretty(&mut w, &ranked)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One (context, target) line of the weights input.
#[derive(Deserialize)]
struct WeightItem {
    context: Vec<Utterance>,
    target: String,
}

#[derive(Args)]
pub struct WeightsArgs {
    /// JSONL of {"context": [turns...], "target": str}.
    #[arg(short = 'i', long)]
    input: PathBuf,
    /// TSV output: index, reward, weight (stdout when absent).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

pub fn weights(globals: &Globals, args: WeightsArgs) -> Result<()> {
    let model = globals.load_model()?;
    let (vocab, prior, calib) = profiler_parts(&model)?;
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: WeightItem =
            serde_json::from_str(&line).with_context(|| format!("weights line {}", i + 1))?;
        items.push((tokenize_turns(&format!("ctx{i}"), &item.context, vocab), item.target));
    }
    let weights = training_weights(&items, &model.encoder, vocab, prior, calib)?;
    let mut w = out_writer(args.out.as_ref())?;
    writeln!(w, "index\treward\tweight")?;
    for tw in &weights {
        writeln!(w, "{}\t{}\t{}", tw.index, tw.reward, tw.weight)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct ServeArgs {
    /// Serve the same protocol on a TCP listener instead of stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
}

pub fn serve(globals: &Globals, args: ServeArgs) -> Result<()> {
    let model = globals.load_model()?;
    let (vocab, prior, calib) = profiler_parts(&model)?;
    let band = globals.load_band()?;
    if let Some(b) = &band {
        if b.level_index(0.1).is_none() {
            bail!("serve needs a band containing the 0.1 level for bot-failure flags");
        }
    }
    let setup = crate::serve::ServeSetup {
        predictor: &model.encoder,
        vocab,
        prior,
        calib,
        band: band.as_ref(),
        patience: globals.patience,
        max_len: globals.max_len,
    };
    match args.listen {
        None => crate::serve::run_stdio(&setup),
        Some(addr) => crate::serve::run_tcp(&setup, &addr),
    }
}
