//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
//! Failures print one line to standard error: `error: <kind>: <message>`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use whai::corpus::{load_tsv, load_uci_bow, read_corpus, read_vocabulary, split_tokens, write_corpus, Vocabulary};
use whai::distributions::{weibull_fit_to_gamma, GammaParams};
use whai::eval::{export_topics, PredictiveAccumulator, ThetaMode};
use whai::model::{DldaModel, LayerSizes};
use whai::rng::{self, Stream};
use whai::trainer::{load_samples, RunDir, TrainConfig};
use whai::Error;

#[derive(Parser)]
#[command(name = "whai", version, about = "Deep topic models trained with hybrid MCMC / variational inference")]
struct Cli {
    /// Worker threads for per-document work (0 = all cores).
    #[arg(long, global = true, env = "WHAI_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Convert a bag-of-words corpus into the binary container.
    Ingest(IngestArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Held-out per-word perplexity of a run.
    Eval(EvalArgs),
    /// Export the topics of one layer as JSON.
    Topics(TopicsArgs),
    /// Sample a synthetic corpus from a random deep model.
    Synth(SynthArgs),
    /// Fit a Weibull to a gamma distribution by minimizing their KL divergence.
    FitWeibull(FitArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// UCI docword file (header D, W, NNZ then `doc word count` lines).
    #[arg(long, conflicts_with = "tsv", required_unless_present = "tsv")]
    docword: Option<PathBuf>,
    /// Tab-separated `doc<TAB>word<TAB>count` records.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Vocabulary, one token per line.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    resume: bool,
    /// Override one configuration key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    /// Defaults to the split seed the run trained with.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Defaults to the run's training fraction.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Draw θ from the encoder instead of using its mean.
    #[arg(long)]
    stochastic_theta: bool,
    /// Seed for stochastic θ draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the record to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the token split as `train.corpus` and `heldout.corpus` here.
    #[arg(long)]
    split_out: Option<PathBuf>,
}

#[derive(Args)]
struct TopicsArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[arg(long, default_value_t = 15)]
    top: usize,
    /// Minimum Φ entry for an edge to the layer below.
    #[arg(long, default_value_t = 0.05)]
    edge_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator settings `key=value`: vocab, topics (comma list), docs, eta
    /// (comma list), r, c (comma list, one per layer); repeatable.
    #[arg(long = "spec", value_name = "KEY=VALUE")]
    spec: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON; defaults to `<out>.truth.json`.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Gamma shape; a comma list fits each value.
    #[arg(long, value_delimiter = ',', required = true)]
    alpha: Vec<f64>,
    /// Gamma rate.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

enum Failure {
    Lib(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(Error::Json(e))
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon_threads(cli.threads) {
            eprintln!("error: config: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.cmd {
        Cmd::Ingest(a) => ingest(a),
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Topics(a) => topics(a),
        Cmd::Synth(a) => synth(a),
        Cmd::FitWeibull(a) => fit_weibull(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: usage: {}", one_line(&m));
            ExitCode::from(2)
        }
    }
}

fn rayon_threads(n: usize) -> std::result::Result<(), String> {
    whai::set_worker_threads(n).map_err(|e| e.to_string())
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

fn open(p: &Path) -> std::result::Result<BufReader<File>, Failure> {
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| Failure::Lib(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))))
}

fn split_kv(s: &str) -> std::result::Result<(&str, &str), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Failure::Usage(format!("expected key=value, got {s:?}")))
}

fn ingest(a: IngestArgs) -> Outcome {
    let vocab = read_vocabulary(open(&a.vocab)?)?;
    let (vocab, counts) = match (&a.docword, &a.tsv) {
        (Some(d), _) => load_uci_bow(open(d)?, open(&a.vocab)?)?,
        (None, Some(t)) => {
            let c = load_tsv(open(t)?, &vocab)?;
            (vocab, c)
        }
        (None, None) => return Err(Failure::Usage("one of --docword or --tsv is required".into())),
    };
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_corpus(&mut w, &vocab, &counts)?;
    w.flush()?;
    println!(
        "{}",
        json!({"documents": counts.num_docs(), "vocabulary": counts.vocab_size(), "tokens": counts.total_tokens(), "nonzeros": counts.nnz()})
    );
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_text(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    for o in &a.overrides {
        let (k, v) = split_kv(o)?;
        cfg.set(k, v)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (vocab, corpus) = read_corpus(&mut open(&a.corpus)?)?;
    let run = RunDir::new(&a.out_dir);
    fs::create_dir_all(&run.path)?;
    fs::write(run.path.join("vocab.txt"), vocab.tokens().join("\n") + "\n")?;
    let st = run.train(cfg, &corpus, a.resume)?;
    println!(
        "{}",
        json!({"iterations": st.iteration, "samples": st.manifest.len(), "run_dir": run.path.display().to_string()})
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    let (vocab, corpus) = read_corpus(&mut open(&a.corpus)?)?;
    let run = RunDir::new(&a.run_dir);
    let (st, mut samples) = load_samples(&run)?;
    let frac = a.train_fraction.unwrap_or(st.config.train_fraction);
    let seed = a.split_seed.unwrap_or_else(|| st.config.effective_split_seed());
    let split = split_tokens(&corpus, frac, seed)?;
    if let Some(dir) = &a.split_out {
        fs::create_dir_all(dir)?;
        for (name, part) in [("train.corpus", &split.train), ("heldout.corpus", &split.heldout)] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            write_corpus(&mut w, &vocab, part)?;
            w.flush()?;
        }
    }
    if samples.is_empty() {
        samples.push(st.current_sample());
    }
    let mode = if a.stochastic_theta {
        ThetaMode::Stochastic { seed: rng::subsystem_seed(a.seed, Stream::Eval) }
    } else {
        ThetaMode::Mean
    };
    let start = std::time::Instant::now();
    let mut acc = PredictiveAccumulator::new(&split.heldout);
    for s in &samples {
        acc.add_sample(st.config.variant, s, &split.train, mode)?;
    }
    let r = acc.report()?;
    let secs = start.elapsed().as_secs_f64();
    let rec = json!({
        "perplexity": r.perplexity,
        "heldout_tokens": r.heldout_tokens,
        "samples": r.samples,
        "guarded_terms": r.guarded_terms,
        "train_fraction": frac,
        "split_seed": seed,
        "theta": if a.stochastic_theta { "stochastic" } else { "mean" },
        "iteration": st.iteration,
        "seconds": secs,
    });
    println!("{rec}");
    if let Some(p) = a.out {
        fs::write(p, rec.to_string() + "\n")?;
    }
    Ok(())
}

fn topics(a: TopicsArgs) -> Outcome {
    let run = RunDir::new(&a.run_dir);
    let st = whai::trainer::load_checkpoint(&run.checkpoint_path())?;
    let vocab = read_vocabulary(open(&run.path.join("vocab.txt"))?)?;
    let report = export_topics(&st.model, &vocab, a.layer, a.top, a.edge_threshold)?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let (mut v, mut topics, mut docs) = (100usize, vec![10usize], 1000usize);
    let (mut eta, mut r, mut c): (Option<Vec<f64>>, f64, Option<Vec<f64>>) = (None, 1.0, None);
    let list = |k: &str, s: &str| -> std::result::Result<Vec<f64>, Failure> {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| Failure::Lib(Error::Config(format!("{k}: cannot parse {x:?}")))))
            .collect()
    };
    let num = |k: &str, s: &str| -> std::result::Result<f64, Failure> {
        s.parse().map_err(|_| Failure::Lib(Error::Config(format!("{k}: cannot parse {s:?}"))))
    };
    for kv in &a.spec {
        let (k, val) = split_kv(kv)?;
        match k {
            "vocab" => v = num(k, val)? as usize,
            "topics" => topics = list(k, val)?.into_iter().map(|x| x as usize).collect(),
            "docs" => docs = num(k, val)? as usize,
            "eta" => eta = Some(list(k, val)?),
            "r" => r = num(k, val)?,
            "c" => c = Some(list(k, val)?),
            _ => return Err(Failure::Lib(Error::Config(format!("unknown synth key {k:?}")))),
        }
    }
    let mut sizes = vec![v];
    sizes.extend(&topics);
    let sizes = LayerSizes::new(sizes)?;
    let eta = eta.unwrap_or_else(|| vec![0.05; topics.len()]);
    let mut model = DldaModel::init(sizes, &eta, rng::subsystem_seed(a.seed, Stream::Init))?;
    model.r.fill(r);
    if let Some(c) = c {
        if c.len() != model.depth() {
            return Err(Failure::Lib(Error::Config(format!("c needs {} values", model.depth()))));
        }
        model.c = c;
    }
    model.validate()?;
    let (counts, latents) = model.generate_corpus(docs, rng::subsystem_seed(a.seed, Stream::Global))?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_corpus(&mut w, &Vocabulary::synthetic(v), &counts)?;
    w.flush()?;
    let truth_path = a.truth_out.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".truth.json");
        PathBuf::from(p)
    });
    let truth = json!({
        "layer_sizes": model.sizes.as_slice(),
        "eta": eta,
        "r": r,
        "c": model.c,
        "phi": model.phi.iter().map(|p| p.outer_iter().map(|row| row.to_vec()).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "theta": latents.iter().map(|d| d.theta.iter().map(|t| t.to_vec()).collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    let mut tw = BufWriter::new(File::create(&truth_path)?);
    serde_json::to_writer(&mut tw, &truth)?;
    tw.flush()?;
    println!(
        "{}",
        json!({"documents": counts.num_docs(), "tokens": counts.total_tokens(), "truth": truth_path.display().to_string()})
    );
    Ok(())
}

fn fit_weibull(a: FitArgs) -> Outcome {
    for alpha in a.alpha {
        let fit = weibull_fit_to_gamma(GammaParams::new(alpha, a.beta)?)?;
        println!(
            "{}",
            json!({"alpha": alpha, "beta": a.beta, "k": fit.params.shape, "lambda": fit.params.scale, "kl": fit.kl, "iterations": fit.iterations})
        );
    }
    Ok(())
}
