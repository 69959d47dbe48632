//! `hcx`: prepare datasets, train, evaluate and report on multi-space
//! knowledge-graph embeddings.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and data errors, 3
//! when training hits non-finite numbers.

mod settings;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hcx::data::{
    build_filter_index, build_vocabulary, dedup_and_remove_inverses, generate_synthetic_kg, parse_triples,
    read_dataset, split_dataset, write_dataset, SplitRatios, SyntheticSpec,
};
use hcx::evaluation::{attention_report, evaluate, fit_scaling_law, parse_scaling_points, render_attention_tsv};
use hcx::model::{load_checkpoint, save_checkpoint, write_manifest};
use hcx::training::{train, TrainInput, LOG_COLUMNS};

use settings::{parse_config, RunConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "hcx", version, about = "Multi-space knowledge-graph embeddings")]
struct Cli {
    /// Cap on worker threads for evaluation (1 = fully serial).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Serial execution; implies --threads 1.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a TSV triple file, deduplicate, split and write a dataset directory.
    Prepare(PrepareArgs),
    /// Generate the synthetic mixed-geometry graph as a dataset directory.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Filtered link-prediction metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Attention table or scaling-law fit.
    Report(ReportArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Input file with `head<TAB>relation<TAB>tail` lines.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train, valid and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().n_tree_nodes)]
    tree_nodes: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().tree_branching)]
    branching: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().n_collab_pairs)]
    collab_pairs: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().n_chain_entities)]
    chain_entities: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().n_functional_groups)]
    groups: usize,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `prepare` or `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: PathBuf,
    /// File of `key = value` settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_base: Option<usize>,
    /// Custom allocation `d_H,d_C,d_E` (complex counted in complex coordinates).
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    curvature: Option<f64>,
    #[arg(long)]
    ball_margin: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `score` (default) or `literal`.
    #[arg(long)]
    loss_sign: Option<String>,
    /// Freeze attention at uniform weights.
    #[arg(long)]
    no_attention: bool,
    /// Drop the consistency term.
    #[arg(long)]
    no_consistency: bool,
    /// Disable a space; repeatable.
    #[arg(long, value_enum, ignore_case = true)]
    no_space: Vec<SpaceArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    H,
    C,
    E,
}

impl SpaceArg {
    fn letter(self) -> char {
        match self {
            SpaceArg::H => 'H',
            SpaceArg::C => 'C',
            SpaceArg::E => 'E',
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory for report files (defaults to the checkpoint's directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Attention,
    Scaling,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_enum)]
    kind: ReportKind,
    /// Checkpoint (attention).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory (attention).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split to sample triples from (attention).
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// `size<TAB>seconds` file (scaling).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<hcx::Error> for Failure {
    fn from(e: hcx::Error) -> Self {
        Self {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a, threads),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::usage(format!("{SEED_ENV} is not an integer: {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn parse_ratios(s: &str) -> Result<SplitRatios, Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::usage(format!("ratios must be three numbers, got {s:?}")))?;
    let [a, b, c] = parts[..] else {
        return Err(Failure::usage(format!("ratios must be three numbers, got {s:?}")));
    };
    Ok(SplitRatios::new(a, b, c)?)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

/// Writes a dataset into a fresh sibling directory and renames it into
/// place, so a failure never leaves a half-written target behind.
fn write_dataset_atomically(
    out: &Path,
    vocab: &hcx::data::Vocabulary,
    splits: &hcx::data::DatasetSplits,
) -> CmdResult {
    if out.exists() {
        // existing directories are overwritten file by file
        fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
        return Ok(write_dataset(out, vocab, splits)?);
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| io_failure(&parent, e))?;
    let name = out.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    let result = fs::create_dir_all(&staging)
        .map_err(|e| io_failure(&staging, e))
        .and_then(|()| write_dataset(&staging, vocab, splits).map_err(Failure::from))
        .and_then(|()| fs::rename(&staging, out).map_err(|e| io_failure(out, e)));
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn cmd_prepare(a: PrepareArgs) -> CmdResult {
    let seed = resolve_seed(a.seed)?;
    let ratios = parse_ratios(&a.ratios)?;
    let text = fs::read_to_string(&a.input).map_err(|e| io_failure(&a.input, e))?;
    let raw = parse_triples(&text).map_err(|e| Failure::usage(format!("{}: {e}", a.input.display())))?;
    let vocab = build_vocabulary(&raw);
    let triples = dedup_and_remove_inverses(&vocab.bind(&raw)?);
    let splits = split_dataset(&triples, ratios, seed)?;
    write_dataset_atomically(&a.out, &vocab, &splits)?;
    println!(
        "entities\t{}\nrelations\t{}\ntrain\t{}\nvalid\t{}\ntest\t{}",
        vocab.n_entities(),
        vocab.n_relations(),
        splits.train.len(),
        splits.valid.len(),
        splits.test.len()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let spec = SyntheticSpec {
        n_tree_nodes: a.tree_nodes,
        tree_branching: a.branching,
        n_collab_pairs: a.collab_pairs,
        n_chain_entities: a.chain_entities,
        n_functional_groups: a.groups,
        seed: resolve_seed(a.seed)?,
    };
    let ratios = parse_ratios(&a.ratios)?;
    let (vocab, triples) = generate_synthetic_kg(&spec)?;
    let splits = split_dataset(&triples, ratios, spec.seed)?;
    write_dataset_atomically(&a.out, &vocab, &splits)?;
    println!(
        "entities\t{}\nrelations\t{}\ntriples\t{}",
        vocab.n_entities(),
        vocab.n_relations(),
        triples.len()
    );
    Ok(())
}

fn train_overrides(a: &TrainArgs) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    };
    put("d_base", a.d_base.map(|v| v.to_string()));
    put("dims", a.dims.clone());
    put("curvature", a.curvature.map(|v| v.to_string()));
    put("ball_margin", a.ball_margin.map(|v| v.to_string()));
    put("gamma", a.gamma.map(|v| v.to_string()));
    put("beta", a.beta.map(|v| v.to_string()));
    put("lambda1", a.lambda1.map(|v| v.to_string()));
    put("lambda2", a.lambda2.map(|v| v.to_string()));
    put("lr", a.lr.map(|v| v.to_string()));
    put("batch_size", a.batch_size.map(|v| v.to_string()));
    put("n_negatives", a.negatives.map(|v| v.to_string()));
    put("max_epochs", a.epochs.map(|v| v.to_string()));
    put("patience", a.patience.map(|v| v.to_string()));
    put("eval_every", a.eval_every.map(|v| v.to_string()));
    put("seed", a.seed.map(|v| v.to_string()));
    put("loss_sign", a.loss_sign.clone());
    put("no_attention", a.no_attention.then(|| "true".to_string()));
    put("no_consistency", a.no_consistency.then(|| "true".to_string()));
    if !a.no_space.is_empty() {
        let letters: Vec<String> = a.no_space.iter().map(|s| s.letter().to_string()).collect();
        put("no_space", Some(letters.join(",")));
    }
    m
}

fn cmd_train(a: TrainArgs, threads: Option<usize>) -> CmdResult {
    let file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            parse_config(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => BTreeMap::new(),
    };
    let env = env_seed()?.map(|s| s.to_string());
    let rc = RunConfig::resolve(&file, &train_overrides(&a), env.as_deref()).map_err(Failure::usage)?;

    let (vocab, splits) = read_dataset(&a.data)?;
    let model = rc.model_config(vocab.n_entities()).map_err(Failure::usage)?;
    let filter = build_filter_index(&splits);

    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let log_path = a.out.join("train.log");
    let mut header = String::new();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let _ = writeln!(header, "# started = {started}");
    let _ = writeln!(header, "# data = {}", a.data.display());
    let _ = writeln!(header, "# threads = {}", threads.map_or_else(|| "auto".into(), |n| n.to_string()));
    for line in rc.render().lines() {
        let _ = writeln!(header, "# {line}");
    }
    let _ = writeln!(header, "{LOG_COLUMNS}");
    let mut log = fs::File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;
    log.write_all(header.as_bytes()).map_err(|e| io_failure(&log_path, e))?;

    let input = TrainInput {
        splits: &splits,
        filter: &filter,
        n_entities: vocab.n_entities(),
        n_relations: vocab.n_relations(),
    };
    let mut write_err = None;
    let outcome = train(&input, &model, &rc.train, |rec| {
        if let Err(e) = writeln!(log, "{}", rec.to_line()) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(io_failure(&log_path, e));
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(hcx::Error::Diverged { epoch, detail, snapshot }) => {
            let path = a.out.join("diverged.ckpt");
            let state = hcx::model::TrainingState {
                epoch: epoch as u64,
                ..Default::default()
            };
            save_checkpoint(&snapshot.0, &state, &path)?;
            return Err(Failure {
                code: 3,
                message: format!(
                    "training diverged at epoch {epoch}: {detail}; parameters saved to {}",
                    path.display()
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };

    for (name, store, state) in [
        ("best", &outcome.best, &outcome.best_state),
        ("final", &outcome.last, &outcome.last_state),
    ] {
        save_checkpoint(store, state, &a.out.join(format!("{name}.ckpt")))?;
        write_manifest(store, state, &a.out.join(format!("{name}.manifest")))?;
    }
    let last = outcome.log.last();
    println!("epochs\t{}", outcome.log.len());
    println!("best_epoch\t{}", outcome.best_state.epoch);
    println!("best_valid_mrr\t{}", outcome.best_state.best_valid_mrr);
    if let Some(r) = last {
        println!("final_loss\t{}", r.total());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let (store, _) = load_checkpoint(&a.checkpoint)?;
    let (vocab, splits) = read_dataset(&a.data)?;
    if store.n_entities != vocab.n_entities() || store.n_relations != vocab.n_relations() {
        return Err(Failure::usage(format!(
            "checkpoint has {} entities and {} relations but the dataset has {} and {}",
            store.n_entities,
            store.n_relations,
            vocab.n_entities(),
            vocab.n_relations()
        )));
    }
    let split = splits
        .split(&a.split)
        .ok_or_else(|| Failure::usage(format!("unknown split {:?} (expected train, valid or test)", a.split)))?;
    if split.is_empty() {
        return Err(Failure::usage(format!("split {:?} is empty", a.split)));
    }
    let filter = build_filter_index(&splits);
    let report = evaluate(&store, split, &filter)?;

    let records = report.to_records(Some(&vocab));
    print!("{records}");
    let out = match a.out {
        Some(d) => d,
        None => a.checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let tsv = out.join(format!("eval_{}.tsv", a.split));
    fs::write(&tsv, &records).map_err(|e| io_failure(&tsv, e))?;
    let txt = out.join(format!("eval_{}.txt", a.split));
    fs::write(&txt, report.to_table(Some(&vocab))).map_err(|e| io_failure(&txt, e))?;
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let text = match a.kind {
        ReportKind::Attention => {
            let (Some(ckpt), Some(data)) = (&a.checkpoint, &a.data) else {
                return Err(Failure::usage("attention report needs --checkpoint and --data"));
            };
            let (store, _) = load_checkpoint(ckpt)?;
            let (vocab, splits) = read_dataset(data)?;
            if store.n_relations != vocab.n_relations() || store.n_entities != vocab.n_entities() {
                return Err(Failure::usage("checkpoint and dataset vocabularies differ in size"));
            }
            let split = splits
                .split(&a.split)
                .ok_or_else(|| Failure::usage(format!("unknown split {:?}", a.split)))?;
            let rows = attention_report(&store, split, a.samples, resolve_seed(a.seed)?)?;
            render_attention_tsv(&rows, Some(&vocab))
        }
        ReportKind::Scaling => {
            let Some(input) = &a.input else {
                return Err(Failure::usage("scaling report needs --input"));
            };
            let text = fs::read_to_string(input).map_err(|e| io_failure(input, e))?;
            let (sizes, times) = parse_scaling_points(&text)?;
            let fit = fit_scaling_law(&sizes, &times)?;
            format!(
                "exponent\t{}\nintercept\t{}\nr_squared\t{}\npoints\t{}\n",
                fit.exponent,
                fit.intercept,
                fit.r_squared,
                sizes.len()
            )
        }
    };
    print!("{text}");
    if let Some(out) = &a.out {
        fs::write(out, &text).map_err(|e| io_failure(out, e))?;
    }
    Ok(())
}
