use std::collections::BTreeSet;
use std::fs;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frameforge::clustering::{
    embed_dataset, load_assignment, AssignmentFile, ClusteringMode, InduceConfig, InducedTree,
    DEFAULT_K_MAX_PER_LEMMA,
};
use frameforge::data::{load_dataset, load_split, make_splits, write_dataset, Dataset};
use frameforge::embedding::CombineWeight;
use frameforge::evaluation::{
    evaluate_maps, format_table, overlap_split_mean, ranking_recall_all, SearchSpace,
};
use frameforge::harness::{run_cv_with_split, write_results, Budget, ExperimentConfig};
use frameforge::learning::{
    checkpoint_hash, load_checkpoint, train, Checkpoint, LossConfig, LossKind, TrainConfig,
    TrainedModel,
};
use frameforge::synth::{generate, SynthConfig};
use frameforge::{Error, Result};

#[derive(Parser)]
#[command(name = "frameforge", version, about = "Supervised semantic frame induction")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FRAMEFORGE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign lemmas to three folds.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fine-tune the encoder head and write a checkpoint.
    Train {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_parser = parse_loss)]
        loss: LossKind,
        /// Defaults to the first margin candidate of the loss.
        #[arg(long)]
        margin: Option<f64>,
        #[command(flatten)]
        opt: TrainOpts,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Cluster instances into frames.
    Cluster {
        #[command(flatten)]
        input: Input,
        /// Identity encoder when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: ClusteringMode,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_K_MAX_PER_LEMMA)]
        k_max: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Score a clustering against gold frames.
    Eval {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        pred: PathBuf,
        /// Also write the metrics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Similarity-ranking recall.
    Rank {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_parser = parse_space, default_value = "all")]
        space: SearchSpace,
        /// Training data; splits the mean by whether the query frame was seen.
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Three-fold cross-validation with dev-set tuning.
    Cv {
        #[arg(long)]
        data: PathBuf,
        /// Lemma folds; derived from the seed when absent.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_parser = parse_loss)]
        loss: LossKind,
        #[arg(long, value_parser = parse_mode)]
        mode: ClusteringMode,
        #[arg(long, default_value = "all")]
        budget: Budget,
        /// Fix alpha instead of searching the grid.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_K_MAX_PER_LEMMA)]
        k_max: usize,
        #[command(flatten)]
        opt: TrainOpts,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write mixed embeddings as TSV: id, lemma, frame, components.
    ExportEmbeddings {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    data: PathBuf,
    /// With --fold, restrict the data to one fold.
    #[arg(long, requires = "fold")]
    split: Option<PathBuf>,
    #[arg(long, requires = "split", value_parser = clap::value_parser!(u8).range(1..=3))]
    fold: Option<u8>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl TrainOpts {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(lr) = self.lr {
            cfg.optimizer.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        cfg
    }
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| {
        let names: Vec<&str> = LossKind::ALL.iter().map(|k| k.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_mode(s: &str) -> std::result::Result<ClusteringMode, String> {
    match s {
        "one-step" => Ok(ClusteringMode::OneStep),
        "two-step" => Ok(ClusteringMode::TwoStep),
        _ => Err("expected one-step or two-step".into()),
    }
}

fn parse_space(s: &str) -> std::result::Result<SearchSpace, String> {
    match s {
        "all" => Ok(SearchSpace::All),
        "same" => Ok(SearchSpace::Same),
        "diff" => Ok(SearchSpace::Diff),
        _ => Err("expected all, same or diff".into()),
    }
}

impl Input {
    fn load(&self) -> Result<Dataset> {
        let ds = load_dataset(&self.data)?;
        match (&self.split, self.fold) {
            (Some(path), Some(fold)) => {
                let split = load_split(path)?;
                split.validate_against(&ds)?;
                split.fold_dataset(&ds, fold)
            }
            _ => Ok(ds),
        }
    }
}

fn load_model(path: Option<&Path>, dim: usize) -> Result<(TrainedModel, Option<String>)> {
    let Some(path) = path else {
        return Ok((TrainedModel::vanilla(dim), None));
    };
    let ck = load_checkpoint(path)?;
    if ck.encoder.d_in() != dim {
        return Err(Error::DimensionMismatch {
            left: ck.encoder.d_in(),
            right: dim,
        });
    }
    let hash = checkpoint_hash(&ck);
    Ok((ck.into_model(), Some(hash)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split { data, out, seed } => {
            let ds = load_dataset(&data)?;
            let split = make_splits(&ds, seed)?;
            write_text(&out, &split.to_json())?;
            println!("{:<6}{:>8}{:>8}{:>8}{:>11}", "fold", "verbs", "LUs", "frames", "instances");
            for fold in 1..=3 {
                let s = split.fold_dataset(&ds, fold)?.stats();
                println!(
                    "{fold:<6}{:>8}{:>8}{:>8}{:>11}",
                    s.num_verbs, s.num_lus, s.num_frames, s.num_instances
                );
            }
        }
        Command::Train {
            input,
            loss,
            margin,
            opt,
            out,
            seed,
        } => {
            let ds = input.load()?;
            let loss_cfg = match margin {
                Some(m) => LossConfig::new(loss, m)?,
                None => LossConfig::default_for(loss),
            };
            let cfg = opt.apply(TrainConfig {
                seed,
                ..TrainConfig::default()
            });
            let model = train(&ds, &cfg, &loss_cfg)?;
            let train_cfg = (loss != LossKind::Vanilla).then_some(&cfg);
            let ck = Checkpoint::from_model(&model, train_cfg, seed);
            ck.save(&out)?;
            println!("{} {}", checkpoint_hash(&ck), out.display());
        }
        Command::Cluster {
            input,
            checkpoint,
            mode,
            alpha,
            threshold,
            k_max,
            out,
            seed,
        } => {
            let ds = input.load()?;
            let alpha = CombineWeight::new(alpha)?;
            let (model, hash) = load_model(checkpoint.as_deref(), ds.dim())?;
            let emb = embed_dataset(&ds, &model.encoder, alpha)?;
            let cfg = InduceConfig {
                mode,
                k_max_per_lemma: k_max,
                seed,
            };
            let tree = InducedTree::build(&ds, &emb, &cfg)?;
            let clusters = tree.cut(threshold);
            AssignmentFile::new(&ds, &clusters, tree.num_plus(), mode, threshold, alpha, hash).save(&out)?;
            println!("{} clusters, {} instances", clusters.num_clusters, ds.len());
        }
        Command::Eval { input, pred, out } => {
            let ds = input.load()?;
            let pred = load_assignment(&pred)?;
            let report = evaluate_maps(&pred.assignments, &ds.gold(), pred.num_plus)?;
            print!("{}", format_table(&[(pred.mode.name().to_string(), report)]));
            if let Some(out) = out {
                write_text(&out, &to_json(&report))?;
            }
        }
        Command::Rank {
            input,
            checkpoint,
            alpha,
            space,
            train_data,
            out,
        } => {
            let ds = input.load()?;
            let (model, _) = load_model(checkpoint.as_deref(), ds.dim())?;
            let emb = embed_dataset(&ds, &model.encoder, CombineWeight::new(alpha)?)?;
            let recalls = ranking_recall_all(&ds, &emb, space)?;
            let scored: Vec<(&str, f64)> = ds
                .records()
                .iter()
                .zip(&recalls)
                .filter_map(|(r, v)| v.map(|v| (r.gold_frame.as_str(), v)))
                .collect();
            if scored.is_empty() {
                return Err(Error::Config(format!("no query has a true instance in the {} space", space.name())));
            }
            let mean = scored.iter().map(|(_, v)| v).sum::<f64>() / scored.len() as f64;
            let mut summary = serde_json::json!({
                "space": space.name(),
                "queries": scored.len(),
                "recall": mean,
            });
            let mut line = format!("{} recall {:.4} over {} queries", space.name(), mean, scored.len());
            if let Some(path) = train_data {
                let frames: BTreeSet<String> =
                    load_dataset(&path)?.frames().into_iter().map(String::from).collect();
                let split = overlap_split_mean(&scored, &frames);
                summary["overlap"] = serde_json::json!(split.overlap);
                summary["non_overlap"] = serde_json::json!(split.non_overlap);
                let fmt = |v: Option<f64>| v.map_or("--".to_string(), |v| format!("{v:.4}"));
                let _ = write!(line, ", overlap {}, non-overlap {}", fmt(split.overlap), fmt(split.non_overlap));
            }
            println!("{line}");
            if let Some(out) = out {
                write_text(&out, &to_json(&summary))?;
            }
        }
        Command::Cv {
            data,
            split,
            loss,
            mode,
            budget,
            alpha,
            margin,
            threshold,
            k_max,
            opt,
            out,
            seed,
        } => {
            let ds = load_dataset(&data)?;
            let split = match split {
                Some(path) => load_split(path)?,
                None => make_splits(&ds, seed)?,
            };
            split.validate_against(&ds)?;
            let mut cfg = ExperimentConfig::new(loss, mode, seed);
            cfg.train = opt.apply(cfg.train);
            cfg.budget = budget;
            cfg.k_max_per_lemma = k_max;
            if let Some(a) = alpha {
                CombineWeight::new(a)?;
                cfg.grid.alphas = vec![a];
            }
            if let Some(m) = margin {
                cfg.grid.margins = vec![m];
            }
            if let Some(t) = threshold {
                cfg.grid.thresholds = Some(vec![t]);
            }
            let res = run_cv_with_split(&ds, &split, &cfg)?;
            let dir = write_results(&out, &cfg, &res)?;
            let mut rows: Vec<(String, _)> = res
                .folds
                .iter()
                .map(|f| (format!("fold{}", f.fold), f.test))
                .collect();
            rows.push((format!("{} {}", cfg.run_name(), mode), res.mean));
            print!("{}", format_table(&rows));
            println!("results in {}", dir.display());
        }
        Command::ExportEmbeddings {
            data,
            checkpoint,
            alpha,
            out,
        } => {
            let ds = load_dataset(&data)?;
            let (model, _) = load_model(checkpoint.as_deref(), ds.dim())?;
            let emb = embed_dataset(&ds, &model.encoder, CombineWeight::new(alpha)?)?;
            let mut text = String::new();
            for (r, v) in ds.records().iter().zip(&emb) {
                let _ = write!(text, "{}\t{}\t{}", r.id, r.lemma, r.gold_frame);
                for x in v {
                    let _ = write!(text, "\t{x}");
                }
                text.push('\n');
            }
            write_text(&out, &text)?;
        }
        Command::Synth { out, seed } => {
            let ds = generate(&SynthConfig {
                seed,
                ..SynthConfig::default()
            })?;
            write_dataset(&ds, &out)?;
            let s = ds.stats();
            println!(
                "{} verbs, {} LUs, {} frames, {} instances",
                s.num_verbs, s.num_lus, s.num_frames, s.num_instances
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
