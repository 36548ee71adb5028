use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use tfgw::config::parse_config;
use tfgw::generators::{gen_four_cycles, gen_skip_circles};
use tfgw::trainer::{history_to_jsonl, stratified_holdout};
use tfgw::tu::detect_dataset_name;
use tfgw::{
    cross_validate, evaluate, load_checkpoint, load_tu_dataset, pca_project, save_checkpoint, solve_fgw, train,
    write_tu_dataset, CgOptions, Error, LabeledDataset, StructureKind, TrainConfig, TuOptions,
};

#[derive(Parser, Debug)]
#[command(name = "tfgw", version, about = "Template-based FGW graph embeddings and classifiers")]
struct Cli {
    /// Worker threads (falls back to TFGW_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or inspect datasets.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// FGW distance between two graphs.
    Dist(DistArgs),
    /// Train one configuration and write a checkpoint and history.
    Train(TrainArgs),
    /// Cross-validation with a holdout test set.
    Cv(TrainArgs),
    /// Accuracy of a checkpoint on a dataset.
    Eval(ModelArgs),
    /// Write TFGW embeddings and their PCA projection as CSV.
    Embed(EmbedArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetAction {
    /// Write a synthetic dataset in TU format.
    Gen(GenArgs),
    /// Print dataset statistics.
    Info {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "adj")]
        structure: Structure,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    FourCycles,
    SkipCircles,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Structure {
    Adj,
    Sp,
}

impl From<Structure> for StructureKind {
    fn from(s: Structure) -> Self {
        match s {
            Structure::Adj => StructureKind::Adjacency,
            Structure::Sp => StructureKind::ShortestPath,
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Copies per class (skip-circles).
    #[arg(long, default_value_t = 15)]
    copies: usize,
    /// Number of graphs (four-cycles).
    #[arg(long, default_value_t = 200)]
    graphs: usize,
    /// Nodes per graph (four-cycles).
    #[arg(long, default_value_t = 12)]
    nodes: usize,
}

#[derive(Args, Debug)]
struct DistArgs {
    /// First graph as `DIR` or `DIR:INDEX` (0-based, default 0).
    #[arg(long)]
    a: String,
    /// Second graph, same form.
    #[arg(long)]
    b: String,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "adj")]
    structure: Structure,
    #[arg(long, default_value_t = 1)]
    starts: usize,
    #[arg(long, default_value_t = 1000)]
    max_iterations: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// key=value file; comma-separated values form a grid.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override a config key (repeatable), applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Degree-feature cap for datasets without node labels.
    #[arg(long)]
    max_degree: Option<usize>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
    /// PCA output (default: `<out stem>_pca.csv` next to `--out`).
    #[arg(long)]
    pca_out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(format!("config: {msg}")),
            other => Failure::Data(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(f) = set_threads(cli.threads) {
        return report(f);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    match f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Failure::Data(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn set_threads(flag: Option<usize>) -> Outcome {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("TFGW_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("TFGW_THREADS={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Dataset {
            action: DatasetAction::Gen(args),
        } => dataset_gen(&args),
        Command::Dataset {
            action: DatasetAction::Info { dir, structure },
        } => dataset_info(&dir, structure.into()),
        Command::Dist(args) => dist(&args),
        Command::Train(args) => train_cmd(&args),
        Command::Cv(args) => cv_cmd(&args),
        Command::Eval(args) => eval_cmd(&args),
        Command::Embed(args) => embed_cmd(&args),
    }
}

fn load_dir(dir: &Path, options: &TuOptions) -> Result<LabeledDataset, Failure> {
    let name = detect_dataset_name(dir)?;
    Ok(load_tu_dataset(dir, &name, options)?)
}

fn dataset_gen(args: &GenArgs) -> Outcome {
    let (ds, params) = match args.kind {
        Kind::FourCycles => (
            gen_four_cycles(args.graphs, args.nodes, args.seed),
            vec![("graphs", args.graphs.to_string()), ("nodes", args.nodes.to_string())],
        ),
        Kind::SkipCircles => (gen_skip_circles(args.copies, args.seed), vec![("copies", args.copies.to_string())]),
    };
    let ds = ds.map_err(|e| Failure::Usage(e.to_string()))?;
    let mut meta = vec![
        ("name", ds.name.clone()),
        ("structure_kind", ds.structure_kind.as_str().to_string()),
        ("seed", args.seed.to_string()),
    ];
    meta.extend(params);
    write_tu_dataset(&ds, &args.out, &meta)?;
    println!("wrote {} graphs to {}", ds.len(), args.out.display());
    Ok(())
}

fn dataset_info(dir: &Path, kind: StructureKind) -> Outcome {
    let ds = load_dir(
        dir,
        &TuOptions {
            structure_kind: kind,
            max_degree: None,
        },
    )?;
    let sizes: Vec<usize> = ds.graphs.iter().map(|g| g.node_count()).collect();
    let edges: usize = ds.graphs.iter().map(|g| g.edge_count()).sum();
    println!("name: {}", ds.name);
    println!("graphs: {}", ds.len());
    println!("classes: {}", ds.class_count);
    println!(
        "class counts: {}",
        ds.class_counts().iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
    );
    println!("feature dim: {}", ds.feature_dim());
    println!(
        "nodes: min {} median {} max {}",
        sizes.iter().min().unwrap_or(&0),
        ds.median_node_count(),
        sizes.iter().max().unwrap_or(&0)
    );
    println!("mean edges: {:.2}", edges as f64 / ds.len().max(1) as f64);
    Ok(())
}

fn graph_spec(spec: &str) -> Result<(PathBuf, usize), Failure> {
    if let Some((dir, idx)) = spec.rsplit_once(':') {
        if let Ok(i) = idx.parse() {
            return Ok((PathBuf::from(dir), i));
        }
    }
    Ok((PathBuf::from(spec), 0))
}

fn dist(args: &DistArgs) -> Outcome {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Failure::Usage(format!("--alpha must lie in [0, 1], got {}", args.alpha)));
    }
    let options = TuOptions {
        structure_kind: args.structure.into(),
        max_degree: None,
    };
    let pick = |spec: &str| -> Result<tfgw::Graph, Failure> {
        let (dir, i) = graph_spec(spec)?;
        let ds = load_dir(&dir, &options)?;
        ds.graphs.get(i).cloned().ok_or_else(|| {
            Failure::Data(Error::Validation(format!("{} has {} graphs, no index {i}", dir.display(), ds.len())))
        })
    };
    let (a, b) = (pick(&args.a)?, pick(&args.b)?);
    let opts = CgOptions {
        starts: args.starts,
        max_iterations: args.max_iterations,
        ..CgOptions::default()
    };
    let res = solve_fgw(a.view(), b.view(), args.alpha, &opts)?;
    println!("value: {}", res.value);
    println!("gw: {}", res.gw_part);
    println!("w: {}", res.w_part);
    println!("iterations: {}", res.iterations);
    println!("converged: {}", res.converged);
    Ok(())
}

fn configs(args: &TrainArgs) -> Result<Vec<TrainConfig>, Failure> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    Ok(parse_config(&text, &TrainConfig::default(), &overrides)?)
}

fn data_for(config: &TrainConfig, dir: &Path) -> Result<LabeledDataset, Failure> {
    load_dir(
        dir,
        &TuOptions {
            structure_kind: config.structure_kind,
            max_degree: config.max_degree,
        },
    )
}

fn train_cmd(args: &TrainArgs) -> Outcome {
    let grid = configs(args)?;
    let [config] = grid.as_slice() else {
        return Err(Failure::Usage(format!(
            "the config describes {} configurations; use `cv` for grids",
            grid.len()
        )));
    };
    let ds = data_for(config, &args.data)?;
    let (train_idx, val_idx) = stratified_holdout(&ds.labels, config.holdout_fraction, config.seed)?;
    let val = (!val_idx.is_empty()).then(|| ds.subset(&val_idx));
    let out = train(&ds.subset(&train_idx), val.as_ref(), config, 0)?;
    log::info!("trained in {:.1}s", out.seconds);
    fs::create_dir_all(&args.out)?;
    save_checkpoint(&out.model, args.out.join("model.tfgw"))?;
    fs::write(args.out.join("history.jsonl"), history_to_jsonl(&out.history))?;
    fs::write(args.out.join("config.txt"), config.to_kv())?;
    println!(
        "best epoch {}, validation accuracy {:.4}, alpha {:.4}",
        out.best_epoch,
        out.best_val_acc.unwrap_or(0.0),
        out.model.alpha
    );
    if out.skipped_batches > 0 {
        println!("skipped batches: {}", out.skipped_batches);
    }
    Ok(())
}

fn cv_cmd(args: &TrainArgs) -> Outcome {
    let grid = configs(args)?;
    let ds = data_for(&grid[0], &args.data)?;
    let report = cross_validate(&ds, &grid)?;
    fs::create_dir_all(&args.out)?;
    // timing stays in the log so that output files are reproducible
    let configs: Vec<_> = report
        .configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "config": i,
                "mean_val_acc": c.mean_val_acc,
                "folds": c.folds.iter().map(|f| json!({
                    "fold": f.fold,
                    "curve": f.curve,
                    "selected_epoch": f.selected_epoch,
                    "best_val_acc": f.best_val_acc,
                    "holdout_accuracy": f.holdout_accuracy,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let summary = json!({
        "selected": report.selected,
        "holdout_mean": report.holdout_mean,
        "holdout_std": report.holdout_std,
        "holdout_indices": report.holdout_indices,
        "configs": configs,
    });
    fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n")?;
    fs::write(args.out.join("history.jsonl"), history_to_jsonl(&report.history))?;
    fs::write(args.out.join("selected_config.txt"), report.configs[report.selected].config.to_kv())?;
    for c in &report.configs {
        for f in &c.folds {
            log::info!("fold {} trained in {:.1}s", f.fold, f.train_seconds);
        }
    }
    println!(
        "selected config {} (mean validation accuracy {:.4})",
        report.selected, report.configs[report.selected].mean_val_acc
    );
    println!("holdout accuracy {:.4} ± {:.4}", report.holdout_mean, report.holdout_std);
    Ok(())
}

fn model_and_data(args: &ModelArgs) -> Result<(tfgw::TfgwModel, LabeledDataset), Failure> {
    let model = load_checkpoint(&args.model)?;
    let ds = load_dir(
        &args.data,
        &TuOptions {
            structure_kind: model.structure_kind,
            max_degree: args.max_degree,
        },
    )?;
    Ok((model, ds))
}

fn eval_cmd(args: &ModelArgs) -> Outcome {
    let (model, ds) = model_and_data(args)?;
    println!("accuracy: {:.4}", evaluate(&model, &ds)?);
    Ok(())
}

fn embed_cmd(args: &EmbedArgs) -> Outcome {
    let (model, ds) = model_and_data(&args.model)?;
    let graphs: Vec<&tfgw::Graph> = ds.graphs.iter().collect();
    let emb = model.distances(&graphs)?;
    let tpl = model.template_distances()?;
    let k = model.template_count();

    let rows: Vec<(&str, usize, String, Vec<f64>)> = emb
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| ("graph", i, ds.labels[i].to_string(), r.to_vec()))
        .chain(tpl.rows().into_iter().enumerate().map(|(i, r)| ("template", i, String::new(), r.to_vec())))
        .collect();

    let mut csv = String::from("kind,index,label");
    for j in 0..k {
        let _ = write!(csv, ",tfgw_{j}");
    }
    csv.push('\n');
    for (kind, i, label, v) in &rows {
        let _ = write!(csv, "{kind},{i},{label}");
        for x in v {
            let _ = write!(csv, ",{x}");
        }
        csv.push('\n');
    }
    fs::write(&args.out, csv)?;

    let all = ndarray::concatenate(ndarray::Axis(0), &[emb.view(), tpl.view()]).map_err(|e| Failure::Data(Error::Dimension(e.to_string())))?;
    let dims = k.min(2);
    let pca = pca_project(all.view(), dims)?;
    let mut out = String::from("kind,index,label");
    for j in 0..dims {
        let _ = write!(out, ",pc{}", j + 1);
    }
    out.push('\n');
    for ((kind, i, label, _), c) in rows.iter().zip(pca.coordinates.rows()) {
        let _ = write!(out, "{kind},{i},{label}");
        for x in c {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    let pca_path = args.pca_out.clone().unwrap_or_else(|| {
        let stem = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("embedding");
        args.out.with_file_name(format!("{stem}_pca.csv"))
    });
    fs::write(&pca_path, out)?;
    println!(
        "wrote {} graph and {k} template embeddings to {} (PCA in {})",
        ds.len(),
        args.out.display(),
        pca_path.display()
    );
    Ok(())
}
