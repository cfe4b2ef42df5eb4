//! Command-line entry point: dataset generation, training, evaluation,
//! interpretability probes, the symbolic oracle, and report emission.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lsa::alphabet::Alphabet;
use lsa::dataset;
use lsa::eval::{self, Cell, Grouping};
use lsa::figures;
use lsa::interp;
use lsa::llmprobe::{self, ProbeConfig};
use lsa::model::load_checkpoint;
use lsa::rasp;
use lsa::taskgen::{self, DatasetConfig};
use lsa::train::{replicate, train, BatchingStrategy, TrainConfig};
use lsa::transform::{TransformClass, Transformation};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "lsa", about = "Letter-string analogy lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset splits and out-of-distribution suites.
    Gen(GenArgs),
    /// Train one or more replication runs on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint over dataset suites.
    Eval(EvalArgs),
    /// Mechanistic analyses on a trained checkpoint.
    Interp(InterpArgs),
    /// Run a symbolic restricted-attention program.
    Rasp(RaspArgs),
    /// Query an external chat model over a task suite.
    Probe(ProbeArgs),
    /// Join evaluation artifacts into figure CSVs and SVGs.
    Report(ReportArgs),
}

#[derive(clap::Args)]
struct InterpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for CSVs and SVG figures.
    #[arg(long)]
    out: PathBuf,
    /// Probe-set size per analysis.
    #[arg(long, default_value_t = 200)]
    probe_tasks: usize,
    /// Base-run length shared by all probe tasks (fixed geometry).
    #[arg(long, default_value_t = 3)]
    length: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(clap::Subcommand)]
enum RaspCommand {
    /// Interpret a named program on one task string.
    Run {
        #[arg(value_parser = ["predecessor"])]
        program: String,
        /// Task string, e.g. "abcdefghij|ghi>fhi|bcd".
        #[arg(long)]
        input: String,
        /// Directory for selector heatmap SVGs.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RaspArgs {
    #[command(subcommand)]
    command: RaspCommand,
}

#[derive(clap::Args)]
struct ProbeArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test_id")]
    suite: String,
    /// Cap on the number of tasks queried.
    #[arg(long)]
    limit: Option<usize>,
    /// Chat-completions endpoint URL.
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    model: String,
    /// Environment variable holding the API key (value is never stored).
    #[arg(long, default_value = "LSA_PROBE_API_KEY")]
    credential_env: String,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Local checkpoint to evaluate on the same suite for a joined table.
    #[arg(long)]
    local_checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// Figure to emit: `alphabets` (seen-vs-new curve) or `suites` (bars).
    #[arg(long, value_parser = ["alphabets", "suites"])]
    figure: String,
    /// Comma-separated report directories holding eval_suites.csv.
    #[arg(long)]
    inputs: String,
    /// Comma-separated x-axis values (alphabet pool sizes), one per input.
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct GenArgs {
    /// JSON dataset configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given.
    #[arg(long, default_value = "desk", value_parser = ["desk", "full_no_copy", "full_copy"])]
    profile: String,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Include copy tasks (half the in-distribution stream).
    #[arg(long)]
    copy: Option<bool>,
    #[arg(long)]
    n_examples: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    #[arg(long)]
    test_id_size: Option<usize>,
    #[arg(long)]
    ood_suite_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the dataset files and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Directory produced by `lsa gen`.
    #[arg(long)]
    dataset: PathBuf,
    /// Run directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// JSON training configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    batching: Option<BatchingStrategy>,
    #[arg(long)]
    val_subsample: Option<usize>,
    /// Number of replication runs (run_<i> subdirectories when > 1).
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Checkpoint file to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory the suites come from.
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated suite names, or `all`.
    #[arg(long, default_value = "all")]
    suites: String,
    /// Report directory; defaults to `<dataset>/reports`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit the 2×2 seen/new accuracy table on stdout.
    #[arg(long)]
    cells: bool,
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))
}

fn snapshot<T: serde::Serialize>(value: &T, dir: &Path, name: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(dir.join(name), body + "\n")?;
    Ok(())
}

fn run_gen(args: GenArgs) -> Result<()> {
    let mut config: DatasetConfig = match &args.config {
        Some(path) => load_json(path)?,
        None => match args.profile.as_str() {
            "full_no_copy" => DatasetConfig::full_no_copy(),
            "full_copy" => DatasetConfig::full_copy(),
            _ => DatasetConfig::desk("desk", 20, true, 1, 1),
        },
    };
    if let Some(v) = args.name {
        config.name = v;
    }
    if let Some(v) = args.pool_size {
        config.alphabet_pool_size = v;
    }
    if let Some(v) = args.copy {
        config.include_copy = v;
    }
    if let Some(v) = args.n_examples {
        config.n_examples = v;
    }
    if let Some(v) = args.train_size {
        config.train_size = v;
    }
    if let Some(v) = args.val_size {
        config.val_size = v;
    }
    if let Some(v) = args.test_id_size {
        config.test_id_size = v;
    }
    if let Some(v) = args.ood_suite_size {
        config.ood_suite_size = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    snapshot(&config, &args.out, "config.json")?;
    let manifest = dataset::generate(&config, &args.out)?;
    println!("dataset `{}` written to {}", config.name, args.out.display());
    for (file, n) in &manifest.files {
        println!("  {file}: {n} tasks");
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &args.config {
        Some(path) => load_json(path)?,
        None => TrainConfig::new(20, 0),
    };
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.model_seed {
        config.model_seed = v;
    }
    if let Some(v) = args.batching {
        config.batching = v;
    }
    if let Some(v) = args.val_subsample {
        config.val_subsample = v;
    }
    let train_set = dataset::load_split(&args.dataset, "train")?;
    let val_set = dataset::load_split(&args.dataset, "val")?;
    snapshot(&config, &args.out, "config.json")?;
    if args.runs == 1 {
        let outcome = train(&train_set, &val_set, &config, &args.out)?;
        println!("final checkpoint: {}", outcome.final_checkpoint.display());
    } else {
        let outcomes = replicate(&train_set, &val_set, &config, args.runs, &args.out)?;
        for (i, o) in outcomes.iter().enumerate() {
            println!("run {i}: {}", o.final_checkpoint.display());
        }
    }
    Ok(())
}

/// Which generalization cell a suite's results belong to.
fn suite_cell(name: &str) -> Cell {
    let new_alphabet = name.ends_with("new_alpha");
    let class = if name.contains("comp") {
        TransformClass::Compositional
    } else if name.contains("novel") {
        TransformClass::Novel
    } else {
        TransformClass::Seen
    };
    Cell { new_alphabet, class }
}

const ALL_SUITES: [&str; 8] = [
    "val",
    "test_id",
    "ood_seen_new_alpha",
    "ood_comp_seen_alpha",
    "ood_comp_new_alpha",
    "ood_novel_seen_alpha",
    "ood_novel_new_alpha",
    "ood_copy_check",
];

fn run_eval(args: EvalArgs) -> Result<()> {
    let (params, meta) = load_checkpoint(&args.checkpoint)?;
    let suites: Vec<String> = if args.suites == "all" {
        ALL_SUITES.iter().map(|s| s.to_string()).collect()
    } else {
        args.suites.split(',').map(|s| s.trim().to_string()).collect()
    };
    let out_dir = args.out.clone().unwrap_or_else(|| args.dataset.join("reports"));
    std::fs::create_dir_all(&out_dir)?;
    let mut cell_rows = Vec::new();
    for suite in &suites {
        let tasks = dataset::load_split(&args.dataset, suite)
            .with_context(|| format!("loading suite `{suite}`"))?;
        let results = eval::evaluate(&params, &tasks, suite_cell(suite))?;
        let acc = eval::accuracy(&results).unwrap_or(f64::NAN);
        println!("{suite}: {:.4} ({} tasks)", acc, results.len());
        let body = serde_json::to_string(&results)?;
        std::fs::write(out_dir.join(format!("eval_{suite}.json")), body)?;
        let per_tag = eval::group_counts(&results, Grouping::Transformation);
        let table = eval::aggregate(&[per_tag], false, 0)?;
        std::fs::write(out_dir.join(format!("eval_{suite}_by_transformation.csv")), eval::aggregate_to_csv(&table))?;
        cell_rows.push((suite.clone(), acc, results.len()));
    }
    let mut csv = String::from("suite,accuracy,n_tasks\n");
    for (suite, acc, n) in &cell_rows {
        csv.push_str(&format!("{suite},{acc:.6},{n}\n"));
    }
    std::fs::write(out_dir.join("eval_suites.csv"), csv)?;
    if args.cells {
        println!("cell table (checkpoint epoch {}):", meta.epoch);
        for (suite, acc, _) in &cell_rows {
            let cell = suite_cell(suite);
            println!("  {:<24} {:<28} {:.4}", suite, cell.label(), acc);
        }
    }
    Ok(())
}

fn run_interp(args: InterpArgs) -> Result<()> {
    let (params, _meta) = load_checkpoint(&args.checkpoint)?;
    std::fs::create_dir_all(&args.out)?;
    let alphabet = Alphabet::standard();
    let probes = interp::fixed_geometry_tasks(
        Transformation::Predecessor,
        &alphabet,
        args.probe_tasks,
        args.length,
        args.seed,
    )?;

    // matching-head scan
    let scan_probe = &probes[..probes.len().min(32)];
    let scores = interp::matching_head_scores(&params, scan_probe)?;
    let mut csv = String::from("layer,head,selector_similarity\n");
    for ((l, h), s) in &scores {
        csv.push_str(&format!("{l},{h},{s:.6}\n"));
    }
    std::fs::write(args.out.join("matching_heads.csv"), csv)?;
    let ((top_layer, top_head), top_score) = scores[0];
    println!("top matching head: layer {top_layer} head {top_head} (similarity {top_score:.4})");

    // mean attention at the top head
    let mean = interp::mean_attention(&params, scan_probe, lsa::model::Component::Encoder, top_layer)?;
    let m = &mean[top_head];
    let labels: Vec<String> = (0..m.dim().0).map(|i| i.to_string()).collect();
    let m64 = m.mapv(|x| x as f64);
    std::fs::write(
        args.out.join("mean_attention_top_head.svg"),
        figures::heatmap(m64.view(), &labels, &labels, &format!("mean attention L{top_layer}H{top_head}")),
    )?;

    // patching: successor donors into predecessor targets
    let pairs = interp::paired_pred_succ_tasks(&alphabet, args.probe_tasks, args.length, args.seed ^ 0x9E37)?;
    let mut flips = 0usize;
    let mut changed = 0usize;
    let mut patch_log = String::new();
    for (target, donor) in &pairs {
        let spec = interp::PatchSpec { layer: top_layer, head: top_head, donor: donor.clone(), target: target.clone() };
        let out = interp::patch_attention(&params, &spec)?;
        let succ_answer =
            taskgen::oracle_answer(Transformation::Successor, &target.alphabet, &target.query, None)?.spaced();
        if out.patched == succ_answer {
            flips += 1;
        }
        if out.flipped {
            changed += 1;
        }
        patch_log.push_str(&serde_json::to_string(&serde_json::json!({
            "spec": {
                "component": "encoder",
                "layer": top_layer,
                "head": top_head,
                "donor_query": donor.query.spaced(),
                "target_query": target.query.spaced(),
            },
            "baseline": out.baseline,
            "patched": out.patched,
            "flipped": out.flipped,
        }))?);
        patch_log.push('\n');
    }
    std::fs::write(args.out.join("patches.jsonl"), patch_log)?;
    let flip_rate = flips as f64 / pairs.len() as f64;
    println!(
        "patching L{top_layer}H{top_head}: {flips}/{} exact successor flips ({:.1}%), {changed} changed",
        pairs.len(),
        100.0 * flip_rate
    );

    // role PCA
    let pca_probe = &probes[..probes.len().min(50)];
    let pca = interp::role_pca(&params, pca_probe)?;
    let mut csv = String::from("boundary,separation\n");
    for (b, s) in pca.separation.iter().enumerate() {
        csv.push_str(&format!("{b},{s:.6}\n"));
    }
    std::fs::write(args.out.join("role_separation.csv"), csv)?;
    let role_names: Vec<String> =
        ["alphabet", "example_in", "example_out", "query", "separator", "arrow"].map(String::from).into();
    for (b, pts) in pca.boundaries.iter().enumerate() {
        let scatter: Vec<(f64, f64, usize)> = pts.iter().map(|(r, p)| (p[0], p[1], *r as usize)).collect();
        std::fs::write(
            args.out.join(format!("role_pca_boundary_{b}.svg")),
            figures::scatter(&scatter, &role_names, &format!("residual roles, boundary {b}")),
        )?;
    }

    // mapping invariance
    let inv_probe = &probes[..probes.len().min(50)];
    let cosines = interp::mapping_invariance(&params, inv_probe)?;
    let n = cosines.dim().0;
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += cosines[[i, j]];
            }
        }
    }
    let mean_cos = off / (n * (n - 1)) as f64;
    println!("mapping invariance: mean pairwise cosine {mean_cos:.4} over {n} tasks");
    let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    std::fs::write(
        args.out.join("mapping_invariance.svg"),
        figures::heatmap(cosines.view(), &labels, &labels, "example-out representation cosines"),
    )?;

    // elimination
    let elim = interp::elimination_scores(&params, &probes[0])?;
    let mut csv = String::from("position,role,attn_to_terminator,norm_ratio\n");
    for s in &elim.scores {
        csv.push_str(&format!("{},{:?},{:.6},{:.6}\n", s.position, s.role, s.attn_to_terminator, s.norm_ratio));
    }
    std::fs::write(args.out.join("elimination.csv"), csv)?;

    let summary = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "top_head": {"layer": top_layer, "head": top_head, "similarity": top_score},
        "patch_flip_rate": flip_rate,
        "role_separation": pca.separation,
        "mapping_invariance_mean_cosine": mean_cos,
        "terminator_position": elim.terminator_position,
    });
    std::fs::write(args.out.join("interp_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

fn run_rasp(args: RaspArgs) -> Result<()> {
    let RaspCommand::Run { program, input, heatmaps } = args.command;
    match program.as_str() {
        "predecessor" => {
            let out = rasp::run_predecessor_program(&input)?;
            println!("{}", out.answer.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
            if let Some(dir) = heatmaps {
                std::fs::create_dir_all(&dir)?;
                let chars: Vec<String> = input.chars().map(|c| c.to_string()).collect();
                for (name, sel) in &out.selectors {
                    let m = sel.cells.mapv(|b| if b { 1.0 } else { 0.0 });
                    std::fs::write(
                        dir.join(format!("{name}.svg")),
                        figures::heatmap(m.view(), &chars, &chars, name),
                    )?;
                }
                println!("selector heatmaps written to {}", dir.display());
            }
        }
        other => bail!("unknown program `{other}`"),
    }
    Ok(())
}

fn run_probe(args: ProbeArgs) -> Result<()> {
    let mut tasks = dataset::load_split(&args.dataset, &args.suite)?;
    if let Some(limit) = args.limit {
        tasks.truncate(limit);
    }
    let mut config = ProbeConfig::new(args.endpoint, args.model.clone(), args.credential_env);
    config.max_concurrency = args.concurrency;
    std::fs::create_dir_all(&args.out)?;
    snapshot(&config, &args.out, "probe_config.json")?;
    let cell = suite_cell(&args.suite);
    let report = llmprobe::run_probe(&config, &tasks, Some(&args.out.join("probe_results.jsonl")))?;
    if let Some(err) = &report.aborted {
        eprintln!("probe aborted after {} results: {err}", report.results.len());
    }
    println!(
        "probe `{}` on {}: accuracy {:?}, parse failures {:?}",
        args.model,
        args.suite,
        report.accuracy(),
        report.parse_failure_rate()
    );
    let probe_rows = report.to_eval_results(&tasks, cell);
    let probe_table = eval::aggregate(&[eval::group_counts(&probe_rows, Grouping::Transformation)], false, 0)?;
    std::fs::write(args.out.join("probe_by_transformation.csv"), eval::aggregate_to_csv(&probe_table))?;
    let mut joined = vec![(args.model.as_str(), probe_table.as_slice())];
    let local_table;
    if let Some(ckpt) = &args.local_checkpoint {
        let (params, _) = load_checkpoint(ckpt)?;
        let local_rows = eval::evaluate(&params, &tasks, cell)?;
        local_table = eval::aggregate(&[eval::group_counts(&local_rows, Grouping::Transformation)], false, 0)?;
        joined.insert(0, ("local", local_table.as_slice()));
    }
    std::fs::write(args.out.join("figure2.csv"), llmprobe::joined_csv(&joined))?;
    let bars: Vec<figures::Bar> = joined
        .iter()
        .flat_map(|(source, rows)| {
            rows.iter().map(move |r| (format!("{source}:{}", r.group), r.pooled_accuracy, None))
        })
        .collect();
    std::fs::write(
        args.out.join("figure2.svg"),
        figures::bar_chart(&bars, "local vs external accuracy", "accuracy"),
    )?;
    if report.aborted.is_some() {
        bail!("probe aborted; partial results preserved in {}", args.out.display());
    }
    Ok(())
}

fn read_suite_csv(dir: &Path) -> Result<Vec<(String, f64)>> {
    let body = std::fs::read_to_string(dir.join("eval_suites.csv"))
        .with_context(|| format!("reading {}/eval_suites.csv", dir.display()))?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let mut parts = line.split(',');
        let suite = parts.next().unwrap_or_default().to_string();
        let acc: f64 = parts.next().unwrap_or("nan").parse()?;
        out.push((suite, acc));
    }
    Ok(out)
}

fn run_report(args: ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let inputs: Vec<PathBuf> = args.inputs.split(',').map(PathBuf::from).collect();
    match args.figure.as_str() {
        "alphabets" => {
            let labels: Vec<f64> = match &args.labels {
                Some(l) => l.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?,
                None => (0..inputs.len()).map(|i| i as f64).collect(),
            };
            if labels.len() != inputs.len() {
                bail!("--labels must have one value per input");
            }
            let mut seen = Vec::new();
            let mut new = Vec::new();
            let mut csv = String::from("alphabets,seen_alphabet_accuracy,new_alphabet_accuracy\n");
            for (dir, &x) in inputs.iter().zip(&labels) {
                let rows = read_suite_csv(dir)?;
                let get = |name: &str| rows.iter().find(|(s, _)| s == name).map(|(_, a)| *a);
                let s = get("test_id").context("test_id row missing")?;
                let n = get("ood_seen_new_alpha").context("ood_seen_new_alpha row missing")?;
                csv.push_str(&format!("{x},{s:.6},{n:.6}\n"));
                seen.push((x, s));
                new.push((x, n));
            }
            std::fs::write(args.out.join("alphabets.csv"), &csv)?;
            let series = vec![
                figures::LineSeries { name: "seen alphabets".into(), points: seen, band: None },
                figures::LineSeries { name: "new alphabets".into(), points: new, band: None },
            ];
            std::fs::write(
                args.out.join("alphabets.svg"),
                figures::line_chart(&series, "accuracy vs alphabet pool size", "alphabet pool size", "accuracy"),
            )?;
            print!("{csv}");
        }
        "suites" => {
            if inputs.len() != 1 {
                bail!("--figure suites takes exactly one input directory");
            }
            let rows = read_suite_csv(&inputs[0])?;
            let bars: Vec<figures::Bar> = rows.iter().map(|(s, a)| (s.clone(), *a, None)).collect();
            std::fs::write(args.out.join("suites.svg"), figures::bar_chart(&bars, "suite accuracy", "accuracy"))?;
            let mut csv = String::from("suite,accuracy\n");
            for (s, a) in &rows {
                csv.push_str(&format!("{s},{a:.6}\n"));
            }
            std::fs::write(args.out.join("suites.csv"), csv)?;
        }
        other => bail!("unknown figure `{other}`"),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Interp(args) => run_interp(args),
        Command::Rasp(args) => run_rasp(args),
        Command::Probe(args) => run_probe(args),
        Command::Report(args) => run_report(args),
    }?;
    Ok(())
}
