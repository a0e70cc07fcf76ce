//! Command-line front end: one binary routing every pipeline stage.
//!
//! Exit codes: 0 success, 1 domain failure (bad image, rejected pair,
//! training divergence, ...), 2 usage errors. `--seed` threads the
//! master seed, `--threads` (or RETOUCH_THREADS) caps parallelism;
//! one worker reproduces many bitwise. Config files are flat JSON
//! mirroring the in-code config types, and explicit flags win over
//! file values.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::bench::{evaluate, generate_tasks, BenchSplit, BenchTask};
use crate::corpus;
use crate::dsl::{parse_program, serialize_program};
use crate::engine::{execute, PipelineConstants};
use crate::goal::GoalDescriptor;
use crate::grm::{featurize_pairs, GrmModel, GrmTrainConfig};
use crate::metrics::report;
use crate::perturb::{build_pair, PairConfig, PairSample, PerturbStrategy};
use crate::pgrt::{run_alternation, PgrtConfig};
use crate::policy::{
    decode_action, encode_program, policy_features, GrpoConfig, PolicyModel, RolloutTask,
    SftConfig, SftDemo,
};
use crate::raster::{image_stats, load_image, save_image, ImageFormat};
use crate::seed::derive_seed;

fn long_version() -> &'static str {
    let text = format!(
        "{} (pipeline constants {:016x})",
        env!("CARGO_PKG_VERSION"),
        PipelineConstants::default().fingerprint()
    );
    Box::leak(text.into_boxed_str())
}

#[derive(Parser)]
#[command(
    name = "retouch",
    version,
    long_version = long_version(),
    about = "Deterministic parametric image retouching: engine, reward model, policy, and benchmark"
)]
struct Cli {
    /// Master seed for anything randomized; omitted means 0 (or the
    /// config file's seed for `pgrt`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap; RETOUCH_THREADS is the env equivalent and
    /// this flag wins when both are set. Results never depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply an edit program to an image.
    Apply(ApplyArgs),
    /// Check a program and print its canonical form.
    Parse(ParseArgs),
    /// Compare two images (L1, L2, PSNR, SSIM).
    Metrics(MetricsArgs),
    /// Build preference-pair corpora.
    Pairs(PairsArgs),
    /// Train the reward model on a pair corpus.
    TrainReward(TrainRewardArgs),
    /// Score a reward model's pairwise accuracy on a pair corpus.
    EvalReward(EvalRewardArgs),
    /// Train the editing policy (behavior cloning and/or RL).
    TrainPolicy(TrainPolicyArgs),
    /// Run a policy on one image and goal.
    Infer(InferArgs),
    /// Run the policy-guided reward training alternation.
    Pgrt(PgrtArgs),
    /// Score a policy on the procedural benchmark.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ApplyArgs {
    /// Input image (PPM or PNG).
    #[arg(long = "in")]
    input: PathBuf,
    /// Edit program text, e.g. "{exposure=+0.9; contrast=-30}".
    #[arg(long, conflicts_with = "program_file", required_unless_present = "program_file")]
    program: Option<String>,
    /// Read the program from a file instead.
    #[arg(long)]
    program_file: Option<PathBuf>,
    /// Output image; the extension picks the format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ParseArgs {
    /// Program text to validate.
    program: String,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Emit one compact JSON object instead of plain lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PairsArgs {
    #[command(subcommand)]
    action: PairsAction,
}

#[derive(Subcommand)]
enum PairsAction {
    /// Generate synthetic sources and perturbation pairs.
    Build(PairsBuildArgs),
}

#[derive(Args)]
struct PairsBuildArgs {
    /// Pairs to build.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Output corpus directory (manifest.jsonl + images/).
    #[arg(long)]
    out: PathBuf,
    /// Weakening strategy: omit, misadjust, or single_param_bias.
    #[arg(long, default_value = "single_param_bias")]
    strategy: String,
    /// Ops removed by the omit strategy.
    #[arg(long, default_value_t = 1)]
    omit_count: usize,
    /// Jitter width for misadjust, as a fraction of each range.
    #[arg(long, default_value_t = 0.3)]
    sigma_frac: f64,
    /// Minimum weak-to-strong tone distance.
    #[arg(long, default_value_t = 2.0)]
    tau: f64,
    /// Maximum weak-to-source tone distance.
    #[arg(long, default_value_t = 120.0)]
    plausibility_max: f64,
}

#[derive(Args)]
struct TrainRewardArgs {
    /// Pair corpus directory.
    #[arg(long)]
    pairs: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    out: PathBuf,
    /// supervised, pairwise, or both (supervised, pairwise, then a
    /// short supervised pass to re-pin the score scale).
    #[arg(long, default_value = "both")]
    stage: String,
    /// Warm-start from an existing model instead of a fresh init.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    /// Epochs per selected stage.
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Re-anchor pass length for --stage both.
    #[arg(long, default_value_t = 120)]
    anchor_epochs: usize,
    /// Re-anchor pass learning rate for --stage both.
    #[arg(long, default_value_t = 0.02)]
    anchor_learning_rate: f64,
}

#[derive(Args)]
struct EvalRewardArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainPolicyArgs {
    /// Task corpus with ground-truth programs (see `bench
    /// --export-tasks`).
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the trained policy.
    #[arg(long)]
    out: PathBuf,
    /// sft, rl, or both.
    #[arg(long, default_value = "both")]
    stage: String,
    /// Reward model for the rl stage.
    #[arg(long)]
    reward: Option<PathBuf>,
    /// Warm-start policy (required for rl without sft).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Ridge strength for the sft stage.
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    /// KL penalty toward the rl stage's starting policy.
    #[arg(long, default_value_t = 0.15)]
    kl_beta: f64,
    /// Corpus entries used as rollout tasks.
    #[arg(long, default_value_t = 16)]
    tasks: usize,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    image: PathBuf,
    /// Goal as inline JSON, e.g. '{"style_tag":"warm"}'.
    #[arg(long, conflicts_with = "goal_file", required_unless_present = "goal_file")]
    goal: Option<String>,
    #[arg(long)]
    goal_file: Option<PathBuf>,
    #[arg(long)]
    policy: PathBuf,
    /// Render the edit here as well as printing the program.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PgrtArgs {
    /// Flat JSON config; omitted fields take defaults, flags below
    /// override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    pairs_per_round: Option<usize>,
    #[arg(long)]
    eval_pairs: Option<usize>,
    #[arg(long)]
    bench_n: Option<usize>,
    /// Output directory: report.csv, report.md, grm.txt, policy.txt.
    /// A failed run still writes the partial report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// quality, style, local, or all.
    #[arg(long, default_value = "all")]
    split: String,
    /// Tasks per split.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Policy to score; omitted scores the do-nothing policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save the generated tasks as a corpus directory.
    #[arg(long)]
    export_tasks: Option<PathBuf>,
}

fn thread_cap(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("RETOUCH_THREADS").ok().and_then(|v| v.parse().ok())
    })
}

fn read_program_arg(
    text: &Option<String>,
    file: &Option<PathBuf>,
) -> Result<crate::dsl::EditProgram, String> {
    let source = match (text, file) {
        (Some(t), None) => t.clone(),
        (None, Some(p)) => {
            std::fs::read_to_string(p).map_err(|e| format!("reading {}: {e}", p.display()))?
        }
        _ => return Err("exactly one of --program/--program-file is required".into()),
    };
    parse_program(source.trim()).map_err(|e| e.to_string())
}

fn load_goal(text: &Option<String>, file: &Option<PathBuf>) -> Result<GoalDescriptor, String> {
    let source = match (text, file) {
        (Some(t), None) => t.clone(),
        (None, Some(p)) => {
            std::fs::read_to_string(p).map_err(|e| format!("reading {}: {e}", p.display()))?
        }
        _ => return Err("exactly one of --goal/--goal-file is required".into()),
    };
    let goal: GoalDescriptor =
        serde_json::from_str(&source).map_err(|e| format!("bad goal json: {e}"))?;
    goal.validate().map_err(|e| e.to_string())?;
    Ok(goal)
}

/// Synthetic (source, strong edit, goal) triples for pair building,
/// round-robin over the three task flavors.
fn synthetic_sources(n: usize, seed: u64) -> Vec<BenchTask> {
    let per_split = n.div_ceil(3);
    let by_split: Vec<Vec<BenchTask>> = BenchSplit::ALL
        .iter()
        .map(|&s| generate_tasks(s, per_split, seed))
        .collect();
    (0..per_split)
        .flat_map(|i| by_split.iter().map(move |tasks| tasks[i].clone()))
        .take(n)
        .collect()
}

fn cmd_apply(args: &ApplyArgs) -> Result<(), String> {
    let program = read_program_arg(&args.program, &args.program_file)?;
    let img = load_image(&args.input).map_err(|e| e.to_string())?;
    let out = execute(&img, &program);
    let format = ImageFormat::from_path(&args.out).map_err(|e| e.to_string())?;
    save_image(&out, &args.out, format).map_err(|e| e.to_string())?;
    Ok(())
}

fn cmd_parse(args: &ParseArgs) -> Result<(), String> {
    let program = parse_program(&args.program).map_err(|e| e.to_string())?;
    println!("{}", serialize_program(&program));
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs) -> Result<(), String> {
    let a = load_image(&args.a).map_err(|e| e.to_string())?;
    let b = load_image(&args.b).map_err(|e| e.to_string())?;
    let m = report(&a, &b).map_err(|e| e.to_string())?;
    if args.json {
        // Shortest-form floats ("0", not "0.0"), fixed key order.
        println!(
            "{{\"l1\":{},\"l2\":{},\"psnr\":{},\"ssim\":{}}}",
            m.l1, m.l2, m.psnr, m.ssim
        );
    } else {
        println!("l1 {}", m.l1);
        println!("l2 {}", m.l2);
        println!("psnr {}", m.psnr);
        println!("ssim {}", m.ssim);
    }
    Ok(())
}

fn parse_strategy(args: &PairsBuildArgs) -> Result<PerturbStrategy, String> {
    match args.strategy.as_str() {
        "omit" => Ok(PerturbStrategy::Omit { count: args.omit_count }),
        "misadjust" => Ok(PerturbStrategy::Misadjust { sigma_frac: args.sigma_frac }),
        "single_param_bias" => Ok(PerturbStrategy::single_param_bias()),
        other => Err(format!(
            "unknown strategy `{other}` (omit, misadjust, single_param_bias)"
        )),
    }
}

fn cmd_pairs_build(args: &PairsBuildArgs, seed: u64) -> Result<(), String> {
    let strategy = parse_strategy(args)?;
    let config = PairConfig {
        tau: args.tau,
        plausibility_max: args.plausibility_max,
        max_tries: 16,
    };
    // Overprovision sources so rejected pairs don't starve the batch.
    let sources = synthetic_sources(args.n * 2, derive_seed(seed, "cli-sources", 0));
    let mut pairs: Vec<PairSample> = Vec::with_capacity(args.n);
    let mut rejected = 0usize;
    for (i, task) in sources.iter().enumerate() {
        if pairs.len() >= args.n {
            break;
        }
        match build_pair(
            &task.before,
            &task.gt_program,
            &task.goal,
            &strategy,
            &config,
            derive_seed(seed, "cli-pair", i as u64),
        ) {
            Ok(p) => pairs.push(p),
            Err(_) => rejected += 1,
        }
    }
    if pairs.len() < args.n {
        return Err(format!(
            "only {} of {} pairs were accepted ({rejected} rejected); relax --tau or --plausibility-max",
            pairs.len(),
            args.n
        ));
    }
    corpus::save_pairs(&args.out, &pairs).map_err(|e| e.to_string())?;
    eprintln!(
        "wrote {} pairs to {} ({rejected} sources rejected along the way)",
        pairs.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train_reward(args: &TrainRewardArgs, seed: u64) -> Result<(), String> {
    let pairs = corpus::load_pairs(&args.pairs).map_err(|e| e.to_string())?;
    let features = featurize_pairs(&pairs);
    let mut model = match &args.init {
        Some(path) => GrmModel::load(path).map_err(|e| e.to_string())?,
        None => GrmModel::init(derive_seed(seed, "grm-init", 0)),
    };
    let cfg = GrmTrainConfig { learning_rate: args.learning_rate, epochs: args.epochs };
    match args.stage.as_str() {
        "supervised" => {
            model.train_supervised(&features, &cfg).map_err(|e| e.to_string())?;
        }
        "pairwise" => {
            model.train_pairwise(&features, &cfg).map_err(|e| e.to_string())?;
        }
        "both" => {
            model.train_supervised(&features, &cfg).map_err(|e| e.to_string())?;
            model.train_pairwise(&features, &cfg).map_err(|e| e.to_string())?;
            let anchor = GrmTrainConfig {
                learning_rate: args.anchor_learning_rate,
                epochs: args.anchor_epochs,
            };
            model.train_supervised(&features, &anchor).map_err(|e| e.to_string())?;
        }
        other => return Err(format!("unknown stage `{other}` (supervised, pairwise, both)")),
    }
    model.save(&args.out).map_err(|e| e.to_string())?;
    let acc = model.eval_pairwise_accuracy(&features).map_err(|e| e.to_string())?;
    eprintln!("trained on {} pairs; training-set accuracy {acc:.4}", features.len());
    Ok(())
}

fn cmd_eval_reward(args: &EvalRewardArgs) -> Result<(), String> {
    let pairs = corpus::load_pairs(&args.pairs).map_err(|e| e.to_string())?;
    let features = featurize_pairs(&pairs);
    let model = GrmModel::load(&args.model).map_err(|e| e.to_string())?;
    let acc = model.eval_pairwise_accuracy(&features).map_err(|e| e.to_string())?;
    if args.json {
        println!("{{\"accuracy\":{acc},\"pairs\":{}}}", features.len());
    } else {
        println!("accuracy {acc} on {} pairs", features.len());
    }
    Ok(())
}

fn cmd_train_policy(args: &TrainPolicyArgs, seed: u64) -> Result<(), String> {
    let tasks = corpus::load_tasks(&args.corpus).map_err(|e| e.to_string())?;
    if tasks.is_empty() {
        return Err("the task corpus is empty".into());
    }
    let mut policy = match &args.init {
        Some(path) => PolicyModel::load(path).map_err(|e| e.to_string())?,
        None => PolicyModel::init(),
    };
    let run_sft = matches!(args.stage.as_str(), "sft" | "both");
    let run_rl = matches!(args.stage.as_str(), "rl" | "both");
    if !run_sft && !run_rl {
        return Err(format!("unknown stage `{}` (sft, rl, both)", args.stage));
    }
    if run_sft {
        let demos: Vec<SftDemo> = tasks
            .iter()
            .map(|t| SftDemo {
                features: policy_features(&image_stats(&t.before), &t.goal),
                action: encode_program(&t.gt_program),
            })
            .collect();
        policy
            .fit_sft(&demos, &SftConfig { lambda: args.lambda })
            .map_err(|e| e.to_string())?;
        eprintln!("cloned {} demonstrations", demos.len());
    }
    if run_rl {
        let reward_path =
            args.reward.as_ref().ok_or("the rl stage needs --reward MODEL")?;
        let grm = GrmModel::load(reward_path).map_err(|e| e.to_string())?;
        let rollout: Vec<RolloutTask> = tasks
            .iter()
            .take(args.tasks)
            .map(|t| RolloutTask { before: t.before.clone(), goal: t.goal.clone() })
            .collect();
        let cfg = GrpoConfig {
            steps: args.steps,
            learning_rate: args.learning_rate,
            group_size: args.group_size,
            kl_beta: args.kl_beta,
        };
        let trace = policy
            .train_grpo(&grm, &rollout, &cfg, derive_seed(seed, "cli-grpo", 0))
            .map_err(|e| e.to_string())?;
        eprintln!(
            "rl on {} tasks: reward {:.3} -> {:.3} ({} degenerate groups)",
            rollout.len(),
            trace.mean_rewards.first().copied().unwrap_or(f64::NAN),
            trace.mean_rewards.last().copied().unwrap_or(f64::NAN),
            trace.degenerate_groups
        );
    }
    policy.save(&args.out).map_err(|e| e.to_string())?;
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> Result<(), String> {
    let img = load_image(&args.image).map_err(|e| e.to_string())?;
    let goal = load_goal(&args.goal, &args.goal_file)?;
    let policy = PolicyModel::load(&args.policy).map_err(|e| e.to_string())?;
    let features = policy_features(&image_stats(&img), &goal);
    let program = decode_action(&policy.mean_action(&features), goal.region_hint.as_ref());
    println!("{}", serialize_program(&program));
    if let Some(out) = &args.out {
        let rendered = execute(&img, &program);
        let format = ImageFormat::from_path(out).map_err(|e| e.to_string())?;
        save_image(&rendered, out, format).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_pgrt(args: &PgrtArgs, seed: Option<u64>) -> Result<(), String> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("reading {}: {e}", path.display()))?;
            serde_json::from_str::<PgrtConfig>(&text)
                .map_err(|e| format!("bad config {}: {e}", path.display()))?
        }
        None => PgrtConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(r) = args.rounds {
        config.rounds = r;
    }
    if let Some(p) = args.pairs_per_round {
        config.pairs_per_round = p;
    }
    if let Some(e) = args.eval_pairs {
        config.eval_pairs = e;
    }
    if let Some(b) = args.bench_n {
        config.bench_n = b;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
    let write_report = |report: &crate::pgrt::PgrtReport| -> Result<(), String> {
        std::fs::write(args.out.join("report.csv"), report.to_csv())
            .map_err(|e| e.to_string())?;
        std::fs::write(args.out.join("report.md"), report.to_markdown())
            .map_err(|e| e.to_string())
    };
    match run_alternation(&config, &mut |line| eprintln!("{line}")) {
        Ok(run) => {
            write_report(&run.report)?;
            run.grm.save(&args.out.join("grm.txt")).map_err(|e| e.to_string())?;
            run.policy.save(&args.out.join("policy.txt")).map_err(|e| e.to_string())?;
            eprintln!("wrote report and models to {}", args.out.display());
            Ok(())
        }
        Err(e) => {
            write_report(&e.partial)?;
            Err(format!("{e} (partial report written to {})", args.out.display()))
        }
    }
}

fn cmd_bench(args: &BenchArgs, seed: u64) -> Result<(), String> {
    let splits: Vec<BenchSplit> = match args.split.as_str() {
        "all" => BenchSplit::ALL.to_vec(),
        other => vec![other.parse::<BenchSplit>()?],
    };
    let tasks: Vec<BenchTask> = splits
        .iter()
        .flat_map(|&s| generate_tasks(s, args.n, seed))
        .collect();
    if let Some(dir) = &args.export_tasks {
        corpus::save_tasks(dir, &tasks).map_err(|e| e.to_string())?;
        eprintln!("exported {} tasks to {}", tasks.len(), dir.display());
    }
    let policy = match &args.policy {
        Some(path) => PolicyModel::load(path).map_err(|e| e.to_string())?,
        None => PolicyModel::init(),
    };
    let report = evaluate(&policy, &tasks).map_err(|e| e.to_string())?;
    let csv = report.to_csv();
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| e.to_string())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), String> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Apply(args) => cmd_apply(args),
        Command::Parse(args) => cmd_parse(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Pairs(args) => match &args.action {
            PairsAction::Build(build) => cmd_pairs_build(build, seed),
        },
        Command::TrainReward(args) => cmd_train_reward(args, seed),
        Command::EvalReward(args) => cmd_eval_reward(args),
        Command::TrainPolicy(args) => cmd_train_policy(args, seed),
        Command::Infer(args) => cmd_infer(args),
        Command::Pgrt(args) => cmd_pgrt(args, cli.seed),
        Command::Bench(args) => cmd_bench(args, seed),
    }
}

/// Parses argv and runs; the i32 is the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout with code 0; usage
            // errors land on stderr with code 2.
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = thread_cap(cli.threads) {
        // A second call in-process would fail; the cap still applies.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Entry point for the binary.
pub fn main_entry() -> i32 {
    run_from(std::env::args_os())
}
