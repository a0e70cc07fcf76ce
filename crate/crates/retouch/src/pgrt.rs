//! Policy-guided reward training: the full alternation loop.
//!
//! Round 0 bootstraps everything from rule-based perturbations: build
//! preference pairs, train the reward model on them, clone a policy
//! from the ground-truth programs, then improve it against the reward
//! with group-relative policy gradients. The weakness of that
//! bootstrap is distribution shift: the reward model has only ever
//! judged perturbed programs, while at deployment it judges what the
//! policy writes.
//!
//! Later rounds close the gap. Each one samples fresh weak edits from
//! the current policy, mixes them with perturbed pairs at a fixed
//! ratio, fine-tunes the reward model on the mix, and trains the
//! policy another leg against the updated reward.
//!
//! Two frozen eval sets are built once: perturbed pairs from held-out
//! source images, and pairs whose weak side was sampled by the round-0
//! policy. Accuracy on the second set is the direct measure of the
//! distribution shift the alternation is meant to cure. Everything
//! downstream of the config seed is deterministic, so a rerun with the
//! same config reproduces the report byte for byte.

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bench::{
    evaluate, generate_demo_tasks, generate_tasks, BenchReport, BenchSplit, BenchTask,
};
use crate::engine::execute;
use crate::grm::{featurize_pairs, GrmModel, GrmTrainConfig, PairFeatures};
use crate::metrics::oracle_distance;
use crate::perturb::{build_pair, PairConfig, PairSample, PerturbStrategy, Provenance};
use crate::policy::{
    decode_action, encode_program, policy_features, GrpoConfig, PolicyModel, SftConfig, SftDemo,
};
use crate::raster::image_stats;
use crate::seed::{derive_seed, derive_seed_n, fnv1a_bytes};

/// Percentage of source images held out for the frozen eval sets.
pub const EVAL_SPLIT_PERCENT: u64 = 20;

/// Everything one alternation run needs, flat so a JSON config file
/// and command-line overrides stay one-to-one. Missing fields take
/// the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgrtConfig {
    /// Total alternation rounds including the perturbation-only
    /// bootstrap, so 2 means one policy-guided round after it.
    pub rounds: usize,
    /// Hidden-edit sources generated for the train/eval pool.
    pub pool_tasks: usize,
    /// Perturbed pairs the round-0 reward model bootstraps from. Kept
    /// deliberately lean: this is the regime where the bias of
    /// rule-based perturbations shows, which is what the later rounds
    /// are for.
    pub pairs_per_round: usize,
    /// Policy samples harvested per later round. Fresh perturbed pairs
    /// are drawn alongside them to hold the mix ratio, so this number
    /// sets the size of each round's training mix.
    pub policy_pairs_per_round: usize,
    /// Size cap for each frozen eval set.
    pub eval_pairs: usize,
    /// Minimum weak-to-strong tone distance for perturbed pairs.
    pub tau: f64,
    /// Maximum weak-to-source tone distance for perturbed pairs.
    pub plausibility_max: f64,
    /// Minimum weak-to-strong tone distance for policy-sampled pairs.
    /// No plausibility bound applies: whatever the policy writes is by
    /// definition what deployment looks like.
    pub delta: f64,
    /// Fraction of policy pairs in each later round's training mix.
    pub mix_ratio: f64,
    pub strategy: PerturbStrategy,
    pub grm_learning_rate: f64,
    pub grm_supervised_epochs: usize,
    pub grm_pairwise_epochs: usize,
    /// Short supervised pass after pairwise training. Ranking loss is
    /// shift-invariant, so this re-pins the 0..10 score scale.
    pub grm_anchor_learning_rate: f64,
    pub grm_anchor_epochs: usize,
    /// How many hidden edits the policy may imitate before the reward
    /// legs take over. Scarce demonstrations are the regime the
    /// alternation is for; with enough of them imitation alone wins
    /// and the reward legs have nothing to add.
    pub sft_demos: usize,
    pub sft_lambda: f64,
    pub grpo_steps: usize,
    /// Step budget for rounds after the first. The bootstrap leg
    /// explores against an untested reward; later legs fine-tune an
    /// already-trained policy against a patched one, where a full
    /// budget mostly adds drift.
    pub grpo_refine_steps: usize,
    pub grpo_learning_rate: f64,
    pub grpo_group_size: usize,
    /// KL penalty toward each round's starting policy. Defaults to
    /// zero here: tethering would mask the reward-exploitation the
    /// alternation exists to measure and repair.
    pub grpo_kl_beta: f64,
    /// Training images the policy rolls out on per GRPO step.
    pub grpo_tasks: usize,
    /// Benchmark tasks per split for the per-round score.
    pub bench_n: usize,
    pub seed: u64,
}

impl Default for PgrtConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            pool_tasks: 1000,
            pairs_per_round: 60,
            policy_pairs_per_round: 200,
            eval_pairs: 200,
            tau: 2.0,
            plausibility_max: 120.0,
            delta: 4.0,
            mix_ratio: 0.5,
            strategy: PerturbStrategy::single_param_bias(),
            grm_learning_rate: 0.05,
            grm_supervised_epochs: 150,
            grm_pairwise_epochs: 250,
            grm_anchor_learning_rate: 0.02,
            grm_anchor_epochs: 120,
            sft_demos: 800,
            sft_lambda: 1e-4,
            grpo_steps: 200,
            grpo_refine_steps: 30,
            grpo_learning_rate: 0.01,
            grpo_group_size: 8,
            grpo_kl_beta: 0.0,
            grpo_tasks: 16,
            bench_n: 16,
            seed: 0,
        }
    }
}

impl PgrtConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rounds == 0 {
            return Err("rounds must be at least 1".into());
        }
        if self.pairs_per_round == 0 || self.policy_pairs_per_round == 0 || self.eval_pairs == 0 {
            return Err("pair budgets must be positive".into());
        }
        if self.pool_tasks == 0 {
            return Err("pool_tasks must be positive".into());
        }
        if !(self.mix_ratio > 0.0 && self.mix_ratio <= 1.0) {
            return Err(format!("mix_ratio {} must be in (0, 1]", self.mix_ratio));
        }
        if self.tau < 0.0 || self.delta < 0.0 || self.plausibility_max <= 0.0 {
            return Err("distance margins must be non-negative".into());
        }
        if self.grpo_group_size < 2 {
            return Err("grpo_group_size must be at least 2".into());
        }
        if self.grpo_tasks == 0 || self.bench_n == 0 {
            return Err("grpo_tasks and bench_n must be positive".into());
        }
        if self.sft_demos == 0 {
            return Err("sft_demos must be positive".into());
        }
        Ok(())
    }
}

/// One line of the alternation report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub n_perturbed_train: usize,
    pub n_policy_train: usize,
    /// Reward-model accuracy on the frozen perturbed eval set.
    pub grm_acc_perturbed: f64,
    /// Reward-model accuracy on the frozen policy-sampled eval set.
    pub grm_acc_policy: f64,
    pub bench_l1: f64,
    pub bench_l2: f64,
    pub bench_psnr: f64,
    pub bench_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PgrtReport {
    pub rounds: Vec<RoundRecord>,
}

impl PgrtReport {
    /// Stable CSV, floats through Display: byte-identical for
    /// identical runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "round,n_perturbed_train,n_policy_train,grm_acc_perturbed,grm_acc_policy,bench_l1,bench_l2,bench_psnr,bench_ssim\n",
        );
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.round,
                r.n_perturbed_train,
                r.n_policy_train,
                r.grm_acc_perturbed,
                r.grm_acc_policy,
                r.bench_l1,
                r.bench_l2,
                r.bench_psnr,
                r.bench_ssim
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Alternation report\n\n");
        out.push_str(
            "| round | perturbed pairs | policy pairs | acc (perturbed) | acc (policy) | bench L1 | bench PSNR | bench SSIM |\n",
        );
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.4} | {:.3} | {:.3} | {:.4} |\n",
                r.round,
                r.n_perturbed_train,
                r.n_policy_train,
                r.grm_acc_perturbed,
                r.grm_acc_policy,
                r.bench_l1,
                r.bench_psnr,
                r.bench_ssim
            ));
        }
        if let (Some(first), Some(last)) = (self.rounds.first(), self.rounds.last()) {
            if self.rounds.len() > 1 {
                out.push_str(&format!(
                    "\nPolicy-pair accuracy moved {:+.4} against the round-0 reward model; perturbed-pair accuracy moved {:+.4}.\n",
                    last.grm_acc_policy - first.grm_acc_policy,
                    last.grm_acc_perturbed - first.grm_acc_perturbed,
                ));
            }
        }
        out
    }
}

/// Final artifacts of a run.
#[derive(Clone, Debug)]
pub struct PgrtRun {
    pub report: PgrtReport,
    pub grm: GrmModel,
    pub policy: PolicyModel,
}

/// A failure mid-run, carrying whatever rounds already completed so
/// callers can persist the partial report.
#[derive(Debug, Error)]
#[error("alternation failed at round {round}, stage {stage}: {source}")]
pub struct PgrtError {
    pub stage: &'static str,
    pub round: usize,
    pub source: Box<dyn std::error::Error + Send + Sync>,
    pub partial: PgrtReport,
}

/// Source images whose ids hash into the bottom
/// [`EVAL_SPLIT_PERCENT`] of the id space are eval-only.
pub(crate) fn is_eval_id(id: &str) -> bool {
    fnv1a_bytes(id.as_bytes()) % 100 < EVAL_SPLIT_PERCENT
}

/// Hidden strong edits paired with their sources. Demonstration-style
/// edits carry freehand ops the policy head cannot express, which
/// keeps imitation from collapsing into a copy of the benchmark's own
/// program family.
fn build_task_pool(config: &PgrtConfig) -> (Vec<BenchTask>, Vec<BenchTask>) {
    let pool_seed = derive_seed(config.seed, "pgrt-pool", 0);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for task in generate_demo_tasks(config.pool_tasks, pool_seed) {
        if is_eval_id(&task.id) {
            eval.push(task);
        } else {
            train.push(task);
        }
    }
    (train, eval)
}

fn build_perturbed_pairs(
    tasks: &[BenchTask],
    config: &PgrtConfig,
    tag: &str,
    round: usize,
    cap: usize,
) -> Vec<PairSample> {
    let pair_cfg = PairConfig {
        tau: config.tau,
        plausibility_max: config.plausibility_max,
        max_tries: 16,
    };
    let mut pairs = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        if pairs.len() >= cap {
            break;
        }
        let seed = derive_seed_n(config.seed, tag, &[round as u64, i as u64]);
        if let Ok(pair) = build_pair(
            &task.before,
            &task.gt_program,
            &task.goal,
            &config.strategy,
            &pair_cfg,
            seed,
        ) {
            pairs.push(pair);
        }
    }
    pairs
}

/// Samples one weak edit per task from the policy and keeps the ones
/// far enough from the strong render to carry a preference signal.
fn collect_policy_pairs(
    policy: &PolicyModel,
    tasks: &[BenchTask],
    delta: f64,
    master_seed: u64,
    tag: &str,
    round: usize,
    cap: usize,
) -> Vec<PairSample> {
    let mut pairs = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        if pairs.len() >= cap {
            break;
        }
        let seed = derive_seed_n(master_seed, tag, &[round as u64, i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = policy_features(&image_stats(&task.before), &task.goal);
        let raw = policy.sample_action(&features, &mut rng);
        let weak_program = decode_action(&raw, task.goal.region_hint.as_ref());
        let weak_img = execute(&task.before, &weak_program);
        let strong_img = execute(&task.before, &task.gt_program);
        if oracle_distance(&weak_img, &strong_img) >= delta {
            pairs.push(PairSample {
                before: task.before.clone(),
                strong_program: task.gt_program.clone(),
                weak_program,
                strong_img,
                weak_img,
                goal: task.goal.clone(),
                provenance: Provenance::Policy,
            });
        }
    }
    pairs
}

/// Perturbed pairs to blend with `n_policy` policy pairs so policy
/// pairs make up `mix_ratio` of the result.
pub(crate) fn mix_perturbed_count(n_policy: usize, mix_ratio: f64) -> usize {
    (n_policy as f64 * (1.0 - mix_ratio) / mix_ratio).round() as usize
}

fn bench_overall(
    policy: &PolicyModel,
    tasks: &[BenchTask],
    report: &PgrtReport,
    round: usize,
) -> Result<BenchReport, PgrtError> {
    evaluate(policy, tasks).map_err(|e| PgrtError {
        stage: "bench",
        round,
        source: Box::new(e),
        partial: report.clone(),
    })
}

struct FrozenEvals {
    perturbed: Vec<PairFeatures>,
    policy: Vec<PairFeatures>,
}

/// Runs the full loop. `log` receives one human-readable line per
/// stage; pass a no-op to run quietly.
pub fn run_alternation(
    config: &PgrtConfig,
    log: &mut dyn FnMut(String),
) -> Result<PgrtRun, PgrtError> {
    let mut report = PgrtReport::default();
    let fail = |stage: &'static str,
                round: usize,
                source: Box<dyn std::error::Error + Send + Sync>,
                partial: &PgrtReport| PgrtError {
        stage,
        round,
        source,
        partial: partial.clone(),
    };

    if let Err(msg) = config.validate() {
        return Err(fail("config", 0, msg.into(), &report));
    }

    let (train_tasks, eval_tasks) = build_task_pool(config);
    log(format!(
        "task pool: {} train / {} eval sources",
        train_tasks.len(),
        eval_tasks.len()
    ));
    if train_tasks.is_empty() || eval_tasks.is_empty() {
        return Err(fail("pool", 0, "task pool split left a side empty".into(), &report));
    }
    let bench_seed = derive_seed(config.seed, "pgrt-bench", 0);
    let bench_tasks: Vec<BenchTask> = BenchSplit::ALL
        .iter()
        .flat_map(|&s| generate_tasks(s, config.bench_n, bench_seed))
        .collect();

    // Round 0: everything from perturbations.
    let perturbed_train =
        build_perturbed_pairs(&train_tasks, config, "pgrt-pair", 0, config.pairs_per_round);
    log(format!("round 0: {} perturbed training pairs", perturbed_train.len()));
    if perturbed_train.is_empty() {
        return Err(fail("pairs", 0, "no perturbed pairs were accepted".into(), &report));
    }
    let perturbed_features = featurize_pairs(&perturbed_train);

    let mut grm = GrmModel::init(derive_seed(config.seed, "pgrt-grm-init", 0));
    let supervised_cfg = GrmTrainConfig {
        learning_rate: config.grm_learning_rate,
        epochs: config.grm_supervised_epochs,
    };
    let pairwise_cfg = GrmTrainConfig {
        learning_rate: config.grm_learning_rate,
        epochs: config.grm_pairwise_epochs,
    };
    let anchor_cfg = GrmTrainConfig {
        learning_rate: config.grm_anchor_learning_rate,
        epochs: config.grm_anchor_epochs,
    };
    grm.train_supervised(&perturbed_features, &supervised_cfg)
        .map_err(|e| fail("grm-supervised", 0, Box::new(e), &report))?;
    grm.train_pairwise(&perturbed_features, &pairwise_cfg)
        .map_err(|e| fail("grm-pairwise", 0, Box::new(e), &report))?;
    grm.train_supervised(&perturbed_features, &anchor_cfg)
        .map_err(|e| fail("grm-anchor", 0, Box::new(e), &report))?;

    let demos: Vec<SftDemo> = train_tasks
        .iter()
        .take(config.sft_demos)
        .map(|t| SftDemo {
            features: policy_features(&image_stats(&t.before), &t.goal),
            action: encode_program(&t.gt_program),
        })
        .collect();
    let mut policy = PolicyModel::init();
    policy
        .fit_sft(&demos, &SftConfig { lambda: config.sft_lambda })
        .map_err(|e| fail("sft", 0, Box::new(e), &report))?;

    let grpo_cfg = GrpoConfig {
        steps: config.grpo_steps,
        learning_rate: config.grpo_learning_rate,
        group_size: config.grpo_group_size,
        kl_beta: config.grpo_kl_beta,
    };
    // Roll out on sources the demonstrations never covered; cycle back
    // to the front if the pool runs short.
    let rollout: Vec<_> = train_tasks
        .iter()
        .cycle()
        .skip(config.sft_demos.min(train_tasks.len()))
        .take(config.grpo_tasks)
        .map(|t| crate::policy::RolloutTask { before: t.before.clone(), goal: t.goal.clone() })
        .collect();
    let trace = policy
        .train_grpo(&grm, &rollout, &grpo_cfg, derive_seed(config.seed, "pgrt-grpo", 0))
        .map_err(|e| fail("grpo", 0, Box::new(e), &report))?;
    log(format!(
        "round 0: grpo reward {:.3} -> {:.3}",
        trace.mean_rewards.first().copied().unwrap_or(f64::NAN),
        trace.mean_rewards.last().copied().unwrap_or(f64::NAN)
    ));

    // Frozen eval sets. The policy side is sampled from the round-0
    // policy on held-out sources and never rebuilt, so later rounds
    // are measured against a fixed yardstick.
    let evals = {
        let perturbed = build_perturbed_pairs(
            &eval_tasks,
            config,
            "pgrt-eval-perturbed",
            0,
            config.eval_pairs,
        );
        let policy_pairs = collect_policy_pairs(
            &policy,
            &eval_tasks,
            config.delta,
            config.seed,
            "pgrt-eval-policy",
            0,
            config.eval_pairs,
        );
        log(format!(
            "frozen evals: {} perturbed, {} policy pairs",
            perturbed.len(),
            policy_pairs.len()
        ));
        if perturbed.is_empty() || policy_pairs.is_empty() {
            return Err(fail("eval-pairs", 0, "an eval set came out empty".into(), &report));
        }
        FrozenEvals {
            perturbed: featurize_pairs(&perturbed),
            policy: featurize_pairs(&policy_pairs),
        }
    };

    let record_round = |log: &mut dyn FnMut(String),
                        round: usize,
                        n_policy: usize,
                        n_perturbed: usize,
                        grm: &GrmModel,
                        policy: &PolicyModel,
                        report: &mut PgrtReport|
     -> Result<(), PgrtError> {
        let acc_perturbed = grm
            .eval_pairwise_accuracy(&evals.perturbed)
            .map_err(|e| fail("eval", round, Box::new(e), report))?;
        let acc_policy = grm
            .eval_pairwise_accuracy(&evals.policy)
            .map_err(|e| fail("eval", round, Box::new(e), report))?;
        let bench = bench_overall(policy, &bench_tasks, report, round)?;
        let overall = bench.overall();
        report.rounds.push(RoundRecord {
            round,
            n_perturbed_train: n_perturbed,
            n_policy_train: n_policy,
            grm_acc_perturbed: acc_perturbed,
            grm_acc_policy: acc_policy,
            bench_l1: overall.l1,
            bench_l2: overall.l2,
            bench_psnr: overall.psnr,
            bench_ssim: overall.ssim,
        });
        log(format!(
            "round {round}: acc perturbed {acc_perturbed:.4}, acc policy {acc_policy:.4}, bench L1 {:.3}",
            overall.l1
        ));
        Ok(())
    };

    record_round(log, 0, 0, perturbed_train.len(), &grm, &policy, &mut report)?;

    // Policy-guided rounds: fresh weak samples from the current
    // policy, blended with perturbed pairs, then another policy leg
    // against the refreshed reward.
    for round in 1..config.rounds {
        let policy_train = collect_policy_pairs(
            &policy,
            &train_tasks,
            config.delta,
            config.seed,
            "pgrt-policy-pair",
            round,
            config.policy_pairs_per_round,
        );
        if policy_train.is_empty() {
            return Err(fail(
                "policy-pairs",
                round,
                "the policy produced no usable pairs".into(),
                &report,
            ));
        }
        // Perturbations are generated on demand, so each round draws a
        // fresh batch sized to hold the mix ratio.
        let n_perturbed = mix_perturbed_count(policy_train.len(), config.mix_ratio);
        let perturbed_round =
            build_perturbed_pairs(&train_tasks, config, "pgrt-pair", round, n_perturbed);
        let mut mix = featurize_pairs(&policy_train);
        mix.extend(featurize_pairs(&perturbed_round));
        log(format!(
            "round {round}: {} policy + {} perturbed pairs in the mix",
            policy_train.len(),
            perturbed_round.len()
        ));

        grm.train_pairwise(&mix, &pairwise_cfg)
            .map_err(|e| fail("grm-pairwise", round, Box::new(e), &report))?;
        grm.train_supervised(&mix, &anchor_cfg)
            .map_err(|e| fail("grm-anchor", round, Box::new(e), &report))?;
        let refine_cfg = GrpoConfig { steps: config.grpo_refine_steps, ..grpo_cfg };
        policy
            .train_grpo(
                &grm,
                &rollout,
                &refine_cfg,
                derive_seed(config.seed, "pgrt-grpo", round as u64),
            )
            .map_err(|e| fail("grpo", round, Box::new(e), &report))?;

        record_round(
            log,
            round,
            policy_train.len(),
            perturbed_round.len(),
            &grm,
            &policy,
            &mut report,
        )?;
    }

    Ok(PgrtRun { report, grm, policy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> PgrtConfig {
        PgrtConfig {
            rounds: 2,
            pool_tasks: 72,
            pairs_per_round: 24,
            policy_pairs_per_round: 24,
            eval_pairs: 12,
            delta: 2.0,
            grm_supervised_epochs: 40,
            grm_pairwise_epochs: 60,
            grpo_steps: 4,
            grpo_refine_steps: 4,
            grpo_tasks: 4,
            grpo_group_size: 4,
            bench_n: 2,
            seed: 5,
            ..PgrtConfig::default()
        }
    }

    #[test]
    fn id_split_is_stable_and_roughly_one_fifth() {
        let ids: Vec<String> = (0..400).map(|i| format!("style-{i:04}")).collect();
        let eval_count = ids.iter().filter(|id| is_eval_id(id)).count();
        assert!(
            (40..=140).contains(&eval_count),
            "eval fraction drifted: {eval_count}/400"
        );
        for id in &ids {
            assert_eq!(is_eval_id(id), is_eval_id(id));
        }
    }

    #[test]
    fn mix_formula_matches_the_ratio() {
        assert_eq!(mix_perturbed_count(10, 0.5), 10);
        assert_eq!(mix_perturbed_count(10, 1.0), 0);
        assert_eq!(mix_perturbed_count(30, 0.75), 10);
        assert_eq!(mix_perturbed_count(7, 0.5), 7);
    }

    #[test]
    fn config_validation_catches_nonsense() {
        let mut c = PgrtConfig::default();
        c.rounds = 0;
        assert!(c.validate().is_err());
        c = PgrtConfig::default();
        c.mix_ratio = 0.0;
        assert!(c.validate().is_err());
        c = PgrtConfig::default();
        c.grpo_group_size = 1;
        assert!(c.validate().is_err());
        assert!(PgrtConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_round_trips_with_defaults() {
        let parsed: PgrtConfig = serde_json::from_str(r#"{"seed": 9, "rounds": 3}"#).unwrap();
        assert_eq!(parsed.seed, 9);
        assert_eq!(parsed.rounds, 3);
        assert_eq!(parsed.pairs_per_round, PgrtConfig::default().pairs_per_round);
        assert!(serde_json::from_str::<PgrtConfig>("{\"no_such_knob\": 1}").is_err());
    }

    #[test]
    fn alternation_is_deterministic() {
        let config = tiny_config();
        let a = run_alternation(&config, &mut |_| {}).unwrap();
        let b = run_alternation(&config, &mut |_| {}).unwrap();
        assert_eq!(a.report.to_csv(), b.report.to_csv());
        assert_eq!(a.policy.params_flat(), b.policy.params_flat());
        assert_eq!(a.grm.params_flat(), b.grm.params_flat());
    }

    #[test]
    fn report_shape_follows_the_rounds() {
        let run = run_alternation(&tiny_config(), &mut |_| {}).unwrap();
        assert_eq!(run.report.rounds.len(), 2);
        let r0 = &run.report.rounds[0];
        assert_eq!(r0.round, 0);
        assert_eq!(r0.n_policy_train, 0);
        assert!(r0.n_perturbed_train > 0);
        let r1 = &run.report.rounds[1];
        assert_eq!(r1.round, 1);
        assert!(r1.n_policy_train > 0, "policy round built no pairs");
        for r in &run.report.rounds {
            assert!((0.0..=1.0).contains(&r.grm_acc_perturbed));
            assert!((0.0..=1.0).contains(&r.grm_acc_policy));
            assert!(r.bench_l1.is_finite() && r.bench_ssim.is_finite());
        }
        let csv = run.report.to_csv();
        assert!(csv.starts_with(
            "round,n_perturbed_train,n_policy_train,grm_acc_perturbed,grm_acc_policy,bench_l1,bench_l2,bench_psnr,bench_ssim\n"
        ));
        assert_eq!(csv.lines().count(), 3);
        assert!(run.report.to_markdown().contains("| 1 |"));
    }

    #[test]
    fn single_round_never_touches_policy_pairs() {
        let config = PgrtConfig { rounds: 1, ..tiny_config() };
        let run = run_alternation(&config, &mut |_| {}).unwrap();
        assert_eq!(run.report.rounds.len(), 1);
        assert_eq!(run.report.rounds[0].n_policy_train, 0);
    }

    #[test]
    fn failures_carry_the_partial_report() {
        // An impossible policy-pair margin starves round 1.
        let config = PgrtConfig { delta: 1e9, ..tiny_config() };
        let err = run_alternation(&config, &mut |_| {}).unwrap_err();
        assert_eq!(err.stage, "eval-pairs");
        assert_eq!(err.round, 0);

        // Invalid config fails before any work, with an empty partial.
        let config = PgrtConfig { mix_ratio: -1.0, ..tiny_config() };
        let err = run_alternation(&config, &mut |_| {}).unwrap_err();
        assert_eq!(err.stage, "config");
        assert!(err.partial.rounds.is_empty());
    }
}
