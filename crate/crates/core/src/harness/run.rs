//! Seeded multi-user experiment runner.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Aggregation, ExperimentConfig, Policy};
use crate::aggregation::{self, AggregatedRecord, RefinementConfig};
use crate::bandit::{self, ArmSet, BanditState, LinUcbState};
use crate::error::{Error, Result};
use crate::metrics::{self, SessionLog};
use crate::qpn::{self, Context, QpnParams, Sample, TrainConfig, INPUT_DIM};
use crate::simenv::Environment;
use crate::solicitation::ScheduleState;

// Independent random streams of one run. Keeping them apart makes the
// environment and reward noise identical across policies for the same seed.
const ENV_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;
const FEEDBACK_STREAM: u64 = 3;
const PRETRAIN_SALT: u64 = 0x5052_4554_5241_494E;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one `(seed, user)` run and stream.
pub fn run_rng(seed: u64, user: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed) ^ user));
    rng.set_stream(stream);
    rng
}

/// Pools `samples_per_user` (context, QoE) pairs from each of `users`
/// freshly sampled users, choosing arms uniformly at random.
pub fn collect_pretrain_samples(env: &Environment, seed: u64, samples_per_user: usize, users: usize) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ PRETRAIN_SALT));
    let mut pool = Vec::with_capacity(samples_per_user * users);
    for _ in 0..users {
        let profile = env.sample_user(&mut rng);
        for _ in 0..samples_per_user {
            let ctx = env.sample_context(&mut rng);
            let arm = bandit::random_select(&mut rng, env.arm_count());
            let dnn = &env.catalog()[arm];
            let reward = env.qoe(&profile, &ctx, dnn, &mut rng);
            pool.push((env.encode(&ctx, dnn)?, reward));
        }
    }
    Ok(pool)
}

/// Trains a fresh QPN on pooled multi-user samples for transfer.
pub fn pretrain_transfer_qpn(
    env: &Environment,
    seed: u64,
    samples_per_user: usize,
    users: usize,
    cfg: &TrainConfig,
) -> Result<QpnParams> {
    let pool = collect_pretrain_samples(env, seed, samples_per_user, users)?;
    let init = QpnParams::random(&mut ChaCha8Rng::seed_from_u64(mix(seed ^ PRETRAIN_SALT ^ 1)));
    Ok(qpn::train_qpn_with_backoff(&init, &pool, cfg)?.params)
}

enum Learner {
    Neural {
        state: Box<BanditState>,
        train: TrainConfig,
        /// Present when aggregated ratings are refined instead of being
        /// attributed to the last selection.
        refine: Option<RefinementConfig>,
        records: Vec<AggregatedRecord>,
    },
    Lin(LinUcbState),
    Random(ChaCha8Rng),
    Fixed(usize),
    Oracle,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefineStats {
    pub calls: usize,
    pub converged: usize,
}

impl Learner {
    fn new(cfg: &ExperimentConfig, env: &Environment, pretrained: Option<&QpnParams>, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match cfg.policy {
            Policy::NeuralUcb | Policy::NeuralUcbTransfer | Policy::NeuralUcbAgg => {
                let init_seed = rng.random();
                let state = match (cfg.policy, pretrained) {
                    (Policy::NeuralUcbTransfer, Some(p)) => BanditState::init_with_transfer(p.clone(), cfg.gamma, cfg.width_h)?,
                    (Policy::NeuralUcbTransfer, None) => {
                        return Err(Error::InvalidConfig("transfer policy needs pre-trained parameters".into()))
                    }
                    _ => BanditState::init_state(init_seed, cfg.gamma, cfg.width_h)?,
                }
                .with_retrain_from(cfg.retrain_from);
                Learner::Neural {
                    state: Box::new(state),
                    train: cfg.train_config(),
                    refine: (cfg.policy == Policy::NeuralUcbAgg).then(|| cfg.refinement_config()),
                    records: Vec::new(),
                }
            }
            Policy::LinUcb => Learner::Lin(LinUcbState::new(env.arm_count(), INPUT_DIM, cfg.linucb_alpha)?),
            Policy::Random => Learner::Random(rng.clone()),
            Policy::Fixed(m) => Learner::Fixed(bandit::fixed_select(m)),
            Policy::Oracle => Learner::Oracle,
        })
    }

    fn select(&mut self, arms: &ArmSet, oracle_arm: usize) -> Result<usize> {
        match self {
            Learner::Neural { state, .. } => state.select_arm(arms),
            Learner::Lin(lin) => {
                let xs: Vec<&[f64]> = arms.contexts().iter().map(|c| c.features().as_slice()).collect();
                lin.select(&xs)
            }
            Learner::Random(rng) => Ok(bandit::random_select(rng, arms.len())),
            Learner::Fixed(m) => Ok(*m),
            Learner::Oracle => Ok(oracle_arm),
        }
    }

    /// Individually rated selections.
    fn observe(&mut self, rated: &[(Context, usize, f64)]) -> Result<()> {
        match self {
            Learner::Neural {
                state,
                train,
                refine,
                records,
            } => {
                let samples: Vec<Sample> = rated.iter().map(|&(x, _, r)| (x, r)).collect();
                match refine {
                    Some(rcfg) if !records.is_empty() => {
                        let contexts: Vec<Context> = samples.iter().map(|s| s.0).collect();
                        state.observe_with(&contexts, |s| {
                            s.dataset.extend_from_slice(&samples);
                            refit(s, records, rcfg, train).map(|_| ())
                        })?;
                    }
                    _ => {
                        state.observe_batch(&samples, train)?;
                    }
                }
            }
            Learner::Lin(lin) => {
                for (x, arm, r) in rated {
                    lin.update(*arm, x.features(), *r)?;
                }
            }
            Learner::Random(_) | Learner::Fixed(_) | Learner::Oracle => {}
        }
        Ok(())
    }

    /// One rating covering several selections.
    fn observe_aggregated(&mut self, record: AggregatedRecord, stats: &mut RefineStats) -> Result<()> {
        let last = record.len() - 1;
        match self {
            Learner::Neural {
                state,
                refine: Some(rcfg),
                records,
                train,
            } => {
                let contexts = record.contexts.clone();
                records.push(record);
                let converged = state.observe_with(&contexts, |s| refit(s, records, rcfg, train))?.0;
                stats.calls += 1;
                stats.converged += converged as usize;
                Ok(())
            }
            // Naive attribution: the whole rating goes to the last selection.
            _ => self.observe(&[(record.contexts[last], record.arms[last], record.reward)]),
        }
    }
}

/// Settles the split of aggregated ratings with the refinement loop, then
/// fits θ on the individualized and plain samples with the learner's own
/// training settings. Returns whether the loop converged.
fn refit(state: &mut BanditState, records: &[AggregatedRecord], rcfg: &RefinementConfig, train: &TrainConfig) -> Result<bool> {
    let out = aggregation::refine_from(records, &state.dataset, &state.theta, state.retrain_origin(), rcfg)?;
    let mut data = out.individualized;
    data.extend_from_slice(&state.dataset);
    let start = state.retrain_origin().unwrap_or(&out.params);
    state.theta = qpn::train_qpn_with_backoff(start, &data, train)?.params;
    Ok(out.converged)
}

/// One simulated user under one seed.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub user: usize,
    pub logs: Vec<SessionLog>,
    pub refine: RefineStats,
}

/// Simulates a single user.
pub fn run_single(
    cfg: &ExperimentConfig,
    env: &Environment,
    seed: u64,
    user: usize,
    pretrained: Option<&QpnParams>,
) -> Result<RunResult> {
    let mut env_rng = run_rng(seed, user as u64, ENV_STREAM);
    let mut noise_rng = run_rng(seed, user as u64, NOISE_STREAM);
    let mut policy_rng = run_rng(seed, user as u64, POLICY_STREAM);
    let mut feedback_rng = run_rng(seed, user as u64, FEEDBACK_STREAM);

    let profile = env.sample_user(&mut env_rng);
    let mut learner = Learner::new(cfg, env, pretrained, &mut policy_rng)?;
    let mut schedule = ScheduleState::default();
    let mut refine = RefineStats::default();
    let mut logs = Vec::with_capacity(cfg.sessions as usize);
    let catalog = env.catalog();

    for session in 1..=cfg.sessions {
        let changes = match cfg.aggregation {
            Aggregation::None => 1,
            Aggregation::Mean | Aggregation::Sequence => env_rng.random_range(1..=cfg.max_changes),
        };
        let mut rated = Vec::with_capacity(changes);
        let (mut expected, mut oracle_expected) = (0.0, 0.0);
        let mut last = (0, 0);
        for _ in 0..changes {
            let ctx = env.sample_context(&mut env_rng);
            let arms = ArmSet::new(env.arm_contexts(&ctx)?)?;
            let (oracle_arm, oracle_value) = env.oracle_best(&profile, &ctx);
            let chosen = learner.select(&arms, oracle_arm)?;
            let reward = env.qoe(&profile, &ctx, &catalog[chosen], &mut noise_rng);
            expected += env.expected_qoe(&profile, &ctx, &catalog[chosen]);
            oracle_expected += oracle_value;
            rated.push((arms.contexts()[chosen], chosen, reward));
            last = (chosen, oracle_arm);
        }

        let solicited = cfg.policy.learns() && schedule.advance(&cfg.schedule)?;
        if solicited {
            let aggregated = cfg.aggregation != Aggregation::None && feedback_rng.random_bool(cfg.mixed_fraction);
            if aggregated {
                let rewards: Vec<f64> = rated.iter().map(|r| r.2).collect();
                let combined = match cfg.aggregation {
                    Aggregation::Sequence => aggregation::aggregate_sequence(&rewards)?,
                    _ => aggregation::aggregate_mean(&rewards)?,
                };
                let record = AggregatedRecord::new(
                    rated.iter().map(|r| r.0).collect(),
                    rated.iter().map(|r| r.1).collect(),
                    combined,
                    session,
                )?;
                learner.observe_aggregated(record, &mut refine)?;
            } else {
                learner.observe(&rated)?;
            }
        }

        let k = changes as f64;
        logs.push(SessionLog {
            session,
            chosen_arm: last.0,
            oracle_arm: last.1,
            reward: rated.iter().map(|r| r.2).sum::<f64>() / k,
            expected_reward: expected / k,
            oracle_expected_reward: oracle_expected / k,
            solicited,
            cost: if solicited { cfg.lambda } else { 0.0 },
        });
    }
    Ok(RunResult {
        seed,
        user,
        logs,
        refine,
    })
}

/// All runs of an experiment, ordered by (repetition, user).
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ExperimentResult {
    /// Per-session mean and std of a per-run series.
    pub fn series_stats<F>(&self, series: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(&[SessionLog]) -> Vec<f64>,
    {
        let all: Vec<Vec<f64>> = self.runs.iter().map(|r| series(&r.logs)).collect();
        let len = all.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|t| mean_std(&all.iter().map(|s| s[t]).collect::<Vec<_>>()))
            .unzip()
    }

    pub fn mean_regret(&self) -> Vec<f64> {
        self.series_stats(metrics::cumulative_regret).0
    }

    pub fn mean_m_regret(&self) -> Vec<f64> {
        let lambda = self.config.lambda;
        self.series_stats(|l| metrics::m_regret(l, lambda)).0
    }

    pub fn mean_cost(&self) -> Vec<f64> {
        let lambda = self.config.lambda;
        self.series_stats(|l| metrics::cumulative_cost(l, lambda)).0
    }

    /// Average realized QoE across all runs (each run averaged over sessions).
    pub fn average_qoe(&self) -> (f64, f64) {
        let per_run: Vec<f64> = self
            .runs
            .iter()
            .map(|r| metrics::average_qoe(&r.logs).unwrap_or(f64::NAN))
            .collect();
        mean_std(&per_run)
    }

    /// Average QoE per repetition seed (users averaged within each seed).
    pub fn average_qoe_by_seed(&self) -> Vec<(u64, f64)> {
        let mut out: Vec<(u64, Vec<f64>)> = Vec::new();
        for r in &self.runs {
            let v = metrics::average_qoe(&r.logs).unwrap_or(f64::NAN);
            match out.iter_mut().find(|(s, _)| *s == r.seed) {
                Some((_, vs)) => vs.push(v),
                None => out.push((r.seed, vec![v])),
            }
        }
        out.into_iter().map(|(s, vs)| (s, mean_std(&vs).0)).collect()
    }

    pub fn refine_stats(&self) -> RefineStats {
        self.runs.iter().fold(RefineStats::default(), |acc, r| RefineStats {
            calls: acc.calls + r.refine.calls,
            converged: acc.converged + r.refine.converged,
        })
    }
}

fn worker_count(requested: usize, jobs: usize) -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let n = if requested == 0 { available } else { requested };
    n.clamp(1, jobs.max(1))
}

/// Runs every (repetition, user) pair. Transfer policies pre-train one QPN
/// per repetition seed unless `pretrained` is supplied.
pub fn run_experiment_with(cfg: &ExperimentConfig, pretrained: Option<&QpnParams>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let env = Environment::new(cfg.env.clone())?;
    let seeds: Vec<u64> = (0..cfg.repetitions as u64).map(|r| cfg.seed + r).collect();

    let transfer: Vec<Option<QpnParams>> = seeds
        .iter()
        .map(|&seed| match (cfg.policy, pretrained) {
            (_, Some(p)) => Ok(Some(p.clone())),
            (Policy::NeuralUcbTransfer, None) => pretrain_transfer_qpn(
                &env,
                seed,
                cfg.pretrain_samples_per_user,
                cfg.pretrain_users,
                &cfg.pretrain_config(),
            )
            .map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|rep| (0..cfg.users).map(move |u| (rep, u)))
        .collect();
    let slots: Vec<Mutex<Option<Result<RunResult>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(cfg.threads, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(rep, user)) = jobs.get(i) else { break };
                let out = run_single(cfg, &env, seeds[rep], user, transfer[rep].as_ref());
                *slots[i].lock().expect("result slot poisoned") = Some(out);
            });
        }
    });

    let runs = slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot poisoned").expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, None)
}
