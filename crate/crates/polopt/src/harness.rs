//! Seeded Monte Carlo trials, failure-probability estimation, rate fitting,
//! ensembles, and the two-row outcome table.
//!
//! Every random draw comes from a ChaCha stream keyed by `(master_seed,
//! trial_index)`, one independent stream per trial, so trials parallelize
//! freely and rerunning any experiment with the same seed is bit-identical.
//! Aggregation folds results in trial order regardless of completion order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::bandit::{suboptimality, BanditInstance, ParamVector, PolicyVector};
use crate::rules::{EtaPolicy, EtaSchedule, RuleState, UpdateRuleKind, UpdateRuleSpec};
use crate::{Error, Result};

/// Default commitment threshold: a trial counts as converged to an arm when
/// that arm holds at least `1 − ε` probability at the horizon.
pub const DEFAULT_COMMIT_THRESHOLD: f64 = 1e-6;

/// One uniform draw in `[0, 1)` with 53 random bits.
pub fn uniform_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Everything that determines one trial.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub instance: BanditInstance,
    pub rule: UpdateRuleSpec,
    pub horizon: usize,
    pub seed: u64,
    pub trial_index: u64,
    /// Start logits; `None` means uniform (all zeros).
    pub init_logits: Option<Vec<f64>>,
    /// ε for the final classification.
    pub commit_threshold: f64,
}

impl TrialConfig {
    pub fn new(instance: BanditInstance, rule: UpdateRuleSpec, horizon: usize, seed: u64) -> Self {
        Self {
            instance,
            rule,
            horizon,
            seed,
            trial_index: 0,
            init_logits: None,
            commit_threshold: DEFAULT_COMMIT_THRESHOLD,
        }
    }

    pub fn with_trial_index(mut self, trial_index: u64) -> Self {
        self.trial_index = trial_index;
        self
    }

    fn initial_state(&self) -> Result<RuleState> {
        let theta = match &self.init_logits {
            Some(l) => {
                if l.len() != self.instance.num_arms() {
                    return Err(Error::DimensionMismatch {
                        expected: self.instance.num_arms(),
                        got: l.len(),
                    });
                }
                ParamVector::new(l.clone())?
            }
            None => ParamVector::zeros(self.instance.num_arms()),
        };
        RuleState::initial(&self.rule, &theta)
    }
}

/// Final classification of a trial at its horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    ConvergedOpt,
    ConvergedSubopt(usize),
    Undecided,
}

/// Full per-step record of one trial.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `δ_t = (π* − π_t)^⊤ r` for `t = 1..=T`.
    pub suboptimality: Vec<f64>,
    /// `π_t(a*)` for `t = 1..=T`.
    pub pi_star: Vec<f64>,
    /// Actions sampled at steps `1..T` (none at the horizon itself).
    pub actions: Vec<usize>,
    pub classification: Outcome,
}

impl Trajectory {
    pub fn final_suboptimality(&self) -> f64 {
        *self.suboptimality.last().unwrap()
    }

    /// CSV with columns `t,delta,pi_star,action` (empty action on the last row).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,delta,pi_star,action")?;
        for (i, (d, p)) in self.suboptimality.iter().zip(&self.pi_star).enumerate() {
            if let Some(a) = self.actions.get(i) {
                writeln!(w, "{},{:.17e},{:.17e},{}", i + 1, d, p, a)?;
            } else {
                writeln!(w, "{},{:.17e},{:.17e},", i + 1, d, p)?;
            }
        }
        Ok(())
    }
}

/// Reduced record kept per trial in large Monte Carlo sweeps.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub classification: Outcome,
    pub final_suboptimality: f64,
    pub final_pi_star: f64,
    /// `(t, δ_t)` at requested checkpoints.
    pub checkpoints: Vec<(usize, f64)>,
}

fn sample_action(pi: &PolicyVector, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in pi.probs().iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc a hair under 1; never pick an arm whose
    // probability has underflowed to zero.
    last_positive
}

fn classify(cfg: &TrialConfig, pi: &PolicyVector) -> Outcome {
    let a_star = cfg.instance.optimal_arm();
    if pi.prob(a_star) > 1.0 - cfg.commit_threshold {
        return Outcome::ConvergedOpt;
    }
    for a in 0..cfg.instance.num_arms() {
        if a != a_star && pi.prob(a) > 1.0 - cfg.commit_threshold {
            return Outcome::ConvergedSubopt(a);
        }
    }
    Outcome::Undecided
}

fn check_finite(state: &RuleState, step: usize) -> Result<()> {
    if let RuleState::Logits(theta) = state {
        if theta.logits().iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalAbort {
                step,
                what: "logits left the finite range",
            });
        }
    }
    Ok(())
}

/// Runs one trial, recording every step.
pub fn run_trial(cfg: &TrialConfig) -> Result<Trajectory> {
    if cfg.horizon < 1 {
        return Err(Error::TooShort {
            need: 1,
            got: cfg.horizon,
        });
    }
    let mut state = cfg.initial_state()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.trial_index);
    let needs_actions = cfg.rule.kind().accepts_actions();
    let a_star = cfg.instance.optimal_arm();

    let mut suboptimality_seq = Vec::with_capacity(cfg.horizon);
    let mut pi_star_seq = Vec::with_capacity(cfg.horizon);
    let mut actions = Vec::with_capacity(cfg.horizon.saturating_sub(1));
    let mut pi = state.policy();
    for t in 1..=cfg.horizon {
        suboptimality_seq.push(suboptimality(&pi, &cfg.instance)?);
        pi_star_seq.push(pi.prob(a_star));
        if t == cfg.horizon {
            break;
        }
        let action = if needs_actions {
            let a = sample_action(&pi, uniform_f64(&mut rng));
            actions.push(a);
            Some(a)
        } else {
            None
        };
        state = crate::rules::step(&cfg.rule, &state, &cfg.instance, action)?;
        check_finite(&state, t)?;
        pi = state.policy();
    }
    let classification = classify(cfg, &pi);
    Ok(Trajectory {
        suboptimality: suboptimality_seq,
        pi_star: pi_star_seq,
        actions,
        classification,
    })
}

/// Runs one trial keeping only the classification, final values, and the
/// requested checkpoints. Memory stays O(1) in the horizon.
pub fn run_trial_summary(cfg: &TrialConfig, checkpoints: &[usize]) -> Result<TrialSummary> {
    if cfg.horizon < 1 {
        return Err(Error::TooShort {
            need: 1,
            got: cfg.horizon,
        });
    }
    let mut state = cfg.initial_state()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.trial_index);
    let needs_actions = cfg.rule.kind().accepts_actions();
    let a_star = cfg.instance.optimal_arm();

    let mut recorded = Vec::with_capacity(checkpoints.len());
    let mut pi = state.policy();
    let mut delta = suboptimality(&pi, &cfg.instance)?;
    for t in 1..=cfg.horizon {
        if checkpoints.contains(&t) {
            recorded.push((t, delta));
        }
        if t == cfg.horizon {
            break;
        }
        let action = if needs_actions {
            Some(sample_action(&pi, uniform_f64(&mut rng)))
        } else {
            None
        };
        state = crate::rules::step(&cfg.rule, &state, &cfg.instance, action)?;
        check_finite(&state, t)?;
        pi = state.policy();
        delta = suboptimality(&pi, &cfg.instance)?;
    }
    Ok(TrialSummary {
        classification: classify(cfg, &pi),
        final_suboptimality: delta,
        final_pi_star: pi.prob(a_star),
        checkpoints: recorded,
    })
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    let z = 1.959963984540054f64;
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n_f)) / (1.0 + z2 / n_f);
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / (1.0 + z2 / n_f);
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Monte Carlo failure-probability estimate with its confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct FailureEstimate {
    /// Fraction of trials that committed to a suboptimal arm.
    pub p_fail: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub n_converged_opt: usize,
    pub n_undecided: usize,
    /// Commit counts per arm; the optimal arm's slot counts optimal
    /// convergences.
    pub per_arm_commits: Vec<usize>,
    /// Mean sub-optimality across trials at each requested checkpoint.
    pub checkpoint_means: Vec<(usize, f64)>,
}

/// Runs `n_trials` independent trials of the template (trial indices
/// `0..n_trials`) and tallies outcomes.
pub fn estimate_failure_probability(
    template: &TrialConfig,
    n_trials: usize,
    checkpoints: &[usize],
) -> Result<FailureEstimate> {
    if n_trials < 100 {
        return Err(Error::TooShort {
            need: 100,
            got: n_trials,
        });
    }
    let summaries: Vec<TrialSummary> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| run_trial_summary(&template.clone().with_trial_index(i), checkpoints))
        .collect::<Result<Vec<_>>>()?;

    let mut n_failed = 0;
    let mut n_converged_opt = 0;
    let mut n_undecided = 0;
    let mut per_arm_commits = vec![0usize; template.instance.num_arms()];
    let mut sums: Vec<(usize, f64)> = checkpoints.iter().map(|&t| (t, 0.0)).collect();
    for s in &summaries {
        match s.classification {
            Outcome::ConvergedOpt => {
                n_converged_opt += 1;
                per_arm_commits[template.instance.optimal_arm()] += 1;
            }
            Outcome::ConvergedSubopt(arm) => {
                n_failed += 1;
                per_arm_commits[arm] += 1;
            }
            Outcome::Undecided => n_undecided += 1,
        }
        for (slot, (t, d)) in sums.iter_mut().zip(&s.checkpoints) {
            debug_assert_eq!(slot.0, *t);
            slot.1 += d;
        }
    }
    for slot in &mut sums {
        slot.1 /= n_trials as f64;
    }
    let (wilson_low, wilson_high) = wilson_interval(n_failed, n_trials);
    Ok(FailureEstimate {
        p_fail: n_failed as f64 / n_trials as f64,
        wilson_low,
        wilson_high,
        n_trials,
        n_failed,
        n_converged_opt,
        n_undecided,
        per_arm_commits,
        checkpoint_means: sums,
    })
}

/// Candidate decay models for a sub-optimality trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModel {
    InvT,
    InvSqrtT,
    Exp,
}

/// Best-fit decay model over the tail of a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub model: RateModel,
    /// `C` of `C/t` or `C/√t`, or the decay rate `c` of `A·e^{−c·t}`.
    pub constant: f64,
    pub window: (usize, usize),
    pub r2_inv_t: f64,
    pub r2_inv_sqrt_t: f64,
    pub r2_exp: f64,
}

/// Fits `log δ_t` over the last half of the trajectory against the three
/// candidate models: intercept-only fits at the fixed slopes `−1` (in
/// `log t`) and `−1/2`, and a free-slope fit in `t`. The fixed slopes keep
/// the polynomial models distinguishable from the exponential one even on a
/// factor-two window, where `log t` is nearly affine in `t`.
pub fn fit_rate(traj: &Trajectory) -> Result<RateFit> {
    let t_total = traj.suboptimality.len();
    if t_total < 8 {
        return Err(Error::TooShort {
            need: 8,
            got: t_total,
        });
    }
    let t_lo = (t_total / 2).max(2);
    let pts: Vec<(f64, f64)> = (t_lo..=t_total)
        .filter(|&t| traj.suboptimality[t - 1] > 0.0)
        .map(|t| (t as f64, traj.suboptimality[t - 1].ln()))
        .collect();
    // δ underflow: fall back to whatever positive stretch remains and call
    // it exponential with the last finite slope.
    let underflowed = pts.len() < (t_total - t_lo).div_ceil(2);
    if pts.len() < 4 {
        let pts: Vec<(f64, f64)> = (1..=t_total)
            .filter(|&t| traj.suboptimality[t - 1] > 0.0)
            .map(|t| (t as f64, traj.suboptimality[t - 1].ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::NumericalAbort {
                step: 0,
                what: "no positive sub-optimality to fit",
            });
        }
        let (slope, _r2) = ols(&pts);
        return Ok(RateFit {
            model: RateModel::Exp,
            constant: -slope,
            window: (1, pts.len()),
            r2_inv_t: 0.0,
            r2_inv_sqrt_t: 0.0,
            r2_exp: 1.0,
        });
    }

    let ys: Vec<f64> = pts.iter().map(|&(_, y)| y).collect();
    let log_ts: Vec<f64> = pts.iter().map(|&(t, _)| t.ln()).collect();
    let lin_ts: Vec<f64> = pts.iter().map(|&(t, _)| t).collect();
    let sstot = variance_sum(&ys);
    if sstot < 1e-20 {
        return Err(Error::NumericalAbort {
            step: 0,
            what: "flat sub-optimality: nothing to fit",
        });
    }

    let r2_fixed = |slope: f64| -> f64 {
        let resid: Vec<f64> = ys.iter().zip(&log_ts).map(|(y, x)| y - slope * x).collect();
        1.0 - variance_sum(&resid) / sstot
    };
    let r2_inv_t = r2_fixed(-1.0);
    let r2_inv_sqrt_t = r2_fixed(-0.5);
    let (slope_exp, r2_exp) = ols_xy(&lin_ts, &ys);

    let (model, constant) = if r2_exp >= r2_inv_t && r2_exp >= r2_inv_sqrt_t {
        (RateModel::Exp, -slope_exp)
    } else if r2_inv_t >= r2_inv_sqrt_t {
        let c = mean(&ys.iter().zip(&log_ts).map(|(y, x)| y + x).collect::<Vec<_>>());
        (RateModel::InvT, c.exp())
    } else {
        let c = mean(
            &ys.iter()
                .zip(&log_ts)
                .map(|(y, x)| y + 0.5 * x)
                .collect::<Vec<_>>(),
        );
        (RateModel::InvSqrtT, c.exp())
    };
    let model = if underflowed { RateModel::Exp } else { model };
    Ok(RateFit {
        model,
        constant,
        window: (t_lo, t_total),
        r2_inv_t,
        r2_inv_sqrt_t,
        r2_exp,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance_sum(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn ols_xy(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx < 1e-20 || syy < 1e-20 {
        return (0.0, 0.0);
    }
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn ols(pts: &[(f64, f64)]) -> (f64, f64) {
    let xs: Vec<f64> = pts.iter().map(|&(x, _)| x).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, y)| y).collect();
    ols_xy(&xs, &ys)
}

/// `n = ⌈log(1/δ) / log(1/(1−p))⌉`, the number of independent runs that
/// drives the all-fail probability below `δ`.
pub fn ensemble_size(p: f64, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidRule(format!("delta = {delta} outside (0, 1)")));
    }
    if !(p > 0.0) {
        return Err(Error::ZeroSuccessProbability);
    }
    if p >= 1.0 {
        return Ok(1);
    }
    let n = ((1.0 / delta).ln() / (1.0 / (1.0 - p)).ln()).ceil() as usize;
    Ok(n.max(1))
}

/// Ensemble experiment: probe the per-run success rate, size the ensemble,
/// then measure how often the best of `n_runs` still fails.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub p_hat: f64,
    pub delta: f64,
    pub n_runs: usize,
    pub outer_reps: usize,
    /// Fraction of repetitions whose best run converged optimally.
    pub empirical_success_rate: f64,
    /// Best run seen across all repetitions (lowest final sub-optimality).
    pub best_run: TrialSummary,
}

pub fn run_ensemble(
    template: &TrialConfig,
    delta: f64,
    n_probe: usize,
    outer_reps: usize,
) -> Result<EnsembleReport> {
    if n_probe == 0 || outer_reps == 0 {
        return Err(Error::TooShort { need: 1, got: 0 });
    }
    let probes: Vec<TrialSummary> = (0..n_probe as u64)
        .into_par_iter()
        .map(|i| run_trial_summary(&template.clone().with_trial_index(i), &[]))
        .collect::<Result<Vec<_>>>()?;
    let successes = probes
        .iter()
        .filter(|s| s.classification == Outcome::ConvergedOpt)
        .count();
    let p_hat = successes as f64 / n_probe as f64;
    let n_runs = ensemble_size(p_hat, delta)?;

    let reps: Vec<TrialSummary> = (0..outer_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut best: Option<TrialSummary> = None;
            for j in 0..n_runs as u64 {
                let idx = n_probe as u64 + rep * n_runs as u64 + j;
                let s = run_trial_summary(&template.clone().with_trial_index(idx), &[])?;
                let better = match &best {
                    None => true,
                    Some(b) => s.final_suboptimality < b.final_suboptimality,
                };
                if better {
                    best = Some(s);
                }
            }
            Ok(best.expect("n_runs >= 1"))
        })
        .collect::<Result<Vec<_>>>()?;

    let successes = reps
        .iter()
        .filter(|s| s.classification == Outcome::ConvergedOpt)
        .count();
    let best_run = reps
        .iter()
        .min_by(|a, b| a.final_suboptimality.total_cmp(&b.final_suboptimality))
        .expect("outer_reps >= 1")
        .clone();
    Ok(EnsembleReport {
        p_hat,
        delta,
        n_runs,
        outer_reps,
        empirical_success_rate: successes as f64 / outer_reps as f64,
        best_run,
    })
}

/// Settings of the two-row outcome table.
#[derive(Debug, Clone, Serialize)]
pub struct Table1Config {
    pub seed: u64,
    pub horizon_true: usize,
    pub horizon_stoch_fast: usize,
    pub horizon_stoch_pg: usize,
    pub n_trials: usize,
    pub eta_pg_true: f64,
    pub eta_npg_true: f64,
    pub eta_gnpg_true: f64,
    pub eta_stoch: f64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon_true: 2000,
            horizon_stoch_fast: 1000,
            horizon_stoch_pg: 100_000,
            n_trials: 1000,
            eta_pg_true: 0.4,
            eta_npg_true: 1.0,
            eta_gnpg_true: 1.0 / 6.0,
            eta_stoch: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1TrueCell {
    pub rule: UpdateRuleKind,
    pub fit: RateFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1StochCell {
    pub rule: UpdateRuleKind,
    pub estimate: FailureEstimate,
}

/// The 2×3 outcome table: decay model per true-gradient column, failure
/// probability per stochastic column.
#[derive(Debug, Clone, Serialize)]
pub struct Table1Report {
    pub true_row: Vec<Table1TrueCell>,
    pub stoch_row: Vec<Table1StochCell>,
}

pub fn table1_report(inst: &BanditInstance, cfg: &Table1Config) -> Result<Table1Report> {
    let mut true_row = Vec::new();
    for (kind, eta) in [
        (UpdateRuleKind::PgTrue, cfg.eta_pg_true),
        (UpdateRuleKind::NpgTrue, cfg.eta_npg_true),
        (UpdateRuleKind::GnpgTrue, cfg.eta_gnpg_true),
    ] {
        let rule = UpdateRuleSpec::fixed(kind, eta, inst)?;
        let trial = TrialConfig::new(inst.clone(), rule, cfg.horizon_true, cfg.seed);
        let traj = run_trial(&trial)?;
        true_row.push(Table1TrueCell {
            rule: kind,
            fit: fit_rate(&traj)?,
        });
    }

    let mut stoch_row = Vec::new();
    for kind in [
        UpdateRuleKind::PgStoch,
        UpdateRuleKind::NpgStoch,
        UpdateRuleKind::GnpgStoch,
    ] {
        let (rule, horizon) = if kind == UpdateRuleKind::PgStoch {
            (
                UpdateRuleSpec::new(
                    kind,
                    EtaPolicy::Schedule(EtaSchedule::PgGradNorm),
                    None,
                    inst,
                )?,
                cfg.horizon_stoch_pg,
            )
        } else {
            (
                UpdateRuleSpec::fixed(kind, cfg.eta_stoch, inst)?,
                cfg.horizon_stoch_fast,
            )
        };
        let template = TrialConfig::new(inst.clone(), rule, horizon, cfg.seed);
        stoch_row.push(Table1StochCell {
            rule: kind,
            estimate: estimate_failure_probability(&template, cfg.n_trials, &[])?,
        });
    }
    Ok(Table1Report {
        true_row,
        stoch_row,
    })
}
