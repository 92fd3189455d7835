//! Forced-action trajectories, the committal-rate estimator, closed-form
//! commit-forever probability bounds, and the optimality-smart verifier.
//!
//! Forcing one arm removes all randomness: the trajectory is a deterministic
//! function of the rule, the start point, and the instance. Residuals are
//! tracked in log space from logit differences, which stays exact long after
//! `1 − π(a)` has left 64-bit range.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::bandit::{log_residual_mass, log_softmax, softmax, BanditInstance, ParamVector};
use crate::harness::uniform_f64;
use crate::rules::{step_stochastic, RuleState, UpdateRuleKind, UpdateRuleSpec};
use crate::{Error, Result};

/// Forced-arm probabilities below this are treated as saturated: the next
/// update would divide by a number this small and overflow the logit range.
const FREEZE_FLOOR: f64 = 1e-300;

/// Deterministic trajectory obtained by sampling one arm forever.
#[derive(Debug, Clone)]
pub struct FixedActionTrajectory {
    pub rule: UpdateRuleSpec,
    pub forced_arm: usize,
    /// `u_t = 1 − π_t(arm)` for `t = 1..=T`; may underflow to 0 or saturate
    /// at 1 in 64-bit range.
    pub residuals: Vec<f64>,
    /// `log u_t`, finite wherever the logits are.
    pub log_residuals: Vec<f64>,
    /// Cumulative `log Π_{s≤t} π_s(arm)`.
    pub log_running_products: Vec<f64>,
    /// Step at which the forced arm's probability fell below the freeze
    /// floor and updates stopped being representable.
    pub saturated_at: Option<usize>,
}

impl FixedActionTrajectory {
    pub fn horizon(&self) -> usize {
        self.residuals.len()
    }

    /// `Π_{t≤T} π_t(arm)`.
    pub fn running_product(&self) -> f64 {
        self.log_running_products
            .last()
            .map(|l| l.exp())
            .unwrap_or(1.0)
    }

    pub fn log_running_product(&self) -> f64 {
        *self.log_running_products.last().unwrap_or(&0.0)
    }

    /// CSV with columns `t,u,log_u,running_product`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,u,log_u,running_product")?;
        for (i, (u, log_u)) in self.residuals.iter().zip(&self.log_residuals).enumerate() {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e}",
                i + 1,
                u,
                log_u,
                self.log_running_products[i].exp()
            )?;
        }
        Ok(())
    }
}

/// Generates the forced-arm trajectory for `horizon` steps.
///
/// True-gradient kinds have no action to force and are rejected. For SAMBA
/// the forced arm must be greedy at the start and stay greedy throughout.
pub fn fixed_action_trajectory(
    rule: &UpdateRuleSpec,
    theta1: &ParamVector,
    inst: &BanditInstance,
    arm: usize,
    horizon: usize,
) -> Result<FixedActionTrajectory> {
    if !rule.kind().accepts_actions() {
        return Err(Error::UnsupportedRule(
            "fixed-action trajectories need a rule that consumes actions",
        ));
    }
    if arm >= inst.num_arms() {
        return Err(Error::ActionOutOfRange {
            action: arm,
            arms: inst.num_arms(),
        });
    }
    if horizon < 2 {
        return Err(Error::TooShort {
            need: 2,
            got: horizon,
        });
    }
    let mut state = RuleState::initial(rule, theta1)?;
    if let RuleState::Simplex(ref s) = state {
        if s.greedy_arm() != arm {
            return Err(Error::GreedyArmChanged { step: 0 });
        }
    }

    let mut residuals = Vec::with_capacity(horizon);
    let mut log_residuals = Vec::with_capacity(horizon);
    let mut log_running_products = Vec::with_capacity(horizon);
    let mut log_product = 0.0f64;
    let mut saturated_at = None;

    for t in 1..=horizon {
        let (log_u, log_pi) = match &state {
            RuleState::Logits(theta) => {
                let log_u = log_residual_mass(theta, arm);
                let log_pi = log_softmax(theta)[arm];
                (log_u, log_pi)
            }
            RuleState::Simplex(s) => {
                let u: f64 = s
                    .probs()
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != arm)
                    .map(|(_, &p)| p)
                    .sum();
                (u.ln(), s.probs()[arm].ln())
            }
        };
        residuals.push(log_u.exp().min(1.0));
        log_residuals.push(log_u);
        log_product += log_pi;
        log_running_products.push(log_product);

        if t == horizon {
            break;
        }
        if saturated_at.is_some() {
            continue;
        }
        let forced_prob = state.policy().prob(arm);
        if forced_prob < FREEZE_FLOOR {
            saturated_at = Some(t);
            continue;
        }
        state = crate::rules::step(rule, &state, inst, Some(arm))?;
        match &state {
            RuleState::Logits(theta) => {
                if theta.logits().iter().any(|x| !x.is_finite()) {
                    return Err(Error::NumericalAbort {
                        step: t,
                        what: "logits left the finite range",
                    });
                }
            }
            RuleState::Simplex(s) => {
                if s.greedy_arm() != arm {
                    return Err(Error::GreedyArmChanged { step: t });
                }
            }
        }
    }

    Ok(FixedActionTrajectory {
        rule: rule.clone(),
        forced_arm: arm,
        residuals,
        log_residuals,
        log_running_products,
        saturated_at,
    })
}

/// Outcome of the tail-fit classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Polynomial,
    Exponential,
    Zero,
}

/// Estimated committal behaviour of a forced-arm trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct CommittalEstimate {
    pub classification: Classification,
    /// Fitted polynomial exponent, present only for `Polynomial`.
    pub alpha_hat: Option<f64>,
    pub fit_r2_poly: f64,
    pub fit_r2_exp: f64,
    /// `[t_lo, t_hi]` actually used by the fits.
    pub tail_window: (usize, usize),
    /// True when `u_t` underflowed 64-bit range before step 100.
    pub underflow: bool,
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    // Returns (slope, r²); flat targets get r² = 0 by convention.
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if syy < 1e-20 || sxx < 1e-20 {
        return (0.0, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = (sxy * sxy) / (sxx * syy);
    (slope, r2)
}

/// Tail indices spanning `[t_lo, T]`, log-spaced so each decade carries
/// comparable weight in the fits.
fn log_spaced_ts(t_lo: usize, t_hi: usize, max_points: usize) -> Vec<usize> {
    let mut ts = Vec::with_capacity(max_points);
    let (lo, hi) = (t_lo as f64, t_hi as f64);
    for i in 0..max_points {
        let f = i as f64 / (max_points - 1) as f64;
        let t = (lo * (hi / lo).powf(f)).round() as usize;
        let t = t.clamp(t_lo, t_hi);
        if ts.last() != Some(&t) {
            ts.push(t);
        }
    }
    ts
}

/// Classifies the tail of a forced-arm trajectory.
///
/// Fits `log u_t` against `log t` and against `t` over `[√T, T]` and compares
/// goodness of fit. The tail starts at `√T` rather than `T/2`: over a
/// factor-two window `log t` is nearly an affine function of `t`, so the two
/// fits cannot be told apart there no matter how clean the data.
pub fn estimate_committal_rate(traj: &FixedActionTrajectory) -> Result<CommittalEstimate> {
    let t_total = traj.horizon();
    if t_total < 100 {
        return Err(Error::TooShort {
            need: 100,
            got: t_total,
        });
    }
    let t_lo = (t_total as f64).sqrt().ceil().max(10.0) as usize;
    let ts = log_spaced_ts(t_lo, t_total, 512);
    let log_t: Vec<f64> = ts.iter().map(|&t| (t as f64).ln()).collect();
    let lin_t: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
    let ys: Vec<f64> = ts.iter().map(|&t| traj.log_residuals[t - 1]).collect();

    let (slope_poly, r2_poly) = linear_fit(&log_t, &ys);
    let (slope_exp, r2_exp) = linear_fit(&lin_t, &ys);

    let underflow = traj.residuals[..t_total.min(100)].contains(&0.0);
    let ratio =
        (traj.log_residuals[t_total - 1] - traj.log_residuals[t_total / 2 - 1]).exp();

    let exponential_fit = r2_exp - r2_poly > 0.05 && slope_exp < -1e-6;
    let classification = if underflow || exponential_fit {
        Classification::Exponential
    } else if ratio > 0.9 {
        Classification::Zero
    } else {
        Classification::Polynomial
    };
    let alpha_hat = match classification {
        Classification::Polynomial => Some((-slope_poly).max(0.0)),
        _ => None,
    };
    Ok(CommittalEstimate {
        classification,
        alpha_hat,
        fit_r2_poly: r2_poly,
        fit_r2_exp: r2_exp,
        tail_window: (t_lo, t_total),
        underflow,
    })
}

/// Which commit-forever event a closed-form bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundTarget {
    /// One specific arm is sampled forever.
    Arm(usize),
    /// Some suboptimal arm is sampled at every step (the optimal arm never).
    AllSuboptimal,
}

/// Closed-form lower bound on the probability that on-policy sampling picks
/// the target forever, driving its probability to one.
pub fn forever_probability_lower_bound(
    rule: &UpdateRuleSpec,
    theta1: &ParamVector,
    inst: &BanditInstance,
    target: BoundTarget,
) -> Result<f64> {
    let eta = match rule.eta_policy() {
        crate::rules::EtaPolicy::Fixed(x) => x,
        _ => {
            return Err(Error::UnsupportedRule(
                "forever bounds are stated for fixed learning rates",
            ))
        }
    };
    if theta1.len() != inst.num_arms() {
        return Err(Error::DimensionMismatch {
            expected: inst.num_arms(),
            got: theta1.len(),
        });
    }
    let logits = theta1.logits();
    let log_p = match (rule.kind(), target) {
        (UpdateRuleKind::NpgStoch, BoundTarget::Arm(a)) => {
            if a >= inst.num_arms() {
                return Err(Error::ActionOutOfRange {
                    action: a,
                    arms: inst.num_arms(),
                });
            }
            let q: f64 = logits
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != a)
                .map(|(_, &x)| (x - logits[a]).exp())
                .sum();
            let er = eta * inst.reward(a);
            -q * er.exp() / er
        }
        (UpdateRuleKind::GnpgStoch, BoundTarget::Arm(a)) => {
            if a >= inst.num_arms() {
                return Err(Error::ActionOutOfRange {
                    action: a,
                    arms: inst.num_arms(),
                });
            }
            let q: f64 = logits
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != a)
                .map(|(_, &x)| (x - logits[a]).exp())
                .sum();
            let sqrt2 = 2.0f64.sqrt();
            -q * sqrt2 * (eta / sqrt2).exp() / eta
        }
        (UpdateRuleKind::NpgStoch, BoundTarget::AllSuboptimal) => {
            let a_star = inst.optimal_arm();
            let k = inst.num_arms();
            let mean_sub: f64 = logits
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != a_star)
                .map(|(_, &x)| x)
                .sum::<f64>()
                / (k - 1) as f64;
            let er = eta * inst.min_suboptimal_reward() / (k - 1) as f64;
            -(logits[a_star] - mean_sub).exp() * er.exp() / (eta * inst.min_suboptimal_reward())
        }
        _ => {
            return Err(Error::UnsupportedRule(
                "forever bounds exist for npg-stoch (per arm or all-suboptimal) and gnpg-stoch (per arm)",
            ))
        }
    };
    Ok(log_p.exp())
}

/// Result of comparing every reachable trajectory against the forced-`a*`
/// trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalitySmartReport {
    /// Largest observed `π_t(a*) − π̃_t(a*)`; at or below zero (up to
    /// rounding) for optimality-smart rules.
    pub max_violation: f64,
    pub sequences_checked: usize,
    pub exhaustive: bool,
}

/// Checks that no action sequence beats forcing `a*` in terms of `π_t(a*)`.
///
/// Enumerates all `K^T` sequences when that count stays at or below 4096,
/// otherwise samples 10 000 uniform sequences from `sample_seed`.
pub fn verify_optimality_smart(
    rule: &UpdateRuleSpec,
    theta1: &ParamVector,
    inst: &BanditInstance,
    horizon: usize,
    sample_seed: u64,
) -> Result<OptimalitySmartReport> {
    if !rule.kind().accepts_actions() || rule.kind() == UpdateRuleKind::Samba {
        return Err(Error::UnsupportedRule(
            "optimality-smart check runs on logit-state rules with actions",
        ));
    }
    let k = inst.num_arms();
    let a_star = inst.optimal_arm();

    // Forced-a* reference, π̃_t(a*) for t = 1..=horizon+1.
    let mut reference = Vec::with_capacity(horizon + 1);
    let mut theta = theta1.clone();
    reference.push(softmax(&theta).prob(a_star));
    for _ in 0..horizon {
        theta = step_stochastic(rule, &theta, inst, a_star)?;
        reference.push(softmax(&theta).prob(a_star));
    }

    let total = (k as u128).checked_pow(horizon as u32);
    let exhaustive = matches!(total, Some(n) if n <= 4096);
    let sequences: Vec<Vec<usize>> = if exhaustive {
        let n = total.unwrap() as usize;
        (0..n)
            .map(|mut idx| {
                (0..horizon)
                    .map(|_| {
                        let a = idx % k;
                        idx /= k;
                        a
                    })
                    .collect()
            })
            .collect()
    } else {
        (0..10_000u64)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
                rng.set_stream(i);
                (0..horizon)
                    .map(|_| (uniform_f64(&mut rng) * k as f64) as usize % k)
                    .collect()
            })
            .collect()
    };

    let worsts = sequences
        .par_iter()
        .map(|seq| {
            let mut theta = theta1.clone();
            let mut worst = softmax(&theta).prob(a_star) - reference[0];
            for (t, &a) in seq.iter().enumerate() {
                theta = step_stochastic(rule, &theta, inst, a)?;
                let v = softmax(&theta).prob(a_star) - reference[t + 1];
                if v > worst {
                    worst = v;
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_violation = worsts.into_iter().fold(f64::NEG_INFINITY, f64::max);

    Ok(OptimalitySmartReport {
        max_violation,
        sequences_checked: sequences.len(),
        exhaustive,
    })
}
