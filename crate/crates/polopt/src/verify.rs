//! Seeded random-instance property suites: the inequality checks, estimator
//! moments, and MDP identities behind both the `verify` CLI command and the
//! acceptance gate.
//!
//! Every suite draws its instances from a ChaCha stream keyed by
//! `(seed, case_index)`, so results are reproducible and independent of how
//! cases are scheduled across threads.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use std::str::FromStr;

use crate::bandit::{
    nl_inequality_slack, natural_nl_continuous_slack, natural_nl_discrete_slack, softmax,
    spectral_radius, true_gradient, value_hessian, BanditInstance, ParamVector,
};
use crate::harness::uniform_f64;
use crate::mdp::{
    adaptive_npg_learning_rate, bellman_residual, general_nl_slack, npg_contraction_factor,
    optimal_policy, parallel_is_estimate, performance_difference_residual, solve_values,
    step_mdp, value_suboptimality_residual, FiniteMdp, MdpPolicy, MdpRuleKind,
};
use crate::rules::{step_stochastic, stochastic_moment_oracle, UpdateRuleKind, UpdateRuleSpec};
use crate::{Error, Result};

/// A deliberately wrong computation injected as a negative control, proving
/// the suites can actually fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Defect {
    #[default]
    None,
    /// Adds a diagonal term to the Hessian before the smoothness check.
    PerturbHessian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    Nl,
    NaturalNl,
    Ns,
    Moments,
    Mdp,
}

impl SuiteName {
    pub fn all() -> Vec<SuiteName> {
        vec![
            SuiteName::Nl,
            SuiteName::NaturalNl,
            SuiteName::Ns,
            SuiteName::Moments,
            SuiteName::Mdp,
        ]
    }
}

impl FromStr for SuiteName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nl" => Ok(SuiteName::Nl),
            "natural-nl" => Ok(SuiteName::NaturalNl),
            "ns" => Ok(SuiteName::Ns),
            "moments" => Ok(SuiteName::Moments),
            "mdp" => Ok(SuiteName::Mdp),
            other => Err(Error::InvalidRule(format!("unknown suite '{other}'"))),
        }
    }
}

impl std::fmt::Display for SuiteName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SuiteName::Nl => "nl",
            SuiteName::NaturalNl => "natural-nl",
            SuiteName::Ns => "ns",
            SuiteName::Moments => "moments",
            SuiteName::Mdp => "mdp",
        };
        f.write_str(s)
    }
}

/// Outcome of one suite run.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: SuiteName,
    pub cases: usize,
    pub failures: usize,
    /// Most extreme signed slack seen; the check passes while this stays
    /// above the suite's tolerance.
    pub worst_slack: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn case_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub(crate) fn unif(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform_f64(rng)
}

/// Random instance with rewards in `(0, 1]` and a clear unique optimum.
pub fn random_instance(rng: &mut ChaCha8Rng, k_min: usize, k_max: usize) -> BanditInstance {
    let k = if k_max > k_min {
        k_min + (uniform_f64(rng) * (k_max - k_min + 1) as f64) as usize % (k_max - k_min + 1)
    } else {
        k_min
    };
    loop {
        let rewards: Vec<f64> = (0..k).map(|_| unif(rng, 0.05, 1.0)).collect();
        if let Ok(inst) = BanditInstance::new(rewards) {
            if inst.gap() > 1e-6 {
                return inst;
            }
        }
    }
}

pub fn random_logits(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..k).map(|_| unif(rng, -scale, scale)).collect())
        .expect("finite by construction")
}

/// Random MDP with row-stochastic transitions, rewards in `(0, 1]`, and
/// strictly positive `μ` and `ρ`.
pub fn random_mdp(rng: &mut ChaCha8Rng, s_max: usize, a_max: usize, gamma: f64) -> FiniteMdp {
    let s = 2 + (uniform_f64(rng) * (s_max - 1) as f64) as usize % (s_max - 1);
    let a = 2 + (uniform_f64(rng) * (a_max - 1) as f64) as usize % (a_max - 1);
    let mut transition = vec![vec![vec![0.0; s]; a]; s];
    for rows in &mut transition {
        for row in rows.iter_mut() {
            let mut total = 0.0;
            for p in row.iter_mut() {
                *p = unif(rng, 0.01, 1.0);
                total += *p;
            }
            for p in row.iter_mut() {
                *p /= total;
            }
            // Renormalize exactly so validation's 1e-12 budget is safe.
            let sum: f64 = row.iter().sum();
            let last = row.len() - 1;
            row[last] += 1.0 - sum;
        }
    }
    let rewards: Vec<Vec<f64>> = (0..s)
        .map(|_| (0..a).map(|_| unif(rng, 0.05, 1.0)).collect())
        .collect();
    let dist = |rng: &mut ChaCha8Rng| {
        let mut d: Vec<f64> = (0..s).map(|_| 0.2 + uniform_f64(rng)).collect();
        let total: f64 = d.iter().sum();
        for p in d.iter_mut() {
            *p /= total;
        }
        let sum: f64 = d.iter().sum();
        d[0] += 1.0 - sum;
        d
    };
    let mu = dist(rng);
    let rho = dist(rng);
    FiniteMdp::new(transition, rewards, gamma, mu, rho).expect("constructed valid")
}

pub fn random_mdp_policy(rng: &mut ChaCha8Rng, mdp: &FiniteMdp, scale: f64) -> MdpPolicy {
    let logits = (0..mdp.num_states())
        .map(|_| {
            (0..mdp.num_actions())
                .map(|_| unif(rng, -scale, scale))
                .collect()
        })
        .collect();
    MdpPolicy::new(logits).expect("finite by construction")
}

struct CaseOutcome {
    ok: bool,
    slack: f64,
}

fn sweep<F>(cases: usize, seed: u64, f: F) -> SuiteResult
where
    F: Fn(&mut ChaCha8Rng) -> CaseOutcome + Sync,
{
    let outcomes: Vec<CaseOutcome> = (0..cases as u64)
        .into_par_iter()
        .map(|i| f(&mut case_rng(seed, i)))
        .collect();
    let failures = outcomes.iter().filter(|o| !o.ok).count();
    let worst_slack = outcomes
        .iter()
        .map(|o| o.slack)
        .fold(f64::INFINITY, f64::min);
    SuiteResult {
        name: SuiteName::Nl, // caller overwrites
        cases,
        failures,
        worst_slack,
    }
}

fn nl_suite(seed: u64) -> SuiteResult {
    let mut r = sweep(10_000, seed, |rng| {
        let inst = random_instance(rng, 2, 8);
        let theta = random_logits(rng, inst.num_arms(), 6.0);
        let slack = nl_inequality_slack(&theta, &inst).expect("valid inputs");
        CaseOutcome {
            ok: slack >= -1e-12,
            slack,
        }
    });
    r.name = SuiteName::Nl;
    r
}

fn natural_nl_suite(seed: u64) -> SuiteResult {
    // General slack at K ∈ 3..6 plus the exact-equality regime at K = 2.
    let general = sweep(10_000, seed, |rng| {
        let inst = random_instance(rng, 3, 6);
        let theta = random_logits(rng, inst.num_arms(), 6.0);
        let eta = unif(rng, 1e-3, 10.0);
        let cont = natural_nl_continuous_slack(&theta, &inst).expect("valid inputs");
        let disc = natural_nl_discrete_slack(&theta, &inst, eta).expect("valid inputs");
        let slack = cont.min(disc);
        CaseOutcome {
            ok: slack >= -1e-12,
            slack,
        }
    });
    let tight = sweep(1_000, seed ^ 0x9e37_79b9, |rng| {
        let inst = random_instance(rng, 2, 2);
        let theta = random_logits(rng, 2, 8.0);
        let eta = unif(rng, 1e-3, 10.0);
        let cont = natural_nl_continuous_slack(&theta, &inst).expect("valid inputs");
        let disc = natural_nl_discrete_slack(&theta, &inst, eta).expect("valid inputs");
        let worst = cont.abs().max(disc.abs());
        CaseOutcome {
            ok: worst < 1e-12,
            slack: -worst,
        }
    });
    SuiteResult {
        name: SuiteName::NaturalNl,
        cases: general.cases + tight.cases,
        failures: general.failures + tight.failures,
        worst_slack: general.worst_slack.min(tight.worst_slack),
    }
}

fn ns_suite(seed: u64, defect: Defect) -> SuiteResult {
    let mut r = sweep(10_000, seed, |rng| {
        let inst = random_instance(rng, 2, 8);
        let theta = random_logits(rng, inst.num_arms(), 6.0);
        let mut hessian = value_hessian(&theta, &inst).expect("valid inputs");
        if defect == Defect::PerturbHessian {
            for (i, row) in hessian.iter_mut().enumerate() {
                row[i] += 0.5;
            }
        }
        let radius = spectral_radius(&hessian).expect("symmetric by construction");
        let grad = true_gradient(&theta, &inst).expect("valid inputs");
        let slack = 3.0 * grad.l2_norm + 1e-10 - radius.value;
        CaseOutcome {
            ok: radius.converged && slack >= 0.0,
            slack,
        }
    });
    r.name = SuiteName::Ns;
    r
}

fn moments_suite(seed: u64) -> SuiteResult {
    let bandit = sweep(1_000, seed, |rng| {
        let inst = random_instance(rng, 2, 6);
        let theta = random_logits(rng, inst.num_arms(), 5.0);
        let pi = softmax(&theta);
        let mut worst = f64::INFINITY;
        let mut ok = true;

        let pg = UpdateRuleSpec::fixed(UpdateRuleKind::PgStoch, 0.5, &inst).unwrap();
        let m = stochastic_moment_oracle(&pg, &theta, &inst).unwrap();
        let g = true_gradient(&theta, &inst).unwrap();
        for (a, b) in m.mean_update.iter().zip(&g.gradient) {
            let s = 1e-12 - (a - b).abs();
            worst = worst.min(s);
            ok &= s >= 0.0;
        }
        let s = 2.0 - m.second_moment;
        worst = worst.min(s);
        ok &= s >= 0.0;

        let npg = UpdateRuleSpec::fixed(UpdateRuleKind::NpgStoch, 0.5, &inst).unwrap();
        let m = stochastic_moment_oracle(&npg, &theta, &inst).unwrap();
        for (a, b) in m.mean_update.iter().zip(inst.rewards()) {
            let s = 1e-12 - (a - b).abs();
            worst = worst.min(s);
            ok &= s >= 0.0;
        }
        let expected: f64 = inst
            .rewards()
            .iter()
            .enumerate()
            .map(|(a, r)| r * r / pi.prob(a))
            .sum();
        let s = 1e-10 * expected.max(1.0) - (m.second_moment - expected).abs();
        worst = worst.min(s);
        ok &= s >= 0.0;

        // Expectation identity: Σ_a π(a)·(step(a) − θ) = η·mean for every
        // stochastic kind.
        for kind in [
            UpdateRuleKind::PgStoch,
            UpdateRuleKind::NpgStoch,
            UpdateRuleKind::GnpgStoch,
        ] {
            let spec = UpdateRuleSpec::fixed(kind, 0.5, &inst).unwrap();
            let m = stochastic_moment_oracle(&spec, &theta, &inst).unwrap();
            let mut mean_step = vec![0.0; inst.num_arms()];
            for a in 0..inst.num_arms() {
                let stepped = step_stochastic(&spec, &theta, &inst, a).unwrap();
                for ((ms, s2), t) in mean_step
                    .iter_mut()
                    .zip(stepped.logits())
                    .zip(theta.logits())
                {
                    *ms += pi.prob(a) * (s2 - t);
                }
            }
            for (lhs, rhs) in mean_step.iter().zip(&m.mean_update) {
                let s = 1e-10 - (lhs - 0.5 * rhs).abs();
                worst = worst.min(s);
                ok &= s >= 0.0;
            }
        }
        CaseOutcome { ok, slack: worst }
    });

    let mdp = sweep(100, seed ^ 0x5bd1_e995, |rng| {
        let gamma = [0.5, 0.9, 0.99][(uniform_f64(rng) * 3.0) as usize % 3];
        let mdp = random_mdp(rng, 4, 4, gamma);
        let policy = random_mdp_policy(rng, &mdp, 2.0);
        let bundle = solve_values(&mdp, &policy).unwrap();
        let probs = policy.probs();
        let mut worst = f64::INFINITY;
        let mut ok = true;
        for s in 0..mdp.num_states() {
            for a_s in 0..mdp.num_actions() {
                let mut actions = vec![0usize; mdp.num_states()];
                actions[s] = a_s;
                let q_hat = parallel_is_estimate(&mdp, &policy, &actions, &bundle).unwrap();
                // Row s must be zero except at a_s where it holds Q/π.
                for a in 0..mdp.num_actions() {
                    let expected = if a == a_s {
                        bundle.q[s][a] / probs[s][a]
                    } else {
                        0.0
                    };
                    let slack = 1e-10 * expected.abs().max(1.0) - (q_hat[s][a] - expected).abs();
                    worst = worst.min(slack);
                    ok &= slack >= 0.0;
                }
            }
            // Exact mean and second moment over outcomes in this state.
            let mut mean = vec![0.0; mdp.num_actions()];
            let mut second = 0.0;
            for a_s in 0..mdp.num_actions() {
                let w = probs[s][a_s];
                let q = bundle.q[s][a_s] / probs[s][a_s];
                mean[a_s] += w * q;
                second += w * q * q;
            }
            for a in 0..mdp.num_actions() {
                let slack = 1e-10 * bundle.q[s][a].abs().max(1.0) - (mean[a] - bundle.q[s][a]).abs();
                worst = worst.min(slack);
                ok &= slack >= 0.0;
            }
            let expected: f64 = (0..mdp.num_actions())
                .map(|a| bundle.q[s][a] * bundle.q[s][a] / probs[s][a])
                .sum();
            let slack = 1e-8 * expected.max(1.0) - (second - expected).abs();
            worst = worst.min(slack);
            ok &= slack >= 0.0;
        }
        CaseOutcome { ok, slack: worst }
    });

    SuiteResult {
        name: SuiteName::Moments,
        cases: bandit.cases + mdp.cases,
        failures: bandit.failures + mdp.failures,
        worst_slack: bandit.worst_slack.min(mdp.worst_slack),
    }
}

fn mdp_suite(seed: u64) -> SuiteResult {
    let mut r = sweep(500, seed, |rng| {
        let gamma = [0.5, 0.9, 0.99][(uniform_f64(rng) * 3.0) as usize % 3];
        let mdp = random_mdp(rng, 6, 6, gamma);
        let policy = random_mdp_policy(rng, &mdp, 2.0);
        let other = random_mdp_policy(rng, &mdp, 2.0);
        let bundle = solve_values(&mdp, &policy).unwrap();
        let horizon_cap = 1.0 / (1.0 - gamma);

        let mut worst = f64::INFINITY;
        let mut ok = true;
        let mut check = |slack: f64| {
            worst = worst.min(slack);
            ok &= slack >= 0.0;
        };

        check(1e-10 - bellman_residual(&mdp, &policy, &bundle));
        check(1e-10 - (bundle.d_mu.iter().sum::<f64>() - 1.0).abs());
        for s in 0..mdp.num_states() {
            check(bundle.d_mu[s] - (1.0 - gamma) * mdp.mu()[s] + 1e-12);
            check(bundle.v[s]);
            check(horizon_cap - bundle.v[s] + 1e-12);
            for a in 0..mdp.num_actions() {
                check(bundle.q[s][a]);
                check(horizon_cap - bundle.q[s][a] + 1e-12);
            }
        }
        check(1e-10 - performance_difference_residual(&mdp, &other, &policy).unwrap());
        check(1e-10 - value_suboptimality_residual(&mdp, &policy).unwrap());

        match general_nl_slack(&mdp, &policy) {
            Ok(slack) => check(slack + 1e-10),
            Err(Error::TiedGreedy { .. }) => {}
            Err(e) => panic!("unexpected error: {e}"),
        }

        // One NPG step at a fixed rate: monotone improvement at the
        // contraction factor of the discrete inequality.
        match npg_contraction_factor(&mdp, &policy, &bundle, 1.0) {
            Ok(c) => {
                let opt = optimal_policy(&mdp).unwrap();
                let mut ratio: f64 = 0.0;
                for s in 0..mdp.num_states() {
                    ratio = ratio.max(opt.bundle.d_rho[s] / mdp.rho()[s]);
                }
                let v_star = opt.bundle.value_under(mdp.rho());
                let v_now = bundle.value_under(mdp.rho());
                let next = step_mdp(MdpRuleKind::NpgTrue, &mdp, &policy, 1.0, None).unwrap();
                let v_next = solve_values(&mdp, &next).unwrap().value_under(mdp.rho());
                check(v_next - v_now + 1e-12);
                check(
                    (v_next - v_now) - c * (1.0 - gamma) / ratio * (v_star - v_now) + 1e-10,
                );

                // Adaptive schedule: the same bound with the factor pinned
                // at one half.
                if let Ok(eta) = adaptive_npg_learning_rate(&mdp, &policy, &bundle) {
                    let next =
                        step_mdp(MdpRuleKind::NpgTrue, &mdp, &policy, eta, None).unwrap();
                    let v_next =
                        solve_values(&mdp, &next).unwrap().value_under(mdp.rho());
                    check(
                        (v_next - v_now)
                            - 0.5 * (1.0 - gamma) / ratio * (v_star - v_now)
                            + 1e-10,
                    );
                }
            }
            Err(Error::TiedGreedy { .. }) => {}
            Err(e) => panic!("unexpected error: {e}"),
        }

        CaseOutcome { ok, slack: worst }
    });
    r.name = SuiteName::Mdp;
    r
}

/// Runs one suite at its acceptance-grade case count.
pub fn run_suite(name: SuiteName, seed: u64, defect: Defect) -> SuiteResult {
    match name {
        SuiteName::Nl => nl_suite(seed),
        SuiteName::NaturalNl => natural_nl_suite(seed),
        SuiteName::Ns => ns_suite(seed, defect),
        SuiteName::Moments => moments_suite(seed),
        SuiteName::Mdp => mdp_suite(seed),
    }
}

pub fn run_suites(names: &[SuiteName], seed: u64, defect: Defect) -> Vec<SuiteResult> {
    names.iter().map(|&n| run_suite(n, seed, defect)).collect()
}

/// Independent numeric oracles for the test suites: finite differences,
/// characteristic-polynomial eigenvalues, and iterative Bellman backups.
/// Nothing here shares code with the implementations it checks.
#[doc(hidden)]
pub mod test_support {
    pub use super::{random_instance, random_logits, random_mdp, random_mdp_policy};
    use crate::bandit::{expected_reward, softmax, true_gradient, BanditInstance, Matrix, ParamVector};
    use crate::mdp::{solve_values, FiniteMdp, MdpPolicy};

    /// Central finite differences of `θ ↦ π_θ^⊤ r`.
    pub fn fd_gradient(theta: &ParamVector, inst: &BanditInstance, h: f64) -> Vec<f64> {
        let k = theta.len();
        (0..k)
            .map(|i| {
                let mut plus = theta.logits().to_vec();
                let mut minus = plus.clone();
                plus[i] += h;
                minus[i] -= h;
                let f = |l: Vec<f64>| {
                    expected_reward(&softmax(&ParamVector::new(l).unwrap()), inst).unwrap()
                };
                (f(plus) - f(minus)) / (2.0 * h)
            })
            .collect()
    }

    /// Central finite differences of the exact gradient, column by column.
    pub fn fd_hessian(theta: &ParamVector, inst: &BanditInstance, h: f64) -> Matrix {
        let k = theta.len();
        let mut out = vec![vec![0.0; k]; k];
        for j in 0..k {
            let mut plus = theta.logits().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            let gp = true_gradient(&ParamVector::new(plus).unwrap(), inst).unwrap();
            let gm = true_gradient(&ParamVector::new(minus).unwrap(), inst).unwrap();
            for i in 0..k {
                out[i][j] = (gp.gradient[i] - gm.gradient[i]) / (2.0 * h);
            }
        }
        out
    }

    /// Central finite differences of `θ ↦ V^{π_θ}(μ)`.
    pub fn fd_mdp_gradient(mdp: &FiniteMdp, policy: &MdpPolicy, h: f64) -> Vec<Vec<f64>> {
        let value = |logits: Vec<Vec<f64>>| {
            let p = MdpPolicy::new(logits).unwrap();
            let b = solve_values(mdp, &p).unwrap();
            b.value_under(mdp.mu())
        };
        (0..mdp.num_states())
            .map(|s| {
                (0..mdp.num_actions())
                    .map(|a| {
                        let mut plus = policy.logits().to_vec();
                        let mut minus = plus.clone();
                        plus[s][a] += h;
                        minus[s][a] -= h;
                        (value(plus) - value(minus)) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }

    /// Iterative Bellman backup run to a sup-norm fixed point.
    pub fn value_iteration(mdp: &FiniteMdp, probs: &[Vec<f64>], tol: f64) -> Vec<f64> {
        let s_n = mdp.num_states();
        let a_n = mdp.num_actions();
        let mut v = vec![0.0; s_n];
        for _ in 0..2_000_000 {
            let mut next = vec![0.0; s_n];
            for s in 0..s_n {
                for a in 0..a_n {
                    let backup: f64 = (0..s_n)
                        .map(|s2| mdp.transition_prob(s, a, s2) * v[s2])
                        .sum();
                    next[s] += probs[s][a] * (mdp.reward(s, a) + mdp.gamma() * backup);
                }
            }
            let drift = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            v = next;
            if drift < tol {
                break;
            }
        }
        v
    }

    /// Spectral radius of a symmetric matrix via its characteristic
    /// polynomial: Faddeev–LeVerrier coefficients, then real-root isolation
    /// through the critical points of each derivative.
    pub fn charpoly_spectral_radius(m: &Matrix) -> f64 {
        let n = m.len();
        let coeffs = char_poly(m);
        let roots = real_roots(&coeffs);
        assert!(
            !roots.is_empty(),
            "a symmetric {n}×{n} matrix has real eigenvalues"
        );
        roots.iter().map(|r| r.abs()).fold(0.0, f64::max)
    }

    fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
        let n = a.len();
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i][k];
                for j in 0..n {
                    out[i][j] += aik * b[k][j];
                }
            }
        }
        out
    }

    fn trace(a: &Matrix) -> f64 {
        (0..a.len()).map(|i| a[i][i]).sum()
    }

    /// Coefficients `[1, c₁, …, c_n]` of `λⁿ + c₁λⁿ⁻¹ + … + c_n`.
    fn char_poly(a: &Matrix) -> Vec<f64> {
        let n = a.len();
        let mut coeffs = vec![1.0];
        let mut m = a.clone();
        for k in 1..=n {
            let c = -trace(&m) / k as f64;
            coeffs.push(c);
            if k == n {
                break;
            }
            for i in 0..n {
                m[i][i] += c;
            }
            m = mat_mul(a, &m);
        }
        coeffs
    }

    fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
        coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    fn derivative(coeffs: &[f64]) -> Vec<f64> {
        let deg = coeffs.len() - 1;
        coeffs[..deg]
            .iter()
            .enumerate()
            .map(|(i, &c)| c * (deg - i) as f64)
            .collect()
    }

    fn bisect(coeffs: &[f64], mut lo: f64, mut hi: f64) -> f64 {
        let mut f_lo = eval_poly(coeffs, lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f_mid = eval_poly(coeffs, mid);
            if f_mid == 0.0 {
                return mid;
            }
            if (f_lo < 0.0) == (f_mid < 0.0) {
                lo = mid;
                f_lo = f_mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn real_roots(coeffs: &[f64]) -> Vec<f64> {
        let deg = coeffs.len() - 1;
        if deg == 0 {
            return Vec::new();
        }
        if deg == 1 {
            return vec![-coeffs[1] / coeffs[0]];
        }
        // Cauchy bound on root magnitude.
        let bound = 1.0
            + coeffs[1..]
                .iter()
                .map(|c| (c / coeffs[0]).abs())
                .fold(0.0, f64::max);
        let mut knots = vec![-bound];
        for c in real_roots(&derivative(coeffs)) {
            if c > -bound && c < bound {
                knots.push(c);
            }
        }
        knots.push(bound);
        knots.sort_by(f64::total_cmp);

        let scale = coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
        let mut roots = Vec::new();
        for window in knots.windows(2) {
            let (a, b) = (window[0], window[1]);
            let (fa, fb) = (eval_poly(coeffs, a), eval_poly(coeffs, b));
            // Sign change: simple root inside. Touching zero at a knot:
            // even-multiplicity root at a critical point.
            if (fa < 0.0) != (fb < 0.0) {
                roots.push(bisect(coeffs, a, b));
            }
        }
        for &c in &knots {
            if eval_poly(coeffs, c).abs() <= 1e-9 * scale.max(1.0)
                && roots.iter().all(|r| (r - c).abs() > 1e-7)
            {
                roots.push(c);
            }
        }
        roots
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_on_default_seed() {
        // Smoke-size confirmation here; the acceptance gate runs full sizes.
        let r = run_suite(SuiteName::Nl, 42, Defect::None);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.cases, 10_000);
    }

    #[test]
    fn injected_hessian_defect_is_caught() {
        let r = run_suite(SuiteName::Ns, 42, Defect::PerturbHessian);
        assert!(!r.passed(), "defect must produce failures");
        assert!(r.failures > 0);
    }

    #[test]
    fn suite_names_round_trip() {
        for name in SuiteName::all() {
            let s = name.to_string();
            assert_eq!(s.parse::<SuiteName>().unwrap(), name);
        }
        assert!("bogus".parse::<SuiteName>().is_err());
    }

    #[test]
    fn charpoly_oracle_handles_repeated_roots() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = test_support::charpoly_spectral_radius(&eye);
        assert!((r - 1.0).abs() < 1e-8);
    }
}

