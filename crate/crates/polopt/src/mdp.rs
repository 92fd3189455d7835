//! Tabular MDP engine: exact V/Q/advantage/discounted-state-distribution
//! solvers, the exact policy gradient, the on-policy parallel IS estimator,
//! and MDP versions of the PG/NPG/GNPG updates.
//!
//! Linear systems are solved by partial-pivot elimination rather than
//! iteratively; value iteration exists only as a test oracle.

use serde::{Deserialize, Serialize};

use crate::bandit::{softmax, ParamVector};
use crate::{Error, Result};

/// A finite MDP `(S, A, P, r, γ, μ, ρ)` with strictly positive rewards and a
/// strictly positive initial state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FiniteMdpDe")]
pub struct FiniteMdp {
    #[serde(rename = "P")]
    transition: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "r")]
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

#[derive(Deserialize)]
struct FiniteMdpDe {
    #[serde(rename = "P")]
    transition: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "r")]
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl TryFrom<FiniteMdpDe> for FiniteMdp {
    type Error = Error;
    fn try_from(de: FiniteMdpDe) -> Result<Self> {
        FiniteMdp::new(de.transition, de.rewards, de.gamma, de.mu, de.rho)
    }
}

impl FiniteMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        mu: Vec<f64>,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let s = transition.len();
        if s == 0 {
            return Err(Error::InvalidInstance("empty state space".into()));
        }
        let a = transition[0].len();
        if a == 0 {
            return Err(Error::InvalidInstance("empty action space".into()));
        }
        if rewards.len() != s || mu.len() != s || rho.len() != s {
            return Err(Error::InvalidInstance(
                "state-indexed fields disagree on S".into(),
            ));
        }
        for (si, (rows, r_row)) in transition.iter().zip(&rewards).enumerate() {
            if rows.len() != a || r_row.len() != a {
                return Err(Error::InvalidInstance(format!(
                    "state {si} disagrees on A"
                )));
            }
            for (ai, row) in rows.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::InvalidInstance(format!(
                        "P({si},{ai}) has wrong length"
                    )));
                }
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidInstance(format!(
                        "P({si},{ai}) has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInstance(format!(
                        "P({si},{ai}) sums to {sum}, not 1"
                    )));
                }
                let r = r_row[ai];
                if !r.is_finite() || r <= 0.0 || r > 1.0 {
                    return Err(Error::InvalidInstance(format!(
                        "r({si},{ai}) = {r} outside (0, 1]"
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidInstance(format!(
                "gamma = {gamma} outside [0, 1)"
            )));
        }
        for (name, dist, need_positive) in [("mu", &mu, true), ("rho", &rho, false)] {
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInstance(format!(
                    "{name} sums to {sum}, not 1"
                )));
            }
            if dist.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidInstance(format!("{name} has negative mass")));
            }
            if need_positive && dist.iter().any(|&p| p <= 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "{name} must be strictly positive on every state"
                )));
            }
        }
        Ok(Self {
            transition,
            rewards,
            gamma,
            mu,
            rho,
        })
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn num_actions(&self) -> usize {
        self.transition[0].len()
    }

    pub fn transition_prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[s][a][s_next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
}

/// Softmax policy over actions, one logit row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpPolicy {
    logits: Vec<Vec<f64>>,
}

impl MdpPolicy {
    pub fn new(logits: Vec<Vec<f64>>) -> Result<Self> {
        for row in &logits {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("policy logits"));
            }
        }
        Ok(Self { logits })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            logits: vec![vec![0.0; num_actions]; num_states],
        }
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub(crate) fn logits_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    /// Per-state probability rows (each row sums to one).
    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|row| {
                let theta = ParamVector::new(row.clone()).expect("validated at construction");
                softmax(&theta).probs().to_vec()
            })
            .collect()
    }
}

/// Everything the identities need about one policy on one MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub adv: Vec<Vec<f64>>,
    pub d_mu: Vec<f64>,
    pub d_rho: Vec<f64>,
}

impl ValueBundle {
    pub fn value_under(&self, dist: &[f64]) -> f64 {
        dist.iter().zip(&self.v).map(|(w, v)| w * v).sum()
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for row in col + 1..n {
            let factor = a[row][col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                let upper = a[col][k];
                a[row][k] -= factor * upper;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

fn policy_transition(mdp: &FiniteMdp, probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let s_n = mdp.num_states();
    let a_n = mdp.num_actions();
    let mut p = vec![vec![0.0; s_n]; s_n];
    for s in 0..s_n {
        for a in 0..a_n {
            let w = probs[s][a];
            for (s2, row) in p[s].iter_mut().enumerate() {
                *row += w * mdp.transition_prob(s, a, s2);
            }
        }
    }
    p
}

pub(crate) fn solve_values_probs(mdp: &FiniteMdp, probs: &[Vec<f64>]) -> ValueBundle {
    let s_n = mdp.num_states();
    let a_n = mdp.num_actions();
    let gamma = mdp.gamma();
    let p_pi = policy_transition(mdp, probs);

    // (I − γ P_π) V = r_π
    let mut a = vec![vec![0.0; s_n]; s_n];
    let mut b = vec![0.0; s_n];
    for s in 0..s_n {
        for s2 in 0..s_n {
            a[s][s2] = if s == s2 { 1.0 } else { 0.0 } - gamma * p_pi[s][s2];
        }
        b[s] = probs[s]
            .iter()
            .zip(&mdp.rewards[s])
            .map(|(p, r)| p * r)
            .sum();
    }
    let v = solve_linear(a, b);

    let mut q = vec![vec![0.0; a_n]; s_n];
    let mut adv = vec![vec![0.0; a_n]; s_n];
    for s in 0..s_n {
        for act in 0..a_n {
            let backup: f64 = (0..s_n)
                .map(|s2| mdp.transition_prob(s, act, s2) * v[s2])
                .sum();
            q[s][act] = mdp.reward(s, act) + gamma * backup;
            adv[s][act] = q[s][act] - v[s];
        }
    }

    // (I − γ P_π^⊤) d = (1 − γ)·init, for both μ and ρ.
    let solve_dist = |init: &[f64]| {
        let mut a = vec![vec![0.0; s_n]; s_n];
        let mut b = vec![0.0; s_n];
        for s in 0..s_n {
            for s2 in 0..s_n {
                a[s][s2] = if s == s2 { 1.0 } else { 0.0 } - gamma * p_pi[s2][s];
            }
            b[s] = (1.0 - gamma) * init[s];
        }
        solve_linear(a, b)
    };
    let d_mu = solve_dist(mdp.mu());
    let d_rho = solve_dist(mdp.rho());

    ValueBundle {
        v,
        q,
        adv,
        d_mu,
        d_rho,
    }
}

/// Exact values, advantages, and discounted state distributions of `policy`.
pub fn solve_values(mdp: &FiniteMdp, policy: &MdpPolicy) -> Result<ValueBundle> {
    check_shape(mdp, policy)?;
    Ok(solve_values_probs(mdp, &policy.probs()))
}

fn check_shape(mdp: &FiniteMdp, policy: &MdpPolicy) -> Result<()> {
    if policy.logits().len() != mdp.num_states() {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states(),
            got: policy.logits().len(),
        });
    }
    for row in policy.logits() {
        if row.len() != mdp.num_actions() {
            return Err(Error::DimensionMismatch {
                expected: mdp.num_actions(),
                got: row.len(),
            });
        }
    }
    Ok(())
}

/// Sup-norm Bellman residual `‖V − (r_π + γ P_π V)‖_∞` of a bundle.
pub fn bellman_residual(mdp: &FiniteMdp, policy: &MdpPolicy, bundle: &ValueBundle) -> f64 {
    let probs = policy.probs();
    let p_pi = policy_transition(mdp, &probs);
    let mut worst = 0.0f64;
    for s in 0..mdp.num_states() {
        let r_pi: f64 = probs[s]
            .iter()
            .zip(&mdp.rewards[s])
            .map(|(p, r)| p * r)
            .sum();
        let backup: f64 = p_pi[s].iter().zip(&bundle.v).map(|(p, v)| p * v).sum();
        worst = worst.max((bundle.v[s] - (r_pi + mdp.gamma() * backup)).abs());
    }
    worst
}

/// Exact policy gradient:
/// `∂V(μ)/∂θ(s,a) = (1/(1−γ))·d_μ(s)·π(a|s)·A(s,a)`.
pub fn mdp_true_gradient(mdp: &FiniteMdp, policy: &MdpPolicy) -> Result<Vec<Vec<f64>>> {
    let bundle = solve_values(mdp, policy)?;
    Ok(mdp_true_gradient_with(mdp, policy, &bundle))
}

pub fn mdp_true_gradient_with(
    mdp: &FiniteMdp,
    policy: &MdpPolicy,
    bundle: &ValueBundle,
) -> Vec<Vec<f64>> {
    let probs = policy.probs();
    let scale = 1.0 / (1.0 - mdp.gamma());
    (0..mdp.num_states())
        .map(|s| {
            let coef = scale * bundle.d_mu[s];
            (0..mdp.num_actions())
                .map(|a| coef * (probs[s][a] * bundle.adv[s][a]))
                .collect()
        })
        .collect()
}

/// On-policy parallel IS estimate of `Q`: one sampled action per state, each
/// row zero except at its sampled action where it holds `Q(s,a)/π(a|s)`.
pub fn parallel_is_estimate(
    mdp: &FiniteMdp,
    policy: &MdpPolicy,
    actions: &[usize],
    values: &ValueBundle,
) -> Result<Vec<Vec<f64>>> {
    check_shape(mdp, policy)?;
    if actions.len() != mdp.num_states() {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states(),
            got: actions.len(),
        });
    }
    let probs = policy.probs();
    let mut q_hat = vec![vec![0.0; mdp.num_actions()]; mdp.num_states()];
    for (s, &a) in actions.iter().enumerate() {
        if a >= mdp.num_actions() {
            return Err(Error::ActionOutOfRange {
                action: a,
                arms: mdp.num_actions(),
            });
        }
        q_hat[s][a] = values.q[s][a] / probs[s][a];
    }
    Ok(q_hat)
}

/// The update-rule kinds defined on MDPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MdpRuleKind {
    PgTrue,
    NpgTrue,
    GnpgTrue,
    PgStoch,
    NpgStoch,
    GnpgStoch,
}

impl MdpRuleKind {
    pub fn is_true_gradient(self) -> bool {
        matches!(self, Self::PgTrue | Self::NpgTrue | Self::GnpgTrue)
    }
}

fn stochastic_pg_tensor(
    mdp: &FiniteMdp,
    probs: &[Vec<f64>],
    bundle: &ValueBundle,
    q_hat: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let scale = 1.0 / (1.0 - mdp.gamma());
    (0..mdp.num_states())
        .map(|s| {
            let mean: f64 = probs[s].iter().zip(&q_hat[s]).map(|(p, q)| p * q).sum();
            (0..mdp.num_actions())
                .map(|a| scale * bundle.d_mu[s] * probs[s][a] * (q_hat[s][a] - mean))
                .collect()
        })
        .collect()
}

fn frobenius_norm(g: &[Vec<f64>]) -> f64 {
    g.iter()
        .flat_map(|row| row.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// One update step on the MDP. Stochastic kinds require one sampled action
/// per state; true-gradient kinds ignore `actions`.
pub fn step_mdp(
    kind: MdpRuleKind,
    mdp: &FiniteMdp,
    policy: &MdpPolicy,
    eta: f64,
    actions: Option<&[usize]>,
) -> Result<MdpPolicy> {
    check_shape(mdp, policy)?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidRule(format!("eta = {eta} must be positive")));
    }
    let bundle = solve_values(mdp, policy)?;
    let direction: Vec<Vec<f64>> = match kind {
        MdpRuleKind::PgTrue => mdp_true_gradient_with(mdp, policy, &bundle),
        MdpRuleKind::NpgTrue => bundle.q.clone(),
        MdpRuleKind::GnpgTrue => {
            let g = mdp_true_gradient_with(mdp, policy, &bundle);
            let norm = frobenius_norm(&g);
            if norm == 0.0 {
                return Err(Error::ZeroGradient);
            }
            g.iter()
                .map(|row| row.iter().map(|x| x / norm).collect())
                .collect()
        }
        MdpRuleKind::PgStoch | MdpRuleKind::NpgStoch | MdpRuleKind::GnpgStoch => {
            let acts = actions.ok_or(Error::UnsupportedRule(
                "stochastic MDP step needs one action per state",
            ))?;
            let q_hat = parallel_is_estimate(mdp, policy, acts, &bundle)?;
            match kind {
                MdpRuleKind::NpgStoch => q_hat,
                MdpRuleKind::PgStoch => {
                    stochastic_pg_tensor(mdp, &policy.probs(), &bundle, &q_hat)
                }
                MdpRuleKind::GnpgStoch => {
                    let g = stochastic_pg_tensor(mdp, &policy.probs(), &bundle, &q_hat);
                    let norm = frobenius_norm(&g);
                    if norm == 0.0 {
                        return Err(Error::ZeroGradient);
                    }
                    g.iter()
                        .map(|row| row.iter().map(|x| x / norm).collect())
                        .collect()
                }
                _ => unreachable!(),
            }
        }
    };
    let mut next = policy.clone();
    for (row, d_row) in next.logits_mut().iter_mut().zip(&direction) {
        for (t, d) in row.iter_mut().zip(d_row) {
            *t += eta * d;
        }
    }
    Ok(next)
}

/// Per-state greedy action and gap with respect to `Q`.
fn greedy_gaps(mdp: &FiniteMdp, bundle: &ValueBundle) -> Result<Vec<(usize, f64)>> {
    if mdp.num_actions() < 2 {
        return Err(Error::TiedGreedy { state: 0 });
    }
    (0..mdp.num_states())
        .map(|s| {
            let row = &bundle.q[s];
            let greedy = crate::bandit::argmax(row);
            let mut second = f64::NEG_INFINITY;
            for (a, &q) in row.iter().enumerate() {
                if a != greedy {
                    second = second.max(q);
                }
            }
            let gap = row[greedy] - second;
            if gap.abs() < 1e-12 {
                return Err(Error::TiedGreedy { state: s });
            }
            Ok((greedy, gap))
        })
        .collect()
}

/// The adaptive NPG schedule `η_t = 1 / min_s { π(ā_t(s)|s) · Δ_t(s) }`.
pub fn adaptive_npg_learning_rate(
    mdp: &FiniteMdp,
    policy: &MdpPolicy,
    values: &ValueBundle,
) -> Result<f64> {
    check_shape(mdp, policy)?;
    let probs = policy.probs();
    let gaps = greedy_gaps(mdp, values)?;
    let mut denom = f64::INFINITY;
    for (s, &(greedy, gap)) in gaps.iter().enumerate() {
        denom = denom.min(probs[s][greedy] * gap);
    }
    if !(denom > 0.0) {
        return Err(Error::NumericalAbort {
            step: 0,
            what: "greedy probability times gap vanished",
        });
    }
    Ok(1.0 / denom)
}

/// The per-iteration contraction coefficient of an NPG step at rate `eta`:
/// `c(θ) = min_s [1 − 1/(π(ā(s)|s)·(e^{η·Δ(s)} − 1) + 1)]`.
pub fn npg_contraction_factor(
    mdp: &FiniteMdp,
    policy: &MdpPolicy,
    values: &ValueBundle,
    eta: f64,
) -> Result<f64> {
    check_shape(mdp, policy)?;
    let probs = policy.probs();
    let gaps = greedy_gaps(mdp, values)?;
    let mut c = f64::INFINITY;
    for (s, &(greedy, gap)) in gaps.iter().enumerate() {
        // (eta·gap) may overflow exp(); the limit factor is then exactly 1.
        let grow = (eta * gap).exp();
        let factor = 1.0 - 1.0 / (probs[s][greedy] * (grow - 1.0) + 1.0);
        c = c.min(factor);
    }
    Ok(c)
}

/// `|LHS − RHS|` of the performance-difference identity
/// `V^{π′}(ρ) − V^{π}(ρ) = (1/(1−γ))·Σ_s d_ρ^{π′}(s)·Σ_a π′(a|s)·A^{π}(s,a)`
/// with `π′ = pol_new` and `π = pol_old`.
pub fn performance_difference_residual(
    mdp: &FiniteMdp,
    pol_new: &MdpPolicy,
    pol_old: &MdpPolicy,
) -> Result<f64> {
    let new_bundle = solve_values(mdp, pol_new)?;
    let old_bundle = solve_values(mdp, pol_old)?;
    let lhs = new_bundle.value_under(mdp.rho()) - old_bundle.value_under(mdp.rho());
    let probs_new = pol_new.probs();
    let mut rhs = 0.0;
    for s in 0..mdp.num_states() {
        let inner: f64 = probs_new[s]
            .iter()
            .zip(&old_bundle.adv[s])
            .map(|(p, a)| p * a)
            .sum();
        rhs += new_bundle.d_rho[s] * inner;
    }
    rhs /= 1.0 - mdp.gamma();
    Ok((lhs - rhs).abs())
}

/// An exact optimal policy found by policy iteration.
#[derive(Debug, Clone)]
pub struct OptimalPolicy {
    /// Greedy action per state.
    pub actions: Vec<usize>,
    /// Bundle of the optimal policy (V*, Q*, d*, …).
    pub bundle: ValueBundle,
    /// True when the per-state argmax of `Q*` is unique within `1e-9`.
    pub unique: bool,
}

fn one_hot_probs(actions: &[usize], num_actions: usize) -> Vec<Vec<f64>> {
    actions
        .iter()
        .map(|&a| {
            let mut row = vec![0.0; num_actions];
            row[a] = 1.0;
            row
        })
        .collect()
}

/// Exact policy iteration (finite for tabular MDPs).
pub fn optimal_policy(mdp: &FiniteMdp) -> Result<OptimalPolicy> {
    let s_n = mdp.num_states();
    let a_n = mdp.num_actions();
    let mut actions = vec![0usize; s_n];
    for iteration in 0..10_000 {
        let bundle = solve_values_probs(mdp, &one_hot_probs(&actions, a_n));
        let improved: Vec<usize> = bundle.q.iter().map(|row| crate::bandit::argmax(row)).collect();
        if improved == actions {
            let unique = bundle.q.iter().zip(&actions).all(|(row, &greedy)| {
                row.iter()
                    .enumerate()
                    .all(|(a, &q)| a == greedy || row[greedy] - q > 1e-9)
            });
            return Ok(OptimalPolicy {
                actions,
                bundle,
                unique,
            });
        }
        actions = improved;
        if iteration == 9_999 {
            return Err(Error::NumericalAbort {
                step: iteration,
                what: "policy iteration failed to settle",
            });
        }
    }
    unreachable!()
}

/// `|LHS − RHS|` of the value sub-optimality identity
/// `V*(ρ) − V^{π}(ρ) = (1/(1−γ))·Σ_s d_ρ^{π}(s)·Σ_a (π*(a|s) − π(a|s))·Q*(s,a)`.
pub fn value_suboptimality_residual(mdp: &FiniteMdp, policy: &MdpPolicy) -> Result<f64> {
    let opt = optimal_policy(mdp)?;
    let bundle = solve_values(mdp, policy)?;
    let lhs = opt.bundle.value_under(mdp.rho()) - bundle.value_under(mdp.rho());
    let probs = policy.probs();
    let mut rhs = 0.0;
    for s in 0..mdp.num_states() {
        let mut inner = 0.0;
        for a in 0..mdp.num_actions() {
            let p_star = if a == opt.actions[s] { 1.0 } else { 0.0 };
            inner += (p_star - probs[s][a]) * opt.bundle.q[s][a];
        }
        rhs += bundle.d_rho[s] * inner;
    }
    rhs /= 1.0 - mdp.gamma();
    Ok((lhs - rhs).abs())
}

/// Slack of the general Łojasiewicz inequality
/// `‖∂V(μ)/∂θ‖₂ ≥ ‖d_ρ^{π*}/d_μ^{π_θ}‖_∞^{−1} · min_s π(a*(s)|s) · (1/√S) · (V*(ρ) − V^{π_θ}(ρ))`.
pub fn general_nl_slack(mdp: &FiniteMdp, policy: &MdpPolicy) -> Result<f64> {
    let opt = optimal_policy(mdp)?;
    if !opt.unique {
        return Err(Error::TiedGreedy { state: 0 });
    }
    let bundle = solve_values(mdp, policy)?;
    let grad = mdp_true_gradient_with(mdp, policy, &bundle);
    let grad_norm = frobenius_norm(&grad);
    let probs = policy.probs();
    let mut ratio: f64 = 0.0;
    for s in 0..mdp.num_states() {
        ratio = ratio.max(opt.bundle.d_rho[s] / bundle.d_mu[s]);
    }
    let min_star = (0..mdp.num_states())
        .map(|s| probs[s][opt.actions[s]])
        .fold(f64::INFINITY, f64::min);
    let sub = opt.bundle.value_under(mdp.rho()) - bundle.value_under(mdp.rho());
    let lower = (1.0 / ratio) * min_star * sub / (mdp.num_states() as f64).sqrt();
    Ok(grad_norm - lower)
}
