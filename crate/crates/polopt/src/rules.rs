//! The update rules behind one stepping interface, plus the on-policy
//! importance-sampling estimator and its exact-moment oracle.
//!
//! A rule spec is validated against a concrete instance at construction
//! (baseline admissibility and the SAMBA step-size cap depend on the reward
//! vector), so stepping itself stays branch-free and infallible apart from
//! the explicitly documented guards.

use serde::{Deserialize, Serialize};

use crate::bandit::{
    argmax, softmax, true_gradient, BanditInstance, ParamVector, PolicyVector,
};
use crate::{Error, Result};

/// Which update rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRuleKind {
    PgTrue,
    NpgTrue,
    GnpgTrue,
    PgStoch,
    NpgStoch,
    GnpgStoch,
    NpgOracleBaseline,
    NpgLargeBaseline,
    Staying,
    Samba,
}

impl UpdateRuleKind {
    pub fn is_true_gradient(self) -> bool {
        matches!(self, Self::PgTrue | Self::NpgTrue | Self::GnpgTrue)
    }

    /// Rules that consume a (sampled or forced) action.
    pub fn accepts_actions(self) -> bool {
        !self.is_true_gradient()
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Self::NpgOracleBaseline | Self::NpgLargeBaseline)
    }
}

/// Learning-rate policy. `Fixed` is the default; the two schedules are the
/// adaptive rates some convergence statements are stated under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaPolicy {
    Fixed(f64),
    Schedule(EtaSchedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaSchedule {
    /// `η_t = ‖∇π_θ^⊤r‖₂ / 12` (stochastic PG convergence schedule).
    PgGradNorm,
    /// `η_t = π_t(a_t) / (5·r(a_t))` (committal-rate schedule).
    PgCommittal,
}

/// Wire format for a rule spec, before instance validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub kind: UpdateRuleKind,
    pub eta: EtaPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_b: Option<f64>,
}

/// A validated update-rule descriptor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateRuleSpec {
    kind: UpdateRuleKind,
    eta: EtaPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_b: Option<f64>,
}

impl UpdateRuleSpec {
    /// Validates the hyperparameters against `inst` and returns the spec.
    pub fn new(
        kind: UpdateRuleKind,
        eta: EtaPolicy,
        baseline_b: Option<f64>,
        inst: &BanditInstance,
    ) -> Result<Self> {
        match eta {
            EtaPolicy::Fixed(x) => {
                if !x.is_finite() || x <= 0.0 {
                    return Err(Error::InvalidRule(format!("eta = {x} must be positive")));
                }
            }
            EtaPolicy::Schedule(s) => {
                if kind != UpdateRuleKind::PgStoch {
                    return Err(Error::InvalidRule(format!(
                        "schedule {s:?} is only defined for pg-stoch"
                    )));
                }
            }
        }
        let best = inst.reward(inst.optimal_arm());
        match kind {
            UpdateRuleKind::NpgOracleBaseline => {
                let b = baseline_b.ok_or_else(|| {
                    Error::InvalidRule("npg-oracle-baseline requires baseline_b".into())
                })?;
                let lo = best - inst.gap();
                if !(b > lo && b < best) {
                    return Err(Error::InvalidRule(format!(
                        "oracle baseline b = {b} outside ({lo}, {best})"
                    )));
                }
            }
            UpdateRuleKind::NpgLargeBaseline => {
                let b = baseline_b.ok_or_else(|| {
                    Error::InvalidRule("npg-large-baseline requires baseline_b".into())
                })?;
                if !(b > best) {
                    return Err(Error::InvalidRule(format!(
                        "large baseline b = {b} must exceed r(a*) = {best}"
                    )));
                }
            }
            UpdateRuleKind::Samba => {
                let cap = inst.gap() / (best - inst.gap());
                match eta {
                    EtaPolicy::Fixed(x) if x < cap => {}
                    _ => {
                        return Err(Error::InvalidRule(format!(
                            "samba requires fixed eta < Δ/(r(a*) − Δ) = {cap}"
                        )))
                    }
                }
                if baseline_b.is_some() {
                    return Err(Error::InvalidRule("samba takes no baseline".into()));
                }
            }
            _ => {
                if baseline_b.is_some() {
                    return Err(Error::InvalidRule(format!(
                        "{kind:?} takes no baseline"
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            eta,
            baseline_b,
        })
    }

    /// Shorthand for a fixed learning rate and no baseline.
    pub fn fixed(kind: UpdateRuleKind, eta: f64, inst: &BanditInstance) -> Result<Self> {
        Self::new(kind, EtaPolicy::Fixed(eta), None, inst)
    }

    pub fn from_config(cfg: &RuleConfig, inst: &BanditInstance) -> Result<Self> {
        Self::new(cfg.kind, cfg.eta, cfg.baseline_b, inst)
    }

    pub fn kind(&self) -> UpdateRuleKind {
        self.kind
    }

    pub fn eta_policy(&self) -> EtaPolicy {
        self.eta
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline_b
    }

    /// Resolves the learning rate at the current point. `action` feeds the
    /// committal schedule; fixed rates ignore all arguments.
    pub fn eta(
        &self,
        theta: &ParamVector,
        inst: &BanditInstance,
        action: Option<usize>,
    ) -> Result<f64> {
        match self.eta {
            EtaPolicy::Fixed(x) => Ok(x),
            EtaPolicy::Schedule(EtaSchedule::PgGradNorm) => {
                Ok(true_gradient(theta, inst)?.l2_norm / 12.0)
            }
            EtaPolicy::Schedule(EtaSchedule::PgCommittal) => {
                let a = action.ok_or(Error::UnsupportedRule(
                    "pg-committal schedule needs an action",
                ))?;
                let pi = softmax(theta);
                Ok(pi.prob(a) / (5.0 * inst.reward(a)))
            }
        }
    }
}

/// The on-policy importance-sampling reward estimate: zero everywhere except
/// the sampled arm, where it holds `r(a)/π(a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsEstimate {
    pub r_hat: Vec<f64>,
    pub sampled_action: usize,
}

/// SAMBA's state: a simplex point maintained directly, no logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SambaState {
    probs: Vec<f64>,
}

impl SambaState {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let pv = PolicyVector::new(probs)?;
        if pv.probs().iter().any(|&p| p <= 0.0 || p >= 1.0) {
            return Err(Error::InvalidInstance(
                "samba state entries must lie strictly inside (0, 1)".to_string(),
            ));
        }
        Ok(Self {
            probs: pv.probs().to_vec(),
        })
    }

    pub fn from_policy(pi: &PolicyVector) -> Result<Self> {
        Self::new(pi.probs().to_vec())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Greedy arm, ties to the lowest index.
    pub fn greedy_arm(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Uniform state wrapper so every rule fits one stepping interface.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleState {
    Logits(ParamVector),
    Simplex(SambaState),
}

impl RuleState {
    /// Initial state for `spec` starting from logits `theta1`.
    pub fn initial(spec: &UpdateRuleSpec, theta1: &ParamVector) -> Result<Self> {
        if spec.kind() == UpdateRuleKind::Samba {
            Ok(RuleState::Simplex(SambaState::from_policy(&softmax(
                theta1,
            ))?))
        } else {
            Ok(RuleState::Logits(theta1.clone()))
        }
    }

    pub fn policy(&self) -> PolicyVector {
        match self {
            RuleState::Logits(theta) => softmax(theta),
            RuleState::Simplex(s) => PolicyVector::new(s.probs().to_vec())
                .expect("samba state is a valid simplex point"),
        }
    }
}

/// Builds the IS estimate for a sampled arm.
pub fn is_estimate(
    inst: &BanditInstance,
    pi: &PolicyVector,
    action: usize,
) -> Result<IsEstimate> {
    let k = inst.num_arms();
    if action >= k {
        return Err(Error::ActionOutOfRange { action, arms: k });
    }
    if pi.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: pi.len(),
        });
    }
    let mut r_hat = vec![0.0; k];
    r_hat[action] = inst.reward(action) / pi.prob(action);
    Ok(IsEstimate {
        r_hat,
        sampled_action: action,
    })
}

/// The stochastic softmax policy gradient given the sampled arm:
/// component `a_t` is `(1 − π(a_t))·r(a_t)`, every other component is
/// `−π(a′)·r(a_t)`.
pub(crate) fn stochastic_pg_vector(
    pi: &PolicyVector,
    inst: &BanditInstance,
    action: usize,
) -> Vec<f64> {
    let r = inst.reward(action);
    pi.probs()
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == action { (1.0 - p) * r } else { -p * r })
        .collect()
}

/// Closed form of the stochastic PG norm:
/// `√((1 − π(a_t))² + Σ_{a′≠a_t} π(a′)²) · r(a_t)`.
pub(crate) fn stochastic_pg_norm(pi: &PolicyVector, inst: &BanditInstance, action: usize) -> f64 {
    let mut sq = 0.0;
    for (i, &p) in pi.probs().iter().enumerate() {
        let c = if i == action { 1.0 - p } else { p };
        sq += c * c;
    }
    sq.sqrt() * inst.reward(action)
}

/// One true-gradient step (PG, NPG, or GNPG).
pub fn step_true(
    spec: &UpdateRuleSpec,
    theta: &ParamVector,
    inst: &BanditInstance,
) -> Result<ParamVector> {
    let eta = spec.eta(theta, inst, None)?;
    let mut out = theta.clone();
    match spec.kind() {
        UpdateRuleKind::PgTrue => {
            let g = true_gradient(theta, inst)?;
            for (t, d) in out.logits_mut().iter_mut().zip(&g.gradient) {
                *t += eta * d;
            }
        }
        UpdateRuleKind::NpgTrue => {
            for (t, r) in out.logits_mut().iter_mut().zip(inst.rewards()) {
                *t += eta * r;
            }
        }
        UpdateRuleKind::GnpgTrue => {
            let g = true_gradient(theta, inst)?;
            if g.l2_norm == 0.0 {
                return Err(Error::ZeroGradient);
            }
            for (t, d) in out.logits_mut().iter_mut().zip(&g.gradient) {
                *t += eta * d / g.l2_norm;
            }
        }
        _ => return Err(Error::UnsupportedRule("step_true needs a true-gradient kind")),
    }
    Ok(out)
}

/// One on-policy stochastic step (PG, NPG, or GNPG) for the sampled arm.
pub fn step_stochastic(
    spec: &UpdateRuleSpec,
    theta: &ParamVector,
    inst: &BanditInstance,
    action: usize,
) -> Result<ParamVector> {
    if action >= inst.num_arms() {
        return Err(Error::ActionOutOfRange {
            action,
            arms: inst.num_arms(),
        });
    }
    let eta = spec.eta(theta, inst, Some(action))?;
    let pi = softmax(theta);
    let mut out = theta.clone();
    match spec.kind() {
        UpdateRuleKind::PgStoch => {
            let g = stochastic_pg_vector(&pi, inst, action);
            for (t, d) in out.logits_mut().iter_mut().zip(&g) {
                *t += eta * d;
            }
        }
        UpdateRuleKind::NpgStoch => {
            let p = pi.prob(action);
            if p == 0.0 {
                return Err(Error::NumericalAbort {
                    step: 0,
                    what: "sampled arm has zero probability",
                });
            }
            out.logits_mut()[action] += eta * inst.reward(action) / p;
        }
        UpdateRuleKind::GnpgStoch => {
            // With w the unsampled arms' residual distribution (softmax of
            // their logits alone), ĝ/‖ĝ‖₂ equals +1/√(1+‖w‖²) at the sampled
            // coordinate and −w(a′)/√(1+‖w‖²) elsewhere. The shared factor
            // 1 − π(a_t) cancels exactly, so the direction survives long
            // after that residual has underflowed.
            let logits = theta.logits();
            let m = logits
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != action)
                .map(|(_, &x)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(i, &x)| if i == action { 0.0 } else { (x - m).exp() })
                .collect();
            let z: f64 = w.iter().sum();
            for v in &mut w {
                *v /= z;
            }
            let denom = (1.0 + w.iter().map(|v| v * v).sum::<f64>()).sqrt();
            for (i, t) in out.logits_mut().iter_mut().enumerate() {
                if i == action {
                    *t += eta / denom;
                } else {
                    *t -= eta * w[i] / denom;
                }
            }
        }
        UpdateRuleKind::Staying => {}
        _ => {
            return Err(Error::UnsupportedRule(
                "step_stochastic needs a stochastic kind",
            ))
        }
    }
    Ok(out)
}

/// One baseline step. Only the sampled coordinate changes:
/// `θ′(a_t) = θ(a_t) + (η/π(a_t))·(r(a_t) − b)`.
pub fn step_baseline(
    spec: &UpdateRuleSpec,
    theta: &ParamVector,
    inst: &BanditInstance,
    action: usize,
) -> Result<ParamVector> {
    if !spec.kind().is_baseline() {
        return Err(Error::UnsupportedRule("step_baseline needs a baseline kind"));
    }
    if action >= inst.num_arms() {
        return Err(Error::ActionOutOfRange {
            action,
            arms: inst.num_arms(),
        });
    }
    let eta = spec.eta(theta, inst, Some(action))?;
    let b = spec.baseline().expect("validated at construction");
    let pi = softmax(theta);
    let p = pi.prob(action);
    if p == 0.0 {
        return Err(Error::NumericalAbort {
            step: 0,
            what: "sampled arm has zero probability",
        });
    }
    let mut out = theta.clone();
    out.logits_mut()[action] += eta / p * (inst.reward(action) - b);
    Ok(out)
}

/// One SAMBA step. The greedy arm absorbs whatever mass the update moves,
/// keeping the state on the simplex.
pub fn step_samba(
    state: &SambaState,
    inst: &BanditInstance,
    action: usize,
    eta: f64,
) -> Result<SambaState> {
    let k = inst.num_arms();
    if action >= k {
        return Err(Error::ActionOutOfRange { action, arms: k });
    }
    let greedy = state.greedy_arm();
    let mut probs = state.probs().to_vec();
    let scaled = eta * inst.reward(action) / probs[action];
    if action == greedy {
        for (i, p) in probs.iter_mut().enumerate() {
            if i != action {
                *p -= scaled * *p * *p;
            }
        }
    } else {
        probs[action] += scaled * probs[action] * probs[action];
    }
    let others: f64 = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != greedy)
        .map(|(_, &p)| p)
        .sum();
    probs[greedy] = 1.0 - others;
    for (i, &p) in probs.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::SimplexStepRejected { arm: i, value: p });
        }
    }
    SambaState::new(probs)
}

/// One step of any rule through the uniform state wrapper. True-gradient
/// kinds ignore `action`; everything else requires it.
pub fn step(
    spec: &UpdateRuleSpec,
    state: &RuleState,
    inst: &BanditInstance,
    action: Option<usize>,
) -> Result<RuleState> {
    match (spec.kind(), state) {
        (k, RuleState::Logits(theta)) if k.is_true_gradient() => {
            Ok(RuleState::Logits(step_true(spec, theta, inst)?))
        }
        (k, RuleState::Logits(theta)) if k.is_baseline() => {
            let a = action.ok_or(Error::UnsupportedRule("baseline step needs an action"))?;
            Ok(RuleState::Logits(step_baseline(spec, theta, inst, a)?))
        }
        (UpdateRuleKind::Samba, RuleState::Simplex(s)) => {
            let a = action.ok_or(Error::UnsupportedRule("samba step needs an action"))?;
            let eta = match spec.eta_policy() {
                EtaPolicy::Fixed(x) => x,
                _ => unreachable!("validated at construction"),
            };
            Ok(RuleState::Simplex(step_samba(s, inst, a, eta)?))
        }
        (_, RuleState::Logits(theta)) => {
            let a = action.ok_or(Error::UnsupportedRule("stochastic step needs an action"))?;
            Ok(RuleState::Logits(step_stochastic(spec, theta, inst, a)?))
        }
        _ => Err(Error::UnsupportedRule("state does not match rule kind")),
    }
}

/// Exact moments of a stochastic update direction, computed as the weighted
/// sum over the `K` outcomes (no sampling).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    /// Expected update direction, before the learning rate.
    pub mean_update: Vec<f64>,
    /// Expected squared ℓ₂ norm of the direction.
    pub second_moment: f64,
}

pub fn stochastic_moment_oracle(
    spec: &UpdateRuleSpec,
    theta: &ParamVector,
    inst: &BanditInstance,
) -> Result<MomentReport> {
    let pi = softmax(theta);
    let k = inst.num_arms();
    let mut mean = vec![0.0; k];
    let mut second = 0.0;
    match spec.kind() {
        UpdateRuleKind::PgStoch => {
            for a in 0..k {
                let g = stochastic_pg_vector(&pi, inst, a);
                let w = pi.prob(a);
                for (m, d) in mean.iter_mut().zip(&g) {
                    *m += w * d;
                }
                second += w * g.iter().map(|d| d * d).sum::<f64>();
            }
        }
        UpdateRuleKind::NpgStoch => {
            for a in 0..k {
                let est = is_estimate(inst, &pi, a)?;
                let w = pi.prob(a);
                for (m, d) in mean.iter_mut().zip(&est.r_hat) {
                    *m += w * d;
                }
                second += w * est.r_hat.iter().map(|d| d * d).sum::<f64>();
            }
        }
        UpdateRuleKind::GnpgStoch => {
            for a in 0..k {
                let g = stochastic_pg_vector(&pi, inst, a);
                let norm = stochastic_pg_norm(&pi, inst, a);
                let w = pi.prob(a);
                for (m, d) in mean.iter_mut().zip(&g) {
                    *m += w * d / norm;
                }
                second += w; // unit vectors
            }
        }
        _ => {
            return Err(Error::UnsupportedRule(
                "moment oracle needs a stochastic kind",
            ))
        }
    }
    Ok(MomentReport {
        mean_update: mean,
        second_moment: second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::test_support::{random_instance, random_logits};
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    fn inst2() -> BanditInstance {
        BanditInstance::new(vec![1.0, 0.5]).unwrap()
    }

    #[test]
    fn spec_validation() {
        let inst = inst2();
        assert!(UpdateRuleSpec::fixed(UpdateRuleKind::PgTrue, 0.0, &inst).is_err());
        assert!(UpdateRuleSpec::fixed(UpdateRuleKind::PgTrue, -1.0, &inst).is_err());
        assert!(UpdateRuleSpec::fixed(UpdateRuleKind::PgTrue, f64::NAN, &inst).is_err());

        // Oracle baseline must sit inside (r(a*) − Δ, r(a*)) = (0.5, 1.0).
        let mk = |b| {
            UpdateRuleSpec::new(
                UpdateRuleKind::NpgOracleBaseline,
                EtaPolicy::Fixed(1.0),
                Some(b),
                &inst,
            )
        };
        assert!(mk(0.75).is_ok());
        assert!(mk(0.5).is_err());
        assert!(mk(1.0).is_err());
        assert!(UpdateRuleSpec::new(
            UpdateRuleKind::NpgOracleBaseline,
            EtaPolicy::Fixed(1.0),
            None,
            &inst
        )
        .is_err());

        // Large baseline must exceed r(a*).
        let mk = |b| {
            UpdateRuleSpec::new(
                UpdateRuleKind::NpgLargeBaseline,
                EtaPolicy::Fixed(1.0),
                Some(b),
                &inst,
            )
        };
        assert!(mk(1.5).is_ok());
        assert!(mk(1.0).is_err());

        // SAMBA cap: Δ/(r(a*) − Δ) = 1.
        assert!(UpdateRuleSpec::fixed(UpdateRuleKind::Samba, 0.5, &inst).is_ok());
        assert!(UpdateRuleSpec::fixed(UpdateRuleKind::Samba, 1.0, &inst).is_err());

        // Schedules are pg-stoch only.
        assert!(UpdateRuleSpec::new(
            UpdateRuleKind::NpgStoch,
            EtaPolicy::Schedule(EtaSchedule::PgGradNorm),
            None,
            &inst
        )
        .is_err());
        assert!(UpdateRuleSpec::new(
            UpdateRuleKind::PgStoch,
            EtaPolicy::Schedule(EtaSchedule::PgCommittal),
            None,
            &inst
        )
        .is_ok());

        // Baselines on non-baseline kinds are rejected.
        assert!(UpdateRuleSpec::new(
            UpdateRuleKind::PgStoch,
            EtaPolicy::Fixed(1.0),
            Some(0.7),
            &inst
        )
        .is_err());
    }

    #[test]
    fn rule_config_json() {
        let cfg: RuleConfig =
            serde_json::from_str(r#"{"kind":"npg-stoch","eta":1.0}"#).unwrap();
        assert_eq!(cfg.kind, UpdateRuleKind::NpgStoch);
        assert_eq!(cfg.eta, EtaPolicy::Fixed(1.0));
        let cfg: RuleConfig =
            serde_json::from_str(r#"{"kind":"pg-stoch","eta":"pg-grad-norm"}"#).unwrap();
        assert_eq!(cfg.eta, EtaPolicy::Schedule(EtaSchedule::PgGradNorm));
        let spec = UpdateRuleSpec::from_config(&cfg, &inst2()).unwrap();
        assert_eq!(spec.kind(), UpdateRuleKind::PgStoch);
    }

    #[test]
    fn is_estimate_known_points() {
        let inst = inst2();
        let pi = softmax(&ParamVector::zeros(2));
        let est = is_estimate(&inst, &pi, 0).unwrap();
        assert_eq!(est.r_hat, vec![2.0, 0.0]);
        let est = is_estimate(&inst, &pi, 1).unwrap();
        assert_eq!(est.r_hat, vec![0.0, 1.0]);
        assert!(is_estimate(&inst, &pi, 2).is_err());
    }

    #[test]
    fn is_estimate_exact_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let inst = random_instance(&mut rng, 2, 6);
            let pi = softmax(&random_logits(&mut rng, inst.num_arms(), 4.0));
            let mut mean = vec![0.0; inst.num_arms()];
            for a in 0..inst.num_arms() {
                let est = is_estimate(&inst, &pi, a).unwrap();
                for (m, v) in mean.iter_mut().zip(&est.r_hat) {
                    *m += pi.prob(a) * v;
                }
            }
            for (m, r) in mean.iter().zip(inst.rewards()) {
                assert!((m - r).abs() < 1e-12, "E[r̂] = {m} vs r = {r}");
            }
        }
    }

    #[test]
    fn true_steps_known_points() {
        let inst = inst2();
        let theta = ParamVector::zeros(2);

        let npg = UpdateRuleSpec::fixed(UpdateRuleKind::NpgTrue, 1.0, &inst).unwrap();
        let out = step_true(&npg, &theta, &inst).unwrap();
        assert_eq!(out.logits(), &[1.0, 0.5]);

        let pg = UpdateRuleSpec::fixed(UpdateRuleKind::PgTrue, 0.4, &inst).unwrap();
        let out = step_true(&pg, &theta, &inst).unwrap();
        assert!((out.logits()[0] - 0.05).abs() < 1e-15);
        assert!((out.logits()[1] + 0.05).abs() < 1e-15);

        let gnpg = UpdateRuleSpec::fixed(UpdateRuleKind::GnpgTrue, 0.25, &inst).unwrap();
        let out = step_true(&gnpg, &theta, &inst).unwrap();
        let moved: f64 = out
            .logits()
            .iter()
            .zip(theta.logits())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((moved - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gnpg_true_errors_at_stationary_point() {
        // A stationary interior point needs equal rewards, which instances
        // forbid; drive the gradient to zero with extreme logits instead.
        let inst = inst2();
        let theta = ParamVector::new(vec![800.0, -800.0]).unwrap();
        let gnpg = UpdateRuleSpec::fixed(UpdateRuleKind::GnpgTrue, 1.0, &inst).unwrap();
        assert_eq!(step_true(&gnpg, &theta, &inst).unwrap_err(), Error::ZeroGradient);
    }

    #[test]
    fn stochastic_steps_known_points() {
        let inst = inst2();
        let theta = ParamVector::zeros(2);

        let npg = UpdateRuleSpec::fixed(UpdateRuleKind::NpgStoch, 1.0, &inst).unwrap();
        let out = step_stochastic(&npg, &theta, &inst, 0).unwrap();
        assert_eq!(out.logits(), &[2.0, 0.0]);

        let pg = UpdateRuleSpec::fixed(UpdateRuleKind::PgStoch, 1.0, &inst).unwrap();
        let out = step_stochastic(&pg, &theta, &inst, 0).unwrap();
        assert_eq!(out.logits(), &[0.5, -0.5]);

        let gnpg = UpdateRuleSpec::fixed(UpdateRuleKind::GnpgStoch, 0.7, &inst).unwrap();
        let out = step_stochastic(&gnpg, &theta, &inst, 1).unwrap();
        let moved: f64 = out
            .logits()
            .iter()
            .zip(theta.logits())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((moved - 0.7).abs() < 1e-15);
    }

    #[test]
    fn staying_is_bit_exact() {
        let inst = inst2();
        let theta = ParamVector::new(vec![0.1 + 0.2, -1.0 / 3.0]).unwrap();
        let stay = UpdateRuleSpec::fixed(UpdateRuleKind::Staying, 1.0, &inst).unwrap();
        let out = step_stochastic(&stay, &theta, &inst, 1).unwrap();
        assert_eq!(out.logits()[0].to_bits(), theta.logits()[0].to_bits());
        assert_eq!(out.logits()[1].to_bits(), theta.logits()[1].to_bits());
    }

    #[test]
    fn baseline_step_directions() {
        let inst = inst2();
        let theta = ParamVector::zeros(2);
        let oracle = UpdateRuleSpec::new(
            UpdateRuleKind::NpgOracleBaseline,
            EtaPolicy::Fixed(1.0),
            Some(0.75),
            &inst,
        )
        .unwrap();
        // Sampling a* strictly increases its logit; a suboptimal arm strictly
        // decreases its own. Unsampled coordinates never move.
        let up = step_baseline(&oracle, &theta, &inst, 0).unwrap();
        assert!(up.logits()[0] > 0.0);
        assert_eq!(up.logits()[1], 0.0);
        let down = step_baseline(&oracle, &theta, &inst, 1).unwrap();
        assert!(down.logits()[1] < 0.0);
        assert_eq!(down.logits()[0], 0.0);

        let large = UpdateRuleSpec::new(
            UpdateRuleKind::NpgLargeBaseline,
            EtaPolicy::Fixed(1.0),
            Some(1.5),
            &inst,
        )
        .unwrap();
        for a in 0..2 {
            let out = step_baseline(&large, &theta, &inst, a).unwrap();
            assert!(out.logits()[a] < 0.0, "sampled arm must lose probability");
        }
    }

    #[test]
    fn samba_step_known_point() {
        let inst = BanditInstance::new(vec![1.0, 0.4]).unwrap();
        let state = SambaState::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(state.greedy_arm(), 0); // tie broken to the lowest index
        let next = step_samba(&state, &inst, 0, 0.1).unwrap();
        // Rule (i): π′(1) = 0.5 − 0.1·0.5²·(1/0.5) = 0.45, greedy absorbs.
        assert!((next.probs()[1] - 0.45).abs() < 1e-15);
        assert!((next.probs()[0] - 0.55).abs() < 1e-15);
        let sum: f64 = next.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samba_non_greedy_sample_shrinks_greedy() {
        let inst = BanditInstance::new(vec![1.0, 0.4, 0.2]).unwrap();
        let state = SambaState::new(vec![0.6, 0.3, 0.1]).unwrap();
        let next = step_samba(&state, &inst, 1, 0.2).unwrap();
        assert!(next.probs()[0] < state.probs()[0]);
        assert!(next.probs()[1] > state.probs()[1]);
        let sum: f64 = next.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_oracle_known_points() {
        let inst = inst2();
        let theta = ParamVector::zeros(2);
        let npg = UpdateRuleSpec::fixed(UpdateRuleKind::NpgStoch, 1.0, &inst).unwrap();
        let m = stochastic_moment_oracle(&npg, &theta, &inst).unwrap();
        assert!((m.second_moment - 2.5).abs() < 1e-12);
        for (a, r) in m.mean_update.iter().zip(inst.rewards()) {
            assert!((a - r).abs() < 1e-12);
        }

        let pg = UpdateRuleSpec::fixed(UpdateRuleKind::PgStoch, 1.0, &inst).unwrap();
        let m = stochastic_moment_oracle(&pg, &theta, &inst).unwrap();
        let g = true_gradient(&theta, &inst).unwrap();
        for (a, b) in m.mean_update.iter().zip(&g.gradient) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.second_moment <= 2.0);

        let tg = UpdateRuleSpec::fixed(UpdateRuleKind::PgTrue, 1.0, &inst).unwrap();
        assert!(stochastic_moment_oracle(&tg, &theta, &inst).is_err());
    }

    #[test]
    fn gnpg_moment_oracle_exposes_bias() {
        // K=2: the expected normalized stochastic direction on the best arm
        // equals (π(1) − π(2))/√2, while the normalized true gradient is 1/√2.
        let inst = inst2();
        let gnpg = UpdateRuleSpec::fixed(UpdateRuleKind::GnpgStoch, 1.0, &inst).unwrap();

        let m = stochastic_moment_oracle(&gnpg, &ParamVector::zeros(2), &inst).unwrap();
        assert!(m.mean_update[0].abs() < 1e-15);
        assert!((m.second_moment - 1.0).abs() < 1e-12);

        let theta = ParamVector::new(vec![0.0, 3.0f64.ln()]).unwrap();
        let m = stochastic_moment_oracle(&gnpg, &theta, &inst).unwrap();
        let expected = (0.25 - 0.75) / 2.0f64.sqrt();
        assert!((m.mean_update[0] - expected).abs() < 1e-12);
        let g = true_gradient(&theta, &inst).unwrap();
        let true_normalized = g.gradient[0] / g.l2_norm;
        assert!((true_normalized - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!(m.mean_update[0] < 0.0 && true_normalized > 0.0);
    }

    #[test]
    fn expectation_identity_and_moment_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let inst = random_instance(&mut rng, 2, 6);
            let theta = random_logits(&mut rng, inst.num_arms(), 4.0);
            let eta = 0.3;
            for kind in [
                UpdateRuleKind::PgStoch,
                UpdateRuleKind::NpgStoch,
                UpdateRuleKind::GnpgStoch,
            ] {
                let spec = UpdateRuleSpec::fixed(kind, eta, &inst).unwrap();
                let m = stochastic_moment_oracle(&spec, &theta, &inst).unwrap();
                let pi = softmax(&theta);
                let mut mean_step = vec![0.0; inst.num_arms()];
                for a in 0..inst.num_arms() {
                    let stepped = step_stochastic(&spec, &theta, &inst, a).unwrap();
                    for ((ms, s), t) in
                        mean_step.iter_mut().zip(stepped.logits()).zip(theta.logits())
                    {
                        *ms += pi.prob(a) * (s - t);
                    }
                }
                for (s, m) in mean_step.iter().zip(&m.mean_update) {
                    assert!((s - eta * m).abs() < 1e-10, "{kind:?}");
                }
                if kind == UpdateRuleKind::PgStoch {
                    assert!(m.second_moment <= 2.0);
                    let g = true_gradient(&theta, &inst).unwrap();
                    for (a, b) in m.mean_update.iter().zip(&g.gradient) {
                        assert!((a - b).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn npg_second_moment_diverges_as_policy_commits() {
        let inst = inst2();
        let spec = UpdateRuleSpec::fixed(UpdateRuleKind::NpgStoch, 1.0, &inst).unwrap();
        let mut last = 0.0;
        for c in 1..=30 {
            let theta = ParamVector::new(vec![c as f64, -(c as f64)]).unwrap();
            let m = stochastic_moment_oracle(&spec, &theta, &inst).unwrap();
            assert!(
                m.second_moment > last,
                "second moment must increase as π(a) → 0"
            );
            last = m.second_moment;
        }
    }

    #[test]
    fn stepwise_optimality_smart_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let inst = random_instance(&mut rng, 2, 5);
            let a_star = inst.optimal_arm();
            let theta = random_logits(&mut rng, inst.num_arms(), 3.0);
            let pi = softmax(&theta);
            let star_dominates = (0..inst.num_arms())
                .all(|a| pi.prob(a_star) >= pi.prob(a));
            for kind in [
                UpdateRuleKind::PgStoch,
                UpdateRuleKind::NpgStoch,
                UpdateRuleKind::GnpgStoch,
            ] {
                let spec = UpdateRuleSpec::fixed(kind, 0.5, &inst).unwrap();
                let up = step_stochastic(&spec, &theta, &inst, a_star).unwrap();
                assert!(
                    softmax(&up).prob(a_star) >= pi.prob(a_star) - 1e-12,
                    "{kind:?}: sampling a* must not decrease π(a*)"
                );
                // The decrease case for PG/GNPG holds when a* dominates;
                // for NPG it holds unconditionally.
                if kind == UpdateRuleKind::NpgStoch || star_dominates {
                    for a in 0..inst.num_arms() {
                        if a == a_star {
                            continue;
                        }
                        let down = step_stochastic(&spec, &theta, &inst, a).unwrap();
                        assert!(
                            softmax(&down).prob(a_star) <= pi.prob(a_star) + 1e-12,
                            "{kind:?}: sampling a≠a* must not increase π(a*)"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unified_step_dispatch() {
        let inst = inst2();
        let theta = ParamVector::zeros(2);
        let npg_true = UpdateRuleSpec::fixed(UpdateRuleKind::NpgTrue, 1.0, &inst).unwrap();
        let st = RuleState::initial(&npg_true, &theta).unwrap();
        let next = step(&npg_true, &st, &inst, None).unwrap();
        assert!(matches!(next, RuleState::Logits(ref t) if t.logits() == [1.0, 0.5]));

        let samba = UpdateRuleSpec::fixed(UpdateRuleKind::Samba, 0.1, &inst).unwrap();
        let st = RuleState::initial(&samba, &theta).unwrap();
        assert!(matches!(st, RuleState::Simplex(_)));
        assert!(step(&samba, &st, &inst, None).is_err());
        let next = step(&samba, &st, &inst, Some(0)).unwrap();
        let pi = next.policy();
        assert!((pi.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let stoch = UpdateRuleSpec::fixed(UpdateRuleKind::NpgStoch, 1.0, &inst).unwrap();
        let st = RuleState::initial(&stoch, &theta).unwrap();
        assert!(step(&stoch, &st, &inst, None).is_err());
    }
}
