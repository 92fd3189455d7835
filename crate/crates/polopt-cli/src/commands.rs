//! Subcommand bodies: resolve inputs, run the library, write files.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use polopt::bandit::{BanditInstance, ParamVector};
use polopt::committal::{
    estimate_committal_rate, fixed_action_trajectory, forever_probability_lower_bound,
    BoundTarget,
};
use polopt::harness::{
    estimate_failure_probability, fit_rate, run_ensemble, run_trial, table1_report,
    Table1Config, TrialConfig, DEFAULT_COMMIT_THRESHOLD,
};
use polopt::mdp::{
    bellman_residual, general_nl_slack, optimal_policy, performance_difference_residual,
    solve_values, step_mdp, value_suboptimality_residual, FiniteMdp, MdpPolicy, MdpRuleKind,
};
use polopt::rules::{EtaPolicy, EtaSchedule, UpdateRuleKind, UpdateRuleSpec};
use polopt::verify::{run_suites, Defect, SuiteName};

use crate::config::FileConfig;
use crate::{CliError, InstanceArgs};

pub struct Context {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub file: FileConfig,
}

impl Context {
    fn ensure_out_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", self.out_dir.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.ensure_out_dir()?;
        let path = self.out_dir.join(name);
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::config(format!("serialize {name}: {e}")))?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        self.ensure_out_dir()?;
        let path = self.out_dir.join(name);
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

fn parse_float_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| CliError::config(format!("bad {what} entry '{tok}': {e}")))
        })
        .collect()
}

fn parse_eta(text: &str) -> Result<EtaPolicy, CliError> {
    if let Ok(x) = text.parse::<f64>() {
        return Ok(EtaPolicy::Fixed(x));
    }
    match text {
        "grad-norm" | "pg-grad-norm" => Ok(EtaPolicy::Schedule(EtaSchedule::PgGradNorm)),
        "committal" | "pg-committal" => Ok(EtaPolicy::Schedule(EtaSchedule::PgCommittal)),
        other => Err(CliError::config(format!(
            "eta must be a number, 'grad-norm', or 'committal'; got '{other}'"
        ))),
    }
}

fn parse_rule_kind(text: &str) -> Result<UpdateRuleKind, CliError> {
    serde_json::from_value(serde_json::Value::String(text.to_string()))
        .map_err(|_| CliError::config(format!("unknown rule kind '{text}'")))
}

struct ResolvedInstance {
    instance: BanditInstance,
    rule: UpdateRuleSpec,
    init_logits: Option<Vec<f64>>,
}

fn resolve_instance(ctx: &Context, args: &InstanceArgs) -> Result<ResolvedInstance, CliError> {
    let rewards = match (&args.rewards, &ctx.file.rewards) {
        (Some(text), _) => parse_float_list(text, "rewards")?,
        (None, Some(r)) => r.clone(),
        (None, None) => return Err(CliError::config("missing --rewards (or config rewards)")),
    };
    let instance = BanditInstance::new(rewards)?;

    let file_rule = ctx.file.rule.clone();
    let kind = match (&args.rule, &file_rule) {
        (Some(text), _) => parse_rule_kind(text)?,
        (None, Some(cfg)) => cfg.kind,
        (None, None) => return Err(CliError::config("missing --rule (or config rule)")),
    };
    let eta = match (&args.eta, &file_rule) {
        (Some(text), _) => parse_eta(text)?,
        (None, Some(cfg)) => cfg.eta,
        (None, None) => return Err(CliError::config("missing --eta (or config rule.eta)")),
    };
    let baseline = args
        .baseline_b
        .or(file_rule.as_ref().and_then(|c| c.baseline_b));
    let rule = UpdateRuleSpec::new(kind, eta, baseline, &instance)?;

    let init_logits = match &args.init_logits {
        Some(text) => Some(parse_float_list(text, "init-logits")?),
        None => ctx.file.init_logits.clone(),
    };
    if let Some(l) = &init_logits {
        if l.len() != instance.num_arms() {
            return Err(CliError::config(format!(
                "init-logits has {} entries for {} arms",
                l.len(),
                instance.num_arms()
            )));
        }
    }
    Ok(ResolvedInstance {
        instance,
        rule,
        init_logits,
    })
}

pub fn cmd_run(
    ctx: &Context,
    args: &InstanceArgs,
    horizon: Option<usize>,
    trials: Option<usize>,
    commit_threshold: Option<f64>,
) -> Result<(), CliError> {
    let resolved = resolve_instance(ctx, args)?;
    let horizon = horizon
        .or(ctx.file.horizon)
        .ok_or_else(|| CliError::config("missing --horizon"))?;
    let trials = trials.or(ctx.file.trials).unwrap_or(1);
    let mut template = TrialConfig::new(
        resolved.instance.clone(),
        resolved.rule.clone(),
        horizon,
        ctx.seed,
    );
    template.init_logits = resolved.init_logits.clone();
    template.commit_threshold = commit_threshold
        .or(ctx.file.commit_threshold)
        .unwrap_or(DEFAULT_COMMIT_THRESHOLD);

    let traj = run_trial(&template)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let csv_path = ctx.write_bytes("trajectory.csv", &csv)?;

    let rate = fit_rate(&traj).ok();
    let failure = if trials > 1 {
        Some(estimate_failure_probability(&template, trials, &[])?)
    } else {
        None
    };
    let summary = json!({
        "rule": resolved.rule,
        "instance": resolved.instance,
        "horizon": horizon,
        "seed": ctx.seed,
        "classification": traj.classification,
        "final_suboptimality": traj.final_suboptimality(),
        "rate_fit": rate,
        "failure_estimate": failure,
    });
    let json_path = ctx.write_json("summary.json", &summary)?;
    println!(
        "run: wrote {} and {}",
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

pub fn cmd_committal(
    ctx: &Context,
    args: &InstanceArgs,
    arm: Option<usize>,
    horizon: Option<usize>,
) -> Result<(), CliError> {
    let resolved = resolve_instance(ctx, args)?;
    let arm = arm
        .or(ctx.file.arm)
        .ok_or_else(|| CliError::config("missing --arm"))?;
    let horizon = horizon.or(ctx.file.horizon).unwrap_or(100_000);
    let theta1 = match &resolved.init_logits {
        Some(l) => ParamVector::new(l.clone())?,
        None => ParamVector::zeros(resolved.instance.num_arms()),
    };
    let traj =
        fixed_action_trajectory(&resolved.rule, &theta1, &resolved.instance, arm, horizon)?;
    let estimate = estimate_committal_rate(&traj)?;
    let bound = forever_probability_lower_bound(
        &resolved.rule,
        &theta1,
        &resolved.instance,
        BoundTarget::Arm(arm),
    )
    .ok();

    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let csv_path = ctx.write_bytes("committal.csv", &csv)?;
    let summary = json!({
        "rule": resolved.rule,
        "instance": resolved.instance,
        "forced_arm": arm,
        "horizon": horizon,
        "estimate": estimate,
        "running_product": traj.running_product(),
        "forever_probability_lower_bound": bound,
    });
    let json_path = ctx.write_json("committal.json", &summary)?;
    println!(
        "committal: {:?} (alpha {:?}); wrote {} and {}",
        estimate.classification,
        estimate.alpha_hat,
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

pub fn cmd_verify(
    ctx: &Context,
    suites: Option<&str>,
    inject_hessian_defect: bool,
) -> Result<(), CliError> {
    let names: Vec<SuiteName> = match suites {
        None => match &ctx.file.suites {
            Some(list) => list
                .iter()
                .map(|s| s.parse().map_err(|e: polopt::Error| CliError::from(e)))
                .collect::<Result<_, _>>()?,
            None => SuiteName::all(),
        },
        Some(text) => text
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse().map_err(|e: polopt::Error| CliError::from(e)))
            .collect::<Result<_, _>>()?,
    };
    if names.is_empty() {
        return Err(CliError::config("empty suite selection"));
    }
    let defect = if inject_hessian_defect {
        Defect::PerturbHessian
    } else {
        Defect::None
    };
    let results = run_suites(&names, ctx.seed, defect);
    let mut failed = 0usize;
    let mut passed = 0usize;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "suite {}: {status} ({} cases, {} failures, worst slack {:.3e})",
            r.name, r.cases, r.failures, r.worst_slack
        );
        if r.passed() {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("verify: {passed} suites passed, {failed} failed");
    if failed > 0 {
        return Err(CliError::Property(format!("{failed} suite(s) failed")));
    }
    Ok(())
}

pub fn cmd_ensemble(
    ctx: &Context,
    args: &InstanceArgs,
    horizon: Option<usize>,
    delta: Option<f64>,
    probes: Option<usize>,
    reps: Option<usize>,
) -> Result<(), CliError> {
    let resolved = resolve_instance(ctx, args)?;
    let horizon = horizon.or(ctx.file.horizon).unwrap_or(1000);
    let delta = delta.or(ctx.file.delta).unwrap_or(0.1);
    let probes = probes.or(ctx.file.probes).unwrap_or(1000);
    let reps = reps.or(ctx.file.reps).unwrap_or(500);
    let mut template = TrialConfig::new(
        resolved.instance.clone(),
        resolved.rule.clone(),
        horizon,
        ctx.seed,
    );
    template.init_logits = resolved.init_logits.clone();
    let report = run_ensemble(&template, delta, probes, reps)?;
    let path = ctx.write_json("ensemble.json", &report)?;
    println!(
        "ensemble: p_hat {:.3}, n_runs {}, success rate {:.3}; wrote {}",
        report.p_hat,
        report.n_runs,
        report.empirical_success_rate,
        path.display()
    );
    Ok(())
}

pub fn cmd_table1(
    ctx: &Context,
    rewards: Option<&str>,
    trials: Option<usize>,
) -> Result<(), CliError> {
    let rewards = match (rewards, &ctx.file.rewards) {
        (Some(text), _) => parse_float_list(text, "rewards")?,
        (None, Some(r)) => r.clone(),
        (None, None) => vec![1.0, 0.8],
    };
    let instance = BanditInstance::new(rewards)?;
    let cfg = Table1Config {
        seed: ctx.seed,
        n_trials: trials.or(ctx.file.trials).unwrap_or(1000),
        ..Table1Config::default()
    };
    let report = table1_report(&instance, &cfg)?;
    for cell in &report.true_row {
        println!(
            "true      {:?}: {:?} (constant {:.4})",
            cell.rule, cell.fit.model, cell.fit.constant
        );
    }
    for cell in &report.stoch_row {
        println!(
            "stochastic {:?}: p_fail {:.4} [{:.4}, {:.4}]",
            cell.rule,
            cell.estimate.p_fail,
            cell.estimate.wilson_low,
            cell.estimate.wilson_high
        );
    }
    let path = ctx.write_json("table1.json", &report)?;
    println!("table1: wrote {}", path.display());
    Ok(())
}

fn load_mdp(ctx: &Context) -> Result<FiniteMdp, CliError> {
    ctx.file
        .mdp
        .clone()
        .ok_or_else(|| CliError::config("mdp subcommand needs an 'mdp' object in --config"))
}

pub fn cmd_mdp(
    ctx: &Context,
    op: &str,
    horizon: Option<usize>,
    eta: Option<f64>,
) -> Result<(), CliError> {
    let mdp = load_mdp(ctx)?;
    let horizon = horizon.or(ctx.file.horizon).unwrap_or(100);
    let eta = eta.unwrap_or(1.0);
    match op {
        "identities" => cmd_mdp_identities(ctx, &mdp),
        "npg-run" => cmd_mdp_npg_run(ctx, &mdp, horizon, eta),
        "failure-demo" => cmd_mdp_failure_demo(ctx, &mdp, horizon, eta),
        other => Err(CliError::config(format!(
            "unknown mdp op '{other}' (identities, npg-run, failure-demo)"
        ))),
    }
}

fn cmd_mdp_identities(ctx: &Context, mdp: &FiniteMdp) -> Result<(), CliError> {
    let uniform = MdpPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let bundle = solve_values(mdp, &uniform)?;
    let residual = bellman_residual(mdp, &uniform, &bundle);
    let d_slack = (0..mdp.num_states())
        .map(|s| bundle.d_mu[s] - (1.0 - mdp.gamma()) * mdp.mu()[s])
        .fold(f64::INFINITY, f64::min);
    // A second policy for the performance-difference identity: one NPG step.
    let stepped = step_mdp(MdpRuleKind::NpgTrue, mdp, &uniform, 1.0, None)?;
    let perf_residual = performance_difference_residual(mdp, &stepped, &uniform)?;
    let subopt_residual = value_suboptimality_residual(mdp, &uniform)?;
    let nl_slack = match general_nl_slack(mdp, &uniform) {
        Ok(s) => Some(s),
        Err(polopt::Error::TiedGreedy { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let opt = optimal_policy(mdp)?;

    let ok = residual < 1e-10
        && d_slack > -1e-12
        && perf_residual < 1e-10
        && subopt_residual < 1e-10
        && nl_slack.is_none_or(|s| s >= -1e-10);
    let report = json!({
        "num_states": mdp.num_states(),
        "num_actions": mdp.num_actions(),
        "bellman_residual": residual,
        "discounted_mu_slack": d_slack,
        "performance_difference_residual": perf_residual,
        "value_suboptimality_residual": subopt_residual,
        "general_nl_slack": nl_slack,
        "optimal_actions": opt.actions,
        "optimal_value": opt.bundle.value_under(mdp.rho()),
        "pass": ok,
    });
    let path = ctx.write_json("mdp_identities.json", &report)?;
    println!("mdp identities: pass = {ok}; wrote {}", path.display());
    if !ok {
        return Err(CliError::Property("mdp identities failed".into()));
    }
    Ok(())
}

fn cmd_mdp_npg_run(
    ctx: &Context,
    mdp: &FiniteMdp,
    horizon: usize,
    eta: f64,
) -> Result<(), CliError> {
    let opt = optimal_policy(mdp)?;
    let v_star = opt.bundle.value_under(mdp.rho());
    let mut policy = MdpPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let mut csv = Vec::new();
    use std::io::Write;
    writeln!(csv, "t,value,suboptimality")?;
    let mut last = f64::NEG_INFINITY;
    let mut monotone = true;
    for t in 1..=horizon {
        let v = solve_values(mdp, &policy)?.value_under(mdp.rho());
        writeln!(csv, "{t},{:.17e},{:.17e}", v, v_star - v)?;
        monotone &= v >= last - 1e-12;
        last = v;
        if t < horizon {
            policy = step_mdp(MdpRuleKind::NpgTrue, mdp, &policy, eta, None)?;
        }
    }
    let csv_path = ctx.write_bytes("mdp_npg.csv", &csv)?;
    let summary = json!({
        "eta": eta,
        "horizon": horizon,
        "optimal_value": v_star,
        "final_value": last,
        "final_suboptimality": v_star - last,
        "monotone": monotone,
    });
    let json_path = ctx.write_json("mdp_npg.json", &summary)?;
    println!(
        "mdp npg-run: final sub-optimality {:.3e}; wrote {} and {}",
        v_star - last,
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

fn cmd_mdp_failure_demo(
    ctx: &Context,
    mdp: &FiniteMdp,
    horizon: usize,
    eta: f64,
) -> Result<(), CliError> {
    let opt = optimal_policy(mdp)?;
    if mdp.num_actions() < 2 {
        return Err(CliError::config("failure demo needs at least two actions"));
    }
    // Deterministically force one suboptimal action per state forever.
    let forced: Vec<usize> = opt
        .actions
        .iter()
        .map(|&a| (a + 1) % mdp.num_actions())
        .collect();
    let mut policy = MdpPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let mut csv = Vec::new();
    use std::io::Write;
    writeln!(csv, "t,min_forced_prob")?;
    let mut min_prob = 0.0;
    for t in 1..=horizon {
        let probs = policy.probs();
        min_prob = (0..mdp.num_states())
            .map(|s| probs[s][forced[s]])
            .fold(f64::INFINITY, f64::min);
        writeln!(csv, "{t},{:.17e}", min_prob)?;
        if t < horizon {
            policy = step_mdp(MdpRuleKind::NpgStoch, mdp, &policy, eta, Some(&forced))?;
        }
    }
    let csv_path = ctx.write_bytes("mdp_failure.csv", &csv)?;
    let summary = json!({
        "eta": eta,
        "horizon": horizon,
        "forced_actions": forced,
        "optimal_actions": opt.actions,
        "final_min_forced_prob": min_prob,
        "committed": min_prob > 0.99,
    });
    let json_path = ctx.write_json("mdp_failure.json", &summary)?;
    println!(
        "mdp failure-demo: min forced prob {:.6}; wrote {} and {}",
        min_prob,
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}
