use std::fs;
use std::path::Path;

use crate::csvfmt;
use crate::lognorm::{
    check_divergence, fit_envelope, gamma_b_curve, gamma_double_star_curve, gamma_star_curve, h_constant, w_constant,
    Envelope, OffDiagonal, RateCurve, Verdict, WConstant, WConvention,
};
use crate::perturbation::{
    bound_t4, bound_t5, bound_t6, bounds_csv, perturb, t5_eps_limit, t6_eps_limit, trajectory_distance, BoundReport,
    DiffKind, DiffNorm, PerturbationSpec, Theorem,
};
use crate::transient::{
    integrate, integrate_many, limiting_cycle, truncation_refine, Characteristic, ProbabilityState, Trajectory,
    PERIODICITY_TOL,
};

use super::checks::{self, summary_csv, Check};
use super::config::{example_config, Approach, ExperimentConfig, PerturbRun};
use super::CliError;

/// Sample count for exported rate curves.
const CURVE_POINTS: usize = 1024;

/// Constants derived from a configuration.
#[derive(Debug, Clone)]
pub struct Constants {
    pub l: f64,
    pub h: f64,
    pub w: WConstant,
    pub gamma_star: RateCurve,
    /// `gamma**` for the first approach, `gamma_B` for the second.
    pub rate: RateCurve,
    pub verdicts: Vec<(String, Verdict)>,
    pub env_star: Option<Envelope>,
    pub env: Option<Envelope>,
    /// Smallest sampled value of `rate`.
    pub rate_min: f64,
}

pub fn constants(cfg: &ExperimentConfig) -> Result<Constants, CliError> {
    let model = &cfg.model;
    let gamma_star = gamma_star_curve(model);
    let (rate, convention) = match cfg.approach {
        Approach::First => (gamma_double_star_curve(model, &cfg.weights)?, WConvention::Shifted),
        Approach::Second => (gamma_b_curve(model, &cfg.weights, OffDiagonal::Absolute)?, WConvention::Plain),
    };
    let verdicts: Vec<(String, Verdict)> = [&gamma_star, &rate]
        .iter()
        .map(|c| (c.label().to_string(), check_divergence(c)))
        .collect();
    let env_star = fit_envelope(&gamma_star).ok();
    let rate_min = rate.samples(CURVE_POINTS).iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let env = match cfg.envelope_floor {
        Some(floor) => (rate_min >= floor - 1e-9).then(|| Envelope::from_floor(floor)),
        None => fit_envelope(&rate).ok(),
    };
    Ok(Constants {
        l: model.rate_bound_l(),
        h: h_constant(&cfg.weights),
        w: w_constant(&cfg.weights, convention),
        gamma_star,
        rate,
        verdicts,
        env_star,
        env,
        rate_min,
    })
}

fn write(out: &Path, name: &str, content: &str) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn envelope_for(c: &Constants, theorem: Theorem) -> Result<Envelope, CliError> {
    let env = match theorem {
        Theorem::T4 => c.env_star,
        _ => c.env,
    };
    env.ok_or_else(|| CliError::Validation(format!("no convergence envelope available for {theorem}")))
}

/// Bound report for one perturbation run; an invalid denominator is a
/// validation error naming the admissible range.
pub fn bound_for(c: &Constants, run: &PerturbRun) -> Result<BoundReport, CliError> {
    let env = envelope_for(c, run.theorem)?;
    let (report, limit) = match run.theorem {
        Theorem::T4 => (bound_t4(c.l, &env, run.eps_hat), f64::INFINITY),
        Theorem::T5Prob | Theorem::T5Mean => {
            let (p, m) = bound_t5(c.l, &env, c.h, c.w.value, run.eps_hat);
            (if run.theorem == Theorem::T5Prob { p } else { m }, t5_eps_limit(c.l, &env, c.h))
        }
        Theorem::T6Prob | Theorem::T6Mean => {
            let (p, m) = bound_t6(c.l, &env, c.h, c.w.value, run.eps_hat);
            (if run.theorem == Theorem::T6Prob { p } else { m }, t6_eps_limit(c.l, &env, c.h))
        }
    };
    if !report.valid {
        return Err(CliError::Validation(format!(
            "{} bound is not valid at eps_hat = {}; admissible eps_hat < {limit:.6e}",
            run.theorem, run.eps_hat
        )));
    }
    Ok(match run.reference {
        Some(r) => report.with_reference(r),
        None => report,
    })
}

/// Rate curves, verdicts, envelope constants and bound reports.
pub fn run_bounds(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let c = constants(cfg)?;
    let mut curves = format!("t,{},{}\n", c.gamma_star.label(), c.rate.label());
    for i in 0..=CURVE_POINTS {
        let t = i as f64 / CURVE_POINTS as f64;
        curves.push_str(&csvfmt::record([t, c.gamma_star.eval(t), c.rate.eval(t)]));
    }
    write(out, "rate_curves.csv", &curves)?;

    let mut consts = String::from("name,value\n");
    let mut row = |name: &str, value: String| consts.push_str(&format!("{name},{value}\n"));
    row("L", csvfmt::num(c.l));
    row("H", csvfmt::num(c.h));
    row("W", csvfmt::num(c.w.value));
    for (label, verdict) in &c.verdicts {
        row(&format!("verdict_{label}"), verdict.to_string());
    }
    row(&format!("mean_{}", c.gamma_star.label()), csvfmt::num(c.gamma_star.mean_over_period()));
    row(&format!("mean_{}", c.rate.label()), csvfmt::num(c.rate.mean_over_period()));
    row(&format!("min_{}", c.rate.label()), csvfmt::num(c.rate_min));
    for (label, env) in [(c.gamma_star.label(), c.env_star), (c.rate.label(), c.env)] {
        if let Some(env) = env {
            row(&format!("N_{label}"), csvfmt::num(env.n));
            row(&format!("gamma0_{label}"), csvfmt::num(env.gamma0));
        }
    }
    write(out, "constants.csv", &consts)?;

    let runs = cfg.perturbation.as_ref().map(|p| p.runs.as_slice()).unwrap_or(&[]);
    let reports = runs.iter().map(|r| bound_for(&c, r)).collect::<Result<Vec<_>, _>>();
    let mut checks = vec![Check {
        name: "ergodicity_certificate".into(),
        lhs: 0.0,
        rhs: c.rate.mean_over_period().max(c.gamma_star.mean_over_period()),
        pass: c.verdicts.iter().any(|v| v.1 == Verdict::Diverges),
    }];
    if let Some(floor) = cfg.envelope_floor {
        checks.push(Check::scalar(format!("{}_floor", c.rate.label()), floor - 1e-9, c.rate_min));
    }
    match reports {
        Ok(reports) => write(out, "bounds.csv", &bounds_csv(&reports))?,
        Err(e) if checks.iter().all(|c| c.pass) => return Err(e),
        Err(_) => write(out, "bounds.csv", &bounds_csv(&[]))?,
    }
    Ok(checks)
}

/// Limiting cycle and transient curves for every characteristic.
pub fn run_solve(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let [t_a, t_b] = cfg.window;
    let lc = limiting_cycle(&cfg.model, cfg.truncation, cfg.step, (t_a, t_b))?;
    let transient = lc.full.window(0.0, t_a);
    for c in Characteristic::ALL {
        write(out, &format!("{}_transient.csv", c.name()), &transient.characteristic_csv(c))?;
        write(out, &format!("{}_limit.csv", c.name()), &lc.window.characteristic_csv(c))?;
    }
    Ok(vec![Check::scalar("periodicity_defect", lc.defect, PERIODICITY_TOL)])
}

fn run_name(run: &PerturbRun) -> String {
    format!("{}_eps{}", run.theorem, run.eps_hat)
}

/// Base and perturbed limiting curves with the theoretical band, and the
/// dominance checks `empirical <= bound`.
pub fn run_perturb(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let pcfg = cfg
        .perturbation
        .as_ref()
        .ok_or_else(|| CliError::Config("no [perturbation] section in the configuration".into()))?;
    let c = constants(cfg)?;
    let n = cfg.truncation;
    let window = (cfg.window[0], cfg.window[1]);
    let p0 = ProbabilityState::unit_queue(0, n);
    let perturbed = pcfg
        .runs
        .iter()
        .map(|r| perturb(&cfg.model, &PerturbationSpec { eps_hat: r.eps_hat, frequency: pcfg.frequency }))
        .collect::<Result<Vec<_>, _>>()?;
    let mut models = vec![cfg.model.clone()];
    models.extend(perturbed);
    let trajs = {
        use rayon::prelude::*;
        models
            .par_iter()
            .map(|m| integrate(m, &p0, window.1, n, cfg.step))
            .collect::<Result<Vec<Trajectory>, _>>()?
    };
    let base = &trajs[0];
    let mut out_checks = Vec::new();
    for (run, other) in pcfg.runs.iter().zip(&trajs[1..]) {
        let report = bound_for(&c, run)?;
        let (norm, kind, ch) = match run.theorem {
            Theorem::T4 => (DiffNorm::L1, DiffKind::State, Characteristic::EmptyProb),
            Theorem::T5Prob => (DiffNorm::Weighted(cfg.weights.take(n)), DiffKind::State, Characteristic::EmptyProb),
            Theorem::T6Prob => (DiffNorm::Cumulative(cfg.weights.take(n - 1)), DiffKind::State, Characteristic::EmptyProb),
            Theorem::T5Mean | Theorem::T6Mean => (DiffNorm::L1, DiffKind::Mean, Characteristic::Mean),
        };
        let empirical = trajectory_distance(base, other, &norm, kind, window);
        let name = run_name(run);
        out_checks.push(Check::scalar(format!("{name}_bound"), empirical, report.value));
        if let Some(r) = run.reference {
            out_checks.push(Check::scalar(format!("{name}_reference"), empirical, r));
        }
        let (bw, ow) = (base.window(window.0, window.1), other.window(window.0, window.1));
        let mut csv = format!("t,{0},{0}_perturbed,lower,upper\n", ch.name());
        for i in 0..bw.len() {
            let x = bw.characteristic(ch, i);
            csv.push_str(&csvfmt::record([bw.times[i], x, ow.characteristic(ch, i), x - report.value, x + report.value]));
        }
        write(out, &format!("perturb_{name}.csv"), &csv)?;
    }
    Ok(out_checks)
}

/// Convergence-rate checks on trajectories from several initial states.
pub fn run_convergence_checks(cfg: &ExperimentConfig, c: &Constants) -> Result<Vec<Check>, CliError> {
    let n = cfg.truncation;
    let mut states = vec![0, cfg.contraction_pair[0], cfg.contraction_pair[1]];
    states.extend(&cfg.mean_states);
    states.sort_unstable();
    states.dedup();
    let initials: Vec<_> = states.iter().map(|&j| ProbabilityState::unit_queue(j, n)).collect();
    let trajs = integrate_many(&cfg.model, &initials, cfg.horizon, n, cfg.step)?;
    let traj = |j: usize| &trajs[states.binary_search(&j).expect("state was integrated")];
    let (a, b) = (traj(cfg.contraction_pair[0]), traj(cfg.contraction_pair[1]));
    let mut out = Vec::new();
    let rate_decay = |t: f64| (-c.rate.integral_from_zero(t)).exp();
    match cfg.approach {
        Approach::First => {
            if c.env_star.is_some() {
                out.push(checks::l1_contraction(a, b, &c.gamma_star));
            }
            out.push(checks::weighted_contraction(a, b, &cfg.weights, &c.rate));
            for &j in &cfg.mean_states {
                let coef = cfg.weights.d(j + 1) / c.w.value;
                out.push(checks::mean_convergence(&format!("mean_j{j}"), traj(0), traj(j), coef, rate_decay));
            }
        }
        Approach::Second => {
            out.push(checks::cumulative_contraction("contraction_cumulative_rate", a, b, &cfg.weights, rate_decay));
            let env = c.env.ok_or_else(|| CliError::Validation("no convergence envelope".into()))?;
            out.push(checks::cumulative_contraction(
                "contraction_cumulative_envelope",
                a,
                b,
                &cfg.weights,
                checks::envelope_decay(env),
            ));
            for &j in &cfg.mean_states {
                let coef = (1.0 + cfg.weights.d(j)) / c.w.value;
                out.push(checks::mean_convergence(&format!("mean_j{j}"), traj(0), traj(j), coef, checks::envelope_decay(env)));
            }
        }
    }
    Ok(out)
}

/// Solver settings that override the configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub truncation: Option<usize>,
    pub step: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(n) = self.truncation {
            cfg.truncation = n;
        }
        if let Some(h) = self.step {
            cfg.step = h;
        }
        cfg.validate()
    }
}

/// Full artifact set for a shipped example and a `summary.csv` of every
/// checked inequality. Any failed check is a validation error.
pub fn reproduce(example: u8, out: &Path, overrides: Overrides) -> Result<Vec<Check>, CliError> {
    let mut cfg = example_config(example)?;
    overrides.apply(&mut cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut all = run_bounds(&cfg, out)?;
    all.extend(run_solve(&cfg, out)?);
    all.extend(run_perturb(&cfg, out)?);
    all.extend(run_convergence_checks(&cfg, &constants(&cfg)?)?);
    let refine = truncation_refine(&cfg.model, cfg.window[1], cfg.model.k + 3, cfg.step)?;
    all.push(Check::scalar("truncation_refine_n", refine.n as f64, cfg.truncation as f64));
    write(out, "summary.csv", &summary_csv(&all))?;
    finish(all)
}

/// Turns failed checks into a validation error.
pub fn finish(checks: Vec<Check>) -> Result<Vec<Check>, CliError> {
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(CliError::Validation(format!("failed checks: {}", failed.join(", "))))
    }
}
