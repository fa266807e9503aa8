use std::path::{Path, PathBuf};

use ergosde::converge::{ergodic_error_study, StudyStatus};
use ergosde::ergodic::{ergodic_average, moment_trace, simulate_chain, ErgodicConfig, ErgodicEstimate, MomentTrace};
use ergosde::model::{check_coercivity, check_growth_bounds, check_monotonicity, AssumptionReport, CheckVerdict};
use ergosde::noise::{lanes, NoiseStream};
use ergosde::stein_check::{error_representation_check, Verdict};
use ergosde::{SchemeKind, SchemeSpec, Sde};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::error::Result;
use crate::report::{create, ensure_dir, envelope_json, num, write_table, write_text};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    CheckAssumptions,
    Simulate,
    Converge,
    SteinVerify,
    BlowupDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CheckAssumptions => "check-assumptions",
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::SteinVerify => "stein-verify",
            Command::BlowupDemo => "blowup-demo",
        }
    }
}

/// What a command produced.
#[derive(Debug)]
pub struct Outcome {
    pub verdict: Verdict,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    ensure_dir(&dir)?;
    let mut out = match command {
        Command::CheckAssumptions => check_assumptions(cfg, &dir)?,
        Command::Simulate => simulate(cfg, &dir)?,
        Command::Converge => converge(cfg, &dir)?,
        Command::SteinVerify => stein_verify(cfg, &dir)?,
        Command::BlowupDemo => blowup_demo(cfg, &dir)?,
    };
    if cfg.format == Format::Csv {
        let path = dir.join(format!("{}.config.toml", command.name()));
        out.files.push(write_text(&path, &cfg.to_toml()?)?);
    }
    Ok(out)
}

fn emit_json<T: Serialize>(dir: &Path, command: Command, verdict: Verdict, cfg: &RunConfig, result: &T) -> Result<PathBuf> {
    let path = dir.join(format!("{}.json", command.name()));
    write_text(&path, &envelope_json(command.name(), verdict, cfg, result))
}

#[derive(Serialize)]
struct AssumptionResult {
    problem: String,
    reports: Vec<AssumptionReport>,
}

fn check_assumptions(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let problem = cfg.resolve_problem()?;
    let reports = vec![
        check_monotonicity(&problem, &cfg.check)?,
        check_coercivity(&problem, &cfg.check)?,
        check_growth_bounds(&problem, &cfg.check)?,
    ];
    let violated: Vec<String> = reports
        .iter()
        .filter(|r| r.verdict == CheckVerdict::ViolationFound)
        .map(|r| format!("{:?} at {:?} (margin {:.3e})", r.checked_condition, r.witness[0], r.worst_margin))
        .collect();
    let verdict = if violated.is_empty() { Verdict::Pass } else { Verdict::Fail };
    let summary = if violated.is_empty() {
        format!("{}: no violation found in {} samples per condition", problem.name(), cfg.check.n_samples)
    } else {
        format!("{}: violation: {}", problem.name(), violated.join("; "))
    };
    let file = match cfg.format {
        Format::Json => {
            let res = AssumptionResult {
                problem: problem.name().to_string(),
                reports,
            };
            emit_json(dir, Command::CheckAssumptions, verdict, cfg, &res)?
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = reports
                .iter()
                .map(|r| {
                    let witness = r.witness.iter().map(|w| format!("{w:?}")).collect::<Vec<_>>().join(" ");
                    vec![
                        format!("{:?}", r.checked_condition),
                        r.n_samples.to_string(),
                        num(r.worst_margin),
                        r.violations.to_string(),
                        format!("{:?}", r.verdict),
                        witness,
                        r.witness_order.map(|k| k.to_string()).unwrap_or_default(),
                    ]
                })
                .collect();
            write_table(
                &dir.join("check-assumptions.csv"),
                &["condition", "n_samples", "worst_margin", "violations", "verdict", "witness", "witness_order"],
                &rows,
            )?
        }
    };
    Ok(Outcome {
        verdict,
        summary,
        files: vec![file],
    })
}

#[derive(Serialize)]
struct SimulateResult {
    problem: String,
    estimate: ErgodicEstimate,
    trace_file: String,
    trace_thin: u64,
}

fn simulate(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let problem = cfg.resolve_problem()?;
    let scheme = cfg.scheme()?;
    let s = &cfg.simulate;
    let ecfg = ErgodicConfig {
        y0: s.y0.clone(),
        n_steps: s.n_steps,
        burn_in: s.burn_in,
        n_batches: s.n_batches,
        n_chains: s.n_chains,
    };
    let estimate = ergodic_average(&problem, &scheme, &cfg.phi(), &ecfg, cfg.seed, 0)?;

    // chain 0 again, thinned, for the trace
    let thin = s.trace_thin.unwrap_or((s.n_steps / 10_000).max(1));
    let tr = simulate_chain(&problem, &scheme, &s.y0, s.n_steps, NoiseStream::new(cfg.seed, lanes::CHAIN), thin)?;
    let trace_path = dir.join("simulate.trace.csv");
    let mut w = csv::Writer::from_writer(create(&trace_path)?);
    let d = problem.dim_state();
    let mut header = vec!["k".to_string()];
    header.extend((0..d).map(|i| if d == 1 { "y".to_string() } else { format!("y{}", i + 1) }));
    w.write_record(&header)?;
    for (i, st) in tr.states.iter().enumerate() {
        let k = match tr.diverged_at {
            Some(at) if i + 1 == tr.states.len() => at,
            _ => i as u64 * thin,
        };
        let mut rec = vec![k.to_string()];
        rec.extend(st.iter().map(|v| num(*v)));
        w.write_record(&rec)?;
    }
    drop(w);

    let verdict = if estimate.diverged { Verdict::Fail } else { Verdict::Pass };
    let summary = if estimate.diverged {
        format!("{} {}: diverged at step {:?}", problem.name(), scheme.kind, estimate.diverged_at)
    } else {
        format!(
            "{} {} τ={}: π_τ(φ) ≈ {:.6} ± {:.6}",
            problem.name(),
            scheme.kind,
            scheme.tau,
            estimate.phi_mean,
            estimate.stderr
        )
    };
    let file = match cfg.format {
        Format::Json => {
            let res = SimulateResult {
                problem: problem.name().to_string(),
                estimate,
                trace_file: "simulate.trace.csv".into(),
                trace_thin: thin,
            };
            emit_json(dir, Command::Simulate, verdict, cfg, &res)?
        }
        Format::Csv => {
            let e = &estimate;
            write_table(
                &dir.join("simulate.csv"),
                &["phi_mean", "stderr", "n_steps", "burn_in", "n_batches", "n_chains", "seed", "diverged", "diverged_at"],
                &[vec![
                    num(e.phi_mean),
                    num(e.stderr),
                    e.n_steps.to_string(),
                    e.burn_in.to_string(),
                    e.n_batches.to_string(),
                    e.n_chains.to_string(),
                    e.seed.to_string(),
                    e.diverged.to_string(),
                    e.diverged_at.map(|k| k.to_string()).unwrap_or_default(),
                ]],
            )?
        }
    };
    Ok(Outcome {
        verdict,
        summary,
        files: vec![trace_path, file],
    })
}

fn stein_verify(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let problem = cfg.resolve_problem()?;
    let scheme = cfg.scheme()?;
    let r = error_representation_check(&problem, &scheme, &cfg.phi(), &cfg.stein)?;
    let summary = format!(
        "{} {} τ={}: lhs {:.6} ± {:.6}, rhs {:.6} ± {:.6}, {}",
        problem.name(),
        scheme.kind,
        scheme.tau,
        r.lhs,
        r.lhs_stderr,
        r.rhs,
        r.rhs_stderr,
        r.verdict
    );
    let file = match cfg.format {
        Format::Json => emit_json(dir, Command::SteinVerify, r.verdict, cfg, &r)?,
        Format::Csv => {
            let mut rows = vec![
                vec!["lhs".into(), num(r.lhs), num(r.lhs_stderr)],
                vec!["rhs".into(), num(r.rhs), num(r.rhs_stderr)],
                vec!["atau".into(), num(r.atau_term), num(r.atau_term_stderr)],
            ];
            for i in 0..6 {
                rows.push(vec![format!("r{}", i + 1), num(r.r[i]), num(r.r_stderr[i])]);
            }
            rows.push(vec!["pi".into(), num(r.pi), num(r.pi_error)]);
            rows.push(vec!["pi_tau".into(), num(r.pi_tau), num(r.pi_tau_stderr)]);
            write_table(&dir.join("stein-verify.csv"), &["term", "value", "stderr"], &rows)?
        }
    };
    Ok(Outcome {
        verdict: r.verdict,
        summary,
        files: vec![file],
    })
}

fn converge(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let problem = cfg.resolve_problem()?;
    let rep = ergodic_error_study(
        &problem,
        problem.name(),
        cfg.scheme.kind,
        &cfg.phi(),
        &cfg.scheme.tau_grid,
        &cfg.converge.budget,
        cfg.seed,
    )?;
    let [lo, hi] = cfg.converge.slope_range;
    let verdict = match (rep.status, &rep.fit) {
        (StudyStatus::Fitted, Some(f)) if (lo..=hi).contains(&f.slope) => Verdict::Pass,
        (StudyStatus::Fitted, _) | (StudyStatus::Diverged, _) => Verdict::Fail,
        (StudyStatus::Inconclusive, _) => Verdict::Inconclusive,
    };
    let summary = match &rep.fit {
        Some(f) => format!(
            "{} {}: slope {:.3} (95% CI [{:.3}, {:.3}]), accepted [{lo}, {hi}]",
            problem.name(),
            cfg.scheme.kind,
            f.slope,
            f.ci.0,
            f.ci.1
        ),
        None => format!("{} {}: {:?}: {}", problem.name(), cfg.scheme.kind, rep.status, rep.message),
    };
    let mut files = Vec::new();
    match cfg.format {
        Format::Json => files.push(emit_json(dir, Command::Converge, verdict, cfg, &rep)?),
        Format::Csv => {
            let csv_path = dir.join("converge.csv");
            rep.write_csv(create(&csv_path)?)?;
            files.push(csv_path);
            files.push(write_text(&dir.join("converge.gp"), &rep.gnuplot_script("converge.csv"))?);
        }
    }
    Ok(Outcome { verdict, summary, files })
}

#[derive(Serialize)]
struct BlowupEntry {
    scheme: SchemeKind,
    role: &'static str,
    n_steps: u64,
    diverged_fraction: f64,
    trace: MomentTrace,
}

#[derive(Serialize)]
struct BlowupResult {
    problem: String,
    tau: f64,
    x0: Vec<f64>,
    entries: Vec<BlowupEntry>,
}

fn blowup_demo(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let problem = cfg.resolve_problem()?;
    let b = &cfg.blowup;
    let tau = cfg.scheme.tau;
    let entry = |kind: SchemeKind, role: &'static str, n_steps: u64| -> Result<BlowupEntry> {
        let trace = moment_trace(&problem, &SchemeSpec::new(kind, tau)?, &b.x0, b.p, b.n_traj, n_steps, cfg.seed)?;
        Ok(BlowupEntry {
            scheme: kind,
            role,
            n_steps,
            diverged_fraction: trace.n_diverged as f64 / trace.n_traj as f64,
            trace,
        })
    };
    let mut entries = vec![entry(b.reference, "reference", b.reference_steps)?];
    for &kind in &b.compared {
        entries.push(entry(kind, "compared", b.n_steps)?);
    }
    let reference_blows_up = entries[0].diverged_fraction > b.min_fraction;
    let compared_stable = entries[1..]
        .iter()
        .all(|e| e.trace.n_diverged == 0 && e.trace.running_sup.is_finite());
    let verdict = match (compared_stable, reference_blows_up) {
        (false, _) => Verdict::Fail,
        (true, true) => Verdict::Pass,
        (true, false) => Verdict::Inconclusive,
    };
    let summary = entries
        .iter()
        .map(|e| format!("{} {}/{} diverged", e.scheme, e.trace.n_diverged, e.trace.n_traj))
        .collect::<Vec<_>>()
        .join(", ");
    let file = match cfg.format {
        Format::Json => {
            let res = BlowupResult {
                problem: problem.name().to_string(),
                tau,
                x0: b.x0.clone(),
                entries,
            };
            emit_json(dir, Command::BlowupDemo, verdict, cfg, &res)?
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = entries
                .iter()
                .map(|e| {
                    vec![
                        e.scheme.to_string(),
                        e.role.to_string(),
                        e.n_steps.to_string(),
                        e.trace.n_traj.to_string(),
                        e.trace.n_diverged.to_string(),
                        num(e.diverged_fraction),
                        num(e.trace.running_sup),
                    ]
                })
                .collect();
            write_table(
                &dir.join("blowup-demo.csv"),
                &["scheme", "role", "n_steps", "n_traj", "n_diverged", "diverged_fraction", "running_sup"],
                &rows,
            )?
        }
    };
    Ok(Outcome {
        verdict,
        summary: format!("{}: {summary}", problem.name()),
        files: vec![file],
    })
}
