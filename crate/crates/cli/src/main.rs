//! `flownet` — feasibility checks, gain synthesis, steady-state inspection
//! and closed-loop simulation of flow-network regulators, driven by TOML
//! scenario files.
//!
//! Exit codes: 0 success, 2 parse/validation error, 3 infeasible scenario,
//! 4 gain-bound violation, 5 numerical blow-up. Set `RUST_LOG=info` (or
//! `debug`) for progress logging.

use clap::{Parser, Subcommand, ValueEnum};
use flownet_core::error::Error;
use flownet_core::gains::{
    feasibility_report, synthesize_for_instances, verify_gains, DeltaThetaReading, Gains,
    SynthesisOptions,
};
use flownet_core::graph::NetworkSpec;
use flownet_core::linalg::{pseudoinverse, spectral_norm, DEFAULT_SV_CUTOFF};
use flownet_core::scenario::{load_scenario, ScenarioFile};
use flownet_core::simulator::{simulate, Mode, Scenario};
use flownet_core::steady_state::{compute_core, compute_hats, SteadyState};
use flownet_core::trace::write_csv_file;
use nalgebra::DVector;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "flownet",
    version,
    about = "Distributed flow-network regulator toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadingArg {
    /// Factor θ/(1−θ) exactly as printed.
    Paper,
    /// Factor (1−θ)/θ, matching the reference numbers.
    CaseStudy,
}

impl From<ReadingArg> for DeltaThetaReading {
    fn from(r: ReadingArg) -> Self {
        match r {
            ReadingArg::Paper => DeltaThetaReading::Printed,
            ReadingArg::CaseStudy => DeltaThetaReading::CaseStudy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Unconstrained,
    Saturated,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Unconstrained => Mode::Unconstrained,
            ModeArg::Saturated => Mode::Saturated,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the feasibility condition and print slack margins per segment.
    Feasibility {
        #[arg(long)]
        scenario: PathBuf,
        /// Override θ for the margin computations.
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_enum, default_value = "case-study")]
        delta_theta_reading: ReadingArg,
    },
    /// Synthesize gains (or verify the pinned ones) for the whole schedule.
    Gains {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_enum, default_value = "case-study")]
        delta_theta_reading: ReadingArg,
    },
    /// Dump steady-state quantities for one segment.
    SteadyState {
        #[arg(long)]
        scenario: PathBuf,
        /// Segment index (0-based).
        #[arg(long, default_value_t = 0)]
        segment: usize,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_enum, default_value = "case-study")]
        delta_theta_reading: ReadingArg,
    },
    /// Integrate the closed loop and write a CSV trace.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV path.
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
        /// Override the integration step (seconds).
        #[arg(long)]
        dt: Option<f64>,
        /// Override the controller mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_enum, default_value = "case-study")]
        delta_theta_reading: ReadingArg,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse(_) | Error::Validation(_) | Error::Dimension(_) | Error::NonFinite(_) => 2,
        Error::Infeasible(_) => 3,
        Error::GainBound(_) => 4,
        Error::BlowUp(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    // Die quietly when the consumer of our output goes away (e.g. `| head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.9}")).collect();
    format!("[{}]", parts.join(", "))
}

fn b_pinv_norm(spec: &NetworkSpec) -> Result<f64, Error> {
    Ok(spectral_norm(&pseudoinverse(
        &spec.incidence(),
        DEFAULT_SV_CUTOFF,
    )?))
}

/// Steady states for every segment of the schedule.
fn per_segment_states(sc: &Scenario, gains: &Gains) -> Result<Vec<SteadyState>, Error> {
    sc.segments
        .iter()
        .map(|seg| compute_core(&sc.spec, &sc.cost, &seg.d, &seg.xbar_slope, gains))
        .collect()
}

fn neutral_gains(theta: Option<f64>) -> Gains {
    // Steady-state inputs are gain-independent; margins only need θ.
    Gains::new(1.0, 1.0, 1.0, 1.0, theta.unwrap_or(0.5)).expect("neutral gains are valid")
}

fn effective_gains(
    file: &ScenarioFile,
    theta: Option<f64>,
    reading: DeltaThetaReading,
) -> Result<Gains, Error> {
    if let Some(mut g) = file.gains {
        if let Some(t) = theta {
            g.theta = t;
        }
        g.validate()?;
        return Ok(g);
    }
    let probe = neutral_gains(None);
    let states = per_segment_states(&file.scenario, &probe)?;
    let opts = SynthesisOptions {
        theta,
        reading,
        ..Default::default()
    };
    log::info!(
        "no gains pinned in the scenario; synthesizing for {} segment(s)",
        states.len()
    );
    synthesize_for_instances(
        &states,
        &file.scenario.bounds,
        b_pinv_norm(&file.scenario.spec)?,
        file.scenario.eps1,
        file.scenario.eps2,
        &opts,
    )
}

fn run(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Feasibility {
            scenario,
            theta,
            delta_theta_reading,
        } => {
            let file = load_scenario(&scenario)?;
            let reading = delta_theta_reading.into();
            let gains = file.gains.unwrap_or_else(|| neutral_gains(theta));
            let theta = theta.unwrap_or(gains.theta);
            let norm = b_pinv_norm(&file.scenario.spec)?;
            let mut any_infeasible = false;
            for (k, seg) in file.scenario.segments.iter().enumerate() {
                let ss = compute_core(
                    &file.scenario.spec,
                    &file.scenario.cost,
                    &seg.d,
                    &seg.xbar_slope,
                    &gains,
                )?;
                let report = feasibility_report(
                    &ss,
                    &file.scenario.bounds,
                    norm,
                    file.scenario.eps1,
                    file.scenario.eps2,
                    theta,
                    reading,
                    file.gains.map(|g| g.gamma_c),
                )?;
                any_infeasible |= !report.feasible;
                println!("segment {k} [{:.0} s, {:.0} s]:", seg.t_start, seg.t_end);
                println!("  feasible          = {}", report.feasible);
                println!("  ubar_p            = {}", fmt_vec(&ss.ubar_p));
                println!("  ubar_e            = {}", fmt_vec(&ss.ubar_e));
                println!("  delta_p           = {:.6}", report.delta_p);
                println!("  delta_e           = {:.6}", report.delta_e);
                println!("  delta_theta       = {:.6e}", report.delta_theta);
                println!("  bound_gamma_c     = {:.6}", report.bound_gamma_c);
                println!(
                    "  bound gamma_p^2/gamma_l = {:.6e} (at gamma_c = {:.6})",
                    report.bound_gamma_ratio, report.candidate_gamma_c
                );
            }
            if any_infeasible {
                println!("result: INFEASIBLE under the least-norm flow selection");
                return Err(Error::Infeasible(
                    "at least one segment violates the feasibility condition".into(),
                ));
            }
            println!("result: feasible");
            Ok(ExitCode::SUCCESS)
        }
        Command::Gains {
            scenario,
            theta,
            delta_theta_reading,
        } => {
            let file = load_scenario(&scenario)?;
            let reading: DeltaThetaReading = delta_theta_reading.into();
            let norm = b_pinv_norm(&file.scenario.spec)?;
            let gains = effective_gains(&file, theta, reading)?;
            println!("gamma_e = {:.9}", gains.gamma_e);
            println!("gamma_c = {:.9}", gains.gamma_c);
            println!("gamma_p = {:.9}", gains.gamma_p);
            println!("gamma_l = {:.9}", gains.gamma_l);
            println!("theta   = {:.9}", gains.theta);
            println!("gamma   = {:.9e}", gains.gamma_eff());
            let mut all_ok = true;
            for (k, seg) in file.scenario.segments.iter().enumerate() {
                let ss = compute_core(
                    &file.scenario.spec,
                    &file.scenario.cost,
                    &seg.d,
                    &seg.xbar_slope,
                    &gains,
                )?;
                let hats = compute_hats(&file.scenario.spec, &file.scenario.cost, &ss, &gains)?;
                let report = verify_gains(
                    &gains,
                    &ss,
                    &hats,
                    &file.scenario.cost,
                    &file.scenario.bounds,
                    norm,
                    file.scenario.eps1,
                    file.scenario.eps2,
                    reading,
                )?;
                println!(
                    "segment {k}: {}",
                    if report.all_passed {
                        "all checks pass"
                    } else {
                        "CHECK FAILURES"
                    }
                );
                for check in report.checks.iter().filter(|c| !c.passed) {
                    println!(
                        "  FAIL {:<44} value {:.6e} bound {:.6e}",
                        check.name, check.value, check.bound
                    );
                }
                all_ok &= report.all_passed;
            }
            if !all_ok {
                return Err(Error::GainBound(
                    "at least one verification check failed".into(),
                ));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SteadyState {
            scenario,
            segment,
            theta,
            delta_theta_reading,
        } => {
            let file = load_scenario(&scenario)?;
            let reading = delta_theta_reading.into();
            let seg = file.scenario.segments.get(segment).ok_or_else(|| {
                Error::Validation(format!(
                    "segment index {segment} out of range (schedule has {})",
                    file.scenario.segments.len()
                ))
            })?;
            let gains = effective_gains(&file, theta, reading)?;
            let ss = compute_core(
                &file.scenario.spec,
                &file.scenario.cost,
                &seg.d,
                &seg.xbar_slope,
                &gains,
            )?;
            let hats = compute_hats(&file.scenario.spec, &file.scenario.cost, &ss, &gains)?;
            println!("segment {segment} [{:.0} s, {:.0} s], gains (gamma_e={}, gamma_c={}, gamma_p={}, gamma_l={})",
                seg.t_start, seg.t_end, gains.gamma_e, gains.gamma_c, gains.gamma_p, gains.gamma_l);
            println!("dtilde  = {}", fmt_vec(&ss.dtilde));
            println!("xbar_p  = {}", fmt_vec(&ss.xbar_p));
            println!("xbar_e  = {}", fmt_vec(&ss.xbar_e));
            println!("ubar_p  = {}", fmt_vec(&ss.ubar_p));
            println!("ubar_e  = {}", fmt_vec(&ss.ubar_e));
            println!("xhat    = {}", fmt_vec(&hats.x));
            println!("xhat_p  = {}", fmt_vec(&hats.x_p));
            println!("xhat_e  = {}", fmt_vec(&hats.x_e));
            println!("uhat_p  = {}", fmt_vec(&hats.u_p));
            println!("uhat_e  = {}", fmt_vec(&hats.u_e));
            println!(
                "||xhat|| = {:.6e}  ||uhat_p|| = {:.6e}  ||uhat_e|| = {:.6e}",
                hats.x.norm(),
                hats.u_p.norm(),
                hats.u_e.norm()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            scenario,
            out,
            dt,
            mode,
            theta,
            delta_theta_reading,
        } => {
            let file = load_scenario(&scenario)?;
            let reading = delta_theta_reading.into();
            let gains = effective_gains(&file, theta, reading)?;
            let mut options = file.options;
            if let Some(dt) = dt {
                options.dt = dt;
            }
            if let Some(mode) = mode {
                options.mode = mode.into();
            }
            log::info!(
                "integrating {} segment(s) at dt = {} s in {:?} mode",
                file.scenario.segments.len(),
                options.dt,
                options.mode
            );
            let trace = simulate(&file.scenario, &gains, &options)?;
            write_csv_file(&trace, &out)?;
            println!("wrote {} samples to {}", trace.records.len(), out.display());
            for s in &trace.segments {
                println!(
                    "segment {} end t = {:>9.0} s: ||x - xbar|| = {:.6e}, ||u_p - ubar_p|| = {:.6e}, |1'(u_p + d - xbar_s)| = {:.3e}",
                    s.index, s.t_end, s.err_x, s.err_up, s.conservation
                );
            }
            let verdict = if trace.meets_eps { "PASS" } else { "MISS" };
            println!(
                "final segment vs tolerances: err_x < eps1 = {:.0e} and err_up < eps2 = {:.0e}: {verdict}",
                trace.eps1, trace.eps2
            );
            println!("wall time: {:.3} s", trace.wall_seconds);
            Ok(ExitCode::SUCCESS)
        }
    }
}
