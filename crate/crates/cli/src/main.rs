//! `infolqg`: solve, analyse and simulate the information-acquisition LQG
//! problem from a JSON configuration.

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use infolqg::equilibrium::{self, compute_sensitivity, solve_equilibrium, SensitivityParameter, SensitivityReport};
use infolqg::hjb::{self, IterationOptions};
use infolqg::model::gamma_inf_uncontrolled;
use infolqg::riccati::{integrate_variance, RateSchedule, TimeGrid};
use infolqg::simulator::{self, MCEstimate, Policy};
use infolqg::{FullValueModel, Model, ValueTable};
use serde::Serialize;
use serde_json::{json, Value};

use config::{ConfigError, RunConfig};
use output::{to_json, write_file, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "infolqg", version, about = "LQG control with costly information acquisition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration; canonical defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set model.sigma2=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `outputs`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration for v(γ): value.csv, summary.json.
    Solve(Common),
    /// Equilibrium point and its sensitivities: equilibrium.json.
    Equilibrium(Common),
    /// Parameter sensitivities with sign checks: sensitivity.json.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of sigma1,sigma2_sq,kappa,alpha.
        #[arg(long, value_delimiter = ',')]
        params: Vec<String>,
    },
    /// Monte Carlo cost estimates: mc.json, paths/*.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// optimal, no_acquisition, full_observation, constant_rate(h) or all.
        #[arg(long, default_value = "all")]
        policy: String,
        /// Number of sample paths to write per policy.
        #[arg(long, default_value_t = 0)]
        dump: usize,
    },
    /// Data behind the feedback, value and trajectory plots.
    Curves(Common),
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(infolqg::Error),
    #[error("{0}")]
    Numerical(String),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

impl From<infolqg::Error> for Failure {
    fn from(e: infolqg::Error) -> Self {
        if e.is_input_error() {
            Failure::Model(e)
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) | Failure::Model(_) => 2,
            Failure::Numerical(_) | Failure::Io(_) => 3,
        }
    }
}

struct Run {
    cfg: RunConfig,
    model: Model,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common) -> Result<Self, Failure> {
        let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
        if let Some(out) = &common.out {
            cfg.outputs = out.clone();
        }
        let model = cfg.build_model()?;
        Ok(Run {
            out: cfg.outputs.clone(),
            cfg,
            model,
        })
    }

    /// Envelope shared by every JSON artifact.
    fn envelope(&self, body: Value) -> Value {
        let mut doc = json!({
            "schema_version": SCHEMA_VERSION,
            "config": self.cfg,
        });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        doc
    }

    fn write_json(&self, name: &str, body: Value) -> Result<(), Failure> {
        write_file(&self.out, name, &to_json(&self.envelope(body)))?;
        Ok(())
    }

    fn solve(&self) -> Result<(ValueTable, f64), infolqg::Error> {
        let grid = self
            .cfg
            .grid(&self.model)
            .map_err(|e| infolqg::Error::InvalidGrid(e.to_string()))?;
        let mut opts = IterationOptions::defaults(&grid, &self.model);
        opts.tol = self.cfg.numerics.hjb_tol;
        if let Some(dt) = self.cfg.numerics.hjb_dt {
            opts.dt = dt;
        }
        Ok((hjb::value_iteration_with(&grid, &self.model, opts)?, opts.dt))
    }
}

fn cmd_solve(run: &Run) -> Result<(), Failure> {
    let coeffs = run.model.coeffs;
    let gamma_inf = gamma_inf_uncontrolled(&run.model.params);
    match run.solve() {
        Ok((table, dt)) => {
            write_file(&run.out, "value.csv", &table.to_csv())?;
            run.write_json(
                "summary.json",
                json!({
                    "coefficients": coeffs,
                    "gamma_inf": gamma_inf,
                    "gamma_d": table.gamma_d,
                    "residual": table.residual,
                    "iterations": table.iterations,
                    "hjb_dt": dt,
                    "grid_n": table.grid.n,
                }),
            )
        }
        Err(e) if !e.is_input_error() => {
            run.write_json(
                "summary.json",
                json!({"coefficients": coeffs, "gamma_inf": gamma_inf, "error": e.to_string()}),
            )?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn sensitivity_entry(report: Result<SensitivityReport, infolqg::Error>) -> Value {
    match report {
        Ok(r) => serde_json::to_value(r).expect("report serializes"),
        Err(e) => json!({"error": e.to_string()}),
    }
}

fn cmd_equilibrium(run: &Run) -> Result<(), Failure> {
    let model = &run.model;
    let eq = solve_equilibrium(model, 1.0)?;
    let jac = equilibrium::jacobian_phi(eq.gamma_eq, eq.p_eq, model, 1.0).ok();
    let (table, _) = run.solve()?;
    let width = 2.0 * table.grid.spacing();
    let slope = match equilibrium::equilibrium_slope(&eq, model, table.gamma_d, width) {
        Ok(p) => json!(p),
        Err(e) => json!({"error": e.to_string()}),
    };
    let sens: BTreeMap<&str, Value> = SensitivityParameter::ALL
        .into_iter()
        .map(|p| (p.name(), sensitivity_entry(compute_sensitivity(&eq, p, model))))
        .collect();
    run.write_json(
        "equilibrium.json",
        json!({
            "gamma_eq": eq.gamma_eq,
            "p_eq": eq.p_eq,
            "h_eq": eq.h_eq,
            "v_eq": eq.v_eq,
            "residual": eq.residual,
            "jacobian_det": jac.map(|j| j[0][0] * j[1][1] - j[0][1] * j[1][0]),
            "gamma_inf": gamma_inf_uncontrolled(&model.params),
            "gamma_d": table.gamma_d,
            "p_eq_closed_form": slope,
            "sensitivities": sens,
        }),
    )
}

fn cmd_sensitivity(run: &Run, names: &[String]) -> Result<(), Failure> {
    let params: Vec<SensitivityParameter> = if names.is_empty() {
        SensitivityParameter::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| {
                SensitivityParameter::parse(n.trim()).ok_or_else(|| {
                    Failure::Config(ConfigError::Invalid {
                        field: "--params".into(),
                        message: format!("unknown parameter `{n}`"),
                    })
                })
            })
            .collect::<Result<_, _>>()?
    };
    let eq = solve_equilibrium(&run.model, 1.0)?;
    let mut reports = BTreeMap::new();
    let mut failed = Vec::new();
    for p in params {
        let r = compute_sensitivity(&eq, p, &run.model)?;
        if !r.all_signs_pass() {
            failed.push(p.name());
        }
        reports.insert(p.name(), r);
    }
    run.write_json(
        "sensitivity.json",
        json!({
            "gamma_eq": eq.gamma_eq,
            "p_eq": eq.p_eq,
            "h_eq": eq.h_eq,
            "v_eq": eq.v_eq,
            "all_signs_pass": failed.is_empty(),
            "sensitivities": reports,
        }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("sign mismatch for {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct EstimateWithOracle {
    #[serde(flatten)]
    estimate: MCEstimate,
    oracle: Option<f64>,
}

fn parse_policy(s: &str) -> Result<Option<Policy>, Failure> {
    if s == "all" {
        return Ok(None);
    }
    Policy::parse(s).map(Some).ok_or_else(|| {
        Failure::Config(ConfigError::Invalid {
            field: "--policy".into(),
            message: format!("unknown policy `{s}`"),
        })
    })
}

fn cmd_simulate(run: &Run, policy: &str, dump: usize) -> Result<(), Failure> {
    let selected = parse_policy(policy)?;
    let sim = run.cfg.numerics.sim;
    let (table, _) = run.solve()?;
    let fv = FullValueModel::new(table);
    let policies = match selected {
        Some(p) => vec![p],
        None => vec![Policy::FullObservation, Policy::Optimal, Policy::NoAcquisition],
    };
    for &p in &policies {
        for i in 0..dump.min(sim.n_paths) {
            let rec = simulator::simulate_path(&sim, p, &fv, i as u64)?;
            write_file(&run.out, &format!("paths/{}_{i:04}.csv", p.label()), &rec.to_csv())?;
        }
    }
    let oracles = json!({
        "W": simulator::oracle_value(&sim, Policy::Optimal, &fv)?,
        "V_full": simulator::oracle_value(&sim, Policy::FullObservation, &fv)?,
        "V_no": simulator::oracle_value(&sim, Policy::NoAcquisition, &fv)?,
    });
    match selected {
        Some(p) => {
            let est = simulator::mc_cost(&sim, p, &fv)?;
            let entry = EstimateWithOracle {
                estimate: est,
                oracle: simulator::oracle_value(&sim, p, &fv)?,
            };
            run.write_json("mc.json", json!({"estimates": [entry], "oracle": oracles}))
        }
        None => {
            let cmp = simulator::compare_policies_report(&sim, &fv)?;
            let with = |e: &MCEstimate, p: Policy| -> Result<EstimateWithOracle, Failure> {
                Ok(EstimateWithOracle {
                    estimate: e.clone(),
                    oracle: simulator::oracle_value(&sim, p, &fv)?,
                })
            };
            let estimates = vec![
                with(&cmp.full_observation, Policy::FullObservation)?,
                with(&cmp.optimal, Policy::Optimal)?,
                with(&cmp.no_acquisition, Policy::NoAcquisition)?,
            ];
            run.write_json(
                "mc.json",
                json!({
                    "estimates": estimates,
                    "oracle": oracles,
                    "gap_optimal_full": cmp.gap_optimal_full,
                    "gap_no_acquisition_optimal": cmp.gap_no_acquisition_optimal,
                    "ordering_holds": cmp.ordering_holds,
                }),
            )?;
            if cmp.ordering_holds {
                Ok(())
            } else {
                Err(Failure::Numerical(
                    "policy ordering full <= optimal <= no-acquisition violated".into(),
                ))
            }
        }
    }
}

fn cmd_curves(run: &Run) -> Result<(), Failure> {
    let (table, _) = run.solve()?;
    let fv = FullValueModel::new(table);
    let grid = fv.table.grid;
    let model = &run.model;

    let mut feedback = String::from("gamma,h_star\n");
    let mut comparison = String::from("gamma,v,v_no\n");
    for i in 0..grid.n {
        let g = grid.node(i);
        feedback.push_str(&infolqg::io::csv_row(&[g, fv.table.h_star[i]]));
        comparison.push_str(&infolqg::io::csv_row(&[g, fv.table.v[i], fv.v_no(g)?]));
    }

    let curves = &run.cfg.curves;
    let tgrid = TimeGrid::new(curves.horizon, run.cfg.numerics.ode_dt)?;
    let optimal = fv.table.feedback().schedule();
    let mut traj = String::from("t,gamma_star,gamma_uncontrolled,h_star\n");
    for &f in &curves.initial_fractions {
        let g0 = f * model.coeffs.gamma_max;
        let star = integrate_variance(g0, &optimal, &tgrid, model)?;
        let free = integrate_variance(g0, &RateSchedule::Constant(0.0), &tgrid, model)?;
        for k in (0..star.values.len()).step_by(curves.stride) {
            traj.push_str(&infolqg::io::csv_row(&[
                star.times[k],
                star.values[k],
                free.values[k],
                star.rate_used[k],
            ]));
        }
    }
    write_file(&run.out, "feedback.csv", &feedback)?;
    write_file(&run.out, "comparison.csv", &comparison)?;
    write_file(&run.out, "trajectories.csv", &traj)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Solve(c) => cmd_solve(&Run::new(c)?),
        Command::Equilibrium(c) => cmd_equilibrium(&Run::new(c)?),
        Command::Sensitivity { common, params } => cmd_sensitivity(&Run::new(common)?, params),
        Command::Simulate { common, policy, dump } => cmd_simulate(&Run::new(common)?, policy, *dump),
        Command::Curves(c) => cmd_curves(&Run::new(c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
