// SPDX-License-Identifier: Apache-2.0
//! `run`, `sweep` and `check` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::metrics::{self, classify, measure_scenario, CheckStatus, Summary};
use crate::scenario::{numeric_key, parse_scenario, Scenario, TrojanTarget};
use crate::sim::{sig9, simulate, SimError, TraceSet};
use crate::trojan::{self, FOOTPRINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "buck-trojan",
    version,
    about = "Buck converter trojan and parity-capacitor simulator"
)]
pub struct Cli {
    /// Directory for traces and summaries.
    #[arg(long, global = true, default_value = "./out")]
    pub out: PathBuf,
    /// Suppress the printed summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write its trace and summary.
    Run { scenario: PathBuf },
    /// Simulate one scenario per value of a numeric key.
    Sweep {
        scenario: PathBuf,
        /// Dotted key, e.g. `mitigation.parity_cap_pf`.
        #[arg(long)]
        param: String,
        /// Comma-separated values in the key's file unit.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Compare a run against the analytic oracles.
    Check { scenario: PathBuf },
}

/// Parameter sweep over one numeric scenario key.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub section: String,
    pub key: String,
    pub values: Vec<f64>,
    pub out: PathBuf,
}

impl SweepSpec {
    pub fn parse(param: &str, values: &str, out: &Path) -> Result<Self, String> {
        let (section, key) = param
            .split_once('.')
            .ok_or_else(|| format!("parameter `{param}` is not a dotted key"))?;
        if numeric_key(section, key).is_none() {
            return Err(format!("`{param}` is not a numeric scenario key"));
        }
        let values = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| format!("sweep value `{v}` is not a finite number"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("sweep values list is empty".into());
        }
        Ok(Self {
            section: section.into(),
            key: key.into(),
            values,
            out: out.to_path_buf(),
        })
    }

    pub fn apply(&self, base: &Scenario, value: f64) -> Scenario {
        let mut s = base.clone();
        s.set(&self.section, &self.key, &value.to_string())
            .expect("sweep key validated at parse time");
        s
    }
}

#[derive(Debug)]
pub enum RunError {
    Input(String),
    Numeric(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Input(_) => EXIT_INPUT,
            RunError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Input(m) | RunError::Numeric(m) => m,
        }
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invalid(_) => RunError::Input(e.to_string()),
            _ => RunError::Numeric(e.to_string()),
        }
    }
}

/// Read and parse a scenario; the label falls back to the file stem.
pub fn load_scenario(path: &Path) -> Result<Scenario, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunError::Input(format!("cannot read scenario {}: {e}", path.display())))?;
    let mut s = parse_scenario(&text).map_err(|e| RunError::Input(format!("{}: {e}", path.display())))?;
    if s.label.is_none() {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        s.label = Some(stem);
    }
    Ok(s)
}

/// A finished run: traces, metrics and the summary written to disk.
pub struct RunOutput {
    pub traces: TraceSet,
    pub metrics: metrics::SteadyStateMetrics,
    pub summary: Summary,
}

pub fn execute(s: &Scenario) -> Result<RunOutput, RunError> {
    let traces = simulate(s)?;
    let m = measure_scenario(&traces, s).map_err(|e| RunError::Input(e.to_string()))?;
    let outcome = classify(&m, s.pwm.vref, s.converter.vsup);
    let summary = Summary::new(s.label_or("scenario"), &m, &outcome);
    Ok(RunOutput {
        traces,
        metrics: m,
        summary,
    })
}

fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), RunError> {
    let io = |e: std::io::Error| RunError::Input(format!("cannot write to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let label = &out.summary.label;
    let csv = fs::File::create(dir.join(format!("{label}.csv"))).map_err(io)?;
    out.traces.write_csv(std::io::BufWriter::new(csv)).map_err(io)?;
    fs::write(
        dir.join(format!("{label}.summary.json")),
        out.summary.to_json() + "\n",
    )
    .map_err(io)?;
    Ok(())
}

fn report(e: &RunError) -> i32 {
    eprintln!("error: {}", e.message());
    e.exit_code()
}

pub fn cmd_run(path: &Path, out_dir: &Path, quiet: bool) -> i32 {
    let result = load_scenario(path).and_then(|s| {
        let out = execute(&s)?;
        write_outputs(out_dir, &out)?;
        Ok((s, out))
    });
    match result {
        Ok((s, out)) => {
            if !quiet {
                if s.trojan.target != TrojanTarget::None {
                    println!(
                        "trojan: {} from {} us ({} gates, {} transistors)",
                        trojan::describe(&s.trojan),
                        1e6 * s.trojan.t_trigger,
                        FOOTPRINT.gates,
                        FOOTPRINT.transistors
                    );
                }
                println!("{}", out.summary.to_json());
            }
            EXIT_OK
        }
        Err(e) => report(&e),
    }
}

const SWEEP_FIELDS: [&str; 10] = [
    "label",
    "v_avg_v",
    "ripple_mvpp",
    "efficiency_pct",
    "i_l_avg_ma",
    "v_sw_min_v",
    "v_sw_max_v",
    "duty_effective",
    "outcome",
    "explanation",
];

fn sweep_row(value: f64, label: &str, result: &Result<Summary, RunError>) -> Vec<String> {
    let mut row = vec![value.to_string()];
    match result {
        Ok(s) => row.extend([
            s.label.clone(),
            sig9(s.v_avg_v),
            sig9(s.ripple_mvpp),
            sig9(s.efficiency_pct),
            sig9(s.i_l_avg_ma),
            sig9(s.v_sw_min_v),
            sig9(s.v_sw_max_v),
            sig9(s.duty_effective),
            s.outcome.clone(),
            s.explanation.clone(),
        ]),
        Err(e) => {
            row.push(label.to_string());
            row.extend(std::iter::repeat_n(String::new(), 7));
            row.push("Error".into());
            row.push(e.message().to_string());
        }
    }
    row
}

/// Run every value of the sweep; results are in value order.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec) -> Vec<(String, Result<Summary, RunError>)> {
    let base_label = base.label_or("scenario").to_string();
    spec.values
        .par_iter()
        .map(|&value| {
            let mut s = spec.apply(base, value);
            let label = format!("{base_label}_{}_{value}", spec.key);
            s.label = Some(label.clone());
            let result = execute(&s).and_then(|out| {
                write_outputs(&spec.out, &out)?;
                Ok(out.summary)
            });
            (label, result)
        })
        .collect()
}

pub fn write_sweep_csv(
    path: &Path,
    spec: &SweepSpec,
    rows: &[(String, Result<Summary, RunError>)],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["value"];
    header.extend(SWEEP_FIELDS);
    w.write_record(&header)?;
    for (value, (label, result)) in spec.values.iter().zip(rows) {
        w.write_record(sweep_row(*value, label, result))?;
    }
    w.flush()
}

pub fn cmd_sweep(path: &Path, param: &str, values: &str, out_dir: &Path, quiet: bool) -> i32 {
    let spec = match SweepSpec::parse(param, values, out_dir) {
        Ok(spec) => spec,
        Err(msg) => return report(&RunError::Input(msg)),
    };
    let base = match load_scenario(path) {
        Ok(s) => s,
        Err(e) => return report(&e),
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        return report(&RunError::Input(format!(
            "cannot create {}: {e}",
            out_dir.display()
        )));
    }
    let rows = run_sweep(&base, &spec);
    if let Err(e) = write_sweep_csv(&out_dir.join("sweep.csv"), &spec, &rows) {
        return report(&RunError::Input(format!("cannot write sweep.csv: {e}")));
    }
    for (value, (label, result)) in spec.values.iter().zip(&rows) {
        match result {
            Ok(s) if !quiet => println!("{param} = {value}: {} ({:.4} V)", s.outcome, s.v_avg_v),
            Ok(_) => {}
            Err(e) => eprintln!("{label}: {}", e.message()),
        }
    }
    EXIT_OK
}

pub fn cmd_check(path: &Path, quiet: bool) -> i32 {
    let (s, out) = match load_scenario(path).and_then(|s| execute(&s).map(|o| (s, o))) {
        Ok(v) => v,
        Err(e) => return report(&e),
    };
    let checks = metrics::oracle_checks(&s, &out.traces, &out.metrics);
    let mut failed = false;
    for c in &checks {
        let tag = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => {
                failed = true;
                "FAIL"
            }
            CheckStatus::NotApplicable => "N/A ",
        };
        if !quiet || c.status == CheckStatus::Fail {
            println!("{tag} {}: {}", c.name, c.detail);
        }
    }
    if failed {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    }
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { scenario } => cmd_run(scenario, &cli.out, cli.quiet),
        Command::Sweep {
            scenario,
            param,
            values,
        } => cmd_sweep(scenario, param, values, &cli.out, cli.quiet),
        Command::Check { scenario } => cmd_check(scenario, cli.quiet),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_spec_parsing() {
        let out = Path::new("out");
        let spec = SweepSpec::parse("mitigation.parity_cap_pf", "10, 50,500", out).unwrap();
        assert_eq!(spec.values, vec![10.0, 50.0, 500.0]);
        let s = spec.apply(&Scenario::baseline(), 500.0);
        assert!((s.mitigation.c_par - 500e-12).abs() < 1e-24);
        assert!(SweepSpec::parse("mitigation.parity_cap_pf", "", out).is_err());
        assert!(SweepSpec::parse("mitigation.parity_cap_pf", " , ", out).is_err());
        assert!(SweepSpec::parse("trojan.target", "1", out).is_err());
        assert!(SweepSpec::parse("duty", "0.5", out).is_err());
        assert!(SweepSpec::parse("pwm.duty", "0.5,x", out).is_err());
    }

    #[test]
    fn missing_file_is_input_error() {
        let e = load_scenario(Path::new("/nonexistent/missing.cfg"))
            .err()
            .unwrap();
        assert_eq!(e.exit_code(), EXIT_INPUT);
        assert!(e.message().contains("cannot read scenario"));
    }

    #[test]
    fn error_rows_keep_their_slot() {
        let row = sweep_row(3.0, "x_duty_3", &Err(RunError::Input("bad".into())));
        assert_eq!(row.len(), 1 + SWEEP_FIELDS.len());
        assert_eq!(row[0], "3");
        assert_eq!(row[9], "Error");
        assert_eq!(row[10], "bad");
    }
}
