//! Command-line scenario runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvcl::flux::{default_k_grid, Flux};
use mvcl::scenario::{self, Scenario, ScenarioError};

#[derive(Parser)]
#[command(
    name = "mvcl",
    about = "Measure-valued conservation laws in 1-D: singular data, \
             Hamilton-Jacobi reconstruction, waiting-time verification"
)]
struct Cli {
    /// Recorded in manifests for provenance; no randomness is used.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario config and write its artifacts.
    Run {
        config: PathBuf,
        /// Root directory for artifacts (default: the config's own choice).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every *.toml scenario in a directory.
    Suite {
        dir: PathBuf,
        #[arg(long, default_value = "out/suite")]
        out: PathBuf,
    },
    /// Print the tail classification of a flux spec
    /// (e.g. `sin`, `arctan`, `constant(0.5)`, `clipped_linear(-1,1)`).
    Classify {
        spec: String,
        #[arg(long)]
        json: bool,
    },
    /// Run a template scenario over a parameter grid.
    Sweep {
        template: PathBuf,
        /// Repeatable: dotted key and comma-separated values, e.g.
        /// --param initial.atoms.0.mass=0.5,1.0,2.0
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
}

fn workers() -> usize {
    std::env::var("MVCL_WORKERS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get().min(4))
                .unwrap_or(1)
        })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                ScenarioError::Config(_) | ScenarioError::Io(_) | ScenarioError::Flux(_) => {
                    ExitCode::from(2)
                }
                ScenarioError::Singular(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool, ScenarioError> {
    match cli.cmd {
        Cmd::Run { config, out } => {
            let outcome = scenario::run_scenario(&config, out.as_deref(), cli.seed)?;
            for c in &outcome.verdict.checks {
                println!("{:<18} {}", c.name, if c.pass { "pass" } else { "FAIL" });
            }
            println!(
                "{} [{}] -> {}",
                outcome.verdict.name,
                if outcome.verdict.pass { "PASS" } else { "FAIL" },
                outcome.out_dir.display()
            );
            Ok(outcome.verdict.pass)
        }
        Cmd::Suite { dir, out } => {
            let report = scenario::run_suite(&dir, &out, workers(), cli.seed)?;
            print!("{}", scenario::summarize(&report));
            println!(
                "suite [{}] -> {}",
                if report.all_pass { "PASS" } else { "FAIL" },
                out.display()
            );
            Ok(report.all_pass)
        }
        Cmd::Classify { spec, json } => {
            let flux = Flux::from_registry(&spec)?;
            let report = flux
                .classify(&default_k_grid())
                .map_err(ScenarioError::Flux)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                println!("flux: {}", flux.name());
                println!(
                    "sup |H| = {:.6}, lip = {:.6}, range = [{:.6}, {:.6}]",
                    flux.sup_norm, flux.lip_norm, flux.min_value, flux.max_value
                );
                for (side, tail) in [("+inf", &report.pos), ("-inf", &report.neg)] {
                    println!(
                        "{side}: limsup {:+.6} liminf {:+.6} limit {:?} regime {:?}",
                        tail.limsup, tail.liminf, tail.limit, tail.regime
                    );
                    println!(
                        "      eventually_constant {}  pinch {} (C0 {:?})  one_sided {} (sign {:?} from {:?})",
                        tail.eventually_constant,
                        tail.h5,
                        tail.c0,
                        tail.h6,
                        tail.h6_sign,
                        tail.h6_threshold
                    );
                }
            }
            Ok(true)
        }
        Cmd::Sweep {
            template,
            params,
            out,
        } => {
            let text = std::fs::read_to_string(&template)?;
            let base: toml::Value =
                toml::from_str(&text).map_err(|e| ScenarioError::Config(e.to_string()))?;
            let axes = parse_params(&params)?;
            let mut all_pass = true;
            let mut rows = Vec::new();
            for combo in cartesian(&axes) {
                let mut value = base.clone();
                let mut suffix = String::new();
                for (path, v) in &combo {
                    set_path(&mut value, path, v.clone())?;
                    suffix.push_str(&format!(
                        "__{}_{}",
                        path.replace('.', "_"),
                        toml_scalar_str(v)
                    ));
                }
                let mut sc: Scenario = value
                    .try_into()
                    .map_err(|e: toml::de::Error| ScenarioError::Config(e.to_string()))?;
                sc.name = format!("{}{}", sc.name, sanitize(&suffix));
                sc.validate()?;
                let outcome = scenario::run_scenario_parsed(&sc, Some(&out), cli.seed)?;
                println!(
                    "{} [{}]",
                    outcome.verdict.name,
                    if outcome.verdict.pass { "PASS" } else { "FAIL" }
                );
                all_pass &= outcome.verdict.pass;
                rows.push(outcome.verdict);
            }
            let report = serde_json::json!({"results": rows, "all_pass": all_pass});
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join("sweep_report.json"),
                serde_json::to_string_pretty(&report).unwrap() + "\n",
            )?;
            Ok(all_pass)
        }
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn toml_scalar_str(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_params(params: &[String]) -> Result<Vec<(String, Vec<toml::Value>)>, ScenarioError> {
    let mut axes = Vec::new();
    for p in params {
        let (key, vals) = p
            .split_once('=')
            .ok_or_else(|| ScenarioError::Config(format!("bad --param `{p}`, want KEY=V1,V2")))?;
        let values: Vec<toml::Value> = vals
            .split(',')
            .map(|s| {
                let s = s.trim();
                if let Ok(i) = s.parse::<i64>() {
                    toml::Value::Integer(i)
                } else if let Ok(f) = s.parse::<f64>() {
                    toml::Value::Float(f)
                } else if let Ok(b) = s.parse::<bool>() {
                    toml::Value::Boolean(b)
                } else {
                    toml::Value::String(s.to_string())
                }
            })
            .collect();
        if values.is_empty() {
            return Err(ScenarioError::Config(format!("empty values in `{p}`")));
        }
        axes.push((key.to_string(), values));
    }
    Ok(axes)
}

fn cartesian(axes: &[(String, Vec<toml::Value>)]) -> Vec<Vec<(String, toml::Value)>> {
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for (key, values) in axes {
        let mut next = Vec::new();
        for combo in &combos {
            for v in values {
                let mut c = combo.clone();
                c.push((key.clone(), v.clone()));
                next.push(c);
            }
        }
        combos = next;
    }
    combos
}

/// Set a dotted path (tables and array indices) in a TOML value.
fn set_path(root: &mut toml::Value, path: &str, v: toml::Value) -> Result<(), ScenarioError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i == parts.len() - 1;
        if let Ok(idx) = part.parse::<usize>() {
            let arr = cur
                .as_array_mut()
                .ok_or_else(|| ScenarioError::Config(format!("{path}: `{part}` not an array")))?;
            if idx >= arr.len() {
                return Err(ScenarioError::Config(format!(
                    "{path}: index {idx} out of range"
                )));
            }
            if last {
                arr[idx] = v;
                return Ok(());
            }
            cur = &mut arr[idx];
        } else {
            let table = cur
                .as_table_mut()
                .ok_or_else(|| ScenarioError::Config(format!("{path}: `{part}` not a table")))?;
            if last {
                table.insert(part.to_string(), v);
                return Ok(());
            }
            cur = table
                .get_mut(*part)
                .ok_or_else(|| ScenarioError::Config(format!("{path}: missing key `{part}`")))?;
        }
    }
    Ok(())
}
