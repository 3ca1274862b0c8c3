use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use coorp::harness::{
    emit, reference_checks, run_experiment, CheckRow, EmitFormat, ExperimentConfig, InitialGain,
    ResultsReport,
};
use coorp::linalg::is_hurwitz;
use coorp::matrix_serde::{from_rows, to_rows};
use coorp::oracle::{optimal_policy, place_poles};

#[derive(Parser)]
#[command(
    name = "coorp",
    version,
    about = "Data-driven cooperative output regulation experiments"
)]
struct Cli {
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the integration step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Overrides the observer-only time before the data window (0 = learn concurrently).
    #[arg(long, global = true)]
    observer_warmup: Option<f64>,
    /// Files to write.
    #[arg(long, global = true, value_enum, num_args = 1.., default_values_t = [EmitFormat::Json, EmitFormat::CsvBundle])]
    format: Vec<EmitFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment end to end.
    Run { config: PathBuf },
    /// Run the built-in four-agent benchmark and compare with the reference gains.
    ReproducePaper,
    /// Print the model-based optimal policies only.
    Oracle { config: PathBuf },
    /// Validate model assumptions, graph, and initial gains.
    Check { config: PathBuf },
    /// Print the built-in benchmark config as TOML.
    DefaultConfig,
}

impl Cli {
    fn apply(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(w) = self.observer_warmup {
            cfg.learning.observer_warmup = w;
        }
        cfg
    }

    fn load(&self, path: &Path) -> anyhow::Result<ExperimentConfig> {
        let cfg =
            ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(self.apply(cfg))
    }
}

fn print_table(rows: &[CheckRow]) {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in rows {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        println!("{mark}  {:width$}  {}", r.name, r.detail);
    }
}

fn print_summary(report: &ResultsReport) {
    for a in &report.agents {
        println!(
            "agent {}: k* = {}, L = {:.4?}, |L-L*|/|L*| = {:.2e}, |K-K*| = {:.2e}, |P-P*| = {:.2e}",
            a.index,
            a.policy.iterations,
            a.policy.l.iter().collect::<Vec<_>>(),
            a.gaps.l_relative,
            a.gaps.k,
            a.gaps.p
        );
    }
}

fn write_checks(out: &Path, rows: &[CheckRow]) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("checks.json"),
        serde_json::to_string_pretty(rows)? + "\n",
    )?;
    Ok(())
}

fn failures(rows: &[CheckRow]) -> ExitCode {
    let failed: Vec<&CheckRow> = rows.iter().filter(|r| !r.passed).collect();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("{}", json!({ "failures": failed }));
        ExitCode::from(1)
    }
}

fn execute(cli: &Cli, cfg: &ExperimentConfig, reference: bool) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let report = run_experiment(cfg)?;
    eprintln!(
        "experiment finished in {:.2} s",
        start.elapsed().as_secs_f64()
    );
    print_summary(&report);
    for path in emit(&report, &cli.format, &cli.out)? {
        eprintln!("wrote {}", path.display());
    }
    let rows = if reference {
        reference_checks(&report)
    } else {
        vec![CheckRow {
            name: "output regulation".into(),
            passed: report.post.regulated(),
            detail: format!(
                "final max |e| = {:.2e}, final-period output gap = {:.2e}",
                report.post.final_max_error, report.post.final_output_gap
            ),
        }]
    };
    print_table(&rows);
    write_checks(&cli.out, &rows)?;
    Ok(failures(&rows))
}

fn oracle(cfg: &ExperimentConfig) -> anyhow::Result<ExitCode> {
    let setup = cfg.resolve()?;
    let e = setup.exosystem.matrix();
    let mut out = Vec::new();
    for (i, a) in setup.agents.iter().enumerate() {
        let sol = optimal_policy(a, &e, &setup.q, &setup.r, &setup.q_bar, &setup.r_bar, None)
            .with_context(|| format!("agent {}", i + 1))?;
        out.push(json!({ "agent": i + 1, "solution": sol }));
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn check(cfg: &ExperimentConfig) -> anyhow::Result<ExitCode> {
    let setup = cfg.resolve()?;
    let e = setup.exosystem.matrix();
    let mut rows = vec![CheckRow {
        name: "graph".into(),
        passed: true,
        detail: format!(
            "{} followers, targets {:?}, connected and symmetric",
            setup.graph.num_followers(),
            setup
                .graph
                .targets()
                .iter()
                .map(|t| t + 1)
                .collect::<Vec<_>>()
        ),
    }];
    for (i, a) in setup.agents.iter().enumerate() {
        let rep = a.check_assumptions(&e);
        rows.push(CheckRow {
            name: format!("agent {} assumptions", i + 1),
            passed: rep.all_hold(),
            detail: format!("{rep:?}"),
        });
        let k0 = match &cfg.learning.initial_gain {
            InitialGain::PolePlacement(p) => {
                place_poles(&a.a, &a.b, p).map_err(anyhow::Error::from)
            }
            InitialGain::Explicit(g) => from_rows(&g[i]).map_err(anyhow::Error::msg),
        };
        let (passed, detail) = match k0 {
            Ok(k) => (
                is_hurwitz(&(&a.a - &a.b * &k)),
                format!("K0 = {:?}", to_rows(&k)),
            ),
            Err(err) => (false, err.to_string()),
        };
        rows.push(CheckRow {
            name: format!("agent {} initial gain stabilizing", i + 1),
            passed,
            detail,
        });
    }
    print_table(&rows);
    Ok(failures(&rows))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cli.load(config).and_then(|cfg| execute(&cli, &cfg, false)),
        Command::ReproducePaper => execute(&cli, &cli.apply(ExperimentConfig::benchmark()), true),
        Command::Oracle { config } => cli.load(config).and_then(|cfg| oracle(&cfg)),
        Command::Check { config } => cli.load(config).and_then(|cfg| check(&cfg)),
        Command::DefaultConfig => ExperimentConfig::benchmark()
            .to_toml()
            .map(|t| {
                print!("{t}");
                ExitCode::SUCCESS
            })
            .map_err(Into::into),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
