use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand};

use gpebo::estimation::ExtensionMode;
use gpebo::harness::{
    audit, default_config, describe, run_scenario, scenarios::build_system, write_outputs, ConfigOverrides, Gamma,
    HarnessError, RunSummary, ScenarioConfig, SCENARIOS,
};

#[derive(Parser)]
#[command(name = "gpebo", version, about = "Adaptive observers for LTV descriptor systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one or more scenarios and write traces plus summary.json.
    Run(RunArgs),
    /// Print the registered scenarios.
    ListScenarios,
    /// Audit the assumptions of a scenario without simulating.
    Check(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario name; repeat or comma-separate to run several.
    #[arg(long, value_delimiter = ',', required = true)]
    scenario: Vec<String>,
    /// JSON file with configuration overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Scalar gradient gain.
    #[arg(long)]
    gamma: Option<f64>,
    /// Filter rates, comma-separated.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// filter-bank or kreisselmeier.
    #[arg(long)]
    estimator: Option<ExtensionMode>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory; several scenarios each get a subdirectory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl CommonArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            t1: self.t_final,
            h: self.step,
            gamma: self.gamma.map(Gamma::Scalar),
            lambda: self.lambda.clone(),
            estimator: self.estimator,
            ..Default::default()
        }
    }

    /// Registry defaults, then the config file, then flags.
    fn resolve(&self, name: &str) -> Result<ScenarioConfig, HarnessError> {
        let file = match &self.config {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                ConfigOverrides::from_json(&text)?
            }
            None => ConfigOverrides::default(),
        };
        let cfg = self.overrides().merge_over(file).apply(default_config(name)?);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_one(cfg: &ScenarioConfig, dir: &Path) -> Result<RunSummary, HarnessError> {
    let out = run_scenario(cfg)?;
    write_outputs(dir, &out)?;
    Ok(out.summary)
}

fn report(name: &str, s: &RunSummary) {
    let fmt = |v: Option<f64>| v.map_or("not reached".to_string(), |t| format!("{t:.3}"));
    print!("{name}: ");
    match &s.final_error {
        Some(e) => println!(
            "final |x_a err| = {:.3e}, |x_b err| = {:.3e}, |eta err| = {:.3e}",
            e.differential, e.algebraic, e.eta
        ),
        None => println!("empty run"),
    }
    for th in &s.time_to_threshold {
        println!(
            "  eps {:e}: state at {}, eta at {}",
            th.epsilon,
            fmt(th.state),
            fmt(th.eta)
        );
    }
    if s.flags.stiff {
        println!("  note: gamma*Delta^2*h peaked at {:.3e}", s.flags.stiffness_max);
    }
    if s.flags.phi_ill_conditioned {
        println!("  note: cond(Phi) peaked at {:.3e}", s.flags.phi_condition_max);
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), HarnessError> {
    let names = &args.common.scenario;
    let cfgs = names
        .iter()
        .map(|n| args.common.resolve(n))
        .collect::<Result<Vec<_>, _>>()?;
    let dirs: Vec<PathBuf> = cfgs
        .iter()
        .map(|c| {
            let base = c.out_dir.clone().unwrap_or_else(|| args.out.clone());
            if cfgs.len() > 1 {
                base.join(&c.scenario)
            } else {
                base
            }
        })
        .collect();
    let results: Vec<Result<RunSummary, HarnessError>> = thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .zip(&dirs)
            .map(|(c, d)| s.spawn(move || run_one(c, d)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(HarnessError::Io("worker panicked".into())))
            })
            .collect()
    });
    let mut first_err = None;
    for ((c, d), r) in cfgs.iter().zip(&dirs).zip(results) {
        match r {
            Ok(s) => {
                report(&c.scenario, &s);
                println!("  wrote {}", d.display());
            }
            Err(e) => {
                eprintln!("{}: {e}", c.scenario);
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn cmd_check(args: &CommonArgs) -> Result<(), HarnessError> {
    let mut failed = None;
    for name in &args.scenario {
        let cfg = args.resolve(name)?;
        let a = audit(&cfg, &build_system(&cfg)?)?;
        println!("{name}: regression rows {:?}", a.rows);
        for c in &a.checks {
            let tag = if c.pass { "ok  " } else { "FAIL" };
            println!("  [{tag}] {}: {}", c.name, c.detail);
        }
        if !a.failures().is_empty() {
            failed.get_or_insert(HarnessError::Assumption(format!("{name} fails its audit")));
        }
    }
    failed.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::ListScenarios => {
            for s in SCENARIOS {
                println!("{s:32} {}", describe(s));
            }
            Ok(())
        }
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
