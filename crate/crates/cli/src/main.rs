//! `swarmsim`: run scenarios and Monte Carlo batches, tune detectors and
//! validate configs.
//!
//! Exit codes: 0 success, 2 bad input (config, overrides, output directory),
//! 3 numeric failure during a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use resilient_swarm::detection::{detection_bounds, tune_threshold};
use resilient_swarm::sim::trace::write_csv_file;
use resilient_swarm::sim::{monte_carlo, run_scenario, ScenarioConfig, Severity, SimError, Variant};
use serde_json::json;

#[derive(Parser)]
#[command(name = "swarmsim", version, about = "Resilient swarm formation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write `trace.csv` and `summary.json`.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// none, no-update, nonrobust or robust.
        #[arg(long, default_value = "robust")]
        variant: Variant,
    },
    /// Run seeds `seed .. seed + runs` of each variant and write `montecarlo.json`.
    Montecarlo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// `all` or a comma-separated list of variants.
        #[arg(long, default_value = "all")]
        variants: String,
    },
    /// Print the chi-squared threshold and, with `--ell`, the alarm-rate bounds.
    Tune {
        #[arg(long, default_value_t = 0.05)]
        a_des: f64,
        #[arg(long, default_value_t = 2)]
        dof: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        ell: Option<usize>,
    },
    /// Check a config file and list every violation.
    Validate {
        config: PathBuf,
        /// `key=value` overrides applied before checking.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Config file, or `demo` for the built-in default scenario.
    #[arg(long, default_value = "demo")]
    config: String,
    /// Output directory.
    #[arg(long, env = "SWARMSIM_OUT", default_value = "out")]
    out: PathBuf,
    /// `key=value` overrides, e.g. `control.k_g=0.1` or `compromise.0.start_k=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::input(e.to_string()),
            SimError::Numeric { .. } => Failure {
                code: 3,
                message: e.to_string(),
            },
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::input(format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario, variant } => run(&scenario, variant),
        Command::Montecarlo {
            scenario,
            runs,
            variants,
        } => montecarlo(&scenario, runs, &variants),
        Command::Tune { a_des, dof, alpha, ell } => tune(a_des, dof, alpha, ell),
        Command::Validate { config, overrides } => validate(&config, &overrides),
    }
}

fn read_config(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    ScenarioConfig::from_toml_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut ScenarioConfig, overrides: &[String]) -> Result<(), Failure> {
    for o in overrides {
        cfg.set_override(o)
            .map_err(|e| Failure::input(format!("override `{o}`: {e}")))?;
    }
    Ok(())
}

/// Loads the scenario, applies overrides and the seed, and rejects invalid
/// configs.
fn load(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = if args.config == "demo" {
        ScenarioConfig::default()
    } else {
        read_config(Path::new(&args.config))?
    };
    apply_overrides(&mut cfg, &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let issues = cfg.validate();
    for i in issues.iter().filter(|i| i.severity == Severity::Warning) {
        eprintln!("{i}");
    }
    let errors: Vec<String> = issues
        .iter()
        .filter(|i| i.severity == Severity::Error)
        .map(|i| i.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(Failure::input(format!("invalid config:\n  {}", errors.join("\n  "))));
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing summary")?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn provenance(args: &ScenarioArgs, cfg: &ScenarioConfig) -> serde_json::Value {
    json!({
        "source": args.config,
        "overrides": args.overrides,
        "seed_override": args.seed,
        "config": cfg,
    })
}

fn run(args: &ScenarioArgs, variant: Variant) -> Result<(), Failure> {
    let cfg = load(args)?;
    prepare_out(&args.out)?;
    let out = run_scenario(&cfg, variant)?;
    let trace_path = args.out.join("trace.csv");
    write_csv_file(&trace_path, &out.trace).with_context(|| format!("cannot write {}", trace_path.display()))?;
    let mut summary = provenance(args, &cfg);
    summary["run"] = serde_json::to_value(&out.summary).context("serializing run summary")?;
    write_json(&args.out.join("summary.json"), &summary)?;

    let s = &out.summary;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    println!("variant {variant}, seed {}, {} steps, {} agents", s.seed, s.steps, s.n_agents);
    println!(
        "formation error: mean {}, pre-attack {}, post-attack {}",
        fmt(s.mean_formation_error),
        fmt(s.mean_formation_error_pre_attack),
        fmt(s.mean_formation_error_post_attack)
    );
    let inside = s.agents.iter().filter(|a| a.within_goal).count();
    println!("agents within goal radius: {inside}/{}", s.n_agents);
    for a in s.agents.iter().filter(|a| a.compromise.is_some() || a.detected_at.is_some()) {
        println!(
            "  agent {:2} {:16} detected {:>6} final distance to goal {:.2} m",
            a.agent,
            a.compromise.as_deref().unwrap_or("-"),
            a.detected_at.map_or("never".into(), |k| format!("k={k}")),
            a.final_goal_distance
        );
    }
    println!("wrote {} and {}", trace_path.display(), args.out.join("summary.json").display());
    Ok(())
}

fn parse_variants(list: &str) -> Result<Vec<Variant>, Failure> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(Variant::ALL.to_vec());
    }
    list.split(',')
        .map(|s| s.trim().parse::<Variant>().map_err(Failure::input))
        .collect()
}

fn montecarlo(args: &ScenarioArgs, runs: usize, variants: &str) -> Result<(), Failure> {
    let variants = parse_variants(variants)?;
    if runs == 0 {
        return Err(Failure::input("--runs must be at least 1"));
    }
    let cfg = load(args)?;
    prepare_out(&args.out)?;
    let mc = monte_carlo(&cfg, &variants, runs)?;
    let mut summary = provenance(args, &cfg);
    summary["montecarlo"] = serde_json::to_value(&mc).context("serializing Monte Carlo summary")?;
    let path = args.out.join("montecarlo.json");
    write_json(&path, &summary)?;

    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let mut table = format!(
        "{:<22} {:>5} {:>12} {:>10} {:>10} {:>8} {:>9}\n",
        "variant", "runs", "E post-atk", "var x", "var y", "in goal", "detected"
    );
    for v in &mc.variants {
        let finite: Vec<f64> = v.post_attack_formation_error.iter().copied().filter(|x| x.is_finite()).collect();
        let e_post = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        let _ = writeln!(
            table,
            "{:<22} {:>5} {:>12} {:>10} {:>10} {:>8.2} {:>9.2}",
            v.variant.name(),
            v.runs,
            fmt(e_post),
            fmt(v.error_variance_x),
            fmt(v.error_variance_y),
            v.all_within_goal,
            v.detection_rate
        );
    }
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}

fn tune(a_des: f64, dof: usize, alpha: f64, ell: Option<usize>) -> Result<(), Failure> {
    let tau = tune_threshold(a_des, dof).map_err(|e| Failure::input(e.to_string()))?;
    println!("τ = {tau:.5}");
    if let Some(ell) = ell {
        let (lo, hi) = detection_bounds(a_des, alpha, ell).map_err(|e| Failure::input(e.to_string()))?;
        println!("T- = {lo:.6}");
        println!("T+ = {hi:.6}");
    }
    Ok(())
}

fn validate(path: &Path, overrides: &[String]) -> Result<(), Failure> {
    let mut cfg = read_config(path)?;
    apply_overrides(&mut cfg, overrides)?;
    let issues = cfg.validate();
    if issues.is_empty() {
        println!("{}: no violations", path.display());
        return Ok(());
    }
    for i in &issues {
        println!("{i}");
    }
    let errors = issues.iter().filter(|i| i.severity == Severity::Error).count();
    let warnings = issues.len() - errors;
    println!("{}: {errors} error(s), {warnings} warning(s)", path.display());
    if errors > 0 {
        return Err(Failure::input(format!("{} has {errors} invariant violation(s)", path.display())));
    }
    Ok(())
}
