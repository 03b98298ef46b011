use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bellman_bias::checks::{check_prop1, check_prop2, check_prop4, CheckReport, Relation};
use bellman_bias::environments::{
    build_gridworld, default_grid_spec, parse_map, random_suite, Environment, RandomMdpConfig,
};
use bellman_bias::experiments::{run_sweep, EpsMode, RunOptions, SweepConfig, SweepMode};
use bellman_bias::inference::{policy_mutual_information, DEFAULT_POLICY_TOL};
use bellman_bias::{Error, PlanOptions, PlannerSpec, PolicyCache};

#[derive(Parser)]
#[command(name = "bellman-bias", version, about = "Irrational planners and reward inference experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for generators, or the sweep master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// `smoothed`, `prior_fallback`, or a smoothing value in [0, 1).
    #[arg(long, global = true)]
    eps: Option<EpsArg>,
    /// Unit for displayed information quantities. CSVs stay in nats.
    #[arg(long, global = true, value_enum, default_value_t = LogBase::Nats)]
    log_base: LogBase,
    /// Planner convergence tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Planner iteration cap.
    #[arg(long, global = true)]
    max_iters: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
enum EpsArg {
    Mode(EpsMode),
    Value(f64),
}

impl FromStr for EpsArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Ok(mode) = s.parse::<EpsMode>() {
            return Ok(EpsArg::Mode(mode));
        }
        match s.parse::<f64>() {
            Ok(v) if (0.0..1.0).contains(&v) => Ok(EpsArg::Value(v)),
            Ok(v) => Err(format!("eps {v} outside [0, 1)")),
            Err(_) => Err(format!("expected smoothed, prior_fallback or a number, got `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LogBase {
    Nats,
    Bits,
}

impl LogBase {
    fn name(self) -> &'static str {
        match self {
            LogBase::Nats => "nats",
            LogBase::Bits => "bits",
        }
    }

    fn convert(self, nats: f64) -> f64 {
        match self {
            LogBase::Nats => nats,
            LogBase::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Random,
    Gridworld,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Check {
    Prop1,
    Prop2,
    Prop4,
}

#[derive(Subcommand)]
enum Command {
    /// Write environment files.
    Gen {
        family: Family,
        #[arg(default_value_t = 1)]
        count: usize,
        #[arg(long, short, default_value = "envs")]
        out: PathBuf,
        /// Gridworld map file (default map when absent).
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Run one experiment suite from a TOML or JSON config.
    Sweep {
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: SweepMode,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Check one of the informativeness constructions exactly.
    Theory {
        check: Check,
        /// prop1: `SxA` pairs; prop2 and prop4: |Θ| values.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<String>,
        /// Boltzmann rationality for prop2.
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        /// Write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mutual information between θ and a planner's policy on one environment.
    Mi {
        env: PathBuf,
        planner: PlannerSpec,
        /// Sup-norm tolerance for treating two policies as equal.
        #[arg(long, default_value_t = DEFAULT_POLICY_TOL)]
        policy_tol: f64,
    },
}

fn parse_mode(s: &str) -> Result<SweepMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    /// Checks ran and at least one failed.
    Assertion,
    /// Bad arguments, config or files.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(problems) => Failure::Usage(format!(
                "invalid config:\n{}",
                problems.iter().map(|p| format!("  {p}")).collect::<Vec<_>>().join("\n")
            )),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn plan_options(global: &Global) -> PlanOptions {
    let mut opts = PlanOptions::default();
    if let Some(tol) = global.tol {
        opts.tol = tol;
    }
    if let Some(n) = global.max_iters {
        opts.max_iters = n;
    }
    opts
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_gen(global: &Global, family: Family, count: usize, out: &Path, map: Option<&Path>) -> Result<(), Failure> {
    if count == 0 {
        return Err(Failure::Usage("count must be at least 1".into()));
    }
    fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", out.display())))?;
    let seed = global.seed.unwrap_or(0);
    let (envs, map_text) = match family {
        Family::Random => (random_suite(&RandomMdpConfig::default(), count, seed), None),
        Family::Gridworld => {
            let spec = match map {
                None => default_grid_spec(),
                Some(p) => {
                    let text = fs::read_to_string(p)
                        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
                    parse_map(&text)?
                }
            };
            let env = build_gridworld(&spec)?;
            (vec![env; count], Some(spec.to_map_text()))
        }
    };
    println!("{:<14} {:>6} {:>7} {:>6} {:>6} {:>9}  fingerprint", "file", "states", "actions", "thetas", "starts", "terminals");
    for (i, env) in envs.iter().enumerate() {
        let name = format!("env_{i:03}.json");
        write_file(&out.join(&name), &(env.to_json() + "\n"))?;
        if let Some(text) = &map_text {
            write_file(&out.join(format!("env_{i:03}.map")), text)?;
        }
        println!(
            "{:<14} {:>6} {:>7} {:>6} {:>6} {:>9}  {:016x}",
            name,
            env.mdp.num_states(),
            env.mdp.num_actions(),
            env.theta.len(),
            env.mdp.start_states().len(),
            env.mdp.terminal_states().len(),
            env.fingerprint()
        );
    }
    Ok(())
}

fn cmd_sweep(global: &Global, config: &Path, mode: SweepMode, out: &Path) -> Result<(), Failure> {
    let (mut cfg, text) = SweepConfig::load(config)?;
    if let Some(seed) = global.seed {
        cfg.master_seed = seed;
    }
    match global.eps {
        Some(EpsArg::Mode(m)) => cfg.eps_mode = m,
        Some(EpsArg::Value(v)) => {
            cfg.eps_mode = EpsMode::Smoothed;
            cfg.smoothing_eps = v;
        }
        None => {}
    }
    if let Some(tol) = global.tol {
        cfg.planner.tol = tol;
    }
    if let Some(n) = global.max_iters {
        cfg.planner.max_iters = n;
    }
    cfg.validate()?;
    let options = RunOptions {
        out_dir: out.to_path_buf(),
        source_config_path: Some(config.to_path_buf()),
        source_config_text: Some(text),
        jobs: global.jobs,
        log_base: global.log_base.name().to_string(),
    };
    let manifest = pool(global.jobs)?.install(|| run_sweep(&cfg, mode, &options))?;
    let outcome = manifest.outcome.unwrap_or_default();
    println!("mode            {mode}");
    println!("environments    {}", manifest.environments.len());
    println!("records         {}", outcome.records);
    println!("infinite        {}", outcome.infinite_records);
    println!("non-converged   {}", outcome.non_converged_records);
    println!("failed cells    {}", outcome.failures.len());
    for f in &outcome.failures {
        eprintln!("  env {} true {} model {}: {}", f.env_id, f.true_spec, f.model_spec, f.error);
    }
    println!("outputs         {}", manifest.outputs.join(", "));
    println!("config sha256   {}", manifest.config_sha256);
    Ok(())
}

fn parse_sizes<T: FromStr>(sizes: &[String], default: Vec<T>, what: &str) -> Result<Vec<T>, Failure> {
    if sizes.is_empty() {
        return Ok(default);
    }
    sizes
        .iter()
        .map(|s| s.trim().parse().map_err(|_| Failure::Usage(format!("bad {what} `{s}`"))))
        .collect()
}

fn parse_pair(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::Usage(format!("bad size `{s}`, expected SxA"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn cmd_theory(
    global: &Global,
    check: Check,
    sizes: &[String],
    beta: f64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let report: CheckReport = match check {
        Check::Prop1 => {
            let pairs = if sizes.is_empty() {
                vec![(2, 2), (3, 2), (2, 3)]
            } else {
                sizes.iter().map(|s| parse_pair(s)).collect::<Result<_, _>>()?
            };
            check_prop1(&pairs)?
        }
        Check::Prop2 => check_prop2(&parse_sizes(sizes, vec![4, 16, 64], "|Θ|")?, beta)?,
        Check::Prop4 => {
            let mut report = CheckReport::default();
            for n in parse_sizes(sizes, vec![8], "|Θ|")? {
                report.lines.extend(check_prop4(n)?.lines);
            }
            report
        }
    };
    let base = global.log_base;
    let mut csv = String::from("label,computed,target,tol,relation,pass\n");
    for line in &report.lines {
        let (computed, target, tol, unit) = if line.information {
            (base.convert(line.computed), base.convert(line.target), base.convert(line.tol), base.name())
        } else {
            (line.computed, line.target, line.tol, "")
        };
        let relation = match line.relation {
            Relation::Equal => "=",
            Relation::AtLeast => ">=",
            Relation::AtMost => "<=",
        };
        println!(
            "{} {}: {computed:.12} {relation} {target:.12} (tol {tol:.0e}) {unit}",
            if line.passed() { "PASS" } else { "FAIL" },
            line.label,
        );
        csv.push_str(&format!(
            "\"{}\",{computed:e},{target:e},{tol:e},{relation},{}\n",
            line.label,
            line.passed()
        ));
    }
    println!("{} of {} checks passed", report.lines.len() - report.failures(), report.lines.len());
    if let Some(path) = out {
        write_file(path, &csv)?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Assertion)
    }
}

fn cmd_mi(global: &Global, env_path: &Path, planner: &PlannerSpec, policy_tol: f64) -> Result<(), Failure> {
    let env = Environment::load(env_path)?;
    let opts = plan_options(global);
    let mi = pool(global.jobs)?.install(|| {
        policy_mutual_information(planner, &env, policy_tol, &opts, &PolicyCache::new())
    })?;
    let bits = |x: f64| LogBase::Bits.convert(x);
    println!("planner              {planner}");
    println!("thetas               {}", env.theta.len());
    println!(
        "I(theta; policy)     {:.12} nats  {:.12} bits",
        mi.mutual_information,
        bits(mi.mutual_information)
    );
    println!("H(theta)             {:.12} nats  {:.12} bits", mi.prior_entropy, bits(mi.prior_entropy));
    println!(
        "H(theta | policy)    {:.12} nats  {:.12} bits",
        mi.conditional_entropy,
        bits(mi.conditional_entropy)
    );
    println!("distinct policies    {}", mi.distinct_policies);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen { family, count, out, map } => cmd_gen(g, *family, *count, out, map.as_deref()),
        Command::Sweep { config, mode, out } => cmd_sweep(g, config, *mode, out),
        Command::Theory { check, sizes, beta, out } => cmd_theory(g, *check, sizes, *beta, out.as_deref()),
        Command::Mi { env, planner, policy_tol } => cmd_mi(g, env, planner, *policy_tol),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
