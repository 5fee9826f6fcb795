use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use stochastic_matching::bounds::{self, QzMode, DEFAULT_GRID_STEP};
use stochastic_matching::decompose::decompose;
use stochastic_matching::hardness::{self, CuckooFamily, CUCKOO_C_STAR};
use stochastic_matching::harness::{self, InstanceModel, PolicySpec};
use stochastic_matching::instance::{generate_random_instance, load_instance, Instance, RateMode};
use stochastic_matching::offline_stats::{estimate_f, exact_f, FractionalMatching};
use stochastic_matching::policies::{build_partitions, DummyMode, PolicyKind};

#[derive(Parser, Debug)]
#[command(name = "stochmatch", version, about = "Online stochastic matching: policies, simulation and bounds")]
struct Cli {
    /// Worker threads for parallel sections (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an instance: a hardness family or a random graph.
    Gen(GenArgs),
    /// Estimate (or enumerate exactly) the offline edge probabilities f.
    EstimateF(EstimateArgs),
    /// Decompose f into a distribution over matchings.
    Decompose(DecomposeArgs),
    /// Paired simulation of a policy against OPT.
    Simulate(SimulateArgs),
    /// Exact expected number of matched balls of a policy.
    Exact(ExactArgs),
    /// Minimize a competitive-ratio expression over f_z.
    VerifyBounds(BoundsArgs),
    /// Evaluate a hardness family's upper-bound recurrence.
    Recurrence(RecurrenceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum Family {
    PropSmallrates,
    PropIntegral,
    PropCuckoo,
}

#[derive(Args, Debug)]
struct Source {
    #[arg(long, conflicts_with = "family")]
    instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = CUCKOO_C_STAR)]
    c_star: f64,
}

enum Model {
    Explicit(Instance),
    Cuckoo(CuckooFamily),
}

impl Source {
    fn load(&self) -> anyhow::Result<Model> {
        if let Some(path) = &self.instance {
            return Ok(Model::Explicit(
                load_instance(path).with_context(|| format!("loading {}", path.display()))?,
            ));
        }
        let Some(family) = self.family else {
            return Err(usage("one of --instance or --family is required"));
        };
        let Some(n) = self.n else {
            return Err(usage("--family requires --n"));
        };
        Ok(match family {
            Family::PropSmallrates => Model::Explicit(hardness::gen_small_rates(n)?),
            Family::PropIntegral => Model::Explicit(hardness::gen_integral_hard(n)?),
            Family::PropCuckoo => Model::Cuckoo(CuckooFamily::new(n, self.c_star)?),
        })
    }

    fn explicit(&self) -> anyhow::Result<Instance> {
        match self.load()? {
            Model::Explicit(inst) => Ok(inst),
            Model::Cuckoo(fam) => Ok(fam.materialize()?),
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum, conflicts_with = "types")]
    family: Option<Family>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = CUCKOO_C_STAR)]
    c_star: f64,
    /// Random instance: number of ball types.
    #[arg(long, requires_all = ["bins", "degree"])]
    types: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, default_value = "fractional")]
    rate_mode: String,
    /// Write the cuckoo family in procedural form instead of materializing it.
    #[arg(long)]
    procedural: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    /// Enumerate all arrival sequences instead of sampling.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[command(flatten)]
    source: Source,
    /// File holding f, as written by `estimate-f`.
    #[arg(long)]
    f: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    #[arg(long, default_value = "adaptive")]
    policy: String,
    #[arg(long, default_value = "always-full")]
    dummy: String,
    /// Precomputed f; estimated from `--samples` sequences when absent.
    #[arg(long)]
    f: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = harness::DEFAULT_RESAMPLES)]
    resamples: usize,
    /// CSV destination; the summary then goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExactArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long, value_parser = ["nonadaptive", "adaptive"])]
    which: String,
    #[arg(long, default_value = "general")]
    mode: String,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid: f64,
    /// Include the per-point trace.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecurrenceArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = CUCKOO_C_STAR)]
    c_star: f64,
    /// Include the trajectory ψ.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A flag combination clap cannot express; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse<T: std::str::FromStr<Err = stochastic_matching::Error>>(flag: &str, v: &str) -> anyhow::Result<T> {
    v.parse().map_err(|e| usage(format!("--{flag}: {e}")))
}

fn sink(out: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    let mut w = sink(out)?;
    writeln!(w, "{text}")?;
    w.flush()?;
    Ok(())
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> anyhow::Result<()> {
    emit(out, &serde_json::to_string_pretty(value)?)
}

fn obtain_f(inst: &Instance, path: Option<&Path>, samples: u64, seed: u64) -> anyhow::Result<FractionalMatching> {
    match path {
        Some(p) => Ok(FractionalMatching::load(inst, p)?),
        None => {
            if samples == 0 {
                bail!(usage("--samples must be positive"));
            }
            Ok(estimate_f(inst, samples, seed))
        }
    }
}

fn policy_spec(model: &Model, args: &PolicyArgs, seed: u64) -> anyhow::Result<PolicySpec> {
    let kind: PolicyKind = parse("policy", &args.policy)?;
    let mode: DummyMode = parse("dummy", &args.dummy)?;
    Ok(match (kind, model) {
        (PolicyKind::Greedy, _) => PolicySpec::Greedy,
        (PolicyKind::Adaptive, Model::Explicit(inst)) => {
            let f = obtain_f(inst, args.f.as_deref(), args.samples, seed)?;
            PolicySpec::Adaptive {
                parts: Arc::new(build_partitions(inst, &f)?),
                mode,
            }
        }
        (PolicyKind::NonAdaptive, Model::Explicit(inst)) => {
            let f = obtain_f(inst, args.f.as_deref(), args.samples, seed)?;
            PolicySpec::NonAdaptive {
                mu: Arc::new(decompose(inst, &f)?),
                num_types: inst.num_types(),
            }
        }
        (PolicyKind::Adaptive, Model::Cuckoo(fam)) => {
            if args.f.is_some() {
                bail!(usage("--f is not accepted for procedural families"));
            }
            PolicySpec::Adaptive {
                parts: Arc::new(harness::cuckoo_partitions(fam, args.samples, seed)?),
                mode,
            }
        }
        (PolicyKind::NonAdaptive, Model::Cuckoo(_)) => {
            return Err(stochastic_matching::Error::Unsupported(
                "the non-adaptive policy needs an explicit instance; the cuckoo family has no finite type list".into(),
            )
            .into())
        }
    })
}

fn run_gen(a: &GenArgs) -> anyhow::Result<()> {
    let json = if let Some(types) = a.types {
        let mode: RateMode = parse("rate-mode", &a.rate_mode)?;
        generate_random_instance(types, a.bins.unwrap(), a.degree.unwrap(), mode, a.seed)?.to_json()
    } else {
        let Some(family) = a.family else {
            return Err(usage("one of --family or --types is required"));
        };
        let Some(n) = a.n else {
            return Err(usage("--family requires --n"));
        };
        match family {
            Family::PropSmallrates => hardness::gen_small_rates(n)?.to_json(),
            Family::PropIntegral => hardness::gen_integral_hard(n)?.to_json(),
            Family::PropCuckoo if a.procedural => {
                serde_json::to_string_pretty(&CuckooFamily::new(n, a.c_star)?.to_file())?
            }
            Family::PropCuckoo => CuckooFamily::new(n, a.c_star)?.materialize()?.to_json(),
        }
    };
    emit(&a.out, &json)
}

fn run_estimate(a: &EstimateArgs) -> anyhow::Result<()> {
    let inst = a.source.explicit()?;
    let f = if a.exact {
        exact_f(&inst)?
    } else {
        obtain_f(&inst, None, a.samples, a.seed)?
    };
    emit(&a.out, &f.to_json(&inst))
}

fn run_decompose(a: &DecomposeArgs) -> anyhow::Result<()> {
    let inst = a.source.explicit()?;
    let f = FractionalMatching::load(&inst, &a.f)?;
    let mu = decompose(&inst, &f)?;
    emit(&a.out, &mu.to_json(&inst))
}

fn run_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    if a.trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let model = a.source.load()?;
    let spec = policy_spec(&model, &a.policy, a.seed)?;
    let sim = match &model {
        Model::Explicit(inst) => harness::simulate_with(&InstanceModel::new(inst), &spec, a.trials, a.seed, a.resamples),
        Model::Cuckoo(fam) => harness::simulate_with(fam, &spec, a.trials, a.seed, a.resamples),
    };
    let mut w = sink(&a.out)?;
    sim.write_csv(&mut w)?;
    let summary = serde_json::to_string_pretty(&sim.estimate)?;
    if a.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

#[derive(Serialize)]
struct ExactReport {
    policy: String,
    expected_matched: f64,
}

fn run_exact(a: &ExactArgs) -> anyhow::Result<()> {
    let inst = a.source.explicit()?;
    let model = Model::Explicit(inst);
    let spec = policy_spec(&model, &a.policy, a.seed)?;
    let Model::Explicit(inst) = model else { unreachable!() };
    let value = match &spec {
        PolicySpec::Adaptive { parts, mode } => harness::exact_value_adaptive(&inst, parts, *mode)?,
        PolicySpec::NonAdaptive { mu, .. } => harness::exact_value_nonadaptive(&inst, mu),
        PolicySpec::Greedy => bail!(usage("`exact` supports the adaptive and nonadaptive policies")),
    };
    emit_json(
        &a.out,
        &ExactReport {
            policy: spec.kind().name().into(),
            expected_matched: value,
        },
    )
}

fn run_bounds(a: &BoundsArgs) -> anyhow::Result<()> {
    let mode: QzMode = parse("mode", &a.mode)?;
    let report = match a.which.as_str() {
        "nonadaptive" => bounds::min_nonadaptive_ratio(a.grid)?,
        _ => bounds::min_adaptive_ratio(mode, a.grid)?,
    };
    let report = if a.trace {
        report.with_trace(bounds::trace(&a.which, mode, a.grid)?)
    } else {
        report
    };
    emit_json(&a.out, &report)
}

#[derive(Serialize)]
struct RecurrenceReport {
    family: &'static str,
    n: usize,
    m: f64,
    b: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_star: Option<f64>,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    psi: Option<Vec<f64>>,
}

fn run_recurrence(a: &RecurrenceArgs) -> anyhow::Result<()> {
    let (family, state) = match a.family {
        Family::PropIntegral => ("prop-integral", hardness::recurrence_integral(a.n)),
        Family::PropCuckoo => ("prop-cuckoo", hardness::recurrence_cuckoo(a.n, a.c_star)?),
        Family::PropSmallrates => return Err(usage("prop-smallrates has no recurrence")),
    };
    let value = state.ratio();
    emit_json(
        &a.out,
        &RecurrenceReport {
            family,
            n: state.n,
            m: state.m,
            b: state.b,
            c_star: (a.family == Family::PropCuckoo).then_some(state.c_star),
            value,
            psi: a.trace.then_some(state.psi),
        },
    )
}

fn seed_of(cmd: &Command) -> Option<u64> {
    match cmd {
        Command::Gen(a) => Some(a.seed),
        Command::EstimateF(a) => Some(a.seed),
        Command::Simulate(a) => Some(a.seed),
        Command::Exact(a) => Some(a.seed),
        _ => None,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match seed_of(&cli.command) {
        Some(seed) => eprintln!("stochmatch: seed={seed} {:?}", cli.command),
        None => eprintln!("stochmatch: {:?}", cli.command),
    }
    match &cli.command {
        Command::Gen(a) => run_gen(a),
        Command::EstimateF(a) => run_estimate(a),
        Command::Decompose(a) => run_decompose(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Exact(a) => run_exact(a),
        Command::VerifyBounds(a) => run_bounds(a),
        Command::Recurrence(a) => run_recurrence(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
