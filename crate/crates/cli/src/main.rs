use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dmech_core::analysis::{asymptotic_ic_sweep, DEFAULT_DELTA1};
use dmech_core::oracle::{kkt_residual, solve_social_optimum};
use dmech_core::scenario::{load_scenario, replay_log, MechanismKind, ProblemKind, Scenario, ScenarioRun, TaxRule};
use dmech_core::{Error, StrategyKind, VcgBaseline};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dmech", version, about = "Distributed Groves mechanisms: oracle, runs, sweeps and replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact centralized social choice for a scenario.
    Oracle {
        /// Bundled scenario name or path to a TOML file.
        scenario: String,
    },
    /// Dual decomposition with a price-setting leader.
    RunDd {
        scenario: String,
        #[arg(long, value_enum)]
        tax: Option<DdTaxArg>,
        #[command(flatten)]
        common: RunArgs,
    },
    /// Average consensus on the scenario's tree.
    RunConsensus {
        scenario: String,
        #[arg(long, value_enum)]
        alg: ConsensusArg,
        #[command(flatten)]
        common: RunArgs,
    },
    /// One-shot direct revelation with exact taxes.
    RunDirect {
        scenario: String,
        #[arg(long, value_enum)]
        tax: Option<DirectTaxArg>,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[command(flatten)]
        deviation: DeviationArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Gain of one deviant over honest play across accuracies.
    SweepIc {
        scenario: String,
        /// Comma-separated accuracies, e.g. 10,100,1000.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<u64>>,
        #[arg(long, value_enum)]
        tax: Option<SweepTaxArg>,
        #[arg(long)]
        deviant: String,
        #[arg(long, default_value_t = 0)]
        agent: usize,
        /// Required accuracy of the honest outcome at the largest n.
        #[arg(long, default_value_t = DEFAULT_DELTA1)]
        delta1: f64,
        /// Write the report as CSV to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        round_cap: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a transcript log and check it reproduces exactly.
    Replay { log: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    round_cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSONL transcript log to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[command(flatten)]
    deviation: DeviationArgs,
}

#[derive(Args)]
struct DeviationArgs {
    /// Strategy of `--agent`: honest, stackelberg, misreport:<θ,..>,
    /// random:<scale> or constant:<x,..>.
    #[arg(long)]
    deviant: Option<String>,
    #[arg(long, default_value_t = 0)]
    agent: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DdTaxArg {
    Groves,
    Price,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectTaxArg {
    Groves,
    Vcg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepTaxArg {
    Groves,
    Price,
    Vcg,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    FreeBlock,
    Excluded,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConsensusArg {
    Dd,
    Linear,
}

fn parse_numbers(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number '{t}'")))
        .collect()
}

fn parse_deviant(text: &str) -> anyhow::Result<StrategyKind> {
    let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
    Ok(match kind {
        "honest" => StrategyKind::Honest,
        "stackelberg" => StrategyKind::Stackelberg,
        "misreport" => StrategyKind::Misreport { theta: parse_numbers(arg)? },
        "constant" => StrategyKind::Constant { value: parse_numbers(arg)? },
        "random" => StrategyKind::RandomMisreport {
            scale: arg.parse().with_context(|| format!("bad scale '{arg}'"))?,
        },
        _ => bail!("unknown deviant '{text}'"),
    })
}

struct ConfigError(anyhow::Error);

fn config<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Config(ConfigError(e)))
}

enum Failure {
    Config(ConfigError),
    Run(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_configuration() {
            Failure::Config(ConfigError(e.into()))
        } else {
            Failure::Run(e.into())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn profile(s: &Scenario, deviation: &DeviationArgs) -> Result<Vec<StrategyKind>, Failure> {
    Ok(match &deviation.deviant {
        None => s.declared_profile(),
        Some(text) => s.deviant_profile(deviation.agent, config(parse_deviant(text))?)?,
    })
}

fn apply_run_args(s: &mut Scenario, a: &RunArgs) -> Result<(), Failure> {
    s.edit(|f| {
        if a.gamma.is_some() {
            f.gamma = a.gamma;
        }
        if a.alpha.is_some() {
            f.alpha = a.alpha;
        }
        if let Some(seed) = a.seed {
            f.seed = seed;
        }
        if let Some(n) = a.n {
            f.n = Some(n);
        }
    })?;
    if let Some(cap) = a.round_cap {
        s.set_round_cap(cap);
    }
    if s.n() == 0 {
        return Err(Error::Config("n must be >= 1".into()).into());
    }
    Ok(())
}

fn print_json(v: &serde_json::Value) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(|e| Failure::Run(e.into()))?;
    writeln!(out)?;
    Ok(())
}

fn report_run(s: &Scenario, prof: &[StrategyKind], run: &ScenarioRun, transcript: Option<&PathBuf>) -> Result<(), Failure> {
    if let Some(path) = transcript {
        let file = File::create(path).map_err(|e| Failure::Config(ConfigError(e.into())))?;
        let mut w = BufWriter::new(file);
        s.write_run_log(&mut w, prof, s.n(), run)?;
        w.flush()?;
    }
    let target = s.target()?;
    let mut out = json!({
        "scenario": s.name(),
        "mechanism": s.mechanism(),
        "tax": s.tax(),
        "n": s.n(),
        "rounds": run.rounds,
        "x": run.choice.x,
        "t": run.choice.t,
        "target": target,
        "distance": run.choice.distance(&target),
    });
    if let Some(g) = run.gaps.last() {
        out["lower"] = json!(g.lower);
        out["upper"] = json!(g.upper);
    }
    print_json(&out)
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Oracle { scenario } => {
            let s = load_scenario(&scenario)?;
            let problem = s.problem()?;
            let opt = solve_social_optimum(&problem)?;
            let residual = kkt_residual(&problem, &opt.x_vector(), &opt.p_vector());
            let target = s.target()?;
            print_json(&json!({
                "scenario": s.name(),
                "x": opt.x,
                "p": opt.p,
                "value": opt.value,
                "tax": s.tax(),
                "t": target.t,
                "kkt_residual": residual,
            }))
        }
        Command::RunDd { scenario, tax, common } => {
            let mut s = load_scenario(&scenario)?;
            s.edit(|f| {
                f.mechanism = MechanismKind::Alg1;
                f.tax = Some(match tax {
                    Some(DdTaxArg::Price) => TaxRule::Price,
                    Some(DdTaxArg::Groves) => TaxRule::Groves,
                    None if f.tax == Some(TaxRule::Price) => TaxRule::Price,
                    None => TaxRule::Groves,
                });
            })?;
            apply_run_args(&mut s, &common)?;
            let prof = profile(&s, &common.deviation)?;
            let run = s.run(&prof, s.n())?;
            report_run(&s, &prof, &run, common.transcript.as_ref())
        }
        Command::RunConsensus { scenario, alg, common } => {
            let mut s = load_scenario(&scenario)?;
            if s.file().kind != ProblemKind::Consensus {
                return Err(Error::Config(format!("{} is not a consensus scenario", s.name())).into());
            }
            s.edit(|f| {
                f.mechanism = match alg {
                    ConsensusArg::Dd => MechanismKind::Alg2,
                    ConsensusArg::Linear => MechanismKind::Alg3,
                };
                f.tax = Some(TaxRule::Groves);
            })?;
            apply_run_args(&mut s, &common)?;
            let prof = profile(&s, &common.deviation)?;
            let run = s.run(&prof, s.n())?;
            report_run(&s, &prof, &run, common.transcript.as_ref())
        }
        Command::RunDirect { scenario, tax, baseline, deviation, seed } => {
            let mut s = load_scenario(&scenario)?;
            s.edit(|f| {
                f.mechanism = MechanismKind::Direct;
                f.tax = Some(match tax {
                    Some(DirectTaxArg::Groves) => TaxRule::Groves,
                    Some(DirectTaxArg::Vcg) => TaxRule::Vcg,
                    None if f.tax == Some(TaxRule::Groves) => TaxRule::Groves,
                    None => TaxRule::Vcg,
                });
                if let Some(b) = baseline {
                    f.vcg_baseline = Some(match b {
                        BaselineArg::FreeBlock => VcgBaseline::FreeBlock,
                        BaselineArg::Excluded => VcgBaseline::Excluded,
                    });
                }
                if let Some(seed) = seed {
                    f.seed = seed;
                }
            })?;
            let prof = profile(&s, &deviation)?;
            let run = s.run(&prof, 1)?;
            report_run(&s, &prof, &run, None)
        }
        Command::SweepIc {
            scenario,
            n,
            tax,
            deviant,
            agent,
            delta1,
            csv,
            gamma,
            alpha,
            round_cap,
            seed,
        } => {
            let mut s = load_scenario(&scenario)?;
            s.edit(|f| {
                if let Some(t) = tax {
                    f.tax = Some(match t {
                        SweepTaxArg::Groves => TaxRule::Groves,
                        SweepTaxArg::Price => TaxRule::Price,
                        SweepTaxArg::Vcg => TaxRule::Vcg,
                    });
                }
                if gamma.is_some() {
                    f.gamma = gamma;
                }
                if alpha.is_some() {
                    f.alpha = alpha;
                }
                if let Some(seed) = seed {
                    f.seed = seed;
                }
            })?;
            if let Some(cap) = round_cap {
                s.set_round_cap(cap);
            }
            let dev = config(parse_deviant(&deviant))?;
            let ns = n.unwrap_or_else(|| s.n_sweep());
            let report = asymptotic_ic_sweep(&s, agent, &dev, &ns, delta1)?;
            if let Some(path) = csv {
                let file = File::create(&path).map_err(|e| Failure::Config(ConfigError(e.into())))?;
                report.write_csv(BufWriter::new(file))?;
            }
            print_json(&serde_json::to_value(&report).map_err(|e| Failure::Run(e.into()))?)
        }
        Command::Replay { log } => {
            let file = File::open(&log)
                .with_context(|| format!("cannot open {}", log.display()))
                .map_err(|e| Failure::Config(ConfigError(e)))?;
            let replay = replay_log(BufReader::new(file))?;
            print_json(&json!({
                "reproduced": true,
                "rounds": replay.rounds,
                "x": replay.choice.x,
                "t": replay.choice.t,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(ConfigError(e))) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("mechanism failure: {e:#}");
            ExitCode::from(1)
        }
    }
}
