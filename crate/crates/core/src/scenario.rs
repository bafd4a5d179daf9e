//! Declarative scenario files and a runnable scenario built from them.

use std::io::BufRead;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{
    default_dual_step, run_consensus_dd, run_consensus_linear, CommGraph, ConsensusRun,
};
use crate::dd::{default_step_size, run_dd_mechanism, DdConfig, DdRun, DdTax, GapRecord};
use crate::error::{Error, Result};
use crate::model::{AgentModel, AgentType, AllocationProblem, SocialChoice, Society};
use crate::oracle::{
    exact_groves_tax, exact_vcg_tax, run_direct_mechanism, solve_social_optimum, DirectTax, VcgBaseline,
};
use crate::protocol::{
    read_log, replay_reports, write_log, BroadcastPayload, LeaderBroadcast, Round, RunConfig, Schedule, Topology,
    Transcript, DEFAULT_ROUND_CAP,
};
use crate::strategies::{build_consensus_followers, build_dd_followers, ConsensusAlgorithm, StrategyKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Allocation,
    Consensus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    /// Dual decomposition with a central price setter.
    Alg1,
    /// Edge-dual consensus.
    Alg2,
    /// Linear averaging consensus.
    Alg3,
    /// One-shot direct revelation.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaxRule {
    Groves,
    Price,
    Vcg,
}

/// A number or a list of numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Numbers {
    One(f64),
    Many(Vec<f64>),
}

impl Numbers {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Numbers::One(x) => vec![*x],
            Numbers::Many(v) => v.clone(),
        }
    }
}

/// A scalar multiple of the identity or an explicit matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Curvature {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// Defaults to 1 for allocation and 2 for consensus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<Curvature>,
    pub theta: Numbers,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub strategy: StrategyKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSection {
    pub r: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSection {
    /// 0-based vertex pairs.
    pub edges: Vec<[usize; 2]>,
}

/// On-disk scenario schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: ProblemKind,
    pub mechanism: MechanismKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tax: Option<TaxRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vcg_baseline: Option<VcgBaseline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sweep: Option<Vec<u64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_cap: Option<usize>,
    #[serde(default)]
    pub schedule: Schedule,
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<ConsensusSection>,
}

pub const DEFAULT_N: u64 = 1000;

const BUNDLED: &[(&str, &str)] = &[
    ("example1", include_str!("../scenarios/example1.toml")),
    ("example1-price", include_str!("../scenarios/example1-price.toml")),
    ("example1-direct", include_str!("../scenarios/example1-direct.toml")),
    ("path3-consensus", include_str!("../scenarios/path3-consensus.toml")),
    ("path3-dual", include_str!("../scenarios/path3-dual.toml")),
    ("star4-consensus", include_str!("../scenarios/star4-consensus.toml")),
    ("resource3", include_str!("../scenarios/resource3.toml")),
];

/// Names of the scenarios shipped with the library.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// A bundled scenario by name. `path3` is accepted for `path3-consensus`.
pub fn bundled(name: &str) -> Option<Scenario> {
    let name = if name == "path3" { "path3-consensus" } else { name };
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario_str(text).expect("bundled scenarios are valid"))
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
    Scenario::new(file)
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text).map_err(|e| match e {
        Error::Scenario(msg) => Error::Scenario(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A bundled name or a path to a scenario file.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    match bundled(name_or_path) {
        Some(s) => Ok(s),
        None if Path::new(name_or_path).exists() => parse_scenario(name_or_path),
        None => Err(Error::Scenario(format!(
            "no bundled scenario or file named '{name_or_path}' (bundled: {})",
            bundled_names().collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Scenario(format!("{what}: row {i} has {} entries, expected {cols}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn scenario_err(field: String) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Scenario(_) => e,
        other => Error::Scenario(format!("{field}: {other}")),
    }
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    file: ScenarioFile,
    society: Society,
    types: Vec<AgentType>,
    graph: Option<CommGraph>,
}

/// Result of one mechanism run.
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub choice: SocialChoice,
    pub rounds: usize,
    pub transcript: Transcript,
    /// Duality-gap history of dual decomposition runs.
    pub gaps: Vec<GapRecord>,
}

impl From<DdRun> for ScenarioRun {
    fn from(r: DdRun) -> Self {
        ScenarioRun {
            choice: r.outcome.choice,
            rounds: r.outcome.rounds,
            transcript: r.transcript,
            gaps: r.gaps,
        }
    }
}

impl From<ConsensusRun> for ScenarioRun {
    fn from(r: ConsensusRun) -> Self {
        ScenarioRun {
            choice: r.outcome.choice,
            rounds: r.outcome.rounds,
            transcript: r.transcript,
            gaps: Vec::new(),
        }
    }
}

/// Header of a transcript log: enough to rebuild every follower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub scenario: ScenarioFile,
    pub n: u64,
    pub profile: Vec<StrategyKind>,
}

impl Scenario {
    pub fn new(file: ScenarioFile) -> Result<Self> {
        if file.agents.is_empty() {
            return Err(Error::Scenario("agents: at least one agent is required".into()));
        }
        let tax = file.tax.unwrap_or(TaxRule::Groves);
        let allowed = match file.mechanism {
            MechanismKind::Alg1 => matches!(tax, TaxRule::Groves | TaxRule::Price),
            MechanismKind::Alg2 | MechanismKind::Alg3 => tax == TaxRule::Groves,
            MechanismKind::Direct => matches!(tax, TaxRule::Groves | TaxRule::Vcg),
        };
        if !allowed {
            return Err(Error::Scenario(format!("tax: {tax:?} is not available for {:?}", file.mechanism)));
        }
        if let Some(n) = file.n {
            if n == 0 {
                return Err(Error::Scenario("n: must be >= 1".into()));
            }
        }
        if let Some(sweep) = &file.n_sweep {
            if sweep.is_empty() || sweep.contains(&0) || sweep.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Scenario("n_sweep: must be a non-empty increasing list of positive values".into()));
            }
        }
        let types = file
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| AgentType::new(a.theta.to_vec()).map_err(scenario_err(format!("agents[{i}].theta"))))
            .collect::<Result<Vec<_>>>()?;

        let (society, graph) = match file.kind {
            ProblemKind::Allocation => {
                if !matches!(file.mechanism, MechanismKind::Alg1 | MechanismKind::Direct) {
                    return Err(Error::Scenario(format!(
                        "mechanism: {:?} needs a consensus problem",
                        file.mechanism
                    )));
                }
                let section = file
                    .allocation
                    .as_ref()
                    .ok_or_else(|| Error::Scenario("allocation: section missing".into()))?;
                let models = file
                    .agents
                    .iter()
                    .zip(&types)
                    .enumerate()
                    .map(|(i, (a, t))| {
                        let d = t.dim();
                        let curvature = match &a.curvature {
                            None => DMatrix::identity(d, d),
                            Some(Curvature::Scalar(s)) => DMatrix::identity(d, d) * *s,
                            Some(Curvature::Matrix(rows)) => matrix(rows, &format!("agents[{i}].curvature"))?,
                        };
                        AgentModel::new(curvature, a.offset).map_err(scenario_err(format!("agents[{i}].curvature")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let r = matrix(&section.r, "allocation.r")?;
                let c = DVector::from_vec(section.c.clone());
                (Society::new(models, r, c).map_err(scenario_err("allocation".into()))?, None)
            }
            ProblemKind::Consensus => {
                let section = file
                    .consensus
                    .as_ref()
                    .ok_or_else(|| Error::Scenario("consensus: section missing".into()))?;
                if let Some(i) = types.iter().position(|t| t.dim() != 1) {
                    return Err(Error::Scenario(format!("agents[{i}].theta: consensus types are scalars")));
                }
                if file.agents.iter().any(|a| a.curvature.is_some() || a.offset != 0.0) {
                    return Err(Error::Scenario(
                        "agents: consensus costs are fixed to (x - θ)²; drop curvature/offset".into(),
                    ));
                }
                let edges: Vec<(usize, usize)> = section.edges.iter().map(|[a, b]| (*a, *b)).collect();
                let graph = CommGraph::tree(types.len(), &edges).map_err(scenario_err("consensus.edges".into()))?;
                (graph.society()?, Some(graph))
            }
        };
        if let Some(g) = file.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Scenario(format!("gamma: must be positive, got {g}")));
            }
        }
        let scenario = Scenario { file, society, types, graph };
        // Strategy assignments are checked by building them once.
        scenario.check_profile(&scenario.declared_profile())?;
        Ok(scenario)
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    pub fn name(&self) -> &str {
        self.file.name.as_deref().unwrap_or("scenario")
    }

    pub fn society(&self) -> &Society {
        &self.society
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn graph(&self) -> Option<&CommGraph> {
        self.graph.as_ref()
    }

    pub fn agents(&self) -> usize {
        self.types.len()
    }

    pub fn mechanism(&self) -> MechanismKind {
        self.file.mechanism
    }

    pub fn tax(&self) -> TaxRule {
        self.file.tax.unwrap_or(TaxRule::Groves)
    }

    pub fn n(&self) -> u64 {
        self.file.n.unwrap_or(DEFAULT_N)
    }

    pub fn n_sweep(&self) -> Vec<u64> {
        self.file.n_sweep.clone().unwrap_or_else(|| vec![10, 100, 1000, 10_000])
    }

    /// The problem at the true types.
    pub fn problem(&self) -> Result<AllocationProblem> {
        self.society.instantiate(&self.types)
    }

    pub fn honest_profile(&self) -> Vec<StrategyKind> {
        vec![StrategyKind::Honest; self.agents()]
    }

    /// Strategies assigned in the file.
    pub fn declared_profile(&self) -> Vec<StrategyKind> {
        self.file.agents.iter().map(|a| a.strategy.clone()).collect()
    }

    /// Everyone honest except `agent`.
    pub fn deviant_profile(&self, agent: usize, deviant: StrategyKind) -> Result<Vec<StrategyKind>> {
        if agent >= self.agents() {
            return Err(Error::Config(format!("agent {agent} out of range (0..{})", self.agents())));
        }
        let mut p = self.honest_profile();
        p[agent] = deviant;
        Ok(p)
    }

    /// Applies `f` to the underlying file and re-validates it. On error the
    /// scenario is left unchanged.
    pub fn edit(&mut self, f: impl FnOnce(&mut ScenarioFile)) -> Result<()> {
        let mut file = self.file.clone();
        f(&mut file);
        *self = Scenario::new(file)?;
        Ok(())
    }

    pub fn set_round_cap(&mut self, cap: usize) {
        self.file.round_cap = Some(cap);
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            round_cap: self.file.round_cap.unwrap_or(DEFAULT_ROUND_CAP),
            schedule: self.file.schedule,
        }
    }

    /// Step size of the iterative mechanism (`γ` or `α`).
    pub fn step_size(&self) -> Result<Option<f64>> {
        Ok(match self.file.mechanism {
            MechanismKind::Alg1 => Some(match self.file.gamma {
                Some(g) => g,
                None => default_step_size(&self.problem()?),
            }),
            MechanismKind::Alg2 => Some(self.file.gamma.unwrap_or_else(|| default_dual_step(self.graph_ref()))),
            MechanismKind::Alg3 => self.file.alpha,
            MechanismKind::Direct => None,
        })
    }

    fn graph_ref(&self) -> &CommGraph {
        self.graph.as_ref().expect("consensus scenarios carry a graph")
    }

    fn dd_tax(&self) -> DdTax {
        match self.tax() {
            TaxRule::Price => DdTax::Price,
            _ => DdTax::Groves,
        }
    }

    fn check_profile(&self, profile: &[StrategyKind]) -> Result<()> {
        if profile.len() != self.agents() {
            return Err(Error::dims("strategy profile", self.agents(), profile.len()));
        }
        for (i, kind) in profile.iter().enumerate() {
            let ok = match (kind, self.file.mechanism) {
                (StrategyKind::Stackelberg, MechanismKind::Alg1) => true,
                (StrategyKind::Stackelberg, _) => false,
                (StrategyKind::Constant { .. }, MechanismKind::Direct) => false,
                (StrategyKind::Constant { value }, _) => {
                    if value.len() != self.types[i].dim() {
                        return Err(Error::Scenario(format!(
                            "agents[{i}].strategy: constant value has {} entries, expected {}",
                            value.len(),
                            self.types[i].dim()
                        )));
                    }
                    true
                }
                _ => true,
            };
            if !ok {
                return Err(Error::Scenario(format!(
                    "agents[{i}].strategy: {} is not available for {:?}",
                    kind.label(),
                    self.file.mechanism
                )));
            }
        }
        Ok(())
    }

    fn followers(&self, profile: &[StrategyKind]) -> Result<Vec<Box<dyn crate::protocol::Strategy>>> {
        self.check_profile(profile)?;
        let seed = self.file.seed;
        match self.file.mechanism {
            MechanismKind::Alg1 => {
                let gamma = self.step_size()?.expect("alg1 has a step");
                build_dd_followers(&self.society, &self.types, profile, gamma, seed)
            }
            MechanismKind::Alg2 | MechanismKind::Alg3 => {
                let theta: Vec<f64> = self.types.iter().map(|t| t.theta()[0]).collect();
                let (alg, gamma) = if self.file.mechanism == MechanismKind::Alg2 {
                    (ConsensusAlgorithm::Dual, self.step_size()?.expect("alg2 has a step"))
                } else {
                    (ConsensusAlgorithm::Linear, 0.0)
                };
                build_consensus_followers(self.graph_ref(), &theta, profile, alg, gamma, seed)
            }
            MechanismKind::Direct => Err(Error::Config("the direct mechanism has no follower programs".into())),
        }
    }

    fn topology(&self) -> Topology {
        match &self.graph {
            Some(g) => g.topology(),
            None => Topology::star(self.agents()),
        }
    }

    /// Runs the mechanism at accuracy `n` with the given strategy profile.
    pub fn run(&self, profile: &[StrategyKind], n: u64) -> Result<ScenarioRun> {
        if n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        let run = self.run_config();
        match self.file.mechanism {
            MechanismKind::Alg1 => {
                let mut followers = self.followers(profile)?;
                let config = DdConfig {
                    n,
                    gamma: self.step_size()?.expect("alg1 has a step"),
                    tax: self.dd_tax(),
                    run,
                };
                Ok(run_dd_mechanism(self.society.coupling(), &mut followers, &config)?.into())
            }
            MechanismKind::Alg2 => {
                let mut followers = self.followers(profile)?;
                let gamma = self.step_size()?.expect("alg2 has a step");
                Ok(run_consensus_dd(self.graph_ref(), &mut followers, n, gamma, &run)?.into())
            }
            MechanismKind::Alg3 => {
                let mut followers = self.followers(profile)?;
                Ok(run_consensus_linear(self.graph_ref(), &mut followers, n, self.file.alpha, &run)?.into())
            }
            MechanismKind::Direct => {
                self.check_profile(profile)?;
                let reports = profile
                    .iter()
                    .enumerate()
                    .map(|(i, k)| Ok(k.acted_type(&self.types[i], i, self.file.seed)?.expect("checked")))
                    .collect::<Result<Vec<_>>>()?;
                let tax = match self.tax() {
                    TaxRule::Vcg => DirectTax::Vcg,
                    _ => DirectTax::Groves,
                };
                let choice = run_direct_mechanism(
                    &self.society,
                    &reports,
                    tax,
                    self.file.vcg_baseline.unwrap_or_default(),
                )?;
                let transcript = Transcript {
                    rounds: vec![Round {
                        round: 0,
                        reports: Vec::new(),
                        broadcast: LeaderBroadcast {
                            round: 0,
                            payload: BroadcastPayload::Outcome {
                                x: choice.x.clone(),
                                t: choice.t.clone(),
                            },
                        },
                    }],
                };
                Ok(ScenarioRun {
                    choice,
                    rounds: 0,
                    transcript,
                    gaps: Vec::new(),
                })
            }
        }
    }

    /// The social choice the mechanism is meant to implement at the true types.
    pub fn target(&self) -> Result<SocialChoice> {
        let problem = self.problem()?;
        let opt = solve_social_optimum(&problem)?;
        let x = opt.x_vector();
        let t = match (self.file.mechanism, self.tax()) {
            (_, TaxRule::Vcg) => exact_vcg_tax(&problem, self.file.vcg_baseline.unwrap_or_default())?,
            (_, TaxRule::Price) => {
                let p = opt.p_vector();
                (0..problem.agents())
                    .map(|i| p.dot(&(problem.coupling().r_block(i) * problem.block_of(&x, i))))
                    .collect()
            }
            (_, TaxRule::Groves) => exact_groves_tax(&problem, &x)?,
        };
        Ok(SocialChoice::new(opt.x, t))
    }

    pub fn log_header(&self, profile: &[StrategyKind], n: u64) -> LogHeader {
        LogHeader {
            scenario: self.file.clone(),
            n,
            profile: profile.to_vec(),
        }
    }

    /// Writes a run as a JSONL log that `replay_log` can check.
    pub fn write_run_log<W: std::io::Write>(
        &self,
        w: W,
        profile: &[StrategyKind],
        n: u64,
        run: &ScenarioRun,
    ) -> Result<()> {
        write_log(w, &self.log_header(profile, n), &run.transcript)
    }
}

/// Outcome of replaying a transcript log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replay {
    pub choice: SocialChoice,
    pub rounds: usize,
}

/// Rebuilds the followers from the log header, checks every recorded report
/// against them, then re-runs the mechanism and checks that the recorded
/// outcome is reproduced exactly.
pub fn replay_log<R: BufRead>(r: R) -> Result<Replay> {
    let (header, transcript): (LogHeader, Transcript) = read_log(r)?;
    let scenario = Scenario::new(header.scenario)?;
    transcript.validate(scenario.agents())?;
    let recorded = transcript
        .outcome()
        .ok_or_else(|| Error::ReplayMismatch {
            round: transcript.last_round(),
            detail: "log has no final outcome".into(),
        })?;
    if scenario.mechanism() != MechanismKind::Direct {
        let mut followers = scenario.followers(&header.profile)?;
        replay_reports(&transcript, &mut followers, &scenario.topology())?;
    }
    let rerun = scenario.run(&header.profile, header.n)?;
    let same = serde_json::to_string(&rerun.choice)? == serde_json::to_string(&recorded)?;
    if !same || rerun.transcript != transcript {
        return Err(Error::ReplayMismatch {
            round: rerun.transcript.last_round(),
            detail: "re-run does not reproduce the recorded transcript".into(),
        });
    }
    Ok(Replay {
        choice: recorded,
        rounds: transcript.last_round(),
    })
}
