//! Round-based leader/follower harness.
//!
//! Round 0 holds the leader's initial broadcast and the followers' initial
//! outputs. In every later round `k` each follower sees the leader broadcast
//! of round `k − 1` and the round `k − 1` outputs of its declared neighbors,
//! updates its state and reports; the leader then folds the round-`k`
//! reports into its own state and broadcasts. When the stop predicate holds,
//! the round's broadcast is replaced by the social choice.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::SocialChoice;

pub const DEFAULT_ROUND_CAP: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BroadcastPayload {
    Idle,
    /// Dual decomposition: price and nearest feasible point.
    Dual { p: Vec<f64>, x: Vec<f64> },
    /// Initial per-edge duals of the consensus dual mechanism.
    EdgeDuals { p: Vec<f64> },
    /// Averaging step of the linear consensus mechanism.
    StepSize { alpha: f64 },
    /// Final output `(x, t)`.
    Outcome { x: Vec<f64>, t: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderBroadcast {
    pub round: usize,
    pub payload: BroadcastPayload,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeDual {
    pub edge: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportPayload {
    /// `(v_i, x̂_i, v̂_i)`: cost at the broadcast point, proposal, cost at the proposal.
    Dual { v: f64, x_hat: Vec<f64>, v_hat: f64 },
    /// Current estimate, its cost, and the duals of edges this agent owns.
    Consensus { x: f64, v: f64, duals: Vec<EdgeDual> },
}

impl ReportPayload {
    fn first_non_finite(&self) -> Option<&'static str> {
        match self {
            ReportPayload::Dual { v, x_hat, v_hat } => {
                if !v.is_finite() {
                    Some("v")
                } else if !v_hat.is_finite() {
                    Some("v_hat")
                } else if x_hat.iter().any(|x| !x.is_finite()) {
                    Some("x_hat")
                } else {
                    None
                }
            }
            ReportPayload::Consensus { x, v, duals } => {
                if !x.is_finite() {
                    Some("x")
                } else if !v.is_finite() {
                    Some("v")
                } else if duals.iter().any(|d| !d.p.is_finite()) {
                    Some("duals")
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FollowerReport {
    pub agent: usize,
    pub round: usize,
    pub payload: ReportPayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: usize,
    pub reports: Vec<FollowerReport>,
    pub broadcast: LeaderBroadcast,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub rounds: Vec<Round>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Index of the last round.
    pub fn last_round(&self) -> usize {
        self.rounds.last().map_or(0, |r| r.round)
    }

    pub fn final_broadcast(&self) -> Option<&LeaderBroadcast> {
        self.rounds.last().map(|r| &r.broadcast)
    }

    /// The social choice carried by the final broadcast, if the run stopped.
    pub fn outcome(&self) -> Option<SocialChoice> {
        match self.final_broadcast()?.payload {
            BroadcastPayload::Outcome { ref x, ref t } => Some(SocialChoice::new(x.clone(), t.clone())),
            _ => None,
        }
    }

    /// Checks round numbering and the one-report-per-agent rule.
    pub fn validate(&self, agents: usize) -> Result<()> {
        for (k, round) in self.rounds.iter().enumerate() {
            let bad = |detail: String| Error::ReplayMismatch { round: k, detail };
            if round.round != k || round.broadcast.round != k {
                return Err(bad("round numbers are not consecutive from 0".into()));
            }
            let stopped_at_zero = k == 0 && round.reports.is_empty() && self.rounds.len() == 1;
            if !stopped_at_zero && round.reports.len() != agents {
                return Err(bad(format!("{} reports for {agents} agents", round.reports.len())));
            }
            for (i, rep) in round.reports.iter().enumerate() {
                if rep.agent != i || rep.round != k {
                    return Err(bad(format!("report {i} is labelled agent {} round {}", rep.agent, rep.round)));
                }
            }
        }
        Ok(())
    }

    /// One JSON object per round.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for round in &self.rounds {
            serde_json::to_writer(&mut w, round)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut rounds = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rounds.push(serde_json::from_str(&line)?);
        }
        Ok(Transcript { rounds })
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<H> {
    header: H,
}

/// Writes a header line followed by the transcript rounds.
pub fn write_log<W: Write, H: Serialize>(mut w: W, header: &H, transcript: &Transcript) -> Result<()> {
    serde_json::to_writer(&mut w, &HeaderLine { header })?;
    w.write_all(b"\n")?;
    transcript.write_jsonl(w)
}

pub fn read_log<R: BufRead, H: DeserializeOwned>(mut r: R) -> Result<(H, Transcript)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let HeaderLine { header } = serde_json::from_str(first.trim())?;
    Ok((header, Transcript::read_jsonl(r)?))
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct StrategyError(pub String);

/// What follower `i` hears from neighbor `from`: its previous-round output.
#[derive(Clone, Copy, Debug)]
pub struct NeighborMessage<'a> {
    pub from: usize,
    pub payload: &'a ReportPayload,
}

/// A follower program: the state update `G` and output map `H`.
pub trait Strategy: Send {
    /// Initial state and output of round 0.
    fn initialize(&mut self) -> Result<ReportPayload, StrategyError>;

    fn update_state(
        &mut self,
        broadcast: &LeaderBroadcast,
        neighbors: &[NeighborMessage<'_>],
    ) -> Result<(), StrategyError>;

    fn emit_report(&self) -> ReportPayload;
}

/// The master program.
pub trait Leader {
    fn initialize(&mut self) -> BroadcastPayload;

    fn update(&mut self, round: usize, reports: &[FollowerReport]) -> Result<BroadcastPayload>;

    /// Social choice at the current state.
    fn outcome(&self) -> SocialChoice;
}

/// Follower-to-follower links. The leader is always linked to everyone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// No follower-to-follower edges.
    pub fn star(agents: usize) -> Self {
        Topology {
            neighbors: vec![Vec::new(); agents],
        }
    }

    pub fn from_neighbors(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n || j == i {
                    return Err(Error::Config(format!("invalid neighbor {j} of agent {i}")));
                }
                if !neighbors[j].contains(&i) {
                    return Err(Error::Config(format!("link {i}-{j} is not symmetric")));
                }
            }
        }
        Ok(Topology { neighbors })
    }

    pub fn agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Sequential,
    /// Follower updates of a round run on the rayon pool.
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub round_cap: usize,
    pub schedule: Schedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            round_cap: DEFAULT_ROUND_CAP,
            schedule: Schedule::Sequential,
        }
    }
}

pub type Followers = Vec<Box<dyn Strategy>>;

fn checked(agent: usize, round: usize, payload: ReportPayload) -> Result<FollowerReport> {
    if let Some(field) = payload.first_non_finite() {
        return Err(Error::MalformedReport {
            agent,
            round,
            reason: format!("non-finite {field}"),
        });
    }
    Ok(FollowerReport { agent, round, payload })
}

fn step_follower(
    agent: usize,
    round: usize,
    follower: &mut dyn Strategy,
    prev: &Round,
    topology: &Topology,
) -> Result<FollowerReport> {
    let messages: Vec<NeighborMessage<'_>> = topology
        .neighbors(agent)
        .iter()
        .map(|&j| NeighborMessage {
            from: j,
            payload: &prev.reports[j].payload,
        })
        .collect();
    follower
        .update_state(&prev.broadcast, &messages)
        .map_err(|e| Error::Strategy { agent, message: e.0 })?;
    checked(agent, round, follower.emit_report())
}

fn step_all(
    round: usize,
    followers: &mut [Box<dyn Strategy>],
    prev: &Round,
    topology: &Topology,
    schedule: Schedule,
) -> Result<Vec<FollowerReport>> {
    match schedule {
        Schedule::Sequential => followers
            .iter_mut()
            .enumerate()
            .map(|(i, f)| step_follower(i, round, f.as_mut(), prev, topology))
            .collect(),
        Schedule::Parallel => followers
            .par_iter_mut()
            .enumerate()
            .map(|(i, f)| step_follower(i, round, f.as_mut(), prev, topology))
            .collect(),
    }
}

/// Runs the leader and followers until `stop` holds on the leader.
pub fn run_rounds<L, S>(
    leader: &mut L,
    followers: &mut [Box<dyn Strategy>],
    topology: &Topology,
    stop: S,
    config: &RunConfig,
) -> Result<Transcript>
where
    L: Leader + ?Sized,
    S: Fn(&L) -> bool,
{
    if topology.agents() != followers.len() {
        return Err(Error::dims("topology", followers.len(), topology.agents()));
    }
    let mut transcript = Transcript::default();
    let initial = leader.initialize();
    if stop(leader) {
        transcript.rounds.push(final_round(0, Vec::new(), leader));
        return Ok(transcript);
    }

    let mut reports = Vec::with_capacity(followers.len());
    for (i, f) in followers.iter_mut().enumerate() {
        let payload = f
            .initialize()
            .map_err(|e| Error::Strategy { agent: i, message: e.0 })?;
        reports.push(checked(i, 0, payload)?);
    }
    transcript.rounds.push(Round {
        round: 0,
        reports,
        broadcast: LeaderBroadcast {
            round: 0,
            payload: initial,
        },
    });

    for k in 1..=config.round_cap {
        let prev = transcript.rounds.last().expect("round 0 exists");
        let reports = step_all(k, followers, prev, topology, config.schedule)?;
        let payload = leader.update(k, &reports)?;
        if stop(leader) {
            transcript.rounds.push(final_round(k, reports, leader));
            return Ok(transcript);
        }
        transcript.rounds.push(Round {
            round: k,
            reports,
            broadcast: LeaderBroadcast { round: k, payload },
        });
    }
    Err(Error::NonConvergence {
        rounds: config.round_cap,
        transcript: Box::new(transcript),
    })
}

fn final_round<L: Leader + ?Sized>(k: usize, reports: Vec<FollowerReport>, leader: &L) -> Round {
    let SocialChoice { x, t } = leader.outcome();
    Round {
        round: k,
        reports,
        broadcast: LeaderBroadcast {
            round: k,
            payload: BroadcastPayload::Outcome { x, t },
        },
    }
}

/// Feeds the recorded broadcasts and neighbor outputs into fresh followers
/// and checks that every report they emit matches the record bit for bit.
pub fn replay_reports(
    transcript: &Transcript,
    followers: &mut [Box<dyn Strategy>],
    topology: &Topology,
) -> Result<()> {
    let Some(first) = transcript.rounds.first() else {
        return Ok(());
    };
    if first.reports.is_empty() {
        return Ok(());
    }
    let same = |a: &ReportPayload, b: &ReportPayload| -> Result<bool> {
        Ok(serde_json::to_string(a)? == serde_json::to_string(b)?)
    };
    for (i, f) in followers.iter_mut().enumerate() {
        let payload = f
            .initialize()
            .map_err(|e| Error::Strategy { agent: i, message: e.0 })?;
        if !same(&payload, &first.reports[i].payload)? {
            return Err(Error::ReplayMismatch {
                round: 0,
                detail: format!("initial output of agent {i} differs"),
            });
        }
    }
    for pair in transcript.rounds.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        for (i, f) in followers.iter_mut().enumerate() {
            let rep = step_follower(i, cur.round, f.as_mut(), prev, topology)?;
            if !same(&rep.payload, &cur.reports[i].payload)? {
                return Err(Error::ReplayMismatch {
                    round: cur.round,
                    detail: format!("report of agent {i} differs"),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Counts up by the sum of reports, stops at a threshold.
    struct Counter {
        total: f64,
        stop_after: usize,
        rounds: usize,
    }

    impl Leader for Counter {
        fn initialize(&mut self) -> BroadcastPayload {
            BroadcastPayload::Idle
        }

        fn update(&mut self, round: usize, reports: &[FollowerReport]) -> Result<BroadcastPayload> {
            self.rounds = round;
            for r in reports {
                if let ReportPayload::Consensus { x, .. } = r.payload {
                    self.total += x;
                }
            }
            Ok(BroadcastPayload::Idle)
        }

        fn outcome(&self) -> SocialChoice {
            SocialChoice::new(vec![self.total], vec![])
        }
    }

    /// Reports its own value plus the sum of what its neighbors said last round.
    struct Gossip {
        value: f64,
        heard: f64,
    }

    impl Strategy for Gossip {
        fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
            Ok(self.emit_report())
        }

        fn update_state(
            &mut self,
            _: &LeaderBroadcast,
            neighbors: &[NeighborMessage<'_>],
        ) -> Result<(), StrategyError> {
            self.heard = neighbors
                .iter()
                .map(|m| match m.payload {
                    ReportPayload::Consensus { x, .. } => *x,
                    _ => 0.0,
                })
                .sum();
            Ok(())
        }

        fn emit_report(&self) -> ReportPayload {
            ReportPayload::Consensus {
                x: self.value + 0.5 * self.heard,
                v: 0.0,
                duals: vec![],
            }
        }
    }

    fn gossipers() -> Followers {
        (0..3)
            .map(|i| Box::new(Gossip { value: i as f64, heard: 0.0 }) as Box<dyn Strategy>)
            .collect()
    }

    fn path() -> Topology {
        Topology::from_neighbors(vec![vec![1], vec![0, 2], vec![1]]).unwrap()
    }

    #[test]
    fn stop_at_round_zero_gives_single_broadcast() {
        let mut leader = Counter { total: 0.0, stop_after: 0, rounds: 0 };
        let t = run_rounds(&mut leader, &mut gossipers(), &path(), |_| true, &RunConfig::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.rounds[0].reports.is_empty());
        assert!(t.outcome().is_some());
    }

    #[test]
    fn neighbor_messages_are_one_round_late() {
        let mut leader = Counter { total: 0.0, stop_after: 2, rounds: 0 };
        let t = run_rounds(
            &mut leader,
            &mut gossipers(),
            &path(),
            |l| l.rounds >= l.stop_after,
            &RunConfig::default(),
        )
        .unwrap();
        t.validate(3).unwrap();
        let xs = |k: usize| -> Vec<f64> {
            t.rounds[k]
                .reports
                .iter()
                .map(|r| match r.payload {
                    ReportPayload::Consensus { x, .. } => x,
                    _ => unreachable!(),
                })
                .collect()
        };
        assert_eq!(xs(0), vec![0.0, 1.0, 2.0]);
        // round 1 hears round 0
        assert_eq!(xs(1), vec![0.5, 2.0, 2.5]);
        assert_eq!(xs(2), vec![1.0, 2.5, 3.0]);
        assert_eq!(t.outcome().unwrap().x, vec![0.5 + 2.0 + 2.5 + 1.0 + 2.5 + 3.0]);
    }

    #[test]
    fn round_cap_returns_partial_transcript() {
        let mut leader = Counter { total: 0.0, stop_after: usize::MAX, rounds: 0 };
        let cfg = RunConfig { round_cap: 5, ..RunConfig::default() };
        match run_rounds(&mut leader, &mut gossipers(), &path(), |l| l.rounds >= l.stop_after, &cfg) {
            Err(Error::NonConvergence { rounds, transcript }) => {
                assert_eq!(rounds, 5);
                assert_eq!(transcript.len(), 6);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn nan_report_is_rejected_with_agent() {
        struct Broken;
        impl Strategy for Broken {
            fn initialize(&mut self) -> Result<ReportPayload, StrategyError> {
                Ok(ReportPayload::Consensus { x: 0.0, v: 0.0, duals: vec![] })
            }
            fn update_state(&mut self, _: &LeaderBroadcast, _: &[NeighborMessage<'_>]) -> Result<(), StrategyError> {
                Ok(())
            }
            fn emit_report(&self) -> ReportPayload {
                ReportPayload::Dual { v: 0.0, x_hat: vec![f64::NAN], v_hat: 0.0 }
            }
        }
        let mut followers = gossipers();
        followers[1] = Box::new(Broken);
        let mut leader = Counter { total: 0.0, stop_after: 3, rounds: 0 };
        let err = run_rounds(&mut leader, &mut followers, &path(), |l| l.rounds >= 3, &RunConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::MalformedReport { agent: 1, round: 1, .. }));
    }

    #[test]
    fn parallel_schedule_matches_sequential_and_replays() {
        let run = |schedule| {
            let mut leader = Counter { total: 0.0, stop_after: 20, rounds: 0 };
            run_rounds(
                &mut leader,
                &mut gossipers(),
                &path(),
                |l| l.rounds >= l.stop_after,
                &RunConfig { schedule, ..RunConfig::default() },
            )
            .unwrap()
        };
        let seq = run(Schedule::Sequential);
        let par = run(Schedule::Parallel);
        assert_eq!(seq.to_jsonl(), par.to_jsonl());
        replay_reports(&seq, &mut gossipers(), &path()).unwrap();

        let parsed = Transcript::read_jsonl(seq.to_jsonl().as_bytes()).unwrap();
        assert_eq!(parsed, seq);
    }

    #[test]
    fn replay_detects_tampering() {
        let mut leader = Counter { total: 0.0, stop_after: 4, rounds: 0 };
        let mut t = run_rounds(&mut leader, &mut gossipers(), &path(), |l| l.rounds >= 4, &RunConfig::default())
            .unwrap();
        t.rounds[2].reports[1].payload = ReportPayload::Consensus { x: 9.0, v: 0.0, duals: vec![] };
        let err = replay_reports(&t, &mut gossipers(), &path()).unwrap_err();
        assert!(matches!(err, Error::ReplayMismatch { round: 2, .. }));
    }

    #[test]
    fn asymmetric_topology_is_rejected() {
        assert!(Topology::from_neighbors(vec![vec![1], vec![]]).is_err());
    }
}
