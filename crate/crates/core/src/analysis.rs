//! Net-cost accounting and empirical asymptotic incentive-compatibility sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AllocationProblem, SocialChoice};
use crate::scenario::Scenario;
use crate::strategies::StrategyKind;

/// Slack on every inequality check.
pub const EPS_NUM: f64 = 1e-9;

/// Default accuracy required of the outcome at the largest `n` of a sweep.
pub const DEFAULT_DELTA1: f64 = 1e-2;

/// `v_i(x_i; θ_i) + t_i` at the true type.
pub fn net_cost(outcome: &SocialChoice, agent: usize, truth: &AllocationProblem) -> Result<f64> {
    let x = outcome.x_vector();
    if x.len() != truth.dim() || outcome.t.len() != truth.agents() {
        return Err(Error::dims("outcome", truth.dim(), x.len()));
    }
    Ok(truth.cost(agent).evaluate(&truth.block_of(&x, agent).into_owned())? + outcome.t[agent])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmStatus {
    Terminated,
    HonestNonTerminating,
    DeviantNonTerminating,
}

/// Both arms of one deviation experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationResult {
    pub n: u64,
    pub honest: Option<SocialChoice>,
    pub deviant: Option<SocialChoice>,
    pub u_honest: Option<f64>,
    pub u_deviant: Option<f64>,
    pub status: ArmStatus,
}

impl DeviationResult {
    /// `u_honest − u_deviant`; positive means the deviation pays.
    pub fn gain(&self) -> Option<f64> {
        Some(self.u_honest? - self.u_deviant?)
    }
}

fn arm(scenario: &Scenario, profile: &[StrategyKind], n: u64) -> Result<Option<SocialChoice>> {
    match scenario.run(profile, n) {
        Ok(run) => Ok(Some(run.choice)),
        Err(e) if e.is_non_convergence() => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs the all-honest arm and the arm where only `agent` deviates.
pub fn deviation_experiment(
    scenario: &Scenario,
    agent: usize,
    deviant: &StrategyKind,
    n: u64,
) -> Result<DeviationResult> {
    let truth = scenario.problem()?;
    let deviant_profile = scenario.deviant_profile(agent, deviant.clone())?;
    let honest = arm(scenario, &scenario.honest_profile(), n)?;
    let deviant = arm(scenario, &deviant_profile, n)?;
    let u = |c: &Option<SocialChoice>| c.as_ref().map(|c| net_cost(c, agent, &truth)).transpose();
    let status = match (&honest, &deviant) {
        (None, _) => ArmStatus::HonestNonTerminating,
        (_, None) => ArmStatus::DeviantNonTerminating,
        _ => ArmStatus::Terminated,
    };
    Ok(DeviationResult {
        n,
        u_honest: u(&honest)?,
        u_deviant: u(&deviant)?,
        honest,
        deviant,
        status,
    })
}

/// `u_i(honest) − u_i(deviant)`. Errors if either arm does not terminate.
pub fn deviation_gain(scenario: &Scenario, agent: usize, deviant: &StrategyKind, n: u64) -> Result<f64> {
    let r = deviation_experiment(scenario, agent, deviant, n)?;
    r.gain().ok_or_else(|| {
        Error::Config(format!("gain undefined at n = {n}: {:?}", r.status))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ICRow {
    pub n: u64,
    pub u_honest: Option<f64>,
    pub u_deviant: Option<f64>,
    pub gain: Option<f64>,
    pub bound: f64,
    /// Max-norm distance of the honest outcome from the target social choice.
    pub dist: Option<f64>,
    pub status: ArmStatus,
}

impl ICRow {
    pub fn within_bound(&self) -> bool {
        self.gain.is_none_or(|g| g <= self.bound + EPS_NUM)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ICReport {
    pub scenario: String,
    pub agent: usize,
    pub deviant: StrategyKind,
    pub delta1: f64,
    pub rows: Vec<ICRow>,
    pub pass: bool,
}

impl ICReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Largest gain among rows where both arms terminated.
    pub fn max_gain(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.gain).reduce(f64::max)
    }
}

/// Sweeps the accuracy parameter. Passes iff every defined gain is at most
/// `1/n + ε`, the honest arm always terminates, and the honest outcome is
/// within `delta1` of the target at the largest `n`.
pub fn asymptotic_ic_sweep(
    scenario: &Scenario,
    agent: usize,
    deviant: &StrategyKind,
    n_list: &[u64],
    delta1: f64,
) -> Result<ICReport> {
    if n_list.is_empty() || n_list.contains(&0) || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("n list must be increasing and positive".into()));
    }
    let target = scenario.target()?;
    let results = n_list
        .par_iter()
        .map(|&n| deviation_experiment(scenario, agent, deviant, n))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ICRow> = results
        .into_iter()
        .map(|r| ICRow {
            n: r.n,
            u_honest: r.u_honest,
            u_deviant: r.u_deviant,
            gain: r.gain(),
            bound: 1.0 / r.n as f64,
            dist: r.honest.as_ref().map(|c| c.distance(&target)),
            status: r.status,
        })
        .collect();
    let honest_ok = rows.iter().all(|r| r.status != ArmStatus::HonestNonTerminating);
    let close = rows.last().and_then(|r| r.dist).is_some_and(|d| d < delta1);
    let pass = honest_ok && close && rows.iter().all(ICRow::within_bound);
    Ok(ICReport {
        scenario: scenario.name().to_string(),
        agent,
        deviant: deviant.clone(),
        delta1,
        rows,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::bundled;
    use approx::assert_relative_eq;

    #[test]
    fn net_cost_examples() {
        let s = bundled("example1").unwrap();
        let truth = s.problem().unwrap();
        let groves = SocialChoice::new(vec![0.5, 0.5], vec![0.125, 0.125]);
        assert_relative_eq!(net_cost(&groves, 0, &truth).unwrap(), 0.25);
        let price = SocialChoice::new(vec![0.5, 0.5], vec![-0.25, -0.25]);
        assert_relative_eq!(net_cost(&price, 0, &truth).unwrap(), -0.125);
        let stackelberg = SocialChoice::new(vec![1.0 / 3.0, 2.0 / 3.0], vec![-2.0 / 9.0, -4.0 / 9.0]);
        assert_relative_eq!(net_cost(&stackelberg, 0, &truth).unwrap(), -1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn honest_deviant_has_zero_gain() {
        let s = bundled("example1").unwrap();
        assert_eq!(deviation_gain(&s, 0, &StrategyKind::Honest, 100).unwrap(), 0.0);
    }

    #[test]
    fn identical_misreport_has_zero_gain() {
        let s = bundled("path3").unwrap();
        let same = StrategyKind::Misreport { theta: vec![1.0] };
        assert_eq!(deviation_gain(&s, 1, &same, 100).unwrap(), 0.0);
    }

    #[test]
    fn sweep_rows_are_sorted_and_csv_has_columns() {
        let s = bundled("example1").unwrap();
        let dev = StrategyKind::Misreport { theta: vec![0.5] };
        let report = asymptotic_ic_sweep(&s, 0, &dev, &[10, 100], DEFAULT_DELTA1).unwrap();
        assert_eq!(report.rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![10, 100]);
        let csv = report.to_csv_string().unwrap();
        assert!(csv.starts_with("n,u_honest,u_deviant,gain,bound,dist,status\n"), "{csv}");
    }

    #[test]
    fn sweep_rejects_unsorted_n() {
        let s = bundled("example1").unwrap();
        assert!(asymptotic_ic_sweep(&s, 0, &StrategyKind::Honest, &[100, 10], DEFAULT_DELTA1).is_err());
    }
}
