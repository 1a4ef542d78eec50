//! Randomized search for structured markets that fail to reach
//! risk-neutral consensus.
//!
//! Each trial draws a population from its own random stream, so a trial's
//! scenario depends only on the seed and the trial index. Trials run in
//! fixed-size chunks in parallel; results are reduced in trial order.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::Utility;
use crate::bayesnet::Dag;
use crate::equilibrium::{self, consensus_gap, SolverOptions};
use crate::error::Result;
use crate::joint::EventSpace;
use crate::sampling;
use crate::scenario::{
    self, AgentSpec, EndowmentMode, EndowmentSpec, EventsSpec, ExperimentSpec, MarketSpec, ScenarioFile, TermSpec,
    UtilityKind,
};

const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub utility: UtilityKind,
    pub agents: usize,
    pub endowment: EndowmentMode,
    pub trials: usize,
    pub seed: u64,
    pub found_gap: f64,
    pub stop_early: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_gap: f64,
    pub best_trial: Option<usize>,
    pub trials_run: usize,
    /// Trials whose equilibrium solve failed.
    pub failures: usize,
    pub found: bool,
    /// Replayable scenario of the best trial.
    pub scenario: Option<ScenarioFile>,
}

/// The population drawn for `trial`, as a replayable scenario whose
/// experiment is left for the caller to set.
pub fn trial_scenario(space: &EventSpace, dag: &Dag, cfg: &SearchConfig, solver: &SolverOptions, trial: usize) -> ScenarioFile {
    let mut rng = sampling::trial_rng(cfg.seed, trial as u64);
    let m = space.len();
    let agents = (0..cfg.agents)
        .map(|i| {
            let bn = sampling::random_bayesnet(dag, &mut rng);
            let (endowment, lowest) = match cfg.endowment {
                EndowmentMode::Zero => (None, 0.0),
                EndowmentMode::Separable => {
                    let e = sampling::separable_endowment(dag, &mut rng);
                    let lowest = e
                        .to_state_vector(m)
                        .expect("terms fit")
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    let terms = e
                        .terms
                        .into_iter()
                        .map(|t| TermSpec {
                            events: t.events.iter().map(|&j| space.label(j).to_string()).collect(),
                            values: t.values,
                        })
                        .collect();
                    (Some(EndowmentSpec::Separable { terms }), lowest)
                }
                EndowmentMode::Full => {
                    let values = sampling::full_endowment(m, &mut rng);
                    let lowest = values.iter().copied().fold(f64::INFINITY, f64::min);
                    (Some(EndowmentSpec::States { values }), lowest)
                }
            };
            let utility = match cfg.utility {
                UtilityKind::Exponential => Utility::Exponential {
                    c: rng.random_range(0.5..=2.0),
                },
                // keep W0 + endowment strictly positive
                UtilityKind::Log => Utility::Log {
                    base_wealth: (-lowest).max(0.0) + rng.random_range(0.05..=1.0),
                },
            };
            AgentSpec {
                id: format!("agent{}", i + 1),
                belief: scenario::bayesnet_spec(space, &bn),
                utility,
                endowment,
            }
        })
        .collect();
    ScenarioFile {
        format_version: scenario::FORMAT_VERSION,
        name: Some(format!("search seed {} trial {trial}", cfg.seed)),
        events: EventsSpec::Labels(space.labels().to_vec()),
        market: MarketSpec::Structured {
            parents: scenario::parents_spec(space, dag),
        },
        agents,
        solver: solver.clone(),
        protocol: Default::default(),
        experiment: ExperimentSpec::Equilibrium,
    }
}

/// Consensus gap of the structured-market equilibrium of a scenario.
pub fn scenario_gap(file: &ScenarioFile) -> Result<f64> {
    let s = scenario::validate(file.clone())?;
    let r = equilibrium::solve(&s.agents, &s.market, s.solver())?;
    Ok(consensus_gap(&r).max_gap)
}

pub fn counterexample_search(space: &EventSpace, dag: &Dag, cfg: &SearchConfig, solver: &SolverOptions) -> SearchOutcome {
    let mut out = SearchOutcome {
        best_gap: 0.0,
        best_trial: None,
        trials_run: 0,
        failures: 0,
        found: false,
        scenario: None,
    };
    let mut start = 0;
    while start < cfg.trials {
        let end = (start + CHUNK).min(cfg.trials);
        let gaps: Vec<Option<f64>> = (start..end)
            .into_par_iter()
            .map(|t| scenario_gap(&trial_scenario(space, dag, cfg, solver, t)).ok())
            .collect();
        for (t, g) in (start..end).zip(gaps) {
            match g {
                Some(g) if g > out.best_gap || out.best_trial.is_none() => {
                    out.best_gap = g;
                    out.best_trial = Some(t);
                }
                Some(_) => {}
                None => out.failures += 1,
            }
        }
        out.trials_run = end;
        start = end;
        if cfg.stop_early && out.best_gap > cfg.found_gap {
            break;
        }
    }
    out.found = out.best_gap > cfg.found_gap;
    if let Some(t) = out.best_trial {
        let mut file = trial_scenario(space, dag, cfg, solver, t);
        file.experiment = ExperimentSpec::Replay {
            expected_gap: out.best_gap,
            tol: 1e-9,
        };
        out.scenario = Some(file);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(utility: UtilityKind, endowment: EndowmentMode, trials: usize) -> SearchConfig {
        SearchConfig {
            utility,
            agents: 2,
            endowment,
            trials,
            seed: 11,
            found_gap: 1e-3,
            stop_early: true,
        }
    }

    #[test]
    fn zero_trials_finds_nothing() {
        let sp = EventSpace::with_count(3).unwrap();
        let o = counterexample_search(&sp, &Dag::chain(3), &cfg(UtilityKind::Log, EndowmentMode::Full, 0), &SolverOptions::default());
        assert_eq!(o.best_gap, 0.0);
        assert!(!o.found);
        assert!(o.scenario.is_none());
    }

    #[test]
    fn cara_separable_stays_in_consensus() {
        let sp = EventSpace::with_count(3).unwrap();
        let o = counterexample_search(
            &sp,
            &Dag::chain(3),
            &cfg(UtilityKind::Exponential, EndowmentMode::Separable, 16),
            &SolverOptions::default(),
        );
        assert_eq!(o.failures, 0);
        assert!(o.best_gap < 1e-6, "{}", o.best_gap);
    }

    #[test]
    fn trial_scenarios_are_reproducible() {
        let sp = EventSpace::with_count(3).unwrap();
        let c = cfg(UtilityKind::Log, EndowmentMode::Separable, 1);
        let a = trial_scenario(&sp, &Dag::chain(3), &c, &SolverOptions::default(), 5);
        let b = trial_scenario(&sp, &Dag::chain(3), &c, &SolverOptions::default(), 5);
        assert_eq!(a, b);
        assert!(scenario::validate(a).is_ok());
    }
}
