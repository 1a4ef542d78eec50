//! Scenario documents: events, market, agents, solver settings and the
//! experiment to run, as JSON.
//!
//! Parsing keeps the JSON reader's line and column; semantic validation
//! reports the offending field as a path such as `agents[1].belief.cpts.A2[0]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, EndowmentTerm, SeparableEndowment, Utility};
use crate::bayesnet::{BayesNet, Dag};
use crate::equilibrium::SolverOptions;
use crate::error::{Error, Result};
use crate::joint::{EventSpace, JointDistribution};
use crate::protocol::ProtocolOptions;
use crate::securities::{Market, Security};

pub const FORMAT_VERSION: u32 = 1;

fn format_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "format_version")]
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub events: EventsSpec,
    pub market: MarketSpec,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub protocol: ProtocolOptions,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

/// Either a count (labels `A1..AM`) or explicit labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventsSpec {
    Count(usize),
    Labels(Vec<String>),
}

/// Parent lists keyed by child label; events without an entry are roots.
pub type ParentsSpec = BTreeMap<String, Vec<String>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketSpec {
    Structured { parents: ParentsSpec },
    Complete,
    Base,
    Empty,
    Securities { securities: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub belief: BeliefSpec,
    pub utility: Utility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endowment: Option<EndowmentSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeliefSpec {
    /// CPT rows per event, indexed by parent assignment with the
    /// lowest-index parent least significant.
    Bayesnet {
        #[serde(default)]
        parents: ParentsSpec,
        cpts: BTreeMap<String, Vec<f64>>,
    },
    Joint { probs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndowmentSpec {
    States { values: Vec<f64> },
    Separable { terms: Vec<TermSpec> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub events: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Exponential,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndowmentMode {
    Zero,
    /// Sums of per-family terms.
    Separable,
    /// Independent per-state draws.
    Full,
}

fn default_pareto_trials() -> usize {
    10_000
}
fn default_pareto_step() -> f64 {
    1e-3
}
fn default_agents() -> usize {
    2
}
fn default_arb_tol() -> f64 {
    1e-9
}
fn default_found_gap() -> f64 {
    1e-3
}
fn default_true() -> bool {
    true
}
fn default_replay_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    /// Solve and check clearing and first-order conditions.
    Equilibrium,
    /// Also require consensus, benchmark agreement and no Pareto improvement.
    OperationalCompleteness {
        #[serde(default = "default_pareto_trials")]
        pareto_trials: usize,
        #[serde(default = "default_pareto_step")]
        pareto_step: f64,
        #[serde(default)]
        seed: u64,
    },
    Arbitrage {
        #[serde(default)]
        quotes: Vec<String>,
        #[serde(default = "default_arb_tol")]
        tol: f64,
    },
    Protocol,
    /// Random populations on the scenario's structure, maximizing the
    /// equilibrium consensus gap.
    Search {
        utility: UtilityKind,
        #[serde(default = "default_agents")]
        agents: usize,
        endowment: EndowmentMode,
        #[serde(default)]
        trials: usize,
        #[serde(default)]
        seed: u64,
        /// Gap that counts as a counterexample.
        #[serde(default = "default_found_gap")]
        found_gap: f64,
        /// Stop after the first chunk of trials that finds one.
        #[serde(default = "default_true")]
        stop_early: bool,
        /// Whether a counterexample is expected; unchecked when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expect_found: Option<bool>,
    },
    /// Re-solve a recorded instance and compare its consensus gap.
    Replay {
        expected_gap: f64,
        #[serde(default = "default_replay_tol")]
        tol: f64,
    },
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec::OperationalCompleteness {
            pareto_trials: default_pareto_trials(),
            pareto_step: default_pareto_step(),
            seed: 0,
        }
    }
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub source: ScenarioFile,
    pub space: EventSpace,
    pub market: Market,
    pub agents: Vec<Agent>,
}

impl Scenario {
    pub fn solver(&self) -> &SolverOptions {
        &self.source.solver
    }

    pub fn protocol(&self) -> &ProtocolOptions {
        &self.source.protocol
    }

    pub fn experiment(&self) -> &ExperimentSpec {
        &self.source.experiment
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.source).expect("scenario serializes")
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    validate(file).map_err(|e| match e {
        Error::Validation { path, message, .. } => Error::Validation {
            line: locate(text, &path),
            path,
            message,
        },
        other => other,
    })
}

/// Best-effort source line of a dotted/indexed path such as `agents[1].belief.cpts.A1[0]`.
///
/// Keys are searched in document order; an index before a key skips that many
/// earlier occurrences of the key. Trailing indices into numeric arrays count commas.
fn locate(text: &str, path: &str) -> Option<usize> {
    let mut pos = 0usize;
    let mut skip = 0usize;
    let mut last_index = None;
    for seg in path.split('.') {
        let (key, indices) = match seg.find('[') {
            Some(i) => (&seg[..i], &seg[i..]),
            None => (seg, ""),
        };
        if !key.is_empty() {
            let needle = format!("\"{key}\"");
            for _ in 0..=skip {
                pos += text[pos..].find(&needle)? + needle.len();
            }
        }
        let idx: Vec<usize> = indices
            .split(['[', ']'])
            .filter_map(|t| t.parse().ok())
            .collect();
        skip = idx.first().copied().unwrap_or(0);
        last_index = idx.last().copied();
    }
    if let Some(k) = last_index {
        // step into the array and past k elements at depth one
        let rest = &text[pos..];
        let open = rest.find('[')?;
        let mut depth = 0i32;
        let mut seen = 0usize;
        let mut at = pos + open + 1;
        for (i, c) in rest[open..].char_indices() {
            match c {
                '[' | '{' => depth += 1,
                ']' | '}' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                ',' if depth == 1 => {
                    seen += 1;
                    if seen == k {
                        at = pos + open + i + 1;
                        break;
                    }
                }
                _ => {}
            }
        }
        if k > 0 && seen < k {
            at = pos;
        }
        let lead = text[at..].len() - text[at..].trim_start().len();
        pos = at + lead;
    }
    Some(text[..pos.min(text.len())].matches('\n').count() + 1)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn event_index(space: &EventSpace, label: &str, path: &str) -> Result<usize> {
    space
        .index_of(label)
        .ok_or_else(|| Error::validation(path, format!("unknown event `{label}`")))
}

pub fn parse_parents(space: &EventSpace, spec: &ParentsSpec, path: &str) -> Result<Dag> {
    let mut parents = vec![Vec::new(); space.len()];
    for (child, ps) in spec {
        let here = format!("{path}.{child}");
        let k = event_index(space, child, &here)?;
        for (i, p) in ps.iter().enumerate() {
            let j = event_index(space, p, &format!("{here}[{i}]"))?;
            if j >= k {
                return Err(Error::validation(
                    format!("{here}[{i}]"),
                    format!("parent `{p}` must come before `{child}` in event order"),
                ));
            }
            if parents[k].contains(&j) {
                return Err(Error::validation(format!("{here}[{i}]"), format!("duplicate parent `{p}`")));
            }
            parents[k].push(j);
        }
    }
    Dag::new(parents).map_err(|e| Error::validation(path, e.to_string()))
}

fn check_probability(p: f64, path: String) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::validation(path, format!("probability {p} is outside [0, 1]")))
    }
}

fn parse_belief(space: &EventSpace, spec: &BeliefSpec, path: &str) -> Result<JointDistribution> {
    match spec {
        BeliefSpec::Bayesnet { parents, cpts } => {
            let dag = parse_parents(space, parents, &format!("{path}.parents"))?;
            for label in cpts.keys() {
                event_index(space, label, &format!("{path}.cpts.{label}"))?;
            }
            let mut rows = Vec::with_capacity(space.len());
            for k in 0..space.len() {
                let label = space.label(k);
                let here = format!("{path}.cpts.{label}");
                let row = cpts
                    .get(label)
                    .ok_or_else(|| Error::validation(&here, "missing CPT"))?;
                let want = 1usize << dag.in_degree(k);
                if row.len() != want {
                    return Err(Error::validation(
                        here,
                        format!("expected {want} rows for {} parents, got {}", dag.in_degree(k), row.len()),
                    ));
                }
                for (i, &p) in row.iter().enumerate() {
                    check_probability(p, format!("{here}[{i}]"))?;
                }
                rows.push(row.clone());
            }
            Ok(BayesNet::new(dag, rows)
                .map_err(|e| Error::validation(path, e.to_string()))?
                .joint())
        }
        BeliefSpec::Joint { probs } => {
            let here = format!("{path}.probs");
            if probs.len() != space.num_states() {
                return Err(Error::validation(
                    here,
                    format!("expected {} entries, got {}", space.num_states(), probs.len()),
                ));
            }
            for (i, &p) in probs.iter().enumerate() {
                check_probability(p, format!("{here}[{i}]"))?;
            }
            JointDistribution::new(space.len(), probs.clone()).map_err(|e| Error::validation(here, e.to_string()))
        }
    }
}

fn parse_endowment(space: &EventSpace, spec: Option<&EndowmentSpec>, path: &str) -> Result<Vec<f64>> {
    match spec {
        None => Ok(vec![0.0; space.num_states()]),
        Some(EndowmentSpec::States { values }) => {
            if values.len() != space.num_states() {
                return Err(Error::validation(
                    format!("{path}.values"),
                    format!("expected {} entries, got {}", space.num_states(), values.len()),
                ));
            }
            Ok(values.clone())
        }
        Some(EndowmentSpec::Separable { terms }) => {
            let mut out = Vec::with_capacity(terms.len());
            for (t, term) in terms.iter().enumerate() {
                let here = format!("{path}.terms[{t}]");
                let events = term
                    .events
                    .iter()
                    .enumerate()
                    .map(|(i, l)| event_index(space, l, &format!("{here}.events[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                let sorted = events.windows(2).all(|w| w[0] < w[1]);
                if !sorted {
                    return Err(Error::validation(
                        format!("{here}.events"),
                        "events must be listed once each in event order",
                    ));
                }
                if term.values.len() != 1 << events.len() {
                    return Err(Error::validation(
                        format!("{here}.values"),
                        format!("expected {} values, got {}", 1usize << events.len(), term.values.len()),
                    ));
                }
                out.push(EndowmentTerm {
                    events,
                    values: term.values.clone(),
                });
            }
            SeparableEndowment { terms: out }.to_state_vector(space.len())
        }
    }
}

pub fn parse_market(space: &EventSpace, spec: &MarketSpec) -> Result<Market> {
    match spec {
        MarketSpec::Structured { parents } => {
            let dag = parse_parents(space, parents, "market.parents")?;
            Market::structured(space.clone(), dag).map_err(|e| Error::validation("market", e.to_string()))
        }
        MarketSpec::Complete => Ok(Market::complete(space.clone())),
        MarketSpec::Base => Ok(Market::base(space.clone())),
        MarketSpec::Empty => Ok(Market::empty(space.clone())),
        MarketSpec::Securities { securities } => {
            let secs = securities
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    Security::parse(s, space).map_err(|e| Error::validation(format!("market.securities[{i}]"), e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            Market::new(space.clone(), secs).map_err(|e| Error::validation("market.securities", e.to_string()))
        }
    }
}

fn check_positive(v: f64, path: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(path, format!("{v} must be positive")))
    }
}

pub fn validate(file: ScenarioFile) -> Result<Scenario> {
    if file.format_version != FORMAT_VERSION {
        return Err(Error::validation(
            "format_version",
            format!("unsupported version {} (expected {FORMAT_VERSION})", file.format_version),
        ));
    }
    let space = match &file.events {
        EventsSpec::Count(m) => EventSpace::with_count(*m),
        EventsSpec::Labels(l) => EventSpace::new(l.clone()),
    }
    .map_err(|e| Error::validation("events", e.to_string()))?;
    let market = parse_market(&space, &file.market)?;

    let mut agents = Vec::with_capacity(file.agents.len());
    for (i, a) in file.agents.iter().enumerate() {
        let path = format!("agents[{i}]");
        if file.agents[..i].iter().any(|b| b.id == a.id) {
            return Err(Error::validation(format!("{path}.id"), format!("duplicate agent id `{}`", a.id)));
        }
        let belief = parse_belief(&space, &a.belief, &format!("{path}.belief"))?;
        let endowment = parse_endowment(&space, a.endowment.as_ref(), &format!("{path}.endowment"))?;
        let agent = Agent::with_endowment(a.id.clone(), belief, a.utility, endowment).map_err(|e| match e {
            Error::InfeasibleWealth { .. } => Error::validation(format!("{path}.endowment"), e.to_string()),
            other => Error::validation(format!("{path}.utility"), other.to_string()),
        })?;
        agents.push(agent);
    }

    let s = &file.solver;
    check_positive(s.clear_tol, "solver.clear_tol")?;
    check_positive(s.foc_tol, "solver.foc_tol")?;
    check_positive(s.oc_tol, "solver.oc_tol")?;
    check_positive(file.protocol.demand_eps, "protocol.demand_eps")?;

    match &file.experiment {
        ExperimentSpec::Search { agents: n, .. } => {
            let Some(dag) = market.structure() else {
                return Err(Error::validation("market", "search needs a structured market"));
            };
            if *n < 2 {
                return Err(Error::validation("experiment.agents", "search needs at least two agents"));
            }
            if !dag.is_decomposable() {
                return Err(Error::validation("market.parents", "search needs a decomposable structure"));
            }
        }
        ExperimentSpec::Arbitrage { quotes, .. } => {
            if market.structure().is_none() {
                return Err(Error::validation("market", "arbitrage needs a structured market"));
            }
            for (i, q) in quotes.iter().enumerate() {
                crate::arbitrage::Quote::parse(q, &space)
                    .map_err(|e| Error::validation(format!("experiment.quotes[{i}]"), e.to_string()))?;
            }
            if agents.is_empty() {
                return Err(Error::validation("agents", "at least one agent is required"));
            }
        }
        ExperimentSpec::OperationalCompleteness { pareto_step, .. } => {
            check_positive(*pareto_step, "experiment.pareto_step")?;
            if agents.is_empty() {
                return Err(Error::validation("agents", "at least one agent is required"));
            }
        }
        _ => {
            if agents.is_empty() {
                return Err(Error::validation("agents", "at least one agent is required"));
            }
        }
    }
    if !matches!(file.experiment, ExperimentSpec::Search { .. }) {
        if let Some((i, a)) = agents.iter().enumerate().find(|(_, a)| !a.utility.is_strictly_risk_averse()) {
            return Err(Error::validation(
                format!("agents[{i}].utility"),
                format!("agent `{}` is risk neutral; markets need strictly risk-averse agents", a.id),
            ));
        }
    }

    Ok(Scenario {
        source: file,
        space,
        market,
        agents,
    })
}

/// Scenario text for a BN-authored agent.
pub fn bayesnet_spec(space: &EventSpace, bn: &BayesNet) -> BeliefSpec {
    BeliefSpec::Bayesnet {
        parents: parents_spec(space, bn.dag()),
        cpts: (0..space.len())
            .map(|k| (space.label(k).to_string(), bn.cpt(k).to_vec()))
            .collect(),
    }
}

pub fn parents_spec(space: &EventSpace, dag: &Dag) -> ParentsSpec {
    (0..space.len())
        .filter(|&k| dag.in_degree(k) > 0)
        .map(|k| {
            (
                space.label(k).to_string(),
                dag.parents(k).iter().map(|&j| space.label(j).to_string()).collect(),
            )
        })
        .collect()
}
