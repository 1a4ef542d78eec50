//! Experiment drivers and run reports.
//!
//! Every check in a report carries the measured value, its tolerance and
//! the relation between them, so a report can be audited without rerunning.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agents::{self, Agent, Utility};
use crate::arbitrage::{self, ArbitrageKind, ArbitrageReport, Quote};
use crate::equilibrium::{self, consensus_gap, EquilibriumResult, SolverOptions};
use crate::error::{Error, Result};
use crate::joint::{EventExpr, EventSpace, WorldState};
use crate::protocol::{self, RoundRecord};
use crate::scenario::{ExperimentSpec, Scenario, ScenarioFile};
use crate::search::{self, SearchConfig, SearchOutcome};
use crate::securities::Market;

pub const REPORT_VERSION: u32 = 1;

/// Tolerance for the price/risk-neutral-conditional identity.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Tolerance for zero-sum settlement.
pub const ZERO_SUM_TOL: f64 = 1e-12;
/// Slack for enumerated hedge profits.
pub const HEDGE_TOL: f64 = 1e-10;
/// Price tolerance for quotes when the scenario sets none.
pub const DEFAULT_ARB_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Passes when `measured <= tolerance`.
    AtMost,
    /// Passes when `measured > tolerance`.
    Exceeds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Numerical correctness of the solve; always decides the outcome.
    Invariant,
    /// A property of the scenario (consensus, completeness); decides the
    /// outcome only in strict mode.
    Claim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub severity: Severity,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            relation: Relation::AtMost,
            severity: Severity::Invariant,
            passed: measured <= tolerance,
        }
    }

    pub fn exceeds(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            relation: Relation::Exceeds,
            severity: Severity::Invariant,
            passed: measured > tolerance,
        }
    }

    pub fn claim(mut self) -> Self {
        self.severity = Severity::Claim;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentHoldings {
    pub id: String,
    pub holdings: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSection {
    pub securities: Vec<String>,
    pub prices: Vec<f64>,
    pub allocations: Vec<AgentHoldings>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSection {
    pub max_gap: f64,
    pub agents: Option<(String, String)>,
    pub state: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSection {
    pub is_oc: bool,
    pub securities: usize,
    pub benchmark_securities: usize,
    pub consensus_gap: f64,
    pub benchmark_consensus_gap: f64,
    pub wealth_gap: f64,
    pub wealth_gap_applicable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSection {
    pub rounds: usize,
    pub converged: bool,
    pub terminal_securities: Vec<String>,
    pub frozen: Vec<String>,
    pub history: Vec<RoundRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSection {
    pub config: SearchConfig,
    pub outcome: SearchOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuoteSection {
    pub quote: String,
    #[serde(flatten)]
    pub report: ArbitrageReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<EquilibriumSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consensus_gap: Option<GapSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_prices: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSection>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub quotes: Vec<QuoteSection>,
    pub checks: Vec<Check>,
    pub timing: Timing,
}

impl RunReport {
    fn new(command: &str, scenario: &Scenario) -> Self {
        Self {
            format_version: REPORT_VERSION,
            command: command.to_string(),
            scenario: scenario.source.name.clone(),
            equilibrium: None,
            consensus_gap: None,
            state_prices: None,
            compare: None,
            protocol: None,
            search: None,
            quotes: Vec::new(),
            checks: Vec::new(),
            timing: Timing::default(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Whether every check that matters at this strictness passed.
    pub fn passed_at(&self, strict: bool) -> bool {
        self.checks
            .iter()
            .all(|c| c.passed || (!strict && c.severity == Severity::Claim))
    }

    /// A protocol run stopped by the round cap.
    pub fn stalled(&self) -> bool {
        self.protocol.as_ref().is_some_and(|p| !p.converged && p.rounds > 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        if let Some(name) = &self.scenario {
            let _ = writeln!(out, "scenario: {name}");
        }
        if let Some(eq) = &self.equilibrium {
            let _ = writeln!(out, "equilibrium ({} iterations, residual {:.3e})", eq.iterations, eq.residual);
            for (s, p) in eq.securities.iter().zip(&eq.prices) {
                let _ = writeln!(out, "  price <{s}> = {p:.10}");
            }
            for a in &eq.allocations {
                let cells: Vec<String> = a.holdings.iter().map(|x| format!("{x:+.6}")).collect();
                let _ = writeln!(out, "  holdings {}: [{}]", a.id, cells.join(", "));
            }
        }
        if let Some(g) = &self.consensus_gap {
            let _ = write!(out, "consensus gap: {:.3e}", g.max_gap);
            if let (Some((a, b)), Some(s)) = (&g.agents, &g.state) {
                let _ = write!(out, " ({a} vs {b} at {s})");
            }
            out.push('\n');
        }
        if let Some(sp) = &self.state_prices {
            let cells: Vec<String> = sp.iter().map(|x| format!("{x:.6}")).collect();
            let _ = writeln!(out, "state prices: [{}]", cells.join(", "));
        }
        if let Some(c) = &self.compare {
            let _ = writeln!(
                out,
                "operationally complete: {}\ncompact market: {} securities, gap {:.3e}; complete market: {} securities, gap {:.3e}; wealth gap {:.3e}",
                c.is_oc, c.securities, c.consensus_gap, c.benchmark_securities, c.benchmark_consensus_gap, c.wealth_gap
            );
        }
        if let Some(p) = &self.protocol {
            for r in &p.history {
                let _ = writeln!(
                    out,
                    "round {}: {} securities, gap {:.3e}, created [{}], retracted [{}]",
                    r.round,
                    r.securities.len(),
                    r.consensus_gap,
                    r.created.join(", "),
                    r.retracted.join(", ")
                );
            }
            let _ = writeln!(
                out,
                "terminal market ({}): [{}]",
                if p.converged { "fixed point" } else { "round cap reached" },
                p.terminal_securities.join(", ")
            );
        }
        if let Some(s) = &self.search {
            let o = &s.outcome;
            match o.best_trial {
                Some(t) if o.found => {
                    let _ = writeln!(out, "search: counterexample at trial {t}, gap {:.3e} ({} trials)", o.best_gap, o.trials_run);
                }
                _ => {
                    let _ = writeln!(out, "search: none found in budget, best gap {:.3e} ({} trials)", o.best_gap, o.trials_run);
                }
            }
        }
        for q in &self.quotes {
            let kind = match &q.report.kind {
                ArbitrageKind::None => "no arbitrage".to_string(),
                ArbitrageKind::Replicable { guaranteed_profit, .. } => {
                    format!("replicable, riskless profit {guaranteed_profit:.6} per unit")
                }
                ArbitrageKind::RNProfit { direction, p_star } => {
                    format!("not replicable, {direction:?} and lay off at {p_star:.6}")
                }
            };
            let _ = writeln!(out, "quote {}: implied {:.10}, {kind}", q.quote, q.report.implied);
        }
        for c in &self.checks {
            let rel = match c.relation {
                Relation::AtMost => "<=",
                Relation::Exceeds => ">",
            };
            let tag = match (c.passed, c.severity) {
                (true, _) => "pass",
                (false, Severity::Invariant) => "FAIL",
                (false, Severity::Claim) => "fail (claim)",
            };
            let _ = writeln!(
                out,
                "[{tag}] {}: {:.3e} {rel} {:.1e}",
                c.name,
                c.measured,
                c.tolerance
            );
        }
        out
    }

    /// The JSON document with timing removed, for byte comparisons.
    pub fn to_json_without_timing(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("timing");
        }
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    /// The scenario's own experiment.
    Run,
    Compare,
    /// `tol` overrides the scenario's arbitrage tolerance.
    Arbitrage { quotes: Vec<String>, tol: Option<f64> },
    Protocol,
    Search { trials: Option<usize>, seed: Option<u64> },
}

/// Applies a named tolerance override to a scenario document.
pub fn apply_tolerance(file: &mut ScenarioFile, name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::invalid(format!("tolerance {name} = {value} must be positive")));
    }
    match name {
        "clear_tol" => file.solver.clear_tol = value,
        "foc_tol" => file.solver.foc_tol = value,
        "oc_tol" => file.solver.oc_tol = value,
        "demand_eps" => file.protocol.demand_eps = value,
        "arb_tol" => match &mut file.experiment {
            ExperimentSpec::Arbitrage { tol, .. } => *tol = value,
            _ => return Err(Error::invalid("arb_tol applies to arbitrage experiments only")),
        },
        "replay_tol" => match &mut file.experiment {
            ExperimentSpec::Replay { tol, .. } => *tol = value,
            _ => return Err(Error::invalid("replay_tol applies to replay experiments only")),
        },
        "pareto_step" => match &mut file.experiment {
            ExperimentSpec::OperationalCompleteness { pareto_step, .. } => *pareto_step = value,
            _ => return Err(Error::invalid("pareto_step applies to operational-completeness experiments only")),
        },
        other => return Err(Error::invalid(format!("unknown tolerance `{other}`"))),
    }
    Ok(())
}

/// Whether `name` is a tolerance the scenario's experiment reads.
pub fn tolerance_applies(file: &ScenarioFile, name: &str) -> bool {
    match name {
        "clear_tol" | "foc_tol" | "oc_tol" | "demand_eps" => true,
        "arb_tol" => matches!(file.experiment, ExperimentSpec::Arbitrage { .. }),
        "replay_tol" => matches!(file.experiment, ExperimentSpec::Replay { .. }),
        "pareto_step" => matches!(file.experiment, ExperimentSpec::OperationalCompleteness { .. }),
        _ => false,
    }
}

pub const TOLERANCE_NAMES: [&str; 7] = ["clear_tol", "foc_tol", "oc_tol", "demand_eps", "arb_tol", "replay_tol", "pareto_step"];

fn state_label(space: &EventSpace, s: usize) -> String {
    let all: Vec<usize> = (0..space.len()).collect();
    EventExpr::restrict(&all, WorldState(s)).display(space).to_string()
}

fn gap_section(agents: &[Agent], space: &EventSpace, r: &EquilibriumResult) -> GapSection {
    let g = consensus_gap(r);
    GapSection {
        max_gap: g.max_gap,
        agents: g.pair.map(|(a, b)| (agents[a].id.clone(), agents[b].id.clone())),
        state: g.state.map(|s| state_label(space, s)),
    }
}

fn equilibrium_section(agents: &[Agent], market: &Market, r: &EquilibriumResult) -> EquilibriumSection {
    EquilibriumSection {
        securities: market.names(),
        prices: r.prices.clone(),
        allocations: agents
            .iter()
            .zip(&r.allocations)
            .map(|(a, h)| AgentHoldings {
                id: a.id.clone(),
                holdings: h.clone(),
            })
            .collect(),
        residual: r.residual,
        iterations: r.iterations,
    }
}

/// Largest `|Pr_RN(P ∧ C) - p Pr_RN(C)|` over agents and securities.
pub fn identity_residual(market: &Market, r: &EquilibriumResult) -> f64 {
    let mut worst = 0.0f64;
    for rn in &r.rn_tables {
        for (sec, &p) in market.securities().iter().zip(&r.prices) {
            let both = rn.prob(&sec.payoff().and(sec.condition()).expect("disjoint"));
            let live = rn.prob(sec.condition());
            worst = worst.max((both - p * live).abs());
        }
    }
    worst
}

/// Largest per-state amount of wealth created by trading: total wealth
/// minus total endowment minus what the uncleared aggregate position
/// settles to. Zero whether or not the market clears.
pub fn zero_sum_residual(agents: &[Agent], market: &Market, r: &EquilibriumResult) -> Result<f64> {
    let m = market.num_events();
    let n = market.num_states();
    let mut created = vec![0.0; n];
    for (a, h) in agents.iter().zip(&r.allocations) {
        let w = agents::wealth_profile(a, h, &r.prices, market)?;
        for s in 0..n {
            created[s] += w[s] - a.endowment[s];
        }
    }
    for (k, (sec, &p)) in market.securities().iter().zip(&r.prices).enumerate() {
        let excess: f64 = r.allocations.iter().map(|h| h[k]).sum();
        for (c, v) in created.iter_mut().zip(sec.net_payoff(p, m)) {
            *c -= excess * v;
        }
    }
    Ok(created.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

fn equilibrium_checks(report: &mut RunReport, agents: &[Agent], market: &Market, solver: &SolverOptions, r: &EquilibriumResult) -> Result<()> {
    report.checks.push(Check::at_most("market_clearing", r.residual, solver.clear_tol));
    report.checks.push(Check::at_most("price_equals_rn_conditional", identity_residual(market, r), IDENTITY_TOL));
    report.checks.push(Check::at_most("zero_sum_settlement", zero_sum_residual(agents, market, r)?, ZERO_SUM_TOL));
    Ok(())
}

fn solve_section(report: &mut RunReport, s: &Scenario) -> Result<EquilibriumResult> {
    let r = equilibrium::solve(&s.agents, &s.market, s.solver())?;
    report.equilibrium = Some(equilibrium_section(&s.agents, &s.market, &r));
    report.consensus_gap = Some(gap_section(&s.agents, &s.space, &r));
    if s.market.structure().is_some() {
        report.state_prices = Some(equilibrium::state_prices(&r, &s.market)?.probs().to_vec());
    }
    equilibrium_checks(report, &s.agents, &s.market, s.solver(), &r)?;
    Ok(r)
}

fn compare_section(report: &mut RunReport, s: &Scenario) -> Result<equilibrium::OcReport> {
    let oc = equilibrium::verify_operational_completeness(&s.agents, &s.market, s.solver())?;
    report.equilibrium = Some(equilibrium_section(&s.agents, &s.market, &oc.result));
    report.consensus_gap = Some(gap_section(&s.agents, &s.space, &oc.result));
    if s.market.structure().is_some() {
        report.state_prices = Some(equilibrium::state_prices(&oc.result, &s.market)?.probs().to_vec());
    }
    equilibrium_checks(report, &s.agents, &s.market, s.solver(), &oc.result)?;
    report.compare = Some(CompareSection {
        is_oc: oc.is_oc,
        securities: oc.securities,
        benchmark_securities: oc.benchmark_securities,
        consensus_gap: oc.consensus_gap,
        benchmark_consensus_gap: consensus_gap(&oc.benchmark).max_gap,
        wealth_gap: oc.wealth_gap,
        wealth_gap_applicable: oc.wealth_gap_applicable,
    });
    let tol = s.solver().oc_tol;
    report.checks.push(Check::at_most("consensus_gap", oc.consensus_gap, tol).claim());
    if oc.wealth_gap_applicable {
        report.checks.push(Check::at_most("wealth_gap_vs_complete_market", oc.wealth_gap, tol).claim());
    }
    Ok(oc)
}

/// Wall clock, absent on bare wasm where reading it panics.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn elapsed_ms(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64() * 1e3;
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// Runs a command on a validated scenario.
pub fn execute(s: &Scenario, command: &Command) -> Result<RunReport> {
    let start = Stopwatch::start();
    let name = match command {
        Command::Run => "run",
        Command::Compare => "compare",
        Command::Arbitrage { .. } => "arbitrage",
        Command::Protocol => "protocol",
        Command::Search { .. } => "search",
    };
    let mut report = RunReport::new(name, s);
    match command {
        Command::Run => run_experiment(&mut report, s)?,
        Command::Compare => {
            compare_section(&mut report, s)?;
        }
        Command::Arbitrage { quotes, tol } => {
            let tol = tol.unwrap_or(match s.experiment() {
                ExperimentSpec::Arbitrage { tol, .. } => *tol,
                _ => DEFAULT_ARB_TOL,
            });
            arbitrage_section(&mut report, s, quotes, tol)?;
        }
        Command::Protocol => protocol_section(&mut report, s)?,
        Command::Search { trials, seed } => search_section(&mut report, s, *trials, *seed)?,
    }
    report.timing.elapsed_ms = start.elapsed_ms();
    Ok(report)
}

fn run_experiment(report: &mut RunReport, s: &Scenario) -> Result<()> {
    match s.experiment() {
        ExperimentSpec::Equilibrium => {
            solve_section(report, s)?;
        }
        ExperimentSpec::OperationalCompleteness {
            pareto_trials,
            pareto_step,
            seed,
        } => {
            let oc = compare_section(report, s)?;
            let wealth = equilibrium::wealth_profiles(&s.agents, &oc.result, &s.market)?;
            let found = equilibrium::pareto_improvement_search(&s.agents, &wealth, *pareto_trials, *pareto_step, *seed);
            report
                .checks
                .push(Check::at_most("pareto_improving_trades_found", found.is_some() as u8 as f64, 0.0).claim());
        }
        ExperimentSpec::Arbitrage { quotes, tol } => arbitrage_section(report, s, quotes, *tol)?,
        ExperimentSpec::Protocol => protocol_section(report, s)?,
        ExperimentSpec::Search { .. } => search_section(report, s, None, None)?,
        ExperimentSpec::Replay { expected_gap, tol } => {
            solve_section(report, s)?;
            let gap = report.consensus_gap.as_ref().map_or(0.0, |g| g.max_gap);
            report.checks.push(Check::at_most("replayed_gap_difference", (gap - expected_gap).abs(), *tol));
        }
    }
    Ok(())
}

fn arbitrage_section(report: &mut RunReport, s: &Scenario, quotes: &[String], tol: f64) -> Result<()> {
    if s.market.structure().is_none() {
        return Err(Error::MissingStructure);
    }
    let parsed = quotes
        .iter()
        .map(|q| Quote::parse(q, &s.space))
        .collect::<Result<Vec<_>>>()?;
    let r = solve_section(report, s)?;
    for (text, q) in quotes.iter().zip(&parsed) {
        let a = arbitrage::detect(&r.prices, &s.market, q, tol)?;
        if let ArbitrageKind::Replicable {
            guaranteed_profit,
            state_profits,
            ..
        } = &a.kind
        {
            let m = s.market.num_events();
            let live = q.security.live_indicator(m);
            let shortfall = state_profits
                .iter()
                .zip(&live)
                .map(|(p, l)| if *l > 0.0 { guaranteed_profit - p } else { -p })
                .fold(f64::NEG_INFINITY, f64::max);
            report
                .checks
                .push(Check::at_most(format!("hedge_shortfall[{text}]"), shortfall.max(0.0), HEDGE_TOL));
        }
        report.quotes.push(QuoteSection {
            quote: text.clone(),
            report: a,
        });
    }
    Ok(())
}

fn protocol_section(report: &mut RunReport, s: &Scenario) -> Result<()> {
    let st = protocol::run_protocol(&s.agents, &s.space, s.protocol(), s.solver())?;
    if let Some(r) = &st.result {
        report.equilibrium = Some(equilibrium_section(&s.agents, &st.market, r));
        report.consensus_gap = Some(gap_section(&s.agents, &s.space, r));
        equilibrium_checks(report, &s.agents, &st.market, s.solver(), r)?;
        report
            .checks
            .push(Check::at_most("terminal_consensus_gap", consensus_gap(r).max_gap, s.solver().oc_tol).claim());
    }
    report.protocol = Some(ProtocolSection {
        rounds: st.round,
        converged: st.converged,
        terminal_securities: st.market.names(),
        frozen: st.frozen.iter().map(|f| f.to_canonical(&s.space)).collect(),
        history: st.history,
    });
    Ok(())
}

fn search_section(report: &mut RunReport, s: &Scenario, trials: Option<usize>, seed: Option<u64>) -> Result<()> {
    let ExperimentSpec::Search {
        utility,
        agents,
        endowment,
        trials: t0,
        seed: s0,
        found_gap,
        stop_early,
        expect_found,
    } = s.experiment().clone()
    else {
        return Err(Error::invalid("scenario does not describe a search"));
    };
    let dag = s.market.structure().ok_or(Error::MissingStructure)?;
    let config = SearchConfig {
        utility,
        agents,
        endowment,
        trials: trials.unwrap_or(t0),
        seed: seed.unwrap_or(s0),
        found_gap,
        stop_early,
    };
    let outcome = search::counterexample_search(&s.space, dag, &config, s.solver());
    match expect_found {
        Some(true) => report.checks.push(Check::exceeds("best_consensus_gap", outcome.best_gap, found_gap).claim()),
        Some(false) => report.checks.push(Check::at_most("best_consensus_gap", outcome.best_gap, found_gap).claim()),
        None => {}
    }
    report.search = Some(SearchSection { config, outcome });
    Ok(())
}

/// Whether every agent has exponential utility.
pub fn all_cara(agents: &[Agent]) -> bool {
    agents.iter().all(|a| matches!(a.utility, Utility::Exponential { .. }))
}
