//! Market formation: agents open conditional-security markets they would
//! trade at probe prices, retract markets nobody uses, and repeat until no
//! agent wants to change the security set.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{self, Agent, DemandOptions};
use crate::equilibrium::{self, consensus_gap, EquilibriumResult, SolverOptions};
use crate::error::{Error, Result};
use crate::joint::{EventExpr, EventSpace};
use crate::securities::{BasisOrder, Market, Security};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolOptions {
    /// Demand magnitude above which an agent wants a market.
    pub demand_eps: f64,
    pub max_rounds: usize,
    /// Retractions after which a security is no longer offered.
    pub freeze_after: usize,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            demand_eps: 1e-6,
            max_rounds: 10,
            freeze_after: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Securities at the start of the round.
    pub securities: Vec<String>,
    pub prices: Vec<f64>,
    pub consensus_gap: f64,
    pub created: Vec<String>,
    pub retracted: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolState {
    pub market: Market,
    pub round: usize,
    pub history: Vec<RoundRecord>,
    /// False when the round cap stopped the run before a fixed point.
    pub converged: bool,
    pub frozen: Vec<Security>,
    /// Equilibrium of the terminal market (absent when no round ran).
    pub result: Option<EquilibriumResult>,
}

/// Candidate component of an agent's demand when `candidate` is added to
/// the market at `probe_price`.
pub fn probe_demand(
    agent: &Agent,
    market: &Market,
    prices: &[f64],
    candidate: Security,
    probe_price: f64,
    opts: &DemandOptions,
) -> Result<f64> {
    let extended = market.with_security(candidate)?;
    let mut p = prices.to_vec();
    p.push(probe_price);
    let x = agents::demand(agent, &p, &extended, opts)?;
    Ok(x[market.len()])
}

struct Candidate {
    security: Security,
    probe_price: f64,
}

/// Single-literal conditionals `<A_k | ±A_j>` (j < k) probed at the price of
/// `<A_k>`, plus refinements of two conditionals on the same child into
/// their conjunction, probed at the agents' mean risk-neutral conditional.
fn candidates(market: &Market, result: &EquilibriumResult, frozen: &BTreeSet<Security>) -> Vec<Candidate> {
    let m = market.num_events();
    let mut out: Vec<Candidate> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |security: Security, probe_price: f64, out: &mut Vec<Candidate>| {
        if !market.contains(&security) && !frozen.contains(&security) && seen.insert(security) {
            out.push(Candidate {
                security,
                probe_price,
            });
        }
    };
    let price_of = |sec: &Security| market.position(sec).map(|i| result.prices[i]);
    for k in 1..m {
        let Some(base_price) = price_of(&Security::base(k)) else {
            continue;
        };
        for j in 0..k {
            for b in [true, false] {
                let sec = Security::new(EventExpr::literal(k, true), EventExpr::literal(j, b)).expect("disjoint");
                push(sec, base_price, &mut out);
            }
        }
    }
    for k in 1..m {
        let conds: Vec<EventExpr> = market
            .securities()
            .iter()
            .filter(|s| *s.payoff() == EventExpr::literal(k, true) && s.is_conditional())
            .map(|s| *s.condition())
            .collect();
        for (a, ca) in conds.iter().enumerate() {
            for cb in &conds[a + 1..] {
                let Some(joint) = ca.and(cb) else { continue };
                if joint.len() != ca.len().max(cb.len()) + 1 {
                    continue;
                }
                let Ok(sec) = Security::new(EventExpr::literal(k, true), joint) else {
                    continue;
                };
                let rn: Vec<f64> = result
                    .rn_tables
                    .iter()
                    .filter_map(|t| t.conditional(sec.payoff(), sec.condition()).ok())
                    .collect();
                if rn.is_empty() {
                    continue;
                }
                let price = (rn.iter().sum::<f64>() / rn.len() as f64).clamp(1e-9, 1.0 - 1e-9);
                push(sec, price, &mut out);
            }
        }
    }
    out
}

/// Runs market formation from the base securities `<A_1> .. <A_M>`.
pub fn run_protocol(
    agents: &[Agent],
    space: &EventSpace,
    opts: &ProtocolOptions,
    solver: &SolverOptions,
) -> Result<ProtocolState> {
    let mut market = Market::base(space.clone());
    let mut state = ProtocolState {
        market: market.clone(),
        round: 0,
        history: Vec::new(),
        converged: false,
        frozen: Vec::new(),
        result: None,
    };
    if opts.max_rounds == 0 {
        return Ok(state);
    }
    let base_count = space.len();
    let dopts = DemandOptions {
        foc_tol: solver.foc_tol,
        max_iter: solver.demand_max_iter,
        ..DemandOptions::default()
    };
    let mut retractions: BTreeMap<Security, usize> = BTreeMap::new();
    let mut frozen: BTreeSet<Security> = BTreeSet::new();

    for round in 1..=opts.max_rounds {
        let result = equilibrium::solve(agents, &market, solver)?;
        let gap = consensus_gap(&result).max_gap;

        let cands = candidates(&market, &result, &frozen);
        let wanted: Vec<bool> = cands
            .par_iter()
            .map(|c| {
                agents.iter().try_fold(false, |any, a| {
                    if any {
                        return Ok(true);
                    }
                    match probe_demand(a, &market, &result.prices, c.security, c.probe_price, &dopts) {
                        Ok(x) => Ok(x.abs() > opts.demand_eps),
                        // unbounded demand is a strong wish to trade
                        Err(Error::UnboundedDemand(_)) => Ok(true),
                        Err(e) => Err(e),
                    }
                })
            })
            .collect::<Result<_>>()?;
        let created: Vec<Security> = cands
            .iter()
            .zip(&wanted)
            .filter(|(_, w)| **w)
            .map(|(c, _)| c.security)
            .collect();

        let retracted: Vec<usize> = (base_count..market.len())
            .filter(|&k| result.allocations.iter().all(|h| h[k].abs() <= opts.demand_eps))
            .collect();

        state.history.push(RoundRecord {
            round,
            securities: market.names(),
            prices: result.prices.clone(),
            consensus_gap: gap,
            created: created.iter().map(|s| s.to_canonical(space)).collect(),
            retracted: retracted.iter().map(|&k| market.securities()[k].to_canonical(space)).collect(),
        });
        state.round = round;

        if created.is_empty() && retracted.is_empty() {
            state.converged = true;
            state.result = Some(result);
            break;
        }
        for &k in &retracted {
            let sec = market.securities()[k];
            let n = retractions.entry(sec).or_insert(0);
            *n += 1;
            if *n >= opts.freeze_after {
                frozen.insert(sec);
            }
        }
        market = market.without(&retracted);
        for sec in created {
            market = market.with_security(sec)?;
        }
        state.result = None;
    }
    if state.result.is_none() {
        state.result = Some(equilibrium::solve(agents, &market, solver)?);
    }
    state.market = market;
    state.frozen = frozen.into_iter().collect();
    Ok(state)
}

/// Number of securities with independent payoffs in `market`.
pub fn effective_size(market: &Market) -> usize {
    market.basis(BasisOrder::Listed).len()
}
