//! Competitive equilibrium, risk-neutral consensus, state prices, redundant
//! pricing and operational-completeness checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{self, payoff_matrix, Agent, DemandOptions, Holdings, PriceVector, Utility};
use crate::bayesnet::{BayesNet, Dag};
use crate::error::{Error, Result};
use crate::joint::{EventExpr, JointDistribution, WorldState};
use crate::securities::{BasisOrder, Market, Security};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Bound on `|Σ_i x_i|` per security.
    pub clear_tol: f64,
    /// Per-agent first-order-condition tolerance.
    pub foc_tol: f64,
    /// Consensus tolerance for operational completeness.
    pub oc_tol: f64,
    pub max_iter: usize,
    pub demand_max_iter: usize,
    /// Solve over conditional securities first when some are redundant, so
    /// spanned unconditional securities carry zero allocation.
    pub prefer_conditional: bool,
    /// Starting prices (full market length); pooled-belief prices otherwise.
    #[serde(skip)]
    pub initial_prices: Option<PriceVector>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            clear_tol: 1e-8,
            foc_tol: 1e-10,
            oc_tol: 1e-6,
            max_iter: 200,
            demand_max_iter: 10_000,
            prefer_conditional: true,
            initial_prices: None,
        }
    }
}

impl SolverOptions {
    fn demand_options(&self) -> DemandOptions {
        DemandOptions {
            foc_tol: self.foc_tol,
            max_iter: self.demand_max_iter,
            ..DemandOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub prices: PriceVector,
    pub allocations: Vec<Holdings>,
    /// Max absolute aggregate excess demand.
    pub residual: f64,
    pub iterations: usize,
    pub rn_tables: Vec<JointDistribution>,
}

fn validate_population(agents: &[Agent], market: &Market) -> Result<()> {
    if agents.is_empty() {
        return Err(Error::invalid("at least one agent is required"));
    }
    for a in agents {
        if a.num_events() != market.num_events() {
            return Err(Error::invalid(format!("agent {} uses a different event space", a.id)));
        }
        if !a.utility.is_strictly_risk_averse() {
            return Err(Error::invalid(format!(
                "agent {} is risk neutral; equilibrium needs strictly risk-averse agents",
                a.id
            )));
        }
    }
    Ok(())
}

/// Conditionals of the pooled (averaged) belief, kept off the boundary.
fn pooled_prices(agents: &[Agent], market: &Market) -> PriceVector {
    let n = market.num_states();
    let mut pooled = vec![0.0; n];
    for a in agents {
        for (p, q) in pooled.iter_mut().zip(a.belief.probs()) {
            *p += q / agents.len() as f64;
        }
    }
    let pooled = JointDistribution::from_weights(market.num_events(), pooled).expect("mixture of distributions");
    market
        .securities()
        .iter()
        .map(|s| {
            pooled
                .conditional(s.payoff(), s.condition())
                .map_or(0.5, |p| p.clamp(1e-6, 1.0 - 1e-6))
        })
        .collect()
}

struct Iterate {
    prices: Vec<f64>,
    holdings: Vec<Holdings>,
    excess: DVector<f64>,
}

impl Iterate {
    fn residual(&self) -> f64 {
        self.excess.amax()
    }
}

fn evaluate(
    agents: &[Agent],
    market: &Market,
    prices: Vec<f64>,
    warm: Option<&[Holdings]>,
    opts: &DemandOptions,
) -> Result<Iterate> {
    let holdings = agents
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let o = DemandOptions {
                initial: warm.map(|w| w[i].clone()),
                ..opts.clone()
            };
            agents::demand(a, &prices, market, &o)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut excess = DVector::zeros(market.len());
    for h in &holdings {
        for (z, x) in excess.iter_mut().zip(h) {
            *z += x;
        }
    }
    Ok(Iterate {
        prices,
        holdings,
        excess,
    })
}

/// `dx/dp` of an agent's demand at an interior optimum, by implicit
/// differentiation of its first-order conditions.
pub fn demand_jacobian(agent: &Agent, holdings: &[f64], prices: &[f64], market: &Market) -> Result<DMatrix<f64>> {
    let n = market.len();
    let m = market.num_events();
    let wealth = agents::wealth_profile(agent, holdings, prices, market)?;
    let all: Vec<usize> = (0..n).collect();
    let payoffs = payoff_matrix(market, prices, &all);
    let live: Vec<Vec<f64>> = market.securities().iter().map(|s| s.live_indicator(m)).collect();
    let probs = agent.belief.probs();
    // first and second derivative weights, scaled by a common positive factor
    let (first, second): (Vec<f64>, Vec<f64>) = match agent.utility {
        Utility::Exponential { c } => {
            let lowest = wealth
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(w, _)| *w)
                .fold(f64::INFINITY, f64::min);
            probs
                .iter()
                .zip(&wealth)
                .map(|(&p, &w)| {
                    let a = if p > 0.0 { p * (-c * (w - lowest)).exp() } else { 0.0 };
                    (a, -c * a)
                })
                .unzip()
        }
        Utility::Log { base_wealth } => probs
            .iter()
            .zip(&wealth)
            .map(|(&p, &w)| {
                if p > 0.0 {
                    let inv = 1.0 / (base_wealth + w);
                    (p * inv, -p * inv * inv)
                } else {
                    (0.0, 0.0)
                }
            })
            .unzip(),
        Utility::Linear => return Err(Error::invalid("risk-neutral demand has no derivative")),
    };
    let mut curvature = DMatrix::zeros(n, n);
    let mut cross = DMatrix::zeros(n, n);
    for s in 0..wealth.len() {
        if first[s] == 0.0 {
            continue;
        }
        for k in 0..n {
            let bk = second[s] * payoffs[k][s];
            if bk == 0.0 {
                continue;
            }
            for l in 0..n {
                curvature[(k, l)] -= bk * payoffs[l][s];
                cross[(k, l)] -= holdings[l] * bk * live[l][s];
            }
        }
        for k in 0..n {
            cross[(k, k)] -= first[s] * live[k][s];
        }
    }
    // dx/dp = -(d2U/dx2)^-1 d2U/dxdp, with curvature = -d2U/dx2
    let lu = curvature.lu();
    lu.solve(&cross)
        .ok_or_else(|| Error::InfeasibleProblem("singular demand curvature".into()))
}

fn step_to_boundary(prices: &[f64], step: &DVector<f64>, fraction: f64) -> f64 {
    prices.iter().zip(step.iter()).fold(1.0, |t, (&p, &d)| {
        if d > 0.0 {
            t.min(fraction * (1.0 - p) / d)
        } else if d < 0.0 {
            t.min(fraction * p / -d)
        } else {
            t
        }
    })
}

/// Competitive equilibrium prices and allocations.
///
/// Damped Newton iteration on aggregate excess demand, with the Jacobian
/// from implicit differentiation of each agent's first-order conditions and
/// a price-adjustment fallback when a Newton step fails to reduce excess
/// demand. Securities spanned by the others are priced from the agents'
/// risk-neutral tables and carry zero allocation.
///
/// When not every price vector is coherent (overlapping conditionals in an
/// explicit security list), prices are instead parametrized by a strictly
/// positive state distribution, so every iterate is arbitrage-free.
pub fn solve(agents: &[Agent], market: &Market, opts: &SolverOptions) -> Result<EquilibriumResult> {
    validate_population(agents, market)?;
    if let Some(p) = &opts.initial_prices {
        if p.len() != market.len() {
            return Err(Error::invalid("initial prices do not match the market"));
        }
    }
    let order = if opts.prefer_conditional {
        BasisOrder::ConditionalFirst
    } else {
        BasisOrder::Listed
    };
    let basis = market.basis(order).to_vec();
    let reduced = if basis.len() == market.len() {
        market.clone()
    } else {
        market.subset(&basis)
    };
    let dopts = opts.demand_options();
    let start_prices = || match &opts.initial_prices {
        Some(p) => basis.iter().map(|&k| p[k]).collect(),
        None => pooled_prices(agents, &reduced),
    };

    let mut best: Option<Iterate> = None;
    let mut iterations = 0;
    let mut keep = |stalled: Stalled, iterations: &mut usize| {
        *iterations += stalled.iterations;
        if let Some(it) = stalled.best {
            if best.as_ref().is_none_or(|b| it.residual() < b.residual()) {
                best = Some(it);
            }
        }
    };
    let attempts: &[Path] = if coherent_cube(&reduced) {
        &[Path::Prices]
    } else if opts.initial_prices.is_some() {
        &[Path::Prices, Path::StatePrices]
    } else {
        &[Path::StatePrices, Path::Prices]
    };
    for path in attempts {
        let outcome = match path {
            Path::Prices => price_path(agents, &reduced, start_prices(), opts, &dopts),
            Path::StatePrices => state_price_path(agents, &reduced, opts, &dopts),
        };
        match outcome {
            Ok((cur, n)) => return finish(agents, market, &basis, &reduced, cur, iterations + n),
            Err(stalled) => keep(stalled, &mut iterations),
        }
    }
    let residual = best.as_ref().map_or(f64::INFINITY, Iterate::residual);
    let best = best
        .and_then(|b| finish(agents, market, &basis, &reduced, b, iterations).ok())
        .map(Box::new);
    Err(Error::NoConvergence {
        iterations,
        residual,
        best,
    })
}

enum Path {
    Prices,
    StatePrices,
}

/// A solve path that stopped short of clearing.
struct Stalled {
    best: Option<Iterate>,
    iterations: usize,
}

/// Whether every price vector in the open unit cube is coherent: true for
/// structured markets and for unconditional securities on distinct events.
fn coherent_cube(market: &Market) -> bool {
    if market.structure().is_some() {
        return true;
    }
    let mut seen = 0u32;
    market.securities().iter().all(|s| {
        let lit = s.payoff();
        let ok = !s.is_conditional() && lit.len() == 1 && seen & lit.mask() == 0;
        seen |= lit.mask();
        ok
    })
}

fn aggregate_jacobian(agents: &[Agent], market: &Market, cur: &Iterate) -> Option<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(market.len(), market.len());
    for (a, h) in agents.iter().zip(&cur.holdings) {
        jac += demand_jacobian(a, h, &cur.prices, market).ok()?;
    }
    Some(jac)
}

fn price_path(
    agents: &[Agent],
    reduced: &Market,
    start: Vec<f64>,
    opts: &SolverOptions,
    dopts: &DemandOptions,
) -> std::result::Result<(Iterate, usize), Stalled> {
    let Ok(mut cur) = evaluate(agents, reduced, start, None, dopts) else {
        return Err(Stalled {
            best: None,
            iterations: 0,
        });
    };
    let mut iterations = 0;
    let mut eta: f64 = 0.5;

    while cur.residual() > opts.clear_tol {
        if iterations >= opts.max_iter {
            return Err(Stalled {
                best: Some(cur),
                iterations,
            });
        }
        iterations += 1;
        let norm = cur.excess.norm();
        let newton = aggregate_jacobian(agents, reduced, &cur).and_then(|j| j.lu().solve(&(-&cur.excess)));

        let mut next = None;
        if let Some(step) = newton.filter(|s| s.iter().all(|v| v.is_finite())) {
            let mut t = step_to_boundary(&cur.prices, &step, 0.95);
            for _ in 0..40 {
                let trial: Vec<f64> = cur.prices.iter().zip(step.iter()).map(|(p, d)| p + t * d).collect();
                if let Ok(e) = evaluate(agents, reduced, trial, Some(&cur.holdings), dopts) {
                    if e.excess.norm() < (1.0 - 1e-4 * t) * norm {
                        next = Some(e);
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if next.is_none() {
            // price adjustment in the direction of excess demand
            let dir = cur.excess.clone();
            let cap = step_to_boundary(&cur.prices, &dir, 0.5);
            for _ in 0..60 {
                let t = eta.min(cap);
                let trial: Vec<f64> = cur.prices.iter().zip(dir.iter()).map(|(p, d)| p + t * d).collect();
                if let Ok(e) = evaluate(agents, reduced, trial, Some(&cur.holdings), dopts) {
                    if e.excess.norm() < norm {
                        next = Some(e);
                        break;
                    }
                }
                eta *= 0.5;
            }
        }
        match next {
            Some(e) => cur = e,
            None => {
                return Err(Stalled {
                    best: Some(cur),
                    iterations,
                })
            }
        }
    }
    Ok((cur, iterations))
}

/// Security prices as conditionals of `softmax(theta)`, with their
/// derivatives `dp_k / dtheta_s = pi_s (1_{P∧C}(s) - p_k 1_C(s)) / pi(C)`.
fn prices_from_state_weights(market: &Market, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let top = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pi: Vec<f64> = theta.iter().map(|t| (t - top).exp()).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    let n = market.len();
    let mut prices = Vec::with_capacity(n);
    let mut jac = DMatrix::zeros(n, pi.len());
    for (k, sec) in market.securities().iter().enumerate() {
        let win = sec.payoff().and(sec.condition()).expect("disjoint");
        let (mut both, mut live) = (0.0, 0.0);
        for (s, &q) in pi.iter().enumerate() {
            let st = WorldState(s);
            if sec.condition().matches(st) {
                live += q;
                if win.matches(st) {
                    both += q;
                }
            }
        }
        let p = both / live;
        prices.push(p);
        for (s, &q) in pi.iter().enumerate() {
            let st = WorldState(s);
            let a = if win.matches(st) { 1.0 } else { 0.0 };
            let c = if sec.condition().matches(st) { 1.0 } else { 0.0 };
            jac[(k, s)] = q * (a - p * c) / live;
        }
    }
    (prices, jac)
}

/// Levenberg-Marquardt on excess demand over log state weights. The system
/// is underdetermined, so each step is the damped minimum-norm solution.
fn state_price_path(
    agents: &[Agent],
    reduced: &Market,
    opts: &SolverOptions,
    dopts: &DemandOptions,
) -> std::result::Result<(Iterate, usize), Stalled> {
    let n_states = reduced.num_states();
    let mut pooled = vec![0.0; n_states];
    for a in agents {
        for (p, q) in pooled.iter_mut().zip(a.belief.probs()) {
            *p += q / agents.len() as f64;
        }
    }
    let mut theta: Vec<f64> = pooled.iter().map(|p| p.max(1e-9).ln()).collect();
    let (prices, _) = prices_from_state_weights(reduced, &theta);
    let Ok(mut cur) = evaluate(agents, reduced, prices, None, dopts) else {
        return Err(Stalled {
            best: None,
            iterations: 0,
        });
    };
    let mut iterations = 0;
    let mut lambda = 1e-10;
    while cur.residual() > opts.clear_tol {
        if iterations >= opts.max_iter {
            return Err(Stalled {
                best: Some(cur),
                iterations,
            });
        }
        iterations += 1;
        let norm = cur.excess.norm();
        let (_, dp) = prices_from_state_weights(reduced, &theta);
        let Some(dz) = aggregate_jacobian(agents, reduced, &cur) else {
            return Err(Stalled {
                best: Some(cur),
                iterations,
            });
        };
        let j = dz * dp;
        let jjt = &j * j.transpose();
        let scale = jjt.diagonal().amax().max(1e-300);
        let mut next = None;
        for _ in 0..30 {
            let mut m = jjt.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += lambda * scale;
            }
            let Some(y) = m.lu().solve(&(-&cur.excess)) else {
                lambda *= 10.0;
                continue;
            };
            let mut step = j.transpose() * y;
            let big = step.amax();
            if big > 4.0 {
                step *= 4.0 / big;
            }
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
            let (prices, _) = prices_from_state_weights(reduced, &trial);
            if let Ok(e) = evaluate(agents, reduced, prices, Some(&cur.holdings), dopts) {
                if e.excess.norm() < norm {
                    theta = trial;
                    next = Some(e);
                    lambda = (lambda * 0.1).max(1e-14);
                    break;
                }
            }
            lambda *= 10.0;
        }
        match next {
            Some(e) => cur = e,
            None => {
                return Err(Stalled {
                    best: Some(cur),
                    iterations,
                })
            }
        }
    }
    Ok((cur, iterations))
}

fn finish(
    agents: &[Agent],
    market: &Market,
    basis: &[usize],
    reduced: &Market,
    cur: Iterate,
    iterations: usize,
) -> Result<EquilibriumResult> {
    let rn_tables = agents
        .iter()
        .zip(&cur.holdings)
        .map(|(a, h)| agents::rn_distribution(a, h, &cur.prices, reduced))
        .collect::<Result<Vec<_>>>()?;
    let mut prices = vec![f64::NAN; market.len()];
    let mut allocations = vec![vec![0.0; market.len()]; agents.len()];
    for (j, &k) in basis.iter().enumerate() {
        prices[k] = cur.prices[j];
        for (alloc, h) in allocations.iter_mut().zip(&cur.holdings) {
            alloc[k] = h[j];
        }
    }
    for (k, sec) in market.securities().iter().enumerate() {
        if prices[k].is_nan() {
            prices[k] = rn_tables[0].conditional(sec.payoff(), sec.condition()).unwrap_or(0.5);
        }
    }
    Ok(EquilibriumResult {
        prices,
        allocations,
        residual: cur.residual(),
        iterations,
        rn_tables,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusGap {
    pub max_gap: f64,
    /// Agent pair and state attaining the gap.
    pub pair: Option<(usize, usize)>,
    pub state: Option<usize>,
}

/// Largest disagreement between two agents' risk-neutral probabilities.
pub fn consensus_gap(result: &EquilibriumResult) -> ConsensusGap {
    let mut out = ConsensusGap {
        max_gap: 0.0,
        pair: None,
        state: None,
    };
    let t = &result.rn_tables;
    for h in 0..t.len() {
        for i in h + 1..t.len() {
            for (s, (a, b)) in t[h].probs().iter().zip(t[i].probs()).enumerate() {
                let g = (a - b).abs();
                if out.pair.is_none() || g > out.max_gap {
                    out = ConsensusGap {
                        max_gap: g,
                        pair: Some((h, i)),
                        state: Some(s),
                    };
                }
            }
        }
    }
    out
}

/// Chain-rule distribution whose CPT rows are the prices of a structured
/// market's securities. At equilibrium these are the state prices.
pub fn implied_distribution(prices: &[f64], market: &Market) -> Result<JointDistribution> {
    let dag = market.structure().ok_or(Error::MissingStructure)?;
    if prices.len() != market.len() {
        return Err(Error::invalid("price vector does not match the market"));
    }
    let mut cpts = Vec::with_capacity(dag.num_events());
    let mut offset = 0;
    for k in 0..dag.num_events() {
        let rows = 1 << dag.in_degree(k);
        cpts.push(prices[offset..offset + rows].to_vec());
        offset += rows;
    }
    Ok(BayesNet::new(dag.clone(), cpts)?.joint())
}

pub fn state_prices(result: &EquilibriumResult, market: &Market) -> Result<JointDistribution> {
    implied_distribution(&result.prices, market)
}

/// Equilibrium price of a security outside the market: its conditional
/// probability under the state prices.
pub fn price_redundant(result: &EquilibriumResult, market: &Market, e: &EventExpr, given: &EventExpr) -> Result<f64> {
    state_prices(result, market)?.conditional(e, given)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundantCheck {
    /// Largest move of an original price after re-solving.
    pub price_shift: f64,
    /// Largest allocation of the new security.
    pub new_allocation: f64,
    /// Difference between the re-solved and the predicted new price.
    pub new_price_shift: f64,
}

/// Appends `security` at `price`, re-solves, and measures how far the
/// equilibrium moves.
pub fn verify_redundant(
    agents: &[Agent],
    result: &EquilibriumResult,
    market: &Market,
    security: Security,
    price: f64,
    opts: &SolverOptions,
) -> Result<RedundantCheck> {
    let extended = market.with_security(security)?;
    let mut start = result.prices.clone();
    start.push(price.clamp(1e-9, 1.0 - 1e-9));
    let o = SolverOptions {
        initial_prices: Some(start),
        prefer_conditional: false,
        ..opts.clone()
    };
    let again = solve(agents, &extended, &o)?;
    let n = market.len();
    Ok(RedundantCheck {
        price_shift: result
            .prices
            .iter()
            .zip(&again.prices)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())),
        new_allocation: again.allocations.iter().fold(0.0f64, |m, h| m.max(h[n].abs())),
        new_price_shift: (again.prices[n] - price).abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcReport {
    pub is_oc: bool,
    pub consensus_gap: f64,
    /// Max over agents and states of the wealth difference from the fully
    /// connected benchmark equilibrium.
    pub wealth_gap: f64,
    /// Whether the benchmark comparison is meaningful (unique equilibria).
    pub wealth_gap_applicable: bool,
    pub securities: usize,
    pub benchmark_securities: usize,
    pub result: EquilibriumResult,
    pub benchmark: EquilibriumResult,
}

pub fn wealth_profiles(agents: &[Agent], result: &EquilibriumResult, market: &Market) -> Result<Vec<Vec<f64>>> {
    agents
        .iter()
        .zip(&result.allocations)
        .map(|(a, h)| agents::wealth_profile(a, h, &result.prices, market))
        .collect()
}

pub fn verify_operational_completeness(agents: &[Agent], market: &Market, opts: &SolverOptions) -> Result<OcReport> {
    let result = solve(agents, market, opts)?;
    let gap = consensus_gap(&result);
    let full = Market::complete(market.space().clone());
    let benchmark = solve(agents, &full, opts)?;
    let compact_w = wealth_profiles(agents, &result, market)?;
    let full_w = wealth_profiles(agents, &benchmark, &full)?;
    let wealth_gap = compact_w
        .iter()
        .flatten()
        .zip(full_w.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(OcReport {
        is_oc: gap.max_gap <= opts.oc_tol,
        consensus_gap: gap.max_gap,
        wealth_gap,
        wealth_gap_applicable: agents
            .iter()
            .all(|a| matches!(a.utility, Utility::Exponential { .. })),
        securities: market.len(),
        benchmark_securities: full.len(),
        result,
        benchmark,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    /// Agent receiving `transfer`.
    pub to: usize,
    /// Agent giving `transfer`.
    pub from: usize,
    pub transfer: Vec<f64>,
    pub gains: (f64, f64),
}

/// Random search for a zero-sum state-wealth transfer between two agents
/// that strictly raises both agents' expected utility.
pub fn pareto_improvement_search(
    agents: &[Agent],
    wealth: &[Vec<f64>],
    trials: usize,
    step: f64,
    seed: u64,
) -> Option<Trade> {
    if agents.len() < 2 || agents.len() != wealth.len() {
        return None;
    }
    let n = wealth[0].len();
    let gain = |i: usize, t: &[f64]| -> f64 {
        let a = &agents[i];
        a.belief
            .probs()
            .iter()
            .zip(&wealth[i])
            .zip(t)
            .filter(|((p, _), _)| **p > 0.0)
            .map(|((p, &w), &d)| p * a.utility.gain(w, d))
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let to = rng.random_range(0..agents.len());
        let mut from = rng.random_range(0..agents.len() - 1);
        if from >= to {
            from += 1;
        }
        let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        d.iter_mut().for_each(|v| *v *= step / scale);
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let (g_to, g_from) = (gain(to, &d), gain(from, &neg));
        if g_to > 0.0 && g_from > 0.0 {
            return Some(Trade {
                to,
                from,
                transfer: d,
                gains: (g_to, g_from),
            });
        }
    }
    None
}

/// Convenience: a complete structured market over the same events.
pub fn complete_benchmark(market: &Market) -> Market {
    Market::structured(market.space().clone(), Dag::fully_connected(market.num_events())).expect("sizes agree")
}
