//! Expected-utility agents: beliefs, endowments, utility families, state
//! wealth, risk-neutral distributions and optimal demand.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayesnet::Dag;
use crate::error::{Error, Result};
use crate::joint::{mask_of, JointDistribution, WorldState};
use crate::securities::{BasisOrder, Market};

pub type Holdings = Vec<f64>;
pub type PriceVector = Vec<f64>;

/// Utility for money.
///
/// `Linear` is risk neutral, `Exponential` has constant absolute risk
/// aversion `c`, and `Log` is `ln(W0 + wealth)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Utility {
    Linear,
    Exponential { c: f64 },
    Log { base_wealth: f64 },
}

impl Utility {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Utility::Linear => Ok(()),
            Utility::Exponential { c } if c > 0.0 && c.is_finite() => Ok(()),
            Utility::Exponential { c } => Err(Error::invalid(format!("risk aversion c = {c} must be > 0"))),
            Utility::Log { base_wealth } if base_wealth > 0.0 && base_wealth.is_finite() => Ok(()),
            Utility::Log { base_wealth } => {
                Err(Error::invalid(format!("base wealth W0 = {base_wealth} must be > 0")))
            }
        }
    }

    pub fn is_strictly_risk_averse(&self) -> bool {
        !matches!(self, Utility::Linear)
    }

    /// Wealth must stay strictly above this value.
    pub fn wealth_floor(&self) -> Option<f64> {
        match *self {
            Utility::Log { base_wealth } => Some(-base_wealth),
            _ => None,
        }
    }

    pub fn admits(&self, wealth: f64) -> bool {
        self.wealth_floor().is_none_or(|f| wealth > f)
    }

    pub fn value(&self, w: f64) -> f64 {
        match *self {
            Utility::Linear => w,
            Utility::Exponential { c } => -(-c * w).exp(),
            Utility::Log { base_wealth } => (base_wealth + w).ln(),
        }
    }

    pub fn marginal(&self, w: f64) -> f64 {
        match *self {
            Utility::Linear => 1.0,
            Utility::Exponential { c } => c * (-c * w).exp(),
            Utility::Log { base_wealth } => 1.0 / (base_wealth + w),
        }
    }

    /// `u'(a) / u'(b)` without forming either factor.
    pub fn marginal_ratio(&self, a: f64, b: f64) -> f64 {
        match *self {
            Utility::Linear => 1.0,
            Utility::Exponential { c } => (-c * (a - b)).exp(),
            Utility::Log { base_wealth } => (base_wealth + b) / (base_wealth + a),
        }
    }

    /// `u(w + t) - u(w)` with the cancellation handled analytically.
    pub fn gain(&self, w: f64, t: f64) -> f64 {
        match *self {
            Utility::Linear => t,
            Utility::Exponential { c } => -(-c * w).exp() * (-c * t).exp_m1(),
            Utility::Log { base_wealth } => (t / (base_wealth + w)).ln_1p(),
        }
    }
}

/// A sum of per-clique wealth terms; each term depends only on its events.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeparableEndowment {
    pub terms: Vec<EndowmentTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndowmentTerm {
    /// Event indices, ascending.
    pub events: Vec<usize>,
    /// One value per assignment of `events`, lowest event least significant.
    pub values: Vec<f64>,
}

impl SeparableEndowment {
    pub fn to_state_vector(&self, num_events: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 1 << num_events];
        for (t, term) in self.terms.iter().enumerate() {
            if term.events.iter().any(|&e| e >= num_events) {
                return Err(Error::invalid(format!("endowment term {t} refers to an unknown event")));
            }
            if term.values.len() != 1 << term.events.len() {
                return Err(Error::invalid(format!(
                    "endowment term {t} needs {} values, got {}",
                    1usize << term.events.len(),
                    term.values.len()
                )));
            }
            for (s, w) in out.iter_mut().enumerate() {
                let st = WorldState(s);
                let row = term
                    .events
                    .iter()
                    .enumerate()
                    .fold(0, |r, (bit, &e)| r | (st.holds(e) as usize) << bit);
                *w += term.values[row];
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub id: String,
    pub belief: JointDistribution,
    /// Wealth per state before trading.
    pub endowment: Vec<f64>,
    pub utility: Utility,
}

impl Agent {
    pub fn new(id: impl Into<String>, belief: JointDistribution, utility: Utility) -> Result<Self> {
        let n = belief.num_states();
        Self::with_endowment(id, belief, utility, vec![0.0; n])
    }

    pub fn with_endowment(
        id: impl Into<String>,
        belief: JointDistribution,
        utility: Utility,
        endowment: Vec<f64>,
    ) -> Result<Self> {
        utility.validate()?;
        if endowment.len() != belief.num_states() {
            return Err(Error::invalid(format!(
                "endowment has {} entries, expected {}",
                endowment.len(),
                belief.num_states()
            )));
        }
        if let Some(w) = endowment.iter().find(|w| !w.is_finite()) {
            return Err(Error::invalid(format!("endowment entry {w} is not finite")));
        }
        if let Some(floor) = utility.wealth_floor() {
            if let Some((s, &w)) = endowment.iter().enumerate().find(|(_, w)| **w <= floor) {
                return Err(Error::InfeasibleWealth { state: s, wealth: w, floor });
            }
        }
        Ok(Self {
            id: id.into(),
            belief,
            endowment,
            utility,
        })
    }

    pub fn num_events(&self) -> usize {
        self.belief.num_events()
    }
}

fn check_lengths(holdings: &[f64], prices: &[f64], market: &Market) -> Result<()> {
    if holdings.len() != market.len() || prices.len() != market.len() {
        return Err(Error::invalid(format!(
            "market has {} securities but got {} holdings and {} prices",
            market.len(),
            holdings.len(),
            prices.len()
        )));
    }
    Ok(())
}

/// Endowment plus settled payoff of every position, per state.
pub fn wealth_profile(agent: &Agent, holdings: &[f64], prices: &[f64], market: &Market) -> Result<Vec<f64>> {
    check_lengths(holdings, prices, market)?;
    let mut wealth = agent.endowment.clone();
    for ((sec, &p), &x) in market.securities().iter().zip(prices).zip(holdings) {
        if x == 0.0 {
            continue;
        }
        for (s, w) in wealth.iter_mut().enumerate() {
            *w += sec.settle(p, x, WorldState(s));
        }
    }
    Ok(wealth)
}

fn check_feasible(agent: &Agent, wealth: &[f64]) -> Result<()> {
    if let Some(floor) = agent.utility.wealth_floor() {
        for (s, (&w, &p)) in wealth.iter().zip(agent.belief.probs()).enumerate() {
            if p > 0.0 && w <= floor {
                return Err(Error::InfeasibleWealth { state: s, wealth: w, floor });
            }
        }
    }
    Ok(())
}

/// Expected utility of an explicit wealth profile.
pub fn expected_utility_of(agent: &Agent, wealth: &[f64]) -> Result<f64> {
    check_feasible(agent, wealth)?;
    Ok(agent
        .belief
        .probs()
        .iter()
        .zip(wealth)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, &w)| p * agent.utility.value(w))
        .sum())
}

pub fn expected_utility(agent: &Agent, holdings: &[f64], prices: &[f64], market: &Market) -> Result<f64> {
    expected_utility_of(agent, &wealth_profile(agent, holdings, prices, market)?)
}

/// Risk-neutral distribution at an explicit wealth profile:
/// `Pr(ω) u'(wealth(ω))`, normalized.
pub fn rn_distribution_of(agent: &Agent, wealth: &[f64]) -> Result<JointDistribution> {
    check_feasible(agent, wealth)?;
    let weights = rn_weights(&agent.utility, agent.belief.probs(), wealth);
    JointDistribution::from_weights(agent.num_events(), weights)
}

pub fn rn_distribution(
    agent: &Agent,
    holdings: &[f64],
    prices: &[f64],
    market: &Market,
) -> Result<JointDistribution> {
    rn_distribution_of(agent, &wealth_profile(agent, holdings, prices, market)?)
}

/// Unnormalized risk-neutral weights, rescaled so the largest is O(1).
fn rn_weights(utility: &Utility, probs: &[f64], wealth: &[f64]) -> Vec<f64> {
    match *utility {
        Utility::Exponential { c } => {
            let lowest = probs
                .iter()
                .zip(wealth)
                .filter(|(p, _)| **p > 0.0)
                .map(|(_, &w)| w)
                .fold(f64::INFINITY, f64::min);
            probs
                .iter()
                .zip(wealth)
                .map(|(&p, &w)| if p > 0.0 { p * (-c * (w - lowest)).exp() } else { 0.0 })
                .collect()
        }
        _ => probs
            .iter()
            .zip(wealth)
            .map(|(&p, &w)| if p > 0.0 { p * utility.marginal(w) } else { 0.0 })
            .collect(),
    }
}

pub fn check_rn_imap(
    agent: &Agent,
    holdings: &[f64],
    prices: &[f64],
    market: &Market,
    dag: &Dag,
    tol: f64,
) -> Result<bool> {
    Ok(dag.is_imap(&rn_distribution(agent, holdings, prices, market)?, tol))
}

/// Whether `u'(wealth(!A_j, w, x)) / u'(wealth(A_j, w, x))` is the same for
/// every assignment `x` of the events outside `{j} ∪ w_set`, for each
/// assignment `w` of `w_set`.
pub fn prop4_precondition_of(utility: &Utility, wealth: &[f64], j: usize, w_set: &[usize], tol: f64) -> bool {
    let w_mask = mask_of(w_set) as usize;
    let j_bit = 1usize << j;
    let groups = 1usize << w_set.len();
    let mut lo = vec![f64::INFINITY; groups];
    let mut hi = vec![f64::NEG_INFINITY; groups];
    let mut key_of = std::collections::HashMap::new();
    for s in (0..wealth.len()).filter(|s| s & j_bit != 0) {
        let ratio = utility.marginal_ratio(wealth[s & !j_bit], wealth[s]);
        let next = key_of.len();
        let g = *key_of.entry(s & w_mask).or_insert(next);
        lo[g] = lo[g].min(ratio);
        hi[g] = hi[g].max(ratio);
    }
    (0..key_of.len()).all(|g| hi[g] - lo[g] <= tol)
}

/// Marginal-utility ratio precondition for a Markov independence
/// `CI[A_j, W, X]`, at the wealth produced by `holdings`. Events not in
/// `w_set` (other than `j`) play the role of `X`; `x_set` is checked for
/// consistency only.
#[allow(clippy::too_many_arguments)]
pub fn prop4_precondition(
    agent: &Agent,
    holdings: &[f64],
    prices: &[f64],
    market: &Market,
    j: usize,
    w_set: &[usize],
    x_set: &[usize],
    tol: f64,
) -> Result<bool> {
    let m = agent.num_events();
    let mut all: Vec<usize> = w_set.iter().chain(x_set).copied().chain([j]).collect();
    all.sort_unstable();
    all.dedup();
    if all.len() != m || w_set.len() + x_set.len() + 1 != m {
        return Err(Error::invalid("W, X and {j} must partition the events"));
    }
    let wealth = wealth_profile(agent, holdings, prices, market)?;
    Ok(prop4_precondition_of(&agent.utility, &wealth, j, w_set, tol))
}

#[derive(Clone, Debug)]
pub struct DemandOptions {
    /// Bound on `|Pr_RN(P ∧ C) - p Pr_RN(C)|` for every security.
    pub foc_tol: f64,
    pub max_iter: usize,
    /// Warm start (full market length).
    pub initial: Option<Holdings>,
    /// Positions beyond this size are reported as unbounded demand.
    pub max_position: f64,
}

impl Default for DemandOptions {
    fn default() -> Self {
        Self {
            foc_tol: 1e-10,
            max_iter: 10_000,
            initial: None,
            max_position: 1e8,
        }
    }
}

/// Per-security net payoff rows at `prices`, restricted to `idx`.
pub(crate) fn payoff_matrix(market: &Market, prices: &[f64], idx: &[usize]) -> Vec<Vec<f64>> {
    let m = market.num_events();
    idx.iter()
        .map(|&k| market.securities()[k].net_payoff(prices[k], m))
        .collect()
}

/// `E_RN[n_k]` for every security row, at the given wealth.
pub fn foc_residuals(agent: &Agent, wealth: &[f64], payoffs: &[Vec<f64>]) -> Vec<f64> {
    let w = rn_weights(&agent.utility, agent.belief.probs(), wealth);
    let total: f64 = w.iter().sum();
    payoffs
        .iter()
        .map(|n| n.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total)
        .collect()
}

/// Whether some strictly positive distribution on the belief's support
/// prices every security at zero net value.
pub fn admits_state_prices(support: &[usize], payoffs: &[Vec<f64>]) -> bool {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let floor = lp.add_var(1.0, (0.0, 1.0));
    let pi: Vec<_> = support.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    lp.add_constraint(pi.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    for &v in &pi {
        lp.add_constraint([(v, 1.0), (floor, -1.0)], ComparisonOp::Ge, 0.0);
    }
    for n in payoffs {
        let terms: Vec<_> = support
            .iter()
            .zip(&pi)
            .filter(|(s, _)| n[**s] != 0.0)
            .map(|(&s, &v)| (v, n[s]))
            .collect();
        if !terms.is_empty() {
            lp.add_constraint(terms, ComparisonOp::Eq, 0.0);
        }
    }
    match lp.solve() {
        Ok(outcome) => outcome
            .solution()
            .is_some_and(|sol| sol.objective() > 1e-9 / support.len() as f64),
        Err(_) => false,
    }
}

struct Objective<'a> {
    agent: &'a Agent,
    payoffs: &'a [Vec<f64>],
    support: &'a [usize],
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    /// Max |E_RN[n_k]|.
    residual: f64,
}

impl Objective<'_> {
    fn wealth(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut w = self.agent.endowment.clone();
        for (n, &xk) in self.payoffs.iter().zip(x.iter()) {
            for &s in self.support {
                w[s] += xk * n[s];
            }
        }
        w
    }

    /// Convex objective whose minimizer maximizes expected utility;
    /// `None` outside the wealth domain.
    fn value(&self, x: &DVector<f64>) -> Option<f64> {
        let w = self.wealth(x);
        let probs = self.agent.belief.probs();
        match self.agent.utility {
            Utility::Exponential { c } => {
                let lowest = self.support.iter().map(|&s| w[s]).fold(f64::INFINITY, f64::min);
                let sum: f64 = self
                    .support
                    .iter()
                    .map(|&s| probs[s] * (-c * (w[s] - lowest)).exp())
                    .sum();
                Some(sum.ln() / c - lowest)
            }
            Utility::Log { base_wealth } => {
                let mut v = 0.0;
                for &s in self.support {
                    let z = base_wealth + w[s];
                    if z <= 0.0 {
                        return None;
                    }
                    v -= probs[s] * z.ln();
                }
                Some(v)
            }
            Utility::Linear => unreachable!("linear agents are handled before optimization"),
        }
    }

    fn eval(&self, x: &DVector<f64>) -> Option<Eval> {
        let value = self.value(x)?;
        let w = self.wealth(x);
        let probs = self.agent.belief.probs();
        let k = self.payoffs.len();
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        let residual;
        match self.agent.utility {
            Utility::Exponential { c } => {
                let weights = rn_weights(&self.agent.utility, probs, &w);
                let total: f64 = self.support.iter().map(|&s| weights[s]).sum();
                let mean: Vec<f64> = self
                    .payoffs
                    .iter()
                    .map(|n| self.support.iter().map(|&s| weights[s] * n[s]).sum::<f64>() / total)
                    .collect();
                for a in 0..k {
                    grad[a] = -mean[a];
                    for b in 0..=a {
                        let cov = self
                            .support
                            .iter()
                            .map(|&s| weights[s] * self.payoffs[a][s] * self.payoffs[b][s])
                            .sum::<f64>()
                            / total
                            - mean[a] * mean[b];
                        hess[(a, b)] = c * cov;
                        hess[(b, a)] = c * cov;
                    }
                }
                residual = mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            }
            Utility::Log { base_wealth } => {
                let mut mu_total = 0.0;
                for &s in self.support {
                    let inv = 1.0 / (base_wealth + w[s]);
                    mu_total += probs[s] * inv;
                    for a in 0..k {
                        let na = self.payoffs[a][s];
                        if na == 0.0 {
                            continue;
                        }
                        grad[a] -= probs[s] * na * inv;
                        for b in 0..=a {
                            hess[(a, b)] += probs[s] * na * self.payoffs[b][s] * inv * inv;
                        }
                    }
                }
                for a in 0..k {
                    for b in 0..a {
                        hess[(b, a)] = hess[(a, b)];
                    }
                }
                residual = grad.iter().fold(0.0f64, |m, v| m.max(v.abs())) / mu_total;
            }
            Utility::Linear => unreachable!(),
        }
        Some(Eval {
            value,
            grad,
            hess,
            residual,
        })
    }
}

fn newton_direction(e: &Eval) -> DVector<f64> {
    let k = e.grad.len();
    let scale = (0..k).map(|i| e.hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    loop {
        let mut h = e.hess.clone();
        for i in 0..k {
            h[(i, i)] += ridge;
        }
        if let Some(ch) = h.cholesky() {
            return -ch.solve(&e.grad);
        }
        ridge = if ridge == 0.0 { scale * 1e-12 } else { ridge * 10.0 };
        if ridge > scale * 1e6 {
            return -e.grad.clone() / scale;
        }
    }
}

/// Holdings maximizing expected utility at `prices`.
///
/// Solved by damped Newton iteration on the concave program with
/// backtracking line search; securities whose payoffs are spanned by
/// earlier ones in the market receive zero units.
pub fn demand(agent: &Agent, prices: &[f64], market: &Market, opts: &DemandOptions) -> Result<Holdings> {
    check_lengths(prices, prices, market)?;
    if agent.num_events() != market.num_events() {
        return Err(Error::invalid("agent and market use different event spaces"));
    }
    if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::UnboundedDemand(format!("price {p} is not strictly inside (0, 1)")));
    }
    let s_count = market.len();
    if s_count == 0 {
        return Ok(Vec::new());
    }
    let all: Vec<usize> = (0..s_count).collect();
    let full_payoffs = payoff_matrix(market, prices, &all);

    if let Utility::Linear = agent.utility {
        let res = foc_residuals(agent, &agent.endowment, &full_payoffs);
        if res.iter().all(|r| r.abs() <= opts.foc_tol) {
            return Ok(vec![0.0; s_count]);
        }
        return Err(Error::UnboundedDemand(
            "a risk-neutral agent trades without bound unless prices equal its beliefs".into(),
        ));
    }

    let support: Vec<usize> = agent
        .belief
        .states()
        .filter(|(_, p)| *p > 0.0)
        .map(|(s, _)| s.0)
        .collect();
    let structured_interior = market.structure().is_some() && support.len() == market.num_states();
    if !structured_interior && !admits_state_prices(&support, &full_payoffs) {
        return Err(Error::UnboundedDemand("prices admit a riskless profit".into()));
    }

    let basis = market.basis(BasisOrder::Listed);
    let payoffs: Vec<Vec<f64>> = basis.iter().map(|&k| full_payoffs[k].clone()).collect();
    let obj = Objective {
        agent,
        payoffs: &payoffs,
        support: &support,
    };

    let mut x = DVector::from_iterator(
        basis.len(),
        basis
            .iter()
            .map(|&k| opts.initial.as_ref().map_or(0.0, |h| h.get(k).copied().unwrap_or(0.0))),
    );
    let mut current = match obj.eval(&x) {
        Some(e) => e,
        None => {
            x.fill(0.0);
            obj.eval(&x).ok_or_else(|| {
                Error::InfeasibleProblem("endowment is outside the utility's wealth domain".into())
            })?
        }
    };

    let finish = |x: &DVector<f64>| {
        let mut out = vec![0.0; s_count];
        for (&k, &v) in basis.iter().zip(x.iter()) {
            out[k] = v;
        }
        out
    };
    for _ in 0..opts.max_iter {
        if current.residual <= opts.foc_tol {
            // a couple of extra full steps take the residual to rounding level
            for _ in 0..2 {
                let trial = &x + newton_direction(&current);
                match obj.eval(&trial) {
                    Some(e) if e.residual < current.residual => {
                        x = trial;
                        current = e;
                    }
                    _ => break,
                }
            }
            return Ok(finish(&x));
        }
        let d = newton_direction(&current);
        let slope = current.grad.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-16 {
            let trial = &x + &d * t;
            if let Some(e) = obj.eval(&trial) {
                let armijo = e.value <= current.value + 1e-4 * t * slope;
                // near the optimum objective differences vanish below rounding
                let flat = (e.value - current.value).abs() <= 1e-13 * (1.0 + current.value.abs())
                    && e.residual < current.residual;
                if armijo || flat {
                    accepted = Some((trial, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, e)) = accepted else {
            return Err(Error::NoConvergence {
                iterations: 0,
                residual: current.residual,
                best: None,
            });
        };
        x = next;
        current = e;
        if x.amax() > opts.max_position {
            return Err(Error::UnboundedDemand(format!(
                "position exceeded {:e} units",
                opts.max_position
            )));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: current.residual,
        best: None,
    })
}
