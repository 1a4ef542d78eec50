//! Conditional securities, D-structured market construction and
//! completeness-by-rank.
//!
//! A security `<P | C>` bought at price `p` pays `1 - p` per unit when both
//! `P` and `C` occur, `-p` when `C` occurs without `P`, and nothing when `C`
//! fails: the bet is called off and the price refunded. Selling (negative
//! units) mirrors this with the sign flipped.

use std::fmt;
use std::sync::OnceLock;

use crate::bayesnet::Dag;
use crate::error::{Error, Result};
use crate::joint::{EventExpr, EventSpace, WorldState};
use crate::linalg::{self, EchelonBasis, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Security {
    payoff: EventExpr,
    condition: EventExpr,
}

impl Security {
    pub fn new(payoff: EventExpr, condition: EventExpr) -> Result<Self> {
        if payoff.is_sure() {
            return Err(Error::invalid("payoff event must not be the sure event"));
        }
        if payoff.shares_event_with(&condition) {
            return Err(Error::invalid(
                "payoff and condition events must not share an event",
            ));
        }
        Ok(Self { payoff, condition })
    }

    pub fn unconditional(payoff: EventExpr) -> Result<Self> {
        Self::new(payoff, EventExpr::SURE)
    }

    /// `<A_event>`.
    pub fn base(event: usize) -> Self {
        Self {
            payoff: EventExpr::literal(event, true),
            condition: EventExpr::SURE,
        }
    }

    pub fn payoff(&self) -> &EventExpr {
        &self.payoff
    }

    pub fn condition(&self) -> &EventExpr {
        &self.condition
    }

    pub fn is_conditional(&self) -> bool {
        !self.condition.is_sure()
    }

    pub fn fits(&self, num_events: usize) -> bool {
        self.payoff.fits(num_events) && self.condition.fits(num_events)
    }

    /// Net monetary payoff of holding `units` bought at `price` in `state`.
    #[inline]
    pub fn settle(&self, price: f64, units: f64, state: WorldState) -> f64 {
        if !self.condition.matches(state) {
            0.0
        } else if self.payoff.matches(state) {
            units * (1.0 - price)
        } else {
            -units * price
        }
    }

    /// Per-unit net payoff at `price` in every state.
    pub fn net_payoff(&self, price: f64, num_events: usize) -> Vec<f64> {
        (0..1usize << num_events)
            .map(|s| self.settle(price, 1.0, WorldState(s)))
            .collect()
    }

    /// Indicator of `payoff ∧ condition`.
    pub fn win_indicator(&self, num_events: usize) -> Vec<f64> {
        let both = self.payoff.and(&self.condition).expect("disjoint events");
        both.indicator(num_events)
    }

    /// Indicator of `condition` (the live states).
    pub fn live_indicator(&self, num_events: usize) -> Vec<f64> {
        self.condition.indicator(num_events)
    }

    /// Parses `A2|A1`, `A3|!A2`, `A1&A2`.
    pub fn parse(s: &str, space: &EventSpace) -> Result<Self> {
        let (payoff, condition) = match s.split_once('|') {
            Some((p, c)) => (p, c),
            None => (s, ""),
        };
        if condition.contains('|') {
            return Err(Error::Parse(format!("security {s:?} has two '|'")));
        }
        let payoff = EventExpr::parse(payoff, space)?;
        let condition = EventExpr::parse(condition, space)?;
        Self::new(payoff, condition).map_err(|e| Error::Parse(format!("security {s:?}: {e}")))
    }

    /// Canonical string: literals in ascending event order, no whitespace.
    pub fn display<'a>(&'a self, space: &'a EventSpace) -> impl fmt::Display + 'a {
        DisplaySecurity {
            security: self,
            space,
        }
    }

    pub fn to_canonical(&self, space: &EventSpace) -> String {
        self.display(space).to_string()
    }
}

struct DisplaySecurity<'a> {
    security: &'a Security,
    space: &'a EventSpace,
}

impl fmt::Display for DisplaySecurity<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.security.payoff.display(self.space))?;
        if self.security.is_conditional() {
            write!(f, "|{}", self.security.condition.display(self.space))?;
        }
        Ok(())
    }
}

/// Which securities to prefer when choosing a linearly independent subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisOrder {
    /// Market order: later securities are dropped when spanned by earlier ones.
    Listed,
    /// Grouped by payoff (ordered by its highest event), with conditional
    /// securities ahead of the unconditional one in each group, so a spanned
    /// `<A_k>` yields to conditionals on `A_k`.
    ConditionalFirst,
}

#[derive(Debug)]
pub struct Market {
    space: EventSpace,
    securities: Vec<Security>,
    structure: Option<Dag>,
    listed_basis: OnceLock<Vec<usize>>,
    conditional_basis: OnceLock<Vec<usize>>,
}

impl Clone for Market {
    fn clone(&self) -> Self {
        Self {
            space: self.space.clone(),
            securities: self.securities.clone(),
            structure: self.structure.clone(),
            listed_basis: self.listed_basis.clone(),
            conditional_basis: self.conditional_basis.clone(),
        }
    }
}

impl PartialEq for Market {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space
            && self.securities == other.securities
            && self.structure == other.structure
    }
}

impl Market {
    pub fn new(space: EventSpace, securities: Vec<Security>) -> Result<Self> {
        let m = space.len();
        for (i, s) in securities.iter().enumerate() {
            if !s.fits(m) {
                return Err(Error::invalid(format!("security {i} refers to an unknown event")));
            }
            if securities[..i].contains(s) {
                return Err(Error::invalid(format!(
                    "duplicate security {}",
                    s.display(&space)
                )));
            }
        }
        Ok(Self::from_parts(space, securities, None))
    }

    fn from_parts(space: EventSpace, securities: Vec<Security>, structure: Option<Dag>) -> Self {
        Self {
            space,
            securities,
            structure,
            listed_basis: OnceLock::new(),
            conditional_basis: OnceLock::new(),
        }
    }

    /// One security `<A_j | parent assignment>` per CPT row of `dag`, ordered
    /// node-major with parent rows ascending.
    pub fn structured(space: EventSpace, dag: Dag) -> Result<Self> {
        if dag.num_events() != space.len() {
            return Err(Error::invalid(format!(
                "DAG has {} nodes but the space has {} events",
                dag.num_events(),
                space.len()
            )));
        }
        let mut securities = Vec::with_capacity(dag.num_rows());
        for k in 0..dag.num_events() {
            for row in 0..1usize << dag.in_degree(k) {
                securities.push(Security {
                    payoff: EventExpr::literal(k, true),
                    condition: dag.parent_assignment(k, row),
                });
            }
        }
        Ok(Self::from_parts(space, securities, Some(dag)))
    }

    /// Structured market on the fully connected DAG (complete).
    pub fn complete(space: EventSpace) -> Self {
        let m = space.len();
        Self::structured(space, Dag::fully_connected(m)).expect("sizes agree")
    }

    pub fn empty(space: EventSpace) -> Self {
        Self::from_parts(space, Vec::new(), None)
    }

    /// `<A_1> .. <A_M>`.
    pub fn base(space: EventSpace) -> Self {
        let securities = (0..space.len()).map(Security::base).collect();
        Self::from_parts(space, securities, None)
    }

    pub fn space(&self) -> &EventSpace {
        &self.space
    }

    pub fn num_events(&self) -> usize {
        self.space.len()
    }

    pub fn num_states(&self) -> usize {
        self.space.num_states()
    }

    pub fn securities(&self) -> &[Security] {
        &self.securities
    }

    pub fn len(&self) -> usize {
        self.securities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.securities.is_empty()
    }

    pub fn structure(&self) -> Option<&Dag> {
        self.structure.as_ref()
    }

    pub fn position(&self, security: &Security) -> Option<usize> {
        self.securities.iter().position(|s| s == security)
    }

    pub fn contains(&self, security: &Security) -> bool {
        self.position(security).is_some()
    }

    /// A copy with `security` appended; the result carries no structure.
    pub fn with_security(&self, security: Security) -> Result<Self> {
        let mut securities = self.securities.clone();
        securities.push(security);
        Self::new(self.space.clone(), securities)
    }

    /// A copy with the securities at `indices` removed.
    pub fn without(&self, indices: &[usize]) -> Self {
        let securities = self
            .securities
            .iter()
            .enumerate()
            .filter(|(i, _)| !indices.contains(i))
            .map(|(_, s)| *s)
            .collect();
        Self::from_parts(self.space.clone(), securities, None)
    }

    /// Sub-market with the securities at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let securities = indices.iter().map(|&i| self.securities[i]).collect();
        let structure = if indices.len() == self.len() && indices.iter().enumerate().all(|(a, &b)| a == b) {
            self.structure.clone()
        } else {
            None
        };
        Self::from_parts(self.space.clone(), securities, structure)
    }

    pub fn names(&self) -> Vec<String> {
        self.securities
            .iter()
            .map(|s| s.to_canonical(&self.space))
            .collect()
    }

    /// Indices of a maximal subset whose net payoffs are linearly independent
    /// at coherent prices.
    ///
    /// Independence is tested at the prices implied by a fixed generic,
    /// strictly positive state distribution, so the result reflects the
    /// payoff structure rather than any particular price vector.
    pub fn basis(&self, order: BasisOrder) -> &[usize] {
        let cell = match order {
            BasisOrder::Listed => &self.listed_basis,
            BasisOrder::ConditionalFirst => &self.conditional_basis,
        };
        cell.get_or_init(|| {
            if self.structure.is_some() {
                // structured securities are independent at every interior price
                return (0..self.len()).collect();
            }
            let mut idx: Vec<usize> = (0..self.len()).collect();
            if order == BasisOrder::ConditionalFirst {
                idx.sort_by_key(|&i| {
                    let sec = &self.securities[i];
                    (31 - sec.payoff().mask().leading_zeros(), !sec.is_conditional())
                });
            }
            let weights = generic_weights(self.num_states());
            let mut basis = EchelonBasis::new(self.num_states());
            let mut keep: Vec<usize> = idx
                .into_iter()
                .filter(|&i| basis.insert(&generic_net_payoff(&self.securities[i], &weights)))
                .collect();
            keep.sort_unstable();
            keep
        })
    }

    pub fn has_redundancy(&self) -> bool {
        self.basis(BasisOrder::Listed).len() < self.len()
    }
}

/// Fixed pseudo-random positive integer weights per state.
fn generic_weights(n: usize) -> Vec<Rational> {
    (0..n as u64)
        .map(|s| {
            let mut z = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            linalg::rational_int(((z >> 34) + 1) as i64)
        })
        .collect()
}

fn generic_net_payoff(sec: &Security, weights: &[Rational]) -> Vec<Rational> {
    let win = sec.payoff.and(&sec.condition).expect("disjoint events");
    let mut both = Rational::from_integer(0.into());
    let mut live = both.clone();
    for (s, w) in weights.iter().enumerate() {
        let st = WorldState(s);
        if sec.condition.matches(st) {
            live += w;
            if win.matches(st) {
                both += w;
            }
        }
    }
    let price = both / live;
    (0..weights.len())
        .map(|s| {
            let st = WorldState(s);
            let mut v = Rational::from_integer(0.into());
            if win.matches(st) {
                v += linalg::one();
            }
            if sec.condition.matches(st) {
                v -= &price;
            }
            v
        })
        .collect()
}

pub fn settle(sec: &Security, price: f64, units: f64, state: WorldState) -> f64 {
    sec.settle(price, units, state)
}

pub fn structured_market(dag: &Dag) -> Market {
    let space = EventSpace::with_count(dag.num_events()).expect("DAG size is valid");
    Market::structured(space, dag.clone()).expect("sizes agree")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletenessReport {
    /// Rank of the indicator span minus the constant direction.
    pub rank: usize,
    pub complete: bool,
}

/// The indicator vectors (`1`, and per security `1_{P∧C}`, `1_C`).
pub fn indicator_rows(market: &Market) -> Vec<Vec<Rational>> {
    let m = market.num_events();
    let mut rows = vec![vec![linalg::one(); market.num_states()]];
    for s in market.securities() {
        rows.push(linalg::indicator_vec(&s.win_indicator(m)));
        rows.push(linalg::indicator_vec(&s.live_indicator(m)));
    }
    rows
}

pub fn completeness_rank(market: &Market) -> CompletenessReport {
    let raw = linalg::rank(&indicator_rows(market));
    CompletenessReport {
        rank: raw - 1,
        complete: raw == market.num_states(),
    }
}
