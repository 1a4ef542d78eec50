//! Event-factored state spaces, conjunctive event expressions and joint
//! distributions over binary events.
//!
//! Events are addressed by zero-based index `j`; the world state with index
//! `s` has event `j` true iff bit `j` of `s` is set. Labels (by default
//! `A1..AM`) are only used for parsing and display.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of primary events. Joint tables hold `2^M`
/// entries and every brute-force check enumerates them.
pub const MAX_EVENTS: usize = 20;

/// Default tolerance for conditional-independence tests.
pub const DEFAULT_CI_TOL: f64 = 1e-9;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EventSpace {
    labels: Vec<String>,
}

impl EventSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() || labels.len() > MAX_EVENTS {
            return Err(Error::invalid(format!(
                "event count must be in 1..={MAX_EVENTS}, got {}",
                labels.len()
            )));
        }
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty()
                || !label
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::invalid(format!("bad event label {label:?}")));
            }
            if labels[..i].contains(label) {
                return Err(Error::invalid(format!("duplicate event label {label:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Space with labels `A1..Am`.
    pub fn with_count(m: usize) -> Result<Self> {
        Self::new((1..=m).map(|j| format!("A{j}")).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_states(&self) -> usize {
        1 << self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, event: usize) -> &str {
        &self.labels[event]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn states(&self) -> impl Iterator<Item = WorldState> {
        (0..self.num_states()).map(WorldState)
    }
}

impl TryFrom<Vec<String>> for EventSpace {
    type Error = Error;
    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<EventSpace> for Vec<String> {
    fn from(space: EventSpace) -> Self {
        space.labels
    }
}

/// One world state: a full assignment of all events, as a bit index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorldState(pub usize);

impl WorldState {
    #[inline]
    pub fn holds(self, event: usize) -> bool {
        self.0 >> event & 1 == 1
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// A conjunction of literals. The empty conjunction is the sure event.
///
/// Stored as a pair of bitmasks: `mask` marks the constrained events and
/// `value` their required outcomes, so a state `s` satisfies the expression
/// iff `s & mask == value`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct EventExpr {
    mask: u32,
    value: u32,
}

impl EventExpr {
    pub const SURE: EventExpr = EventExpr { mask: 0, value: 0 };

    pub fn sure() -> Self {
        Self::SURE
    }

    pub fn literal(event: usize, outcome: bool) -> Self {
        assert!(event < MAX_EVENTS, "event index {event} out of range");
        let bit = 1u32 << event;
        Self {
            mask: bit,
            value: if outcome { bit } else { 0 },
        }
    }

    /// Builds a conjunction; fails if an event appears twice.
    pub fn from_literals<I>(literals: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, bool)>,
    {
        let mut expr = Self::SURE;
        for (event, outcome) in literals {
            if event >= MAX_EVENTS {
                return Err(Error::invalid(format!("event index {event} out of range")));
            }
            let bit = 1u32 << event;
            if expr.mask & bit != 0 {
                return Err(Error::invalid(format!("event {event} appears twice")));
            }
            expr.mask |= bit;
            if outcome {
                expr.value |= bit;
            }
        }
        Ok(expr)
    }

    /// The conjunction fixing every event in `events` to the outcome it has
    /// in `state`.
    pub fn restrict(events: &[usize], state: WorldState) -> Self {
        let mut expr = Self::SURE;
        for &e in events {
            expr.mask |= 1 << e;
            if state.holds(e) {
                expr.value |= 1 << e;
            }
        }
        expr
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn value(&self) -> u32 {
        self.value
    }

    pub fn is_sure(&self) -> bool {
        self.mask == 0
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    /// Literals in ascending event order.
    pub fn literals(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        (0..32usize)
            .filter(move |&j| self.mask >> j & 1 == 1)
            .map(move |j| (j, self.value >> j & 1 == 1))
    }

    pub fn events(&self) -> Vec<usize> {
        self.literals().map(|(j, _)| j).collect()
    }

    pub fn constrains(&self, event: usize) -> bool {
        self.mask >> event & 1 == 1
    }

    pub fn shares_event_with(&self, other: &EventExpr) -> bool {
        self.mask & other.mask != 0
    }

    #[inline]
    pub fn matches(&self, state: WorldState) -> bool {
        (state.0 as u32) & self.mask == self.value
    }

    /// Conjunction of two expressions; `None` if they contradict.
    pub fn and(&self, other: &EventExpr) -> Option<EventExpr> {
        let common = self.mask & other.mask;
        if self.value & common != other.value & common {
            return None;
        }
        Some(EventExpr {
            mask: self.mask | other.mask,
            value: self.value | other.value,
        })
    }

    pub fn fits(&self, num_events: usize) -> bool {
        (self.mask as u64) >> num_events == 0
    }

    /// 0/1 membership vector over all `2^m` states.
    pub fn indicator(&self, num_events: usize) -> Vec<f64> {
        (0..1usize << num_events)
            .map(|s| if self.matches(WorldState(s)) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn parse(s: &str, space: &EventSpace) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::SURE);
        }
        let mut literals = Vec::new();
        for part in s.split('&') {
            let part = part.trim();
            let (outcome, label) = match part.strip_prefix('!') {
                Some(rest) => (false, rest.trim()),
                None => (true, part),
            };
            let event = space
                .index_of(label)
                .ok_or_else(|| Error::Parse(format!("unknown event {label:?} in {s:?}")))?;
            literals.push((event, outcome));
        }
        Self::from_literals(literals).map_err(|e| Error::Parse(format!("{s:?}: {e}")))
    }

    pub fn display<'a>(&'a self, space: &'a EventSpace) -> impl fmt::Display + 'a {
        DisplayExpr { expr: self, space }
    }
}

struct DisplayExpr<'a> {
    expr: &'a EventExpr,
    space: &'a EventSpace,
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (event, outcome)) in self.expr.literals().enumerate() {
            if i > 0 {
                f.write_str("&")?;
            }
            if !outcome {
                f.write_str("!")?;
            }
            f.write_str(self.space.label(event))?;
        }
        Ok(())
    }
}

/// A normalized probability table over all `2^M` world states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct JointDistribution {
    num_events: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JointRepr {
    num_events: usize,
    probs: Vec<f64>,
}

impl TryFrom<JointRepr> for JointDistribution {
    type Error = Error;
    fn try_from(r: JointRepr) -> Result<Self> {
        JointDistribution::new(r.num_events, r.probs)
    }
}

impl From<JointDistribution> for JointRepr {
    fn from(d: JointDistribution) -> Self {
        JointRepr {
            num_events: d.num_events,
            probs: d.probs,
        }
    }
}

impl JointDistribution {
    /// Validates a table that must already be normalized.
    pub fn new(num_events: usize, probs: Vec<f64>) -> Result<Self> {
        if num_events == 0 || num_events > MAX_EVENTS {
            return Err(Error::invalid(format!("bad event count {num_events}")));
        }
        if probs.len() != 1 << num_events {
            return Err(Error::invalid(format!(
                "joint table for {num_events} events needs {} entries, got {}",
                1usize << num_events,
                probs.len()
            )));
        }
        if let Some((s, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::invalid(format!("state {s} has probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self { num_events, probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(num_events: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid(format!("weights sum to {total}")));
        }
        Self::new(num_events, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(num_events: usize) -> Self {
        let n = 1usize << num_events;
        Self {
            num_events,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn num_events(&self) -> usize {
        self.num_events
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p(&self, state: WorldState) -> f64 {
        self.probs[state.0]
    }

    pub fn states(&self) -> impl Iterator<Item = (WorldState, f64)> + '_ {
        self.probs.iter().enumerate().map(|(s, &p)| (WorldState(s), p))
    }

    /// Probability of a conjunctive event.
    pub fn prob(&self, e: &EventExpr) -> f64 {
        debug_assert!(e.fits(self.num_events));
        self.states()
            .filter(|(s, _)| e.matches(*s))
            .map(|(_, p)| p)
            .sum()
    }

    /// `Pr(target | given)`.
    pub fn conditional(&self, target: &EventExpr, given: &EventExpr) -> Result<f64> {
        let mut both = 0.0;
        let mut cond = 0.0;
        for (s, p) in self.states() {
            if given.matches(s) {
                cond += p;
                if target.matches(s) {
                    both += p;
                }
            }
        }
        if cond <= 0.0 {
            return Err(Error::ZeroConditioningEvent);
        }
        Ok((both / cond).min(1.0))
    }

    /// Tests `Pr(A_j | w, x) = Pr(A_j | w)` for every joint assignment of
    /// `w_set` and `x_set` with positive mass.
    pub fn check_ci(&self, j: usize, w_set: &[usize], x_set: &[usize], tol: f64) -> bool {
        debug_assert!(!w_set.contains(&j) && !x_set.contains(&j));
        debug_assert!(w_set.iter().all(|w| !x_set.contains(w)));
        let w_mask = mask_of(w_set);
        let wx_mask = w_mask | mask_of(x_set);

        // (mass, mass with A_j) per assignment
        let mut by_w: HashMap<u32, (f64, f64)> = HashMap::new();
        let mut by_wx: HashMap<u32, (f64, f64)> = HashMap::new();
        for (s, p) in self.states() {
            let hit = if s.holds(j) { p } else { 0.0 };
            let key = s.0 as u32;
            let a = by_w.entry(key & w_mask).or_default();
            a.0 += p;
            a.1 += hit;
            let b = by_wx.entry(key & wx_mask).or_default();
            b.0 += p;
            b.1 += hit;
        }
        by_wx.iter().all(|(key, &(mass, hit))| {
            if mass <= 0.0 {
                return true;
            }
            let (w_mass, w_hit) = by_w[&(key & w_mask)];
            (hit / mass - w_hit / w_mass).abs() <= tol
        })
    }

    /// Largest absolute difference between two tables.
    pub fn max_abs_diff(&self, other: &JointDistribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn mask_of(events: &[usize]) -> u32 {
    events.iter().fold(0u32, |m, &e| m | 1 << e)
}
