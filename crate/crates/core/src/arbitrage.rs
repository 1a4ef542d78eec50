//! Implied pricing from a structured market's quotes, and detection of
//! profitable trades against a mispriced outside quote.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{EventSpace, WorldState};
use crate::linalg::{self, EchelonBasis, Rational};
use crate::securities::{indicator_rows, Market, Security};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quote {
    pub security: Security,
    pub price: f64,
}

impl Quote {
    pub fn new(security: Security, price: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&price) {
            return Err(Error::invalid(format!("quote price {price} is outside [0, 1]")));
        }
        Ok(Self { security, price })
    }

    /// Parses `<security>=<price>`, e.g. `A2|A1=0.4`.
    pub fn parse(s: &str, space: &EventSpace) -> Result<Self> {
        let (sec, price) = s
            .rsplit_once('=')
            .ok_or_else(|| Error::Parse(format!("quote `{s}` is not of the form <security>=<price>")))?;
        let price: f64 = price
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("quote price `{price}` is not a number")))?;
        Self::new(Security::parse(sec.trim(), space)?, price)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Buy from the quoting party (quote below the implied price).
    Buy,
    Sell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArbitrageKind {
    None,
    /// Riskless: trade `quote_units` of the quoted security and `hedge` in
    /// the market. Profit is `guaranteed_profit` in every state where the
    /// quoted security's condition holds, and zero where it is called off.
    Replicable {
        quote_units: f64,
        hedge: Vec<f64>,
        guaranteed_profit: f64,
        /// Enumerated profit per state.
        state_profits: Vec<f64>,
    },
    /// Not replicable from the market: trade with the quoting party and lay
    /// off the position with agents at `p_star`.
    #[serde(rename = "rn_profit")]
    RNProfit { direction: Direction, p_star: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageReport {
    pub implied: f64,
    pub quoted: f64,
    #[serde(flatten)]
    pub kind: ArbitrageKind,
}

/// Chain-rule state distribution of a structured market's quotes, exactly.
pub fn implied_distribution_exact(prices: &[f64], market: &Market) -> Result<Vec<Rational>> {
    let dag = market.structure().ok_or(Error::MissingStructure)?;
    if prices.len() != market.len() {
        return Err(Error::invalid("price vector does not match the market"));
    }
    if let Some(p) = prices.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("price {p} is outside [0, 1]")));
    }
    let mut offsets = Vec::with_capacity(dag.num_events());
    let mut at = 0;
    for k in 0..dag.num_events() {
        offsets.push(at);
        at += 1 << dag.in_degree(k);
    }
    let rows: Vec<Rational> = prices.iter().map(|&p| linalg::rational(p)).collect();
    let one = linalg::one();
    Ok((0..market.num_states())
        .map(|s| {
            let st = WorldState(s);
            (0..dag.num_events()).fold(one.clone(), |acc, k| {
                let p = &rows[offsets[k] + dag.row_of(k, st)];
                if st.holds(k) {
                    acc * p
                } else {
                    acc * (&one - p)
                }
            })
        })
        .collect())
}

fn exact_conditional(dist: &[Rational], target: &Security) -> Result<Rational> {
    let win = target
        .payoff()
        .and(target.condition())
        .expect("security events are disjoint");
    let mut live = Rational::zero();
    let mut both = Rational::zero();
    for (s, p) in dist.iter().enumerate() {
        let st = WorldState(s);
        if target.condition().matches(st) {
            live += p;
            if win.matches(st) {
                both += p;
            }
        }
    }
    if live.is_zero() {
        return Err(Error::ZeroConditioningEvent);
    }
    Ok(both / live)
}

/// Price of `target` implied by the market's quotes and its structure.
pub fn implied_price(prices: &[f64], market: &Market, target: &Security) -> Result<f64> {
    let dist = implied_distribution_exact(prices, market)?;
    Ok(linalg::to_f64(&exact_conditional(&dist, target)?))
}

/// Compares an outside quote against the implied price and constructs the
/// corresponding trade.
pub fn detect(prices: &[f64], market: &Market, quote: &Quote, tol: f64) -> Result<ArbitrageReport> {
    let m = market.num_events();
    if !quote.security.fits(m) {
        return Err(Error::invalid("quoted security refers to an unknown event"));
    }
    let dist = implied_distribution_exact(prices, market)?;
    let pi = exact_conditional(&dist, &quote.security)?;
    let implied = linalg::to_f64(&pi);
    let quoted = quote.price;
    let report = |kind| ArbitrageReport {
        implied,
        quoted,
        kind,
    };
    if (quoted - implied).abs() <= tol {
        return Ok(report(ArbitrageKind::None));
    }
    let sell_quote = quoted > implied;

    let win = linalg::indicator_vec(&quote.security.win_indicator(m));
    let live = linalg::indicator_vec(&quote.security.live_indicator(m));
    let mut span = EchelonBasis::new(market.num_states());
    for row in indicator_rows(market) {
        span.insert(&row);
    }
    if span.contains(&win) && span.contains(&live) {
        let columns: Vec<Vec<Rational>> = market
            .securities()
            .iter()
            .zip(prices)
            .map(|(sec, &p)| {
                let p = linalg::rational(p);
                let w = linalg::indicator_vec(&sec.win_indicator(m));
                let l = linalg::indicator_vec(&sec.live_indicator(m));
                w.into_iter().zip(l).map(|(a, b)| a - &p * b).collect()
            })
            .collect();
        let target: Vec<Rational> = win.iter().zip(&live).map(|(a, b)| a - &pi * b).collect();
        if let Some(y) = linalg::solve(&columns, &target) {
            let sign = if sell_quote { 1.0 } else { -1.0 };
            let hedge: Vec<f64> = y.iter().map(|v| sign * linalg::to_f64(v)).collect();
            let quote_units = -sign;
            let state_profits: Vec<f64> = (0..market.num_states())
                .map(|s| {
                    let st = WorldState(s);
                    let hedged: f64 = market
                        .securities()
                        .iter()
                        .zip(prices)
                        .zip(&hedge)
                        .map(|((sec, &p), &x)| sec.settle(p, x, st))
                        .sum();
                    hedged + quote.security.settle(quoted, quote_units, st)
                })
                .collect();
            return Ok(report(ArbitrageKind::Replicable {
                quote_units,
                hedge,
                guaranteed_profit: (quoted - implied).abs(),
                state_profits,
            }));
        }
    }
    Ok(report(ArbitrageKind::RNProfit {
        direction: if sell_quote { Direction::Sell } else { Direction::Buy },
        p_star: (quoted + implied) / 2.0,
    }))
}
