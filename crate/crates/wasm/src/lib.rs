//! Browser bindings for the market solver.
//!
//! Each export takes and returns JSON text. The `*_json` functions hold the
//! logic and run natively; the exported wrappers only convert errors.

use condmarket::{
    equilibrium,
    experiment::{execute, Command},
    scenario::parse_scenario,
};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Two CARA agents trading one event: the equilibrium price and agent a's
/// holding as agent b's belief sweeps across (0, 1).
pub fn price_curve_json(belief_a: f64, risk_a: f64, risk_b: f64, steps: usize) -> Result<String, String> {
    if !(belief_a > 0.0 && belief_a < 1.0) {
        return Err(format!("belief {belief_a} must lie strictly between 0 and 1"));
    }
    if steps < 2 {
        return Err("need at least two steps".into());
    }
    let mut points = Vec::with_capacity(steps);
    for i in 0..steps {
        let belief_b = 0.02 + 0.96 * i as f64 / (steps - 1) as f64;
        let doc = json!({
            "events": 1,
            "market": {"kind": "base"},
            "agents": [
                {"id": "a", "belief": {"kind": "joint", "probs": [1.0 - belief_a, belief_a]},
                 "utility": {"kind": "exponential", "c": risk_a}},
                {"id": "b", "belief": {"kind": "joint", "probs": [1.0 - belief_b, belief_b]},
                 "utility": {"kind": "exponential", "c": risk_b}}
            ],
            "solver": {"clear_tol": 1e-12}
        });
        let s = parse_scenario(&doc.to_string()).map_err(|e| e.to_string())?;
        let r = equilibrium::solve(&s.agents, &s.market, s.solver()).map_err(|e| e.to_string())?;
        points.push(json!({"belief_b": belief_b, "price": r.prices[0], "holding_a": r.allocations[0][0]}));
    }
    Ok(Value::Array(points).to_string())
}

/// Compact market against its fully connected benchmark.
pub fn compare_json(scenario: &str) -> Result<String, String> {
    let s = parse_scenario(scenario).map_err(|e| e.to_string())?;
    let report = execute(&s, &Command::Compare).map_err(|e| e.to_string())?;
    Ok(report.to_json())
}

/// Checks a quote such as `A1&A3=0.3` against the scenario's equilibrium.
pub fn check_quote_json(scenario: &str, quote: &str) -> Result<String, String> {
    let s = parse_scenario(scenario).map_err(|e| e.to_string())?;
    let command = Command::Arbitrage {
        quotes: vec![quote.trim().to_string()],
        tol: None,
    };
    let report = execute(&s, &command).map_err(|e| e.to_string())?;
    Ok(report.to_json())
}

#[wasm_bindgen]
pub fn price_curve(belief_a: f64, risk_a: f64, risk_b: f64, steps: usize) -> Result<String, JsError> {
    price_curve_json(belief_a, risk_a, risk_b, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare(scenario: &str) -> Result<String, JsError> {
    compare_json(scenario).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn check_quote(scenario: &str, quote: &str) -> Result<String, JsError> {
    check_quote_json(scenario, quote).map_err(|e| JsError::new(&e))
}
