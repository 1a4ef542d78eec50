//! Random structures, beliefs, endowments and populations.
//!
//! CPT entries are drawn from `[0.05, 0.95]` to stay away from degenerate
//! conditionals; endowment terms are drawn from `[-1, 1]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{Agent, EndowmentTerm, SeparableEndowment, Utility};
use crate::bayesnet::{BayesNet, Dag};
use crate::joint::JointDistribution;

pub const CPT_RANGE: (f64, f64) = (0.05, 0.95);

/// Independent stream `trial` of `seed`; the same trial always sees the same
/// numbers regardless of how trials are scheduled.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Tree: each node after the first has at most one earlier parent.
pub fn random_tree<R: Rng>(m: usize, rng: &mut R) -> Dag {
    let parents = (0..m)
        .map(|k| {
            if k > 0 && rng.random_bool(0.85) {
                vec![rng.random_range(0..k)]
            } else {
                Vec::new()
            }
        })
        .collect();
    Dag::new(parents).expect("parents precede children")
}

/// A chain or a tree, each with probability one half.
pub fn random_decomposable<R: Rng>(m: usize, rng: &mut R) -> Dag {
    if rng.random_bool(0.5) {
        Dag::chain(m)
    } else {
        random_tree(m, rng)
    }
}

pub fn random_bayesnet<R: Rng>(dag: &Dag, rng: &mut R) -> BayesNet {
    let cpts = (0..dag.num_events())
        .map(|k| {
            (0..1usize << dag.in_degree(k))
                .map(|_| rng.random_range(CPT_RANGE.0..=CPT_RANGE.1))
                .collect()
        })
        .collect();
    BayesNet::new(dag.clone(), cpts).expect("CPT shape matches the DAG")
}

/// A strictly positive joint with no structure.
pub fn random_joint<R: Rng>(m: usize, rng: &mut R) -> JointDistribution {
    let w = (0..1usize << m).map(|_| rng.random_range(0.05..1.0)).collect();
    JointDistribution::from_weights(m, w).expect("positive weights")
}

/// One term per family `{A_k} ∪ pa(A_k)`.
pub fn separable_endowment<R: Rng>(dag: &Dag, rng: &mut R) -> SeparableEndowment {
    SeparableEndowment {
        terms: (0..dag.num_events())
            .map(|k| {
                let mut events = dag.parents(k).to_vec();
                events.push(k);
                events.sort_unstable();
                let values = (0..1usize << events.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
                EndowmentTerm { events, values }
            })
            .collect(),
    }
}

/// One independent draw per state.
pub fn full_endowment<R: Rng>(m: usize, rng: &mut R) -> Vec<f64> {
    (0..1usize << m).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// CARA agents whose beliefs factor over `dag`, with separable endowments.
pub fn cara_population<R: Rng>(dag: &Dag, n: usize, rng: &mut R) -> Vec<Agent> {
    (0..n)
        .map(|i| {
            let belief = random_bayesnet(dag, rng).joint();
            let c = rng.random_range(0.5..=2.0);
            let endowment = separable_endowment(dag, rng)
                .to_state_vector(dag.num_events())
                .expect("terms fit the DAG");
            Agent::with_endowment(format!("agent{}", i + 1), belief, Utility::Exponential { c }, endowment)
                .expect("CARA agents accept any endowment")
        })
        .collect()
}

/// CARA agents with unstructured beliefs and endowments.
pub fn cara_population_unstructured<R: Rng>(m: usize, n: usize, rng: &mut R) -> Vec<Agent> {
    (0..n)
        .map(|i| {
            let belief = random_joint(m, rng);
            let c = rng.random_range(0.5..=2.0);
            let endowment = full_endowment(m, rng);
            Agent::with_endowment(format!("agent{}", i + 1), belief, Utility::Exponential { c }, endowment)
                .expect("CARA agents accept any endowment")
        })
        .collect()
}
