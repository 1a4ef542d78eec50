//! DAG structures over events, conditional probability tables and the
//! structural predicates (I-map, decomposability) that classify markets.
//!
//! Parents always carry a smaller index than their child, so every `Dag`
//! is acyclic by construction and event index order is a topological order.
//! A CPT row index packs the parent outcomes with the lowest-index parent as
//! the least significant bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{EventExpr, JointDistribution, WorldState, MAX_EVENTS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct Dag {
    parents: Vec<Vec<usize>>,
}

impl TryFrom<Vec<Vec<usize>>> for Dag {
    type Error = Error;
    fn try_from(parents: Vec<Vec<usize>>) -> Result<Self> {
        Dag::new(parents)
    }
}

impl From<Dag> for Vec<Vec<usize>> {
    fn from(d: Dag) -> Self {
        d.parents
    }
}

impl Dag {
    /// `parents[k]` lists the parents of event `k`; each must be `< k`.
    pub fn new(mut parents: Vec<Vec<usize>>) -> Result<Self> {
        if parents.is_empty() || parents.len() > MAX_EVENTS {
            return Err(Error::invalid(format!("bad event count {}", parents.len())));
        }
        for (k, pa) in parents.iter_mut().enumerate() {
            pa.sort_unstable();
            if pa.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("node {k} has a duplicate parent")));
            }
            if let Some(&bad) = pa.iter().find(|&&p| p >= k) {
                return Err(Error::invalid(format!(
                    "parent {bad} of node {k} does not precede it"
                )));
            }
        }
        Ok(Self { parents })
    }

    pub fn edgeless(m: usize) -> Self {
        Self {
            parents: vec![Vec::new(); m],
        }
    }

    pub fn chain(m: usize) -> Self {
        Self {
            parents: (0..m)
                .map(|k| if k == 0 { vec![] } else { vec![k - 1] })
                .collect(),
        }
    }

    pub fn fully_connected(m: usize) -> Self {
        Self {
            parents: (0..m).map(|k| (0..k).collect()).collect(),
        }
    }

    pub fn num_events(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self, k: usize) -> &[usize] {
        &self.parents[k]
    }

    pub fn all_parents(&self) -> &[Vec<usize>] {
        &self.parents
    }

    pub fn children(&self, k: usize) -> Vec<usize> {
        (k + 1..self.num_events())
            .filter(|&c| self.parents[c].contains(&k))
            .collect()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].contains(&from)
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    /// Number of parents of `k`.
    pub fn in_degree(&self, k: usize) -> usize {
        self.parents[k].len()
    }

    /// `sum_k 2^{q(k)}`: CPT rows, and securities in the structured market.
    pub fn num_rows(&self) -> usize {
        self.parents.iter().map(|pa| 1usize << pa.len()).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// The parent assignment with row index `row` as a conjunction.
    pub fn parent_assignment(&self, k: usize, row: usize) -> EventExpr {
        EventExpr::from_literals(
            self.parents[k]
                .iter()
                .enumerate()
                .map(|(bit, &p)| (p, row >> bit & 1 == 1)),
        )
        .expect("parents are distinct")
    }

    /// Row index of the parent outcomes of `k` in `state`.
    #[inline]
    pub fn row_of(&self, k: usize, state: WorldState) -> usize {
        self.parents[k]
            .iter()
            .enumerate()
            .fold(0, |row, (bit, &p)| row | (state.holds(p) as usize) << bit)
    }

    /// Every pair of parents sharing a child is adjacent.
    pub fn is_decomposable(&self) -> bool {
        self.parents.iter().all(|pa| {
            pa.iter()
                .enumerate()
                .all(|(i, &a)| pa[i + 1..].iter().all(|&b| self.adjacent(a, b)))
        })
    }

    /// Ordered Markov conditions: each node is independent of its
    /// non-parent predecessors given its parents.
    pub fn is_imap(&self, dist: &JointDistribution, tol: f64) -> bool {
        assert_eq!(dist.num_events(), self.num_events());
        (0..self.num_events()).all(|k| {
            let rest: Vec<usize> = (0..k).filter(|p| !self.parents[k].contains(p)).collect();
            rest.is_empty() || dist.check_ci(k, &self.parents[k], &rest, tol)
        })
    }

    /// Returns a copy with the edge `from -> to` added.
    pub fn with_edge(&self, from: usize, to: usize) -> Result<Self> {
        let mut parents = self.parents.clone();
        if !parents[to].contains(&from) {
            parents[to].push(from);
        }
        Dag::new(parents)
    }
}

/// `Pr(A_k = true | parent row)` for each node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    dag: Dag,
    cpts: Vec<Vec<f64>>,
}

impl BayesNet {
    pub fn new(dag: Dag, cpts: Vec<Vec<f64>>) -> Result<Self> {
        if cpts.len() != dag.num_events() {
            return Err(Error::invalid(format!(
                "expected {} CPTs, got {}",
                dag.num_events(),
                cpts.len()
            )));
        }
        for (k, rows) in cpts.iter().enumerate() {
            let want = 1usize << dag.in_degree(k);
            if rows.len() != want {
                return Err(Error::invalid(format!(
                    "CPT of node {k} needs {want} rows, got {}",
                    rows.len()
                )));
            }
            if let Some(p) = rows.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::invalid(format!("CPT of node {k} has entry {p}")));
            }
        }
        Ok(Self { dag, cpts })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn cpts(&self) -> &[Vec<f64>] {
        &self.cpts
    }

    pub fn cpt(&self, k: usize) -> &[f64] {
        &self.cpts[k]
    }

    /// Chain-rule product of matching CPT rows.
    pub fn joint(&self) -> JointDistribution {
        let m = self.dag.num_events();
        let probs: Vec<f64> = (0..1usize << m)
            .map(|s| {
                let state = WorldState(s);
                (0..m)
                    .map(|k| {
                        let q = self.cpts[k][self.dag.row_of(k, state)];
                        if state.holds(k) {
                            q
                        } else {
                            1.0 - q
                        }
                    })
                    .product()
            })
            .collect();
        // products of valid CPT rows sum to one up to rounding
        let total: f64 = probs.iter().sum();
        JointDistribution::new(m, probs.into_iter().map(|p| p / total).collect())
            .expect("chain-rule product is a distribution")
    }

    /// Exact inference by enumerating the joint table.
    pub fn infer(&self, target: &EventExpr, given: &EventExpr) -> Result<f64> {
        self.joint().conditional(target, given)
    }

    /// Projects `dist` onto `dag`. Parent rows with zero mass get 0.5.
    pub fn fit(dag: &Dag, dist: &JointDistribution) -> Self {
        let m = dag.num_events();
        assert_eq!(dist.num_events(), m);
        let cpts = (0..m)
            .map(|k| {
                let rows = 1usize << dag.in_degree(k);
                let mut mass = vec![0.0; rows];
                let mut hit = vec![0.0; rows];
                for (s, p) in dist.states() {
                    let r = dag.row_of(k, s);
                    mass[r] += p;
                    if s.holds(k) {
                        hit[r] += p;
                    }
                }
                mass.iter()
                    .zip(&hit)
                    .map(|(&mass, &hit)| if mass > 0.0 { (hit / mass).min(1.0) } else { 0.5 })
                    .collect()
            })
            .collect();
        Self {
            dag: dag.clone(),
            cpts,
        }
    }
}

/// Free-function aliases matching the operation names used elsewhere.
pub fn joint_from_bn(bn: &BayesNet) -> JointDistribution {
    bn.joint()
}

pub fn fit_cpts(dag: &Dag, dist: &JointDistribution) -> BayesNet {
    BayesNet::fit(dag, dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::DEFAULT_CI_TOL;

    fn chain2() -> BayesNet {
        BayesNet::new(Dag::chain(2), vec![vec![0.5], vec![0.2, 0.8]]).unwrap()
    }

    #[test]
    fn single_factor() {
        let bn = BayesNet::new(Dag::edgeless(1), vec![vec![0.7]]).unwrap();
        let j = bn.joint();
        assert!((j.probs()[0] - 0.3).abs() < 1e-15);
        assert!((j.probs()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn chain_joint_products() {
        let j = chain2().joint();
        // index = A1 + 2*A2
        let expect = [0.40, 0.10, 0.10, 0.40];
        for (p, e) in j.probs().iter().zip(expect) {
            assert!((p - e).abs() < 1e-15, "{p} vs {e}");
        }
        assert!((j.prob(&EventExpr::sure()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inference_examples() {
        let bn = chain2();
        let a1 = EventExpr::literal(0, true);
        let a2 = EventExpr::literal(1, true);
        assert!((bn.infer(&a2, &EventExpr::sure()).unwrap() - 0.5).abs() < 1e-15);
        // Bayes by hand: 0.5*0.8 / (0.5*0.8 + 0.5*0.2)
        assert!((bn.infer(&a1, &a2).unwrap() - 0.8).abs() < 1e-15);

        let v = BayesNet::new(
            Dag::new(vec![vec![], vec![], vec![0, 1]]).unwrap(),
            vec![vec![0.3], vec![0.6], vec![0.1, 0.5, 0.7, 0.9]],
        )
        .unwrap();
        let got = v.infer(&a1, &a2).unwrap();
        assert!((got - 0.3).abs() < 1e-14);
    }

    #[test]
    fn decomposability_examples() {
        assert!(Dag::chain(3).is_decomposable());
        assert!(Dag::fully_connected(3).is_decomposable());
        let v = Dag::new(vec![vec![], vec![], vec![0, 1]]).unwrap();
        assert!(!v.is_decomposable());
        assert!(v.with_edge(0, 1).unwrap().is_decomposable());
    }

    #[test]
    fn imap_examples() {
        let corr = JointDistribution::new(2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert!(Dag::fully_connected(2).is_imap(&corr, DEFAULT_CI_TOL));
        assert!(!Dag::edgeless(2).is_imap(&corr, DEFAULT_CI_TOL));

        let bn = BayesNet::new(Dag::chain(3), vec![vec![0.3], vec![0.2, 0.9], vec![0.4, 0.7]]).unwrap();
        assert!(Dag::chain(3).is_imap(&bn.joint(), DEFAULT_CI_TOL));
    }

    #[test]
    fn fit_examples() {
        let fitted = BayesNet::fit(&Dag::chain(2), &chain2().joint());
        assert!((fitted.cpt(1)[0] - 0.2).abs() < 1e-15);
        assert!((fitted.cpt(1)[1] - 0.8).abs() < 1e-15);

        let corr = JointDistribution::new(2, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let back = BayesNet::fit(&Dag::fully_connected(2), &corr).joint();
        assert!(back.max_abs_diff(&corr) < 1e-15);

        // edgeless structure forces independence: (0.25, 0.25, 0.25, 0.25) != corr
        let wrong = BayesNet::fit(&Dag::edgeless(2), &corr).joint();
        assert!((wrong.probs()[1] - 0.25).abs() < 1e-15);
        assert!(wrong.max_abs_diff(&corr) > 0.2);
    }

    #[test]
    fn zero_mass_rows_get_half() {
        let d = JointDistribution::new(2, vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let fitted = BayesNet::fit(&Dag::chain(2), &d);
        assert_eq!(fitted.cpt(1)[1], 0.5);
    }

    #[test]
    fn rejects_bad_structures() {
        assert!(Dag::new(vec![vec![1], vec![]]).is_err());
        assert!(Dag::new(vec![vec![], vec![0, 0]]).is_err());
        assert!(BayesNet::new(Dag::chain(2), vec![vec![0.5], vec![0.2]]).is_err());
        assert!(BayesNet::new(Dag::chain(2), vec![vec![1.3], vec![0.2, 0.4]]).is_err());
    }
}
