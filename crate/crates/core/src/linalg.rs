//! Exact rational linear algebra for rank, span membership and replication.
//!
//! Payoff structures here are 0/1 indicator vectors plus price-weighted
//! combinations of them. Prices enter as exact binary fractions (every `f64`
//! is one), so elimination never has to guess whether a pivot is zero.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub fn rational(x: f64) -> Rational {
    BigRational::from_float(x).expect("finite value")
}

pub fn rational_int(x: i64) -> Rational {
    BigRational::from_integer(BigInt::from(x))
}

pub fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn indicator_vec(v: &[f64]) -> Vec<Rational> {
    v.iter().map(|&x| rational(x)).collect()
}

/// Incrementally maintained row-echelon basis of a subspace of `Q^n`.
#[derive(Clone, Debug)]
pub struct EchelonBasis {
    // each row is normalized with a leading 1 at `pivots[i]`
    rows: Vec<Vec<Rational>>,
    pivots: Vec<usize>,
    dim: usize,
}

impl EchelonBasis {
    pub fn new(dim: usize) -> Self {
        Self {
            rows: Vec::new(),
            pivots: Vec::new(),
            dim,
        }
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    fn reduce(&self, v: &[Rational]) -> Vec<Rational> {
        let mut v = v.to_vec();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            if v[p].is_zero() {
                continue;
            }
            let f = v[p].clone();
            for (x, r) in v.iter_mut().zip(row).skip(p) {
                if !r.is_zero() {
                    *x -= &f * r;
                }
            }
        }
        v
    }

    pub fn contains(&self, v: &[Rational]) -> bool {
        self.reduce(v).iter().all(Zero::is_zero)
    }

    /// Adds `v`; returns whether it was independent of the current span.
    pub fn insert(&mut self, v: &[Rational]) -> bool {
        assert_eq!(v.len(), self.dim);
        let mut r = self.reduce(v);
        let Some(p) = r.iter().position(|x| !x.is_zero()) else {
            return false;
        };
        let inv = r[p].recip();
        for x in r.iter_mut().skip(p) {
            *x *= &inv;
        }
        // keep earlier rows reduced at the new pivot so `reduce` stays one pass
        for row in &mut self.rows {
            if !row[p].is_zero() {
                let f = row[p].clone();
                for (x, y) in row.iter_mut().zip(&r).skip(p) {
                    if !y.is_zero() {
                        *x -= &f * y;
                    }
                }
            }
        }
        self.rows.push(r);
        self.pivots.push(p);
        true
    }
}

pub fn rank(vectors: &[Vec<Rational>]) -> usize {
    let Some(first) = vectors.first() else {
        return 0;
    };
    let mut basis = EchelonBasis::new(first.len());
    for v in vectors {
        basis.insert(v);
    }
    basis.rank()
}

/// Finds coefficients `c` with `sum_i c_i * columns[i] = target`, if any.
/// Free variables are set to zero.
pub fn solve(columns: &[Vec<Rational>], target: &[Rational]) -> Option<Vec<Rational>> {
    let n = target.len();
    let k = columns.len();
    // augmented matrix, one row per coordinate
    let mut a: Vec<Vec<Rational>> = (0..n)
        .map(|i| {
            let mut row: Vec<Rational> = columns.iter().map(|c| c[i].clone()).collect();
            row.push(target[i].clone());
            row
        })
        .collect();

    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..k {
        let Some(p) = (r..n).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, p);
        let inv = a[r][c].recip();
        for x in a[r].iter_mut().skip(c) {
            *x *= &inv;
        }
        let pivot_row = a[r].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c].clone();
                for (x, y) in row.iter_mut().zip(&pivot_row).skip(c) {
                    if !y.is_zero() {
                        *x -= &f * y;
                    }
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
        if r == n {
            break;
        }
    }
    if a[r..].iter().any(|row| !row[k].is_zero()) {
        return None;
    }
    let mut x = vec![Rational::zero(); k];
    for (i, &c) in pivot_cols.iter().enumerate() {
        x[c] = a[i][k].clone();
    }
    Some(x)
}

pub fn max_abs(v: &[Rational]) -> Rational {
    v.iter().map(|x| x.abs()).fold(Rational::zero(), |a, b| if b > a { b } else { a })
}

pub fn one() -> Rational {
    Rational::one()
}
