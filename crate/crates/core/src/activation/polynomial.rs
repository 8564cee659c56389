//! Rational-coefficient polynomials on [0, 1] and their enumeration.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rational {
    pub num: i64,
    pub den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Rational {
    pub const ZERO: Rational = Rational { num: 0, den: 1 };

    /// Reduced fraction; `den` must be nonzero.
    pub fn new(num: i64, den: u64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num.unsigned_abs(), den).max(1);
        Rational {
            num: num / g as i64,
            den: den / g,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// max(|num|, den) of the reduced fraction.
    pub fn height(&self) -> u64 {
        self.num.unsigned_abs().max(self.den)
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Polynomial with rational coefficients, constant term first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<Rational>,
}

impl Polynomial {
    /// Trailing zero coefficients are dropped.
    pub fn new(mut coeffs: Vec<Rational>) -> Self {
        while coeffs.len() > 1 && coeffs.last().is_some_and(Rational::is_zero) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(Rational::ZERO);
        }
        Polynomial { coeffs }
    }

    pub fn from_integers(coeffs: &[i64]) -> Self {
        Polynomial::new(coeffs.iter().map(|&c| Rational::new(c, 1)).collect())
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Rational::is_zero)
    }

    pub fn height(&self) -> u64 {
        self.coeffs.iter().map(Rational::height).max().unwrap_or(0)
    }

    pub fn nonzero_terms(&self) -> usize {
        self.coeffs.iter().filter(|c| !c.is_zero()).count()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c.to_f64())
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, c)| acc * x + i as f64 * c.to_f64())
    }

    /// max |p| over [0, 1]: 1001-point grid, then golden-section refinement
    /// around every grid-local maximum.
    pub fn sup_norm(&self) -> f64 {
        const N: usize = 1000;
        let xs: Vec<f64> = (0..=N).map(|i| i as f64 / N as f64).collect();
        let vals: Vec<f64> = xs.iter().map(|&x| self.eval(x).abs()).collect();
        let mut best = vals.iter().cloned().fold(0.0, f64::max);
        for i in 1..N {
            if vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1] {
                let v = golden_max(|x| self.eval(x).abs(), xs[i - 1], xs[i + 1], 1e-12);
                best = best.max(v);
            }
        }
        best
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    f1.max(f2).max(f(lo)).max(f(hi))
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() && !(self.is_zero() && i == 0) {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match i {
                0 => write!(f, "{c}")?,
                1 => write!(f, "({c})x")?,
                _ => write!(f, "({c})x^{i}")?,
            }
        }
        Ok(())
    }
}

/// Deterministic enumeration of all nonzero rational polynomials.
///
/// Stage `h = 1, 2, ...` holds the polynomials whose degree, coefficient
/// height and number of nonzero terms are all at most `h`, with at least one
/// of them equal to `h`. Inside a stage the order is degree-major
/// (descending), then height, then term count, then the coefficient ranks
/// read from the leading coefficient down. Rationals are ranked by height,
/// positives before negatives, then by magnitude. The first entry is `x`.
#[derive(Debug, Clone, Default)]
pub struct PolynomialEnumerator {
    stage: u64,
    buffer: VecDeque<Polynomial>,
}

impl PolynomialEnumerator {
    pub fn new() -> Self {
        Self::default()
    }
}

fn ranked_rationals(max_height: u64) -> Vec<Rational> {
    let h = max_height as i64;
    let mut out = Vec::new();
    for den in 1..=max_height {
        for num in -h..=h {
            if num != 0 && gcd(num.unsigned_abs(), den) == 1 {
                out.push(Rational { num, den });
            }
        }
    }
    out.sort_by(|a, b| {
        (a.height(), a.num < 0)
            .cmp(&(b.height(), b.num < 0))
            .then(a.to_f64().abs().total_cmp(&b.to_f64().abs()))
    });
    out.insert(0, Rational::ZERO);
    out
}

fn build_stage(h: u64) -> Vec<Polynomial> {
    let rats = ranked_rationals(h);
    let r = rats.len();
    let mut out = Vec::new();
    for degree in (0..=h as usize).rev() {
        let len = degree + 1;
        let mut group: Vec<((u64, usize, Vec<usize>), Polynomial)> = Vec::new();
        // ranks[0] is the leading coefficient
        let mut ranks = vec![0usize; len];
        ranks[0] = 1;
        loop {
            let nnz = ranks.iter().filter(|&&k| k != 0).count();
            let height = ranks.iter().map(|&k| rats[k].height()).max().unwrap_or(0);
            if nnz as u64 <= h && (degree as u64).max(height).max(nnz as u64) == h {
                let coeffs: Vec<Rational> = ranks.iter().rev().map(|&k| rats[k]).collect();
                group.push(((height, nnz, ranks.clone()), Polynomial::new(coeffs)));
            }
            // odometer, last position fastest
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                ranks[pos] += 1;
                if ranks[pos] < r {
                    break;
                }
                ranks[pos] = if pos == 0 { 1 } else { 0 };
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
        group.sort_by(|a, b| a.0.cmp(&b.0));
        out.extend(group.into_iter().map(|(_, p)| p));
    }
    out
}

impl Iterator for PolynomialEnumerator {
    type Item = Polynomial;

    fn next(&mut self) -> Option<Polynomial> {
        while self.buffer.is_empty() {
            self.stage += 1;
            self.buffer = build_stage(self.stage).into();
        }
        self.buffer.pop_front()
    }
}

/// The `k`-th polynomial (1-based) of [`PolynomialEnumerator`].
pub fn enumerate_rational_polynomials(k: usize) -> Polynomial {
    assert!(k >= 1, "enumeration is 1-based");
    PolynomialEnumerator::new()
        .nth(k - 1)
        .expect("enumeration is infinite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn first_is_x() {
        assert_eq!(enumerate_rational_polynomials(1), Polynomial::from_integers(&[0, 1]));
    }

    #[test]
    fn early_prefix() {
        let first: Vec<Polynomial> = PolynomialEnumerator::new().take(5).collect();
        assert_eq!(first[1], Polynomial::from_integers(&[0, -1]));
        assert_eq!(first[2], Polynomial::from_integers(&[1]));
        assert_eq!(first[3], Polynomial::from_integers(&[-1]));
        assert_eq!(first[4], Polynomial::from_integers(&[0, 0, 1]));
    }

    #[test]
    fn injective_and_nonzero_over_ten_thousand() {
        let polys: Vec<Polynomial> = PolynomialEnumerator::new().take(10_000).collect();
        assert!(polys.iter().all(|p| !p.is_zero()));
        let set: HashSet<&Polynomial> = polys.iter().collect();
        assert_eq!(set.len(), polys.len());
    }

    #[test]
    fn stage_contents_are_complete() {
        // stage 2: degree <= 2, height <= 2, at most 2 nonzero terms
        let s1 = build_stage(1);
        let s2 = build_stage(2);
        assert_eq!(s1.len(), 4);
        // 3 positions * 6 nonzero values + 3 pairs * 36 - stage 1
        assert_eq!(s2.len(), 3 * 6 + 3 * 36 - 4);
        assert!(s2.contains(&Polynomial::new(vec![Rational::new(1, 2), Rational::new(-2, 1)])));
    }

    #[test]
    fn sup_norm_examples() {
        assert!((Polynomial::from_integers(&[0, 1]).sup_norm() - 1.0).abs() < 1e-15);
        // x - x^2 peaks at 1/4 between grid points only if refinement works
        let p = Polynomial::from_integers(&[0, 1, -1]);
        assert!((p.sup_norm() - 0.25).abs() < 1e-14);
        // 1/3 - x peaks at x = 1 with value 2/3
        let q = Polynomial::new(vec![Rational::new(1, 3), Rational::new(-1, 1)]);
        assert!((q.sup_norm() - 2.0 / 3.0).abs() < 1e-15);
        // interior extremum off the grid: x^3 - x has |min| at 1/sqrt(3)
        let r = Polynomial::from_integers(&[0, -1, 0, 1]);
        let exact = 2.0 / (3.0 * 3f64.sqrt());
        assert!((r.sup_norm() - exact).abs() < 1e-14);
    }

    #[test]
    fn derivative_eval() {
        let p = Polynomial::from_integers(&[3, 0, 2, 1]);
        assert_eq!(p.eval_derivative(2.0), 4.0 * 2.0 + 3.0 * 4.0);
    }
}
