//! Exact linear algebra over any field implementing `num_traits::Num`,
//! used with [`crate::Rational`] to reproduce reference gains without
//! rounding.

use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{Num, Zero};

use crate::Rational;

/// Row-major dense matrix over an exact field.
pub type ExactMatrix<F> = Vec<Vec<F>>;

/// Solves `f * v = w` for `f` by Gauss-Jordan elimination on `vᵀ`.
///
/// Returns `None` when `v` is singular or the shapes disagree.
pub fn solve_right<F: Num + Clone>(w: &ExactMatrix<F>, v: &ExactMatrix<F>) -> Option<ExactMatrix<F>> {
    let n = v.len();
    if v.iter().any(|row| row.len() != n) || w.iter().any(|row| row.len() != n) {
        return None;
    }
    let m = w.len();
    // augmented [vᵀ | wᵀ], n x (n + m)
    let mut aug: ExactMatrix<F> = (0..n)
        .map(|i| {
            let mut row: Vec<F> = (0..n).map(|j| v[j][i].clone()).collect();
            row.extend((0..m).map(|j| w[j][i].clone()));
            row
        })
        .collect();

    for col in 0..n {
        let pivot = (col..n).find(|&r| !aug[r][col].is_zero())?;
        aug.swap(col, pivot);
        let p = aug[col][col].clone();
        for x in aug[col].iter_mut() {
            *x = x.clone() / p.clone();
        }
        for r in 0..n {
            if r == col || aug[r][col].is_zero() {
                continue;
            }
            let factor = aug[r][col].clone();
            for c in 0..n + m {
                let delta = factor.clone() * aug[col][c].clone();
                aug[r][c] = aug[r][c].clone() - delta;
            }
        }
    }
    // aug right block is fᵀ
    Some((0..m).map(|i| (0..n).map(|j| aug[j][n + i].clone()).collect()).collect())
}

/// Parses `"-41/22"`, `"7"` or `"-2.5"` into an exact rational.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let num = BigInt::from_str(num.trim()).ok()?;
        let den = BigInt::from_str(den.trim()).ok()?;
        if den.is_zero() {
            return None;
        }
        return Some(Rational::new(num, den));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let negative = int.starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches('-'), frac);
        let mut num = BigInt::from_str(&digits).ok()?;
        if negative {
            num = -num;
        }
        let den = num_traits::pow(BigInt::from(10), frac.len());
        return Some(Rational::new(num, den));
    }
    BigInt::from_str(s).ok().map(Rational::from_integer)
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}
