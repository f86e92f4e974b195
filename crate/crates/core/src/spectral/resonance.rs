//! Exhaustive search for small integer relations `Λ·s = 0` among the
//! first `M` eigenvalues.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSearch {
    /// Number of leading eigenvalues entering the relation.
    pub modes: usize,
    /// Bound on each `|s_j|`.
    pub s_max: u32,
    /// Optional bound on `‖s‖₁`.
    #[serde(default)]
    pub l1_max: Option<u32>,
    /// `|Λ·s| ≤ eps` counts as resonant.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Largest admissible number of candidate vectors.
    #[serde(default = "default_budget")]
    pub budget: u128,
}

fn default_eps() -> f64 {
    1e-9
}

fn default_budget() -> u128 {
    200_000_000
}

impl ResonanceSearch {
    pub fn new(modes: usize, s_max: u32) -> Self {
        Self { modes, s_max, l1_max: None, eps: default_eps(), budget: default_budget() }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_l1_max(mut self, l1: u32) -> Self {
        self.l1_max = Some(l1);
        self
    }

    /// `(2 s_max + 1)^M`.
    pub fn size(&self) -> u128 {
        (2 * self.s_max as u128 + 1).saturating_pow(self.modes as u32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub search: ResonanceSearch,
    /// `|Λ·s|` at the witness.
    pub min_abs: f64,
    /// Witness, sign-canonical (first nonzero component positive).
    pub argmin_s: Vec<i64>,
    pub resonant: bool,
}

#[derive(Clone, Copy, PartialEq)]
struct Key {
    value: f64,
    top: usize,
    l1: i64,
}

/// Among resonant candidates (`|Λ·s| ≤ eps`) the witness uses the fewest
/// leading modes, then the smallest `‖s‖₁`; otherwise the smallest `|Λ·s|` wins.
fn better(a: &Key, b: &Key, eps: f64) -> bool {
    match (a.value <= eps, b.value <= eps) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => (a.top, a.l1) < (b.top, b.l1),
        (false, false) => match a.value.total_cmp(&b.value) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (a.top, a.l1) < (b.top, b.l1),
        },
    }
}

pub fn check_nonresonance(lambda: &[f64], search: &ResonanceSearch) -> Result<ResonanceReport> {
    let m = search.modes;
    if m == 0 || m > lambda.len() {
        return Err(Error::DimensionMismatch { expected: lambda.len(), got: m });
    }
    if search.s_max == 0 {
        return Err(Error::InvalidParams("s_max must be at least 1".into()));
    }
    let size = search.size();
    if size > search.budget {
        return Err(Error::SearchBudget { size, budget: search.budget });
    }

    let s_max = search.s_max as i64;
    let l1_max = search.l1_max.map_or(i64::MAX, i64::from);
    let mut s = vec![-s_max; m];
    let mut best: Option<(Key, Vec<i64>)> = None;

    loop {
        // canonical representative of each ±s pair: first nonzero entry positive
        if let Some(first) = s.iter().find(|&&x| x != 0) {
            let l1: i64 = s.iter().map(|x| x.abs()).sum();
            if *first > 0 && l1 <= l1_max {
                let dot: f64 = s.iter().zip(lambda).map(|(&si, l)| si as f64 * l).sum();
                let top = s.iter().rposition(|&x| x != 0).unwrap_or(0);
                let key = Key { value: dot.abs(), top, l1 };
                if best.as_ref().is_none_or(|(b, _)| better(&key, b, search.eps)) {
                    best = Some((key, s.clone()));
                }
            }
        }
        // odometer, first component fastest
        let mut i = 0;
        loop {
            if i == m {
                let (key, argmin_s) = best.ok_or_else(|| {
                    Error::InvalidParams("no admissible nonzero vector under l1 bound".into())
                })?;
                return Ok(ResonanceReport {
                    search: search.clone(),
                    min_abs: key.value,
                    resonant: key.value <= search.eps,
                    argmin_s,
                });
            }
            if s[i] < s_max {
                s[i] += 1;
                break;
            }
            s[i] = -s_max;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recompute(lambda: &[f64], s: &[i64]) -> f64 {
        s.iter().zip(lambda).map(|(&a, l)| a as f64 * l).sum::<f64>().abs()
    }

    #[test]
    fn squares_are_resonant() {
        let lambda = [1.0, 4.0, 9.0];
        let r = check_nonresonance(&lambda, &ResonanceSearch::new(3, 4)).unwrap();
        assert!(r.resonant);
        assert_eq!(r.argmin_s, vec![4, -1, 0]);
        assert_eq!(r.min_abs, 0.0);
    }

    #[test]
    fn shifted_squares_are_resonant() {
        let lambda = [2.0, 5.0, 10.0];
        let r = check_nonresonance(&lambda, &ResonanceSearch::new(3, 2)).unwrap();
        assert!(r.resonant);
        assert_eq!(r.argmin_s, vec![0, 2, -1]);
    }

    #[test]
    fn witness_is_consistent_and_nonzero() {
        let lambda = [1.3, 4.7, 9.1, 16.05];
        let r = check_nonresonance(&lambda, &ResonanceSearch::new(4, 3)).unwrap();
        assert!(r.argmin_s.iter().any(|&x| x != 0));
        assert_eq!(r.min_abs, recompute(&lambda, &r.argmin_s));
        let first = r.argmin_s.iter().find(|&&x| x != 0).unwrap();
        assert!(*first > 0);
        // brute force including both signs
        let mut min = f64::INFINITY;
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                for c in -3i64..=3 {
                    for d in -3i64..=3 {
                        if (a, b, c, d) != (0, 0, 0, 0) {
                            min = min.min(recompute(&lambda, &[a, b, c, d]));
                        }
                    }
                }
            }
        }
        assert_eq!(r.min_abs, min);
    }

    #[test]
    fn l1_bound_restricts_candidates() {
        let lambda = [1.0, 4.0, 9.0];
        let r = check_nonresonance(&lambda, &ResonanceSearch::new(3, 4).with_l1_max(3)).unwrap();
        assert!(!r.resonant);
        assert!(r.argmin_s.iter().map(|x| x.abs()).sum::<i64>() <= 3);
    }

    #[test]
    fn refuses_oversized_search() {
        let lambda: Vec<f64> = (1..=20).map(|k| (k * k) as f64).collect();
        let err = check_nonresonance(&lambda, &ResonanceSearch::new(20, 10)).unwrap_err();
        assert!(matches!(err, Error::SearchBudget { .. }));
    }
}
