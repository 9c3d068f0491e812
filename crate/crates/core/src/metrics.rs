//! Pooled (micro) precision, recall, F1 and Jaccard over query sets, and
//! threshold selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts pooled over all queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub hits: u64,
    pub predicted: u64,
    pub truth: u64,
    pub union: u64,
}

impl Counts {
    pub fn of(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction of length {} against truth of length {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Counts::default();
        for (&p, &t) in pred.iter().zip(truth) {
            c.hits += (p && t) as u64;
            c.predicted += p as u64;
            c.truth += t as u64;
            c.union += (p || t) as u64;
        }
        Ok(c)
    }

    pub fn pooled(preds: &[Vec<bool>], truths: &[Vec<bool>]) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} ground truths",
                preds.len(),
                truths.len()
            )));
        }
        let mut total = Counts::default();
        for (p, t) in preds.iter().zip(truths) {
            total += Counts::of(p, t)?;
        }
        Ok(total)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.hits, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.hits, self.truth)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.hits, self.predicted + self.truth)
    }

    pub fn jaccard(&self) -> f64 {
        ratio(self.hits, self.union)
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.hits += o.hits;
        self.predicted += o.predicted;
        self.truth += o.truth;
        self.union += o.union;
    }
}

/// `a / b` with `0 / 0 = 0`.
fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn micro_precision_recall_f1(
    preds: &[Vec<bool>],
    truths: &[Vec<bool>],
) -> Result<(f64, f64, f64)> {
    let c = Counts::pooled(preds, truths)?;
    Ok((c.precision(), c.recall(), c.f1()))
}

pub fn micro_jaccard(preds: &[Vec<bool>], truths: &[Vec<bool>]) -> Result<f64> {
    Ok(Counts::pooled(preds, truths)?.jaccard())
}

/// `z_i >= gamma`.
pub fn binarize(z: &[f64], gamma: f64) -> Vec<bool> {
    z.iter().map(|&x| x >= gamma).collect()
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
        return Err(Error::Config(
            "threshold grid must be a non-empty subset of (0, 1)".into(),
        ));
    }
    Ok(())
}

/// Pooled F1 at every grid threshold.
pub fn f1_curve(
    scores: &[Vec<f64>],
    truths: &[Vec<bool>],
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&g| {
            let preds: Vec<Vec<bool>> = scores.iter().map(|z| binarize(z, g)).collect();
            Ok((g, Counts::pooled(&preds, truths)?.f1()))
        })
        .collect()
}

/// Grid threshold with the best pooled F1; ties go to the value closest to
/// 0.5, then to the smaller one. Returns `(gamma, f1)`.
pub fn select_threshold(
    scores: &[Vec<f64>],
    truths: &[Vec<bool>],
    grid: &[f64],
) -> Result<(f64, f64)> {
    validate_grid(grid)?;
    if scores.is_empty() {
        return Err(Error::Precondition(
            "threshold selection needs validation queries".into(),
        ));
    }
    let curve = f1_curve(scores, truths, grid)?;
    let better = |a: (f64, f64), b: (f64, f64)| {
        if a.1 != b.1 {
            return a.1 > b.1;
        }
        let (da, db) = ((a.0 - 0.5).abs(), (b.0 - 0.5).abs());
        if da != db {
            return da < db;
        }
        a.0 < b.0
    };
    let mut best = curve[0];
    for &c in &curve[1..] {
        if better(c, best) {
            best = c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let y = vec![bits(&[1, 0, 1]), bits(&[0, 1, 0])];
        assert_eq!(micro_precision_recall_f1(&y, &y).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(micro_jaccard(&y, &y).unwrap(), 1.0);
        let none = vec![bits(&[0, 0, 0]), bits(&[0, 0, 0])];
        assert_eq!(
            micro_precision_recall_f1(&none, &y).unwrap(),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(micro_jaccard(&none, &none).unwrap(), 0.0);
    }

    #[test]
    fn two_query_hand_case() {
        let z = vec![bits(&[1, 1, 0]), bits(&[0, 1, 1])];
        let y = vec![bits(&[1, 0, 1]), bits(&[0, 1, 1])];
        let (p, r, f) = micro_precision_recall_f1(&z, &y).unwrap();
        assert_eq!((p, r, f), (0.75, 0.75, 0.75));
        assert_eq!(micro_jaccard(&z, &y).unwrap(), 0.6);
        let disjoint = micro_jaccard(&[bits(&[1, 0])], &[bits(&[0, 1])]).unwrap();
        assert_eq!(disjoint, 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(micro_jaccard(&[bits(&[1])], &[bits(&[1, 0])]).is_err());
        assert!(micro_jaccard(&[bits(&[1])], &[]).is_err());
    }

    #[test]
    fn binarize_cases() {
        assert_eq!(binarize(&[0.2, 0.5, 0.9], 0.5), vec![false, true, true]);
        assert!(binarize(&[0.2, 0.5, 0.9], 1e-12).iter().all(|&b| b));
        assert!(binarize(&[0.5; 4], 0.95).iter().all(|&b| !b));
    }

    #[test]
    fn grid_has_nineteen_points() {
        let g = default_grid();
        assert_eq!(g.len(), 19);
        assert_eq!(g[9], 0.5);
        assert!(validate_grid(&g).is_ok());
        assert!(validate_grid(&[0.0, 0.5]).is_err());
        assert!(validate_grid(&[]).is_err());
    }

    #[test]
    fn threshold_ties_prefer_half() {
        let eps = 1e-7;
        let scores = vec![vec![1.0 - eps, eps, 1.0 - eps]];
        let truths = vec![bits(&[1, 0, 1])];
        assert_eq!(
            select_threshold(&scores, &truths, &default_grid()).unwrap(),
            (0.5, 1.0)
        );
        let low = vec![vec![0.01, 0.02, 0.03]];
        assert_eq!(
            select_threshold(&low, &truths, &default_grid()).unwrap(),
            (0.5, 0.0)
        );
        // equidistant tie goes to the smaller threshold
        let s = vec![vec![0.45, 0.1]];
        let t = vec![bits(&[1, 0])];
        assert_eq!(select_threshold(&s, &t, &[0.4, 0.6]).unwrap().0, 0.4);
    }

    #[test]
    fn threshold_matches_exhaustive_search() {
        let scores = vec![vec![0.9, 0.35, 0.6]];
        let truths = vec![bits(&[1, 1, 0])];
        let grid = default_grid();
        let (g, f) = select_threshold(&scores, &truths, &grid).unwrap();
        // gamma <= 0.35: all three predicted, F1 = 4/5; (0.35, 0.6]: {0, 2}, F1 = 1/2;
        // (0.6, 0.9]: {0}, F1 = 2/3
        assert_eq!(f, 0.8);
        assert_eq!(g, 0.35);
    }

    proptest! {
        #[test]
        fn threshold_order_invariant(
            rows in proptest::collection::vec((proptest::collection::vec(0.0f64..1.0, 5), proptest::collection::vec(any::<bool>(), 5)), 1..8)
        ) {
            let (s, t): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
            let (mut rs, mut rt) = (s.clone(), t.clone());
            rs.reverse();
            rt.reverse();
            let grid = default_grid();
            prop_assert_eq!(select_threshold(&s, &t, &grid).unwrap(), select_threshold(&rs, &rt, &grid).unwrap());
        }

        #[test]
        fn f1_dominates_jaccard(
            rows in proptest::collection::vec(proptest::collection::vec((any::<bool>(), any::<bool>()), 1..20), 1..10)
        ) {
            let preds: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|p| p.0).collect()).collect();
            let truths: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|p| p.1).collect()).collect();
            let (_, _, f1) = micro_precision_recall_f1(&preds, &truths).unwrap();
            let j = micro_jaccard(&preds, &truths).unwrap();
            prop_assert!(f1 >= j);
            prop_assert!((f1 - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            // relabeling nodes consistently leaves the metrics unchanged
            let rp: Vec<Vec<bool>> = preds.iter().map(|r| r.iter().rev().copied().collect()).collect();
            let rt: Vec<Vec<bool>> = truths.iter().map(|r| r.iter().rev().copied().collect()).collect();
            prop_assert_eq!(micro_jaccard(&rp, &rt).unwrap(), j);
        }
    }
}
