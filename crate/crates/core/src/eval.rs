//! ROC/AUC, AUC recovery rate, stratified k-fold splits and week-indexed
//! experiment reports.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum |oracle - baseline| gap, in percentage points, for the recovery
/// rate to be considered well-conditioned.
pub const ARR_DENOMINATOR_GUARD: f64 = 0.1;

/// Rank-based (Mann-Whitney) AUC as a percentage in [0, 100]. Ties are
/// credited 0.5; both classes must be present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid_argument(format!(
            "scores ({}) and labels ({}) have different lengths",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one example of each class".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks over tie groups (1-based)
    let mut rank_pos_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_pos_sum += avg_rank;
            }
        }
        i = j + 1;
    }

    let p = pos as f64;
    let u = rank_pos_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * neg as f64) * 100.0)
}

/// One point on the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from the strictest threshold down; starts at (0, 0) and ends
/// at (1, 1), with one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = (labels.len() - labels.iter().filter(|&&l| l).count()) as f64;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::UndefinedMetric(
            "ROC needs at least one example of each class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint { threshold, fpr: fp / neg, tpr: tp / pos });
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve, in percent. Retained for curve
/// plotting and as a cross-check of the rank-based value.
pub fn auc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = roc_curve(scores, labels)?;
    let area: f64 = curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    Ok(area * 100.0)
}

/// ROC curve as CSV (`threshold,fpr,tpr`).
pub fn roc_to_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    out
}

/// AUC recovery rate `(unsup - baseline) / (oracle - baseline)`. May be
/// negative or exceed 1; undefined when the denominator gap is below
/// [`ARR_DENOMINATOR_GUARD`] percentage points.
pub fn arr(unsup_auc: f64, baseline_auc: f64, oracle_auc: f64) -> Result<f64> {
    let denom = oracle_auc - baseline_auc;
    if denom.abs() < ARR_DENOMINATOR_GUARD {
        return Err(Error::UndefinedMetric(format!(
            "oracle-baseline gap {denom:.4} pp is below the {ARR_DENOMINATOR_GUARD} pp guard"
        )));
    }
    Ok((unsup_auc - baseline_auc) / denom)
}

/// Stratified k folds: index sets that partition `0..labels.len()` with
/// per-fold class counts within one of the ideal. Deterministic per seed.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid_argument("k must be >= 2"));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(Error::invalid_argument(format!(
            "each class needs at least k={k} examples (got {} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut folds = vec![Vec::new(); k];
    for (n, idx) in pos.into_iter().enumerate() {
        folds[n % k].push(idx);
    }
    for (n, idx) in neg.into_iter().enumerate() {
        folds[n % k].push(idx);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// Per-theta cell of one week row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThetaCell {
    pub theta: f64,
    pub auc: Option<f64>,
    pub arr: Option<f64>,
}

/// One prediction week across the four setups. `None` marks a metric that
/// was undefined for that cell; the reason lands in `notes`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeekRow {
    pub week: u32,
    pub vanilla_auc: Option<f64>,
    pub gritnet_auc: Option<f64>,
    pub oracle_auc: Option<f64>,
    pub adapted: Vec<ThetaCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Week-indexed AUC values for the four setups plus derived recovery
/// rates, and their mean over a configurable week range.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeeklyReport {
    pub theta_grid: Vec<f64>,
    pub weeks: Vec<WeekRow>,
    /// Inclusive week range the mean recovery rates are taken over.
    pub arr_week_range: (u32, u32),
    /// Mean of the defined weekly ARR values per theta, `None` when every
    /// week in range was undefined.
    pub mean_arr_per_theta: Vec<Option<f64>>,
}

impl WeeklyReport {
    pub fn from_rows(theta_grid: Vec<f64>, weeks: Vec<WeekRow>, arr_week_range: (u32, u32)) -> WeeklyReport {
        let mean_arr_per_theta = (0..theta_grid.len())
            .map(|ti| mean_arr(&weeks, ti, arr_week_range))
            .collect();
        WeeklyReport { theta_grid, weeks, arr_week_range, mean_arr_per_theta }
    }

    /// Flat CSV: `week,setup,theta,auc,arr` with `NA` for undefined cells.
    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
        }
        let mut out = String::from("week,setup,theta,auc,arr\n");
        for row in &self.weeks {
            out.push_str(&format!("{},vanilla,,{},\n", row.week, cell(row.vanilla_auc)));
            out.push_str(&format!("{},gritnet_baseline,,{},\n", row.week, cell(row.gritnet_auc)));
            for t in &row.adapted {
                out.push_str(&format!(
                    "{},adapted,{},{},{}\n",
                    row.week,
                    t.theta,
                    cell(t.auc),
                    cell(t.arr)
                ));
            }
            out.push_str(&format!("{},oracle,,{},\n", row.week, cell(row.oracle_auc)));
        }
        out
    }
}

/// Arithmetic mean of the defined weekly ARR values for one theta over an
/// inclusive week range.
pub fn mean_arr(weeks: &[WeekRow], theta_idx: usize, range: (u32, u32)) -> Option<f64> {
    let defined: Vec<f64> = weeks
        .iter()
        .filter(|r| r.week >= range.0 && r.week <= range.1)
        .filter_map(|r| r.adapted.get(theta_idx).and_then(|c| c.arr))
        .collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Brute-force pair-counting oracle, O(P*N).
    fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let pos: Vec<f64> =
            scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
        let neg: Vec<f64> =
            scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
        let mut credit = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    credit += 1.0;
                } else if p == n {
                    credit += 0.5;
                }
            }
        }
        credit / (pos.len() as f64 * neg.len() as f64) * 100.0
    }

    #[test]
    fn perfect_ranking_scores_100() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 100.0);
    }

    #[test]
    fn all_ties_score_50() {
        let scores = [0.3; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(auc(&scores, &labels).unwrap(), 50.0);
    }

    #[test]
    fn rank_auc_equals_pair_counting_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let n = 200;
            // coarse grid ensures plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..25) as f64) / 25.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_pairs(&scores, &labels);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn single_class_labels_are_undefined() {
        let err = auc(&[0.1, 0.9], &[true, true]).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)));
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..90).map(|_| rng.random::<f64>()).collect();
        let mut labels: Vec<bool> = (0..90).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let base = auc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
        assert!((auc(&warped, &labels).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn auc_complements_on_flipped_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..60).map(|_| (rng.random_range(0..9) as f64) / 8.0).collect();
        let mut labels: Vec<bool> = (0..60).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let flipped: Vec<bool> = labels.iter().map(|&l| !l).collect();
        let total = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn trapezoid_agrees_with_rank_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..80).map(|_| (rng.random_range(0..12) as f64) / 12.0).collect();
            let mut labels: Vec<bool> = (0..80).map(|_| rng.random::<bool>()).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc(&scores, &labels).unwrap();
            let b = auc_trapezoid(&scores, &labels).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn roc_curve_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scores: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let mut labels: Vec<bool> = (0..50).map(|_| rng.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let curve = roc_curve(&scores, &labels).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
            assert!(w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold <= w[0].threshold);
        }
        let last = curve.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn arr_known_values() {
        assert_eq!(arr(80.0, 70.0, 90.0).unwrap(), 0.5);
        assert_eq!(arr(85.0, 70.0, 85.0).unwrap(), 1.0);
        assert_eq!(arr(70.0, 70.0, 85.0).unwrap(), 0.0);
    }

    #[test]
    fn arr_guard_rejects_tiny_denominators() {
        assert!(matches!(arr(80.0, 75.0, 75.05), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn arr_is_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let b: f64 = rng.random_range(40.0..90.0);
            let o: f64 = b + rng.random_range(0.5..20.0);
            let u: f64 = rng.random_range(30.0..99.0);
            let base = arr(u, b, o).unwrap();
            let (scale, shift): (f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(-10.0..10.0));
            let scaled = arr(scale * u + shift, scale * b + shift, scale * o + shift).unwrap();
            assert!((base - scaled).abs() <= 1e-12 * base.abs().max(1.0), "{base} vs {scaled}");
        }
    }

    #[test]
    fn divisible_classes_split_evenly() {
        let labels: Vec<bool> = [vec![true; 10], vec![false; 40]].concat();
        let folds = stratified_kfold(&labels, 5, 0).unwrap();
        for fold in &folds {
            assert_eq!(fold.iter().filter(|&&i| labels[i]).count(), 2);
            assert_eq!(fold.len(), 10);
        }
    }

    #[test]
    fn remainder_positives_spread_within_one() {
        let labels: Vec<bool> = [vec![true; 11], vec![false; 40]].concat();
        let folds = stratified_kfold(&labels, 5, 1).unwrap();
        let mut counts: Vec<usize> =
            folds.iter().map(|f| f.iter().filter(|&&i| labels[i]).count()).collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn folds_partition_all_indices() {
        let labels: Vec<bool> = (0..57).map(|n| n % 3 == 0).collect();
        let folds = stratified_kfold(&labels, 4, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn too_small_class_is_rejected() {
        let labels = [true, false, false, false, false, false];
        assert!(stratified_kfold(&labels, 2, 0).is_ok());
        assert!(stratified_kfold(&labels, 3, 0).is_err());
    }

    #[test]
    fn folds_are_deterministic_per_seed() {
        let labels: Vec<bool> = (0..40).map(|n| n % 4 == 0).collect();
        assert_eq!(
            stratified_kfold(&labels, 5, 3).unwrap(),
            stratified_kfold(&labels, 5, 3).unwrap()
        );
        assert_ne!(
            stratified_kfold(&labels, 5, 3).unwrap(),
            stratified_kfold(&labels, 5, 4).unwrap()
        );
    }

    fn sample_rows() -> Vec<WeekRow> {
        (1..=8u32)
            .map(|week| WeekRow {
                week,
                vanilla_auc: Some(60.0 + week as f64),
                gritnet_auc: Some(65.0 + week as f64),
                oracle_auc: Some(80.0),
                adapted: vec![
                    ThetaCell { theta: 0.1, auc: Some(70.0), arr: Some(0.4) },
                    ThetaCell { theta: 0.2, auc: Some(72.0), arr: if week == 1 { None } else { Some(0.6) } },
                ],
                notes: vec![],
            })
            .collect()
    }

    #[test]
    fn report_has_one_row_per_week_and_theta_columns() {
        let report = WeeklyReport::from_rows(vec![0.1, 0.2], sample_rows(), (1, 4));
        assert_eq!(report.weeks.len(), 8);
        let csv = report.to_csv();
        // per week: vanilla, gritnet, 2 thetas, oracle
        assert_eq!(csv.lines().count(), 1 + 8 * 5);
        assert!(csv.contains("3,adapted,0.2,72,0.6"));
    }

    #[test]
    fn undefined_cells_do_not_poison_the_mean() {
        let report = WeeklyReport::from_rows(vec![0.1, 0.2], sample_rows(), (1, 4));
        assert_eq!(report.mean_arr_per_theta[0], Some(0.4));
        // week 1 undefined for theta 0.2: mean over weeks 2..4
        assert_eq!(report.mean_arr_per_theta[1], Some(0.6));
    }

    #[test]
    fn mean_arr_is_the_plain_average_of_defined_weeks() {
        let mut rows = sample_rows();
        rows[0].adapted[0].arr = Some(0.1);
        rows[1].adapted[0].arr = Some(0.2);
        rows[2].adapted[0].arr = Some(0.6);
        rows[3].adapted[0].arr = Some(0.7);
        let got = mean_arr(&rows, 0, (1, 4)).unwrap();
        assert!((got - 0.4).abs() < 1e-12);
    }
}
