//! Grouped cross-validation splitting, bookmaker informedness, aggregation
//! and the training-fraction threshold analysis.
//!
//! Splits are drawn over super-epoch groups, never over individual
//! sub-epochs, so sub-epochs sliced from one super-epoch can never end up on
//! both sides of a train/validation/test boundary.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::ContingencyTable;
use crate::error::Error;
use crate::{mix_seed, Result};

pub const DEFAULT_VAL_FRACTION: f64 = 0.05;
pub const DEFAULT_TEST_FRACTION: f64 = 0.05;

/// Cross-validation layout: `reps` repetitions of `folds` independent
/// seeded draws, each assigning `train_fraction` of the super-epoch groups
/// to training and a fixed 5% each to validation and test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvSpec {
    pub reps: usize,
    pub folds: usize,
    /// Fraction of groups used for training, in [0, 0.9]. 0 is the
    /// zero-trial setting: the training set is empty.
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl CvSpec {
    pub fn new(reps: usize, folds: usize, train_fraction: f64, seed: u64) -> Self {
        CvSpec {
            reps,
            folds,
            train_fraction,
            val_fraction: DEFAULT_VAL_FRACTION,
            test_fraction: DEFAULT_TEST_FRACTION,
            seed,
        }
    }

    /// The mask-search layout: 90% train, 5% validation, 5% test.
    pub fn stage1(reps: usize, folds: usize, seed: u64) -> Self {
        CvSpec::new(reps, folds, 0.90, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.folds == 0 {
            return Err(Error::config("reps and folds must be positive"));
        }
        if !(0.0..=0.9).contains(&self.train_fraction) {
            return Err(Error::config(format!(
                "train_fraction {} outside [0, 0.9]",
                self.train_fraction
            )));
        }
        if self.train_fraction + self.val_fraction + self.test_fraction > 1.0 + 1e-12 {
            return Err(Error::config("fractions sum past 1"));
        }
        Ok(())
    }
}

/// Group-id sets for one (repetition, fold) cell. Pairwise disjoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSplit {
    pub rep_id: usize,
    pub fold_id: usize,
    pub train_groups: Vec<usize>,
    pub val_groups: Vec<usize>,
    pub test_groups: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: Vec<FoldSplit>,
}

/// Takes `want` ids across the two per-class pools, keeping class
/// proportions (largest-remainder rounding, clamped to availability).
/// Consumes from the front of each pool.
fn take_stratified(pools: &mut [Vec<usize>; 2], want: usize) -> Result<Vec<usize>> {
    let (a0, a1) = (pools[0].len(), pools[1].len());
    let total = a0 + a1;
    if want > total {
        return Err(Error::data(format!(
            "cannot draw {want} groups from {total} remaining"
        )));
    }
    let ideal1 = if total == 0 {
        0.0
    } else {
        want as f64 * a1 as f64 / total as f64
    };
    let take1 = (ideal1.round() as usize)
        .min(a1)
        .min(want)
        .max(want.saturating_sub(a0));
    let take0 = want - take1;
    let mut out: Vec<usize> = pools[0].drain(..take0).collect();
    out.extend(pools[1].drain(..take1));
    out.sort_unstable();
    Ok(out)
}

/// Draws the full cross-validation plan for a labelled group roster.
///
/// Per fold, test groups are drawn first, then validation, then training,
/// all class-stratified — so plans sharing `(seed, reps, folds)` have
/// identical validation and test sets at every `train_fraction`. A
/// `train_fraction` of 0 yields empty training sets with validation and
/// test untouched.
pub fn make_splits(groups: &[(usize, u8)], spec: &CvSpec) -> Result<SplitPlan> {
    spec.validate()?;
    let n_groups = groups.len();
    let n_test = ((spec.test_fraction * n_groups as f64).round() as usize).max(1);
    let n_val = ((spec.val_fraction * n_groups as f64).round() as usize).max(1);
    let n_train = (spec.train_fraction * n_groups as f64).round() as usize;
    if n_test + n_val + n_train > n_groups {
        return Err(Error::data(format!(
            "{n_groups} groups cannot cover train/val/test of {n_train}/{n_val}/{n_test}"
        )));
    }

    let class0: Vec<usize> = groups.iter().filter(|g| g.1 == 0).map(|g| g.0).collect();
    let class1: Vec<usize> = groups.iter().filter(|g| g.1 != 0).map(|g| g.0).collect();

    let mut folds = Vec::with_capacity(spec.reps * spec.folds);
    for rep in 0..spec.reps {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[rep as u64]));
        for fold in 0..spec.folds {
            let mut pools = [class0.clone(), class1.clone()];
            pools[0].shuffle(&mut rng);
            pools[1].shuffle(&mut rng);
            let test_groups = take_stratified(&mut pools, n_test)?;
            let val_groups = take_stratified(&mut pools, n_val)?;
            let train_groups = take_stratified(&mut pools, n_train)?;
            folds.push(FoldSplit {
                rep_id: rep,
                fold_id: fold,
                train_groups,
                val_groups,
                test_groups,
            });
        }
    }
    Ok(SplitPlan { folds })
}

// ---------------------------------------------------------------------------
// Metrics

/// Builds the confusion counts for binary predictions; class 1 is positive.
pub fn contingency(y_true: &[u8], y_pred: &[u8]) -> ContingencyTable {
    let mut t = ContingencyTable::default();
    for (&truth, &pred) in y_true.iter().zip(y_pred.iter()) {
        match (truth, pred) {
            (1, 1) => t.true_pos += 1,
            (1, _) => t.false_neg += 1,
            (_, 1) => t.false_pos += 1,
            _ => t.true_neg += 1,
        }
    }
    t
}

/// Bookmaker informedness: TPR + TNR − 1, in [−1, 1]; 0 is chance level.
///
/// Undefined when one class is absent from the ground truth — returns
/// `None`, which aggregation excludes.
pub fn informedness(t: &ContingencyTable) -> Option<f64> {
    let pos = t.true_pos + t.false_neg;
    let neg = t.true_neg + t.false_pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    Some(t.true_pos as f64 / pos as f64 + t.true_neg as f64 / neg as f64 - 1.0)
}

pub fn accuracy(t: &ContingencyTable) -> f64 {
    let total = t.total();
    if total == 0 {
        return 0.0;
    }
    (t.true_pos + t.true_neg) as f64 / total as f64
}

/// Per-cell performance and wall-clock record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStats {
    pub rep_id: usize,
    pub fold_id: usize,
    pub informedness: Option<f64>,
    pub accuracy: f64,
    pub train_seconds: f64,
    pub retrain_seconds: f64,
    /// Set when the fold's effective training set was empty.
    pub zero_trial: bool,
}

pub const RUN_STATS_CSV_HEADER: &str =
    "rep,fold,condition,fraction,informedness,accuracy,train_s,retrain_s";

impl RunStats {
    pub fn to_csv_row(&self, condition: &str, fraction: f64) -> String {
        let inf = self
            .informedness
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.rep_id,
            self.fold_id,
            condition,
            fraction,
            inf,
            self.accuracy,
            self.train_seconds,
            self.retrain_seconds
        )
    }
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub se: f64,
    /// True when only one value was aggregated, making the SE trivially 0.
    pub degenerate: bool,
}

/// Mean and SE = sd/√m over the defined values, sd taken with the
/// m-denominator so a single value aggregates to (value, 0).
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::data("nothing to aggregate: all values undefined"));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    Ok(Aggregate {
        mean,
        se: var.sqrt() / m.sqrt(),
        degenerate: values.len() == 1,
    })
}

/// Aggregates the defined informedness entries of a stats list.
pub fn aggregate_informedness(stats: &[RunStats]) -> Result<Aggregate> {
    let defined: Vec<f64> = stats.iter().filter_map(|s| s.informedness).collect();
    aggregate(&defined)
}

// ---------------------------------------------------------------------------
// Threshold analysis

/// Two-sided Welch t-test p-value for a difference in means.
///
/// Degenerate inputs (fewer than two values per side, or zero variance on
/// both sides) collapse to p = 1 when the means agree and p = 0 when they
/// do not.
pub fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let var = |x: &[f64], m: f64| {
        if x.len() < 2 {
            0.0
        } else {
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
        }
    };
    let (va, vb) = (var(a, ma), var(b, mb));
    let pooled = va / na + vb / nb;
    if pooled == 0.0 || a.len() < 2 || b.len() < 2 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / pooled.sqrt();
    let df = pooled.powi(2)
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = match StudentsT::new(0.0, 1.0, df) {
        Ok(d) => d,
        Err(_) => return 1.0,
    };
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// Smallest training fraction whose informedness sample is statistically
/// indistinguishable (Welch p > 0.05) from the 0.90 reference sample.
///
/// `sweep` maps each fraction to its per-fold informedness values and must
/// contain the 0.90 reference point.
pub fn threshold_fraction(sweep: &[(f64, Vec<f64>)]) -> Result<f64> {
    let reference = sweep
        .iter()
        .find(|(f, _)| (f - 0.90).abs() < 1e-9)
        .ok_or_else(|| Error::missing("sweep lacks the 0.90 reference point"))?;

    let mut sorted: Vec<&(f64, Vec<f64>)> = sweep.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (fraction, values) in sorted {
        if values.is_empty() {
            continue;
        }
        if welch_p(values, &reference.1) > 0.05 {
            return Ok(*fraction);
        }
    }
    // The reference tested against itself always passes, so this is
    // unreachable with a nonempty reference sample.
    Ok(reference.0)
}
