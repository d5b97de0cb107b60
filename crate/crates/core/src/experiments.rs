//! Experiment orchestration: the condition grid (data mixing vs.
//! pretrain/retrain, with and without dimension reduction), the
//! training-fraction sweep, report aggregation, and the brute-force
//! best-combination search for synthetic rosters.
//!
//! Terminology used throughout: the *target* is the subject being
//! evaluated; its *transfer group* is a set of other roster subjects whose
//! concatenated recordings form the combined training source. Conditions
//! are addressed by their short codes ("1.1a" ... "2.2b").

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{perceptron_retrain, perceptron_train, PerceptronModel, TrainConfig};
use crate::data::{FeatureTensor, Mask, SubjectRecord};
use crate::error::Error;
use crate::evaluation::{
    accuracy, aggregate, contingency, informedness, make_splits, threshold_fraction, CvSpec,
    FoldSplit, RunStats,
};
use crate::mask::{
    apply_mask_to_rows, collect_masks, com_mask, rows_for_groups, MaskSearchConfig,
};
use crate::preprocess::prepare_features;
use crate::transfer::{build_super_subject, select_group, BsubTable, GroupMode};
use crate::{hash_label, mix_seed, Result};

/// One cell of the experiment grid. The code fixes every attribute:
/// whether dimension reduction is applied (and which super subject its
/// mask came from), whether extra subjects' data joins the training set,
/// and whether training happens in one pass or as pretrain + retrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    /// 1.1a — target data only.
    OwnOnly,
    /// 1.1b — target data mixed with the all-others super subject.
    MixAll,
    /// 1.1c — target data mixed with the best-combination super subject.
    MixBest,
    /// 1.2a — reduced target data; mask from the all-others super subject.
    DrOwnAll,
    /// 1.2b — reduced target + reduced all-others data mixed.
    DrMixAll,
    /// 1.2c — reduced target data; mask from the best combination.
    DrOwnBest,
    /// 1.2d — reduced target + reduced best-combination data mixed.
    DrMixBest,
    /// 2.1a — pretrain on all-others, retrain on the target fraction.
    PretrainAll,
    /// 2.1b — pretrain on the best combination, retrain on the target.
    PretrainBest,
    /// 2.2a — 2.1a with dimension reduction.
    DrPretrainAll,
    /// 2.2b — 2.1b with dimension reduction.
    DrPretrainBest,
}

impl Condition {
    pub const ALL: [Condition; 11] = [
        Condition::OwnOnly,
        Condition::MixAll,
        Condition::MixBest,
        Condition::DrOwnAll,
        Condition::DrMixAll,
        Condition::DrOwnBest,
        Condition::DrMixBest,
        Condition::PretrainAll,
        Condition::PretrainBest,
        Condition::DrPretrainAll,
        Condition::DrPretrainBest,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            Condition::OwnOnly => "1.1a",
            Condition::MixAll => "1.1b",
            Condition::MixBest => "1.1c",
            Condition::DrOwnAll => "1.2a",
            Condition::DrMixAll => "1.2b",
            Condition::DrOwnBest => "1.2c",
            Condition::DrMixBest => "1.2d",
            Condition::PretrainAll => "2.1a",
            Condition::PretrainBest => "2.1b",
            Condition::DrPretrainAll => "2.2a",
            Condition::DrPretrainBest => "2.2b",
        }
    }

    pub fn uses_dr(&self) -> bool {
        self.dr_mask_source().is_some()
    }

    /// Where the dimension-reduction mask comes from, when any.
    pub fn dr_mask_source(&self) -> Option<GroupMode> {
        match self {
            Condition::DrOwnAll | Condition::DrMixAll | Condition::DrPretrainAll => {
                Some(GroupMode::AllOthers)
            }
            Condition::DrOwnBest | Condition::DrMixBest | Condition::DrPretrainBest => {
                Some(GroupMode::Best)
            }
            _ => None,
        }
    }

    /// Which super subject contributes extra training data, when any.
    pub fn group_mode(&self) -> Option<GroupMode> {
        match self {
            Condition::MixAll
            | Condition::DrMixAll
            | Condition::PretrainAll
            | Condition::DrPretrainAll => Some(GroupMode::AllOthers),
            Condition::MixBest
            | Condition::DrMixBest
            | Condition::PretrainBest
            | Condition::DrPretrainBest => Some(GroupMode::Best),
            _ => None,
        }
    }

    /// True for the two-phase pretrain + retrain conditions.
    pub fn retrain(&self) -> bool {
        matches!(
            self,
            Condition::PretrainAll
                | Condition::PretrainBest
                | Condition::DrPretrainAll
                | Condition::DrPretrainBest
        )
    }

    fn ordinal(&self) -> u64 {
        Condition::ALL.iter().position(|c| c == self).unwrap() as u64
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .iter()
            .find(|c| c.code().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::config(format!("unknown condition {s:?}")))
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// The 19-point training-fraction grid: 0.00, 0.05, ..., 0.90.
pub fn fraction_grid() -> Vec<f64> {
    (0..=18).map(|p| (p * 5) as f64 / 100.0).collect()
}

/// Snaps a fraction to the 5% grid, rejecting off-grid values.
pub fn canonical_fraction(fraction: f64) -> Result<f64> {
    let percent = (fraction * 100.0).round();
    if (fraction * 100.0 - percent).abs() > 1e-6
        || percent < 0.0
        || percent > 90.0
        || (percent as u32) % 5 != 0
    {
        return Err(Error::config(format!(
            "fraction {fraction} is not on the 0.00..0.90 grid in 0.05 steps"
        )));
    }
    Ok(percent / 100.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub reps: usize,
    pub folds: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn new(reps: usize, folds: usize, seed: u64) -> Self {
        ExperimentConfig {
            reps,
            folds,
            seed,
            train: TrainConfig::default(),
        }
    }
}

/// Dimension-reduction masks cached per (target, super-subject mode).
#[derive(Debug, Clone, Default)]
pub struct MaskStore {
    masks: BTreeMap<(String, GroupMode), Mask>,
}

impl MaskStore {
    pub fn new() -> Self {
        MaskStore::default()
    }

    pub fn insert(&mut self, target: impl Into<String>, mode: GroupMode, mask: Mask) {
        self.masks.insert((target.into(), mode), mask);
    }

    pub fn get(&self, target: &str, mode: GroupMode) -> Option<&Mask> {
        self.masks.get(&(target.to_string(), mode))
    }
}

/// Everything a condition needs that does not depend on the training
/// fraction: prepared features, the reduction mask, and (for retrain
/// conditions) the pretrained model, which is shared by every fraction and
/// fold.
pub struct ConditionContext {
    pub condition: Condition,
    pub target_id: String,
    pub target_features: FeatureTensor,
    pub super_features: Option<FeatureTensor>,
    pub dr_mask: Option<Mask>,
    pub pretrained: Option<PerceptronModel>,
    pub pretrain_seconds: f64,
    pub cv_seed: u64,
    seed_base: u64,
}

/// Design matrix for the listed rows: masked columns when a reduction mask
/// is given, otherwise the full channel-major flattening (column
/// `c · n_bins + b`).
pub fn design_matrix(
    features: &FeatureTensor,
    rows: &[usize],
    mask: Option<&Mask>,
) -> Result<Array2<f64>> {
    match mask {
        Some(m) => apply_mask_to_rows(features, rows, m),
        None => {
            let (n_channels, n_bins) = (features.n_channels(), features.n_bins());
            let mut out = Array2::zeros((rows.len(), n_channels * n_bins));
            for (r, &row) in rows.iter().enumerate() {
                for c in 0..n_channels {
                    for b in 0..n_bins {
                        out[[r, c * n_bins + b]] = features.data[[row, c, b]];
                    }
                }
            }
            Ok(out)
        }
    }
}

fn labels_for(features: &FeatureTensor, rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&r| features.labels[r]).collect()
}

/// Trains the offline model for a retrain condition: a 90/5 train/val
/// split of the super subject's groups, no target data involved.
pub fn pretrain_model(
    super_features: &FeatureTensor,
    dr_mask: Option<&Mask>,
    train: &TrainConfig,
    seed: u64,
) -> Result<(PerceptronModel, f64)> {
    let groups = super_features.group_label_pairs();
    let plan = make_splits(&groups, &CvSpec::new(1, 1, 0.90, seed))?;
    let fold = &plan.folds[0];
    let train_rows = rows_for_groups(&super_features.group_ids, &fold.train_groups);
    let val_rows = rows_for_groups(&super_features.group_ids, &fold.val_groups);

    let x_train = design_matrix(super_features, &train_rows, dr_mask)?;
    let y_train = labels_for(super_features, &train_rows);
    let x_val = design_matrix(super_features, &val_rows, dr_mask)?;
    let y_val = labels_for(super_features, &val_rows);

    let started = Instant::now();
    let model = perceptron_train(
        x_train.view(),
        &y_train,
        x_val.view(),
        &y_val,
        &train.with_seed(mix_seed(seed, &[7])),
    )?;
    Ok((model, started.elapsed().as_secs_f64()))
}

/// Resolves the condition's inputs for one target: features, transfer
/// group, reduction mask, and the shared pretrained model where needed.
///
/// Reduction masks must already be present in `masks` — they are produced
/// offline by the mask-search stage — and their absence is an error that
/// names the missing entry.
pub fn prepare_condition(
    target: &SubjectRecord,
    roster: &[SubjectRecord],
    condition: Condition,
    cfg: &ExperimentConfig,
    masks: &MaskStore,
    bsub: Option<&BsubTable>,
) -> Result<ConditionContext> {
    let target_features = prepare_features(target)?;
    let roster_ids: Vec<String> = roster.iter().map(|s| s.subject_id.clone()).collect();

    let super_features = match condition.group_mode() {
        None => None,
        Some(mode) => {
            let members = select_group(&target.subject_id, &roster_ids, mode, bsub)?;
            let records: Vec<SubjectRecord> = members
                .iter()
                .map(|id| {
                    roster
                        .iter()
                        .find(|s| &s.subject_id == id)
                        .cloned()
                        .ok_or_else(|| Error::missing(format!("subject {id} not in roster")))
                })
                .collect::<Result<_>>()?;
            Some(prepare_features(&build_super_subject(&records)?)?)
        }
    };

    let dr_mask = match condition.dr_mask_source() {
        None => None,
        Some(source) => Some(
            masks
                .get(&target.subject_id, source)
                .cloned()
                .ok_or_else(|| {
                    Error::missing(format!(
                        "no cached reduction mask for target {} from the {} super subject",
                        target.subject_id,
                        source.id()
                    ))
                })?,
        ),
    };

    let seed_base = mix_seed(
        cfg.seed,
        &[condition.ordinal(), hash_label(&target.subject_id)],
    );
    // The split plan is shared across conditions and fractions so
    // condition comparisons are paired on identical validation/test sets.
    let cv_seed = mix_seed(cfg.seed, &[hash_label(&target.subject_id)]);

    let (pretrained, pretrain_seconds) = if condition.retrain() {
        let supers = super_features
            .as_ref()
            .ok_or_else(|| Error::config("retrain condition without a transfer group"))?;
        let (model, seconds) =
            pretrain_model(supers, dr_mask.as_ref(), &cfg.train, mix_seed(seed_base, &[11]))?;
        (Some(model), seconds)
    } else {
        (None, 0.0)
    };

    Ok(ConditionContext {
        condition,
        target_id: target.subject_id.clone(),
        target_features,
        super_features,
        dr_mask,
        pretrained,
        pretrain_seconds,
        cv_seed,
        seed_base,
    })
}

/// Per-fold outcome of a condition run, with the test-set predictions kept
/// for callers that need them (e.g. verifying the zero-trial identity).
pub struct ConditionRun {
    pub stats: Vec<RunStats>,
    pub predictions: Vec<Vec<u8>>,
}

fn run_fold(
    ctx: &ConditionContext,
    fold: &FoldSplit,
    fraction: f64,
    cfg: &ExperimentConfig,
) -> Result<(RunStats, Vec<u8>)> {
    let features = &ctx.target_features;
    let mask = ctx.dr_mask.as_ref();
    let train_rows = rows_for_groups(&features.group_ids, &fold.train_groups);
    let val_rows = rows_for_groups(&features.group_ids, &fold.val_groups);
    let test_rows = rows_for_groups(&features.group_ids, &fold.test_groups);

    let x_target_train = design_matrix(features, &train_rows, mask)?;
    let y_target_train = labels_for(features, &train_rows);
    let x_val = design_matrix(features, &val_rows, mask)?;
    let y_val = labels_for(features, &val_rows);
    let x_test = design_matrix(features, &test_rows, mask)?;
    let y_test = labels_for(features, &test_rows);

    let fold_seed = mix_seed(
        ctx.seed_base,
        &[
            (fraction * 100.0).round() as u64,
            fold.rep_id as u64,
            fold.fold_id as u64,
        ],
    );
    let train_cfg = cfg.train.with_seed(fold_seed);

    let (model, train_seconds, retrain_seconds, zero_trial);
    if ctx.condition.retrain() {
        let pretrained = ctx
            .pretrained
            .as_ref()
            .ok_or_else(|| Error::config("retrain condition lost its pretrained model"))?;
        let started = Instant::now();
        model = perceptron_retrain(
            pretrained,
            x_target_train.view(),
            &y_target_train,
            x_val.view(),
            &y_val,
            &train_cfg,
        )?;
        retrain_seconds = started.elapsed().as_secs_f64();
        train_seconds = ctx.pretrain_seconds;
        zero_trial = train_rows.is_empty();
    } else {
        // Mixing conditions prepend the whole super subject to whatever
        // fraction of the target's groups is in play.
        let (x_train, y_train) = match &ctx.super_features {
            Some(supers) => {
                let all: Vec<usize> = (0..supers.n_subepochs()).collect();
                let x_super = design_matrix(supers, &all, mask)?;
                let y_super = labels_for(supers, &all);
                let x = ndarray::concatenate(
                    Axis(0),
                    &[x_super.view(), x_target_train.view()],
                )
                .map_err(|e| Error::shape(e.to_string()))?;
                let mut y = y_super;
                y.extend_from_slice(&y_target_train);
                (x, y)
            }
            None => (x_target_train, y_target_train),
        };

        zero_trial = x_train.nrows() == 0;
        let started = Instant::now();
        model = if zero_trial {
            // Nothing to fit: the zero model is the documented outcome
            // (a constant classifier, informedness 0).
            PerceptronModel::zeros(x_val.ncols())
        } else {
            perceptron_train(x_train.view(), &y_train, x_val.view(), &y_val, &train_cfg)?
        };
        train_seconds = started.elapsed().as_secs_f64();
        retrain_seconds = 0.0;
    }

    let predictions = model.predict(x_test.view())?;
    let table = contingency(&y_test, &predictions);
    let stats = RunStats {
        rep_id: fold.rep_id,
        fold_id: fold.fold_id,
        informedness: informedness(&table),
        accuracy: accuracy(&table),
        train_seconds,
        retrain_seconds,
        zero_trial,
    };
    Ok((stats, predictions))
}

/// Runs every (repetition, fold) cell of a prepared condition at one
/// training fraction. Folds run in parallel; outputs are in fold order.
pub fn run_condition_prepared(
    ctx: &ConditionContext,
    fraction: f64,
    cfg: &ExperimentConfig,
) -> Result<ConditionRun> {
    let fraction = canonical_fraction(fraction)?;
    let groups = ctx.target_features.group_label_pairs();
    let plan = make_splits(
        &groups,
        &CvSpec::new(cfg.reps, cfg.folds, fraction, ctx.cv_seed),
    )?;

    let outcomes: Vec<(RunStats, Vec<u8>)> = plan
        .folds
        .par_iter()
        .map(|fold| run_fold(ctx, fold, fraction, cfg))
        .collect::<Result<_>>()?;

    let (stats, predictions) = outcomes.into_iter().unzip();
    Ok(ConditionRun { stats, predictions })
}

/// Convenience wrapper: prepare the condition and run one fraction.
pub fn run_condition(
    target: &SubjectRecord,
    roster: &[SubjectRecord],
    condition: Condition,
    fraction: f64,
    cfg: &ExperimentConfig,
    masks: &MaskStore,
    bsub: Option<&BsubTable>,
) -> Result<Vec<RunStats>> {
    let ctx = prepare_condition(target, roster, condition, cfg, masks, bsub)?;
    Ok(run_condition_prepared(&ctx, fraction, cfg)?.stats)
}

/// Aggregated cell of the final report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub condition: String,
    pub fraction: f64,
    pub informedness_mean: Option<f64>,
    pub informedness_se: Option<f64>,
    /// Folds whose informedness was defined (both classes in the test set).
    pub n_defined: usize,
    pub accuracy_mean: f64,
    pub accuracy_se: f64,
    pub train_seconds_mean: f64,
    pub retrain_seconds_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionThreshold {
    pub condition: String,
    /// Smallest fraction statistically indistinguishable from 0.90; absent
    /// when the sweep did not include the reference point.
    pub threshold: Option<f64>,
}

/// Raw per-fold stats for one (condition, fraction) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStats {
    pub condition: String,
    pub fraction: f64,
    pub stats: Vec<RunStats>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub subject_id: String,
    pub rows: Vec<ReportRow>,
    pub thresholds: Vec<ConditionThreshold>,
    pub cells: Vec<CellStats>,
}

impl ExperimentReport {
    /// Report rows as CSV, one line per (condition, fraction) cell.
    pub fn rows_csv(&self) -> String {
        let mut out = String::from(
            "subject,condition,fraction,informedness_mean,informedness_se,n_defined,\
             accuracy_mean,accuracy_se,train_s_mean,retrain_s_mean\n",
        );
        for r in &self.rows {
            let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.subject_id,
                r.condition,
                r.fraction,
                fmt_opt(r.informedness_mean),
                fmt_opt(r.informedness_se),
                r.n_defined,
                r.accuracy_mean,
                r.accuracy_se,
                r.train_seconds_mean,
                r.retrain_seconds_mean,
            ));
        }
        out
    }

    /// Raw per-fold stats as CSV.
    pub fn stats_csv(&self) -> String {
        let mut out = String::from(crate::evaluation::RUN_STATS_CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            for s in &cell.stats {
                out.push_str(&s.to_csv_row(&cell.condition, cell.fraction));
                out.push('\n');
            }
        }
        out
    }

    /// Plot-ready data for one condition: fraction against mean ± SE.
    pub fn plot_csv(&self, condition: &str) -> String {
        let mut out =
            String::from("fraction,informedness_mean,informedness_se,accuracy_mean,accuracy_se\n");
        for r in self.rows.iter().filter(|r| r.condition == condition) {
            let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.fraction,
                fmt_opt(r.informedness_mean),
                fmt_opt(r.informedness_se),
                r.accuracy_mean,
                r.accuracy_se,
            ));
        }
        out
    }
}

/// Full factorial sweep: every condition at every fraction, aggregated,
/// plus the per-condition threshold fraction when the 0.90 reference is in
/// the sweep. Deterministic in `cfg.seed` up to wall-clock timings.
pub fn run_sweep(
    target: &SubjectRecord,
    roster: &[SubjectRecord],
    conditions: &[Condition],
    fractions: &[f64],
    cfg: &ExperimentConfig,
    masks: &MaskStore,
    bsub: Option<&BsubTable>,
) -> Result<ExperimentReport> {
    let fractions: Vec<f64> = fractions
        .iter()
        .map(|&f| canonical_fraction(f))
        .collect::<Result<_>>()?;
    if fractions.is_empty() || conditions.is_empty() {
        return Err(Error::config("nothing to sweep"));
    }

    let mut rows = Vec::new();
    let mut thresholds = Vec::new();
    let mut cells = Vec::new();
    for &condition in conditions {
        let ctx = prepare_condition(target, roster, condition, cfg, masks, bsub)?;
        let mut sweep_values: Vec<(f64, Vec<f64>)> = Vec::new();
        for &fraction in &fractions {
            let run = run_condition_prepared(&ctx, fraction, cfg)?;
            let defined: Vec<f64> = run.stats.iter().filter_map(|s| s.informedness).collect();
            let inf = aggregate(&defined).ok();
            let acc =
                aggregate(&run.stats.iter().map(|s| s.accuracy).collect::<Vec<_>>())?;
            let mean_of = |f: fn(&RunStats) -> f64| {
                run.stats.iter().map(f).sum::<f64>() / run.stats.len() as f64
            };
            rows.push(ReportRow {
                condition: condition.code().to_string(),
                fraction,
                informedness_mean: inf.map(|a| a.mean),
                informedness_se: inf.map(|a| a.se),
                n_defined: defined.len(),
                accuracy_mean: acc.mean,
                accuracy_se: acc.se,
                train_seconds_mean: mean_of(|s| s.train_seconds),
                retrain_seconds_mean: mean_of(|s| s.retrain_seconds),
            });
            sweep_values.push((fraction, defined));
            cells.push(CellStats {
                condition: condition.code().to_string(),
                fraction,
                stats: run.stats,
            });
        }

        let has_reference = fractions.iter().any(|f| (f - 0.90).abs() < 1e-9);
        thresholds.push(ConditionThreshold {
            condition: condition.code().to_string(),
            threshold: if has_reference {
                Some(threshold_fraction(&sweep_values)?)
            } else {
                None
            },
        });
    }

    Ok(ExperimentReport {
        subject_id: target.subject_id.clone(),
        rows,
        thresholds,
        cells,
    })
}

// ---------------------------------------------------------------------------
// Brute-force best-combination search

/// Settings for [`compute_bsub_table`]. Mask search runs per candidate
/// subset, so keep the swarm small for desk-scale rosters.
#[derive(Debug, Clone)]
pub struct BsubSearchConfig {
    pub mask_search: MaskSearchConfig,
    /// Cross-validation shape of the per-subset mask search.
    pub mask_reps: usize,
    pub mask_folds: usize,
    /// Cross-validation shape of the per-subset evaluation on the target.
    pub eval_reps: usize,
    pub eval_folds: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

fn combinations(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn recurse(
        start: usize,
        n: usize,
        size: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            recurse(i + 1, n, size, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    recurse(0, n, size, &mut Vec::with_capacity(size), &mut out);
    out
}

/// Scores one candidate transfer group for a target: search masks on the
/// group's super subject, distill the commonality mask, and measure the
/// masked perceptron's mean informedness on the target.
fn score_subset(
    target_features: &FeatureTensor,
    members: &[SubjectRecord],
    cfg: &BsubSearchConfig,
    seed: u64,
) -> Result<f64> {
    let super_features = prepare_features(&build_super_subject(members)?)?;
    let search = MaskSearchConfig {
        swarm: crate::pso::SwarmConfig {
            seed,
            ..cfg.mask_search.swarm.clone()
        },
        ..cfg.mask_search.clone()
    };
    let masks = collect_masks(
        &super_features,
        &search,
        &CvSpec::stage1(cfg.mask_reps, cfg.mask_folds, mix_seed(seed, &[1])),
    )?;
    let mask = com_mask(&masks, search.swarm.n_select, search.swarm.k_select)?;

    let groups = target_features.group_label_pairs();
    let plan = make_splits(
        &groups,
        &CvSpec::new(cfg.eval_reps, cfg.eval_folds, 0.90, mix_seed(seed, &[2])),
    )?;
    let mut scores = Vec::new();
    for fold in &plan.folds {
        let train_rows = rows_for_groups(&target_features.group_ids, &fold.train_groups);
        let val_rows = rows_for_groups(&target_features.group_ids, &fold.val_groups);
        let test_rows = rows_for_groups(&target_features.group_ids, &fold.test_groups);
        let model = perceptron_train(
            apply_mask_to_rows(target_features, &train_rows, &mask)?.view(),
            &labels_for(target_features, &train_rows),
            apply_mask_to_rows(target_features, &val_rows, &mask)?.view(),
            &labels_for(target_features, &val_rows),
            &cfg.train
                .with_seed(mix_seed(seed, &[3, fold.rep_id as u64, fold.fold_id as u64])),
        )?;
        let preds =
            model.predict(apply_mask_to_rows(target_features, &test_rows, &mask)?.view())?;
        let table = contingency(&labels_for(target_features, &test_rows), &preds);
        if let Some(v) = informedness(&table) {
            scores.push(v);
        }
    }
    Ok(aggregate(&scores).map(|a| a.mean).unwrap_or(0.0))
}

/// Exhaustively evaluates every subset of 2..(roster−1) other subjects per
/// target and records the best-scoring one. Intended for synthetic rosters
/// where the best combination is not known in advance.
pub fn compute_bsub_table(roster: &[SubjectRecord], cfg: &BsubSearchConfig) -> Result<BsubTable> {
    if roster.len() < 3 {
        return Err(Error::data(
            "best-combination search needs at least 3 subjects".to_string(),
        ));
    }
    let mut table = BsubTable::new();
    for target in roster {
        let target_features = prepare_features(target)?;
        let others: Vec<&SubjectRecord> = roster
            .iter()
            .filter(|s| s.subject_id != target.subject_id)
            .collect();

        let mut best: Option<(f64, Vec<String>)> = None;
        for size in 2..=others.len() {
            for combo in combinations(others.len(), size) {
                let members: Vec<SubjectRecord> =
                    combo.iter().map(|&i| others[i].clone()).collect();
                let ids: Vec<String> = members.iter().map(|m| m.subject_id.clone()).collect();
                let seed = mix_seed(
                    cfg.seed,
                    &[hash_label(&target.subject_id), hash_label(&ids.join("+"))],
                );
                let score = score_subset(&target_features, &members, cfg, seed)?;
                // Strict improvement keeps the earliest subset on ties.
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, ids));
                }
            }
        }
        table.insert(target.subject_id.clone(), best.unwrap().1);
    }
    Ok(table)
}
