//! Mask search and distillation: run the swarm across a grouped
//! cross-validation to produce one scored mask per (repetition, fold), then
//! distill the single best mask and the most-commonly-selected-indexes mask
//! out of the population. Also owns the mask application operator.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::elm_train;
use crate::data::{FeatureTensor, Mask};
use crate::error::Error;
use crate::evaluation::{accuracy, contingency, informedness, make_splits, CvSpec, FoldSplit};
use crate::pso::{run_pso, SwarmConfig};
use crate::{mix_seed, Result};

/// A mask with its search-time validation score and its score on the
/// untouched test split of the same fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredMask {
    pub mask: Mask,
    pub val_score: f64,
    pub test_score: f64,
    pub rep_id: usize,
    pub fold_id: usize,
}

/// What the fitness ELM is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessMetric {
    #[default]
    Informedness,
    Accuracy,
}

impl FitnessMetric {
    /// Undefined informedness (single-class ground truth) scores as chance.
    pub fn score(&self, y_true: &[u8], y_pred: &[u8]) -> f64 {
        let table = contingency(y_true, y_pred);
        match self {
            FitnessMetric::Informedness => informedness(&table).unwrap_or(0.0),
            FitnessMetric::Accuracy => accuracy(&table),
        }
    }
}

fn default_elm_hidden() -> usize {
    80
}

/// Swarm search plus fitness-classifier settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSearchConfig {
    #[serde(default)]
    pub swarm: SwarmConfig,
    #[serde(default = "default_elm_hidden")]
    pub elm_hidden: usize,
    #[serde(default)]
    pub metric: FitnessMetric,
}

impl Default for MaskSearchConfig {
    fn default() -> Self {
        MaskSearchConfig {
            swarm: SwarmConfig::new(10, 30, 0, 0, 0),
            elm_hidden: default_elm_hidden(),
            metric: FitnessMetric::Informedness,
        }
    }
}

/// Row indexes of the sub-epochs belonging to any of `groups`.
pub fn rows_for_groups(group_ids: &[usize], groups: &[usize]) -> Vec<usize> {
    let wanted: std::collections::BTreeSet<usize> = groups.iter().copied().collect();
    group_ids
        .iter()
        .enumerate()
        .filter(|(_, g)| wanted.contains(g))
        .map(|(i, _)| i)
        .collect()
}

/// Applies a mask to selected rows: one output row per listed sub-epoch,
/// columns ordered by (position in `elv`, position in the `fsm` row), so
/// the width is exactly `n·k`.
pub fn apply_mask_to_rows(
    features: &FeatureTensor,
    rows: &[usize],
    mask: &Mask,
) -> Result<Array2<f64>> {
    mask.check(features.n_channels(), features.n_bins())?;
    let width = mask.n * mask.k;
    let mut out = Array2::zeros((rows.len(), width));
    for (r, &row) in rows.iter().enumerate() {
        for (i, &channel) in mask.elv.iter().enumerate() {
            for (j, &bin) in mask.fsm[i].iter().enumerate() {
                out[[r, i * mask.k + j]] = features.data[[row, channel, bin]];
            }
        }
    }
    Ok(out)
}

/// [`apply_mask_to_rows`] over every sub-epoch.
pub fn apply_mask(features: &FeatureTensor, mask: &Mask) -> Result<Array2<f64>> {
    let rows: Vec<usize> = (0..features.n_subepochs()).collect();
    apply_mask_to_rows(features, &rows, mask)
}

/// Builds the swarm's fitness function: train an ELM on the masked training
/// rows, score its predictions on the masked validation rows.
///
/// The ELM seed is fixed, so the fitness is a pure function of the mask and
/// evaluations can run in parallel.
pub fn elm_mask_fitness<'a>(
    features: &'a FeatureTensor,
    train_rows: &'a [usize],
    val_rows: &'a [usize],
    hidden: usize,
    metric: FitnessMetric,
    elm_seed: u64,
) -> impl Fn(&Mask) -> Result<f64> + Sync + 'a {
    let y_train: Vec<u8> = train_rows.iter().map(|&r| features.labels[r]).collect();
    let y_val: Vec<u8> = val_rows.iter().map(|&r| features.labels[r]).collect();
    move |mask: &Mask| {
        let x_train = apply_mask_to_rows(features, train_rows, mask)?;
        let x_val = apply_mask_to_rows(features, val_rows, mask)?;
        let model = elm_train(x_train.view(), &y_train, hidden, elm_seed)?;
        let preds = model.predict(x_val.view())?;
        Ok(metric.score(&y_val, &preds))
    }
}

fn search_one_fold(
    features: &FeatureTensor,
    fold: &FoldSplit,
    cfg: &MaskSearchConfig,
    swarm: &SwarmConfig,
) -> Result<ScoredMask> {
    let train_rows = rows_for_groups(&features.group_ids, &fold.train_groups);
    let val_rows = rows_for_groups(&features.group_ids, &fold.val_groups);
    let test_rows = rows_for_groups(&features.group_ids, &fold.test_groups);
    if train_rows.is_empty() {
        return Err(Error::data(format!(
            "fold ({}, {}) has no training rows",
            fold.rep_id, fold.fold_id
        )));
    }

    let elm_seed = mix_seed(swarm.seed, &[1]);
    let fitness = elm_mask_fitness(
        features,
        &train_rows,
        &val_rows,
        cfg.elm_hidden,
        cfg.metric,
        elm_seed,
    );
    let result = run_pso(swarm, fitness)?;

    // Reassess the winning mask on the fold's untouched test split.
    let x_train = apply_mask_to_rows(features, &train_rows, &result.mask)?;
    let y_train: Vec<u8> = train_rows.iter().map(|&r| features.labels[r]).collect();
    let x_test = apply_mask_to_rows(features, &test_rows, &result.mask)?;
    let y_test: Vec<u8> = test_rows.iter().map(|&r| features.labels[r]).collect();
    let model = elm_train(x_train.view(), &y_train, cfg.elm_hidden, elm_seed)?;
    let preds = model.predict(x_test.view())?;
    let test_score = cfg.metric.score(&y_test, &preds);

    Ok(ScoredMask {
        mask: result.mask,
        val_score: result.fitness,
        test_score,
        rep_id: fold.rep_id,
        fold_id: fold.fold_id,
    })
}

/// Runs one swarm search per (repetition, fold) of the cross-validation
/// plan and returns every winning mask with its validation and test score.
///
/// Folds are independent — each gets its own derived seed — and run in
/// parallel without affecting the result.
pub fn collect_masks(
    features: &FeatureTensor,
    cfg: &MaskSearchConfig,
    cv: &CvSpec,
) -> Result<Vec<ScoredMask>> {
    let groups = features.group_label_pairs();
    let plan = make_splits(&groups, cv)?;

    let swarm_base = SwarmConfig {
        n_channels: features.n_channels(),
        n_bins: features.n_bins(),
        ..cfg.swarm.clone()
    };
    swarm_base.validate()?;

    plan.folds
        .par_iter()
        .map(|fold| {
            let swarm = SwarmConfig {
                seed: mix_seed(cfg.swarm.seed, &[fold.rep_id as u64, fold.fold_id as u64]),
                ..swarm_base.clone()
            };
            search_one_fold(features, fold, cfg, &swarm)
        })
        .collect()
}

/// The single best mask: highest mean of validation and test score, ties
/// resolved toward the lowest (rep_id, fold_id).
pub fn best_mask(masks: &[ScoredMask]) -> Result<Mask> {
    let mut best: Option<&ScoredMask> = None;
    for candidate in masks {
        let replace = match best {
            None => true,
            Some(current) => {
                let (a, b) = (mean_score(candidate), mean_score(current));
                a > b
                    || (a == b
                        && (candidate.rep_id, candidate.fold_id) < (current.rep_id, current.fold_id))
            }
        };
        if replace {
            best = Some(candidate);
        }
    }
    best.map(|s| s.mask.clone())
        .ok_or_else(|| Error::data("no masks to choose from"))
}

fn mean_score(s: &ScoredMask) -> f64 {
    (s.val_score + s.test_score) / 2.0
}

/// Ranks map keys by descending count, ascending key on count ties.
fn by_frequency(counts: &BTreeMap<usize, usize>) -> Vec<usize> {
    let mut entries: Vec<(usize, usize)> = counts.iter().map(|(&k, &c)| (k, c)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.into_iter().map(|(k, _)| k).collect()
}

/// Extends `chosen` up to `want` entries from `ranked`, then from 0,1,2,...
fn fill_selection(mut chosen: Vec<usize>, ranked: &[usize], want: usize) -> Vec<usize> {
    for &idx in ranked {
        if chosen.len() == want {
            break;
        }
        if !chosen.contains(&idx) {
            chosen.push(idx);
        }
    }
    let mut next = 0;
    while chosen.len() < want {
        if !chosen.contains(&next) {
            chosen.push(next);
        }
        next += 1;
    }
    chosen
}

/// The commonality mask: the `n` most frequently selected channels across
/// the population, and per chosen channel the `k` bins most frequently
/// paired with it.
///
/// Bin frequencies are conditioned on the masks that actually selected the
/// channel (rows are channel-specific); channels seen with fewer than `k`
/// distinct bins fall back to the global bin ranking. Every tie breaks
/// toward the lower index.
pub fn com_mask(masks: &[ScoredMask], n: usize, k: usize) -> Result<Mask> {
    if masks.is_empty() {
        return Err(Error::data("no masks to distill"));
    }

    let mut channel_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut global_bin_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut per_channel_bins: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for scored in masks {
        for (i, &c) in scored.mask.elv.iter().enumerate() {
            *channel_counts.entry(c).or_default() += 1;
            let channel_bins = per_channel_bins.entry(c).or_default();
            for &b in &scored.mask.fsm[i] {
                *channel_bins.entry(b).or_default() += 1;
                *global_bin_counts.entry(b).or_default() += 1;
            }
        }
    }

    let elv = fill_selection(Vec::new(), &by_frequency(&channel_counts), n);
    let global_ranking = by_frequency(&global_bin_counts);
    let fsm = elv
        .iter()
        .map(|c| {
            let own = per_channel_bins
                .get(c)
                .map(by_frequency)
                .unwrap_or_default();
            let row = fill_selection(Vec::new(), &own, own.len().min(k));
            fill_selection(row, &global_ranking, k)
        })
        .collect();

    Ok(Mask::new(elv, fsm))
}
