//! Subject-transfer constructions: concatenating several subjects into one
//! Super Subject, pooling per-subject mask populations into a Meta Mask,
//! and resolving which subjects join a target's transfer group.

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::data::{Mask, SubjectRecord, TrialTensor};
use crate::error::Error;
use crate::mask::{com_mask, ScoredMask};
use crate::Result;

/// How the transfer group for a target subject is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupMode {
    /// Every roster member except the target.
    #[serde(rename = "4sub")]
    AllOthers,
    /// The configured best-performing combination for the target.
    #[serde(rename = "bsub")]
    Best,
}

impl GroupMode {
    pub fn id(&self) -> &'static str {
        match self {
            GroupMode::AllOthers => "4sub",
            GroupMode::Best => "bsub",
        }
    }
}

impl FromStr for GroupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "4sub" => Ok(GroupMode::AllOthers),
            "bsub" => Ok(GroupMode::Best),
            other => Err(Error::config(format!(
                "unknown group mode {other:?} (expected 4sub or bsub)"
            ))),
        }
    }
}

impl std::fmt::Display for GroupMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Per-target best-combination lookup, keyed by target subject id.
pub type BsubTable = BTreeMap<String, Vec<String>>;

/// The known best combinations for the standard five-subject roster
/// AA/AL/AV/AW/AY, established by prior exhaustive evaluation.
pub fn builtin_bsub_table() -> BsubTable {
    let mut table = BsubTable::new();
    table.insert("AA".into(), vec!["AL".into(), "AW".into(), "AY".into()]);
    table.insert("AL".into(), vec!["AV".into(), "AW".into(), "AY".into()]);
    table.insert("AV".into(), vec!["AA".into(), "AL".into(), "AW".into()]);
    table.insert("AW".into(), vec!["AA".into(), "AY".into()]);
    table.insert("AY".into(), vec!["AL".into(), "AV".into(), "AW".into()]);
    table
}

/// Concatenates several subjects' sub-epochs into one combined record.
///
/// Group ids are offset by the cumulative super-epoch counts of earlier
/// members, so no two sub-epochs from different sources share one, and the
/// combined id is the members' ids joined with `+`.
pub fn build_super_subject(subjects: &[SubjectRecord]) -> Result<SubjectRecord> {
    if subjects.len() < 2 {
        return Err(Error::data(format!(
            "a super subject needs at least 2 members, got {}",
            subjects.len()
        )));
    }
    let first = &subjects[0];
    let (n_channels, n_samples) = (first.trials.n_channels(), first.trials.n_samples());
    for s in subjects {
        if s.trials.n_channels() != n_channels || s.trials.n_samples() != n_samples {
            return Err(Error::shape(format!(
                "subject {} has {}x{} layout, expected {}x{}",
                s.subject_id,
                s.trials.n_channels(),
                s.trials.n_samples(),
                n_channels,
                n_samples
            )));
        }
        if s.sample_rate_hz != first.sample_rate_hz {
            return Err(Error::data(format!(
                "subject {} sampled at {} Hz, expected {}",
                s.subject_id, s.sample_rate_hz, first.sample_rate_hz
            )));
        }
    }

    let total: usize = subjects.iter().map(|s| s.trials.n_subepochs()).sum();
    let mut data = Array3::zeros((total, n_channels, n_samples));
    let mut group_ids = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    let mut group_offset = 0;
    for s in subjects {
        let n = s.trials.n_subepochs();
        data.slice_mut(ndarray::s![row..row + n, .., ..])
            .assign(&s.trials.data);
        group_ids.extend(s.trials.group_ids.iter().map(|g| g + group_offset));
        labels.extend_from_slice(&s.trials.labels);
        row += n;
        group_offset += s.trials.n_groups();
    }

    let trials = TrialTensor {
        data,
        group_ids,
        labels,
    };
    let subject_id = subjects
        .iter()
        .map(|s| s.subject_id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    Ok(SubjectRecord::from_trials(
        subject_id,
        first.sample_rate_hz,
        trials,
    ))
}

/// Pools every subject's mask population with equal weight and distills the
/// commonality mask of the pool.
pub fn build_meta_mask(
    per_subject_masks: &[(String, Vec<ScoredMask>)],
    n: usize,
    k: usize,
) -> Result<Mask> {
    if per_subject_masks.is_empty() || per_subject_masks.iter().any(|(_, m)| m.is_empty()) {
        return Err(Error::data(
            "meta mask needs at least one mask from every contributing subject".to_string(),
        ));
    }
    let pool: Vec<ScoredMask> = per_subject_masks
        .iter()
        .flat_map(|(_, masks)| masks.iter().cloned())
        .collect();
    com_mask(&pool, n, k)
}

/// Resolves the transfer-group members for `target`.
///
/// `AllOthers` takes the whole roster minus the target; `Best` looks the
/// target up in the supplied table (and checks the members exist).
pub fn select_group(
    target: &str,
    roster: &[String],
    mode: GroupMode,
    bsub_table: Option<&BsubTable>,
) -> Result<Vec<String>> {
    if !roster.iter().any(|s| s == target) {
        return Err(Error::missing(format!("target {target} not in roster")));
    }
    match mode {
        GroupMode::AllOthers => Ok(roster.iter().filter(|s| *s != target).cloned().collect()),
        GroupMode::Best => {
            let table = bsub_table.ok_or_else(|| {
                Error::missing("bsub mode requires a best-combination table".to_string())
            })?;
            let members = table.get(target).ok_or_else(|| {
                Error::missing(format!("no best-combination entry for target {target}"))
            })?;
            for m in members {
                if !roster.iter().any(|s| s == m) {
                    return Err(Error::missing(format!(
                        "best-combination member {m} not in roster"
                    )));
                }
            }
            Ok(members.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{synth_subject, SynthConfig};
    use ndarray::Axis;

    fn subject(id: &str, n_super: usize, n_channels: usize, seed: u64) -> SubjectRecord {
        synth_subject(&SynthConfig {
            subject_id: id.into(),
            n_channels,
            n_super_epochs: n_super,
            sample_rate_hz: 100,
            sub_epoch_samples: 20,
            sub_epochs_per_super: 5,
            drop_edges: 0,
            informative_channels: vec![0],
            informative_bins: vec![3],
            effect_size: 1.0,
            noise_sigma: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn super_subject_concatenates_everything() {
        // Four members, 280 super-epochs of 5 sub-epochs each.
        let members: Vec<SubjectRecord> = (0..4)
            .map(|i| subject(&format!("S{i}"), 280, 4, i as u64))
            .collect();
        let combined = build_super_subject(&members).unwrap();
        assert_eq!(combined.trials.n_subepochs(), 4 * 1400);
        assert_eq!(combined.trials.n_groups(), 4 * 280);
        assert_eq!(combined.subject_id, "S0+S1+S2+S3");
        assert!(crate::data::validate_record(&combined).is_empty());
    }

    #[test]
    fn super_subject_preserves_sub_epochs_bit_exactly() {
        let members = vec![subject("A", 6, 3, 1), subject("B", 4, 3, 2)];
        let combined = build_super_subject(&members).unwrap();
        let mut row = 0;
        for m in &members {
            for s in 0..m.trials.n_subepochs() {
                assert_eq!(
                    combined.trials.data.index_axis(Axis(0), row),
                    m.trials.data.index_axis(Axis(0), s)
                );
                assert_eq!(combined.trials.labels[row], m.trials.labels[s]);
                row += 1;
            }
        }
    }

    #[test]
    fn duplicated_member_keeps_group_ids_distinct() {
        let a = subject("A", 5, 3, 3);
        let combined = build_super_subject(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(combined.trials.n_subepochs(), 2 * a.trials.n_subepochs());
        assert_eq!(combined.trials.n_groups(), 2 * a.trials.n_groups());
        let first: std::collections::BTreeSet<usize> = combined.trials.group_ids
            [..a.trials.n_subepochs()]
            .iter()
            .copied()
            .collect();
        let second: std::collections::BTreeSet<usize> = combined.trials.group_ids
            [a.trials.n_subepochs()..]
            .iter()
            .copied()
            .collect();
        assert!(first.is_disjoint(&second));
    }

    #[test]
    fn super_subject_rejects_layout_mismatch() {
        let a = subject("A", 4, 3, 4);
        let b = subject("B", 4, 5, 5);
        assert!(build_super_subject(&[a, b]).is_err());
    }

    #[test]
    fn super_subject_rejects_single_member() {
        let a = subject("A", 4, 3, 6);
        assert!(build_super_subject(&[a]).is_err());
    }

    fn scored(elv: Vec<usize>, fsm: Vec<Vec<usize>>) -> ScoredMask {
        ScoredMask {
            mask: Mask::new(elv, fsm),
            val_score: 0.5,
            test_score: 0.5,
            rep_id: 0,
            fold_id: 0,
        }
    }

    #[test]
    fn meta_mask_of_one_subject_is_its_com_mask() {
        let masks = vec![
            scored(vec![2], vec![vec![1, 4]]),
            scored(vec![2], vec![vec![1, 7]]),
            scored(vec![5], vec![vec![3, 1]]),
        ];
        let own = com_mask(&masks, 1, 2).unwrap();
        let meta = build_meta_mask(&[("A".into(), masks)], 1, 2).unwrap();
        assert_eq!(own, meta);
    }

    #[test]
    fn meta_mask_is_invariant_under_duplication() {
        let masks_a = vec![
            scored(vec![3, 1], vec![vec![0, 2], vec![5, 1]]),
            scored(vec![3, 6], vec![vec![0, 4], vec![2, 1]]),
        ];
        let single = build_meta_mask(&[("A".into(), masks_a.clone())], 2, 2).unwrap();
        let doubled = build_meta_mask(
            &[("A".into(), masks_a.clone()), ("A2".into(), masks_a)],
            2,
            2,
        )
        .unwrap();
        assert_eq!(single, doubled);
    }

    #[test]
    fn meta_mask_merges_subject_preferences() {
        let a = vec![scored(vec![3], vec![vec![1]]); 2];
        let b = vec![scored(vec![5], vec![vec![4]]); 2];
        let meta = build_meta_mask(&[("A".into(), a), ("B".into(), b)], 2, 1).unwrap();
        let mut elv = meta.elv.clone();
        elv.sort_unstable();
        assert_eq!(elv, vec![3, 5]);
    }

    #[test]
    fn meta_mask_rejects_empty_contributions() {
        assert!(build_meta_mask(&[("A".into(), vec![])], 1, 1).is_err());
        assert!(build_meta_mask(&[], 1, 1).is_err());
    }

    fn roster5() -> Vec<String> {
        ["AA", "AL", "AV", "AW", "AY"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn all_others_excludes_only_the_target() {
        let group = select_group("AA", &roster5(), GroupMode::AllOthers, None).unwrap();
        assert_eq!(group, vec!["AL", "AV", "AW", "AY"]);

        let pair = vec!["X".to_string(), "Y".to_string()];
        let group = select_group("X", &pair, GroupMode::AllOthers, None).unwrap();
        assert_eq!(group, vec!["Y"]);
    }

    #[test]
    fn best_mode_reads_the_table() {
        let table = builtin_bsub_table();
        let group = select_group("AW", &roster5(), GroupMode::Best, Some(&table)).unwrap();
        assert_eq!(group, vec!["AA", "AY"]);
        let group = select_group("AA", &roster5(), GroupMode::Best, Some(&table)).unwrap();
        assert_eq!(group, vec!["AL", "AW", "AY"]);
    }

    #[test]
    fn missing_target_or_table_entry_errors() {
        let table = builtin_bsub_table();
        assert!(select_group("ZZ", &roster5(), GroupMode::AllOthers, None).is_err());
        assert!(select_group("AA", &roster5(), GroupMode::Best, None).is_err());
        let empty = BsubTable::new();
        assert!(select_group("AA", &roster5(), GroupMode::Best, Some(&empty)).is_err());
        let _ = table;
    }

    #[test]
    fn group_mode_parses_both_spellings() {
        assert_eq!("4sub".parse::<GroupMode>().unwrap(), GroupMode::AllOthers);
        assert_eq!("Bsub".parse::<GroupMode>().unwrap(), GroupMode::Best);
        assert!("5sub".parse::<GroupMode>().is_err());
    }
}
