//! Signal pipeline: demeaning, common average referencing, super-epoch
//! slicing and magnitude-spectrum feature extraction, plus the synthetic
//! multi-subject generator used by the desk-scale harness.
//!
//! The pipeline is deliberately minimal — no windowing, no band-pass, no
//! artifact handling. Every operation here is a pure function.

use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureTensor, SubjectRecord, TrialTensor};
use crate::error::Error;
use crate::Result;

/// Subtracts each (sub-epoch, channel) time series' own mean.
pub fn demean(trials: &TrialTensor) -> TrialTensor {
    let mut data = trials.data.clone();
    for mut series in data.rows_mut() {
        let mean = series.sum() / series.len() as f64;
        series.mapv_inplace(|v| v - mean);
    }
    TrialTensor {
        data,
        group_ids: trials.group_ids.clone(),
        labels: trials.labels.clone(),
    }
}

/// Subtracts the instantaneous cross-channel mean at every time sample.
///
/// Needs at least two channels; referencing a single channel would zero it.
pub fn common_average_reference(trials: &TrialTensor) -> Result<TrialTensor> {
    if trials.n_channels() < 2 {
        return Err(Error::data(
            "common average reference requires at least 2 channels".to_string(),
        ));
    }
    let mut data = trials.data.clone();
    let n_channels = trials.n_channels() as f64;
    for mut epoch in data.axis_iter_mut(Axis(0)) {
        // epoch: [channels x samples]
        let channel_mean = epoch.sum_axis(Axis(0)) / n_channels;
        for mut channel in epoch.rows_mut() {
            channel -= &channel_mean;
        }
    }
    Ok(TrialTensor {
        data,
        group_ids: trials.group_ids.clone(),
        labels: trials.labels.clone(),
    })
}

/// Cuts raw super-epoch recordings into fixed-length sub-epochs, dropping
/// `drop_edges` sub-epochs at each end (transition periods).
///
/// `raw` is `[n_super × n_channels × n_raw_samples]` with one label per
/// super-epoch. Every kept sub-epoch keeps its source super-epoch index as
/// `group_id` and inherits its label. Samples are never mixed across
/// super-epochs.
pub fn slice_super_epochs(
    raw: &Array3<f64>,
    labels: &[u8],
    sub_len: usize,
    drop_edges: usize,
) -> Result<TrialTensor> {
    let (n_super, n_channels, n_raw) = raw.dim();
    if labels.len() != n_super {
        return Err(Error::shape(format!(
            "{} labels for {} super-epochs",
            labels.len(),
            n_super
        )));
    }
    if sub_len == 0 || n_raw % sub_len != 0 {
        return Err(Error::data(format!(
            "super-epoch length {n_raw} is not divisible by sub-epoch length {sub_len}"
        )));
    }
    let per_super = n_raw / sub_len;
    if per_super <= 2 * drop_edges {
        return Err(Error::data(format!(
            "{per_super} sub-epochs per super-epoch leave nothing after dropping {drop_edges} from each end"
        )));
    }
    let kept = per_super - 2 * drop_edges;

    let mut data = Array3::zeros((n_super * kept, n_channels, sub_len));
    let mut group_ids = Vec::with_capacity(n_super * kept);
    let mut sub_labels = Vec::with_capacity(n_super * kept);
    let mut out = 0;
    for g in 0..n_super {
        for s in 0..kept {
            let start = (drop_edges + s) * sub_len;
            data.index_axis_mut(Axis(0), out)
                .assign(&raw.slice(ndarray::s![g, .., start..start + sub_len]));
            group_ids.push(g);
            sub_labels.push(labels[g]);
            out += 1;
        }
    }
    Ok(TrialTensor {
        data,
        group_ids,
        labels: sub_labels,
    })
}

/// Magnitude spectrum per (sub-epoch, channel).
///
/// Bin `m` of a length-`n` series holds `|Σ_t x[t]·e^(−2πi·m·t/n)|` for
/// `m ∈ [0, floor(n/2))` — positive frequencies, DC retained, no
/// normalization and no window.
pub fn dft_magnitude(trials: &TrialTensor) -> Result<FeatureTensor> {
    let n_samples = trials.n_samples();
    if n_samples < 2 {
        return Err(Error::data(format!(
            "need at least 2 samples per sub-epoch, got {n_samples}"
        )));
    }
    let n_bins = n_samples / 2;
    let (n_sub, n_channels, _) = trials.data.dim();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_samples);
    let mut buffer = vec![Complex::new(0.0, 0.0); n_samples];

    let mut data = Array3::zeros((n_sub, n_channels, n_bins));
    for s in 0..n_sub {
        for c in 0..n_channels {
            for (t, slot) in buffer.iter_mut().enumerate() {
                *slot = Complex::new(trials.data[[s, c, t]], 0.0);
            }
            fft.process(&mut buffer);
            for m in 0..n_bins {
                data[[s, c, m]] = buffer[m].norm();
            }
        }
    }
    Ok(FeatureTensor {
        data,
        group_ids: trials.group_ids.clone(),
        labels: trials.labels.clone(),
    })
}

/// Full feature pipeline for one record: demean, common average reference,
/// magnitude spectrum.
pub fn prepare_features(record: &SubjectRecord) -> Result<FeatureTensor> {
    let demeaned = demean(&record.trials);
    let referenced = common_average_reference(&demeaned)?;
    dft_magnitude(&referenced)
}

// ---------------------------------------------------------------------------
// Synthetic subjects

fn default_sample_rate() -> u32 {
    200
}
fn default_sub_epoch_samples() -> usize {
    100
}
fn default_sub_epochs_per_super() -> usize {
    5
}

/// Parameters of the synthetic subject generator.
///
/// Class-1 super-epochs carry sinusoids at `informative_bins` (cycles per
/// sub-epoch window) on `informative_channels`, with amplitude
/// `effect_size · noise_sigma`, added to white Gaussian noise; class-0
/// super-epochs carry noise only. Labels alternate, so classes are balanced
/// within one. Subject "strength" is modeled purely by `effect_size`;
/// transfer affinity between generated subjects by how much their
/// informative channels overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subject_id: String,
    pub n_channels: usize,
    pub n_super_epochs: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: u32,
    /// Samples per kept sub-epoch (so the spectrum has half as many bins).
    #[serde(default = "default_sub_epoch_samples")]
    pub sub_epoch_samples: usize,
    /// Sub-epochs recorded per super-epoch, including any dropped edges.
    #[serde(default = "default_sub_epochs_per_super")]
    pub sub_epochs_per_super: usize,
    /// Sub-epochs discarded at each end of every super-epoch.
    #[serde(default)]
    pub drop_edges: usize,
    pub informative_channels: Vec<usize>,
    pub informative_bins: Vec<usize>,
    pub effect_size: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_super_epochs == 0 {
            return Err(Error::config("need at least one channel and one super-epoch"));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        if self.sub_epochs_per_super <= 2 * self.drop_edges {
            return Err(Error::config("drop_edges leaves no sub-epochs"));
        }
        let n_bins = self.sub_epoch_samples / 2;
        if let Some(&c) = self.informative_channels.iter().find(|&&c| c >= self.n_channels) {
            return Err(Error::config(format!(
                "informative channel {c} outside [0, {})",
                self.n_channels
            )));
        }
        if let Some(&b) = self.informative_bins.iter().find(|&&b| b >= n_bins) {
            return Err(Error::config(format!(
                "informative bin {b} outside [0, {n_bins})"
            )));
        }
        if self.effect_size < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::config("effect_size and noise_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Generates one synthetic subject. Deterministic in `cfg.seed`.
///
/// Samples are quantized to `f32` so records round-trip exactly through the
/// disk container.
pub fn synth_subject(cfg: &SynthConfig) -> Result<SubjectRecord> {
    cfg.validate()?;

    let sub_len = cfg.sub_epoch_samples;
    let n_raw = cfg.sub_epochs_per_super * sub_len;
    let labels: Vec<u8> = (0..cfg.n_super_epochs).map(|g| (g % 2) as u8).collect();
    let amplitude = cfg.effect_size * cfg.noise_sigma;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::config(format!("bad noise_sigma: {e}")))?;

    let mut raw = Array3::zeros((cfg.n_super_epochs, cfg.n_channels, n_raw));
    for g in 0..cfg.n_super_epochs {
        for c in 0..cfg.n_channels {
            for t in 0..n_raw {
                raw[[g, c, t]] = noise.sample(&mut rng);
            }
        }
        if labels[g] == 1 {
            for &c in &cfg.informative_channels {
                for &m in &cfg.informative_bins {
                    // m cycles per sub-epoch window; windows tile the
                    // super-epoch, so the tone stays exactly on bin m in
                    // every kept sub-epoch.
                    let phase = rng.random::<f64>() * std::f64::consts::TAU;
                    let omega = std::f64::consts::TAU * m as f64 / sub_len as f64;
                    for t in 0..n_raw {
                        raw[[g, c, t]] += amplitude * (omega * t as f64 + phase).sin();
                    }
                }
            }
        }
    }
    raw.mapv_inplace(|v| (v as f32) as f64);

    let trials = slice_super_epochs(&raw, &labels, sub_len, cfg.drop_edges)?;
    Ok(SubjectRecord::from_trials(
        cfg.subject_id.clone(),
        cfg.sample_rate_hz,
        trials,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::RngCore;

    fn noise_trials(n_sub: usize, n_channels: usize, n_samples: usize, seed: u64) -> TrialTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((n_sub, n_channels, n_samples), |_| {
            rng.next_u64() as f64 / u64::MAX as f64 * 4.0 - 2.0
        });
        TrialTensor {
            data,
            group_ids: (0..n_sub).collect(),
            labels: (0..n_sub).map(|i| (i % 2) as u8).collect(),
        }
    }

    #[test]
    fn demean_zeroes_constant_channels() {
        let mut t = noise_trials(2, 3, 16, 1);
        t.data.fill(5.0);
        let out = demean(&t);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn demean_is_idempotent() {
        let t = noise_trials(3, 2, 500, 2);
        let once = demean(&t);
        let twice = demean(&once);
        for (a, b) in once.data.iter().zip(twice.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn demean_means_vanish() {
        let t = noise_trials(4, 3, 500, 3);
        let out = demean(&t);
        for series in out.data.rows() {
            let mean = series.sum() / series.len() as f64;
            assert!(mean.abs() < 1e-9, "residual mean {mean}");
        }
    }

    #[test]
    fn demean_ignores_per_channel_offsets() {
        let t = noise_trials(2, 3, 64, 4);
        let mut shifted = t.clone();
        for (c, mut channel) in shifted.data.axis_iter_mut(Axis(1)).enumerate() {
            channel += 10.0 * (c as f64 + 1.0);
        }
        let a = demean(&t);
        let b = demean(&shifted);
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn car_leaves_antisymmetric_pair_unchanged() {
        let base = noise_trials(2, 1, 32, 5);
        let mut data = Array3::zeros((2, 2, 32));
        for s in 0..2 {
            for t in 0..32 {
                data[[s, 0, t]] = base.data[[s, 0, t]];
                data[[s, 1, t]] = -base.data[[s, 0, t]];
            }
        }
        let trials = TrialTensor {
            data: data.clone(),
            group_ids: vec![0, 1],
            labels: vec![0, 1],
        };
        let out = common_average_reference(&trials).unwrap();
        for (a, b) in out.data.iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn car_zeroes_identical_channels() {
        let mut t = noise_trials(2, 4, 16, 6);
        let first = t.data.index_axis(Axis(1), 0).to_owned();
        for mut channel in t.data.axis_iter_mut(Axis(1)) {
            channel.assign(&first);
        }
        let out = common_average_reference(&t).unwrap();
        assert!(out.data.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn car_channel_means_vanish() {
        let t = noise_trials(3, 4, 100, 7);
        let out = common_average_reference(&t).unwrap();
        for epoch in out.data.axis_iter(Axis(0)) {
            for sample in epoch.axis_iter(Axis(1)) {
                let mean = sample.sum() / sample.len() as f64;
                assert!(mean.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn car_rejects_single_channel() {
        let t = noise_trials(1, 1, 8, 8);
        assert!(common_average_reference(&t).is_err());
    }

    #[test]
    fn car_is_idempotent() {
        let t = noise_trials(3, 4, 64, 13);
        let once = common_average_reference(&t).unwrap();
        let twice = common_average_reference(&once).unwrap();
        for (a, b) in once.data.iter().zip(twice.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn slicing_produces_expected_counts_and_groups() {
        // 280 super-epochs of 3500 samples at 500-sample sub-epochs with one
        // dropped at each end: 280 x 5 kept sub-epochs.
        let raw = Array3::from_shape_fn((280, 2, 3500), |(g, c, t)| {
            (g * 7919 + c * 131 + t) as f64
        });
        let labels: Vec<u8> = (0..280).map(|g| (g % 2) as u8).collect();
        let out = slice_super_epochs(&raw, &labels, 500, 1).unwrap();
        assert_eq!(out.n_subepochs(), 1400);
        assert_eq!(out.n_groups(), 280);
        assert_eq!(out.group_ids[0..5], [0, 0, 0, 0, 0]);
        assert_eq!(out.labels[5], labels[1]);
    }

    #[test]
    fn slicing_single_super_epoch() {
        let raw = Array3::from_shape_fn((1, 2, 3500), |(_, c, t)| (c * 3500 + t) as f64);
        let out = slice_super_epochs(&raw, &[1], 500, 1).unwrap();
        assert_eq!(out.n_subepochs(), 5);
        assert!(out.group_ids.iter().all(|&g| g == 0));
        assert!(out.labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn slicing_rejects_non_divisible_length() {
        let raw = Array3::zeros((1, 2, 3500));
        assert!(slice_super_epochs(&raw, &[0], 400, 1).is_err());
    }

    #[test]
    fn slicing_rejects_overdropping() {
        let raw = Array3::zeros((1, 2, 1000));
        assert!(slice_super_epochs(&raw, &[0], 500, 1).is_err());
    }

    #[test]
    fn slicing_preserves_middle_segment_exactly() {
        let raw = Array3::from_shape_fn((3, 2, 800), |(g, c, t)| (g * 1600 + c * 800 + t) as f64);
        let labels = [0u8, 1, 0];
        let out = slice_super_epochs(&raw, &labels, 100, 2).unwrap();
        // 8 sub-epochs per super-epoch, 2 dropped each end -> 4 kept.
        assert_eq!(out.n_subepochs(), 12);
        for g in 0..3 {
            for s in 0..4 {
                let sub = out.data.index_axis(Axis(0), g * 4 + s);
                let orig = raw.slice(ndarray::s![g, .., (2 + s) * 100..(3 + s) * 100]);
                assert_eq!(sub, orig);
            }
        }
    }

    /// Direct O(n^2) magnitude spectrum, the oracle the FFT path is checked
    /// against. Kept independent of the implementation on purpose.
    pub(crate) fn dft_magnitude_oracle(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut out = Vec::with_capacity(n / 2);
        for m in 0..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let angle = -std::f64::consts::TAU * m as f64 * t as f64 / n as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            out.push((re * re + im * im).sqrt());
        }
        out
    }

    #[test]
    fn dft_bin_count_is_half_the_samples() {
        let t = noise_trials(1, 1, 500, 9);
        let f = dft_magnitude(&t).unwrap();
        assert_eq!(f.n_bins(), 250);
    }

    #[test]
    fn dft_of_constant_signal_is_dc_only() {
        let mut t = noise_trials(1, 1, 64, 10);
        t.data.fill(3.0);
        let f = dft_magnitude(&t).unwrap();
        assert!((f.data[[0, 0, 0]] - 3.0 * 64.0).abs() < 1e-9);
        for m in 1..f.n_bins() {
            assert!(f.data[[0, 0, m]] < 1e-9);
        }
    }

    #[test]
    fn dft_locates_a_pure_tone() {
        let mut t = noise_trials(1, 1, 500, 11);
        for s in 0..500 {
            t.data[[0, 0, s]] = (std::f64::consts::TAU * 17.0 * s as f64 / 500.0).cos();
        }
        let f = dft_magnitude(&t).unwrap();
        let argmax = (1..250)
            .max_by(|&a, &b| f.data[[0, 0, a]].total_cmp(&f.data[[0, 0, b]]))
            .unwrap();
        assert_eq!(argmax, 17);
    }

    #[test]
    fn dft_matches_direct_oracle() {
        let t = noise_trials(10, 1, 500, 12);
        let f = dft_magnitude(&t).unwrap();
        for s in 0..10 {
            let series: Vec<f64> = t.data.slice(ndarray::s![s, 0, ..]).to_vec();
            let oracle = dft_magnitude_oracle(&series);
            let num: f64 = (0..250)
                .map(|m| (f.data[[s, 0, m]] - oracle[m]).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(num / den < 1e-9, "relative error {}", num / den);
        }
    }

    fn planted_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            subject_id: "SYN".into(),
            n_channels: 8,
            n_super_epochs: 40,
            sample_rate_hz: 200,
            sub_epoch_samples: 100,
            sub_epochs_per_super: 5,
            drop_edges: 0,
            informative_channels: vec![2, 5],
            informative_bins: vec![7, 12, 19],
            effect_size: 3.0,
            noise_sigma: 1.0,
            seed,
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = planted_cfg(77);
        let a = synth_subject(&cfg).unwrap();
        let b = synth_subject(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_labels_are_balanced() {
        let r = synth_subject(&planted_cfg(78)).unwrap();
        let ones = r.labels.iter().filter(|&&l| l == 1).count() as i64;
        let zeros = r.labels.len() as i64 - ones;
        assert!((ones - zeros).abs() <= 1);
    }

    #[test]
    fn synth_zero_effect_adds_no_signal() {
        let mut cfg = planted_cfg(79);
        cfg.effect_size = 0.0;
        let r = synth_subject(&cfg).unwrap();
        let f = dft_magnitude(&demean(&r.trials)).unwrap();
        // With no planted signal, class-conditional bin means stay within
        // noise of each other at the would-be informative bin.
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for (i, &l) in f.labels.iter().enumerate() {
            sums[l as usize] += f.data[[i, 2, 7]];
            counts[l as usize] += 1;
        }
        let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
        let scale = means[0].max(means[1]);
        assert!((means[0] - means[1]).abs() / scale < 0.25);
    }

    #[test]
    fn synth_plants_separable_signal() {
        let r = synth_subject(&planted_cfg(80)).unwrap();
        let f = dft_magnitude(&demean(&r.trials)).unwrap();
        // Class-1 magnitude at a planted (channel, bin) dwarfs class-0's.
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for (i, &l) in f.labels.iter().enumerate() {
            sums[l as usize] += f.data[[i, 5, 12]];
            counts[l as usize] += 1;
        }
        let m0 = sums[0] / counts[0] as f64;
        let m1 = sums[1] / counts[1] as f64;
        assert!(m1 > 4.0 * m0, "class means {m0} vs {m1}");
    }

    #[test]
    fn synth_rejects_out_of_range_bins() {
        let mut cfg = planted_cfg(81);
        cfg.informative_bins = vec![50];
        assert!(synth_subject(&cfg).is_err());
    }

    #[test]
    fn planted_cells_alone_support_strong_classification() {
        use crate::classifiers::elm_train;
        use crate::data::Mask;
        use crate::evaluation::{contingency, informedness};
        use crate::mask::apply_mask_to_rows;

        // Train an ELM on nothing but the planted (channel, bin) cells of
        // the first 30 super-epochs and score the held-out last 10.
        // noise_sigma is calibrated so the spectral magnitudes stay in the
        // sigmoid's responsive range; at sigma 1 the hidden layer
        // saturates and the fit collapses.
        let mut cfg = planted_cfg(82);
        cfg.noise_sigma = 0.01;
        let record = synth_subject(&cfg).unwrap();
        let features = dft_magnitude(&demean(&record.trials)).unwrap();
        let mask = Mask::new(vec![2, 5], vec![vec![7, 12, 19], vec![7, 12, 19]]);

        let (train_rows, test_rows): (Vec<usize>, Vec<usize>) = (0..features.n_subepochs())
            .partition(|&r| features.group_ids[r] < 30);
        let x_train = apply_mask_to_rows(&features, &train_rows, &mask).unwrap();
        let y_train: Vec<u8> = train_rows.iter().map(|&r| features.labels[r]).collect();
        let x_test = apply_mask_to_rows(&features, &test_rows, &mask).unwrap();
        let y_test: Vec<u8> = test_rows.iter().map(|&r| features.labels[r]).collect();

        let model = elm_train(x_train.view(), &y_train, 80, 3).unwrap();
        let preds = model.predict(x_test.view()).unwrap();
        let score = informedness(&contingency(&y_test, &preds)).unwrap();
        assert!(score > 0.8, "held-out informedness {score}");
    }
}
