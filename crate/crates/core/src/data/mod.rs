//! Canonical sample format, preprocessing (length normalization + robust
//! scaling) and few-shot splitting.

mod adapters;
mod canonical;
mod synth;

pub use adapters::{adapt_motion_gestures, adapt_smartwatch_layout};
pub use canonical::{export_canonical, ingest_canonical, read_canonical, write_canonical};
pub use synth::{generate_dataset, synth_generate, SynthSpec};

use crate::error::{Error, Result};
use crate::model::ClassId;
use crate::numerics::Mat2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

pub const AXES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Source => write!(f, "source"),
            Domain::Target => write!(f, "target"),
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::DataError(format!("unknown domain `{other}`"))),
        }
    }
}

/// One recorded gesture trial, variable length, raw sensor units.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrial {
    pub subject: u32,
    pub gesture: u32,
    pub rep: u32,
    pub domain: Domain,
    pub readings: Vec<[f64; AXES]>,
}

impl RawTrial {
    pub fn new(
        subject: u32,
        gesture: u32,
        rep: u32,
        domain: Domain,
        readings: Vec<[f64; AXES]>,
    ) -> Result<Self> {
        if readings.len() < 2 {
            return Err(Error::DataError(format!(
                "trial (subject {subject}, gesture {gesture}, rep {rep}) has {} readings, need at least 2",
                readings.len()
            )));
        }
        if readings.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DataError(format!(
                "non-finite reading in trial (subject {subject}, gesture {gesture}, rep {rep})"
            )));
        }
        Ok(Self {
            subject,
            gesture,
            rep,
            domain,
            readings,
        })
    }
}

/// A fully preprocessed trial: fixed length, scaled, ready for the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seq: Mat2,
    pub label: ClassId,
    pub subject: u32,
    pub domain: Domain,
    processed: bool,
}

impl Sample {
    /// Only the preprocessing pipeline builds samples; the flag guards
    /// against scaling the same data twice.
    fn from_pipeline(seq: Mat2, label: ClassId, subject: u32, domain: Domain) -> Self {
        Self {
            seq,
            label,
            subject,
            domain,
            processed: true,
        }
    }

    /// Escape hatch for tests that synthesize already-normalized data.
    pub fn from_processed_seq(seq: Mat2, label: ClassId, subject: u32, domain: Domain) -> Self {
        Self::from_pipeline(seq, label, subject, domain)
    }

    pub fn is_processed(&self) -> bool {
        self.processed
    }
}

/// Per-axis centering and scale fitted on the source-domain corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: [f64; AXES],
    pub iqr: [f64; AXES],
}

/// Resamples a trial to exactly `len` rows per axis with piecewise-linear
/// interpolation over the sample index (timestamps are ignored; see the
/// repo docs). Endpoints are preserved exactly.
pub fn interpolate_to_length(trial: &RawTrial, len: usize) -> Result<Mat2> {
    let n = trial.readings.len();
    if n < 2 {
        return Err(Error::DataError("cannot interpolate fewer than 2 readings".into()));
    }
    if len < 2 {
        return Err(Error::DataError("target length must be at least 2".into()));
    }
    let mut out = Mat2::zeros(len, AXES);
    let scale = (n - 1) as f64 / (len - 1) as f64;
    for i in 0..len {
        let pos = i as f64 * scale;
        let lo = pos.floor() as usize;
        let row = out.row_mut(i);
        if lo >= n - 1 {
            row.copy_from_slice(&trial.readings[n - 1]);
            continue;
        }
        let frac = pos - lo as f64;
        for a in 0..AXES {
            let v0 = trial.readings[lo][a];
            let v1 = trial.readings[lo + 1][a];
            row[a] = v0 + frac * (v1 - v0);
        }
    }
    Ok(out)
}

/// Quantile by linear interpolation of order statistics over a sorted
/// slice: position p*(n-1), interpolated between neighbors.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    if lo >= n - 1 {
        return sorted[n - 1];
    }
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Fits per-axis mean and interquartile range over all timesteps of all
/// fit sequences.
pub fn fit_robust_scaler(seqs: &[Mat2]) -> Result<ScalerStats> {
    if seqs.is_empty() {
        return Err(Error::DataError("cannot fit scaler on an empty set".into()));
    }
    let mut mean = [0.0; AXES];
    let mut iqr = [0.0; AXES];
    for axis in 0..AXES {
        let mut values: Vec<f64> = seqs
            .iter()
            .flat_map(|s| s.rows_iter().map(move |row| row[axis]))
            .collect();
        let sum: f64 = values.iter().sum();
        mean[axis] = sum / values.len() as f64;
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        let q25 = quantile_sorted(&values, 0.25);
        let q75 = quantile_sorted(&values, 0.75);
        let range = q75 - q25;
        if range <= 0.0 {
            return Err(Error::DegenerateAxis { axis });
        }
        iqr[axis] = range;
    }
    Ok(ScalerStats { mean, iqr })
}

/// (value - mean) / IQR per axis.
pub fn apply_scaler(stats: &ScalerStats, seq: &Mat2) -> Mat2 {
    let mut out = seq.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for a in 0..AXES {
            row[a] = (row[a] - stats.mean[a]) / stats.iqr[a];
        }
    }
    out
}

/// Interpolate + scale a batch of trials into model-ready samples.
pub fn preprocess(trials: &[RawTrial], stats: &ScalerStats, len: usize) -> Result<Vec<Sample>> {
    trials
        .iter()
        .map(|t| {
            let seq = interpolate_to_length(t, len)?;
            let seq = apply_scaler(stats, &seq);
            Ok(Sample::from_pipeline(seq, t.gesture, t.subject, t.domain))
        })
        .collect()
}

/// Interpolates source trials, fits the scaler on them, and returns the
/// stats. The fit uses the whole source domain so downstream pipelines do
/// not depend on which subject a pretraining fold holds out.
pub fn fit_source_scaler(source_trials: &[RawTrial], len: usize) -> Result<ScalerStats> {
    let seqs: Vec<Mat2> = source_trials
        .iter()
        .map(|t| interpolate_to_length(t, len))
        .collect::<Result<_>>()?;
    fit_robust_scaler(&seqs)
}

/// Per-class train/test partition for one target subject.
#[derive(Clone, Debug)]
pub struct FewShotSplit {
    pub shots: usize,
    pub seed: u64,
    pub train: BTreeMap<ClassId, Vec<Sample>>,
    pub test: BTreeMap<ClassId, Vec<Sample>>,
}

impl FewShotSplit {
    pub fn classes(&self) -> Vec<ClassId> {
        self.train.keys().copied().collect()
    }
}

/// Uniformly samples `k` training repetitions per class without
/// replacement; everything else becomes that class's test set.
pub fn make_fewshot_split(samples: &[Sample], k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::ProtocolError("shot count must be positive".into()));
    }
    let mut by_class: BTreeMap<ClassId, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.label).or_default().push(s);
    }
    if by_class.is_empty() {
        return Err(Error::ProtocolError("no samples to split".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for (class, group) in by_class {
        if group.len() < k + 1 {
            return Err(Error::ProtocolError(format!(
                "class {class} has {} repetitions, need at least {} for {k} shots plus a test set",
                group.len(),
                k + 1
            )));
        }
        let mut indices: Vec<usize> = (0..group.len()).collect();
        indices.shuffle(&mut rng);
        let (train_idx, test_idx) = indices.split_at(k);
        let mut train_idx = train_idx.to_vec();
        let mut test_idx = test_idx.to_vec();
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        train.insert(class, train_idx.iter().map(|&i| group[i].clone()).collect());
        test.insert(class, test_idx.iter().map(|&i| group[i].clone()).collect());
    }
    Ok(FewShotSplit {
        shots: k,
        seed,
        train,
        test,
    })
}

/// SHA-256 over a canonical byte encoding of the trials, for checkpoint
/// provenance.
pub fn dataset_hash(trials: &[RawTrial]) -> String {
    let mut hasher = Sha256::new();
    for t in trials {
        hasher.update(t.subject.to_le_bytes());
        hasher.update(t.gesture.to_le_bytes());
        hasher.update(t.rep.to_le_bytes());
        hasher.update([matches!(t.domain, Domain::Target) as u8]);
        for r in &t.readings {
            for v in r {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    crate::model::hex_string(&hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trial_with(values: Vec<[f64; 3]>) -> RawTrial {
        RawTrial::new(0, 0, 0, Domain::Source, values).unwrap()
    }

    #[test]
    fn interpolate_identity_when_lengths_match() {
        let t = trial_with(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]);
        let out = interpolate_to_length(&t, 3).unwrap();
        for (i, r) in t.readings.iter().enumerate() {
            assert_eq!(out.row(i), r);
        }
    }

    #[test]
    fn interpolate_hand_oracle() {
        // Axis values [0, 1, 4] resampled to 5 points: [0, 0.5, 1, 2.5, 4].
        let t = trial_with(vec![[0.0; 3], [1.0, 1.0, 1.0], [4.0, 4.0, 4.0]]);
        let out = interpolate_to_length(&t, 5).unwrap();
        let col: Vec<f64> = (0..5).map(|i| out.at(i, 0)).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn interpolate_constant_stays_constant() {
        let t = trial_with(vec![[2.0, -1.0, 0.5]; 4]);
        let out = interpolate_to_length(&t, 9).unwrap();
        for r in 0..9 {
            assert_eq!(out.row(r), &[2.0, -1.0, 0.5]);
        }
    }

    #[test]
    fn interpolate_rejects_short_trials() {
        assert!(RawTrial::new(0, 0, 0, Domain::Source, vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn scaler_hand_oracle() {
        // Axis data [1,2,3,4,100]: mean 22, q25 = 2, q75 = 4, IQR = 2.
        let rows: Vec<[f64; 3]> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .map(|&v| [v; 3])
            .collect();
        let seq = Mat2::new(5, 3, rows.iter().flatten().copied().collect()).unwrap();
        let stats = fit_robust_scaler(&[seq.clone()]).unwrap();
        assert_eq!(stats.mean, [22.0; 3]);
        assert_eq!(stats.iqr, [2.0; 3]);
        let scaled = apply_scaler(&stats, &seq);
        assert_eq!(scaled.at(2, 0), (3.0 - 22.0) / 2.0);
        assert_eq!(scaled.at(2, 0), -9.5);
    }

    #[test]
    fn scaler_identity_on_standardized_data() {
        // mean 0, IQR 1 per axis: [-0.5, 0, 0.5] has q25 = -0.25, q75 = 0.25,
        // so stretch to [-1, 0, 1] where q25 = -0.5, q75 = 0.5 -> IQR 1.
        let rows = [[-1.0; 3], [0.0; 3], [1.0; 3]];
        let seq = Mat2::new(3, 3, rows.iter().flatten().copied().collect()).unwrap();
        let stats = fit_robust_scaler(&[seq.clone()]).unwrap();
        assert_eq!(stats.mean, [0.0; 3]);
        assert_eq!(stats.iqr, [1.0; 3]);
        let scaled = apply_scaler(&stats, &seq);
        assert_eq!(scaled, seq);
    }

    #[test]
    fn constant_axis_is_degenerate() {
        let seq = Mat2::new(4, 3, vec![5.0; 12]).unwrap();
        assert!(matches!(
            fit_robust_scaler(&[seq]),
            Err(Error::DegenerateAxis { axis: 0 })
        ));
    }

    fn synth_samples(classes: u32, reps: u32) -> Vec<Sample> {
        let mut out = Vec::new();
        for c in 0..classes {
            for r in 0..reps {
                let seq = Mat2::new(
                    4,
                    3,
                    (0..12).map(|i| (c as f64) + (r as f64) * 0.1 + i as f64).collect(),
                )
                .unwrap();
                out.push(Sample::from_processed_seq(seq, c, 100, Domain::Target));
            }
        }
        out
    }

    #[test]
    fn split_counts_match_protocol() {
        let samples = synth_samples(6, 8);
        let split = make_fewshot_split(&samples, 5, 0).unwrap();
        for class in 0..6u32 {
            assert_eq!(split.train[&class].len(), 5);
            assert_eq!(split.test[&class].len(), 3);
        }
    }

    #[test]
    fn split_with_no_test_left_rejected() {
        let samples = synth_samples(2, 8);
        assert!(matches!(
            make_fewshot_split(&samples, 8, 0),
            Err(Error::ProtocolError(_))
        ));
    }

    #[test]
    fn split_is_deterministic() {
        let samples = synth_samples(3, 8);
        let a = make_fewshot_split(&samples, 3, 7).unwrap();
        let b = make_fewshot_split(&samples, 3, 7).unwrap();
        for class in 0..3u32 {
            assert_eq!(a.train[&class], b.train[&class]);
            assert_eq!(a.test[&class], b.test[&class]);
        }
    }

    proptest! {
        #[test]
        fn split_train_test_disjoint(seed in 0u64..500, k in 1usize..6) {
            let samples = synth_samples(4, 8);
            let split = make_fewshot_split(&samples, k, seed).unwrap();
            for class in 0..4u32 {
                prop_assert_eq!(split.train[&class].len(), k);
                prop_assert_eq!(split.test[&class].len(), 8 - k);
                for tr in &split.train[&class] {
                    prop_assert!(!split.test[&class].iter().any(|te| te.seq == tr.seq));
                }
            }
        }

        #[test]
        fn interpolation_never_overshoots(
            values in proptest::collection::vec(-10.0f64..10.0, 2..12),
            len in 2usize..40,
        ) {
            let rows: Vec<[f64; 3]> = values.iter().map(|&v| [v; 3]).collect();
            let t = trial_with(rows);
            let out = interpolate_to_length(&t, len).unwrap();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..len {
                prop_assert!(out.at(r, 0) >= lo - 1e-12);
                prop_assert!(out.at(r, 0) <= hi + 1e-12);
            }
        }
    }
}
