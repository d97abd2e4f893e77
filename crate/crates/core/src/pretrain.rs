//! Source-domain supervised pretraining (leave-one-subject-out) and
//! distillation of the preserved embedding.

use crate::checkpoint::{Checkpoint, Provenance};
use crate::data::{Domain, Sample};
use crate::error::{Error, Result};
use crate::model::{
    classification_backward, extract_embedding, ClassId, ClassifierHead, ExtractorGrads,
    ExtractorParams, HeadGrads, ModelConfig, PreservedEmbedding, PriorProvenance,
};
use crate::numerics::{adam_step, AdamHyper, AdamState, Phase, Vec1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Source gesture ids to train on (the paper-style default is 16 of
    /// the 20 available; the caller picks which).
    pub gestures: Vec<ClassId>,
    /// Held-out validation subject (leave-one-subject-out).
    pub excluded_subject: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn new(gestures: Vec<ClassId>, excluded_subject: u32) -> Self {
        Self {
            gestures,
            excluded_subject,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gestures.is_empty() {
            return Err(Error::ConfigError("gesture subset is empty".into()));
        }
        let unique: BTreeSet<_> = self.gestures.iter().collect();
        if unique.len() != self.gestures.len() {
            return Err(Error::ConfigError("duplicate gesture in subset".into()));
        }
        if self.epochs == 0 {
            return Err(Error::ConfigError("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::ConfigError("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the held-out subject; `None` when that subject has no
    /// samples in the provided set.
    pub holdout_accuracy: Option<f64>,
    pub train_count: usize,
    pub holdout_count: usize,
}

/// Trains the extractor plus a source classification head with plain
/// cross-entropy, holding out one subject, and emits a checkpoint.
pub fn train_source(
    samples: &[Sample],
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    dataset_hash: String,
) -> Result<(Checkpoint, PretrainReport)> {
    cfg.validate()?;
    let in_subset = |s: &Sample| s.domain == Domain::Source && cfg.gestures.contains(&s.label);
    let train: Vec<&Sample> = samples
        .iter()
        .filter(|s| in_subset(s) && s.subject != cfg.excluded_subject)
        .collect();
    let holdout: Vec<&Sample> = samples
        .iter()
        .filter(|s| in_subset(s) && s.subject == cfg.excluded_subject)
        .collect();
    if train.is_empty() {
        return Err(Error::ProtocolError("pretraining set is empty".into()));
    }
    for g in &cfg.gestures {
        if !train.iter().any(|s| s.label == *g) {
            return Err(Error::ProtocolError(format!(
                "gesture {g} has no training samples after holding out subject {}",
                cfg.excluded_subject
            )));
        }
    }

    let mut registry = cfg.gestures.clone();
    registry.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut extractor = ExtractorParams::init(model_cfg, &mut rng);
    let mut head = ClassifierHead::new(&registry, model_cfg.embed, &mut rng)?;

    let array_lens: Vec<usize> = extractor
        .arrays()
        .iter()
        .map(|(_, a)| a.len())
        .chain(head.arrays().iter().map(|(_, a)| a.len()))
        .collect();
    let mut adam = AdamState::new(AdamHyper::with_lr(cfg.lr), &array_lens)?;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = ExtractorGrads::zeros(&extractor);
            let mut head_grads = HeadGrads::zeros(&head);
            let weight = 1.0 / batch.len() as f64;
            for &idx in batch {
                let sample = train[idx];
                // leave-one-subject-out audit
                assert_ne!(
                    sample.subject, cfg.excluded_subject,
                    "held-out subject leaked into a training batch"
                );
                let (z, trace) = extract_embedding(
                    &extractor,
                    &sample.seq,
                    Phase::Train,
                    model_cfg.dropout,
                    &mut rng,
                )?;
                let label_idx = head.index_of(sample.label).expect("registered above");
                let mut grad_z = vec![0.0; model_cfg.embed];
                let loss = classification_backward(
                    &head,
                    &z,
                    label_idx,
                    weight,
                    &mut head_grads,
                    &mut grad_z,
                )?;
                loss_sum += loss;
                crate::model::embedding_backward(
                    &extractor,
                    &trace,
                    &Vec1::new(grad_z)?,
                    &mut grads,
                )?;
            }
            let grad_arrays: Vec<&[f64]> = grads
                .arrays()
                .into_iter()
                .chain(head_grads.arrays())
                .collect();
            let mut param_arrays: Vec<&mut [f64]> = Vec::with_capacity(7);
            param_arrays.extend(extractor.arrays_mut());
            param_arrays.extend(head.arrays_mut());
            adam_step(&mut adam, &mut param_arrays, &grad_arrays)?;
        }
        epoch_losses.push(loss_sum / train.len() as f64);
    }

    let holdout_accuracy = if holdout.is_empty() {
        None
    } else {
        let mut correct = 0usize;
        for sample in &holdout {
            let (z, _) = extract_embedding(
                &extractor,
                &sample.seq,
                Phase::Eval,
                model_cfg.dropout,
                &mut rng,
            )?;
            if head.predict(&z)? == sample.label {
                correct += 1;
            }
        }
        Some(correct as f64 / holdout.len() as f64)
    };

    let report = PretrainReport {
        epoch_losses,
        holdout_accuracy,
        train_count: train.len(),
        holdout_count: holdout.len(),
    };
    let checkpoint = Checkpoint::new(
        *model_cfg,
        extractor,
        Some(head),
        None,
        Provenance {
            seed: cfg.seed,
            dataset_hash,
            excluded_subject: Some(cfg.excluded_subject),
        },
    );
    Ok((checkpoint, report))
}

/// How a set of per-sample embeddings collapses into the single preserved
/// vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingReduction {
    /// Arithmetic mean over all selected samples (default).
    Mean,
    /// Mean of per-class means, weighting every class equally.
    ClassMeanOfMeans,
}

pub(crate) fn reduce_embeddings(
    embeddings: &[(ClassId, Vec1)],
    reduction: EmbeddingReduction,
) -> Result<Vec1> {
    if embeddings.is_empty() {
        return Err(Error::ProtocolError("no embeddings to reduce".into()));
    }
    let dim = embeddings[0].1.len();
    let mean_of = |items: &[&Vec1]| -> Vec<f64> {
        let mut acc = vec![0.0; dim];
        for v in items {
            for (a, &x) in acc.iter_mut().zip(v.iter()) {
                *a += x;
            }
        }
        acc.iter_mut().for_each(|a| *a /= items.len() as f64);
        acc
    };
    let values = match reduction {
        EmbeddingReduction::Mean => {
            let all: Vec<&Vec1> = embeddings.iter().map(|(_, v)| v).collect();
            mean_of(&all)
        }
        EmbeddingReduction::ClassMeanOfMeans => {
            let mut by_class: std::collections::BTreeMap<ClassId, Vec<&Vec1>> =
                std::collections::BTreeMap::new();
            for (c, v) in embeddings {
                by_class.entry(*c).or_default().push(v);
            }
            let class_means: Vec<Vec<f64>> =
                by_class.values().map(|group| mean_of(group)).collect();
            let mut acc = vec![0.0; dim];
            for m in &class_means {
                for (a, &x) in acc.iter_mut().zip(m) {
                    *a += x;
                }
            }
            acc.iter_mut().for_each(|a| *a /= class_means.len() as f64);
            acc
        }
    };
    Vec1::new(values)
}

/// Distills the preserved embedding: the reduction of eval-mode embeddings
/// of every selected source sample. Deterministic given (checkpoint,
/// selection).
pub fn compute_preserved_embedding(
    checkpoint: &Checkpoint,
    samples: &[Sample],
    subject_subset: Option<&[u32]>,
    gesture_subset: Option<&[ClassId]>,
    reduction: EmbeddingReduction,
) -> Result<PreservedEmbedding> {
    let selected: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.domain == Domain::Source)
        .filter(|s| subject_subset.is_none_or(|subs| subs.contains(&s.subject)))
        .filter(|s| gesture_subset.is_none_or(|gs| gs.contains(&s.label)))
        .collect();
    if selected.is_empty() {
        return Err(Error::ProtocolError(
            "preserved-embedding selection is empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    let mut embeddings = Vec::with_capacity(selected.len());
    for s in &selected {
        let (z, _) = extract_embedding(
            &checkpoint.extractor,
            &s.seq,
            Phase::Eval,
            checkpoint.config.dropout,
            &mut rng,
        )?;
        embeddings.push((s.label, z));
    }
    let values = reduce_embeddings(&embeddings, reduction)?;

    let subjects: BTreeSet<u32> = selected.iter().map(|s| s.subject).collect();
    let gestures: BTreeSet<ClassId> = selected.iter().map(|s| s.label).collect();
    Ok(PreservedEmbedding {
        values,
        provenance: PriorProvenance {
            subjects: subjects.into_iter().collect(),
            gestures: gestures.into_iter().collect(),
            checkpoint_hash: checkpoint.extractor_hash(),
        },
    })
}
