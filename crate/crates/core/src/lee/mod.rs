//! The few-shot class-incremental engine: session management, the memory
//! buffer, the three-loss objective, and the classification-only
//! baselines.

mod buffer;
mod grid;
mod loss;

pub use buffer::MemoryBuffer;
pub use grid::{derive_seed, named_orders, run_grid, to_result_rows, GridSpec, RunLog};
pub use loss::LossBreakdown;

use crate::checkpoint::Checkpoint;
use crate::data::{FewShotSplit, Sample};
use crate::error::{Error, Result};
use crate::eval::{forgetting, ConfusionMatrix, ForgettingReport, MetricsRecord};
use crate::model::{
    extract_embedding, ClassId, ClassifierHead, ExtractorGrads, ExtractorParams, HeadGrads,
    ModelConfig, PreservedEmbedding,
};
use crate::numerics::{adam_step, AdamHyper, AdamState, Phase};
use loss::LossContext;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Training variants: the full method, its two single-embedding ablations,
/// and the two classification-only baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Lee,
    VanillaFt,
    ScratchLstm,
    LeeNoPreserved,
    LeeNoTemporary,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Lee => "lee",
            Mode::VanillaFt => "vanilla_ft",
            Mode::ScratchLstm => "scratch_lstm",
            Mode::LeeNoPreserved => "lee_no_preserved",
            Mode::LeeNoTemporary => "lee_no_temporary",
        }
    }

    pub fn all() -> [Mode; 5] {
        [
            Mode::Lee,
            Mode::VanillaFt,
            Mode::ScratchLstm,
            Mode::LeeNoPreserved,
            Mode::LeeNoTemporary,
        ]
    }

    /// Whether the cosine terms participate at all.
    pub fn embedding_losses(&self) -> bool {
        matches!(self, Mode::Lee | Mode::LeeNoPreserved | Mode::LeeNoTemporary)
    }

    /// Resolves the configured alpha through the mode: the ablations pin
    /// it to 0 (no preserved term) or 1 (no temporary term).
    pub fn effective_alpha(&self, alpha: f64) -> f64 {
        match self {
            Mode::LeeNoPreserved => 0.0,
            Mode::LeeNoTemporary => 1.0,
            _ => alpha,
        }
    }

    /// The scratch baseline ignores the pretrained checkpoint.
    pub fn uses_checkpoint(&self) -> bool {
        !matches!(self, Mode::ScratchLstm)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::all()
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::ConfigError(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeeConfig {
    pub mode: Mode,
    /// Trade-off weight between the prior term (alpha) and the divergence
    /// term (1 - alpha); the complement is derived, never stored.
    pub alpha: f64,
    /// Training examples per class.
    pub shots: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Apply dropout on the frozen reference pass too (off by default: the
    /// frozen pass is a reference signal).
    pub dropout_frozen_pass: bool,
    pub seed: u64,
}

impl LeeConfig {
    pub fn new(mode: Mode, shots: usize) -> Self {
        Self {
            mode,
            alpha: 0.5,
            shots,
            epochs: 15,
            lr: 1e-3,
            dropout_frozen_pass: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::ConfigError(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if ![1, 3, 5].contains(&self.shots) {
            return Err(Error::ConfigError(format!(
                "shots {} not in the supported set {{1, 3, 5}}",
                self.shots
            )));
        }
        if self.epochs == 0 {
            return Err(Error::ConfigError("epochs must be at least 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::ConfigError("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-session training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session: usize,
    pub classes_introduced: Vec<ClassId>,
    pub epoch_losses: Vec<LossBreakdown>,
}

/// One continual-learning run: a frozen pretrained extractor, its learned
/// twin, the growing head, the preserved prior embedding and the replay
/// buffer.
pub struct SessionState {
    pub config: LeeConfig,
    model_cfg: ModelConfig,
    frozen: ExtractorParams,
    frozen_hash: String,
    learned: ExtractorParams,
    head: ClassifierHead,
    prior: PreservedEmbedding,
    prior_hash: String,
    buffer: MemoryBuffer,
    class_order: Vec<ClassId>,
    completed_sessions: usize,
    rng: ChaCha8Rng,
}

impl SessionState {
    /// Starts a run: the learned extractor is a copy of the frozen one,
    /// the head covers the first two classes of the order, the buffer is
    /// empty.
    pub fn begin_run(
        checkpoint: &Checkpoint,
        prior: PreservedEmbedding,
        class_order: Vec<ClassId>,
        config: LeeConfig,
    ) -> Result<Self> {
        config.validate()?;
        if class_order.len() < 2 {
            return Err(Error::ProtocolError(
                "class order must introduce at least the two base classes".into(),
            ));
        }
        let unique: BTreeSet<_> = class_order.iter().collect();
        if unique.len() != class_order.len() {
            return Err(Error::ProtocolError("duplicate class in order".into()));
        }
        for c in &class_order {
            if checkpoint.head_registry.contains(c) {
                return Err(Error::ProtocolError(format!(
                    "target class {c} collides with a source gesture id"
                )));
            }
        }

        let model_cfg = checkpoint.config;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let frozen = if config.mode.uses_checkpoint() {
            checkpoint.extractor.clone()
        } else {
            ExtractorParams::init(&model_cfg, &mut rng)
        };
        let learned = frozen.clone();
        let head = ClassifierHead::new(&class_order[..2], model_cfg.embed, &mut rng)?;
        let frozen_hash = frozen.content_hash();
        let prior_hash = prior.content_hash();
        let buffer = MemoryBuffer::new(config.shots);
        Ok(Self {
            config,
            model_cfg,
            frozen,
            frozen_hash,
            learned,
            head,
            prior,
            prior_hash,
            buffer,
            class_order,
            completed_sessions: 0,
            rng,
        })
    }

    pub fn frozen_hash(&self) -> &str {
        &self.frozen_hash
    }

    pub fn prior_hash(&self) -> &str {
        &self.prior_hash
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn learned(&self) -> &ExtractorParams {
        &self.learned
    }

    pub fn frozen(&self) -> &ExtractorParams {
        &self.frozen
    }

    pub fn buffer(&self) -> &MemoryBuffer {
        &self.buffer
    }

    pub fn class_order(&self) -> &[ClassId] {
        &self.class_order
    }

    pub fn completed_sessions(&self) -> usize {
        self.completed_sessions
    }

    pub fn sessions_total(&self) -> usize {
        self.class_order.len() - 1
    }

    /// Classes a given session introduces: the base session brings the
    /// first two of the order, every later session exactly one.
    pub fn session_classes(&self, session: usize) -> &[ClassId] {
        if session == 0 {
            &self.class_order[..2]
        } else {
            &self.class_order[session + 1..session + 2]
        }
    }

    /// Loss and gradients over a batch. Train phase draws dropout masks
    /// from the run RNG; eval phase is deterministic and leaves the RNG
    /// untouched (useful as a diagnostic probe).
    pub fn compute_loss(
        &mut self,
        batch: &[&Sample],
        phase: Phase,
    ) -> Result<(LossBreakdown, ExtractorGrads, HeadGrads)> {
        let ctx = LossContext {
            frozen: &self.frozen,
            learned: &self.learned,
            head: &self.head,
            prior: &self.prior,
            alpha: self.config.mode.effective_alpha(self.config.alpha),
            embedding_losses: self.config.mode.embedding_losses(),
            dropout_p: self.model_cfg.dropout,
            dropout_frozen_pass: self.config.dropout_frozen_pass,
        };
        loss::compute_loss_and_grads(&ctx, batch, phase, &mut self.rng)
    }

    /// Runs one incremental session: registers the new class(es), trains
    /// `epochs` full-batch steps on the new samples plus the whole buffer
    /// with a fresh optimizer, then commits the new samples to the buffer.
    pub fn train_session(&mut self, new_samples: &[Sample]) -> Result<SessionLog> {
        let session = self.completed_sessions;
        if session >= self.sessions_total() {
            return Err(Error::ProtocolError("all sessions already completed".into()));
        }
        let expected: Vec<ClassId> = self.session_classes(session).to_vec();

        let mut by_class: std::collections::BTreeMap<ClassId, Vec<&Sample>> =
            std::collections::BTreeMap::new();
        for s in new_samples {
            by_class.entry(s.label).or_default().push(s);
        }
        let offered: BTreeSet<ClassId> = by_class.keys().copied().collect();
        let wanted: BTreeSet<ClassId> = expected.iter().copied().collect();
        if offered != wanted {
            return Err(Error::ProtocolError(format!(
                "session {session} expects classes {wanted:?}, got {offered:?}"
            )));
        }
        for (class, group) in &by_class {
            if group.len() != self.config.shots {
                return Err(Error::ProtocolError(format!(
                    "class {class} offered {} samples, expected {}",
                    group.len(),
                    self.config.shots
                )));
            }
        }

        for &class in &expected {
            if self.head.index_of(class).is_none() {
                self.head.expand(class, &mut self.rng)?;
            }
        }

        // Full batch: everything replayed plus the new samples.
        let batch: Vec<&Sample> = self
            .buffer
            .samples()
            .chain(expected.iter().flat_map(|c| by_class[c].iter().copied()))
            .collect();
        if session > 0 {
            for class in self.buffer.classes() {
                assert!(
                    batch.iter().any(|s| s.label == class),
                    "replay batch lost class {class}"
                );
            }
        }

        let array_lens: Vec<usize> = self
            .learned
            .arrays()
            .iter()
            .map(|(_, a)| a.len())
            .chain(self.head.arrays().iter().map(|(_, a)| a.len()))
            .collect();
        // Fresh moments per session: the head just changed shape and each
        // session is its own optimization problem.
        let mut adam = AdamState::new(AdamHyper::with_lr(self.config.lr), &array_lens)?;

        let mut epoch_losses = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let ctx = LossContext {
                frozen: &self.frozen,
                learned: &self.learned,
                head: &self.head,
                prior: &self.prior,
                alpha: self.config.mode.effective_alpha(self.config.alpha),
                embedding_losses: self.config.mode.embedding_losses(),
                dropout_p: self.model_cfg.dropout,
                dropout_frozen_pass: self.config.dropout_frozen_pass,
            };
            let (breakdown, grads, head_grads) =
                loss::compute_loss_and_grads(&ctx, &batch, Phase::Train, &mut self.rng)?;
            let grad_arrays: Vec<&[f64]> = grads
                .arrays()
                .into_iter()
                .chain(head_grads.arrays())
                .collect();
            let mut param_arrays: Vec<&mut [f64]> = Vec::with_capacity(7);
            param_arrays.extend(self.learned.arrays_mut());
            param_arrays.extend(self.head.arrays_mut());
            adam_step(&mut adam, &mut param_arrays, &grad_arrays)?;
            epoch_losses.push(breakdown);
        }

        for &class in &expected {
            let owned: Vec<Sample> = by_class[&class].iter().map(|s| (*s).clone()).collect();
            self.buffer.insert_class(class, owned)?;
        }
        self.completed_sessions += 1;

        assert_eq!(
            self.buffer.total(),
            self.config.shots * (self.completed_sessions + 1),
            "buffer size diverged from protocol"
        );
        assert_eq!(
            self.frozen.content_hash(),
            self.frozen_hash,
            "frozen extractor moved during training"
        );
        assert_eq!(
            self.prior.content_hash(),
            self.prior_hash,
            "preserved embedding moved during training"
        );

        Ok(SessionLog {
            session,
            classes_introduced: expected,
            epoch_losses,
        })
    }

    /// Eval-mode forward of the learned extractor plus head over a test
    /// set. Returns the confusion matrix and the raw (true, predicted)
    /// pairs for independent recomputation.
    pub fn evaluate(
        &self,
        test_samples: &[&Sample],
    ) -> Result<(ConfusionMatrix, Vec<(ClassId, ClassId)>)> {
        for s in test_samples {
            if self.head.index_of(s.label).is_none() {
                return Err(Error::ProtocolError(format!(
                    "test label {} not registered",
                    s.label
                )));
            }
        }
        let mut conf = ConfusionMatrix::new(self.head.registry().to_vec());
        let mut pairs = Vec::with_capacity(test_samples.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0); // eval mode: never used
        for s in test_samples {
            let (z, _) = extract_embedding(
                &self.learned,
                &s.seq,
                Phase::Eval,
                self.model_cfg.dropout,
                &mut rng,
            )?;
            let predicted = self.head.predict(&z)?;
            conf.record(s.label, predicted)?;
            pairs.push((s.label, predicted));
        }
        Ok((conf, pairs))
    }
}

/// Everything one full run produces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtocolOutput {
    pub class_order: Vec<ClassId>,
    pub records: Vec<MetricsRecord>,
    /// Raw (true, predicted) pairs per session, aligned with `records`.
    pub pairs: Vec<Vec<(ClassId, ClassId)>>,
    pub session_logs: Vec<SessionLog>,
    pub forgetting: ForgettingReport,
}

/// Runs the full incremental protocol for one (order, split, config):
/// train each session, then evaluate on the union of the test samples of
/// every class seen so far.
pub fn run_protocol(
    checkpoint: &Checkpoint,
    prior: &PreservedEmbedding,
    class_order: &[ClassId],
    split: &FewShotSplit,
    config: LeeConfig,
) -> Result<ProtocolOutput> {
    if split.shots != config.shots {
        return Err(Error::ConfigError(format!(
            "split carries {} shots, config expects {}",
            split.shots, config.shots
        )));
    }
    for c in class_order {
        if !split.train.contains_key(c) {
            return Err(Error::ProtocolError(format!("split misses class {c}")));
        }
    }

    let mut state = SessionState::begin_run(
        checkpoint,
        prior.clone(),
        class_order.to_vec(),
        config,
    )?;
    let sessions = state.sessions_total();
    let mut records = Vec::with_capacity(sessions);
    let mut pairs_log = Vec::with_capacity(sessions);
    let mut session_logs = Vec::with_capacity(sessions);

    for session in 0..sessions {
        let new_classes: Vec<ClassId> = state.session_classes(session).to_vec();
        let mut train_samples = Vec::new();
        for c in &new_classes {
            train_samples.extend(split.train[c].iter().cloned());
        }
        session_logs.push(state.train_session(&train_samples)?);

        let seen = &state.class_order()[..session + 2];
        let test_refs: Vec<&Sample> = seen
            .iter()
            .flat_map(|c| split.test[c].iter())
            .collect();
        let (conf, pairs) = state.evaluate(&test_refs)?;
        records.push(MetricsRecord::from_confusion(session, conf)?);
        pairs_log.push(pairs);
    }

    let forgetting = forgetting(&records, class_order)?;
    Ok(ProtocolOutput {
        class_order: class_order.to_vec(),
        records,
        pairs: pairs_log,
        session_logs,
        forgetting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Provenance;
    use crate::data::{make_fewshot_split, Domain};
    use crate::model::PriorProvenance;
    use crate::numerics::{Mat2, Vec1};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            hidden: 6,
            embed: 4,
            seq_len: 5,
            input: 3,
            dropout: 0.5,
        }
    }

    fn tiny_checkpoint() -> Checkpoint {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        Checkpoint::new(
            cfg,
            ExtractorParams::init(&cfg, &mut rng),
            None,
            None,
            Provenance::default(),
        )
    }

    fn tiny_prior(dim: usize) -> PreservedEmbedding {
        PreservedEmbedding {
            values: Vec1::new((0..dim).map(|i| 0.3 + i as f64 * 0.1).collect()).unwrap(),
            provenance: PriorProvenance::default(),
        }
    }

    fn tiny_samples(classes: std::ops::Range<u32>, reps: u32) -> Vec<Sample> {
        let mut out = Vec::new();
        for c in classes {
            for r in 0..reps {
                let data: Vec<f64> = (0..15)
                    .map(|i| ((c as f64 + 1.0) * (i as f64 + 1.0) * 0.13 + r as f64 * 0.31).sin())
                    .collect();
                out.push(Sample::from_processed_seq(
                    Mat2::new(5, 3, data).unwrap(),
                    c,
                    100,
                    Domain::Target,
                ));
            }
        }
        out
    }

    fn base_config(mode: Mode) -> LeeConfig {
        LeeConfig {
            epochs: 2,
            ..LeeConfig::new(mode, 1)
        }
    }

    #[test]
    fn begin_run_state_shape() {
        let ckpt = tiny_checkpoint();
        let state = SessionState::begin_run(
            &ckpt,
            tiny_prior(4),
            vec![50, 51, 52],
            base_config(Mode::Lee),
        )
        .unwrap();
        assert_eq!(state.head().class_count(), 2);
        assert_eq!(state.frozen_hash(), ckpt.extractor_hash());
        assert_eq!(state.buffer().total(), 0);
        assert_eq!(state.sessions_total(), 2);
    }

    #[test]
    fn begin_run_rejects_short_order() {
        let ckpt = tiny_checkpoint();
        assert!(matches!(
            SessionState::begin_run(&ckpt, tiny_prior(4), vec![50], base_config(Mode::Lee)),
            Err(Error::ProtocolError(_))
        ));
    }

    #[test]
    fn divergence_is_exactly_one_at_run_start() {
        let ckpt = tiny_checkpoint();
        let mut state = SessionState::begin_run(
            &ckpt,
            tiny_prior(4),
            vec![50, 51, 52],
            base_config(Mode::Lee),
        )
        .unwrap();
        let samples = tiny_samples(50..52, 1);
        let batch: Vec<&Sample> = samples.iter().collect();
        let (breakdown, _, _) = state.compute_loss(&batch, Phase::Eval).unwrap();
        assert_eq!(breakdown.divergence, 1.0);
    }

    #[test]
    fn prior_loss_zero_when_embedding_hits_prior() {
        // Zero LSTM weights + projection bias = the prior: every input
        // maps exactly onto the preserved embedding.
        let cfg = tiny_cfg();
        let prior = tiny_prior(4);
        let mut extractor = ExtractorParams {
            lstm: crate::numerics::LstmParams::zeros(cfg.input, cfg.hidden),
            proj_w: Mat2::zeros(cfg.embed, cfg.hidden),
            proj_b: prior.values.clone(),
        };
        extractor.proj_b = prior.values.clone();
        let ckpt = Checkpoint::new(cfg, extractor, None, None, Provenance::default());
        let mut state = SessionState::begin_run(
            &ckpt,
            prior,
            vec![50, 51, 52],
            base_config(Mode::Lee),
        )
        .unwrap();
        let samples = tiny_samples(50..52, 1);
        let batch: Vec<&Sample> = samples.iter().collect();
        let (breakdown, _, _) = state.compute_loss(&batch, Phase::Eval).unwrap();
        assert_eq!(breakdown.prior, 0.0);
    }

    #[test]
    fn loss_decomposition_matches_weighted_sum() {
        let ckpt = tiny_checkpoint();
        let mut config = base_config(Mode::Lee);
        config.alpha = 0.5;
        let mut state =
            SessionState::begin_run(&ckpt, tiny_prior(4), vec![50, 51, 52], config).unwrap();
        let samples = tiny_samples(50..52, 2);
        let batch: Vec<&Sample> = samples.iter().collect();
        let (b, _, _) = state.compute_loss(&batch, Phase::Train).unwrap();
        let recomposed = 0.5 * b.prior + 0.5 * b.divergence + b.classification;
        assert!((b.total - recomposed).abs() < 1e-12);
        assert!((0.0..=2.0).contains(&b.prior));
        assert!((-1.0..=1.0).contains(&b.divergence));
        assert!(b.classification >= 0.0);
    }

    #[test]
    fn classification_only_modes_log_zero_cosines() {
        let ckpt = tiny_checkpoint();
        for mode in [Mode::VanillaFt, Mode::ScratchLstm] {
            let mut state = SessionState::begin_run(
                &ckpt,
                tiny_prior(4),
                vec![50, 51, 52],
                base_config(mode),
            )
            .unwrap();
            let samples = tiny_samples(50..52, 1);
            let batch: Vec<&Sample> = samples.iter().collect();
            let (b, _, _) = state.compute_loss(&batch, Phase::Train).unwrap();
            assert_eq!(b.prior, 0.0);
            assert_eq!(b.divergence, 0.0);
            assert_eq!(b.total, b.classification);
        }
    }

    #[test]
    fn unregistered_label_rejected() {
        let ckpt = tiny_checkpoint();
        let mut state = SessionState::begin_run(
            &ckpt,
            tiny_prior(4),
            vec![50, 51, 52],
            base_config(Mode::Lee),
        )
        .unwrap();
        let stray = tiny_samples(60..61, 1);
        let batch: Vec<&Sample> = stray.iter().collect();
        assert!(matches!(
            state.compute_loss(&batch, Phase::Eval),
            Err(Error::ProtocolError(_))
        ));
    }

    #[test]
    fn buffer_grows_by_protocol() {
        let ckpt = tiny_checkpoint();
        let samples = tiny_samples(50..55, 3);
        let split = make_fewshot_split(&samples, 1, 3).unwrap();
        let order = vec![50, 51, 52, 53, 54];
        let out = run_protocol(&ckpt, &tiny_prior(4), &order, &split, base_config(Mode::Lee))
            .unwrap();
        // 5 classes -> 4 sessions (base introduces two).
        assert_eq!(out.records.len(), 4);
        assert_eq!(out.session_logs.len(), 4);
        for (i, rec) in out.records.iter().enumerate() {
            assert_eq!(rec.n_classes, i + 2);
        }
    }

    #[test]
    fn head_expansion_preserves_logits_before_training() {
        let ckpt = tiny_checkpoint();
        let mut state = SessionState::begin_run(
            &ckpt,
            tiny_prior(4),
            vec![50, 51, 52],
            base_config(Mode::Lee),
        )
        .unwrap();
        let z = Vec1::new(vec![0.1, -0.4, 0.9, 0.2]).unwrap();
        let before = state.head.classify(&z).unwrap();
        state.head.expand(52, &mut state.rng).unwrap();
        let after = state.head.classify(&z).unwrap();
        assert_eq!(&after[..2], before.as_ref());
    }

    #[test]
    fn protocol_is_deterministic() {
        let ckpt = tiny_checkpoint();
        let samples = tiny_samples(50..53, 3);
        let split = make_fewshot_split(&samples, 1, 9).unwrap();
        let order = vec![50, 51, 52];
        let run = || {
            run_protocol(
                &ckpt,
                &tiny_prior(4),
                &order,
                &split,
                base_config(Mode::Lee),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.records, b.records);
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.session_logs, b.session_logs);
    }

    #[test]
    fn ablation_modes_match_pinned_alphas() {
        let ckpt = tiny_checkpoint();
        let samples = tiny_samples(50..53, 3);
        let split = make_fewshot_split(&samples, 1, 5).unwrap();
        let order = vec![50, 51, 52];

        let mut zero_alpha = base_config(Mode::Lee);
        zero_alpha.alpha = 0.0;
        let a = run_protocol(&ckpt, &tiny_prior(4), &order, &split, zero_alpha).unwrap();
        let b = run_protocol(
            &ckpt,
            &tiny_prior(4),
            &order,
            &split,
            base_config(Mode::LeeNoPreserved),
        )
        .unwrap();
        assert_eq!(a.records, b.records);

        let mut one_alpha = base_config(Mode::Lee);
        one_alpha.alpha = 1.0;
        let c = run_protocol(&ckpt, &tiny_prior(4), &order, &split, one_alpha).unwrap();
        let d = run_protocol(
            &ckpt,
            &tiny_prior(4),
            &order,
            &split,
            base_config(Mode::LeeNoTemporary),
        )
        .unwrap();
        assert_eq!(c.records, d.records);
    }

    #[test]
    fn untrained_random_model_predicts_at_chance() {
        // A scratch model evaluated straight after begin_run (before any
        // training session) sits at chance over the two base classes.
        let ckpt = tiny_checkpoint();
        let samples = tiny_samples(50..52, 40);
        let mut total_acc = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let mut config = base_config(Mode::ScratchLstm);
            config.seed = seed;
            let state =
                SessionState::begin_run(&ckpt, tiny_prior(4), vec![50, 51], config).unwrap();
            let refs: Vec<&Sample> = samples.iter().collect();
            let (conf, _) = state.evaluate(&refs).unwrap();
            total_acc += crate::eval::accuracy(&conf).unwrap();
        }
        let mean = total_acc / seeds as f64;
        assert!(
            (mean - 0.5).abs() < 0.05,
            "chance-level accuracy drifted: {mean}"
        );
    }

    #[test]
    fn config_validation() {
        let mut c = LeeConfig::new(Mode::Lee, 5);
        c.alpha = 1.5;
        assert!(c.validate().is_err());
        let mut c = LeeConfig::new(Mode::Lee, 2);
        c.alpha = 0.5;
        assert!(c.validate().is_err());
        let mut c = LeeConfig::new(Mode::Lee, 3);
        c.epochs = 0;
        assert!(c.validate().is_err());
    }
}
