//! The feature extractor (LSTM -> dropout -> linear projection) and the
//! growing classification head.

use crate::error::{Error, Result};
use crate::numerics::{
    dropout, lstm_forward, matvec_into, matvec_transposed_acc, outer_acc, LstmGrads, LstmParams,
    LstmTrace, Mat2, Phase, Vec1,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type ClassId = u32;

/// Shape and dropout configuration of the extractor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// LSTM hidden size.
    pub hidden: usize,
    /// Embedding dimension (projection output).
    pub embed: usize,
    /// Sequence length every sample is resampled to.
    pub seq_len: usize,
    /// Input channels (3-axis acceleration).
    pub input: usize,
    /// Dropout probability between the LSTM summary and the projection.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 14,
            seq_len: 50,
            input: 3,
            dropout: 0.5,
        }
    }
}

/// All trainable parameters of the feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorParams {
    pub lstm: LstmParams,
    /// embed x hidden
    pub proj_w: Mat2,
    /// embed
    pub proj_b: Vec1,
}

fn uniform_fan_in<R: Rng>(m: &mut Mat2, fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in m.as_mut_slice() {
        *v = rng.random_range(-bound..bound);
    }
}

impl ExtractorParams {
    /// Deterministic initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    /// per weight matrix, zero biases except the LSTM forget-gate slice,
    /// which starts at 1.0.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut lstm = LstmParams::zeros(cfg.input, cfg.hidden);
        uniform_fan_in(&mut lstm.w_x, cfg.input, rng);
        uniform_fan_in(&mut lstm.w_h, cfg.hidden, rng);
        for r in lstm.forget_gate_rows() {
            lstm.b[r] = 1.0;
        }
        let mut proj_w = Mat2::zeros(cfg.embed, cfg.hidden);
        uniform_fan_in(&mut proj_w, cfg.hidden, rng);
        Self {
            lstm,
            proj_w,
            proj_b: Vec1::zeros(cfg.embed),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.proj_b.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden
    }

    /// Parameter arrays in checkpoint order.
    pub fn arrays(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("lstm.w_x", self.lstm.w_x.as_slice()),
            ("lstm.w_h", self.lstm.w_h.as_slice()),
            ("lstm.b", &self.lstm.b),
            ("proj.w", self.proj_w.as_slice()),
            ("proj.b", &self.proj_b),
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.lstm.w_x.as_mut_slice(),
            self.lstm.w_h.as_mut_slice(),
            self.lstm.b.as_mut_slice(),
            self.proj_w.as_mut_slice(),
            self.proj_b.as_mut_slice(),
        ]
    }

    /// SHA-256 over the little-endian bytes of all arrays in declared
    /// order. Used to assert that frozen parameters never move.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (_, arr) in self.arrays() {
            for v in arr {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Gradients for [`ExtractorParams`], shape-matched and zero-initialized.
#[derive(Clone, Debug)]
pub struct ExtractorGrads {
    pub lstm: LstmGrads,
    pub proj_w: Mat2,
    pub proj_b: Vec1,
}

impl ExtractorGrads {
    pub fn zeros(params: &ExtractorParams) -> Self {
        Self {
            lstm: LstmGrads::zeros(&params.lstm),
            proj_w: Mat2::zeros(params.proj_w.rows(), params.proj_w.cols()),
            proj_b: Vec1::zeros(params.proj_b.len()),
        }
    }

    pub fn arrays(&self) -> [&[f64]; 5] {
        [
            self.lstm.w_x.as_slice(),
            self.lstm.w_h.as_slice(),
            &self.lstm.b,
            self.proj_w.as_slice(),
            &self.proj_b,
        ]
    }

    pub fn scale(&mut self, factor: f64) {
        for arr in [
            self.lstm.w_x.as_mut_slice(),
            self.lstm.w_h.as_mut_slice(),
            self.lstm.b.as_mut_slice(),
            self.proj_w.as_mut_slice(),
            self.proj_b.as_mut_slice(),
        ] {
            arr.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Everything needed to backpropagate one embedding extraction.
pub struct EmbeddingTrace {
    lstm: LstmTrace,
    /// Dropout scale per hidden unit (1.0 everywhere in eval mode).
    mask: Vec1,
    /// h_L after dropout, the projection input.
    dropped: Vec1,
}

/// Runs the extractor on a preprocessed sequence: the final LSTM hidden
/// state goes through dropout and the linear projection. No nonlinearity
/// after the projection.
pub fn extract_embedding<R: Rng>(
    params: &ExtractorParams,
    seq: &Mat2,
    phase: Phase,
    dropout_p: f64,
    rng: &mut R,
) -> Result<(Vec1, EmbeddingTrace)> {
    let lstm = lstm_forward(&params.lstm, seq)?;
    let h_last = lstm.last_hidden();
    let (dropped, mask) = dropout(&h_last, dropout_p, phase, rng)?;
    let mut z = vec![0.0; params.embed_dim()];
    matvec_into(&params.proj_w, &dropped, &mut z);
    for (zi, bi) in z.iter_mut().zip(params.proj_b.iter()) {
        *zi += bi;
    }
    Ok((
        Vec1::from_raw(z),
        EmbeddingTrace {
            lstm,
            mask,
            dropped,
        },
    ))
}

/// Accumulates gradients of the extraction into `grads`, given the
/// gradient at the embedding.
pub fn embedding_backward(
    params: &ExtractorParams,
    trace: &EmbeddingTrace,
    grad_embedding: &Vec1,
    grads: &mut ExtractorGrads,
) -> Result<()> {
    if grad_embedding.len() != params.embed_dim() {
        return Err(Error::NumericsError(format!(
            "embedding gradient length {} does not match embed dim {}",
            grad_embedding.len(),
            params.embed_dim()
        )));
    }
    outer_acc(&mut grads.proj_w, grad_embedding, &trace.dropped);
    for (b, &g) in grads.proj_b.iter_mut().zip(grad_embedding.iter()) {
        *b += g;
    }
    let mut d_hidden = vec![0.0; params.hidden_dim()];
    matvec_transposed_acc(&params.proj_w, grad_embedding, &mut d_hidden);
    for (d, &m) in d_hidden.iter_mut().zip(trace.mask.iter()) {
        *d *= m;
    }
    crate::numerics::lstm_backward_acc(
        &params.lstm,
        &trace.lstm,
        &Vec1::from_raw(d_hidden),
        &mut grads.lstm,
        None,
    )
}

/// Linear classification layer over embeddings, one row per registered
/// class. Rows grow as new classes arrive; existing rows are never touched
/// by expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    /// C x embed
    pub w: Mat2,
    /// C
    pub b: Vec1,
    registry: Vec<ClassId>,
}

impl ClassifierHead {
    pub fn new<R: Rng>(classes: &[ClassId], embed: usize, rng: &mut R) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::ProtocolError("classifier needs at least one class".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in classes {
            if !seen.insert(*c) {
                return Err(Error::ProtocolError(format!("duplicate class id {c}")));
            }
        }
        let mut w = Mat2::zeros(classes.len(), embed);
        uniform_fan_in(&mut w, embed, rng);
        Ok(Self {
            w,
            b: Vec1::zeros(classes.len()),
            registry: classes.to_vec(),
        })
    }

    /// Reassembles a head from stored arrays (checkpoint loading).
    pub fn from_parts(w: Mat2, b: Vec1, registry: Vec<ClassId>) -> Self {
        debug_assert_eq!(w.rows(), registry.len());
        debug_assert_eq!(b.len(), registry.len());
        Self { w, b, registry }
    }

    pub fn class_count(&self) -> usize {
        self.registry.len()
    }

    pub fn registry(&self) -> &[ClassId] {
        &self.registry
    }

    pub fn index_of(&self, class: ClassId) -> Option<usize> {
        self.registry.iter().position(|&c| c == class)
    }

    pub fn embed_dim(&self) -> usize {
        self.w.cols()
    }

    /// logits = W.z + b
    pub fn classify(&self, z: &Vec1) -> Result<Vec1> {
        if z.len() != self.embed_dim() {
            return Err(Error::NumericsError(format!(
                "embedding length {} does not match head width {}",
                z.len(),
                self.embed_dim()
            )));
        }
        let mut logits = vec![0.0; self.class_count()];
        matvec_into(&self.w, z, &mut logits);
        for (l, &b) in logits.iter_mut().zip(self.b.iter()) {
            *l += b;
        }
        Ok(Vec1::from_raw(logits))
    }

    /// Argmax with ties broken by the lowest registry index.
    pub fn predict(&self, z: &Vec1) -> Result<ClassId> {
        let logits = self.classify(z)?;
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate().skip(1) {
            if l > logits[best] {
                best = i;
            }
        }
        Ok(self.registry[best])
    }

    /// Appends a freshly initialized row for `new_class`; existing rows
    /// are preserved bit-exactly.
    pub fn expand<R: Rng>(&mut self, new_class: ClassId, rng: &mut R) -> Result<()> {
        if self.registry.contains(&new_class) {
            return Err(Error::ProtocolError(format!(
                "class {new_class} already registered"
            )));
        }
        let embed = self.embed_dim();
        let bound = 1.0 / (embed as f64).sqrt();
        let mut data = self.w.as_slice().to_vec();
        for _ in 0..embed {
            data.push(rng.random_range(-bound..bound));
        }
        self.w = Mat2::from_raw(self.class_count() + 1, embed, data);
        let mut b = self.b.to_vec();
        b.push(0.0);
        self.b = Vec1::from_raw(b);
        self.registry.push(new_class);
        Ok(())
    }

    pub fn arrays(&self) -> [(&'static str, &[f64]); 2] {
        [("head.w", self.w.as_slice()), ("head.b", &self.b)]
    }

    pub fn arrays_mut(&mut self) -> [&mut [f64]; 2] {
        [self.w.as_mut_slice(), self.b.as_mut_slice()]
    }
}

/// Gradients for [`ClassifierHead`].
#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub w: Mat2,
    pub b: Vec1,
}

impl HeadGrads {
    pub fn zeros(head: &ClassifierHead) -> Self {
        Self {
            w: Mat2::zeros(head.class_count(), head.embed_dim()),
            b: Vec1::zeros(head.class_count()),
        }
    }

    pub fn arrays(&self) -> [&[f64]; 2] {
        [self.w.as_slice(), &self.b]
    }

    pub fn scale(&mut self, factor: f64) {
        self.w.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        self.b.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Cross-entropy of `softmax(classify(head, z))` for one sample, with
/// `weight`-scaled gradients accumulated into the head grads and the
/// embedding gradient. Returns the (unweighted) loss value.
pub(crate) fn classification_backward(
    head: &ClassifierHead,
    z: &Vec1,
    label_idx: usize,
    weight: f64,
    head_grads: &mut HeadGrads,
    grad_z: &mut [f64],
) -> Result<f64> {
    let logits = head.classify(z)?;
    let probs = crate::numerics::softmax(&logits);
    let loss = crate::numerics::cross_entropy(&probs, label_idx)?;
    // d loss / d logits = probs - onehot(label)
    let mut d_logits: Vec<f64> = probs.to_vec();
    d_logits[label_idx] -= 1.0;
    d_logits.iter_mut().for_each(|v| *v *= weight);
    outer_acc(&mut head_grads.w, &d_logits, z);
    for (b, &d) in head_grads.b.iter_mut().zip(&d_logits) {
        *b += d;
    }
    matvec_transposed_acc(&head.w, &d_logits, grad_z);
    Ok(loss)
}

/// The embedding distilled from the source population, kept fixed for a
/// whole incremental run.
#[derive(Clone, Debug, PartialEq)]
pub struct PreservedEmbedding {
    pub values: Vec1,
    pub provenance: PriorProvenance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorProvenance {
    pub subjects: Vec<u32>,
    pub gestures: Vec<u32>,
    pub checkpoint_hash: String,
}

impl PreservedEmbedding {
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.values.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }
}
