//! The three-part training objective and its gradients.
//!
//! Per sample x with learned embedding z = f(x; learned):
//!   prior loss          1 - cos(preserved, z)      pulls z toward the prior
//!   divergence loss     cos(frozen(x), z)          pushes z off the frozen copy
//!   classification      cross-entropy of softmax(head(z))
//! combined as  alpha * prior + (1 - alpha) * divergence + classification,
//! batch-mean each. Gradients flow into the learned extractor and the head
//! only; the frozen extractor and the preserved embedding receive none.

use crate::data::Sample;
use crate::error::Result;
use crate::model::{
    classification_backward, embedding_backward, extract_embedding, ClassifierHead,
    ExtractorGrads, ExtractorParams, HeadGrads, PreservedEmbedding,
};
use crate::numerics::{cosine_similarity, cosine_similarity_grad, Phase, Vec1};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Batch-mean loss components. `total` is always exactly
/// `alpha * prior + (1 - alpha) * divergence + classification` with the
/// run's effective alpha (classification-only modes log zero for both
/// cosine terms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub prior: f64,
    pub divergence: f64,
    pub classification: f64,
}

pub(crate) struct LossContext<'a> {
    pub frozen: &'a ExtractorParams,
    pub learned: &'a ExtractorParams,
    pub head: &'a ClassifierHead,
    pub prior: &'a PreservedEmbedding,
    /// Effective trade-off weight (already resolved through the mode).
    pub alpha: f64,
    /// False for the classification-only baselines.
    pub embedding_losses: bool,
    pub dropout_p: f64,
    /// Whether the frozen reference pass also uses dropout in train phase.
    pub dropout_frozen_pass: bool,
}

pub(crate) fn compute_loss_and_grads<R: Rng>(
    ctx: &LossContext<'_>,
    batch: &[&Sample],
    phase: Phase,
    rng: &mut R,
) -> Result<(LossBreakdown, ExtractorGrads, HeadGrads)> {
    assert!(!batch.is_empty(), "loss over an empty batch");
    let weight = 1.0 / batch.len() as f64;
    let embed_dim = ctx.learned.embed_dim();

    let mut grads = ExtractorGrads::zeros(ctx.learned);
    let mut head_grads = HeadGrads::zeros(ctx.head);
    let mut prior_sum = 0.0;
    let mut divergence_sum = 0.0;
    let mut classification_sum = 0.0;

    for sample in batch {
        debug_assert!(sample.is_processed(), "raw sample reached the loss");
        let (z, trace) =
            extract_embedding(ctx.learned, &sample.seq, phase, ctx.dropout_p, rng)?;
        let label_idx = ctx
            .head
            .index_of(sample.label)
            .ok_or_else(|| crate::error::Error::ProtocolError(format!(
                "label {} not registered in the head",
                sample.label
            )))?;

        let mut grad_z = vec![0.0; embed_dim];
        classification_sum += classification_backward(
            ctx.head,
            &z,
            label_idx,
            weight,
            &mut head_grads,
            &mut grad_z,
        )?;

        if ctx.embedding_losses {
            let frozen_phase = if ctx.dropout_frozen_pass { phase } else { Phase::Eval };
            let (z_frozen, _) =
                extract_embedding(ctx.frozen, &sample.seq, frozen_phase, ctx.dropout_p, rng)?;

            let sim_prior = cosine_similarity(&ctx.prior.values, &z)?;
            prior_sum += 1.0 - sim_prior;
            let (_, d_sim_dz) = cosine_similarity_grad(&ctx.prior.values, &z)?;
            for (g, &d) in grad_z.iter_mut().zip(d_sim_dz.iter()) {
                *g += ctx.alpha * weight * (-d);
            }

            let sim_frozen = cosine_similarity(&z_frozen, &z)?;
            divergence_sum += sim_frozen;
            let (_, d_div_dz) = cosine_similarity_grad(&z_frozen, &z)?;
            for (g, &d) in grad_z.iter_mut().zip(d_div_dz.iter()) {
                *g += (1.0 - ctx.alpha) * weight * d;
            }
        }

        embedding_backward(ctx.learned, &trace, &Vec1::new(grad_z)?, &mut grads)?;
    }

    let prior = prior_sum * weight;
    let divergence = divergence_sum * weight;
    let classification = classification_sum * weight;
    let total = ctx.alpha * prior + (1.0 - ctx.alpha) * divergence + classification;
    debug_assert!((0.0..=2.0 + 1e-12).contains(&prior), "prior loss {prior} out of [0,2]");
    debug_assert!(
        (-1.0 - 1e-12..=1.0 + 1e-12).contains(&divergence),
        "divergence loss {divergence} out of [-1,1]"
    );
    debug_assert!(classification >= 0.0);

    Ok((
        LossBreakdown {
            total,
            prior,
            divergence,
            classification,
        },
        grads,
        head_grads,
    ))
}
