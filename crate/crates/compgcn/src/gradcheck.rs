//! End-to-end gradient verification: the full encoder, score function,
//! and smoothed cross-entropy loss against central finite differences,
//! with every model parameter treated as an input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::error::Result;
use crate::graph::augment;
use crate::model::{CompGcnModel, Composition, ModelConfig, NormMode, TapeBinding};
use crate::numeric::fdcheck::{check_gradients, GradCheck, DEFAULT_STEP};
use crate::numeric::{Activation, Tensor};
use crate::scoring::{link_prediction_loss, train_queries, ScoreFn, TrainTargets};
use crate::synthetic::random_kg;

/// Checks every parameter gradient of a two-layer encoder with the given
/// composition, a DistMult decoder, and smoothed BCE on a random
/// 6-entity / 3-relation graph.
pub fn pipeline_gradcheck(seed: u64, composition: Composition) -> Result<GradCheck> {
    pipeline_gradcheck_with(seed, composition, ScoreFn::Distmult)
}

/// [`pipeline_gradcheck`] with a chosen score function.
pub fn pipeline_gradcheck_with(
    seed: u64,
    composition: Composition,
    score_fn: ScoreFn,
) -> Result<GradCheck> {
    let graph = Arc::new(random_kg(6, 3, 10, seed));
    let aug = augment(graph);
    let targets = TrainTargets::build(&aug);
    let queries = train_queries(&aug);

    let config = ModelConfig {
        embed_dim: 4,
        layer_dims: vec![4, 3],
        composition,
        num_bases: None,
        dropout: 0.0,
        activation: Activation::Tanh,
        norm: NormMode::None,
        preset: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let model = CompGcnModel::new(config, aug.num_entities(), aug.aug_relation_count(), &mut rng)?;
    let inputs: Vec<Tensor> = (0..model.params().len())
        .map(|i| model.params().value(i).clone())
        .collect();

    check_gradients(
        &|tape, ids| {
            let binding = TapeBinding::from_ids(ids.to_vec());
            // eval mode: dropout is 0 and no rng draws may occur, or the
            // repeated forward evaluations would diverge
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = model.encode(tape, &binding, &aug, false, &mut rng)?;
            link_prediction_loss(
                tape,
                score_fn,
                out.nodes,
                out.relations,
                &queries,
                &targets,
                0.1,
            )
        },
        &inputs,
        DEFAULT_STEP,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_gradients_match_finite_differences() {
        for comp in [Composition::Sub, Composition::Mult, Composition::Corr] {
            let check = pipeline_gradcheck(11, comp).unwrap();
            assert!(
                check.max_rel_err < 1e-4,
                "{comp:?}: max rel err {}",
                check.max_rel_err
            );
        }
    }
}
