//! Central finite-difference gradient checking.
//!
//! The checker re-evaluates a forward closure at perturbed inputs and never
//! touches backward rules, so it is an independent oracle for them. Shared
//! by the test suites and the `gradcheck` CLI subcommand.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Activation, ElementwiseOp, Tape, TensorId};
use super::tensor::Tensor;
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Result of one gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst mixed relative error over all input coordinates.
    pub max_rel_err: f64,
    /// Worst error per input tensor, same order as the inputs.
    pub per_input: Vec<f64>,
}

/// Mixed relative error: |a - n| / max(1, |a|, |n|). Behaves as relative
/// error for large gradients and absolute error near zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares tape gradients of `builder`'s scalar output against central
/// finite differences with step `h`, at the given input values.
pub fn check_gradients<B>(builder: &B, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    B: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    // analytic gradients
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = builder(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, input)| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()))
        })
        .collect();

    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = points.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = builder(&mut tape, &ids)?;
        Ok(tape.value(loss).scalar_value())
    };

    let mut per_input = vec![0.0f64; inputs.len()];
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for coord in 0..input.len() {
            let orig = input.data()[coord];
            work[which].data_mut()[coord] = orig + h;
            let plus = eval(&work)?;
            work[which].data_mut()[coord] = orig - h;
            let minus = eval(&work)?;
            work[which].data_mut()[coord] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_err(analytic[which].data()[coord], numeric);
            if err > per_input[which] {
                per_input[which] = err;
            }
        }
    }
    let max_rel_err = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheck {
        max_rel_err,
        per_input,
    })
}

/// One op's aggregated check result.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Uniform::new(-1.0, 1.0);
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// Random tensor with coordinates bounded away from zero, for ops with
/// kinks at the origin (relu, L1 distances).
fn random_tensor_away_from(shape: Vec<usize>, margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let dist = Uniform::new(margin, 1.0);
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let v: f64 = dist.sample(rng);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Projects a tensor-valued op output to a scalar via a fixed random
/// weighting, exercising non-uniform adjoints.
fn project(tape: &mut Tape, out: TensorId, weights: &Tensor) -> Result<TensorId> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Runs the per-op finite-difference suite: each differentiable op is
/// checked on `trials` random inputs; returns the worst error per op.
pub fn op_suite(seed: u64, trials: usize) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let run = |name: &'static str,
                   results: &mut Vec<OpCheck>,
                   rng: &mut ChaCha8Rng,
                   f: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<f64>|
     -> Result<()> {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            worst = worst.max(f(rng)?);
        }
        results.push(OpCheck {
            name,
            max_rel_err: worst,
        });
        Ok(())
    };

    run("matmul", &mut results, &mut rng, &mut |rng| {
        let a = random_tensor(vec![4, 5], rng);
        let b = random_tensor(vec![5, 3], rng);
        let w = random_tensor(vec![4, 3], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.matmul(ids[0], ids[1])?;
                project(tape, out, &w)
            },
            &[a, b],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("matmul_nt", &mut results, &mut rng, &mut |rng| {
        let a = random_tensor(vec![3, 4], rng);
        let b = random_tensor(vec![5, 4], rng);
        let w = random_tensor(vec![3, 5], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.matmul_nt(ids[0], ids[1])?;
                project(tape, out, &w)
            },
            &[a, b],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    for (name, op) in [
        ("add", ElementwiseOp::Add),
        ("sub", ElementwiseOp::Sub),
        ("mul", ElementwiseOp::Mul),
    ] {
        run(name, &mut results, &mut rng, &mut |rng| {
            let a = random_tensor(vec![6], rng);
            let b = random_tensor(vec![6], rng);
            let w = random_tensor(vec![6], rng);
            let check = check_gradients(
                &|tape: &mut Tape, ids: &[TensorId]| {
                    let out = tape.elementwise(op, ids[0], ids[1])?;
                    project(tape, out, &w)
                },
                &[a, b],
                DEFAULT_STEP,
            )?;
            Ok(check.max_rel_err)
        })?;
    }

    run("circular_correlation", &mut results, &mut rng, &mut |rng| {
        let a = random_tensor(vec![16], rng);
        let b = random_tensor(vec![16], rng);
        let w = random_tensor(vec![16], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.circular_correlation(ids[0], ids[1])?;
                project(tape, out, &w)
            },
            &[a, b],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("tanh", &mut results, &mut rng, &mut |rng| {
        let x = random_tensor(vec![8], rng);
        let w = random_tensor(vec![8], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.activation(Activation::Tanh, ids[0]);
                project(tape, out, &w)
            },
            &[x],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("relu", &mut results, &mut rng, &mut |rng| {
        // inputs bounded away from the kink at 0
        let x = random_tensor_away_from(vec![8], 0.05, rng);
        let w = random_tensor(vec![8], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.activation(Activation::Relu, ids[0]);
                project(tape, out, &w)
            },
            &[x],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("row_scale", &mut results, &mut rng, &mut |rng| {
        let a = random_tensor(vec![4, 3], rng);
        let s = random_tensor(vec![4], rng);
        let w = random_tensor(vec![4, 3], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.row_scale(ids[0], ids[1])?;
                project(tape, out, &w)
            },
            &[a, s],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("gather_scatter", &mut results, &mut rng, &mut |rng| {
        let a = random_tensor(vec![5, 3], rng);
        let gather: Vec<usize> = (0..7).map(|_| rng.gen_range(0..5)).collect();
        let scatter: Vec<usize> = (0..7).map(|_| rng.gen_range(0..4)).collect();
        let w = random_tensor(vec![4, 3], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let g = tape.gather_rows(ids[0], &gather)?;
                let s = tape.scatter_add_rows(g, &scatter, 4)?;
                project(tape, s, &w)
            },
            &[a],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("mean_rows", &mut results, &mut rng, &mut |rng| {
        let a = random_tensor(vec![5, 4], rng);
        let w = random_tensor(vec![1, 4], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.mean_rows(ids[0])?;
                project(tape, out, &w)
            },
            &[a],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("bce_with_label_smoothing", &mut results, &mut rng, &mut |rng| {
        let logits = random_tensor(vec![10], rng);
        let targets: Vec<f64> = (0..10).map(|_| f64::from(rng.gen::<bool>())).collect();
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                tape.bce_with_label_smoothing(ids[0], &targets, 0.1)
            },
            &[logits],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("softmax_cross_entropy", &mut results, &mut rng, &mut |rng| {
        let logits = random_tensor(vec![4, 6], rng);
        let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| tape.softmax_cross_entropy(ids[0], &labels),
            &[logits],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("transe_scores_l1", &mut results, &mut rng, &mut |rng| {
        // keep every q-h difference away from the |.| kink
        let h = random_tensor(vec![4, 5], rng);
        let mut q = random_tensor(vec![2, 5], rng);
        for i in 0..q.rows() {
            for j in 0..q.cols() {
                let qv = q.data()[i * 5 + j];
                for v in 0..h.rows() {
                    let hv = h.data()[v * 5 + j];
                    if (qv - hv).abs() < 0.01 {
                        q.data_mut()[i * 5 + j] = qv + 0.05;
                    }
                }
            }
        }
        let w = random_tensor(vec![2, 4], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.transe_scores(ids[0], ids[1], false)?;
                project(tape, out, &w)
            },
            &[q, h],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    run("transe_scores_l2", &mut results, &mut rng, &mut |rng| {
        let q = random_tensor(vec![2, 5], rng);
        let h = random_tensor(vec![4, 5], rng);
        let w = random_tensor(vec![2, 4], rng);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let out = tape.transe_scores(ids[0], ids[1], true)?;
                project(tape, out, &w)
            },
            &[q, h],
            DEFAULT_STEP,
        )?;
        Ok(check.max_rel_err)
    })?;

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_all_below_threshold() {
        let results = op_suite(7, 5).unwrap();
        for r in &results {
            assert!(
                r.max_rel_err < 1e-4,
                "{} gradient check failed: {}",
                r.name,
                r.max_rel_err
            );
        }
    }

    #[test]
    fn simple_quadratic_agrees_closely() {
        let x = Tensor::vector(vec![0.7, -0.3, 0.1]);
        let check = check_gradients(
            &|tape: &mut Tape, ids: &[TensorId]| {
                let sq = tape.mul(ids[0], ids[0])?;
                Ok(tape.sum(sq))
            },
            &[x],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(check.max_rel_err < 1e-9, "err {}", check.max_rel_err);
    }
}
