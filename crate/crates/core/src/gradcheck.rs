//! Central finite-difference checks of the tape's analytic gradients.
//!
//! Each check builds a scalar `sum(R ⊙ f(inputs))` for a fixed random `R`,
//! differentiates it, and compares against `(L(x+h) − L(x−h)) / 2h` on a
//! sample of coordinates. Coordinates whose ±h evaluations straddle a kink
//! (a PReLU sign change or a different max-pool winner) are skipped.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{CfpModule, CfpModuleConfig};
use crate::error::Result;
use crate::labels::{LabelMap, IGNORE_INDEX};
use crate::ops::{BnConfig, ConvSpec, Mode};
use crate::params::{Forward, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Default pass threshold on the relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Coordinates sampled per input tensor.
const COORDS_PER_INPUT: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// `max |analytic − numeric| / max(max |numeric|, max |analytic|)` over
    /// the checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckResult {
    /// Strictly below `tolerance`.
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

type Builder<'a> = dyn Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<(Var<f64>, Vec<Var<f64>>)> + 'a;

fn loss_of(tape: &mut Tape<f64>, out: &Var<f64>, weights: &Tensor<f64>) -> Result<Var<f64>> {
    tape.weighted_sum(out, weights)
}

/// Checks the gradient of `build` with respect to each of `inputs`. `build`
/// returns the output and, aligned with `inputs`, the leaves to differentiate.
pub fn check_gradients(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    build: &Builder<'_>,
    step: f64,
    seed: u64,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let (out, leaves) = build(&mut tape, &inputs)?;
    let weights = Tensor::random_normal(out.shape(), 0.0, 1.0, &mut rng);
    let loss = loss_of(&mut tape, &out, &weights)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = leaves.iter().map(|v| grads.wrt(v)).collect();
    drop(grads);
    drop(tape);

    let eval = |inputs: &[Tensor<f64>]| -> Result<(f64, Vec<usize>)> {
        let mut tape = Tape::new();
        let (out, _) = build(&mut tape, inputs)?;
        let loss = loss_of(&mut tape, &out, &weights)?;
        Ok((loss.value().data()[0], tape.nonsmooth_fingerprint()))
    };

    let mut pairs = Vec::new();
    let mut skipped = 0;
    let mut work = inputs.clone();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= COORDS_PER_INPUT {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, COORDS_PER_INPUT).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let x = input.data()[i];
            work[k].data_mut()[i] = x + step;
            let (plus, fp_plus) = eval(&work)?;
            work[k].data_mut()[i] = x - step;
            let (minus, fp_minus) = eval(&work)?;
            work[k].data_mut()[i] = x;
            if fp_plus != fp_minus {
                skipped += 1;
                continue;
            }
            pairs.push((analytic[k].data()[i], (plus - minus) / (2.0 * step)));
        }
    }
    let diff = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = pairs
        .iter()
        .map(|(a, n)| a.abs().max(n.abs()))
        .fold(f64::MIN_POSITIVE, f64::max);
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: diff / scale,
        checked: pairs.len(),
        skipped,
    })
}

fn leaves(tape: &mut Tape<f64>, inputs: &[Tensor<f64>]) -> Vec<Var<f64>> {
    inputs.iter().map(|t| tape.leaf(t.clone())).collect()
}

/// Every primitive plus one CFP module (M=32, K=4, r_K=4, train mode).
pub fn run_suite(seed: u64, step: f64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |shape| Tensor::<f64>::random_normal(shape, 0.0, 1.0, &mut rng);
    let mut results = Vec::new();

    let dilated = ConvSpec::same(3, 4, 3, 1, 2).with_bias();
    let inputs = vec![normal([2, 3, 7, 6]), normal(dilated.weight_shape()), normal([4, 1, 1, 1])];
    results.push(check_gradients(
        "conv2d (3×1, dilation 2, bias)",
        inputs,
        &move |tape, x| {
            let v = leaves(tape, x);
            Ok((tape.conv2d(&v[0], &v[1], Some(&v[2]), &dilated)?, v))
        },
        step,
        seed,
    )?);

    let strided = ConvSpec::strided(3, 5, 3, 2, 1);
    let inputs = vec![normal([2, 3, 8, 8]), normal(strided.weight_shape())];
    results.push(check_gradients(
        "conv2d (3×3, stride 2)",
        inputs,
        &move |tape, x| {
            let v = leaves(tape, x);
            Ok((tape.conv2d(&v[0], &v[1], None, &strided)?, v))
        },
        step,
        seed + 1,
    )?);

    results.push(check_gradients(
        "maxpool 2×2",
        vec![normal([2, 3, 6, 8])],
        &|tape, x| {
            let v = leaves(tape, x);
            Ok((tape.maxpool2x2(&v[0])?, v))
        },
        step,
        seed + 2,
    )?);

    results.push(check_gradients(
        "avgpool ×4",
        vec![normal([1, 3, 8, 8])],
        &|tape, x| {
            let v = leaves(tape, x);
            Ok((tape.avgpool(&v[0], 4)?, v))
        },
        step,
        seed + 3,
    )?);

    results.push(check_gradients(
        "bilinear upsample ×8",
        vec![normal([1, 2, 3, 4])],
        &|tape, x| {
            let v = leaves(tape, x);
            Ok((tape.upsample_bilinear(&v[0], 8)?, v))
        },
        step,
        seed + 4,
    )?);

    let alpha = Tensor::random_uniform([3, 1, 1, 1], 0.1, 0.4, &mut ChaCha8Rng::seed_from_u64(seed + 5));
    results.push(check_gradients(
        "prelu",
        vec![normal([2, 3, 4, 4]), alpha],
        &|tape, x| {
            let v = leaves(tape, x);
            Ok((tape.prelu(&v[0], &v[1])?, v))
        },
        step,
        seed + 5,
    )?);

    for (label, mode) in [("batch norm (train)", Mode::Train), ("batch norm (infer)", Mode::Infer)] {
        let mut r = ChaCha8Rng::seed_from_u64(seed + 6);
        let running_mean = Tensor::random_normal([3, 1, 1, 1], 0.0, 0.5, &mut r);
        let running_var = Tensor::random_uniform([3, 1, 1, 1], 0.5, 2.0, &mut r);
        let gamma = Tensor::random_uniform([3, 1, 1, 1], 0.5, 1.5, &mut r);
        results.push(check_gradients(
            label,
            vec![normal([2, 3, 4, 5]), gamma, normal([3, 1, 1, 1])],
            &move |tape, x| {
                let v = leaves(tape, x);
                let (y, _) = tape.batch_norm(&v[0], &v[1], &v[2], &running_mean, &running_var, mode, BnConfig::default())?;
                Ok((y, v))
            },
            step,
            seed + 6,
        )?);
    }

    results.push(check_gradients(
        "concat",
        vec![normal([2, 2, 3, 3]), normal([2, 3, 3, 3])],
        &|tape, x| {
            let v = leaves(tape, x);
            Ok((tape.concat(&[&v[0], &v[1]])?, v))
        },
        step,
        seed + 7,
    )?);

    results.push(check_gradients(
        "add",
        vec![normal([1, 2, 3, 3]), normal([1, 2, 3, 3])],
        &|tape, x| {
            let v = leaves(tape, x);
            Ok((tape.add(&v[0], &v[1])?, v))
        },
        step,
        seed + 8,
    )?);

    let labels = LabelMap::new([2, 3, 3], (0..18).map(|i| if i % 7 == 3 { IGNORE_INDEX } else { (i % 5) as u8 }).collect())?;
    results.push(check_gradients(
        "cross entropy",
        vec![normal([2, 5, 3, 3])],
        &move |tape, x| {
            let v = leaves(tape, x);
            Ok((tape.cross_entropy(&v[0], &labels, IGNORE_INDEX)?, v))
        },
        step,
        seed + 9,
    )?);

    results.push(cfp_module_check(seed + 10, step)?);
    Ok(results)
}

/// Gradient of a CFP module (M=32, K=4, r_K=4, train-mode normalization)
/// with respect to its input and every trainable parameter.
pub fn cfp_module_check(seed: u64, step: f64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let module = CfpModule::new(&mut store, "cfp", CfpModuleConfig::new(32, 4, 4)?, &mut rng)?;
    let trainable: Vec<_> = store.iter().filter(|(_, e)| e.kind.is_trainable()).map(|(id, _)| id).collect();
    let mut inputs = vec![Tensor::random_normal([2, 32, 8, 8], 0.0, 1.0, &mut rng)];
    inputs.extend(trainable.iter().map(|&id| store.get(id).clone()));
    let build = |tape: &mut Tape<f64>, x: &[Tensor<f64>]| {
        let mut s = store.clone();
        for (&id, t) in trainable.iter().zip(&x[1..]) {
            s.replace(id, t.clone())?;
        }
        let input = tape.leaf(x[0].clone());
        let mut fwd = Forward::new(tape, &s, Mode::Train);
        let out = module.forward(&mut fwd, &input)?;
        let record = fwd.finish();
        let mut vars = vec![input];
        vars.extend(trainable.iter().map(|id| record.params[id].clone()));
        Ok((out, vars))
    };
    check_gradients("CFP module (M=32, K=4, r_K=4)", inputs, &build, step, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = run_suite(7, DEFAULT_STEP).unwrap();
        for r in &a {
            assert!(r.checked > 0, "{}", r.name);
            assert!(r.passed(DEFAULT_TOLERANCE), "{}: {:e}", r.name, r.max_rel_error);
            assert!(!r.passed(0.0));
        }
        let b = run_suite(7, DEFAULT_STEP).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn misaligned_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![
            Tensor::random_normal([1, 2, 3, 3], 0.0, 1.0, &mut rng),
            Tensor::random_normal([1, 2, 3, 3], 0.0, 1.0, &mut rng),
        ];
        // differentiates a ⊙ 2 + b but reports the leaves swapped
        let r = check_gradients(
            "swapped",
            inputs,
            &|tape, x| {
                let v = leaves(tape, x);
                let a2 = tape.add(&v[0], &v[0])?;
                let out = tape.add(&a2, &v[1])?;
                Ok((out, vec![v[1].clone(), v[0].clone()]))
            },
            DEFAULT_STEP,
            1,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
