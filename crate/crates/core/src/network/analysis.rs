//! Receptive-field and factorization arithmetic.

use std::collections::BTreeSet;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::OUTPUT_STRIDE;
use super::variant::VariantSpec;
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Side length `r(k-1)+1` of the region a dilated `k×k` kernel covers.
pub fn effective_receptive_field(kernel: usize, rate: usize) -> usize {
    rate * kernel.saturating_sub(1) + 1
}

/// Input positions whose value influences one output scalar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub positions: BTreeSet<(usize, usize)>,
}

impl Footprint {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `(rows, cols)` of the smallest box containing every position.
    pub fn bounding_box(&self) -> Option<(usize, usize)> {
        let (y0, y1) = (self.positions.first()?.0, self.positions.last()?.0);
        let x0 = self.positions.iter().map(|p| p.1).min()?;
        let x1 = self.positions.iter().map(|p| p.1).max()?;
        Some((y1 - y0 + 1, x1 - x0 + 1))
    }
}

/// Runs `f` on a random input of `input_shape` and returns the spatial
/// positions (over all channels of batch item 0) with nonzero gradient of the
/// output scalar at `position`.
pub fn empirical_receptive_field<F>(input_shape: Shape, position: [usize; 4], seed: u64, f: F) -> Result<Footprint>
where
    F: FnOnce(&mut Tape<f64>, &Var<f64>) -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::random_uniform(input_shape, 0.5, 1.5, &mut rng));
    let y = f(&mut tape, &x)?;
    let out = tape.select(&y, position)?;
    let g = tape.backward(&out)?.wrt(&x);
    let [_, c, h, w] = input_shape;
    let mut positions = BTreeSet::new();
    for ch in 0..c {
        for yy in 0..h {
            for xx in 0..w {
                if g.at(0, ch, yy, xx) != 0.0 {
                    positions.insert((yy, xx));
                }
            }
        }
    }
    Ok(Footprint { positions })
}

/// Footprint of the centre output of one dilated `k×k` convolution with
/// random weights.
pub fn conv_receptive_field(kernel: usize, rate: usize) -> Result<Footprint> {
    if kernel == 0 || rate == 0 {
        return Err(Error::Config("kernel and rate must be positive".into()));
    }
    let side = effective_receptive_field(kernel, rate);
    let size = 2 * side + 1;
    let spec = ConvSpec::same(1, 1, kernel, kernel, rate);
    let mut rng = ChaCha8Rng::seed_from_u64(rate as u64);
    let weight = Tensor::random_uniform(spec.weight_shape(), 0.5, 1.5, &mut rng);
    empirical_receptive_field([1, 1, size, size], [0, 0, size / 2, size / 2], 0, |tape, x| {
        let w = tape.constant(weight);
        tape.conv2d(x, &w, None, &spec)
    })
}

/// Theoretical receptive field after a stage of the network, in input pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfStage {
    pub name: String,
    pub receptive_field: usize,
    /// Distance in input pixels between adjacent feature positions.
    pub jump: usize,
}

/// Receptive field growth along the widest path of the network.
pub fn receptive_field_summary(spec: &VariantSpec) -> Vec<RfStage> {
    let mut rf = 1;
    let mut jump = 1;
    let mut out = Vec::new();
    let conv = |rf: &mut usize, jump: &mut usize, k: usize, rate: usize, stride: usize| {
        *rf += (effective_receptive_field(k, rate) - 1) * *jump;
        *jump *= stride;
    };
    conv(&mut rf, &mut jump, 3, 1, 2);
    conv(&mut rf, &mut jump, 3, 1, 1);
    conv(&mut rf, &mut jump, 3, 1, 1);
    out.push(RfStage { name: "stem".into(), receptive_field: rf, jump });
    conv(&mut rf, &mut jump, 3, 1, 2);
    out.push(RfStage { name: "downsample 1".into(), receptive_field: rf, jump });
    // an FP channel stacks three 3×3-equivalent blocks at its rate
    let module = |rf: &mut usize, jump: usize, peak: usize| *rf += 6 * peak * jump;
    for &r in &spec.cluster1_rates {
        module(&mut rf, jump, r);
    }
    out.push(RfStage { name: "cluster 1".into(), receptive_field: rf, jump });
    conv(&mut rf, &mut jump, 3, 1, 2);
    out.push(RfStage { name: "downsample 2".into(), receptive_field: rf, jump });
    for &r in &spec.cluster2_rates {
        module(&mut rf, jump, r);
    }
    out.push(RfStage { name: "cluster 2".into(), receptive_field: rf, jump });
    debug_assert_eq!(jump, OUTPUT_STRIDE);
    out
}

/// Structures that can stand in for a large square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Replacement {
    /// `(k-1)/2` stacked 3×3 convolutions.
    StackedThreeByThree,
    /// A `k×1` convolution followed by a `1×k` convolution.
    AsymmetricPair,
    /// An FP channel whose three blocks emit N/4, N/4 and N/2 channels,
    /// against an Inception-v2 module whose 3×3, 5×5 and 7×7 branches
    /// (built from stacked 3×3 convolutions) emit N/4, N/4 and N/2.
    /// Defined for `k = 7` only.
    FpChannelAllocated,
    /// An FP channel with every convolution at width N, against
    /// Inception-v2 branches for every odd kernel from 3 to `k`, each stacked
    /// from 3×3 convolutions at width N.
    FpChannelUniform,
}

/// Weights of the original structure and its replacement at unit width,
/// with the exact fraction saved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Savings {
    pub original: Ratio<u64>,
    pub replacement: Ratio<u64>,
    pub saved: Ratio<u64>,
}

impl Savings {
    pub fn percent(&self) -> f64 {
        100.0 * *self.saved.numer() as f64 / *self.saved.denom() as f64
    }
}

/// Fraction of weights saved by `replacement` relative to a `k×k` kernel (or
/// Inception-v2 module) at equal channel width.
pub fn factorization_savings(kernel: u64, replacement: Replacement) -> Result<Savings> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::Config(format!("kernel {kernel} must be odd and at least 3")));
    }
    let r = |n: u64, d: u64| Ratio::new(n, d);
    let stages = (kernel - 1) / 2;
    let (original, replacement) = match replacement {
        Replacement::StackedThreeByThree => (r(kernel * kernel, 1), r(9 * stages, 1)),
        Replacement::AsymmetricPair => (r(kernel * kernel, 1), r(2 * kernel, 1)),
        Replacement::FpChannelAllocated => {
            if kernel != 7 {
                return Err(Error::Config(
                    "the allocated FP channel comparison is defined for a 7×7 pyramid only".into(),
                ));
            }
            let q = r(1, 4);
            let h = r(1, 2);
            // 3×3 branch N→N/4; 5×5 branch N→N/4→N/4; 7×7 branch N→N/2→N/2→N/2
            let inception = r(9, 1) * q + (r(9, 1) * q + r(9, 1) * q * q) + (r(9, 1) * h + r(9, 1) * h * h * r(2, 1));
            // blocks N→N/4, N/4→N/4, N/4→N/2, each a 3×1 then 1×3
            let fp = r(3, 1) * (q + q * q) + r(3, 1) * (q * q + q * q) + r(3, 1) * (q * h + h * h);
            (inception, fp)
        }
        Replacement::FpChannelUniform => {
            let inception = r(9 * stages * (stages + 1) / 2, 1);
            (inception, r(6 * stages, 1))
        }
    };
    if replacement > original {
        return Err(Error::Config("replacement is larger than the original".into()));
    }
    Ok(Savings {
        original,
        replacement,
        saved: Ratio::from_integer(1) - replacement / original,
    })
}
