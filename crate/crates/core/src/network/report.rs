use std::fmt;

use super::model::{Network, OUTPUT_STRIDE};
use crate::params::ParamKind;
use crate::scalar::Scalar;

/// Parameter counts of one top-level layer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamRow {
    pub name: String,
    pub kind: String,
    pub conv_weights: usize,
    pub conv_biases: usize,
    pub bn_affine: usize,
    pub bn_buffers: usize,
    pub prelu: usize,
    pub other_buffers: usize,
}

impl ParamRow {
    /// Convolution weights and biases.
    pub fn headline(&self) -> usize {
        self.conv_weights + self.conv_biases
    }

    /// Everything the optimizer updates.
    pub fn trained(&self) -> usize {
        self.headline() + self.bn_affine + self.prelu
    }

    pub fn buffers(&self) -> usize {
        self.bn_buffers + self.other_buffers
    }
}

/// Published parameter count and model size of a named variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PublishedSize {
    pub params: usize,
    pub megabytes: f64,
}

pub fn published_size(variant: &str) -> Option<PublishedSize> {
    let (params, megabytes) = match variant {
        "v1" => (310_000, 1.34),
        "v2" => (370_000, 1.6),
        "v3" => (550_000, 2.5),
        _ => return None,
    };
    Some(PublishedSize { params, megabytes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub variant: String,
    pub rows: Vec<ParamRow>,
}

impl ParamReport {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let store = net.store();
        let rows = net
            .layer_params()
            .into_iter()
            .map(|(name, kind, ids)| {
                let mut row = ParamRow {
                    name,
                    kind: kind.to_string(),
                    ..Default::default()
                };
                for id in ids {
                    let n = store.get(id).numel();
                    match store.entry(id).kind {
                        ParamKind::ConvWeight => row.conv_weights += n,
                        ParamKind::ConvBias => row.conv_biases += n,
                        ParamKind::BnGamma | ParamKind::BnBeta => row.bn_affine += n,
                        ParamKind::BnRunningMean | ParamKind::BnRunningVar => row.bn_buffers += n,
                        ParamKind::PreluAlpha => row.prelu += n,
                        ParamKind::InputMean => row.other_buffers += n,
                    }
                }
                row
            })
            .collect();
        ParamReport {
            variant: net.spec().name.clone(),
            rows,
        }
    }

    fn total(&self, f: impl Fn(&ParamRow) -> usize) -> usize {
        self.rows.iter().map(f).sum()
    }

    pub fn conv_weights(&self) -> usize {
        self.total(|r| r.conv_weights)
    }

    /// Convolution weights and biases only.
    pub fn headline_total(&self) -> usize {
        self.total(ParamRow::headline)
    }

    /// All trained parameters: convolutions, normalization affine terms and
    /// activation slopes.
    pub fn trained_total(&self) -> usize {
        self.total(ParamRow::trained)
    }

    pub fn buffer_total(&self) -> usize {
        self.total(ParamRow::buffers)
    }

    /// Serialized size of the trained parameters at 32 bits each.
    pub fn bytes(&self) -> usize {
        4 * self.trained_total()
    }

    pub fn megabytes(&self) -> f64 {
        self.bytes() as f64 / 1e6
    }

    pub fn published(&self) -> Option<PublishedSize> {
        published_size(&self.variant)
    }

    /// Measured trained total divided by the published count.
    pub fn published_ratio(&self) -> Option<f64> {
        self.published().map(|p| self.trained_total() as f64 / p.params as f64)
    }

    /// Whether the trained total lies within a factor of two of the
    /// published count.
    pub fn within_factor_two(&self) -> Option<bool> {
        self.published_ratio().map(|r| (0.5..=2.0).contains(&r))
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:<14} {:>9} {:>6} {:>7} {:>6} {:>9} {:>8}",
            "layer", "kind", "weights", "bias", "bn", "prelu", "trained", "buffers"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:<14} {:>9} {:>6} {:>7} {:>6} {:>9} {:>8}",
                r.name,
                r.kind,
                r.conv_weights,
                r.conv_biases,
                r.bn_affine,
                r.prelu,
                r.trained(),
                r.buffers()
            )?;
        }
        writeln!(f, "conv weights + biases:          {}", self.headline_total())?;
        writeln!(f, "with BN affine and PReLU:       {}", self.trained_total())?;
        writeln!(f, "buffers (BN running stats, input mean, not counted): {}", self.buffer_total())?;
        writeln!(
            f,
            "model size: {} bytes = {:.3} MB (4 bytes per trained parameter)",
            self.bytes(),
            self.megabytes()
        )?;
        if let Some(p) = self.published() {
            let measured = self.trained_total() as i64;
            let gap = measured - p.params as i64;
            let ratio = measured as f64 / p.params as f64;
            writeln!(
                f,
                "published {}: {} params, {} MB; measured {} ({:+} params, ratio {:.3}, {:+.1}%); factor-of-2 band: {}",
                self.variant,
                p.params,
                p.megabytes,
                measured,
                gap,
                ratio,
                (ratio - 1.0) * 100.0,
                if (0.5..=2.0).contains(&ratio) { "inside" } else { "OUTSIDE" }
            )?;
        }
        Ok(())
    }
}

/// One row of the architecture table. `number` is the inclusive range of
/// layer indices the row covers; injections are unnumbered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRow {
    pub number: Option<(usize, usize)>,
    pub layer: String,
    pub mode: String,
    pub dimension: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LayerTable {
    pub rows: Vec<LayerRow>,
}

impl LayerTable {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let spec = net.spec();
        let mut rows = Vec::new();
        let mut next = 1;
        let mut push = |rows: &mut Vec<LayerRow>, count: usize, layer: String, mode: String, dimension: usize| {
            rows.push(LayerRow {
                number: Some((next, next + count - 1)),
                layer,
                mode,
                dimension,
            });
            next += count;
        };
        let inject = |rows: &mut Vec<LayerRow>, factor: usize, dimension: usize| {
            rows.push(LayerRow {
                number: None,
                layer: "Input injection".into(),
                mode: format!("avg pool ×{factor}"),
                dimension,
            });
        };
        let init = spec.init_channels;
        push(&mut rows, 1, "3×3 Conv".into(), "stride 2".into(), init);
        push(&mut rows, 1, "3×3 Conv".into(), "stride 1".into(), init);
        push(&mut rows, 1, "3×3 Conv".into(), "stride 1".into(), init);
        inject(&mut rows, 2, init + 3);
        push(&mut rows, 1, "Downsampling".into(), "-".into(), spec.widths.0);
        for (count, rate) in runs(&spec.cluster1_rates) {
            push(&mut rows, count, cfp_label(count), format!("r_K = {rate}"), spec.widths.0);
        }
        inject(&mut rows, 4, spec.widths.0 + 3);
        push(&mut rows, 1, "Downsampling".into(), "-".into(), spec.widths.1);
        for (count, rate) in runs(&spec.cluster2_rates) {
            push(&mut rows, count, cfp_label(count), format!("r_K = {rate}"), spec.widths.1);
        }
        inject(&mut rows, OUTPUT_STRIDE, spec.widths.1 + 3);
        push(&mut rows, 1, "1×1 Conv".into(), "stride 1".into(), spec.classes);
        push(
            &mut rows,
            1,
            "Bilinear interpolation".into(),
            format!("×{OUTPUT_STRIDE}"),
            spec.classes,
        );
        LayerTable { rows }
    }

    /// Highest layer number in the table.
    pub fn layer_count(&self) -> usize {
        self.rows.iter().filter_map(|r| r.number.map(|(_, b)| b)).max().unwrap_or(0)
    }

    pub fn row(&self, number: usize) -> Option<&LayerRow> {
        self.rows
            .iter()
            .find(|r| r.number.is_some_and(|(a, b)| (a..=b).contains(&number)))
    }
}

fn cfp_label(count: usize) -> String {
    if count == 1 {
        "CFP".into()
    } else {
        format!("{count} × CFP")
    }
}

/// Run-length encoding of consecutive equal rates.
fn runs(rates: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &r in rates {
        match out.last_mut() {
            Some((count, rate)) if *rate == r => *count += 1,
            _ => out.push((1, r)),
        }
    }
    out
}

impl LayerRow {
    pub fn number_label(&self) -> String {
        match self.number {
            None => String::new(),
            Some((a, b)) if a == b => a.to_string(),
            Some((a, b)) => format!("{a}-{b}"),
        }
    }
}

impl fmt::Display for LayerTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<24} {:<14} {:>9}", "No.", "Layer", "Mode", "Dimension")?;
        for r in &self.rows {
            writeln!(f, "{:<6} {:<24} {:<14} {:>9}", r.number_label(), r.layer, r.mode, r.dimension)?;
        }
        Ok(())
    }
}
