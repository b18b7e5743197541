use std::fmt;

use crate::blocks::{ReductionMode, DEFAULT_CHANNELS};
use crate::error::{Error, Result};

/// Hyperparameters that determine a network's structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariantSpec {
    pub name: String,
    pub init_channels: usize,
    pub cluster1_rates: Vec<usize>,
    pub cluster2_rates: Vec<usize>,
    pub widths: (usize, usize),
    pub classes: usize,
    pub fp_channels: usize,
    pub reduction: ReductionMode,
}

impl VariantSpec {
    fn preset(name: &str, c1: &[usize], c2: &[usize], classes: usize) -> Self {
        VariantSpec {
            name: name.into(),
            init_channels: 32,
            cluster1_rates: c1.to_vec(),
            cluster2_rates: c2.to_vec(),
            widths: (64, 128),
            classes,
            fp_channels: DEFAULT_CHANNELS,
            reduction: ReductionMode::Shared,
        }
    }

    pub fn v1(classes: usize) -> Self {
        Self::preset("v1", &[4], &[8, 16], classes)
    }

    pub fn v2(classes: usize) -> Self {
        Self::preset("v2", &[2], &[4, 8, 16], classes)
    }

    pub fn v3(classes: usize) -> Self {
        Self::preset("v3", &[2, 2], &[4, 4, 8, 8, 16, 16], classes)
    }

    /// Width-reduced variant for desk-scale training runs.
    pub fn toy(classes: usize) -> Self {
        VariantSpec {
            name: "toy".into(),
            init_channels: 16,
            widths: (32, 64),
            ..Self::preset("toy", &[2], &[4, 8], classes)
        }
    }

    pub fn by_name(name: &str, classes: usize) -> Result<Self> {
        let spec = match name.to_ascii_lowercase().as_str() {
            "v1" => Self::v1(classes),
            "v2" => Self::v2(classes),
            "v3" => Self::v3(classes),
            "toy" => Self::toy(classes),
            other => {
                return Err(Error::Config(format!(
                    "unknown variant {other:?} (expected v1, v2, v3 or toy)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_reduction(mut self, reduction: ReductionMode) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn module_count(&self) -> usize {
        self.cluster1_rates.len() + self.cluster2_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classes == 0 {
            return bad("classes must be at least 1".into());
        }
        if self.classes > 255 {
            return bad(format!("{} classes do not fit 8-bit labels with 255 reserved", self.classes));
        }
        if self.init_channels == 0 {
            return bad("init_channels must be positive".into());
        }
        let (w1, w2) = self.widths;
        if w1 % 16 != 0 || w2 % 16 != 0 || w1 == 0 || w2 == 0 {
            return bad(format!("cluster widths {w1}, {w2} must be positive multiples of 16"));
        }
        if self.fp_channels == 0 || w1 % (4 * self.fp_channels) != 0 || w2 % (4 * self.fp_channels) != 0 {
            return bad(format!(
                "cluster widths {w1}, {w2} must be divisible by 4·K = {}",
                4 * self.fp_channels
            ));
        }
        if w1 <= self.init_channels + 3 {
            return bad(format!("first width {w1} must exceed init_channels + 3 = {}", self.init_channels + 3));
        }
        if w2 <= w1 + 3 {
            return bad(format!("second width {w2} must exceed first width + 3 = {}", w1 + 3));
        }
        if self.cluster1_rates.iter().chain(&self.cluster2_rates).any(|&r| r == 0) {
            return bad("dilation rates must be at least 1".into());
        }
        Ok(())
    }

    /// Self-describing `key=value;…` form, parseable by [`VariantSpec::parse`].
    pub fn descriptor(&self) -> String {
        let rates = |r: &[usize]| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "name={};init_channels={};cluster1_rates={};cluster2_rates={};widths={},{};classes={};fp_channels={};reduction={}",
            self.name,
            self.init_channels,
            rates(&self.cluster1_rates),
            rates(&self.cluster2_rates),
            self.widths.0,
            self.widths.1,
            self.classes,
            self.fp_channels,
            match self.reduction {
                ReductionMode::Shared => "shared",
                ReductionMode::PerChannel => "per-channel",
            }
        )
    }

    /// Parses `key = value` pairs separated by newlines or `;`. Blank lines and
    /// `#` comments are skipped. Required keys: `init_channels`,
    /// `cluster1_rates`, `cluster2_rates`, `widths`, `classes`. Optional:
    /// `name`, `fp_channels`, `reduction`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = VariantSpec {
            name: "custom".into(),
            init_channels: 0,
            cluster1_rates: Vec::new(),
            cluster2_rates: Vec::new(),
            widths: (0, 0),
            classes: 0,
            fp_channels: DEFAULT_CHANNELS,
            reduction: ReductionMode::Shared,
        };
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.split(['\n', ';']).enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("entry {}: expected key=value, got {line:?}", lineno + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key {key:?}")));
            }
            match key {
                "name" => spec.name = value.to_string(),
                "init_channels" => spec.init_channels = parse_usize(key, value)?,
                "cluster1_rates" => spec.cluster1_rates = parse_list(key, value)?,
                "cluster2_rates" => spec.cluster2_rates = parse_list(key, value)?,
                "widths" => {
                    let w = parse_list(key, value)?;
                    let [a, b] = w[..] else {
                        return Err(Error::Config(format!("widths needs two values, got {}", w.len())));
                    };
                    spec.widths = (a, b);
                }
                "classes" => spec.classes = parse_usize(key, value)?,
                "fp_channels" => spec.fp_channels = parse_usize(key, value)?,
                "reduction" => {
                    spec.reduction = match value {
                        "shared" => ReductionMode::Shared,
                        "per-channel" => ReductionMode::PerChannel,
                        _ => return Err(Error::Config(format!("unknown reduction {value:?}"))),
                    }
                }
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        for key in ["init_channels", "cluster1_rates", "cluster2_rates", "widths", "classes"] {
            if !seen.contains(key) {
                return Err(Error::Config(format!("missing key {key:?}")));
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: {value:?} is not a non-negative integer")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let inner = value.trim_start_matches('[').trim_end_matches(']').trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(|v| parse_usize(key, v.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["v1", "v2", "v3", "toy", "V3"] {
            VariantSpec::by_name(name, 19).unwrap();
        }
        assert!(VariantSpec::by_name("bogus", 19).is_err());
        assert_eq!(VariantSpec::v1(19).module_count(), 3);
        assert_eq!(VariantSpec::v3(19).module_count(), 8);
    }

    #[test]
    fn descriptor_round_trip() {
        for spec in [VariantSpec::v2(11), VariantSpec::toy(3).with_reduction(ReductionMode::PerChannel)] {
            assert_eq!(VariantSpec::parse(&spec.descriptor()).unwrap(), spec);
        }
    }

    #[test]
    fn parse_config_text() {
        let text = "# custom\ninit_channels = 16\ncluster1_rates = [2]\ncluster2_rates = 4, 8\nwidths = 32, 64\nclasses = 3\n";
        let spec = VariantSpec::parse(text).unwrap();
        assert_eq!(spec.name, "custom");
        assert_eq!(spec.cluster2_rates, vec![4, 8]);
        assert_eq!(spec.widths, (32, 64));
    }

    #[test]
    fn parse_empty_clusters() {
        let spec = VariantSpec::parse("init_channels=8;cluster1_rates=;cluster2_rates=[];widths=16,32;classes=2").unwrap();
        assert_eq!(spec.module_count(), 0);
    }

    #[test]
    fn parse_errors() {
        let ok = "init_channels=8;cluster1_rates=2;cluster2_rates=4;widths=16,32;classes=2";
        assert!(VariantSpec::parse(ok).is_ok());
        for bad in [
            "init_channels=8;cluster1_rates=2;cluster2_rates=4;widths=16,32",
            "init_channels=8;cluster1_rates=2,x;cluster2_rates=4;widths=16,32;classes=2",
            "init_channels=8;cluster1_rates=0;cluster2_rates=4;widths=16,32;classes=2",
            "init_channels=8;cluster1_rates=2;cluster2_rates=4;widths=20,32;classes=2",
            "init_channels=8;cluster1_rates=2;cluster2_rates=4;widths=16;classes=2",
            "init_channels=8;cluster1_rates=2;cluster2_rates=4;widths=16,32;classes=0",
            "init_channels=8;init_channels=8;cluster1_rates=2;cluster2_rates=4;widths=16,32;classes=2",
            "colour=red",
            "just words",
        ] {
            assert!(VariantSpec::parse(bad).is_err(), "{bad}");
        }
    }
}
