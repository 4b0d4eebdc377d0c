//! Weight-level dropout masks and subnet size accounting.
//!
//! A mask multiplies each weight by either 0 (dropped) or `1/(1 - rate)`
//! (retained), so the masked model equals the original one in expectation:
//! `E[m_j] = 1` and `Var[m_j] = rate/(1 - rate)` per coordinate. Two mask
//! modes are supported: `Bernoulli` drops each weight independently with
//! probability `rate`, matching the probabilistic model behind the variance
//! analysis; `ExactCount` drops exactly `round(rate * layer_len)` weights per
//! layer, chosen uniformly, which pins the subnet size for the latency and
//! energy models.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One contiguous run of coordinates belonging to a named layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Per-layer layout of a flat parameter vector.
///
/// Spans are contiguous, non-overlapping, and cover the whole vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    spans: Vec<LayerSpan>,
    total_len: usize,
}

impl Layout {
    /// Build a layout from (name, len) pairs; offsets are assigned in order.
    pub fn new(layers: impl IntoIterator<Item = (String, usize)>) -> Result<Self> {
        let mut spans = Vec::new();
        let mut offset = 0;
        for (name, len) in layers {
            if len == 0 {
                return Err(Error::Shape(format!("layer {name} has zero length")));
            }
            spans.push(LayerSpan { name, offset, len });
            offset += len;
        }
        if spans.is_empty() {
            return Err(Error::Shape(
                "layout must contain at least one layer".into(),
            ));
        }
        Ok(Layout {
            spans,
            total_len: offset,
        })
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn spans(&self) -> &[LayerSpan] {
        &self.spans
    }

    /// Compact single-line descriptor, `name:offset:len` comma separated.
    pub fn descriptor(&self) -> String {
        self.spans
            .iter()
            .map(|s| format!("{}:{}:{}", s.name, s.offset, s.len))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Parse a descriptor produced by [`Layout::descriptor`].
    pub fn from_descriptor(desc: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for part in desc.split(',') {
            let fields: Vec<&str> = part.split(':').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!("bad layout field: {part}")));
            }
            let len: usize = fields[2]
                .parse()
                .map_err(|_| Error::Config(format!("bad layer length: {part}")))?;
            layers.push((fields[0].to_string(), len));
        }
        Layout::new(layers)
    }
}

/// Flat vector of model weights plus its per-layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "vector has {} values but layout covers {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = vec![0.0; layout.total_len()];
        ParamVector { values, layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// How the dropped coordinates are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Each coordinate dropped independently with probability `rate`.
    Bernoulli,
    /// Exactly `round(rate * layer_len)` coordinates dropped per layer.
    ExactCount,
}

/// Per-weight multiplier vector; every entry is 0 or `1/(1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub multipliers: Vec<f64>,
    pub rate: f64,
    pub mode: MaskMode,
}

impl DropoutMask {
    /// Number of retained (nonzero) coordinates.
    pub fn retained(&self) -> usize {
        self.multipliers.iter().filter(|&&m| m != 0.0).count()
    }

    /// True at coordinates that survived the dropout.
    pub fn is_retained(&self, index: usize) -> bool {
        self.multipliers[index] != 0.0
    }
}

/// Draw a dropout mask for `layout` at the given rate.
///
/// `rate` must lie in `[0, 1)`. In `ExactCount` mode each layer drops exactly
/// `round(rate * layer_len)` coordinates (round half up), so the realized
/// subnet size can deviate from `(1 - rate) * total_len` by at most half a
/// weight per layer.
pub fn make_mask(
    rate: f64,
    layout: &Layout,
    mode: MaskMode,
    rng: &mut impl Rng,
) -> Result<DropoutMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::domain(
            "dropout rate",
            format!("{rate} not in [0, 1)"),
        ));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut multipliers = vec![scale; layout.total_len()];
    match mode {
        MaskMode::Bernoulli => {
            for m in multipliers.iter_mut() {
                if rng.random::<f64>() < rate {
                    *m = 0.0;
                }
            }
        }
        MaskMode::ExactCount => {
            for span in layout.spans() {
                let drops = (rate * span.len as f64 + 0.5).floor() as usize;
                let mut indices: Vec<usize> = (0..span.len).collect();
                indices.shuffle(rng);
                for &i in indices.iter().take(drops) {
                    multipliers[span.offset + i] = 0.0;
                }
            }
        }
    }
    Ok(DropoutMask {
        multipliers,
        rate,
        mode,
    })
}

/// Element-wise product of weights and mask.
pub fn apply_mask(weights: &ParamVector, mask: &DropoutMask) -> Result<ParamVector> {
    if weights.len() != mask.multipliers.len() {
        return Err(Error::Shape(format!(
            "weights len {} vs mask len {}",
            weights.len(),
            mask.multipliers.len()
        )));
    }
    let values = weights
        .values
        .iter()
        .zip(&mask.multipliers)
        .map(|(w, m)| w * m)
        .collect();
    Ok(ParamVector {
        values,
        layout: weights.layout.clone(),
    })
}

/// Rebuild a full-length vector from a subnet: dropped coordinates become 0,
/// retained coordinates carry the subnet values. Idempotent after
/// [`apply_mask`] under the same mask.
pub fn zero_pad(subnet: &ParamVector, mask: &DropoutMask) -> Result<ParamVector> {
    if subnet.len() != mask.multipliers.len() {
        return Err(Error::Shape(format!(
            "subnet len {} vs mask len {}",
            subnet.len(),
            mask.multipliers.len()
        )));
    }
    let values = subnet
        .values
        .iter()
        .zip(&mask.multipliers)
        .map(|(v, m)| if *m == 0.0 { 0.0 } else { *v })
        .collect();
    Ok(ParamVector {
        values,
        layout: subnet.layout.clone(),
    })
}

/// Parameter count and per-sample processor cycles of a subnet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubnetSizes {
    /// Parameters kept: `(1 - rate) * full_params`.
    pub m_params: f64,
    /// Cycles per sample: `(1 - rate) * full_cycles`.
    pub c_ops: f64,
}

/// Subnet size at `rate` for a model with `m_ori` parameters and `c_ori`
/// cycles per sample.
pub fn subnet_sizes(rate: f64, m_ori: f64, c_ori: f64) -> Result<SubnetSizes> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::domain(
            "dropout rate",
            format!("{rate} not in [0, 1)"),
        ));
    }
    Ok(SubnetSizes {
        m_params: (1.0 - rate) * m_ori,
        c_ops: (1.0 - rate) * c_ori,
    })
}

/// Debug dump: one CSV row per coordinate, `index,multiplier`.
pub fn write_mask_csv(mask: &DropoutMask, out: &mut impl Write) -> Result<()> {
    writeln!(out, "index,multiplier")?;
    for (i, m) in mask.multipliers.iter().enumerate() {
        writeln!(out, "{i},{m}")?;
    }
    Ok(())
}
