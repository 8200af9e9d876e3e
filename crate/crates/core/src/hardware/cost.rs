use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HardwareError;
use crate::codes::{CssCode, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    Conv,
    Depthwise,
    LocalAttention,
    FullAttention,
}

impl FromStr for BlockVariant {
    type Err = HardwareError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" => Ok(Self::Conv),
            "depthwise" => Ok(Self::Depthwise),
            "local_attention" | "local" => Ok(Self::LocalAttention),
            "full_attention" | "full" => Ok(Self::FullAttention),
            _ => Err(HardwareError::Spec(format!("unknown block variant {s:?}"))),
        }
    }
}

/// Shape of one bottleneck block: `n` positions, width `hidden`, bottleneck
/// factor `b`, neighbourhood size `kernel`, and `layers` blocks in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCostSpec {
    pub n: u64,
    pub hidden: u64,
    pub bottleneck: u64,
    pub kernel: u64,
    pub layers: u64,
    pub variant: BlockVariant,
}

impl BlockCostSpec {
    pub fn validate(&self) -> Result<(), HardwareError> {
        if [self.n, self.hidden, self.bottleneck, self.kernel, self.layers].contains(&0) {
            return Err(HardwareError::Spec("all counts must be positive".into()));
        }
        if self.hidden % self.bottleneck != 0 {
            return Err(HardwareError::Spec(format!(
                "bottleneck {} does not divide H = {}",
                self.bottleneck, self.hidden
            )));
        }
        Ok(())
    }

    pub fn narrow(&self) -> u64 {
        self.hidden / self.bottleneck
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacBreakdown {
    pub pointwise: u64,
    pub spatial: u64,
    pub attn_proj: u64,
    pub per_block: u64,
    pub per_network: u64,
}

impl MacBreakdown {
    pub fn spatial_fraction(&self) -> f64 {
        self.spatial as f64 / self.per_block as f64
    }
}

/// MACs of one block: the two pointwise projections `2nH²/b`, the spatial
/// step, and the q/k/v projections of the attention variants.
pub fn mac_count(spec: &BlockCostSpec) -> Result<MacBreakdown, HardwareError> {
    spec.validate()?;
    let (n, h, k, hb) = (spec.n, spec.hidden, spec.kernel, spec.narrow());
    let pointwise = 2 * n * h * h / spec.bottleneck;
    let spatial = match spec.variant {
        BlockVariant::Conv => n * k * hb * hb,
        BlockVariant::Depthwise | BlockVariant::LocalAttention => n * k * hb,
        BlockVariant::FullAttention => n * n * hb,
    };
    let attn_proj = match spec.variant {
        BlockVariant::LocalAttention | BlockVariant::FullAttention => 3 * n * hb * hb,
        _ => 0,
    };
    let per_block = pointwise + spatial + attn_proj;
    Ok(MacBreakdown {
        pointwise,
        spatial,
        attn_proj,
        per_block,
        per_network: per_block * spec.layers,
    })
}

/// Peak compute throughput in MACs per second ("TOPS" counts tera-MACs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflineSpec {
    pub name: String,
    pub throughput: f64,
}

impl RooflineSpec {
    pub fn new(name: &str, throughput: f64) -> Result<Self, HardwareError> {
        if !(throughput > 0.0) {
            return Err(HardwareError::Spec(format!("throughput {throughput} must be positive")));
        }
        Ok(Self {
            name: name.into(),
            throughput,
        })
    }

    /// `versal` (133 TOPS), `tpu-v1` (92 TOPS) or `edge-tpu` (4 TOPS).
    pub fn preset(id: &str) -> Result<Self, HardwareError> {
        let tops = match id {
            "versal" => 133.0,
            "tpu-v1" => 92.0,
            "edge-tpu" => 4.0,
            _ => return Err(HardwareError::Spec(format!("unknown roofline preset {id:?}"))),
        };
        Self::new(id, tops * 1e12)
    }
}

/// Seconds per syndrome round at peak throughput.
pub fn roofline_latency(spec: &BlockCostSpec, roofline: &RooflineSpec) -> Result<f64, HardwareError> {
    Ok(mac_count(spec)?.per_network as f64 / roofline.throughput)
}

/// How many positions a per-round cost estimate counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundConvention {
    /// Data qubits of one round: `d²` for surface codes, `n` for BB codes.
    PerRound,
    /// Every detector of a `d`-round volume: checks × d.
    FullVolume,
}

impl RoundConvention {
    pub fn positions(self, code: &CssCode) -> u64 {
        match self {
            Self::PerRound => code.n as u64,
            Self::FullVolume => (code.num_checks() * code.d.unwrap_or(1)) as u64,
        }
    }

    /// Neighbourhood size of the standard convolution on this code.
    pub fn kernel(code: &CssCode) -> u64 {
        match code.layout {
            Layout::Grid(_) => 27,
            Layout::Torus(_) => 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferReport {
    pub residual_per_block: u64,
    pub residual_total: u64,
    pub weights_per_layer: u64,
    pub weights_total: u64,
}

/// Residual buffers (`n·H` values per block) and projection plus spatial
/// weights per layer, in bytes.
pub fn buffer_sizing(spec: &BlockCostSpec, bytes_per_value: u64) -> Result<BufferReport, HardwareError> {
    spec.validate()?;
    let (h, hb, k) = (spec.hidden, spec.narrow(), spec.kernel);
    let spatial = match spec.variant {
        BlockVariant::Conv => k * hb * hb,
        BlockVariant::Depthwise => k * hb,
        _ => return Err(HardwareError::Spec("buffer sizing covers the convolution variants".into())),
    };
    let residual_per_block = spec.n * h * bytes_per_value;
    let weights_per_layer = (spatial + 2 * h * h / spec.bottleneck) * bytes_per_value;
    Ok(BufferReport {
        residual_per_block,
        residual_total: residual_per_block * spec.layers,
        weights_per_layer,
        weights_total: weights_per_layer * spec.layers,
    })
}
