use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

/// Intermediate channel count of a factorized `t × d × d` convolution that
/// keeps its parameter count close to the full 3-D kernel.
pub fn midplanes_formula(t: usize, d: usize, n_in: usize, n_out: usize) -> usize {
    let num = t * d * d * n_in * n_out;
    let den = d * d * n_in + t * n_out;
    num / den
}

/// One (2+1)D convolution: a `1 × kh × kw` spatial convolution into
/// `midplanes` channels followed by a `kt × 1 × 1` temporal convolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kernel_t: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride_t: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub midplanes: usize,
}

impl BlockSpec {
    /// Square spatial kernel with midplanes from [`midplanes_formula`].
    pub fn new(kernel: [usize; 3], in_channels: usize, out_channels: usize, stride: [usize; 3]) -> Self {
        let [kt, kh, kw] = kernel;
        Self {
            kernel_t: kt,
            kernel_h: kh,
            kernel_w: kw,
            in_channels,
            out_channels,
            stride_t: stride[0],
            stride_h: stride[1],
            stride_w: stride[2],
            midplanes: midplanes_formula(kt, kh, in_channels, out_channels).max(1),
        }
    }

    pub fn with_midplanes(mut self, midplanes: usize) -> Self {
        self.midplanes = midplanes;
        self
    }

    pub fn kernel(&self) -> [usize; 3] {
        [self.kernel_t, self.kernel_h, self.kernel_w]
    }

    pub fn stride(&self) -> [usize; 3] {
        [self.stride_t, self.stride_h, self.stride_w]
    }

    /// Weights of the two factorized convolutions (no batch-norm terms).
    pub fn factorized_params(&self) -> usize {
        self.midplanes * self.in_channels * self.kernel_h * self.kernel_w
            + self.out_channels * self.midplanes * self.kernel_t
    }

    /// Weights of the unfactorized `kt × kh × kw` convolution.
    pub fn full_params(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_t * self.kernel_h * self.kernel_w
    }

    fn validate(&self, what: &str) -> Result<()> {
        let fields = [
            self.kernel_t,
            self.kernel_h,
            self.kernel_w,
            self.in_channels,
            self.out_channels,
            self.stride_t,
            self.stride_h,
            self.stride_w,
            self.midplanes,
        ];
        if fields.contains(&0) {
            return Err(CoreError::InvalidConfig(format!("{what}: every block field must be at least 1")));
        }
        if self.kernel_t % 2 == 0 || self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0 {
            return Err(CoreError::InvalidConfig(format!("{what}: kernels must have odd extent")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    /// Stride of the first block, applied to time, height and width.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub stem: BlockSpec,
    pub stages: Vec<StageSpec>,
    /// Kernel of every residual convolution.
    pub kernel: [usize; 3],
    /// Replaces the computed midplanes of every residual convolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub midplanes_override: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::r2plus1d_18()
    }
}

impl NetworkConfig {
    /// The 18-layer layout: 64-channel stem, stages of 64/128/256/512
    /// channels with two blocks each, downsampling at stages 2-4.
    pub fn r2plus1d_18() -> Self {
        Self::with_widths(64, [64, 128, 256, 512], 2)
    }

    /// Same layout with every width divided by `divisor` (at least 1 channel).
    pub fn scaled(divisor: usize) -> Self {
        let d = divisor.max(1);
        Self::with_widths((64 / d).max(1), [64, 128, 256, 512].map(|c| (c / d).max(1)), 2)
    }

    fn with_widths(stem: usize, widths: [usize; 4], blocks: usize) -> Self {
        Self {
            stem: BlockSpec::new([7, 7, 7], 3, stem, [1, 2, 2]),
            stages: widths
                .iter()
                .enumerate()
                .map(|(i, &channels)| StageSpec { channels, blocks, stride: if i == 0 { 1 } else { 2 } })
                .collect(),
            kernel: [3, 3, 3],
            midplanes_override: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.stem.in_channels
    }

    /// Input dimension of the fully connected head.
    pub fn head_features(&self) -> usize {
        self.stages.last().map_or(self.stem.out_channels, |s| s.channels)
    }

    /// Specs of the two convolutions of every residual block, in order:
    /// `(stage, block, [conv1, conv2])`.
    pub fn residual_specs(&self) -> Vec<(usize, usize, [BlockSpec; 2])> {
        let mut out = Vec::new();
        let mut in_ch = self.stem.out_channels;
        for (si, stage) in self.stages.iter().enumerate() {
            for b in 0..stage.blocks {
                let s = if b == 0 { stage.stride } else { 1 };
                let mut c1 = BlockSpec::new(self.kernel, in_ch, stage.channels, [s, s, s]);
                let mut c2 = BlockSpec::new(self.kernel, stage.channels, stage.channels, [1, 1, 1]);
                if let Some(m) = self.midplanes_override {
                    c1 = c1.with_midplanes(m);
                    c2 = c2.with_midplanes(m);
                }
                out.push((si, b, [c1, c2]));
                in_ch = stage.channels;
            }
        }
        out
    }

    /// Layer names in forward order: `stem`, `conv2`, `conv3`, ..., `fc`.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec!["stem".to_string()];
        names.extend((0..self.stages.len()).map(|i| format!("conv{}", i + 2)));
        names.push("fc".to_string());
        names
    }

    pub fn validate(&self) -> Result<()> {
        self.stem.validate("stem")?;
        if self.stem.in_channels != 3 {
            return Err(CoreError::InvalidConfig("stem must take 3 input channels".into()));
        }
        if self.stem.stride_t != 1 {
            return Err(CoreError::InvalidConfig("stem must not stride in time".into()));
        }
        if self.stages.is_empty() {
            return Err(CoreError::InvalidConfig("at least one stage is required".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.blocks == 0 || s.stride == 0 {
                return Err(CoreError::InvalidConfig(format!("stage {}: channels, blocks and stride must be >= 1", i + 1)));
            }
        }
        if self.midplanes_override == Some(0) {
            return Err(CoreError::InvalidConfig("midplanes override must be >= 1".into()));
        }
        for (si, b, specs) in self.residual_specs() {
            for spec in &specs {
                spec.validate(&format!("stage {} block {}", si + 1, b + 1))?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
