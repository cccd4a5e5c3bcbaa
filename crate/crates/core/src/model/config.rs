use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{CHANNELS, WINDOW_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub dilation: usize,
}

/// Exponentially-dilated convolution stack followed by fully-connected
/// layers. Layer ℓ (1-based) must use dilation 2^(ℓ−1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_len: usize,
    pub kernel: usize,
    pub conv: Vec<ConvSpec>,
    /// Output sizes of the fully-connected layers; the last is the
    /// embedding dimension.
    pub fc_sizes: Vec<usize>,
}

impl ModelConfig {
    /// `layers` convolutions of equal `width` on 4 × 1024 inputs.
    pub fn uniform(width: usize, layers: usize, fc_sizes: Vec<usize>) -> Self {
        Self {
            in_channels: CHANNELS,
            input_len: WINDOW_STEPS,
            kernel: 3,
            conv: (0..layers)
                .map(|l| ConvSpec {
                    out_channels: width,
                    dilation: 1 << l,
                })
                .collect(),
            fc_sizes,
        }
    }

    pub fn with_input(mut self, channels: usize, len: usize) -> Self {
        self.in_channels = channels;
        self.input_len = len;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.kernel != 3 {
            return bad(format!("kernel {} (only 3 is supported)", self.kernel));
        }
        if self.in_channels == 0 || self.input_len == 0 {
            return bad("empty input shape".into());
        }
        if self.conv.is_empty() {
            return bad("no convolution layers".into());
        }
        for (l, c) in self.conv.iter().enumerate() {
            if c.dilation != 1 << l {
                return bad(format!("layer {} dilation {} != {}", l + 1, c.dilation, 1 << l));
            }
            if c.out_channels == 0 {
                return bad(format!("layer {} has no channels", l + 1));
            }
        }
        if self.fc_sizes.is_empty() || self.fc_sizes.contains(&0) {
            return bad("fully-connected sizes must be non-empty and positive".into());
        }
        let shrink = (self.kernel - 1) * ((1usize << self.conv.len()) - 1);
        if shrink >= self.input_len {
            return bad(format!(
                "{} layers leave no output from {} steps",
                self.conv.len(),
                self.input_len
            ));
        }
        Ok(())
    }

    /// Sequence length after each convolution layer.
    pub fn layer_lengths(&self) -> Vec<usize> {
        let mut len = self.input_len;
        self.conv
            .iter()
            .map(|c| {
                len = len.saturating_sub((self.kernel - 1) * c.dilation);
                len
            })
            .collect()
    }

    pub fn flattened_len(&self) -> usize {
        self.conv.last().map_or(0, |c| c.out_channels) * self.layer_lengths().last().copied().unwrap_or(0)
    }

    pub fn embedding_dim(&self) -> usize {
        *self.fc_sizes.last().expect("validated config")
    }

    /// Input steps seen by one output of the last convolution layer.
    pub fn receptive_field(&self) -> usize {
        1 + self.conv.iter().map(|c| (self.kernel - 1) * c.dilation).sum::<usize>()
    }

    /// Learnable parameters: conv weight + bias + batch-norm scale/shift,
    /// and fully-connected weight + bias.
    pub fn parameter_count(&self) -> usize {
        let mut cin = self.in_channels;
        let mut n = 0;
        for c in &self.conv {
            n += c.out_channels * cin * self.kernel + 3 * c.out_channels;
            cin = c.out_channels;
        }
        let mut fin = self.flattened_len();
        for &f in &self.fc_sizes {
            n += f * fin + f;
            fin = f;
        }
        n
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let conv: Vec<String> = self
            .conv
            .iter()
            .map(|c| format!("{}:{}", c.out_channels, c.dilation))
            .collect();
        let fc: Vec<String> = self.fc_sizes.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(s, "in_channels={}", self.in_channels);
        let _ = writeln!(s, "input_len={}", self.input_len);
        let _ = writeln!(s, "kernel={}", self.kernel);
        let _ = writeln!(s, "conv={}", conv.join(","));
        let _ = writeln!(s, "fc={}", fc.join(","));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig {
            in_channels: 0,
            input_len: 0,
            kernel: 0,
            conv: Vec::new(),
            fc_sizes: Vec::new(),
        };
        let num = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad number `{v}`")))
        };
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            match k.trim() {
                "in_channels" => cfg.in_channels = num(v)?,
                "input_len" => cfg.input_len = num(v)?,
                "kernel" => cfg.kernel = num(v)?,
                "conv" => {
                    cfg.conv = v
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(|p| {
                            let (o, d) = p
                                .split_once(':')
                                .ok_or_else(|| Error::Config(format!("bad conv spec `{p}`")))?;
                            Ok(ConvSpec {
                                out_channels: num(o)?,
                                dilation: num(d)?,
                            })
                        })
                        .collect::<Result<_>>()?
                }
                "fc" => {
                    cfg.fc_sizes = v
                        .split(',')
                        .filter(|p| !p.trim().is_empty())
                        .map(num)
                        .collect::<Result<_>>()?
                }
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Default for ModelConfig {
    /// Nine layers, so the receptive field spans 1023 of 1024 inputs.
    fn default() -> Self {
        Self::uniform(128, 9, vec![256, 128])
    }
}
