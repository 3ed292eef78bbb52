//! Sub-network layer configurations and their canonical text form.
//!
//! A config serializes to one layer per line:
//!
//! ```text
//! subnet orientation
//! input 6 16 64
//! conv 6 8 7 2 3
//! fc 64
//! branch 32
//! heads two
//! dropout 0.5
//! slope 0.1
//! ```
//!
//! `conv` fields are in/out channels, kernel, stride, padding. Pooling and
//! normalization layers are rejected when parsing.

use std::fmt::Write as _;

use super::NetworkError;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Padding defaults to `kernel / 2`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((self.output_extent(h)?, self.output_extent(w)?))
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadLayout {
    /// Separate FC branches ending in a 3-vector translation head and a
    /// 3-vector orientation head.
    TwoBranch,
    /// One FC branch ending in a single 6-vector head.
    SingleBranch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubNetKind {
    Translation,
    Orientation,
}

impl SubNetKind {
    pub fn name(self) -> &'static str {
        match self {
            SubNetKind::Translation => "translation",
            SubNetKind::Orientation => "orientation",
        }
    }

    /// Channels of the stacked pair this sub-network consumes.
    pub fn input_channels(self) -> usize {
        match self {
            SubNetKind::Translation => 2,
            SubNetKind::Orientation => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubNetConfig {
    pub kind: SubNetKind,
    pub input_height: usize,
    pub input_width: usize,
    pub conv: Vec<ConvSpec>,
    /// Shared fully connected layers after flattening.
    pub fc_trunk: Vec<usize>,
    /// Hidden FC layers inside each branch, before the output head.
    pub branch_hidden: Vec<usize>,
    pub heads: HeadLayout,
    pub dropout: f64,
    pub slope: f64,
}

/// FlowNetS contraction: (kernel, stride, channels) of its nine convolutions.
const FLOWNET_S: [(usize, usize, usize); 9] = [
    (7, 2, 64),
    (5, 2, 128),
    (5, 2, 256),
    (3, 1, 256),
    (3, 2, 512),
    (3, 1, 512),
    (3, 2, 512),
    (3, 1, 512),
    (3, 2, 1024),
];

const TRANSLATION_STACK: [(usize, usize, usize); 4] =
    [(3, 2, 64), (3, 2, 128), (3, 2, 256), (3, 2, 512)];

fn chain(
    input_channels: usize,
    layers: &[(usize, usize, usize)],
    channel_div: usize,
) -> Vec<ConvSpec> {
    let mut in_ch = input_channels;
    layers
        .iter()
        .map(|&(k, s, c)| {
            let out = (c / channel_div).max(1);
            let spec = ConvSpec::new(in_ch, out, k, s);
            in_ch = out;
            spec
        })
        .collect()
}

impl SubNetConfig {
    /// Full-size stack for a `height × width` input.
    pub fn full(kind: SubNetKind, height: usize, width: usize) -> Self {
        Self::scaled(kind, height, width, 1, vec![512], vec![128])
    }

    /// Desk-scale stack: channels divided by 8, FC widths 64 and 32.
    pub fn tiny(kind: SubNetKind, height: usize, width: usize) -> Self {
        Self::scaled(kind, height, width, 8, vec![64], vec![32])
    }

    fn scaled(
        kind: SubNetKind,
        height: usize,
        width: usize,
        div: usize,
        fc_trunk: Vec<usize>,
        branch_hidden: Vec<usize>,
    ) -> Self {
        let layers: &[(usize, usize, usize)] = match kind {
            SubNetKind::Translation => &TRANSLATION_STACK,
            SubNetKind::Orientation => &FLOWNET_S,
        };
        Self {
            kind,
            input_height: height,
            input_width: width,
            conv: chain(kind.input_channels(), layers, div),
            fc_trunk,
            branch_hidden,
            heads: HeadLayout::TwoBranch,
            dropout: 0.5,
            slope: LEAKY_SLOPE,
        }
    }

    pub fn with_heads(mut self, heads: HeadLayout) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    /// Spatial size after each convolution, or an error if the stack collapses.
    pub fn feature_sizes(&self) -> Result<Vec<(usize, usize)>, NetworkError> {
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, spec) in self.conv.iter().enumerate() {
            (h, w) = spec.output_size(h, w).ok_or_else(|| {
                NetworkError::InvalidConfig(format!(
                    "conv {i} produces an empty feature map from {h}x{w}"
                ))
            })?;
            out.push((h, w));
        }
        Ok(out)
    }

    pub fn flattened_len(&self) -> Result<usize, NetworkError> {
        let (h, w) = self
            .feature_sizes()?
            .last()
            .copied()
            .unwrap_or((self.input_height, self.input_width));
        let c = self
            .conv
            .last()
            .map_or(self.kind.input_channels(), |s| s.out_channels);
        Ok(c * h * w)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let mut channels = self.kind.input_channels();
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.in_channels != channels {
                return Err(NetworkError::InvalidConfig(format!(
                    "conv {i} expects {} input channels, previous layer gives {channels}",
                    spec.in_channels
                )));
            }
            if spec.kernel == 0 || spec.stride == 0 || spec.out_channels == 0 {
                return Err(NetworkError::InvalidConfig(format!(
                    "conv {i} has a zero kernel, stride or channel count"
                )));
            }
            channels = spec.out_channels;
        }
        if self
            .fc_trunk
            .iter()
            .chain(&self.branch_hidden)
            .any(|w| *w == 0)
        {
            return Err(NetworkError::InvalidConfig(
                "FC layer widths must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetworkError::InvalidConfig(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        if !self.slope.is_finite() {
            return Err(NetworkError::InvalidConfig(
                "non-finite activation slope".into(),
            ));
        }
        self.feature_sizes()?;
        Ok(())
    }

    /// Number of learnable scalars.
    pub fn parameter_count(&self) -> Result<usize, NetworkError> {
        let conv: usize = self
            .conv
            .iter()
            .map(|s| s.weight_count() + s.out_channels)
            .sum();
        let mut fc = 0;
        let mut width = self.flattened_len()?;
        for &next in &self.fc_trunk {
            fc += width * next + next;
            width = next;
        }
        let branches: &[usize] = match self.heads {
            HeadLayout::TwoBranch => &[3, 3],
            HeadLayout::SingleBranch => &[6],
        };
        for &out in branches {
            let mut w = width;
            for &next in &self.branch_hidden {
                fc += w * next + next;
                w = next;
            }
            fc += w * out + out;
        }
        Ok(conv + fc)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "subnet {}", self.kind.name()).unwrap();
        writeln!(
            s,
            "input {} {} {}",
            self.kind.input_channels(),
            self.input_height,
            self.input_width
        )
        .unwrap();
        for c in &self.conv {
            writeln!(
                s,
                "conv {} {} {} {} {}",
                c.in_channels, c.out_channels, c.kernel, c.stride, c.padding
            )
            .unwrap();
        }
        for w in &self.fc_trunk {
            writeln!(s, "fc {w}").unwrap();
        }
        for w in &self.branch_hidden {
            writeln!(s, "branch {w}").unwrap();
        }
        let heads = match self.heads {
            HeadLayout::TwoBranch => "two",
            HeadLayout::SingleBranch => "single",
        };
        writeln!(s, "heads {heads}").unwrap();
        writeln!(s, "dropout {}", self.dropout).unwrap();
        writeln!(s, "slope {}", self.slope).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NetworkError> {
        let bad = |line: usize, msg: &str| {
            NetworkError::InvalidConfig(format!("line {}: {msg}", line + 1))
        };
        let mut kind = None;
        let mut input = None;
        let mut conv = Vec::new();
        let mut fc_trunk = Vec::new();
        let mut branch_hidden = Vec::new();
        let mut heads = HeadLayout::TwoBranch;
        let mut dropout = 0.5;
        let mut slope = LEAKY_SLOPE;

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            let ints = || -> Result<Vec<usize>, NetworkError> {
                rest.iter()
                    .map(|f| {
                        f.parse::<usize>()
                            .map_err(|_| bad(n, "expected an unsigned integer"))
                    })
                    .collect()
            };
            let real = || -> Result<f64, NetworkError> {
                match rest.as_slice() {
                    [v] => v.parse::<f64>().map_err(|_| bad(n, "expected a number")),
                    _ => Err(bad(n, "expected one value")),
                }
            };
            match key.to_ascii_lowercase().as_str() {
                "subnet" => {
                    kind = Some(match rest.as_slice() {
                        ["translation"] => SubNetKind::Translation,
                        ["orientation"] => SubNetKind::Orientation,
                        _ => return Err(bad(n, "unknown sub-network kind")),
                    })
                }
                "input" => match ints()?.as_slice() {
                    [c, h, w] => input = Some((*c, *h, *w)),
                    _ => return Err(bad(n, "input takes channels, height, width")),
                },
                "conv" => match ints()?.as_slice() {
                    [i, o, k, s, p] => conv.push(ConvSpec {
                        in_channels: *i,
                        out_channels: *o,
                        kernel: *k,
                        stride: *s,
                        padding: *p,
                    }),
                    _ => return Err(bad(n, "conv takes in, out, kernel, stride, padding")),
                },
                "fc" => fc_trunk.extend(ints()?),
                "branch" => branch_hidden.extend(ints()?),
                "heads" => {
                    heads = match rest.as_slice() {
                        ["two"] => HeadLayout::TwoBranch,
                        ["single"] => HeadLayout::SingleBranch,
                        _ => return Err(bad(n, "heads must be `two` or `single`")),
                    }
                }
                "dropout" => dropout = real()?,
                "slope" => slope = real()?,
                "maxpool" | "avgpool" | "pool" | "batchnorm" | "bn" | "layernorm"
                | "instancenorm" => {
                    return Err(NetworkError::ForbiddenLayer(key.to_string()));
                }
                other => return Err(bad(n, &format!("unknown layer `{other}`"))),
            }
        }
        let kind =
            kind.ok_or_else(|| NetworkError::InvalidConfig("missing `subnet` line".into()))?;
        let (c, h, w) =
            input.ok_or_else(|| NetworkError::InvalidConfig("missing `input` line".into()))?;
        if c != kind.input_channels() {
            return Err(NetworkError::InvalidConfig(format!(
                "{} sub-network takes {} channels",
                kind.name(),
                kind.input_channels()
            )));
        }
        let cfg = Self {
            kind,
            input_height: h,
            input_width: w,
            conv,
            fc_trunk,
            branch_hidden,
            heads,
            dropout,
            slope,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
