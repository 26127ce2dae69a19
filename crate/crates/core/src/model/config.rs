use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::wavelet::DEFAULT_ORDER;

/// How structural-only logits are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructuralHead {
    /// A dedicated linear head on the pooled structural descriptor.
    Auxiliary,
    /// The fused head applied with the detail descriptor zeroed.
    MaskedFused,
}

/// Which streams a network contains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    StructuralOnly,
    DetailOnly,
    RawPixel,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

keyword_enum!(StructuralHead, "structural head",
    StructuralHead::Auxiliary => "auxiliary",
    StructuralHead::MaskedFused => "masked_fused",
);

keyword_enum!(Variant, "model variant",
    Variant::Full => "full",
    Variant::StructuralOnly => "structural_only",
    Variant::DetailOnly => "detail_only",
    Variant::RawPixel => "raw_pixel",
);

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    /// Output channels of each conv block; the same for both streams.
    pub channel_widths: Vec<usize>,
    pub hidden_width: usize,
    pub wavelet_order: usize,
    pub input_side: usize,
    /// Weight of the structural cross-entropy term in the training loss.
    pub aux_weight: f64,
    pub structural_head: StructuralHead,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 9,
            channel_widths: vec![32, 64, 128, 256],
            hidden_width: 1024,
            wavelet_order: DEFAULT_ORDER,
            input_side: 320,
            aux_weight: 0.5,
            structural_head: StructuralHead::Auxiliary,
            variant: Variant::Full,
        }
    }
}

pub(crate) const CONFIG_KEYS: [&str; 8] = [
    "num_classes",
    "channel_widths",
    "hidden_width",
    "wavelet_order",
    "input_side",
    "aux_weight",
    "structural_head",
    "variant",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    pub fn blocks(&self) -> usize {
        self.channel_widths.len()
    }

    /// Channels of the final feature map of each encoder.
    pub fn last_width(&self) -> usize {
        *self.channel_widths.last().unwrap_or(&0)
    }

    /// Side of the subband (and raw-pixel) encoder inputs.
    pub fn subband_side(&self) -> usize {
        self.input_side / 2
    }

    /// Side of the final feature maps.
    pub fn feature_side(&self) -> usize {
        self.input_side >> (self.blocks() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.channel_widths.is_empty() || self.channel_widths.contains(&0) {
            return Err(Error::Config(format!(
                "channel_widths must be a non-empty list of positive integers, got {:?}",
                self.channel_widths
            )));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be positive".into()));
        }
        if !(1..=4).contains(&self.wavelet_order) {
            return Err(Error::Config(format!("wavelet_order must be 1..=4, got {}", self.wavelet_order)));
        }
        let unit = 1usize
            .checked_shl(self.blocks() as u32 + 1)
            .filter(|u| *u <= self.input_side)
            .ok_or_else(|| Error::Config(format!("input_side {} too small for {} blocks", self.input_side, self.blocks())))?;
        if self.input_side % unit != 0 {
            return Err(Error::Config(format!(
                "input_side {} must be divisible by {unit}",
                self.input_side
            )));
        }
        if self.subband_side() < 2 * self.wavelet_order {
            return Err(Error::Config(format!(
                "input_side {} too small for wavelet order {}",
                self.input_side, self.wavelet_order
            )));
        }
        if !(self.aux_weight.is_finite() && self.aux_weight >= 0.0) {
            return Err(Error::Config(format!("aux_weight must be >= 0, got {}", self.aux_weight)));
        }
        Ok(())
    }

    /// Assigns one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "num_classes" => self.num_classes = parse_num(key, v)?,
            "channel_widths" => {
                self.channel_widths = v
                    .split(',')
                    .map(|p| parse_num(key, p))
                    .collect::<Result<_>>()?
            }
            "hidden_width" => self.hidden_width = parse_num(key, v)?,
            "wavelet_order" => self.wavelet_order = parse_num(key, v)?,
            "input_side" => self.input_side = parse_num(key, v)?,
            "aux_weight" => self.aux_weight = parse_num(key, v)?,
            "structural_head" => self.structural_head = v.parse()?,
            "variant" => self.variant = v.parse()?,
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.channel_widths.iter().map(|w| w.to_string()).collect();
        let mut s = String::new();
        writeln!(s, "num_classes = {}", self.num_classes).unwrap();
        writeln!(s, "channel_widths = {}", widths.join(",")).unwrap();
        writeln!(s, "hidden_width = {}", self.hidden_width).unwrap();
        writeln!(s, "wavelet_order = {}", self.wavelet_order).unwrap();
        writeln!(s, "input_side = {}", self.input_side).unwrap();
        writeln!(s, "aux_weight = {:?}", self.aux_weight).unwrap();
        writeln!(s, "structural_head = {}", self.structural_head).unwrap();
        writeln!(s, "variant = {}", self.variant).unwrap();
        s
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (key, value) in parse_key_values(text)? {
            config.set(&key, &value)?;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("expected `key = value`, got {l:?}")))
        })
        .collect()
}
