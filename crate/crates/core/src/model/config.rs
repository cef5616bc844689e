use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rfl_tensor::NormMode;

use crate::error::{Error, Result};
use crate::losses::CountMode;

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        "unknown {} `{s}`; expected one of: {}",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// Recognition decoder family.
    DecoderKind {
        Ctc => "ctc",
        BilstmAttn => "bilstm-attn",
        ParalAttn => "paral-attn-simplified",
    }
);

keyword_enum!(
    /// How the two branches exchange features.
    AdaptorMode {
        None => "none",
        Jt => "jt",
        FixedCnt => "fixed-cnt",
        FixedRcg => "fixed-rcg",
        UniC2r => "uni-c2r",
        UniR2c => "uni-r2c",
        Bidirectional => "bidirectional",
    }
);

keyword_enum!(
    Fusion {
        Mul => "mul",
        Add => "add",
        Concat => "concat",
    }
);

keyword_enum!(
    BackboneKind {
        Resnet => "resnet",
        Vgg => "vgg",
    }
);

keyword_enum!(
    /// Which branches exist and are supervised.
    Tasks {
        Both => "both",
        RcgOnly => "rcg-only",
        CntOnly => "cnt-only",
    }
);

keyword_enum!(
    NormVariant {
        Batch => "batch",
        Layer => "layer",
        Instance => "instance",
    }
);

impl NormVariant {
    pub fn mode(self) -> NormMode {
        match self {
            NormVariant::Batch => NormMode::Batch,
            NormVariant::Layer => NormMode::Layer,
            NormVariant::Instance => NormMode::Instance,
        }
    }
}

fn parse_count_mode(s: &str) -> Result<CountMode> {
    match s {
        "regression" => Ok(CountMode::Regression),
        "classification" => Ok(CountMode::Classification),
        _ => Err(Error::Config(format!(
            "unknown count mode `{s}`; expected regression or classification"
        ))),
    }
}

pub fn count_mode_str(m: CountMode) -> &'static str {
    match m {
        CountMode::Regression => "regression",
        CountMode::Classification => "classification",
    }
}

impl AdaptorMode {
    pub fn has_c2r(self) -> bool {
        matches!(
            self,
            AdaptorMode::FixedCnt | AdaptorMode::UniC2r | AdaptorMode::Bidirectional
        )
    }

    pub fn has_r2c(self) -> bool {
        matches!(
            self,
            AdaptorMode::FixedRcg | AdaptorMode::UniR2c | AdaptorMode::Bidirectional
        )
    }
}

impl Tasks {
    pub fn has_cnt(self) -> bool {
        self != Tasks::RcgOnly
    }

    pub fn has_rcg(self) -> bool {
        self != Tasks::CntOnly
    }
}

/// Declarative model description. Text form is one `key=value` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub shared_depth: usize,
    pub backbone: BackboneKind,
    pub decoder: DecoderKind,
    pub count_mode: CountMode,
    pub class_balance: bool,
    pub adaptor: AdaptorMode,
    pub fusion_c2r: Fusion,
    pub fusion_r2c: Fusion,
    pub fe: bool,
    pub hidden: usize,
    pub embed: usize,
    pub lambda: f64,
    pub norm: NormVariant,
    pub tasks: Tasks,
    pub alphabet: String,
    pub max_len: usize,
    /// Checkpoint of the independently trained branch for fixed modes.
    pub pretrained: Option<PathBuf>,
}

pub const BACKBONE_STAGES: usize = 4;
pub const MAX_CHANNELS: usize = 512;

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 100,
            channels: 64,
            shared_depth: 2,
            backbone: BackboneKind::Resnet,
            decoder: DecoderKind::Ctc,
            count_mode: CountMode::Regression,
            class_balance: true,
            adaptor: AdaptorMode::Bidirectional,
            fusion_c2r: Fusion::Mul,
            fusion_r2c: Fusion::Add,
            fe: true,
            hidden: 128,
            embed: 32,
            lambda: 1.0,
            norm: NormVariant::Batch,
            tasks: Tasks::Both,
            alphabet: "abcdefghij".into(),
            max_len: 26,
            pretrained: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected true or false, got `{value}`"
        ))),
    }
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = &[
        "height",
        "width",
        "channels",
        "shared_depth",
        "backbone",
        "decoder",
        "count_mode",
        "class_balance",
        "adaptor",
        "fusion_c2r",
        "fusion_r2c",
        "fe",
        "hidden",
        "embed",
        "lambda",
        "norm",
        "tasks",
        "alphabet",
        "max_len",
        "pretrained",
    ];

    /// Sets one field from text. Returns `Ok(false)` for a key this type does
    /// not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "shared_depth" => self.shared_depth = parse(key, value)?,
            "backbone" => self.backbone = value.parse()?,
            "decoder" => self.decoder = value.parse()?,
            "count_mode" => self.count_mode = parse_count_mode(value)?,
            "class_balance" => self.class_balance = parse_bool(key, value)?,
            "adaptor" => self.adaptor = value.parse()?,
            "fusion_c2r" => self.fusion_c2r = value.parse()?,
            "fusion_r2c" => self.fusion_r2c = value.parse()?,
            "fe" => self.fe = parse_bool(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "embed" => self.embed = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "norm" => self.norm = value.parse()?,
            "tasks" => self.tasks = value.parse()?,
            "alphabet" => self.alphabet = value.to_string(),
            "max_len" => self.max_len = parse(key, value)?,
            "pretrained" => self.pretrained = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let pretrained = self
            .pretrained
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        vec![
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("channels", self.channels.to_string()),
            ("shared_depth", self.shared_depth.to_string()),
            ("backbone", self.backbone.to_string()),
            ("decoder", self.decoder.to_string()),
            ("count_mode", count_mode_str(self.count_mode).to_string()),
            ("class_balance", self.class_balance.to_string()),
            ("adaptor", self.adaptor.to_string()),
            ("fusion_c2r", self.fusion_c2r.to_string()),
            ("fusion_r2c", self.fusion_r2c.to_string()),
            ("fe", self.fe.to_string()),
            ("hidden", self.hidden.to_string()),
            ("embed", self.embed.to_string()),
            ("lambda", self.lambda.to_string()),
            ("norm", self.norm.to_string()),
            ("tasks", self.tasks.to_string()),
            ("alphabet", self.alphabet.clone()),
            ("max_len", self.max_len.to_string()),
            ("pretrained", pretrained),
        ]
    }

    /// Width of the final feature map, i.e. the number of sequence frames.
    pub fn frames(&self) -> usize {
        self.width / 4 + 1
    }

    /// Counting classes for classification mode: `0..=max_len`.
    pub fn count_classes(&self) -> usize {
        self.max_len + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if matches!(self.adaptor, AdaptorMode::FixedCnt | AdaptorMode::FixedRcg)
            && self.pretrained.is_none()
        {
            return Err(Error::Config(format!(
                "adaptor `{}` needs a pretrained branch checkpoint",
                self.adaptor
            )));
        }
        Ok(())
    }

    /// Every check except the pretrained checkpoint that fixed modes need for
    /// a fresh build.
    pub fn validate_structure(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height == 0
            || !self.height.is_multiple_of(8)
            || self.width < 4
            || !self.width.is_multiple_of(4)
        {
            return bad(format!(
                "input {}x{} must have height a multiple of 8 and width a multiple of 4",
                self.height, self.width
            ));
        }
        if self.channels < 8 || !self.channels.is_multiple_of(8) || self.channels > MAX_CHANNELS {
            return bad(format!(
                "channels {} must be a multiple of 8 in 8..={MAX_CHANNELS}",
                self.channels
            ));
        }
        if self.shared_depth >= BACKBONE_STAGES {
            return bad(format!(
                "shared_depth {} must be below {BACKBONE_STAGES}",
                self.shared_depth
            ));
        }
        if self.hidden == 0 || self.embed == 0 {
            return bad("hidden and embed sizes must be positive".into());
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad(format!(
                "lambda {} must be finite and nonnegative",
                self.lambda
            ));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.decoder == DecoderKind::Ctc && self.max_len > self.frames() {
            return bad(format!(
                "max_len {} exceeds {} CTC frames",
                self.max_len,
                self.frames()
            ));
        }
        crate::losses::LabelCoding::new(&self.alphabet, self.max_len)?;
        if self.adaptor != AdaptorMode::None && self.tasks != Tasks::Both {
            return bad(format!(
                "adaptor `{}` needs both tasks, got `{}`",
                self.adaptor, self.tasks
            ));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ModelConfig {
            decoder: DecoderKind::ParalAttn,
            fusion_c2r: Fusion::Concat,
            pretrained: Some("x/checkpoint.bin".into()),
            ..Default::default()
        };
        cfg.adaptor = AdaptorMode::FixedCnt;
        let mut back = ModelConfig::default();
        for line in cfg.to_text().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(back.set(k, v).unwrap(), "{k}");
        }
        assert_eq!(back, cfg);
        assert_eq!(ModelConfig::KEYS.len(), cfg.entries().len());
    }

    #[test]
    fn defaults_match_the_desk_protocol() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.frames(), 26);
        assert_eq!(cfg.count_classes(), 27);
        assert_eq!((cfg.fusion_c2r, cfg.fusion_r2c), (Fusion::Mul, Fusion::Add));
    }

    #[test]
    fn invalid_combinations() {
        let fixed = ModelConfig {
            adaptor: AdaptorMode::FixedCnt,
            ..Default::default()
        };
        assert!(fixed.validate().is_err());
        let single = ModelConfig {
            tasks: Tasks::RcgOnly,
            ..Default::default()
        };
        assert!(single.validate().is_err());
        let wide = ModelConfig {
            channels: 1024,
            ..Default::default()
        };
        assert!(wide.validate().is_err());
        assert!(ModelConfig::default().set("decoder", "beam").is_err());
        assert!(!ModelConfig::default().set("epochs", "3").unwrap());
    }
}
