use crate::attribute_constraint::KernelLayout;
use crate::cosine_classifier::ClassifierConfig;
use crate::echo::ConfigEcho;
use crate::error::{Result, RsanError};

/// Component switches for ablations. All on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    /// Region-based mapping; off means global average pooling + linear map.
    pub use_region_mapping: bool,
    /// Concentrate penalty on the saliency map (region mapping only).
    pub use_concentrate: bool,
    /// Cosine logits with temperature; off means dot-product logits.
    pub use_cosine_embedding: bool,
    /// Attribute-kernel regression branch.
    pub use_regression: bool,
    /// Kernels initialized from attribute embeddings rather than at random.
    pub use_semantic_init: bool,
}

impl AblationFlags {
    pub const FULL: AblationFlags = AblationFlags {
        use_region_mapping: true,
        use_concentrate: true,
        use_cosine_embedding: true,
        use_regression: true,
        use_semantic_init: true,
    };

    pub const BASELINE: AblationFlags = AblationFlags {
        use_region_mapping: false,
        use_concentrate: false,
        use_cosine_embedding: false,
        use_regression: false,
        use_semantic_init: false,
    };

    pub const NAMES: [&'static str; 5] = [
        "use_region_mapping",
        "use_concentrate",
        "use_cosine_embedding",
        "use_regression",
        "use_semantic_init",
    ];

    pub fn as_array(&self) -> [bool; 5] {
        [
            self.use_region_mapping,
            self.use_concentrate,
            self.use_cosine_embedding,
            self.use_regression,
            self.use_semantic_init,
        ]
    }

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        match name {
            "use_region_mapping" => Some(&mut self.use_region_mapping),
            "use_concentrate" => Some(&mut self.use_concentrate),
            "use_cosine_embedding" => Some(&mut self.use_cosine_embedding),
            "use_regression" => Some(&mut self.use_regression),
            "use_semantic_init" => Some(&mut self.use_semantic_init),
            _ => None,
        }
    }

    /// Concentrate loss only applies on top of region mapping.
    pub fn concentrate_active(&self) -> bool {
        self.use_region_mapping && self.use_concentrate
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

/// Training protocol. Defaults: SGD with momentum
/// 0.9 and weight decay 1e-5, learning rate 1e-3 halved every 10 epochs,
/// loss weights 0.1 / 1.0, 16-way 2-shot episodes, 300 batches × 20 epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub episode_m: usize,
    pub episode_n: usize,
    pub seed: u64,
    pub flags: AblationFlags,
    pub classifier: ClassifierConfig,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub kernel_layout: KernelLayout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 1.0,
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-5,
            lr_decay_factor: 0.5,
            lr_decay_epochs: 10,
            epochs: 20,
            batches_per_epoch: 300,
            episode_m: 16,
            episode_n: 2,
            seed: 0,
            flags: AblationFlags::FULL,
            classifier: ClassifierConfig::default(),
            kernel_h: 1,
            kernel_w: 1,
            kernel_layout: KernelLayout::Full,
        }
    }
}

impl TrainConfig {
    /// Settings for the desk-scale synthetic benchmark, chosen on its
    /// validation split. The defaults are tuned for a 2048-channel
    /// backbone and barely move a 32-channel head in 600 steps; cosine logits
    /// also let `|P|` grow without bound, which strong decoupled weight decay
    /// holds in check.
    pub fn desk() -> Self {
        let mut cfg = Self {
            lambda1: 1e-6,
            lr: 0.5,
            weight_decay: 0.1,
            batches_per_epoch: 30,
            episode_m: 12,
            ..Self::default()
        };
        cfg.classifier.tau_s = 0.1;
        cfg
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| RsanError::Config(format!("invalid value '{value}' for '{key}'")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(RsanError::Config(format!(
            "invalid boolean '{value}' for '{key}'"
        ))),
    }
}

impl TrainConfig {
    /// Applies one `key=value` setting. Returns `Ok(false)` for keys this
    /// config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "lr_decay_epochs" => self.lr_decay_epochs = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batches_per_epoch" => self.batches_per_epoch = parse(key, value)?,
            "episode_m" => self.episode_m = parse(key, value)?,
            "episode_n" => self.episode_n = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tau_s" => self.classifier.tau_s = parse(key, value)?,
            "sigma_scale" => self.classifier.sigma_scale = parse(key, value)?,
            "gamma" => self.classifier.gamma = parse(key, value)?,
            "kernel_h" => self.kernel_h = parse(key, value)?,
            "kernel_w" => self.kernel_w = parse(key, value)?,
            "kernel_size" => {
                let s: usize = parse(key, value)?;
                self.kernel_h = s;
                self.kernel_w = s;
            }
            "episode_shape" => {
                let (m, n) = value.split_once('x').ok_or_else(|| {
                    RsanError::Config(format!("episode_shape must look like 16x2, got '{value}'"))
                })?;
                self.episode_m = parse(key, m)?;
                self.episode_n = parse(key, n)?;
            }
            "kernel_layout" => self.kernel_layout = KernelLayout::parse(value)?,
            other => match self.flags.slot(other) {
                Some(slot) => *slot = parse_bool(key, value)?,
                None => return Ok(false),
            },
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RsanError::Config(msg));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!(
                "lambda1 and lambda2 must be nonnegative, got {} and {}",
                self.lambda1, self.lambda2
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be nonnegative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            ));
        }
        for (name, v) in [
            ("lr_decay_epochs", self.lr_decay_epochs),
            ("epochs", self.epochs),
            ("batches_per_epoch", self.batches_per_epoch),
            ("episode_m", self.episode_m),
            ("episode_n", self.episode_n),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        self.classifier.validate()
    }

    pub fn echo(&self) -> ConfigEcho {
        let mut e = ConfigEcho::new();
        e.set("lambda1", self.lambda1);
        e.set("lambda2", self.lambda2);
        e.set("lr", self.lr);
        e.set("momentum", self.momentum);
        e.set("weight_decay", self.weight_decay);
        e.set("lr_decay_factor", self.lr_decay_factor);
        e.set("lr_decay_epochs", self.lr_decay_epochs);
        e.set("epochs", self.epochs);
        e.set("batches_per_epoch", self.batches_per_epoch);
        e.set("episode_m", self.episode_m);
        e.set("episode_n", self.episode_n);
        e.set("seed", self.seed);
        for (name, on) in AblationFlags::NAMES.iter().zip(self.flags.as_array()) {
            e.set(name, on);
        }
        e.set("tau_s", self.classifier.tau_s);
        e.set("sigma_scale", self.classifier.sigma_scale);
        e.set("gamma", self.classifier.gamma);
        e.set("kernel_h", self.kernel_h);
        e.set("kernel_w", self.kernel_w);
        e.set("kernel_layout", self.kernel_layout.name());
        e
    }

    /// Rebuilds a config from an echo, rejecting unknown keys.
    pub fn from_echo(echo: &ConfigEcho) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in echo.entries() {
            if !cfg.set(k, v)? {
                return Err(RsanError::Config(format!("unknown key '{k}'")));
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.set("use_concentrate", "false").unwrap();
        cfg.set("kernel_size", "3").unwrap();
        cfg.set("episode_shape", "8x4").unwrap();
        let back = TrainConfig::from_echo(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!((back.kernel_h, back.episode_m, back.episode_n), (3, 8, 4));
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("lr", "fast").is_err());
        assert!(!cfg.set("lrr", "0.1").unwrap());
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
    }
}
