//! Run configuration, read from and written as TOML.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Detector side in pixels (images are square).
    pub image_size: usize,
    pub patch: usize,
    pub c_high: usize,
    pub c_low: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    /// Side of the X-ray feature volume.
    pub l_f: usize,
    /// Side and width of the latent volume.
    pub l_z: usize,
    pub c_z: usize,
    pub n_layers: usize,
    pub n_groups: usize,
    /// Key/value reduction factor `R = r³` of the efficient attention.
    pub kv_reduction: usize,
    pub heads: usize,
    pub up_kernel: usize,
    pub up_stride: usize,
    pub c_g: usize,
    pub dec_hidden: usize,
    /// Side of the coarse and refined volumes.
    pub vol_size: usize,
    pub unet_channels: [usize; 3],
    pub latent_init: f64,
    /// Initial pre-activation bias of the scale and density heads.
    pub scale_bias: f64,
    pub density_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            patch: 8,
            c_high: 32,
            c_low: 32,
            enc_layers: 2,
            enc_heads: 4,
            l_f: 8,
            l_z: 8,
            c_z: 32,
            n_layers: 4,
            n_groups: 8,
            kv_reduction: 8,
            heads: 4,
            up_kernel: 4,
            up_stride: 4,
            c_g: 16,
            dec_hidden: 32,
            vol_size: 64,
            unet_channels: [16, 32, 64],
            latent_init: 0.02,
            scale_bias: -1.0,
            density_bias: -3.0,
        }
    }
}

impl ModelConfig {
    /// Width of the hybrid features and of the X-ray feature volume.
    pub fn c_f(&self) -> usize {
        self.c_high + self.c_low
    }

    /// Side of the Gaussian grid.
    pub fn gaussian_side(&self) -> usize {
        self.l_z * self.up_stride
    }

    pub fn tokens_per_side(&self) -> usize {
        self.image_size / self.patch.max(1)
    }

    /// Side `r` of the key/value reduction (`R = r³`).
    pub fn kv_side(&self) -> ModelResult<usize> {
        let r = (self.kv_reduction as f64).cbrt().round() as usize;
        if r == 0 || r * r * r != self.kv_reduction || self.l_z % r != 0 {
            return Err(ModelError::Config(format!(
                "kv_reduction {} must be r³ with r dividing l_z = {}",
                self.kv_reduction, self.l_z
            )));
        }
        Ok(r)
    }

    pub fn validate(&self) -> ModelResult<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return err(format!("image_size {} not divisible by patch {}", self.image_size, self.patch));
        }
        if self.l_f < 2 || self.l_z < 1 || self.n_layers < 1 {
            return err("need l_f >= 2, l_z >= 1 and n_layers >= 1".into());
        }
        for (name, width, heads) in [("c_high", self.c_high, self.enc_heads), ("c_z", self.c_z, self.heads)] {
            if heads == 0 || width == 0 || width % heads != 0 {
                return err(format!("{name} = {width} not divisible into {heads} heads"));
            }
        }
        if self.c_low == 0 {
            return err("c_low must be positive".into());
        }
        self.kv_side()?;
        crate::ilvnet::group_factors(self.n_groups, self.l_z, self.l_f)?;
        if self.up_stride == 0 || self.up_kernel < self.up_stride || (self.up_kernel - self.up_stride) % 2 != 0 {
            return err(format!("up_kernel {} / up_stride {} cannot give an exact ×stride upsample", self.up_kernel, self.up_stride));
        }
        if self.vol_size % 8 != 0 || self.vol_size == 0 {
            return err(format!("vol_size {} must be a positive multiple of 8", self.vol_size));
        }
        if self.unet_channels.contains(&0) || self.c_g == 0 || self.dec_hidden == 0 {
            return err("channel counts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub l1: f64,
    pub ssim: f64,
    pub vol: f64,
    pub refined: f64,
    /// First step at which the refined-volume term is active.
    pub refine_activation: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { l1: 1.0, ssim: 0.2, vol: 1.0, refined: 1.0, refine_activation: 500 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> ModelResult<()> {
        if [self.l1, self.ssim, self.vol, self.refined].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dso: f64,
    pub dsd: f64,
    /// Half-width of the reconstruction box (mm).
    pub bbox_half: f64,
    /// Views available per scan; inputs and held-out views come from these.
    pub total_views: usize,
    pub input_views: usize,
    /// Number of phantoms in the training set.
    pub samples: usize,
    /// Ellipsoids per random phantom; 0 selects the Shepp-Logan phantom.
    pub phantom_ellipsoids: usize,
    pub noise_sigma: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dso: 1000.0,
            dsd: 1500.0,
            bbox_half: 32.0,
            total_views: 36,
            input_views: 10,
            samples: 8,
            phantom_ellipsoids: 6,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub warmup: u64,
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Validation PSNR every this many steps (and at the last step).
    pub val_every: u64,
    /// Supervise one random non-input view per step besides the inputs.
    pub holdout_view: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            warmup: 1000,
            base_lr: 1e-4,
            weight_decay: 0.05,
            grad_clip: 1.0,
            seed: 0,
            val_every: 100,
            holdout_view: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> ModelResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> ModelResult<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let d = &self.data;
        if d.input_views == 0 || d.input_views > d.total_views || d.samples == 0 {
            return Err(ModelError::Config(format!(
                "need 1 <= input_views ({}) <= total_views ({}) and samples >= 1",
                d.input_views, d.total_views
            )));
        }
        if self.train.steps <= self.train.warmup {
            return Err(ModelError::Config(format!(
                "steps ({}) must exceed warmup ({})",
                self.train.steps, self.train.warmup
            )));
        }
        Ok(())
    }

    /// Small single-phantom setting used for the overfit check.
    pub fn toy() -> Self {
        RunConfig {
            model: ModelConfig {
                image_size: 32,
                patch: 8,
                c_high: 16,
                c_low: 16,
                enc_layers: 1,
                enc_heads: 2,
                l_f: 8,
                l_z: 16,
                c_z: 16,
                n_layers: 2,
                n_groups: 8,
                kv_reduction: 8,
                heads: 2,
                up_kernel: 4,
                up_stride: 2,
                c_g: 8,
                dec_hidden: 16,
                vol_size: 32,
                unet_channels: [4, 8, 16],
                ..ModelConfig::default()
            },
            loss: LossConfig { refine_activation: 500, ..LossConfig::default() },
            data: DataConfig {
                bbox_half: 16.0,
                total_views: 24,
                input_views: 4,
                samples: 1,
                phantom_ellipsoids: 0,
                ..DataConfig::default()
            },
            train: TrainConfig {
                steps: 2000,
                warmup: 300,
                base_lr: 2e-2,
                weight_decay: 0.0,
                val_every: 100,
                ..TrainConfig::default()
            },
        }
    }
}

impl RunConfig {
    /// Smallest consistent setting, for tests and smoke runs.
    pub fn tiny() -> Self {
        RunConfig {
            model: ModelConfig {
                image_size: 16,
                patch: 4,
                c_high: 8,
                c_low: 8,
                enc_layers: 1,
                enc_heads: 2,
                l_f: 4,
                l_z: 4,
                c_z: 8,
                n_layers: 2,
                n_groups: 8,
                kv_reduction: 8,
                heads: 2,
                up_kernel: 4,
                up_stride: 4,
                c_g: 4,
                dec_hidden: 8,
                vol_size: 16,
                unet_channels: [2, 4, 4],
                ..ModelConfig::default()
            },
            loss: LossConfig { refine_activation: 2, ..LossConfig::default() },
            data: DataConfig {
                bbox_half: 8.0,
                total_views: 8,
                input_views: 2,
                samples: 2,
                phantom_ellipsoids: 3,
                ..DataConfig::default()
            },
            train: TrainConfig { steps: 4, warmup: 1, base_lr: 1e-3, val_every: 2, ..TrainConfig::default() },
        }
    }
}
