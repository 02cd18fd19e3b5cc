//! The full network: encoder and latent updates, Gaussian decoder and the
//! refinement U-Net, sharing one parameter store.

use std::path::Path;

use ilv_autodiff::{checkpoint, ParamStore, Session, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::decode::{decode_gaussians, upsample_latent, DecodeBounds, Decoder};
use crate::error::ModelResult;
use crate::gsplat::{GaussianSet, GaussianVars, VoxelGrid};
use crate::ilvnet::{ilv_forward, IlvCore, ViewBatch};
use crate::nn::Builder;
use crate::unet::{unet3d_refine, UNet3d};

#[derive(Debug, Clone)]
pub struct IlvModel {
    pub cfg: ModelConfig,
    pub bbox_half: f64,
    pub store: ParamStore,
    pub core: IlvCore,
    pub decoder: Decoder,
    pub unet: UNet3d,
    /// 3σ culling in rendering and voxelization; off only for gradient checks.
    pub truncate: bool,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub latent: Var,
    pub gaussians: GaussianVars,
    /// `[n, n, n]` voxelized Gaussians.
    pub coarse: Var,
    pub refined: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub gaussians: GaussianSet,
    pub coarse: ilv_tomo::Volume,
    pub refined: ilv_tomo::Volume,
}

impl IlvModel {
    pub fn new(cfg: &ModelConfig, bbox_half: f64, seed: u64) -> ModelResult<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let core = IlvCore::new(&mut b, cfg)?;
        let decoder = Decoder::new(&mut b, cfg)?;
        let unet = UNet3d::new(&mut b, cfg.unet_channels)?;
        Ok(IlvModel { cfg: cfg.clone(), bbox_half, store, core, decoder, unet, truncate: true })
    }

    pub fn bounds(&self) -> DecodeBounds {
        DecodeBounds::new(self.bbox_half, self.cfg.vol_size)
    }

    pub fn voxel_grid(&self) -> ModelResult<VoxelGrid> {
        VoxelGrid::new([self.cfg.vol_size; 3], self.bbox_half)
    }

    /// Views → primitives → coarse volume, and the refined volume when
    /// `refine` is set.
    pub fn forward(&self, s: &mut Session, batch: &ViewBatch, refine: bool) -> ModelResult<Forward> {
        let latent = ilv_forward(s, &self.core, batch, &self.cfg, self.bbox_half)?;
        let feats = upsample_latent(s, &self.decoder, latent, self.cfg.l_z)?;
        let gaussians = decode_gaussians(s, &self.decoder, feats, self.bbox_half, self.bounds())?;
        let coarse = crate::gsplat::voxelize(&mut s.graph, &gaussians, self.voxel_grid()?, self.truncate)?;
        let refined = if refine { Some(unet3d_refine(s, &self.unet, coarse)?) } else { None };
        Ok(Forward { latent, gaussians, coarse, refined })
    }

    /// Inference: the primitives, the coarse and the refined volume.
    pub fn reconstruct(&self, batch: &ViewBatch) -> ModelResult<Reconstruction> {
        let mut s = Session::inference(&self.store);
        let f = self.forward(&mut s, batch, true)?;
        let gaussians = GaussianSet::from_graph(&s.graph, &f.gaussians);
        let grid = self.voxel_grid()?;
        let to_volume = |v: Var| ilv_tomo::Volume::from_f64(grid.dims, grid.voxel_size, &s.graph.value(v).data);
        let coarse = to_volume(f.coarse)?;
        let refined = to_volume(f.refined.unwrap_or(f.coarse))?;
        Ok(Reconstruction { gaussians, coarse, refined })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> ModelResult<()> {
        Ok(checkpoint::save(&self.store, path)?)
    }

    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> ModelResult<()> {
        Ok(checkpoint::load_into(&mut self.store, path)?)
    }
}
