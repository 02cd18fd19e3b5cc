//! Residual 3D U-Net over the coarse volume: two downsampling stages
//! (×4 then ×2), a bottleneck, and a mirrored decoder with concatenated
//! skips. The last 1×1×1 conv starts at zero so the refiner starts as the
//! identity.

use ilv_autodiff::{Session, Var};

use crate::error::{ModelError, ModelResult};
use crate::nn::{Builder, Conv3d, ConvTranspose3d, Init};

#[derive(Debug, Clone)]
pub struct UNet3d {
    enc1: Conv3d,
    down1: Conv3d,
    enc2: Conv3d,
    down2: Conv3d,
    bottleneck: Conv3d,
    up2: ConvTranspose3d,
    dec2: Conv3d,
    up1: ConvTranspose3d,
    dec1: Conv3d,
    pub head: Conv3d,
}

impl UNet3d {
    pub fn new(b: &mut Builder, [c1, c2, c3]: [usize; 3]) -> ModelResult<Self> {
        b.scope("unet", |b| {
            Ok(UNet3d {
                enc1: Conv3d::new(b, "enc1", 3, 1, c1, 1, 1, Init::FanIn)?,
                down1: Conv3d::new(b, "down1", 4, c1, c2, 4, 0, Init::FanIn)?,
                enc2: Conv3d::new(b, "enc2", 3, c2, c2, 1, 1, Init::FanIn)?,
                down2: Conv3d::new(b, "down2", 2, c2, c3, 2, 0, Init::FanIn)?,
                bottleneck: Conv3d::new(b, "bottleneck", 3, c3, c3, 1, 1, Init::FanIn)?,
                up2: ConvTranspose3d::new(b, "up2", 2, c3, c2, 2, 0)?,
                dec2: Conv3d::new(b, "dec2", 3, 2 * c2, c2, 1, 1, Init::FanIn)?,
                up1: ConvTranspose3d::new(b, "up1", 4, c2, c1, 4, 0)?,
                dec1: Conv3d::new(b, "dec1", 3, 2 * c1, c1, 1, 1, Init::FanIn)?,
                head: Conv3d::new(b, "head", 1, c1, 1, 1, 0, Init::Zero)?,
            })
        })
    }
}

/// `V + UNet(V)` for a `[D, H, W]` volume with every side divisible by 8.
pub fn unet3d_refine(s: &mut Session, net: &UNet3d, coarse: Var) -> ModelResult<Var> {
    let dims = s.graph.shape(coarse).to_vec();
    if dims.len() != 3 || dims.iter().any(|&n| n == 0 || n % 8 != 0) {
        return Err(ModelError::InvalidArgument(format!("refinement needs a 3-D volume with sides divisible by 8, got {dims:?}")));
    }
    let x = s.graph.reshape(coarse, &[dims[0], dims[1], dims[2], 1])?;
    let conv = |s: &mut Session, c: &Conv3d, x: Var| -> ModelResult<Var> {
        let y = c.apply(s, x)?;
        Ok(s.graph.gelu(y))
    };
    let e1 = conv(s, &net.enc1, x)?;
    let h = conv(s, &net.down1, e1)?;
    let e2 = conv(s, &net.enc2, h)?;
    let h = conv(s, &net.down2, e2)?;
    let h = conv(s, &net.bottleneck, h)?;
    let h = net.up2.apply(s, h)?;
    let h = s.graph.gelu(h);
    let h = s.graph.concat(&[h, e2], 3)?;
    let h = conv(s, &net.dec2, h)?;
    let h = net.up1.apply(s, h)?;
    let h = s.graph.gelu(h);
    let h = s.graph.concat(&[h, e1], 3)?;
    let h = conv(s, &net.dec1, h)?;
    let r = net.head.apply(s, h)?;
    let r = s.graph.reshape(r, &dims)?;
    Ok(s.graph.add(coarse, r)?)
}
