//! Text form of the acquisition geometry: a `[geometry]` table with
//! `dso, dsd, det_rows, det_cols, det_pixel, n_views, bbox_half`.

use ilv_tomo::{equispaced_angles, ConeBeamGeometry};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub dso: f64,
    pub dsd: f64,
    pub det_rows: usize,
    pub det_cols: usize,
    pub det_pixel: f64,
    pub n_views: usize,
    pub bbox_half: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct File {
    geometry: GeometryConfig,
}

impl GeometryConfig {
    pub fn from(g: &ConeBeamGeometry) -> Self {
        GeometryConfig {
            dso: g.dso,
            dsd: g.dsd,
            det_rows: g.det_rows,
            det_cols: g.det_cols,
            det_pixel: g.det_pixel,
            n_views: g.n_views(),
            bbox_half: g.bbox_half,
        }
    }

    pub fn build(&self) -> CliResult<ConeBeamGeometry> {
        Ok(ConeBeamGeometry::new(
            self.dso,
            self.dsd,
            self.det_rows,
            self.det_cols,
            self.det_pixel,
            equispaced_angles(self.n_views),
            self.bbox_half,
        )?)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let f: File = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(f.geometry)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&File { geometry: self.clone() }).expect("geometry serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let g = ConeBeamGeometry::fitted(1000.0, 1500.0, 48, 12, 32.0).unwrap();
        let c = GeometryConfig::from(&g);
        let back = GeometryConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.build().unwrap(), g);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "[geometry]\ndso = 1.0\ndsd = 2.0\ndet_rows = 4\ndet_cols = 4\ndet_pixel = 1.0\nn_views = 2\nbbox_half = 0.1\ntilt = 3\n";
        assert!(GeometryConfig::parse(text).is_err());
    }
}
