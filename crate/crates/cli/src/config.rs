//! Pipeline configuration: a TOML file merged with command-line overrides,
//! echoed back to the output directory for reproducibility.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use groundfit::{FitParams, HrbfConfig, PuBasis};
use serde::{Deserialize, Serialize};

/// Hole-filling strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Coarsen slopes into a pyramid and project the first full level down.
    Hierarchy,
    /// Hermite RBF interpolation of slope heights and gradients.
    Hrbf,
}

/// Partition-of-unity blending family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Cubic B-spline combination, C².
    Bspline,
    /// Compactly supported exponential, C∞.
    Exp,
}

/// Effective settings for every pipeline stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input cloud (XYZ text).
    pub input: PathBuf,
    /// Output directory for all artifacts.
    pub out_dir: PathBuf,
    /// Grid spacing (sx, sy) in survey units per cell.
    pub spacing: (f64, f64),
    /// Cells with fewer points are holes.
    pub min_points: usize,
    /// Hole-filling method.
    pub method: Method,
    /// Blending basis.
    pub basis: Basis,
    /// Multiquadric shape parameter (scaled units).
    pub hrbf_c: f64,
    /// HRBF polynomial tail degree (0 or 1).
    pub poly_degree: u32,
    /// Exponential basis smoothing parameter.
    pub exp_s: f64,
    /// Exponential basis support radius (scaled units).
    pub exp_a: f64,
    /// Raster sampling resolution (nx, ny).
    pub samples: (usize, usize),
    /// Whether `run` finishes with the detrend stage.
    pub detrend: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::from("cloud.xyz"),
            out_dir: PathBuf::from("out"),
            spacing: (1.0, 1.0),
            min_points: 4,
            method: Method::Hierarchy,
            basis: Basis::Bspline,
            hrbf_c: 0.1,
            poly_degree: 0,
            exp_s: 1.0,
            exp_a: 1.0,
            samples: (200, 200),
            detrend: true,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: PipelineConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing.0 > 0.0 && self.spacing.1 > 0.0) {
            bail!("spacing must be positive, got {:?}", self.spacing);
        }
        if self.min_points < 3 {
            bail!("min_points must be at least 3, got {}", self.min_points);
        }
        if !(self.hrbf_c > 0.0) {
            bail!("hrbf_c must be positive, got {}", self.hrbf_c);
        }
        if self.poly_degree > 1 {
            bail!("poly_degree must be 0 or 1, got {}", self.poly_degree);
        }
        if !(self.exp_s > 0.0 && self.exp_a > 0.0) {
            bail!("exponential basis parameters must be positive");
        }
        if self.samples.0 < 2 || self.samples.1 < 2 {
            bail!("samples must be at least 2 per axis, got {:?}", self.samples);
        }
        Ok(())
    }

    /// Writes the effective configuration into the output directory.
    pub fn echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create {}", self.out_dir.display()))?;
        let path = self.out_dir.join("config.toml");
        let text = toml::to_string_pretty(self).context("cannot serialize config")?;
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    pub fn fit_params(&self) -> FitParams {
        FitParams {
            min_points: self.min_points,
            ..FitParams::default()
        }
    }

    pub fn hrbf_config(&self) -> HrbfConfig {
        HrbfConfig {
            c: self.hrbf_c,
            poly_degree: self.poly_degree,
        }
    }

    pub fn pu_basis(&self) -> PuBasis {
        match self.basis {
            Basis::Bspline => PuBasis::BSpline,
            Basis::Exp => PuBasis::Exponential {
                s: self.exp_s,
                a: self.exp_a,
            },
        }
    }

    pub fn transform_path(&self) -> PathBuf {
        self.out_dir.join("transform.txt")
    }

    pub fn slopes_path(&self) -> PathBuf {
        self.out_dir.join("slopes.csv")
    }

    pub fn filled_path(&self) -> PathBuf {
        self.out_dir.join("slopes_filled.csv")
    }

    pub fn raster_path(&self) -> PathBuf {
        self.out_dir.join("surface.xyz")
    }

    pub fn mesh_path(&self) -> PathBuf {
        self.out_dir.join("surface.obj")
    }

    pub fn residuals_path(&self) -> PathBuf {
        self.out_dir.join("residuals.xyz")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_identity() {
        let config = PipelineConfig {
            spacing: (0.5, 0.75),
            min_points: 6,
            method: Method::Hrbf,
            basis: Basis::Exp,
            ..PipelineConfig::default()
        };
        let text = toml::to_string_pretty(&config).unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn partial_config_rejected_fields() {
        let err = toml::from_str::<PipelineConfig>("nonsense = 1").unwrap_err();
        assert!(err.to_string().contains("nonsense"));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut config = PipelineConfig::default();
        config.min_points = 2;
        assert!(config.validate().is_err());
        config.min_points = 4;
        config.samples = (1, 10);
        assert!(config.validate().is_err());
        config.samples = (10, 10);
        config.hrbf_c = 0.0;
        assert!(config.validate().is_err());
    }
}
