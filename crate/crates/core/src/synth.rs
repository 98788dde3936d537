//! Synthetic terrain generator: a stand-in for real river-bar scans.
//!
//! The analytic ground truth is a tilted base plane plus a sum of Gaussian
//! bumps; sampled clouds add optional Gaussian noise and drop points inside
//! configured hole rectangles. Everything derives deterministically from the
//! seed, so generated datasets are reproducible byte for byte.

use nalgebra::Point3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cloud_io::PointCloud;

/// Axis-aligned rectangle in survey coordinates from which sample points are
/// removed, creating an undersampled "hole".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoleRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl HoleRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Generator parameters. The defaults mimic the scale of a ~30 m river bar
/// scanned at desk-test density.
#[derive(Clone, Debug, PartialEq)]
pub struct TerrainParams {
    /// Survey extent (width, depth) in meters, anchored at the origin.
    pub extent: (f64, f64),
    /// Number of points in the sampled cloud, before hole removal.
    pub n_points: usize,
    /// Base plane z = slope.0 · x + slope.1 · y + height.
    pub base_slope: (f64, f64),
    pub base_height: f64,
    /// Number of Gaussian bumps drawn from the seed.
    pub n_bumps: usize,
    /// Peak bump amplitude; individual amplitudes vary in ±[0.3, 1]·this.
    pub bump_amplitude: f64,
    /// Range of bump radii (standard deviations), meters.
    pub bump_radius: (f64, f64),
    /// Standard deviation of the per-point height noise.
    pub noise_sigma: f64,
    /// Regions to empty out.
    pub holes: Vec<HoleRect>,
    pub seed: u64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        TerrainParams {
            extent: (30.0, 10.0),
            n_points: 15_666,
            base_slope: (0.05, 0.02),
            base_height: 10.0,
            n_bumps: 12,
            bump_amplitude: 0.6,
            bump_radius: (1.0, 3.5),
            noise_sigma: 0.01,
            holes: Vec::new(),
            seed: 42,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Bump {
    cx: f64,
    cy: f64,
    amplitude: f64,
    radius: f64,
}

/// A realized terrain: fixed bump layout plus the sampling parameters.
#[derive(Clone, Debug)]
pub struct Terrain {
    params: TerrainParams,
    bumps: Vec<Bump>,
}

impl Terrain {
    pub fn new(params: TerrainParams) -> Terrain {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let bumps = (0..params.n_bumps)
            .map(|_| {
                let cx = rng.random::<f64>() * params.extent.0;
                let cy = rng.random::<f64>() * params.extent.1;
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let amplitude = sign * params.bump_amplitude * (0.3 + 0.7 * rng.random::<f64>());
                let radius = params.bump_radius.0
                    + (params.bump_radius.1 - params.bump_radius.0) * rng.random::<f64>();
                Bump {
                    cx,
                    cy,
                    amplitude,
                    radius,
                }
            })
            .collect();
        Terrain { params, bumps }
    }

    pub fn params(&self) -> &TerrainParams {
        &self.params
    }

    /// Noise-free analytic ground height at (x, y).
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let p = &self.params;
        let mut z = p.base_slope.0 * x + p.base_slope.1 * y + p.base_height;
        for b in &self.bumps {
            let dx = x - b.cx;
            let dy = y - b.cy;
            z += b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius)).exp();
        }
        z
    }

    /// Range of the analytic height over the extent, sampled densely.
    pub fn height_range(&self) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for j in 0..=200 {
            for i in 0..=200 {
                let x = self.params.extent.0 * i as f64 / 200.0;
                let y = self.params.extent.1 * j as f64 / 200.0;
                let z = self.height(x, y);
                min = min.min(z);
                max = max.max(z);
            }
        }
        (min, max)
    }

    /// Draws the point cloud: uniform (x, y) positions outside the holes with
    /// noisy heights. Deterministic for a fixed parameter set.
    pub fn sample_cloud(&self) -> PointCloud {
        let p = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed.wrapping_add(1));
        let mut points = Vec::with_capacity(p.n_points);
        let mut attempts = 0usize;
        let max_attempts = p.n_points.saturating_mul(100).max(1000);
        while points.len() < p.n_points && attempts < max_attempts {
            attempts += 1;
            let x = rng.random::<f64>() * p.extent.0;
            let y = rng.random::<f64>() * p.extent.1;
            if p.holes.iter().any(|h| h.contains(x, y)) {
                continue;
            }
            let noise: f64 = rng.sample(StandardNormal);
            points.push(Point3::new(x, y, self.height(x, y) + p.noise_sigma * noise));
        }
        PointCloud { points }
    }
}
