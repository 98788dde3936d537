//! Partition-of-unity blending of a hole-free slope grid into a globally
//! smooth surface z = g(x, y).
//!
//! Two 1D blending families are available, combined as tensor products over
//! the 3×3 cell neighborhood of the query point:
//!
//! * a symmetric 6-piece cubic built from three consecutive cubic B-splines
//!   on half-unit nodes, giving a C² (curvature continuous) surface;
//! * a compactly supported exponential bump, C∞ but with narrower overlap.
//!
//! Both families sum to one over the grid interior, so blending local planes
//! that agree on a common plane reproduces that plane exactly.

use nalgebra::{Point3, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_model::{Slope, SlopeGrid};

mod compiled;
pub use compiled::CompiledSurface;

/// Choice of 1D partition-of-unity family for the tensor-product blend.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PuBasis {
    /// Cubic B-spline combination: C², support radius 1.5 cells.
    BSpline,
    /// Compactly supported exponential: C∞, support radius `a` cells.
    Exponential {
        /// Smoothing parameter of the exponent.
        s: f64,
        /// Support radius; the partition-of-unity identity requires it to
        /// equal the basis center spacing, one cell.
        a: f64,
    },
}

impl PuBasis {
    pub fn exponential_default() -> PuBasis {
        PuBasis::Exponential { s: 1.0, a: 1.0 }
    }

    /// Blending weight and its x-derivative for the cell-index `alpha` basis
    /// function (centered at alpha + 0.5) evaluated at `x`.
    fn weight(&self, alpha: i64, x: f64) -> (f64, f64) {
        match *self {
            PuBasis::BSpline => {
                let phi = bspline_phi(alpha, x - 0.5);
                (phi.value, phi.d1)
            }
            PuBasis::Exponential { s, a } => exp_phi_d(x - (alpha as f64 + 0.5), s, a),
        }
    }
}

impl Default for PuBasis {
    fn default() -> Self {
        PuBasis::BSpline
    }
}

/// Value and derivatives of one blending spline.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhiEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// Cardinal cubic B-spline bell on [0, 4] in node units, with derivatives.
/// Normalized so that the integer translates sum to one.
fn cubic_bell(u: f64) -> PhiEval {
    if !(0.0..4.0).contains(&u) {
        return PhiEval::default();
    }
    let (value, d1, d2, d3) = if u < 1.0 {
        (u * u * u / 6.0, 0.5 * u * u, u, 1.0)
    } else if u < 2.0 {
        (
            (-3.0 * u * u * u + 12.0 * u * u - 12.0 * u + 4.0) / 6.0,
            (-3.0 * u * u + 8.0 * u - 4.0) / 2.0,
            -3.0 * u + 4.0,
            -3.0,
        )
    } else if u < 3.0 {
        (
            (3.0 * u * u * u - 24.0 * u * u + 60.0 * u - 44.0) / 6.0,
            (3.0 * u * u - 16.0 * u + 20.0) / 2.0,
            3.0 * u - 8.0,
            3.0,
        )
    } else {
        let w = 4.0 - u;
        (w * w * w / 6.0, -0.5 * w * w, w, -1.0)
    };
    PhiEval { value, d1, d2, d3 }
}

/// The interval-`i` blending spline: ½B³(2i−3) + B³(2i−2) + ½B³(2i−1) on
/// nodes t_k = k/2, a symmetric 6-piece cubic centered at t_{2i} = i and
/// supported on (i − 1.5, i + 1.5).
pub fn bspline_phi(i: i64, x: f64) -> PhiEval {
    const H: f64 = 0.5;
    let k = 2 * i;
    let mut out = PhiEval::default();
    for (offset, coeff) in [(k - 3, 0.5), (k - 2, 1.0), (k - 1, 0.5)] {
        let u = (x - offset as f64 * H) / H;
        let b = cubic_bell(u);
        out.value += coeff * b.value;
        out.d1 += coeff * b.d1 / H;
        out.d2 += coeff * b.d2 / (H * H);
        out.d3 += coeff * b.d3 / (H * H * H);
    }
    out
}

/// The compactly supported exponential blender:
/// 1 at x = 0, 0 for |x| ≥ a, and 1/(exp(s(1/(1−|x|/a) − 1/(|x|/a))) + 1)
/// in between. The exponent is clamped at ±700 so the limits 0 and 1 are
/// reached without overflow.
pub fn exp_phi(x: f64, s: f64, a: f64) -> f64 {
    exp_phi_d(x, s, a).0
}

/// [`exp_phi`] together with its first derivative.
pub fn exp_phi_d(x: f64, s: f64, a: f64) -> (f64, f64) {
    debug_assert!(s > 0.0 && a > 0.0);
    let rho = x.abs() / a;
    if rho == 0.0 {
        return (1.0, 0.0);
    }
    if rho >= 1.0 {
        return (0.0, 0.0);
    }
    let exponent = s * (1.0 / (1.0 - rho) - 1.0 / rho);
    if exponent > 700.0 {
        return (0.0, 0.0);
    }
    if exponent < -700.0 {
        return (1.0, 0.0);
    }
    let e = exponent.exp();
    let value = 1.0 / (e + 1.0);
    let inv1 = 1.0 - rho;
    let dexp_drho = s * (1.0 / (inv1 * inv1) + 1.0 / (rho * rho));
    let drho_dx = x.signum() / a;
    let d1 = -dexp_drho * drho_dx * e * value * value;
    (value, d1)
}

/// Plane height of a slope's graph at (x, y); the gradient is the slope's
/// constant [`Slope::gradient`].
pub fn local_plane_eval(slope: &Slope, x: f64, y: f64) -> f64 {
    slope.height_at(x, y)
}

/// A blended, evaluable ground surface over a hole-free level-0 slope grid.
#[derive(Clone, Debug)]
pub struct GroundSurface {
    grid: SlopeGrid,
    basis: PuBasis,
}

impl GroundSurface {
    /// Wraps a hole-free level-0 grid. Fails if any hole remains or the grid
    /// is not at the finest level (blending assumes unit cells).
    pub fn new(grid: SlopeGrid, basis: PuBasis) -> Result<GroundSurface> {
        let holes = grid.hole_count();
        if holes > 0 {
            return Err(Error::GridHasHoles(holes));
        }
        if grid.level() != 0 {
            return Err(Error::InvalidParameter(format!(
                "surface needs a level-0 grid, got level {}",
                grid.level()
            )));
        }
        if let PuBasis::Exponential { s, a } = basis {
            if s <= 0.0 || a <= 0.0 {
                return Err(Error::InvalidParameter(
                    "exponential basis needs s > 0 and a > 0".into(),
                ));
            }
        }
        Ok(GroundSurface { grid, basis })
    }

    pub fn grid(&self) -> &SlopeGrid {
        &self.grid
    }

    pub fn basis(&self) -> PuBasis {
        self.basis
    }

    /// Closed evaluation domain `[0, Nx] × [0, Ny]` in scaled coordinates.
    pub fn domain(&self) -> (f64, f64) {
        let (nx, ny) = self.grid.dims();
        (nx as f64, ny as f64)
    }

    fn check_domain(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        let (nx, ny) = self.grid.dims();
        if !(0.0..=nx as f64).contains(&x) || !(0.0..=ny as f64).contains(&y) {
            return Err(Error::OutsideDomain(x, y));
        }
        // the right and top edges close into the last cell
        let i = (x.floor() as usize).min(nx - 1);
        let j = (y.floor() as usize).min(ny - 1);
        Ok((i, j))
    }

    /// Blended height: the 3×3 neighborhood of the containing cell, each
    /// local plane weighted by the tensor product of 1D basis values.
    /// Neighbor indices beyond the grid replicate the nearest edge cell.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let (i, j) = self.check_domain(x, y)?;
        let (nx, ny) = self.grid.dims();
        let mut z = 0.0;
        for beta in j as i64 - 1..=j as i64 + 1 {
            let bj = beta.clamp(0, ny as i64 - 1) as usize;
            let (wy, _) = self.basis.weight(beta, y);
            if wy == 0.0 {
                continue;
            }
            for alpha in i as i64 - 1..=i as i64 + 1 {
                let ai = alpha.clamp(0, nx as i64 - 1) as usize;
                let (wx, _) = self.basis.weight(alpha, x);
                if wx == 0.0 {
                    continue;
                }
                let s = self.grid.get(ai, bj).expect("grid is hole-free");
                z += s.height_at(x, y) * wx * wy;
            }
        }
        Ok(z)
    }

    /// Analytic gradient of [`GroundSurface::eval`]: the product rule over
    /// the local planes and both 1D basis factors.
    pub fn gradient(&self, x: f64, y: f64) -> Result<Vector2<f64>> {
        let (i, j) = self.check_domain(x, y)?;
        let (nx, ny) = self.grid.dims();
        let mut gx = 0.0;
        let mut gy = 0.0;
        for beta in j as i64 - 1..=j as i64 + 1 {
            let bj = beta.clamp(0, ny as i64 - 1) as usize;
            let (wy, dwy) = self.basis.weight(beta, y);
            for alpha in i as i64 - 1..=i as i64 + 1 {
                let ai = alpha.clamp(0, nx as i64 - 1) as usize;
                let (wx, dwx) = self.basis.weight(alpha, x);
                if wx == 0.0 && dwx == 0.0 && wy == 0.0 && dwy == 0.0 {
                    continue;
                }
                let s = self.grid.get(ai, bj).expect("grid is hole-free");
                let plane = s.height_at(x, y);
                let grad = s.gradient();
                gx += (grad.x * wx + plane * dwx) * wy;
                gy += (grad.y * wy + plane * dwy) * wx;
            }
        }
        Ok(Vector2::new(gx, gy))
    }
}

/// Row-major raster of surface samples: x varies fastest.
#[derive(Clone, Debug)]
pub struct Raster {
    pub nx: usize,
    pub ny: usize,
    pub points: Vec<Point3<f64>>,
}

/// Samples the surface on a uniform `nx × ny` raster over its full closed
/// domain, endpoints included, in row-major order.
pub fn sample_surface(surface: &GroundSurface, nx: usize, ny: usize) -> Result<Raster> {
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter(
            "raster needs at least 2 samples per axis".into(),
        ));
    }
    let (dx, dy) = surface.domain();
    let rows: Vec<Vec<Point3<f64>>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            let y = dy * j as f64 / (ny - 1) as f64;
            (0..nx)
                .map(|i| {
                    let x = dx * i as f64 / (nx - 1) as f64;
                    let z = surface.eval(x, y).expect("raster point is inside the domain");
                    Point3::new(x, y, z)
                })
                .collect()
        })
        .collect();
    Ok(Raster {
        nx,
        ny,
        points: rows.into_iter().flatten().collect(),
    })
}
