//! Precomputed per-cell polynomial form of the B-spline blend.
//!
//! Inside one half-cell patch the blend is a fixed bivariate polynomial of
//! degree four per axis: locally the three overlapping basis splines are
//! single cubic pieces and the blended planes are affine. Compiling those
//! coefficients once turns evaluation into two nested Horner loops, with
//! outputs identical to [`GroundSurface::eval`] up to rounding.

use crate::error::{Error, Result};
use crate::pu_surface::{bspline_phi, GroundSurface, PuBasis};

#[derive(Clone, Copy, Debug)]
struct Patch {
    xm: f64,
    ym: f64,
    /// coeffs[kx][ky] multiplies (x − xm)^kx (y − ym)^ky.
    coeffs: [[f64; 5]; 5],
}

/// The B-spline blend compiled into per-patch bivariate polynomials.
///
/// Each grid cell splits into 2×2 patches along the basis breakpoints at
/// half-integers; a patch stores 25 coefficients around its midpoint.
#[derive(Clone, Debug)]
pub struct CompiledSurface {
    dims: (usize, usize),
    patches: Vec<Patch>,
}

impl CompiledSurface {
    /// Compiles a B-spline-blended surface. Exponential blends have no exact
    /// local polynomial form and are rejected.
    pub fn compile(surface: &GroundSurface) -> Result<CompiledSurface> {
        if surface.basis() != PuBasis::BSpline {
            return Err(Error::InvalidParameter(
                "only the B-spline blend compiles to local polynomials".into(),
            ));
        }
        let grid = surface.grid();
        let (nx, ny) = grid.dims();
        let mut patches = Vec::with_capacity(4 * nx * ny);
        for py in 0..2 * ny {
            for px in 0..2 * nx {
                patches.push(compile_patch(surface, px, py));
            }
        }
        Ok(CompiledSurface {
            dims: (nx, ny),
            patches,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let (nx, ny) = self.dims;
        if !(0.0..=nx as f64).contains(&x) || !(0.0..=ny as f64).contains(&y) {
            return Err(Error::OutsideDomain(x, y));
        }
        let px = ((2.0 * x).floor() as usize).min(2 * nx - 1);
        let py = ((2.0 * y).floor() as usize).min(2 * ny - 1);
        let patch = &self.patches[py * 2 * nx + px];
        let wx = x - patch.xm;
        let wy = y - patch.ym;
        let mut z = 0.0;
        for kx in (0..5).rev() {
            let row = &patch.coeffs[kx];
            let mut r = 0.0;
            for ky in (0..5).rev() {
                r = r * wy + row[ky];
            }
            z = z * wx + r;
        }
        Ok(z)
    }
}

fn compile_patch(surface: &GroundSurface, px: usize, py: usize) -> Patch {
    let grid = surface.grid();
    let (nx, ny) = grid.dims();
    let (i, j) = (px / 2, py / 2);
    let xm = 0.5 * px as f64 + 0.25;
    let ym = 0.5 * py as f64 + 0.25;
    let mut coeffs = [[0.0; 5]; 5];

    for beta in j as i64 - 1..=j as i64 + 1 {
        let bj = beta.clamp(0, ny as i64 - 1) as usize;
        // Taylor coefficients of the basis factor around the patch midpoint;
        // exact, since no breakpoint lies inside a half-cell patch.
        let by = bspline_phi(beta, ym - 0.5);
        let b = [by.value, by.d1, by.d2 / 2.0, by.d3 / 6.0];
        for alpha in i as i64 - 1..=i as i64 + 1 {
            let ai = alpha.clamp(0, nx as i64 - 1) as usize;
            let bx = bspline_phi(alpha, xm - 0.5);
            let a = [bx.value, bx.d1, bx.d2 / 2.0, bx.d3 / 6.0];

            let slope = grid.get(ai, bj).expect("grid is hole-free");
            let grad = slope.gradient();
            let p00 = slope.height_at(xm, ym);

            // (p00 + gx·wx + gy·wy) · Σ a_k wx^k · Σ b_m wy^m
            for (k, &ak) in a.iter().enumerate() {
                for (m, &bm) in b.iter().enumerate() {
                    let w = ak * bm;
                    coeffs[k][m] += p00 * w;
                    coeffs[k + 1][m] += grad.x * w;
                    coeffs[k][m + 1] += grad.y * w;
                }
            }
        }
    }
    Patch { xm, ym, coeffs }
}
