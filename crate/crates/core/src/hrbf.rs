//! First-order Hermite RBF interpolation of slope heights and gradients with
//! Hardy multiquadrics, and grid hole-filling by re-evaluating the fit.
//!
//! The interpolant has the form
//!
//! ```text
//! s(x) = p(x) + Σ_j c_j ψ(x − x_j) + Σ_j d_j · ∇ψ(x_j − x)
//! ```
//!
//! with ψ(r) = √(‖r‖² + c²) and a low-degree polynomial tail p. Matching both
//! the heights and the gradients at the n sites, plus the side condition that
//! the c, d coefficients annihilate the polynomial space, yields a symmetric
//! dense (3n + L) × (3n + L) saddle-point system solved by partially pivoted
//! LU with iterative refinement.
//!
//! The shape parameter defaults to c = 0.1 in units of the (unit) grid
//! spacing, the value with the best system conditioning.

use nalgebra::{DMatrix, DVector, Matrix2, Point2, Point3, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_model::{Slope, SlopeGrid};

/// Unknown-count guard for the dense direct solve.
pub const MAX_DENSE_UNKNOWNS: usize = 20_000;

/// Sites may not be closer than this (scaled grid units).
pub const MIN_SITE_DISTANCE: f64 = 1e-9;

const COND_WARN: f64 = 1e14;
const COND_FAIL: f64 = 1e16;

/// Heights and gradients of an unknown bivariate function at scattered sites.
#[derive(Clone, Debug)]
pub struct HermiteData {
    sites: Vec<Point2<f64>>,
    values: Vec<f64>,
    gradients: Vec<Vector2<f64>>,
}

impl HermiteData {
    /// Validates and wraps the data: nonempty, matching lengths, all entries
    /// finite, no two sites within [`MIN_SITE_DISTANCE`].
    pub fn new(
        sites: Vec<Point2<f64>>,
        values: Vec<f64>,
        gradients: Vec<Vector2<f64>>,
    ) -> Result<HermiteData> {
        if sites.is_empty() {
            return Err(Error::InvalidParameter("no interpolation sites".into()));
        }
        if sites.len() != values.len() || sites.len() != gradients.len() {
            return Err(Error::InvalidParameter(format!(
                "site/value/gradient counts differ: {}/{}/{}",
                sites.len(),
                values.len(),
                gradients.len()
            )));
        }
        let finite = sites.iter().all(|p| p.x.is_finite() && p.y.is_finite())
            && values.iter().all(|v| v.is_finite())
            && gradients.iter().all(|g| g.x.is_finite() && g.y.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite Hermite data".into()));
        }
        for i in 0..sites.len() {
            for j in i + 1..sites.len() {
                let d = (sites[i] - sites[j]).norm();
                if d <= MIN_SITE_DISTANCE {
                    return Err(Error::DuplicateSites(i, j, d));
                }
            }
        }
        Ok(HermiteData {
            sites,
            values,
            gradients,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Point2<f64>] {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> &[Vector2<f64>] {
        &self.gradients
    }
}

/// Multiquadric shape parameter and polynomial tail degree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HrbfConfig {
    /// Shape parameter of ψ(r) = √(r² + c²), in scaled grid units.
    pub c: f64,
    /// Total degree of the polynomial tail: 0 (constants, the multiquadric's
    /// minimum) or 1 (affine, reproduces planes exactly).
    pub poly_degree: u32,
}

impl Default for HrbfConfig {
    fn default() -> Self {
        HrbfConfig {
            c: 0.1,
            poly_degree: 0,
        }
    }
}

impl HrbfConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "multiquadric shape parameter must be positive, got {}",
                self.c
            )));
        }
        if self.poly_degree > 1 {
            return Err(Error::InvalidParameter(format!(
                "polynomial degree must be 0 or 1, got {}",
                self.poly_degree
            )));
        }
        Ok(())
    }

    /// Dimension L of the polynomial space.
    pub fn poly_terms(&self) -> usize {
        match self.poly_degree {
            0 => 1,
            _ => 3,
        }
    }
}

/// Multiquadric value, gradient and Hessian at a 2D offset.
#[derive(Clone, Copy, Debug)]
pub struct MqEval {
    pub value: f64,
    pub gradient: Vector2<f64>,
    pub hessian: Matrix2<f64>,
}

/// ψ(r) = √(‖r‖² + c²) with its first two derivatives; finite for every r,
/// including r = 0 where the gradient vanishes and the Hessian is I/c.
pub fn mq_kernel(r: Vector2<f64>, c: f64) -> MqEval {
    let value = (r.norm_squared() + c * c).sqrt();
    let gradient = r / value;
    let v3 = value * value * value;
    let hessian = Matrix2::new(
        1.0 / value - r.x * r.x / v3,
        -r.x * r.y / v3,
        -r.x * r.y / v3,
        1.0 / value - r.y * r.y / v3,
    );
    MqEval {
        value,
        gradient,
        hessian,
    }
}

fn monomial(l: usize, p: &Point2<f64>) -> f64 {
    match l {
        0 => 1.0,
        1 => p.x,
        _ => p.y,
    }
}

fn monomial_gradient(l: usize) -> Vector2<f64> {
    match l {
        0 => Vector2::zeros(),
        1 => Vector2::new(1.0, 0.0),
        _ => Vector2::new(0.0, 1.0),
    }
}

/// Assembles the symmetric (3n + L) × (3n + L) saddle-point system.
///
/// Unknown layout: n kernel weights, then 2n gradient weights interleaved per
/// site (x then y), then L polynomial coefficients. The right-hand side
/// stacks heights, interleaved gradients, and zeros.
pub fn assemble_system(data: &HermiteData, cfg: &HrbfConfig) -> Result<(DMatrix<f64>, DVector<f64>)> {
    cfg.validate()?;
    let n = data.len();
    let l = cfg.poly_terms();
    let size = 3 * n + l;
    if size > MAX_DENSE_UNKNOWNS {
        return Err(Error::SystemTooLarge {
            unknowns: size,
            limit: MAX_DENSE_UNKNOWNS,
        });
    }

    let mut m = DMatrix::zeros(size, size);
    let sites = data.sites();

    for i in 0..n {
        for j in i..n {
            let k = mq_kernel(sites[i] - sites[j], cfg.c);

            // value-value block
            m[(i, j)] = k.value;
            m[(j, i)] = k.value;

            // value-gradient coupling: the d_j term of s(x_i) carries
            // ∇ψ(x_j − x_i), the mirrored entry ∇ψ(x_i − x_j); both come
            // from the one kernel evaluation so symmetry is exact.
            for axis in 0..2 {
                let g = k.gradient[axis];
                m[(i, n + 2 * j + axis)] = -g;
                m[(n + 2 * j + axis, i)] = -g;
                m[(j, n + 2 * i + axis)] = g;
                m[(n + 2 * i + axis, j)] = g;
            }

            // gradient-gradient block: −Hessian
            for a in 0..2 {
                for b in 0..2 {
                    let h = -k.hessian[(a, b)];
                    m[(n + 2 * i + a, n + 2 * j + b)] = h;
                    m[(n + 2 * j + b, n + 2 * i + a)] = h;
                }
            }
        }

        for t in 0..l {
            let q = monomial(t, &sites[i]);
            m[(i, 3 * n + t)] = q;
            m[(3 * n + t, i)] = q;
            let r = monomial_gradient(t);
            for axis in 0..2 {
                m[(n + 2 * i + axis, 3 * n + t)] = r[axis];
                m[(3 * n + t, n + 2 * i + axis)] = r[axis];
            }
        }
    }

    let mut rhs = DVector::zeros(size);
    for i in 0..n {
        rhs[i] = data.values()[i];
        rhs[n + 2 * i] = data.gradients()[i].x;
        rhs[n + 2 * i + 1] = data.gradients()[i].y;
    }
    Ok((m, rhs))
}

/// A fitted Hermite RBF interpolant.
#[derive(Clone, Debug)]
pub struct HrbfModel {
    sites: Vec<Point2<f64>>,
    kernel_weights: Vec<f64>,
    gradient_weights: Vec<Vector2<f64>>,
    poly_coeffs: Vec<f64>,
    config: HrbfConfig,
    condition_estimate: f64,
}

impl HrbfModel {
    pub fn sites(&self) -> &[Point2<f64>] {
        &self.sites
    }

    pub fn kernel_weights(&self) -> &[f64] {
        &self.kernel_weights
    }

    pub fn gradient_weights(&self) -> &[Vector2<f64>] {
        &self.gradient_weights
    }

    pub fn poly_coeffs(&self) -> &[f64] {
        &self.poly_coeffs
    }

    pub fn config(&self) -> HrbfConfig {
        self.config
    }

    /// One-norm condition estimate of the solved system.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Interpolant height: p(x) + Σ c_j ψ(x − x_j) + Σ d_j · ∇ψ(x_j − x).
    pub fn evaluate(&self, x: Point2<f64>) -> f64 {
        let mut z = 0.0;
        for (t, a) in self.poly_coeffs.iter().enumerate() {
            z += a * monomial(t, &x);
        }
        for (j, site) in self.sites.iter().enumerate() {
            z += self.kernel_weights[j] * mq_kernel(x - site, self.config.c).value;
            z += self
                .gradient_weights[j]
                .dot(&mq_kernel(site - x, self.config.c).gradient);
        }
        z
    }

    /// Exact analytic gradient of [`HrbfModel::evaluate`].
    pub fn evaluate_gradient(&self, x: Point2<f64>) -> Vector2<f64> {
        let mut g = Vector2::zeros();
        for (t, a) in self.poly_coeffs.iter().enumerate() {
            g += *a * monomial_gradient(t);
        }
        for (j, site) in self.sites.iter().enumerate() {
            let k = mq_kernel(x - site, self.config.c);
            g += self.kernel_weights[j] * k.gradient;
            // d/dx of d_j · ∇ψ(x_j − x); the Hessian is even in its argument
            g -= k.hessian * self.gradient_weights[j];
        }
        g
    }
}

/// Solves the Hermite interpolation system and returns the fitted model.
///
/// Dense LU with two steps of iterative refinement; the one-norm condition
/// estimate is logged, warns beyond 1e14 and fails beyond 1e16.
pub fn solve_hrbf(data: &HermiteData, cfg: &HrbfConfig) -> Result<HrbfModel> {
    let (matrix, rhs) = assemble_system(data, cfg)?;
    let n = data.len();

    let lu = matrix.clone().lu();
    let mut solution = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    for _ in 0..2 {
        let residual = &rhs - &matrix * &solution;
        match lu.solve(&residual) {
            Some(correction) => solution += correction,
            None => break,
        }
    }

    let condition_estimate = condition_onenorm_estimate(&matrix, &lu).unwrap_or(f64::INFINITY);
    if condition_estimate > COND_FAIL {
        return Err(Error::IllConditioned(condition_estimate));
    }
    if condition_estimate > COND_WARN {
        log::warn!(
            "HRBF system condition estimate {condition_estimate:.3e} exceeds {COND_WARN:.0e}"
        );
    } else {
        log::debug!("HRBF system condition estimate {condition_estimate:.3e}");
    }

    let kernel_weights = solution.as_slice()[..n].to_vec();
    let gradient_weights = (0..n)
        .map(|j| Vector2::new(solution[n + 2 * j], solution[n + 2 * j + 1]))
        .collect();
    let poly_coeffs = solution.as_slice()[3 * n..].to_vec();
    Ok(HrbfModel {
        sites: data.sites().to_vec(),
        kernel_weights,
        gradient_weights,
        poly_coeffs,
        config: *cfg,
        condition_estimate,
    })
}

/// Hager-style lower estimate of ‖A‖₁·‖A⁻¹‖₁ reusing the factorization.
/// The system is symmetric, so transpose solves are plain solves.
fn condition_onenorm_estimate(
    matrix: &DMatrix<f64>,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
) -> Option<f64> {
    let size = matrix.nrows();
    let norm_a = (0..size)
        .map(|j| matrix.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);

    let mut x = DVector::from_element(size, 1.0 / size as f64);
    let mut estimate = 0.0_f64;
    for _ in 0..5 {
        let y = lu.solve(&x)?;
        estimate = estimate.max(y.iter().map(|v| v.abs()).sum());
        let signs = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = lu.solve(&signs)?;
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if zmax <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(size);
        x[jmax] = 1.0;
    }
    Some(norm_a * estimate)
}

/// One Hermite site per non-hole cell: position from the centroid, height
/// from its z, gradient from the slope's normal.
pub fn slopes_to_hermite(grid: &SlopeGrid) -> Result<HermiteData> {
    let mut sites = Vec::new();
    let mut values = Vec::new();
    let mut gradients = Vec::new();
    for (_, cell) in grid.cells() {
        if let Some(s) = cell {
            sites.push(Point2::new(s.centroid.x, s.centroid.y));
            values.push(s.centroid.z);
            gradients.push(s.gradient());
        }
    }
    if sites.is_empty() {
        return Err(Error::NoGroundData);
    }
    HermiteData::new(sites, values, gradients)
}

/// Synthesizes a slope for every hole from a fitted model: the cell center
/// lifted to s(center), with normal ∝ (−∂x s, −∂y s, 1). Non-hole cells are
/// returned unchanged.
pub fn fill_holes_with_model(grid: &SlopeGrid, model: &HrbfModel) -> SlopeGrid {
    let (nx, ny) = grid.dims();
    let holes: Vec<(usize, usize)> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .filter(|&(i, j)| grid.get(i, j).is_none())
        .collect();
    let filled: Vec<((usize, usize), Slope)> = holes
        .par_iter()
        .map(|&(i, j)| {
            let (cx, cy) = grid.cell_center(i, j);
            let p = Point2::new(cx, cy);
            let z = model.evaluate(p);
            let g = model.evaluate_gradient(p);
            ((i, j), Slope::from_gradient(Point3::new(cx, cy, z), g))
        })
        .collect();
    let mut out = grid.clone();
    for ((i, j), slope) in filled {
        out.set(i, j, Some(slope));
    }
    out
}

/// Fits an HRBF to the grid's slopes and fills every hole from it.
pub fn fill_holes_hrbf(grid: &SlopeGrid, cfg: &HrbfConfig) -> Result<SlopeGrid> {
    let data = slopes_to_hermite(grid)?;
    let model = solve_hrbf(&data, cfg)?;
    Ok(fill_holes_with_model(grid, &model))
}
