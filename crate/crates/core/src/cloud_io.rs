//! Point-cloud ingestion, scaling into unit-grid coordinates, detrending
//! against a ground surface, and all file export.
//!
//! The interchange formats are deliberately plain: whitespace-separated XYZ
//! text for clouds, CSV for slope grids, "x y z" rows for rasters and
//! Wavefront OBJ for meshes. Floats are written with Rust's shortest
//! round-trip formatting, so exported values re-import bit-identically.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::grid_model::{FitParams, Slope, SlopeGrid};
use crate::pu_surface::{GroundSurface, Raster};

/// A cloud of survey points; coordinates in meters unless scaled.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Componentwise bounding box, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.points.first()?;
        let mut min = first;
        let mut max = first;
        for p in &self.points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some((min, max))
    }
}

/// Affine map between survey (x, y) and scaled grid coordinates where every
/// cell is 1×1. The origin sits at the cloud's minimum corner so scaled
/// coordinates are nonnegative and the cell index is the floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridTransform {
    pub origin: Vector2<f64>,
    pub spacing: Vector2<f64>,
    pub dims: (usize, usize),
}

impl GridTransform {
    /// Survey point to scaled coordinates; z is untouched.
    pub fn scale(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            (p.x - self.origin.x) / self.spacing.x,
            (p.y - self.origin.y) / self.spacing.y,
            p.z,
        )
    }

    /// Inverse of [`GridTransform::scale`].
    pub fn unscale(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            p.x * self.spacing.x + self.origin.x,
            p.y * self.spacing.y + self.origin.y,
            p.z,
        )
    }
}

/// Loads a whitespace-separated XYZ text file. Lines starting with `#` and
/// blank lines are skipped; every other line needs at least three numeric
/// fields (extras are ignored). The first offending line is reported.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Read {
        path: path.into(),
        source,
    })?;
    let mut points = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Read {
            path: path.into(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut coord = [0.0_f64; 3];
        for (k, slot) in coord.iter_mut().enumerate() {
            let field = fields.next().ok_or_else(|| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                message: format!("expected 3 numeric fields, found {k}"),
            })?;
            *slot = field.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if !slot.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    line: lineno + 1,
                    message: format!("non-finite coordinate: {field:?}"),
                });
            }
        }
        points.push(Point3::from(coord));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud { points })
}

/// Writes a cloud as XYZ text, one "x y z" row per point.
pub fn save_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|source| Error::Write {
            path: path.into(),
            source,
        })?;
    }
    w.flush().map_err(|source| Error::Write {
        path: path.into(),
        source,
    })
}

/// Builds the transform anchored at the cloud's minimum corner, with grid
/// dimensions ⌈span/spacing⌉ (at least 1 per axis).
pub fn make_transform(cloud: &PointCloud, spacing: (f64, f64)) -> Result<GridTransform> {
    if !(spacing.0 > 0.0) || !(spacing.1 > 0.0) {
        return Err(Error::NonPositiveSpacing(spacing.0, spacing.1));
    }
    let (min, max) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let nx = (((max.x - min.x) / spacing.0).ceil() as usize).max(1);
    let ny = (((max.y - min.y) / spacing.1).ceil() as usize).max(1);
    Ok(GridTransform {
        origin: Vector2::new(min.x, min.y),
        spacing: Vector2::new(spacing.0, spacing.1),
        dims: (nx, ny),
    })
}

/// Maps a cloud into scaled grid coordinates.
pub fn to_grid_coords(cloud: &PointCloud, t: &GridTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.scale(p)).collect(),
    }
}

/// Maps a scaled cloud back to survey coordinates.
pub fn from_grid_coords(cloud: &PointCloud, t: &GridTransform) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.unscale(p)).collect(),
    }
}

/// Subtracts the ground surface from every point of a scaled cloud, leaving
/// roughness residuals: (x, y, z) becomes (x, y, z − g(x, y)).
pub fn detrend(cloud: &PointCloud, surface: &GroundSurface) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let g = surface.eval(p.x, p.y)?;
        points.push(Point3::new(p.x, p.y, p.z - g));
    }
    Ok(PointCloud { points })
}

/// Writes a slope grid as CSV rows `i,j,cx,cy,cz,nx,ny,nz`, holes omitted.
/// Grid metadata rides in a leading comment so the file re-imports losslessly.
pub fn export_slopes_csv(grid: &SlopeGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let write = |w: &mut BufWriter<File>, s: &str| -> Result<()> {
        w.write_all(s.as_bytes()).map_err(|source| Error::Write {
            path: path.into(),
            source,
        })
    };
    let (nx, ny) = grid.dims();
    let params = grid.fit_params();
    write(
        &mut w,
        &format!(
            "# slopegrid {} {} {} {} {}\n",
            nx,
            ny,
            grid.level(),
            params.min_points,
            params.nz_min
        ),
    )?;
    write(&mut w, "i,j,cx,cy,cz,nx,ny,nz\n")?;
    for ((i, j), cell) in grid.cells() {
        if let Some(s) = cell {
            let c = s.centroid;
            let n = s.normal;
            write(
                &mut w,
                &format!("{i},{j},{},{},{},{},{},{}\n", c.x, c.y, c.z, n.x, n.y, n.z),
            )?;
        }
    }
    w.flush().map_err(|source| Error::Write {
        path: path.into(),
        source,
    })
}

/// Reads back a slope grid written by [`export_slopes_csv`].
pub fn import_slopes_csv(path: impl AsRef<Path>) -> Result<SlopeGrid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Read {
        path: path.into(),
        source,
    })?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };

    let mut grid: Option<SlopeGrid> = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Read {
            path: path.into(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(meta) = trimmed.strip_prefix('#') {
            let fields: Vec<&str> = meta.split_whitespace().collect();
            if fields.first() == Some(&"slopegrid") {
                if fields.len() != 6 {
                    return Err(parse_err(lineno + 1, "malformed slopegrid header".into()));
                }
                let nums: Vec<f64> = fields[1..]
                    .iter()
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(lineno + 1, e.to_string()))?;
                grid = Some(SlopeGrid::new_empty(
                    (nums[0] as usize, nums[1] as usize),
                    nums[2] as u32,
                    FitParams {
                        min_points: nums[3] as usize,
                        nz_min: nums[4],
                    },
                ));
            }
            continue;
        }
        if trimmed.starts_with("i,") {
            continue; // column header
        }
        let grid = grid
            .as_mut()
            .ok_or_else(|| parse_err(lineno + 1, "data row before slopegrid header".into()))?;
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 8 {
            return Err(parse_err(
                lineno + 1,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad cell index {:?}", fields[0])))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad cell index {:?}", fields[1])))?;
        let mut v = [0.0_f64; 6];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = fields[k + 2]
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("not a number: {:?}", fields[k + 2])))?;
        }
        let (nx, ny) = grid.dims();
        if i >= nx || j >= ny {
            return Err(parse_err(lineno + 1, format!("cell ({i},{j}) outside grid")));
        }
        grid.set(
            i,
            j,
            Some(Slope::new(
                Point3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
            )),
        );
    }
    grid.ok_or_else(|| parse_err(0, "missing slopegrid header".into()))
}

/// Writes raster samples as plain-text "x y z" rows in row-major order.
pub fn export_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    if raster.points.is_empty() {
        return Err(Error::InvalidParameter("empty raster".into()));
    }
    let path = path.as_ref();
    let mut w = writer(path)?;
    for p in &raster.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|source| Error::Write {
            path: path.into(),
            source,
        })?;
    }
    w.flush().map_err(|source| Error::Write {
        path: path.into(),
        source,
    })
}

/// Writes the raster as a Wavefront OBJ heightfield mesh: one vertex per
/// sample, each grid quad split into two triangles.
pub fn export_obj_mesh(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    if raster.points.len() != raster.nx * raster.ny || raster.points.is_empty() {
        return Err(Error::InvalidParameter("raster dims do not match samples".into()));
    }
    let path = path.as_ref();
    let mut w = writer(path)?;
    let io_err = |source| Error::Write {
        path: path.into(),
        source,
    };
    for p in &raster.points {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z).map_err(io_err)?;
    }
    let vertex = |i: usize, j: usize| j * raster.nx + i + 1; // OBJ is 1-based
    for j in 0..raster.ny - 1 {
        for i in 0..raster.nx - 1 {
            let (v00, v10) = (vertex(i, j), vertex(i + 1, j));
            let (v01, v11) = (vertex(i, j + 1), vertex(i + 1, j + 1));
            writeln!(w, "f {v00} {v10} {v11}").map_err(io_err)?;
            writeln!(w, "f {v00} {v11} {v01}").map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Persists a transform as a small text sidecar so staged pipeline commands
/// can map scaled results back to survey coordinates.
pub fn write_transform(t: &GridTransform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    write!(
        w,
        "origin {} {}\nspacing {} {}\ndims {} {}\n",
        t.origin.x, t.origin.y, t.spacing.x, t.spacing.y, t.dims.0, t.dims.1
    )
    .map_err(|source| Error::Write {
        path: path.into(),
        source,
    })?;
    w.flush().map_err(|source| Error::Write {
        path: path.into(),
        source,
    })
}

/// Reads a transform sidecar written by [`write_transform`].
pub fn read_transform(path: impl AsRef<Path>) -> Result<GridTransform> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.into(),
        source,
    })?;
    let mut origin = None;
    let mut spacing = None;
    let mut dims = None;
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Parse {
            path: path.into(),
            line: lineno + 1,
            message: format!("malformed transform line: {line:?}"),
        };
        match fields.as_slice() {
            ["origin", x, y] => {
                origin = Some(Vector2::new(
                    x.parse().map_err(|_| bad())?,
                    y.parse().map_err(|_| bad())?,
                ))
            }
            ["spacing", x, y] => {
                spacing = Some(Vector2::new(
                    x.parse().map_err(|_| bad())?,
                    y.parse().map_err(|_| bad())?,
                ))
            }
            ["dims", x, y] => {
                dims = Some((x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?))
            }
            [] => {}
            _ => return Err(bad()),
        }
    }
    match (origin, spacing, dims) {
        (Some(origin), Some(spacing), Some(dims)) => Ok(GridTransform {
            origin,
            spacing,
            dims,
        }),
        _ => Err(Error::Parse {
            path: path.into(),
            line: 0,
            message: "incomplete transform file".into(),
        }),
    }
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Write {
            path: path.into(),
            source,
        })
}
