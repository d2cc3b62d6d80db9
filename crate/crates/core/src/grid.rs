//! Discrete images on regular 2-D grids and their normalization into
//! probability measures.
//!
//! Pixel area is fixed to 1, so the discrete integral of an image is the plain
//! sum of its values. Physical spacing only enters through the transport cost.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Below this total mass an image cannot be normalized.
pub const MASS_FLOOR: f64 = 1e-8;

const GRID_MAGIC: &[u8; 4] = b"F32G";

/// Nonnegative intensity field on an `height x width` grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {height}x{width} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidGrid(format!(
                "pixel {i} has value {} (must be finite and >= 0)",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Builds a grid after clamping tiny negative round-off to zero.
    pub fn from_clamped(height: usize, width: usize, mut values: Vec<f64>) -> Result<Self> {
        for v in &mut values {
            if *v < 0.0 && *v > -1e-12 {
                *v = 0.0;
            }
        }
        Self::new(height, width, values)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty grid");
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Grid with a single nonzero pixel.
    pub fn one_hot(height: usize, width: usize, row: usize, col: usize, value: f64) -> Result<Self> {
        if row >= height || col >= width {
            return Err(Error::IndexOutOfRange {
                index: row * width + col,
                len: height * width,
            });
        }
        let mut values = vec![0.0; height * width];
        values[row * width + col] = value;
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mass-weighted mean position `(row, col)`.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mass = total_mass(self);
        if mass <= 0.0 {
            return None;
        }
        let (mut r, mut c) = (0.0, 0.0);
        for i in 0..self.height {
            for j in 0..self.width {
                let v = self.get(i, j);
                r += v * i as f64;
                c += v * j as f64;
            }
        }
        Some((r / mass, c / mass))
    }

    /// Writes the `.f32grid` binary format.
    pub fn write_f32grid(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
        out.write_all(GRID_MAGIC)?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_f32grid(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path)?;
        if bytes.len() < 12 || &bytes[..4] != GRID_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: "F32G",
            });
        }
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[12..];
        if payload.len() != height * width * 4 {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!(
                    "payload of {} bytes does not match {height}x{width}",
                    payload.len()
                ),
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(height, width, values).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Writes an 8-bit binary PGM, linearly mapping `[0, max]` to `[0, 255]`.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path.as_ref())?);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let max = self.max_value();
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|v| {
                if max > 0.0 {
                    (v / max * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect();
        out.write_all(&bytes)?;
        out.flush()?;
        Ok(())
    }
}

/// An [`ImageGrid`] with unit total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMeasure {
    grid: ImageGrid,
}

impl NormalizedMeasure {
    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn into_grid(self) -> ImageGrid {
        self.grid
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn weights(&self) -> &[f64] {
        &self.grid.values
    }

    /// Wraps weights that already sum to one, renormalizing away round-off.
    pub(crate) fn from_weights(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        let grid = ImageGrid::from_clamped(height, width, weights)?;
        normalize(&grid)
    }
}

/// Discrete integral of the image (sum of pixel values).
pub fn total_mass(img: &ImageGrid) -> f64 {
    img.values.iter().sum()
}

/// Divides an image by its total mass.
pub fn normalize(img: &ImageGrid) -> Result<NormalizedMeasure> {
    let mass = total_mass(img);
    if mass <= MASS_FLOOR {
        return Err(Error::ZeroMass {
            mass,
            floor: MASS_FLOOR,
        });
    }
    let values = img.values.iter().map(|v| v / mass).collect();
    Ok(NormalizedMeasure {
        grid: ImageGrid {
            height: img.height,
            width: img.width,
            values,
        },
    })
}

/// Multiplies a unit-mass measure by `mass`.
pub fn scale(measure: &NormalizedMeasure, mass: f64) -> Result<ImageGrid> {
    if !mass.is_finite() || mass < 0.0 {
        return Err(Error::NonFinite(format!("scale mass {mass}")));
    }
    let g = &measure.grid;
    Ok(ImageGrid {
        height: g.height,
        width: g.width,
        values: g.values.iter().map(|v| v * mass).collect(),
    })
}
