//! Axis-aligned 3D voxel grids with physical spacing.
//!
//! Data is stored flat, x fastest: `idx = x + nx * (y + ny * z)`.

use crate::error::{Error, Result};

/// Voxel storage of a [`Volume3D`].
#[derive(Clone, Debug, PartialEq)]
pub enum VolumeData {
    /// Binary mask, values in {0, 1}.
    Mask(Vec<u8>),
    /// Finite scalar field.
    Scalar(Vec<f32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    MaskU8,
    ScalarF32,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::MaskU8 => "mask-u8",
            DType::ScalarF32 => "scalar-f32",
        }
    }
}

/// Grid shape and index arithmetic, shared by every volume of the same size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub fn from_array(d: [usize; 3]) -> Self {
        Dims::new(d[0], d[1], d[2])
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.nx;
        let r = idx / self.nx;
        [x, r % self.ny, r / self.ny]
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        p[0] >= 0
            && p[1] >= 0
            && p[2] >= 0
            && (p[0] as usize) < self.nx
            && (p[1] as usize) < self.ny
            && (p[2] as usize) < self.nz
    }

    /// Flat index of a signed coordinate, `None` when out of bounds.
    #[inline]
    pub fn checked_index(&self, p: [i64; 3]) -> Option<usize> {
        if self.contains(p) {
            Some(self.index(p[0] as usize, p[1] as usize, p[2] as usize))
        } else {
            None
        }
    }
}

/// Physical voxel size in mm along x, y, z.
pub type Spacing = [f64; 3];

/// A 3D volume: binary segmentation, speed field, arrival times, etc.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    spacing: Spacing,
    data: VolumeData,
}

fn check_geometry(dims: Dims, spacing: Spacing, len: usize) -> Result<()> {
    if dims.nx == 0 || dims.ny == 0 || dims.nz == 0 {
        return Err(Error::InvalidVolume(format!(
            "dimensions must be positive, got {:?}",
            dims.as_array()
        )));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidVolume(format!(
            "spacing must be finite and positive, got {spacing:?}"
        )));
    }
    if len != dims.len() {
        return Err(Error::InvalidVolume(format!(
            "data length {len} does not match {}x{}x{}",
            dims.nx, dims.ny, dims.nz
        )));
    }
    Ok(())
}

impl Volume3D {
    pub fn from_mask(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing, data.len())?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::MaskValue { index, value });
        }
        Ok(Volume3D {
            dims,
            spacing,
            data: VolumeData::Mask(data),
        })
    }

    pub fn from_scalar(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("scalar values must be finite".into()));
        }
        Ok(Volume3D {
            dims,
            spacing,
            data: VolumeData::Scalar(data),
        })
    }

    /// All-zero mask.
    pub fn empty_mask(dims: Dims, spacing: Spacing) -> Self {
        Volume3D::from_mask(dims, spacing, vec![0; dims.len()]).expect("valid geometry")
    }

    pub fn constant_scalar(dims: Dims, spacing: Spacing, value: f32) -> Self {
        Volume3D::from_scalar(dims, spacing, vec![value; dims.len()]).expect("valid geometry")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            VolumeData::Mask(_) => DType::MaskU8,
            VolumeData::Scalar(_) => DType::ScalarF32,
        }
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn mask(&self) -> Result<&[u8]> {
        match &self.data {
            VolumeData::Mask(m) => Ok(m),
            VolumeData::Scalar(_) => Err(Error::DType {
                expected: DType::MaskU8.name(),
                found: DType::ScalarF32.name(),
            }),
        }
    }

    pub fn scalar(&self) -> Result<&[f32]> {
        match &self.data {
            VolumeData::Scalar(s) => Ok(s),
            VolumeData::Mask(_) => Err(Error::DType {
                expected: DType::ScalarF32.name(),
                found: DType::MaskU8.name(),
            }),
        }
    }

    /// Values as f32 regardless of dtype.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            VolumeData::Mask(m) => m.iter().map(|&v| v as f32).collect(),
            VolumeData::Scalar(s) => s.clone(),
        }
    }

    /// Same grid, new mask data. Panics on length mismatch.
    pub fn with_mask(&self, data: Vec<u8>) -> Volume3D {
        assert_eq!(data.len(), self.len());
        Volume3D {
            dims: self.dims,
            spacing: self.spacing,
            data: VolumeData::Mask(data),
        }
    }

    /// Same grid, new scalar data. Panics on length mismatch.
    pub fn with_scalar(&self, data: Vec<f32>) -> Volume3D {
        assert_eq!(data.len(), self.len());
        Volume3D {
            dims: self.dims,
            spacing: self.spacing,
            data: VolumeData::Scalar(data),
        }
    }

    /// Voxel center in mm (origin at voxel (0,0,0)).
    #[inline]
    pub fn to_mm(&self, v: [usize; 3]) -> [f64; 3] {
        [
            v[0] as f64 * self.spacing[0],
            v[1] as f64 * self.spacing[1],
            v[2] as f64 * self.spacing[2],
        ]
    }

    pub fn foreground_count(&self) -> usize {
        match &self.data {
            VolumeData::Mask(m) => m.iter().map(|&v| v as usize).sum(),
            VolumeData::Scalar(s) => s.iter().filter(|&&v| v != 0.0).count(),
        }
    }

    pub fn same_grid(&self, other: &Volume3D) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(
                self.dims.as_array(),
                other.dims.as_array(),
            ));
        }
        Ok(())
    }
}

/// 26-neighborhood offsets in (dz, dy, dx) lexicographic order.
pub const NEIGHBORS_26: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[n] = [dx, dy, dz];
                    n += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

pub const NEIGHBORS_6: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_geometry() {
        let d = Dims::new(2, 2, 2);
        assert!(Volume3D::from_mask(d, [1.0, 1.0, 0.0], vec![0; 8]).is_err());
        assert!(Volume3D::from_mask(d, [1.0; 3], vec![0; 7]).is_err());
        assert!(matches!(
            Volume3D::from_mask(d, [1.0; 3], vec![0, 0, 2, 0, 0, 0, 0, 0]),
            Err(Error::MaskValue { index: 2, value: 2 })
        ));
        assert!(Volume3D::from_scalar(d, [1.0; 3], vec![f32::NAN; 8]).is_err());
    }

    #[test]
    fn dtype_accessors() {
        let v = Volume3D::empty_mask(Dims::new(1, 1, 1), [1.0; 3]);
        assert!(v.mask().is_ok());
        assert!(v.scalar().is_err());
    }

    proptest! {
        #[test]
        fn flat_index_is_bijective(nx in 1usize..9, ny in 1usize..9, nz in 1usize..9, seed in 0usize..1000) {
            let d = Dims::new(nx, ny, nz);
            let idx = seed % d.len();
            let [x, y, z] = d.coords(idx);
            prop_assert_eq!(d.index(x, y, z), idx);
            prop_assert_eq!(idx, x + nx * (y + ny * z));
        }
    }
}
