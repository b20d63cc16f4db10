//! Dense grid storage. Values are `f32` on disk and in memory; all sampling
//! math upcasts to `f64`.

use crate::{Error, Result};

/// Scalar grid of shape `(nx, ny, nz)` in C order: index `(x*ny + y)*nz + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<f32>,
}

impl Grid3 {
    pub fn new(nx: usize, ny: usize, nz: usize, fill: f32) -> Grid3 {
        Grid3 { nx, ny, nz, data: vec![fill; nx * ny * nz] }
    }

    pub fn from_data(nx: usize, ny: usize, nz: usize, data: Vec<f32>) -> Result<Grid3> {
        if data.len() != nx * ny * nz {
            return Err(Error::SizeMismatch(format!(
                "density grid expects {} values, got {}",
                nx * ny * nz,
                data.len()
            )));
        }
        Ok(Grid3 { nx, ny, nz, data })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.ny + y) * self.nz + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.idx(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.idx(x, y, z);
        self.data[i] = v;
    }
}

/// Channel grid of shape `(channels, nx, ny, nz)` in C order:
/// index `((c*nx + x)*ny + y)*nz + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid4 {
    pub channels: usize,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<f32>,
}

impl Grid4 {
    pub fn new(channels: usize, nx: usize, ny: usize, nz: usize, fill: f32) -> Grid4 {
        Grid4 { channels, nx, ny, nz, data: vec![fill; channels * nx * ny * nz] }
    }

    pub fn from_data(
        channels: usize,
        nx: usize,
        ny: usize,
        nz: usize,
        data: Vec<f32>,
    ) -> Result<Grid4> {
        if data.len() != channels * nx * ny * nz {
            return Err(Error::SizeMismatch(format!(
                "feature grid expects {} values, got {}",
                channels * nx * ny * nz,
                data.len()
            )));
        }
        Ok(Grid4 { channels, nx, ny, nz, data })
    }

    #[inline]
    pub fn idx(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.nx + x) * self.ny + y) * self.nz + z
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.idx(c, x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: f32) {
        let i = self.idx(c, x, y, z);
        self.data[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_order_indexing() {
        let mut g = Grid3::new(2, 3, 4, 0.0);
        g.set(1, 2, 3, 5.0);
        assert_eq!(g.data[(1 * 3 + 2) * 4 + 3], 5.0);
        let mut f = Grid4::new(2, 2, 2, 2, 0.0);
        f.set(1, 0, 1, 0, 7.0);
        assert_eq!(f.data[((1 * 2 + 0) * 2 + 1) * 2 + 0], 7.0);
    }

    #[test]
    fn from_data_rejects_wrong_length() {
        assert!(Grid3::from_data(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(Grid4::from_data(1, 2, 2, 2, vec![0.0; 9]).is_err());
    }
}
