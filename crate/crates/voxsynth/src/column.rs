//! Column images.
//!
//! A field whose content is a height-field-like texture can be flattened
//! into a 2D lattice over (x, y) where each cell holds the full voxel
//! column beneath it. Synthesis then works on columns as multi-channel
//! pixels. Flatten and unflatten are exact inverses at the bit level.

use crate::field::{ColorHead, VoxelField};
use crate::grid::{Grid3, Grid4};
use crate::math::Aabb;
use crate::{Error, Result};

/// 2D lattice of fixed-length channel vectors, one per (x, y) cell.
/// Layout: `(x * ny + y) * ch + c`, so each cell's channels are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLattice {
    pub nx: usize,
    pub ny: usize,
    pub ch: usize,
    pub data: Vec<f32>,
}

impl ChannelLattice {
    pub fn new(nx: usize, ny: usize, ch: usize, fill: f32) -> ChannelLattice {
        ChannelLattice { nx, ny, ch, data: vec![fill; nx * ny * ch] }
    }

    pub fn from_data(nx: usize, ny: usize, ch: usize, data: Vec<f32>) -> Result<ChannelLattice> {
        if data.len() != nx * ny * ch {
            return Err(Error::SizeMismatch(format!(
                "lattice {}x{}x{} needs {} values, got {}",
                nx,
                ny,
                ch,
                nx * ny * ch,
                data.len()
            )));
        }
        Ok(ChannelLattice { nx, ny, ch, data })
    }

    #[inline]
    pub fn col(&self, x: usize, y: usize) -> &[f32] {
        let base = (x * self.ny + y) * self.ch;
        &self.data[base..base + self.ch]
    }

    #[inline]
    pub fn col_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let base = (x * self.ny + y) * self.ch;
        &mut self.data[base..base + self.ch]
    }

    /// Quarter turns in the xy plane. `rotated(1)` maps cell (x', y') of the
    /// result to cell (y', ny - 1 - x') of the source; four turns are the
    /// identity.
    pub fn rotated(&self, quarter_turns: usize) -> ChannelLattice {
        let k = quarter_turns % 4;
        if k == 0 {
            return self.clone();
        }
        let once = |src: &ChannelLattice| {
            let mut dst = ChannelLattice::new(src.ny, src.nx, src.ch, 0.0);
            for xp in 0..dst.nx {
                for yp in 0..dst.ny {
                    dst.col_mut(xp, yp).copy_from_slice(src.col(yp, src.ny - 1 - xp));
                }
            }
            dst
        };
        let mut out = once(self);
        for _ in 1..k {
            out = once(&out);
        }
        out
    }
}

/// Flattened field: a density lattice (one z-column per cell) and a feature
/// lattice (all feature channels of the column, channel-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnImage {
    pub density: ChannelLattice,
    pub feature: ChannelLattice,
    pub nz: usize,
    pub channels: usize,
}

impl ColumnImage {
    pub fn from_parts(
        density: ChannelLattice,
        feature: ChannelLattice,
        nz: usize,
        channels: usize,
    ) -> Result<ColumnImage> {
        if density.ch != nz {
            return Err(Error::SizeMismatch("density lattice depth must equal nz".into()));
        }
        if feature.ch != channels * nz {
            return Err(Error::SizeMismatch("feature lattice depth must equal channels * nz".into()));
        }
        if density.nx != feature.nx || density.ny != feature.ny {
            return Err(Error::SizeMismatch("density and feature lattices must share dimensions".into()));
        }
        Ok(ColumnImage { density, feature, nz, channels })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.density.nx, self.density.ny)
    }

    /// Flatten a field's grids into column form. The density grid's layout
    /// already matches the lattice layout, so that copy is direct; features
    /// are permuted from channel-outermost to column-contiguous.
    pub fn flatten(field: &VoxelField) -> ColumnImage {
        let (nx, ny, nz) = field.shape();
        let c = field.features.channels;
        let density = ChannelLattice { nx, ny, ch: nz, data: field.density.data.clone() };
        let mut feature = ChannelLattice::new(nx, ny, c * nz, 0.0);
        for x in 0..nx {
            for y in 0..ny {
                let dst = feature.col_mut(x, y);
                for ci in 0..c {
                    let src_base = ((ci * nx + x) * ny + y) * nz;
                    dst[ci * nz..(ci + 1) * nz]
                        .copy_from_slice(&field.features.data[src_base..src_base + nz]);
                }
            }
        }
        ColumnImage { density, feature, nz, channels: c }
    }

    /// Rebuild a field from columns. Exact inverse of `flatten` for the
    /// same bbox and head.
    pub fn unflatten(&self, bbox: Aabb, head: ColorHead) -> Result<VoxelField> {
        let (nx, ny) = self.dims();
        let (nz, c) = (self.nz, self.channels);
        let density = Grid3::from_data(nx, ny, nz, self.density.data.clone())?;
        let mut fdata = vec![0.0f32; c * nx * ny * nz];
        for x in 0..nx {
            for y in 0..ny {
                let src = self.feature.col(x, y);
                for ci in 0..c {
                    let dst_base = ((ci * nx + x) * ny + y) * nz;
                    fdata[dst_base..dst_base + nz].copy_from_slice(&src[ci * nz..(ci + 1) * nz]);
                }
            }
        }
        let features = Grid4::from_data(c, nx, ny, nz, fdata)?;
        VoxelField::new(density, features, bbox, head)
    }

    /// Rotate both lattices by the same quarter turns.
    pub fn rotated(&self, quarter_turns: usize) -> ColumnImage {
        ColumnImage {
            density: self.density.rotated(quarter_turns),
            feature: self.feature.rotated(quarter_turns),
            nz: self.nz,
            channels: self.channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn ramp_lattice(nx: usize, ny: usize, ch: usize) -> ChannelLattice {
        let data: Vec<f32> = (0..nx * ny * ch).map(|i| i as f32).collect();
        ChannelLattice::from_data(nx, ny, ch, data).unwrap()
    }

    #[test]
    fn col_slices_are_contiguous_channels() {
        let l = ramp_lattice(2, 3, 4);
        assert_eq!(l.col(1, 2), &[20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let l = ramp_lattice(3, 5, 2);
        assert_eq!(l.rotated(4), l);
        assert_eq!(l.rotated(1).rotated(3), l);
    }

    #[test]
    fn quarter_turn_moves_corner_cells() {
        let l = ramp_lattice(2, 3, 1);
        let r = l.rotated(1);
        assert_eq!((r.nx, r.ny), (3, 2));
        // (x', y') <- (y', ny - 1 - x'): result corner (0,0) is source (0,2).
        assert_eq!(r.col(0, 0), l.col(0, 2));
        assert_eq!(r.col(2, 1), l.col(1, 0));
    }

    #[test]
    fn rotations_compose() {
        let l = ramp_lattice(4, 3, 2);
        assert_eq!(l.rotated(1).rotated(1), l.rotated(2));
        assert_eq!(l.rotated(2).rotated(1), l.rotated(3));
    }

    fn tiny_field() -> VoxelField {
        let (nx, ny, nz, c) = (3, 2, 4, 2);
        let density = Grid3::from_data(nx, ny, nz, (0..nx * ny * nz).map(|i| i as f32).collect())
            .unwrap();
        let features = Grid4::from_data(
            c,
            nx,
            ny,
            nz,
            (0..c * nx * ny * nz).map(|i| 100.0 + i as f32).collect(),
        )
        .unwrap();
        let bbox = Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0));
        VoxelField::new(density, features, bbox, ColorHead::zeros(c + 6, 0, 1)).unwrap()
    }

    #[test]
    fn flatten_layout_matches_grid_indexing() {
        let f = tiny_field();
        let ci = ColumnImage::flatten(&f);
        // Density column (x=2, y=1) is the z-run of the density grid there.
        let want: Vec<f32> = (0..4).map(|z| f.density.get(2, 1, z)).collect();
        assert_eq!(ci.density.col(2, 1), want.as_slice());
        // Feature column is channel-major: [c0 all z, c1 all z].
        let col = ci.feature.col(2, 1);
        for c in 0..2 {
            for z in 0..4 {
                assert_eq!(col[c * 4 + z], f.features.get(c, 2, 1, z));
            }
        }
    }

    #[test]
    fn flatten_unflatten_roundtrip_is_bit_exact() {
        let f = tiny_field();
        let ci = ColumnImage::flatten(&f);
        let back = ci.unflatten(f.bbox, f.head.clone()).unwrap();
        assert_eq!(back.density.data, f.density.data);
        assert_eq!(back.features.data, f.features.data);
    }

    #[test]
    fn from_parts_validates_shapes() {
        let d = ChannelLattice::new(2, 2, 4, 0.0);
        let f = ChannelLattice::new(2, 2, 8, 0.0);
        assert!(ColumnImage::from_parts(d.clone(), f.clone(), 4, 2).is_ok());
        assert!(ColumnImage::from_parts(d.clone(), f.clone(), 4, 3).is_err());
        assert!(ColumnImage::from_parts(d, ChannelLattice::new(3, 2, 8, 0.0), 4, 2).is_err());
    }
}
