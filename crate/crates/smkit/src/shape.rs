use serde::{Deserialize, Serialize};

/// Spatial grid dimensions, stored as (nz, ny, nx) with x fastest in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub nz: usize,
    pub ny: usize,
    pub nx: usize,
}

impl Shape3 {
    pub fn new(nz: usize, ny: usize, nx: usize) -> Self {
        Shape3 { nz, ny, nx }
    }

    pub fn len(&self) -> usize {
        self.nz * self.ny * self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major flat index, x fastest.
    #[inline]
    pub fn idx(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    /// Inverse of [`Shape3::idx`].
    #[inline]
    pub fn coords(&self, flat: usize) -> (usize, usize, usize) {
        let x = flat % self.nx;
        let y = (flat / self.nx) % self.ny;
        let z = flat / (self.nx * self.ny);
        (z, y, x)
    }

    /// Sizes in (x, y, z) axis order.
    pub fn xyz(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn from_xyz(d: [usize; 3]) -> Self {
        Shape3 { nz: d[2], ny: d[1], nx: d[0] }
    }

    /// Size along axis 0=x, 1=y, 2=z.
    pub fn axis_len(&self, axis: usize) -> usize {
        match axis {
            0 => self.nx,
            1 => self.ny,
            _ => self.nz,
        }
    }
}
