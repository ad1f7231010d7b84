use crate::exact;
use crate::stencil::StencilScalar;

/// Row padding granularity in elements: 64-byte lines of `f64`.
pub const ROW_ALIGN: usize = 8;

/// Cell-centred grid on `[0, L]²` with a one-cell boundary ring.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    /// Elements per stored row, `nx + 2` rounded up to [`ROW_ALIGN`].
    pub stride: usize,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, length: f64) -> Self {
        Grid {
            nx,
            ny,
            dx: length / nx as f64,
            dy: length / ny as f64,
            stride: (nx + 2).div_ceil(ROW_ALIGN) * ROW_ALIGN,
        }
    }

    pub fn rows(&self) -> usize {
        self.ny + 2
    }

    pub fn len(&self) -> usize {
        self.rows() * self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.stride + i
    }

    /// Centre of column `i`; column 0 lies in the ring left of the domain.
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - 0.5) * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - 0.5) * self.dy
    }

    pub fn interior_len(&self) -> usize {
        self.nx * self.ny
    }

    /// Storage index of the `k`-th interior cell in row-major order.
    pub fn interior_index(&self, k: usize) -> usize {
        self.index(1 + k % self.nx, 1 + k / self.nx)
    }

    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.interior_len()).map(|k| self.interior_index(k))
    }

    pub fn is_ring(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx + 1 || j == self.ny + 1
    }

    /// Cell centres of the four ring corners.
    pub fn corners(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        [
            (0, 0),
            (self.nx + 1, 0),
            (0, self.ny + 1),
            (self.nx + 1, self.ny + 1),
        ]
        .into_iter()
        .map(|(i, j)| (self.x(i), self.y(j)))
    }
}

/// Velocity components in padded row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<S> {
    pub u: Vec<S>,
    pub v: Vec<S>,
}

impl<S: StencilScalar> Field<S> {
    pub fn zeros(grid: &Grid) -> Self {
        Field {
            u: vec![S::constant(0.0); grid.len()],
            v: vec![S::constant(0.0); grid.len()],
        }
    }

    /// Field with the exact solution at time `t` on the ring and zeros
    /// elsewhere.
    pub fn with_boundary(grid: &Grid, t: f64) -> Self {
        let mut field = Self::zeros(grid);
        field.set_boundary(grid, t);
        field
    }

    pub fn set_boundary(&mut self, grid: &Grid, t: f64) {
        for j in 0..grid.rows() {
            for i in 0..grid.nx + 2 {
                if grid.is_ring(i, j) {
                    let (u, v) = exact::velocity(grid.x(i), grid.y(j), t);
                    let k = grid.index(i, j);
                    self.u[k] = S::constant(u);
                    self.v[k] = S::constant(v);
                }
            }
        }
    }

    pub fn values(&self) -> Field<f64> {
        Field {
            u: self.u.iter().map(|s| s.value()).collect(),
            v: self.v.iter().map(|s| s.value()).collect(),
        }
    }
}

impl Field<f64> {
    /// Exact solution at `t` on every cell including the ring.
    pub fn exact(grid: &Grid, t: f64) -> Self {
        let mut field = Field::zeros(grid);
        for j in 0..grid.rows() {
            for i in 0..grid.nx + 2 {
                let (u, v) = exact::velocity(grid.x(i), grid.y(j), t);
                field.u[grid.index(i, j)] = u;
                field.v[grid.index(i, j)] = v;
            }
        }
        field
    }

    /// Largest interior deviation from `other`.
    pub fn max_deviation(&self, other: &Field<f64>, grid: &Grid) -> f64 {
        grid.interior()
            .map(|k| {
                (self.u[k] - other.u[k])
                    .abs()
                    .max((self.v[k] - other.v[k]).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self, grid: &Grid) -> bool {
        grid.interior()
            .all(|k| self.u[k].is_finite() && self.v[k].is_finite())
    }
}
