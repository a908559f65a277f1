//! Uniform cell-centered grids on a box, with one ghost layer for scalar
//! fields and staggered face storage for vector fields.
//!
//! Layout conventions used throughout the crate:
//!
//! * scalars live at cell centers `x_i = (i + 1/2) h`, stored x-fastest with
//!   one ghost cell per side (no z ghosts in 2D);
//! * vector component `a` lives on the faces normal to axis `a`, interior and
//!   boundary faces plus one tangential ghost layer per side;
//! * homogeneous Neumann ghosts mirror the adjacent interior cell, so the
//!   two-point face gradient vanishes exactly on the boundary;
//! * no-slip means boundary-normal faces are zero and tangential ghosts are
//!   the negated adjacent interior value.

use crate::{Error, Result};

/// Uniform grid over a box `[0, L_x] x [0, L_y] (x [0, L_z])`.
///
/// Cheap plain data; fields keep their own copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    /// Interior cell counts per axis; `n[2] == 1` in 2D.
    n: [usize; 3],
    /// Box extents; `ext[2] == 1.0` (unused) in 2D.
    ext: [f64; 3],
    /// Cell spacing per axis.
    h: [f64; 3],
    /// Volume (area in 2D) of one cell.
    vol: f64,
}

impl Grid {
    /// Builds a grid; `cells` and `extents` must both have length `dim`
    /// (2 or 3), with at least 4 cells per axis and positive extents.
    pub fn new(dim: usize, cells: &[usize], extents: &[f64]) -> Result<Grid> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidConfig(format!("dim must be 2 or 3, got {dim}")));
        }
        if cells.len() != dim || extents.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "expected {dim} cell counts and extents, got {} and {}",
                cells.len(),
                extents.len()
            )));
        }
        let mut n = [1usize; 3];
        let mut ext = [1.0f64; 3];
        for a in 0..dim {
            if cells[a] < 4 {
                return Err(Error::InvalidConfig(format!(
                    "axis {a}: need at least 4 cells, got {}",
                    cells[a]
                )));
            }
            if !(extents[a].is_finite() && extents[a] > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "axis {a}: extent must be positive and finite, got {}",
                    extents[a]
                )));
            }
            n[a] = cells[a];
            ext[a] = extents[a];
        }
        let mut h = [1.0f64; 3];
        let mut vol = 1.0;
        for a in 0..dim {
            h[a] = ext[a] / n[a] as f64;
            vol *= h[a];
        }
        Ok(Grid { dim, n, ext, h, vol })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interior cell count along `axis` (1 for the z axis in 2D).
    pub fn cells(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.ext[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).fold(f64::INFINITY, f64::min)
    }

    /// Volume (area in 2D) of a single cell.
    pub fn cell_volume(&self) -> f64 {
        self.vol
    }

    /// Total number of interior cells.
    pub fn num_cells(&self) -> usize {
        (0..self.dim).map(|a| self.n[a]).product()
    }

    /// Volume of the whole box.
    pub fn domain_volume(&self) -> f64 {
        self.vol * self.num_cells() as f64
    }

    /// Center coordinate of interior cell `i` (0-based) along `axis`.
    pub fn cell_center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h[axis]
    }

    /// Coordinate of face `fi` (0-based, `0..=cells`) along `axis`.
    pub fn face_coord(&self, axis: usize, fi: usize) -> f64 {
        fi as f64 * self.h[axis]
    }

    // ---- storage geometry (crate-internal) ----

    /// Ghost width along z: 1 in 3D, 0 in 2D.
    #[inline]
    pub(crate) fn gz(&self) -> usize {
        if self.dim == 3 {
            1
        } else {
            0
        }
    }

    /// Scalar storage strides (sx, sy, sz) including ghosts.
    #[inline]
    pub(crate) fn scalar_dims(&self) -> (usize, usize, usize) {
        (self.n[0] + 2, self.n[1] + 2, self.n[2] + 2 * self.gz())
    }

    #[inline]
    pub(crate) fn scalar_len(&self) -> usize {
        let (sx, sy, sz) = self.scalar_dims();
        sx * sy * sz
    }

    /// Raw index into scalar storage; `i, j, k` include ghost offsets.
    #[inline]
    pub(crate) fn sidx(&self, i: usize, j: usize, k: usize) -> usize {
        let (sx, sy, _) = self.scalar_dims();
        (k * sy + j) * sx + i
    }

    /// Face-array length for component `axis`.
    #[inline]
    pub(crate) fn face_len(&self, axis: usize) -> usize {
        let (sx, sy, sz) = self.scalar_dims();
        match axis {
            0 => (self.n[0] + 1) * sy * sz,
            1 => sx * (self.n[1] + 1) * sz,
            _ => sx * sy * (self.n[2] + 1),
        }
    }

    /// Raw index into the x-face array (`fi` in `0..=nx`; `j`, `k` include ghosts).
    #[inline]
    pub(crate) fn fxidx(&self, fi: usize, j: usize, k: usize) -> usize {
        let (_, sy, _) = self.scalar_dims();
        (k * sy + j) * (self.n[0] + 1) + fi
    }

    /// Raw index into the y-face array (`fj` in `0..=ny`).
    #[inline]
    pub(crate) fn fyidx(&self, i: usize, fj: usize, k: usize) -> usize {
        let (sx, _, _) = self.scalar_dims();
        (k * (self.n[1] + 1) + fj) * sx + i
    }

    /// Raw index into the z-face array (`fk` in `0..=nz`; 3D only).
    #[inline]
    pub(crate) fn fzidx(&self, i: usize, j: usize, fk: usize) -> usize {
        let (sx, sy, _) = self.scalar_dims();
        (fk * sy + j) * sx + i
    }

    /// Range of storage k indices covering interior cells.
    #[inline]
    pub(crate) fn krange(&self) -> std::ops::Range<usize> {
        self.gz()..self.gz() + self.n[2]
    }
}

/// Cell-centered scalar field with ghost layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> ScalarField {
        ScalarField { grid: *grid, data: vec![0.0; grid.scalar_len()] }
    }

    pub fn constant(grid: &Grid, value: f64) -> ScalarField {
        ScalarField { grid: *grid, data: vec![value; grid.scalar_len()] }
    }

    /// Samples `f(x, y, z)` at interior cell centers (z = 0 in 2D) and
    /// mirrors the result into the ghost layers.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(f64, f64, f64) -> f64) -> ScalarField {
        let mut out = ScalarField::zeros(grid);
        let gz = grid.gz();
        let nz = if grid.dim() == 3 { grid.cells(2) } else { 1 };
        for k in 0..nz {
            // In 2D this loop runs once with z = 0.
            let z = if grid.dim() == 3 { grid.cell_center(2, k) } else { 0.0 };
            for j in 0..grid.cells(1) {
                let y = grid.cell_center(1, j);
                for i in 0..grid.cells(0) {
                    let x = grid.cell_center(0, i);
                    out.data[grid.sidx(i + 1, j + 1, k + gz)] = f(x, y, z);
                }
            }
        }
        apply_neumann(&mut out);
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Interior cell value at logical coordinates (0-based; `k = 0` in 2D).
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.sidx(i + 1, j + 1, k + self.grid.gz())]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.grid.sidx(i + 1, j + 1, k + self.grid.gz());
        self.data[idx] = value;
    }

    /// Minimum over interior cells.
    pub fn min_interior(&self) -> f64 {
        self.fold_interior(f64::INFINITY, |acc, v| acc.min(v))
    }

    /// Maximum over interior cells.
    pub fn max_interior(&self) -> f64 {
        self.fold_interior(f64::NEG_INFINITY, |acc, v| acc.max(v))
    }

    /// True if every stored value (ghosts included) is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Folds over interior values in a fixed deterministic order.
    pub fn fold_interior<T>(&self, init: T, mut f: impl FnMut(T, f64) -> T) -> T {
        let g = &self.grid;
        let (nx, ny) = (g.cells(0), g.cells(1));
        let mut acc = init;
        for k in g.krange() {
            for j in 1..=ny {
                let base = g.sidx(1, j, k);
                for &v in &self.data[base..base + nx] {
                    acc = f(acc, v);
                }
            }
        }
        acc
    }

    /// Applies `f` to every interior value in place.
    pub fn map_interior(&mut self, mut f: impl FnMut(f64) -> f64) {
        let g = self.grid;
        let (nx, ny) = (g.cells(0), g.cells(1));
        for k in g.krange() {
            for j in 1..=ny {
                let base = g.sidx(1, j, k);
                for v in &mut self.data[base..base + nx] {
                    *v = f(*v);
                }
            }
        }
    }

    /// Largest interior absolute difference against `other` (same grid).
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid, "max_abs_diff: grid mismatch");
        let g = &self.grid;
        let (nx, ny) = (g.cells(0), g.cells(1));
        let mut acc: f64 = 0.0;
        for k in g.krange() {
            for j in 1..=ny {
                let base = g.sidx(1, j, k);
                for i in 0..nx {
                    acc = acc.max((self.data[base + i] - other.data[base + i]).abs());
                }
            }
        }
        acc
    }

    #[inline]
    pub(crate) fn raw(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Staggered (MAC) vector field; component `a` lives on faces normal to axis `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comp: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> VectorField {
        let mut comp = [Vec::new(), Vec::new(), Vec::new()];
        for (a, c) in comp.iter_mut().enumerate().take(grid.dim()) {
            *c = vec![0.0; grid.face_len(a)];
        }
        VectorField { grid: *grid, comp }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// x-component at face `fi in 0..=nx`, interior cell row `j`, `k` (0-based).
    pub fn ux(&self, fi: usize, j: usize, k: usize) -> f64 {
        self.comp[0][self.grid.fxidx(fi, j + 1, k + self.grid.gz())]
    }

    pub fn uy(&self, i: usize, fj: usize, k: usize) -> f64 {
        self.comp[1][self.grid.fyidx(i + 1, fj, k + self.grid.gz())]
    }

    pub fn uz(&self, i: usize, j: usize, fk: usize) -> f64 {
        self.comp[2][self.grid.fzidx(i + 1, j + 1, fk)]
    }

    pub fn set_ux(&mut self, fi: usize, j: usize, k: usize, v: f64) {
        let idx = self.grid.fxidx(fi, j + 1, k + self.grid.gz());
        self.comp[0][idx] = v;
    }

    pub fn set_uy(&mut self, i: usize, fj: usize, k: usize, v: f64) {
        let idx = self.grid.fyidx(i + 1, fj, k + self.grid.gz());
        self.comp[1][idx] = v;
    }

    pub fn set_uz(&mut self, i: usize, j: usize, fk: usize, v: f64) {
        let idx = self.grid.fzidx(i + 1, j + 1, fk);
        self.comp[2][idx] = v;
    }

    /// Max absolute value over any component at any face (ghosts excluded
    /// from the tangential directions; they only mirror interior values).
    pub fn linf(&self) -> f64 {
        let mut acc: f64 = 0.0;
        self.for_each_face(|_, _, v| acc = acc.max(v.abs()));
        acc
    }

    /// Volume-weighted L2 norm over all non-ghost faces; the natural
    /// discrete kinetic-energy norm on the staggered grid.
    pub fn l2(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each_face(|_, _, v| acc += v * v);
        (acc * self.grid.cell_volume()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        (0..self.grid.dim()).all(|a| self.comp[a].iter().all(|v| v.is_finite()))
    }

    /// Largest absolute difference against `other` over non-ghost faces.
    pub fn max_abs_diff(&self, other: &VectorField) -> f64 {
        assert_eq!(self.grid, other.grid, "max_abs_diff: grid mismatch");
        let mut acc: f64 = 0.0;
        self.for_each_face(|a, idx, v| acc = acc.max((v - other.comp[a][idx]).abs()));
        acc
    }

    /// Visits every non-ghost face of every component as `(axis, raw index, value)`.
    /// Rows are contiguous in the fastest index, so only one full index is
    /// computed per row.
    fn for_each_face(&self, mut f: impl FnMut(usize, usize, f64)) {
        let g = &self.grid;
        let (nx, ny, nz) = (g.cells(0), g.cells(1), g.cells(2));
        for k in g.krange() {
            for j in 1..=ny {
                let f0 = g.fxidx(0, j, k);
                for (off, &v) in self.comp[0][f0..f0 + nx + 1].iter().enumerate() {
                    f(0, f0 + off, v);
                }
            }
        }
        for k in g.krange() {
            for fj in 0..=ny {
                let f0 = g.fyidx(1, fj, k);
                for (off, &v) in self.comp[1][f0..f0 + nx].iter().enumerate() {
                    f(1, f0 + off, v);
                }
            }
        }
        if g.dim() == 3 {
            for fk in 0..=nz {
                for j in 1..=ny {
                    let f0 = g.fzidx(1, j, fk);
                    for (off, &v) in self.comp[2][f0..f0 + nx].iter().enumerate() {
                        f(2, f0 + off, v);
                    }
                }
            }
        }
    }

    #[inline]
    pub(crate) fn raw(&self, axis: usize) -> &[f64] {
        &self.comp[axis]
    }

    #[inline]
    pub(crate) fn raw_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comp[axis]
    }
}

/// Which norm [`norm`] computes. All but `LInf` are volume-weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L1,
    L2,
    LInf,
    /// General `L^q` with `q >= 1`.
    Lq(f64),
}

/// Volume-weighted integral of `f` over the box (midpoint rule; exact for
/// cellwise-constant data).
pub fn integrate(f: &ScalarField) -> f64 {
    let vol = f.grid().cell_volume();
    f.fold_interior(0.0, |acc, v| acc + v) * vol
}

/// Discrete `L^p` norm of `f` over the box.
pub fn norm(f: &ScalarField, kind: NormKind) -> f64 {
    let vol = f.grid().cell_volume();
    match kind {
        NormKind::L1 => f.fold_interior(0.0, |acc, v| acc + v.abs()) * vol,
        NormKind::L2 => (f.fold_interior(0.0, |acc, v| acc + v * v) * vol).sqrt(),
        NormKind::LInf => f.fold_interior(0.0f64, |acc, v| acc.max(v.abs())),
        NormKind::Lq(q) => {
            assert!(q >= 1.0, "Lq norm needs q >= 1, got {q}");
            (f.fold_interior(0.0, |acc, v| acc + v.abs().powf(q)) * vol).powf(1.0 / q)
        }
    }
}

/// Fills ghost cells by mirroring the adjacent interior cell, i.e. a
/// homogeneous Neumann boundary. Corner ghosts become iterated mirrors.
pub fn apply_neumann(f: &mut ScalarField) {
    let g = f.grid;
    let (sx, sy, sz) = g.scalar_dims();
    let (nx, ny, nz) = (g.cells(0), g.cells(1), g.cells(2));
    let d = f.raw_mut();
    for k in 0..sz {
        for j in 0..sy {
            d[g.sidx(0, j, k)] = d[g.sidx(1, j, k)];
            d[g.sidx(nx + 1, j, k)] = d[g.sidx(nx, j, k)];
        }
    }
    for k in 0..sz {
        for i in 0..sx {
            d[g.sidx(i, 0, k)] = d[g.sidx(i, 1, k)];
            d[g.sidx(i, ny + 1, k)] = d[g.sidx(i, ny, k)];
        }
    }
    if g.dim() == 3 {
        for j in 0..sy {
            for i in 0..sx {
                d[g.sidx(i, j, 0)] = d[g.sidx(i, j, 1)];
                d[g.sidx(i, j, nz + 1)] = d[g.sidx(i, j, nz)];
            }
        }
    }
}

/// Enforces no-slip walls on a staggered field: boundary-normal faces are
/// zeroed and tangential ghost faces get the negated adjacent interior value,
/// so linear interpolation to the wall vanishes.
pub fn apply_noslip(u: &mut VectorField) {
    let g = u.grid;
    let dim = g.dim();
    let (sx, sy, sz) = g.scalar_dims();
    let (nx, ny, nz) = (g.cells(0), g.cells(1), g.cells(2));

    // x component: normal faces fi = 0, nx; ghosts along y (and z in 3D).
    {
        let d = u.raw_mut(0);
        for k in 0..sz {
            for j in 0..sy {
                d[g.fxidx(0, j, k)] = 0.0;
                d[g.fxidx(nx, j, k)] = 0.0;
            }
        }
        for k in 0..sz {
            for fi in 0..=nx {
                d[g.fxidx(fi, 0, k)] = -d[g.fxidx(fi, 1, k)];
                d[g.fxidx(fi, ny + 1, k)] = -d[g.fxidx(fi, ny, k)];
            }
        }
        if dim == 3 {
            for j in 0..sy {
                for fi in 0..=nx {
                    d[g.fxidx(fi, j, 0)] = -d[g.fxidx(fi, j, 1)];
                    d[g.fxidx(fi, j, nz + 1)] = -d[g.fxidx(fi, j, nz)];
                }
            }
        }
    }

    // y component.
    {
        let d = u.raw_mut(1);
        for k in 0..sz {
            for i in 0..sx {
                d[g.fyidx(i, 0, k)] = 0.0;
                d[g.fyidx(i, ny, k)] = 0.0;
            }
        }
        for k in 0..sz {
            for fj in 0..=ny {
                d[g.fyidx(0, fj, k)] = -d[g.fyidx(1, fj, k)];
                d[g.fyidx(nx + 1, fj, k)] = -d[g.fyidx(nx, fj, k)];
            }
        }
        if dim == 3 {
            for fj in 0..=ny {
                for i in 0..sx {
                    d[g.fyidx(i, fj, 0)] = -d[g.fyidx(i, fj, 1)];
                    d[g.fyidx(i, fj, nz + 1)] = -d[g.fyidx(i, fj, nz)];
                }
            }
        }
    }

    // z component (3D only).
    if dim == 3 {
        let d = u.raw_mut(2);
        for j in 0..sy {
            for i in 0..sx {
                d[g.fzidx(i, j, 0)] = 0.0;
                d[g.fzidx(i, j, nz)] = 0.0;
            }
        }
        for fk in 0..=nz {
            for i in 0..sx {
                d[g.fzidx(i, 0, fk)] = -d[g.fzidx(i, 1, fk)];
                d[g.fzidx(i, ny + 1, fk)] = -d[g.fzidx(i, ny, fk)];
            }
        }
        for fk in 0..=nz {
            for j in 0..sy {
                d[g.fzidx(0, j, fk)] = -d[g.fzidx(1, j, fk)];
                d[g.fzidx(nx + 1, j, fk)] = -d[g.fzidx(nx, j, fk)];
            }
        }
    }
}
