//! Binary field snapshots.
//!
//! One file holds one field. The layout is a single JSON header line
//! terminated by `\n`, followed by raw little-endian `f64` payload:
//!
//! ```text
//! {"format":"kslab-field","version":1,"field":"n1","kind":"cell",
//!  "dim":2,"cells":[64,64],"extents":[1.0,1.0],"time":0.5}
//! <8 * count bytes>
//! ```
//!
//! * `kind` is `cell` for cell-centered scalars or `xface`/`yface`/`zface`
//!   for one staggered velocity component;
//! * the payload stores interior data only (ghosts are reconstructed on
//!   load), x varying fastest, then y, then z; face kinds additionally store
//!   the boundary faces of their normal axis, so an `xface` payload on an
//!   `nx * ny` grid holds `(nx+1) * ny` values;
//! * payload length must match the header exactly - no trailing bytes.
//!
//! Floats round-trip bit-exactly: the header uses shortest-round-trip JSON
//! numbers and the payload is raw bits. Parsing that guarantee back needs
//! serde_json's `float_roundtrip` feature — its default float path may be
//! off by one ulp, which would silently perturb `time` and `extents`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::{apply_neumann, apply_noslip, Grid, ScalarField, VectorField};
use crate::{Error, Result};

const FORMAT: &str = "kslab-field";
const VERSION: u32 = 1;
/// Caps header-declared shapes so a malformed file cannot demand absurd
/// allocations before the payload length check.
const MAX_CELLS_PER_AXIS: usize = 1 << 20;
const MAX_HEADER_BYTES: usize = 1 << 16;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    field: String,
    kind: String,
    dim: usize,
    cells: Vec<usize>,
    extents: Vec<f64>,
    time: f64,
}

/// Descriptive part of a loaded snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMeta {
    pub field: String,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Cell,
    Face(usize),
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Cell => "cell",
            Kind::Face(0) => "xface",
            Kind::Face(1) => "yface",
            _ => "zface",
        }
    }

    fn parse(s: &str) -> Option<Kind> {
        match s {
            "cell" => Some(Kind::Cell),
            "xface" => Some(Kind::Face(0)),
            "yface" => Some(Kind::Face(1)),
            "zface" => Some(Kind::Face(2)),
            _ => None,
        }
    }

    /// Number of payload values for this kind on `grid`.
    fn count(self, grid: &Grid) -> usize {
        let (nx, ny, nz) = (grid.cells(0), grid.cells(1), grid.cells(2));
        match self {
            Kind::Cell => nx * ny * nz,
            Kind::Face(0) => (nx + 1) * ny * nz,
            Kind::Face(1) => nx * (ny + 1) * nz,
            Kind::Face(_) => nx * ny * (nz + 1),
        }
    }
}

fn header_for(grid: &Grid, kind: Kind, field: &str, time: f64) -> Header {
    Header {
        format: FORMAT.into(),
        version: VERSION,
        field: field.into(),
        kind: kind.as_str().into(),
        dim: grid.dim(),
        cells: (0..grid.dim()).map(|a| grid.cells(a)).collect(),
        extents: (0..grid.dim()).map(|a| grid.extent(a)).collect(),
        time,
    }
}

/// Serialises one field kind into `w`: header line, then payload.
fn write_payload(
    w: &mut impl Write,
    grid: &Grid,
    kind: Kind,
    values: impl Iterator<Item = f64>,
    field: &str,
    time: f64,
) -> std::io::Result<()> {
    let header = serde_json::to_string(&header_for(grid, kind, field, time))
        .expect("header serialisation cannot fail");
    w.write_all(header.as_bytes())?;
    w.write_all(b"\n")?;
    let mut n = 0usize;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
        n += 1;
    }
    debug_assert_eq!(n, kind.count(grid));
    Ok(())
}

/// Payload iteration order for a cell scalar: x fastest, then y, then z.
fn cell_values<'a>(f: &'a ScalarField) -> impl Iterator<Item = f64> + 'a {
    let g = *f.grid();
    let (nx, ny) = (g.cells(0), g.cells(1));
    g.krange().flat_map(move |k| {
        (1..=ny).flat_map(move |j| {
            let base = g.sidx(1, j, k);
            f.raw()[base..base + nx].iter().copied()
        })
    })
}

fn face_values<'a>(u: &'a VectorField, axis: usize) -> Box<dyn Iterator<Item = f64> + 'a> {
    let g = *u.grid();
    let (nx, ny, nz) = (g.cells(0), g.cells(1), g.cells(2));
    let d = u.raw(axis);
    match axis {
        0 => Box::new(g.krange().flat_map(move |k| {
            (1..=ny).flat_map(move |j| {
                let base = g.fxidx(0, j, k);
                d[base..base + nx + 1].iter().copied()
            })
        })),
        1 => Box::new(g.krange().flat_map(move |k| {
            (0..=ny).flat_map(move |fj| {
                let base = g.fyidx(1, fj, k);
                d[base..base + nx].iter().copied()
            })
        })),
        _ => Box::new((0..=nz).flat_map(move |fk| {
            (1..=ny).flat_map(move |j| {
                let base = g.fzidx(1, j, fk);
                d[base..base + nx].iter().copied()
            })
        })),
    }
}

/// Writes a cell-centered scalar snapshot.
pub fn write_scalar(path: &Path, f: &ScalarField, field: &str, time: f64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_payload(&mut w, f.grid(), Kind::Cell, cell_values(f), field, time)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes one staggered component of `u`.
pub fn write_vector_component(
    path: &Path,
    u: &VectorField,
    axis: usize,
    field: &str,
    time: f64,
) -> Result<()> {
    assert!(axis < u.grid().dim(), "component {axis} absent in {}D", u.grid().dim());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_payload(&mut w, u.grid(), Kind::Face(axis), face_values(u, axis), field, time)
        .and_then(|()| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Everything a decoded snapshot can carry.
#[derive(Debug)]
enum Decoded {
    Cell(ScalarField),
    Face { axis: usize, field: VectorField },
}

fn bad(path: &Path, what: impl Into<String>) -> Error {
    Error::snapshot(path, what)
}

/// Parses one snapshot from a reader. Never panics on malformed input; the
/// payload is streamed so a lying header cannot force a huge allocation.
fn decode(r: &mut impl BufRead, path: &Path) -> Result<(Decoded, SnapshotMeta)> {
    let mut line = Vec::new();
    let mut limited = r.take(MAX_HEADER_BYTES as u64);
    limited
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    let r = limited.into_inner();
    if line.last() != Some(&b'\n') {
        return Err(bad(path, "missing or oversized header line"));
    }
    line.pop();
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| bad(path, format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(path, format!("not a {FORMAT} file (format = {:?})", header.format)));
    }
    if header.version != VERSION {
        return Err(bad(path, format!("unsupported version {}", header.version)));
    }
    if header.cells.iter().any(|&n| n > MAX_CELLS_PER_AXIS) {
        return Err(bad(path, "cell count exceeds the supported maximum"));
    }
    let grid = Grid::new(header.dim, &header.cells, &header.extents)
        .map_err(|e| bad(path, format!("bad grid: {e}")))?;
    let kind = Kind::parse(&header.kind)
        .ok_or_else(|| bad(path, format!("unknown kind {:?}", header.kind)))?;
    if let Kind::Face(a) = kind {
        if a >= grid.dim() {
            return Err(bad(path, format!("{} component on a {}D grid", header.kind, grid.dim())));
        }
    }
    if !header.time.is_finite() {
        return Err(bad(path, "time must be finite"));
    }

    let count = kind.count(&grid);
    let expected_bytes = count
        .checked_mul(8)
        .ok_or_else(|| bad(path, "payload size overflows"))?;
    // Reading through `take` bounds the allocation by what is actually
    // present in the stream, not by what the header claims.
    let mut payload = Vec::new();
    r.take(expected_bytes as u64 + 1)
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() < expected_bytes {
        return Err(bad(
            path,
            format!("payload truncated: expected {expected_bytes} bytes, got {}", payload.len()),
        ));
    }
    if payload.len() > expected_bytes {
        return Err(bad(path, "trailing bytes after payload"));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")));
    let meta = SnapshotMeta { field: header.field, time: header.time };
    let (nx, ny, nz) = (grid.cells(0), grid.cells(1), grid.cells(2));

    let decoded = match kind {
        Kind::Cell => {
            let mut f = ScalarField::zeros(&grid);
            for k in grid.krange() {
                for j in 1..=ny {
                    let base = grid.sidx(1, j, k);
                    for v in &mut f.raw_mut()[base..base + nx] {
                        *v = values.next().expect("length checked");
                    }
                }
            }
            apply_neumann(&mut f);
            Decoded::Cell(f)
        }
        Kind::Face(axis) => {
            let mut u = VectorField::zeros(&grid);
            {
                let d = u.raw_mut(axis);
                match axis {
                    0 => {
                        for k in grid.krange() {
                            for j in 1..=ny {
                                let base = grid.fxidx(0, j, k);
                                for v in &mut d[base..base + nx + 1] {
                                    *v = values.next().expect("length checked");
                                }
                            }
                        }
                    }
                    1 => {
                        for k in grid.krange() {
                            for fj in 0..=ny {
                                let base = grid.fyidx(1, fj, k);
                                for v in &mut d[base..base + nx] {
                                    *v = values.next().expect("length checked");
                                }
                            }
                        }
                    }
                    _ => {
                        for fk in 0..=nz {
                            for j in 1..=ny {
                                let base = grid.fzidx(1, j, fk);
                                for v in &mut d[base..base + nx] {
                                    *v = values.next().expect("length checked");
                                }
                            }
                        }
                    }
                }
            }
            Decoded::Face { axis, field: u }
        }
    };
    Ok((decoded, meta))
}

/// Reads a cell-centered scalar snapshot (ghosts are refilled by mirroring).
pub fn read_scalar(path: &Path) -> Result<(ScalarField, SnapshotMeta)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    match decode(&mut r, path)? {
        (Decoded::Cell(f), meta) => Ok((f, meta)),
        _ => Err(bad(path, "expected a cell-centered field")),
    }
}

/// In-memory variant of [`read_scalar`] (any snapshot kind accepted at the
/// decoding level) used by tests and fuzzing.
pub fn decode_bytes(bytes: &[u8]) -> Result<SnapshotMeta> {
    let mut r = BufReader::new(bytes);
    let path = Path::new("<memory>");
    decode(&mut r, path).map(|(_, meta)| meta)
}

/// Reads one staggered component written by [`write_vector_component`];
/// returns the axis and a vector field holding only that component (ghost
/// faces zero, to be refilled by a wall-condition pass).
pub fn read_vector_component(path: &Path) -> Result<(usize, VectorField, SnapshotMeta)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    match decode(&mut r, path)? {
        (Decoded::Face { axis, field }, meta) => Ok((axis, field, meta)),
        _ => Err(bad(path, "expected a staggered component")),
    }
}

const SCALAR_FIELDS: [&str; 3] = ["n1", "n2", "c"];
const VECTOR_FIELDS: [&str; 3] = ["ux", "uy", "uz"];

/// Path of one field file of a state snapshot.
pub fn field_path(dir: &Path, stem: &str, field: &str) -> PathBuf {
    dir.join(format!("{stem}.{field}.ksnap"))
}

/// Writes a full state snapshot (`n1`, `n2`, `c`, velocity components, and
/// the pressure if given) under `dir/stem.<field>.ksnap`.
#[allow(clippy::too_many_arguments)]
pub fn write_state(
    dir: &Path,
    stem: &str,
    time: f64,
    n1: &ScalarField,
    n2: &ScalarField,
    c: &ScalarField,
    u: &VectorField,
    p: Option<&ScalarField>,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, f) in SCALAR_FIELDS.iter().zip([n1, n2, c]) {
        let path = field_path(dir, stem, name);
        write_scalar(&path, f, name, time)?;
        written.push(path);
    }
    for (axis, name) in VECTOR_FIELDS.iter().enumerate().take(u.grid().dim()) {
        let path = field_path(dir, stem, name);
        write_vector_component(&path, u, axis, name, time)?;
        written.push(path);
    }
    if let Some(p) = p {
        let path = field_path(dir, stem, "p");
        write_scalar(&path, p, "p", time)?;
        written.push(path);
    }
    Ok(written)
}

/// Loads the state snapshot written by [`write_state`]. All files must agree
/// on the grid and timestamp. The velocity gets a wall-condition pass so its
/// ghosts are consistent.
pub fn read_state(
    dir: &Path,
    stem: &str,
) -> Result<(f64, ScalarField, ScalarField, ScalarField, VectorField)> {
    let mut scalars = Vec::new();
    let mut time = None;
    let mut check_time = |t: f64, path: &Path| -> Result<()> {
        match time {
            None => {
                time = Some(t);
                Ok(())
            }
            Some(t0) if t0 == t => Ok(()),
            Some(t0) => Err(bad(path, format!("timestamp {t} disagrees with {t0}"))),
        }
    };
    for name in SCALAR_FIELDS {
        let path = field_path(dir, stem, name);
        let (f, meta) = read_scalar(&path)?;
        if meta.field != name {
            return Err(bad(&path, format!("expected field {name:?}, found {:?}", meta.field)));
        }
        check_time(meta.time, &path)?;
        scalars.push(f);
    }
    let grid = *scalars[0].grid();
    for f in &scalars[1..] {
        if *f.grid() != grid {
            return Err(Error::GridMismatch(format!("state snapshot {stem:?} mixes grids")));
        }
    }

    let mut u = VectorField::zeros(&grid);
    for (axis, name) in VECTOR_FIELDS.iter().enumerate().take(grid.dim()) {
        let path = field_path(dir, stem, name);
        let (got_axis, comp, meta) = read_vector_component(&path)?;
        if got_axis != axis {
            return Err(bad(&path, format!("expected {name} data")));
        }
        if *comp.grid() != grid {
            return Err(Error::GridMismatch(format!("state snapshot {stem:?} mixes grids")));
        }
        check_time(meta.time, &path)?;
        u.raw_mut(axis).copy_from_slice(comp.raw(axis));
    }
    apply_noslip(&mut u);

    let mut it = scalars.into_iter();
    let (n1, n2, c) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok((time.unwrap_or(0.0), n1, n2, c, u))
}
