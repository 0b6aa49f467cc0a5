//! Conforming triangulations of polygonal domains: structured generation on
//! the unit square, an ASCII interchange format, and the edge topology the
//! hybrid solver needs (global edge numbering, incident cells, orientations).
//!
//! Conventions baked in here and relied on everywhere else:
//! * cells are counterclockwise; a clockwise or degenerate cell is an error,
//! * a global edge stores its vertex pair sorted ascending, which also fixes
//!   the parametrization used by the multiplier basis on that edge,
//! * the stored unit normal points out of the lower-numbered incident cell
//!   (out of the domain on boundary edges), so that cell sees sign +1.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct Edge {
    /// Endpoint vertex ids, sorted ascending.
    pub vertices: [usize; 2],
    /// Incident cells, lower id first. `cells[1]` is None on the boundary.
    pub cells: [Option<usize>; 2],
    /// Unit normal, outward for `cells[0]`.
    pub normal: [f64; 2],
    pub length: f64,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.cells[1].is_none()
    }
}

/// Edge of a cell: global edge id plus the sign relating the cell's outward
/// normal to the stored edge normal (+1 when they agree).
#[derive(Clone, Copy, Debug)]
pub struct CellEdge {
    pub edge: usize,
    pub sign: f64,
}

/// Affine map data of one cell: x = p0 + B x_ref.
#[derive(Clone, Copy, Debug)]
pub struct CellGeometry {
    pub p0: [f64; 2],
    pub b: [[f64; 2]; 2],
    pub det_b: f64,
    pub b_inv_t: [[f64; 2]; 2],
}

impl CellGeometry {
    pub fn map(&self, xr: [f64; 2]) -> [f64; 2] {
        [
            self.p0[0] + self.b[0][0] * xr[0] + self.b[0][1] * xr[1],
            self.p0[1] + self.b[1][0] * xr[0] + self.b[1][1] * xr[1],
        ]
    }

    /// Piola transform of a reference vector value at a point.
    pub fn piola(&self, v: [f64; 2]) -> [f64; 2] {
        [
            (self.b[0][0] * v[0] + self.b[0][1] * v[1]) / self.det_b,
            (self.b[1][0] * v[0] + self.b[1][1] * v[1]) / self.det_b,
        ]
    }

    /// Maps a reference gradient to the physical gradient: B^{-T} grad_ref.
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.b_inv_t[0][0] * g[0] + self.b_inv_t[0][1] * g[1],
            self.b_inv_t[1][0] * g[0] + self.b_inv_t[1][1] * g[1],
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    cells: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    cell_edges: Vec<[CellEdge; 3]>,
    /// Interior ordinal of each edge (multiplier numbering), None on boundary.
    interior_index: Vec<Option<usize>>,
    n_interior: usize,
    h: f64,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_interior_edges(&self) -> usize {
        self.n_interior
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.edges.len() - self.n_interior
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn cell(&self, c: usize) -> [usize; 3] {
        self.cells[c]
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// The three edges of cell `c`, indexed like the reference element
    /// (local edge j opposite local vertex j).
    pub fn cell_edges(&self, c: usize) -> &[CellEdge; 3] {
        &self.cell_edges[c]
    }

    pub fn interior_index(&self, e: usize) -> Option<usize> {
        self.interior_index[e]
    }

    /// Longest edge length over all cells.
    pub fn mesh_size(&self) -> f64 {
        self.h
    }

    pub fn cell_geometry(&self, c: usize) -> CellGeometry {
        let [v0, v1, v2] = self.cells[c];
        let p0 = self.vertices[v0];
        let p1 = self.vertices[v1];
        let p2 = self.vertices[v2];
        let b = [
            [p1[0] - p0[0], p2[0] - p0[0]],
            [p1[1] - p0[1], p2[1] - p0[1]],
        ];
        let det_b = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        let b_inv_t = [
            [b[1][1] / det_b, -b[1][0] / det_b],
            [-b[0][1] / det_b, b[0][0] / det_b],
        ];
        CellGeometry {
            p0,
            b,
            det_b,
            b_inv_t,
        }
    }

    /// Physical endpoints of local edge `j` of cell `c`, in local order.
    pub fn local_edge_endpoints(&self, c: usize, j: usize) -> ([f64; 2], [f64; 2]) {
        let cell = self.cells[c];
        let a = cell[crate::refelem::EDGE_VERTICES[j][0]];
        let b = cell[crate::refelem::EDGE_VERTICES[j][1]];
        (self.vertices[a], self.vertices[b])
    }

    /// Whether local edge `j` of cell `c` runs in the same direction as the
    /// global (sorted) parametrization of that edge.
    pub fn local_edge_aligned(&self, c: usize, j: usize) -> bool {
        let cell = self.cells[c];
        let a = cell[crate::refelem::EDGE_VERTICES[j][0]];
        self.edges[self.cell_edges[c][j].edge].vertices[0] == a
    }
}

/// Structured triangulation of the unit square: n x n squares, each split
/// along the diagonal from its lower-left to its upper-right corner.
pub fn generate_structured(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::Config("structured mesh needs n >= 1".into()));
    }
    let np = n + 1;
    let mut vertices = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let vid = |i: usize, j: usize| j * np + i;
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            cells.push([a, b, c]);
            cells.push([a, c, d]);
        }
    }
    build_mesh(vertices, cells)
}

/// Assembles edge topology and validates a raw vertex/cell list.
pub fn build_mesh(vertices: Vec<[f64; 2]>, cells: Vec<[usize; 3]>) -> Result<Mesh> {
    if cells.is_empty() {
        return Err(Error::MeshTopology("mesh has no cells".into()));
    }
    let nv = vertices.len();
    let mut vertex_used = vec![false; nv];
    for (c, cell) in cells.iter().enumerate() {
        for &v in cell {
            if v >= nv {
                return Err(Error::MeshTopology(format!(
                    "cell {c} references vertex {v}, but there are only {nv} vertices"
                )));
            }
            vertex_used[v] = true;
        }
        if cell[0] == cell[1] || cell[1] == cell[2] || cell[0] == cell[2] {
            return Err(Error::MeshTopology(format!(
                "cell {c} repeats a vertex: {cell:?}"
            )));
        }
    }
    if let Some(v) = vertex_used.iter().position(|&u| !u) {
        return Err(Error::MeshTopology(format!(
            "vertex {v} is not referenced by any cell"
        )));
    }

    // orientation and degeneracy; scale-relative threshold per cell
    for (c, cell) in cells.iter().enumerate() {
        let p0 = vertices[cell[0]];
        let p1 = vertices[cell[1]];
        let p2 = vertices[cell[2]];
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let scale = (p1[0] - p0[0]).hypot(p1[1] - p0[1]).max((p2[0] - p0[0]).hypot(p2[1] - p0[1]));
        if det <= 1e-12 * scale * scale {
            return Err(Error::MeshTopology(format!(
                "cell {c} is degenerate or clockwise (signed area {})",
                0.5 * det
            )));
        }
    }

    // first-touch edge numbering: cells in order, local edges 0, 1, 2
    let mut edge_ids: HashMap<[usize; 2], usize> = HashMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut cell_edges: Vec<[CellEdge; 3]> = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let mut ces = [CellEdge { edge: 0, sign: 1.0 }; 3];
        for (j, ce) in ces.iter_mut().enumerate() {
            let a = cell[crate::refelem::EDGE_VERTICES[j][0]];
            let b = cell[crate::refelem::EDGE_VERTICES[j][1]];
            let key = if a < b { [a, b] } else { [b, a] };
            let id = match edge_ids.get(&key) {
                Some(&id) => {
                    let edge = &mut edges[id];
                    if edge.cells[1].is_some() {
                        return Err(Error::MeshTopology(format!(
                            "edge {:?} is shared by cells {}, {} and {c}",
                            edge.vertices,
                            edge.cells[0].unwrap(),
                            edge.cells[1].unwrap()
                        )));
                    }
                    edge.cells[1] = Some(c);
                    id
                }
                None => {
                    let id = edges.len();
                    edge_ids.insert(key, id);
                    let pa = vertices[a];
                    let pb = vertices[b];
                    // outward normal of cell c on the directed edge a -> b:
                    // the cell is counterclockwise, so outward is the tangent
                    // rotated by -90 degrees
                    let (tx, ty) = (pb[0] - pa[0], pb[1] - pa[1]);
                    let len = tx.hypot(ty);
                    let normal = [ty / len, -tx / len];
                    edges.push(Edge {
                        vertices: key,
                        cells: [Some(c), None],
                        normal,
                        length: len,
                    });
                    id
                }
            };
            *ce = CellEdge {
                edge: id,
                sign: if edges[id].cells[0] == Some(c) { 1.0 } else { -1.0 },
            };
        }
        cell_edges.push(ces);
    }

    // Euler relation for a triangulated, simply connected planar domain
    let (v, e, f) = (nv as i64, edges.len() as i64, cells.len() as i64 + 1);
    if v - e + f != 2 {
        return Err(Error::MeshTopology(format!(
            "mesh is not a simply connected manifold triangulation \
             (V - E + F = {} with V = {v}, E = {e}, F = {f})",
            v - e + f
        )));
    }

    let mut interior_index = vec![None; edges.len()];
    let mut n_interior = 0;
    for (id, edge) in edges.iter().enumerate() {
        if !edge.is_boundary() {
            interior_index[id] = Some(n_interior);
            n_interior += 1;
        }
    }

    let mut h = 0.0f64;
    for ces in &cell_edges {
        for ce in ces {
            h = h.max(edges[ce.edge].length);
        }
    }

    Ok(Mesh {
        vertices,
        cells,
        edges,
        cell_edges,
        interior_index,
        n_interior,
        h,
    })
}

/// Parses the ASCII interchange format:
///
/// ```text
/// # comment
/// vertices <count>
/// <x> <y>          (count lines)
/// cells <count>
/// <i> <j> <k>      (count lines)
/// ```
pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut scanner = Scanner::new(text);
    scanner.expect_keyword("vertices")?;
    let nv = scanner.next_usize("vertex count")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = scanner.next_f64("vertex x coordinate")?;
        let y = scanner.next_f64("vertex y coordinate")?;
        vertices.push([x, y]);
    }
    scanner.expect_keyword("cells")?;
    let nc = scanner.next_usize("cell count")?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let i = scanner.next_usize("cell vertex id")?;
        let j = scanner.next_usize("cell vertex id")?;
        let k = scanner.next_usize("cell vertex id")?;
        cells.push([i, j, k]);
    }
    scanner.expect_end()?;
    build_mesh(vertices, cells)
}

pub fn import_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_mesh(&text)
}

/// Serializes a mesh in the same format [`parse_mesh`] reads.
pub fn export_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "vertices {}", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{:.17} {:.17}", v[0], v[1]);
    }
    let _ = writeln!(out, "cells {}", mesh.n_cells());
    for c in &mesh.cells {
        let _ = writeln!(out, "{} {} {}", c[0], c[1], c[2]);
    }
    out
}

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, export_mesh(mesh)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Whitespace tokenizer that tracks line and column for error reporting and
/// skips `#` comments.
struct Scanner<'a> {
    tokens: Vec<(usize, usize, &'a str)>,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let body = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            };
            let mut col = 0;
            for piece in body.split_whitespace() {
                // byte offset of this occurrence, searched from the last hit
                let at = body[col..].find(piece).unwrap() + col;
                tokens.push((ln + 1, at + 1, piece));
                col = at + piece.len();
            }
        }
        Scanner { tokens, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, usize, &'a str)> {
        match self.tokens.get(self.pos) {
            Some(&t) => {
                self.pos += 1;
                Ok(t)
            }
            None => {
                let (line, column) = self
                    .tokens
                    .last()
                    .map(|&(l, c, s)| (l, c + s.len()))
                    .unwrap_or((1, 1));
                Err(Error::MeshParse {
                    line,
                    column,
                    message: format!("unexpected end of input, expected {what}"),
                })
            }
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        let (line, column, tok) = self.next(&format!("keyword '{kw}'"))?;
        if tok != kw {
            return Err(Error::MeshParse {
                line,
                column,
                message: format!("expected keyword '{kw}', found '{tok}'"),
            });
        }
        Ok(())
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let (line, column, tok) = self.next(what)?;
        tok.parse().map_err(|_| Error::MeshParse {
            line,
            column,
            message: format!("expected {what} (non-negative integer), found '{tok}'"),
        })
    }

    fn next_f64(&mut self, what: &str) -> Result<f64> {
        let (line, column, tok) = self.next(what)?;
        let v: f64 = tok.parse().map_err(|_| Error::MeshParse {
            line,
            column,
            message: format!("expected {what} (number), found '{tok}'"),
        })?;
        if !v.is_finite() {
            return Err(Error::MeshParse {
                line,
                column,
                message: format!("{what} is not finite: '{tok}'"),
            });
        }
        Ok(v)
    }

    fn expect_end(&mut self) -> Result<()> {
        if let Some(&(line, column, tok)) = self.tokens.get(self.pos) {
            return Err(Error::MeshParse {
                line,
                column,
                message: format!("trailing content '{tok}' after cell list"),
            });
        }
        Ok(())
    }
}
