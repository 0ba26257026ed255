//! Plain-text mesh dump of the active cells.
//!
//! ```text
//! seepage-mesh 1
//! vertices <n>
//! <x> <z>
//! cells <m>
//! <v0> <v1> <v2> <v3> <level>
//! hanging <h>
//! <vertex> <master0> <master1>
//! boundary <b>
//! <cell> <edge> <side> <kind> <segment or ->
//! ```
//!
//! Vertex and cell numbers are positions in the dump, not mesh ids.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::mesh::{BoundaryKind, BoundaryMarker, EdgeKey, Mesh, MeshError, Point, Side};

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryRecord {
    pub cell: usize,
    pub edge: usize,
    pub marker: BoundaryMarker,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshDump {
    pub vertices: Vec<Point>,
    pub cells: Vec<([usize; 4], u8)>,
    pub hanging: Vec<[usize; 3]>,
    pub boundary: Vec<BoundaryRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DumpError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for DumpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for DumpError {}

pub fn write(mesh: &Mesh) -> String {
    let mut pos = vec![usize::MAX; mesh.vertices().len()];
    for (i, &v) in mesh.active_vertices().iter().enumerate() {
        pos[v] = i;
    }
    let mut s = String::from("seepage-mesh 1\n");
    let _ = writeln!(s, "vertices {}", mesh.active_vertices().len());
    for &v in mesh.active_vertices() {
        let p = mesh.vertex(v);
        let _ = writeln!(s, "{:.17e} {:.17e}", p.x, p.z);
    }
    let _ = writeln!(s, "cells {}", mesh.n_active());
    for &c in mesh.active_cells() {
        let cell = mesh.cell(c);
        let v = cell.vertices.map(|v| pos[v]);
        let _ = writeln!(s, "{} {} {} {} {}", v[0], v[1], v[2], v[3], cell.level);
    }
    let _ = writeln!(s, "hanging {}", mesh.hanging_constraints().len());
    for h in mesh.hanging_constraints() {
        let _ = writeln!(s, "{} {} {}", pos[h.vertex], pos[h.masters[0]], pos[h.masters[1]]);
    }
    let faces = mesh.boundary_faces();
    let _ = writeln!(s, "boundary {}", faces.len());
    for (c, e, m) in faces {
        let seg = m.segment.map_or("-".to_string(), |k| k.to_string());
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            mesh.active_index(c).expect("active"),
            e,
            m.side.name(),
            m.kind.name(),
            seg
        );
    }
    s
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<Vec<&'a str>, DumpError> {
        loop {
            match self.it.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    let l = l.trim();
                    if l.is_empty() || l.starts_with('#') {
                        continue;
                    }
                    return Ok(l.split_whitespace().collect());
                }
                None => return Err(self.err("unexpected end of input")),
            }
        }
    }

    fn err(&self, m: impl Into<String>) -> DumpError {
        DumpError { line: self.line, message: m.into() }
    }

    fn header(&mut self, name: &str, limit: usize) -> Result<usize, DumpError> {
        let t = self.next()?;
        if t.len() != 2 || t[0] != name {
            return Err(self.err(format!("expected `{name} <count>`")));
        }
        let n: usize = t[1].parse().map_err(|_| self.err("bad count"))?;
        if n > limit {
            return Err(self.err(format!("{name} count {n} exceeds the limit {limit}")));
        }
        Ok(n)
    }
}

/// Upper bound on entity counts accepted by the parser.
pub const MAX_ENTITIES: usize = 10_000_000;

pub fn parse(text: &str) -> Result<MeshDump, DumpError> {
    let mut lines = Lines { it: text.lines().enumerate(), line: 0 };
    let t = lines.next()?;
    if t != ["seepage-mesh", "1"] {
        return Err(lines.err("missing `seepage-mesh 1` header"));
    }
    // cap preallocation by input size so hostile counts cannot exhaust memory
    let cap = |n: usize| n.min(text.len() / 4 + 1);
    let nv = lines.header("vertices", MAX_ENTITIES)?;
    let mut vertices = Vec::with_capacity(cap(nv));
    for _ in 0..nv {
        let t = lines.next()?;
        if t.len() != 2 {
            return Err(lines.err("vertex needs two coordinates"));
        }
        let x: f64 = t[0].parse().map_err(|_| lines.err("bad x coordinate"))?;
        let z: f64 = t[1].parse().map_err(|_| lines.err("bad z coordinate"))?;
        if !x.is_finite() || !z.is_finite() {
            return Err(lines.err("non-finite coordinate"));
        }
        vertices.push(Point::new(x, z));
    }
    let nc = lines.header("cells", MAX_ENTITIES)?;
    let mut cells = Vec::with_capacity(cap(nc));
    for _ in 0..nc {
        let t = lines.next()?;
        if t.len() != 5 {
            return Err(lines.err("cell needs four vertices and a level"));
        }
        let mut v = [0usize; 4];
        for i in 0..4 {
            v[i] = t[i].parse().map_err(|_| lines.err("bad vertex index"))?;
            if v[i] >= nv {
                return Err(lines.err(format!("vertex index {} out of range", v[i])));
            }
        }
        let level: u8 = t[4].parse().map_err(|_| lines.err("bad level"))?;
        cells.push((v, level));
    }
    let nh = lines.header("hanging", MAX_ENTITIES)?;
    let mut hanging = Vec::with_capacity(cap(nh));
    for _ in 0..nh {
        let t = lines.next()?;
        if t.len() != 3 {
            return Err(lines.err("hanging record needs three vertices"));
        }
        let mut h = [0usize; 3];
        for i in 0..3 {
            h[i] = t[i].parse().map_err(|_| lines.err("bad vertex index"))?;
            if h[i] >= nv {
                return Err(lines.err(format!("vertex index {} out of range", h[i])));
            }
        }
        hanging.push(h);
    }
    let nb = lines.header("boundary", MAX_ENTITIES)?;
    let mut boundary = Vec::with_capacity(cap(nb));
    for _ in 0..nb {
        let t = lines.next()?;
        if t.len() != 5 {
            return Err(lines.err("boundary record needs five fields"));
        }
        let cell: usize = t[0].parse().map_err(|_| lines.err("bad cell index"))?;
        if cell >= nc {
            return Err(lines.err(format!("cell index {cell} out of range")));
        }
        let edge: usize = t[1].parse().map_err(|_| lines.err("bad edge index"))?;
        if edge >= 4 {
            return Err(lines.err("edge index must be 0..3"));
        }
        let side = Side::from_name(t[2]).ok_or_else(|| lines.err(format!("unknown side `{}`", t[2])))?;
        let kind = BoundaryKind::from_name(t[3]).ok_or_else(|| lines.err(format!("unknown kind `{}`", t[3])))?;
        let segment = match t[4] {
            "-" => None,
            s => Some(s.parse::<u16>().map_err(|_| lines.err("bad segment index"))?),
        };
        boundary.push(BoundaryRecord { cell, edge, marker: BoundaryMarker { side, kind, segment } });
    }
    Ok(MeshDump { vertices, cells, hanging, boundary })
}

impl MeshDump {
    /// Rebuild a level-0 mesh from a conforming dump.
    pub fn to_mesh(&self) -> Result<Mesh, MeshError> {
        if !self.hanging.is_empty() {
            return Err(MeshError::Geometry("dumps with hanging vertices cannot be rebuilt flat".into()));
        }
        let quads: Vec<[usize; 4]> = self.cells.iter().map(|c| c.0).collect();
        let mut boundary = HashMap::new();
        for b in &self.boundary {
            let q = quads[b.cell];
            boundary.insert(EdgeKey::new(q[b.edge], q[(b.edge + 1) % 4]), b.marker);
        }
        Mesh::from_parts(self.vertices.clone(), quads, boundary)
    }
}
