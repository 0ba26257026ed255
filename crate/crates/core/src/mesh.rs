//! Hierarchical quadrilateral meshes.
//!
//! Cells form a quadtree forest. A refined cell keeps its record and gets four
//! children; only leaves are active. Neighbouring active cells differ by at most
//! one level, so every interior edge carries at most one hanging vertex.
//!
//! Local vertex order is counter-clockwise: `v0 (0,0)`, `v1 (1,0)`, `v2 (1,1)`,
//! `v3 (0,1)` in reference coordinates. Local edge `e` runs from vertex `e` to
//! vertex `(e+1) % 4`, so the outward normal of an edge with tangent `t` is
//! `(t_z, -t_x)`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub type VertexId = usize;
pub type CellId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, z: f64) -> Self {
        Point { x, z }
    }

    pub fn mid(a: Point, b: Point) -> Point {
        Point::new(0.5 * (a.x + b.x), 0.5 * (a.z + b.z))
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.z - o.z)
    }
}

/// Part of the domain boundary a face lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
    /// Faces of an impermeable inclusion cut out of the domain.
    Slab,
}

impl Side {
    pub const ALL: [Side; 5] = [Side::Left, Side::Right, Side::Bottom, Side::Top, Side::Slab];

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
            Side::Slab => "slab",
        }
    }

    pub fn from_name(s: &str) -> Option<Side> {
        Side::ALL.into_iter().find(|side| side.name() == s)
    }
}

/// Boundary condition class of a face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryKind {
    /// Prescribed pressure head.
    Dirichlet,
    /// Zero normal flux.
    Neumann,
    /// Potential seepage face: either `u = 0` or outflow-free with `u <= 0`.
    Seepage,
}

impl BoundaryKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Dirichlet => "dirichlet",
            BoundaryKind::Neumann => "neumann",
            BoundaryKind::Seepage => "seepage",
        }
    }

    pub fn from_name(s: &str) -> Option<BoundaryKind> {
        match s {
            "dirichlet" => Some(BoundaryKind::Dirichlet),
            "neumann" => Some(BoundaryKind::Neumann),
            "seepage" => Some(BoundaryKind::Seepage),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoundaryMarker {
    pub side: Side,
    pub kind: BoundaryKind,
    /// Index of the boundary segment that produced the condition; `None` for
    /// faces that defaulted to no-flow.
    pub segment: Option<u16>,
}

/// Unordered vertex pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey(pub VertexId, pub VertexId);

impl EdgeKey {
    pub fn new(a: VertexId, b: VertexId) -> Self {
        if a < b {
            EdgeKey(a, b)
        } else {
            EdgeKey(b, a)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub vertices: [VertexId; 4],
    pub level: u8,
    pub parent: Option<CellId>,
    pub children: Option<[CellId; 4]>,
}

impl Cell {
    pub fn is_active(&self) -> bool {
        self.children.is_none()
    }

    pub fn edge(&self, e: usize) -> (VertexId, VertexId) {
        (self.vertices[e], self.vertices[(e + 1) % 4])
    }
}

/// What lies across one edge of an active cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeNeighbor {
    Boundary(BoundaryMarker),
    /// Active cell of the same level and its local edge index.
    Same(CellId, u8),
    /// Two active cells one level finer, ordered along this edge's direction,
    /// with their local edge indices.
    Finer([(CellId, u8); 2]),
    /// Active cell one level coarser, its local edge, and which half of that
    /// edge (in the coarse cell's orientation) this edge is.
    Coarser(CellId, u8, u8),
}

/// Hanging vertex sitting at the midpoint of a coarse edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HangingConstraint {
    pub vertex: VertexId,
    pub masters: [VertexId; 2],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MeshError {
    NotActive(CellId),
    OutOfRange(CellId),
    Inconsistent(String),
    Geometry(String),
    Boundary(String),
}

impl fmt::Display for MeshError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshError::NotActive(c) => write!(f, "cell {c} is not active"),
            MeshError::OutOfRange(c) => write!(f, "cell {c} does not exist"),
            MeshError::Inconsistent(m) => write!(f, "inconsistent mesh: {m}"),
            MeshError::Geometry(m) => write!(f, "invalid geometry: {m}"),
            MeshError::Boundary(m) => write!(f, "boundary assignment failed: {m}"),
        }
    }
}

impl std::error::Error for MeshError {}

#[derive(Clone, Debug, Default, PartialEq)]
struct Topology {
    active: Vec<CellId>,
    /// Position of each cell in `active`, `usize::MAX` when inactive.
    active_pos: Vec<usize>,
    neighbors: Vec<[EdgeNeighbor; 4]>,
    hanging: Vec<HangingConstraint>,
    active_vertices: Vec<VertexId>,
}

/// Vertices created by a refinement and the old vertices they average.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineOutcome {
    pub refined: Vec<CellId>,
    /// `(new vertex, parents)`: edge midpoints have two parents, cell
    /// centres four.
    pub new_vertices: Vec<(VertexId, Vec<VertexId>)>,
}

/// Renumbering produced by coarsening.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoarsenOutcome {
    pub merged: Vec<CellId>,
    /// Old vertex id to new vertex id; `None` for removed vertices.
    pub vertex_map: Vec<Option<VertexId>>,
    pub cell_map: Vec<Option<CellId>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<Cell>,
    midpoints: HashMap<EdgeKey, VertexId>,
    boundary: HashMap<EdgeKey, BoundaryMarker>,
    generation: u64,
    topo: Topology,
}

impl Mesh {
    /// Build a level-0 mesh from vertices, quads and boundary markers.
    ///
    /// Every edge used by exactly one cell must carry a marker.
    pub fn from_parts(
        vertices: Vec<Point>,
        quads: Vec<[VertexId; 4]>,
        boundary: HashMap<EdgeKey, BoundaryMarker>,
    ) -> Result<Mesh, MeshError> {
        for (c, q) in quads.iter().enumerate() {
            for &v in q {
                if v >= vertices.len() {
                    return Err(MeshError::Geometry(format!("cell {c} references vertex {v}")));
                }
            }
            let pts = q.map(|v| vertices[v]);
            if pts.iter().any(|p| !p.x.is_finite() || !p.z.is_finite()) {
                return Err(MeshError::Geometry(format!("cell {c} has non-finite coordinates")));
            }
            for (xi, eta) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)] {
                if bilinear_jacobian(&pts, xi, eta).det() <= 0.0 {
                    return Err(MeshError::Geometry(format!(
                        "cell {c} is degenerate or clockwise"
                    )));
                }
            }
        }
        let mut use_count: HashMap<EdgeKey, usize> = HashMap::new();
        for q in &quads {
            for e in 0..4 {
                *use_count.entry(EdgeKey::new(q[e], q[(e + 1) % 4])).or_default() += 1;
            }
        }
        for (k, n) in &use_count {
            if *n > 2 {
                return Err(MeshError::Geometry(format!("edge {k:?} shared by {n} cells")));
            }
            if *n == 1 && !boundary.contains_key(k) {
                return Err(MeshError::Boundary(format!("boundary edge {k:?} has no marker")));
            }
            if *n == 2 && boundary.contains_key(k) {
                return Err(MeshError::Boundary(format!("interior edge {k:?} is marked")));
            }
        }
        if boundary.keys().any(|k| !use_count.contains_key(k)) {
            return Err(MeshError::Boundary("marker on an edge no cell uses".into()));
        }
        let cells = quads
            .into_iter()
            .map(|q| Cell { vertices: q, level: 0, parent: None, children: None })
            .collect();
        let mut mesh = Mesh {
            vertices,
            cells,
            midpoints: HashMap::new(),
            boundary,
            generation: 0,
            topo: Topology::default(),
        };
        mesh.rebuild()?;
        Ok(mesh)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: VertexId) -> Point {
        self.vertices[v]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: CellId) -> &Cell {
        &self.cells[c]
    }

    pub fn cell_points(&self, c: CellId) -> [Point; 4] {
        self.cells[c].vertices.map(|v| self.vertices[v])
    }

    /// Active cells in increasing id order.
    pub fn active_cells(&self) -> &[CellId] {
        &self.topo.active
    }

    pub fn n_active(&self) -> usize {
        self.topo.active.len()
    }

    /// Vertices referenced by at least one active cell, increasing id order.
    pub fn active_vertices(&self) -> &[VertexId] {
        &self.topo.active_vertices
    }

    pub fn hanging_constraints(&self) -> &[HangingConstraint] {
        &self.topo.hanging
    }

    pub fn is_active(&self, c: CellId) -> bool {
        self.cells.get(c).is_some_and(|cell| cell.is_active())
    }

    /// Position of an active cell in [`Mesh::active_cells`].
    pub fn active_index(&self, c: CellId) -> Option<usize> {
        match self.topo.active_pos.get(c) {
            Some(&p) if p != usize::MAX => Some(p),
            _ => None,
        }
    }

    pub fn neighbors(&self, c: CellId) -> &[EdgeNeighbor; 4] {
        let p = self.active_index(c).expect("neighbors of inactive cell");
        &self.topo.neighbors[p]
    }

    pub fn boundary_marker(&self, a: VertexId, b: VertexId) -> Option<BoundaryMarker> {
        self.boundary.get(&EdgeKey::new(a, b)).copied()
    }

    pub fn midpoint(&self, a: VertexId, b: VertexId) -> Option<VertexId> {
        self.midpoints.get(&EdgeKey::new(a, b)).copied()
    }

    pub fn max_level(&self) -> u8 {
        self.topo.active.iter().map(|&c| self.cells[c].level).max().unwrap_or(0)
    }

    /// Boundary faces of active cells: `(cell, local edge, marker)`.
    pub fn boundary_faces(&self) -> Vec<(CellId, usize, BoundaryMarker)> {
        let mut out = Vec::new();
        for (p, &c) in self.topo.active.iter().enumerate() {
            for (e, nb) in self.topo.neighbors[p].iter().enumerate() {
                if let EdgeNeighbor::Boundary(m) = nb {
                    out.push((c, e, *m));
                }
            }
        }
        out
    }

    pub fn cell_area(&self, c: CellId) -> f64 {
        let p = self.cell_points(c);
        let mut a = 0.0;
        for i in 0..4 {
            let (u, v) = (p[i], p[(i + 1) % 4]);
            a += u.x * v.z - v.x * u.z;
        }
        0.5 * a
    }

    pub fn cell_center(&self, c: CellId) -> Point {
        let p = self.cell_points(c);
        Point::new(
            0.25 * (p[0].x + p[1].x + p[2].x + p[3].x),
            0.25 * (p[0].z + p[1].z + p[2].z + p[3].z),
        )
    }

    /// Longest edge of a cell.
    pub fn cell_diameter(&self, c: CellId) -> f64 {
        let p = self.cell_points(c);
        (0..4).map(|i| p[i].dist(p[(i + 1) % 4])).fold(0.0, f64::max)
    }

    /// Refine the marked active cells and whatever else is needed to keep
    /// neighbouring levels within one of each other.
    pub fn refine(&mut self, marked: &[CellId]) -> Result<RefineOutcome, MeshError> {
        let mut set = BTreeSet::new();
        for &c in marked {
            if c >= self.cells.len() {
                return Err(MeshError::OutOfRange(c));
            }
            if !self.cells[c].is_active() {
                return Err(MeshError::NotActive(c));
            }
            set.insert(c);
        }
        let mut stack: Vec<CellId> = set.iter().copied().collect();
        while let Some(c) = stack.pop() {
            for nb in self.neighbors(c) {
                if let EdgeNeighbor::Coarser(n, _, _) = *nb {
                    if set.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
        let mut outcome = RefineOutcome::default();
        for &c in &set {
            self.split_cell(c, &mut outcome);
        }
        outcome.refined = set.into_iter().collect();
        if !outcome.refined.is_empty() {
            self.generation += 1;
            self.rebuild()?;
        }
        Ok(outcome)
    }

    pub fn refine_uniform(&mut self) -> Result<RefineOutcome, MeshError> {
        let all = self.topo.active.clone();
        self.refine(&all)
    }

    fn split_cell(&mut self, c: CellId, out: &mut RefineOutcome) {
        let cell = self.cells[c].clone();
        let [v0, v1, v2, v3] = cell.vertices;
        let mut mids = [0; 4];
        for e in 0..4 {
            let (a, b) = cell.edge(e);
            let key = EdgeKey::new(a, b);
            mids[e] = match self.midpoints.get(&key) {
                Some(&m) => m,
                None => {
                    let m = self.vertices.len();
                    self.vertices.push(Point::mid(self.vertices[a], self.vertices[b]));
                    self.midpoints.insert(key, m);
                    out.new_vertices.push((m, vec![a, b]));
                    if let Some(marker) = self.boundary.get(&key).copied() {
                        self.boundary.insert(EdgeKey::new(a, m), marker);
                        self.boundary.insert(EdgeKey::new(m, b), marker);
                    }
                    m
                }
            };
        }
        let p = cell.vertices.map(|v| self.vertices[v]);
        let centre = Point::new(
            0.25 * (p[0].x + p[1].x + p[2].x + p[3].x),
            0.25 * (p[0].z + p[1].z + p[2].z + p[3].z),
        );
        let cv = self.vertices.len();
        self.vertices.push(centre);
        out.new_vertices.push((cv, cell.vertices.to_vec()));
        let [m01, m12, m23, m30] = mids;
        let quads = [[v0, m01, cv, m30], [m01, v1, m12, cv], [cv, m12, v2, m23], [m30, cv, m23, v3]];
        let first = self.cells.len();
        for q in quads {
            self.cells.push(Cell {
                vertices: q,
                level: cell.level + 1,
                parent: Some(c),
                children: None,
            });
        }
        self.cells[c].children = Some([first, first + 1, first + 2, first + 3]);
    }

    /// Merge sibling quadruples whose four children are all marked and active.
    ///
    /// A quadruple is kept when merging would put it next to a cell two
    /// levels finer. Cells and vertices are renumbered compactly afterwards,
    /// so refining and then coarsening the same cells restores the mesh
    /// exactly.
    pub fn coarsen(&mut self, marked: &[CellId]) -> Result<CoarsenOutcome, MeshError> {
        let marked: HashSet<CellId> = marked.iter().copied().collect();
        let mut parents = BTreeSet::new();
        for &c in &marked {
            if c >= self.cells.len() {
                return Err(MeshError::OutOfRange(c));
            }
            if !self.cells[c].is_active() {
                return Err(MeshError::NotActive(c));
            }
            if let Some(p) = self.cells[c].parent {
                parents.insert(p);
            }
        }
        let mut merge: BTreeSet<CellId> = parents
            .into_iter()
            .filter(|&p| {
                let kids = self.cells[p].children.expect("parent has children");
                kids.iter().all(|k| marked.contains(k) && self.cells[*k].is_active())
            })
            .collect();
        // a finer neighbour is harmless only if its own quadruple merges too;
        // dropping a candidate can block others, so iterate to a fixpoint
        loop {
            let blocked: Vec<CellId> = merge
                .iter()
                .copied()
                .filter(|&p| {
                    self.cells[p].children.expect("children").iter().any(|&k| {
                        self.neighbors(k).iter().any(|nb| match nb {
                            EdgeNeighbor::Finer(f) => {
                                f.iter().any(|&(n, _)| !self.cells[n].parent.is_some_and(|q| merge.contains(&q)))
                            }
                            _ => false,
                        })
                    })
                })
                .collect();
            if blocked.is_empty() {
                break;
            }
            for p in blocked {
                merge.remove(&p);
            }
        }
        let merge: Vec<CellId> = merge.into_iter().collect();
        let n_cells = self.cells.len();
        let n_verts = self.vertices.len();
        if merge.is_empty() {
            return Ok(CoarsenOutcome {
                merged: merge,
                vertex_map: (0..n_verts).map(Some).collect(),
                cell_map: (0..n_cells).map(Some).collect(),
            });
        }
        let mut alive = vec![true; n_cells];
        for &p in &merge {
            for k in self.cells[p].children.take().expect("children") {
                alive[k] = false;
            }
        }
        let mut cell_map = vec![None; n_cells];
        let mut next = 0;
        for c in 0..n_cells {
            if alive[c] {
                cell_map[c] = Some(next);
                next += 1;
            }
        }
        let mut used = vec![false; n_verts];
        for c in (0..n_cells).filter(|&c| alive[c]) {
            for &v in &self.cells[c].vertices {
                used[v] = true;
            }
        }
        let mut vertex_map = vec![None; n_verts];
        let mut next = 0;
        for v in 0..n_verts {
            if used[v] {
                vertex_map[v] = Some(next);
                next += 1;
            }
        }
        let mut edges_alive = HashSet::new();
        for c in (0..n_cells).filter(|&c| alive[c]) {
            for e in 0..4 {
                let (a, b) = self.cells[c].edge(e);
                edges_alive.insert(EdgeKey::new(a, b));
            }
        }
        let vertices = (0..n_verts).filter(|&v| used[v]).map(|v| self.vertices[v]).collect();
        let remap_v = |v: VertexId| vertex_map[v].expect("live vertex");
        let remap_c = |c: CellId| cell_map[c].expect("live cell");
        let cells = (0..n_cells)
            .filter(|&c| alive[c])
            .map(|c| {
                let cell = &self.cells[c];
                Cell {
                    vertices: cell.vertices.map(remap_v),
                    level: cell.level,
                    parent: cell.parent.map(remap_c),
                    children: cell.children.map(|k| k.map(remap_c)),
                }
            })
            .collect();
        let boundary = self
            .boundary
            .iter()
            .filter(|(k, _)| edges_alive.contains(k))
            .map(|(k, m)| (EdgeKey::new(remap_v(k.0), remap_v(k.1)), *m))
            .collect();
        self.vertices = vertices;
        self.cells = cells;
        self.boundary = boundary;
        self.midpoints = self.derive_midpoints();
        self.generation += 1;
        self.rebuild()?;
        Ok(CoarsenOutcome { merged: merge, vertex_map, cell_map })
    }

    fn derive_midpoints(&self) -> HashMap<EdgeKey, VertexId> {
        let mut mids = HashMap::new();
        for cell in &self.cells {
            if let Some(k) = cell.children {
                let [v0, v1, v2, v3] = cell.vertices;
                mids.insert(EdgeKey::new(v0, v1), self.cells[k[0]].vertices[1]);
                mids.insert(EdgeKey::new(v1, v2), self.cells[k[1]].vertices[2]);
                mids.insert(EdgeKey::new(v2, v3), self.cells[k[2]].vertices[3]);
                mids.insert(EdgeKey::new(v3, v0), self.cells[k[3]].vertices[0]);
            }
        }
        mids
    }

    fn rebuild(&mut self) -> Result<(), MeshError> {
        let active: Vec<CellId> =
            (0..self.cells.len()).filter(|&c| self.cells[c].is_active()).collect();
        let mut active_pos = vec![usize::MAX; self.cells.len()];
        for (p, &c) in active.iter().enumerate() {
            active_pos[c] = p;
        }
        let mut edge_cells: HashMap<EdgeKey, [(CellId, u8); 2]> = HashMap::new();
        let none = (usize::MAX, 0u8);
        for &c in &active {
            for e in 0..4 {
                let (a, b) = self.cells[c].edge(e);
                let slot = edge_cells.entry(EdgeKey::new(a, b)).or_insert([none, none]);
                if slot[0].0 == usize::MAX {
                    slot[0] = (c, e as u8);
                } else if slot[1].0 == usize::MAX {
                    slot[1] = (c, e as u8);
                } else {
                    return Err(MeshError::Inconsistent(format!("edge {a}-{b} used three times")));
                }
            }
        }
        let mut half_parent: HashMap<EdgeKey, EdgeKey> = HashMap::new();
        for (k, &m) in &self.midpoints {
            half_parent.insert(EdgeKey::new(k.0, m), *k);
            half_parent.insert(EdgeKey::new(m, k.1), *k);
        }
        let other = |key: &EdgeKey, me: CellId| -> Option<(CellId, u8)> {
            let s = edge_cells.get(key)?;
            s.iter().copied().find(|&(c, _)| c != usize::MAX && c != me)
        };
        let mut neighbors = Vec::with_capacity(active.len());
        let mut hanging = Vec::new();
        for &c in &active {
            let mut nb = [EdgeNeighbor::Same(usize::MAX, 0); 4];
            for (e, slot) in nb.iter_mut().enumerate() {
                let (a, b) = self.cells[c].edge(e);
                let key = EdgeKey::new(a, b);
                if let Some(m) = self.boundary.get(&key) {
                    *slot = EdgeNeighbor::Boundary(*m);
                } else if let Some(o) = other(&key, c) {
                    *slot = EdgeNeighbor::Same(o.0, o.1);
                } else if let Some(&m) = self.midpoints.get(&key) {
                    let h0 = other(&EdgeKey::new(a, m), c);
                    let h1 = other(&EdgeKey::new(m, b), c);
                    match (h0, h1) {
                        (Some(h0), Some(h1)) => {
                            *slot = EdgeNeighbor::Finer([h0, h1]);
                            hanging.push(HangingConstraint { vertex: m, masters: [a, b] });
                        }
                        _ => {
                            return Err(MeshError::Inconsistent(format!(
                                "cell {c} edge {e} has neighbours more than one level finer"
                            )))
                        }
                    }
                } else if let Some(pk) = half_parent.get(&key) {
                    let (n, ne) = other(pk, c).ok_or_else(|| {
                        MeshError::Inconsistent(format!(
                            "cell {c} edge {e} has neighbours more than one level coarser"
                        ))
                    })?;
                    let start = self.cells[n].edge(ne as usize).0;
                    let half = if a == start || b == start { 0 } else { 1 };
                    *slot = EdgeNeighbor::Coarser(n, ne, half);
                } else {
                    return Err(MeshError::Inconsistent(format!(
                        "cell {c} edge {e} is neither interior nor marked boundary"
                    )));
                }
            }
            neighbors.push(nb);
        }
        hanging.sort_by_key(|h| h.vertex);
        let mut used = vec![false; self.vertices.len()];
        for &c in &active {
            for &v in &self.cells[c].vertices {
                used[v] = true;
            }
        }
        let active_vertices = (0..self.vertices.len()).filter(|&v| used[v]).collect();
        self.topo = Topology { active, active_pos, neighbors, hanging, active_vertices };
        Ok(())
    }

    /// Check the structural invariants: positive Jacobians, level jumps of at
    /// most one across edges, at most one hanging vertex per edge.
    pub fn validate(&self) -> Result<(), MeshError> {
        for &c in self.active_cells() {
            let p = self.cell_points(c);
            for (xi, eta) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
                if bilinear_jacobian(&p, xi, eta).det() <= 0.0 {
                    return Err(MeshError::Geometry(format!("cell {c} has non-positive Jacobian")));
                }
            }
            let lc = self.cells[c].level as i32;
            for nb in self.neighbors(c) {
                let ok = match *nb {
                    EdgeNeighbor::Boundary(_) => true,
                    EdgeNeighbor::Same(n, _) => self.cells[n].level as i32 == lc,
                    EdgeNeighbor::Finer(f) => f.iter().all(|&(n, _)| self.cells[n].level as i32 == lc + 1),
                    EdgeNeighbor::Coarser(n, _, _) => self.cells[n].level as i32 == lc - 1,
                };
                if !ok {
                    return Err(MeshError::Inconsistent(format!("level jump at cell {c}")));
                }
            }
        }
        let mut seen = HashSet::new();
        for h in self.hanging_constraints() {
            if !seen.insert(h.vertex) {
                return Err(MeshError::Inconsistent(format!("vertex {} hangs twice", h.vertex)));
            }
        }
        Ok(())
    }
}

/// 2x2 matrix stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub fn det(&self) -> f64 {
        let m = self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Mat2 {
        let m = self.0;
        let d = self.det();
        Mat2([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
    }
}

/// Jacobian `J[k][a] = d x_k / d xi_a` of the bilinear map of a quad.
pub fn bilinear_jacobian(p: &[Point; 4], xi: f64, eta: f64) -> Mat2 {
    let dxi = [-(1.0 - eta), 1.0 - eta, eta, -eta];
    let deta = [-(1.0 - xi), -xi, xi, 1.0 - xi];
    let mut j = [[0.0; 2]; 2];
    for i in 0..4 {
        j[0][0] += p[i].x * dxi[i];
        j[0][1] += p[i].x * deta[i];
        j[1][0] += p[i].z * dxi[i];
        j[1][1] += p[i].z * deta[i];
    }
    Mat2(j)
}

pub fn bilinear_map(p: &[Point; 4], xi: f64, eta: f64) -> Point {
    let n = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta];
    let mut q = Point::default();
    for i in 0..4 {
        q.x += n[i] * p[i].x;
        q.z += n[i] * p[i].z;
    }
    q
}

/// Invert the bilinear map by Newton's method. Returns reference coordinates
/// when the point lies in the cell (with a small tolerance).
pub fn locate_in_quad(p: &[Point; 4], target: Point) -> Option<(f64, f64)> {
    let (mut xi, mut eta) = (0.5, 0.5);
    for _ in 0..30 {
        let q = bilinear_map(p, xi, eta);
        let r = [target.x - q.x, target.z - q.z];
        let ji = bilinear_jacobian(p, xi, eta).inverse().0;
        let dxi = ji[0][0] * r[0] + ji[0][1] * r[1];
        let deta = ji[1][0] * r[0] + ji[1][1] * r[1];
        xi += dxi;
        eta += deta;
        if dxi.abs() + deta.abs() < 1e-14 {
            break;
        }
    }
    let tol = 1e-10;
    if (-tol..=1.0 + tol).contains(&xi) && (-tol..=1.0 + tol).contains(&eta) {
        Some((xi.clamp(0.0, 1.0), eta.clamp(0.0, 1.0)))
    } else {
        None
    }
}

impl Mesh {
    /// Active cell containing `p` and the reference coordinates of `p` in it.
    pub fn locate(&self, p: Point) -> Option<(CellId, f64, f64)> {
        for &c in self.active_cells() {
            let q = self.cell_points(c);
            let (mut lo, mut hi) = (q[0], q[0]);
            for v in &q[1..] {
                lo.x = lo.x.min(v.x);
                lo.z = lo.z.min(v.z);
                hi.x = hi.x.max(v.x);
                hi.z = hi.z.max(v.z);
            }
            let pad = 1e-9 * (hi.x - lo.x + hi.z - lo.z);
            if p.x < lo.x - pad || p.x > hi.x + pad || p.z < lo.z - pad || p.z > hi.z + pad {
                continue;
            }
            if let Some((xi, eta)) = locate_in_quad(&q, p) {
                return Some((c, xi, eta));
            }
        }
        None
    }
}

/// Dörfler bulk marking.
///
/// Returns the smallest set `M` of indices with `sum_M |eta| >= theta * sum |eta|`,
/// taking cells by decreasing indicator and breaking ties by lower index.
pub fn dorfler_mark(indicators: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = indicators.iter().map(|e| e.abs()).sum();
    if total <= 0.0 || theta <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| {
        indicators[b].abs().total_cmp(&indicators[a].abs()).then(a.cmp(&b))
    });
    let target = theta.min(1.0) * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        if acc >= target {
            break;
        }
        acc += indicators[i].abs();
        out.push(i);
    }
    out
}
