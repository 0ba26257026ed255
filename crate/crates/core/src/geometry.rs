//! Initial meshes for the supported domains.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::mesh::{BoundaryKind, BoundaryMarker, EdgeKey, Mesh, MeshError, Point, Side};

/// Boundary condition attached to a stretch of one side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    NoFlow,
    /// Hydrostatic head `H`: the pressure head is `H - z`.
    Head { head: f64 },
    Seepage,
}

impl Condition {
    pub fn kind(&self) -> BoundaryKind {
        match self {
            Condition::NoFlow => BoundaryKind::Neumann,
            Condition::Head { .. } => BoundaryKind::Dirichlet,
            Condition::Seepage => BoundaryKind::Seepage,
        }
    }
}

/// Condition on the part of `side` whose along-coordinate lies in
/// `[from, to]`. The along-coordinate is `z` on the left and right sides and
/// `x` elsewhere. Missing bounds extend to the end of the side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySegment {
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    pub condition: Condition,
}

impl BoundarySegment {
    pub fn new(side: Side, from: Option<f64>, to: Option<f64>, condition: Condition) -> Self {
        BoundarySegment { side, from, to, condition }
    }

    pub fn whole(side: Side, condition: Condition) -> Self {
        BoundarySegment { side, from: None, to: None, condition }
    }

    fn lo(&self) -> f64 {
        self.from.unwrap_or(f64::NEG_INFINITY)
    }

    fn hi(&self) -> f64 {
        self.to.unwrap_or(f64::INFINITY)
    }
}

/// Axis-aligned rectangle. `x_lines`/`z_lines` are extra mesh lines (layer
/// interfaces, well levels, filter ends) the initial mesh must align with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rectangle {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub nx: usize,
    pub nz: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x_lines: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub z_lines: Vec<f64>,
}

/// Slab of constant thickness on an inclined bed, with an impermeable layer
/// cut into the downstream part.
///
/// Points are `(x, z_bed(x) + t)` with `z_bed(x) = bed_left - slope * x`,
/// `x` in `[0, length]`, `t` in `[0, thickness]`. The inclusion occupies
/// `x >= slab_start`, `t` in `[slab_bottom, slab_top]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopingSlab {
    pub length: f64,
    pub thickness: f64,
    pub bed_left: f64,
    pub slope: f64,
    pub slab_start: f64,
    pub slab_bottom: f64,
    pub slab_top: f64,
    pub nx_upstream: usize,
    pub nx_downstream: usize,
    pub nt_below: usize,
    pub nt_slab: usize,
    pub nt_above: usize,
}

impl SlopingSlab {
    pub fn bed(&self, x: f64) -> f64 {
        self.bed_left - self.slope * x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Rectangle(Rectangle),
    SlopingSlab(SlopingSlab),
}

impl Geometry {
    /// Lowest and highest elevation in the domain.
    pub fn z_range(&self) -> (f64, f64) {
        match self {
            Geometry::Rectangle(r) => (r.z_min, r.z_max),
            Geometry::SlopingSlab(s) => {
                let a = s.bed(0.0);
                let b = s.bed(s.length);
                (a.min(b), a.max(b) + s.thickness)
            }
        }
    }

    pub fn x_range(&self) -> (f64, f64) {
        match self {
            Geometry::Rectangle(r) => (r.x_min, r.x_max),
            Geometry::SlopingSlab(s) => (0.0, s.length),
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: &str| Err(MeshError::Geometry(m.to_string()));
        match self {
            Geometry::Rectangle(r) => {
                let vals = [r.x_min, r.x_max, r.z_min, r.z_max];
                if vals.iter().any(|v| !v.is_finite()) {
                    return bad("non-finite rectangle bounds");
                }
                if !(r.x_max > r.x_min && r.z_max > r.z_min) {
                    return bad("rectangle has zero or negative area");
                }
                if r.nx == 0 || r.nz == 0 {
                    return bad("cell counts must be positive");
                }
                if r.nx > 100_000 || r.nz > 100_000 {
                    return bad("cell counts too large");
                }
                for &l in &r.x_lines {
                    if !(l > r.x_min && l < r.x_max) {
                        return bad(&format!("mesh line x = {l} outside the domain"));
                    }
                }
                for &l in &r.z_lines {
                    if !(l > r.z_min && l < r.z_max) {
                        return bad(&format!("mesh line z = {l} outside the domain"));
                    }
                }
                Ok(())
            }
            Geometry::SlopingSlab(s) => {
                let vals = [s.length, s.thickness, s.bed_left, s.slope, s.slab_start, s.slab_bottom, s.slab_top];
                if vals.iter().any(|v| !v.is_finite()) {
                    return bad("non-finite slab parameters");
                }
                if !(s.length > 0.0 && s.thickness > 0.0) {
                    return bad("slab domain has zero or negative area");
                }
                if !(s.slab_start > 0.0 && s.slab_start < s.length) {
                    return bad("inclusion must start inside the domain");
                }
                if !(s.slab_bottom > 0.0 && s.slab_bottom < s.slab_top && s.slab_top < s.thickness) {
                    return bad("inclusion must lie strictly inside the layer");
                }
                let counts = [s.nx_upstream, s.nx_downstream, s.nt_below, s.nt_slab, s.nt_above];
                if counts.iter().any(|&n| n == 0 || n > 100_000) {
                    return bad("cell counts must be positive and moderate");
                }
                Ok(())
            }
        }
    }

    /// Build the level-0 mesh and mark boundary faces from `segments`.
    pub fn build_mesh(&self, segments: &[BoundarySegment]) -> Result<Mesh, MeshError> {
        self.validate()?;
        let grid = match self {
            Geometry::Rectangle(r) => {
                let xs = axis(r.x_min, r.x_max, r.nx, &r.x_lines);
                let zs = axis(r.z_min, r.z_max, r.nz, &r.z_lines);
                let (nx, nz) = (xs.len() - 1, zs.len() - 1);
                TensorGrid {
                    pts: zs.iter().flat_map(|&z| xs.iter().map(move |&x| Point::new(x, z))).collect(),
                    ni: nx,
                    nj: nz,
                    keep: vec![true; nx * nz],
                }
            }
            Geometry::SlopingSlab(s) => {
                let mut xs = linspace(0.0, s.slab_start, s.nx_upstream);
                xs.pop();
                xs.extend(linspace(s.slab_start, s.length, s.nx_downstream));
                let mut ts = linspace(0.0, s.slab_bottom, s.nt_below);
                ts.pop();
                ts.extend(linspace(s.slab_bottom, s.slab_top, s.nt_slab));
                ts.pop();
                ts.extend(linspace(s.slab_top, s.thickness, s.nt_above));
                let (ni, nj) = (xs.len() - 1, ts.len() - 1);
                let mut keep = vec![true; ni * nj];
                for j in s.nt_below..s.nt_below + s.nt_slab {
                    for i in s.nx_upstream..ni {
                        keep[j * ni + i] = false;
                    }
                }
                let pts = ts
                    .iter()
                    .flat_map(|&t| xs.iter().map(move |&x| Point::new(x, s.bed(x) + t)))
                    .collect();
                TensorGrid { pts, ni, nj, keep }
            }
        };
        let (x0, x1) = self.x_range();
        let (z0, z1) = self.z_range();
        let tol = 1e-9 * ((x1 - x0) + (z1 - z0));
        grid.into_mesh(segments, tol)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect()
}

/// Grid coordinates covering `[lo, hi]` with spacing close to `(hi-lo)/n`
/// that contain every requested line.
pub fn axis(lo: f64, hi: f64, n: usize, lines: &[f64]) -> Vec<f64> {
    let mut breaks = vec![lo, hi];
    breaks.extend(lines.iter().copied());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (hi - lo));
    let h = (hi - lo) / n as f64;
    let mut out = vec![lo];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let k = (((b - a) / h) - 1e-9).ceil().max(1.0) as usize;
        let seg = linspace(a, b, k);
        out.extend_from_slice(&seg[1..]);
    }
    out
}

struct TensorGrid {
    /// Row-major `(nj + 1) x (ni + 1)` points.
    pts: Vec<Point>,
    ni: usize,
    nj: usize,
    keep: Vec<bool>,
}

impl TensorGrid {
    fn into_mesh(self, segments: &[BoundarySegment], tol: f64) -> Result<Mesh, MeshError> {
        let (ni, nj) = (self.ni, self.nj);
        let gid = |i: usize, j: usize| j * (ni + 1) + i;
        let mut ids = vec![usize::MAX; self.pts.len()];
        let mut vertices = Vec::new();
        let mut quads = Vec::new();
        // vertex numbering follows first use by a kept cell
        for j in 0..nj {
            for i in 0..ni {
                if !self.keep[j * ni + i] {
                    continue;
                }
                let corners = [gid(i, j), gid(i + 1, j), gid(i + 1, j + 1), gid(i, j + 1)];
                let q = corners.map(|g| {
                    if ids[g] == usize::MAX {
                        ids[g] = vertices.len();
                        vertices.push(self.pts[g]);
                    }
                    ids[g]
                });
                quads.push(q);
            }
        }
        let kept = |i: isize, j: isize| -> bool {
            i >= 0 && j >= 0 && (i as usize) < ni && (j as usize) < nj && self.keep[j as usize * ni + i as usize]
        };
        let mut boundary = HashMap::new();
        for j in 0..nj as isize {
            for i in 0..ni as isize {
                if !kept(i, j) {
                    continue;
                }
                let (iu, ju) = (i as usize, j as usize);
                // (edge endpoints, neighbour cell, side when on the outer frame)
                let faces = [
                    ((gid(iu, ju), gid(iu + 1, ju)), (i, j - 1), (j == 0).then_some(Side::Bottom)),
                    ((gid(iu + 1, ju), gid(iu + 1, ju + 1)), (i + 1, j), (iu + 1 == ni).then_some(Side::Right)),
                    ((gid(iu + 1, ju + 1), gid(iu, ju + 1)), (i, j + 1), (ju + 1 == nj).then_some(Side::Top)),
                    ((gid(iu, ju + 1), gid(iu, ju)), (i - 1, j), (i == 0).then_some(Side::Left)),
                ];
                for ((a, b), (ni_, nj_), frame) in faces {
                    if kept(ni_, nj_) {
                        continue;
                    }
                    let side = frame.unwrap_or(Side::Slab);
                    let (pa, pb) = (self.pts[a], self.pts[b]);
                    let marker = assign_marker(side, pa, pb, segments, tol)?;
                    boundary.insert(EdgeKey::new(ids[a], ids[b]), marker);
                }
            }
        }
        Mesh::from_parts(vertices, quads, boundary)
    }
}

/// Along-coordinate interval of a boundary face.
pub fn along_interval(side: Side, a: Point, b: Point) -> (f64, f64) {
    let (u, v) = match side {
        Side::Left | Side::Right => (a.z, b.z),
        _ => (a.x, b.x),
    };
    (u.min(v), u.max(v))
}

fn assign_marker(
    side: Side,
    a: Point,
    b: Point,
    segments: &[BoundarySegment],
    tol: f64,
) -> Result<BoundaryMarker, MeshError> {
    let (lo, hi) = along_interval(side, a, b);
    let mut found: Option<(usize, &BoundarySegment)> = None;
    for (k, s) in segments.iter().enumerate().filter(|(_, s)| s.side == side) {
        let covers = s.lo() <= lo + tol && hi <= s.hi() + tol;
        let overlaps = lo < s.hi() - tol && hi > s.lo() + tol;
        if covers {
            if let Some((k0, _)) = found {
                return Err(MeshError::Boundary(format!(
                    "segments {k0} and {k} both cover the {} face [{lo}, {hi}]",
                    side.name()
                )));
            }
            found = Some((k, s));
        } else if overlaps {
            return Err(MeshError::Boundary(format!(
                "segment {k} ends inside the {} face [{lo}, {hi}]; add a mesh line there",
                side.name()
            )));
        }
    }
    Ok(match found {
        Some((k, s)) => BoundaryMarker { side, kind: s.condition.kind(), segment: Some(k as u16) },
        None => BoundaryMarker { side, kind: BoundaryKind::Neumann, segment: None },
    })
}
