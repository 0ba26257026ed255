//! Continuous bilinear finite elements on the active cells of a [`Mesh`].
//!
//! Every active vertex carries a degree of freedom. Hanging vertices are
//! constrained to the average of their two masters: element contributions
//! are redistributed to the masters when assembled, the hanging rows keep a
//! unit diagonal, and solutions are completed with [`DofMap::distribute`].

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::constitutive::{LayeredMedium, SoilError, SoilModel};
use crate::linalg::{Pattern, SymMatrix};
use crate::mesh::{bilinear_jacobian, bilinear_map, CellId, Mesh, Point, VertexId};

/// Planar flow, or flow symmetric about the axis `x = 0` with `x` the radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    #[default]
    Cartesian,
    Axisymmetric,
}

impl CoordMode {
    /// Measure density: `1` or `2 pi r`.
    pub fn weight(self, p: Point) -> f64 {
        match self {
            CoordMode::Cartesian => 1.0,
            CoordMode::Axisymmetric => 2.0 * PI * p.x,
        }
    }
}

/// Volumetric source `f`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceTerm {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `value` inside the disk, zero outside.
    Disk { x: f64, z: f64, radius: f64, value: f64 },
}

impl SourceTerm {
    pub fn eval(&self, p: Point) -> f64 {
        match *self {
            SourceTerm::Zero => 0.0,
            SourceTerm::Constant { value } => value,
            SourceTerm::Disk { x, z, radius, value } => {
                if (p.x - x).hypot(p.z - z) <= radius {
                    value
                } else {
                    0.0
                }
            }
        }
    }
}

/// Gauss–Legendre rules on `[0, 1]` as `(point, weight)`.
pub const GAUSS2: [(f64, f64); 2] = [(0.211_324_865_405_187_1, 0.5), (0.788_675_134_594_812_9, 0.5)];

pub const GAUSS5: [(f64, f64); 5] = [
    (0.046_910_077_030_668_00, 0.118_463_442_528_094_54),
    (0.230_765_344_947_158_45, 0.239_314_335_249_683_23),
    (0.5, 0.284_444_444_444_444_44),
    (0.769_234_655_052_841_6, 0.239_314_335_249_683_23),
    (0.953_089_922_969_332, 0.118_463_442_528_094_54),
];

pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

pub fn shape_grad_ref(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    [[-(1.0 - eta), -(1.0 - xi)], [1.0 - eta, -xi], [eta, xi], [-eta, 1.0 - xi]]
}

/// Shape data at one quadrature point.
#[derive(Clone, Copy, Debug, Default)]
pub struct QuadPoint {
    pub p: Point,
    /// `|det J| * weight`, without the coordinate measure density.
    pub jxw: f64,
    pub n: [f64; 4],
    pub grad: [[f64; 2]; 4],
    pub xi: f64,
    pub eta: f64,
}

/// Physical gradients of the shape functions at `(xi, eta)`.
pub fn shape_grad(pts: &[Point; 4], xi: f64, eta: f64) -> ([[f64; 2]; 4], f64) {
    let j = bilinear_jacobian(pts, xi, eta);
    let det = j.det();
    let ji = j.inverse().0;
    let gr = shape_grad_ref(xi, eta);
    let mut g = [[0.0; 2]; 4];
    for i in 0..4 {
        // grad_x = J^{-T} grad_xi
        g[i][0] = ji[0][0] * gr[i][0] + ji[1][0] * gr[i][1];
        g[i][1] = ji[0][1] * gr[i][0] + ji[1][1] * gr[i][1];
    }
    (g, det)
}

/// Tensor-product quadrature on a cell.
pub fn cell_quadrature(pts: &[Point; 4], rule: &[(f64, f64)], out: &mut Vec<QuadPoint>) {
    out.clear();
    for &(eta, we) in rule {
        for &(xi, wx) in rule {
            let (grad, det) = shape_grad(pts, xi, eta);
            out.push(QuadPoint {
                p: bilinear_map(pts, xi, eta),
                jxw: det * wx * we,
                n: shape(xi, eta),
                grad,
                xi,
                eta,
            });
        }
    }
}

/// Reference coordinates of a point on local edge `e` at fraction `s`
/// measured along the edge direction.
pub fn edge_ref_point(e: usize, s: f64) -> (f64, f64) {
    match e {
        0 => (s, 0.0),
        1 => (1.0, s),
        2 => (1.0 - s, 1.0),
        _ => (0.0, 1.0 - s),
    }
}

/// Outward unit normal and length of local edge `e`.
pub fn edge_normal(pts: &[Point; 4], e: usize) -> ([f64; 2], f64) {
    let (a, b) = (pts[e], pts[(e + 1) % 4]);
    let (tx, tz) = (b.x - a.x, b.z - a.z);
    let len = tx.hypot(tz);
    ([tz / len, -tx / len], len)
}

/// Degree-of-freedom numbering for the current active cells.
#[derive(Clone, Debug)]
pub struct DofMap {
    generation: u64,
    /// Dof of each mesh vertex, `usize::MAX` when the vertex is not active.
    pub vertex_dof: Vec<usize>,
    pub dof_vertex: Vec<VertexId>,
    /// Constraint of each hanging dof in terms of unconstrained dofs.
    pub constraints: Vec<Option<Vec<(usize, f64)>>>,
    /// Dofs of each active cell, in [`Mesh::active_cells`] order.
    pub cell_dofs: Vec<[usize; 4]>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> DofMap {
        let nv = mesh.vertices().len();
        let mut vertex_dof = vec![usize::MAX; nv];
        let dof_vertex: Vec<VertexId> = mesh.active_vertices().to_vec();
        for (d, &v) in dof_vertex.iter().enumerate() {
            vertex_dof[v] = d;
        }
        let mut direct: Vec<Option<[VertexId; 2]>> = vec![None; nv];
        for h in mesh.hanging_constraints() {
            direct[h.vertex] = Some(h.masters);
        }
        fn resolve(v: VertexId, direct: &[Option<[VertexId; 2]>], w: f64, out: &mut Vec<(VertexId, f64)>) {
            match direct[v] {
                Some([a, b]) => {
                    resolve(a, direct, 0.5 * w, out);
                    resolve(b, direct, 0.5 * w, out);
                }
                None => out.push((v, w)),
            }
        }
        let constraints = dof_vertex
            .iter()
            .map(|&v| {
                direct[v].map(|_| {
                    let mut c = Vec::new();
                    resolve(v, &direct, 1.0, &mut c);
                    let mut merged: Vec<(usize, f64)> = Vec::new();
                    for (mv, w) in c {
                        let d = vertex_dof[mv];
                        match merged.iter_mut().find(|e| e.0 == d) {
                            Some(e) => e.1 += w,
                            None => merged.push((d, w)),
                        }
                    }
                    merged
                })
            })
            .collect();
        let cell_dofs = mesh
            .active_cells()
            .iter()
            .map(|&c| mesh.cell(c).vertices.map(|v| vertex_dof[v]))
            .collect();
        DofMap { generation: mesh.generation(), vertex_dof, dof_vertex, constraints, cell_dofs }
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_vertex.len()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_hanging(&self, d: usize) -> bool {
        self.constraints[d].is_some()
    }

    /// Expansion of a dof into unconstrained dofs with weights.
    pub fn expand(&self, d: usize) -> Expansion<'_> {
        match &self.constraints[d] {
            Some(c) => Expansion::Many(c),
            None => Expansion::One(d),
        }
    }

    /// Overwrite hanging values with the constrained combination.
    pub fn distribute(&self, x: &mut [f64]) {
        for (d, c) in self.constraints.iter().enumerate() {
            if let Some(c) = c {
                x[d] = c.iter().map(|&(m, w)| w * x[m]).sum();
            }
        }
    }

    /// Sparsity pattern of the condensed operator.
    pub fn pattern(&self) -> Pattern {
        let n = self.n_dofs();
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut exp = Vec::with_capacity(8);
        for dofs in &self.cell_dofs {
            exp.clear();
            for &d in dofs {
                match self.expand(d) {
                    Expansion::One(d) => exp.push(d),
                    Expansion::Many(c) => exp.extend(c.iter().map(|e| e.0)),
                }
            }
            for &i in &exp {
                rows[i].extend_from_slice(&exp);
            }
        }
        Pattern::from_rows(rows)
    }

    /// Add a local element matrix and vector into the condensed system.
    pub fn scatter(
        &self,
        dofs: &[usize; 4],
        ke: &[[f64; 4]; 4],
        fe: &[f64; 4],
        a: &mut SymMatrix,
        b: &mut [f64],
    ) {
        let mut lists: [[(usize, f64); 4]; 4] = [[(0, 0.0); 4]; 4];
        let mut lens = [0usize; 4];
        for (i, &d) in dofs.iter().enumerate() {
            match self.expand(d) {
                Expansion::One(d) => {
                    lists[i][0] = (d, 1.0);
                    lens[i] = 1;
                }
                Expansion::Many(c) => {
                    for (k, &e) in c.iter().take(4).enumerate() {
                        lists[i][k] = e;
                    }
                    lens[i] = c.len().min(4);
                }
            }
        }
        for i in 0..4 {
            for &(gi, wi) in &lists[i][..lens[i]] {
                b[gi] += wi * fe[i];
                for j in 0..4 {
                    let kij = ke[i][j] * wi;
                    for &(gj, wj) in &lists[j][..lens[j]] {
                        a.add(gi, gj, kij * wj);
                    }
                }
            }
        }
    }

    /// Linear functional `(phi_i)` with hanging contributions moved to masters.
    pub fn scatter_vec(&self, dofs: &[usize; 4], fe: &[f64; 4], b: &mut [f64]) {
        for (i, &d) in dofs.iter().enumerate() {
            match self.expand(d) {
                Expansion::One(d) => b[d] += fe[i],
                Expansion::Many(c) => {
                    for &(m, w) in c {
                        b[m] += w * fe[i];
                    }
                }
            }
        }
    }

    /// Hanging rows get a unit diagonal so the condensed matrix stays
    /// nonsingular; their values come from [`DofMap::distribute`].
    pub fn finish_hanging(&self, a: &mut SymMatrix, b: &mut [f64]) {
        for d in 0..self.n_dofs() {
            if self.is_hanging(d) {
                a.add(d, d, 1.0);
                b[d] = 0.0;
            }
        }
    }
}

pub enum Expansion<'a> {
    One(usize),
    Many(&'a [(usize, f64)]),
}

impl<'a> Expansion<'a> {
    /// `(dof, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        let (one, many): (Option<(usize, f64)>, &'a [(usize, f64)]) = match *self {
            Expansion::One(d) => (Some((d, 1.0)), &[]),
            Expansion::Many(c) => (None, c),
        };
        one.into_iter().chain(many.iter().copied())
    }
}

/// Mesh-dependent data shared by assembly routines.
pub struct Discretization<'m> {
    pub mesh: &'m Mesh,
    pub dofs: DofMap,
    pub pattern: Arc<Pattern>,
    pub mode: CoordMode,
    /// Soil layer of each active cell.
    pub cell_layer: Vec<usize>,
    pub medium: LayeredMedium,
}

impl<'m> Discretization<'m> {
    pub fn new(mesh: &'m Mesh, medium: &LayeredMedium, mode: CoordMode) -> Result<Self, SoilError> {
        let dofs = DofMap::new(mesh);
        let pattern = Arc::new(dofs.pattern());
        let mut cell_layer = Vec::with_capacity(mesh.n_active());
        for &c in mesh.active_cells() {
            let k = medium.layer_index(mesh.cell_center(c).z)?;
            let l = &medium.layers()[k];
            let pts = mesh.cell_points(c);
            let span = l.z_high - l.z_low;
            if pts.iter().any(|p| p.z < l.z_low - 1e-9 * span || p.z > l.z_high + 1e-9 * span) {
                return Err(SoilError(format!(
                    "cell {c} straddles a layer interface; the mesh must align with interfaces"
                )));
            }
            cell_layer.push(k);
        }
        Ok(Discretization { mesh, dofs, pattern, mode, cell_layer, medium: medium.clone() })
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs()
    }

    pub fn soil(&self, cell_pos: usize) -> &SoilModel {
        &self.medium.layers()[self.cell_layer[cell_pos]].soil
    }

    pub fn cell_points(&self, cell_pos: usize) -> [Point; 4] {
        self.mesh.cell_points(self.mesh.active_cells()[cell_pos])
    }

    pub fn local_values(&self, cell_pos: usize, u: &[f64]) -> [f64; 4] {
        self.dofs.cell_dofs[cell_pos].map(|d| u[d])
    }

    /// Assemble `(k grad phi_j, grad phi_i)` and `(f, phi_i) - (k e_z, grad phi_i)`
    /// with `k` evaluated from `u_prev` at each quadrature point.
    pub fn assemble_picard(&self, u_prev: &[f64], source: &SourceTerm) -> (SymMatrix, Vec<f64>) {
        let mode = self.mode;
        self.assemble_weighted(u_prev, source, move |p| mode.weight(p))
    }

    /// Assembly with an explicit measure density; exposed for consistency
    /// checks between coordinate modes.
    #[doc(hidden)]
    pub fn assemble_weighted(
        &self,
        u_prev: &[f64],
        source: &SourceTerm,
        weight: impl Fn(Point) -> f64,
    ) -> (SymMatrix, Vec<f64>) {
        self.assemble_with(source, weight, |pos, qp, ul| {
            let u = (0..4).map(|i| qp.n[i] * ul[i]).sum::<f64>();
            self.soil(pos).conductivity(u)
        }, u_prev)
    }

    /// Assemble with unit conductivity, no gravity and no source (for the
    /// harmonic lifting of boundary data).
    pub fn assemble_laplace(&self) -> SymMatrix {
        let n = self.n_dofs();
        let mut a = SymMatrix::zeros(self.pattern.clone());
        let mut b = vec![0.0; n];
        let mut qps = Vec::with_capacity(25);
        for pos in 0..self.mesh.n_active() {
            let pts = self.cell_points(pos);
            cell_quadrature(&pts, &GAUSS2, &mut qps);
            let mut ke = [[0.0; 4]; 4];
            for qp in &qps {
                let w = qp.jxw * self.mode.weight(qp.p);
                for i in 0..4 {
                    for j in 0..4 {
                        ke[i][j] += w * (qp.grad[i][0] * qp.grad[j][0] + qp.grad[i][1] * qp.grad[j][1]);
                    }
                }
            }
            self.dofs.scatter(&self.dofs.cell_dofs[pos], &ke, &[0.0; 4], &mut a, &mut b);
        }
        self.dofs.finish_hanging(&mut a, &mut b);
        a
    }

    fn assemble_with(
        &self,
        source: &SourceTerm,
        weight: impl Fn(Point) -> f64,
        coef: impl Fn(usize, &QuadPoint, &[f64; 4]) -> f64,
        u_prev: &[f64],
    ) -> (SymMatrix, Vec<f64>) {
        let n = self.n_dofs();
        let mut a = SymMatrix::zeros(self.pattern.clone());
        let mut b = vec![0.0; n];
        let mut qps = Vec::with_capacity(25);
        for pos in 0..self.mesh.n_active() {
            let pts = self.cell_points(pos);
            let ul = self.local_values(pos, u_prev);
            cell_quadrature(&pts, &GAUSS5, &mut qps);
            let mut ke = [[0.0; 4]; 4];
            let mut fe = [0.0; 4];
            for qp in &qps {
                let w = qp.jxw * weight(qp.p);
                let k = coef(pos, qp, &ul);
                let f = source.eval(qp.p);
                for i in 0..4 {
                    let gi = qp.grad[i];
                    fe[i] += w * (f * qp.n[i] - k * gi[1]);
                    for j in 0..4 {
                        let gj = qp.grad[j];
                        ke[i][j] += w * k * (gi[0] * gj[0] + gi[1] * gj[1]);
                    }
                }
            }
            self.dofs.scatter(&self.dofs.cell_dofs[pos], &ke, &fe, &mut a, &mut b);
        }
        self.dofs.finish_hanging(&mut a, &mut b);
        (a, b)
    }

    /// Nodal reactions `A u - b` of an assembled, not yet constrained,
    /// system. Entry `q` equals minus the
    /// outward boundary flux tested with the hat function of `q`.
    pub fn reactions(a: &SymMatrix, b: &[f64], u: &[f64]) -> Vec<f64> {
        let mut r = a.mul_vec(u);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri -= bi;
        }
        r
    }

    /// Interpolate a function at the dofs (hanging dofs follow their masters).
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        let mut x: Vec<f64> = self.dofs.dof_vertex.iter().map(|&v| f(self.mesh.vertex(v))).collect();
        self.dofs.distribute(&mut x);
        x
    }

    /// Value and gradient of the finite element function `u` in an active
    /// cell at reference coordinates.
    pub fn eval(&self, cell_pos: usize, u: &[f64], xi: f64, eta: f64) -> (f64, [f64; 2]) {
        let pts = self.cell_points(cell_pos);
        let ul = self.local_values(cell_pos, u);
        let n = shape(xi, eta);
        let (g, _) = shape_grad(&pts, xi, eta);
        let mut val = 0.0;
        let mut grad = [0.0; 2];
        for i in 0..4 {
            val += n[i] * ul[i];
            grad[0] += g[i][0] * ul[i];
            grad[1] += g[i][1] * ul[i];
        }
        (val, grad)
    }

    pub fn eval_point(&self, u: &[f64], p: Point) -> Option<f64> {
        let (c, xi, eta) = self.mesh.locate(p)?;
        let pos = self.mesh.active_index(c)?;
        Some(self.eval(pos, u, xi, eta).0)
    }

    /// `(integral of (u - exact)^2, integral of exact^2)` in the mode's measure.
    pub fn l2_error(&self, u: &[f64], exact: impl Fn(Point) -> f64) -> (f64, f64) {
        let mut qps = Vec::with_capacity(25);
        let (mut e2, mut x2) = (0.0, 0.0);
        for pos in 0..self.mesh.n_active() {
            let pts = self.cell_points(pos);
            let ul = self.local_values(pos, u);
            cell_quadrature(&pts, &GAUSS5, &mut qps);
            for qp in &qps {
                let w = qp.jxw * self.mode.weight(qp.p);
                let uh: f64 = (0..4).map(|i| qp.n[i] * ul[i]).sum();
                let ex = exact(qp.p);
                e2 += w * (uh - ex) * (uh - ex);
                x2 += w * ex * ex;
            }
        }
        (e2.sqrt(), x2.sqrt())
    }

    /// L2 norm of a finite element function (2-point rule, exact for
    /// bilinears on parallelograms).
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        let mut qps = Vec::with_capacity(4);
        let mut s = 0.0;
        for pos in 0..self.mesh.n_active() {
            let pts = self.cell_points(pos);
            let ul = self.local_values(pos, u);
            cell_quadrature(&pts, &GAUSS2, &mut qps);
            for qp in &qps {
                let uh: f64 = (0..4).map(|i| qp.n[i] * ul[i]).sum();
                s += qp.jxw * self.mode.weight(qp.p) * uh * uh;
            }
        }
        s.sqrt()
    }

    /// Outward flux `integral of -k(u) grad(u + z) . n` over the given faces
    /// `(cell, local edge)`, in the mode's measure.
    pub fn boundary_flux(&self, u: &[f64], faces: &[(CellId, usize)]) -> f64 {
        let mut total = 0.0;
        for &(c, e) in faces {
            let pos = self.mesh.active_index(c).expect("active face cell");
            let pts = self.cell_points(pos);
            let (nrm, len) = edge_normal(&pts, e);
            let ul = self.local_values(pos, u);
            for &(s, w) in &GAUSS5 {
                let (xi, eta) = edge_ref_point(e, s);
                let p = bilinear_map(&pts, xi, eta);
                let (g, _) = shape_grad(&pts, xi, eta);
                let n = shape(xi, eta);
                let uh: f64 = (0..4).map(|i| n[i] * ul[i]).sum();
                let gx: f64 = (0..4).map(|i| g[i][0] * ul[i]).sum();
                let gz: f64 = (0..4).map(|i| g[i][1] * ul[i]).sum();
                let k = self.soil(pos).conductivity(uh);
                let qn = -k * (gx * nrm[0] + (gz + 1.0) * nrm[1]);
                total += w * len * self.mode.weight(p) * qn;
            }
        }
        total
    }
}
