//! Dual-weighted residual error estimation.
//!
//! The dual problem is the primal operator with the coefficient frozen at
//! `k(u_h)` (or optionally its full derivative); its right-hand side is the
//! linear part of the goal.
//! The dual weight `z - z_h` is approximated by `zbar - z_h`, where `zbar`
//! interpolates `z_h` by biquadratics on the parent patch of every cell.
//!
//! For flux goals the discrete dual drops from its interior trend to zero
//! across the first cell layer at the pinned goal faces. With
//! [`DualWeight::Lifted`] the pinned goal-face values are replaced by that
//! trend before interpolating, so the layer itself enters the weight.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fem::{
    edge_normal, edge_ref_point, shape, shape_grad, CoordMode, Discretization, SourceTerm, GAUSS5,
};
use crate::linalg::{sparse_lu_solve, CholeskySolver, LinalgError};
use crate::mesh::{bilinear_jacobian, bilinear_map, BoundaryKind, CellId, EdgeNeighbor, Point, Side};
use crate::problem::{BoundaryData, GoalSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorError {
    Linear(LinalgError),
    PointOutsideDomain(Point),
    ZeroEstimate,
}

impl fmt::Display for EstimatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorError::Linear(e) => write!(f, "dual solve failed: {e}"),
            EstimatorError::PointOutsideDomain(p) => {
                write!(f, "goal point ({}, {}) lies outside the domain", p.x, p.z)
            }
            EstimatorError::ZeroEstimate => f.write_str("estimate is zero; effectivity undefined"),
        }
    }
}

impl std::error::Error for EstimatorError {}

/// Dofs whose value is prescribed: Dirichlet dofs, active seepage dofs and
/// hanging dofs whose masters are all pinned.
pub fn pinned_dofs(disc: &Discretization<'_>, bd: &BoundaryData, active: &[bool]) -> Vec<bool> {
    let mut pinned: Vec<bool> = (0..disc.n_dofs()).map(|d| bd.fixed[d].is_some() || active[d]).collect();
    for (d, c) in disc.dofs.constraints.iter().enumerate() {
        if let Some(c) = c {
            pinned[d] = c.iter().all(|&(m, _)| pinned[m]);
        }
    }
    pinned
}

/// Faces a boundary goal integrates over: faces of the goal's boundary part
/// with both end dofs pinned. On the remaining faces of the part the exact
/// flux vanishes and the discrete one is only the residual of the no-flow
/// condition.
pub fn goal_faces(disc: &Discretization<'_>, pinned: &[bool], goal: &GoalSpec) -> Vec<(CellId, usize)> {
    let mesh = disc.mesh;
    mesh.boundary_faces()
        .into_iter()
        .filter(|(_, _, m)| match goal {
            GoalSpec::SeepageFlux => m.kind == BoundaryKind::Seepage,
            GoalSpec::WellFlux => m.side == Side::Left,
            GoalSpec::PointValue { .. } => false,
        })
        .filter(|&(c, e, _)| {
            let (a, b) = mesh.cell(c).edge(e);
            pinned[disc.dofs.vertex_dof[a]] && pinned[disc.dofs.vertex_dof[b]]
        })
        .map(|(c, e, _)| (c, e))
        .collect()
}

/// Visit quadrature points on the given faces: `(cell position, xi, eta,
/// point, outward normal, weight including the measure density)`.
fn for_face_points(
    disc: &Discretization<'_>,
    faces: &[(CellId, usize)],
    mut f: impl FnMut(usize, f64, f64, Point, [f64; 2], f64),
) {
    for &(c, e) in faces {
        let pos = disc.mesh.active_index(c).expect("active face cell");
        let pts = disc.cell_points(pos);
        let (nrm, len) = edge_normal(&pts, e);
        for &(s, w) in &GAUSS5 {
            let (xi, eta) = edge_ref_point(e, s);
            let p = bilinear_map(&pts, xi, eta);
            f(pos, xi, eta, p, nrm, w * len * disc.mode.weight(p));
        }
    }
}

/// Boundary-flux coefficient of the goal at a face point.
fn flux_coefficient(disc: &Discretization<'_>, goal: &GoalSpec, pos: usize, u_here: f64) -> f64 {
    let soil = disc.soil(pos);
    match goal {
        GoalSpec::SeepageFlux => soil.ks / soil.porosity,
        GoalSpec::WellFlux => soil.conductivity(u_here),
        GoalSpec::PointValue { .. } => 0.0,
    }
}

/// Goal value `J(u_h)`.
pub fn evaluate_goal(
    disc: &Discretization<'_>,
    u: &[f64],
    pinned: &[bool],
    goal: &GoalSpec,
) -> Result<f64, EstimatorError> {
    if let GoalSpec::PointValue { x, z } = *goal {
        let p = Point::new(x, z);
        return disc.eval_point(u, p).ok_or(EstimatorError::PointOutsideDomain(p));
    }
    let mut total = 0.0;
    for_face_points(disc, &goal_faces(disc, pinned, goal), |pos, xi, eta, _p, n, w| {
        let (uh, g) = disc.eval(pos, u, xi, eta);
        let c = flux_coefficient(disc, goal, pos, uh);
        total += -c * (g[0] * n[0] + (g[1] + 1.0) * n[1]) * w;
    });
    Ok(total)
}

/// Right-hand side `J'(u_h)[phi_i]` of the dual problem, condensed onto the
/// unconstrained dofs.
pub fn goal_rhs(
    disc: &Discretization<'_>,
    u: &[f64],
    pinned: &[bool],
    goal: &GoalSpec,
) -> Result<Vec<f64>, EstimatorError> {
    let mut rhs = vec![0.0; disc.n_dofs()];
    if let GoalSpec::PointValue { x, z } = *goal {
        let p = Point::new(x, z);
        let (c, xi, eta) = disc.mesh.locate(p).ok_or(EstimatorError::PointOutsideDomain(p))?;
        let pos = disc.mesh.active_index(c).expect("active");
        let fe = shape(xi, eta);
        disc.dofs.scatter_vec(&disc.dofs.cell_dofs[pos], &fe, &mut rhs);
        return Ok(rhs);
    }
    for_face_points(disc, &goal_faces(disc, pinned, goal), |pos, xi, eta, _p, n, w| {
        let (uh, _) = disc.eval(pos, u, xi, eta);
        let c = flux_coefficient(disc, goal, pos, uh);
        let (g, _) = shape_grad(&disc.cell_points(pos), xi, eta);
        let mut fe = [0.0; 4];
        for i in 0..4 {
            fe[i] = -c * (g[i][0] * n[0] + g[i][1] * n[1]) * w;
        }
        disc.dofs.scatter_vec(&disc.dofs.cell_dofs[pos], &fe, &mut rhs);
    });
    Ok(rhs)
}

/// Operator of the dual problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualOperator {
    /// `(k(u_h) grad v, grad z)`: the primal operator with its coefficient
    /// frozen at `u_h`.
    #[default]
    Frozen,
    /// The derivative of the primal operator at `u_h`, which adds
    /// `(k'(u_h) v grad(u_h + z), grad z)`. Not symmetric; solved by LU.
    Linearized,
}

impl DualOperator {
    pub fn name(self) -> &'static str {
        match self {
            DualOperator::Frozen => "frozen",
            DualOperator::Linearized => "linearized",
        }
    }
}

/// Dual solution `z_h`, zero on every pinned dof.
pub fn solve_dual(
    disc: &Discretization<'_>,
    source: &SourceTerm,
    pinned: &[bool],
    u: &[f64],
    goal: &GoalSpec,
    operator: DualOperator,
) -> Result<Vec<f64>, EstimatorError> {
    let mut rhs = goal_rhs(disc, u, pinned, goal)?;
    for d in 0..disc.n_dofs() {
        if disc.dofs.is_hanging(d) || pinned[d] {
            rhs[d] = 0.0;
        }
    }
    let mut z = match operator {
        DualOperator::Frozen => {
            let (mut a, _) = disc.assemble_picard(u, source);
            let fixed: Vec<Option<f64>> =
                (0..disc.n_dofs()).map(|d| (pinned[d] && !disc.dofs.is_hanging(d)).then_some(0.0)).collect();
            a.apply_fixed(&mut rhs, &fixed);
            let mut solver = CholeskySolver::new(disc.pattern.clone()).map_err(EstimatorError::Linear)?;
            solver.factorize(&a).map_err(EstimatorError::Linear)?;
            solver.solve(&rhs)
        }
        DualOperator::Linearized => {
            let entries = linearized_entries(disc, u, pinned);
            sparse_lu_solve(disc.n_dofs(), &entries, &rhs).map_err(EstimatorError::Linear)?
        }
    };
    for d in 0..disc.n_dofs() {
        if pinned[d] {
            z[d] = 0.0;
        }
    }
    disc.dofs.distribute(&mut z);
    Ok(z)
}

/// Triplets of the condensed linearized operator; row `i` tests with
/// `phi_i`. Pinned and hanging rows are replaced by the identity.
fn linearized_entries(disc: &Discretization<'_>, u: &[f64], pinned: &[bool]) -> Vec<(usize, usize, f64)> {
    let dofs = &disc.dofs;
    let identity_row = |d: usize| pinned[d] || dofs.is_hanging(d);
    let mut entries = Vec::with_capacity(16 * disc.mesh.n_active() + disc.n_dofs());
    let mut qps = Vec::with_capacity(25);
    for pos in 0..disc.mesh.n_active() {
        let pts = disc.cell_points(pos);
        let ul = disc.local_values(pos, u);
        crate::fem::cell_quadrature(&pts, &GAUSS5, &mut qps);
        let soil = disc.soil(pos);
        let mut ke = [[0.0; 4]; 4];
        for qp in &qps {
            let uh: f64 = (0..4).map(|i| qp.n[i] * ul[i]).sum();
            let mut gh = [0.0, 1.0];
            for i in 0..4 {
                gh[0] += qp.grad[i][0] * ul[i];
                gh[1] += qp.grad[i][1] * ul[i];
            }
            let (k, dk) = (soil.conductivity(uh), soil.d_conductivity(uh));
            let w = qp.jxw * disc.mode.weight(qp.p);
            for i in 0..4 {
                for j in 0..4 {
                    let gg = qp.grad[i][0] * qp.grad[j][0] + qp.grad[i][1] * qp.grad[j][1];
                    let adv = gh[0] * qp.grad[j][0] + gh[1] * qp.grad[j][1];
                    ke[i][j] += w * (k * gg + dk * qp.n[i] * adv);
                }
            }
        }
        let cd = dofs.cell_dofs[pos];
        for i in 0..4 {
            for j in 0..4 {
                for (r, wr) in dofs.expand(cd[i]).iter() {
                    if identity_row(r) {
                        continue;
                    }
                    for (c, wc) in dofs.expand(cd[j]).iter() {
                        entries.push((r, c, wr * wc * ke[i][j]));
                    }
                }
            }
        }
    }
    entries.extend((0..disc.n_dofs()).filter(|&d| identity_row(d)).map(|d| (d, d, 1.0)));
    entries
}

/// How `zbar` is built from `z_h`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualWeight {
    /// Interpolate the nodal values of `z_h`.
    Patch,
    /// Interpolate `z_h + (c / k(u_h)) psi_h`, where `psi_h` is the sum of
    /// hat functions of the pinned dofs on goal faces and `c` the goal's
    /// flux coefficient.
    #[default]
    Lifted,
}

impl DualWeight {
    pub fn name(self) -> &'static str {
        match self {
            DualWeight::Patch => "patch",
            DualWeight::Lifted => "lifted",
        }
    }
}

/// Nodal values `z_h + (c / k(u_h)) psi_h` used by [`DualWeight::Lifted`].
pub fn lifted_dual(disc: &Discretization<'_>, pinned: &[bool], u: &[f64], z: &[f64], goal: &GoalSpec) -> Vec<f64> {
    let mut lift = vec![0.0; z.len()];
    for (c, e) in goal_faces(disc, pinned, goal) {
        let pos = disc.mesh.active_index(c).expect("active face cell");
        let soil = disc.soil(pos);
        let (a, b) = disc.mesh.cell(c).edge(e);
        for v in [a, b] {
            let d = disc.dofs.vertex_dof[v];
            if !disc.dofs.is_hanging(d) {
                lift[d] = flux_coefficient(disc, goal, pos, u[d]) / soil.conductivity(u[d]);
            }
        }
    }
    disc.dofs.distribute(&mut lift);
    z.iter().zip(&lift).map(|(z, l)| z + l).collect()
}

/// Biquadratic Lagrange basis on the nodes `0, 1/2, 1`.
fn lagrange2(t: f64) -> [f64; 3] {
    [2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)]
}

/// Patch-wise biquadratic interpolant of a finite element function.
pub struct Reconstruction {
    /// Per active cell: nodal values on the parent patch and the offset of
    /// the cell inside it; `None` for cells without a parent.
    patches: Vec<Option<([[f64; 3]; 3], (f64, f64))>>,
    fallbacks: usize,
}

impl Reconstruction {
    pub fn new(disc: &Discretization<'_>, z: &[f64]) -> Reconstruction {
        let mesh = disc.mesh;
        let mut fallbacks = 0;
        let patches = mesh
            .active_cells()
            .iter()
            .map(|&c| {
                let Some(p) = mesh.cell(c).parent else {
                    fallbacks += 1;
                    return None;
                };
                let parent = mesh.cell(p);
                let kids = parent.children.expect("parent has children");
                let [v0, v1, v2, v3] = parent.vertices;
                let m01 = mesh.cell(kids[0]).vertices[1];
                let m12 = mesh.cell(kids[1]).vertices[2];
                let m23 = mesh.cell(kids[2]).vertices[3];
                let m30 = mesh.cell(kids[3]).vertices[0];
                let ctr = mesh.cell(kids[0]).vertices[2];
                // nodes[i][j] at parent reference (i/2, j/2)
                let ids = [[v0, m30, v3], [m01, ctr, m23], [v1, m12, v2]];
                let mut vals = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        let d = disc.dofs.vertex_dof[ids[i][j]];
                        if d == usize::MAX {
                            fallbacks += 1;
                            return None;
                        }
                        vals[i][j] = z[d];
                    }
                }
                let k = kids.iter().position(|&k| k == c).expect("child of parent");
                let off = [(0.0, 0.0), (0.5, 0.0), (0.5, 0.5), (0.0, 0.5)][k];
                Some((vals, off))
            })
            .collect();
        Reconstruction { patches, fallbacks }
    }

    /// Number of cells where the reconstruction fell back to `z_h`.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// `zbar` in an active cell at reference coordinates, or `None` when the
    /// cell has no patch.
    pub fn eval(&self, cell_pos: usize, xi: f64, eta: f64) -> Option<f64> {
        let (vals, off) = self.patches[cell_pos].as_ref()?;
        let lx = lagrange2(off.0 + 0.5 * xi);
        let ly = lagrange2(off.1 + 0.5 * eta);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += vals[i][j] * lx[i] * ly[j];
            }
        }
        Some(s)
    }

    /// Dual weight `zbar - z_h`.
    pub fn weight(&self, disc: &Discretization<'_>, z: &[f64], cell_pos: usize, xi: f64, eta: f64) -> f64 {
        match self.eval(cell_pos, xi, eta) {
            Some(zb) => zb - disc.eval(cell_pos, z, xi, eta).0,
            None => 0.0,
        }
    }
}

/// Primal flux `q = -k (grad u + e_z)` and its divergence at a point.
fn flux_and_divergence(disc: &Discretization<'_>, u: &[f64], pos: usize, xi: f64, eta: f64) -> ([f64; 2], f64) {
    let pts = disc.cell_points(pos);
    let ul = disc.local_values(pos, u);
    let (uh, g) = disc.eval(pos, u, xi, eta);
    let soil = disc.soil(pos);
    let k = soil.conductivity(uh);
    let dk = soil.d_conductivity(uh);
    let q = [-k * g[0], -k * (g[1] + 1.0)];
    // Hessian of u_h: J^{-T} (H_ref u - sum_k g_k H_ref x_k) J^{-1}
    let mixed = |v: [f64; 4]| v[0] - v[1] + v[2] - v[3];
    let du = mixed(ul);
    let dx = mixed([pts[0].x, pts[1].x, pts[2].x, pts[3].x]);
    let dz = mixed([pts[0].z, pts[1].z, pts[2].z, pts[3].z]);
    let c = du - g[0] * dx - g[1] * dz;
    let ji = bilinear_jacobian(&pts, xi, eta).inverse().0;
    // H = c * (row xi of J^{-1})^T (row eta of J^{-1}) + transpose
    let hxx = 2.0 * c * ji[0][0] * ji[1][0];
    let hzz = 2.0 * c * ji[0][1] * ji[1][1];
    let lap = hxx + hzz;
    let mut div = -(dk * (g[0] * g[0] + g[1] * (g[1] + 1.0)) + k * lap);
    if disc.mode == CoordMode::Axisymmetric {
        let p = bilinear_map(&pts, xi, eta);
        div += q[0] / p.x;
    }
    (q, div)
}

/// Signed cell indicators
/// `eta_K = (f - div q, w)_K + 1/2 ([q], w)_{interior faces} + (q.n, w)_{natural faces}`
/// with `w = zbar - z_h`. Faces on the Dirichlet boundary and seepage faces
/// with both end dofs pinned carry no term.
pub fn compute_indicators(
    disc: &Discretization<'_>,
    source: &SourceTerm,
    pinned: &[bool],
    u: &[f64],
    z: &[f64],
    rec: &Reconstruction,
) -> Vec<f64> {
    let mesh = disc.mesh;
    let mut eta = vec![0.0; mesh.n_active()];
    let mut qps = Vec::with_capacity(25);
    for (pos, &c) in mesh.active_cells().iter().enumerate() {
        if rec.patches[pos].is_none() {
            continue;
        }
        let pts = disc.cell_points(pos);
        crate::fem::cell_quadrature(&pts, &GAUSS5, &mut qps);
        let mut vol = 0.0;
        for qp in &qps {
            let (_, div) = flux_and_divergence(disc, u, pos, qp.xi, qp.eta);
            let w = rec.weight(disc, z, pos, qp.xi, qp.eta);
            vol += (source.eval(qp.p) - div) * w * qp.jxw * disc.mode.weight(qp.p);
        }
        let mut face = 0.0;
        for (e, nb) in mesh.neighbors(c).iter().enumerate() {
            let (nrm, len) = edge_normal(&pts, e);
            let mut add_segment = |s0: f64, s1: f64, other: &dyn Fn(f64) -> Option<(usize, f64, f64)>, factor: f64| {
                for &(t, wq) in &GAUSS5 {
                    let s = s0 + (s1 - s0) * t;
                    let (xi, et) = edge_ref_point(e, s);
                    let p = bilinear_map(&pts, xi, et);
                    let (qk, _) = flux_and_divergence(disc, u, pos, xi, et);
                    let mut jump = qk[0] * nrm[0] + qk[1] * nrm[1];
                    if let Some((npos, nxi, neta)) = other(s) {
                        let (qn, _) = flux_and_divergence(disc, u, npos, nxi, neta);
                        jump -= qn[0] * nrm[0] + qn[1] * nrm[1];
                    }
                    let w = rec.weight(disc, z, pos, xi, et);
                    face += factor * jump * w * wq * (s1 - s0) * len * disc.mode.weight(p);
                }
            };
            let idx = |n: CellId| mesh.active_index(n).expect("active neighbour");
            match *nb {
                EdgeNeighbor::Boundary(m) => {
                    let (a, b) = mesh.cell(c).edge(e);
                    let (da, db) = (disc.dofs.vertex_dof[a], disc.dofs.vertex_dof[b]);
                    let natural = match m.kind {
                        BoundaryKind::Dirichlet => false,
                        BoundaryKind::Neumann => true,
                        BoundaryKind::Seepage => !(pinned[da] && pinned[db]),
                    };
                    if natural {
                        add_segment(0.0, 1.0, &|_| None, 1.0);
                    }
                }
                EdgeNeighbor::Same(n, ne) => {
                    let np = idx(n);
                    add_segment(0.0, 1.0, &|s| {
                        let (a, b) = edge_ref_point(ne as usize, 1.0 - s);
                        Some((np, a, b))
                    }, 0.5);
                }
                EdgeNeighbor::Finer(f) => {
                    for (h, &(n, ne)) in f.iter().enumerate() {
                        let np = idx(n);
                        let s0 = 0.5 * h as f64;
                        add_segment(s0, s0 + 0.5, &|s| {
                            let t = 2.0 * (s - s0);
                            let (a, b) = edge_ref_point(ne as usize, 1.0 - t);
                            Some((np, a, b))
                        }, 0.5);
                    }
                }
                EdgeNeighbor::Coarser(n, ne, half) => {
                    let np = idx(n);
                    add_segment(0.0, 1.0, &|s| {
                        let sc = if half == 0 { 0.5 * (1.0 - s) } else { 1.0 - 0.5 * s };
                        let (a, b) = edge_ref_point(ne as usize, sc);
                        Some((np, a, b))
                    }, 0.5);
                }
            }
        }
        eta[pos] = vol + face;
    }
    eta
}

/// Everything the estimator produces for one primal solution.
pub struct Estimate {
    pub goal: f64,
    pub dual: Vec<f64>,
    pub indicators: Vec<f64>,
    pub estimate: f64,
    pub fallbacks: usize,
}

/// Estimator settings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EstimatorOptions {
    pub weight: DualWeight,
    pub operator: DualOperator,
}

pub fn estimate(
    disc: &Discretization<'_>,
    source: &SourceTerm,
    bd: &BoundaryData,
    u: &[f64],
    active: &[bool],
    goal: &GoalSpec,
    opts: EstimatorOptions,
) -> Result<Estimate, EstimatorError> {
    let pinned = pinned_dofs(disc, bd, active);
    let j = evaluate_goal(disc, u, &pinned, goal)?;
    let z = solve_dual(disc, source, &pinned, u, goal, opts.operator)?;
    let rec = match opts.weight {
        DualWeight::Patch => Reconstruction::new(disc, &z),
        DualWeight::Lifted => Reconstruction::new(disc, &lifted_dual(disc, &pinned, u, &z, goal)),
    };
    let indicators = compute_indicators(disc, source, &pinned, u, &z, &rec);
    let estimate = indicators.iter().sum();
    Ok(Estimate { goal: j, dual: z, indicators, estimate, fallbacks: rec.fallbacks() })
}

/// `(J_ref - J(u_h)) / estimate`.
pub fn effectivity(j_ref: f64, j_h: f64, estimate: f64) -> Result<f64, EstimatorError> {
    let err = j_ref - j_h;
    if estimate == 0.0 {
        if err == 0.0 {
            return Ok(1.0);
        }
        return Err(EstimatorError::ZeroEstimate);
    }
    Ok(err / estimate)
}
