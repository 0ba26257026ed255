//! Picard iteration with an active-set treatment of the seepage face.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fem::{CoordMode, Discretization, SourceTerm};
use crate::linalg::{CholeskySolver, LinalgError};
use crate::mesh::Point;
use crate::problem::BoundaryData;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop when the relative L2 increment falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation factor for the Picard update.
    pub damping: f64,
    /// A seepage dof that has switched this many times is frozen.
    pub max_flips: u32,
    /// Threshold on the outward nodal flux for releasing a pinned dof;
    /// derived from the problem scale when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flux_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { tol: 1e-10, max_iter: 200, damping: 1.0, max_flips: 10, flux_tol: None }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(format!("tolerance must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return Err("max_iter must be at least 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if let Some(t) = self.flux_tol {
            if !(t.is_finite() && t >= 0.0) {
                return Err(format!("flux tolerance must be non-negative, got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub increment: f64,
    pub active: usize,
    pub switched: usize,
    pub damping: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Dofs that hit the switching cap.
    pub frozen: Vec<usize>,
}

impl SolveReport {
    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }

    pub fn final_increment(&self) -> f64 {
        self.iterations.last().map_or(f64::INFINITY, |r| r.increment)
    }

    /// Iteration log as CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,increment,active,switched,damping\n");
        for r in &self.iterations {
            s.push_str(&format!(
                "{},{:.16e},{},{},{}\n",
                r.iteration, r.increment, r.active, r.switched, r.damping
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct PicardSolution {
    pub u: Vec<f64>,
    /// Per dof: pinned to zero on the seepage face.
    pub active: Vec<bool>,
    pub report: SolveReport,
}

impl PicardSolution {
    pub fn active_dofs(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&d| self.active[d]).collect()
    }
}

#[derive(Debug)]
pub enum SolveError {
    /// Iteration limit reached; the last iterate is returned.
    NotConverged(Box<PicardSolution>),
    /// The linear system lost positive definiteness.
    Linear { iteration: usize, dof: Option<usize>, location: Option<Point>, source: LinalgError },
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::NotConverged(s) => write!(
                f,
                "Picard iteration did not converge in {} iterations (last increment {:.3e})",
                s.report.n_iterations(),
                s.report.final_increment()
            ),
            SolveError::Linear { iteration, dof, location, source } => {
                write!(f, "linear solve failed in iteration {iteration}: {source}")?;
                if let (Some(d), Some(p)) = (dof, location) {
                    write!(f, " (dof {d} at x = {}, z = {})", p.x, p.z)?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for SolveError {}

/// Default release threshold: a tiny fraction of the largest flux the
/// problem can carry.
pub fn default_flux_tol(disc: &Discretization<'_>) -> f64 {
    let pts = disc.mesh.vertices();
    let (mut zlo, mut zhi, mut xhi) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for p in pts {
        zlo = zlo.min(p.z);
        zhi = zhi.max(p.z);
        xhi = xhi.max(p.x.abs());
    }
    let scale = match disc.mode {
        CoordMode::Cartesian => 1.0,
        CoordMode::Axisymmetric => 2.0 * std::f64::consts::PI * xhi,
    };
    1e-12 * disc.medium.max_ks() * (zhi - zlo) * scale
}

/// One active-set update. A free seepage dof with positive head is pinned;
/// a pinned dof whose outward nodal flux `-r_q` is below `-flux_tol` is
/// released. `reactions` are `A u - b` from the last solve; without them
/// nothing is released. Dofs in `frozen` keep their state. Returns the
/// dofs that switched.
pub fn update_active_set(
    seepage: &[usize],
    u: &[f64],
    reactions: Option<&[f64]>,
    active: &mut [bool],
    flux_tol: f64,
    frozen: &[bool],
) -> Vec<usize> {
    let mut switched = Vec::new();
    for &d in seepage {
        if frozen[d] {
            continue;
        }
        if !active[d] && u[d] > 0.0 {
            active[d] = true;
            switched.push(d);
        } else if active[d] {
            if let Some(r) = reactions {
                if -r[d] < -flux_tol {
                    active[d] = false;
                    switched.push(d);
                }
            }
        }
    }
    switched
}

/// Solve the seepage problem by Picard iteration starting from `u0` with
/// initial active set `active0`.
pub fn picard_solve(
    disc: &Discretization<'_>,
    source: &SourceTerm,
    bd: &BoundaryData,
    cfg: &SolverConfig,
    u0: &[f64],
    active0: &[bool],
) -> Result<PicardSolution, SolveError> {
    let n = disc.n_dofs();
    let flux_tol = cfg.flux_tol.unwrap_or_else(|| default_flux_tol(disc));
    let mut solver = CholeskySolver::new(disc.pattern.clone()).map_err(|e| SolveError::Linear {
        iteration: 0,
        dof: None,
        location: None,
        source: e,
    })?;
    let mut u = u0.to_vec();
    let mut active = active0.to_vec();
    let mut reactions: Option<Vec<f64>> = None;
    let mut flips = vec![0u32; n];
    let mut frozen = vec![false; n];
    let mut report = SolveReport::default();
    let mut omega = cfg.damping;
    let mut growth = 0;
    let mut prev_inc = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let switched = if it > 1 {
            update_active_set(&bd.seepage, &u, reactions.as_deref(), &mut active, flux_tol, &frozen)
        } else {
            Vec::new()
        };
        for &d in &switched {
            flips[d] += 1;
            if flips[d] >= cfg.max_flips {
                frozen[d] = true;
            }
        }
        let (a_full, b_full) = disc.assemble_picard(&u, source);
        let mut a = a_full.clone();
        let mut b = b_full.clone();
        let mut fixed = bd.fixed.clone();
        for &d in &bd.seepage {
            if active[d] {
                fixed[d] = Some(0.0);
            }
        }
        a.apply_fixed(&mut b, &fixed);
        if let Err(e) = solver.factorize(&a) {
            let dof = match e {
                LinalgError::NotPositiveDefinite { dof } => Some(dof),
                _ => None,
            };
            return Err(SolveError::Linear {
                iteration: it,
                dof,
                location: dof.map(|d| disc.mesh.vertex(disc.dofs.dof_vertex[d])),
                source: e,
            });
        }
        let mut un = solver.solve(&b);
        for (d, g) in fixed.iter().enumerate() {
            match g {
                Some(g) => un[d] = *g,
                None if omega < 1.0 => un[d] = (1.0 - omega) * u[d] + omega * un[d],
                None => {}
            }
        }
        disc.dofs.distribute(&mut un);
        let diff: Vec<f64> = un.iter().zip(&u).map(|(a, b)| a - b).collect();
        let norm = disc.l2_norm(&un);
        let dn = disc.l2_norm(&diff);
        let inc = if norm > 0.0 { dn / norm } else { dn };
        reactions = Some(crate::fem::Discretization::reactions(&a_full, &b_full, &un));
        u = un;
        report.iterations.push(IterationRecord {
            iteration: it,
            increment: inc,
            active: active.iter().filter(|&&a| a).count(),
            switched: switched.len(),
            damping: omega,
        });
        if inc <= cfg.tol {
            let mut probe = active.clone();
            let pending = update_active_set(&bd.seepage, &u, reactions.as_deref(), &mut probe, flux_tol, &frozen);
            if pending.is_empty() {
                report.converged = true;
                report.frozen = (0..n).filter(|&d| frozen[d]).collect();
                return Ok(PicardSolution { u, active, report });
            }
        }
        if inc > prev_inc && switched.is_empty() {
            growth += 1;
        } else {
            growth = 0;
        }
        if growth >= 3 && omega >= 1.0 {
            omega = 0.5;
            growth = 0;
        }
        prev_inc = inc;
    }
    report.frozen = (0..n).filter(|&d| frozen[d]).collect();
    Err(SolveError::NotConverged(Box::new(PicardSolution { u, active, report })))
}

/// Largest normalised violation of `u <= 0`, `q.n >= 0`, `u q.n = 0` over
/// the seepage dofs, with fluxes taken as nodal reactions under `k(u)`.
/// Reactions below the release threshold [`default_flux_tol`] count as zero.
pub fn complementarity_residual(
    disc: &Discretization<'_>,
    source: &SourceTerm,
    bd: &BoundaryData,
    u: &[f64],
    active: &[bool],
) -> f64 {
    if bd.seepage.is_empty() {
        return 0.0;
    }
    let (a, b) = disc.assemble_picard(u, source);
    let r = Discretization::reactions(&a, &b, u);
    let noise = default_flux_tol(disc);
    let flux = |d: usize| if r[d].abs() <= noise { 0.0 } else { -r[d] };
    let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fmax = bd.seepage.iter().fold(0.0f64, |m, &d| m.max(flux(d).abs()));
    let us = if umax > 0.0 { umax } else { 1.0 };
    let fs = if fmax > 0.0 { fmax } else { 1.0 };
    let mut worst = 0.0f64;
    for &d in &bd.seepage {
        let q = flux(d);
        worst = worst.max(u[d].max(0.0) / us);
        worst = worst.max((-q).max(0.0) / fs);
        if active[d] && u[d] != 0.0 {
            worst = worst.max(u[d].abs() / us);
        }
        worst = worst.max((u[d] * q).abs() / (us * fs));
    }
    worst
}

/// Height of the highest active seepage dof.
pub fn exit_point(disc: &Discretization<'_>, bd: &BoundaryData, active: &[bool]) -> Option<f64> {
    bd.seepage
        .iter()
        .filter(|&&d| active[d])
        .map(|&d| disc.mesh.vertex(disc.dofs.dof_vertex[d]).z)
        .fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.max(z))))
}

/// Active part of the seepage face split into boundary-connected pieces.
/// Two active dofs belong together when a seepage face joins them and both
/// ends are pinned. Each component is a sorted list of seepage dofs.
pub fn seepage_components(disc: &Discretization<'_>, bd: &BoundaryData, active: &[bool]) -> Vec<Vec<usize>> {
    let pinned = crate::estimator::pinned_dofs(disc, bd, active);
    let n = disc.n_dofs();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for &(c, e) in &bd.seepage_faces {
        let (a, b) = disc.mesh.cell(c).edge(e);
        let (da, db) = (disc.dofs.vertex_dof[a], disc.dofs.vertex_dof[b]);
        if pinned[da] && pinned[db] {
            let (ra, rb) = (find(&mut parent, da), find(&mut parent, db));
            parent[ra] = rb;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &d in &bd.seepage {
        if active[d] {
            let r = find(&mut parent, d);
            groups.entry(r).or_default().push(d);
        }
    }
    groups.into_values().collect()
}
