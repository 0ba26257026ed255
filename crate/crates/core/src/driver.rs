//! Adaptive solve–estimate–mark–refine loop.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimator::{estimate, pinned_dofs, DualOperator, DualWeight, Estimate, EstimatorError, EstimatorOptions};
use crate::fem::Discretization;
use crate::mesh::{dorfler_mark, Mesh, MeshError};
use crate::problem::{initial_guess, BoundaryData, ProblemConfig, ProblemError};
use crate::solver::{picard_solve, PicardSolution, SolveError, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// Dörfler bulk fraction.
    pub theta: f64,
    pub max_cycles: usize,
    /// A refinement that would exceed this many dofs ends the loop.
    pub max_dofs: usize,
    /// Refine every cell instead of marking.
    pub uniform: bool,
    pub coarsen: bool,
    /// Cells with `|eta_K| < coarsen_fraction * mean |eta|` may be merged.
    pub coarsen_fraction: f64,
    /// Stop once `|estimate|` drops below this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_tol: Option<f64>,
    /// Refine the initial mesh once so that every cell has a parent patch.
    pub pre_refine: bool,
    pub dual_weight: DualWeight,
    pub dual_operator: DualOperator,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            theta: 0.3,
            max_cycles: 12,
            max_dofs: 200_000,
            uniform: false,
            coarsen: false,
            coarsen_fraction: 0.01,
            goal_tol: None,
            pre_refine: true,
            dual_weight: DualWeight::default(),
            dual_operator: DualOperator::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn estimator_options(&self) -> EstimatorOptions {
        EstimatorOptions { weight: self.dual_weight, operator: self.dual_operator }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if self.max_cycles == 0 {
            return Err("max_cycles must be at least 1".into());
        }
        if self.max_dofs == 0 {
            return Err("max_dofs must be positive".into());
        }
        if !(self.coarsen_fraction >= 0.0 && self.coarsen_fraction < 1.0) {
            return Err(format!("coarsen_fraction must lie in [0, 1), got {}", self.coarsen_fraction));
        }
        if let Some(t) = self.goal_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(format!("goal_tol must be positive, got {t}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub n_dofs: usize,
    pub n_cells: usize,
    pub goal: f64,
    pub estimate: f64,
    pub picard_iterations: usize,
    pub active_dofs: usize,
}

/// State handed to observers after each cycle.
pub struct CycleState<'a> {
    pub cycle: usize,
    pub disc: &'a Discretization<'a>,
    pub bd: &'a BoundaryData,
    pub solution: &'a PicardSolution,
    pub estimate: &'a Estimate,
}

pub struct AdaptiveRun {
    pub records: Vec<CycleRecord>,
    /// Mesh, solution and estimate of the last cycle.
    pub mesh: Mesh,
    pub solution: PicardSolution,
    pub estimate: Estimate,
}

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("cycle {cycle}: {source}")]
    Solve { cycle: usize, records: Vec<CycleRecord>, source: SolveError },
    #[error("cycle {cycle}: {source}")]
    Estimator { cycle: usize, source: EstimatorError },
    #[error("reference solve needs {needed} dofs, above the limit of {limit}")]
    ResourceLimit { needed: usize, limit: usize },
    #[error("{0}")]
    Io(String),
}

/// Per-vertex values carried across mesh changes.
struct VertexState {
    u: Vec<f64>,
    active: Vec<bool>,
}

impl VertexState {
    fn from_solution(disc: &Discretization<'_>, sol: &PicardSolution) -> VertexState {
        let nv = disc.mesh.vertices().len();
        let mut u = vec![f64::NAN; nv];
        let mut active = vec![false; nv];
        for (d, &v) in disc.dofs.dof_vertex.iter().enumerate() {
            u[v] = sol.u[d];
            active[v] = sol.active[d];
        }
        VertexState { u, active }
    }

    fn refine(&mut self, mesh: &mut Mesh, cells: &[usize]) -> Result<(), MeshError> {
        let out = mesh.refine(cells)?;
        let nv = mesh.vertices().len();
        self.u.resize(nv, f64::NAN);
        self.active.resize(nv, false);
        for (v, parents) in out.new_vertices {
            self.u[v] = parents.iter().map(|&p| self.u[p]).sum::<f64>() / parents.len() as f64;
            self.active[v] = parents.len() == 2 && parents.iter().all(|&p| self.active[p]);
        }
        Ok(())
    }

    fn coarsen(&mut self, mesh: &mut Mesh, cells: &[usize]) -> Result<(), MeshError> {
        let out = mesh.coarsen(cells)?;
        let nv = mesh.vertices().len();
        let mut u = vec![f64::NAN; nv];
        let mut active = vec![false; nv];
        for (old, new) in out.vertex_map.iter().enumerate() {
            if let Some(new) = new {
                u[*new] = self.u[old];
                active[*new] = self.active[old];
            }
        }
        self.u = u;
        self.active = active;
        Ok(())
    }

    fn start(&self, disc: &Discretization<'_>, bd: &BoundaryData) -> (Vec<f64>, Vec<bool>) {
        let n = disc.n_dofs();
        let mut u: Vec<f64> = disc.dofs.dof_vertex.iter().map(|&v| self.u[v]).collect();
        let mut active = vec![false; n];
        for (d, g) in bd.fixed.iter().enumerate() {
            if let Some(g) = g {
                u[d] = *g;
            }
        }
        for &d in &bd.seepage {
            let v = disc.dofs.dof_vertex[d];
            if self.active[v] || u[d] >= 0.0 {
                active[d] = true;
                u[d] = 0.0;
            }
        }
        disc.dofs.distribute(&mut u);
        (u, active)
    }
}

/// Solve on `mesh`, starting from `start` or from the hydrostatic guess.
fn solve_on(
    problem: &ProblemConfig,
    disc: &Discretization<'_>,
    solver: &SolverConfig,
    start: Option<&VertexState>,
) -> Result<(BoundaryData, PicardSolution), SolveError> {
    let bd = BoundaryData::resolve(disc, &problem.boundary);
    let (u0, a0) = match start {
        Some(s) => s.start(disc, &bd),
        None => initial_guess(disc, &bd, problem.water_table),
    };
    let sol = picard_solve(disc, &problem.source, &bd, solver, &u0, &a0)?;
    Ok((bd, sol))
}

pub fn adaptive_loop(
    problem: &ProblemConfig,
    adapt: &AdaptiveConfig,
    solver: &SolverConfig,
    mut observer: impl FnMut(&CycleState<'_>),
) -> Result<AdaptiveRun, DriverError> {
    let medium = problem.medium().map_err(ProblemError::from)?;
    let mut mesh = problem.initial_mesh()?;
    if adapt.pre_refine {
        mesh.refine_uniform()?;
    }
    let mut records = Vec::new();
    let mut carry: Option<VertexState> = None;
    let mut cycle = 0;
    loop {
        let disc = Discretization::new(&mesh, &medium, problem.mode).map_err(ProblemError::from)?;
        let (bd, sol) = solve_on(problem, &disc, solver, carry.as_ref())
            .map_err(|source| DriverError::Solve { cycle, records: records.clone(), source })?;
        let est = estimate(&disc, &problem.source, &bd, &sol.u, &sol.active, &problem.goal, adapt.estimator_options())
            .map_err(|source| DriverError::Estimator { cycle, source })?;
        records.push(CycleRecord {
            cycle,
            n_dofs: disc.n_dofs(),
            n_cells: mesh.n_active(),
            goal: est.goal,
            estimate: est.estimate,
            picard_iterations: sol.report.n_iterations(),
            active_dofs: sol.active.iter().filter(|&&a| a).count(),
        });
        observer(&CycleState { cycle, disc: &disc, bd: &bd, solution: &sol, estimate: &est });
        let done = cycle + 1 >= adapt.max_cycles
            || adapt.goal_tol.is_some_and(|t| est.estimate.abs() <= t);
        let mut state = VertexState::from_solution(&disc, &sol);
        let active_cells = mesh.active_cells().to_vec();
        drop(disc);
        if done {
            return Ok(AdaptiveRun { records, mesh, solution: sol, estimate: est });
        }
        let mut next = mesh.clone();
        let refine: Vec<usize> = if adapt.uniform {
            active_cells.clone()
        } else {
            dorfler_mark(&est.indicators, adapt.theta).into_iter().map(|p| active_cells[p]).collect()
        };
        let coarsen: Vec<usize> = if adapt.coarsen && !adapt.uniform {
            let total: f64 = est.indicators.iter().map(|e| e.abs()).sum();
            let thresh = adapt.coarsen_fraction * total / est.indicators.len() as f64;
            est.indicators
                .iter()
                .enumerate()
                .filter(|(_, e)| e.abs() < thresh)
                .map(|(p, _)| active_cells[p])
                .filter(|&c| next.cell(c).level >= 2)
                .collect()
        } else {
            Vec::new()
        };
        state.refine(&mut next, &refine)?;
        let coarsen: Vec<usize> = coarsen.into_iter().filter(|&c| next.is_active(c)).collect();
        if !coarsen.is_empty() {
            state.coarsen(&mut next, &coarsen)?;
        }
        if next.active_vertices().len() > adapt.max_dofs {
            return Ok(AdaptiveRun { records, mesh, solution: sol, estimate: est });
        }
        mesh = next;
        carry = Some(state);
        cycle += 1;
    }
}

/// Goal value on `levels` uniform refinements of `base`, solved level by
/// level with each solution seeding the next.
pub fn reference_goal(
    problem: &ProblemConfig,
    base: &Mesh,
    levels: usize,
    solver: &SolverConfig,
    max_dofs: usize,
    cache_dir: Option<&Path>,
) -> Result<ReferenceValue, DriverError> {
    // dof count of uniform refinement grows as vertices + edges + cells
    let mut probe = base.clone();
    for _ in 0..levels {
        probe.refine_uniform()?;
        if probe.active_vertices().len() > max_dofs {
            return Err(DriverError::ResourceLimit { needed: probe.active_vertices().len(), limit: max_dofs });
        }
    }
    let n_dofs = probe.active_vertices().len();
    drop(probe);
    let key = cache_key(problem, base, levels, solver);
    let cache_file = cache_dir.map(|d| d.join(format!("reference-{key:016x}.txt")));
    if let Some(f) = &cache_file {
        if let Ok(text) = std::fs::read_to_string(f) {
            if let Some(bits) = text.lines().next().and_then(|l| u64::from_str_radix(l.trim(), 16).ok()) {
                return Ok(ReferenceValue { goal: f64::from_bits(bits), n_dofs, cached: true });
            }
        }
    }
    let medium = problem.medium().map_err(ProblemError::from)?;
    let mut mesh = base.clone();
    let mut carry: Option<VertexState> = None;
    let mut goal = 0.0;
    for level in 0..=levels {
        let disc = Discretization::new(&mesh, &medium, problem.mode).map_err(ProblemError::from)?;
        let (bd, sol) = solve_on(problem, &disc, solver, carry.as_ref())
            .map_err(|source| DriverError::Solve { cycle: level, records: Vec::new(), source })?;
        if level == levels {
            let pinned = pinned_dofs(&disc, &bd, &sol.active);
            goal = crate::estimator::evaluate_goal(&disc, &sol.u, &pinned, &problem.goal)
                .map_err(|source| DriverError::Estimator { cycle: level, source })?;
            break;
        }
        let mut state = VertexState::from_solution(&disc, &sol);
        drop(disc);
        let all = mesh.active_cells().to_vec();
        state.refine(&mut mesh, &all)?;
        carry = Some(state);
    }
    if let Some(f) = &cache_file {
        if let Some(dir) = f.parent() {
            std::fs::create_dir_all(dir).map_err(|e| DriverError::Io(e.to_string()))?;
        }
        let text = format!("{:016x}\n{:.17e}\n{}\n", goal.to_bits(), goal, n_dofs);
        std::fs::write(f, text).map_err(|e| DriverError::Io(e.to_string()))?;
    }
    Ok(ReferenceValue { goal, n_dofs, cached: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceValue {
    pub goal: f64,
    pub n_dofs: usize,
    pub cached: bool,
}

fn cache_key(problem: &ProblemConfig, base: &Mesh, levels: usize, solver: &SolverConfig) -> u64 {
    let mut h = DefaultHasher::new();
    format!("{problem:?}").hash(&mut h);
    crate::io::mesh_dump::write(base).hash(&mut h);
    levels.hash(&mut h);
    format!("{solver:?}").hash(&mut h);
    h.finish()
}

/// Run a fixed number of uniform refinements and return `(n_dofs, goal)`
/// per level.
pub fn uniform_sequence(
    problem: &ProblemConfig,
    levels: usize,
    solver: &SolverConfig,
    pre_refine: bool,
) -> Result<Vec<(usize, f64)>, DriverError> {
    let adapt = AdaptiveConfig {
        uniform: true,
        max_cycles: levels,
        max_dofs: usize::MAX,
        pre_refine,
        ..AdaptiveConfig::default()
    };
    let run = adaptive_loop(problem, &adapt, solver, |_| {})?;
    Ok(run.records.iter().map(|r| (r.n_dofs, r.goal)).collect())
}
