//! Configuration, output formats and the run entry point used by the CLI.

pub mod config;
pub mod mesh_dump;
pub mod vtk;

use std::fmt::Write as _;
use std::path::Path;

use crate::driver::{adaptive_loop, reference_goal, CycleRecord, DriverError};
use config::RunConfig;

pub const CSV_HEADER: &str = "cycle,ndofs,ncells,goal,estimate,reference,error,effectivity";

fn g17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Convergence table; the reference columns stay empty without a reference.
pub fn convergence_csv(records: &[CycleRecord], reference: Option<f64>) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{},{},{},{}", r.cycle, r.n_dofs, r.n_cells, g17(r.goal), g17(r.estimate));
        match reference {
            Some(j) => {
                let err = j - r.goal;
                let eff = if r.estimate != 0.0 { g17(err / r.estimate) } else { String::new() };
                let _ = writeln!(s, ",{},{},{}", g17(j), g17(err), eff);
            }
            None => s.push_str(",,,\n"),
        }
    }
    s
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Uniform refinements of the final mesh used for the reference value.
    pub reference_levels: Option<usize>,
    /// Dof limit for the reference solve.
    pub reference_max_dofs: usize,
    pub quiet: bool,
}

pub struct RunSummary {
    pub records: Vec<CycleRecord>,
    pub reference: Option<f64>,
}

fn io_err(e: std::io::Error) -> DriverError {
    DriverError::Io(e.to_string())
}

/// Code version and run options; the configuration itself is echoed to
/// `config.toml`.
fn manifest(cfg: &RunConfig, opts: &RunOptions) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "program = \"{}\"", env!("CARGO_PKG_NAME"));
    let _ = writeln!(s, "version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "problem = {:?}", cfg.problem.name);
    if let Some(l) = opts.reference_levels {
        let _ = writeln!(s, "reference_levels = {l}");
    }
    s
}

/// Run the adaptive loop and write `convergence.csv`, the echoed
/// configuration and per-cycle files into `out`.
pub fn run(cfg: &RunConfig, out: &Path, opts: &RunOptions) -> Result<RunSummary, DriverError> {
    std::fs::create_dir_all(out).map_err(io_err)?;
    std::fs::write(out.join("config.toml"), config::to_toml(cfg)).map_err(io_err)?;
    std::fs::write(out.join("manifest.toml"), manifest(cfg, opts)).map_err(io_err)?;
    let mut write_error: Option<std::io::Error> = None;
    let result = adaptive_loop(&cfg.problem, &cfg.adaptivity, &cfg.solver, |st| {
        if !opts.quiet {
            eprintln!(
                "cycle {:>2}: {:>7} dofs  J = {:.10e}  eta = {:.3e}  ({} Picard iterations)",
                st.cycle,
                st.disc.n_dofs(),
                st.estimate.goal,
                st.estimate.estimate,
                st.solution.report.n_iterations()
            );
        }
        if cfg.output.iteration_log {
            let f = out.join(format!("picard-{:02}.csv", st.cycle));
            if let Err(e) = std::fs::write(f, st.solution.report.to_csv()) {
                write_error.get_or_insert(e);
            }
        }
        if cfg.output.vtk {
            let k: Vec<f64> = (0..st.disc.n_dofs())
                .map(|d| {
                    let p = st.disc.mesh.vertex(st.disc.dofs.dof_vertex[d]);
                    st.disc.medium.conductivity(st.solution.u[d], p).unwrap_or(f64::NAN)
                })
                .collect();
            let text = vtk::write_vtk(
                st.disc.mesh,
                &st.disc.dofs,
                &[
                    vtk::Field { name: "pressure_head", values: &st.solution.u },
                    vtk::Field { name: "dual", values: &st.estimate.dual },
                    vtk::Field { name: "conductivity", values: &k },
                ],
                &[vtk::Field { name: "indicator", values: &st.estimate.indicators }],
            );
            if let Err(e) = std::fs::write(out.join(format!("solution-{:02}.vtk", st.cycle)), text) {
                write_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(io_err(e));
    }
    let run = match result {
        Ok(r) => r,
        Err(e) => {
            if let DriverError::Solve { records, .. } = &e {
                let _ = std::fs::write(out.join("convergence.csv"), convergence_csv(records, None));
            }
            return Err(e);
        }
    };
    std::fs::write(out.join("mesh.txt"), mesh_dump::write(&run.mesh)).map_err(io_err)?;
    let reference = match opts.reference_levels {
        Some(levels) => {
            let max = if opts.reference_max_dofs == 0 { 2_000_000 } else { opts.reference_max_dofs };
            let r = reference_goal(&cfg.problem, &run.mesh, levels, &cfg.solver, max, Some(&out.join("cache")))?;
            Some(r.goal)
        }
        None => None,
    };
    std::fs::write(out.join("convergence.csv"), convergence_csv(&run.records, reference)).map_err(io_err)?;
    Ok(RunSummary { records: run.records, reference })
}
