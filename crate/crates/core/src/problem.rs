//! Problem definitions and their resolution onto a discretization.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::constitutive::{Layer, LayeredMedium, SoilError, SoilModel};
use crate::fem::{CoordMode, Discretization, SourceTerm};
use crate::geometry::{BoundarySegment, Condition, Geometry, Rectangle, SlopingSlab};
use crate::mesh::{BoundaryKind, CellId, Mesh, MeshError, Point, Side};

/// Quantity of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalSpec {
    /// Pressure head at a point.
    PointValue { x: f64, z: f64 },
    /// Mean seepage velocity out of the seepage faces,
    /// `-(K_S / phi) grad(u + z) . n` integrated over every seepage face.
    SeepageFlux,
    /// Total outward flux `-k(u) grad(u + z) . n` through the left side
    /// (the well wall in axisymmetric problems).
    WellFlux,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub name: String,
    pub geometry: Geometry,
    pub mode: CoordMode,
    pub layers: Vec<Layer>,
    pub boundary: Vec<BoundarySegment>,
    pub source: SourceTerm,
    pub goal: GoalSpec,
    /// Level of the water table used for the hydrostatic initial guess.
    pub water_table: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Soil(#[from] SoilError),
    #[error("{0}")]
    Invalid(String),
}

impl ProblemConfig {
    pub fn medium(&self) -> Result<LayeredMedium, SoilError> {
        LayeredMedium::new(self.layers.clone())
    }

    pub fn initial_mesh(&self) -> Result<Mesh, ProblemError> {
        self.validate()?;
        let mesh = self.geometry.build_mesh(&self.boundary)?;
        let mut heads = std::collections::HashMap::new();
        for (c, e, marker) in mesh.boundary_faces() {
            let Some(Condition::Head { head }) = marker.segment.map(|s| &self.boundary[s as usize].condition) else {
                continue;
            };
            let (a, b) = mesh.cell(c).edge(e);
            for v in [a, b] {
                if let Some(h) = heads.insert(v, *head) {
                    if h != *head {
                        let p = mesh.vertex(v);
                        return Err(ProblemError::Invalid(format!(
                            "conflicting heads {h} and {head} meet at x = {}, z = {}",
                            p.x, p.z
                        )));
                    }
                }
            }
        }
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        self.geometry.validate()?;
        let medium = self.medium()?;
        let (z0, z1) = self.geometry.z_range();
        let (l0, l1) = medium.z_range();
        let tol = 1e-9 * (z1 - z0);
        if l0 > z0 + tol || l1 < z1 - tol {
            return Err(ProblemError::Invalid(format!(
                "soil layers cover [{l0}, {l1}] but the domain spans [{z0}, {z1}]"
            )));
        }
        if let Geometry::Rectangle(r) = &self.geometry {
            if self.mode == CoordMode::Axisymmetric && r.x_min <= 0.0 {
                return Err(ProblemError::Invalid(
                    "axisymmetric domains need a positive inner radius".into(),
                ));
            }
        }
        if let Geometry::SlopingSlab(_) = self.geometry {
            if self.mode == CoordMode::Axisymmetric {
                return Err(ProblemError::Invalid("the sloping slab is planar only".into()));
            }
        }
        for (k, s) in self.boundary.iter().enumerate() {
            if let (Some(a), Some(b)) = (s.from, s.to) {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(ProblemError::Invalid(format!("boundary segment {k} has an empty range")));
                }
            }
            if let Condition::Head { head } = s.condition {
                if !head.is_finite() {
                    return Err(ProblemError::Invalid(format!("boundary segment {k} has a non-finite head")));
                }
            }
        }
        if !self.water_table.is_finite() {
            return Err(ProblemError::Invalid("water table must be finite".into()));
        }
        if !self.boundary.iter().any(|s| matches!(s.condition, Condition::Head { .. })) {
            return Err(ProblemError::Invalid("at least one head boundary is required".into()));
        }
        Ok(())
    }
}

/// Boundary data resolved to dofs.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    /// Prescribed head values on Dirichlet dofs.
    pub fixed: Vec<Option<f64>>,
    /// Dofs on the potential seepage face that are not Dirichlet, sorted.
    pub seepage: Vec<usize>,
    pub seepage_faces: Vec<(CellId, usize)>,
}

impl BoundaryData {
    pub fn resolve(disc: &Discretization<'_>, segments: &[BoundarySegment]) -> BoundaryData {
        let n = disc.n_dofs();
        let mut fixed = vec![None; n];
        let mut seep = BTreeSet::new();
        let mut seepage_faces = Vec::new();
        for (c, e, marker) in disc.mesh.boundary_faces() {
            let (a, b) = disc.mesh.cell(c).edge(e);
            match marker.kind {
                BoundaryKind::Dirichlet => {
                    let head = match marker.segment.map(|s| &segments[s as usize].condition) {
                        Some(Condition::Head { head }) => *head,
                        _ => unreachable!("dirichlet marker without a head segment"),
                    };
                    for v in [a, b] {
                        let d = disc.dofs.vertex_dof[v];
                        if fixed[d].is_none() {
                            fixed[d] = Some(head - disc.mesh.vertex(v).z);
                        }
                    }
                }
                BoundaryKind::Seepage => {
                    seepage_faces.push((c, e));
                    for v in [a, b] {
                        seep.insert(disc.dofs.vertex_dof[v]);
                    }
                }
                BoundaryKind::Neumann => {}
            }
        }
        let seepage = seep.into_iter().filter(|&d| fixed[d].is_none()).collect();
        BoundaryData { fixed, seepage, seepage_faces }
    }

    /// Resolve with arbitrary Dirichlet values on every boundary face of the
    /// given kinds; used for manufactured solutions.
    pub fn with_function(
        disc: &Discretization<'_>,
        kinds: &[BoundaryKind],
        g: impl Fn(Point) -> f64,
    ) -> BoundaryData {
        let n = disc.n_dofs();
        let mut fixed = vec![None; n];
        for (c, e, marker) in disc.mesh.boundary_faces() {
            if kinds.contains(&marker.kind) {
                let (a, b) = disc.mesh.cell(c).edge(e);
                for v in [a, b] {
                    fixed[disc.dofs.vertex_dof[v]] = Some(g(disc.mesh.vertex(v)));
                }
            }
        }
        BoundaryData { fixed, seepage: Vec::new(), seepage_faces: Vec::new() }
    }

    pub fn is_seepage(&self, d: usize) -> bool {
        self.seepage.binary_search(&d).is_ok()
    }
}

/// Hydrostatic initial guess `u0 = H - z`, Dirichlet values imposed, and
/// clipped to `u0 <= 0` on the seepage face. Returns the guess and the
/// initial active set (seepage dofs where the clip applied).
pub fn initial_guess(disc: &Discretization<'_>, bd: &BoundaryData, water_table: f64) -> (Vec<f64>, Vec<bool>) {
    let mut u = disc.interpolate(|p| water_table - p.z);
    let mut active = vec![false; disc.n_dofs()];
    for (d, g) in bd.fixed.iter().enumerate() {
        if let Some(g) = g {
            u[d] = *g;
        }
    }
    for &d in &bd.seepage {
        if u[d] >= 0.0 {
            u[d] = 0.0;
            active[d] = true;
        }
    }
    disc.dofs.distribute(&mut u);
    (u, active)
}

/// Harmonic lifting of the boundary data: Laplace's equation with the
/// Dirichlet values on the Dirichlet boundary, zero on the seepage face
/// (Dirichlet wins where both meet) and natural conditions elsewhere.
pub fn extend_gbar(disc: &Discretization<'_>, bd: &BoundaryData) -> Result<Vec<f64>, crate::linalg::LinalgError> {
    let mut a = disc.assemble_laplace();
    let n = disc.n_dofs();
    let mut b = vec![0.0; n];
    let mut fixed = bd.fixed.clone();
    for &d in &bd.seepage {
        fixed[d] = Some(0.0);
    }
    a.apply_fixed(&mut b, &fixed);
    let mut solver = crate::linalg::CholeskySolver::new(disc.pattern.clone())?;
    solver.factorize(&a)?;
    let mut x = solver.solve(&b);
    for (d, g) in fixed.iter().enumerate() {
        if let Some(g) = g {
            x[d] = *g;
        }
    }
    disc.dofs.distribute(&mut x);
    Ok(x)
}

/// Soil used by the examples.
pub fn example_soil() -> SoilModel {
    SoilModel::preset("example").expect("preset")
}

/// Head on the left boundary of the sloping-slab example.
pub const EXAMPLE2_LEFT_HEAD: f64 = 2.0;

pub fn benchmark(name: &str) -> Option<ProblemConfig> {
    let rect = |x0, x1, z0, z1, nx, nz, z_lines: Vec<f64>| {
        Geometry::Rectangle(Rectangle { x_min: x0, x_max: x1, z_min: z0, z_max: z1, nx, nz, x_lines: vec![], z_lines })
    };
    let seg = BoundarySegment::new;
    let head = |h| Condition::Head { head: h };
    let layer = |z_low, z_high, soil: &str| Layer {
        z_low,
        z_high,
        soil: SoilModel::preset(soil).expect("preset"),
    };
    let p = match name {
        "example1" => ProblemConfig {
            name: name.into(),
            geometry: rect(0.0, 1.0, 0.0, 1.0, 16, 16, vec![0.25]),
            mode: CoordMode::Cartesian,
            layers: vec![layer(0.0, 1.0, "example")],
            boundary: vec![
                seg(Side::Left, Some(0.0), Some(0.25), head(0.25)),
                seg(Side::Left, Some(0.25), Some(1.0), Condition::Seepage),
                BoundarySegment::whole(Side::Right, head(0.8)),
            ],
            source: SourceTerm::Zero,
            goal: GoalSpec::SeepageFlux,
            water_table: 0.8,
        },
        "example2" => ProblemConfig {
            name: name.into(),
            geometry: Geometry::SlopingSlab(SlopingSlab {
                length: 10.0,
                thickness: 1.0,
                bed_left: 1.0,
                slope: 0.1,
                slab_start: 5.0,
                slab_bottom: 0.45,
                slab_top: 0.55,
                nx_upstream: 110,
                nx_downstream: 102,
                nt_below: 9,
                nt_slab: 2,
                nt_above: 9,
            }),
            mode: CoordMode::Cartesian,
            layers: vec![layer(0.0, 2.0, "example")],
            boundary: vec![
                BoundarySegment::whole(Side::Left, head(EXAMPLE2_LEFT_HEAD)),
                BoundarySegment::whole(Side::Top, Condition::Seepage),
                BoundarySegment::whole(Side::Right, Condition::Seepage),
            ],
            source: SourceTerm::Disk { x: 9.0, z: 1.15, radius: 0.2, value: 10.0 },
            goal: GoalSpec::SeepageFlux,
            water_table: EXAMPLE2_LEFT_HEAD,
        },
        "case1" => ProblemConfig {
            name: name.into(),
            geometry: rect(0.0762, 50.0, 0.0, 60.0, 10, 12, vec![38.0, 42.7]),
            mode: CoordMode::Axisymmetric,
            layers: vec![layer(0.0, 38.0, "fine_sandstone"), layer(38.0, 60.0, "sandy_loam")],
            boundary: vec![
                seg(Side::Left, Some(0.0), Some(42.7), head(42.7)),
                seg(Side::Left, Some(42.7), Some(60.0), Condition::Seepage),
                BoundarySegment::whole(Side::Right, head(49.8)),
            ],
            source: SourceTerm::Zero,
            goal: GoalSpec::WellFlux,
            water_table: 49.8,
        },
        "case2" => ProblemConfig {
            name: name.into(),
            geometry: rect(
                0.1585,
                50.0,
                0.0,
                46.0,
                10,
                10,
                vec![5.0, 8.0, 16.0, 17.0, 17.44, 18.0, 19.0, 23.0, 34.0],
            ),
            mode: CoordMode::Axisymmetric,
            layers: vec![
                layer(0.0, 8.0, "diabase"),
                // coarse sandstone: parameters of the only remaining sandstone row
                layer(8.0, 16.0, "fine_sandstone"),
                layer(16.0, 18.0, "slate"),
                layer(18.0, 34.0, "med_sandstone"),
                layer(34.0, 46.0, "sandy_loam"),
            ],
            boundary: vec![
                seg(Side::Left, Some(5.0), Some(17.0), head(17.44)),
                seg(Side::Left, Some(19.0), Some(23.0), Condition::Seepage),
                BoundarySegment::whole(Side::Right, head(33.9)),
            ],
            source: SourceTerm::Zero,
            goal: GoalSpec::WellFlux,
            water_table: 33.9,
        },
        _ => return None,
    };
    Some(p)
}

pub const BENCHMARKS: [&str; 4] = ["example1", "example2", "case1", "case2"];
