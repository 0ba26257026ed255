//! Legacy ASCII VTK output of the active mesh.

use std::fmt::Write as _;

use crate::fem::DofMap;
use crate::mesh::Mesh;

/// A named field, either per dof (point data) or per active cell.
pub struct Field<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.17e}")
    } else {
        "0".to_string()
    }
}

/// Unstructured grid with quads (VTK type 9). Point order is dof order.
pub fn write_vtk(mesh: &Mesh, dofs: &DofMap, point_fields: &[Field<'_>], cell_fields: &[Field<'_>]) -> String {
    let n = dofs.n_dofs();
    let m = mesh.n_active();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nseepage\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {n} double");
    for &v in &dofs.dof_vertex {
        let p = mesh.vertex(v);
        let _ = writeln!(s, "{} {} 0", num(p.x), num(p.z));
    }
    let _ = writeln!(s, "CELLS {m} {}", 5 * m);
    for d in &dofs.cell_dofs {
        let _ = writeln!(s, "4 {} {} {} {}", d[0], d[1], d[2], d[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        s.push_str("9\n");
    }
    if !point_fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {n}");
        for f in point_fields {
            assert_eq!(f.values.len(), n, "point field {} has wrong length", f.name);
            let _ = writeln!(s, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name);
            for &v in f.values {
                s.push_str(&num(v));
                s.push('\n');
            }
        }
    }
    if !cell_fields.is_empty() {
        let _ = writeln!(s, "CELL_DATA {m}");
        for f in cell_fields {
            assert_eq!(f.values.len(), m, "cell field {} has wrong length", f.name);
            let _ = writeln!(s, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name);
            for &v in f.values {
                s.push_str(&num(v));
                s.push('\n');
            }
        }
    }
    s
}
