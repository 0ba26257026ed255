#![no_main]

use libfuzzer_sys::fuzz_target;
use seepage::io::mesh_dump::{parse, write};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(dump) = parse(text) else { return };
    if let Ok(mesh) = dump.to_mesh() {
        let again = parse(&write(&mesh)).expect("written dump parses");
        assert_eq!(again.vertices.len(), mesh.active_vertices().len());
        assert_eq!(again.cells.len(), mesh.n_active());
    }
});
