//! Regenerates the JSON fixture graphs under `fixtures/`.
//!
//! Run from the workspace root:
//! `cargo run -p invarset --example dump_fixtures`

use std::fs;
use std::path::Path;

use invarset::graph::SemiMarkovianGraph;
use invarset::oracle::fixtures;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::create_dir_all(&dir)?;
    let graphs: [(&str, SemiMarkovianGraph); 6] = [
        ("g_toy", fixtures::g_toy()),
        ("g_toy_bidirected", fixtures::g_toy_bidirected()),
        ("g_bi", fixtures::g_bi()),
        ("g_m_bias", fixtures::g_m_bias()),
        ("g_bd", fixtures::g_bd()),
        ("g_toy_x1y", fixtures::g_toy_x1y()),
    ];
    for (name, graph) in graphs {
        let path = dir.join(format!("{name}.json"));
        let mut text = serde_json::to_string_pretty(&graph)?;
        text.push('\n');
        fs::write(&path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
