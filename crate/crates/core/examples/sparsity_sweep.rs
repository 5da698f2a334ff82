//! Runs a sparsity sweep manifest through the report writer, the same
//! path as `sparsehe sweep`, and prints where the files went.
//!
//!     cargo run --release --example sparsity_sweep [OUT_DIR]

use sparsehe::manifest::Manifest;
use sparsehe::runner::{run_manifest, RunOptions};

const MANIFEST: &str = r#"{
  "schema_version": 1,
  "seeds": [42, 43, 44],
  "experiment": {
    "kind": "sparsity_sweep",
    "config": { "base": { "rounds": 10 }, "grid": [0.5, 0.8, 0.9, 0.95, 0.99] }
  }
}"#;

fn main() {
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("sparsehe-sweep"));
    let manifest = Manifest::from_json(MANIFEST).unwrap();
    let outcome = run_manifest(&manifest, &RunOptions { out_root: out, threads: None }).unwrap();
    for line in &outcome.lines {
        println!("{line}");
    }
    for f in outcome.written.iter().chain(&outcome.kept) {
        println!("  {}", f.display());
    }
}
