//! Every example must run to completion.

use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: [&str; 12] = [
    "mechanism_identities",
    "catalog_diagnostics",
    "levy_path",
    "marked_excursion",
    "excursion_length",
    "pruned_length",
    "joint_law",
    "total_mass",
    "special_markov",
    "gw_pruning",
    "discrete_scaling",
    "config_run",
];

fn example_dir() -> PathBuf {
    // target/<profile>/deps/examples-<hash> → target/<profile>/examples
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("examples")
}

#[test]
fn examples_run() {
    let dir = example_dir();
    for name in EXAMPLES {
        let path = dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
        if !path.exists() {
            // Built by `cargo test`; absent under `cargo test --test examples`.
            eprintln!("skipping {name}: not built");
            continue;
        }
        let out = Command::new(&path).output().unwrap();
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
