//! Drives a run from a TOML config, as the `crt-prune` binary does:
//! validate, check every suite, write the reports.

use crt_prune::config::{cmd_check, cmd_validate, ExperimentConfig};

const CONFIG: &str = r#"
seed = 5

[mechanism]
alpha = 0.0
beta = 1.0
levy = { variant = "zero" }

[marking]
alpha1 = 1.0
mark = { variant = "constant", q = 0.0 }

[simulation]
n = 2000
dt = 1e-3

[gw]
offspring = [0.5, 0.3, 0.2]
node_marks = [0.0, 0.0, 0.5]
node_threshold = 2
edge_mark = 0.1
trees = 20000
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig::from_toml(CONFIG)?;
    let (text, ok) = cmd_validate(&config);
    print!("{text}");
    assert!(ok);

    let out = std::env::temp_dir().join("crt-prune-config-run");
    let (table, passed) = cmd_check(&config, "all", &out)?;
    print!("{table}");
    println!("config hash {}\nall passed: {passed}\nreports in {}", config.hash(), out.display());
    Ok(())
}
