// Programmatic use of the run front end: validate a configuration string and
// execute it into a directory, then read back the summary.
//
// cargo run --release --example run_config

use std::path::Path;

use mather_ep::cli::{run_validated, validate_str};

const CONFIG: &str = r#"
[problem]
kind = "shifted-quadratic"
omega = [0.5]

[grids]
m = 64
mv = 161
cutoff = 4.0

[schedule]
epsilons = [0.1, 0.05, 0.02, 0.01]
h = 0.125

[[analysis]]
kind = "continuation"
id = "continuation"
expect = 0.0
tolerance = 1e-3

[[analysis]]
kind = "critical-value"
id = "critical"
expect = 0.0
compare = "continuation"
"#;

pub fn run_example() -> mather_ep::Result<i32> {
    let validated = validate_str(CONFIG, Path::new("."))?;
    let dir = std::env::temp_dir().join(format!("mather-ep-run-config-{}", std::process::id()));
    let outcome = run_validated(&validated, &dir)?;
    for a in &outcome.summary.analyses {
        println!("{:<14} {}", a.id, a.status);
    }
    println!("exit code {}", outcome.exit_code);
    std::fs::remove_dir_all(&dir)?;
    Ok(outcome.exit_code)
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
