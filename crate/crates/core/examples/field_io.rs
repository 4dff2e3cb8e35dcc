// Field and density dumps: binary round trip, CSV with round-trip float text
// and a deterministic SVG line plot.
//
// cargo run --release --example field_io

use mather_ep::grid::{ScalarField, TorusGrid};
use mather_ep::io::{field_from_bytes, field_to_bytes, read_field_csv, write_field_csv};
use mather_ep::plot::field_svg;

pub fn run_example() -> mather_ep::Result<usize> {
    let grid = TorusGrid::new(1, 32)?;
    let phi = ScalarField::from_fn(grid, |x| (2.0 / std::f64::consts::PI) * (1.0 - (std::f64::consts::PI * x[0]).cos()));
    let bytes = field_to_bytes(&phi);
    assert_eq!(field_from_bytes(&bytes)?, phi);
    let dir = std::env::temp_dir().join(format!("mather-ep-field-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("phi.csv");
    write_field_csv(&csv, &phi)?;
    assert_eq!(read_field_csv(&csv, grid)?, phi);
    let svg = field_svg(&phi, "phi")?;
    std::fs::write(dir.join("phi.svg"), &svg)?;
    println!("binary dump {} bytes, svg {} bytes, written to {}", bytes.len(), svg.len(), dir.display());
    std::fs::remove_dir_all(&dir)?;
    Ok(bytes.len())
}

fn main() -> mather_ep::Result<()> {
    run_example().map(|_| ())
}
