//! Write an operator as Matrix Market factors plus a manifest, load it
//! back and compare a matrix-free product.

use lrjd::io::{load_operator, write_operator};
use lrjd::problems::{build_convection_diffusion, PdeSpec};
use nalgebra::DMatrix;

fn main() -> Result<(), lrjd::error::Error> {
    let op = build_convection_diffusion(&PdeSpec {
        n: 24,
        ..PdeSpec::default()
    })?
    .operator;
    let dir = std::env::temp_dir().join("lrjd-operator-io");
    std::fs::create_dir_all(&dir)?;
    let manifest = write_operator(&dir, "cd24", &op)?;
    println!("{}", std::fs::read_to_string(&manifest)?);

    let back = load_operator(&manifest)?;
    let x = DMatrix::from_fn(op.n(), op.m(), |i, j| ((i * 7 + j * 3) % 11) as f64);
    let diff = (op.apply_matrix(&x)? - back.apply_matrix(&x)?).norm();
    println!(
        "{} terms reloaded from {}, product difference {diff:.1e}",
        back.num_terms(),
        manifest.display()
    );
    Ok(())
}
