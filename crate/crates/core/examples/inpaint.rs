// Fill in a third of the pixels of a smooth image.

use tdv::{solve, AlphaVector, ForwardOp, Grid, Problem, TensorField, WeightCollection};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::new(16, 16)?;
    let truth = TensorField::scalar_fn(grid, |r, c| 0.02 * (r * r) as f64 / 16.0 + 0.03 * c as f64);
    let mask = TensorField::scalar_fn(grid, |r, c| if (r * 7 + c * 3) % 3 == 0 { 0.0 } else { 1.0 });
    let problem = Problem::new(
        truth.clone(),
        ForwardOp::Mask(mask.clone()),
        WeightCollection::identity(grid, 2)?,
        AlphaVector::new(vec![1.0, 1.0])?,
        1e3,
    )?;
    let (u, state) = solve(&problem, 20_000, 1e-6)?;
    let missing: Vec<usize> = (0..grid.pixels()).filter(|&i| mask.data()[i] == 0.0).collect();
    let err = missing
        .iter()
        .map(|&i| (u.data()[i] - truth.data()[i]).abs())
        .fold(0.0, f64::max);
    println!(
        "{} missing pixels, worst error {err:.2e}, {} iterations",
        missing.len(),
        state.iterations
    );
    assert!(err < 0.05);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
