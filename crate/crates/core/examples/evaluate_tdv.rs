// Evaluate second-order TDV of a small image and bracket it with the
// supremum-based lower bound.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdv::tdv::{dual_sup, tdv_value_with, DualSupOptions, TdvOptions};
use tdv::{rotation_contraction_field, AlphaVector, Grid, TensorField, WeightCollection};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = Grid::new(4, 4)?;
    let u = TensorField::random(grid, 0, &mut rng);
    let weights = WeightCollection::repeated(rotation_contraction_field(grid, 0.4, 0.5)?, 2)?;
    let alpha = AlphaVector::new(vec![1.0, 0.5])?;

    let eval = tdv_value_with(&u, &weights, &alpha, TdvOptions::new(1e-6))?;
    let sup = dual_sup(&u, &weights, &alpha, DualSupOptions::default())?;
    println!(
        "TDV = {:.6} (certified >= {:.6}), supremum bound {:.6} after {} iterations",
        eval.value, eval.lower_bound, sup.value, eval.iterations
    );
    assert!(sup.value <= eval.value + 1e-6);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
