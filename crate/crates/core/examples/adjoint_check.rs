// The weighted divergence is the negative adjoint of the weighted gradient,
// checked on random data with random positive-definite weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdv::anisotropy::random_spd_field;
use tdv::tensor::{inner, l2_norm};
use tdv::{weighted_div, weighted_grad, Grid, TensorField};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = Grid::new(8, 8)?;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let m = random_spd_field(grid, &mut rng);
        let a = TensorField::random(grid, 1, &mut rng);
        let psi = TensorField::random(grid, 2, &mut rng);
        let lhs = inner(&weighted_grad(&m, &a)?, &psi)?;
        let rhs = -inner(&a, &weighted_div(&m, &psi)?)?;
        worst = worst.max((lhs - rhs).abs() / (l2_norm(&a) * l2_norm(&psi)));
    }
    println!("worst relative adjointness defect: {worst:.2e}");
    assert!(worst < 1e-12);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
