// Pointwise tensor algebra on a small grid.

use tdv::tensor::{bar, inner, tensor_product, tilde, trace, Grid, TensorField};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::new(2, 3)?;
    // an order-1 field (vector per pixel) and an order-2 field
    let v = TensorField::from_fn(grid, 1, |r, c, k| if k == 0 { c as f64 } else { r as f64 });
    let m = TensorField::constant(grid, 2, &[1.0, 2.0, 3.0, 4.0])?;

    let vm = tensor_product(&v, &m)?;
    println!("v⊗m has order {} and {} components per pixel", vm.order(), vm.components());
    println!("tr(m) = {:?}", trace(&m)?.block(0, 0));
    println!("m~ = {:?}, m̄ = {:?}", tilde(&m).block(0, 0), bar(&m).block(0, 0));
    println!("<v, v> = {}", inner(&v, &v)?);
    assert_eq!(trace(&m)?.block(1, 2), &[5.0]);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
