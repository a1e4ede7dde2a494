// Weight fields from a fixed orientation and from the structure tensor of
// an image with diagonal stripes.

use tdv::anisotropy::{structure_orientation, StructureTensorParams};
use tdv::{rotation_contraction_field, structure_tensor_field, Grid, TensorField};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = Grid::new(32, 32)?;
    let fixed = rotation_contraction_field(grid, 0.3, 0.5)?;
    println!("constant field entry: {:?}", fixed.at(0));

    let angle: f64 = 0.6;
    let stripes = TensorField::scalar_fn(grid, |r, c| {
        (0.8 * (c as f64 * angle.cos() + r as f64 * angle.sin())).sin()
    });
    let orient = structure_orientation(&stripes, 1.0, 3.0)?;
    let centre = grid.pixel_index(16, 16);
    println!("estimated gradient angle {:.3} (true {angle})", orient.angle[centre]);
    assert!((orient.angle[centre] - angle).abs() < 0.05);

    let m = structure_tensor_field(&stripes, StructureTensorParams::new(1.0, 3.0, 0.2))?;
    println!("smallest singular value over the field: {:.3}", m.min_singular_value());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
