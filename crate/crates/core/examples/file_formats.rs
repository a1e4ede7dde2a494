// Save and load fields as PGM images and TDVF containers.

use tdv::io::{load_field, load_image, save_field};
use tdv::{grad, Grid, TensorField};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("tdv-formats-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let grid = Grid::new(8, 12)?;
    let image = TensorField::scalar_fn(grid, |r, c| (r + c) as f64 / 18.0);

    save_field(dir.join("ramp.pgm"), &image)?;
    let back = load_image(dir.join("ramp.pgm"))?;
    let worst = image
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("PGM round trip error {worst:.2e} (quantisation 1/255)");

    let g = grad(&image);
    save_field(dir.join("grad.tdvf"), &g)?;
    assert_eq!(load_field(dir.join("grad.tdvf"))?, g);
    println!("order-{} field stored exactly", g.order());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
