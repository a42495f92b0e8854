//! Phase/depth conversion and per-pixel phasor arithmetic.

use std::f64::consts::PI;

use tofdefog::phasor::{depth_to_phase, phase_to_depth, phasor_add, phasor_subtract};
use tofdefog::{CameraModel, DepthImage, Grid, PhasorImage};

fn main() -> tofdefog::Result<()> {
    let cam = CameraModel::kinect_v2_16mhz();
    println!("unambiguous range at 16 MHz: {:.1} mm", cam.unambiguous_range_mm());
    println!("phase pi -> {:.2} mm", phase_to_depth(PI, &cam)?);
    println!("1500 mm -> phase {:.4} rad", depth_to_phase(1500.0, &cam)?);

    // an object return plus a backscatter term at each of four pixels
    let direct = PhasorImage::new(
        Grid::from_vec(2, 2, vec![400.0, 250.0, 120.0, 60.0])?,
        Grid::from_fn(2, 2, |r, c| depth_to_phase(1000.0 + 400.0 * (2 * r + c) as f64, &cam).unwrap()),
    )?;
    let scatter = PhasorImage::new(Grid::filled(2, 2, 60.0), Grid::filled(2, 2, 0.08))?;
    let observed = phasor_add(&direct, &scatter)?;
    let recovered = phasor_subtract(&observed, &scatter)?;

    let truth = DepthImage::from_phasor(&direct, &cam)?;
    let foggy = DepthImage::from_phasor(&observed, &cam)?;
    let clean = DepthImage::from_phasor(&recovered, &cam)?;
    for r in 0..2 {
        for c in 0..2 {
            println!(
                "pixel ({r},{c}): true {:7.1} mm, foggy {:7.1} mm, after subtraction {:7.1} mm",
                truth.depth[(r, c)],
                foggy.depth[(r, c)],
                clean.depth[(r, c)]
            );
        }
    }
    Ok(())
}
