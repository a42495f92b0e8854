//! Sweep target depth in fog and report where the backscatter saturates and
//! where the direct return fades into it.
//!
//!     cargo run --release --example measurement_range [beta_per_mm] [out.csv]

use tofdefog::forward::MediumParams;
use tofdefog::simrange::{default_grid, find_range, sweep, DEFAULT_TOLERANCE};
use tofdefog::CameraModel;

fn main() -> tofdefog::Result<()> {
    let mut args = std::env::args().skip(1);
    let beta: f64 = args.next().map_or(3.2e-4, |s| s.parse().expect("beta must be a number"));
    let medium = MediumParams::fog().with_beta(beta);
    let cam = CameraModel::kinect_v2_16mhz();

    let mut s = sweep(&medium, &cam, 1.0, &default_grid())?;
    s.range = find_range(&s, DEFAULT_TOLERANCE, DEFAULT_TOLERANCE)?;

    let at = |z: f64| s.z_mm.iter().position(|&v| v == z).expect("on grid");
    let (i1, i8) = (at(1000.0), at(8000.0));
    println!("beta {beta:.2e} /mm, g {}, z0 {} mm", medium.g, medium.z0);
    println!("1 - alpha_s(1000)/alpha_s(8000) = {:.3}%", 100.0 * (1.0 - s.alpha_s[i1] / s.alpha_s[i8]));
    println!("1 - phi_s(1000)/phi_s(8000)     = {:.2}%", 100.0 * (1.0 - s.phi_s[i1] / s.phi_s[i8]));
    let show = |z: Option<f64>| z.map_or("unbounded".into(), |v| format!("{v} mm"));
    println!("saturated from {}", show(s.range.z_saturate));
    println!("direct return below 1% from {}", show(s.range.z_background));

    if let Some(path) = args.next() {
        std::fs::write(&path, s.to_csv())?;
        println!("curves written to {path}");
    }
    Ok(())
}
