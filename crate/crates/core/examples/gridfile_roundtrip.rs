//! Write a depth grid in both container layouts and read it back.

use tofdefog::io::{read_grid, Domain, GridFile};
use tofdefog::Grid;

fn main() -> tofdefog::Result<()> {
    let dir = std::env::temp_dir().join("tofdefog-gridfile-example");
    std::fs::create_dir_all(&dir)?;

    // background pixels are stored as +inf
    let depth = Grid::from_fn(424, 512, |r, c| {
        if (100..200).contains(&r) && (150..300).contains(&c) {
            1500.0 + 0.5 * r as f64
        } else {
            f64::INFINITY
        }
    });
    let file = GridFile::from_f64(&depth, Domain::Depth)?;

    let inline = dir.join("depth.tofgrid");
    file.write(&inline)?;
    let split = dir.join("depth_split.tofgrid");
    let payload = file.write_sidecar(&split)?;

    println!("inline file: {} bytes", std::fs::metadata(&inline)?.len());
    println!("sidecar payload {}: {} bytes", payload.display(), std::fs::metadata(&payload)?.len());
    println!("header: {}", serde_json::to_string(&file.header)?);

    for path in [&inline, &split] {
        let back = read_grid(path, Domain::Depth)?;
        let same = back.iter().zip(depth.iter()).all(|(a, b)| a == b);
        println!("{}: identical after round trip: {same}", path.display());
    }
    match read_grid(&inline, Domain::Phase) {
        Err(e) => println!("reading it as a phase grid fails: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
