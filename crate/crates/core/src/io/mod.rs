//! Files and the command line: the grid container, scene files, run
//! manifests, preprocessing and the `tofdefog` subcommands.

pub mod cli;
pub mod grid_file;
pub mod manifest;
pub mod preprocess;
pub mod scene;

pub use grid_file::{read_grid, write_grid, Domain, GridFile, GridHeader};
pub use manifest::{FileRecord, RunManifest};
pub use scene::{load_scene, SceneFile};
