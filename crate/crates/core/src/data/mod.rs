//! Synthetic labeled rooms, the plain-text cloud format and the JSON run
//! configuration.

mod cloudio;
mod config;
mod scene;

pub use cloudio::{read_cloud, read_cloud_file, write_cloud, write_cloud_file};
pub use config::{DatasetConfig, RunConfig};
pub use scene::{
    generate_scene, scene_area, SceneSpec, BOARD, BOX, CEILING, CLASS_COLORS, CLASS_NAMES, COLUMN, FLOOR,
    NUM_CLASSES, WALL,
};
