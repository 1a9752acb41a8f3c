//! Raster ingestion, tiling, augmentation, normalization and splitting,
//! plus a synthetic scene generator.

pub mod normalize;
pub mod palette;
pub mod prepare;
pub mod raster;
pub mod split;
pub mod synth;
pub mod tiling;

pub use normalize::{assemble_inputs, compute_ndvi, normalize_dsm, normalize_optical, Sample};
pub use palette::{colorize, decode_label_colors, CLASS_NAMES, PALETTE};
pub use prepare::{
    load_label_map, load_scene_file, load_scenes, prepare_tiles, read_prepared, write_prepared,
    Manifest, Prepared,
};
pub use raster::{read_pnm, write_pnm, Plane, Raster, Role};
pub use split::{split_train_val, Footprint, Split};
pub use synth::{synth_dataset, synth_scene};
pub use tiling::{rotate, rotate_augment, tile_raster, tile_stride, TileSet};
