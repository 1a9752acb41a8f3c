//! Scene ingestion and tile preparation: tiling, validation split,
//! rotation augmentation and the on-disk tile directory with its manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::DataConfig;
use crate::data::palette::decode_label_colors;
use crate::data::raster::{read_pnm, Plane, Raster, Role};
use crate::data::split::{split_train_val, Footprint};
use crate::data::tiling::{rotate_augment, tile_raster};
use crate::error::data_err;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Reads every scene in `dir`. A scene `name` is assembled from any of
/// `name.mcr`, `name.irrg.ppm` (IR, R, G), `name.b.pgm` (B) and
/// `name.label.ppm` (palette colors). DSM is read from MCR only.
pub fn load_scenes(dir: &Path) -> Result<Vec<(String, Raster)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else {
            continue;
        };
        let stem = [".mcr", ".irrg.ppm", ".b.pgm", ".label.ppm"]
            .iter()
            .find_map(|suffix| file.strip_suffix(suffix));
        if let Some(stem) = stem {
            stems
                .entry(stem.to_string())
                .or_default()
                .push(path.clone());
        }
    }
    if stems.is_empty() {
        return Err(data_err!("{}: no .mcr, .ppm or .pgm scenes", dir.display()));
    }
    stems
        .keys()
        .map(|s| Ok((s.clone(), load_scene(dir, s)?)))
        .collect()
}

fn load_scene(dir: &Path, stem: &str) -> Result<Raster> {
    let path = |suffix: &str| dir.join(format!("{stem}{suffix}"));
    let mut raster: Option<Raster> = None;
    if path(".mcr").exists() {
        raster = Some(Raster::load_mcr(&path(".mcr"))?);
    }
    let mut attach =
        |suffix: &str,
         planes: usize,
         f: &dyn Fn(Vec<Vec<u8>>, usize) -> Result<Vec<(Role, Vec<u8>)>>| {
            let p = path(suffix);
            if !p.exists() {
                return Ok::<(), Error>(());
            }
            let img = read_pnm(&p)?;
            if img.planes.len() != planes {
                return Err(data_err!("{}: expected {planes} channel(s)", p.display()));
            }
            let r = raster.get_or_insert_with(|| Raster::new(img.height, img.width));
            if (r.height(), r.width()) != (img.height, img.width) {
                return Err(data_err!(
                    "{}: {}x{} does not match the scene's {}x{}",
                    p.display(),
                    img.height,
                    img.width,
                    r.height(),
                    r.width()
                ));
            }
            for (role, plane) in f(img.planes, img.width)? {
                r.set(role.name(), Plane::U8(plane))?;
            }
            Ok(())
        };
    attach(".irrg.ppm", 3, &|mut p, _| {
        let g = p.pop().unwrap();
        let r = p.pop().unwrap();
        let ir = p.pop().unwrap();
        Ok(vec![(Role::Ir, ir), (Role::R, r), (Role::G, g)])
    })?;
    attach(".b.pgm", 1, &|mut p, _| {
        Ok(vec![(Role::B, p.pop().unwrap())])
    })?;
    attach(".label.ppm", 3, &|p, w| {
        Ok(vec![(
            Role::Label,
            decode_label_colors(&p[0], &p[1], &p[2], w)?,
        )])
    })?;
    raster.ok_or_else(|| data_err!("scene {stem} has no readable files"))
}

/// Reads one scene from an `.mcr` file or from any file of a scene's PNM
/// set (`name.irrg.ppm`, `name.b.pgm`, ...), picking up its siblings.
pub fn load_scene_file(path: &Path) -> Result<Raster> {
    let file = path
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| data_err!("{}: not a file name", path.display()))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = [".mcr", ".irrg.ppm", ".b.pgm", ".label.ppm"]
        .iter()
        .find_map(|suffix| file.strip_suffix(suffix));
    match stem {
        Some(stem) => load_scene(dir, stem),
        None if path.exists() => Raster::load_mcr(path),
        None => Err(Error::io(path, std::io::ErrorKind::NotFound.into())),
    }
}

/// A label map from an MCR `LABEL` channel, a palette-colored PPM or a
/// PGM of class indices. Returns `(height, width, labels)`.
pub fn load_label_map(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let name = path.to_string_lossy();
    if name.ends_with(".ppm") || name.ends_with(".pgm") {
        let img = read_pnm(path)?;
        let labels = match img.planes.as_slice() {
            [r, g, b] => decode_label_colors(r, g, b, img.width)?,
            [l] => l.clone(),
            _ => return Err(data_err!("{name}: unexpected channel count")),
        };
        return Ok((img.height, img.width, labels));
    }
    let r = Raster::load_mcr(path)?;
    let labels = match r.role(Role::Label) {
        Some(Plane::U8(v)) => v.clone(),
        Some(Plane::F32(_)) => return Err(data_err!("{name}: LABEL channel must be u8")),
        None => return Err(data_err!("{name}: no LABEL channel")),
    };
    Ok((r.height(), r.width(), labels))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEntry {
    pub id: usize,
    pub source: String,
    pub row: usize,
    pub col: usize,
}

/// Record of a preparation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tile_size: usize,
    pub stride: usize,
    pub overlap: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub tiles: Vec<TileEntry>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Tile files (all four rotations) per split, relative to the manifest.
    pub train_files: Vec<String>,
    pub val_files: Vec<String>,
}

/// Tiles in memory, rotations included.
pub struct Prepared {
    pub manifest: Manifest,
    pub train: Vec<Raster>,
    pub val: Vec<Raster>,
}

pub fn tile_file_name(id: usize, rotation: usize) -> String {
    format!("tile{id:05}_rot{}.mcr", rotation * 90)
}

pub fn prepare_tiles(scenes: &[(String, Raster)], cfg: &DataConfig, seed: u64) -> Result<Prepared> {
    let sets: Vec<_> = scenes
        .iter()
        .map(|(_, r)| tile_raster(r.height(), r.width(), cfg.tile_size, cfg.overlap))
        .collect::<Result<_>>()?;
    let mut tiles = Vec::new();
    let mut footprints = Vec::new();
    let mut plans = Vec::new();
    for (s, ((name, _), set)) in scenes.iter().zip(&sets).enumerate() {
        for i in 0..set.origins.len() {
            let (row, col, height, width) = set.footprint(i);
            footprints.push(Footprint {
                source: s,
                row,
                col,
                height,
                width,
            });
            tiles.push(TileEntry {
                id: tiles.len(),
                source: name.clone(),
                row,
                col,
            });
            plans.push((s, i));
        }
    }
    let stride = crate::data::tiling::tile_stride(cfg.tile_size, cfg.overlap)?;
    let split = split_train_val(&footprints, cfg.val_fraction, seed)?;
    let expand = |ids: &[usize]| -> Result<(Vec<Raster>, Vec<String>)> {
        let mut rasters = Vec::new();
        let mut files = Vec::new();
        for &id in ids {
            let (s, i) = plans[id];
            let tile = sets[s].extract(&scenes[s].1, i);
            for (rot, t) in rotate_augment(&tile)?.into_iter().enumerate() {
                rasters.push(t);
                files.push(tile_file_name(id, rot));
            }
        }
        Ok((rasters, files))
    };
    let (train, train_files) = expand(&split.train)?;
    let (val, val_files) = expand(&split.val)?;
    Ok(Prepared {
        manifest: Manifest {
            tile_size: cfg.tile_size,
            stride,
            overlap: cfg.overlap,
            val_fraction: cfg.val_fraction,
            seed,
            tiles,
            train: split.train,
            val: split.val,
            dropped: split.dropped,
            train_files,
            val_files,
        },
        train,
        val,
    })
}

/// Writes tiles and `manifest.json` into `out`.
pub fn write_prepared(prepared: &Prepared, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let m = &prepared.manifest;
    for (files, rasters) in [
        (&m.train_files, &prepared.train),
        (&m.val_files, &prepared.val),
    ] {
        for (f, r) in files.iter().zip(rasters) {
            r.save_mcr(&out.join(f))?;
        }
    }
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(m).map_err(|e| data_err!("manifest: {e}"))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Loads the train and validation tiles listed in a tile directory.
pub fn read_prepared(dir: &Path) -> Result<Prepared> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| data_err!("{}: {e}", path.display()))?;
    let load = |files: &[String]| {
        files
            .iter()
            .map(|f| Raster::load_mcr(&dir.join(f)))
            .collect::<Result<Vec<_>>>()
    };
    let train = load(&manifest.train_files)?;
    let val = load(&manifest.val_files)?;
    Ok(Prepared {
        manifest,
        train,
        val,
    })
}
