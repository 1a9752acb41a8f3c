//! Channel normalization and assembly of the two encoder inputs.

use orthoseg_tensor::Tensor;

use crate::config::DataConfig;
use crate::data::raster::{Raster, Role};
use crate::error::data_err;
use crate::Result;

/// Optical reflectance: `x / divisor - 1`.
pub fn normalize_optical(plane: &[f64], divisor: f64) -> Vec<f64> {
    plane.iter().map(|&x| x / divisor - 1.0).collect()
}

/// Height: `(x - mean) / divisor`, with the mean taken over the plane.
pub fn normalize_dsm(plane: &[f64], divisor: f64) -> Vec<f64> {
    if plane.is_empty() {
        return Vec::new();
    }
    let mean = plane.iter().sum::<f64>() / plane.len() as f64;
    plane.iter().map(|&x| (x - mean) / divisor).collect()
}

/// `(ir - red) / (ir + red)`, zero where the denominator vanishes.
pub fn compute_ndvi(ir: &[f64], red: &[f64]) -> Vec<f64> {
    ir.iter()
        .zip(red)
        .map(|(&i, &r)| if i + r == 0.0 { 0.0 } else { (i - r) / (i + r) })
        .collect()
}

/// 2x2 stride-2 mean of an `h x w` plane.
pub fn downsample2(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let i = 2 * r * w + 2 * c;
            out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) / 4.0);
        }
    }
    out
}

/// Network-ready tensors for one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, 3, h/2, w/2]`: IR, R, G.
    pub primary: Tensor,
    /// `[1, 3, h/2, w/2]`: B, NDVI, DSM.
    pub auxiliary: Tensor,
    /// Full-resolution labels, when the tile has them.
    pub labels_full: Option<Vec<u8>>,
    /// Labels at network resolution (top-left pixel of each 2x2 cell).
    pub labels: Option<Vec<usize>>,
}

/// Normalizes, groups and downsamples a tile. Labels are validated
/// against `num_classes` when present.
pub fn assemble_inputs(tile: &Raster, cfg: &DataConfig, num_classes: usize) -> Result<Sample> {
    let (h, w) = (tile.height(), tile.width());
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(data_err!("tile extent {h}x{w} must be even"));
    }
    let raw = |role| tile.require(role).map(|p| p.to_f64());
    let ir = raw(Role::Ir)?;
    let red = raw(Role::R)?;
    let green = raw(Role::G)?;
    let blue = raw(Role::B)?;
    let dsm = raw(Role::Dsm)?;
    let ndvi = match tile.role(Role::Ndvi) {
        Some(p) => p.to_f64(),
        None => compute_ndvi(&ir, &red),
    };
    let opt = |p: &[f64]| normalize_optical(p, cfg.optical_divisor);
    let group = |planes: [Vec<f64>; 3]| -> Result<Tensor> {
        let mut data = Vec::with_capacity(3 * h * w / 4);
        for p in planes {
            data.extend(downsample2(&p, h, w).into_iter().map(|v| v as f32));
        }
        Ok(Tensor::from_vec(&[1, 3, h / 2, w / 2], data)?)
    };
    let primary = group([opt(&ir), opt(&red), opt(&green)])?;
    let auxiliary = group([opt(&blue), ndvi, normalize_dsm(&dsm, cfg.dsm_divisor)])?;
    let (labels_full, labels) = match tile.role(Role::Label) {
        Some(_) => {
            let full = tile.labels(num_classes)?.to_vec();
            let net = (0..h / 2)
                .flat_map(|r| (0..w / 2).map(move |c| (r, c)))
                .map(|(r, c)| full[2 * r * w + 2 * c] as usize)
                .collect();
            (Some(full), Some(net))
        }
        None => (None, None),
    };
    Ok(Sample {
        primary,
        auxiliary,
        labels_full,
        labels,
    })
}
