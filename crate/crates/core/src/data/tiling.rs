use crate::data::raster::Raster;
use crate::error::config_err;
use crate::Result;

/// Overlapping square tiles over one source raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSet {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
    pub stride: usize,
    /// `(row, col)` origins in row-major order.
    pub origins: Vec<(usize, usize)>,
    /// Zero rows and columns added below and right of the source.
    pub pad_bottom: usize,
    pub pad_right: usize,
}

/// `round(tile * (1 - overlap))`, halves rounded up, never below 1.
pub fn tile_stride(tile: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(config_err!("overlap {overlap} outside [0, 1)"));
    }
    if tile == 0 {
        return Err(config_err!("tile size must be positive"));
    }
    Ok(((tile as f64 * (1.0 - overlap) + 0.5).floor() as usize).max(1))
}

/// `0, stride, 2 stride, ...` up to the first origin whose tile reaches the end.
pub fn axis_origins(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut v = vec![0];
    while v.last().unwrap() + tile < extent {
        v.push(v.last().unwrap() + stride);
    }
    v
}

pub fn tile_raster(height: usize, width: usize, tile: usize, overlap: f64) -> Result<TileSet> {
    let stride = tile_stride(tile, overlap)?;
    if height == 0 || width == 0 {
        return Err(config_err!("cannot tile an empty raster"));
    }
    let rows = axis_origins(height, tile, stride);
    let cols = axis_origins(width, tile, stride);
    let pad_bottom = rows.last().unwrap() + tile - height;
    let pad_right = cols.last().unwrap() + tile - width;
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(TileSet {
        height,
        width,
        tile,
        stride,
        origins,
        pad_bottom,
        pad_right,
    })
}

impl TileSet {
    pub fn extract(&self, raster: &Raster, index: usize) -> Raster {
        let (r, c) = self.origins[index];
        raster.window(r, c, self.tile, self.tile)
    }

    /// Footprint of tile `index` clipped to the source: `(row, col, h, w)`.
    pub fn footprint(&self, index: usize) -> (usize, usize, usize, usize) {
        let (r, c) = self.origins[index];
        (
            r,
            c,
            self.tile.min(self.height - r),
            self.tile.min(self.width - c),
        )
    }
}

/// Counterclockwise quarter turns: `rot90(x)[r][c] = x[c][n - 1 - r]`.
pub fn rotate(raster: &Raster, quarter_turns: usize) -> Result<Raster> {
    let n = raster.height();
    if raster.width() != n {
        return Err(config_err!(
            "rotation needs a square tile, got {}x{}",
            n,
            raster.width()
        ));
    }
    Ok(match quarter_turns % 4 {
        0 => raster.clone(),
        1 => raster.remap(n, n, |r, c| (c, n - 1 - r)),
        2 => raster.remap(n, n, |r, c| (n - 1 - r, n - 1 - c)),
        _ => raster.remap(n, n, |r, c| (n - 1 - c, r)),
    })
}

/// The tile and its 90, 180 and 270 degree rotations.
pub fn rotate_augment(raster: &Raster) -> Result<[Raster; 4]> {
    Ok([
        raster.clone(),
        rotate(raster, 1)?,
        rotate(raster, 2)?,
        rotate(raster, 3)?,
    ])
}
