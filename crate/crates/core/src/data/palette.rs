use crate::error::data_err;
use crate::Result;

pub const CLASS_NAMES: [&str; 6] = [
    "impervious_surfaces",
    "building",
    "low_vegetation",
    "tree",
    "car",
    "clutter",
];

pub const PALETTE: [[u8; 3]; 6] = [
    [255, 255, 255],
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
];

/// Maps planar RGB to class indices. Every pixel must be a palette color.
pub fn decode_label_colors(r: &[u8], g: &[u8], b: &[u8], width: usize) -> Result<Vec<u8>> {
    r.iter()
        .zip(g)
        .zip(b)
        .enumerate()
        .map(|(i, ((&r, &g), &b))| {
            PALETTE
                .iter()
                .position(|p| *p == [r, g, b])
                .map(|c| c as u8)
                .ok_or_else(|| {
                    data_err!(
                        "pixel at row {}, column {} has off-palette color ({r}, {g}, {b})",
                        i / width,
                        i % width
                    )
                })
        })
        .collect()
}

/// Planar RGB for a class-index plane. Indices beyond the palette are
/// shown black.
pub fn colorize(labels: &[u8]) -> [Vec<u8>; 3] {
    let mut out = [
        vec![0; labels.len()],
        vec![0; labels.len()],
        vec![0; labels.len()],
    ];
    for (i, &l) in labels.iter().enumerate() {
        let rgb = PALETTE.get(l as usize).copied().unwrap_or([0, 0, 0]);
        for c in 0..3 {
            out[c][i] = rgb[c];
        }
    }
    out
}
