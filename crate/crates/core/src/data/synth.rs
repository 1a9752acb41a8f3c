//! Synthetic multimodal scenes: smooth terrain with rectangles and ellipses
//! whose class sets the reflectance in each optical band and the height
//! above ground.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::raster::{Plane, Raster, Role};

/// Mean IR, R, G, B reflectance and height above terrain (m) per class.
pub const SIGNATURES: [[f64; 5]; 6] = [
    [95.0, 125.0, 125.0, 120.0, 0.0],
    [135.0, 175.0, 95.0, 165.0, 8.0],
    [185.0, 80.0, 150.0, 70.0, 0.3],
    [160.0, 55.0, 100.0, 60.0, 10.0],
    [110.0, 210.0, 200.0, 40.0, 1.5],
    [60.0, 150.0, 60.0, 100.0, 2.0],
];

const OPTICAL_NOISE: f64 = 12.0;
const HEIGHT_NOISE: f64 = 0.3;

#[derive(Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

/// `(class, shape, min half-extent, max half-extent, objects per 64x64)`,
/// drawn in this order so later classes sit on top.
const LAYERS: [(u8, Shape, usize, usize, f64); 5] = [
    (2, Shape::Rect, 8, 24, 1.0),
    (1, Shape::Rect, 6, 20, 1.0),
    (5, Shape::Ellipse, 2, 5, 0.8),
    (3, Shape::Ellipse, 3, 8, 1.5),
    (4, Shape::Rect, 2, 4, 1.2),
];

/// One `size x size` scene with IR, R, G, B (8-bit), DSM and LABEL.
pub fn synth_scene(size: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * size;
    let mut label = vec![0u8; n];
    let density = n as f64 / 4096.0;
    for &(class, shape, lo, hi, per_tile) in &LAYERS {
        let count = (per_tile * density).round().max(1.0) as usize;
        for _ in 0..count {
            let cy = rng.gen_range(0..size) as f64;
            let cx = rng.gen_range(0..size) as f64;
            let ry = rng.gen_range(lo..=hi) as f64;
            let rx = rng.gen_range(lo..=hi) as f64;
            let (y0, y1) = (
                (cy - ry).max(0.0) as usize,
                ((cy + ry) as usize).min(size - 1),
            );
            let (x0, x1) = (
                (cx - rx).max(0.0) as usize,
                ((cx + rx) as usize).min(size - 1),
            );
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let inside = match shape {
                        Shape::Rect => true,
                        Shape::Ellipse => {
                            let dy = (y as f64 - cy) / ry;
                            let dx = (x as f64 - cx) / rx;
                            dy * dy + dx * dx <= 1.0
                        }
                    };
                    if inside {
                        label[y * size + x] = class;
                    }
                }
            }
        }
    }

    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(1.0..3.0),
            )
        })
        .collect();
    let optical = Normal::new(0.0, OPTICAL_NOISE).unwrap();
    let height = Normal::new(0.0, HEIGHT_NOISE).unwrap();
    let mut bands = [vec![0u8; n], vec![0u8; n], vec![0u8; n], vec![0u8; n]];
    let mut dsm = vec![0f32; n];
    for i in 0..n {
        let sig = SIGNATURES[label[i] as usize];
        for (b, band) in bands.iter_mut().enumerate() {
            band[i] = (sig[b] + optical.sample(&mut rng))
                .round()
                .clamp(0.0, 255.0) as u8;
        }
        let (y, x) = (
            (i / size) as f64 / size as f64,
            (i % size) as f64 / size as f64,
        );
        let terrain: f64 = 30.0
            + waves
                .iter()
                .map(|&(f, py, px, a)| {
                    a * (std::f64::consts::TAU * f * y + py).sin()
                        * (std::f64::consts::TAU * f * x + px).cos()
                })
                .sum::<f64>();
        dsm[i] = (terrain + sig[4] + height.sample(&mut rng)) as f32;
    }

    let mut r = Raster::new(size, size);
    let [ir, red, green, blue] = bands;
    for (role, plane) in [
        (Role::Ir, Plane::U8(ir)),
        (Role::R, Plane::U8(red)),
        (Role::G, Plane::U8(green)),
        (Role::B, Plane::U8(blue)),
        (Role::Dsm, Plane::F32(dsm)),
        (Role::Label, Plane::U8(label)),
    ] {
        r.push(role.name(), plane)
            .expect("synthetic planes are consistent");
    }
    r
}

/// `count` scenes; scene `i` uses stream `i` of the seeded generator.
pub fn synth_dataset(count: usize, size: usize, seed: u64) -> Vec<Raster> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synth_scene(size, rng.gen())
        })
        .collect()
}
