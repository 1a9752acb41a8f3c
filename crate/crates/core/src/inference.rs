//! Overlap-tile prediction of rasters larger than one network input.

use orthoseg_tensor::Tensor;

use crate::config::DataConfig;
use crate::data::{assemble_inputs, Raster};
use crate::network::Network;
use crate::params::ModelParams;
use crate::{Error, Result};

/// Anything that maps a pair of input tensors to class probabilities
/// `[1, classes, h, w]` at the input resolution.
pub trait SegmentationModel {
    fn num_classes(&self) -> usize;
    fn predict(&self, primary: &Tensor, auxiliary: &Tensor) -> Result<Tensor>;
}

/// A network with its weights.
pub struct Model {
    pub network: Network,
    pub params: ModelParams,
}

impl Model {
    /// The network and weights stored in a checkpoint.
    pub fn from_checkpoint(ck: &crate::checkpoint::Checkpoint) -> Result<Self> {
        let network = Network::new(&ck.config()?.network)?;
        crate::trainer::check_params(&network, &ck.params)?;
        Ok(Self {
            network,
            params: ck.params.clone(),
        })
    }
}

impl SegmentationModel for Model {
    fn num_classes(&self) -> usize {
        self.network.config().num_classes
    }

    fn predict(&self, primary: &Tensor, auxiliary: &Tensor) -> Result<Tensor> {
        self.network.predict(&self.params, primary, auxiliary)
    }
}

/// Symmetric reflection into `0..n`: index `-1 - i` maps to `i`, and
/// reflections repeat when the offset exceeds the extent.
pub fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Mirror-pads every channel by `pad` on all four sides.
pub fn mirror_pad(raster: &Raster, pad: usize) -> Raster {
    let (h, w) = (raster.height(), raster.width());
    raster.remap(h + 2 * pad, w + 2 * pad, |y, x| {
        (
            reflect(y as isize - pad as isize, h),
            reflect(x as isize - pad as isize, w),
        )
    })
}

/// Crop origins along one axis: the stride grid, with a final origin
/// clamped so the last crop ends at the padded edge.
fn axis_origins(padded: usize, tile: usize, stride: usize) -> Vec<usize> {
    let last = padded - tile;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Crop layout for one raster.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchPlan {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
    pub stride: usize,
    pub center: usize,
    /// Mirror padding before the crops; `(tile - center) / 2`.
    pub pad: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub origins_y: Vec<usize>,
    pub origins_x: Vec<usize>,
}

impl StitchPlan {
    pub fn new(
        height: usize,
        width: usize,
        tile: usize,
        stride: usize,
        center: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Usage("cannot stitch an empty raster".into()));
        }
        if center == 0 || center > tile || (tile - center) % 2 != 0 {
            return Err(Error::Usage(format!(
                "center {center} must be positive, at most tile {tile}, and leave an even margin"
            )));
        }
        if stride == 0 || stride > center {
            return Err(Error::Usage(format!(
                "stride {stride} must be positive and at most the center {center}"
            )));
        }
        let pad = (tile - center) / 2;
        let padded_height = (height + 2 * pad).max(tile);
        let padded_width = (width + 2 * pad).max(tile);
        Ok(Self {
            height,
            width,
            tile,
            stride,
            center,
            pad,
            padded_height,
            padded_width,
            origins_y: axis_origins(padded_height, tile, stride),
            origins_x: axis_origins(padded_width, tile, stride),
        })
    }

    pub fn from_config(height: usize, width: usize, cfg: &DataConfig) -> Result<Self> {
        Self::new(
            height,
            width,
            cfg.infer_tile,
            cfg.infer_stride,
            cfg.infer_center,
        )
    }

    pub fn crops(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.origins_y
            .iter()
            .flat_map(move |&y| self.origins_x.iter().map(move |&x| (y, x)))
    }

    pub fn num_crops(&self) -> usize {
        self.origins_y.len() * self.origins_x.len()
    }

    /// Central region of the crop at padded origin `o`, in original
    /// coordinates and clipped to the raster: `start..end`.
    pub fn center_span(&self, o: usize, extent: usize) -> (usize, usize) {
        (o.min(extent), (o + self.center).min(extent))
    }

    fn axis_counts(&self, origins: &[usize], extent: usize) -> Vec<u32> {
        let mut c = vec![0u32; extent];
        for &o in origins {
            let (s, e) = self.center_span(o, extent);
            for v in &mut c[s..e] {
                *v += 1;
            }
        }
        c
    }

    /// How many central regions cover each original pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let cy = self.axis_counts(&self.origins_y, self.height);
        let cx = self.axis_counts(&self.origins_x, self.width);
        cy.iter()
            .flat_map(|&a| cx.iter().map(move |&b| a * b))
            .collect()
    }
}

/// Full-raster prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Stitched {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Class-major probabilities `[classes][height][width]`.
    pub probs: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Stitched {
    /// Probabilities as an MCR raster, one f32 channel per class.
    pub fn probability_raster(&self) -> Result<Raster> {
        let mut r = Raster::new(self.height, self.width);
        let n = self.height * self.width;
        for c in 0..self.classes {
            r.push(
                format!("P{c}"),
                crate::data::Plane::F32(self.probs[c * n..(c + 1) * n].to_vec()),
            )?;
        }
        Ok(r)
    }

    pub fn label_raster(&self) -> Result<Raster> {
        let mut r = Raster::new(self.height, self.width);
        r.push(
            crate::data::Role::Label.name(),
            crate::data::Plane::U8(self.labels.clone()),
        )?;
        Ok(r)
    }
}

/// Per-pixel argmax over the channel axis of `[1, C, H, W]`; ties go to
/// the lowest class.
pub fn argmax_channels(probs: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = probs.dims4()?;
    if n != 1 || c == 0 || c > 256 {
        return Err(Error::Usage(format!(
            "argmax expects [1, 1..=256, H, W], got {:?}",
            probs.shape()
        )));
    }
    Ok(argmax_planes(probs.data(), c, h * w))
}

fn argmax_planes(data: &[f32], classes: usize, plane: usize) -> Vec<u8> {
    (0..plane)
        .map(|i| {
            let mut best = 0;
            for k in 1..classes {
                if data[k * plane + i] > data[best * plane + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Predicts a whole raster with overlapping crops. Each crop keeps only
/// its central region; overlapping centers are averaged.
pub fn infer_full_raster(
    model: &dyn SegmentationModel,
    raster: &Raster,
    cfg: &DataConfig,
) -> Result<Stitched> {
    let plan = StitchPlan::from_config(raster.height(), raster.width(), cfg)?;
    stitch(model, raster, cfg, &plan)
}

pub fn stitch(
    model: &dyn SegmentationModel,
    raster: &Raster,
    cfg: &DataConfig,
    plan: &StitchPlan,
) -> Result<Stitched> {
    let (h, w) = (plan.height, plan.width);
    if (raster.height(), raster.width()) != (h, w) {
        return Err(Error::Usage("stitch plan does not match the raster".into()));
    }
    let classes = model.num_classes();
    let n = h * w;
    let mut sum = vec![0.0f64; classes * n];
    let pad = plan.pad as isize;
    let tile = plan.tile;
    for (oy, ox) in plan.crops() {
        let crop = raster.remap(tile, tile, |y, x| {
            (
                reflect(oy as isize + y as isize - pad, h),
                reflect(ox as isize + x as isize - pad, w),
            )
        });
        let sample = assemble_inputs(&crop, cfg, classes)?;
        let probs = model.predict(&sample.primary, &sample.auxiliary)?;
        let (_, c, ph, pw) = probs.dims4()?;
        if c != classes || ph * 2 != tile || pw * 2 != tile {
            return Err(Error::Numerical(format!(
                "model returned {:?} for a {tile}x{tile} crop",
                probs.shape()
            )));
        }
        let p = probs.data();
        let (ys, ye) = plan.center_span(oy, h);
        let (xs, xe) = plan.center_span(ox, w);
        for k in 0..classes {
            let src = &p[k * ph * pw..(k + 1) * ph * pw];
            let dst = &mut sum[k * n..(k + 1) * n];
            for y in ys..ye {
                let cy = (y + plan.pad - oy) / 2;
                for x in xs..xe {
                    let cx = (x + plan.pad - ox) / 2;
                    dst[y * w + x] += src[cy * pw + cx] as f64;
                }
            }
        }
    }
    let coverage = plan.coverage();
    let mut probs = vec![0.0f32; classes * n];
    for k in 0..classes {
        for i in 0..n {
            probs[k * n + i] = (sum[k * n + i] / coverage[i] as f64) as f32;
        }
    }
    let labels = argmax_planes(&probs, classes, n);
    Ok(Stitched {
        height: h,
        width: w,
        classes,
        probs,
        labels,
    })
}
