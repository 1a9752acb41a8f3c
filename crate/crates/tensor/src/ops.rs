//! Forward definitions of the differentiable primitives.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::config_err;
use crate::graph::Op;
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::{Error, Float, Graph, Result, Tensor, Var};

/// Spatial padding mode. `Same` pads with zeros (convolution) or shrinks
/// the averaging divisor (pooling) so that stride-1 outputs keep the input
/// extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Standard deviation of the depth-wise multiplicative noise for a rate.
pub fn dmgn_std(noiserate: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&noiserate) {
        return Err(config_err!("noiserate must lie in [0, 1), got {noiserate}"));
    }
    Ok((noiserate / (1.0 - noiserate)).sqrt())
}

/// Draws `count` noise multipliers from `Normal(1, dmgn_std(noiserate))`.
pub fn dmgn_multipliers<R: Rng + ?Sized>(
    noiserate: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let std = dmgn_std(noiserate)?;
    if std == 0.0 {
        return Ok(vec![1.0; count]);
    }
    let normal = Normal::new(1.0, std).map_err(|e| config_err!("noise distribution: {e}"))?;
    Ok((0..count).map(|_| normal.sample(rng)).collect())
}

fn same_shape<T: Float>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(config_err!(
            "{what}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

impl<T: Float> Graph<T> {
    /// Stride-1 convolution with optional dilation. Weights are
    /// `[out_c, in_c, kh, kw]`, bias `[out_c]`.
    pub fn conv2d(
        &mut self,
        x: &Var<T>,
        w: &Var<T>,
        bias: Option<&Var<T>>,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var<T>> {
        let (n, ci, h, wd) = x.value.dims4()?;
        let [co, wci, kh, kw] = w.shape()[..] else {
            return Err(config_err!(
                "conv weights must be rank 4, got {:?}",
                w.shape()
            ));
        };
        if wci != ci {
            return Err(config_err!(
                "conv input has {ci} channels but weights expect {wci}"
            ));
        }
        if dilation == 0 || kh == 0 || kw == 0 {
            return Err(config_err!("conv kernel and dilation must be positive"));
        }
        if let Some(b) = bias {
            if b.shape() != [co] {
                return Err(config_err!(
                    "conv bias shape {:?}, expected [{co}]",
                    b.shape()
                ));
            }
        }
        let eff_h = kh + (kh - 1) * (dilation - 1);
        let eff_w = kw + (kw - 1) * (dilation - 1);
        let (pad_top, pad_left, out_h, out_w) = match padding {
            Padding::Same => ((eff_h - 1) / 2, (eff_w - 1) / 2, h, wd),
            Padding::Valid => {
                if eff_h > h || eff_w > wd {
                    return Err(config_err!(
                        "effective kernel {eff_h}x{eff_w} exceeds input {h}x{wd}"
                    ));
                }
                (0, 0, h - eff_h + 1, wd - eff_w + 1)
            }
        };
        let geom = ConvGeom {
            n,
            in_c: ci,
            in_h: h,
            in_w: wd,
            out_c: co,
            kh,
            kw,
            dilation,
            pad_top,
            pad_left,
            out_h,
            out_w,
        };
        let data = kernels::conv2d_forward(
            x.value.data(),
            w.value.data(),
            bias.map(|b| b.value.data()),
            &geom,
        );
        let out = Tensor::from_vec(&[n, co, out_h, out_w], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.record(out, &inputs, false, || Op::Conv2d {
            x: Arc::clone(&x.value),
            w: Arc::clone(&w.value),
            geom,
        }))
    }

    pub fn max_pool2(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = x.value.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(config_err!("max_pool2 needs even extents, got {h}x{w}"));
        }
        let (data, argmax) = kernels::max_pool2_forward(x.value.data(), n * c, h, w);
        let out = Tensor::from_vec(&[n, c, h / 2, w / 2], data)?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(out, &[x], false, || Op::MaxPool2 { argmax, in_shape }))
    }

    /// Windowed mean with an edge-corrected divisor.
    pub fn avg_pool(
        &mut self,
        x: &Var<T>,
        k: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Var<T>> {
        let (n, c, h, w) = x.value.dims4()?;
        if k == 0 || stride == 0 {
            return Err(config_err!("avg_pool window and stride must be positive"));
        }
        let axis = |extent: usize| -> Result<(usize, usize)> {
            match padding {
                Padding::Same => {
                    let out = extent.div_ceil(stride);
                    let total = ((out - 1) * stride + k).saturating_sub(extent);
                    Ok((total / 2, out))
                }
                Padding::Valid => {
                    if k > extent {
                        return Err(config_err!("avg_pool window {k} exceeds extent {extent}"));
                    }
                    Ok((0, (extent - k) / stride + 1))
                }
            }
        };
        let (pad_top, out_h) = axis(h)?;
        let (pad_left, out_w) = axis(w)?;
        let geom = PoolGeom {
            planes: n * c,
            in_h: h,
            in_w: w,
            k,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        };
        let out = Tensor::from_vec(
            &[n, c, out_h, out_w],
            kernels::avg_pool_forward(x.value.data(), &geom),
        )?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(out, &[x], false, || Op::AvgPool { geom, in_shape }))
    }

    /// Nearest-neighbour x2 upsampling.
    pub fn upsample2(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = x.value.dims4()?;
        let out = Tensor::from_vec(
            &[n, c, 2 * h, 2 * w],
            kernels::upsample2_forward(x.value.data(), n * c, h, w),
        )?;
        let in_shape = x.shape().to_vec();
        Ok(self.record(out, &[x], false, || Op::Upsample2 { in_shape }))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: &Var<T>) -> Var<T> {
        let out = Arc::new(x.value.map(|v| if v > T::zero() { v } else { v.exp_m1() }));
        let saved = Arc::clone(&out);
        self.record_shared(out, &[x], false, || Op::Elu { out: saved })
    }

    /// Per-pixel softmax over the channel axis.
    pub fn softmax_channels(&mut self, x: &Var<T>) -> Result<Var<T>> {
        let (n, c, h, w) = x.value.dims4()?;
        let plane = h * w;
        let src = x.value.data();
        let mut data = vec![T::zero(); src.len()];
        let mut row = vec![T::zero(); c];
        for b in 0..n {
            let base = b * c * plane;
            for i in 0..plane {
                let mut max = T::neg_infinity();
                for (ch, r) in row.iter_mut().enumerate() {
                    *r = src[base + ch * plane + i];
                    max = max.max(*r);
                }
                let mut total = T::zero();
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    total += *r;
                }
                for (ch, r) in row.iter().enumerate() {
                    data[base + ch * plane + i] = *r / total;
                }
            }
        }
        let out = Arc::new(Tensor::from_vec(x.shape(), data)?);
        let saved = Arc::clone(&out);
        Ok(self.record_shared(out, &[x], false, || Op::Softmax { out: saved }))
    }

    pub fn concat_channels(&mut self, xs: &[&Var<T>]) -> Result<Var<T>> {
        let first = xs
            .first()
            .ok_or_else(|| config_err!("concat of zero tensors"))?;
        let (n, _, h, w) = first.value.dims4()?;
        let mut channels = Vec::with_capacity(xs.len());
        for x in xs {
            let (xn, xc, xh, xw) = x.value.dims4()?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(config_err!(
                    "concat: batch/spatial extents {:?} vs {:?}",
                    x.shape(),
                    first.shape()
                ));
            }
            channels.push(xc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (x, &c) in xs.iter().zip(&channels) {
                data.extend_from_slice(&x.value.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let out = Tensor::from_vec(&[n, total, h, w], data)?;
        Ok(self.record(out, xs, false, || Op::Concat { channels }))
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape(a, b, "add")?;
        let data = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(a.shape(), data)?;
        Ok(self.record(out, &[a, b], false, || Op::Add))
    }

    pub fn sub(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape(a, b, "sub")?;
        let data = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::from_vec(a.shape(), data)?;
        Ok(self.record(out, &[a, b], false, || Op::Sub))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        same_shape(a, b, "mul")?;
        let data = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(a.shape(), data)?;
        Ok(self.record(out, &[a, b], false, || Op::Mul {
            a: Arc::clone(&a.value),
            b: Arc::clone(&b.value),
        }))
    }

    /// Multiplication by a non-trainable constant.
    pub fn scale_const(&mut self, x: &Var<T>, factor: T) -> Var<T> {
        let out = x.value.map(|v| v * factor);
        self.record(out, &[x], false, || Op::Scale { factor })
    }

    /// Identity forward; the edge to `x` is gated so backward sends it nothing.
    pub fn stop_gradient(&mut self, x: &Var<T>) -> Var<T> {
        let out = self.gate_value(x);
        self.record_shared(out, &[x], true, || Op::StopGradient)
    }

    /// Depth-wise multiplicative Gaussian noise.
    ///
    /// In training mode every `(batch, channel)` plane is scaled by its own
    /// draw from `Normal(1, sqrt(rate / (1 - rate)))`; the draws are
    /// constants for backward. Outside training, and at rate 0, this returns
    /// `x` itself.
    pub fn dmgn<R: Rng + ?Sized>(
        &mut self,
        x: &Var<T>,
        noiserate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var<T>> {
        let std = dmgn_std(noiserate)?;
        if !training || std == 0.0 {
            return Ok(x.clone());
        }
        let (n, c, h, w) = x.value.dims4()?;
        let multipliers: Vec<T> = dmgn_multipliers(noiserate, n * c, rng)?
            .into_iter()
            .map(T::from_f64_lossy)
            .collect();
        let plane = h * w;
        let data = x
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * multipliers[i / plane])
            .collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        Ok(self.record(out, &[x], false, || Op::Dmgn { multipliers }))
    }

    pub fn sum(&mut self, x: &Var<T>) -> Var<T> {
        let out = Tensor::scalar(x.value.sum());
        let in_shape = x.shape().to_vec();
        self.record(out, &[x], false, || Op::Sum { in_shape })
    }

    /// Mean over pixels of `-ln(max(p_true, 1e-12))`.
    pub fn cross_entropy_loss(&mut self, probs: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
        let (n, c, h, w) = probs.value.dims4()?;
        let plane = h * w;
        if labels.len() != n * plane {
            return Err(config_err!(
                "{} labels for {} pixels",
                labels.len(),
                n * plane
            ));
        }
        if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
            return Err(Error::Data(format!(
                "label {bad} at pixel {i} is outside [0, {c})"
            )));
        }
        let clamp = T::from_f64_lossy(1e-12);
        let p = probs.value.data();
        let mut total = T::zero();
        for b in 0..n {
            for i in 0..plane {
                let v = p[(b * c + labels[b * plane + i]) * plane + i];
                total -= if v.is_nan() { v } else { v.max(clamp).ln() };
            }
        }
        let out = Tensor::scalar(total / T::from_usize(n * plane).unwrap());
        let labels = Arc::new(labels.to_vec());
        Ok(self.record(out, &[probs], false, || Op::CrossEntropy {
            probs: Arc::clone(&probs.value),
            labels,
            clamp,
        }))
    }
}
