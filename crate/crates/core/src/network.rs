//! The segmentation network: two VGG-style encoders, a chain of decoder
//! blocks that refine a residual stream of class-wise decision
//! activations, additional residual blocks, and the spatial correlation
//! correction block (SCCB).
//!
//! Gradient flow is restricted. Each decoder block and additional residual
//! block sees the previous block's features through a stop-gradient, so
//! encoder parameters learn only through the skip connections. The SCCB
//! reads gated copies of the decisions and features; its correction is
//! added to the ungated decisions.

use orthoseg_tensor::{Graph, Padding, Tensor, Var};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{NetworkConfig, ENCODER_INPUT_CHANNELS};
use crate::error::config_err;
use crate::params::{BoundParams, ModelParams};
use crate::Result;

/// One convolution layer: weights `[out_c, in_c, k, k]` and bias `[out_c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
}

impl LayerSpec {
    fn new(name: String, in_c: usize, out_c: usize, kernel: usize) -> Self {
        Self {
            name,
            in_c,
            out_c,
            kernel,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.in_c * self.out_c * self.kernel * self.kernel
    }
}

/// Encoder side. The primary encoder reads IR-R-G, the auxiliary one
/// B-NDVI-DSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Primary,
    Auxiliary,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Primary => "primary",
            Side::Auxiliary => "auxiliary",
        }
    }
}

/// Multipliers on the base noiserates, one per region. All start at 1 and
/// shrink at fine-tuning plateaus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScale {
    pub encoder: f64,
    pub decoder: f64,
    pub sccb: f64,
}

impl Default for NoiseScale {
    fn default() -> Self {
        Self {
            encoder: 1.0,
            decoder: 1.0,
            sccb: 1.0,
        }
    }
}

/// Where a feature perturbation is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Output features of decoder block `k` (1 = coarsest).
    Decoder(usize),
    /// Output features of additional residual block `r`.
    Residual(usize),
}

/// Per-call switches for [`Network::forward`].
pub struct ForwardOptions<'a> {
    /// `Some` enables DMGN with this generator and region scaling.
    pub noise: Option<(&'a mut dyn RngCore, NoiseScale)>,
    /// Adds a constant to one stage's output features.
    pub perturb: Option<(Stage, f32)>,
}

impl ForwardOptions<'_> {
    pub fn inference() -> Self {
        Self {
            noise: None,
            perturb: None,
        }
    }
}

impl<'a> ForwardOptions<'a> {
    pub fn training(rng: &'a mut dyn RngCore, scale: NoiseScale) -> Self {
        Self {
            noise: Some((rng, scale)),
            perturb: None,
        }
    }
}

/// Activations kept for inspection. Gradient probes are retained on the
/// graph and only populated when it records.
#[derive(Default)]
pub struct Trace {
    /// Every named intermediate activation's shape, in execution order.
    pub shapes: Vec<(String, Vec<usize>)>,
    /// Features entering the gate of each gated block (decoder blocks 2..
    /// and the additional residual blocks). The gate is their only consumer.
    pub gated_feature_inputs: Vec<(String, Var)>,
    /// Decisions and features entering the SCCB gates; the gates are
    /// their only consumers.
    pub sccb_gate_taps: Option<(Var, Var)>,
    /// Ungated SCCB decision input and the block's output.
    pub sccb_decisions_in: Option<Var>,
    pub sccb_output: Option<Var>,
}

pub struct ForwardOutput {
    /// Softmax probabilities `[N, classes, H, W]`.
    pub probs: Var,
    /// Decision activations entering the softmax.
    pub logits: Var,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
}

/// Builds the network and He-initialised parameters (biases zero).
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<(Network, ModelParams)> {
    let net = Network::new(config)?;
    let params = net.init_params(seed)?;
    Ok((net, params))
}

fn encoder_conv(side: Side, block: usize, i: usize) -> String {
    format!("encoder.{}.block{block}.conv{i}", side.name())
}

impl Network {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            layers: layer_specs(config),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        for l in &self.layers {
            let fan_in = (l.in_c * l.kernel * l.kernel) as f32;
            let normal =
                Normal::new(0.0f32, (2.0 / fan_in).sqrt()).map_err(|e| config_err!("{e}"))?;
            let w = Tensor::from_fn(&[l.out_c, l.in_c, l.kernel, l.kernel], |_| {
                normal.sample(&mut rng)
            });
            params.insert(format!("{}.weights", l.name), w)?;
            params.insert(format!("{}.bias", l.name), Tensor::zeros(&[l.out_c]))?;
        }
        Ok(params)
    }

    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        let d = self.config.required_divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(config_err!(
                "input extent {h}x{w} must be a positive multiple of {d} (2^{} encoder blocks)",
                self.config.num_encoder_blocks
            ));
        }
        Ok(())
    }

    /// Runs the full network on `[N, 3, H, W]` primary and auxiliary inputs.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        primary: &Var,
        auxiliary: &Var,
        opts: &mut ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (n, pc, h, w) = primary.value().dims4()?;
        if pc != ENCODER_INPUT_CHANNELS || auxiliary.shape() != primary.shape() {
            return Err(config_err!(
                "expected two [N, 3, H, W] inputs, got {:?} and {:?}",
                primary.shape(),
                auxiliary.shape()
            ));
        }
        self.check_extent(h, w)?;
        let mut run = Run {
            g,
            p,
            cfg,
            opts,
            trace: Trace::default(),
        };
        let nb = cfg.num_encoder_blocks;

        let (prim_skips, prim_out) = run.encoder(Side::Primary, primary)?;
        let (aux_skips, aux_out) = run.encoder(Side::Auxiliary, auxiliary)?;
        let joined = run.g.concat_channels(&[&prim_out, &aux_out])?;
        let mut features = run
            .g
            .scale_const(&joined, (1.0 / cfg.input_scale_divisor) as f32);
        run.note("bottleneck", &features);

        // scaled network input at every decoder resolution, finest first
        let mut pyramid = vec![run.g.concat_channels(&[primary, auxiliary])?];
        for _ in 0..nb - 1 {
            let last = pyramid.last().unwrap();
            let next = run.g.avg_pool(last, 2, 2, Padding::Valid)?;
            pyramid.push(next);
        }

        let (bh, bw) = (h >> nb, w >> nb);
        let mut decisions = Var::constant(Tensor::zeros(&[n, cfg.num_classes, bh, bw]));
        for k in 1..=nb {
            let level = nb - k;
            (features, decisions) = run.decoder_block(
                k,
                &features,
                &decisions,
                &prim_skips[level],
                &aux_skips[level],
                &pyramid[level],
            )?;
        }
        decisions = run
            .g
            .scale_const(&decisions, (1.0 / cfg.output_scale_divisor) as f32);
        for r in 1..=cfg.num_additional_residual_blocks {
            (features, decisions) = run.residual_block(r, &features, &decisions, &pyramid[0])?;
        }
        let logits = run.sccb(&features, &decisions)?;
        let probs = run.g.softmax_channels(&logits)?;
        run.note("probabilities", &probs);
        Ok(ForwardOutput {
            probs,
            logits,
            trace: run.trace,
        })
    }

    /// Inference-mode forward on plain tensors.
    pub fn predict(
        &self,
        params: &ModelParams,
        primary: &Tensor,
        auxiliary: &Tensor,
    ) -> Result<Tensor> {
        let mut g = Graph::inference();
        let p = params.bind(&mut g);
        let out = self.forward(
            &mut g,
            &p,
            &Var::constant(primary.clone()),
            &Var::constant(auxiliary.clone()),
            &mut ForwardOptions::inference(),
        )?;
        drop(out.trace);
        drop(out.logits);
        Ok(out.probs.into_tensor())
    }
}

/// Conv layers in initialisation order.
pub fn layer_specs(cfg: &NetworkConfig) -> Vec<LayerSpec> {
    let mut v = Vec::new();
    let nb = cfg.num_encoder_blocks;
    for (side, filters) in [
        (Side::Primary, &cfg.primary_filters),
        (Side::Auxiliary, &cfg.auxiliary_filters),
    ] {
        let mut c = ENCODER_INPUT_CHANNELS;
        for b in 1..=nb {
            for i in 1..=NetworkConfig::convs_in_block(b) {
                v.push(LayerSpec::new(
                    encoder_conv(side, b, i),
                    c,
                    filters[b - 1],
                    3,
                ));
                c = filters[b - 1];
            }
        }
    }
    let input_maps = 4 * ENCODER_INPUT_CHANNELS;
    let d = cfg.decoder_filters;
    let classes = cfg.num_classes;
    let mut fin = cfg.primary_filters[nb - 1] + cfg.auxiliary_filters[nb - 1];
    for k in 1..=nb {
        let level = nb - k;
        let skips = cfg.primary_filters[level] + cfg.auxiliary_filters[level];
        v.push(LayerSpec::new(
            format!("decoder.block{k}.conv1"),
            fin + skips + input_maps,
            d,
            3,
        ));
        v.push(LayerSpec::new(format!("decoder.block{k}.conv2"), d, d, 3));
        v.push(LayerSpec::new(
            format!("decoder.block{k}.decision"),
            d,
            classes,
            1,
        ));
        fin = d;
    }
    for r in 1..=cfg.num_additional_residual_blocks {
        v.push(LayerSpec::new(
            format!("residual.block{r}.conv1"),
            d + input_maps,
            d,
            3,
        ));
        v.push(LayerSpec::new(format!("residual.block{r}.conv2"), d, d, 3));
        v.push(LayerSpec::new(
            format!("residual.block{r}.decision"),
            d,
            classes,
            1,
        ));
    }
    let s = &cfg.sccb;
    for (i, &(_, f)) in s.branches.iter().enumerate() {
        v.push(LayerSpec::new(
            format!("sccb.branch{}", i + 1),
            classes + d,
            f,
            3,
        ));
    }
    let branch_total: usize = s.branches.iter().map(|b| b.1).sum();
    v.push(LayerSpec::new(
        "sccb.conv1".into(),
        branch_total + classes,
        s.conv1_filters,
        1,
    ));
    v.push(LayerSpec::new(
        "sccb.conv2".into(),
        s.conv1_filters,
        s.conv2_filters,
        1,
    ));
    v
}

struct Run<'r, 'o> {
    g: &'r mut Graph,
    p: &'r BoundParams,
    cfg: &'r NetworkConfig,
    opts: &'r mut ForwardOptions<'o>,
    trace: Trace,
}

impl Run<'_, '_> {
    fn note(&mut self, name: impl Into<String>, v: &Var) {
        self.trace.shapes.push((name.into(), v.shape().to_vec()));
    }

    fn probe(&mut self, v: &Var) {
        self.g.retain_grad(v);
    }

    fn gate_probe(&mut self, name: String, v: &Var) {
        if self.g.is_recording() {
            self.g.retain_grad(v);
            self.trace.gated_feature_inputs.push((name, v.clone()));
        }
    }

    fn conv(&mut self, layer: &str, x: &Var, dilation: usize, elu: bool) -> Result<Var> {
        let w = self.p.get(&format!("{layer}.weights"))?;
        let b = self.p.get(&format!("{layer}.bias"))?;
        let y = self.g.conv2d(x, w, Some(b), dilation, Padding::Same)?;
        Ok(if elu { self.g.elu(&y) } else { y })
    }

    fn noise(&mut self, x: &Var, rate: impl Fn(&NoiseScale) -> f64) -> Result<Var> {
        match self.opts.noise.as_mut() {
            Some((rng, scale)) => {
                let r = rate(scale);
                Ok(self.g.dmgn(x, r, true, &mut **rng)?)
            }
            None => Ok(x.clone()),
        }
    }

    fn band_noise(&mut self, x: &Var, region: fn(&NoiseScale) -> f64) -> Result<Var> {
        let base = self.cfg.noise.rate_for(x.shape()[1]);
        self.noise(x, |s| base * region(s))
    }

    fn perturb(&mut self, stage: Stage, x: Var) -> Result<Var> {
        match self.opts.perturb {
            Some((s, delta)) if s == stage => {
                let c = Var::constant(Tensor::full(x.shape(), delta));
                Ok(self.g.add(&x, &c)?)
            }
            _ => Ok(x),
        }
    }

    /// Returns the pre-pool activation of every block and the final pooled
    /// output.
    fn encoder(&mut self, side: Side, input: &Var) -> Result<(Vec<Var>, Var)> {
        let mut skips = Vec::new();
        let mut x = input.clone();
        for b in 1..=self.cfg.num_encoder_blocks {
            let (_, _, h, w) = x.value().dims4()?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(config_err!(
                    "encoder block {b} needs even extents, got {h}x{w}"
                ));
            }
            for i in 1..=NetworkConfig::convs_in_block(b) {
                if i > 1 && b >= 4 {
                    x = self.band_noise(&x, |s| s.encoder)?;
                }
                x = self.conv(&encoder_conv(side, b, i), &x, 1, true)?;
            }
            let prefix = format!("encoder.{}.block{b}", side.name());
            self.note(format!("{prefix}.pre_pool"), &x);
            skips.push(x.clone());
            x = self.g.max_pool2(&x)?;
            x = self.band_noise(&x, |s| s.encoder)?;
            self.note(format!("{prefix}.pooled"), &x);
        }
        Ok((skips, x))
    }

    fn with_submean(&mut self, scaled: &Var) -> Result<(Var, Var)> {
        let mean = self
            .g
            .avg_pool(scaled, self.cfg.moving_average_size, 1, Padding::Same)?;
        let sub = self.g.sub(scaled, &mean)?;
        Ok((scaled.clone(), sub))
    }

    fn decoder_block(
        &mut self,
        k: usize,
        features_in: &Var,
        decisions_in: &Var,
        skip_p: &Var,
        skip_a: &Var,
        scaled: &Var,
    ) -> Result<(Var, Var)> {
        let up = self.g.upsample2(features_in)?;
        let f = if k == 1 {
            up
        } else {
            self.gate_probe(format!("decoder.block{k}"), &up);
            self.g.stop_gradient(&up)
        };
        if f.shape()[2..] != skip_p.shape()[2..] || f.shape()[2..] != scaled.shape()[2..] {
            return Err(config_err!(
                "decoder block {k}: upsampled features {:?} vs skip {:?} and input {:?}",
                f.shape(),
                skip_p.shape(),
                scaled.shape()
            ));
        }
        let decisions = self.g.upsample2(decisions_in)?;
        let f = self.band_noise(&f, |s| s.decoder)?;
        let sp = self.band_noise(skip_p, |s| s.decoder)?;
        let sa = self.band_noise(skip_a, |s| s.decoder)?;
        let (scaled, sub) = self.with_submean(scaled)?;
        let cat = self.g.concat_channels(&[&f, &sp, &sa, &scaled, &sub])?;

        let name = format!("decoder.block{k}");
        let dil = self.cfg.decoder_dilation;
        let h = self.conv(&format!("{name}.conv1"), &cat, dil, true)?;
        let h = self.band_noise(&h, |s| s.decoder)?;
        let h = self.conv(&format!("{name}.conv2"), &h, dil, true)?;
        let correction = self.conv(&format!("{name}.decision"), &h, 1, false)?;
        let decisions = self.g.add(&decisions, &correction)?;
        let h = self.perturb(Stage::Decoder(k), h)?;
        self.note(format!("{name}.features"), &h);
        self.note(format!("{name}.decisions"), &decisions);
        Ok((h, decisions))
    }

    fn residual_block(
        &mut self,
        r: usize,
        features_in: &Var,
        decisions: &Var,
        scaled: &Var,
    ) -> Result<(Var, Var)> {
        if features_in.shape()[2..] != decisions.shape()[2..]
            || decisions.shape()[2..] != scaled.shape()[2..]
        {
            return Err(config_err!(
                "residual block {r}: features {:?}, decisions {:?}, input {:?}",
                features_in.shape(),
                decisions.shape(),
                scaled.shape()
            ));
        }
        let name = format!("residual.block{r}");
        let f = if self.g.is_recording() {
            // separate node so the gate's share of the gradient can be read
            let tap = self.g.scale_const(features_in, 1.0);
            self.gate_probe(name.clone(), &tap);
            self.g.stop_gradient(&tap)
        } else {
            self.g.stop_gradient(features_in)
        };
        let rate = self.cfg.noise.residual;
        let f = self.noise(&f, |s| rate * s.decoder)?;
        let (scaled, sub) = self.with_submean(scaled)?;
        let cat = self.g.concat_channels(&[&f, &scaled, &sub])?;
        let dil = self.cfg.decoder_dilation;
        let h = self.conv(&format!("{name}.conv1"), &cat, dil, true)?;
        let h = self.noise(&h, |s| rate * s.decoder)?;
        let h = self.conv(&format!("{name}.conv2"), &h, dil, true)?;
        let correction = self.conv(&format!("{name}.decision"), &h, 1, false)?;
        let decisions = self.g.add(decisions, &correction)?;
        let h = self.perturb(Stage::Residual(r), h)?;
        self.note(format!("{name}.features"), &h);
        self.note(format!("{name}.decisions"), &decisions);
        Ok((h, decisions))
    }

    fn sccb(&mut self, features: &Var, decisions: &Var) -> Result<Var> {
        if decisions.shape()[1] != self.cfg.num_classes {
            return Err(config_err!(
                "sccb expects {} decision channels, got {:?}",
                self.cfg.num_classes,
                decisions.shape()
            ));
        }
        self.probe(decisions);
        let (d, f) = if self.g.is_recording() {
            let dt = self.g.scale_const(decisions, 1.0);
            let ft = self.g.scale_const(features, 1.0);
            self.probe(&dt);
            self.probe(&ft);
            let gated = (self.g.stop_gradient(&dt), self.g.stop_gradient(&ft));
            self.trace.sccb_gate_taps = Some((dt, ft));
            gated
        } else {
            (
                self.g.stop_gradient(decisions),
                self.g.stop_gradient(features),
            )
        };
        let cat = self.g.concat_channels(&[&d, &f])?;
        let pooled = self
            .g
            .avg_pool(&cat, self.cfg.sccb.pool_size, 1, Padding::Same)?;
        let mut parts = Vec::new();
        let rate = self.cfg.noise.sccb;
        for (i, &(dilation, _)) in self.cfg.sccb.branches.clone().iter().enumerate() {
            let b = self.conv(&format!("sccb.branch{}", i + 1), &pooled, dilation, true)?;
            parts.push(self.noise(&b, |s| rate * s.sccb)?);
        }
        parts.push(d);
        let refs: Vec<&Var> = parts.iter().collect();
        let c = self.g.concat_channels(&refs)?;
        let h = self.conv("sccb.conv1", &c, 1, true)?;
        let correction = self.conv("sccb.conv2", &h, 1, false)?;
        let out = self.g.add(decisions, &correction)?;
        self.probe(&out);
        self.note("sccb.output", &out);
        if self.g.is_recording() {
            self.trace.sccb_decisions_in = Some(decisions.clone());
            self.trace.sccb_output = Some(out.clone());
        }
        Ok(out)
    }
}
