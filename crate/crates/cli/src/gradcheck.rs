use orthoseg::{build_network, Error, ForwardOptions, NetworkConfig, Result, Stage};
use orthoseg_tensor::gradcheck::primitive_suite;
use orthoseg_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPSILON: f64 = 1e-5;
const TOLERANCE: f64 = 1e-6;

fn line(ok: bool, what: &str, detail: String) -> bool {
    println!("{} {what}: {detail}", if ok { "ok  " } else { "FAIL" });
    ok
}

pub fn run(seed: u64) -> Result<()> {
    let mut all = true;
    for e in primitive_suite(EPSILON, TOLERANCE, seed)? {
        all &= line(
            e.passed,
            e.primitive,
            format!(
                "max relative error {:.2e} over {} shapes",
                e.worst,
                e.shapes.len()
            ),
        );
    }
    all &= gating(seed)?;
    if all {
        println!("all checks passed (tolerance {TOLERANCE:e})");
        Ok(())
    } else {
        Err(Error::Numerical("gradient check failed".into()))
    }
}

/// Gate and gradient-flow assertions on the desk network.
fn gating(seed: u64) -> Result<bool> {
    let cfg = NetworkConfig::desk();
    let (net, params) = build_network(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = || Tensor::from_fn(&[1, 3, 32, 32], |_| rng.gen_range(-1.0..1.0));
    let (a, b) = (input(), input());
    let labels: Vec<usize> = (0..32 * 32)
        .map(|i| (i * 7 + 3) % cfg.num_classes)
        .collect();

    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let out = net.forward(
        &mut g,
        &p,
        &Var::constant(a.clone()),
        &Var::constant(b.clone()),
        &mut ForwardOptions::inference(),
    )?;
    let loss = g.cross_entropy_loss(&out.probs, &labels)?;
    let grads = g.backward(&loss)?;

    let mut ok = true;
    for (name, v) in &out.trace.gated_feature_inputs {
        let m = grads.get_or_zeros(v).max_abs();
        ok &= line(
            m == 0.0,
            &format!("gate {name}"),
            format!("max |grad| {m:e}"),
        );
    }
    if let Some((d, f)) = &out.trace.sccb_gate_taps {
        let m = grads
            .get_or_zeros(d)
            .max_abs()
            .max(grads.get_or_zeros(f).max_abs());
        ok &= line(m == 0.0, "gate sccb", format!("max |grad| {m:e}"));
    }
    let mut flowing = 0;
    for (name, v) in p.iter() {
        let wanted = name.ends_with(".weights")
            && (name.starts_with("encoder.") || name.contains(".decision"));
        if wanted {
            let m = grads.get(v).map_or(0.0, |t| t.max_abs());
            if m > 0.0 {
                flowing += 1;
            } else {
                ok &= line(false, &format!("gradient {name}"), "zero".into());
            }
        }
    }
    line(
        true,
        "gradient flow",
        format!("{flowing} encoder and decision convs receive gradient"),
    );

    let base = net.predict(&params, &a, &b)?;
    let stages = (1..=cfg.num_encoder_blocks)
        .map(Stage::Decoder)
        .chain((1..=cfg.num_additional_residual_blocks).map(Stage::Residual));
    for stage in stages {
        let mut g = Graph::inference();
        let p = params.bind(&mut g);
        let mut opts = ForwardOptions::inference();
        opts.perturb = Some((stage, 0.25));
        let out = net.forward(
            &mut g,
            &p,
            &Var::constant(a.clone()),
            &Var::constant(b.clone()),
            &mut opts,
        )?;
        let diff = out
            .probs
            .value()
            .data()
            .iter()
            .zip(base.data())
            .fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
        ok &= line(
            diff > 0.0,
            &format!("forward sensitivity {stage:?}"),
            format!("max change {diff:e}"),
        );
    }
    Ok(ok)
}
