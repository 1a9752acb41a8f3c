//! Central finite-difference verification of analytic gradients.
//!
//! The function under test maps input vars to any tensor; it is reduced to
//! a scalar by a fixed pseudo-random projection so every output element
//! participates with a distinct weight. Values passed through
//! `stop_gradient` are held at their unperturbed values during the
//! numerical sweep, so a gated branch is differentiated as the constant
//! that backward treats it as.

use std::sync::Arc;

use crate::{Graph, Result, Tensor, Var};

/// Per-input comparison of analytic and numerical gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// For each input: `max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|)`.
    /// Zero when both gradients vanish identically.
    pub max_rel_error: Vec<f64>,
    /// Largest absolute analytic gradient entry per input.
    pub max_abs_grad: Vec<f64>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Deterministic projection weights in `[0.5, 1.5)`.
fn projection(len: usize) -> Vec<f64> {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..len)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

fn projected<F>(
    f: &F,
    graph: &mut Graph<f64>,
    inputs: Vec<Var<f64>>,
) -> Result<(Var<f64>, Var<f64>)>
where
    F: Fn(&mut Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let out = f(graph, &inputs)?;
    let weights = Var::constant(Tensor::from_vec(
        out.shape(),
        projection(out.value().len()),
    )?);
    let weighted = graph.mul(&out, &weights)?;
    let loss = graph.sum(&weighted);
    Ok((out, loss))
}

/// Compares backward against central differences with step `epsilon`.
pub fn finite_diff_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let (_, loss) = projected(&f, &mut graph, vars.clone())?;
    let grads = graph.backward(&loss)?;

    // unperturbed pass, logging gate values
    let mut probe = Graph::gate_probe(None);
    let consts: Vec<Var<f64>> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
    projected(&f, &mut probe, consts)?;
    let gates: Vec<Arc<Tensor<f64>>> = probe.take_gate_log();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::gate_probe(Some(gates.clone()));
        let vars = perturbed.iter().map(|t| Var::constant(t.clone())).collect();
        let (_, loss) = projected(&f, &mut g, vars)?;
        Ok(loss.value().data()[0])
    };

    let mut max_rel_error = Vec::with_capacity(inputs.len());
    let mut max_abs_grad = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let base = inputs[i].data()[j];
            work[i].data_mut()[j] = base + epsilon;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = base - epsilon;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = base;
            *slot = (plus - minus) / (2.0 * epsilon);
        }
        let scale = analytic
            .data()
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = analytic
            .data()
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        max_rel_error.push(if scale == 0.0 { 0.0 } else { diff / scale });
        max_abs_grad.push(analytic.max_abs());
    }
    Ok(GradReport {
        max_rel_error,
        max_abs_grad,
        tolerance,
    })
}

/// Outcome of [`primitive_suite`] for one primitive.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub primitive: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Worst relative error over all shapes and inputs.
    pub worst: f64,
    pub passed: bool,
}

const SUITE_SHAPES: [[usize; 4]; 5] = [
    [1, 2, 8, 8],
    [2, 1, 4, 6],
    [1, 3, 6, 4],
    [2, 2, 2, 2],
    [1, 1, 10, 6],
];

type Case<'a> = Box<dyn Fn(&mut Graph<f64>, &[Var<f64>]) -> Result<Var<f64>> + 'a>;

/// Checks every differentiable primitive in f64 on five input shapes.
pub fn primitive_suite(epsilon: f64, tolerance: f64, seed: u64) -> Result<Vec<SuiteEntry>> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let mut rng = StdRng::seed_from_u64(seed);
    let mut uniform = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    // window maxima stay unique, ELU inputs avoid the kink
    let distinct = |shape: &[usize], salt: usize| {
        let len: usize = shape.iter().product();
        Tensor::from_fn(shape, |i| ((i * 37 + salt * 11) % len) as f64 * 1e-2 - 0.5)
    };
    let away = |t: Tensor<f64>| t.map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 });

    let names: [&'static str; 16] = [
        "conv2d",
        "conv2d_dilated",
        "conv2d_valid",
        "max_pool2",
        "avg_pool_same",
        "avg_pool_valid",
        "upsample2",
        "elu",
        "softmax_channels",
        "concat_channels",
        "add",
        "sub",
        "mul",
        "scale_const",
        "stop_gradient",
        "dmgn",
    ];
    let mut entries: Vec<SuiteEntry> = names
        .iter()
        .chain(&["sum", "cross_entropy_loss"])
        .map(|&primitive| SuiteEntry {
            primitive,
            shapes: Vec::new(),
            worst: 0.0,
            passed: true,
        })
        .collect();
    let mut record = |index: usize, shape: &[usize], report: GradReport| {
        let e = &mut entries[index];
        e.shapes.push(shape.to_vec());
        e.worst = e.worst.max(report.worst());
        e.passed &= report.passed();
    };

    for (k, s) in SUITE_SHAPES.iter().enumerate() {
        let c = s[1];
        let other = [s[0], 2, s[2], s[3]];
        let labels: Vec<usize> = {
            let classes = c.max(2);
            (0..s[0] * s[2] * s[3])
                .map(|i| (i * 7 + k) % classes)
                .collect()
        };
        let ce_shape = [s[0], c.max(2), s[2], s[3]];
        let cases: Vec<(usize, Case, Vec<Tensor<f64>>)> = vec![
            (
                0,
                Box::new(|g, v| g.conv2d(&v[0], &v[1], Some(&v[2]), 1, crate::Padding::Same)),
                vec![uniform(s), uniform(&[3, c, 3, 3]), uniform(&[3])],
            ),
            (
                1,
                Box::new(|g, v| g.conv2d(&v[0], &v[1], Some(&v[2]), 2, crate::Padding::Same)),
                vec![uniform(s), uniform(&[2, c, 3, 3]), uniform(&[2])],
            ),
            (
                2,
                Box::new(|g, v| g.conv2d(&v[0], &v[1], None, 1, crate::Padding::Valid)),
                vec![uniform(s), uniform(&[2, c, 1, 1])],
            ),
            (3, Box::new(|g, v| g.max_pool2(&v[0])), vec![distinct(s, k)]),
            (
                4,
                Box::new(|g, v| g.avg_pool(&v[0], 5, 1, crate::Padding::Same)),
                vec![uniform(s)],
            ),
            (
                5,
                Box::new(|g, v| g.avg_pool(&v[0], 2, 2, crate::Padding::Valid)),
                vec![uniform(s)],
            ),
            (6, Box::new(|g, v| g.upsample2(&v[0])), vec![uniform(s)]),
            (7, Box::new(|g, v| Ok(g.elu(&v[0]))), vec![away(uniform(s))]),
            (
                8,
                Box::new(|g, v| g.softmax_channels(&v[0])),
                vec![uniform(s)],
            ),
            (
                9,
                Box::new(|g, v| g.concat_channels(&[&v[0], &v[1], &v[0]])),
                vec![uniform(s), uniform(&other)],
            ),
            (
                10,
                Box::new(|g, v| g.add(&v[0], &v[1])),
                vec![uniform(s), uniform(s)],
            ),
            (
                11,
                Box::new(|g, v| g.sub(&v[0], &v[1])),
                vec![uniform(s), uniform(s)],
            ),
            (
                12,
                Box::new(|g, v| g.mul(&v[0], &v[1])),
                vec![uniform(s), uniform(s)],
            ),
            (
                13,
                Box::new(|g, v| Ok(g.scale_const(&v[0], 0.05))),
                vec![uniform(s)],
            ),
            (
                14,
                Box::new(|g, v| {
                    let sq = g.mul(&v[0], &v[0])?;
                    let gated = g.stop_gradient(&sq);
                    g.add(&v[0], &gated)
                }),
                vec![uniform(s)],
            ),
            (
                15,
                Box::new(move |g, v| {
                    let mut noise = StdRng::seed_from_u64(seed ^ k as u64);
                    g.dmgn(&v[0], 0.25, true, &mut noise)
                }),
                vec![uniform(s)],
            ),
            (16, Box::new(|g, v| Ok(g.sum(&v[0]))), vec![uniform(s)]),
            (
                17,
                Box::new(|g, v| {
                    let p = g.softmax_channels(&v[0])?;
                    g.cross_entropy_loss(&p, &labels)
                }),
                vec![uniform(&ce_shape)],
            ),
        ];
        for (index, f, inputs) in cases {
            let report = finite_diff_check(f, &inputs, epsilon, tolerance)?;
            record(index, s, report);
        }
    }
    Ok(entries)
}
