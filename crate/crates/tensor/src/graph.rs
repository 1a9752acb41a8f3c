use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::{Error, Float, Result, Tensor};

pub type NodeId = usize;

/// A value flowing through a [`Graph`].
///
/// Values recorded on a graph carry the id of the node that produced them;
/// constants (inputs, frozen parameters, anything computed while the graph
/// is not recording) carry none and never receive gradient.
#[derive(Clone, Debug)]
pub struct Var<T: Float = f32> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) node: Option<NodeId>,
}

impl<T: Float> Var<T> {
    pub fn constant(t: Tensor<T>) -> Self {
        Self {
            value: Arc::new(t),
            node: None,
        }
    }

    pub fn constant_shared(t: Arc<Tensor<T>>) -> Self {
        Self {
            value: t,
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn is_constant(&self) -> bool {
        self.node.is_none()
    }

    pub fn into_tensor(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|a| (*a).clone())
    }
}

/// Input edge of a recorded operation. A gated edge passes values forward
/// but contributes no gradient backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub node: NodeId,
    pub gated: bool,
}

pub(crate) enum Op<T: Float> {
    Leaf,
    Conv2d {
        x: Arc<Tensor<T>>,
        w: Arc<Tensor<T>>,
        geom: ConvGeom,
    },
    MaxPool2 {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    AvgPool {
        geom: PoolGeom,
        in_shape: Vec<usize>,
    },
    Upsample2 {
        in_shape: Vec<usize>,
    },
    Elu {
        out: Arc<Tensor<T>>,
    },
    Softmax {
        out: Arc<Tensor<T>>,
    },
    Concat {
        channels: Vec<usize>,
    },
    Add,
    Sub,
    Mul {
        a: Arc<Tensor<T>>,
        b: Arc<Tensor<T>>,
    },
    Scale {
        factor: T,
    },
    StopGradient,
    Dmgn {
        multipliers: Vec<T>,
    },
    Sum {
        in_shape: Vec<usize>,
    },
    CrossEntropy {
        probs: Arc<Tensor<T>>,
        labels: Arc<Vec<usize>>,
        clamp: T,
    },
}

impl<T: Float> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::AvgPool { .. } => "avg_pool",
            Op::Upsample2 { .. } => "upsample2",
            Op::Elu { .. } => "elu",
            Op::Softmax { .. } => "softmax_channels",
            Op::Concat { .. } => "concat_channels",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale_const",
            Op::StopGradient => "stop_gradient",
            Op::Dmgn { .. } => "dmgn",
            Op::Sum { .. } => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

pub(crate) struct Node<T: Float> {
    pub(crate) op: Op<T>,
    pub(crate) inputs: Vec<Option<Edge>>,
    pub(crate) shape: Vec<usize>,
}

/// Tape of recorded operations, in execution (hence topological) order.
///
/// A graph built with [`Graph::inference`] records nothing: every result is
/// a constant and intermediate activations are freed as soon as their
/// [`Var`] is dropped.
pub struct Graph<T: Float = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    recording: bool,
    retained: HashSet<NodeId>,
    gates: GateLog<T>,
}

/// Values passed through `stop_gradient`, in call order. Finite-difference
/// checks replay them so that perturbing an input leaves gated branches at
/// their unperturbed values, mirroring what backward sees.
#[derive(Default)]
pub(crate) struct GateLog<T: Float> {
    pub(crate) logging: bool,
    pub(crate) seen: Vec<Arc<Tensor<T>>>,
    pub(crate) replay: Option<Vec<Arc<Tensor<T>>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            retained: HashSet::new(),
            gates: GateLog {
                logging: false,
                seen: Vec::new(),
                replay: None,
            },
        }
    }

    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf. On a non-recording graph this is a constant.
    pub fn param(&mut self, t: Tensor<T>) -> Var<T> {
        self.param_shared(Arc::new(t))
    }

    pub fn param_shared(&mut self, t: Arc<Tensor<T>>) -> Var<T> {
        if !self.recording {
            return Var {
                value: t,
                node: None,
            };
        }
        let shape = t.shape().to_vec();
        let id = self.push_node(Op::Leaf, Vec::new(), shape);
        Var {
            value: t,
            node: Some(id),
        }
    }

    /// Keeps the gradient of an intermediate value so it can be inspected
    /// after [`Graph::backward`]. Leaves are always kept.
    pub fn retain_grad(&mut self, v: &Var<T>) {
        if let Some(id) = v.node {
            self.retained.insert(id);
        }
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id].op.name()
    }

    pub fn node_inputs(&self, id: NodeId) -> &[Option<Edge>] {
        &self.nodes[id].inputs
    }

    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    fn push_node(&mut self, op: Op<T>, inputs: Vec<Option<Edge>>, shape: Vec<usize>) -> NodeId {
        debug_assert!(inputs.iter().flatten().all(|e| e.node < self.nodes.len()));
        self.nodes.push(Node { op, inputs, shape });
        self.nodes.len() - 1
    }

    /// Non-recording graph that logs gate values (`replay == None`) or
    /// substitutes previously logged ones.
    pub(crate) fn gate_probe(replay: Option<Vec<Arc<Tensor<T>>>>) -> Self {
        let mut g = Self::inference();
        g.gates.logging = true;
        g.gates.replay = replay;
        g
    }

    pub(crate) fn take_gate_log(&mut self) -> Vec<Arc<Tensor<T>>> {
        std::mem::take(&mut self.gates.seen)
    }

    /// Forward value of a gate: the input itself, or the logged value when
    /// replaying.
    pub(crate) fn gate_value(&mut self, x: &Var<T>) -> Arc<Tensor<T>> {
        if !self.gates.logging {
            return Arc::clone(&x.value);
        }
        let index = self.gates.seen.len();
        let value = match &self.gates.replay {
            Some(log) if index < log.len() && log[index].shape() == x.shape() => {
                Arc::clone(&log[index])
            }
            _ => Arc::clone(&x.value),
        };
        self.gates.seen.push(Arc::clone(&value));
        value
    }

    /// Wraps an operation result, recording a node when any input is tracked.
    pub(crate) fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        gated: bool,
        op: impl FnOnce() -> Op<T>,
    ) -> Var<T> {
        self.record_shared(Arc::new(value), inputs, gated, op)
    }

    pub(crate) fn record_shared(
        &mut self,
        value: Arc<Tensor<T>>,
        inputs: &[&Var<T>],
        gated: bool,
        op: impl FnOnce() -> Op<T>,
    ) -> Var<T> {
        let tracked = self.recording && inputs.iter().any(|v| v.node.is_some());
        if !tracked {
            return Var { value, node: None };
        }
        let edges = inputs
            .iter()
            .map(|v| v.node.map(|node| Edge { node, gated }))
            .collect();
        let id = self.push_node(op(), edges, value.shape().to_vec());
        Var {
            value,
            node: Some(id),
        }
    }

    /// Reverse-mode sweep from a scalar.
    ///
    /// Each node is visited once, in reverse recording order. Gated edges
    /// are skipped, so they contribute exactly zero to their source.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let root = loss
            .node
            .ok_or_else(|| Error::Usage("loss does not depend on any tracked value".into()))?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.shape(), T::one()));
        let mut kept = HashMap::new();
        for id in (0..=root).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            let wanted: Vec<bool> = node
                .inputs
                .iter()
                .map(|e| matches!(e, Some(Edge { gated: false, .. })))
                .collect();
            if wanted.iter().any(|&w| w) {
                let contributions = backward_op(node, &gout, &wanted)?;
                for (edge, contribution) in node.inputs.iter().zip(contributions) {
                    let (Some(edge), Some(c)) = (edge, contribution) else {
                        continue;
                    };
                    if edge.gated {
                        continue;
                    }
                    match &mut grads[edge.node] {
                        Some(acc) => acc.add_assign(&c),
                        slot => *slot = Some(c),
                    }
                }
            }
            if matches!(node.op, Op::Leaf) || self.retained.contains(&id) {
                kept.insert(id, gout);
            }
        }
        Ok(Gradients { grads: kept })
    }
}

/// Gradients of leaves (and retained intermediates) after a backward pass.
#[derive(Debug, Default)]
pub struct Gradients<T: Float = f32> {
    grads: HashMap<NodeId, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    /// `None` when no gradient reached the value (constant, gated or unused).
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        v.node.and_then(|id| self.grads.get(&id))
    }

    pub fn get_or_zeros(&self, v: &Var<T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn remove(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        v.node.and_then(|id| self.grads.remove(&id))
    }
}

fn tensor<T: Float>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(shape, data).expect("backward produced a mis-sized buffer")
}

fn backward_op<T: Float>(
    node: &Node<T>,
    gout: &Tensor<T>,
    wanted: &[bool],
) -> Result<Vec<Option<Tensor<T>>>> {
    let g = gout.data();
    let out = match &node.op {
        Op::Leaf => Vec::new(),
        Op::Conv2d { x, w, geom } => {
            let dx = wanted[0]
                .then(|| tensor(x.shape(), kernels::conv2d_backward_input(g, w.data(), geom)));
            let dw = wanted[1].then(|| {
                tensor(
                    w.shape(),
                    kernels::conv2d_backward_weights(x.data(), g, geom),
                )
            });
            let mut v = vec![dx, dw];
            if node.inputs.len() == 3 {
                v.push(
                    wanted[2]
                        .then(|| tensor(&[geom.out_c], kernels::conv2d_backward_bias(g, geom))),
                );
            }
            v
        }
        Op::MaxPool2 { argmax, in_shape } => {
            let mut dx = vec![T::zero(); in_shape.iter().product()];
            for (&src, &gv) in argmax.iter().zip(g) {
                dx[src] += gv;
            }
            vec![Some(tensor(in_shape, dx))]
        }
        Op::AvgPool { geom, in_shape } => {
            vec![Some(tensor(in_shape, kernels::avg_pool_backward(g, geom)))]
        }
        Op::Upsample2 { in_shape } => {
            let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
            vec![Some(tensor(
                in_shape,
                kernels::upsample2_backward(g, n * c, h, w),
            ))]
        }
        Op::Elu { out } => {
            // d/dx elu = 1 for x > 0, exp(x) = elu(x) + 1 otherwise
            let dx = out
                .data()
                .iter()
                .zip(g)
                .map(|(&y, &gv)| {
                    if y > T::zero() {
                        gv
                    } else {
                        gv * (y + T::one())
                    }
                })
                .collect();
            vec![Some(tensor(out.shape(), dx))]
        }
        Op::Softmax { out } => {
            let (n, c, h, w) = out.dims4()?;
            let plane = h * w;
            let p = out.data();
            let mut dx = vec![T::zero(); p.len()];
            for b in 0..n {
                let base = b * c * plane;
                for i in 0..plane {
                    let mut dot = T::zero();
                    for ch in 0..c {
                        let idx = base + ch * plane + i;
                        dot += p[idx] * g[idx];
                    }
                    for ch in 0..c {
                        let idx = base + ch * plane + i;
                        dx[idx] = p[idx] * (g[idx] - dot);
                    }
                }
            }
            vec![Some(tensor(out.shape(), dx))]
        }
        Op::Concat { channels } => {
            let (n, total, h, w) = gout.dims4()?;
            let plane = h * w;
            let mut offset = 0;
            let mut v = Vec::with_capacity(channels.len());
            for (i, &c) in channels.iter().enumerate() {
                if wanted[i] {
                    let mut d = Vec::with_capacity(n * c * plane);
                    for b in 0..n {
                        let start = (b * total + offset) * plane;
                        d.extend_from_slice(&g[start..start + c * plane]);
                    }
                    v.push(Some(tensor(&[n, c, h, w], d)));
                } else {
                    v.push(None);
                }
                offset += c;
            }
            v
        }
        Op::Add => vec![Some(gout.clone()), Some(gout.clone())],
        Op::Sub => vec![Some(gout.clone()), Some(gout.map(|v| -v))],
        Op::Mul { a, b } => {
            let da = wanted[0].then(|| {
                tensor(
                    a.shape(),
                    g.iter().zip(b.data()).map(|(&gv, &bv)| gv * bv).collect(),
                )
            });
            let db = wanted[1].then(|| {
                tensor(
                    b.shape(),
                    g.iter().zip(a.data()).map(|(&gv, &av)| gv * av).collect(),
                )
            });
            vec![da, db]
        }
        Op::Scale { factor } => vec![Some(gout.map(|v| v * *factor))],
        Op::StopGradient => vec![None],
        Op::Dmgn { multipliers } => {
            let plane: usize = node.shape[2] * node.shape[3];
            let dx = g
                .iter()
                .enumerate()
                .map(|(i, &gv)| gv * multipliers[i / plane])
                .collect();
            vec![Some(tensor(&node.shape, dx))]
        }
        Op::Sum { in_shape } => vec![Some(Tensor::full(in_shape, g[0]))],
        Op::CrossEntropy {
            probs,
            labels,
            clamp,
        } => {
            let (n, c, h, w) = probs.dims4()?;
            let plane = h * w;
            let count = T::from_usize(n * plane).unwrap();
            let p = probs.data();
            let mut dx = vec![T::zero(); p.len()];
            for b in 0..n {
                for i in 0..plane {
                    let label = labels[b * plane + i];
                    let idx = (b * c + label) * plane + i;
                    // the clamp is flat below the floor
                    if p[idx] >= *clamp {
                        dx[idx] = -g[0] / (p[idx] * count);
                    }
                }
            }
            vec![Some(tensor(probs.shape(), dx))]
        }
    };
    Ok(out)
}
