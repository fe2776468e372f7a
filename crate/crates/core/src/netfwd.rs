//! Forward evaluation of RELU networks and reverse-mode gradients of the
//! softmax cross-entropy loss.
//!
//! Hidden units apply `max(0, x)`; output units are linear and their values
//! are the class scores fed to the softmax. The RELU derivative at exactly
//! zero is taken to be zero.
//!
//! Two engines compute identical quantities: a generic one that walks the
//! DAG node by node (batch-vectorized per node), and a dense one used for
//! fully connected layered graphs that expresses every layer as a matrix
//! product. [`Engine::Auto`] picks the dense engine whenever the graph
//! allows it.

use crate::data::Dataset;
use crate::dense;
use crate::error::{Error, Location, Result};
use crate::graph::{NetworkGraph, NodeKind, WeightVector};
use crate::init::DropoutMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }

    /// Subgradient used by backprop; zero at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// How hidden units behave during a pass.
#[derive(Debug, Clone, Copy, Default)]
pub enum HiddenMode<'a> {
    #[default]
    Plain,
    /// Training with dropout: dropped units output zero and pass no gradient.
    Dropout(&'a DropoutMask),
    /// Evaluation of a network trained with dropout: hidden outputs are
    /// multiplied by the retain probability.
    Inference { retain_prob: f64 },
}

impl HiddenMode<'_> {
    #[inline]
    fn gate(&self, v: usize) -> f64 {
        match self {
            HiddenMode::Plain => 1.0,
            HiddenMode::Dropout(mask) => {
                if mask.is_retained(v) {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenMode::Inference { retain_prob } => *retain_prob,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    /// Dense kernels for fully connected layered graphs, generic otherwise.
    #[default]
    Auto,
    /// Always walk the DAG node by node.
    Generic,
}

/// A mini-batch: `len x dim` row-major features and one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("batch dimensionality must be positive".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::Input(format!(
                "batch holds {} features for {} labels of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|x| !x.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite feature in row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Batch {
            inputs,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean cross-entropy of the softmax over output scores.
    pub loss: f64,
    /// Fraction of rows whose arg-max score is not the label.
    pub zero_one_error: f64,
    pub examples: usize,
}

/// Output scores for a single input row.
pub fn forward(g: &NetworkGraph, w: &WeightVector, x: &[f64]) -> Result<Vec<f64>> {
    let batch = Batch::new(x.to_vec(), vec![0], x.len())?;
    forward_batch(g, w, &batch, HiddenMode::Plain, Engine::Auto)
}

/// Output scores for every row of `batch`, row-major `len x C`.
pub fn forward_batch(
    g: &NetworkGraph,
    w: &WeightVector,
    batch: &Batch,
    mode: HiddenMode<'_>,
    engine: Engine,
) -> Result<Vec<f64>> {
    check_shapes(g, w, batch)?;
    let pass = run_forward(g, w, batch, mode, engine)?;
    Ok(pass.scores())
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to every edge weight.
pub fn loss_and_grad(
    g: &NetworkGraph,
    w: &WeightVector,
    batch: &Batch,
) -> Result<(LossReport, WeightVector)> {
    loss_and_grad_with(g, w, batch, HiddenMode::Plain, Engine::Auto)
}

pub fn loss_and_grad_with(
    g: &NetworkGraph,
    w: &WeightVector,
    batch: &Batch,
    mode: HiddenMode<'_>,
    engine: Engine,
) -> Result<(LossReport, WeightVector)> {
    check_shapes(g, w, batch)?;
    check_labels(g, batch)?;
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let pass = run_forward(g, w, batch, mode, engine)?;
    let scores = pass.scores();
    let c = g.outputs().len();
    let b = batch.len();
    let mut dscores = vec![0.0; b * c];
    let (loss_sum, wrong) = softmax_xent(&scores, batch.labels(), c, Some(&mut dscores));
    let inv_b = 1.0 / b as f64;
    dscores.iter_mut().for_each(|d| *d *= inv_b);
    let report = LossReport {
        loss: loss_sum * inv_b,
        zero_one_error: wrong as f64 * inv_b,
        examples: b,
    };
    if !report.loss.is_finite() {
        return Err(Error::numeric(Location::Loss, format!("loss is {}", report.loss)));
    }
    let grad = pass.backward(g, w, &dscores, mode);
    if let Some(e) = grad.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(Location::Edge(e), "gradient is not finite"));
    }
    Ok((report, grad))
}

/// Mean loss and 0/1 error over a whole dataset, streamed in chunks.
pub fn evaluate(g: &NetworkGraph, w: &WeightVector, data: &Dataset) -> Result<LossReport> {
    evaluate_with(g, w, data, HiddenMode::Plain)
}

pub fn evaluate_with(
    g: &NetworkGraph,
    w: &WeightVector,
    data: &Dataset,
    mode: HiddenMode<'_>,
) -> Result<LossReport> {
    const CHUNK: usize = 1000;
    if data.is_empty() {
        return Err(Error::Input(format!("dataset `{}` is empty", data.name())));
    }
    let c = g.outputs().len();
    let mut loss_sum = 0.0;
    let mut wrong = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + CHUNK).min(data.len());
        let batch = data.batch_range(start, end)?;
        check_shapes(g, w, &batch)?;
        check_labels(g, &batch)?;
        let pass = run_forward(g, w, &batch, mode, Engine::Auto)?;
        let (l, e) = softmax_xent(&pass.scores(), batch.labels(), c, None);
        loss_sum += l;
        wrong += e;
        start = end;
    }
    let n = data.len() as f64;
    Ok(LossReport {
        loss: loss_sum / n,
        zero_one_error: wrong as f64 / n,
        examples: data.len(),
    })
}

fn check_shapes(g: &NetworkGraph, w: &WeightVector, batch: &Batch) -> Result<()> {
    g.check_weights(w)?;
    if batch.dim() != g.inputs().len() {
        return Err(Error::Input(format!(
            "input has {} features, network expects {}",
            batch.dim(),
            g.inputs().len()
        )));
    }
    Ok(())
}

fn check_labels(g: &NetworkGraph, batch: &Batch) -> Result<()> {
    let c = g.outputs().len();
    if c < 2 {
        return Err(Error::Input(format!(
            "classification needs at least 2 output units, network has {c}"
        )));
    }
    if let Some(&y) = batch.labels().iter().find(|&&y| y >= c) {
        return Err(Error::Input(format!("label {y} out of range for {c} classes")));
    }
    Ok(())
}

/// Sum of per-row cross-entropies and count of misclassified rows. When
/// `dscores` is given it receives `softmax - onehot` per row.
fn softmax_xent(
    scores: &[f64],
    labels: &[usize],
    c: usize,
    mut dscores: Option<&mut [f64]>,
) -> (f64, usize) {
    let mut loss = 0.0;
    let mut wrong = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &scores[i * c..(i + 1) * c];
        let mut arg = 0;
        for k in 1..c {
            if row[k] > row[arg] {
                arg = k;
            }
        }
        if arg != y {
            wrong += 1;
        }
        let m = row[arg];
        let sum: f64 = row.iter().map(|s| (s - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[y];
        if let Some(d) = dscores.as_deref_mut() {
            let drow = &mut d[i * c..(i + 1) * c];
            for k in 0..c {
                drow[k] = (row[k] - lse).exp();
            }
            drow[y] -= 1.0;
        }
    }
    (loss, wrong)
}

fn run_forward<'g>(
    g: &'g NetworkGraph,
    w: &WeightVector,
    batch: &Batch,
    mode: HiddenMode<'_>,
    engine: Engine,
) -> Result<Pass<'g>> {
    match (engine, g.layer_sizes()) {
        (Engine::Auto, Some(sizes)) => dense_forward(g, sizes, w, batch, mode),
        _ => generic_forward(g, w, batch, mode),
    }
}

enum Pass<'g> {
    /// Node-major buffers: `values[v * b + i]` for row `i`.
    Generic {
        g: &'g NetworkGraph,
        b: usize,
        pre: Vec<f64>,
        values: Vec<f64>,
    },
    /// Per layer, row-major `b x n_l`: post-activation values and (for
    /// hidden and output layers) pre-activations.
    Dense {
        sizes: &'g [usize],
        b: usize,
        values: Vec<Vec<f64>>,
        pre: Vec<Vec<f64>>,
    },
}

impl Pass<'_> {
    fn scores(&self) -> Vec<f64> {
        match self {
            Pass::Generic { g, b, values, .. } => {
                let c = g.outputs().len();
                let mut out = vec![0.0; b * c];
                for (k, &v) in g.outputs().iter().enumerate() {
                    for i in 0..*b {
                        out[i * c + k] = values[v * b + i];
                    }
                }
                out
            }
            Pass::Dense { pre, .. } => pre.last().cloned().unwrap_or_default(),
        }
    }

    fn backward(&self, g: &NetworkGraph, w: &WeightVector, dscores: &[f64], mode: HiddenMode<'_>) -> WeightVector {
        match self {
            Pass::Generic { b, pre, values, .. } => {
                let b = *b;
                let c = g.outputs().len();
                let act = Activation::Relu;
                let mut delta = vec![0.0; g.num_nodes() * b];
                for (k, &v) in g.outputs().iter().enumerate() {
                    for i in 0..b {
                        delta[v * b + i] = dscores[i * c + k];
                    }
                }
                let mut grad = vec![0.0; g.num_edges()];
                for &v in g.topological_order().iter().rev() {
                    match g.kind(v) {
                        NodeKind::Input => continue,
                        NodeKind::Hidden => {
                            let gate = mode.gate(v);
                            for i in 0..b {
                                delta[v * b + i] *= gate * act.derivative(pre[v * b + i]);
                            }
                        }
                        NodeKind::Output => {}
                    }
                    for &e in g.in_edges(v) {
                        let u = g.edge(e).src;
                        let (dv, du, xu) = split3(&mut delta, values, v, u, b);
                        let mut acc = 0.0;
                        for i in 0..b {
                            acc += dv[i] * xu[i];
                        }
                        grad[e] = acc;
                        if g.kind(u) != NodeKind::Input {
                            let we = w[e];
                            for i in 0..b {
                                du[i] += we * dv[i];
                            }
                        }
                    }
                }
                WeightVector::new(grad)
            }
            Pass::Dense {
                sizes,
                b,
                values,
                pre,
            } => {
                let b = *b;
                let d = sizes.len() - 1;
                let mut grad = vec![0.0; g.num_edges()];
                let mut offsets = Vec::with_capacity(d);
                let mut off = 0;
                for l in 0..d {
                    offsets.push(off);
                    off += sizes[l] * sizes[l + 1];
                }
                let mut node_base = vec![0usize; d + 1];
                for l in 1..=d {
                    node_base[l] = node_base[l - 1] + sizes[l - 1];
                }
                let mut delta = dscores.to_vec();
                for l in (0..d).rev() {
                    let (n_in, n_out) = (sizes[l], sizes[l + 1]);
                    let block = offsets[l]..offsets[l] + n_in * n_out;
                    dense::matmul_at_b(n_in, b, n_out, &values[l], &delta, &mut grad[block.clone()]);
                    if l == 0 {
                        break;
                    }
                    let mut dh = vec![0.0; b * n_in];
                    dense::matmul_a_bt(b, n_out, n_in, &delta, &w[block], &mut dh);
                    let z = &pre[l];
                    let gates: Vec<f64> = (0..n_in).map(|j| mode.gate(node_base[l] + j)).collect();
                    for (dh_row, z_row) in dh.chunks_exact_mut(n_in).zip(z.chunks_exact(n_in)) {
                        for ((d, &zk), &gate) in dh_row.iter_mut().zip(z_row).zip(&gates) {
                            *d *= if zk > 0.0 { gate } else { 0.0 };
                        }
                    }
                    delta = dh;
                }
                WeightVector::new(grad)
            }
        }
    }
}

/// Borrows the delta rows of `v` (mut) and `u` (mut) plus the value row of `u`.
fn split3<'a>(
    delta: &'a mut [f64],
    values: &'a [f64],
    v: usize,
    u: usize,
    b: usize,
) -> (&'a [f64], &'a mut [f64], &'a [f64]) {
    debug_assert_ne!(u, v);
    let xu = &values[u * b..(u + 1) * b];
    if u < v {
        let (lo, hi) = delta.split_at_mut(v * b);
        (&hi[..b], &mut lo[u * b..(u + 1) * b], xu)
    } else {
        let (lo, hi) = delta.split_at_mut(u * b);
        (&lo[v * b..(v + 1) * b], &mut hi[..b], xu)
    }
}

fn generic_forward<'g>(
    g: &'g NetworkGraph,
    w: &WeightVector,
    batch: &Batch,
    mode: HiddenMode<'_>,
) -> Result<Pass<'g>> {
    let b = batch.len();
    let n = g.num_nodes();
    let act = Activation::Relu;
    let mut values = vec![0.0; n * b];
    let mut pre = vec![0.0; n * b];
    for (col, &v) in g.inputs().iter().enumerate() {
        for i in 0..b {
            values[v * b + i] = batch.inputs()[i * batch.dim() + col];
        }
    }
    let mut z = vec![0.0; b];
    for &v in g.topological_order() {
        let kind = g.kind(v);
        if kind == NodeKind::Input {
            continue;
        }
        z.iter_mut().for_each(|x| *x = 0.0);
        for &e in g.in_edges(v) {
            let u = g.edge(e).src;
            let we = w[e];
            let xu = &values[u * b..(u + 1) * b];
            for i in 0..b {
                z[i] += we * xu[i];
            }
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric(Location::Node(v), "pre-activation is not finite"));
        }
        pre[v * b..(v + 1) * b].copy_from_slice(&z);
        let out = &mut values[v * b..(v + 1) * b];
        if kind == NodeKind::Hidden {
            let gate = mode.gate(v);
            for i in 0..b {
                out[i] = gate * act.apply(z[i]);
            }
        } else {
            out.copy_from_slice(&z);
        }
    }
    Ok(Pass::Generic { g, b, pre, values })
}

fn dense_forward<'g>(
    g: &'g NetworkGraph,
    sizes: &'g [usize],
    w: &WeightVector,
    batch: &Batch,
    mode: HiddenMode<'_>,
) -> Result<Pass<'g>> {
    let _ = g;
    let b = batch.len();
    let d = sizes.len() - 1;
    let mut values = Vec::with_capacity(d + 1);
    let mut pre = Vec::with_capacity(d + 1);
    values.push(batch.inputs().to_vec());
    pre.push(Vec::new());
    let mut off = 0;
    let mut node_base = sizes[0];
    for l in 0..d {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut z = vec![0.0; b * n_out];
        dense::matmul(b, n_in, n_out, &values[l], &w[off..off + n_in * n_out], 0.0, &mut z);
        off += n_in * n_out;
        if let Some(k) = z.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(
                Location::Node(node_base + k % n_out),
                "pre-activation is not finite",
            ));
        }
        if l + 1 < d {
            let gates: Vec<f64> = (0..n_out).map(|j| mode.gate(node_base + j)).collect();
            let mut h = z.clone();
            for row in h.chunks_exact_mut(n_out) {
                for (x, &gate) in row.iter_mut().zip(&gates) {
                    *x = gate * x.max(0.0);
                }
            }
            values.push(h);
        } else {
            values.push(Vec::new());
        }
        pre.push(z);
        node_base += n_out;
    }
    Ok(Pass::Dense {
        sizes,
        b,
        values,
        pre,
    })
}
