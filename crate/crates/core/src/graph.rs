//! Network topology: a DAG with designated input and output units.
//!
//! Edge ids are dense and canonical: after validation, edges are sorted by
//! (topological position of the source, topological position of the target)
//! and numbered in that order. The topological order itself is Kahn's
//! algorithm with smallest-node-id-first tie breaking, so two graphs built
//! from the same node ids and edge set always agree on edge ids regardless of
//! the order edges were listed in.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
}

/// Role a node plays in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    Hidden,
    Output,
}

/// Compressed adjacency: `ids[offsets[v]..offsets[v + 1]]` are the edges of v.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Adjacency {
    offsets: Vec<usize>,
    ids: Vec<EdgeId>,
}

impl Adjacency {
    fn build(num_nodes: usize, edges: &[Edge], key: impl Fn(&Edge) -> NodeId) -> Self {
        let mut offsets = vec![0usize; num_nodes + 1];
        for e in edges {
            offsets[key(e) + 1] += 1;
        }
        for v in 0..num_nodes {
            offsets[v + 1] += offsets[v];
        }
        let mut fill = offsets.clone();
        let mut ids = vec![0; edges.len()];
        // Edge ids ascend within each node's slice.
        for (id, e) in edges.iter().enumerate() {
            let slot = &mut fill[key(e)];
            ids[*slot] = id;
            *slot += 1;
        }
        Adjacency { offsets, ids }
    }

    fn of(&self, v: NodeId) -> &[EdgeId] {
        &self.ids[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Immutable network topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    num_nodes: usize,
    edges: Vec<Edge>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    kinds: Vec<NodeKind>,
    topo: Vec<NodeId>,
    topo_pos: Vec<usize>,
    incoming: Adjacency,
    outgoing: Adjacency,
    depth: usize,
    layer_sizes: Option<Vec<usize>>,
}

impl NetworkGraph {
    /// Validates and canonicalizes a graph.
    ///
    /// `inputs` and `outputs` keep the order given; it defines the order of
    /// feature columns and class scores.
    pub fn new(
        num_nodes: usize,
        edges: &[(NodeId, NodeId)],
        inputs: &[NodeId],
        outputs: &[NodeId],
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Structure("graph has no nodes".into()));
        }
        if inputs.is_empty() || outputs.is_empty() {
            return Err(Error::Structure(
                "graph needs at least one input and one output node".into(),
            ));
        }
        let mut kinds = vec![NodeKind::Hidden; num_nodes];
        for &v in inputs {
            check_node(v, num_nodes)?;
            if kinds[v] != NodeKind::Hidden {
                return Err(Error::Structure(format!("node {v} listed twice as input")));
            }
            kinds[v] = NodeKind::Input;
        }
        for &v in outputs {
            check_node(v, num_nodes)?;
            match kinds[v] {
                NodeKind::Input => {
                    return Err(Error::Structure(format!(
                        "node {v} is both an input and an output"
                    )))
                }
                NodeKind::Output => {
                    return Err(Error::Structure(format!("node {v} listed twice as output")))
                }
                NodeKind::Hidden => kinds[v] = NodeKind::Output,
            }
        }

        let mut raw: Vec<Edge> = Vec::with_capacity(edges.len());
        for &(src, dst) in edges {
            check_node(src, num_nodes)?;
            check_node(dst, num_nodes)?;
            if src == dst {
                return Err(Error::Structure(format!("self loop on node {src}")));
            }
            raw.push(Edge { src, dst });
        }

        let topo = topological_order(num_nodes, &raw)?;
        let mut topo_pos = vec![0; num_nodes];
        for (pos, &v) in topo.iter().enumerate() {
            topo_pos[v] = pos;
        }
        raw.sort_by_key(|e| (topo_pos[e.src], topo_pos[e.dst]));
        if let Some(w) = raw.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Structure(format!(
                "duplicate edge {} -> {}",
                w[0].src, w[0].dst
            )));
        }

        let incoming = Adjacency::build(num_nodes, &raw, |e| e.dst);
        let outgoing = Adjacency::build(num_nodes, &raw, |e| e.src);

        for &v in inputs {
            if !incoming.of(v).is_empty() {
                return Err(Error::Structure(format!("input node {v} has incoming edges")));
            }
        }
        for &v in outputs {
            if !outgoing.of(v).is_empty() {
                return Err(Error::Structure(format!("output node {v} has outgoing edges")));
            }
        }

        // Every node must be reachable from an input and reach an output.
        let mut from_input = vec![false; num_nodes];
        for &v in inputs {
            from_input[v] = true;
        }
        for &v in &topo {
            if from_input[v] {
                for &e in outgoing.of(v) {
                    from_input[raw[e].dst] = true;
                }
            }
        }
        let mut to_output = vec![false; num_nodes];
        for &v in outputs {
            to_output[v] = true;
        }
        for &v in topo.iter().rev() {
            if to_output[v] {
                for &e in incoming.of(v) {
                    to_output[raw[e].src] = true;
                }
            }
        }
        if let Some(v) = (0..num_nodes).find(|&v| !(from_input[v] && to_output[v])) {
            return Err(Error::Structure(format!(
                "node {v} does not lie on any input-to-output path"
            )));
        }

        let mut longest = vec![0usize; num_nodes];
        for &v in &topo {
            for &e in outgoing.of(v) {
                let dst = raw[e].dst;
                longest[dst] = longest[dst].max(longest[v] + 1);
            }
        }
        let depth = longest.iter().copied().max().unwrap_or(0);

        let mut g = NetworkGraph {
            num_nodes,
            edges: raw,
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            kinds,
            topo,
            topo_pos,
            incoming,
            outgoing,
            depth,
            layer_sizes: None,
        };
        g.layer_sizes = g.detect_dense_layers(&longest);
        Ok(g)
    }

    /// Fully connected layered network. Nodes are numbered layer by layer,
    /// so the edges between layers `l` and `l + 1` form a row-major
    /// `sizes[l] x sizes[l + 1]` block of the weight vector.
    pub fn layered(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "a layered network needs at least two layers, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(l) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("layer {l} has zero units")));
        }
        let num_nodes: usize = layer_sizes.iter().sum();
        let num_edges: usize = layer_sizes.windows(2).map(|p| p[0] * p[1]).sum();
        // Built directly in canonical order: the identity is a valid
        // smallest-id-first topological order for layer-major numbering.
        let mut edges = Vec::with_capacity(num_edges);
        let mut kinds = vec![NodeKind::Hidden; num_nodes];
        let mut start = 0;
        for pair in layer_sizes.windows(2) {
            let next = start + pair[0];
            for i in 0..pair[0] {
                for j in 0..pair[1] {
                    edges.push(Edge {
                        src: start + i,
                        dst: next + j,
                    });
                }
            }
            start = next;
        }
        let inputs: Vec<_> = (0..layer_sizes[0]).collect();
        let outputs: Vec<_> = (num_nodes - layer_sizes[layer_sizes.len() - 1]..num_nodes).collect();
        for &v in &inputs {
            kinds[v] = NodeKind::Input;
        }
        for &v in &outputs {
            kinds[v] = NodeKind::Output;
        }
        Ok(NetworkGraph {
            num_nodes,
            incoming: Adjacency::build(num_nodes, &edges, |e| e.dst),
            outgoing: Adjacency::build(num_nodes, &edges, |e| e.src),
            edges,
            inputs,
            outputs,
            kinds,
            topo: (0..num_nodes).collect(),
            topo_pos: (0..num_nodes).collect(),
            depth: layer_sizes.len() - 1,
            layer_sizes: Some(layer_sizes.to_vec()),
        })
    }

    /// Recognizes fully connected layered graphs whose node ids are laid out
    /// layer by layer, which lets forward/backward use dense matrix kernels.
    fn detect_dense_layers(&self, longest: &[usize]) -> Option<Vec<usize>> {
        let mut sizes = vec![0usize; self.depth + 1];
        for v in 0..self.num_nodes {
            sizes[longest[v]] += 1;
        }
        let mut start = 0;
        for (l, &n) in sizes.iter().enumerate() {
            if (start..start + n).any(|v| longest[v] != l) {
                return None;
            }
            start += n;
        }
        if self.inputs != (0..sizes[0]).collect::<Vec<_>>()
            || self.outputs != (self.num_nodes - sizes[self.depth]..self.num_nodes).collect::<Vec<_>>()
        {
            return None;
        }
        let expected: usize = sizes.windows(2).map(|p| p[0] * p[1]).sum();
        if expected != self.edges.len() {
            return None;
        }
        let mut id = 0;
        let mut start = 0;
        for pair in sizes.windows(2) {
            let next = start + pair[0];
            for i in 0..pair[0] {
                for j in 0..pair[1] {
                    let e = self.edges[id];
                    if e.src != start + i || e.dst != next + j {
                        return None;
                    }
                    id += 1;
                }
            }
            start = next;
        }
        Some(sizes)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Edge {
        self.edges[id]
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn kind(&self, v: NodeId) -> NodeKind {
        self.kinds[v]
    }

    pub fn is_hidden(&self, v: NodeId) -> bool {
        self.kinds[v] == NodeKind::Hidden
    }

    pub fn hidden_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.topo.iter().copied().filter(|&v| self.is_hidden(v))
    }

    pub fn num_hidden(&self) -> usize {
        self.kinds.iter().filter(|&&k| k == NodeKind::Hidden).count()
    }

    /// Length of the longest directed path, in edges.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn topo_position(&self, v: NodeId) -> usize {
        self.topo_pos[v]
    }

    pub fn in_edges(&self, v: NodeId) -> &[EdgeId] {
        self.incoming.of(v)
    }

    pub fn out_edges(&self, v: NodeId) -> &[EdgeId] {
        self.outgoing.of(v)
    }

    pub fn fan_in(&self, v: NodeId) -> usize {
        self.incoming.of(v).len()
    }

    pub fn edge_id(&self, src: NodeId, dst: NodeId) -> Option<EdgeId> {
        self.outgoing
            .of(src)
            .iter()
            .copied()
            .find(|&e| self.edges[e].dst == dst)
    }

    /// Layer sizes when the graph is a fully connected layered network with
    /// layer-major node numbering.
    pub fn layer_sizes(&self) -> Option<&[usize]> {
        self.layer_sizes.as_deref()
    }

    /// True when every input-to-output path has exactly `depth` edges.
    pub fn is_layered(&self) -> bool {
        let levels = compute_levels(self);
        self.outputs.iter().all(|&v| levels.in_level(v) == self.depth)
            && self.inputs.iter().all(|&v| levels.out_level(v) == self.depth)
            && self.edges.iter().all(|e| levels.in_level(e.dst) == levels.in_level(e.src) + 1)
    }

    /// Zero weights shaped for this graph.
    pub fn zero_weights(&self) -> WeightVector {
        WeightVector::zeros(self.num_edges())
    }

    pub fn check_weights(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.num_edges() {
            return Err(Error::Input(format!(
                "weight vector has {} entries, graph has {} edges",
                w.len(),
                self.num_edges()
            )));
        }
        Ok(())
    }

    /// Parses the line-oriented graph description:
    ///
    /// ```text
    /// nodes 4 inputs 0 outputs 3
    /// edge 0 1
    /// edge 0 2
    /// edge 1 3
    /// edge 2 3
    /// ```
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, Vec<NodeId>, Vec<NodeId>)> = None;
        let mut edges = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len() as u64;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                source_name: "graph description".into(),
                offset: here,
                msg,
            };
            let mut tokens = content.split_whitespace();
            match tokens.next() {
                Some("nodes") => {
                    if header.is_some() {
                        return Err(bad("duplicate header".into()));
                    }
                    let n = parse_usize(tokens.next(), "node count").map_err(bad)?;
                    if tokens.next() != Some("inputs") {
                        return Err(bad("expected `inputs` after node count".into()));
                    }
                    let mut inputs = Vec::new();
                    let mut outputs = Vec::new();
                    let mut in_outputs = false;
                    for tok in tokens {
                        if tok == "outputs" && !in_outputs {
                            in_outputs = true;
                            continue;
                        }
                        let id = parse_usize(Some(tok), "node id").map_err(bad)?;
                        if in_outputs {
                            outputs.push(id);
                        } else {
                            inputs.push(id);
                        }
                    }
                    if !in_outputs {
                        return Err(bad("missing `outputs` section".into()));
                    }
                    header = Some((n, inputs, outputs));
                }
                Some("edge") => {
                    if header.is_none() {
                        return Err(bad("edge before header".into()));
                    }
                    let src = parse_usize(tokens.next(), "edge source").map_err(bad)?;
                    let dst = parse_usize(tokens.next(), "edge target").map_err(bad)?;
                    if tokens.next().is_some() {
                        return Err(bad("trailing tokens after edge".into()));
                    }
                    edges.push((src, dst));
                }
                Some(other) => return Err(bad(format!("unknown directive `{other}`"))),
                None => unreachable!(),
            }
        }
        let (n, inputs, outputs) = header.ok_or_else(|| Error::Parse {
            source_name: "graph description".into(),
            offset,
            msg: "missing `nodes` header".into(),
        })?;
        Self::new(n, &edges, &inputs, &outputs)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes in the format accepted by [`NetworkGraph::parse`], edges in
    /// id order.
    pub fn to_text(&self) -> String {
        let mut s = format!("nodes {} inputs", self.num_nodes);
        for v in &self.inputs {
            let _ = write!(s, " {v}");
        }
        s.push_str(" outputs");
        for v in &self.outputs {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
        for e in &self.edges {
            let _ = writeln!(s, "edge {} {}", e.src, e.dst);
        }
        s
    }
}

fn check_node(v: NodeId, num_nodes: usize) -> Result<()> {
    if v >= num_nodes {
        return Err(Error::Structure(format!(
            "node id {v} out of range for {num_nodes} nodes"
        )));
    }
    Ok(())
}

fn parse_usize(tok: Option<&str>, what: &str) -> std::result::Result<usize, String> {
    let tok = tok.ok_or_else(|| format!("missing {what}"))?;
    tok.parse()
        .map_err(|_| format!("{what} `{tok}` is not a non-negative integer"))
}

fn topological_order(num_nodes: usize, edges: &[Edge]) -> Result<Vec<NodeId>> {
    let mut indegree = vec![0usize; num_nodes];
    let mut succ: Vec<Vec<NodeId>> = vec![Vec::new(); num_nodes];
    for e in edges {
        indegree[e.dst] += 1;
        succ[e.src].push(e.dst);
    }
    let mut ready: BinaryHeap<Reverse<NodeId>> = (0..num_nodes)
        .filter(|&v| indegree[v] == 0)
        .map(Reverse)
        .collect();
    let mut order = Vec::with_capacity(num_nodes);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &u in &succ[v] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.push(Reverse(u));
            }
        }
    }
    if order.len() != num_nodes {
        let stuck = (0..num_nodes).find(|&v| indegree[v] > 0).unwrap_or(0);
        return Err(Error::Structure(format!("cycle detected through node {stuck}")));
    }
    Ok(order)
}

/// Nodes grouped by longest-path distance to the inputs and to the outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSets {
    in_of: Vec<usize>,
    out_of: Vec<usize>,
    v_in: Vec<Vec<NodeId>>,
    v_out: Vec<Vec<NodeId>>,
}

impl LevelSets {
    /// `V^i_in`: nodes whose longest path from an input has `i` edges.
    pub fn v_in(&self, i: usize) -> &[NodeId] {
        &self.v_in[i]
    }

    /// `V^i_out`: nodes whose longest path to an output has `i` edges.
    pub fn v_out(&self, i: usize) -> &[NodeId] {
        &self.v_out[i]
    }

    pub fn in_level(&self, v: NodeId) -> usize {
        self.in_of[v]
    }

    pub fn out_level(&self, v: NodeId) -> usize {
        self.out_of[v]
    }

    pub fn depth(&self) -> usize {
        self.v_in.len() - 1
    }
}

/// Longest-path levels from a single pass over the topological order in each
/// direction.
pub fn compute_levels(g: &NetworkGraph) -> LevelSets {
    let n = g.num_nodes();
    let mut in_of = vec![0usize; n];
    let mut done = vec![false; n];
    for &v in g.topological_order() {
        for &e in g.in_edges(v) {
            let u = g.edge(e).src;
            assert!(done[u], "node {v} visited before its predecessor {u}");
            in_of[v] = in_of[v].max(in_of[u] + 1);
        }
        done[v] = true;
    }
    let mut out_of = vec![0usize; n];
    done.iter_mut().for_each(|d| *d = false);
    for &v in g.topological_order().iter().rev() {
        for &e in g.out_edges(v) {
            let u = g.edge(e).dst;
            assert!(done[u], "node {v} visited before its successor {u}");
            out_of[v] = out_of[v].max(out_of[u] + 1);
        }
        done[v] = true;
    }
    let d = g.depth();
    let mut v_in = vec![Vec::new(); d + 1];
    let mut v_out = vec![Vec::new(); d + 1];
    for &v in g.topological_order() {
        v_in[in_of[v]].push(v);
        v_out[out_of[v]].push(v);
    }
    LevelSets {
        in_of,
        out_of,
        v_in,
        v_out,
    }
}

/// Number of input-to-output paths. Saturates at `u128::MAX`.
pub fn count_paths(g: &NetworkGraph) -> u128 {
    let mut count = vec![0u128; g.num_nodes()];
    for &v in g.inputs() {
        count[v] = 1;
    }
    for &v in g.topological_order() {
        for &e in g.in_edges(v) {
            count[v] = count[v].saturating_add(count[g.edge(e).src]);
        }
    }
    g.outputs()
        .iter()
        .fold(0u128, |acc, &v| acc.saturating_add(count[v]))
}

/// Real-valued weights indexed by edge id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        WeightVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        WeightVector(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Reads whitespace-separated weights in edge-id order; `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let content = line.split('#').next().unwrap_or("");
            for tok in content.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    source_name: "weights".into(),
                    offset,
                    msg: format!("`{tok}` is not a number"),
                })?;
                values.push(v);
            }
            offset += line.len() as u64;
        }
        Ok(WeightVector(values))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 20);
        for v in &self.0 {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for WeightVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        WeightVector(v)
    }
}

/// Parses layer-size shorthand such as `784x128x10`.
pub fn parse_architecture(spec: &str) -> Result<Vec<usize>> {
    let sizes = spec
        .split(['x', 'X'])
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad layer size `{part}` in `{spec}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Config(format!("`{spec}` needs at least two nonzero layers")));
    }
    Ok(sizes)
}
