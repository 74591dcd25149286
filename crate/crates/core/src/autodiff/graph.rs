use super::dropout::MaskSet;
use super::params::{Layout, ParamVector};
use crate::error::{Result, UpoError};

/// Index of a node inside its [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive vector operations. Every operand refers to an earlier node.
#[derive(Clone, Debug)]
pub enum Op {
    /// Slice of the real-valued input array.
    Input {
        offset: usize,
        len: usize,
    },
    Const(Vec<f64>),
    /// Slice of the parameter vector.
    Param {
        offset: usize,
        len: usize,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Row-major `rows x cols` matrix times a `cols` vector.
    MatVec {
        mat: NodeId,
        vec: NodeId,
        rows: usize,
        cols: usize,
    },
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Relu(NodeId),
    /// Multiplies by the mask registered for `site`; identity without masks.
    Dropout {
        input: NodeId,
        site: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>),
    Pick(NodeId, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Const(_) => "const",
            Op::Param { .. } => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatVec { .. } => "matvec",
            Op::Sigmoid(_) => "sigmoid",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Relu(_) => "relu",
            Op::Dropout { .. } => "dropout",
            Op::Sum(_) => "reduce_sum",
            Op::Mean(_) => "reduce_mean",
            Op::Concat(_) => "concat",
            Op::Pick(..) => "pick",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Const(_) | Op::Param { .. } => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MatVec { mat, vec, .. } => vec![*mat, *vec],
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Pick(a, _) => vec![*a],
            Op::Dropout { input, .. } => vec![*input],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    len: usize,
}

/// Topologically ordered computation graph.
///
/// Builder methods record nodes without touching data; shapes are checked by
/// [`Graph::forward`], which reports the offending node.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a forward pass: one value vector per node plus the dropout
/// masks that were applied, which backward reuses.
#[derive(Clone, Debug)]
pub struct Values {
    vals: Vec<Vec<f64>>,
    applied_masks: Vec<Option<Vec<f64>>>,
    layout: Layout,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.vals[id.0]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.vals[id.0][0]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Output length of a node.
    pub fn node_len(&self, id: NodeId) -> usize {
        self.nodes[id.0].len
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        self.nodes.push(Node { op, len });
        NodeId(self.nodes.len() - 1)
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes.get(id.0).map_or(0, |n| n.len)
    }

    pub fn input(&mut self, offset: usize, len: usize) -> NodeId {
        self.push(Op::Input { offset, len }, len)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        let len = values.len();
        self.push(Op::Const(values), len)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(vec![value])
    }

    pub fn param(&mut self, offset: usize, len: usize) -> NodeId {
        self.push(Op::Param { offset, len }, len)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Add(a, b), len)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Sub(a, b), len)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Mul(a, b), len)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Scale(a, factor), len)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn matvec(&mut self, mat: NodeId, vec: NodeId, rows: usize, cols: usize) -> NodeId {
        self.push(Op::MatVec { mat, vec, rows, cols }, rows)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Sigmoid(a), len)
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::LogSigmoid(a), len)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Log(a), len)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Exp(a), len)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Softmax(a), len)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::LogSoftmax(a), len)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Relu(a), len)
    }

    pub fn dropout(&mut self, input: NodeId, site: usize) -> NodeId {
        let len = self.len_of(input);
        self.push(Op::Dropout { input, site }, len)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), 1)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), 1)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let len = parts.iter().map(|&p| self.len_of(p)).sum();
        self.push(Op::Concat(parts.to_vec()), len)
    }

    pub fn pick(&mut self, a: NodeId, index: usize) -> NodeId {
        self.push(Op::Pick(a, index), 1)
    }

    fn shape_err(&self, node: usize, detail: String) -> UpoError {
        UpoError::Shape {
            node,
            op: self.nodes[node].op.name(),
            detail,
        }
    }

    fn check_node(&self, i: usize, n_params: usize, n_inputs: usize) -> Result<()> {
        let node = &self.nodes[i];
        for operand in node.op.operands() {
            if operand.0 >= i {
                return Err(self.shape_err(i, format!("operand {} does not precede the node", operand.0)));
            }
        }
        let len = |id: NodeId| self.nodes[id.0].len;
        match &node.op {
            Op::Input { offset, len: n } if offset + n > n_inputs => Err(self.shape_err(
                i,
                format!("input slice {offset}..{} exceeds {n_inputs} inputs", offset + n),
            )),
            Op::Param { offset, len: n } if offset + n > n_params => Err(self.shape_err(
                i,
                format!("param slice {offset}..{} exceeds {n_params} parameters", offset + n),
            )),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) if len(*a) != len(*b) => {
                Err(self.shape_err(i, format!("operand lengths {} and {} differ", len(*a), len(*b))))
            }
            Op::MatVec { mat, vec, rows, cols } if len(*mat) != rows * cols || len(*vec) != *cols => Err(self
                .shape_err(
                    i,
                    format!(
                        "{rows}x{cols} matvec got matrix of length {} and vector of length {}",
                        len(*mat),
                        len(*vec)
                    ),
                )),
            Op::Pick(a, idx) if *idx >= len(*a) => {
                Err(self.shape_err(i, format!("index {idx} out of range for length {}", len(*a))))
            }
            Op::Softmax(a) | Op::LogSoftmax(a) | Op::Mean(a) if len(*a) == 0 => {
                Err(self.shape_err(i, "empty operand".to_string()))
            }
            _ => Ok(()),
        }
    }

    /// Evaluates every node. Pure in `(params, inputs, masks)`.
    pub fn forward(&self, params: &ParamVector, inputs: &[f64], masks: Option<&MaskSet>) -> Result<Values> {
        let p = params.values();
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        let mut applied_masks = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            self.check_node(i, p.len(), inputs.len())?;
            let v = |id: &NodeId| -> &[f64] { &vals[id.0] };
            let out = match &node.op {
                Op::Input { offset, len } => inputs[*offset..offset + len].to_vec(),
                Op::Const(c) => c.clone(),
                Op::Param { offset, len } => p[*offset..offset + len].to_vec(),
                Op::Add(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x + y).collect(),
                Op::Sub(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x - y).collect(),
                Op::Mul(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x * y).collect(),
                Op::Scale(a, s) => v(a).iter().map(|x| x * s).collect(),
                Op::MatVec { mat, vec, rows, cols } => {
                    let m = v(mat);
                    let x = v(vec);
                    (0..*rows)
                        .map(|r| m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
                        .collect()
                }
                Op::Sigmoid(a) => v(a).iter().map(|&x| sigmoid(x)).collect(),
                Op::LogSigmoid(a) => v(a).iter().map(|&x| log_sigmoid(x)).collect(),
                Op::Log(a) => v(a).iter().map(|x| x.ln()).collect(),
                Op::Exp(a) => v(a).iter().map(|x| x.exp()).collect(),
                Op::Softmax(a) => softmax(v(a)),
                Op::LogSoftmax(a) => log_softmax(v(a)),
                Op::Relu(a) => v(a).iter().map(|&x| x.max(0.0)).collect(),
                Op::Dropout { input, site } => match masks {
                    None => v(input).to_vec(),
                    Some(set) => {
                        let mask = set
                            .site(*site)
                            .ok_or_else(|| self.shape_err(i, format!("no dropout mask for site {site}")))?;
                        if mask.len() != node.len {
                            return Err(self.shape_err(
                                i,
                                format!(
                                    "mask for site {site} has length {} but input has length {}",
                                    mask.len(),
                                    node.len
                                ),
                            ));
                        }
                        let scales = mask.scales().to_vec();
                        let out = v(input).iter().zip(&scales).map(|(x, m)| x * m).collect();
                        applied_masks[i] = Some(scales);
                        out
                    }
                },
                Op::Sum(a) => vec![v(a).iter().sum()],
                Op::Mean(a) => vec![v(a).iter().sum::<f64>() / v(a).len() as f64],
                Op::Concat(parts) => parts.iter().flat_map(|p| v(p).iter().copied()).collect(),
                Op::Pick(a, idx) => vec![v(a)[*idx]],
            };
            vals.push(out);
        }
        Ok(Values {
            vals,
            applied_masks,
            layout: params.layout().clone(),
        })
    }

    /// Gradient of the scalar node `loss` with respect to the parameters.
    pub fn backward(&self, values: &Values, loss: NodeId) -> Result<ParamVector> {
        let mut grad = ParamVector::zeros(values.layout.clone());
        self.backward_into(values, loss, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates `scale * dLoss/dParams` into `grad`.
    pub fn backward_into(&self, values: &Values, loss: NodeId, scale: f64, grad: &mut ParamVector) -> Result<()> {
        let n = self.nodes.len();
        if loss.0 >= n || values.vals.len() != n {
            return Err(UpoError::invalid("backward called with values from a different graph"));
        }
        if self.nodes[loss.0].len != 1 {
            return Err(UpoError::NonScalarLoss {
                node: loss.0,
                len: self.nodes[loss.0].len,
            });
        }
        let vals = &values.vals;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![scale]);
        let g_params = grad.values_mut();

        fn acc<'a>(adj: &'a mut [Option<Vec<f64>>], vals: &[Vec<f64>], id: NodeId) -> &'a mut [f64] {
            adj[id.0].get_or_insert_with(|| vec![0.0; vals[id.0].len()])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let out = &vals[i];
            match &self.nodes[i].op {
                Op::Input { .. } | Op::Const(_) => {}
                Op::Param { offset, len } => {
                    for (dst, gi) in g_params[*offset..offset + len].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, vals, *a).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    acc(&mut adj, vals, *b).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, vals, *a).iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                    acc(&mut adj, vals, *b).iter_mut().zip(&g).for_each(|(d, x)| *d -= x);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (vals[a.0].clone(), vals[b.0].clone());
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += g[k] * vb[k];
                    }
                    for (k, d) in acc(&mut adj, vals, *b).iter_mut().enumerate() {
                        *d += g[k] * va[k];
                    }
                }
                Op::Scale(a, s) => {
                    acc(&mut adj, vals, *a)
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, x)| *d += s * x);
                }
                Op::MatVec { mat, vec, rows, cols } => {
                    let m = &vals[mat.0];
                    let x = &vals[vec.0];
                    {
                        let dm = acc(&mut adj, vals, *mat);
                        for r in 0..*rows {
                            if g[r] == 0.0 {
                                continue;
                            }
                            for (d, xc) in dm[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                                *d += g[r] * xc;
                            }
                        }
                    }
                    let dx = acc(&mut adj, vals, *vec);
                    for r in 0..*rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (d, mc) in dx.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
                            *d += g[r] * mc;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += g[k] * out[k] * (1.0 - out[k]);
                    }
                }
                Op::LogSigmoid(a) => {
                    let va = vals[a.0].clone();
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += g[k] * sigmoid(-va[k]);
                    }
                }
                Op::Log(a) => {
                    let va = vals[a.0].clone();
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += g[k] / va[k];
                    }
                }
                Op::Exp(a) => {
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += g[k] * out[k];
                    }
                }
                Op::Softmax(a) => {
                    let dot: f64 = g.iter().zip(out).map(|(x, s)| x * s).sum();
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += out[k] * (g[k] - dot);
                    }
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = g.iter().sum();
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        *d += g[k] - out[k].exp() * total;
                    }
                }
                Op::Relu(a) => {
                    let va = vals[a.0].clone();
                    for (k, d) in acc(&mut adj, vals, *a).iter_mut().enumerate() {
                        if va[k] > 0.0 {
                            *d += g[k];
                        }
                    }
                }
                Op::Dropout { input, .. } => {
                    let mask = values.applied_masks[i].as_deref();
                    for (k, d) in acc(&mut adj, vals, *input).iter_mut().enumerate() {
                        *d += g[k] * mask.map_or(1.0, |m| m[k]);
                    }
                }
                Op::Sum(a) => {
                    acc(&mut adj, vals, *a).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(a) => {
                    let share = g[0] / vals[a.0].len() as f64;
                    acc(&mut adj, vals, *a).iter_mut().for_each(|d| *d += share);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let len = vals[p.0].len();
                        acc(&mut adj, vals, *p)
                            .iter_mut()
                            .zip(&g[start..start + len])
                            .for_each(|(d, x)| *d += x);
                        start += len;
                    }
                }
                Op::Pick(a, idx) => {
                    acc(&mut adj, vals, *a)[*idx] += g[0];
                }
            }
        }
        Ok(())
    }
}

/// Compares an analytic gradient against central finite differences.
///
/// `f` returns `(loss, gradient)` at the given parameters. The result is the
/// worst component-wise relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(f: F, params: &ParamVector, eps: f64) -> Result<f64>
where
    F: Fn(&ParamVector) -> Result<(f64, ParamVector)>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(UpoError::invalid(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(UpoError::NonFinite("loss at base point".into()));
    }
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + eps;
        let (up, _) = f(&probe)?;
        probe.values_mut()[i] = orig - eps;
        let (down, _) = f(&probe)?;
        probe.values_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(UpoError::NonFinite(format!("loss while perturbing parameter {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.values()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}
