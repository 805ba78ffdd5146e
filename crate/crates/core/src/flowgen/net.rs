use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{Clip, ClipDims, PromptEmbedding};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;
use crate::tensorgrad::{DenseArray, Graph, NodeId, ParamId};

pub const TIME_FEATURES: usize = 6;

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    [
        t,
        t * t,
        libm::sin(PI * t),
        libm::cos(PI * t),
        libm::sin(2.0 * PI * t),
        libm::cos(2.0 * PI * t),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetArch {
    pub dims: ClipDims,
    pub hidden: usize,
}

impl NetArch {
    pub fn new(dims: ClipDims, hidden: usize) -> Self {
        Self { dims, hidden }
    }

    /// Context summary: mean sink frame followed by the newest frame.
    pub fn summary_dim(&self) -> usize {
        2 * self.dims.frame_dim
    }

    pub fn input_dim(&self) -> usize {
        self.dims.clip_numel() + TIME_FEATURES + self.summary_dim() + self.dims.prompt_dim
    }

    pub fn output_dim(&self) -> usize {
        self.dims.clip_numel()
    }

    /// Shapes of `[w0, b0, w1, b1, w2, b2]`.
    pub fn tensor_shapes(&self) -> Vec<[usize; 2]> {
        let (i, h, o) = (self.input_dim(), self.hidden, self.output_dim());
        vec![[i, h], [1, h], [h, h], [1, h], [h, o], [1, o]]
    }
}

/// Weights of the two-hidden-layer tanh perceptron that predicts the clean
/// clip from (noisy clip, time features, context summary, prompt).
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    arch: NetArch,
    tensors: Vec<DenseArray>,
}

impl NetParams {
    pub fn zeros(arch: NetArch) -> Self {
        let tensors = arch.tensor_shapes().iter().map(|s| DenseArray::zeros(s)).collect();
        Self { arch, tensors }
    }

    /// Scaled-normal weights (variance 1/fan_in), zero biases.
    pub fn init(arch: NetArch, rng: &mut NoiseStream) -> Self {
        let tensors = arch
            .tensor_shapes()
            .iter()
            .enumerate()
            .map(|(k, shape)| {
                if k % 2 == 1 {
                    return DenseArray::zeros(shape);
                }
                let std = 1.0 / libm::sqrt(shape[0] as f64);
                let data = rng
                    .normal_vec(shape[0] * shape[1])
                    .into_iter()
                    .map(|z| z * std)
                    .collect();
                DenseArray::new(shape.to_vec(), data).expect("shape from arch")
            })
            .collect();
        Self { arch, tensors }
    }

    pub fn from_tensors(arch: NetArch, tensors: Vec<DenseArray>) -> Result<Self> {
        let shapes = arch.tensor_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Shape {
                what: "parameter tensor count",
                expected: shapes.len(),
                got: tensors.len(),
            });
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.shape() != s {
                return Err(Error::Shape {
                    what: "parameter tensor",
                    expected: s[0] * s[1],
                    got: t.len(),
                });
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn arch(&self) -> NetArch {
        self.arch
    }

    pub fn tensors(&self) -> &[DenseArray] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DenseArray] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(DenseArray::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseArray::is_finite)
    }

    /// Places the weights on `graph`: as params (`ParamId(k)` for tensor k)
    /// when `trainable`, otherwise as constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundNet {
        let nodes = self
            .tensors
            .iter()
            .enumerate()
            .map(|(k, t)| {
                if trainable {
                    graph.param(ParamId(k), t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        BoundNet { arch: self.arch, nodes }
    }
}

/// Network weights placed on a particular graph.
#[derive(Clone, Debug)]
pub struct BoundNet {
    arch: NetArch,
    nodes: Vec<NodeId>,
}

/// Context conditioning for one input row.
#[derive(Clone, Debug)]
pub enum ContextInput {
    Values(Vec<f64>),
    /// A `[1, summary_dim]` node, possibly tracked.
    Node(NodeId),
}

/// One row of a batched prediction.
#[derive(Clone, Debug)]
pub struct DenoiseRow<'a> {
    pub x_t: &'a Clip,
    pub t: f64,
    pub context: ContextInput,
    pub prompt: &'a PromptEmbedding,
}

impl BoundNet {
    pub fn arch(&self) -> NetArch {
        self.arch
    }

    /// Predicted clean clips for every row, as a `[rows, clip_numel]` node.
    pub fn predict_rows(&self, graph: &mut Graph, rows: &[DenoiseRow<'_>]) -> Result<NodeId> {
        let arch = self.arch;
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let head_dim = arch.dims.clip_numel() + TIME_FEATURES;
        let mut heads = Vec::with_capacity(rows.len() * head_dim);
        for row in rows {
            if row.x_t.data().len() != arch.dims.clip_numel() {
                return Err(Error::Shape {
                    what: "noisy clip",
                    expected: arch.dims.clip_numel(),
                    got: row.x_t.data().len(),
                });
            }
            if row.prompt.values().len() != arch.dims.prompt_dim {
                return Err(Error::Shape {
                    what: "prompt",
                    expected: arch.dims.prompt_dim,
                    got: row.prompt.values().len(),
                });
            }
            if !(0.0..=1.0).contains(&row.t) {
                return Err(Error::TimeOutOfRange(row.t));
            }
            if let ContextInput::Values(v) = &row.context {
                if v.len() != arch.summary_dim() {
                    return Err(Error::Shape {
                        what: "context summary",
                        expected: arch.summary_dim(),
                        got: v.len(),
                    });
                }
            }
            heads.extend_from_slice(row.x_t.data());
            heads.extend_from_slice(&time_features(row.t));
        }

        let all_values = rows.iter().all(|r| matches!(r.context, ContextInput::Values(_)));
        let input = if all_values {
            let mut data = Vec::with_capacity(rows.len() * arch.input_dim());
            for (r, row) in rows.iter().enumerate() {
                data.extend_from_slice(&heads[r * head_dim..(r + 1) * head_dim]);
                if let ContextInput::Values(v) = &row.context {
                    data.extend_from_slice(v);
                }
                data.extend_from_slice(row.prompt.values());
            }
            graph.constant(DenseArray::matrix(rows.len(), arch.input_dim(), data)?)
        } else {
            let mut row_nodes = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                let head = graph.constant(DenseArray::row(&heads[r * head_dim..(r + 1) * head_dim]));
                let ctx = match &row.context {
                    ContextInput::Values(v) => graph.constant(DenseArray::row(v)),
                    ContextInput::Node(n) => *n,
                };
                let prompt = graph.constant(DenseArray::row(row.prompt.values()));
                row_nodes.push(graph.concat(&[head, ctx, prompt], 1)?);
            }
            if row_nodes.len() == 1 {
                row_nodes[0]
            } else {
                graph.concat(&row_nodes, 0)?
            }
        };
        self.forward(graph, input)
    }

    fn forward(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId> {
        let n = &self.nodes;
        let h = graph.matmul(input, n[0])?;
        let h = graph.add(h, n[1])?;
        let h = graph.tanh(h)?;
        let h = graph.matmul(h, n[2])?;
        let h = graph.add(h, n[3])?;
        let h = graph.tanh(h)?;
        let y = graph.matmul(h, n[4])?;
        Ok(graph.add(y, n[5])?)
    }
}

/// Predicted clean clip for a single input. Recorded on `graph` as tracked
/// when `trainable`.
pub fn predict_clean(
    params: &NetParams,
    x_t: &Clip,
    t: f64,
    ctx_summary: &[f64],
    prompt: &PromptEmbedding,
    graph: &mut Graph,
    trainable: bool,
) -> Result<Clip> {
    let bound = params.bind(graph, trainable);
    let out = bound.predict_rows(
        graph,
        &[DenoiseRow {
            x_t,
            t,
            context: ContextInput::Values(ctx_summary.to_vec()),
            prompt,
        }],
    )?;
    Clip::new(x_t.frame_dim(), graph.value(out).data().to_vec())
}

pub(crate) fn rows_to_clips(value: &DenseArray, frame_dim: usize) -> Result<Vec<Clip>> {
    (0..value.rows())
        .map(|r| Clip::new(frame_dim, value.row_slice(r).to_vec()))
        .collect()
}
