//! Dynamic reverse-mode differentiation over batched `f64` matrices.
//!
//! A [`Tape`] records a directed acyclic graph of matrix operations with
//! eagerly computed values (rows = batch samples). Calling [`Tape::backward`]
//! on a scalar node runs one reverse sweep and accumulates exact gradients
//! into every node, in particular into trainable [leaf](Tape::leaf) nodes.
//!
//! The operation set is deliberately small — exactly what assembling the
//! training losses requires. The crucial capability is *differentiating
//! through an input gradient*: [`BoundNet::input_gradient`] builds the
//! network's ∂output/∂input as tape operations (the layerwise chain
//!
//! ```text
//! δ_L = head'(a_L),   g_{l−1} = δ_l · W_l,   δ_{l−1} = g_{l−1} ⊙ (1 − h_{l−1}²),
//! ```
//!
//! whose nodes share the weight leaves with the forward pass), so a single
//! reverse sweep over the extended graph yields exact second-order parameter
//! gradients of any loss that consumes the input gradient. Values are read
//! back eagerly at construction time via [`Tape::value`], which lets callers
//! derive data-dependent constants (branch masks, endpoint selections)
//! without breaking differentiability where it matters.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use super::{Head, MlpGradients, MlpParams};

/// Handle to a tape node. Cheap to copy; only meaningful with the tape that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// `A · B`
    MatMul(Var, Var),
    /// `A · Bᵀ`
    MatMulT(Var, Var),
    /// `A + row` with `row` broadcast across the batch dimension.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `mul·A + add` elementwise; only `mul` enters the backward pass.
    Affine { a: Var, mul: f64 },
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    /// Row sums: `B × d → B × 1`.
    SumRows(Var),
    /// Mean of all entries: `B × d → 1 × 1`.
    MeanAll(Var),
    /// Column-wise concatenation.
    Concat(Var, Var),
    /// Columns `c0..c1`.
    Slice { a: Var, c0: usize, c1: usize },
    /// `mask ⊙ A + (1 − mask) ⊙ B` with a constant 0/1 mask.
    Select { mask: Array2<f64>, on_true: Var, on_false: Var },
    /// Clamp to `[0, 1]`; gradient passes only through the interior.
    Clamp01(Var),
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
}

/// Eager-forward computation graph; see the module docs.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Trainable input node; [`backward`](Tape::backward) accumulates its
    /// gradient for retrieval via [`grad`](Tape::grad).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-trainable input node.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `1 × 1` constant.
    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// The eagerly computed value of a node.
    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0].value.view()
    }

    /// The accumulated gradient of the last [`backward`](Tape::backward)
    /// sweep; zero if the node did not influence the loss.
    pub fn grad(&self, v: Var) -> Array2<f64> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[v.0].value.raw_dim()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).dot(self.val(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a).dot(&self.val(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.val(row).nrows(), 1);
        let value = self.val(a) + self.val(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a) + self.val(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a) - self.val(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a) * self.val(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a) / self.val(b);
        self.push(value, Op::Div(a, b))
    }

    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.val(a).mapv(|v| mul * v + add);
        self.push(value, Op::Affine { a, mul })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let sums = self.val(a).sum_axis(Axis(1));
        let b = sums.len();
        let value = sums.into_shape((b, 1)).expect("column vector");
        self.push(value, Op::SumRows(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.val(a);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let value = concatenate(Axis(1), &[self.val(a).view(), self.val(b).view()])
            .expect("concat: row counts must match");
        self.push(value, Op::Concat(a, b))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let value = self.val(a).slice(ndarray::s![.., c0..c1]).to_owned();
        self.push(value, Op::Slice { a, c0, c1 })
    }

    /// Entry-wise branch with a caller-supplied 0/1 mask (1 picks `on_true`).
    /// The mask is a constant: gradients flow through the selected branch
    /// only, which is the exact derivative almost everywhere.
    pub fn select(&mut self, mask: Array2<f64>, on_true: Var, on_false: Var) -> Var {
        debug_assert!(mask.iter().all(|m| *m == 0.0 || *m == 1.0));
        let value = &mask * self.val(on_true) + (1.0 - &mask) * self.val(on_false);
        self.push(value, Op::Select { mask, on_true, on_false })
    }

    pub fn clamp01(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(|v| v.clamp(0.0, 1.0));
        self.push(value, Op::Clamp01(a))
    }

    /// Reverse sweep from a `1 × 1` loss node. Gradients from any earlier
    /// sweep are discarded.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.nodes[loss.0].value.shape(),
            &[1, 1],
            "backward requires a scalar loss node"
        );
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));

        for i in (0..self.nodes.len()).rev() {
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let grad = match &node.grad {
                Some(g) => g.clone(),
                None => continue,
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&parents[b.0].value.t());
                    let gb = parents[a.0].value.t().dot(&grad);
                    accumulate(&mut parents[a.0].grad, ga);
                    accumulate(&mut parents[b.0].grad, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = grad.dot(&parents[b.0].value);
                    let gb = grad.t().dot(&parents[a.0].value);
                    accumulate(&mut parents[a.0].grad, ga);
                    accumulate(&mut parents[b.0].grad, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = grad.sum_axis(Axis(0));
                    let cols = gr.len();
                    accumulate(
                        &mut parents[row.0].grad,
                        gr.into_shape((1, cols)).expect("row vector"),
                    );
                    accumulate(&mut parents[a.0].grad, grad);
                }
                Op::Add(a, b) => {
                    accumulate(&mut parents[b.0].grad, grad.clone());
                    accumulate(&mut parents[a.0].grad, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut parents[b.0].grad, -&grad);
                    accumulate(&mut parents[a.0].grad, grad);
                }
                Op::Mul(a, b) => {
                    let ga = &grad * &parents[b.0].value;
                    let gb = &grad * &parents[a.0].value;
                    accumulate(&mut parents[a.0].grad, ga);
                    accumulate(&mut parents[b.0].grad, gb);
                }
                Op::Div(a, b) => {
                    let ga = &grad / &parents[b.0].value;
                    let gb = -(&grad * &node.value) / &parents[b.0].value;
                    accumulate(&mut parents[a.0].grad, ga);
                    accumulate(&mut parents[b.0].grad, gb);
                }
                Op::Affine { a, mul } => {
                    accumulate(&mut parents[a.0].grad, grad.mapv(|g| g * mul));
                }
                Op::Tanh(a) => {
                    let ga = &grad * &node.value.mapv(|v| 1.0 - v * v);
                    accumulate(&mut parents[a.0].grad, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = &grad * &node.value.mapv(|v| v * (1.0 - v));
                    accumulate(&mut parents[a.0].grad, ga);
                }
                Op::Square(a) => {
                    let ga = 2.0 * &grad * &parents[a.0].value;
                    accumulate(&mut parents[a.0].grad, ga);
                }
                Op::SumRows(a) => {
                    let shape = parents[a.0].value.raw_dim();
                    let mut ga = Array2::zeros(shape);
                    for (mut row, g) in ga.rows_mut().into_iter().zip(grad.column(0)) {
                        row.fill(*g);
                    }
                    accumulate(&mut parents[a.0].grad, ga);
                }
                Op::MeanAll(a) => {
                    let shape = parents[a.0].value.raw_dim();
                    let scale = grad[[0, 0]] / parents[a.0].value.len() as f64;
                    accumulate(&mut parents[a.0].grad, Array2::from_elem(shape, scale));
                }
                Op::Concat(a, b) => {
                    let da = parents[a.0].value.ncols();
                    let ga = grad.slice(ndarray::s![.., 0..da]).to_owned();
                    let gb = grad.slice(ndarray::s![.., da..]).to_owned();
                    accumulate(&mut parents[a.0].grad, ga);
                    accumulate(&mut parents[b.0].grad, gb);
                }
                Op::Slice { a, c0, c1 } => {
                    let mut ga = Array2::zeros(parents[a.0].value.raw_dim());
                    ga.slice_mut(ndarray::s![.., *c0..*c1]).assign(&grad);
                    accumulate(&mut parents[a.0].grad, ga);
                }
                Op::Select { mask, on_true, on_false } => {
                    let gt = mask * &grad;
                    let gf = (1.0 - mask) * &grad;
                    accumulate(&mut parents[on_true.0].grad, gt);
                    accumulate(&mut parents[on_false.0].grad, gf);
                }
                Op::Clamp01(a) => {
                    let interior = parents[a.0]
                        .value
                        .mapv(|v| if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 });
                    accumulate(&mut parents[a.0].grad, &grad * &interior);
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &delta,
        None => *slot = Some(delta),
    }
}

/// A network's parameters registered as trainable leaves on a tape, plus the
/// graph builders for its forward pass and its in-graph input gradient.
pub struct BoundNet {
    weights: Vec<Var>,
    biases: Vec<Var>,
    dims: Vec<usize>,
    head: Head,
}

/// Forward-pass nodes kept for reuse: the post-activation hidden layers feed
/// both downstream losses and the input-gradient chain.
pub struct ForwardTrace {
    /// Network output, `B × out`.
    pub output: Var,
    hidden: Vec<Var>,
}

impl ForwardTrace {
    /// Post-activation hidden layers in forward order.
    pub fn hidden_layers(&self) -> &[Var] {
        &self.hidden
    }
}

impl BoundNet {
    /// Register `params` as trainable leaves.
    pub fn bind(tape: &mut Tape, params: &MlpParams) -> Self {
        let weights = params
            .weights()
            .iter()
            .map(|w| tape.leaf(w.clone()))
            .collect();
        let biases = params
            .biases()
            .iter()
            .map(|b| {
                let row = b.clone().into_shape((1, b.len())).expect("row vector");
                tape.leaf(row)
            })
            .collect();
        BoundNet {
            weights,
            biases,
            dims: params.dims().to_vec(),
            head: params.head(),
        }
    }

    /// Build the forward pass on `input` (`B × dims[0]`).
    pub fn forward(&self, tape: &mut Tape, input: Var) -> ForwardTrace {
        let layers = self.weights.len();
        let mut hidden = Vec::with_capacity(layers - 1);
        let mut h = input;
        for l in 0..layers {
            let lin = tape.matmul_t(h, self.weights[l]);
            let pre = tape.add_row(lin, self.biases[l]);
            h = if l + 1 < layers {
                let act = tape.tanh(pre);
                hidden.push(act);
                act
            } else {
                match self.head {
                    Head::Identity => pre,
                    Head::Logistic => tape.sigmoid(pre),
                }
            };
        }
        ForwardTrace { output: h, hidden }
    }

    /// Build ∂output/∂input as graph nodes (`B × dims[0]`, scalar output
    /// required). The chain reuses the forward trace's activations and the
    /// same weight leaves, so backpropagating through the result yields
    /// exact second-order parameter gradients.
    pub fn input_gradient(&self, tape: &mut Tape, trace: &ForwardTrace) -> Var {
        assert_eq!(
            *self.dims.last().expect("nonempty dims"),
            1,
            "input gradient needs a scalar-output network"
        );
        let layers = self.weights.len();
        let batch = tape.value(trace.output).nrows();
        // δ_L = head'(a_L): ones for the identity head, σ(1−σ) for logistic.
        let mut delta = match self.head {
            Head::Identity => tape.constant(Array2::ones((batch, 1))),
            Head::Logistic => {
                let one_minus = tape.affine(trace.output, -1.0, 1.0);
                tape.mul(trace.output, one_minus)
            }
        };
        for l in (0..layers).rev() {
            let g = tape.matmul(delta, self.weights[l]);
            if l == 0 {
                return g;
            }
            let h = trace.hidden[l - 1];
            let h_sq = tape.square(h);
            let dtanh = tape.affine(h_sq, -1.0, 1.0);
            delta = tape.mul(g, dtanh);
        }
        unreachable!("loop returns at l == 0");
    }

    /// Collect the accumulated parameter gradients after a backward sweep.
    pub fn extract_grads(&self, tape: &Tape) -> MlpGradients {
        let weights = self.weights.iter().map(|w| tape.grad(*w)).collect();
        let biases = self
            .biases
            .iter()
            .map(|b| {
                let g = tape.grad(*b);
                let len = g.len();
                Array1::from_iter(g.into_shape(len).expect("flat").into_iter())
            })
            .collect();
        MlpGradients { weights, biases }
    }
}
