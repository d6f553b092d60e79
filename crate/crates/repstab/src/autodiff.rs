//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! then walks the recording in reverse and accumulates gradients for every
//! node, so callers can read gradients with respect to parameters, inputs,
//! or any retained intermediate (attention probabilities included).
//!
//! All values are `Array2<F>`; vectors are carried as `1×d` or `n×1`
//! matrices. Batches put samples in rows, sequences are handled by the
//! caller as one node per time step.

use ndarray::{s, Array2, Axis};

use crate::num::{cast, Float};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F: Float> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + row` with `row` shaped `1×d`, broadcast over rows of `x`.
    AddRow(Var, Var),
    /// `x + col` with `col` shaped `n×1`, broadcast over columns of `x`.
    AddCol(Var, Var),
    /// `x ⊙ col` with `col` shaped `n×1`, broadcast over columns of `x`.
    MulCol(Var, Var),
    Scale(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    },
    MeanRows(Var),
    SumAll(Var),
    RowSums(Var),
    GatherRows {
        x: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
        end: usize,
    },
    Transpose(Var),
    Maximum(Var, Var),
    /// Mean cross-entropy of row-wise logits against integer targets.
    CrossEntropyMean {
        logits: Var,
        targets: Vec<usize>,
    },
    /// Extracts `x[row, col]` as a `1×1` value.
    PickScalar {
        x: Var,
        row: usize,
        col: usize,
    },
}

struct Node<F: Float> {
    value: Array2<F>,
    op: Op<F>,
    /// Cached forward by-product (softmax probabilities for cross-entropy).
    aux: Option<Array2<F>>,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients<F: Float> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient w.r.t. `v`, or `None` when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Array2<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. `v`, zero-filled when the node is off the loss path.
    pub fn wrt_or_zero(&self, v: Var, shape: (usize, usize)) -> Array2<F> {
        match self.wrt(v) {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }
}

/// Recording of a single forward computation.
pub struct Tape<F: Float> {
    nodes: std::cell::RefCell<Vec<Node<F>>>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: std::cell::RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<F>, op: Op<F>) -> Var {
        self.push_with_aux(value, op, None)
    }

    fn push_with_aux(&self, value: Array2<F>, op: Op<F>, aux: Option<Array2<F>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, aux });
        Var(nodes.len() - 1)
    }

    fn val<R>(&self, v: Var, f: impl FnOnce(&Array2<F>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    /// Copies the value held at `v`.
    pub fn value(&self, v: Var) -> Array2<F> {
        self.val(v, |a| a.clone())
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.val(v, |a| (a.nrows(), a.ncols()))
    }

    /// Records an input node. Leaves have no parents; their gradients are
    /// read back after [`Tape::backward`].
    pub fn input(&self, value: Array2<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.val(a, |x| self.val(b, |y| x.dot(y)));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.val(a, |x| self.val(b, |y| x + y));
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = self.val(a, |x| self.val(b, |y| x - y));
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.val(a, |x| self.val(b, |y| x * y));
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_row(&self, x: Var, row: Var) -> Var {
        let value = self.val(x, |a| self.val(row, |r| a + &r.row(0)));
        self.push(value, Op::AddRow(x, row))
    }

    pub fn add_col(&self, x: Var, col: Var) -> Var {
        let value = self.val(x, |a| self.val(col, |c| a + &c.column(0).insert_axis(Axis(1))));
        self.push(value, Op::AddCol(x, col))
    }

    pub fn mul_col(&self, x: Var, col: Var) -> Var {
        let value = self.val(x, |a| self.val(col, |c| a * &c.column(0).insert_axis(Axis(1))));
        self.push(value, Op::MulCol(x, col))
    }

    pub fn scale(&self, x: Var, s: F) -> Var {
        let value = self.val(x, |a| a.mapv(|v| v * s));
        self.push(value, Op::Scale(x, s))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let value = self.val(x, |a| a.mapv(|v| F::one() / (F::one() + (-v).exp())));
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        let value = self.val(x, |a| a.mapv(|v| v.tanh()));
        self.push(value, Op::Tanh(x))
    }

    /// GELU via the tanh approximation.
    pub fn gelu(&self, x: Var) -> Var {
        let value = self.val(x, |a| a.mapv(gelu_scalar));
        self.push(value, Op::Gelu(x))
    }

    /// Row-wise softmax. Masking is done by adding a large negative
    /// constant to excluded entries before calling this.
    pub fn softmax_rows(&self, x: Var) -> Var {
        let value = self.val(x, |a| softmax_rows_value(a));
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn layer_norm_rows(&self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let value = self.val(x, |a| {
            self.val(gamma, |g| {
                self.val(beta, |b| {
                    let mut out = Array2::zeros(a.raw_dim());
                    for (i, row) in a.rows().into_iter().enumerate() {
                        let d = cast::<F>(row.len() as f64);
                        let mean = row.sum() / d;
                        let var = row.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / d;
                        let inv = F::one() / (var + eps).sqrt();
                        for (j, &v) in row.iter().enumerate() {
                            out[[i, j]] = (v - mean) * inv * g[[0, j]] + b[[0, j]];
                        }
                    }
                    out
                })
            })
        });
        self.push(value, Op::LayerNormRows { x, gamma, beta, eps })
    }

    /// Column means: `n×d → 1×d`.
    pub fn mean_rows(&self, x: Var) -> Var {
        let value = self.val(x, |a| {
            let n = cast::<F>(a.nrows() as f64);
            (a.sum_axis(Axis(0)) / n).insert_axis(Axis(0))
        });
        self.push(value, Op::MeanRows(x))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let value = self.val(x, |a| Array2::from_elem((1, 1), a.sum()));
        self.push(value, Op::SumAll(x))
    }

    /// Row sums: `n×d → n×1`.
    pub fn row_sums(&self, x: Var) -> Var {
        let value = self.val(x, |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)));
        self.push(value, Op::RowSums(x))
    }

    /// Selects rows of `x` by index; indices may repeat.
    pub fn gather_rows(&self, x: Var, ids: &[usize]) -> Var {
        let value = self.val(x, |a| {
            let mut out = Array2::zeros((ids.len(), a.ncols()));
            for (pos, &id) in ids.iter().enumerate() {
                out.row_mut(pos).assign(&a.row(id));
            }
            out
        });
        self.push(value, Op::GatherRows { x, ids: ids.to_vec() })
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].0].value.nrows();
        let cols: usize = parts.iter().map(|p| nodes[p.0].value.ncols()).sum();
        let mut out = Array2::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = &nodes[p.0].value;
            out.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        drop(nodes);
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let nodes = self.nodes.borrow();
        let cols = nodes[parts[0].0].value.ncols();
        let rows: usize = parts.iter().map(|p| nodes[p.0].value.nrows()).sum();
        let mut out = Array2::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = &nodes[p.0].value;
            out.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        drop(nodes);
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Var {
        let value = self.val(x, |a| a.slice(s![.., start..end]).to_owned());
        self.push(value, Op::SliceCols { x, start, end })
    }

    pub fn transpose(&self, x: Var) -> Var {
        let value = self.val(x, |a| a.t().to_owned());
        self.push(value, Op::Transpose(x))
    }

    /// Element-wise maximum; ties route the gradient to `a`.
    pub fn maximum(&self, a: Var, b: Var) -> Var {
        let value = self.val(a, |x| {
            self.val(b, |y| {
                let mut out = x.clone();
                out.zip_mut_with(y, |o, &v| {
                    if v > *o {
                        *o = v;
                    }
                });
                out
            })
        });
        self.push(value, Op::Maximum(a, b))
    }

    /// Mean cross-entropy over rows of `logits` against `targets`.
    pub fn cross_entropy_mean(&self, logits: Var, targets: &[usize]) -> Var {
        let (loss, probs) = self.val(logits, |a| {
            assert_eq!(a.nrows(), targets.len());
            let probs = softmax_rows_value(a);
            let mut total = F::zero();
            for (i, row) in a.rows().into_iter().enumerate() {
                let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
                let lse = max
                    + row
                        .fold(F::zero(), |acc, &v| acc + (v - max).exp())
                        .ln();
                total += lse - row[targets[i]];
            }
            let n = cast::<F>(targets.len() as f64);
            (Array2::from_elem((1, 1), total / n), probs)
        });
        self.push_with_aux(
            loss,
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
            },
            Some(probs),
        )
    }

    pub fn pick_scalar(&self, x: Var, row: usize, col: usize) -> Var {
        let value = self.val(x, |a| Array2::from_elem((1, 1), a[[row, col]]));
        self.push(value, Op::PickScalar { x, row, col })
    }

    /// Back-propagates from `loss` (must be `1×1`) through everything
    /// recorded before it.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<F>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), F::one()));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&nodes[b.0].value.t());
                    let gb = nodes[a.0].value.t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.mapv(|v| -v));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * &nodes[b.0].value;
                    let gb = &g * &nodes[a.0].value;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::AddCol(x, col) => {
                    let gc = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *col, gc);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::MulCol(x, col) => {
                    let c = nodes[col.0].value.column(0).insert_axis(Axis(1));
                    let gx = &g * &c;
                    let gc = (&g * &nodes[x.0].value)
                        .sum_axis(Axis(1))
                        .insert_axis(Axis(1));
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *col, gc);
                }
                Op::Scale(x, sc) => {
                    accumulate(&mut grads, *x, g.mapv(|v| v * *sc));
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = &g * &y.mapv(|v| v * (F::one() - v));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = &g * &y.mapv(|v| F::one() - v * v);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let gx = &g * &nodes[x.0].value.mapv(gelu_grad_scalar);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = Array2::zeros(y.raw_dim());
                    for (r, (y_row, g_row)) in
                        y.rows().into_iter().zip(g.rows()).enumerate()
                    {
                        let dot = y_row
                            .iter()
                            .zip(g_row.iter())
                            .fold(F::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                        for (c, (&yv, &gv)) in y_row.iter().zip(g_row.iter()).enumerate() {
                            gx[[r, c]] = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNormRows { x, gamma, beta, eps } => {
                    let xv = &nodes[x.0].value;
                    let gam = &nodes[gamma.0].value;
                    let d = cast::<F>(xv.ncols() as f64);
                    let mut gx = Array2::zeros(xv.raw_dim());
                    let mut ggamma = Array2::zeros((1, xv.ncols()));
                    let mut gbeta = Array2::zeros((1, xv.ncols()));
                    for (r, row) in xv.rows().into_iter().enumerate() {
                        let mean = row.sum() / d;
                        let var =
                            row.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / d;
                        let inv = F::one() / (var + *eps).sqrt();
                        let mut a_mean = F::zero();
                        let mut ax_mean = F::zero();
                        let mut hats = Vec::with_capacity(row.len());
                        let mut avals = Vec::with_capacity(row.len());
                        for (c, &v) in row.iter().enumerate() {
                            let hat = (v - mean) * inv;
                            let a = g[[r, c]] * gam[[0, c]];
                            a_mean += a;
                            ax_mean += a * hat;
                            hats.push(hat);
                            avals.push(a);
                            ggamma[[0, c]] += g[[r, c]] * hat;
                            gbeta[[0, c]] += g[[r, c]];
                        }
                        a_mean = a_mean / d;
                        ax_mean = ax_mean / d;
                        for c in 0..row.len() {
                            gx[[r, c]] = (avals[c] - a_mean - hats[c] * ax_mean) * inv;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::MeanRows(x) => {
                    let n = nodes[x.0].value.nrows();
                    let scale = F::one() / cast::<F>(n as f64);
                    let mut gx = Array2::zeros(nodes[x.0].value.raw_dim());
                    for mut row in gx.rows_mut() {
                        row.assign(&g.row(0).mapv(|v| v * scale));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let gx = Array2::from_elem(nodes[x.0].value.raw_dim(), g[[0, 0]]);
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowSums(x) => {
                    let shape = nodes[x.0].value.raw_dim();
                    let gx = g.column(0).insert_axis(Axis(1)).broadcast(shape).unwrap().to_owned();
                    accumulate(&mut grads, *x, gx);
                }
                Op::GatherRows { x, ids } => {
                    let mut gx = Array2::zeros(nodes[x.0].value.raw_dim());
                    for (pos, &id) in ids.iter().enumerate() {
                        let mut row = gx.row_mut(id);
                        row += &g.row(pos);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = nodes[p.0].value.ncols();
                        let gp = g.slice(s![.., at..at + w]).to_owned();
                        accumulate(&mut grads, *p, gp);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = nodes[p.0].value.nrows();
                        let gp = g.slice(s![at..at + h, ..]).to_owned();
                        accumulate(&mut grads, *p, gp);
                        at += h;
                    }
                }
                Op::SliceCols { x, start, end } => {
                    let mut gx = Array2::zeros(nodes[x.0].value.raw_dim());
                    gx.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Transpose(x) => {
                    accumulate(&mut grads, *x, g.t().to_owned());
                }
                Op::Maximum(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let mut ga = Array2::zeros(av.raw_dim());
                    let mut gb = Array2::zeros(bv.raw_dim());
                    for ((idx, &gv), (&x, &y)) in
                        g.indexed_iter().zip(av.iter().zip(bv.iter()))
                    {
                        if y > x {
                            gb[idx] = gv;
                        } else {
                            ga[idx] = gv;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::CrossEntropyMean { logits, targets } => {
                    let probs = node.aux.as_ref().expect("cross-entropy caches probs");
                    let n = cast::<F>(targets.len() as f64);
                    let scale = g[[0, 0]] / n;
                    let mut gl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gl[[i, t]] = gl[[i, t]] - F::one();
                    }
                    gl.mapv_inplace(|v| v * scale);
                    accumulate(&mut grads, *logits, gl);
                }
                Op::PickScalar { x, row, col } => {
                    let mut gx = Array2::zeros(nodes[x.0].value.raw_dim());
                    gx[[*row, *col]] = g[[0, 0]];
                    accumulate(&mut grads, *x, gx);
                }
            }
            // Keep the gradient for reads after backward.
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate<F: Float>(grads: &mut [Option<Array2<F>>], v: Var, delta: Array2<F>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn softmax_rows_value<F: Float>(a: &Array2<F>) -> Array2<F> {
    let mut out = Array2::zeros(a.raw_dim());
    for (i, row) in a.rows().into_iter().enumerate() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut sum = F::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for j in 0..row.len() {
            out[[i, j]] = out[[i, j]] / sum;
        }
    }
    out
}

fn gelu_scalar<F: Float>(x: F) -> F {
    let c0: F = cast(0.797_884_560_802_865_4); // sqrt(2/pi)
    let c1: F = cast(0.044715);
    let half: F = cast(0.5);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad_scalar<F: Float>(x: F) -> F {
    let c0: F = cast(0.797_884_560_802_865_4);
    let c1: F = cast(0.044715);
    let half: F = cast(0.5);
    let three: F = cast(3.0);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c0 * (F::one() + three * c1 * x * x)
}
