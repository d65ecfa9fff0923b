//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] appends a node holding its value and the
//! indices of its inputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints. Parameters enter the tape by name through
//! [`Tape::param`]; the same parameter may be bound several times (for
//! instance the conditional and unconditional passes of a guided score) and
//! its gradients are summed.

use std::cell::RefCell;
use std::sync::Arc;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    Silu(usize),
    Sum(usize),
    Mean(usize),
    L1(usize),
    SqL2(usize),
    RowSum(usize),
    Transpose(usize),
    GatherRows(usize, Arc<[usize]>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    param: Option<String>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, name: &str) -> Result<Var<'_>> {
        let value = value.ensure_finite(name)?;
        Ok(self.push_arc(Arc::new(value), op, None))
    }

    fn push_arc(&self, value: Arc<Tensor>, op: Op, param: Option<String>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, param });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a constant input. Constants receive adjoints but are never
    /// written back to a parameter store.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_arc(Arc::new(value), Op::Leaf, None)
    }

    /// Binds the named parameter of `store` as a differentiable leaf.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var<'_>> {
        let value = store.shared(name)?;
        Ok(self.push_arc(value, Op::Leaf, Some(name.to_string())))
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if !loss_value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(loss_value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = gemm(&g, false, val(*b), true)?;
                    let gb = gemm(val(*a), true, &g, false)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, reduce_broadcast(&g, val(*a)))?;
                    accumulate(&mut grads, *b, reduce_broadcast(&g, val(*b)))?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, reduce_broadcast(&g, val(*a)))?;
                    accumulate(&mut grads, *b, reduce_broadcast(&g.scale(-1.0), val(*b)))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(val(*b))?;
                    let gb = g.mul(val(*a))?;
                    accumulate(&mut grads, *a, reduce_broadcast(&ga, val(*a)))?;
                    accumulate(&mut grads, *b, reduce_broadcast(&gb, val(*b)))?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c))?,
                Op::AddRow(a, row) => {
                    let grow = g.col_sum()?.reshape(val(*row).shape().to_vec())?;
                    accumulate(&mut grads, *a, g)?;
                    accumulate(&mut grads, *row, grow)?;
                }
                Op::Silu(a) => {
                    let x = val(*a);
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gy)| {
                            let s = sigmoid(x);
                            gy * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), data)?)?;
                }
                Op::Sum(a) => {
                    let gy = g.item()?;
                    accumulate(&mut grads, *a, Tensor::full(val(*a).shape(), gy))?;
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    let gy = g.item()? / x.numel() as f64;
                    accumulate(&mut grads, *a, Tensor::full(x.shape(), gy))?;
                }
                Op::L1(a) => {
                    let gy = g.item()?;
                    let ga = val(*a).map(|v| {
                        if v > 0.0 {
                            gy
                        } else if v < 0.0 {
                            -gy
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SqL2(a) => {
                    let gy = g.item()?;
                    accumulate(&mut grads, *a, val(*a).scale(2.0 * gy))?;
                }
                Op::RowSum(a) => {
                    let x = val(*a);
                    let cols = x.cols();
                    let mut data = Vec::with_capacity(x.numel());
                    for &gy in g.data() {
                        data.extend(std::iter::repeat_n(gy, cols));
                    }
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), data)?)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()?)?,
                Op::GatherRows(table, idx) => {
                    let t = val(*table);
                    let mut gt = Tensor::zeros(t.shape());
                    for (r, &i) in idx.iter().enumerate() {
                        for (dst, &src) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *dst += src;
                        }
                    }
                    accumulate(&mut grads, *table, gt)?;
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and writes the gradient of every parameter in
    /// `store` into it; parameters absent from the tape get zeros.
    pub fn backward_into(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        let nodes = self.nodes.borrow();
        let mut collected: std::collections::BTreeMap<&str, Tensor> = Default::default();
        for (node, g) in nodes.iter().zip(&grads.grads) {
            let (Some(name), Some(g)) = (node.param.as_deref(), g) else {
                continue;
            };
            match collected.get_mut(name) {
                Some(acc) => acc.axpy(1.0, g)?,
                None => {
                    collected.insert(name, g.clone());
                }
            }
        }
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            let grad = match collected.remove(name.as_str()) {
                Some(g) => g,
                None => Tensor::zeros(store.get(&name)?.shape()),
            };
            store.set_grad(&name, grad)?;
        }
        Ok(())
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

fn reduce_broadcast(g: &Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g.clone()
    } else {
        // target was broadcast as a scalar
        Tensor::full(target.shape(), g.sum())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, name: &str, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let out = f(&self.value())?;
        self.tape.push(out, op, name)
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        name: &str,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let out = f(&self.value(), &other.value())?;
        self.tape.push(out, op, name)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), "matmul", |a, b| a.matmul(b))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), "add", |a, b| a.add(b))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), "sub", |a, b| a.sub(b))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), "mul", |a, b| a.mul(b))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), "scale", |a| Ok(a.scale(c)))
    }

    /// Adds a bias row to every row of a matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), "add_row", |a, b| a.add_row(b))
    }

    pub fn silu(self) -> Result<Var<'t>> {
        self.unary(Op::Silu(self.id), "silu", |a| Ok(a.map(|x| x * sigmoid(x))))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), "sum", |a| Ok(Tensor::scalar(a.sum())))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), "mean", |a| Ok(Tensor::scalar(a.mean())))
    }

    pub fn l1(self) -> Result<Var<'t>> {
        self.unary(Op::L1(self.id), "l1", |a| Ok(Tensor::scalar(a.l1())))
    }

    pub fn sq_l2(self) -> Result<Var<'t>> {
        self.unary(Op::SqL2(self.id), "sq_l2", |a| Ok(Tensor::scalar(a.sq_l2())))
    }

    pub fn row_sum(self) -> Result<Var<'t>> {
        self.unary(Op::RowSum(self.id), "row_sum", |a| a.row_sum())
    }

    /// Row-wise dot product of two equally shaped matrices.
    pub fn row_dot(self, other: Var<'t>) -> Result<Var<'t>> {
        self.mul(other)?.row_sum()
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), "transpose", |a| a.transpose())
    }

    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let idx: Arc<[usize]> = idx.into();
        let op = Op::GatherRows(self.id, Arc::clone(&idx));
        self.unary(op, "gather_rows", |a| a.gather_rows(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap());
        let tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = w.sum().unwrap();
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut store = ParamStore::new();
        let w = Tensor::new(vec![4], vec![0.5, -2.0, 3.0, 0.0]).unwrap();
        store.insert("w", w.clone());
        let tape = Tape::new();
        let v = tape.param(&store, "w").unwrap();
        let loss = v.sq_l2().unwrap().scale(0.5).unwrap();
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap(), &w);
    }

    #[test]
    fn non_participating_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::full(&[2], 1.0));
        store.insert("b", Tensor::full(&[2, 2], 1.0));
        let tape = Tape::new();
        let a = tape.param(&store, "a").unwrap();
        tape.backward_into(a.sum().unwrap(), &mut store).unwrap();
        assert_eq!(store.grad("b").unwrap(), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn silu_at_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.silu().unwrap().value().item().unwrap(), 0.0);
    }

    #[test]
    fn non_finite_results_are_errors() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(x.scale(10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn repeated_binding_accumulates() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let tape = Tape::new();
        let a = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "w").unwrap();
        let loss = a.sum().unwrap().add(b.sum().unwrap()).unwrap();
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn gather_scatters_back() {
        let mut store = ParamStore::new();
        store.insert("t", Tensor::full(&[3, 2], 1.0));
        let tape = Tape::new();
        let t = tape.param(&store, "t").unwrap();
        let rows = t.gather_rows(&[2, 0, 2]).unwrap();
        tape.backward_into(rows.sum().unwrap(), &mut store).unwrap();
        assert_eq!(store.grad("t").unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
    }
}
