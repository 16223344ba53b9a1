//! Tensor handle and the reverse-mode tape.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Operations that see at
//! least one input with `requires_grad` record a [`GradFn`] on their output
//! holding the inputs and a closure mapping the output gradient to input
//! gradients. [`Tensor::backward`] walks that graph in reverse topological
//! order. Leaf tensors (parameters, inputs) accumulate into their persistent
//! grad buffer; intermediate gradients live only for the duration of the call.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use super::element::Element;
use crate::error::{shape_err, Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables tape recording on the current thread while alive.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Maps the output gradient to one optional gradient per parent. `needs[i]`
/// tells the closure whether parent `i` wants a gradient at all.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct GradFn<T: Element> {
    pub name: &'static str,
    pub parents: Vec<Tensor<T>>,
    pub backward: BackwardFn<T>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

pub struct Tensor<T: Element = f32> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.node.grad_fn.as_ref().map(|g| g.name).unwrap_or("leaf");
        write!(
            f,
            "Tensor<{}>(shape={:?}, requires_grad={}, op={})",
            T::NAME,
            self.node.shape,
            self.node.requires_grad,
            op
        )
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(shape_err!("zero extent in shape {shape:?}"));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(shape_err!(
            "shape {shape:?} needs {n} values, got {len}"
        ));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    fn from_node(node: Node<T>) -> Self {
        Tensor {
            node: Arc::new(node),
        }
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![T::zero(); n], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![value; n], shape.to_vec(), false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![value], vec![1], false)
    }

    /// A trainable leaf.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::leaf(data, shape.to_vec(), true))
    }

    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Self::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            grad_fn: None,
        })
    }

    /// A copy of this tensor's values detached from any graph, flagged for
    /// gradient accumulation. Used to turn inputs into differentiable leaves.
    pub fn detached_with_grad(&self) -> Self {
        Self::leaf(self.to_vec(), self.node.shape.clone(), true)
    }

    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.node.shape.clone(), false)
    }

    /// Output of an operation. Records `grad_fn` only when grad mode is on and
    /// at least one parent participates in differentiation.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        name: &'static str,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let record = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = record.then(|| GradFn {
            name,
            parents,
            backward: Box::new(backward),
        });
        Self::from_node(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad: record,
            grad_fn,
        })
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.node.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err!(
                "expected an N×C×H×W tensor, got shape {:?}",
                self.node.shape
            )),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.node.data.read()
    }

    /// In-place access for optimizers and running statistics.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<T>> {
        self.node.data.write()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.read().clone()
    }

    pub fn item(&self) -> T {
        self.node.data.read()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock() = None;
    }

    /// Reinterpret with a new shape of equal element count; differentiable.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape, self.numel())?;
        let data = self.to_vec();
        Ok(Tensor::from_op(
            data,
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    pub fn all_finite(&self) -> bool {
        self.node.data.read().iter().all(|v| v.is_finite())
    }

    /// Accumulates d(self)/d(leaf) into every reachable leaf with
    /// `requires_grad`. `self` must be a single-element tensor.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward called on a tensor that does not require grad".into(),
            ));
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient flowing into {t:?}"
                )));
            }
            match &t.node.grad_fn {
                None => {
                    let mut slot = t.node.grad.lock();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let needs: Vec<bool> = gf.parents.iter().map(|p| p.requires_grad()).collect();
                    let grads = (gf.backward)(&g, &needs);
                    debug_assert_eq!(grads.len(), gf.parents.len());
                    for ((parent, pg), need) in gf.parents.iter().zip(grads).zip(&needs) {
                        let (Some(pg), true) = (pg, *need) else {
                            continue;
                        };
                        debug_assert_eq!(pg.len(), parent.numel(), "grad of {}", gf.name);
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a = *a + *b),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over nodes that require grad; the root comes last.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // iterative DFS; deep nets overflow the stack with recursion
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.node.grad_fn {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
