use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// What a local-derivative rule sees when the backward sweep reaches its node.
pub struct BackwardCtx<'a> {
    pub out: &'a [f64],
    pub grad: &'a [f64],
    pub parents: &'a [Tensor],
}

/// Returns one gradient per parent, `None` for parents that need none.
pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

/// A dense row-major array that records how it was computed.
///
/// Cloning is cheap (reference counted). Tensors are immutable once built;
/// parameters live outside the graph and are re-bound as fresh leaves for
/// every forward pass. Ids grow monotonically, so creation order is a valid
/// topological order of the graph.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(TensorError::shape("from_vec", format!("zero extent in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(TensorError::shape(
                "from_vec",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// A trainable leaf.
    pub fn parameter(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.with_requires_grad(true))
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::leaf(vec![1], vec![v], false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        assert!(shape.iter().all(|&d| d > 0), "zero extent in {shape:?}");
        Self::leaf(shape.to_vec(), vec![v; numel(shape)], false)
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::leaf(vec![n, n], data, false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: None,
        }))
    }

    /// Builds the result of an operation. When no parent needs a gradient the
    /// result is a plain constant and the rule is dropped.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = requires_grad.then_some(Node { parents, backward });
        Tensor(Rc::new(Inner {
            id: next_id(),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    /// Same values, fresh leaf with the requested gradient flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), requires_grad)
    }

    /// Cuts the graph: a constant copy of this tensor.
    pub fn detach(&self) -> Tensor {
        self.with_requires_grad(false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse sweep from a scalar. Every leaf on the way that requires a
    /// gradient ends up holding d(self)/d(leaf), added to whatever it held.
    /// Intermediate results do not keep their gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(node) = &t.0.node {
                stack.extend(node.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: std::collections::HashMap<u64, Vec<f64>> = std::collections::HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in &order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            if let Some(node) = &t.0.node {
                let ctx = BackwardCtx {
                    out: t.data(),
                    grad: &g,
                    parents: &node.parents,
                };
                let grads = (node.backward)(&ctx);
                debug_assert_eq!(grads.len(), node.parents.len());
                for (p, pg) in node.parents.iter().zip(grads) {
                    let Some(pg) = pg else { continue };
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel());
                    match pending.get_mut(&p.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.id(), pg);
                        }
                    }
                }
            }
            if t.is_leaf() {
                t.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}
