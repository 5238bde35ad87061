use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::param::{Param, ParamId};
use crate::Tensor;

static NEXT_NODE: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Local gradient rule of a recorded operation.
///
/// `inputs` are the values of the operation's parents in the order they were
/// passed to [`Var::from_op`]; `needs` flags which of them want a gradient.
/// Entries for parents that do not need a gradient may be `None`.
pub trait Backward: Send + Sync {
    fn backward(
        &self,
        grad: &Tensor,
        inputs: &[&Tensor],
        output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    id: usize,
    value: Tensor,
    parents: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// A value in the computation graph.
///
/// Cloning is cheap: the node is shared.
#[derive(Clone)]
pub struct Var(Arc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn next_id() -> usize {
    NEXT_NODE.fetch_add(1, Ordering::Relaxed)
}

/// Whether operations created on this thread are currently recorded.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording on the current thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

impl Var {
    fn from_node(node: Node) -> Self {
        Var(Arc::new(node))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: Tensor) -> Self {
        Self::from_node(Node {
            id: next_id(),
            value,
            parents: Vec::new(),
            op: None,
            requires_grad: false,
            param: None,
        })
    }

    /// A leaf that collects a gradient (unless recording is disabled).
    pub fn leaf(value: Tensor) -> Self {
        Self::from_node(Node {
            id: next_id(),
            value,
            parents: Vec::new(),
            op: None,
            requires_grad: grad_enabled(),
            param: None,
        })
    }

    pub(crate) fn param_leaf(value: Tensor, param: ParamId) -> Self {
        let requires_grad = grad_enabled();
        Self::from_node(Node {
            id: next_id(),
            value,
            parents: Vec::new(),
            op: None,
            requires_grad,
            param: requires_grad.then_some(param),
        })
    }

    /// Records the result of an operation. When no parent requires a gradient
    /// (or recording is disabled) the node is created detached.
    pub fn from_op(value: Tensor, parents: Vec<Var>, op: impl Backward + 'static) -> Self {
        let requires_grad = grad_enabled() && parents.iter().any(Var::requires_grad);
        if requires_grad {
            Self::from_node(Node {
                id: next_id(),
                value,
                parents,
                op: Some(Box::new(op)),
                requires_grad: true,
                param: None,
            })
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    /// Value of a single-element variable.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.0.value.len(), 1, "scalar() on a tensor of shape {:?}", self.shape());
        *self.0.value.iter().next().unwrap()
    }

    /// Backpropagates from this variable, seeding with ones.
    pub fn backward(&self) -> Gradients {
        self.backward_with(Tensor::ones(self.0.value.raw_dim()))
    }

    pub fn backward_with(&self, seed: Tensor) -> Gradients {
        assert_eq!(seed.shape(), self.shape(), "seed shape must match the output");
        let mut out = Gradients::default();
        if !self.requires_grad() {
            return out;
        }

        // Parents are always created before children, so descending id order
        // is a valid topological order of the reachable subgraph.
        let mut order: Vec<Var> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(v) = stack.pop() {
            for p in &v.0.parents {
                if p.requires_grad() && seen.insert(p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        order.sort_unstable_by_key(|v| std::cmp::Reverse(v.id()));

        let mut pending: HashMap<usize, Tensor> = HashMap::new();
        pending.insert(self.id(), seed);
        for v in order {
            let Some(grad) = pending.remove(&v.id()) else {
                continue;
            };
            let node = &v.0;
            match &node.op {
                Some(op) => {
                    let inputs: Vec<&Tensor> = node.parents.iter().map(|p| p.value()).collect();
                    let needs: Vec<bool> = node.parents.iter().map(Var::requires_grad).collect();
                    let parent_grads = op.backward(&grad, &inputs, &node.value, &needs);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for ((p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                        let (Some(g), true) = (g, need) else { continue };
                        debug_assert_eq!(
                            g.shape(),
                            p.shape(),
                            "gradient shape mismatch for parent of node {}",
                            node.id
                        );
                        accumulate(&mut pending, p.id(), g);
                    }
                }
                None => {
                    if let Some(pid) = node.param {
                        accumulate(&mut out.params, pid, grad.clone());
                    }
                    out.leaves.insert(node.id, grad);
                }
            }
        }
        out
    }
}

fn accumulate<K: std::hash::Hash + Eq>(map: &mut HashMap<K, Tensor>, key: K, g: Tensor) {
    match map.get_mut(&key) {
        Some(acc) => *acc += &g,
        None => {
            map.insert(key, g);
        }
    }
}

/// Gradients of leaves reached by one backward pass.
#[derive(Default, Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a leaf variable.
    pub fn wrt(&self, v: &Var) -> Option<&Tensor> {
        self.leaves.get(&v.id())
    }

    /// Gradient with respect to a parameter, summed over every use.
    pub fn param(&self, p: &Param) -> Option<&Tensor> {
        self.params.get(&p.id())
    }

    pub fn param_by_id(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }
}
