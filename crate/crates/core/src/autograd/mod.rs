//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every differentiable operation records a backward closure that is itself
//! written in terms of differentiable operations, so gradients can be
//! differentiated again (`create_graph = true`). The critic's gradient
//! penalty relies on this.
//!
//! Node ids grow monotonically, so sorting reachable nodes by descending id
//! is a valid reverse topological order.

pub mod ops;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether operations on this thread currently record a graph.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` with graph recording switched on or off, restoring the previous
/// mode afterwards (also on unwind).
pub fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

/// Arguments handed to a backward closure.
pub struct BackwardCtx<'a> {
    pub inputs: &'a [Var],
    pub output: &'a Var,
    pub grad: &'a Var,
    /// `needs[i]` is false when the gradient for `inputs[i]` is not wanted.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn = dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Var>> + Send + Sync;

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<Var>,
    backward: Option<Box<BackwardFn>>,
}

/// A node in the computation graph. Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Var(Arc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.0.id, self.0.value)
    }
}

impl Var {
    fn make(
        value: Tensor,
        requires_grad: bool,
        inputs: Vec<Var>,
        backward: Option<Box<BackwardFn>>,
    ) -> Var {
        Var(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            inputs,
            backward,
        }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Var {
        Var::make(value, false, Vec::new(), None)
    }

    /// A graph leaf that accumulates gradients (parameters, penalty inputs).
    pub fn leaf(value: Tensor) -> Var {
        Var::make(value, true, Vec::new(), None)
    }

    /// Output of an operation. The graph edge is only recorded when grad mode
    /// is on and some input requires gradients.
    pub(crate) fn from_op(
        value: Tensor,
        inputs: Vec<Var>,
        backward: impl Fn(&BackwardCtx<'_>) -> Vec<Option<Var>> + Send + Sync + 'static,
    ) -> Var {
        if is_grad_enabled() && inputs.iter().any(Var::requires_grad) {
            Var::make(value, true, inputs, Some(Box::new(backward)))
        } else {
            Var::constant(value)
        }
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

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// A constant copy of this value cut off from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }
}

/// Gradients of `root` with respect to each entry of `wrt` (`None` when
/// `root` does not depend on it). `root` must hold a single value.
///
/// With `create_graph` the returned gradients are themselves part of the
/// graph and can be differentiated again.
pub fn grad(root: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Option<Var>> {
    assert_eq!(
        root.value().numel(),
        1,
        "gradient root must be a single value, got shape {:?}",
        root.shape()
    );
    let seed = Tensor::full(root.shape(), 1.0);
    let targets: HashSet<u64> = wrt.iter().map(|v| v.id()).collect();
    let grads = run_backward(root, seed, Some(&targets), create_graph);
    wrt.iter().map(|v| grads.get(&v.id()).cloned()).collect()
}

/// Gradients of `root` with respect to every leaf that requires them.
pub fn backward(root: &Var) -> Gradients {
    assert_eq!(root.value().numel(), 1, "backward root must be a single value");
    let seed = Tensor::full(root.shape(), 1.0);
    let grads = run_backward(root, seed, None, false);
    let mut map = HashMap::new();
    for (id, g) in grads {
        map.insert(id, g.value().clone());
    }
    Gradients { map }
}

/// Gradients keyed by graph node.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.map.get(&var.id())
    }
}

fn run_backward(
    root: &Var,
    seed: Tensor,
    targets: Option<&HashSet<u64>>,
    create_graph: bool,
) -> HashMap<u64, Var> {
    // Collect every node reachable from the root that participates in
    // gradient flow.
    let mut nodes: HashMap<u64, Var> = HashMap::new();
    let mut stack = vec![root.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || nodes.contains_key(&v.id()) {
            continue;
        }
        for input in &v.0.inputs {
            stack.push(input.clone());
        }
        nodes.insert(v.id(), v);
    }
    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable();

    // A node is relevant when a requested target is reachable from it.
    let relevant: HashSet<u64> = match targets {
        None => order.iter().copied().collect(),
        Some(t) => {
            let mut rel = HashSet::new();
            for id in &order {
                let node = &nodes[id];
                if t.contains(id) || node.0.inputs.iter().any(|i| rel.contains(&i.id())) {
                    rel.insert(*id);
                }
            }
            rel
        }
    };

    with_grad_mode(create_graph, || {
        let mut grads: HashMap<u64, Var> = HashMap::new();
        grads.insert(root.id(), Var::constant(seed));
        for id in order.iter().rev() {
            let node = &nodes[id];
            let Some(backward) = &node.0.backward else {
                continue;
            };
            let Some(g) = grads.get(id).cloned() else {
                continue;
            };
            let needs: Vec<bool> = node
                .0
                .inputs
                .iter()
                .map(|i| i.requires_grad() && relevant.contains(&i.id()))
                .collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let input_grads = backward(&BackwardCtx {
                inputs: &node.0.inputs,
                output: node,
                grad: &g,
                needs: &needs,
            });
            debug_assert_eq!(input_grads.len(), node.0.inputs.len());
            for ((input, ig), need) in node.0.inputs.iter().zip(input_grads).zip(&needs) {
                let Some(ig) = ig else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(ig.shape(), input.shape(), "gradient shape mismatch");
                let merged = match grads.remove(&input.id()) {
                    Some(prev) => ops::add(&prev, &ig).expect("gradient shapes agree"),
                    None => ig,
                };
                grads.insert(input.id(), merged);
            }
            // Interior gradients are no longer needed once propagated.
            if targets.is_some_and(|t| !t.contains(id)) || (targets.is_none() && !node.is_leaf()) {
                grads.remove(id);
            }
        }
        grads.retain(|id, _| nodes.get(id).is_some_and(|n| match targets {
            Some(t) => t.contains(id),
            None => n.is_leaf(),
        }));
        grads
    })
}
