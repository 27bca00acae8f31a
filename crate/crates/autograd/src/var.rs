use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::{Array, Elem};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables graph recording until the guard is dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

/// Backward rule of a recorded op. Implementations must only use
/// differentiable [`Var`] operations so the result can be differentiated
/// again.
pub(crate) trait Backward<T: Elem> {
    fn name(&self) -> &'static str;
    fn backward(&self, out: &Var<T>, grad: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>>;
}

struct Node<T: Elem> {
    id: u64,
    value: Array<T>,
    requires_grad: bool,
    inputs: Vec<Var<T>>,
    op: Option<Box<dyn Backward<T>>>,
}

/// A value in the computation graph.
///
/// Cloning is cheap (reference counted). Ids grow monotonically, so every
/// node's id exceeds those of its inputs, which gives the topological order
/// used by [`grad`].
pub struct Var<T: Elem>(Rc<Node<T>>);

impl<T: Elem> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Elem> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name()))
            .finish()
    }
}

impl<T: Elem> Var<T> {
    fn new(value: Array<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            inputs: Vec::new(),
            op: None,
        }))
    }

    /// A value gradients never flow into.
    pub fn constant(value: Array<T>) -> Self {
        Self::new(value, false)
    }

    /// A trainable leaf.
    pub fn leaf(value: Array<T>) -> Self {
        Self::new(value, true)
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(Array::scalar(v))
    }

    pub(crate) fn from_op(
        value: Array<T>,
        inputs: Vec<Var<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        let record = is_grad_enabled() && inputs.iter().any(|v| v.requires_grad());
        if !record {
            return Self::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            inputs,
            op: Some(Box::new(op)),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Array<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }
}

/// Gradients of `root` with respect to each of `wrt`.
///
/// Non-scalar roots are seeded with ones (i.e. the gradient of their sum).
/// With `create_graph` the returned gradients are themselves recorded and
/// can be differentiated; otherwise they are constants. Inputs unreachable
/// from `root` get a zero gradient.
pub fn grad<T: Elem>(root: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Vec<Var<T>> {
    let targets: Vec<u64> = wrt.iter().map(|v| v.id()).collect();
    let mut results: HashMap<u64, Var<T>> = HashMap::new();

    if root.requires_grad() || targets.contains(&root.id()) {
        // collect the recorded subgraph
        let mut nodes: Vec<Var<T>> = Vec::new();
        let mut seen: HashMap<u64, usize> = HashMap::new();
        let mut stack = vec![root.clone()];
        while let Some(v) = stack.pop() {
            if seen.contains_key(&v.id()) {
                continue;
            }
            seen.insert(v.id(), 0);
            for inp in &v.0.inputs {
                if inp.requires_grad() && !seen.contains_key(&inp.id()) {
                    stack.push(inp.clone());
                }
            }
            nodes.push(v);
        }
        nodes.sort_by_key(|v| v.id());

        // which nodes lead to a target
        let mut reaches: HashMap<u64, bool> = HashMap::with_capacity(nodes.len());
        for v in &nodes {
            let r = targets.contains(&v.id())
                || v.0.inputs.iter().any(|i| reaches.get(&i.id()).copied().unwrap_or(false));
            reaches.insert(v.id(), r);
        }

        let _guard = (!create_graph).then(no_grad);
        let mut grads: HashMap<u64, Var<T>> = HashMap::new();
        grads.insert(root.id(), Var::constant(Array::ones(root.shape())));

        for v in nodes.iter().rev() {
            if !reaches[&v.id()] {
                continue;
            }
            let Some(g) = grads.remove(&v.id()) else {
                continue;
            };
            if targets.contains(&v.id()) {
                results.insert(v.id(), g.clone());
            }
            let Some(op) = &v.0.op else { continue };
            let needs: Vec<bool> = v
                .0
                .inputs
                .iter()
                .map(|i| i.requires_grad() && reaches.get(&i.id()).copied().unwrap_or(false))
                .collect();
            if !needs.iter().any(|&b| b) {
                continue;
            }
            let input_grads = op.backward(v, &g, &v.0.inputs);
            debug_assert_eq!(input_grads.len(), v.0.inputs.len(), "{}", op.name());
            for ((inp, gi), need) in v.0.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(gi), true) = (gi, need) else { continue };
                debug_assert_eq!(
                    gi.shape(),
                    inp.shape(),
                    "backward of {} produced a misshapen gradient",
                    op.name()
                );
                let acc = match grads.remove(&inp.id()) {
                    Some(prev) => &prev + &gi,
                    None => gi,
                };
                grads.insert(inp.id(), acc);
            }
        }
    }

    wrt.iter()
        .map(|v| {
            results
                .get(&v.id())
                .cloned()
                .unwrap_or_else(|| Var::constant(Array::zeros(v.shape())))
        })
        .collect()
}
