use std::collections::HashMap;
use std::sync::Arc;

use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value computed on a [`Graph`]. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct Var<T> {
    id: Option<usize>,
    value: Arc<Tensor<T>>,
}

impl<T: Real> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn data(&self) -> &[T] {
        self.value.data()
    }

    /// Whether gradients can flow back through this value.
    pub fn tracked(&self) -> bool {
        self.id.is_some()
    }
}

pub(crate) struct BackwardArgs<'a, T> {
    pub inputs: &'a [Arc<Tensor<T>>],
    pub output: &'a Tensor<T>,
    pub grad: &'a [T],
}

/// Adds the gradient of each input into its slot; slots of inputs that need
/// no gradient are `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>, &mut [Option<Vec<T>>]) + Send + Sync>;

struct Node<T> {
    inputs: Vec<Option<usize>>,
    values: Vec<Arc<Tensor<T>>>,
    output: Arc<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// Tape of recorded operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    /// A recording graph, for training and gradient checks.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true, backward_done: false }
    }

    /// A graph that records nothing, for inference.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forgets every node so the graph can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var<T> {
        Var { id: None, value: Arc::new(t) }
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor<T>) -> Var<T> {
        self.leaf(Arc::new(t), None)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var<T> {
        let p = store.get(id);
        if p.trainable {
            self.leaf(p.value.clone(), Some(id))
        } else {
            Var { id: None, value: p.value.clone() }
        }
    }

    fn leaf(&mut self, value: Arc<Tensor<T>>, param: Option<ParamId>) -> Var<T> {
        if !self.recording {
            return Var { id: None, value };
        }
        let id = self.nodes.len();
        self.nodes.push(Node { inputs: Vec::new(), values: Vec::new(), output: value.clone(), backward: None, param });
        Var { id: Some(id), value }
    }

    pub(crate) fn needs_grad(&self, inputs: &[&Var<T>]) -> bool {
        self.recording && inputs.iter().any(|v| v.id.is_some())
    }

    /// Registers the result of an op. The backward closure is only kept when
    /// some input is tracked.
    pub(crate) fn push(&mut self, inputs: &[&Var<T>], output: Tensor<T>, backward: BackwardFn<T>) -> Var<T> {
        let output = Arc::new(output);
        if !self.needs_grad(inputs) {
            return Var { id: None, value: output };
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            inputs: inputs.iter().map(|v| v.id).collect(),
            values: inputs.iter().map(|v| v.value.clone()).collect(),
            output: output.clone(),
            backward: Some(backward),
            param: None,
        });
        Var { id: Some(id), value: output }
    }

    /// Reverse pass from a scalar `loss`. Each node is visited once, in
    /// reverse creation order, which is a reverse topological order.
    pub fn backward(&mut self, loss: &Var<T>) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::Usage("backward already ran on this graph; reset it first".into()));
        }
        if loss.value.numel() != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got dims {:?}", loss.dims())));
        }
        self.backward_done = true;
        let mut out = Gradients { leaves: HashMap::new(), params: HashMap::new() };
        let Some(root) = loss.id else {
            return Ok(out);
        };
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let Some(bw) = &node.backward else {
                match node.param {
                    Some(pid) => accumulate(out.params.entry(pid).or_default(), g),
                    None => {
                        out.leaves.insert(i, g);
                    }
                }
                continue;
            };
            let mut slots: Vec<Option<Vec<T>>> =
                node.inputs.iter().zip(&node.values).map(|(id, v)| id.map(|_| vec![T::zero(); v.numel()])).collect();
            bw(&BackwardArgs { inputs: &node.values, output: &node.output, grad: &g }, &mut slots);
            for (id, slot) in node.inputs.iter().zip(slots) {
                if let (Some(id), Some(gk)) = (id, slot) {
                    match &mut grads[*id] {
                        Some(acc) => accumulate(acc, gk),
                        empty => *empty = Some(gk),
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(acc: &mut Vec<T>, g: Vec<T>) {
    if acc.is_empty() {
        *acc = g;
    } else {
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Vec<T>>,
    params: HashMap<ParamId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of an [`Graph::input`] leaf; `None` if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: &Var<T>) -> Option<&[T]> {
        v.id.and_then(|id| self.leaves.get(&id)).map(Vec::as_slice)
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(&id).map(Vec::as_slice)
    }

    /// Gradients for every parameter in `store`, zero where the loss does not
    /// depend on it.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Vec<T>> {
        store
            .iter()
            .map(|(id, p)| match self.params.get(&id) {
                Some(g) => g.clone(),
                None => vec![T::zero(); p.value.numel()],
            })
            .collect()
    }
}
