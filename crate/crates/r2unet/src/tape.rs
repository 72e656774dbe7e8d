//! Reverse-mode autodiff tape.
//!
//! Ops execute eagerly (define-by-run): each call computes its output
//! immediately and appends a node recording the input ids, the output id
//! and a [`Backward`] rule that knows how to push gradients from the
//! output back to the inputs. Because nodes are appended in execution
//! order, the node list is already a topological order, and `backward`
//! is a single reverse sweep.
//!
//! A tape is single-threaded and grows for the lifetime of one forward
//! pass; training builds a fresh tape per batch. Values are never
//! mutated after insertion, so an id can be reused as the input of many
//! later nodes and gradients accumulate by summation.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Handle to a value on a [`Tape`]. Only meaningful for the tape that
/// issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vid(pub(crate) usize);

/// Gradient rule attached to one recorded op.
///
/// `backward` receives the op's input values, output value and the
/// gradient of the loss w.r.t. the output, and returns the gradient
/// contribution for each input, in input order, with matching shapes.
/// Rules capture whatever forward context they need (pooling argmaxes,
/// dropout masks, padding geometry) at record time.
pub trait Backward {
    fn backward(&self, inputs: &[&Tensor4], output: &Tensor4, out_grad: &Tensor4) -> Vec<Tensor4>;
}

struct Node {
    inputs: Vec<Vid>,
    out: Vid,
    rule: Box<dyn Backward>,
}

/// Append-only record of one forward computation.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor4>,
    grads: Vec<Option<Tensor4>>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Insert a leaf value (network input, parameter, constant).
    pub fn input(&mut self, value: Tensor4) -> Vid {
        let id = Vid(self.values.len());
        self.values.push(value);
        self.grads.push(None);
        id
    }

    /// Record an op: store its output and the rule that differentiates it.
    /// Called by the op implementations, not by user code.
    pub(crate) fn push_node(&mut self, inputs: Vec<Vid>, output: Tensor4, rule: Box<dyn Backward>) -> Vid {
        let out = Vid(self.values.len());
        self.values.push(output);
        self.grads.push(None);
        self.nodes.push(Node { inputs, out, rule });
        out
    }

    /// Value behind an id. Panics on a foreign id; ids are only ever
    /// produced by this tape's own methods.
    pub fn value(&self, id: Vid) -> &Tensor4 {
        &self.values[id.0]
    }

    /// Gradient of the last `backward` target w.r.t. `id`, if `id` was
    /// reachable from it.
    pub fn grad(&self, id: Vid) -> Option<&Tensor4> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Number of values currently on the tape.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reverse sweep: seed `d loss / d loss = 1` and push gradients to
    /// every value that `loss` depends on. Overwrites gradients from any
    /// earlier `backward` call on this tape.
    pub fn backward(&mut self, loss: Vid) -> Result<()> {
        if loss.0 >= self.values.len() {
            return Err(Error::UnknownId { id: loss.0, len: self.values.len() });
        }
        let shape = self.values[loss.0].shape();
        if shape != [1, 1, 1, 1] {
            return Err(Error::NotScalarLoss { shape });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor4::filled([1, 1, 1, 1], 1.0).expect("scalar shape is valid"));

        for k in (0..self.nodes.len()).rev() {
            let contributions = {
                let node = &self.nodes[k];
                let out_grad = match &self.grads[node.out.0] {
                    Some(g) => g,
                    None => continue, // not on any path to the loss
                };
                let inputs: Vec<&Tensor4> = node.inputs.iter().map(|v| &self.values[v.0]).collect();
                node.rule.backward(&inputs, &self.values[node.out.0], out_grad)
            };
            let input_ids = self.nodes[k].inputs.clone();
            debug_assert_eq!(contributions.len(), input_ids.len());
            for (vid, contrib) in input_ids.into_iter().zip(contributions) {
                debug_assert_eq!(contrib.shape(), self.values[vid.0].shape());
                match &mut self.grads[vid.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }
}
