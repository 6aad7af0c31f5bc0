//! Operation tape for reverse-mode differentiation.
//!
//! Ops executed against a recording tape push one node each; `backward`
//! replays the nodes in reverse order, each node pulling the gradient of its
//! output and accumulating into the gradients of its inputs. A tape is
//! confined to one logical execution context and is not `Sync`.

use std::cell::RefCell;

use super::Tensor;
use crate::error::{Error, Result};

pub(crate) struct Node {
    pub name: &'static str,
    /// The tensor this node produced; its gradient is cleared once consumed
    /// so that repeated `backward` calls accumulate linearly into leaves.
    pub output: Tensor,
    /// Reads the output gradient and accumulates into the input gradients.
    pub backward: Box<dyn Fn()>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Tape {
    /// A tape that records every differentiable op run against it.
    pub fn new() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// An inert tape for inference: nothing is recorded and op outputs carry
    /// no gradient buffers.
    pub fn disabled() -> Tape {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, node: Node) {
        debug_assert!(self.recording);
        self.nodes.borrow_mut().push(node);
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Run reverse-mode accumulation from a scalar loss over every node the tape
/// recorded, in reverse recording order. Returns the number of nodes visited.
///
/// Gradients accumulate: calling `backward` twice without zeroing doubles
/// every leaf gradient.
pub fn backward(loss: &Tensor, tape: &Tape) -> Result<usize> {
    if loss.numel() != 1 {
        return Err(Error::Shape(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Shape(
            "backward on a loss produced outside a recording tape".into(),
        ));
    }
    loss.accumulate_grad(&[1.0]);
    let nodes = tape.nodes.borrow();
    for node in nodes.iter().rev() {
        log::trace!("backward through {}", node.name);
        (node.backward)();
        // By reverse order every consumer has already read this gradient;
        // clearing it keeps op outputs from leaking state into later calls.
        node.output.zero_grad();
    }
    Ok(nodes.len())
}
