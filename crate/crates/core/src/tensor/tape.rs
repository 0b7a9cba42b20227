use super::ops::{self, Activation, HadamardMode};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Hadamard {
        a: Var,
        b: Var,
        mode: HadamardMode,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    AddConst {
        input: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Ln {
        input: Var,
    },
    Sqrt {
        input: Var,
    },
    Sum {
        input: Var,
    },
    Expand {
        input: Var,
    },
    Reshape {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed differentiable operations.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it; walking the tape backwards therefore visits a node only after all
/// of its consumers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it
    /// or `var` does not require gradients.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a copy of `t`; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.detached(), t.requires_grad())
    }

    /// Records a leaf that always receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push_leaf(t.detached(), true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t.detached(), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(kernel), self.value(bias), stride, padding)?;
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            stride,
            padding,
        };
        Ok(self.push(out, op, &[input, kernel, bias]))
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = ops::max_pool2d_with_argmax(self.value(input), window, stride)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_bilinear(self.value(input), factor)?;
        Ok(self.push(out, Op::Upsample { input, factor }, &[input]))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let out = ops::apply_activation(self.value(input), kind);
        self.push(out, Op::Activation { input, kind }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu)
    }

    /// Elementwise product; see [`ops::hadamard`] for the one permitted
    /// broadcast.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let mode = ops::hadamard_mode(self.value(a), self.value(b))?;
        let out = ops::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Hadamard { a, b, mode }, &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dimension(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data).expect("operands share a shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let out = self.zip_with(a, b, |x, y| x / y);
        Ok(self.push(out, Op::Div { a, b }, &[a, b]))
    }

    pub fn add_const(&mut self, input: Var, c: f64) -> Var {
        let out = self.value(input).map(|v| v + c);
        self.push(out, Op::AddConst { input }, &[input])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(out, Op::Scale { input, factor }, &[input])
    }

    /// Natural logarithm.
    pub fn ln(&mut self, input: Var) -> Var {
        let out = self.value(input).map(f64::ln);
        self.push(out, Op::Ln { input }, &[input])
    }

    pub fn sqrt(&mut self, input: Var) -> Var {
        let out = self.value(input).map(f64::sqrt);
        self.push(out, Op::Sqrt { input }, &[input])
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input }, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len() as f64;
        let s = self.sum(input);
        self.scale(s, 1.0 / n)
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(input);
        if src.len() != 1 {
            return Err(Error::Dimension(format!(
                "expand needs a single-element tensor, got {:?}",
                src.shape()
            )));
        }
        let out = Tensor::new(shape, vec![src.item(); shape.iter().product()])?;
        Ok(self.push(out, Op::Expand { input }, &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).detached().reshape(shape)?;
        Ok(self.push(out, Op::Reshape { input }, &[input]))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let send = |grads: &mut [Option<Vec<f64>>], to: Var, delta: Vec<f64>| {
            if !self.nodes[to.0].requires_grad {
                return;
            }
            match &mut grads[to.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (gx, gk, gb) =
                    ops::conv2d_backward(self.value(input), self.value(kernel), g, stride, padding, wants(input))?;
                if let Some(gx) = gx {
                    send(grads, input, gx);
                }
                send(grads, kernel, gk);
                send(grads, bias, gb);
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = vec![0.0; self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
                send(grads, *input, gx);
            }
            &Op::Upsample { input, factor } => {
                send(
                    grads,
                    input,
                    ops::upsample_bilinear_backward(self.value(input), factor, g),
                );
            }
            &Op::Activation { input, kind } => {
                send(grads, input, ops::activation_backward(&node.value, kind, g));
            }
            &Op::Hadamard { a, b, mode } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                match mode {
                    HadamardMode::Same => {
                        if wants(a) {
                            send(grads, a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                        }
                        if wants(b) {
                            send(grads, b, g.iter().zip(va).map(|(x, y)| x * y).collect());
                        }
                    }
                    HadamardMode::ChannelMap { channels } => {
                        if wants(a) {
                            let ga = g.iter().enumerate().map(|(i, gv)| gv * vb[i / channels]).collect();
                            send(grads, a, ga);
                        }
                        if wants(b) {
                            let mut gb = vec![0.0; vb.len()];
                            for (i, (gv, av)) in g.iter().zip(va).enumerate() {
                                gb[i / channels] += gv * av;
                            }
                            send(grads, b, gb);
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                send(grads, a, g.to_vec());
                send(grads, b, g.to_vec());
            }
            &Op::Sub { a, b } => {
                send(grads, a, g.to_vec());
                send(grads, b, g.iter().map(|v| -v).collect());
            }
            &Op::Div { a, b } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                if wants(a) {
                    send(grads, a, g.iter().zip(vb).map(|(gv, y)| gv / y).collect());
                }
                if wants(b) {
                    let gb = g
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(gv, (x, y))| -gv * x / (y * y))
                        .collect();
                    send(grads, b, gb);
                }
            }
            &Op::AddConst { input } | &Op::Reshape { input } => send(grads, input, g.to_vec()),
            &Op::Scale { input, factor } => {
                send(grads, input, g.iter().map(|v| v * factor).collect());
            }
            &Op::Ln { input } => {
                let x = self.value(input).data();
                send(grads, input, g.iter().zip(x).map(|(gv, xv)| gv / xv).collect());
            }
            &Op::Sqrt { input } => {
                let y = node.value.data();
                send(grads, input, g.iter().zip(y).map(|(gv, yv)| gv / (2.0 * yv)).collect());
            }
            &Op::Sum { input } => {
                send(grads, input, vec![g[0]; self.value(input).len()]);
            }
            &Op::Expand { input } => send(grads, input, vec![g.iter().sum()]),
        }
        Ok(())
    }
}
