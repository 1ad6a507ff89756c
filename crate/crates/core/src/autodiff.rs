//! Reverse-mode differentiation over a tensor-granular tape.
//!
//! Every recorded operation appends a node holding its output value and
//! enough saved state to run its adjoint. [`Tape::backward`] walks the
//! nodes in reverse order, accumulating adjoints only along paths that
//! reach a leaf marked `requires_grad`.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Scale(Var, T),
    ChannelAffine {
        x: Var,
        channels: usize,
        plane: usize,
        inv_std: Vec<T>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    SmoothedCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<T>,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `v` does not lie on a path to a gradient-requiring leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("Tape::mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Per-channel `(x - mean) / std` on a `(batch, channels, h, w)` input.
    pub fn channel_affine(&mut self, x: Var, mean: &[T], std: &[T]) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 4 || s[1] != mean.len() || mean.len() != std.len() {
            return Err(Error::shape("channel_affine", &[0, mean.len(), 0, 0], s));
        }
        let (channels, plane) = (s[1], s[2] * s[3]);
        let out = Tensor::new(s, kernels::channel_affine(xv.data(), channels, plane, mean, std))?;
        let inv_std = std.iter().map(|&v| T::one() / v).collect();
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::ChannelAffine {
                x,
                channels,
                plane,
                inv_std,
            },
            rg,
        ))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ws = wv.shape();
        if ws.len() != 2 || xv.shape().len() != 2 || xv.shape()[1] != ws[1] || bv.len() != ws[0] {
            return Err(Error::shape("dense", &[xv.dim0(), ws.get(1).copied().unwrap_or(0)], xv.shape()));
        }
        let (batch, n_in, n_out) = (xv.shape()[0], ws[1], ws[0]);
        let y = kernels::dense_forward(batch, n_in, n_out, xv.data(), wv.data(), bv.data());
        let out = Tensor::new(&[batch, n_out], y)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Dense { x, w, b }, rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || bv.len() != ws[0] {
            return Err(Error::shape("conv2d", &[0, ws.get(1).copied().unwrap_or(0), 0, 0], xs));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_ch: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_ch: ws[0],
            kh: ws[2],
            kw: ws[3],
            pad,
        };
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(Error::shape("conv2d kernel larger than padded input", &ws[2..], &xs[2..]));
        }
        let y = kernels::conv2d_forward(&geom, xv.data(), wv.data(), bv.data());
        let out = Tensor::new(&[geom.batch, geom.out_ch, geom.out_h(), geom.out_w()], y)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), kernels::relu_forward(xv.data())).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn maxpool(&mut self, x: Var, size: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 4 || s[2] < size || s[3] < size || size == 0 {
            return Err(Error::shape("maxpool", &[0, 0, size, size], s));
        }
        let (y, argmax) = kernels::maxpool_forward(s[0] * s[1], s[2], s[3], size, xv.data());
        let out = Tensor::new(&[s[0], s[1], s[2] / size, s[3] / size], y)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Weighted mean of label-smoothed cross-entropy:
    /// `Σ_i w_i · (−Σ_c t_ic log softmax(z_i)_c) / Σ_i w_i`.
    ///
    /// `targets` is `(batch, classes)`; `weights` of zero remove a sample from
    /// both value and gradient.
    pub fn smoothed_cross_entropy(&mut self, logits: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let zv = self.value(logits);
        let s = zv.shape();
        if s.len() != 2 || targets.len() != zv.len() || weights.len() != s[0] {
            return Err(Error::shape("smoothed_cross_entropy", &[weights.len(), targets.len() / weights.len().max(1)], s));
        }
        let denom: T = weights.iter().copied().sum();
        if denom <= T::zero() {
            return Err(Error::invalid("loss weights sum to zero"));
        }
        let classes = s[1];
        let probs = crate::loss::softmax_rows(zv.data(), classes);
        let mut total = T::zero();
        for (i, (z, t)) in zv.data().chunks(classes).zip(targets.chunks(classes)).enumerate() {
            if weights[i] == T::zero() {
                continue;
            }
            total = total + weights[i] * crate::loss::cross_entropy_row(z, t);
        }
        let out = Tensor::scalar(total / denom);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::SmoothedCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                weights: weights.iter().map(|&w| w / denom).collect(),
            },
            rg,
        ))
    }

    /// Propagates adjoints from the scalar `root` back to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let Some(node) = self.nodes.get(root.0) else {
            return Err(Error::NoGraph(format!(
                "root node {} not on tape of {} nodes",
                root.0,
                self.nodes.len()
            )));
        };
        if node.value.len() != 1 {
            return Err(Error::shape("backward root", &[1], node.value.shape()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape(), g).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, g: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, &x)| *e = *e + x),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, gy.to_vec());
                acc(*b, gy.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gy.iter().zip(vb).map(|(&g, &y)| g * y).collect());
                acc(*b, gy.iter().zip(va).map(|(&g, &x)| g * x).collect());
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, vec![gy[0]; n]);
            }
            Op::Scale(a, c) => acc(*a, gy.iter().map(|&g| g * *c).collect()),
            Op::ChannelAffine {
                x,
                channels,
                plane,
                inv_std,
            } => {
                let mut g = Vec::with_capacity(gy.len());
                for (k, chunk) in gy.chunks(*plane).enumerate() {
                    let s = inv_std[k % channels];
                    g.extend(chunk.iter().map(|&v| v * s));
                }
                acc(*x, g);
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, n_in, n_out) = (xv.shape()[0], wv.shape()[1], wv.shape()[0]);
                let (gx, gw, gb) =
                    kernels::dense_backward(batch, n_in, n_out, xv.data(), wv.data(), gy, self.rg(*x));
                if let Some(gx) = gx {
                    acc(*x, gx);
                }
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy,
                    self.rg(*x),
                );
                if let Some(gx) = gx {
                    acc(*x, gx);
                }
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::Relu(x) => acc(*x, kernels::relu_backward(self.value(*x).data(), gy)),
            Op::MaxPool { x, argmax } => {
                acc(*x, kernels::maxpool_backward(self.value(*x).len(), argmax, gy));
            }
            Op::Reshape(x) => acc(*x, gy.to_vec()),
            Op::SmoothedCrossEntropy {
                logits,
                probs,
                targets,
                weights,
            } => {
                let classes = self.value(*logits).shape()[1];
                let mut g = vec![T::zero(); probs.len()];
                for (i, w) in weights.iter().enumerate() {
                    if *w == T::zero() {
                        continue;
                    }
                    let t = &targets[i * classes..][..classes];
                    let p = &probs[i * classes..][..classes];
                    let tsum: T = t.iter().copied().sum();
                    for c in 0..classes {
                        g[i * classes + c] = gy[0] * *w * (tsum * p[c] - t[c]);
                    }
                }
                acc(*logits, g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(w, w).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_on_empty_tape_is_rejected() {
        let tape = Tape::<f32>::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::NoGraph(_))));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
        let c = tape.leaf(Tensor::from_vec(vec![3.0, 4.0]), false);
        let p = tape.mul(a, c).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn dead_relu_path_gives_exact_zero() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::new(&[1, 2], vec![1.0, -1.0]).unwrap(), true);
        let w = tape.leaf(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap(), true);
        let b = tape.leaf(Tensor::from_vec(vec![-1.0]), true);
        let h = tape.dense(x, w, b).unwrap();
        let r = tape.relu(h);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap(); // 2x^2
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[8.0]);
    }
}
