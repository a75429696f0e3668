//! Reverse-mode autodiff over a flat operation tape.
//!
//! Forward calls append nodes; [`Tape::backward`] walks the tape in reverse
//! and accumulates exact gradients for every node. Shape mismatches are
//! programmer errors and panic with both shapes in the message.

use super::array::Array;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Multiply every element by a scalar variable (shape [1]).
    MulScalar(Var, Var),
    ScaleConst(Var, f64),
    /// [m,k] x [k,n] -> [m,n], or [m,k] x [k] -> [m].
    Matmul(Var, Var),
    Concat(Vec<Var>),
    /// Contiguous slice of a vector: (source, start, len).
    Slice(Var, usize, usize),
    /// Same data, new shape; row-major layout is preserved.
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    /// Elementwise mean over same-shaped inputs.
    MeanStack(Vec<Var>),
    /// Mean of all elements -> scalar.
    Mean(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    MaxPool2d {
        input: Var,
        kh: usize,
        kw: usize,
        argmax: Vec<usize>,
    },
    /// Sum of absolute differences against a constant target.
    L1Loss(Var, Array),
    /// -sum(t * ln(max(p, 1e-12))) against a constant target distribution.
    WeightedNll(Var, Array),
}

struct Node {
    value: Array,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Array>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> &Array {
        &self.grads[v.0]
    }
}

pub(crate) const NLL_CLAMP: f64 = 1e-12;

macro_rules! shape_check {
    ($cond:expr, $($arg:tt)*) => {
        assert!($cond, $($arg)*)
    };
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        shape_check!(
            x.shape() == y.shape(),
            "add: shape mismatch {:?} vs {:?}",
            x.shape(),
            y.shape()
        );
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        shape_check!(
            x.shape() == y.shape(),
            "sub: shape mismatch {:?} vs {:?}",
            x.shape(),
            y.shape()
        );
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        shape_check!(
            x.shape() == y.shape(),
            "mul: shape mismatch {:?} vs {:?}",
            x.shape(),
            y.shape()
        );
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::Mul(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        shape_check!(
            self.value(s).numel() == 1,
            "mul_scalar: scalar operand has shape {:?}",
            self.value(s).shape()
        );
        let sv = self.value(s).item();
        let x = self.value(a);
        let data = x.data().iter().map(|p| p * sv).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::MulScalar(a, s))
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|p| p * c).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::ScaleConst(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let value = match (x.shape(), y.shape()) {
            ([m, k], [k2, n]) if k == k2 => {
                let (m, k, n) = (*m, *k, *n);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let row = &x.data()[i * k..(i + 1) * k];
                    for (kk, &xv) in row.iter().enumerate() {
                        let yrow = &y.data()[kk * n..(kk + 1) * n];
                        let orow = &mut out[i * n..(i + 1) * n];
                        for (o, &yv) in orow.iter_mut().zip(yrow) {
                            *o += xv * yv;
                        }
                    }
                }
                Array::from_vec(&[m, n], out)
            }
            ([m, k], [k2]) if k == k2 => {
                let (m, k) = (*m, *k);
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let row = &x.data()[i * k..(i + 1) * k];
                    out[i] = row.iter().zip(y.data()).map(|(p, q)| p * q).sum();
                }
                Array::from_vec(&[m], out)
            }
            (s1, s2) => panic!("matmul: incompatible shapes {s1:?} vs {s2:?}"),
        };
        self.push(value, Op::Matmul(a, b))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        shape_check!(!parts.is_empty(), "concat: no inputs");
        let mut data = Vec::new();
        for &p in parts {
            shape_check!(
                self.value(p).shape().len() == 1,
                "concat: expected vectors, got shape {:?}",
                self.value(p).shape()
            );
            data.extend_from_slice(self.value(p).data());
        }
        let value = Array::vector(data);
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        shape_check!(
            x.shape().len() == 1 && start + len <= x.numel(),
            "slice: [{start}, {start}+{len}) out of bounds for shape {:?}",
            x.shape()
        );
        let value = Array::vector(x.data()[start..start + len].to_vec());
        self.push(value, Op::Slice(a, start, len))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let x = self.value(a);
        shape_check!(
            shape.iter().product::<usize>() == x.numel(),
            "reshape: {:?} incompatible with {:?}",
            x.shape(),
            shape
        );
        let value = Array::from_vec(shape, x.data().to_vec());
        self.push(value, Op::Reshape(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v.tanh()).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Array::from_vec(x.shape(), data);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        shape_check!(
            x.shape().len() == 1,
            "softmax: expected a vector, got shape {:?}",
            x.shape()
        );
        let max = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let value = Array::vector(exp.into_iter().map(|e| e / sum).collect());
        self.push(value, Op::Softmax(a))
    }

    /// Elementwise mean over a nonempty list of same-shaped variables.
    pub fn mean_stack(&mut self, parts: &[Var]) -> Var {
        shape_check!(!parts.is_empty(), "mean_stack: no inputs");
        let shape = self.value(parts[0]).shape().to_vec();
        let mut data = vec![0.0; self.value(parts[0]).numel()];
        for &p in parts {
            shape_check!(
                self.value(p).shape() == shape.as_slice(),
                "mean_stack: shape mismatch {:?} vs {:?}",
                self.value(p).shape(),
                shape
            );
            for (d, v) in data.iter_mut().zip(self.value(p).data()) {
                *d += v;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        let value = Array::from_vec(&shape, data);
        self.push(value, Op::MeanStack(parts.to_vec()))
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Array::scalar(x.data().iter().sum::<f64>() / x.numel() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Valid-padding 2D convolution: input [Cin,H,W], weight [Cout,Cin,KH,KW],
    /// bias [Cout] -> output [Cout,H-KH+1,W-KW+1].
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (xs, ws) = (x.shape().to_vec(), w.shape().to_vec());
        shape_check!(
            xs.len() == 3 && ws.len() == 4 && xs[0] == ws[1] && b.shape() == [ws[0]],
            "conv2d: incompatible shapes input {:?}, weight {:?}, bias {:?}",
            xs,
            ws,
            b.shape()
        );
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        shape_check!(
            h >= kh && wd >= kw,
            "conv2d: kernel ({kh},{kw}) larger than input ({h},{wd})"
        );
        let (oh, ow) = (h - kh + 1, wd - kw + 1);
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            let bias_v = b.data()[co];
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias_v;
                    for ci in 0..cin {
                        for dh in 0..kh {
                            let xrow = (ci * h + i + dh) * wd + j;
                            let wrow = ((co * cin + ci) * kh + dh) * kw;
                            for dw in 0..kw {
                                acc += x.data()[xrow + dw] * w.data()[wrow + dw];
                            }
                        }
                    }
                    out[(co * oh + i) * ow + j] = acc;
                }
            }
        }
        let value = Array::from_vec(&[cout, oh, ow], out);
        self.push(value, Op::Conv2d { input, weight, bias })
    }

    /// Non-overlapping max pooling with window (kh, kw); window = spatial
    /// extent gives global pooling to a [C,1,1] output.
    pub fn maxpool2d(&mut self, input: Var, kh: usize, kw: usize) -> Var {
        let x = self.value(input);
        let xs = x.shape().to_vec();
        shape_check!(
            xs.len() == 3 && kh >= 1 && kw >= 1 && xs[1] >= kh && xs[2] >= kw,
            "maxpool2d: window ({kh},{kw}) incompatible with shape {:?}",
            xs
        );
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / kh, w / kw);
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let idx = (ch * h + i * kh + dh) * w + j * kw + dw;
                            let v = x.data()[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    out[(ch * oh + i) * ow + j] = best;
                    argmax[(ch * oh + i) * ow + j] = best_idx;
                }
            }
        }
        let value = Array::from_vec(&[c, oh, ow], out);
        self.push(value, Op::MaxPool2d { input, kh, kw, argmax })
    }

    /// Sum of absolute differences against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: &Array) -> Var {
        let x = self.value(pred);
        shape_check!(
            x.shape() == target.shape(),
            "l1_loss: shape mismatch {:?} vs {:?}",
            x.shape(),
            target.shape()
        );
        let v = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t).abs())
            .sum();
        self.push(Array::scalar(v), Op::L1Loss(pred, target.clone()))
    }

    /// Cross-entropy with a constant (soft) target distribution; predicted
    /// probabilities are clamped at 1e-12 before the log.
    pub fn weighted_nll(&mut self, probs: Var, target: &Array) -> Var {
        let p = self.value(probs);
        shape_check!(
            p.shape() == target.shape(),
            "weighted_nll: shape mismatch {:?} vs {:?}",
            p.shape(),
            target.shape()
        );
        let v = -p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&pv, &tv)| tv * pv.max(NLL_CLAMP).ln())
            .sum::<f64>();
        self.push(Array::scalar(v), Op::WeightedNll(probs, target.clone()))
    }

    /// Accumulate gradients of `loss` (a scalar) with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        shape_check!(
            self.value(loss).numel() == 1,
            "backward: loss must be scalar, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Array> = self
            .nodes
            .iter()
            .map(|n| Array::zeros(n.value.shape()))
            .collect();
        grads[loss.0].data_mut()[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            // Split off the current gradient to appease the borrow checker.
            let g = std::mem::replace(&mut grads[idx], Array::zeros(&[0]));
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.data(), 1.0);
                    accumulate(&mut grads[b.0], g.data(), 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.data(), 1.0);
                    accumulate(&mut grads[b.0], g.data(), -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    for ((ga, &gv), &bvv) in grads[a.0].data_mut().iter_mut().zip(g.data()).zip(bv)
                    {
                        *ga += gv * bvv;
                    }
                    for ((gb, &gv), &avv) in grads[b.0].data_mut().iter_mut().zip(g.data()).zip(av)
                    {
                        *gb += gv * avv;
                    }
                }
                Op::MulScalar(a, s) => {
                    let sv = self.value(*s).item();
                    accumulate(&mut grads[a.0], g.data(), sv);
                    let ds: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&gv, &av)| gv * av)
                        .sum();
                    grads[s.0].data_mut()[0] += ds;
                }
                Op::ScaleConst(a, c) => {
                    accumulate(&mut grads[a.0], g.data(), *c);
                }
                Op::Matmul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    match (x.shape(), y.shape()) {
                        ([m, k], [_, n]) if y.shape().len() == 2 => {
                            let (m, k, n) = (*m, *k, *n);
                            // dA += dC * B^T
                            {
                                let ga = grads[a.0].data_mut();
                                for i in 0..m {
                                    for kk in 0..k {
                                        let mut acc = 0.0;
                                        for j in 0..n {
                                            acc += g.data()[i * n + j] * y.data()[kk * n + j];
                                        }
                                        ga[i * k + kk] += acc;
                                    }
                                }
                            }
                            // dB += A^T * dC
                            {
                                let gb = grads[b.0].data_mut();
                                for kk in 0..k {
                                    for j in 0..n {
                                        let mut acc = 0.0;
                                        for i in 0..m {
                                            acc += x.data()[i * k + kk] * g.data()[i * n + j];
                                        }
                                        gb[kk * n + j] += acc;
                                    }
                                }
                            }
                        }
                        ([m, k], [_]) => {
                            let (m, k) = (*m, *k);
                            {
                                let ga = grads[a.0].data_mut();
                                for i in 0..m {
                                    for kk in 0..k {
                                        ga[i * k + kk] += g.data()[i] * y.data()[kk];
                                    }
                                }
                            }
                            {
                                let gb = grads[b.0].data_mut();
                                for kk in 0..k {
                                    let mut acc = 0.0;
                                    for i in 0..m {
                                        acc += x.data()[i * k + kk] * g.data()[i];
                                    }
                                    gb[kk] += acc;
                                }
                            }
                        }
                        _ => unreachable!("validated in forward"),
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        let gp = grads[p.0].data_mut();
                        for (dst, src) in gp.iter_mut().zip(&g.data()[offset..offset + n]) {
                            *dst += src;
                        }
                        offset += n;
                    }
                }
                Op::Slice(a, start, len) => {
                    let ga = grads[a.0].data_mut();
                    for (dst, src) in ga[*start..*start + *len].iter_mut().zip(g.data()) {
                        *dst += src;
                    }
                }
                Op::Reshape(a) => {
                    accumulate(&mut grads[a.0], g.data(), 1.0);
                }
                Op::Relu(a) => {
                    let xv = self.value(*a).data();
                    let ga = grads[a.0].data_mut();
                    for ((dst, &gv), &x) in ga.iter_mut().zip(g.data()).zip(xv) {
                        if x > 0.0 {
                            *dst += gv;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let yv = node.value.data();
                    let ga = grads[a.0].data_mut();
                    for ((dst, &gv), &y) in ga.iter_mut().zip(g.data()).zip(yv) {
                        *dst += gv * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let yv = node.value.data();
                    let ga = grads[a.0].data_mut();
                    for ((dst, &gv), &y) in ga.iter_mut().zip(g.data()).zip(yv) {
                        *dst += gv * y * (1.0 - y);
                    }
                }
                Op::Softmax(a) => {
                    let yv = node.value.data();
                    let dot: f64 = g.data().iter().zip(yv).map(|(&gv, &y)| gv * y).sum();
                    let ga = grads[a.0].data_mut();
                    for ((dst, &gv), &y) in ga.iter_mut().zip(g.data()).zip(yv) {
                        *dst += y * (gv - dot);
                    }
                }
                Op::MeanStack(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    for &p in parts {
                        accumulate(&mut grads[p.0], g.data(), inv);
                    }
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel() as f64;
                    let gv = g.data()[0] / n;
                    for dst in grads[a.0].data_mut() {
                        *dst += gv;
                    }
                }
                Op::Conv2d { input, weight, bias } => {
                    let (x, w) = (self.value(*input), self.value(*weight));
                    let xs = x.shape();
                    let ws = w.shape();
                    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                    let (oh, ow) = (h - kh + 1, wd - kw + 1);
                    {
                        let gb = grads[bias.0].data_mut();
                        for co in 0..cout {
                            let plane = &g.data()[co * oh * ow..(co + 1) * oh * ow];
                            gb[co] += plane.iter().sum::<f64>();
                        }
                    }
                    {
                        let gw = grads[weight.0].data_mut();
                        for co in 0..cout {
                            for i in 0..oh {
                                for j in 0..ow {
                                    let gv = g.data()[(co * oh + i) * ow + j];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        for dh in 0..kh {
                                            let xrow = (ci * h + i + dh) * wd + j;
                                            let wrow = ((co * cin + ci) * kh + dh) * kw;
                                            for dw in 0..kw {
                                                gw[wrow + dw] += gv * x.data()[xrow + dw];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    {
                        let gx = grads[input.0].data_mut();
                        for co in 0..cout {
                            for i in 0..oh {
                                for j in 0..ow {
                                    let gv = g.data()[(co * oh + i) * ow + j];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        for dh in 0..kh {
                                            let xrow = (ci * h + i + dh) * wd + j;
                                            let wrow = ((co * cin + ci) * kh + dh) * kw;
                                            for dw in 0..kw {
                                                gx[xrow + dw] += gv * w.data()[wrow + dw];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::MaxPool2d { input, argmax, .. } => {
                    let gx = grads[input.0].data_mut();
                    for (&src_idx, &gv) in argmax.iter().zip(g.data()) {
                        gx[src_idx] += gv;
                    }
                }
                Op::L1Loss(pred, target) => {
                    let gv = g.data()[0];
                    let pv = self.value(*pred).data();
                    let gp = grads[pred.0].data_mut();
                    for ((dst, &p), &t) in gp.iter_mut().zip(pv).zip(target.data()) {
                        let d = p - t;
                        // Subgradient 0 at exact equality.
                        if d > 0.0 {
                            *dst += gv;
                        } else if d < 0.0 {
                            *dst -= gv;
                        }
                    }
                }
                Op::WeightedNll(probs, target) => {
                    let gv = g.data()[0];
                    let pv = self.value(*probs).data();
                    let gp = grads[probs.0].data_mut();
                    for ((dst, &p), &t) in gp.iter_mut().zip(pv).zip(target.data()) {
                        if p > NLL_CLAMP {
                            *dst += gv * (-t / p);
                        }
                    }
                }
            }
            grads[idx] = g;
        }
        Gradients { grads }
    }
}

fn accumulate(dst: &mut Array, src: &[f64], scale: f64) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s * scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::vector(vec![0.0, 0.0, 0.0]));
        let y = tape.softmax(x);
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s: f64 = tape.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_gradient_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::vector(vec![-1.0, 2.0]));
        let y = tape.relu(x);
        let s = tape.mean(y);
        let s2 = tape.scale_const(s, 2.0); // mean of 2 elements * 2 = sum
        let grads = tape.backward(s2);
        let g = grads.get(x);
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[1], 1.0);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_shape_mismatch_panics() {
        let mut tape = Tape::new();
        let a = tape.leaf(Array::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Array::vector(vec![1.0, 2.0, 3.0]));
        tape.add(a, b);
    }

    /// Central-difference gradient check for a scalar function of one leaf.
    fn grad_check<F>(shape: &[usize], seed: u64, f: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Array::uniform(shape, 1.0, &mut rng);

        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = f(&mut tape, x);
        assert_eq!(tape.value(y).numel(), 1, "grad_check needs a scalar output");
        let grads = tape.backward(y);
        let analytic = grads.get(x).clone();

        let eval = |arr: &Array| -> f64 {
            let mut t = Tape::new();
            let v = t.leaf(arr.clone());
            let out = f(&mut t, v);
            t.value(out).item()
        };
        let h = 1e-5;
        for i in 0..x0.numel() {
            let mut plus = x0.clone();
            plus.data_mut()[i] += h;
            let mut minus = x0.clone();
            minus.data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / denom < 1e-4,
                "index {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn grad_check_elementwise_ops() {
        for seed in 0..5 {
            grad_check(&[7], seed, |t, x| {
                let y = t.tanh(x);
                let z = t.sigmoid(y);
                let w = t.mul(z, y);
                t.mean(w)
            });
            grad_check(&[6], seed + 100, |t, x| {
                let y = t.softmax(x);
                let target = Array::vector(vec![0.2, 0.1, 0.3, 0.1, 0.2, 0.1]);
                t.weighted_nll(y, &target)
            });
            grad_check(&[9], seed + 200, |t, x| {
                let target = Array::vector(vec![0.3; 9]);
                t.l1_loss(x, &target)
            });
        }
    }

    #[test]
    fn grad_check_matmul() {
        for seed in 0..5 {
            grad_check(&[3, 4], seed, |t, x| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                let w = t.leaf(Array::uniform(&[4, 2], 1.0, &mut rng));
                let y = t.matmul(x, w);
                let z = t.tanh(y);
                t.mean(z)
            });
            grad_check(&[4], seed + 50, |t, x| {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let w = t.leaf(Array::uniform(&[3, 4], 1.0, &mut rng));
                let y = t.matmul(w, x);
                t.mean(y)
            });
        }
    }

    #[test]
    fn grad_check_structural_ops() {
        for seed in 0..5 {
            grad_check(&[8], seed, |t, x| {
                let a = t.slice(x, 0, 3);
                let b = t.slice(x, 3, 5);
                let sb = t.mean(b);
                let scaled = t.mul_scalar(a, sb);
                let c = t.concat(&[scaled, a]);
                t.mean(c)
            });
            grad_check(&[12], seed + 10, |t, x| {
                let a = t.slice(x, 0, 4);
                let b = t.slice(x, 4, 4);
                let c = t.slice(x, 8, 4);
                let m = t.mean_stack(&[a, b, c]);
                let s = t.tanh(m);
                t.mean(s)
            });
        }
    }

    #[test]
    fn grad_check_conv_and_pool() {
        for seed in 0..5 {
            // Gradient with respect to the conv input.
            grad_check(&[2, 6, 3], seed, |t, x| {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let w = t.leaf(Array::uniform(&[3, 2, 3, 1], 1.0, &mut rng));
                let b = t.leaf(Array::uniform(&[3], 1.0, &mut rng));
                let y = t.conv2d(x, w, b);
                let z = t.relu(y);
                t.mean(z)
            });
            // Gradient with respect to the conv weights.
            grad_check(&[3, 2, 3, 1], seed + 30, |t, w| {
                let mut rng = ChaCha8Rng::seed_from_u64(4);
                let x = t.leaf(Array::uniform(&[2, 6, 3], 1.0, &mut rng));
                let b = t.leaf(Array::uniform(&[3], 1.0, &mut rng));
                let y = t.conv2d(x, w, b);
                t.mean(y)
            });
            grad_check(&[2, 6, 4], seed + 60, |t, x| {
                let y = t.maxpool2d(x, 6, 4);
                t.mean(y)
            });
        }
    }

    /// The spec's randomized primitive sweep: 100 random shape/seed cases.
    #[test]
    fn grad_check_random_sweep() {
        let mut meta = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..100 {
            let n = meta.random_range(2..10usize);
            let pick = case % 5;
            grad_check(&[n], meta.random(), move |t, x| match pick {
                0 => {
                    let y = t.tanh(x);
                    t.mean(y)
                }
                1 => {
                    let y = t.softmax(x);
                    let target = Array::vector(vec![1.0 / n as f64; n]);
                    t.weighted_nll(y, &target)
                }
                2 => {
                    let y = t.sigmoid(x);
                    let z = t.mul(y, x);
                    t.mean(z)
                }
                3 => {
                    let y = t.relu(x);
                    let target = Array::vector(vec![0.25; n]);
                    t.l1_loss(y, &target)
                }
                _ => {
                    let y = t.scale_const(x, 1.7);
                    let z = t.sub(y, x);
                    let w = t.add(z, y);
                    t.mean(w)
                }
            });
        }
    }

    #[test]
    fn gru_style_composite_grad_check() {
        // A single gated recurrent step built from primitives.
        grad_check(&[4], 5, |t, h| {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let x = t.leaf(Array::uniform(&[2], 1.0, &mut rng));
            let wz = t.leaf(Array::uniform(&[4, 2], 1.0, &mut rng));
            let uz = t.leaf(Array::uniform(&[4, 4], 1.0, &mut rng));
            let wh = t.leaf(Array::uniform(&[4, 2], 1.0, &mut rng));
            let uh = t.leaf(Array::uniform(&[4, 4], 1.0, &mut rng));
            let zx = t.matmul(wz, x);
            let zh = t.matmul(uz, h);
            let zs = t.add(zx, zh);
            let z = t.sigmoid(zs);
            let cx = t.matmul(wh, x);
            let ch = t.matmul(uh, h);
            let cs = t.add(cx, ch);
            let cand = t.tanh(cs);
            let zc = t.mul(z, cand);
            let ones = t.leaf(Array::vector(vec![1.0; 4]));
            let omz = t.sub(ones, z);
            let keep = t.mul(omz, h);
            let hn = t.add(zc, keep);
            t.mean(hn)
        });
    }
}
