//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Operations execute eagerly and append one node each, so the node
//! list is topologically ordered by construction. `backward` walks it
//! once in reverse, accumulating gradients into a buffer per node.
//! A graph is confined to one thread; independent graphs may run
//! concurrently.

use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;
use crate::rng::StreamRng;
use crate::tensor::Tensor;
use crate::warp::BoundaryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum OpKind<T> {
    Leaf { param: bool },
    Conv2d { has_bias: bool },
    MaxPool2x2 { argmax: Vec<u32> },
    AvgPool2x2,
    FullyConnected,
    Relu,
    LeakyRelu { slope: T },
    /// Mask holds the survivor scale 1/(1-p) or 0; empty in eval mode.
    Dropout { mask: Vec<T> },
    Reshape,
    SoftmaxXent { labels: Vec<usize>, probs: Vec<T> },
    ParamsToMatrix,
    AffineGrid,
    BilinearSample { policy: BoundaryPolicy },
    ComposeParams,
}

struct Node<T> {
    op: OpKind<T>,
    inputs: Vec<NodeId>,
    out: Tensor<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, op: OpKind<T>, inputs: Vec<NodeId>, out: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, inputs, out });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("node {} out of range", id.0)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a non-parameter leaf.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(OpKind::Leaf { param: false }, vec![], t)
    }

    /// Inserts a parameter leaf (picked up by gradient readout).
    pub fn param(&mut self, t: Tensor<T>) -> NodeId {
        self.push(OpKind::Leaf { param: true }, vec![], t)
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, OpKind::Leaf { param: true })
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].out
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        self.check(x)?;
        self.check(kernel)?;
        let (n, c, h, w) = self.nodes[x.0].out.dims4()?;
        let (o, kc, kh, kw) = self.nodes[kernel.0].out.dims4()?;
        if kc != c {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {c}, kernel expects {kc}"
            )));
        }
        if h < kh || w < kw {
            return Err(Error::shape(format!(
                "conv2d input {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        if let Some(b) = bias {
            self.check(b)?;
            let blen = self.nodes[b.0].out.numel();
            if blen != o {
                return Err(Error::shape(format!("conv2d bias len {blen}, want {o}")));
            }
        }
        let oh = kernels::conv_out_dim(h, kh);
        let ow = kernels::conv_out_dim(w, kw);
        let mut out = Tensor::zeros(vec![n, o, oh, ow]);
        let zero_bias;
        let bias_vals: &[T] = match bias {
            Some(b) => self.nodes[b.0].out.values(),
            None => {
                zero_bias = vec![T::ZERO; o];
                &zero_bias
            }
        };
        kernels::conv2d_forward(
            self.nodes[x.0].out.values(),
            n,
            c,
            h,
            w,
            self.nodes[kernel.0].out.values(),
            o,
            kh,
            kw,
            bias_vals,
            out.values_mut(),
        );
        let mut inputs = vec![x, kernel];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(self.push(OpKind::Conv2d { has_bias: bias.is_some() }, inputs, out))
    }

    pub fn maxpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let (n, c, h, w) = self.nodes[x.0].out.dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("maxpool2x2 input {h}x{w} too small")));
        }
        let mut out = Tensor::zeros(vec![n, c, oh, ow]);
        let mut argmax = vec![0u32; n * c * oh * ow];
        kernels::maxpool2x2_forward(self.nodes[x.0].out.values(), n, c, h, w, out.values_mut(), &mut argmax);
        Ok(self.push(OpKind::MaxPool2x2 { argmax }, vec![x], out))
    }

    pub fn avgpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let (n, c, h, w) = self.nodes[x.0].out.dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("avgpool2x2 input {h}x{w} too small")));
        }
        let mut out = Tensor::zeros(vec![n, c, oh, ow]);
        kernels::avgpool2x2_forward(self.nodes[x.0].out.values(), n, c, h, w, out.values_mut());
        Ok(self.push(OpKind::AvgPool2x2, vec![x], out))
    }

    pub fn fully_connected(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(weight)?;
        self.check(bias)?;
        let (n, d) = self.nodes[x.0].out.dims2()?;
        let (wd, m) = self.nodes[weight.0].out.dims2()?;
        if wd != d {
            return Err(Error::shape(format!(
                "fully_connected dim mismatch: input width {d}, weight expects {wd}"
            )));
        }
        if self.nodes[bias.0].out.numel() != m {
            return Err(Error::shape(format!(
                "fully_connected bias len {}, want {m}",
                self.nodes[bias.0].out.numel()
            )));
        }
        let mut out = Tensor::zeros(vec![n, m]);
        kernels::fully_connected_forward(
            self.nodes[x.0].out.values(),
            n,
            d,
            self.nodes[weight.0].out.values(),
            m,
            self.nodes[bias.0].out.values(),
            out.values_mut(),
        );
        Ok(self.push(OpKind::FullyConnected, vec![x, weight, bias], out))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let out = self.nodes[x.0].out.map(|v| v.maximum(T::ZERO));
        Ok(self.push(OpKind::Relu, vec![x], out))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.check(x)?;
        if slope < 0.0 {
            return Err(Error::Graph(format!("leaky_relu slope {slope} must be >= 0")));
        }
        let s = T::from_f64(slope);
        let out = self.nodes[x.0].out.map(|v| if v > T::ZERO { v } else { s * v });
        Ok(self.push(OpKind::LeakyRelu { slope: s }, vec![x], out))
    }

    /// Train mode zeroes each element with probability p and scales
    /// survivors by 1/(1-p); eval mode is the identity.
    pub fn dropout(&mut self, x: NodeId, p: f64, train: bool, rng: &mut StreamRng) -> Result<NodeId> {
        self.check(x)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Graph(format!("dropout p {p} must be in [0, 1)")));
        }
        if !train || p == 0.0 {
            let out = self.nodes[x.0].out.clone();
            return Ok(self.push(OpKind::Dropout { mask: Vec::new() }, vec![x], out));
        }
        let scale = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.nodes[x.0].out.numel())
            .map(|_| if rng.chance(p) { T::ZERO } else { scale })
            .collect();
        let shape = self.nodes[x.0].out.shape().to_vec();
        let values = self.nodes[x.0]
            .out
            .values()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor::new(shape, values)?;
        Ok(self.push(OpKind::Dropout { mask }, vec![x], out))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.check(x)?;
        let out = self.nodes[x.0].out.clone().reshaped(shape)?;
        Ok(self.push(OpKind::Reshape, vec![x], out))
    }

    /// Flattens N x ... to N x rest.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let shape = self.nodes[x.0].out.shape();
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    /// Mean cross-entropy loss over the batch; output is a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let (n, k) = self.nodes[logits.0].out.dims2()?;
        if labels.len() != n {
            return Err(Error::shape(format!("{} labels for batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Graph(format!("label {bad} out of range [0, {k})")));
        }
        let mut probs = vec![T::ZERO; n * k];
        let loss = kernels::softmax_xent_forward(self.nodes[logits.0].out.values(), n, k, labels, &mut probs);
        let out = Tensor::scalar(loss);
        Ok(self.push(
            OpKind::SoftmaxXent { labels: labels.to_vec(), probs },
            vec![logits],
            out,
        ))
    }

    /// N x 6 localization outputs -> N x 6 matrix rows; offset mode adds
    /// the identity so an all-zero prediction is the identity transform.
    pub fn params_to_matrix(&mut self, x: NodeId, offset: bool) -> Result<NodeId> {
        self.check(x)?;
        let (n, d) = self.nodes[x.0].out.dims2()?;
        if d != 6 {
            return Err(Error::shape(format!("params_to_matrix wants N x 6, got N x {d}")));
        }
        let mut out = self.nodes[x.0].out.clone();
        if offset {
            let vals = out.values_mut();
            for ni in 0..n {
                vals[ni * 6] += T::ONE;
                vals[ni * 6 + 4] += T::ONE;
            }
        }
        Ok(self.push(OpKind::ParamsToMatrix, vec![x], out))
    }

    /// N x 6 matrix rows -> N x oh x ow x 2 normalized sampling grid.
    pub fn affine_grid(&mut self, params: NodeId, oh: usize, ow: usize) -> Result<NodeId> {
        self.check(params)?;
        let (n, d) = self.nodes[params.0].out.dims2()?;
        if d != 6 {
            return Err(Error::shape(format!("affine_grid wants N x 6, got N x {d}")));
        }
        if oh == 0 || ow == 0 {
            return Err(Error::shape("affine_grid output dims must be >= 1"));
        }
        let mut out = Tensor::zeros(vec![n, oh, ow, 2]);
        kernels::affine_grid_forward(self.nodes[params.0].out.values(), n, oh, ow, out.values_mut());
        Ok(self.push(OpKind::AffineGrid, vec![params], out))
    }

    pub fn bilinear_sample(&mut self, image: NodeId, grid: NodeId, policy: BoundaryPolicy) -> Result<NodeId> {
        self.check(image)?;
        self.check(grid)?;
        let (n, c, h, w) = self.nodes[image.0].out.dims4()?;
        let (gn, oh, ow) = match self.nodes[grid.0].out.shape() {
            [gn, oh, ow, 2] => (*gn, *oh, *ow),
            s => return Err(Error::shape(format!("expected N x oh x ow x 2 grid, got {s:?}"))),
        };
        if gn != n {
            return Err(Error::shape(format!("batch mismatch: image {n}, grid {gn}")));
        }
        let mut out = Tensor::zeros(vec![n, c, oh, ow]);
        kernels::bilinear_sample_forward(
            self.nodes[image.0].out.values(),
            n,
            c,
            h,
            w,
            self.nodes[grid.0].out.values(),
            oh,
            ow,
            policy,
            out.values_mut(),
        );
        Ok(self.push(OpKind::BilinearSample { policy }, vec![image, grid], out))
    }

    /// Homogeneous per-sample product of two N x 6 matrix-row tensors.
    pub fn compose_params(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (n, da) = self.nodes[a.0].out.dims2()?;
        let (nb, db) = self.nodes[b.0].out.dims2()?;
        if da != 6 || db != 6 || n != nb {
            return Err(Error::shape(format!(
                "compose_params wants two N x 6 tensors, got {n}x{da} and {nb}x{db}"
            )));
        }
        let mut out = Tensor::zeros(vec![n, 6]);
        kernels::compose_params_forward(
            self.nodes[a.0].out.values(),
            self.nodes[b.0].out.values(),
            n,
            out.values_mut(),
        );
        Ok(self.push(OpKind::ComposeParams, vec![a, b], out))
    }

    fn take_grad(&mut self, id: NodeId) -> Vec<T> {
        let numel = self.nodes[id.0].out.numel();
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| vec![T::ZERO; numel])
    }

    /// Clears all gradients, seeds d(loss)/d(loss) = 1, and propagates
    /// backward through every node that influences the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check(loss)?;
        if self.nodes[loss.0].out.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].out.shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![T::ONE]);

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = self.grads[i].take() else {
                continue;
            };
            let inputs = self.nodes[i].inputs.clone();
            match &self.nodes[i].op {
                OpKind::Leaf { .. } => {}
                OpKind::Conv2d { has_bias } => {
                    let has_bias = *has_bias;
                    let (n, c, h, w) = self.nodes[inputs[0].0].out.dims4()?;
                    let (o, _, kh, kw) = self.nodes[inputs[1].0].out.dims4()?;
                    let mut gx = self.take_grad(inputs[0]);
                    let mut gk = self.take_grad(inputs[1]);
                    let mut gb = if has_bias {
                        self.take_grad(inputs[2])
                    } else {
                        vec![T::ZERO; o]
                    };
                    kernels::conv2d_backward(
                        self.nodes[inputs[0].0].out.values(),
                        n,
                        c,
                        h,
                        w,
                        self.nodes[inputs[1].0].out.values(),
                        o,
                        kh,
                        kw,
                        &grad_out,
                        Some(&mut gx),
                        &mut gk,
                        &mut gb,
                    );
                    self.grads[inputs[0].0] = Some(gx);
                    self.grads[inputs[1].0] = Some(gk);
                    if has_bias {
                        self.grads[inputs[2].0] = Some(gb);
                    }
                }
                OpKind::MaxPool2x2 { argmax } => {
                    let argmax = argmax.clone();
                    let mut gx = self.take_grad(inputs[0]);
                    kernels::maxpool2x2_backward(&grad_out, &argmax, &mut gx);
                    self.grads[inputs[0].0] = Some(gx);
                }
                OpKind::AvgPool2x2 => {
                    let (n, c, h, w) = self.nodes[inputs[0].0].out.dims4()?;
                    let mut gx = self.take_grad(inputs[0]);
                    kernels::avgpool2x2_backward(&grad_out, n, c, h, w, &mut gx);
                    self.grads[inputs[0].0] = Some(gx);
                }
                OpKind::FullyConnected => {
                    let (n, d) = self.nodes[inputs[0].0].out.dims2()?;
                    let (_, m) = self.nodes[inputs[1].0].out.dims2()?;
                    let mut gx = self.take_grad(inputs[0]);
                    let mut gw = self.take_grad(inputs[1]);
                    let mut gb = self.take_grad(inputs[2]);
                    kernels::fully_connected_backward(
                        self.nodes[inputs[0].0].out.values(),
                        n,
                        d,
                        self.nodes[inputs[1].0].out.values(),
                        m,
                        &grad_out,
                        Some(&mut gx),
                        &mut gw,
                        &mut gb,
                    );
                    self.grads[inputs[0].0] = Some(gx);
                    self.grads[inputs[1].0] = Some(gw);
                    self.grads[inputs[2].0] = Some(gb);
                }
                OpKind::Relu => {
                    let mut gx = self.take_grad(inputs[0]);
                    for ((g, &x), &go) in gx
                        .iter_mut()
                        .zip(self.nodes[inputs[0].0].out.values())
                        .zip(&grad_out)
                    {
                        if x > T::ZERO {
                            *g += go;
                        }
                    }
                    self.grads[inputs[0].0] = Some(gx);
                }
                OpKind::LeakyRelu { slope } => {
                    let slope = *slope;
                    let mut gx = self.take_grad(inputs[0]);
                    for ((g, &x), &go) in gx
                        .iter_mut()
                        .zip(self.nodes[inputs[0].0].out.values())
                        .zip(&grad_out)
                    {
                        *g += if x > T::ZERO { go } else { slope * go };
                    }
                    self.grads[inputs[0].0] = Some(gx);
                }
                OpKind::Dropout { mask } => {
                    let mask = mask.clone();
                    let mut gx = self.take_grad(inputs[0]);
                    if mask.is_empty() {
                        for (g, &go) in gx.iter_mut().zip(&grad_out) {
                            *g += go;
                        }
                    } else {
                        for ((g, &m), &go) in gx.iter_mut().zip(&mask).zip(&grad_out) {
                            *g += m * go;
                        }
                    }
                    self.grads[inputs[0].0] = Some(gx);
                }
                OpKind::Reshape | OpKind::ParamsToMatrix => {
                    let mut gx = self.take_grad(inputs[0]);
                    for (g, &go) in gx.iter_mut().zip(&grad_out) {
                        *g += go;
                    }
                    self.grads[inputs[0].0] = Some(gx);
                }
                OpKind::SoftmaxXent { labels, probs } => {
                    let labels = labels.clone();
                    let probs = probs.clone();
                    let (n, k) = self.nodes[inputs[0].0].out.dims2()?;
                    let mut gx = self.take_grad(inputs[0]);
                    kernels::softmax_xent_backward(&probs, n, k, &labels, grad_out[0], &mut gx);
                    self.grads[inputs[0].0] = Some(gx);
                }
                OpKind::AffineGrid => {
                    let shape = self.nodes[i].out.shape().to_vec();
                    let (n, oh, ow) = (shape[0], shape[1], shape[2]);
                    let mut gp = self.take_grad(inputs[0]);
                    kernels::affine_grid_backward(&grad_out, n, oh, ow, &mut gp);
                    self.grads[inputs[0].0] = Some(gp);
                }
                OpKind::BilinearSample { policy } => {
                    let policy = *policy;
                    let (n, c, h, w) = self.nodes[inputs[0].0].out.dims4()?;
                    let shape = self.nodes[i].out.shape().to_vec();
                    let (oh, ow) = (shape[2], shape[3]);
                    let mut gimg = self.take_grad(inputs[0]);
                    let mut ggrid = self.take_grad(inputs[1]);
                    kernels::bilinear_sample_backward(
                        self.nodes[inputs[0].0].out.values(),
                        n,
                        c,
                        h,
                        w,
                        self.nodes[inputs[1].0].out.values(),
                        oh,
                        ow,
                        policy,
                        &grad_out,
                        Some(&mut gimg),
                        &mut ggrid,
                    );
                    self.grads[inputs[0].0] = Some(gimg);
                    self.grads[inputs[1].0] = Some(ggrid);
                }
                OpKind::ComposeParams => {
                    let (n, _) = self.nodes[inputs[0].0].out.dims2()?;
                    let mut ga = self.take_grad(inputs[0]);
                    let mut gb = self.take_grad(inputs[1]);
                    kernels::compose_params_backward(
                        self.nodes[inputs[0].0].out.values(),
                        self.nodes[inputs[1].0].out.values(),
                        n,
                        &grad_out,
                        &mut ga,
                        &mut gb,
                    );
                    self.grads[inputs[0].0] = Some(ga);
                    self.grads[inputs[1].0] = Some(gb);
                }
            }
            // keep gradients on leaves; interior grads are restored for
            // introspection as well
            self.grads[i] = Some(grad_out);
        }
        Ok(())
    }
}
