//! Executable networks built from architecture specs: a parameter
//! store plus a graph factory. Each forward call records a fresh tape;
//! shared localization prefixes reuse the same parameter leaves, so
//! their gradients accumulate from both paths.

use crate::arch::{Activation, ArchitectureSpec, Dims, LayerDesc, Padding, StMode, layer_out_dims, prefix_end};
use crate::data::fnv1a64;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::rng::StreamRng;
use crate::sgd::SgdState;
use crate::tensor::Tensor;
use crate::warp::BoundaryPolicy;

#[derive(Debug, Clone)]
pub struct ParamInfo {
    pub name: String,
    /// True for private localization parameters (they get the
    /// localization learning-rate multiplier); shared prefix tensors
    /// are classification parameters and stay false.
    pub localization: bool,
}

#[derive(Debug, Clone, Copy)]
enum PlanOp {
    Conv { kernel: usize, bias: Option<usize>, activated: bool },
    Pool,
    AvgPool,
    Fc { weight: usize, bias: usize, activated: bool },
    Dropout { p: f64 },
}

#[derive(Debug, Clone)]
struct StPlan {
    boundary: usize,
    mode: StMode,
    loc_prefix: Vec<PlanOp>,
    loc_head: Vec<PlanOp>,
    final_weight: usize,
    final_bias: usize,
    out_dims: (usize, usize),
    policy: BoundaryPolicy,
    identity_offset: bool,
    iterations: usize,
}

pub struct Network<T> {
    pub spec: ArchitectureSpec,
    params: Vec<Tensor<T>>,
    info: Vec<ParamInfo>,
    class_ops: Vec<PlanOp>,
    st: Option<StPlan>,
}

/// Per-forward options.
#[derive(Default)]
pub struct RunOptions<'a> {
    pub train: bool,
    /// Overrides the spec's iteration count (test time may run more).
    pub iterations: Option<usize>,
    /// Replaces the localization output of iteration k with fixed
    /// parameters; used to probe the composition machinery.
    pub loc_override: Option<&'a dyn Fn(usize) -> [f64; 6]>,
}

/// One recorded forward pass.
pub struct ForwardPass<T> {
    pub graph: Graph<T>,
    pub param_nodes: Vec<NodeId>,
    pub logits: NodeId,
    pub loss: Option<NodeId>,
    /// N x 6 grid-space matrix rows of the final warp, when an ST ran.
    pub st_matrix: Option<NodeId>,
}

struct Builder<T> {
    params: Vec<Tensor<T>>,
    info: Vec<ParamInfo>,
    seed: u64,
}

impl<T: Real> Builder<T> {
    fn alloc(&mut self, name: String, shape: Vec<usize>, fan_in: usize, localization: bool) -> usize {
        let mut t = Tensor::zeros(shape);
        let mut rng = StreamRng::new(self.seed).split(fnv1a64(name.as_bytes()));
        t.fill_uniform_fan_in(fan_in, &mut rng);
        self.params.push(t);
        self.info.push(ParamInfo { name, localization });
        self.params.len() - 1
    }

    fn alloc_fixed(&mut self, name: String, t: Tensor<T>, localization: bool) -> usize {
        self.params.push(t);
        self.info.push(ParamInfo { name, localization });
        self.params.len() - 1
    }

    /// Plans one layer stack, allocating parameters along the way.
    fn plan_stack(
        &mut self,
        layers: &[LayerDesc],
        dims: &[Dims],
        prefix: &str,
        localization: bool,
        logits_last: bool,
    ) -> Result<Vec<PlanOp>> {
        let mut ops = Vec::with_capacity(layers.len());
        for (i, (layer, &d)) in layers.iter().zip(dims).enumerate() {
            let activated = !(logits_last && i + 1 == layers.len());
            match *layer {
                LayerDesc::Conv { filters, kernel, bias, padding } => {
                    if padding == Padding::Same {
                        return Err(Error::arch(
                            "same-padded convolutions are catalog-only; execution supports valid padding",
                        ));
                    }
                    let fan_in = d.c * kernel * kernel;
                    let k = self.alloc(
                        format!("{prefix}.{i}.kernel"),
                        vec![filters, d.c, kernel, kernel],
                        fan_in,
                        localization,
                    );
                    let b = if bias {
                        Some(self.alloc(format!("{prefix}.{i}.bias"), vec![filters], fan_in, localization))
                    } else {
                        None
                    };
                    ops.push(PlanOp::Conv { kernel: k, bias: b, activated });
                }
                LayerDesc::Pool => ops.push(PlanOp::Pool),
                LayerDesc::AvgPool => ops.push(PlanOp::AvgPool),
                LayerDesc::Fc { neurons } => {
                    let fan_in = d.numel();
                    let w = self.alloc(
                        format!("{prefix}.{i}.weight"),
                        vec![fan_in, neurons],
                        fan_in,
                        localization,
                    );
                    let b = self.alloc(format!("{prefix}.{i}.bias"), vec![neurons], fan_in, localization);
                    ops.push(PlanOp::Fc { weight: w, bias: b, activated });
                }
                LayerDesc::Dropout { p } => ops.push(PlanOp::Dropout { p }),
                LayerDesc::Softmax { classes, heads } => {
                    if heads != 1 {
                        return Err(Error::arch(
                            "multi-head softmax specs are catalog-only; execution supports one head",
                        ));
                    }
                    let fan_in = d.numel();
                    let w = self.alloc(
                        format!("{prefix}.{i}.weight"),
                        vec![fan_in, classes],
                        fan_in,
                        localization,
                    );
                    let b = self.alloc(format!("{prefix}.{i}.bias"), vec![classes], fan_in, localization);
                    ops.push(PlanOp::Fc { weight: w, bias: b, activated: false });
                }
            }
        }
        Ok(ops)
    }
}

fn dims_trace(start: Dims, layers: &[LayerDesc]) -> Result<Vec<Dims>> {
    let mut d = start;
    let mut out = Vec::with_capacity(layers.len() + 1);
    for l in layers {
        out.push(d);
        d = layer_out_dims(d, l)?;
    }
    out.push(d);
    Ok(out)
}

impl<T: Real> Network<T> {
    /// Builds the network with deterministic initialization: every
    /// tensor's values depend only on (seed, tensor name), so two specs
    /// sharing classification structure initialize it identically. The
    /// final localization layer starts at the identity transform
    /// (weights zero, bias encoding the identity).
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Network<T>> {
        spec.validate()?;
        if spec.st.len() > 1 {
            return Err(Error::arch(
                "multi-ST specs are catalog-only; execution supports at most one insertion",
            ));
        }
        let mut b = Builder { params: Vec::new(), info: Vec::new(), seed };
        let class_trace = spec.classification_trace()?;
        let class_ops = b.plan_stack(&spec.classification, &class_trace, "class", false, true)?;

        let st = match spec.st.first() {
            None => None,
            Some(st) => {
                let boundary = prefix_end(&spec.classification, st.depth)?;
                let loc_in = spec.loc_input_dims(st)?;
                let loc_prefix = match st.mode {
                    StMode::TransformInputDeep => {
                        let trace = dims_trace(spec.input_dims(), &spec.classification[..boundary])?;
                        b.plan_stack(&spec.classification[..boundary], &trace, "st.copy", true, false)?
                    }
                    StMode::TransformInputShared => class_ops[..boundary].to_vec(),
                    _ => Vec::new(),
                };
                let head_trace = dims_trace(loc_in, &st.localization)?;
                let loc_head = b.plan_stack(&st.localization, &head_trace, "st.loc", true, false)?;
                let head_out = *head_trace.last().expect("nonempty trace");
                let final_in = head_out.numel();
                let final_weight = b.alloc_fixed(
                    "st.final.weight".into(),
                    Tensor::zeros(vec![final_in, 6]),
                    true,
                );
                let identity_bias = if st.identity_offset {
                    Tensor::zeros(vec![6])
                } else {
                    Tensor::new(
                        vec![6],
                        [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
                            .iter()
                            .map(|&v| T::from_f64(v))
                            .collect(),
                    )?
                };
                let final_bias = b.alloc_fixed("st.final.bias".into(), identity_bias, true);

                let warped = match st.mode {
                    StMode::TransformFeatureMap => spec.dims_at_depth(st.depth)?,
                    _ => spec.input_dims(),
                };
                let out_dims = st.output_dims.unwrap_or((warped.h, warped.w));
                Some(StPlan {
                    boundary,
                    mode: st.mode,
                    loc_prefix,
                    loc_head,
                    final_weight,
                    final_bias,
                    out_dims,
                    policy: st.boundary,
                    identity_offset: st.identity_offset,
                    iterations: st.iterations,
                })
            }
        };
        Ok(Network {
            spec: spec.clone(),
            params: b.params,
            info: b.info,
            class_ops,
            st,
        })
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn info(&self) -> &[ParamInfo] {
        &self.info
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.info.iter().position(|i| i.name == name)
    }

    fn apply_ops(
        &self,
        g: &mut Graph<T>,
        mut node: NodeId,
        ops: &[PlanOp],
        pnodes: &[NodeId],
        activation: Activation,
        train: bool,
        rng: &mut StreamRng,
    ) -> Result<NodeId> {
        for op in ops {
            node = match *op {
                PlanOp::Conv { kernel, bias, activated } => {
                    let c = g.conv2d(node, pnodes[kernel], bias.map(|b| pnodes[b]))?;
                    if activated {
                        self.activate(g, c, activation)?
                    } else {
                        c
                    }
                }
                PlanOp::Pool => g.maxpool2x2(node)?,
                PlanOp::AvgPool => g.avgpool2x2(node)?,
                PlanOp::Fc { weight, bias, activated } => {
                    let flat = if g.value(node).shape().len() != 2 {
                        g.flatten(node)?
                    } else {
                        node
                    };
                    let f = g.fully_connected(flat, pnodes[weight], pnodes[bias])?;
                    if activated {
                        self.activate(g, f, activation)?
                    } else {
                        f
                    }
                }
                PlanOp::Dropout { p } => g.dropout(node, p, train, rng)?,
            };
        }
        Ok(node)
    }

    fn activate(&self, g: &mut Graph<T>, node: NodeId, activation: Activation) -> Result<NodeId> {
        match activation {
            Activation::Relu => g.relu(node),
            Activation::LeakyRelu { slope } => g.leaky_relu(node, slope),
        }
    }

    /// Localization pass: prefix (copied or shared), private head, and
    /// the 6-output layer; returns the raw N x 6 prediction.
    fn run_localization(
        &self,
        g: &mut Graph<T>,
        source: NodeId,
        st: &StPlan,
        pnodes: &[NodeId],
        train: bool,
        rng: &mut StreamRng,
    ) -> Result<NodeId> {
        let loc_act = self.spec.loc_activation.unwrap_or(self.spec.activation);
        let mut node = source;
        if !st.loc_prefix.is_empty() {
            node = self.apply_ops(g, node, &st.loc_prefix, pnodes, self.spec.activation, train, rng)?;
        }
        node = self.apply_ops(g, node, &st.loc_head, pnodes, loc_act, train, rng)?;
        let flat = if g.value(node).shape().len() != 2 {
            g.flatten(node)?
        } else {
            node
        };
        g.fully_connected(flat, pnodes[st.final_weight], pnodes[st.final_bias])
    }

    /// Records one forward pass. With an ST configured, iteration k
    /// predicts parameters from the currently warped tensor, composes
    /// them onto the accumulated transform, and re-warps the original
    /// input (never warp-of-warp).
    pub fn forward(
        &self,
        input: &Tensor<T>,
        labels: Option<&[usize]>,
        opts: &RunOptions,
        rng: &mut StreamRng,
    ) -> Result<ForwardPass<T>> {
        let (n, _, _, _) = input.dims4()?;
        let mut g = Graph::new();
        let pnodes: Vec<NodeId> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let input_node = g.input(input.clone());

        let (features, st_matrix) = match &self.st {
            None => (input_node, None),
            Some(st) => {
                let iterations = opts.iterations.unwrap_or(st.iterations);
                if iterations == 0 {
                    return Err(Error::arch("iterations must be >= 1"));
                }
                if iterations > 1 && st.mode == StMode::TransformFeatureMap {
                    return Err(Error::arch(
                        "iterative composition needs an input-transforming ST",
                    ));
                }
                let warp_target = match st.mode {
                    StMode::TransformFeatureMap => self.apply_ops(
                        &mut g,
                        input_node,
                        &self.class_ops[..st.boundary],
                        &pnodes,
                        self.spec.activation,
                        opts.train,
                        rng,
                    )?,
                    _ => input_node,
                };
                let mut accumulated: Option<NodeId> = None;
                let mut current = warp_target;
                for k in 0..iterations {
                    let raw = match opts.loc_override {
                        Some(f) => {
                            let row = f(k);
                            let mut vals = Vec::with_capacity(n * 6);
                            for _ in 0..n {
                                vals.extend(row.iter().map(|&v| T::from_f64(v)));
                            }
                            g.input(Tensor::new(vec![n, 6], vals)?)
                        }
                        None => self.run_localization(&mut g, current, st, &pnodes, opts.train, rng)?,
                    };
                    let mat = g.params_to_matrix(raw, st.identity_offset)?;
                    let acc = match accumulated {
                        None => mat,
                        Some(prev) => g.compose_params(prev, mat)?,
                    };
                    accumulated = Some(acc);
                    let grid = g.affine_grid(acc, st.out_dims.0, st.out_dims.1)?;
                    current = g.bilinear_sample(warp_target, grid, st.policy)?;
                }
                (current, accumulated)
            }
        };

        let logits = match &self.st {
            Some(st) if st.mode == StMode::TransformFeatureMap => self.apply_ops(
                &mut g,
                features,
                &self.class_ops[st.boundary..],
                &pnodes,
                self.spec.activation,
                opts.train,
                rng,
            )?,
            _ => self.apply_ops(
                &mut g,
                features,
                &self.class_ops,
                &pnodes,
                self.spec.activation,
                opts.train,
                rng,
            )?,
        };

        let loss = match labels {
            Some(l) => Some(g.softmax_cross_entropy(logits, l)?),
            None => None,
        };
        Ok(ForwardPass { graph: g, param_nodes: pnodes, logits, loss, st_matrix })
    }

    /// Backward plus one SGD step. Private localization parameters use
    /// `loc_multiplier` times the base learning rate.
    pub fn train_step(
        &mut self,
        pass: &mut ForwardPass<T>,
        sgd: &mut SgdState<T>,
        loc_multiplier: f64,
    ) -> Result<()> {
        let loss = pass.loss.ok_or_else(|| Error::Graph("train_step needs a loss node".into()))?;
        pass.graph.backward(loss)?;
        let grads: Vec<Vec<T>> = pass
            .param_nodes
            .iter()
            .zip(&self.params)
            .map(|(&id, p)| {
                pass.graph
                    .grad(id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![T::ZERO; p.numel()])
            })
            .collect();
        let scales: Vec<f64> = self
            .info
            .iter()
            .map(|i| if i.localization { loc_multiplier } else { 1.0 })
            .collect();
        sgd.step(&mut self.params, &grads, &scales);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{builtin, conv, fc, ArchitectureSpec, StInsertion};
    use crate::warp::Frame;

    fn batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = StreamRng::new(seed);
        Tensor::from_fn(vec![n, c, h, w], |_| rng.uniform(0.0, 1.0))
    }

    #[test]
    fn built_params_match_the_declared_count() {
        for name in [
            "mnist-r/cnn",
            "mnist-r/stn-c0",
            "mnist-r/stn-c1",
            "mnist-r/stn-dl1",
            "mnist-r/stn-sl1",
            "mnist-t/cnn",
            "mnist-t/stn-c0",
            "mnist-t/stn-c1",
            "mnist-t/stn-dl1",
            "mnist-t/stn-sl1",
            "mnist-s/cnn",
            "mnist-s/stn-c0",
            "mnist-s/stn-c1",
            "mnist-s/stn-dl1",
            "mnist-s/stn-sl1",
            "desk-r/stn-sl1",
        ] {
            let spec = builtin(name).unwrap();
            let net = Network::<f32>::build(&spec, 1).unwrap();
            assert_eq!(
                net.num_params(),
                spec.count_params().unwrap(),
                "{name}: built params disagree with count_params"
            );
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let spec = builtin("mnist-r/stn-sl1").unwrap();
        let net = Network::<f64>::build(&spec, 7).unwrap();
        let x = batch(3, 1, 28, 28, 5);
        let labels = [1usize, 7, 3];
        let mut rng = StreamRng::new(0);
        let pass = net.forward(&x, Some(&labels), &RunOptions::default(), &mut rng).unwrap();
        assert_eq!(pass.graph.value(pass.logits).shape(), &[3, 10]);
        assert!(pass.graph.value(pass.loss.unwrap()).values()[0].is_finite());

        let mut rng2 = StreamRng::new(0);
        let pass2 = net.forward(&x, Some(&labels), &RunOptions::default(), &mut rng2).unwrap();
        assert_eq!(
            pass.graph.value(pass.logits).values(),
            pass2.graph.value(pass2.logits).values()
        );
    }

    #[test]
    fn identity_init_means_st_is_transparent() {
        // STN with identity-initialized localization produces the same
        // logits as the baseline CNN sharing its classification layers
        let class = vec![conv(6, 9), LayerDesc::Pool, conv(8, 7), LayerDesc::Pool, LayerDesc::Softmax { classes: 10, heads: 1 }];
        let cnn = ArchitectureSpec {
            name: "pair/cnn".into(),
            input: (1, 28, 28),
            classification: class.clone(),
            st: vec![],
            activation: Activation::Relu,
            loc_activation: None,
        };
        let stn = ArchitectureSpec {
            name: "pair/stn".into(),
            input: (1, 28, 28),
            classification: class,
            st: vec![StInsertion {
                depth: 0,
                localization: vec![fc(16), fc(8)],
                mode: StMode::TransformInputPlain,
                iterations: 1,
                output_dims: None,
                boundary: BoundaryPolicy::ClampNearest,
                identity_offset: false,
            }],
            activation: Activation::Relu,
            loc_activation: None,
        };
        let cnn_net = Network::<f64>::build(&cnn, 11).unwrap();
        let stn_net = Network::<f64>::build(&stn, 11).unwrap();
        let x = batch(2, 1, 28, 28, 9);
        let mut rng = StreamRng::new(0);
        let a = cnn_net.forward(&x, None, &RunOptions::default(), &mut rng).unwrap();
        let b = stn_net.forward(&x, None, &RunOptions::default(), &mut rng).unwrap();
        assert_eq!(
            a.graph.value(a.logits).values(),
            b.graph.value(b.logits).values(),
            "identity-initialized ST must be bit-transparent"
        );
        // and the reported matrix is the identity
        let m = b.graph.value(b.st_matrix.unwrap()).values();
        assert_eq!(&m[..6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn shared_prefix_receives_gradient_from_both_paths() {
        let sl1_spec = builtin("mnist-r/stn-sl1").unwrap();
        let dl1_spec = builtin("mnist-r/stn-dl1").unwrap();
        let mut sl1 = Network::<f64>::build(&sl1_spec, 3).unwrap();
        let mut dl1 = Network::<f64>::build(&dl1_spec, 3).unwrap();
        // make DL1's private copy identical to its classification prefix
        let k = dl1.param_index("class.0.kernel").unwrap();
        let ck = dl1.param_index("st.copy.0.kernel").unwrap();
        dl1.params[ck] = dl1.params[k].clone();
        let b = dl1.param_index("class.0.bias").unwrap();
        let cb = dl1.param_index("st.copy.0.bias").unwrap();
        dl1.params[cb] = dl1.params[b].clone();
        // perturb the localization head so the warp is not the identity
        let sl_w = sl1.param_index("st.final.weight").unwrap();
        let dl_w = dl1.param_index("st.final.weight").unwrap();
        let mut rng = StreamRng::new(77);
        for v in sl1.params[sl_w].values_mut() {
            *v = rng.uniform(-0.01, 0.01);
        }
        dl1.params[dl_w] = sl1.params[sl_w].clone();

        let x = batch(4, 1, 28, 28, 21);
        let labels = [0usize, 1, 2, 3];
        let mut r1 = StreamRng::new(0);
        let mut sl_pass = sl1.forward(&x, Some(&labels), &RunOptions::default(), &mut r1).unwrap();
        let mut r2 = StreamRng::new(0);
        let mut dl_pass = dl1.forward(&x, Some(&labels), &RunOptions::default(), &mut r2).unwrap();

        let sl_loss = sl_pass.graph.value(sl_pass.loss.unwrap()).values()[0];
        let dl_loss = dl_pass.graph.value(dl_pass.loss.unwrap()).values()[0];
        assert!((sl_loss - dl_loss).abs() < 1e-12, "identical math must give identical loss");

        sl_pass.graph.backward(sl_pass.loss.unwrap()).unwrap();
        dl_pass.graph.backward(dl_pass.loss.unwrap()).unwrap();
        let sl_k = sl1.param_index("class.0.kernel").unwrap();
        let shared_grad = sl_pass.graph.grad(sl_pass.param_nodes[sl_k]).unwrap();
        let class_grad = dl_pass.graph.grad(dl_pass.param_nodes[k]).unwrap();
        let copy_grad = dl_pass.graph.grad(dl_pass.param_nodes[ck]).unwrap();
        let mut max_err = 0.0f64;
        let mut max_copy = 0.0f64;
        for ((s, c), cp) in shared_grad.iter().zip(class_grad).zip(copy_grad) {
            max_err = max_err.max((s - (c + cp)).abs());
            max_copy = max_copy.max(cp.abs());
        }
        assert!(max_err < 1e-12, "shared grad must equal the two single-path grads summed, err {max_err}");
        assert!(max_copy > 0.0, "localization path must contribute gradient");
    }

    #[test]
    fn deep_copy_is_independent_storage() {
        let spec = builtin("mnist-r/stn-dl1").unwrap();
        let mut net = Network::<f64>::build(&spec, 3).unwrap();
        let k = net.param_index("class.0.kernel").unwrap();
        let ck = net.param_index("st.copy.0.kernel").unwrap();
        let before = net.params[k].clone();
        for v in net.params[ck].values_mut() {
            *v += 1.0;
        }
        assert_eq!(net.params[k].values(), before.values(), "mutating the copy must not touch the classifier");
    }

    #[test]
    fn single_iteration_equals_plain_forward() {
        let spec = builtin("mnist-r/stn-sl1").unwrap();
        let net = Network::<f64>::build(&spec, 5).unwrap();
        let x = batch(2, 1, 28, 28, 2);
        let mut r1 = StreamRng::new(0);
        let plain = net.forward(&x, None, &RunOptions::default(), &mut r1).unwrap();
        let mut r2 = StreamRng::new(0);
        let one = net
            .forward(&x, None, &RunOptions { iterations: Some(1), ..Default::default() }, &mut r2)
            .unwrap();
        assert_eq!(
            plain.graph.value(plain.logits).values(),
            one.graph.value(one.logits).values()
        );
    }

    #[test]
    fn two_stubbed_iterations_compose_exactly() {
        let spec = builtin("mnist-r/stn-sl1").unwrap();
        let net = Network::<f64>::build(&spec, 5).unwrap();
        let x = batch(2, 1, 28, 28, 8);
        let t1 = [0.9, 0.05, 0.1, -0.03, 1.1, -0.08];
        let t2 = [1.05, -0.02, -0.05, 0.04, 0.95, 0.06];
        let stub = move |k: usize| if k == 0 { t1 } else { t2 };
        let mut rng = StreamRng::new(0);
        let two = net
            .forward(
                &x,
                None,
                &RunOptions { iterations: Some(2), loc_override: Some(&stub), ..Default::default() },
                &mut rng,
            )
            .unwrap();

        // oracle: homogeneous product via the pose module
        let a = crate::warp::AffineTransform::new([[t1[0], t1[1], t1[2]], [t1[3], t1[4], t1[5]]], Frame::GridSpace);
        let b = crate::warp::AffineTransform::new([[t2[0], t2[1], t2[2]], [t2[3], t2[4], t2[5]]], Frame::GridSpace);
        let want = crate::pose::compose(&a, &b).unwrap().params();

        let got = two.graph.value(two.st_matrix.unwrap()).values();
        for (g, w) in got[..6].iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-12, "composed matrix {g} vs {w}");
        }

        // and the warped result equals a single warp with the product
        let single = move |_: usize| want;
        let mut rng = StreamRng::new(0);
        let direct = net
            .forward(
                &x,
                None,
                &RunOptions { iterations: Some(1), loc_override: Some(&single), ..Default::default() },
                &mut rng,
            )
            .unwrap();
        let lhs = two.graph.value(two.logits).values();
        let rhs = direct.graph.value(direct.logits).values();
        for (a, b) in lhs.iter().zip(rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_map_mode_rejects_iterations() {
        let spec = builtin("mnist-r/stn-c1").unwrap();
        let net = Network::<f64>::build(&spec, 5).unwrap();
        let x = batch(1, 1, 28, 28, 2);
        let mut rng = StreamRng::new(0);
        let err = match net.forward(&x, None, &RunOptions { iterations: Some(2), ..Default::default() }, &mut rng) {
            Err(e) => e,
            Ok(_) => panic!("feature-map iterations must be rejected"),
        };
        assert!(err.to_string().contains("input-transforming"));
    }

    #[test]
    fn train_step_reduces_loss_on_tiny_problem() {
        let spec = builtin("desk-r/cnn").unwrap();
        let mut net = Network::<f32>::build(&spec, 1).unwrap();
        let digits = crate::data::synthetic_digit_set(16, 3);
        let x = digits.images.clone();
        let labels: Vec<usize> = digits.labels.iter().map(|&l| l as usize).collect();
        let mut sgd = SgdState::new(0.05, 0.0, false, 0.0);
        let mut rng = StreamRng::new(0);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..60 {
            let mut pass = net.forward(&x, Some(&labels), &RunOptions { train: true, ..Default::default() }, &mut rng).unwrap();
            last = pass.graph.value(pass.loss.unwrap()).values()[0] as f64;
            if first.is_none() {
                first = Some(last);
            }
            net.train_step(&mut pass, &mut sgd, 1.0).unwrap();
        }
        let first = first.unwrap();
        assert!(last < first * 0.5, "memorizing 16 digits: loss {first} -> {last}");
    }
}
