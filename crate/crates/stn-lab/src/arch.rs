//! Declarative architecture descriptions: the baseline CNN plus the
//! four ways of attaching a spatial transformer (transform the input
//! with a shallow localization net, transform a feature map, transform
//! the input through a deep copied prefix, or share that prefix with
//! the classifier), with exact parameter accounting and a catalog of
//! built-in configurations.

use crate::error::{Error, Result};
use crate::warp::BoundaryPolicy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    /// Keeps spatial dims; only describable, not executable. Present so
    /// the catalog can carry the SVHN-style geometries faithfully.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerDesc {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "default_true")]
        bias: bool,
        #[serde(default)]
        padding: Padding,
    },
    /// 2x2 max pooling, stride 2.
    Pool,
    /// 2x2 average pooling, stride 2.
    AvgPool,
    Fc {
        neurons: usize,
    },
    Dropout {
        p: f64,
    },
    /// Final classifier layer(s): `heads` parallel affine maps to
    /// `classes` logits each.
    Softmax {
        classes: usize,
        #[serde(default = "default_one")]
        heads: usize,
    },
}

fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}

pub fn conv(filters: usize, kernel: usize) -> LayerDesc {
    LayerDesc::Conv { filters, kernel, bias: true, padding: Padding::Valid }
}

pub fn conv_no_bias(filters: usize, kernel: usize) -> LayerDesc {
    LayerDesc::Conv { filters, kernel, bias: false, padding: Padding::Valid }
}

pub fn fc(neurons: usize) -> LayerDesc {
    LayerDesc::Fc { neurons }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StMode {
    /// ST after the first X conv blocks, warping the feature map.
    TransformFeatureMap,
    /// Localization reads the input through a private copy of the
    /// first X classification conv blocks; the ST warps the input.
    TransformInputDeep,
    /// Like Deep, but the prefix tensors are shared with the
    /// classifier (same storage, one gradient accumulation).
    TransformInputShared,
    /// Shallow localization directly on the input (depth 0).
    TransformInputPlain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StInsertion {
    /// Number of classification conv layers in front of the ST (the X
    /// in STN-CX / STN-DLX / STN-SLX).
    pub depth: usize,
    /// Private localization layers after any copied/shared prefix. The
    /// 6-output layer is implicit and always appended.
    pub localization: Vec<LayerDesc>,
    pub mode: StMode,
    #[serde(default = "default_one")]
    pub iterations: usize,
    /// Warp output dims; defaults to the dims of whatever is warped.
    #[serde(default)]
    pub output_dims: Option<(usize, usize)>,
    pub boundary: BoundaryPolicy,
    /// When set, the 6 outputs are offsets from the identity matrix.
    #[serde(default)]
    pub identity_offset: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: String,
    /// (channels, height, width)
    pub input: (usize, usize, usize),
    pub classification: Vec<LayerDesc>,
    #[serde(default)]
    pub st: Vec<StInsertion>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Override for private localization layers (the Plankton nets use
    /// plain ReLU there while the rest of the network is leaky).
    #[serde(default)]
    pub loc_activation: Option<Activation>,
}

fn default_activation() -> Activation {
    Activation::Relu
}

/// Spatial geometry while walking a layer stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn numel(self) -> usize {
        self.c * self.h * self.w
    }
}

/// Applies one layer's geometry.
pub fn layer_out_dims(d: Dims, layer: &LayerDesc) -> Result<Dims> {
    match *layer {
        LayerDesc::Conv { filters, kernel, padding, .. } => {
            if padding == Padding::Same {
                return Ok(Dims { c: filters, ..d });
            }
            if d.h < kernel || d.w < kernel {
                return Err(Error::arch(format!(
                    "conv kernel {kernel} does not fit {}x{} input",
                    d.h, d.w
                )));
            }
            Ok(Dims { c: filters, h: d.h - kernel + 1, w: d.w - kernel + 1 })
        }
        LayerDesc::Pool | LayerDesc::AvgPool => {
            if d.h < 2 || d.w < 2 {
                return Err(Error::arch(format!("pool does not fit {}x{} input", d.h, d.w)));
            }
            Ok(Dims { c: d.c, h: d.h / 2, w: d.w / 2 })
        }
        LayerDesc::Fc { neurons } => Ok(Dims { c: neurons, h: 1, w: 1 }),
        LayerDesc::Dropout { .. } => Ok(d),
        LayerDesc::Softmax { classes, heads } => Ok(Dims { c: classes * heads, h: 1, w: 1 }),
    }
}

fn layer_param_count(d: Dims, layer: &LayerDesc) -> usize {
    match *layer {
        LayerDesc::Conv { filters, kernel, bias, .. } => {
            filters * d.c * kernel * kernel + if bias { filters } else { 0 }
        }
        LayerDesc::Fc { neurons } => d.numel() * neurons + neurons,
        LayerDesc::Softmax { classes, heads } => heads * (d.numel() * classes + classes),
        _ => 0,
    }
}

/// Index just past the first `depth` conv layers plus any pooling or
/// dropout layers that follow the last of them.
pub fn prefix_end(layers: &[LayerDesc], depth: usize) -> Result<usize> {
    if depth == 0 {
        return Ok(0);
    }
    let mut convs = 0;
    let mut idx = None;
    for (i, l) in layers.iter().enumerate() {
        if matches!(l, LayerDesc::Conv { .. }) {
            convs += 1;
            if convs == depth {
                idx = Some(i + 1);
                break;
            }
        }
    }
    let Some(mut end) = idx else {
        return Err(Error::arch(format!(
            "depth {depth} exceeds the {convs} conv layer(s) available"
        )));
    };
    while end < layers.len()
        && matches!(layers[end], LayerDesc::Pool | LayerDesc::AvgPool | LayerDesc::Dropout { .. })
    {
        end += 1;
    }
    Ok(end)
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classification.is_empty() {
            return Err(Error::arch("empty classification stack"));
        }
        let n_softmax = self
            .classification
            .iter()
            .filter(|l| matches!(l, LayerDesc::Softmax { .. }))
            .count();
        if n_softmax != 1 || !matches!(self.classification.last(), Some(LayerDesc::Softmax { .. })) {
            return Err(Error::arch("classification must end with exactly one softmax layer"));
        }
        // geometry must be consistent
        self.classification_trace()?;
        if self.st.len() > 1 && self.st.iter().any(|st| st.output_dims.is_some()) {
            return Err(Error::arch(
                "output_dims resizing is only supported for single-ST specs",
            ));
        }
        for st in &self.st {
            let end = prefix_end(&self.classification, st.depth)?;
            if st.mode == StMode::TransformInputPlain && st.depth != 0 {
                return Err(Error::arch("plain input-transforming ST requires depth 0"));
            }
            if st.iterations == 0 {
                return Err(Error::arch("iterations must be >= 1"));
            }
            if st.iterations > 1 {
                if st.mode == StMode::TransformFeatureMap {
                    return Err(Error::arch("iterative composition needs an input-transforming ST"));
                }
                if st.output_dims.is_some() {
                    return Err(Error::arch("iterative STs must keep the input dims (output_dims must be unset)"));
                }
            }
            let mut d = self.loc_input_dims(st)?;
            for l in &st.localization {
                if matches!(l, LayerDesc::Softmax { .. }) {
                    return Err(Error::arch("softmax inside a localization network"));
                }
                d = layer_out_dims(d, l)?;
            }
            let _ = end;
        }
        Ok(())
    }

    pub fn input_dims(&self) -> Dims {
        Dims { c: self.input.0, h: self.input.1, w: self.input.2 }
    }

    /// Dims of the tensor entering the ST insertion point, before any
    /// warp resizing (what the ST and its localization network read).
    pub fn dims_at_depth(&self, depth: usize) -> Result<Dims> {
        let end = prefix_end(&self.classification, depth)?;
        let mut d = self.input_dims();
        for l in &self.classification[..end] {
            d = layer_out_dims(d, l)?;
        }
        Ok(d)
    }

    /// Dims in front of every classification layer (plus the final
    /// output dims), with ST warp resizing applied at the insertion
    /// boundary. This is the geometry the classification path sees.
    pub fn classification_trace(&self) -> Result<Vec<Dims>> {
        // (boundary index, new h/w) for STs that resize what flows on
        let mut resizes = Vec::new();
        for st in &self.st {
            if let Some((h, w)) = st.output_dims {
                let boundary = match st.mode {
                    StMode::TransformFeatureMap => prefix_end(&self.classification, st.depth)?,
                    _ => 0,
                };
                resizes.push((boundary, h, w));
            }
        }
        let mut d = self.input_dims();
        let mut trace = Vec::with_capacity(self.classification.len() + 1);
        for (i, l) in self.classification.iter().enumerate() {
            for &(b, h, w) in &resizes {
                if b == i {
                    d = Dims { c: d.c, h, w };
                }
            }
            trace.push(d);
            d = layer_out_dims(d, l)?;
        }
        trace.push(d);
        Ok(trace)
    }

    /// Dims of what the localization network reads.
    pub fn loc_input_dims(&self, st: &StInsertion) -> Result<Dims> {
        match st.mode {
            StMode::TransformInputPlain => Ok(self.input_dims()),
            StMode::TransformFeatureMap | StMode::TransformInputDeep | StMode::TransformInputShared => {
                self.dims_at_depth(st.depth)
            }
        }
    }

    /// Context for converting this ST's translation parameters to
    /// source-image pixels.
    pub fn st_context(&self, st: &StInsertion) -> Result<crate::pose::StContext> {
        match st.mode {
            StMode::TransformFeatureMap => {
                let d = self.dims_at_depth(st.depth)?;
                let end = prefix_end(&self.classification, st.depth)?;
                let stride = self.classification[..end]
                    .iter()
                    .filter(|l| matches!(l, LayerDesc::Pool | LayerDesc::AvgPool))
                    .fold(1usize, |s, _| s * 2);
                Ok(crate::pose::StContext { width_at_st: d.w, cumulative_stride: stride })
            }
            _ => Ok(crate::pose::StContext { width_at_st: self.input.2, cumulative_stride: 1 }),
        }
    }

    /// Counts every distinct learnable tensor element once: shared
    /// prefixes are not recounted, deep copies are.
    pub fn count_params(&self) -> Result<usize> {
        self.validate()?;
        let mut total = 0usize;
        let trace = self.classification_trace()?;
        for (l, &d) in self.classification.iter().zip(&trace) {
            total += layer_param_count(d, l);
        }
        for st in &self.st {
            if st.mode == StMode::TransformInputDeep {
                let end = prefix_end(&self.classification, st.depth)?;
                let mut d = self.input_dims();
                for l in &self.classification[..end] {
                    total += layer_param_count(d, l);
                    d = layer_out_dims(d, l)?;
                }
            }
            let mut d = self.loc_input_dims(st)?;
            for l in &st.localization {
                total += layer_param_count(d, l);
                d = layer_out_dims(d, l)?;
            }
            // implicit 6-parameter output layer
            total += d.numel() * 6 + 6;
        }
        Ok(total)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: ArchitectureSpec = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Stable hash of the canonical JSON form, stored in checkpoints.
    pub fn hash(&self) -> Result<u64> {
        let json = serde_json::to_string(self)?;
        Ok(crate::data::fnv1a64(json.as_bytes()))
    }
}

fn mnist_st(
    depth: usize,
    mode: StMode,
    localization: Vec<LayerDesc>,
    output_dims: Option<(usize, usize)>,
) -> StInsertion {
    StInsertion {
        depth,
        localization,
        mode,
        iterations: 1,
        output_dims,
        boundary: BoundaryPolicy::ClampNearest,
        identity_offset: false,
    }
}

fn spec(name: &str, input: (usize, usize, usize), classification: Vec<LayerDesc>, st: Vec<StInsertion>) -> ArchitectureSpec {
    ArchitectureSpec {
        name: name.into(),
        input,
        classification,
        st,
        activation: Activation::Relu,
        loc_activation: None,
    }
}

/// Built-in catalog. The mnist-* entries mirror the published layer
/// tables exactly (the parameter counts are pinned by tests); desk-*
/// entries are reduced-width variants for fast experiments; svhn-*
/// and plankton entries are descriptive catalog entries only.
pub fn builtin_specs() -> Vec<ArchitectureSpec> {
    use LayerDesc::{AvgPool, Pool, Softmax};
    let sm10 = Softmax { classes: 10, heads: 1 };
    let mut specs = Vec::new();

    // ---- rotation family: 28x28 input
    let r_input = (1, 28, 28);
    let r_class = |c1: usize, c2: usize| vec![conv(c1, 9), Pool, conv(c2, 7), Pool, sm10];
    specs.push(spec("mnist-r/cnn", r_input, r_class(32, 32), vec![]));
    specs.push(spec(
        "mnist-r/stn-c0",
        r_input,
        r_class(16, 32),
        vec![mnist_st(0, StMode::TransformInputPlain, vec![fc(32), fc(16), fc(16)], None)],
    ));
    specs.push(spec(
        "mnist-r/stn-c1",
        r_input,
        r_class(16, 32),
        vec![mnist_st(1, StMode::TransformFeatureMap, vec![fc(16), fc(16), fc(16)], None)],
    ));
    specs.push(spec(
        "mnist-r/stn-dl1",
        r_input,
        r_class(16, 32),
        vec![mnist_st(1, StMode::TransformInputDeep, vec![fc(16), fc(16), fc(16)], None)],
    ));
    specs.push(spec(
        "mnist-r/stn-sl1",
        r_input,
        r_class(16, 32),
        vec![mnist_st(1, StMode::TransformInputShared, vec![fc(16), fc(16), fc(16)], None)],
    ));

    // ---- translation family: 60x60 input, input-transforming STs
    // halve the width; the last localization conv of C1/DL1/SL1 is
    // unpooled and bias-free
    let t_input = (1, 60, 60);
    let t_loc_tail = || vec![conv(20, 5), Pool, conv_no_bias(20, 5), fc(20)];
    specs.push(spec("mnist-t/cnn", t_input, vec![conv(21, 9), Pool, conv(32, 7), Pool, sm10], vec![]));
    specs.push(spec(
        "mnist-t/stn-c0",
        t_input,
        vec![conv(16, 9), Pool, conv(32, 7), Pool, sm10],
        vec![mnist_st(
            0,
            StMode::TransformInputPlain,
            vec![conv(20, 5), Pool, conv(20, 5), Pool, fc(10)],
            Some((30, 30)),
        )],
    ));
    specs.push(spec(
        "mnist-t/stn-c1",
        t_input,
        vec![conv(16, 9), Pool, conv(32, 7), Pool, sm10],
        vec![mnist_st(1, StMode::TransformFeatureMap, t_loc_tail(), Some((13, 13)))],
    ));
    specs.push(spec(
        "mnist-t/stn-dl1",
        t_input,
        vec![conv(16, 9), Pool, conv(32, 7), Pool, sm10],
        vec![mnist_st(1, StMode::TransformInputDeep, t_loc_tail(), Some((30, 30)))],
    ));
    specs.push(spec(
        "mnist-t/stn-sl1",
        t_input,
        vec![conv(16, 9), Pool, conv(32, 7), Pool, sm10],
        vec![mnist_st(1, StMode::TransformInputShared, t_loc_tail(), Some((30, 30)))],
    ));

    // ---- scale family: 112x112 input, full-size ST outputs; the C0
    // localization prefix fixed-downsamples the input by 2x
    let s_input = (1, 112, 112);
    let s_class = |c1: usize, c2: usize| vec![conv(c1, 9), Pool, conv(c2, 7), Pool, sm10];
    let s_loc = || vec![conv(16, 5), Pool, conv(16, 5), Pool, fc(16)];
    specs.push(spec("mnist-s/cnn", s_input, s_class(23, 21), vec![]));
    specs.push(spec(
        "mnist-s/stn-c0",
        s_input,
        s_class(16, 16),
        vec![mnist_st(
            0,
            StMode::TransformInputPlain,
            vec![AvgPool, conv(16, 5), Pool, conv(16, 5), Pool, fc(16)],
            None,
        )],
    ));
    specs.push(spec(
        "mnist-s/stn-c1",
        s_input,
        s_class(16, 16),
        vec![mnist_st(1, StMode::TransformFeatureMap, s_loc(), None)],
    ));
    specs.push(spec(
        "mnist-s/stn-dl1",
        s_input,
        s_class(16, 16),
        vec![mnist_st(1, StMode::TransformInputDeep, s_loc(), None)],
    ));
    specs.push(spec(
        "mnist-s/stn-sl1",
        s_input,
        s_class(16, 16),
        vec![mnist_st(1, StMode::TransformInputShared, s_loc(), None)],
    ));

    // ---- desk family: reduced widths for fast runs
    let d_class = || vec![conv(8, 9), Pool, conv(16, 7), Pool, sm10];
    specs.push(spec("desk-r/cnn", r_input, d_class(), vec![]));
    specs.push(spec(
        "desk-r/stn-c0",
        r_input,
        d_class(),
        vec![mnist_st(0, StMode::TransformInputPlain, vec![fc(16), fc(8)], None)],
    ));
    specs.push(spec(
        "desk-r/stn-c1",
        r_input,
        d_class(),
        vec![mnist_st(1, StMode::TransformFeatureMap, vec![fc(8), fc(8)], None)],
    ));
    specs.push(spec(
        "desk-r/stn-dl1",
        r_input,
        d_class(),
        vec![mnist_st(1, StMode::TransformInputDeep, vec![fc(8), fc(8)], None)],
    ));
    specs.push(spec(
        "desk-r/stn-sl1",
        r_input,
        d_class(),
        vec![mnist_st(1, StMode::TransformInputShared, vec![fc(8), fc(8)], None)],
    ));

    // ---- SVHN family: catalog entries (same-padded geometry, multi-
    // head softmax and multi-ST wiring are descriptive, not buildable)
    let sv_conv = |n: usize| LayerDesc::Conv { filters: n, kernel: 5, bias: true, padding: Padding::Same };
    let svhn_class = || {
        vec![
            sv_conv(48),
            Pool,
            sv_conv(64),
            LayerDesc::Dropout { p: 0.5 },
            sv_conv(128),
            Pool,
            LayerDesc::Dropout { p: 0.5 },
            sv_conv(160),
            LayerDesc::Dropout { p: 0.5 },
            sv_conv(192),
            Pool,
            LayerDesc::Dropout { p: 0.5 },
            sv_conv(192),
            LayerDesc::Dropout { p: 0.5 },
            sv_conv(192),
            Pool,
            LayerDesc::Dropout { p: 0.5 },
            sv_conv(192),
            LayerDesc::Dropout { p: 0.5 },
            fc(3072),
            LayerDesc::Dropout { p: 0.5 },
            fc(3072),
            LayerDesc::Dropout { p: 0.5 },
            fc(3072),
            LayerDesc::Dropout { p: 0.5 },
            Softmax { classes: 11, heads: 5 },
        ]
    };
    let svhn_st = |depth: usize, mode: StMode, loc: Vec<LayerDesc>| StInsertion {
        depth,
        localization: loc,
        mode,
        iterations: 1,
        output_dims: None,
        boundary: BoundaryPolicy::ZeroFill,
        identity_offset: true,
    };
    specs.push(spec("svhn/cnn", (3, 64, 64), svhn_class(), vec![]));
    specs.push(spec(
        "svhn/stn-c0-large",
        (3, 64, 64),
        svhn_class(),
        vec![svhn_st(
            0,
            StMode::TransformInputPlain,
            vec![conv(32, 5), Pool, conv(32, 5), fc(32), fc(32)],
        )],
    ));
    specs.push(spec(
        "svhn/stn-c0123",
        (3, 64, 64),
        svhn_class(),
        vec![
            svhn_st(0, StMode::TransformInputPlain, vec![fc(32), fc(32)]),
            svhn_st(1, StMode::TransformFeatureMap, vec![fc(32), fc(32)]),
            svhn_st(2, StMode::TransformFeatureMap, vec![fc(32), fc(32)]),
            svhn_st(3, StMode::TransformFeatureMap, vec![fc(32), fc(32)]),
        ],
    ));
    specs.push(spec(
        "svhn/stn-sl0123",
        (3, 64, 64),
        svhn_class(),
        vec![
            svhn_st(0, StMode::TransformInputPlain, vec![fc(32), fc(32)]),
            svhn_st(1, StMode::TransformInputShared, vec![fc(32), fc(32)]),
            svhn_st(2, StMode::TransformInputShared, vec![fc(32), fc(32)]),
            svhn_st(3, StMode::TransformInputShared, vec![fc(32), fc(32)]),
        ],
    ));

    for s in &mut specs {
        debug_assert!(s.validate().is_ok(), "builtin {} invalid", s.name);
    }
    specs
}

/// Looks up a builtin by name; the error lists every valid name.
pub fn builtin(name: &str) -> Result<ArchitectureSpec> {
    let specs = builtin_specs();
    specs.iter().find(|s| s.name == name).cloned().ok_or_else(|| {
        let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        Error::arch(format!("unknown spec {name:?}; valid names: {}", names.join(", ")))
    })
}
