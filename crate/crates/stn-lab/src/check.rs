//! Gradient verification against central finite differences.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of `Graph::backward`. All checks run at f64 with step
//! 1e-6; inputs are drawn away from ReLU kinks, pooling ties and
//! sampler lattice points so the difference quotient is valid.

use crate::graph::{Graph, NodeId};
use crate::rng::StreamRng;
use crate::tensor::Tensor;
use crate::warp::BoundaryPolicy;

pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative-or-absolute error: |a - n| / max(1, |a|, |n|).
fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Checks every element of every parameter tensor: analytic gradient
/// from one backward pass vs the central difference of two forward
/// evaluations. `build` must be deterministic.
pub fn check_gradients(
    name: &'static str,
    params: &[Tensor<f64>],
    build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
) -> GradCheckReport {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids);
    assert_eq!(g.value(loss).numel(), 1, "{name}: loss must be scalar");
    g.backward(loss).expect("backward failed");
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(id).numel()]))
        .collect();

    let eval = |params: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).values()[0]
    };

    let mut max_rel = 0.0_f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let orig = work[pi].values()[ei];
            work[pi].values_mut()[ei] = orig + FD_STEP;
            let up = eval(&work);
            work[pi].values_mut()[ei] = orig - FD_STEP;
            let down = eval(&work);
            work[pi].values_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            max_rel = max_rel.max(rel_error(analytic[pi][ei], numeric));
            checked += 1;
        }
    }
    GradCheckReport { name, max_rel_error: max_rel, checked }
}

fn random_tensor(shape: Vec<usize>, rng: &mut StreamRng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Projects any node to a scalar through a fixed random linear map.
fn scalarize(g: &mut Graph<f64>, node: NodeId, rng: &mut StreamRng) -> NodeId {
    let numel = g.value(node).numel();
    let flat = g.reshape(node, vec![1, numel]).unwrap();
    let w = Tensor::from_fn(vec![numel, 1], |_| rng.uniform(-1.0, 1.0));
    let w = g.input(w);
    let b = g.input(Tensor::zeros(vec![1]));
    let fc = g.fully_connected(flat, w, b).unwrap();
    g.reshape(fc, vec![1]).unwrap()
}

pub fn gradient_check_conv(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0xC0);
    let x = random_tensor(vec![2, 2, 6, 5], &mut rng, -1.0, 1.0);
    let k = random_tensor(vec![3, 2, 3, 3], &mut rng, -1.0, 1.0);
    let b = random_tensor(vec![3], &mut rng, -0.5, 0.5);
    check_gradients("conv2d", &[x, k, b], &move |g, p| {
        let c = g.conv2d(p[0], p[1], Some(p[2])).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x51);
        scalarize(g, c, &mut prng)
    })
}

pub fn gradient_check_maxpool(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x11);
    let x = random_tensor(vec![2, 3, 6, 6], &mut rng, -1.0, 1.0);
    check_gradients("maxpool2x2", &[x], &move |g, p| {
        let m = g.maxpool2x2(p[0]).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x52);
        scalarize(g, m, &mut prng)
    })
}

pub fn gradient_check_avgpool(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x12);
    let x = random_tensor(vec![2, 2, 6, 8], &mut rng, -1.0, 1.0);
    check_gradients("avgpool2x2", &[x], &move |g, p| {
        let m = g.avgpool2x2(p[0]).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x53);
        scalarize(g, m, &mut prng)
    })
}

pub fn gradient_check_fc(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x13);
    let x = random_tensor(vec![3, 7], &mut rng, -1.0, 1.0);
    let w = random_tensor(vec![7, 4], &mut rng, -1.0, 1.0);
    let b = random_tensor(vec![4], &mut rng, -0.5, 0.5);
    check_gradients("fully_connected", &[x, w, b], &move |g, p| {
        let f = g.fully_connected(p[0], p[1], p[2]).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x54);
        scalarize(g, f, &mut prng)
    })
}

pub fn gradient_check_activations(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x14);
    // keep magnitudes >= 0.05 so the FD step never crosses a kink
    let x = Tensor::from_fn(vec![2, 9], |_| {
        let v = rng.uniform(0.05, 1.0);
        if rng.chance(0.5) {
            v
        } else {
            -v
        }
    });
    check_gradients("relu+leaky_relu", &[x], &move |g, p| {
        let r = g.relu(p[0]).unwrap();
        let l = g.leaky_relu(r, 1.0 / 3.0).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x55);
        scalarize(g, l, &mut prng)
    })
}

pub fn gradient_check_dropout(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x15);
    let x = random_tensor(vec![2, 12], &mut rng, 0.1, 1.0);
    check_gradients("dropout", &[x], &move |g, p| {
        let mut drng = StreamRng::new(seed ^ 0x99); // same mask every rebuild
        let d = g.dropout(p[0], 0.4, true, &mut drng).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x56);
        scalarize(g, d, &mut prng)
    })
}

pub fn gradient_check_softmax(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x16);
    let logits = random_tensor(vec![3, 5], &mut rng, -2.0, 2.0);
    check_gradients("softmax_cross_entropy", &[logits], &move |g, p| {
        g.softmax_cross_entropy(p[0], &[1, 4, 0]).unwrap()
    })
}

/// Small composed network: conv -> relu -> maxpool -> fc -> xent.
pub fn gradient_check_small_cnn(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x17);
    let x = random_tensor(vec![2, 1, 8, 8], &mut rng, -1.0, 1.0);
    let k = random_tensor(vec![4, 1, 3, 3], &mut rng, -0.7, 0.7);
    let kb = random_tensor(vec![4], &mut rng, -0.3, 0.3);
    let w = random_tensor(vec![4 * 3 * 3, 3], &mut rng, -0.5, 0.5);
    let b = random_tensor(vec![3], &mut rng, -0.3, 0.3);
    check_gradients("small_cnn", &[x, k, kb, w, b], &move |g, p| {
        let c = g.conv2d(p[0], p[1], Some(p[2])).unwrap();
        let r = g.relu(c).unwrap();
        let m = g.maxpool2x2(r).unwrap();
        let f = g.flatten(m).unwrap();
        let fc = g.fully_connected(f, p[3], p[4]).unwrap();
        g.softmax_cross_entropy(fc, &[0, 2]).unwrap()
    })
}

/// Sampler chain d/d-params and d/d-input: params_to_matrix ->
/// affine_grid -> bilinear_sample. The transform zooms in (scale ~0.8)
/// so every source coordinate stays strictly interior and off-lattice.
pub fn gradient_check_sampler(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x18);
    let img = random_tensor(vec![1, 1, 7, 7], &mut rng, 0.0, 1.0);
    let theta = Tensor::new(
        vec![1, 6],
        vec![
            rng.uniform(-0.25, -0.15),
            rng.uniform(-0.06, 0.06),
            rng.uniform(-0.04, 0.04),
            rng.uniform(-0.06, 0.06),
            rng.uniform(-0.25, -0.15),
            rng.uniform(-0.04, 0.04),
        ],
    )
    .unwrap();
    check_gradients("sampler_chain", &[img, theta], &move |g, p| {
        let mat = g.params_to_matrix(p[1], true).unwrap();
        let grid = g.affine_grid(mat, 6, 6).unwrap();
        let out = g.bilinear_sample(p[0], grid, BoundaryPolicy::ClampNearest).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x57);
        scalarize(g, out, &mut prng)
    })
}

/// Composition op in a two-stage warp pipeline.
pub fn gradient_check_compose(seed: u64) -> GradCheckReport {
    let mut rng = StreamRng::new(seed ^ 0x19);
    let img = random_tensor(vec![1, 1, 7, 7], &mut rng, 0.0, 1.0);
    let mk_theta = |rng: &mut StreamRng| {
        Tensor::new(
            vec![1, 6],
            vec![
                rng.uniform(-0.15, -0.1),
                rng.uniform(-0.05, 0.05),
                rng.uniform(-0.03, 0.03),
                rng.uniform(-0.05, 0.05),
                rng.uniform(-0.15, -0.1),
                rng.uniform(-0.03, 0.03),
            ],
        )
        .unwrap()
    };
    let t1 = mk_theta(&mut rng);
    let t2 = mk_theta(&mut rng);
    check_gradients("compose_params", &[img, t1, t2], &move |g, p| {
        let m1 = g.params_to_matrix(p[1], true).unwrap();
        let m2 = g.params_to_matrix(p[2], true).unwrap();
        let m = g.compose_params(m1, m2).unwrap();
        let grid = g.affine_grid(m, 6, 6).unwrap();
        let out = g.bilinear_sample(p[0], grid, BoundaryPolicy::ClampNearest).unwrap();
        let mut prng = StreamRng::new(seed ^ 0x58);
        scalarize(g, out, &mut prng)
    })
}

/// Runs the full per-op suite over `seeds` seeds each; returns one
/// worst-case report per op.
pub fn gradient_suite(seeds: u64) -> Vec<GradCheckReport> {
    let checks: Vec<fn(u64) -> GradCheckReport> = vec![
        gradient_check_conv,
        gradient_check_maxpool,
        gradient_check_avgpool,
        gradient_check_fc,
        gradient_check_activations,
        gradient_check_dropout,
        gradient_check_softmax,
        gradient_check_small_cnn,
        gradient_check_sampler,
        gradient_check_compose,
    ];
    checks
        .into_iter()
        .map(|f| {
            let mut worst = f(0);
            for s in 1..seeds {
                let r = f(s);
                if r.max_rel_error > worst.max_rel_error {
                    worst.max_rel_error = r.max_rel_error;
                }
                worst.checked += r.checked;
            }
            worst
        })
        .collect()
}

/// Frobenius distance between a 2x2 matrix and the similarity
/// S * [[cos p, -sin p], [sin p, cos p]].
pub fn similarity_frobenius_error(a: [[f64; 2]; 2], s: f64, phi_deg: f64) -> f64 {
    let (sin, cos) = phi_deg.to_radians().sin_cos();
    let d00 = a[0][0] - s * cos;
    let d01 = a[0][1] + s * sin;
    let d10 = a[1][0] - s * sin;
    let d11 = a[1][1] - s * cos;
    (d00 * d00 + d01 * d01 + d10 * d10 + d11 * d11).sqrt()
}

/// Brute-force (S, phi) grid search minimizing the Frobenius error,
/// centered on a candidate. Returns (best_s, best_phi, best_error).
/// Independent of the closed-form fit it is used to check.
pub fn similarity_grid_search(
    a: [[f64; 2]; 2],
    s_center: f64,
    s_half: f64,
    s_step: f64,
    phi_center: f64,
    phi_half: f64,
    phi_step: f64,
) -> (f64, f64, f64) {
    let mut best = (s_center, phi_center, f64::INFINITY);
    let s_lo = (s_center - s_half).max(s_step);
    let s_n = (2.0 * s_half / s_step).round() as usize + 1;
    let phi_lo = phi_center - phi_half;
    let phi_n = (2.0 * phi_half / phi_step).round() as usize + 1;
    for si in 0..s_n {
        let s = s_lo + si as f64 * s_step;
        for pi in 0..phi_n {
            let phi = phi_lo + pi as f64 * phi_step;
            let err = similarity_frobenius_error(a, s, phi);
            if err < best.2 {
                best = (s, phi, err);
            }
        }
    }
    best
}
