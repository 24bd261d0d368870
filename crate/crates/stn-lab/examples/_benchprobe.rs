fn main() {
    use std::time::Instant;
    use stn_lab::data::{synthetic_digit_set, Variant};
    use stn_lab::train::{train, TrainConfig};
    let src = synthetic_digit_set(2000, 1);
    for spec in ["mnist-r/cnn", "mnist-r/stn-c1", "mnist-r/stn-sl1"] {
        let cfg = TrainConfig {
            stage_iters: vec![30],
            train_subset: 2000,
            ..TrainConfig::desk(spec, Variant::R, 1)
        };
        let t0 = Instant::now();
        let out = train(&cfg, &src).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!("{spec}: {:.1} ms/step (30 steps in {dt:.2}s), last loss {:?}", dt / 30.0 * 1000.0, out.log.last());
    }
}
