use nuclass::model::{build_model, ModelConfig};
use nuclass::tensor::{FrameTensor, Tensor};

#[test]
fn bench_fixture_scale() {
    for base in [3usize, 4, 6] {
        let cfg = ModelConfig { base_channels: base, seed: 1, ..ModelConfig::default() };
        let mut model = build_model(&cfg).unwrap();
        model.randomize_all(2);
        let frame = FrameTensor::new(Tensor::from_vec(&[3, 96, 128],
            (0..3*96*128).map(|i| (i % 251) as f64 / 250.0).collect()).unwrap()).unwrap();
        let t0 = std::time::Instant::now();
        let (_r, cache) = model.forward_cached(&frame).unwrap();
        let fwd = t0.elapsed();
        let g = Tensor::from_vec(&[3, 96, 128], vec![1e-3; 3*96*128]).unwrap();
        let t1 = std::time::Instant::now();
        let _grads = model.backward(&cache, &g);
        let bwd = t1.elapsed();
        let t2 = std::time::Instant::now();
        let _ = model.forward(&frame).unwrap();
        let plain = t2.elapsed();
        println!("base={base}: params={} fwd_cached={:?} bwd={:?} fwd_plain={:?}",
                 model.param_count(), fwd, bwd, plain);
    }
}
