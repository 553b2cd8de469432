use posekit::dataset::batch::write_batches;
use posekit::dataset::BatchStream;
use posekit::nn::gradcheck::random_tensor;
use posekit::nn::*;
use posekit::{Error, Shape4, Tensor4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_net(trunk_lrm: f64) -> NetworkSpec {
    NetworkSpec::new(
        Dims::new(3, 8, 8),
        vec![
            LayerSpec::conv("conv1", 4, 3)
                .with_init(Init::Xavier)
                .with_lr_multiplier(trunk_lrm),
            LayerSpec::relu("relu1"),
            LayerSpec::max_pool("pool1", 2, 2),
            LayerSpec::fully_connected("fc8", 8).with_init(Init::Xavier),
        ],
    )
    .unwrap()
}

fn data(n: usize, seed: u64) -> (Tensor4<f64>, Tensor4<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        random_tensor(Shape4::new(n, 3, 8, 8), &mut rng).unwrap(),
        random_tensor(Shape4::new(n, 1, 1, 8), &mut rng).unwrap(),
    )
}

fn config(iterations: usize, rate: f64) -> TrainConfig {
    TrainConfig {
        base_learning_rate: rate,
        batch_size: 4,
        iterations,
        train_log_window: 10,
        test_eval_every: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn full_batch_descent_lowers_the_loss() {
    let net = tiny_net(1.0);
    let (x, y) = data(4, 1);
    let batches = make_batches(&x, &y, 4).unwrap();
    let params = init_params::<f64>(&net, 0, None).unwrap();
    let out = train(&net, params, &batches, &config(200, 1e-2), None).unwrap();
    let l = &out.iteration_losses;
    assert!(l[l.len() - 1] < 0.5 * l[0], "{} -> {}", l[0], l[l.len() - 1]);
    assert!(l.windows(2).take(20).all(|w| w[1] <= w[0]), "{:?}", &l[..20]);
}

#[test]
fn frozen_trunk_is_bit_unchanged() {
    let net = tiny_net(0.0);
    let (x, y) = data(8, 2);
    let batches = make_batches(&x, &y, 4).unwrap();
    let start = init_params::<f64>(&net, 3, None).unwrap();
    let out = train(&net, start.clone(), &batches, &config(30, 1e-2), None).unwrap();
    assert_eq!(out.params.layers[0], start.layers[0]);
    assert_ne!(out.params.layers[3], start.layers[3]);
}

#[test]
fn history_records_windows_and_test_points() {
    let net = tiny_net(1.0);
    let (x, y) = data(8, 4);
    let batches = make_batches(&x, &y, 4).unwrap();
    let test = Batch::new(x.clone(), y.clone()).unwrap();
    let params = init_params::<f64>(&net, 0, None).unwrap();
    let mut snapshots = Vec::new();
    let cfg = TrainConfig {
        snapshot_every: Some(15),
        ..config(30, 1e-3)
    };
    let out = train_with_snapshots(&net, params, &batches, &cfg, Some(&test), |it, _| {
        snapshots.push(it);
        Ok(())
    })
    .unwrap();
    assert_eq!(snapshots, [15, 30]);
    let its: Vec<usize> = out.history.records.iter().map(|r| r.iteration).collect();
    assert_eq!(its, [10, 20, 30]);
    let mean: f64 = out.iteration_losses[..10].iter().sum::<f64>() / 10.0;
    assert!((out.history.records[0].train_loss.unwrap() - mean).abs() < 1e-12);
    let back = LossHistory::from_csv(&out.history.to_csv()).unwrap();
    assert_eq!(back, out.history);
}

#[test]
fn huge_rate_reports_divergence() {
    let net = tiny_net(1.0);
    let (x, y) = data(4, 5);
    let batches = make_batches(&x, &y, 4).unwrap();
    let params = init_params::<f64>(&net, 0, None).unwrap();
    let err = train(&net, params, &batches, &config(500, 1e3), None).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn streamed_files_train_like_memory() {
    let net = tiny_net(1.0);
    let (x, y) = data(10, 6);
    let dir = tempfile::tempdir().unwrap();
    write_batches(&x, &y, dir.path(), 3).unwrap();
    let params = init_params::<f64>(&net, 0, None).unwrap();
    let cfg = config(12, 1e-3);
    let batches = make_batches(&x, &y, 4).unwrap();
    let a = train(&net, params.clone(), &batches, &cfg, None).unwrap();
    let mut stream = BatchStream::<f64>::open(dir.path(), 4).unwrap();
    let b = train_from_source(&net, params, &mut stream, &cfg, None, |_, _| Ok(())).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.iteration_losses, b.iteration_losses);
}
