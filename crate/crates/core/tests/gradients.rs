use posekit::nn::gradcheck::{check_layer, check_network, random_tensor};
use posekit::nn::*;
use posekit::Shape4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_params(spec: &LayerSpec, input: Dims, rng: &mut ChaCha8Rng) -> LayerParams<f64> {
    let [o, i, h, w] = spec.weight_shape(input).unwrap();
    LayerParams {
        name: spec.name.clone(),
        weights: random_tensor(Shape4::new(o, i, h, w), rng).unwrap(),
        biases: random_tensor(Shape4::new(1, 1, 1, o), rng).unwrap().into_vec(),
    }
}

fn check(spec: LayerSpec, input: Shape4, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(input, &mut rng).unwrap();
    let dims = Dims::new(input.c, input.h, input.w);
    let p = spec.is_learnable().then(|| random_params(&spec, dims, &mut rng));
    let r = check_layer(&spec, p.as_ref(), &x, EPS, seed).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_error < TOL, "{}: max relative error {}", spec.name, r.max_rel_error);
}

#[test]
fn conv_same_padding() {
    check(LayerSpec::conv("c", 4, 3), Shape4::new(2, 3, 8, 8), 1);
}

#[test]
fn conv_strided_unpadded() {
    let spec = LayerSpec::conv("c", 3, 3).with_kind(LayerKind::Conv {
        out_channels: 3,
        kernel_size: 3,
        stride: 2,
        padding: 0,
    });
    check(spec, Shape4::new(2, 2, 9, 9), 2);
}

#[test]
fn relu() {
    check(LayerSpec::relu("r"), Shape4::new(2, 3, 8, 8), 3);
}

#[test]
fn max_pool() {
    check(LayerSpec::max_pool("p", 2, 2), Shape4::new(2, 3, 8, 8), 4);
}

#[test]
fn fully_connected() {
    check(LayerSpec::fully_connected("f", 8), Shape4::new(2, 3, 8, 8), 5);
}

#[test]
fn composed_four_layer_net() {
    let net = NetworkSpec::new(
        Dims::new(3, 8, 8),
        vec![
            LayerSpec::conv("conv1", 4, 3),
            LayerSpec::relu("relu1"),
            LayerSpec::max_pool("pool1", 2, 2),
            LayerSpec::fully_connected("fc", 8),
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = Parameters {
        layers: (0..net.layers().len())
            .map(|i| {
                let l = &net.layers()[i];
                l.is_learnable().then(|| random_params(l, net.layer_input(i), &mut rng))
            })
            .collect(),
    };
    let x = random_tensor(Shape4::new(2, 3, 8, 8), &mut rng).unwrap();
    let t = random_tensor(Shape4::new(2, 8, 1, 1), &mut rng).unwrap();
    let r = check_network(&net, &params, &x, &t, EPS).unwrap();
    assert_eq!(r.checked, 4 * 27 + 4 + 8 * 64 + 8 + 2 * 192);
    assert!(r.max_rel_error < TOL, "max relative error {}", r.max_rel_error);
}
