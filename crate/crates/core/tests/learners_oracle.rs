use ghost2_core::learners::{
    predict, train, Criterion, FfNet, Forest, ForestParams, Hyper, Kernel, LearnerConfig, MaxFeatures, Model, Penalty, Splitter,
    TrainOptions, Tree, TreeParams,
};
use ghost2_core::synthetic::gaussian_blobs;
use ghost2_core::{seed, Matrix, WarningDataset};
use rand::Rng as _;

const H: f64 = 1e-5;

fn random_problem(n: usize, d: usize, s: u64) -> (Matrix, Vec<u8>) {
    let mut rng = seed::rng(s);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
    (Matrix::from_vec(n, d, x), y)
}

/// Largest relative error between the analytic gradient and central
/// differences of the loss.
fn gradient_error(net: &FfNet, x: &Matrix, y: &[u8], w: (f64, f64)) -> f64 {
    let (_, analytic) = net.loss_and_grad(x, y, w);
    let theta = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] = theta[k] + H;
        probe.set_params(&t);
        let up = probe.loss(x, y, w);
        t[k] = theta[k] - H;
        probe.set_params(&t);
        let down = probe.loss(x, y, w);
        let numeric = (up - down) / (2.0 * H);
        let a = analytic[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

/// A freshly initialised net has zero biases, so a row whose hidden
/// activations all vanish puts the next layer exactly on the ReLU kink.
/// Jittering every parameter moves the check off such points.
fn jittered(inputs: usize, layers: usize, units: usize, s: u64) -> FfNet {
    let mut net = FfNet::new(inputs, layers, units, s);
    let mut rng = seed::rng(s ^ 0x5eed);
    let theta: Vec<f64> = net.params().iter().map(|p| p + rng.random_range(-0.1..0.1)).collect();
    net.set_params(&theta);
    net
}

#[test]
fn gradient_matches_finite_differences_on_two_layer_three_unit_net() {
    let (x, y) = random_problem(10, 4, 11);
    let net = jittered(4, 2, 3, 5);
    assert!(gradient_error(&net, &x, &y, (0.75, 1.5)) < 1e-4);
}

#[test]
fn gradient_matches_finite_differences_on_random_nets() {
    for s in 0..20u64 {
        let mut rng = seed::rng(1000 + s);
        let d = rng.random_range(1..6);
        let layers = rng.random_range(1..4);
        let units = rng.random_range(1..6);
        let (x, y) = random_problem(10, d, s);
        let net = jittered(d, layers, units, s);
        let err = gradient_error(&net, &x, &y, (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)));
        assert!(err < 1e-4, "net {s}: relative error {err}");
    }
}

#[test]
fn equal_class_weights_give_plain_cross_entropy() {
    let (x, y) = random_problem(12, 3, 2);
    let net = FfNet::new(3, 2, 4, 9);
    let p = net.predict_proba(&x);
    let plain: f64 = y
        .iter()
        .zip(&p)
        .map(|(&yi, &pi)| if yi == 1 { -pi.ln() } else { -(1.0 - pi).ln() })
        .sum::<f64>()
        / y.len() as f64;
    assert_eq!(net.loss(&x, &y, (1.0, 1.0)), net.loss(&x, &y, (1.0, 1.0)));
    assert!((net.loss(&x, &y, (1.0, 1.0)) - plain).abs() < 1e-12);
}

#[test]
fn doubling_weights_with_half_learning_rate_takes_the_same_step() {
    let (x, y) = random_problem(15, 3, 4);
    let net = FfNet::new(3, 2, 3, 1);
    let (_, g1) = net.loss_and_grad(&x, &y, (0.8, 1.7));
    let (_, g2) = net.loss_and_grad(&x, &y, (1.6, 3.4));
    let lr = 0.01;
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(lr * a, (lr / 2.0) * b);
    }
}

fn fixture(n: usize, s: u64) -> WarningDataset {
    gaussian_blobs("f", n, 3, 4, s).unwrap()
}

#[test]
fn single_unbootstrapped_forest_equals_a_tree() {
    for s in 0..10u64 {
        let data = fixture(50, s);
        let params = ForestParams {
            n_estimators: 1,
            criterion: Criterion::Entropy,
            bootstrap: false,
            max_features: MaxFeatures::All,
        };
        let forest = Forest::fit(&data.features, &data.labels, (1.0, 1.0), &params, s);
        let idx: Vec<usize> = (0..data.n()).collect();
        let tp = TreeParams {
            criterion: Criterion::Entropy,
            splitter: Splitter::Best,
            max_features: None,
        };
        let tree = Tree::fit(&data.features, &data.labels, &idx, (1.0, 1.0), &tp, &mut seed::rng(s));
        let probe = fixture(200, s + 100);
        for r in probe.features.iter_rows().chain(data.features.iter_rows()) {
            assert_eq!(forest.score(r), if tree.score(r) >= 0.5 { 1.0 } else { 0.0 });
        }
    }
}

fn all_kinds() -> Vec<Hyper> {
    vec![
        Hyper::FeedForward { layers: 2, units: 3 },
        Hyper::Logistic { penalty: Penalty::L1, c: 1.0 },
        Hyper::DecisionTree {
            criterion: Criterion::Gini,
            splitter: Splitter::Random,
        },
        Hyper::RandomForest {
            criterion: Criterion::Gini,
            n_estimators: 10,
        },
        Hyper::Svm { c: 1.0, kernel: Kernel::Rbf },
    ]
}

#[test]
fn models_round_trip_exactly_and_predict_purely() {
    let data = fixture(80, 3);
    let probe = fixture(40, 4);
    let opts = TrainOptions { epochs: 30, ..TrainOptions::default() };
    let dir = tempfile::tempdir().unwrap();
    for (i, hyper) in all_kinds().into_iter().enumerate() {
        let config = LearnerConfig::new(hyper, 7);
        let model = train(&data, &config, &opts).unwrap();
        let again = train(&data, &config, &opts).unwrap();
        assert_eq!(model.digest().unwrap(), again.digest().unwrap(), "{hyper} is not deterministic");

        let path = dir.path().join(format!("m{i}.gh2m"));
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], Model::MAGIC);
        assert_eq!(bytes[4], Model::FORMAT_VERSION);
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded, model);

        let a = predict(&model, &probe.features).unwrap();
        let b = predict(&loaded, &probe.features).unwrap();
        assert_eq!(a, b);
        for (s, l) in a.scores.iter().zip(&a.labels) {
            assert!(s.is_finite() && (0.0..=1.0).contains(s));
            assert_eq!(*l, u8::from(*s >= 0.5));
        }
    }
}

#[test]
fn corrupt_model_files_are_rejected() {
    let data = fixture(40, 1);
    let model = train(&data, &LearnerConfig::new(all_kinds()[2], 1), &TrainOptions::default()).unwrap();
    let mut bytes = model.to_bytes().unwrap();
    bytes[0] = b'X';
    assert!(Model::from_bytes(&bytes).is_err());
    let mut bytes = model.to_bytes().unwrap();
    bytes[4] = Model::FORMAT_VERSION + 1;
    assert!(Model::from_bytes(&bytes).is_err());
}

#[test]
fn width_mismatch_is_an_error() {
    let data = fixture(40, 1);
    let model = train(&data, &LearnerConfig::new(all_kinds()[1], 1), &TrainOptions::default()).unwrap();
    assert!(predict(&model, &Matrix::zeros(3, 5)).is_err());
}

