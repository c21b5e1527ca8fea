use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::softmax_xent;
use crate::scaling::flip_horizontal;
use crate::tensor::Tensor;
use crate::transform::transform_filter_bank;

fn tiny_config(columns: &str) -> NetworkConfig {
    let mut cfg = NetworkConfig::from_text(&format!(
        "input_size=12\nconv_channels=2\npools=max\nclasses=4\ncolumns={columns}\nlrn_alpha=0.5"
    ))
    .unwrap();
    cfg.init_std_conv = 0.3;
    cfg.init_std_fc = 0.3;
    cfg
}

fn random_batch(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn baseline_column_is_identity() {
    let m: Model<f32> = Model::build(NetworkConfig::baseline(), 1).unwrap();
    for layer in &m.layers {
        assert!(layer.columns[0].transform.is_identity());
        assert_eq!(layer.columns[0].filters, layer.canonical_filters);
    }
}

#[test]
fn six_columns_have_baseline_parameter_count() {
    let base: Model<f32> = Model::build(NetworkConfig::baseline(), 1).unwrap();
    let six: Model<f32> = Model::build(NetworkConfig::sicnn6(), 1).unwrap();
    assert_eq!(base.conv_free_params(), six.conv_free_params());
    assert_eq!(six.conv_free_params(), NetworkConfig::sicnn6().conv_free_params());
}

#[test]
fn same_seed_same_parameters() {
    let a: Model<f32> = Model::build(NetworkConfig::sicnn6(), 9).unwrap();
    let b: Model<f32> = Model::build(NetworkConfig::sicnn6(), 9).unwrap();
    let c: Model<f32> = Model::build(NetworkConfig::sicnn6(), 10).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn zero_input_gives_classifier_bias() {
    let mut m: Model<f64> = Model::build(tiny_config("5"), 3).unwrap();
    m.fc_bias = Tensor::from_vec(&[4], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
    let out = m.predict(&Tensor::zeros(&[2, 3, 12, 12])).unwrap();
    for row in out.logits.data().chunks(4) {
        assert_eq!(row, m.fc_bias.data());
    }
}

#[test]
fn feature_vector_concatenates_columns() {
    let m: Model<f32> = Model::build(NetworkConfig::sicnn6(), 2).unwrap();
    let base: Model<f32> = Model::build(NetworkConfig::baseline(), 2).unwrap();
    let x = Tensor::full(&[1, 3, 32, 32], 0.2);
    let out = m.predict(&x).unwrap();
    assert_eq!(out.column_features.len(), 6);
    let single = base.config().feature_len().unwrap();
    assert_eq!(m.config().feature_len().unwrap(), 6 * single);
    assert_eq!(m.fc_weights.shape(), &[10, 6 * single]);
}

#[test]
fn flipped_twin_mirrors_features() {
    // odd spatial sizes keep every pooling grid symmetric under mirroring
    let mut cfg = NetworkConfig::from_text("input_size=15\ncolumns=3,7,3f,7f").unwrap();
    cfg.conv_channels = vec![4, 4, 4];
    cfg.init_std_conv = 0.2;
    cfg.init_std_fc = 0.1;
    let m: Model<f64> = Model::build(cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_batch(&mut rng, &[2, 3, 15, 15]);
    let mirrored = flip_horizontal(&x);
    let plain = m.predict(&x).unwrap();
    let flipped = m.predict(&mirrored).unwrap();
    for (col, twin) in [(0, 2), (1, 3)] {
        let want = flip_horizontal(&plain.column_features[col]);
        let got = &flipped.column_features[twin];
        assert_eq!(want.shape(), got.shape());
        let err = want.data().iter().zip(got.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-4, "column {col} vs twin {twin}: {err}");
        // and the block-2 pooled maps
        let a = flip_horizontal(&m.column_pool_output(&x, col, 1).unwrap());
        let b = m.column_pool_output(&mirrored, twin, 1).unwrap();
        let err = a.data().iter().zip(b.data()).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err < 1e-4);
    }
}

fn loss_of(m: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    softmax_xent(&m.predict(x).unwrap().logits, labels).unwrap().0
}

#[test]
fn tied_gradients_match_finite_differences() {
    for columns in ["5,7f", "3,5", "5f,3f"] {
        let mut m: Model<f64> = Model::build(tiny_config(columns), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        m.canonical_bias_mut(0).data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        let x = random_batch(&mut rng, &[1, 3, 12, 12]);
        let labels = [2];
        let out = m.forward(&x).unwrap();
        let (_, g) = softmax_xent(&out.logits, &labels).unwrap();
        let grads = m.backward(&g).unwrap();

        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, up: f64, down: f64| {
            let numeric = (up - down) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        };
        for i in 0..m.layers[0].canonical_filters.len() {
            let orig = m.layers[0].canonical_filters[i];
            m.canonical_filters_mut(0)[i] = orig + eps;
            m.sync().unwrap();
            let up = loss_of(&m, &x, &labels);
            m.canonical_filters_mut(0)[i] = orig - eps;
            m.sync().unwrap();
            let down = loss_of(&m, &x, &labels);
            m.canonical_filters_mut(0)[i] = orig;
            m.sync().unwrap();
            check(grads.conv_filters[0][i], up, down);
        }
        for i in 0..m.layers[0].canonical_bias.len() {
            let orig = m.layers[0].canonical_bias[i];
            m.canonical_bias_mut(0)[i] = orig + eps;
            let up = loss_of(&m, &x, &labels);
            m.canonical_bias_mut(0)[i] = orig - eps;
            let down = loss_of(&m, &x, &labels);
            m.canonical_bias_mut(0)[i] = orig;
            check(grads.conv_bias[0][i], up, down);
        }
        for i in (0..m.fc_weights.len()).step_by(7) {
            let orig = m.fc_weights[i];
            m.fc_weights[i] = orig + eps;
            let up = loss_of(&m, &x, &labels);
            m.fc_weights[i] = orig - eps;
            let down = loss_of(&m, &x, &labels);
            m.fc_weights[i] = orig;
            check(grads.fc_weights[i], up, down);
        }
        assert!(worst < 1e-4, "columns {columns}: worst relative error {worst}");
    }
}

#[test]
fn single_identity_column_gives_plain_filter_gradient() {
    use crate::nn::*;
    let mut m: Model<f64> = Model::build(tiny_config("5"), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_batch(&mut rng, &[2, 3, 12, 12]);
    let labels = [0, 3];
    let out = m.forward(&x).unwrap();
    let (_, g) = softmax_xent(&out.logits, &labels).unwrap();
    let grads = m.backward(&g).unwrap();

    // the same network written out by hand with the raw kernels
    let cfg = m.config().clone();
    let (w, b) = (&m.layers[0].canonical_filters, &m.layers[0].canonical_bias);
    let c = conv_forward(&x, w, b, 1, 2).unwrap();
    let r = relu_forward(&c);
    let (p, arg) = maxpool_forward(&r, 3, 2).unwrap();
    let (l, scale) = lrn_forward(&p, &cfg.lrn).unwrap();
    let feats = l.clone().reshape(&[2, 50]).unwrap();
    let logits = linear_forward(&feats, &m.fc_weights, &m.fc_bias).unwrap();
    assert_eq!(logits, out.logits);
    let (_, dlogits) = softmax_xent(&logits, &labels).unwrap();
    let fc = linear_backward(&feats, &m.fc_weights, &dlogits).unwrap();
    let dl = fc.input.reshape(l.shape()).unwrap();
    let dp = lrn_backward(&p, &scale, &dl, &cfg.lrn).unwrap();
    let dr = maxpool_backward(&dp, &arg, r.shape()).unwrap();
    let dc = relu_backward(&r, &dr).unwrap();
    let cg = conv_backward(&x, w, &dc, 1, 2, false).unwrap();
    assert_eq!(grads.conv_filters[0], cg.filters);
    assert_eq!(grads.conv_bias[0], cg.bias);
    assert_eq!(grads.fc_weights, fc.weights);
}

#[test]
fn zero_logit_gradient_gives_zero_gradients() {
    let mut m: Model<f64> = Model::build(tiny_config("3,5,7f"), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    m.forward(&random_batch(&mut rng, &[2, 3, 12, 12])).unwrap();
    let grads = m.backward(&Tensor::zeros(&[2, 4])).unwrap();
    assert_eq!(grads.max_abs(), 0.0);
}

#[test]
fn state_errors() {
    let mut m: Model<f64> = Model::build(tiny_config("5,3"), 4).unwrap();
    assert!(matches!(m.backward(&Tensor::zeros(&[1, 4])), Err(crate::Error::State(_))));
    m.canonical_filters_mut(0)[0] += 1.0;
    assert!(!m.is_synced());
    assert!(matches!(m.predict(&Tensor::zeros(&[1, 3, 12, 12])), Err(crate::Error::State(_))));
    m.sync().unwrap();
    m.predict(&Tensor::zeros(&[1, 3, 12, 12])).unwrap();
    assert!(m.predict(&Tensor::zeros(&[1, 3, 11, 12])).is_err());
}

#[test]
fn build_rejects_underflowing_architecture() {
    let mut cfg = NetworkConfig::baseline();
    cfg.input_size = 10;
    let err = Model::<f32>::build(cfg, 0).unwrap_err().to_string();
    assert!(err.contains("conv layer"), "{err}");
}

fn assert_synced(m: &Model<f64>) {
    for layer in &m.layers {
        for col in &layer.columns {
            let want = transform_filter_bank(&col.transform, &layer.canonical_filters).unwrap();
            assert_eq!(col.filters, want);
        }
    }
}

#[test]
fn updates_keep_columns_synced() {
    let mut m: Model<f64> = Model::build(tiny_config("3,5,7f"), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_batch(&mut rng, &[2, 3, 12, 12]);
    let before = m.clone();
    let out = m.forward(&x).unwrap();
    let (_, g) = softmax_xent(&out.logits, &[1, 2]).unwrap();
    let grads = m.backward(&g).unwrap();
    m.apply_update(&grads, 0.0, 0.9, 0.004, UpdateScope::All).unwrap();
    assert_eq!(m.params(), before.params());
    for (a, b) in m.layers.iter().zip(&before.layers) {
        for (ca, cb) in a.columns.iter().zip(&b.columns) {
            assert_eq!(ca.filters, cb.filters);
        }
    }
    m.apply_update(&grads, 0.1, 0.9, 0.004, UpdateScope::All).unwrap();
    assert_ne!(m.params(), before.params());
    assert_synced(&m);
}

#[test]
fn plain_sgd_step_is_minus_lr_times_gradient() {
    let mut m: Model<f64> = Model::build(tiny_config("5,3f"), 4).unwrap();
    let mut grads = Params::zeros_like(&m.params());
    grads.conv_filters[0][7] = 2.5;
    grads.fc_bias[1] = -4.0;
    let before = m.params();
    m.apply_update(&grads, 0.1, 0.0, 0.0, UpdateScope::All).unwrap();
    let after = m.params();
    assert_eq!(after.conv_filters[0][7], before.conv_filters[0][7] - 0.25);
    assert_eq!(after.fc_bias[1], before.fc_bias[1] + 0.4);
    assert_eq!(after.conv_filters[0][6], before.conv_filters[0][6]);
    assert_synced(&m);
}

#[test]
fn classifier_only_update_freezes_conv() {
    let mut m: Model<f64> = Model::build(tiny_config("5,7"), 4).unwrap();
    let mut grads = Params::zeros_like(&m.params());
    grads.conv_filters[0].data_mut().iter_mut().for_each(|g| *g = 1.0);
    grads.fc_weights.data_mut().iter_mut().for_each(|g| *g = 1.0);
    let before = m.params();
    m.apply_update(&grads, 0.1, 0.9, 0.01, UpdateScope::ClassifierOnly).unwrap();
    assert_eq!(m.params().conv_filters, before.conv_filters);
    assert_ne!(m.params().fc_weights, before.fc_weights);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sicn");
    let mut m: Model<f32> = Model::build(NetworkConfig::sicnn6(), 8).unwrap();
    m.set_input_mean(Some(Tensor::full(&[3, 32, 32], 0.47))).unwrap();
    m.set_epochs_done(3);
    m.velocity.fc_bias[2] = 0.125;
    save_checkpoint(&m, &path).unwrap();
    let back: Model<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back.params(), m.params());
    assert_eq!(back.velocity(), m.velocity());
    assert_eq!(back.input_mean(), m.input_mean());
    assert_eq!(back.epochs_done(), 3);
    assert_eq!(back.config(), m.config());
    assert_eq!(checkpoint::encode(&back), std::fs::read(&path).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let m: Model<f32> = Model::build(tiny_config("5,3"), 8).unwrap();
    let bytes = checkpoint::encode(&m);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let err = checkpoint::decode::<f32>(&bad).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(checkpoint::decode::<f32>(&bad).unwrap_err().to_string().contains("version"));
    let err = checkpoint::decode::<f32>(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
    assert!(err.contains("truncated"), "{err}");
}

#[test]
fn baseline_checkpoint_expands_into_six_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.sicn");
    let base: Model<f32> = Model::build(NetworkConfig::baseline(), 21).unwrap();
    save_checkpoint(&base, &path).unwrap();
    let six: Model<f32> = load_into_config(&path, NetworkConfig::sicnn6()).unwrap();
    for (a, b) in six.layers.iter().zip(&base.layers) {
        assert_eq!(a.canonical_filters, b.canonical_filters);
        assert_eq!(a.canonical_bias, b.canonical_bias);
        for col in &a.columns {
            assert_eq!(col.filters, transform_filter_bank(&col.transform, &a.canonical_filters).unwrap());
        }
    }
    // the canonical column's classifier block reproduces the baseline logits
    let x = Tensor::full(&[1, 3, 32, 32], 0.3);
    let lb = base.predict(&x).unwrap().logits;
    let ls = six.predict(&x).unwrap().logits;
    for (a, b) in lb.data().iter().zip(ls.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}
