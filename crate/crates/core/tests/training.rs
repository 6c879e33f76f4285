use mambaforgcn::checkpoint::Checkpoint;
use mambaforgcn::data::{make_batches, Batch, Encoded};
use mambaforgcn::synth::{synth_longrange_generate, SynthConfig};
use mambaforgcn::trainer::{evaluate_checkpoint, layer_sweep, train, Trainer};
use mambaforgcn::{Graph, ModelConfig, Variant};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        word_dim: 16,
        position_dim: 4,
        postag_dim: 4,
        lstm_hidden: 8,
        max_len: 32,
        batch_size: 8,
        epochs: 2,
        ..ModelConfig::default()
    }
}

fn data(n: usize, seed: u64) -> Vec<mambaforgcn::data::Sample> {
    synth_longrange_generate(&SynthConfig {
        n,
        seed,
        d_min: 2,
        d_max: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn all_logits(tr: &Trainer<f64>, enc: &[Encoded]) -> Vec<Vec<f64>> {
    let batches = make_batches::<ChaCha8Rng>(enc, 8, None).unwrap();
    batches.iter().flat_map(|b| tr.model.logits_batch(b).unwrap()).collect()
}

fn param_values(tr: &Trainer<f64>) -> Vec<f64> {
    tr.model.params.entries().iter().flat_map(|e| e.value.data().to_vec()).collect()
}

#[test]
fn checkpoint_reload_is_bit_identical() {
    let train_set = data(40, 1);
    let mut tr = Trainer::<f64>::new(small(), &train_set, None).unwrap();
    let enc = tr.encode(&train_set);
    tr.train_epoch(&enc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    tr.checkpoint().save(&path).unwrap();
    let back = Trainer::<f64>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let (a, b) = (all_logits(&tr, &enc), all_logits(&back, &enc));
    assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(param_values(&tr), param_values(&back));
    assert_eq!(back.epoch, 1);
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let train_set = data(40, 2);
    let mut straight = Trainer::<f64>::new(small(), &train_set, None).unwrap();
    let enc = straight.encode(&train_set);
    straight.train_epoch(&enc).unwrap();
    let ck = straight.checkpoint();
    let l2 = straight.train_epoch(&enc).unwrap();

    let json = serde_json::to_string(&ck).unwrap();
    let mut resumed = Trainer::<f64>::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
    let r2 = resumed.train_epoch(&enc).unwrap();
    assert_eq!(l2.to_bits(), r2.to_bits());
    assert_eq!(param_values(&straight), param_values(&resumed));
}

#[test]
fn zero_learning_rate_freezes_everything() {
    let train_set = data(24, 3);
    let cfg = ModelConfig {
        lr: 0.0,
        dropout: mambaforgcn::config::Dropouts {
            embed: 0.0,
            gcn: 0.0,
            attn: 0.0,
        },
        ..small()
    };
    let mut tr = Trainer::<f64>::new(cfg, &train_set, None).unwrap();
    let enc = tr.encode(&train_set);
    let before = param_values(&tr);
    let losses: Vec<f64> = (0..3).map(|_| tr.train_epoch(&enc).unwrap()).collect();
    assert_eq!(before, param_values(&tr));
    for l in &losses[1..] {
        assert!((l - losses[0]).abs() < 1e-12, "{losses:?}");
    }
}

#[test]
fn every_parameter_group_receives_gradient() {
    let train_set = data(16, 4);
    for variant in [Variant::Full, Variant::NoKanGate, Variant::NoMha] {
        let tr = Trainer::<f64>::new(ModelConfig { variant, ..small() }, &train_set, None).unwrap();
        let enc = tr.encode(&train_set);
        let refs: Vec<&Encoded> = enc.iter().collect();
        let batch = Batch::from_samples(&refs);
        let mut g = Graph::new();
        let bound = tr.model.params.bind(&mut g);
        let out = tr.model.batch_forward::<ChaCha8Rng>(&mut g, &bound, &batch, None).unwrap();
        g.backward(out.loss).unwrap();
        let grads = tr.model.params.collect_grads(&g, &bound);
        for (e, gr) in tr.model.params.entries().iter().zip(&grads) {
            let norm: f64 = gr.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "{variant}: {} has zero gradient", e.name);
        }
    }
}

#[test]
fn best_checkpoint_scores_like_history() {
    let train_set = data(48, 5);
    let dev = data(16, 6);
    let mut seen = Vec::new();
    let out = train::<f64>(small(), &train_set, &dev, None, |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, out.history);
    let best = &out.history[out.best_epoch - 1];
    assert!(out
        .history
        .iter()
        .all(|r| (r.dev_acc, r.dev_macro_f1) <= (best.dev_acc, best.dev_macro_f1)));
    let m = evaluate_checkpoint::<f64>(&out.best, &dev).unwrap();
    assert_eq!(m.accuracy, best.dev_acc);
    assert_eq!(m.macro_f1, best.dev_macro_f1);
    assert_eq!(out.best.epoch, out.best_epoch);
}

#[test]
fn training_runs_are_reproducible() {
    let train_set = data(32, 7);
    let run = || train::<f64>(small(), &train_set, &[], None, |_| {}).unwrap().history;
    let (a, b) = (run(), run());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let other = train::<f64>(ModelConfig { seed: 43, ..small() }, &train_set, &[], None, |_| {})
        .unwrap()
        .history;
    assert_ne!(a, other);
}

#[test]
fn f32_model_trains() {
    let train_set = data(24, 8);
    let out = train::<f32>(small(), &train_set, &[], None, |_| {}).unwrap();
    assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
    assert_eq!(out.best.scalar, "f32");
    evaluate_checkpoint::<f32>(&out.best, &train_set).unwrap();
}

#[test]
fn layer_sweep_shape_and_errors() {
    let train_set = data(24, 9);
    let cfg = ModelConfig { epochs: 1, ..small() };
    let rows = layer_sweep::<f64>(&cfg, &[1, 2, 3], &train_set, &[]).unwrap();
    assert_eq!(rows.iter().map(|r| r.layers).collect::<Vec<_>>(), vec![1, 2, 3]);
    let again = layer_sweep::<f64>(&cfg, &[1, 2, 3], &train_set, &[]).unwrap();
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!((a.dev_acc, a.dev_macro_f1, a.best_epoch), (b.dev_acc, b.dev_macro_f1, b.best_epoch));
    }
    assert!(layer_sweep::<f64>(&cfg, &[0], &train_set, &[]).is_err());
}

#[test]
fn training_errors() {
    assert!(Trainer::<f64>::new(small(), &[], None).is_err());
    let train_set = data(8, 10);
    assert!(train::<f64>(ModelConfig { epochs: 0, ..small() }, &train_set, &[], None, |_| {}).is_err());
    let tr = Trainer::<f64>::new(small(), &train_set, None).unwrap();
    assert!(tr.evaluate(&[]).is_err());
    let mut ck = tr.checkpoint();
    ck.version = 99;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    assert!(Checkpoint::load(&path).unwrap_err().to_string().contains("version"));
}
