use glam_core::model::{Checkpoint, ModelConfig, TokenBatch};
use glam_core::trainer::{
    run, BatchSource, CheckpointManager, CheckpointPolicy, TrainConfig, TrainLog, Trainer, UniformTokens,
};
use glam_core::GlamModel64;

fn trainer(seed: u64, steps: u64) -> Trainer<f64> {
    let model = GlamModel64::build(&ModelConfig::toy(4), seed).unwrap();
    Trainer::new(model, TrainConfig::new(steps))
}

fn batch(seed: u64) -> TokenBatch {
    UniformTokens::new(8, 16, 32, seed).next_batch().unwrap()
}

#[test]
fn nan_gradient_skips_update() {
    let mut tr = trainer(0, 100);
    tr.train_step(&batch(1)).unwrap();
    let (params, opt) = (tr.model.checksum(), tr.optimizer.checksum());
    let mut grads = tr.compute_gradients(&batch(2)).unwrap();
    grads.grads[3].data_mut()[0] = f64::NAN;
    let rec = tr.apply(grads).unwrap();
    assert!(rec.skipped);
    assert_eq!(tr.model.checksum(), params);
    assert_eq!(tr.optimizer.checksum(), opt);
    assert_eq!(rec.optimizer_step, 1);
    assert_eq!(tr.attempted_steps(), 2);

    let mut grads = tr.compute_gradients(&batch(2)).unwrap();
    grads.grads[0].data_mut()[5] = f64::INFINITY;
    assert!(tr.apply(grads).unwrap().skipped);
    assert_eq!(tr.model.checksum(), params);
}

#[test]
fn zero_aux_coefficient_is_pure_cross_entropy() {
    let mut tr = trainer(3, 100);
    tr.config.aux_coeff = 0.0;
    let g = tr.compute_gradients(&batch(4)).unwrap();
    assert_eq!(g.loss, g.ce_loss);
    assert!(g.aux_loss > 0.0);
}

#[test]
fn repeated_steps_on_fixed_batch_reduce_loss() {
    let mut tr = trainer(5, 100);
    let b = batch(6);
    let l0 = tr.eval_loss(std::slice::from_ref(&b)).unwrap();
    tr.train_step(&b).unwrap();
    let l1 = tr.eval_loss(std::slice::from_ref(&b)).unwrap();
    tr.train_step(&b).unwrap();
    let l2 = tr.eval_loss(std::slice::from_ref(&b)).unwrap();
    assert!(l1 < l0 && l2 < l1, "{l0} {l1} {l2}");
}

#[test]
fn rollback_restores_bit_exactly() {
    let mut tr = trainer(7, 100);
    for s in 0..3 {
        tr.train_step(&batch(10 + s)).unwrap();
    }
    let mut mgr = CheckpointManager::new(CheckpointPolicy::default(), 9);
    mgr.save(&tr);
    let (params, opt, step) = (tr.model.checksum(), tr.optimizer.checksum(), tr.optimizer.step());
    let saved_values: Vec<Vec<f64>> = tr.model.params().iter().map(|p| p.value.data().to_vec()).collect();
    for s in 0..4 {
        tr.train_step(&batch(20 + s)).unwrap();
    }
    assert_ne!(tr.model.checksum(), params);
    let event = mgr.rollback(&mut tr, f64::NAN).unwrap();
    assert_eq!(event.restored_step, step);
    assert_eq!(tr.model.checksum(), params);
    assert_eq!(tr.optimizer.checksum(), opt);
    assert_eq!(tr.optimizer.step(), step);
    for (p, v) in tr.model.params().iter().zip(&saved_values) {
        assert!(p.value.data().iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(tr.attempted_steps(), 7);
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let mut tr = trainer(8, 100);
    tr.train_step(&batch(1)).unwrap();
    let mut ckpt = Checkpoint::from_model(&tr.model);
    ckpt.optimizer = Some(tr.optimizer.snapshot());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
    let model: GlamModel64 = back.restore_model().unwrap();
    assert_eq!(model.checksum(), tr.model.checksum());
}

#[test]
fn scripted_loss_spikes_trigger_divergence() {
    for spike in [f64::NAN, 7.0] {
        let mut m = CheckpointManager::new(CheckpointPolicy::default(), 0);
        assert!(!m.observe(2.0));
        assert!(!m.observe(2.0));
        assert!(m.observe(spike), "spike {spike}");
    }
}

#[test]
fn rollback_without_checkpoint_is_error() {
    let mut tr = trainer(0, 10);
    let mut m = CheckpointManager::new(CheckpointPolicy::default(), 0);
    assert!(m.rollback(&mut tr, 9.0).is_err());
}

#[test]
fn run_rolls_back_and_logs() {
    let mut tr = trainer(11, 50);
    // Any loss above half the trailing median counts as divergence.
    let policy = CheckpointPolicy { interval: 1000, divergence_threshold: 0.5, window: 5 };
    let mut mgr = CheckpointManager::new(policy, 4);
    let initial = tr.model.checksum();
    let mut log = TrainLog::new();
    run(&mut tr, &mut UniformTokens::new(8, 16, 32, 2), 3, Some(&mut mgr), &mut log).unwrap();
    let records = log.records();
    assert!(records[0].rollback.is_none());
    let event = records[1].rollback.as_ref().expect("second step diverges");
    assert_eq!(event.restored_step, 0);
    assert_eq!(records[1].optimizer_step, 0);
    assert!(mgr.rollback_count() >= 1);
    if records[2].rollback.is_some() {
        assert_eq!(tr.model.checksum(), initial);
    }
    let jsonl = log.to_jsonl().unwrap();
    assert_eq!(jsonl.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert!(first["expert_load"].as_array().unwrap().len() == 1);
}

#[test]
fn training_is_bit_reproducible() {
    let go = || {
        let mut tr = trainer(13, 500);
        let mut log = TrainLog::new();
        let mut src = UniformTokens::new(8, 16, 32, 21);
        let mut mgr = CheckpointManager::new(CheckpointPolicy::default(), 1);
        run(&mut tr, &mut src, 500, Some(&mut mgr), &mut log).unwrap();
        (tr.model.checksum(), tr.optimizer.checksum(), log.to_jsonl().unwrap())
    };
    let a = go();
    let b = go();
    assert_eq!(a, b);
}

#[test]
fn jsonl_log_written_to_disk() {
    let mut tr = trainer(1, 5);
    let mut log = TrainLog::new();
    run(&mut tr, &mut UniformTokens::new(8, 16, 32, 3), 5, None, &mut log).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    log.write_jsonl(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 5);
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["step"], i as u64 + 1);
        assert!(v["lr"].as_f64().unwrap() > 0.0);
    }
}
