use accr_core::augment::TransformSpec;
use accr_core::data::{batcher, make_paired_surrogate, DomainPair};
use accr_core::losses::LossWeights;
use accr_core::models::{DiscriminatorConfig, GeneratorConfig, Net};
use accr_core::training::{
    read_metrics, train, train_step, TrainConfig, TrainState, UpdateOrder, Variant, CHECKPOINT_DIR, METRICS_FILE,
};

fn tiny(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        epochs_constant: 1,
        epochs_decay: 2,
        batch_size: 4,
        transform: TransformSpec::jitter(),
        seed: 5,
        data_seed: 9,
        generator: GeneratorConfig { width: 4, res_blocks: 1, ..Default::default() },
        discriminator: DiscriminatorConfig { width: 4, strides: vec![2, 1], ..Default::default() },
        ..Default::default()
    }
}

fn pair() -> DomainPair {
    make_paired_surrogate(8, 8, 3).unwrap()
}

fn run_steps(cfg: &TrainConfig, steps: usize) -> TrainState {
    let data = pair();
    let mut state = TrainState::new(cfg).unwrap();
    state.epoch = 2;
    let b1 = batcher(&data.source, 4, 1, true).unwrap();
    let b2 = batcher(&data.target, 4, 2, true).unwrap();
    for e in 0..steps.div_ceil(2) as u64 {
        for ((_, x1), (_, x2)) in b1.epoch(e).zip(b2.epoch(e)) {
            if state.step as usize == steps {
                break;
            }
            train_step(&mut state, &x1, &x2, cfg).unwrap();
        }
    }
    state
}

#[test]
fn zero_weight_variants_collapse_onto_each_other() {
    let none = LossWeights { lambda_real: 0.0, lambda_fake: 0.0, lambda_rec: 0.0, ..Default::default() };
    let base = run_steps(&tiny(Variant::Baseline), 3);
    let accr_zero = run_steps(&TrainConfig { weights: none, ..tiny(Variant::Accr) }, 3);
    assert_eq!(base.bundle, accr_zero.bundle);

    let only_real = LossWeights { lambda_fake: 0.0, lambda_rec: 0.0, ..Default::default() };
    let cr = run_steps(&tiny(Variant::Cr), 3);
    let accr_real = run_steps(&TrainConfig { weights: only_real, ..tiny(Variant::Accr) }, 3);
    assert_eq!(cr.bundle, accr_real.bundle);
    assert_ne!(cr.bundle, base.bundle);

    let gp_zero = run_steps(&TrainConfig { lambda_gp: 0.0, ..tiny(Variant::Gp) }, 3);
    assert_eq!(base.bundle, gp_zero.bundle);
}

#[test]
fn discriminator_update_ignores_generator_update() {
    let cfg = tiny(Variant::Accr);
    let g_first = run_steps(&cfg, 1);
    let d_first = run_steps(&TrainConfig { update_order: UpdateOrder::DiscriminatorFirst, ..cfg }, 1);
    assert_eq!(g_first.bundle.d1, d_first.bundle.d1);
    assert_eq!(g_first.bundle.d2, d_first.bundle.d2);
    assert_ne!(g_first.bundle.g1, d_first.bundle.g1);
}

#[test]
fn every_network_moves_and_losses_are_finite() {
    let cfg = tiny(Variant::Accr);
    let fresh = TrainState::new(&cfg).unwrap();
    let trained = run_steps(&cfg, 2);
    let b = (&fresh.bundle, &trained.bundle);
    assert_ne!(b.0.g1.params(), b.1.g1.params());
    assert_ne!(b.0.g2.params(), b.1.g2.params());
    assert_ne!(b.0.d1.params(), b.1.d1.params());
    assert_ne!(b.0.d2.params(), b.1.d2.params());
    assert_eq!(trained.opt_g1.steps(), 2);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = tiny(Variant::Accr);
    let data = pair();
    let straight = train(&cfg, &data, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let full = train(&cfg, &data, Some(dir.path())).unwrap();
    assert_eq!(full, straight);
    let records = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(records.len(), 6);
    assert_eq!(records[0].weights.lambda_fake, 0.0);
    assert_eq!(records[5].weights.lambda_fake, 0.5);
    assert!(records[5].lr_g < records[0].lr_g);

    let ckpts = dir.path().join(CHECKPOINT_DIR);
    std::fs::remove_file(ckpts.join("epoch_0002.ckpt")).unwrap();
    std::fs::remove_file(ckpts.join("epoch_0001.ckpt")).unwrap();
    let resumed = train(&cfg, &data, Some(dir.path())).unwrap();
    assert_eq!(resumed, straight);
    assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), records);
}

#[test]
fn checkpoint_from_other_config_is_refused() {
    let cfg = tiny(Variant::Accr);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    TrainState::new(&cfg).unwrap().save(&path, &cfg).unwrap();
    assert_eq!(TrainState::load(&path, &cfg).unwrap(), TrainState::new(&cfg).unwrap());
    assert!(TrainState::load(&path, &TrainConfig { seed: 6, ..cfg }).is_err());
}

#[test]
fn oversized_batch_is_a_validation_error() {
    let cfg = TrainConfig { batch_size: 64, ..tiny(Variant::Baseline) };
    assert!(train(&cfg, &pair(), None).is_err());
}
