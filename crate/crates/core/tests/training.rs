use speedlimit_core::numerics::{Matrix, Tensor2D};
use speedlimit_core::search::SearchSpace;
use speedlimit_core::training::{
    backward, finetune_candidate, gradient_check, kd_loss, teacher_logits, train_distill,
    AdamConfig, AdamState, DistillData, Example, FinetuneConfig, Objective, SupermodelState,
    SupermodelTrainer, TrainConfig,
};
use speedlimit_core::transformer::{Architecture, ModelDims, ModelWeights};

fn scaled_model(arch: Architecture, classes: usize, seed: u64, factor: f64) -> ModelWeights<f64> {
    let mut m = ModelWeights::<f64>::instantiate(arch, ModelDims::new(classes), seed).unwrap();
    for t in m.params_mut() {
        t.scale_in_place(factor);
    }
    // non-trivial layer-norm parameters and biases
    for (i, b) in m.blocks.iter_mut().enumerate() {
        for (c, v) in b.attn_norm.gamma.data_mut().iter_mut().enumerate() {
            *v = 1.0 + 0.1 * ((c + i) as f64).sin();
        }
        for (c, v) in b.ffn_norm.beta.data_mut().iter_mut().enumerate() {
            *v = 0.05 * (c as f64).cos();
        }
        for (c, v) in b.ffn_in.bias.data_mut().iter_mut().enumerate() {
            *v = 0.1 * ((3 * c) as f64).sin();
        }
    }
    m
}

fn toy_examples(n: usize, len: usize, seed: u64) -> Vec<Example> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut next = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 33) as u32
    };
    (0..n)
        .map(|_| {
            let tokens: Vec<u32> = (0..len).map(|_| next() % 64).collect();
            let label = u32::from(tokens[0] < tokens[len - 1]);
            Example { tokens, label }
        })
        .collect()
}

#[test]
fn gradients_match_central_differences() {
    let m = scaled_model(Architecture::new(1, 24, 32), 3, 7, 25.0);
    let batch = vec![vec![1, 5, 9, 2, 7], vec![3, 3, 60, 0, 12]];
    let ce = gradient_check(
        &m,
        &batch,
        &Objective::CrossEntropy { labels: &[2, 0] },
        3e-5,
        1e-6,
    )
    .unwrap();
    assert!(ce.max_rel_error <= 1e-3, "{ce:?}");
    let teacher = Matrix::from_fn(2, 3, |r, c| (r as f64 - c as f64) * 0.7);
    let kd = gradient_check(
        &m,
        &batch,
        &Objective::Distill {
            teacher_logits: &teacher,
        },
        3e-5,
        1e-6,
    )
    .unwrap();
    assert!(kd.max_rel_error <= 1e-3, "{kd:?}");
}

#[test]
fn duplicating_the_batch_keeps_the_mean_gradient() {
    let m = scaled_model(Architecture::new(2, 24, 16), 2, 3, 10.0);
    let batch = vec![vec![4, 8, 15, 16], vec![23, 42, 0, 1]];
    let (l1, g1) = backward(&m, &batch, &Objective::CrossEntropy { labels: &[0, 1] }).unwrap();
    let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
    let (l2, g2) = backward(
        &m,
        &doubled,
        &Objective::CrossEntropy {
            labels: &[0, 1, 0, 1],
        },
    )
    .unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.tensors().into_iter().zip(g2.tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn zero_logits_give_uniform_head_gradient() {
    let mut m =
        ModelWeights::<f64>::instantiate(Architecture::new(1, 24, 16), ModelDims::new(2), 1)
            .unwrap();
    m.head.weight.fill(0.0);
    let (loss, g) = backward(
        &m,
        &[vec![1, 2, 3]],
        &Objective::CrossEntropy { labels: &[0] },
    )
    .unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-12);
    assert_eq!(g.as_weights().head.bias.data(), &[-0.5, 0.5]);
}

#[test]
fn kd_loss_cases() {
    let t = Tensor2D::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
    // scripted oracle: softmax and entropy
    let z: f64 = [0.5f64, -1.0, 2.0].iter().map(|v| v.exp()).sum();
    let p: Vec<f64> = [0.5f64, -1.0, 2.0].iter().map(|v| v.exp() / z).collect();
    let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
    assert!((kd_loss(&t, &t).unwrap() as f64 - entropy).abs() < 1e-6);

    let onehot = Tensor2D::new(1, 3, vec![-50.0, 50.0, -50.0]).unwrap();
    let s = Tensor2D::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
    let zs: f64 = [0.1f64, 0.2, 0.3].iter().map(|v| v.exp()).sum();
    let ce = -(0.2f64.exp() / zs).ln();
    assert!((kd_loss(&s, &onehot).unwrap() as f64 - ce).abs() < 1e-6);

    let student = Tensor2D::new(2, 2, vec![1.0, -1.0, 0.3, 0.0]).unwrap();
    let teacher = Tensor2D::new(2, 2, vec![0.0, 2.0, -0.4, 0.4]).unwrap();
    let mut expected = 0.0;
    for r in 0..2 {
        let s: Vec<f64> = student.row(r).iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = teacher.row(r).iter().map(|&v| v as f64).collect();
        let lse_s = s.iter().map(|v| v.exp()).sum::<f64>().ln();
        let zt: f64 = t.iter().map(|v| v.exp()).sum();
        expected -= (0..2)
            .map(|c| t[c].exp() / zt * (s[c] - lse_s))
            .sum::<f64>();
    }
    expected /= 2.0;
    assert!((kd_loss(&student, &teacher).unwrap() as f64 - expected).abs() < 1e-6);
    assert!(kd_loss(&student, &t).is_err());
}

#[test]
fn adam_trajectories_are_deterministic() {
    let run = || {
        let mut p = Tensor2D::from_fn(2, 2, |r, c| (r + c) as f32);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        for k in 0..20 {
            let g = Tensor2D::from_fn(2, 2, |r, c| ((k + r * 2 + c) as f32).sin());
            adam.update(vec![&mut p], vec![&g], 0.01).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}

fn distill_setup(arch: Architecture, n: usize) -> (ModelWeights<f32>, Vec<Example>, Tensor2D) {
    let dims = ModelDims::new(2);
    let teacher = ModelWeights::<f32>::instantiate(Architecture::new(1, 36, 24), dims, 99).unwrap();
    let data = toy_examples(n, 6, 4);
    let logits = teacher_logits(&teacher, &data).unwrap();
    (
        ModelWeights::instantiate(arch, dims, 5).unwrap(),
        data,
        logits,
    )
}

#[test]
fn supermodel_with_singleton_space_reduces_to_plain_distillation() {
    let arch = Architecture::new(1, 24, 16);
    let (model, data, logits) = distill_setup(arch, 64);
    let cfg = TrainConfig {
        submodels_per_step: 1,
        steps_per_update: 1,
        batch_size: 8,
        epochs: 2,
        peak_lr: 1e-2,
        ..TrainConfig::default()
    };
    let space = SearchSpace::new(vec![1], vec![24], vec![16]).unwrap();
    let dd = DistillData::new(&data, &logits).unwrap();
    let mut trainer = SupermodelTrainer::new(
        SupermodelState::new(model.clone(), cfg.adam),
        cfg.clone(),
        &space,
        dd,
    )
    .unwrap();
    trainer.run(None, |_, _| Ok(())).unwrap();
    let (plain, log) = train_distill(model, dd, &cfg).unwrap();
    assert_eq!(log.len(), 16);
    assert_eq!(trainer.state().model, plain);
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let (model, data, logits) = distill_setup(Architecture::new(2, 36, 40), 96);
    let cfg = TrainConfig {
        submodels_per_step: 2,
        steps_per_update: 2,
        batch_size: 8,
        epochs: 1,
        peak_lr: 1e-2,
        threads: 2,
        ..TrainConfig::default()
    };
    let space = SearchSpace::new(vec![1, 2], vec![12, 24, 36], vec![8, 24, 40]).unwrap();
    let dd = DistillData::new(&data, &logits).unwrap();
    let fresh = || SupermodelState::new(model.clone(), cfg.adam);

    let mut full = SupermodelTrainer::new(fresh(), cfg.clone(), &space, dd).unwrap();
    let mut steps = Vec::new();
    full.run(None, |r, _| {
        steps.push(r.step);
        Ok(())
    })
    .unwrap();
    assert_eq!(steps, (0..full.total_updates()).collect::<Vec<_>>());

    let dir = tempfile::tempdir().unwrap();
    let (mp, op) = (dir.path().join("m.ckpt"), dir.path().join("o.ckpt"));
    let mut first = SupermodelTrainer::new(fresh(), cfg.clone(), &space, dd).unwrap();
    first.run(Some(3), |_, _| Ok(())).unwrap();
    first.state().save(&mp, &op, 0).unwrap();
    let restored = SupermodelState::load(&mp, &op, cfg.adam).unwrap();
    assert_eq!(restored.update(), 3);
    let single = TrainConfig {
        threads: 1,
        ..cfg.clone()
    };
    let mut second = SupermodelTrainer::new(restored, single, &space, dd).unwrap();
    second.run(None, |_, _| Ok(())).unwrap();
    assert_eq!(second.state().model, full.state().model);
}

#[test]
fn finetune_candidate_is_deterministic_and_bounded() {
    let data = toy_examples(160, 8, 11);
    let (train, test) = data.split_at(128);
    let model =
        ModelWeights::<f32>::instantiate(Architecture::new(1, 24, 32), ModelDims::new(2), 2)
            .unwrap();
    let cfg = FinetuneConfig {
        epochs: 1,
        batch_size: 16,
        ..FinetuneConfig::default()
    };
    let (_, a) = finetune_candidate(model.clone(), train, test, &cfg).unwrap();
    let (_, b) = finetune_candidate(model.clone(), train, test, &cfg).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a));
    assert!(finetune_candidate(model, &[], test, &cfg).is_err());
}
