//! Model structure: block wiring, shapes, parameter counts and the canonical
//! parameter order.

use nfcnn_core::blocks::{FusionBlock, BRANCH_WIDTHS, FUSION_DEPTHS};
use nfcnn_core::loss::total_loss;
use nfcnn_core::model::{model_forward, ModelConfig, Parameters};
use nfcnn_core::{rng_for, Phase, Tensor};

/// Learnable scalars of one 3x3 layer, counted by hand.
fn layer_params(cin: usize, cout: usize, normalized: bool) -> usize {
    9 * cin * cout + if normalized { 2 * cout } else { cout }
}

fn branch_params(c: usize, hidden: &[usize]) -> usize {
    let mut cin = c;
    let mut total = 0;
    for &w in hidden {
        total += layer_params(cin, w, true);
        cin = w;
    }
    total + layer_params(cin, c, false)
}

fn uniform_params(depth: usize, cin: usize, f: usize, cout: usize, plain_last: bool) -> usize {
    let mut total = 0;
    let mut c = cin;
    for i in 0..depth {
        let out = if i + 1 == depth { cout } else { f };
        total += layer_params(c, out, !(plain_last && i + 1 == depth));
        c = out;
    }
    total
}

fn fusion_params(c: usize, f: usize) -> usize {
    3 * uniform_params(3, c, f, f, false)
        + 3 * uniform_params(4, 2 * c, f, f, false)
        + uniform_params(5, 6 * f, f, f, false)
        + uniform_params(6, f + 3 * c, f, c, true)
}

#[test]
fn depths_and_widths_follow_the_schedule() {
    assert_eq!(BRANCH_WIDTHS, [32, 64, 128, 256, 256, 128, 64, 32]);
    assert_eq!(FUSION_DEPTHS, [3, 4, 5, 6]);
    let p = Parameters::<f32>::from_seed(ModelConfig::default(), 0).unwrap();
    assert_eq!(p.stages[0].clean.layers.len(), 9);
    let f = &p.fusions[0];
    let depths: Vec<usize> = f.stacks().map(|s| s.layers.len()).collect();
    assert_eq!(depths, vec![3, 3, 3, 4, 4, 4, 5, 6]);
    assert_eq!(f.c.layers[0].in_channels(), 6 * 32);
    assert_eq!(f.d.layers[0].in_channels(), 32 + 3);
    assert_eq!(f.d.layers.last().unwrap().out_channels(), 1);
    assert!(f.d.layers.last().unwrap().norm.is_none());
}

#[test]
fn parameter_counts_match_closed_form() {
    for (c, stages, fusion) in [(1, 2, true), (3, 2, true), (1, 3, true), (1, 2, false), (3, 4, false)] {
        let config = ModelConfig {
            image_channels: c,
            stages,
            fusion_enabled: fusion,
            ..ModelConfig::default()
        };
        let p = Parameters::<f32>::from_seed(config.clone(), 1).unwrap();
        let fusions = if fusion { stages - 1 } else { 0 };
        let want = stages * 2 * branch_params(c, &BRANCH_WIDTHS) + fusions * fusion_params(c, 32);
        assert_eq!(config.parameter_count(), want);
        assert_eq!(p.parameter_count(), want);
    }
    // One gray T=2 model, evaluated by hand.
    assert_eq!(branch_params(1, &BRANCH_WIDTHS), 1_366_465);
    assert_eq!(fusion_params(1, 32), 282_209);
    assert_eq!(ModelConfig::default().parameter_count(), 4 * 1_366_465 + 282_209);
}

#[test]
fn learnable_tensor_count() {
    // Branch: 8 normalized layers (weight, gamma, beta) + plain (weight, bias).
    // Fusion: 3*3 + 3*4 + 5 normalized layers and 5 + 1 layers in D.
    let p = Parameters::<f32>::from_seed(ModelConfig::reduced(2), 0).unwrap();
    let branch = 8 * 3 + 2;
    let fusion = (3 * 3 + 3 * 4 + 5 + 5) * 3 + 2;
    assert_eq!(p.learnable_count(), 2 * 2 * branch + fusion);
    assert_eq!(p.learnable_count(), 199);
}

#[test]
fn two_stage_model_has_one_fusion_block() {
    let p = Parameters::<f32>::from_seed(ModelConfig::default(), 0).unwrap();
    assert_eq!(p.fusions.len(), 1);
    let ablated = Parameters::<f32>::from_seed(
        ModelConfig {
            fusion_enabled: false,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    assert!(ablated.fusions.is_empty());
    assert!(ablated.parameter_count() < p.parameter_count());
    assert!(ablated.named_tensors().iter().all(|(n, _)| !n.starts_with("fusion")));
    assert!(p.named_tensors().iter().any(|(n, _)| n.starts_with("fusion1.")));
}

#[test]
fn tensor_names_are_unique_and_cover_every_stack() {
    let p = Parameters::<f32>::from_seed(ModelConfig::reduced(2), 0).unwrap();
    let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    for stack in FusionBlock::<f32>::STACK_NAMES {
        assert!(names.iter().any(|n| n.starts_with(&format!("fusion1.{stack}.layer1."))));
    }
    assert!(names.contains(&"stage2.noise.layer9.bias".to_string()));
}

#[test]
fn every_output_matches_input_shape() {
    for (c, h, w, stages, fusion) in [(1, 7, 5, 2, true), (3, 6, 9, 3, true), (1, 4, 4, 3, false), (1, 1, 3, 2, true)] {
        let config = ModelConfig {
            image_channels: c,
            stages,
            fusion_enabled: fusion,
            ..ModelConfig::reduced(3)
        };
        let p = Parameters::<f32>::from_seed(config, 2).unwrap();
        let x = Tensor::<f32>::uniform(&[2, c, h, w], 0.0, 1.0, &mut rng_for(0, 0));
        for phase in [Phase::Train, Phase::Eval] {
            let mut s = p.session(phase, rng_for(1, 1));
            let y = s.input(x.clone());
            let vars = model_forward(&mut s, &p, y).unwrap();
            assert_eq!(vars.stages.len(), stages);
            assert_eq!(vars.stage_inputs.len(), stages);
            assert_eq!(vars.fusion_inputs.len(), if fusion { stages - 1 } else { 0 });
            for v in vars
                .stages
                .iter()
                .flat_map(|st| [st.clean, st.noise])
                .chain(vars.stage_inputs.iter().copied())
                .chain([vars.denoised])
            {
                assert_eq!(s.tape.shape(v), x.shape());
            }
        }
    }
}

#[test]
fn every_learnable_receives_a_gradient() {
    let p = Parameters::<f64>::from_seed(ModelConfig::reduced(3).without_dropout(), 4).unwrap();
    let mut rng = rng_for(4, 4);
    let clean = Tensor::<f64>::uniform(&[2, 1, 6, 6], 0.0, 1.0, &mut rng);
    let noise = Tensor::<f64>::uniform(&[2, 1, 6, 6], -0.1, 0.1, &mut rng);
    let noisy = clean.zip_map(&noise, "add", |a, b| a + b).unwrap();
    let mut s = p.session(Phase::Train, rng_for(0, 0));
    let y = s.input(noisy);
    let x = s.input(clean);
    let n = s.input(noise);
    let vars = model_forward(&mut s, &p, y).unwrap();
    let loss = total_loss(&mut s.tape, &vars.stages, x, n, 1.0, 0.01).unwrap();
    s.backward(loss.total).unwrap();
    let grads = s.gradients().unwrap();
    let learnables = p.learnables();
    assert_eq!(grads.len(), learnables.len());
    for (i, (g, t)) in grads.iter().zip(&learnables).enumerate() {
        assert_eq!(g.shape(), t.shape());
        assert!(g.data().iter().any(|v| *v != 0.0), "learnable {i} has an all-zero gradient");
    }
}

#[test]
fn eval_forward_is_deterministic_and_batch_independent() {
    let p = Parameters::<f32>::from_seed(ModelConfig::reduced(3), 5).unwrap();
    let x = Tensor::<f32>::uniform(&[3, 1, 5, 5], 0.0, 1.0, &mut rng_for(5, 5));
    let a = p.denoise(&x).unwrap();
    assert_eq!(a, p.denoise(&x).unwrap());
    // Eval mode uses running statistics, so each sample is processed alone.
    let single = p.denoise(&x.sample(1)).unwrap();
    assert_eq!(single.data(), a.sample(1).data());
}

#[test]
fn invalid_configs_are_rejected() {
    for config in [
        ModelConfig {
            stages: 0,
            ..ModelConfig::default()
        },
        ModelConfig {
            image_channels: 2,
            ..ModelConfig::default()
        },
        ModelConfig {
            slope: 1.5,
            ..ModelConfig::default()
        },
    ] {
        assert!(Parameters::<f32>::from_seed(config, 0).is_err());
    }
}
