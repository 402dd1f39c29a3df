mod common;

use std::sync::Arc;

use common::random_position;
use multizero::game::{GameDescriptor, StateTensor};
use multizero::mcts::Evaluator;
use multizero::network::{forward, init_parameters, NetworkConfig, NetworkEvaluator, Parameters};
use multizero::util::{masked_softmax, seeded_rng};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

/// Learnable parameter count from the architecture's shape arithmetic alone.
fn expected_learnable(c: usize, planes: usize, area: usize, se: usize, hidden: usize, policy: usize, n: usize, blocks: usize) -> usize {
    let norm = 2 * c;
    let stem = 9 * planes * c + norm;
    let block = (se * c + se) + (c * se + c) + 2 * (norm + 9 * c * c);
    let policy_head = (2 * c + 2) + (policy * 2 * area + policy);
    let value_head = (c + 1) + (hidden * area + hidden) + (n * hidden + n);
    stem + blocks * block + policy_head + value_head
}

#[test]
fn reference_parameter_count_is_pinned() {
    let game = GameDescriptor::TIC_TAC_MO;
    let params = Parameters::zeros(NetworkConfig::reference(&game));
    assert_eq!(expected_learnable(64, 6, 15, 8, 64, 15, 3, 8), 606_103);
    assert_eq!(params.learnable_count(), 606_103);

    assert_eq!(Parameters::zeros(NetworkConfig::desk(&game)).learnable_count(), 11_663);
    assert_eq!(Parameters::zeros(NetworkConfig::tiny(&game)).learnable_count(), 1_185);

    let c33 = GameDescriptor::CONNECT_3X3;
    let desk = Parameters::zeros(NetworkConfig::desk(&c33));
    assert_eq!(desk.learnable_count(), expected_learnable(16, 6, 42, 4, 32, 7, 3, 2));
}

#[test]
fn stem_activation_variance_on_unit_inputs() {
    let game = GameDescriptor::TIC_TAC_MO;
    let cfg = NetworkConfig::reference(&game);
    let params = init_parameters(cfg.clone(), &mut seeded_rng(17));
    let w = &params.tensor("stem.conv.weight").unwrap().data;
    let (rows, cols, planes, c) = (cfg.board_rows, cfg.board_cols, cfg.input_planes, cfg.channels);
    let mut rng = seeded_rng(18);
    let (mut sum, mut sum_sq, mut count) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..rows * cols * planes).map(|_| StandardNormal.sample(&mut rng)).collect();
        for o in 0..c {
            for r in 0..rows as isize {
                for q in 0..cols as isize {
                    let mut acc = 0.0;
                    for i in 0..planes {
                        for dr in -1..=1isize {
                            for dq in -1..=1isize {
                                let (rr, qq) = (r + dr, q + dq);
                                if rr < 0 || qq < 0 || rr >= rows as isize || qq >= cols as isize {
                                    continue;
                                }
                                let wi = ((o * planes + i) * 3 + (dr + 1) as usize) * 3 + (dq + 1) as usize;
                                let xi = (rr as usize * cols + qq as usize) * planes + i;
                                acc += f64::from(w[wi]) * x[xi];
                            }
                        }
                    }
                    sum += acc;
                    sum_sq += acc * acc;
                    count += 1;
                }
            }
        }
    }
    let mean = sum / count as f64;
    let var = sum_sq / count as f64 - mean * mean;
    assert!((0.5..=2.0).contains(&var), "variance {var}");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let game = GameDescriptor::CONNECT_3X3;
    let params = init_parameters(NetworkConfig::desk(&game), &mut seeded_rng(4));
    let dir = tempfile::tempdir().unwrap();
    params.save(dir.path()).unwrap();
    let loaded = Parameters::load(dir.path()).unwrap();
    let inputs: Vec<StateTensor> = (0..8).map(|i| random_position(&game, &mut seeded_rng(i)).encode()).collect();
    assert_eq!(forward(&params, &inputs).unwrap(), forward(&loaded, &inputs).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("network.json")).unwrap()).unwrap();
    let arrays = manifest["arrays"].as_array().unwrap();
    assert_eq!(arrays.len(), params.tensors().len());
    let mut offset = 0;
    for (entry, tensor) in arrays.iter().zip(params.tensors()) {
        assert_eq!(entry["name"], tensor.name.as_str());
        assert_eq!(entry["dtype"], "f32");
        assert_eq!(entry["offset"].as_u64().unwrap() as usize, offset);
        offset += 4 * tensor.data.len();
    }
    assert_eq!(std::fs::metadata(dir.path().join("network.bin")).unwrap().len() as usize, offset);
}

#[test]
fn evaluator_matches_batched_forward() {
    let game = GameDescriptor::TIC_TAC_MO;
    let params = Arc::new(init_parameters(NetworkConfig::tiny(&game), &mut seeded_rng(2)));
    let eval = NetworkEvaluator::new(params.clone());
    let states: Vec<StateTensor> = (0..5).map(|i| random_position(&game, &mut seeded_rng(i)).encode()).collect();
    let batched = forward(&params, &states).unwrap();
    for (s, out) in states.iter().zip(&batched) {
        let single = eval.evaluate(s).unwrap();
        assert_eq!(single.policy_logits, out.policy_logits);
        assert_eq!(single.value, out.value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_are_finite_and_values_strictly_bounded(seed in 0u64..10_000, scale in 0.1f32..50.0) {
        let game = GameDescriptor::CONNECT_3X3;
        let mut params = init_parameters(NetworkConfig::tiny(&game), &mut seeded_rng(seed));
        for t in params.tensors_mut() {
            for x in &mut t.data {
                *x *= scale;
            }
        }
        let state = random_position(&game, &mut seeded_rng(seed + 1));
        let out = &forward(&params, &[state.encode()]).unwrap()[0];
        prop_assert!(out.policy_logits.iter().all(|l| l.is_finite()));
        for &v in out.value.as_slice() {
            prop_assert!(v > -1.0 && v < 1.0);
        }
    }

    #[test]
    fn masked_softmax_is_a_distribution_on_its_support(
        logits in prop::collection::vec(-30.0f64..30.0, 15),
        mask in prop::collection::vec(any::<bool>(), 15),
    ) {
        let support: Vec<usize> = (0..15).filter(|&i| mask[i]).collect();
        prop_assume!(!support.is_empty());
        let p = masked_softmax(&logits, &support);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for i in 0..15 {
            if !mask[i] {
                prop_assert_eq!(p[i], 0.0);
            }
        }
    }
}
