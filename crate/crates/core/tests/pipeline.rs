use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ticketforge::activation::Activation;
use ticketforge::construct::{construct, construct_2l, construct_l_plus_1, retry_block, ConstructConfig};
use ticketforge::io::{gen_target, ticket_from_str, ticket_to_string};
use ticketforge::manifest::{BlockKind, BlockRecord, CandidateRule, Mode};
use ticketforge::netcore::{Domain, Layer, Matrix, Network, Role};
use ticketforge::subsetsum::{self, SubsetSumProblem};
use ticketforge::verify::{audit, sup_error};

fn cfg(seed: u64) -> ConstructConfig {
    ConstructConfig { seed, ..ConstructConfig::default() }
}

fn one_weight(w: f64, act: Activation) -> Network {
    let layer = Layer::new(Matrix::from_rows(&[vec![w]]).unwrap(), vec![0.0], act).unwrap();
    Network::new(vec![layer], Domain::unit(1), Role::Target).unwrap()
}

#[test]
fn two_for_one_relu_weight() {
    let target = one_weight(0.5, Activation::Relu);
    let mut ok = 0;
    for seed in 0..200 {
        let t = construct_2l(&target, &cfg(seed)).unwrap();
        let man = t.manifest.unwrap();
        let weights: Vec<&BlockRecord> =
            man.blocks.iter().filter(|b| matches!(b.kind, BlockKind::Weight { .. })).collect();
        assert!(weights.iter().all(|b| b.tolerance <= 0.0125));
        if weights.iter().all(|b| b.achieved) {
            ok += 1;
        }
    }
    assert!(ok >= 198, "{ok}/200");
}

#[test]
fn one_for_one_pool_rates() {
    // Candidates are source weights U[-1, 1]; the target weight is 0.5.
    let rate = |m: usize, eps: f64| {
        let mut hits = 0;
        for seed in 0..2000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let p = SubsetSumProblem::new(0.5, xs.clone(), eps);
            let achieved = subsetsum::solve(&p).unwrap().achieved;
            // Brute force agrees on every instance.
            let brute = (0u32..1 << m).any(|mask| {
                let s: f64 = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| xs[i]).sum();
                (0.5 - s).abs() <= eps
            });
            assert_eq!(achieved, brute);
            hits += achieved as usize;
        }
        hits as f64 / 2000.0
    };
    let r10 = rate(10, 1e-3);
    let r20 = rate(20, 1e-3);
    assert!(r10 < r20);
    assert!(r20 >= 0.99, "{r20}");
}

#[test]
fn l_plus_1_depth_two_relu() {
    let target = gen_target(&[3, 6, 2], Activation::Relu, Some(Activation::Linear), 0.3, 5).unwrap();
    let t = construct_l_plus_1(&target, &cfg(5)).unwrap();
    assert_eq!(t.depth(), 3);
    assert!(sup_error(&target, &t, 10_000, 1).unwrap() <= 0.05);
    assert!(audit(&t).unwrap().clean());
}

#[test]
fn l_plus_1_reproduces_identity() {
    let target = one_weight(1.0, Activation::Linear);
    let t = construct_l_plus_1(&target, &cfg(1)).unwrap();
    assert_eq!(t.depth(), 2);
    for x in [-1.0, -0.3, 0.0, 0.4, 1.0] {
        assert!((t.forward(&[x]).unwrap()[0] - x).abs() <= 0.05);
    }
}

#[test]
fn two_l_depth_two() {
    for act in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid] {
        let target = gen_target(&[3, 4, 2], act, None, 0.0, 3).unwrap();
        let t = construct_2l(&target, &cfg(3)).unwrap();
        assert_eq!(t.depth(), 4);
        let e = sup_error(&target, &t, 10_000, 3).unwrap();
        assert!(e <= 0.05, "{act}: {e}");
    }
}

#[test]
fn sigmoid_pairs_cancel() {
    let target = gen_target(&[2, 3, 1], Activation::Sigmoid, None, 0.0, 4).unwrap();
    let t = construct_2l(&target, &cfg(4)).unwrap();
    let man = t.manifest.as_ref().unwrap();
    for b in &man.blocks {
        let off = b.candidate.offset().expect("sigmoid slabs are mirrored");
        let w = &t.source.layer(b.layer - 1).weights;
        let s: f64 = b.selected.iter().map(|&k| w[(b.row, k)] + w[(b.row, k + off)]).sum();
        assert_eq!(s, 0.0);
    }
    let report = audit(&t).unwrap();
    assert!(report.clean() && report.cancellation_pairs > 0);
}

#[test]
fn copy_plan_and_block_counts() {
    let arch = [3, 5, 4, 2];
    let target = gen_target(&arch, Activation::Relu, None, 0.0, 6).unwrap();
    let c = cfg(6);
    let t = construct_l_plus_1(&target, &c).unwrap();
    let man = t.manifest.as_ref().unwrap();
    let plan = &man.copy_plan;
    assert_eq!(plan.len(), 3);
    // The layer feeding the output keeps the larger output pool.
    for (entry, keep) in plan[..2].iter().zip([c.pool, c.output_pool()]) {
        assert!(entry.copies_per_neuron().iter().all(|&n| n == keep));
        assert_eq!(entry.carriers.len(), keep);
    }
    assert_eq!(plan[2].copies, vec![vec![0], vec![1]]);
    assert!(plan[2].carriers.is_empty());

    // Per layer: one block per (copy, input) plus one bias block, the
    // two-for-one weights split by sign, and one block per built carrier.
    let count = |layer: usize| man.blocks.iter().filter(|b| b.layer == layer).count();
    assert_eq!(count(2), c.pool * arch[1] * (2 * arch[0] + 1) + c.pool);
    let k = c.output_pool();
    assert_eq!(count(3), k * arch[2] * (arch[1] + 1) + k);
    assert_eq!(count(4), arch[3] * (arch[2] + 1));
    let report = audit(&t).unwrap();
    assert_eq!(report.attempted, man.blocks.len());
    assert_eq!(report.attempted, report.achieved + report.failed);

    // Every copy row actually carries kept parameters.
    for entry in plan {
        let mask = &t.masks[entry.layer - 1];
        for &r in entry.copies.iter().flatten().chain(&entry.carriers) {
            assert!(mask.bias[r] || (0..mask.cols).any(|j| mask.weight(r, j)), "row {r} of layer {}", entry.layer);
        }
    }
}

#[test]
fn ticket_file_round_trip() {
    let target = gen_target(&[2, 4, 2], Activation::Tanh, None, 0.2, 12).unwrap();
    for mode in [Mode::LPlus1, Mode::TwoL] {
        let t = construct(&target, mode, &cfg(12)).unwrap();
        let text = ticket_to_string(&t).unwrap();
        let back = ticket_from_str(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(ticket_to_string(&back).unwrap(), text);
        let x = [0.3, -0.8];
        let (a, b) = (t.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn tampered_ticket_file_is_rejected() {
    let target = gen_target(&[2, 2, 1], Activation::Relu, None, 0.0, 2).unwrap();
    let text = ticket_to_string(&construct_2l(&target, &cfg(2)).unwrap()).unwrap();
    assert!(ticket_from_str(&text.replace("ticketforge/1", "ticketforge/2")).is_err());
    assert!(ticket_from_str(&text.replace("\"source_seed\":2", "\"source_seed\":3")).is_err());
    assert!(ticket_from_str(&text[..text.len() / 2]).is_err());
}

#[test]
fn adversarial_block_retries_fresh_draws() {
    let mut calls = Vec::new();
    let r = retry_block(4, |attempt| {
        calls.push(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(attempt as u64);
        let xs: Vec<f64> = (0..10).map(|_| -rng.gen_range(0.0..1.0)).collect();
        let sol = subsetsum::solve(&SubsetSumProblem::new(1.0, xs, 0.01))?;
        Ok(vec![BlockRecord {
            layer: 2,
            row: 0,
            kind: BlockKind::Weight { target_layer: 1, target_row: 0, target_col: 0 },
            sign: 0,
            candidate: CandidateRule::Weight,
            target: 1.0,
            tolerance: 0.01,
            pool: (0..10).collect(),
            selected: sol.indices,
            residual: sol.residual,
            achieved: sol.achieved,
            attempt: 0,
        }])
    })
    .unwrap();
    assert_eq!(calls, vec![0, 1, 2, 3]);
    assert!(!r.achieved);
    assert_eq!(r.blocks[0].residual, 1.0);
    assert!(r.blocks[0].coordinates().contains("target layer 1 weight (0, 0)"));
}

#[test]
fn strict_mode_names_the_failed_block() {
    let target = gen_target(&[2, 3, 1], Activation::Relu, None, 0.0, 1).unwrap();
    let c = ConstructConfig { strict: true, pool: 2, retries: 0, seed: 1, ..ConstructConfig::default() };
    let err = construct_l_plus_1(&target, &c).unwrap_err().to_string();
    assert!(err.contains("source layer"), "{err}");
}
