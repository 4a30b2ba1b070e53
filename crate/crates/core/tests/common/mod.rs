//! Shared fixtures and property checks for the integration tests.
#![allow(dead_code)]

use ndarray::Array3;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use sdsbm::evaluation::{rmse_aligned, roc_auc, ScoreTable};
use sdsbm::inference::{e_step, m_step_p, m_step_theta, objective_with_averages, responsibilities};
use sdsbm::io::{ModelArchive, Vocabulary};
use sdsbm::prior::{concentration, dirichlet_mode, neighbour_average, NeighbourWeights, ParamFamily};
use sdsbm::{BlockTensor, Dataset, FittedModel, MembershipTensor, Observation, PriorConfig};

pub fn simplex_rows(rng: &mut impl Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    let mut v = Array3::from_shape_fn(shape, |_| rng.sample::<f64, _>(Exp1) + 1e-3);
    for mut row in v.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    v
}

/// A small random problem: data, parameters and a prior.
#[derive(Debug, Clone)]
pub struct Instance {
    pub data: Dataset,
    pub theta: MembershipTensor,
    pub p: BlockTensor,
    pub prior: PriorConfig,
}

pub fn instance(
    seed: u64,
    (epochs, nodes, clusters, labels): (usize, usize, usize, usize),
    observations: usize,
    beta: f64,
    static_p: bool,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = (0..observations)
        .map(|_| {
            Observation::new(
                rng.random_range(0..nodes),
                rng.random_range(0..labels),
                rng.random_range(0..epochs),
            )
        })
        .collect();
    let data = Dataset::new(nodes, labels, epochs, obs).unwrap();
    let theta = MembershipTensor::new(simplex_rows(&mut rng, (epochs, nodes, clusters))).unwrap();
    let slices = if static_p { 1 } else { epochs };
    let p = BlockTensor::new(simplex_rows(&mut rng, (slices, clusters, labels))).unwrap();
    let prior = PriorConfig {
        beta_theta: beta,
        beta_p: beta,
        kernel_exponent: rng.random_range(1..=2),
        window: None,
    };
    Instance {
        data,
        theta,
        p,
        prior,
    }
}

pub fn instances() -> impl Strategy<Value = Instance> {
    (
        any::<u64>(),
        (1usize..5, 1usize..6, 1usize..5, 1usize..5),
        1usize..60,
        prop_oneof![Just(0.0), 0.0f64..50.0],
        any::<bool>(),
    )
        .prop_map(|(seed, dims, n, beta, st)| instance(seed, dims, n, beta, st))
}

fn block_average(inst: &Instance, p: &BlockTensor) -> sdsbm::prior::NeighbourAverage {
    if p.is_static() {
        sdsbm::prior::NeighbourAverage::inactive(1, p.clusters(), p.labels())
    } else {
        NeighbourWeights::new(inst.data.epoch_counts(), &inst.prior).average(p.view())
    }
}

fn check_rows(values: &Array3<f64>) -> Result<(), TestCaseError> {
    for row in values.rows() {
        prop_assert!(row.iter().all(|&x| x >= 0.0));
        prop_assert!((row.sum() - 1.0).abs() <= 1e-9, "row sums to {}", row.sum());
    }
    Ok(())
}

pub fn check_m_step_rows(inst: &Instance) -> Result<(), TestCaseError> {
    let stats = e_step(&inst.theta, &inst.p, &inst.data).unwrap();
    let weights = NeighbourWeights::new(inst.data.epoch_counts(), &inst.prior);
    let theta = m_step_theta(
        &inst.data,
        &stats,
        &weights.average(inst.theta.view()),
        inst.prior.beta_theta,
    );
    let (p, _) = m_step_p(&stats, &block_average(inst, &inst.p), inst.prior.beta_p);
    check_rows(theta.values())?;
    check_rows(p.values())
}

pub fn check_responsibilities(inst: &Instance) -> Result<(), TestCaseError> {
    for o in inst.data.observations() {
        let w = responsibilities(&inst.theta, &inst.p, o.node, o.label, o.epoch).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    Ok(())
}

pub fn check_mode_of_concentration(inst: &Instance) -> Result<(), TestCaseError> {
    let counts = inst.data.epoch_counts();
    for t in 0..inst.data.epochs() {
        let avg = neighbour_average(inst.theta.view(), counts, &inst.prior, t).unwrap();
        let alpha =
            concentration(inst.theta.view(), counts, &inst.prior, ParamFamily::Membership, t)
                .unwrap();
        for (a_row, avg_row) in alpha.alpha.rows().into_iter().zip(avg.rows.rows()) {
            let mode = dirichlet_mode(a_row.as_slice().unwrap()).unwrap();
            if mode.uniform {
                // flat prior, every point is a mode
                continue;
            }
            for (m, x) in mode.mode.iter().zip(avg_row) {
                prop_assert!((m - x).abs() <= 1e-12, "mode {m} vs average {x}");
            }
        }
    }
    Ok(())
}

/// Lower bound `sum_k q_k ln(theta_k p_k(o) / q_k)` of one observation's log-likelihood.
fn jensen_bound(joint: &[f64], q: &[f64]) -> f64 {
    joint
        .iter()
        .zip(q)
        .filter(|(_, &qk)| qk > 0.0)
        .map(|(j, qk)| qk * (j / qk).ln())
        .sum()
}

pub fn check_jensen(inst: &Instance, seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = inst.theta.clusters();
    for o in inst.data.observations() {
        let slice = inst.p.slice_for(o.epoch);
        let joint: Vec<f64> = (0..k)
            .map(|c| inst.theta.row(o.epoch, o.node)[c] * inst.p.row(slice, c)[o.label])
            .collect();
        let ll = joint.iter().sum::<f64>().ln();
        let w = responsibilities(&inst.theta, &inst.p, o.node, o.label, o.epoch).unwrap();
        prop_assert!((jensen_bound(&joint, &w) - ll).abs() <= 1e-10 * ll.abs().max(1.0));
        let other = simplex_rows(&mut rng, (1, 1, k));
        prop_assert!(jensen_bound(&joint, other.as_slice().unwrap()) <= ll + 1e-12);
    }
    Ok(())
}

/// One EM step with the neighbour averages held fixed never lowers the objective.
pub fn check_frozen_ascent(inst: &Instance) -> Result<(), TestCaseError> {
    let weights = NeighbourWeights::new(inst.data.epoch_counts(), &inst.prior);
    let theta_avg = weights.average(inst.theta.view());
    let block_avg = block_average(inst, &inst.p);
    let stats = e_step(&inst.theta, &inst.p, &inst.data).unwrap();
    let before = objective_with_averages(
        &inst.theta,
        &inst.p,
        stats.log_likelihood,
        &theta_avg,
        &block_avg,
        &inst.prior,
    );
    let theta = m_step_theta(&inst.data, &stats, &theta_avg, inst.prior.beta_theta);
    let (p, _) = m_step_p(&stats, &block_avg, inst.prior.beta_p);
    let after_ll = e_step(&theta, &p, &inst.data).unwrap().log_likelihood;
    let after = objective_with_averages(&theta, &p, after_ll, &theta_avg, &block_avg, &inst.prior);
    prop_assert!(
        after >= before - 1e-9 * before.abs().max(1.0),
        "objective fell from {before} to {after}"
    );
    Ok(())
}

pub fn check_rmse_permutation(seed: u64, clusters: usize) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (3, 4, clusters);
    let est = MembershipTensor::new(simplex_rows(&mut rng, shape)).unwrap();
    let truth = MembershipTensor::new(simplex_rows(&mut rng, shape)).unwrap();
    let mut perm: Vec<usize> = (0..clusters).collect();
    for i in (1..clusters).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let v = est.values();
    let permuted =
        MembershipTensor::new(Array3::from_shape_fn(shape, |(t, i, k)| v[[t, i, perm[k]]]))
            .unwrap();
    let a = rmse_aligned(&est, &truth).unwrap().rmse;
    let b = rmse_aligned(&permuted, &truth).unwrap().rmse;
    prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    prop_assert!(rmse_aligned(&permuted, &est).unwrap().rmse <= 1e-15);
    Ok(())
}

/// Fraction of positive/negative pairs ranked correctly, ties counting one half.
pub fn brute_force_auc(table: &ScoreTable) -> f64 {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (scores, truth) in table.rows() {
        for (o, &s) in scores.iter().enumerate() {
            if o == truth {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn score_tables() -> impl Strategy<Value = ScoreTable> {
    (2usize..5)
        .prop_flat_map(|labels| {
            let rows = 1..=(20 / labels);
            (
                Just(labels),
                proptest::collection::vec(
                    (proptest::collection::vec(0u8..5, labels), 0..labels),
                    rows,
                ),
            )
        })
        .prop_map(|(labels, rows)| {
            let mut table = ScoreTable::new(labels);
            for (scores, truth) in rows {
                let scores: Vec<f64> = scores.iter().map(|&s| s as f64 / 4.0).collect();
                table.push(&scores, truth).unwrap();
            }
            table
        })
}

pub fn check_auc(table: &ScoreTable) -> Result<(), TestCaseError> {
    let got = roc_auc(table).unwrap();
    let want = brute_force_auc(table);
    prop_assert_eq!(got, want);
    Ok(())
}

pub fn check_archive_round_trip(inst: &Instance) -> Result<(), TestCaseError> {
    let model = FittedModel::new(
        inst.theta.clone(),
        inst.p.clone(),
        inst.data.epoch_counts().to_vec(),
        inst.prior,
    )
    .unwrap();
    let nodes = Vocabulary::from_keys((0..model.nodes()).map(|i| format!("node {i}")).collect())
        .unwrap();
    let labels =
        Vocabulary::from_keys((0..model.labels()).map(|o| format!("l,{o}")).collect()).unwrap();
    let archive = ModelArchive::new(&model, &nodes, &labels, None, None).unwrap();
    let mut buf = Vec::new();
    archive.write(&mut buf).unwrap();
    let back = ModelArchive::read(&buf[..]).unwrap();
    let restored = back.model().unwrap();
    let bits = |a: &Array3<f64>| a.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    prop_assert_eq!(bits(restored.theta.values()), bits(model.theta.values()));
    prop_assert_eq!(bits(restored.p.values()), bits(model.p.values()));
    prop_assert_eq!(back.node_vocabulary().unwrap(), nodes);
    prop_assert_eq!(back, archive);
    Ok(())
}
