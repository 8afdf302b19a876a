//! Federation-layer checks: wire-format round trips and rejections, exact
//! byte accounting, invariance to site ordering, stale-anchor refusal, and
//! the privacy guarantees of the summary path.

mod common;

use std::collections::BTreeMap;

use common::max_abs_diff;
use fedtrans::estimators::{
    fed_target_only, fed_transfer_full_hessian, Algorithm, EstimatorConfig, InitStrategy, Tuning,
};
use fedtrans::federation::{
    decode_message, encode_message, run_exchange, CommLedger, GradientMessage, HessianMessage,
    Message, MessageKind, SiteNode, HEADER_LEN,
};
use fedtrans::glm::{packed_len, GlmFamily, PartitionedDataset};
use fedtrans::sim::{build_federated_scenario, CovarianceSpec, Scenario, ShiftKind, SimConfig,
    Standardization};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn tiny_scenario(seed: u64) -> Scenario {
    let config = SimConfig {
        sites: 2,
        n_target: 30,
        n_source: 40,
        n_features: 16,
        sparsity: 4,
        shift_support: 2,
        shift_size: 0.5,
        shift_kind: ShiftKind::Constant,
        target_covariance: CovarianceSpec {
            blocks: 2,
            block_size: 8,
            rho: 0.3,
        },
        source_covariance: CovarianceSpec {
            blocks: 2,
            block_size: 8,
            rho: 0.5,
        },
        test_size: 50,
        standardization: Standardization::ScaleOnly,
        seed,
    };
    build_federated_scenario(&config, GlmFamily::Logistic).expect("scenario builds")
}

fn fixed_config(rounds: usize) -> EstimatorConfig {
    let mut config = EstimatorConfig {
        rounds,
        algorithm: Algorithm::FullHessian,
        init: InitStrategy::SingleSite,
        leading_site: 1,
        tuning: Tuning::Fixed {
            lambda_w: 0.05,
            lambda_delta: 0.08,
            lambda_beta: 0.05,
        },
        delta_budget: Some(4),
        aggregation: false,
        ..EstimatorConfig::default()
    };
    config.penalty.anchor_budget = Some(8);
    config
}

proptest! {
    #[test]
    fn gradient_messages_round_trip_bit_for_bit(
        site_id in any::<u32>(),
        population_id in any::<u32>(),
        n_local in any::<u64>(),
        anchor_digest in any::<u64>(),
        dim in 1usize..12,
        payload_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(payload_seed);
        let payload: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1e12..1e12)).collect();
        let message = Message::Gradient(GradientMessage {
            site_id,
            population_id,
            n_local,
            anchor_digest,
            payload: Array1::from_vec(payload),
        });
        let bytes = encode_message(&message);
        prop_assert_eq!(bytes.len(), HEADER_LEN + 8 * dim);
        let decoded = decode_message(&bytes).expect("well-formed bytes decode");
        prop_assert_eq!(decoded, message);
    }

    #[test]
    fn hessian_messages_round_trip_bit_for_bit(
        site_id in any::<u32>(),
        population_id in any::<u32>(),
        n_local in any::<u64>(),
        anchor_digest in any::<u64>(),
        dim in 1usize..10,
        payload_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let len = packed_len(dim);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(payload_seed);
        let payload: Vec<f64> = (0..len).map(|_| rng.gen_range(-1e9..1e9)).collect();
        let message = Message::Hessian(HessianMessage {
            site_id,
            population_id,
            n_local,
            anchor_digest,
            dim,
            payload: Array1::from_vec(payload),
        });
        let bytes = encode_message(&message);
        prop_assert_eq!(bytes.len(), HEADER_LEN + 8 * len);
        let decoded = decode_message(&bytes).expect("well-formed bytes decode");
        prop_assert_eq!(decoded, message);
    }
}

#[test]
fn malformed_bytes_are_rejected_not_misread() {
    let message = Message::Gradient(GradientMessage {
        site_id: 2,
        population_id: 0,
        n_local: 31,
        anchor_digest: 0xfeed,
        payload: Array1::from_vec(vec![1.0, -2.0, 3.5]),
    });
    let good = encode_message(&message);
    assert!(decode_message(&good).is_ok());

    // Truncated header.
    for cut in [0, 1, HEADER_LEN - 1] {
        assert!(decode_message(&good[..cut]).is_err(), "header cut at {cut}");
    }
    // Flipped magic.
    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xff;
    assert!(decode_message(&bad_magic).is_err());
    // Unsupported version.
    let mut bad_version = good.clone();
    bad_version[4] = 0xee;
    bad_version[5] = 0xee;
    assert!(decode_message(&bad_version).is_err());
    // Unknown message type.
    let mut bad_kind = good.clone();
    bad_kind[6] = 9;
    assert!(decode_message(&bad_kind).is_err());
    // Payload shorter or longer than the header promises.
    assert!(decode_message(&good[..good.len() - 8]).is_err());
    let mut padded = good.clone();
    padded.extend_from_slice(&[0u8; 8]);
    assert!(decode_message(&padded).is_err());
    // Truncation inside a float.
    assert!(decode_message(&good[..good.len() - 3]).is_err());
}

#[test]
fn ledger_byte_counts_are_exact_for_every_transmission() {
    let scenario = tiny_scenario(404);
    let p = scenario.pooled.n_features();
    let mut ledger = CommLedger::new();
    let mut anchors = BTreeMap::new();
    anchors.insert(0u32, Array1::zeros(p));
    anchors.insert(1u32, Array1::zeros(p));
    let output = run_exchange(
        &scenario.sites,
        &[0, 1],
        &anchors,
        true,
        0,
        &mut ledger,
    )
    .expect("exchange runs");

    // Both sites hold both populations: 2 sites × 2 populations × 2 kinds.
    assert_eq!(ledger.entries().len(), 8);
    for entry in ledger.entries() {
        let expected_payload = match entry.kind {
            MessageKind::Gradient => 8 * p as u64,
            MessageKind::Hessian => 8 * packed_len(p) as u64,
        };
        assert_eq!(entry.payload_bytes, expected_payload);
        assert_eq!(entry.encoded_bytes, expected_payload + HEADER_LEN as u64);
    }
    assert_eq!(
        ledger.total_payload_bytes(MessageKind::Gradient),
        4 * 8 * p as u64
    );
    assert_eq!(
        ledger.total_payload_bytes(MessageKind::Hessian),
        4 * 8 * packed_len(p) as u64
    );
    let total: u64 = ledger.entries().iter().map(|e| e.encoded_bytes).sum();
    assert_eq!(ledger.total_encoded_bytes(), total);

    // The decoded output covers the same messages the ledger billed.
    assert_eq!(output.gradients_for(0).len(), 2);
    assert_eq!(output.hessians_for(1).len(), 2);
}

#[test]
fn site_order_does_not_change_the_estimate() {
    let scenario = tiny_scenario(405);
    let config = fixed_config(2);

    let mut forward_ledger = CommLedger::new();
    let forward = fed_transfer_full_hessian(
        &scenario.sites,
        GlmFamily::Logistic,
        &config,
        &mut forward_ledger,
    )
    .expect("forward order fits");

    let mut reversed_sites = scenario.sites.clone();
    reversed_sites.reverse();
    let mut reversed_ledger = CommLedger::new();
    let reversed = fed_transfer_full_hessian(
        &reversed_sites,
        GlmFamily::Logistic,
        &config,
        &mut reversed_ledger,
    )
    .expect("reversed order fits");

    assert!(
        max_abs_diff(forward.beta.view(), reversed.beta.view()) <= 1e-10,
        "site permutation moved the estimate"
    );
    assert_eq!(
        forward_ledger.total_encoded_bytes(),
        reversed_ledger.total_encoded_bytes()
    );
}

#[test]
fn summaries_from_a_stale_anchor_are_refused() {
    let scenario = tiny_scenario(406);
    let p = scenario.pooled.n_features();
    let mut ledger = CommLedger::new();
    let anchor = Array1::from_elem(p, 0.01);
    let mut anchors = BTreeMap::new();
    anchors.insert(0u32, anchor.clone());
    let output = run_exchange(&scenario.sites, &[0], &anchors, true, 0, &mut ledger)
        .expect("exchange runs");

    // Matching anchor assembles fine.
    assert!(output.surrogate(0, &anchor).is_ok());

    // A different anchor must be refused, not silently accepted.
    let stale = Array1::from_elem(p, 0.02);
    let err = output.surrogate(0, &stale).expect_err("stale anchor refused");
    assert!(
        err.to_string().contains("anchor"),
        "unexpected error: {err}"
    );
}

#[test]
fn surrogate_assembly_never_touches_raw_rows() {
    // The module that reassembles cross-site summaries into objectives must
    // work from messages alone: if it ever reached into a dataset for rows
    // or outcomes, pooled fits would stop being communication-bounded.
    let source = include_str!("../src/federation/surrogate.rs");
    for forbidden in ["local_dataset", ".design()", ".outcomes()", "PartitionedDataset"] {
        assert!(
            !source.contains(forbidden),
            "surrogate assembly references `{forbidden}`"
        );
    }
}

#[test]
fn target_only_fit_ignores_source_rows_entirely() {
    // Two hand-built shards; the variant flips every source outcome and
    // rescales source covariates.  The target-only estimate and its
    // communication bill must be bit-identical.
    let build = |source_scale: f64, source_flip: bool| -> Vec<SiteNode> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut sites = Vec::new();
        for site_id in [1u32, 2] {
            let n_target = if site_id == 1 { 40 } else { 20 };
            let n_source = 30;
            let n = n_target + n_source;
            let p = 10;
            let design_t = common::gaussian_design(n_target, p, &mut rng);
            let mut design_s = common::gaussian_design(n_source, p, &mut rng);
            design_s.mapv_inplace(|v| v * source_scale);
            let truth = common::random_coefficients(p, 3, &mut rng);
            let y_t = common::outcomes_for(
                GlmFamily::Logistic,
                design_t.view(),
                truth.view(),
                &mut rng,
            );
            let mut y_s = common::outcomes_for(
                GlmFamily::Logistic,
                design_s.view(),
                truth.view(),
                &mut rng,
            );
            if source_flip {
                y_s.mapv_inplace(|v| 1.0 - v);
            }
            let mut design = Array2::zeros((n, p));
            let mut outcomes = Array1::zeros(n);
            for i in 0..n_target {
                design.row_mut(i).assign(&design_t.row(i));
                outcomes[i] = y_t[i];
            }
            for i in 0..n_source {
                design.row_mut(n_target + i).assign(&design_s.row(i));
                outcomes[n_target + i] = y_s[i];
            }
            let mut populations = vec![0u32; n_target];
            populations.extend(std::iter::repeat(1u32).take(n_source));
            let data = PartitionedDataset::new(
                design,
                outcomes,
                vec![site_id; n],
                populations,
                false,
            )
            .expect("valid shard");
            sites.push(SiteNode::new(site_id, GlmFamily::Logistic, data).expect("site wraps"));
        }
        sites
    };

    let baseline_sites = build(1.0, false);
    let perturbed_sites = build(3.0, true);
    let config = fixed_config(2);

    let mut ledger_a = CommLedger::new();
    let beta_a = fed_target_only(
        &baseline_sites,
        GlmFamily::Logistic,
        &config,
        &mut ledger_a,
    )
    .expect("baseline fits");
    let mut ledger_b = CommLedger::new();
    let beta_b = fed_target_only(
        &perturbed_sites,
        GlmFamily::Logistic,
        &config,
        &mut ledger_b,
    )
    .expect("perturbed fits");

    assert_eq!(
        beta_a.iter().collect::<Vec<_>>(),
        beta_b.iter().collect::<Vec<_>>(),
        "source rows leaked into the target-only fit"
    );
    assert_eq!(
        ledger_a.total_encoded_bytes(),
        ledger_b.total_encoded_bytes()
    );
    // No Hessian-free ride either: the bill itself must be identical entry
    // by entry.
    assert_eq!(ledger_a.entries().len(), ledger_b.entries().len());
    for (a, b) in ledger_a.entries().iter().zip(ledger_b.entries()) {
        assert_eq!((a.round, a.site_id, a.kind), (b.round, b.site_id, b.kind));
        assert_eq!(a.encoded_bytes, b.encoded_bytes);
    }
}
