//! Cross-module pipeline properties on randomized instances: verdict /
//! oracle agreement, pruning invariance, witness validity, determinism, and
//! the rate ordering between sampling and certification.

use kpcert_core::fixtures::{self, GenParams};
use kpcert_core::lp::LpConfig;
use kpcert_core::milp::{self, SearchOutcome, SearchTols, VerdictStatus, VerifyOptions};
use kpcert_core::oracle;
use kpcert_core::problem::ProblemInstance;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn pool(seed: u64, count: usize, params: &GenParams) -> Vec<ProblemInstance> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| fixtures::random_instance(&mut rng, params))
        .collect()
}

#[test]
fn verdicts_agree_with_enumeration_on_small_instances() {
    let mut feasible = 0;
    for (idx, inst) in pool(2024, 60, &GenParams::small()).iter().enumerate() {
        let verdict = milp::verify(inst, &VerifyOptions::default()).unwrap();
        let oracle =
            oracle::enumerate_falsify(inst, &LpConfig::default(), oracle::DEFAULT_ENUM_CAP)
                .unwrap();
        match verdict.status {
            VerdictStatus::Robust => {
                assert!(!oracle.found(), "instance {idx}: robust but oracle found {:?}", oracle.witness)
            }
            VerdictStatus::Unknown => {
                feasible += 1;
                assert!(oracle.found(), "instance {idx}: unknown but oracle found nothing");
            }
            VerdictStatus::Inconclusive => {
                panic!("instance {idx}: inconclusive ({:?})", verdict.reason)
            }
        }
    }
    assert!(feasible >= 10, "want a healthy feasible share, got {feasible}");
}

#[test]
fn pruning_never_changes_the_verdict() {
    let pruned_opts = VerifyOptions::default();
    let unpruned_opts = VerifyOptions {
        pruning: false,
        ..VerifyOptions::default()
    };
    for (idx, inst) in pool(4096, 50, &GenParams::small()).iter().enumerate() {
        let a = milp::verify(inst, &pruned_opts).unwrap();
        let b = milp::verify(inst, &unpruned_opts).unwrap();
        assert_eq!(a.status, b.status, "instance {idx} disagrees under pruning");
        let pruned_model = milp::assemble_model(inst, &pruned_opts).unwrap();
        let unpruned_model = milp::assemble_model(inst, &unpruned_opts).unwrap();
        assert!(
            pruned_model.num_vars() <= unpruned_model.num_vars(),
            "instance {idx}: pruning grew the model"
        );
    }
}

#[test]
fn unknown_verdicts_always_carry_validated_witnesses() {
    for (idx, inst) in pool(777, 50, &GenParams::small()).iter().enumerate() {
        let verdict = milp::verify(inst, &VerifyOptions::default()).unwrap();
        match verdict.status {
            VerdictStatus::Unknown => {
                let cex = verdict
                    .counterexample
                    .unwrap_or_else(|| panic!("instance {idx}: unknown without evidence"));
                assert!(cex.validated, "instance {idx}: unvalidated witness");
                assert!(!cex.report.violated_facets.is_empty());
                // The witness heatmaps reproduce from alpha exactly.
                let rebuilt = inst.reach_set().sample(&cex.alpha).unwrap();
                assert_eq!(rebuilt, cex.heatmaps);
            }
            VerdictStatus::Robust => assert!(verdict.counterexample.is_none()),
            VerdictStatus::Inconclusive => panic!("instance {idx}: inconclusive"),
        }
    }
}

#[test]
fn search_is_deterministic_on_random_instances() {
    for inst in pool(31337, 20, &GenParams::small()) {
        let model = milp::assemble_model(&inst, &VerifyOptions::default()).unwrap();
        let (out_a, stats_a) = milp::milp_feasible(&model, inst.limits(), &SearchTols::default());
        let (out_b, stats_b) = milp::milp_feasible(&model, inst.limits(), &SearchTols::default());
        assert_eq!(stats_a.nodes, stats_b.nodes);
        assert_eq!(stats_a.lp_calls, stats_b.lp_calls);
        assert_eq!(stats_a.deepest_level, stats_b.deepest_level);
        match (out_a, out_b) {
            (SearchOutcome::Feasible(a), SearchOutcome::Feasible(b)) => assert_eq!(a, b),
            (SearchOutcome::Infeasible, SearchOutcome::Infeasible) => {}
            other => panic!("nondeterministic outcomes: {other:?}"),
        }
    }
}

#[test]
fn sampling_rate_upper_bounds_certification_rate() {
    // Library-level version of the batch-harness ordering: over any batch,
    // the fraction surviving sampling is at least the certified fraction,
    // because certification implies no sampled violation exists.
    let mut rng = StdRng::seed_from_u64(99);
    for batch_idx in 0..5 {
        let batch: Vec<ProblemInstance> = (0..8)
            .map(|_| fixtures::random_instance(&mut rng, &GenParams::small()))
            .collect();
        let eligible: Vec<&ProblemInstance> = batch
            .iter()
            .filter(|inst| inst.clean_prediction_in_bound())
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let mut robust = 0;
        let mut empirically_robust = 0;
        for (idx, inst) in eligible.iter().enumerate() {
            let verdict = milp::verify(inst, &VerifyOptions::default()).unwrap();
            if verdict.status == VerdictStatus::Robust {
                robust += 1;
            }
            if !oracle::sample_falsify(inst, 100, fixtures::split_seed(batch_idx, idx as u64))
                .found()
            {
                empirically_robust += 1;
            }
        }
        assert!(
            empirically_robust >= robust,
            "batch {batch_idx}: empirical {empirically_robust} < certified {robust}"
        );
    }
}

#[test]
fn indicator_gadgets_hold_on_feasible_assignments() {
    use kpcert_core::encode::VarRole;
    let mut checked = 0;
    for inst in pool(1234, 120, &GenParams::small()) {
        let model = milp::assemble_model(&inst, &VerifyOptions::default()).unwrap();
        let (outcome, _) = milp::milp_feasible(&model, inst.limits(), &SearchTols::default());
        let SearchOutcome::Feasible(x) = outcome else {
            continue;
        };
        checked += 1;
        for i in 1..=inst.num_keypoints() {
            // Exactly one indicator per channel, at the pixel the deviation
            // variables address.
            let dv_row = x[model.var(VarRole::Deviation(2 * i - 1)).unwrap()].round() as i64;
            let dv_col = x[model.var(VarRole::Deviation(2 * i)).unwrap()].round() as i64;
            let (gr, gc) = inst.keypoint(i);
            let addressed =
                ((gr + dv_row - 1) as usize) * inst.width() + (gc + dv_col) as usize;
            let mut ones = Vec::new();
            for j in 1..=inst.pixels() {
                let Some(ind) = model.var(VarRole::Indicator(j, i)) else {
                    continue;
                };
                let set = x[ind].round() as i64 == 1;
                if set {
                    ones.push(j);
                }
                // Masked copy equals the heat value where set, zero elsewhere.
                let masked = x[model.var(VarRole::Masked(j, i)).unwrap()];
                let heat = x[model.var(VarRole::Heat(j, i)).unwrap()];
                if set {
                    assert!(
                        (masked - heat).abs() <= 1e-6,
                        "masked[{j},{i}] = {masked} but heat = {heat}"
                    );
                } else {
                    assert!(masked.abs() <= 1e-6, "masked[{j},{i}] = {masked} with indicator 0");
                }
            }
            assert_eq!(ones, vec![addressed], "channel {i} indicator placement");
        }
    }
    assert!(checked >= 10, "want feasible cases to check, got {checked}");
}

#[test]
fn decoded_deviation_is_argmax_derivable_when_peak_is_global() {
    // The maximality rows only dominate in-bound pixels, so the decoded
    // pixel is guaranteed to be a channel argmax whenever no *other*
    // out-candidate exceeds it; in that (typical) case the validated
    // selection is exactly the decoded one.
    let mut confirmed = 0;
    for inst in pool(8888, 60, &GenParams::small()) {
        let verdict = milp::verify(&inst, &VerifyOptions::default()).unwrap();
        let Some(cex) = verdict.counterexample else {
            continue;
        };
        let decoded_pixels: Vec<usize> = cex
            .perturbed_coords
            .iter()
            .map(|&(r, c)| (r as usize - 1) * inst.width() + c as usize)
            .collect();
        let decoded_is_argmax = decoded_pixels.iter().enumerate().all(|(i0, &j)| {
            cex.report.per_channel[i0].indices.contains(&j)
        });
        if decoded_is_argmax {
            assert_eq!(cex.report.selection, Some(decoded_pixels));
            confirmed += 1;
        }
    }
    assert!(confirmed >= 5, "want argmax-decodable witnesses, got {confirmed}");
}

#[test]
fn oracle_witnesses_revalidate() {
    for (idx, inst) in pool(555, 40, &GenParams::small()).iter().enumerate() {
        let report =
            oracle::enumerate_falsify(inst, &LpConfig::default(), oracle::DEFAULT_ENUM_CAP)
                .unwrap();
        if let Some(witness) = &report.witness {
            let z = inst.reach_set().sample(&witness.alpha).unwrap();
            let validation = kpcert_core::encode::validate_heatmaps(inst, &z, 1e-6, None);
            assert!(validation.valid, "instance {idx}: oracle witness fails validation");
        }
    }
}
