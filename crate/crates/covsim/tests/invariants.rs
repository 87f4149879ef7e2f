//! Cross-module property tests over randomized inputs.

use std::collections::BTreeMap;

use proptest::prelude::*;

use covsim::channel::{large_scale_loss, ChannelParams, LinkClass, ShadowingProcess};
use covsim::perception::{
    build_topology_for, local_detect, percept_objects, rank_and_truncate, DetectionSet,
    PerceptionParams,
};
use covsim::scheduling::{schedule, FrameContext, KnowledgeBase, Policy, SchedulingParams};
use covsim::world::{build_scenario, candidates_in_range, step_world, EntityKind, ScenarioConfig};
use covsim::{EntityId, Vec2, WorldState};

fn world_after(seed: u64, steps: u32) -> WorldState {
    let mut w = build_scenario(&ScenarioConfig::default(), seed).unwrap();
    for _ in 0..steps {
        w = step_world(&w);
    }
    w
}

fn frame_inputs(
    w: &WorldState,
    perception: &PerceptionParams,
) -> (Vec<(EntityId, f64)>, BTreeMap<EntityId, f64>) {
    let ego_pos = w.ego().position();
    let candidates: Vec<(EntityId, f64)> = candidates_in_range(w)
        .into_iter()
        .map(|id| (id, w.entity(id).unwrap().position().distance(ego_pos)))
        .collect();
    let weights = percept_objects(w, perception)
        .into_iter()
        .filter(|o| o.position.distance(ego_pos) <= perception.r_eval_m)
        .map(|o| (o.object_id, o.weight))
        .collect();
    (candidates, weights)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Every policy returns distinct current candidates and at most N.
    #[test]
    fn policies_respect_candidate_set_and_n(seed in 0u64..500, steps in 0u32..40, n in 0u32..12) {
        let w = world_after(seed, steps);
        let perception = PerceptionParams::default();
        let (candidates, weights) = frame_inputs(&w, &perception);
        let ego_set = DetectionSet::new();
        let ctx = FrameContext {
            frame: steps as u64,
            candidates: &candidates,
            world: &w,
            perception: &perception,
            ego_detections: &ego_set,
            object_weights: &weights,
        };
        for policy in [Policy::All, Policy::Closest, Policy::Coverage, Policy::Etc, Policy::Mass, Policy::Cmass] {
            let mut params = SchedulingParams::default();
            params.policy = policy;
            params.n = n;
            let mut kb = KnowledgeBase::new(&params);
            let d = schedule(&params, &ctx, &mut kb, 0.6e6);
            if policy != Policy::All {
                prop_assert!(d.selected.len() <= n as usize);
            }
            let mut seen = DetectionSet::new();
            for id in &d.selected {
                prop_assert!(candidates.iter().any(|&(c, _)| c == *id));
                prop_assert!(seen.insert(*id), "duplicate selection {id:?}");
            }
        }
    }

    /// Scaling all object weights by a positive constant (with beta·sigma
    /// scaled alike) leaves every policy's selection unchanged.
    #[test]
    fn selection_invariant_under_weight_scaling(seed in 0u64..200, scale in 0.1f64..50.0) {
        let w = world_after(seed, 5);
        let perception = PerceptionParams::default();
        let (candidates, weights) = frame_inputs(&w, &perception);
        let scaled: BTreeMap<EntityId, f64> =
            weights.iter().map(|(&k, &v)| (k, v * scale)).collect();
        let ego_set = DetectionSet::new();
        let ctx = |wts| FrameContext {
            frame: 5,
            candidates: &candidates,
            world: &w,
            perception: &perception,
            ego_detections: &ego_set,
            object_weights: wts,
        };
        for policy in [Policy::Closest, Policy::Coverage, Policy::Mass, Policy::Cmass] {
            let mut params = SchedulingParams::default();
            params.policy = policy;
            params.n = 4;
            // Seed utility records so the bandit policies rank on learned
            // scores, not only on the never-scheduled sentinel; estimates
            // derive from weights, so they scale with them.
            let mut kb_base = KnowledgeBase::new(&params);
            let mut scaled_params = params.clone();
            scaled_params.sigma *= scale;
            let mut kb_scaled = KnowledgeBase::new(&scaled_params);
            // Tie-free by construction: exact score ties would be broken
            // differently once floating-point scaling perturbs them.
            for (i, &(id, _)) in candidates.iter().enumerate() {
                let u = 0.31 * (i + 1) as f64;
                kb_base.set_record(id, u, i as u64 % 5);
                kb_scaled.set_record(id, u * scale, i as u64 % 5);
                for (j, (&obj, _)) in weights.iter().enumerate().take(6) {
                    let p = ((i * 13 + j * 5) % 17) as f64 / 17.0;
                    kb_base.set_p_hat(id, obj, p, 4);
                    kb_scaled.set_p_hat(id, obj, p, 4);
                }
            }
            let base = schedule(&params, &ctx(&weights), &mut kb_base, 0.6e6);
            let alt = schedule(&scaled_params, &ctx(&scaled), &mut kb_scaled, 0.6e6);
            prop_assert_eq!(&base.selected, &alt.selected, "policy {:?}", policy);
        }
    }

    /// With the detection draw fixed, a higher rate never shrinks the
    /// delivered packet list (and the larger list extends the smaller).
    #[test]
    fn truncation_is_monotone_in_rate(seed in 0u64..200, r1 in 1e3f64..2e6, r2 in 1e3f64..2e6) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let w = world_after(seed, 3);
        let perception = PerceptionParams::default();
        let Some(&cov) = candidates_in_range(&w).first() else { return Ok(()) };
        let objects = percept_objects(&w, &perception);
        let weights: BTreeMap<EntityId, f64> =
            objects.iter().map(|o| (o.object_id, o.weight)).collect();
        let topo = build_topology_for(&w, &perception, &[cov], &objects);
        let mut rng = covsim::rng::stream(seed, "detect", &[0, cov.0]);
        let detections = local_detect(&topo, cov, &mut rng);
        let confidences: BTreeMap<EntityId, f64> = detections
            .iter()
            .map(|&o| (o, topo.detect_prob(cov, o)))
            .collect();
        let take = |rate| rank_and_truncate(
            &detections, &weights, &confidences, cov, rate,
            perception.tx_budget_s, perception.s_rfm_bits,
        );
        let small = take(lo);
        let large = take(hi);
        prop_assert!(small.len() <= large.len());
        for (a, b) in small.iter().zip(&large) {
            prop_assert_eq!(a.object_id, b.object_id);
        }
    }

    /// A zero detection probability means the object can never be detected.
    #[test]
    fn zero_detect_prob_never_detected(seed in 0u64..200, draw_seed in 0u64..1_000) {
        let w = world_after(seed, 0);
        let perception = PerceptionParams::default();
        let ego = w.ego_id;
        let objects = percept_objects(&w, &perception);
        let topo = build_topology_for(&w, &perception, &[ego], &objects);
        let mut rng = covsim::rng::stream(draw_seed, "detect", &[0, ego.0]);
        let detections = local_detect(&topo, ego, &mut rng);
        for o in &objects {
            if topo.detect_prob(ego, o.object_id) == 0.0 {
                prop_assert!(!detections.contains(&o.object_id));
            }
        }
    }

    /// Blockage loss applies only to vehicle-blocked (NLOSv) links.
    #[test]
    fn blockage_only_on_nlosv(seed in 0u64..1_000, blockers in 0u32..5, d in 5.0f64..150.0) {
        let params = ChannelParams::default();
        let tx = Vec2::new(0.0, 0.0);
        let rx = Vec2::new(d, 0.0);
        for class in [LinkClass::Los, LinkClass::Nlos] {
            let mut shadow = ShadowingProcess::new();
            let mut rng = covsim::rng::stream(seed, "channel", &[0, 0]);
            let loss = large_scale_loss(&params, class, tx, rx, &mut shadow, blockers, &mut rng).unwrap();
            prop_assert_eq!(loss.blockage_db, 0.0);
        }
    }

    /// Footprints keep strictly positive extents through arbitrary steps.
    #[test]
    fn footprints_stay_positive(seed in 0u64..100, steps in 1u32..60) {
        let w = world_after(seed, steps);
        for e in &w.entities {
            prop_assert!(e.footprint.half_extent.x > 0.0 && e.footprint.half_extent.y > 0.0);
        }
        prop_assert!(w.entities.iter().any(|e| e.kind == EntityKind::Vehicle));
    }
}
