//! Perception topology, stochastic local detection, rate-budgeted Top-K
//! truncation of regional feature maps (RFMs), and detection fusion.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{point_segment_dist_sq, segment_intersects_rect, Rect, Vec2};
use crate::world::{EntityId, EntityKind, WorldState};
use crate::Error;

/// Set of detected object ids. Ordered so iteration is deterministic.
pub type DetectionSet = BTreeSet<EntityId>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    /// Sensing radius of every agent, meters.
    pub r_sense_m: f64,
    /// Detection probability at close range.
    pub p_near: f64,
    /// Range below which detection probability stays at `p_near`, meters.
    pub d_near_m: f64,
    /// Detection probability at `r_sense_m` (linear in between).
    pub p_far: f64,
    /// Distance at which an object's importance weight saturates at 1.
    pub importance_ref_m: f64,
    /// Evaluation radius around the ego for ground truth, meters.
    pub r_eval_m: f64,
    /// Size of one RFM packet, bits.
    pub s_rfm_bits: f64,
    /// Transmission window inside the 100 ms frame, seconds.
    pub tx_budget_s: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        PerceptionParams {
            r_sense_m: 80.0,
            p_near: 0.95,
            d_near_m: 20.0,
            p_far: 0.5,
            importance_ref_m: 30.0,
            r_eval_m: 80.0,
            s_rfm_bits: 8_000.0,
            tx_budget_s: 0.05,
        }
    }
}

impl PerceptionParams {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("perception.r_sense_m", self.r_sense_m),
            ("perception.d_near_m", self.d_near_m),
            ("perception.importance_ref_m", self.importance_ref_m),
            ("perception.r_eval_m", self.r_eval_m),
            ("perception.s_rfm_bits", self.s_rfm_bits),
            ("perception.tx_budget_s", self.tx_budget_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        for (name, p) in [("perception.p_near", self.p_near), ("perception.p_far", self.p_far)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.d_near_m >= self.r_sense_m {
            return Err(Error::Config(
                "perception.d_near_m must be < perception.r_sense_m".into(),
            ));
        }
        Ok(())
    }

    /// Detection probability of a visible object at distance `d`.
    pub fn p_base(&self, d: f64) -> f64 {
        if d <= self.d_near_m {
            self.p_near
        } else if d >= self.r_sense_m {
            self.p_far
        } else {
            let t = (d - self.d_near_m) / (self.r_sense_m - self.d_near_m);
            self.p_near + t * (self.p_far - self.p_near)
        }
    }

    /// Importance weight of an object at distance `d` from the ego.
    pub fn importance(&self, d: f64) -> f64 {
        (self.importance_ref_m / d.max(1e-9)).min(1.0)
    }
}

/// One perceivable object at a frame, weighted by proximity to the ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptObject {
    pub object_id: EntityId,
    pub position: Vec2,
    pub weight: f64,
}

/// Ground-truth (visible, detection probability) per agent-object pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerceptionTopology {
    entries: BTreeMap<(EntityId, EntityId), (bool, f64)>,
}

impl PerceptionTopology {
    pub fn get(&self, agent: EntityId, object: EntityId) -> Option<(bool, f64)> {
        self.entries.get(&(agent, object)).copied()
    }

    pub fn detect_prob(&self, agent: EntityId, object: EntityId) -> f64 {
        self.entries.get(&(agent, object)).map_or(0.0, |&(_, p)| p)
    }

    /// Objects paired with the given agent, in id order.
    pub fn objects_of(&self, agent: EntityId) -> impl Iterator<Item = (EntityId, bool, f64)> + '_ {
        self.entries
            .range((agent, EntityId(0))..=(agent, EntityId(u64::MAX)))
            .map(|(&(_, o), &(v, p))| (o, v, p))
    }
}

/// One regional feature map advertised by a co-agent for one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfmPacket {
    pub origin: EntityId,
    pub object_id: EntityId,
    pub confidence: f64,
    pub size_bits: f64,
}

/// Segment visibility against every building and vehicle footprint except
/// the excluded ids. Returns whether the path is clear plus the blockers.
pub fn line_of_sight(
    w: &WorldState,
    a: Vec2,
    b: Vec2,
    exclude: &[EntityId],
) -> (bool, Vec<EntityId>) {
    let mut blockers = Vec::new();
    for e in &w.entities {
        if e.kind == EntityKind::Pedestrian || exclude.contains(&e.id) {
            continue;
        }
        // Cheap rejection on the circumscribed circle before the exact test.
        let r = e.footprint.bounding_radius();
        if point_segment_dist_sq(e.footprint.center, a, b) > r * r {
            continue;
        }
        if segment_intersects_rect(a, b, &e.footprint) {
            blockers.push(e.id);
        }
    }
    (blockers.is_empty(), blockers)
}

/// Occluder footprints that could block any sightline of length ≤ `reach`
/// from `origin`. Used to hoist the entity scan out of per-cell LOS loops.
pub fn occluders_within(w: &WorldState, origin: Vec2, reach: f64, exclude: &[EntityId]) -> Vec<Rect> {
    w.entities
        .iter()
        .filter(|e| e.kind != EntityKind::Pedestrian && !exclude.contains(&e.id))
        .filter(|e| {
            origin.distance(e.footprint.center) <= reach + e.footprint.bounding_radius()
        })
        .map(|e| e.footprint)
        .collect()
}

/// Boolean-only LOS against a prefiltered occluder list; exits on the first
/// hit. Equivalent to `line_of_sight(..).0` when `occluders` came from
/// `occluders_within` with a reach covering the segment length.
pub fn los_clear(occluders: &[Rect], a: Vec2, b: Vec2) -> bool {
    for r in occluders {
        let rad = r.bounding_radius();
        if point_segment_dist_sq(r.center, a, b) > rad * rad {
            continue;
        }
        if segment_intersects_rect(a, b, r) {
            return false;
        }
    }
    true
}

/// Perceivable objects of a frame: every vehicle and pedestrian except the
/// ego, weighted by distance to the ego.
pub fn percept_objects(w: &WorldState, params: &PerceptionParams) -> Vec<PerceptObject> {
    let ego_pos = w.ego().position();
    w.entities
        .iter()
        .filter(|e| e.kind != EntityKind::Building && e.id != w.ego_id)
        .map(|e| PerceptObject {
            object_id: e.id,
            position: e.position(),
            weight: params.importance(e.position().distance(ego_pos)),
        })
        .collect()
}

/// Topology restricted to the given agents (each against every object).
/// An object is visible to an agent iff it is within sensing range and the
/// sightline is clear of every footprint except the two endpoints' own.
pub fn build_topology_for(
    w: &WorldState,
    params: &PerceptionParams,
    agents: &[EntityId],
    objects: &[PerceptObject],
) -> PerceptionTopology {
    let mut entries = BTreeMap::new();
    for &agent in agents {
        let Some(agent_e) = w.entity(agent) else { continue };
        let a_pos = agent_e.position();
        for obj in objects {
            if obj.object_id == agent {
                continue;
            }
            let d = a_pos.distance(obj.position);
            let (visible, p) = if d > params.r_sense_m {
                (false, 0.0)
            } else {
                let (clear, _) =
                    line_of_sight(w, a_pos, obj.position, &[agent, obj.object_id]);
                if clear {
                    (true, params.p_base(d))
                } else {
                    (false, 0.0)
                }
            };
            entries.insert((agent, obj.object_id), (visible, p));
        }
    }
    PerceptionTopology { entries }
}

/// Full topology over the ego and every CoV.
pub fn build_topology(w: &WorldState, params: &PerceptionParams) -> PerceptionTopology {
    let agents: Vec<EntityId> = w
        .entities
        .iter()
        .filter(|e| e.id == w.ego_id || (e.kind == EntityKind::Vehicle && e.is_cov))
        .map(|e| e.id)
        .collect();
    let objects = percept_objects(w, params);
    build_topology_for(w, params, &agents, &objects)
}

/// Independent Bernoulli(detect_prob) draw per object for one agent.
pub fn local_detect<R: Rng>(
    topo: &PerceptionTopology,
    agent: EntityId,
    rng: &mut R,
) -> DetectionSet {
    topo.objects_of(agent)
        .filter(|&(_, _, p)| p > 0.0 && rng.random::<f64>() < p)
        .map(|(o, _, _)| o)
        .collect()
}

/// Rate-budgeted Top-K RFM selection: K = floor(rate * budget / s_rfm),
/// ranked by confidence * weight descending, ties by ascending object id.
pub fn rank_and_truncate(
    detections: &DetectionSet,
    weights: &BTreeMap<EntityId, f64>,
    confidences: &BTreeMap<EntityId, f64>,
    origin: EntityId,
    rate_bps: f64,
    tx_budget_s: f64,
    s_rfm_bits: f64,
) -> Vec<RfmPacket> {
    debug_assert!(rate_bps >= 0.0 && tx_budget_s > 0.0 && s_rfm_bits > 0.0);
    let k = ((rate_bps * tx_budget_s / s_rfm_bits).floor() as usize).min(detections.len());
    if k == 0 {
        return Vec::new();
    }
    let mut ranked: Vec<(f64, EntityId)> = detections
        .iter()
        .map(|&o| {
            let c = confidences.get(&o).copied().unwrap_or(0.0);
            let w = weights.get(&o).copied().unwrap_or(0.0);
            (c * w, o)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    ranked
        .into_iter()
        .take(k)
        .map(|(_, o)| RfmPacket {
            origin,
            object_id: o,
            confidence: confidences.get(&o).copied().unwrap_or(0.0),
            size_bits: s_rfm_bits,
        })
        .collect()
}

/// Fusion is a set union of the ego's detections and delivered packets.
pub fn fuse<'a>(
    ego: &DetectionSet,
    delivered: impl IntoIterator<Item = &'a [RfmPacket]>,
) -> DetectionSet {
    let mut out = ego.clone();
    for packets in delivered {
        out.extend(packets.iter().map(|p| p.object_id));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::rng;
    use crate::world::{build_scenario, ScenarioConfig};

    fn weights_of(ids: &[(u64, f64)]) -> BTreeMap<EntityId, f64> {
        ids.iter().map(|&(i, w)| (EntityId(i), w)).collect()
    }

    #[test]
    fn p_base_curve() {
        let p = PerceptionParams::default();
        assert_eq!(p.p_base(10.0), 0.95);
        assert_eq!(p.p_base(20.0), 0.95);
        assert!((p.p_base(80.0) - 0.5).abs() < 1e-12);
        assert!((p.p_base(50.0) - 0.725).abs() < 1e-12);
    }

    #[test]
    fn los_clear_and_blocked() {
        let cfg = ScenarioConfig::default();
        let mut w = build_scenario(&cfg, 1).unwrap();
        // Drop everything except one synthetic building we control.
        w.entities.retain(|e| e.id == w.ego_id);
        let mut blocker = w.entities[0].clone();
        blocker.id = EntityId(999);
        blocker.kind = EntityKind::Building;
        blocker.footprint = Rect::axis_aligned(Vec2::new(5.0, 5.0), Vec2::new(1.0, 1.0));
        w.entities.push(blocker);

        let (clear, b) = line_of_sight(&w, Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), &[w.ego_id]);
        assert!(clear && b.is_empty());

        let (clear, b) = line_of_sight(&w, Vec2::new(0.0, 5.0), Vec2::new(10.0, 5.0), &[w.ego_id]);
        assert!(!clear);
        assert_eq!(b, vec![EntityId(999)]);
    }

    #[test]
    fn topology_range_and_occlusion() {
        let cfg = ScenarioConfig::default();
        let w = build_scenario(&cfg, 2).unwrap();
        let params = PerceptionParams::default();
        let topo = build_topology(&w, &params);
        let ego_pos = w.ego().position();
        for (o, visible, p) in topo.objects_of(w.ego_id) {
            let d = w.entity(o).unwrap().position().distance(ego_pos);
            if d > params.r_sense_m {
                assert!(!visible && p == 0.0);
            }
            if !visible {
                assert_eq!(p, 0.0);
            } else {
                assert!((p - params.p_base(d)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn local_detect_degenerate_probs() {
        let mut topo = PerceptionTopology::default();
        let agent = EntityId(1);
        for i in 2..7 {
            topo.entries.insert((agent, EntityId(i)), (true, 1.0));
        }
        let mut r = rng::stream(1, "d", &[]);
        assert_eq!(local_detect(&topo, agent, &mut r).len(), 5);
        for e in topo.entries.values_mut() {
            *e = (true, 0.0);
        }
        assert!(local_detect(&topo, agent, &mut r).is_empty());
    }

    #[test]
    fn local_detect_frequency_matches_prob() {
        let mut topo = PerceptionTopology::default();
        let agent = EntityId(1);
        topo.entries.insert((agent, EntityId(2)), (true, 0.6));
        let n = 100_000;
        let mut hits = 0;
        for i in 0..n {
            let mut r = rng::stream(1, "d", &[i]);
            hits += local_detect(&topo, agent, &mut r).len();
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.6).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn truncation_k_from_rate_budget() {
        let detections: DetectionSet = (1..=9).map(EntityId).collect();
        let weights = weights_of(&(1..=9).map(|i| (i, 1.0)).collect::<Vec<_>>());
        let confidences = weights.clone();
        let packets = rank_and_truncate(
            &detections,
            &weights,
            &confidences,
            EntityId(0),
            754.2e3,
            0.05,
            8_000.0,
        );
        assert_eq!(packets.len(), 4); // floor(37.71 / 8)
    }

    #[test]
    fn truncation_zero_rate_and_noop() {
        let detections: DetectionSet = [EntityId(1), EntityId(2)].into();
        let weights = weights_of(&[(1, 1.0), (2, 0.5)]);
        let confidences = weights_of(&[(1, 0.9), (2, 0.9)]);
        assert!(rank_and_truncate(
            &detections,
            &weights,
            &confidences,
            EntityId(0),
            0.0,
            0.05,
            8_000.0
        )
        .is_empty());
        // K = 5 > |detections|: both sent, higher confidence * weight first.
        let packets = rank_and_truncate(
            &detections,
            &weights,
            &confidences,
            EntityId(0),
            800e3,
            0.05,
            8_000.0,
        );
        assert_eq!(packets.len(), 2);
        assert_eq!(packets[0].object_id, EntityId(1));
        assert_eq!(packets[1].object_id, EntityId(2));
    }

    #[test]
    fn fuse_is_set_union() {
        let ego: DetectionSet = [EntityId(1), EntityId(2)].into();
        let co = vec![
            RfmPacket {
                origin: EntityId(9),
                object_id: EntityId(2),
                confidence: 1.0,
                size_bits: 8_000.0,
            },
            RfmPacket {
                origin: EntityId(9),
                object_id: EntityId(3),
                confidence: 1.0,
                size_bits: 8_000.0,
            },
        ];
        let fused = fuse(&ego, [co.as_slice()]);
        assert_eq!(fused, [EntityId(1), EntityId(2), EntityId(3)].into());
        assert_eq!(fuse(&ego, std::iter::empty::<&[RfmPacket]>()), ego);
        let empty = DetectionSet::new();
        let a = [RfmPacket {
            origin: EntityId(8),
            object_id: EntityId(4),
            confidence: 1.0,
            size_bits: 8_000.0,
        }];
        let b = [RfmPacket {
            origin: EntityId(9),
            object_id: EntityId(5),
            confidence: 1.0,
            size_bits: 8_000.0,
        }];
        assert_eq!(
            fuse(&empty, [a.as_slice(), b.as_slice()]),
            [EntityId(4), EntityId(5)].into()
        );
    }

    #[test]
    fn fused_is_superset_of_ego() {
        let cfg = ScenarioConfig::default();
        let w = build_scenario(&cfg, 5).unwrap();
        let params = PerceptionParams::default();
        let topo = build_topology(&w, &params);
        let mut r = rng::stream(5, "d", &[]);
        let ego = local_detect(&topo, w.ego_id, &mut r);
        let packets: Vec<RfmPacket> = topo
            .objects_of(w.ego_id)
            .filter(|&(_, v, _)| v)
            .map(|(o, _, _)| RfmPacket {
                origin: EntityId(0),
                object_id: o,
                confidence: 1.0,
                size_bits: 8_000.0,
            })
            .collect();
        let fused = fuse(&ego, [packets.as_slice()]);
        assert!(fused.is_superset(&ego));
    }
}
