//! Frame orchestration: beaconing, the request/response/fusion protocol,
//! channel realization, detection, metrics, and bandit updates, plus the
//! whole-experiment runner.
//!
//! One root seed is split into named streams keyed by `(frame, entity)`,
//! so detection and channel randomness is identical across policies and
//! policy comparisons run on common random numbers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{
    achievable_rate, classify_link, fading_gain, large_scale_loss, snr_db, ChannelParams,
    LinkState, ShadowingProcess,
};
use crate::geometry::Vec2;
use crate::metrics::{aggregate, frame_metrics, FrameMetrics};
use crate::perception::{
    build_topology_for, fuse, local_detect, percept_objects, rank_and_truncate, PerceptionParams,
    RfmPacket,
};
use crate::rng;
use crate::scheduling::{
    observe_utilities, schedule, FrameContext, KnowledgeBase, ScheduleDecision, SchedulingParams,
};
use crate::world::{build_scenario, candidates_in_range, step_world, EntityId, ScenarioConfig,
    WorldState};
use crate::Error;

/// Status message every CoV emits every frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beacon {
    pub sender: EntityId,
    pub position: Vec2,
    pub is_cov: bool,
    pub frame: u64,
}

/// Step 1 of the protocol: the ego asks a collaborator for RFMs, declaring
/// the rate the measured link supports on the allocated bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpRequest {
    pub requester: EntityId,
    pub target: EntityId,
    pub max_rate_bps: f64,
    pub bandwidth_hz: f64,
}

/// Step 2: the collaborator answers with its most critical RFMs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpResponse {
    pub responder: EntityId,
    pub packets: Vec<RfmPacket>,
}

/// Per-frame record of what happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLog {
    pub frame: u64,
    pub decision: ScheduleDecision,
    pub n_candidates: usize,
    /// Delivered RFM count per scheduled agent.
    pub delivered: BTreeMap<EntityId, usize>,
    pub fused_size: usize,
    pub metrics: FrameMetrics,
}

impl FrameLog {
    pub fn delivered_rfms(&self) -> usize {
        self.delivered.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub channel: ChannelParams,
    pub perception: PerceptionParams,
    pub scheduling: SchedulingParams,
    /// Shared sidelink bandwidth, Hz, split equally across selected CoVs.
    pub total_bandwidth_hz: f64,
    pub frames: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioConfig::default(),
            channel: ChannelParams::default(),
            perception: PerceptionParams::default(),
            scheduling: SchedulingParams::default(),
            total_bandwidth_hz: 0.6e6,
            frames: 10_000,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.scenario.validate()?;
        self.channel.validate()?;
        self.perception.validate()?;
        self.scheduling.validate()?;
        if !(self.total_bandwidth_hz > 0.0) {
            return Err(Error::Config("total_bandwidth_hz must be > 0".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// Equal split of the shared bandwidth; the full budget when nothing is
/// scheduled (unused).
pub fn allocate_bandwidth(total_hz: f64, n_selected: usize) -> f64 {
    debug_assert!(total_hz > 0.0);
    total_hz / n_selected.max(1) as f64
}

/// One running simulation: world, bandit state, and per-link shadowing.
pub struct Simulation {
    pub cfg: ExperimentConfig,
    pub world: WorldState,
    pub kb: KnowledgeBase,
    shadowing: BTreeMap<EntityId, ShadowingProcess>,
}

impl Simulation {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, Error> {
        cfg.validate()?;
        let world = build_scenario(&cfg.scenario, cfg.seed)?;
        let kb = KnowledgeBase::new(&cfg.scheduling);
        Ok(Simulation {
            cfg,
            world,
            kb,
            shadowing: BTreeMap::new(),
        })
    }

    /// Beacons of every CoV at the current frame.
    pub fn collect_beacons(&self) -> Vec<Beacon> {
        self.world
            .entities
            .iter()
            .filter(|e| e.is_cov && e.id != self.world.ego_id)
            .map(|e| Beacon {
                sender: e.id,
                position: e.position(),
                is_cov: true,
                frame: self.world.frame_index,
            })
            .collect()
    }

    /// Runs the three-step protocol for the current frame, updates the
    /// bandit state, advances the world, and returns the frame log.
    pub fn run_frame(&mut self) -> Result<FrameLog, Error> {
        let frame = self.world.frame_index;
        let seed = self.cfg.seed;
        let perception = &self.cfg.perception;
        let ego_id = self.world.ego_id;
        let ego_pos = self.world.ego().position();

        // (1) Beacons announce CP availability; candidates are the CoVs in
        // communication range, nearest first.
        let candidate_ids = candidates_in_range(&self.world);
        let candidates: Vec<(EntityId, f64)> = candidate_ids
            .iter()
            .map(|&id| {
                (
                    id,
                    self.world.entity(id).unwrap().position().distance(ego_pos),
                )
            })
            .collect();

        // Objects of the frame and the evaluated (ground-truth) subset.
        let objects = percept_objects(&self.world, perception);
        let all_weights: BTreeMap<EntityId, f64> =
            objects.iter().map(|o| (o.object_id, o.weight)).collect();
        let gt_weights: BTreeMap<EntityId, f64> = objects
            .iter()
            .filter(|o| o.position.distance(ego_pos) <= perception.r_eval_m)
            .map(|o| (o.object_id, o.weight))
            .collect();

        // Ego stand-alone perception.
        let ego_topo = build_topology_for(&self.world, perception, &[ego_id], &objects);
        let mut ego_rng = rng::stream(seed, "detect", &[frame, ego_id.0]);
        let ego_set = local_detect(&ego_topo, ego_id, &mut ego_rng);

        // (2) Scheduling.
        let ctx = FrameContext {
            frame,
            candidates: &candidates,
            world: &self.world,
            perception,
            ego_detections: &ego_set,
            object_weights: &gt_weights,
        };
        let mut decision = schedule(
            &self.cfg.scheduling,
            &ctx,
            &mut self.kb,
            self.cfg.total_bandwidth_hz,
        );
        decision.per_cov_bandwidth_hz =
            allocate_bandwidth(self.cfg.total_bandwidth_hz, decision.selected.len());

        // (3)+(4) Per-CoV link realization, request, and response.
        let mut delivered: BTreeMap<EntityId, Vec<RfmPacket>> = BTreeMap::new();
        for &cov in &decision.selected {
            let (class, blockers) = classify_link(&self.world, cov, ego_id)?;
            let cov_pos = self.world.entity(cov).unwrap().position();
            let mut link_rng = rng::stream(seed, "channel", &[frame, cov.0]);
            let shadow = self.shadowing.entry(cov).or_default();
            let loss = large_scale_loss(
                &self.cfg.channel,
                class,
                cov_pos,
                ego_pos,
                shadow,
                blockers,
                &mut link_rng,
            )?;
            let fading = fading_gain(&self.cfg.channel, class, &mut link_rng);
            let rate = achievable_rate(
                &self.cfg.channel,
                decision.per_cov_bandwidth_hz,
                loss.total_db(),
                fading,
            );
            let _link = LinkState {
                class,
                pathloss_db: loss.pathloss_db,
                shadowing_db: loss.shadowing_db,
                blockage_db: loss.blockage_db,
                fading_power: fading,
                snr_db: snr_db(
                    &self.cfg.channel,
                    decision.per_cov_bandwidth_hz,
                    loss.total_db(),
                    fading,
                ),
                rate_bps: rate,
            };
            let request = CpRequest {
                requester: ego_id,
                target: cov,
                max_rate_bps: rate,
                bandwidth_hz: decision.per_cov_bandwidth_hz,
            };

            let topo = build_topology_for(&self.world, perception, &[cov], &objects);
            let mut det_rng = rng::stream(seed, "detect", &[frame, cov.0]);
            let detections = local_detect(&topo, cov, &mut det_rng);
            let confidences: BTreeMap<EntityId, f64> = detections
                .iter()
                .map(|&o| (o, topo.detect_prob(cov, o)))
                .collect();
            let packets = rank_and_truncate(
                &detections,
                &all_weights,
                &confidences,
                cov,
                request.max_rate_bps,
                perception.tx_budget_s,
                perception.s_rfm_bits,
            );
            let payload: f64 = packets.iter().map(|p| p.size_bits).sum();
            debug_assert!(
                payload <= request.max_rate_bps * perception.tx_budget_s + 1e-6,
                "response exceeds the link budget"
            );
            let response = CpResponse {
                responder: cov,
                packets,
            };
            delivered.insert(cov, response.packets);
        }

        // (5) Fusion and (6) metrics.
        let fused = fuse(&ego_set, delivered.values().map(|v| v.as_slice()));
        let metrics = frame_metrics(&gt_weights, &fused);

        // (7) Bandit update.
        observe_utilities(
            &mut self.kb,
            &decision.selected,
            &ego_set,
            &delivered,
            &gt_weights,
            frame,
        );

        // (8) Advance the world.
        self.world = step_world(&self.world);

        Ok(FrameLog {
            frame,
            n_candidates: candidates.len(),
            delivered: delivered.iter().map(|(&id, p)| (id, p.len())).collect(),
            fused_size: fused.len(),
            decision,
            metrics,
        })
    }
}

/// Aggregate outcome of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub policy: String,
    pub n: u32,
    pub seed: u64,
    pub frames: u64,
    pub mean_loss: f64,
    pub mean_recall: f64,
    pub wall_time_s: f64,
}

pub struct ExperimentResult {
    pub logs: Vec<FrameLog>,
    pub summary: ExperimentSummary,
}

/// Runs `cfg.frames` frames and aggregates; deterministic per `(cfg, seed)`
/// apart from the measured wall time.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, Error> {
    let start = std::time::Instant::now();
    let mut sim = Simulation::new(cfg.clone())?;
    let mut logs = Vec::with_capacity(cfg.frames as usize);
    for _ in 0..cfg.frames {
        logs.push(sim.run_frame()?);
    }
    let metrics: Vec<FrameMetrics> = logs.iter().map(|l| l.metrics).collect();
    let agg = aggregate(&metrics)?;
    Ok(ExperimentResult {
        summary: ExperimentSummary {
            policy: cfg.scheduling.policy.to_string(),
            n: cfg.scheduling.n,
            seed: cfg.seed,
            frames: cfg.frames,
            mean_loss: agg.mean_loss,
            mean_recall: agg.mean_recall,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        logs,
    })
}
