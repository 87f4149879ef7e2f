//! Collaborator selection policies behind one dispatch point: geometric
//! baselines (all / closest / greedy weighted coverage) and the restless
//! bandit learners (explore-then-commit, MASS, combinatorial C-MASS), plus
//! the post-frame utility observation that feeds the learners.
//!
//! Utilities drift over time as vehicles move, so the learners model them as
//! Brownian motion: the upper confidence bound of an agent grows with the
//! time since it was last scheduled, `u_hat + beta * sigma * sqrt(t - tau)`,
//! and a never-scheduled agent carries an infinite bound so it is scheduled
//! immediately.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::perception::{DetectionSet, PerceptionParams, RfmPacket};
use crate::world::{EntityId, WorldState};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Every candidate in communication range.
    All,
    /// The N nearest candidates.
    Closest,
    /// Greedy weighted-coverage maximization over an ROI grid.
    Coverage,
    /// Explore-then-commit bandit.
    Etc,
    /// UCB over per-agent scalar utilities.
    Mass,
    /// Multi-round greedy over per-object learned detection indicators.
    Cmass,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Policy::All => "all",
            Policy::Closest => "closest",
            Policy::Coverage => "coverage",
            Policy::Etc => "etc",
            Policy::Mass => "mass",
            Policy::Cmass => "cmass",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "all" => Ok(Policy::All),
            "closest" => Ok(Policy::Closest),
            "coverage" => Ok(Policy::Coverage),
            "etc" => Ok(Policy::Etc),
            "mass" => Ok(Policy::Mass),
            "cmass" => Ok(Policy::Cmass),
            other => Err(Error::Config(format!(
                "unknown policy '{other}' (expected all|closest|coverage|etc|mass|cmass)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreditSplit {
    /// Split an object's weight across all deliverers (conserves frame loss
    /// reduction).
    Shared,
    /// Every deliverer gets the full weight.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulingParams {
    pub policy: Policy,
    /// Number of collaborators to select per frame.
    pub n: u32,
    /// UCB exploration coefficient.
    pub beta: f64,
    /// Brownian volatility of utilities, per sqrt(frame).
    pub sigma: f64,
    /// ETC epoch length, frames.
    pub epoch_len: u64,
    /// Per-(agent, object) indicators expire after this many frames.
    pub t_stale_frames: u64,
    pub credit_split: CreditSplit,
    /// Half-width of the coverage ROI around the ego, meters.
    pub coverage_roi_half_m: f64,
    /// Coverage grid cell size, meters.
    pub coverage_cell_m: f64,
}

impl Default for SchedulingParams {
    fn default() -> Self {
        SchedulingParams {
            policy: Policy::Cmass,
            n: 4,
            beta: 2.0,
            sigma: 0.1,
            epoch_len: 100,
            t_stale_frames: 50,
            credit_split: CreditSplit::Shared,
            coverage_roi_half_m: 80.0,
            coverage_cell_m: 4.0,
        }
    }
}

impl SchedulingParams {
    pub fn validate(&self) -> Result<(), Error> {
        if self.beta < 0.0 || self.sigma < 0.0 {
            return Err(Error::Config("scheduling.beta/sigma must be >= 0".into()));
        }
        if self.epoch_len == 0 {
            return Err(Error::Config("scheduling.epoch_len must be >= 1".into()));
        }
        if !(self.coverage_roi_half_m > 0.0) || !(self.coverage_cell_m > 0.0) {
            return Err(Error::Config("scheduling.coverage dimensions must be > 0".into()));
        }
        Ok(())
    }
}

/// The collaborators picked for one frame plus the equal bandwidth split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub selected: Vec<EntityId>,
    pub per_cov_bandwidth_hz: f64,
}

/// Last observed utility of an agent and when it was observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityRecord {
    pub u_hat: f64,
    /// Frame of the last scheduling.
    pub tau: u64,
    pub times_scheduled: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PhatEntry {
    value: f64,
    last_frame: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct EtcState {
    epoch_start: u64,
    explore: Vec<EntityId>,
}

/// The ego's learned bandit state: per-agent utilities and per-(agent,
/// object) detection indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    records: BTreeMap<EntityId, UtilityRecord>,
    p_hat: BTreeMap<(EntityId, EntityId), PhatEntry>,
    pub beta: f64,
    pub sigma: f64,
    pub t_stale_frames: u64,
    pub credit_split: CreditSplit,
    etc_state: Option<EtcState>,
}

impl KnowledgeBase {
    pub fn new(params: &SchedulingParams) -> Self {
        KnowledgeBase {
            records: BTreeMap::new(),
            p_hat: BTreeMap::new(),
            beta: params.beta,
            sigma: params.sigma,
            t_stale_frames: params.t_stale_frames,
            credit_split: params.credit_split.clone(),
            etc_state: None,
        }
    }

    pub fn record(&self, agent: EntityId) -> Option<&UtilityRecord> {
        self.records.get(&agent)
    }

    /// Learned detection indicator, if fresh enough to trust.
    pub fn p_hat(&self, agent: EntityId, object: EntityId, t: u64) -> Option<f64> {
        self.p_hat
            .get(&(agent, object))
            .filter(|e| t.saturating_sub(e.last_frame) <= self.t_stale_frames)
            .map(|e| e.value)
    }

    /// Test scaffolding: seed a utility record directly.
    pub fn set_record(&mut self, agent: EntityId, u_hat: f64, tau: u64) {
        self.records.insert(
            agent,
            UtilityRecord {
                u_hat,
                tau,
                times_scheduled: 1,
            },
        );
    }

    /// Test scaffolding: seed a detection indicator directly.
    pub fn set_p_hat(&mut self, agent: EntityId, object: EntityId, value: f64, t: u64) {
        self.p_hat.insert(
            (agent, object),
            PhatEntry {
                value,
                last_frame: t,
            },
        );
    }
}

/// Everything a policy may look at when deciding a frame.
pub struct FrameContext<'a> {
    pub frame: u64,
    /// Candidates with their distance to the ego, nearest first.
    pub candidates: &'a [(EntityId, f64)],
    pub world: &'a WorldState,
    pub perception: &'a PerceptionParams,
    /// Ego stand-alone detections of this frame.
    pub ego_detections: &'a DetectionSet,
    /// Importance weights of the frame's evaluated objects.
    pub object_weights: &'a BTreeMap<EntityId, f64>,
}

fn decision(selected: Vec<EntityId>, total_bandwidth_hz: f64) -> ScheduleDecision {
    let n = selected.len().max(1) as f64;
    ScheduleDecision {
        per_cov_bandwidth_hz: total_bandwidth_hz / n,
        selected,
    }
}

/// Dispatches to the configured policy. Every policy returns at most
/// `min(n, #candidates)` collaborators (All ignores `n`).
pub fn schedule(
    params: &SchedulingParams,
    ctx: &FrameContext<'_>,
    kb: &mut KnowledgeBase,
    total_bandwidth_hz: f64,
) -> ScheduleDecision {
    let n = params.n as usize;
    let selected = match params.policy {
        Policy::All => ctx.candidates.iter().map(|&(id, _)| id).collect(),
        _ if n == 0 => Vec::new(),
        Policy::Closest => closest_candidates(ctx, n),
        Policy::Coverage => {
            greedy_coverage(ctx, n, params.coverage_roi_half_m, params.coverage_cell_m)
        }
        Policy::Etc => etc_schedule(ctx, kb, n, params.epoch_len),
        Policy::Mass => mass_schedule(ctx, kb, n),
        Policy::Cmass => cmass_schedule(ctx, kb, n),
    };
    decision(selected, total_bandwidth_hz)
}

/// The N nearest candidates; candidate lists arrive distance-sorted with
/// ties already broken by id.
pub fn closest_candidates(ctx: &FrameContext<'_>, n: usize) -> Vec<EntityId> {
    ctx.candidates.iter().take(n).map(|&(id, _)| id).collect()
}

/// Greedy weighted-coverage: the ROI around the ego is discretized into
/// cells weighted by importance; each round picks the candidate with the
/// largest marginal covered weight (ties by id).
pub fn greedy_coverage(
    ctx: &FrameContext<'_>,
    n: usize,
    roi_half_m: f64,
    cell_m: f64,
) -> Vec<EntityId> {
    let (cells, weights) = coverage_cells(ctx, roi_half_m, cell_m);
    let covers: Vec<(EntityId, Vec<bool>)> = ctx
        .candidates
        .iter()
        .map(|&(id, _)| (id, candidate_coverage(ctx, id, &cells)))
        .collect();

    let mut covered = vec![false; cells.len()];
    let mut selected = Vec::new();
    for _ in 0..n.min(covers.len()) {
        let mut best: Option<(f64, EntityId, usize)> = None;
        for (idx, (id, cover)) in covers.iter().enumerate() {
            if selected.contains(id) {
                continue;
            }
            let gain: f64 = cover
                .iter()
                .zip(&covered)
                .zip(&weights)
                .filter(|((&c, &done), _)| c && !done)
                .map(|(_, &w)| w)
                .sum();
            let better = match best {
                None => true,
                Some((bg, bid, _)) => gain > bg || (gain == bg && *id < bid),
            };
            if better {
                best = Some((gain, *id, idx));
            }
        }
        let Some((_, id, idx)) = best else { break };
        for (c, done) in covers[idx].1.iter().zip(covered.iter_mut()) {
            *done |= *c;
        }
        selected.push(id);
    }
    selected
}

/// ROI cell centers and their importance weights.
pub fn coverage_cells(
    ctx: &FrameContext<'_>,
    half: f64,
    cell: f64,
) -> (Vec<crate::geometry::Vec2>, Vec<f64>) {
    let ego = ctx.world.ego().position();
    let per_side = (2.0 * half / cell).round() as i64;
    let mut cells = Vec::new();
    let mut weights = Vec::new();
    for ix in 0..per_side {
        for iy in 0..per_side {
            let c = crate::geometry::Vec2::new(
                ego.x - half + (ix as f64 + 0.5) * cell,
                ego.y - half + (iy as f64 + 0.5) * cell,
            );
            cells.push(c);
            weights.push(ctx.perception.importance(c.distance(ego)));
        }
    }
    (cells, weights)
}

/// A candidate covers a cell iff the cell is within sensing range and the
/// sightline from the candidate is clear (its own footprint excluded).
pub fn candidate_coverage(
    ctx: &FrameContext<'_>,
    candidate: EntityId,
    cells: &[crate::geometry::Vec2],
) -> Vec<bool> {
    let pos = ctx
        .world
        .entity(candidate)
        .expect("candidate present")
        .position();
    let r = ctx.perception.r_sense_m;
    let occluders = crate::perception::occluders_within(ctx.world, pos, r, &[candidate]);
    cells
        .iter()
        .map(|&c| pos.distance(c) <= r && crate::perception::los_clear(&occluders, pos, c))
        .collect()
}

/// Explore-then-commit: at each epoch start the current candidates are
/// snapshotted; the first ceil(#candidates / n) frames cycle through them,
/// the rest of the epoch commits to the empirical top-n. Candidates that
/// appear mid-epoch enter exploration at the next epoch.
pub fn etc_schedule(
    ctx: &FrameContext<'_>,
    kb: &mut KnowledgeBase,
    n: usize,
    epoch_len: u64,
) -> Vec<EntityId> {
    let needs_new_epoch = match &kb.etc_state {
        None => true,
        Some(s) => ctx.frame >= s.epoch_start + epoch_len,
    };
    if needs_new_epoch {
        let mut explore: Vec<EntityId> = ctx.candidates.iter().map(|&(id, _)| id).collect();
        explore.sort();
        kb.etc_state = Some(EtcState {
            epoch_start: ctx.frame,
            explore,
        });
    }
    let state = kb.etc_state.as_ref().unwrap();
    let offset = (ctx.frame - state.epoch_start) as usize;
    let explore_frames = state.explore.len().div_ceil(n.max(1));

    if offset < explore_frames {
        let lo = offset * n;
        let hi = (lo + n).min(state.explore.len());
        state.explore[lo..hi]
            .iter()
            .copied()
            .filter(|id| ctx.candidates.iter().any(|&(c, _)| c == *id))
            .collect()
    } else {
        // Commit phase: empirical top-n; mid-epoch arrivals rank last.
        let mut ranked: Vec<(f64, EntityId)> = ctx
            .candidates
            .iter()
            .map(|&(id, _)| {
                (
                    kb.record(id).map_or(f64::NEG_INFINITY, |r| r.u_hat),
                    id,
                )
            })
            .collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        ranked.into_iter().take(n).map(|(_, id)| id).collect()
    }
}

/// Upper confidence bound of an agent's utility at frame `t` under the
/// Brownian drift model. Never-scheduled agents return +inf so they are
/// scheduled immediately.
pub fn ucb(kb: &KnowledgeBase, agent: EntityId, t: u64) -> f64 {
    match kb.record(agent) {
        Some(r) => {
            let elapsed = t.saturating_sub(r.tau) as f64;
            r.u_hat + kb.beta * kb.sigma * elapsed.sqrt()
        }
        None => f64::INFINITY,
    }
}

/// MASS: the top-n candidates by UCB (n = 1 is the original
/// single-collaborator form). Ties break toward the lower id.
pub fn mass_schedule(ctx: &FrameContext<'_>, kb: &KnowledgeBase, n: usize) -> Vec<EntityId> {
    let mut ranked: Vec<(f64, EntityId)> = ctx
        .candidates
        .iter()
        .map(|&(id, _)| (ucb(kb, id, ctx.frame), id))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    ranked.into_iter().take(n).map(|(_, id)| id).collect()
}

/// Empirical marginal utility of candidate `j` given the already-selected
/// set: expected weight of objects `j` would add beyond the ego's own
/// detections and the selected agents' anticipated deliveries.
pub fn cmass_marginal(
    kb: &KnowledgeBase,
    ctx: &FrameContext<'_>,
    candidate: EntityId,
    selected: &[EntityId],
) -> f64 {
    ctx.object_weights
        .iter()
        .map(|(&obj, &w)| {
            if ctx.ego_detections.contains(&obj) {
                return 0.0;
            }
            let p_j = kb.p_hat(candidate, obj, ctx.frame).unwrap_or(0.0);
            if p_j == 0.0 {
                return 0.0;
            }
            let redundancy: f64 = selected
                .iter()
                .map(|&k| 1.0 - kb.p_hat(k, obj, ctx.frame).unwrap_or(0.0))
                .product();
            w * p_j * redundancy
        })
        .sum()
}

/// C-MASS: n greedy rounds; each round scores every unselected candidate by
/// its empirical marginal utility plus the Brownian exploration bonus and
/// picks the argmax (never-scheduled candidates carry +inf, ties by id).
pub fn cmass_schedule(ctx: &FrameContext<'_>, kb: &KnowledgeBase, n: usize) -> Vec<EntityId> {
    let mut selected: Vec<EntityId> = Vec::new();
    for _ in 0..n.min(ctx.candidates.len()) {
        let mut best: Option<(f64, EntityId)> = None;
        for &(id, _) in ctx.candidates {
            if selected.contains(&id) {
                continue;
            }
            let score = match kb.record(id) {
                None => f64::INFINITY,
                Some(r) => {
                    let elapsed = ctx.frame.saturating_sub(r.tau) as f64;
                    cmass_marginal(kb, ctx, id, &selected)
                        + kb.beta * kb.sigma * elapsed.sqrt()
                }
            };
            let better = match best {
                None => true,
                Some((bs, bid)) => score > bs || (score == bs && id < bid),
            };
            if better {
                best = Some((score, id));
            }
        }
        match best {
            Some((_, id)) => selected.push(id),
            None => break,
        }
    }
    selected
}

/// Post-frame bandit update: each scheduled agent's utility is the summed
/// (credit-split) weight of objects it delivered beyond the ego's own
/// detections; detection indicators are set to 1 for delivered objects and
/// to 0 for fused-but-undelivered ones, then stale indicators are purged.
pub fn observe_utilities(
    kb: &mut KnowledgeBase,
    selected: &[EntityId],
    ego_set: &DetectionSet,
    delivered: &BTreeMap<EntityId, Vec<RfmPacket>>,
    weights: &BTreeMap<EntityId, f64>,
    t: u64,
) {
    let mut deliverers: BTreeMap<EntityId, u32> = BTreeMap::new();
    let mut fused: DetectionSet = ego_set.clone();
    for packets in delivered.values() {
        for p in packets {
            *deliverers.entry(p.object_id).or_default() += 1;
            fused.insert(p.object_id);
        }
    }

    for &agent in selected {
        let empty = Vec::new();
        let packets = delivered.get(&agent).unwrap_or(&empty);
        let mut u = 0.0;
        for p in packets {
            if ego_set.contains(&p.object_id) {
                continue;
            }
            let Some(&w) = weights.get(&p.object_id) else { continue };
            u += match kb.credit_split {
                CreditSplit::Shared => w / deliverers[&p.object_id] as f64,
                CreditSplit::Full => w,
            };
        }
        let record = kb.records.entry(agent).or_insert(UtilityRecord {
            u_hat: 0.0,
            tau: t,
            times_scheduled: 0,
        });
        record.u_hat = u;
        record.tau = t;
        record.times_scheduled += 1;

        let delivered_set: DetectionSet = packets.iter().map(|p| p.object_id).collect();
        for &obj in &fused {
            let value = if delivered_set.contains(&obj) { 1.0 } else { 0.0 };
            kb.p_hat.insert(
                (agent, obj),
                PhatEntry {
                    value,
                    last_frame: t,
                },
            );
        }
    }

    let stale = kb.t_stale_frames;
    kb.p_hat
        .retain(|_, e| t.saturating_sub(e.last_frame) <= stale);
}
