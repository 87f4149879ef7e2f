//! V2V sidelink channel: LOS/NLOSv/NLOS classification, log-distance path
//! loss, spatially correlated shadowing, per-blocker vehicle attenuation,
//! Rician/Rayleigh fast fading, and Shannon-capped achievable rate.
//!
//! Default coefficients follow the 3GPP TR 37.885 urban tables; every value
//! is overridable through the configuration file.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{segment_intersects_rect, Vec2};
use crate::world::{EntityId, EntityKind, WorldState};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkClass {
    /// Unobstructed.
    Los,
    /// Blocked by at least one vehicle, no building in the way.
    Nlosv,
    /// Blocked by a building.
    Nlos,
}

/// `A + B log10(d) + C log10(f_GHz)` coefficients, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossCoefficients {
    pub a_db: f64,
    pub b_db_per_decade: f64,
    pub c_db_per_decade_ghz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_freq_ghz: f64,
    pub pathloss_los: PathLossCoefficients,
    pub pathloss_nlos: PathLossCoefficients,
    /// NLOSv reuses the LOS path loss plus the blockage term.
    pub shadowing_sigma_los_db: f64,
    pub shadowing_sigma_nlosv_db: f64,
    pub shadowing_sigma_nlos_db: f64,
    pub shadowing_corr_dist_m: f64,
    pub blockage_loss_mean_db: f64,
    pub blockage_loss_sigma_db: f64,
    /// Rician K-factor for LOS and NLOSv fading, dB.
    pub rician_k_db: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub spectral_efficiency_cap: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            carrier_freq_ghz: 5.9,
            pathloss_los: PathLossCoefficients {
                a_db: 38.77,
                b_db_per_decade: 16.7,
                c_db_per_decade_ghz: 18.2,
            },
            pathloss_nlos: PathLossCoefficients {
                a_db: 36.85,
                b_db_per_decade: 30.0,
                c_db_per_decade_ghz: 18.9,
            },
            shadowing_sigma_los_db: 3.0,
            shadowing_sigma_nlosv_db: 3.0,
            shadowing_sigma_nlos_db: 4.0,
            shadowing_corr_dist_m: 10.0,
            blockage_loss_mean_db: 10.0,
            blockage_loss_sigma_db: 4.5,
            rician_k_db: 9.0,
            tx_power_dbm: 23.0,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            spectral_efficiency_cap: 6.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("channel.shadowing_sigma_los_db", self.shadowing_sigma_los_db),
            ("channel.shadowing_sigma_nlosv_db", self.shadowing_sigma_nlosv_db),
            ("channel.shadowing_sigma_nlos_db", self.shadowing_sigma_nlos_db),
            ("channel.blockage_loss_sigma_db", self.blockage_loss_sigma_db),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if !(self.shadowing_corr_dist_m > 0.0) {
            return Err(Error::Config("channel.shadowing_corr_dist_m must be > 0".into()));
        }
        if !(self.spectral_efficiency_cap > 0.0) {
            return Err(Error::Config("channel.spectral_efficiency_cap must be > 0".into()));
        }
        if !(self.carrier_freq_ghz > 0.0) {
            return Err(Error::Config("channel.carrier_freq_ghz must be > 0".into()));
        }
        Ok(())
    }

    pub fn shadowing_sigma_db(&self, class: LinkClass) -> f64 {
        match class {
            LinkClass::Los => self.shadowing_sigma_los_db,
            LinkClass::Nlosv => self.shadowing_sigma_nlosv_db,
            LinkClass::Nlos => self.shadowing_sigma_nlos_db,
        }
    }
}

/// One realized link at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub class: LinkClass,
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    pub blockage_db: f64,
    pub fading_power: f64,
    pub snr_db: f64,
    pub rate_bps: f64,
}

/// Per-link shadowing memory: the loss decorrelates exponentially with the
/// relative displacement of the endpoints between evaluations.
#[derive(Debug, Clone, Default)]
pub struct ShadowingProcess {
    current_db: Option<f64>,
    last_rel_pos: Option<Vec2>,
}

impl ShadowingProcess {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances the process to the given endpoint positions and returns the
    /// shadowing loss in dB. The stationary marginal is N(0, sigma^2).
    pub fn sample<R: Rng>(
        &mut self,
        params: &ChannelParams,
        class: LinkClass,
        tx_pos: Vec2,
        rx_pos: Vec2,
        rng: &mut R,
    ) -> f64 {
        let sigma = params.shadowing_sigma_db(class);
        let rel = tx_pos - rx_pos;
        let gauss = |rng: &mut R| {
            if sigma > 0.0 {
                Normal::new(0.0, sigma).unwrap().sample(rng)
            } else {
                0.0
            }
        };
        let value = match (self.current_db, self.last_rel_pos) {
            (Some(prev), Some(prev_rel)) => {
                let delta = (rel - prev_rel).norm();
                let rho = (-delta / params.shadowing_corr_dist_m).exp();
                rho * prev + (1.0 - rho * rho).sqrt() * gauss(rng)
            }
            _ => gauss(rng),
        };
        self.current_db = Some(value);
        self.last_rel_pos = Some(rel);
        value
    }
}

/// Classifies the tx-rx link by blockage geometry and counts vehicle
/// blockers. Buildings dominate: any building on the segment means NLOS.
pub fn classify_link(
    w: &WorldState,
    tx: EntityId,
    rx: EntityId,
) -> Result<(LinkClass, u32), Error> {
    let tx_e = w.entity(tx).ok_or(Error::UnknownEntity(tx))?;
    let rx_e = w.entity(rx).ok_or(Error::UnknownEntity(rx))?;
    let a = tx_e.position();
    let b = rx_e.position();
    let mut vehicle_blockers = 0u32;
    let mut building_blocked = false;
    for e in &w.entities {
        if e.id == tx || e.id == rx {
            continue;
        }
        match e.kind {
            EntityKind::Building => {
                if segment_intersects_rect(a, b, &e.footprint) {
                    building_blocked = true;
                }
            }
            EntityKind::Vehicle => {
                if segment_intersects_rect(a, b, &e.footprint) {
                    vehicle_blockers += 1;
                }
            }
            EntityKind::Pedestrian => {}
        }
    }
    let class = if building_blocked {
        LinkClass::Nlos
    } else if vehicle_blockers > 0 {
        LinkClass::Nlosv
    } else {
        LinkClass::Los
    };
    Ok((class, vehicle_blockers))
}

/// Distance-dependent path loss for the class, dB.
pub fn pathloss_db(params: &ChannelParams, class: LinkClass, distance_m: f64) -> f64 {
    let c = match class {
        LinkClass::Nlos => params.pathloss_nlos,
        // NLOSv uses the LOS curve; blockage is added separately.
        LinkClass::Los | LinkClass::Nlosv => params.pathloss_los,
    };
    c.a_db
        + c.b_db_per_decade * distance_m.log10()
        + c.c_db_per_decade_ghz * params.carrier_freq_ghz.log10()
}

/// Large-scale loss components of one link realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleLoss {
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    pub blockage_db: f64,
}

impl LargeScaleLoss {
    pub fn total_db(&self) -> f64 {
        self.pathloss_db + self.shadowing_db + self.blockage_db
    }
}

/// Path loss + correlated shadowing + per-blocker attenuation.
/// Blockage applies only to NLOSv links.
pub fn large_scale_loss<R: Rng>(
    params: &ChannelParams,
    class: LinkClass,
    tx_pos: Vec2,
    rx_pos: Vec2,
    shadow: &mut ShadowingProcess,
    blockers: u32,
    rng: &mut R,
) -> Result<LargeScaleLoss, Error> {
    // The log-distance model is not applicable below ~1 m; entities have no
    // collision model and may momentarily overlap, so floor the distance.
    let distance = tx_pos.distance(rx_pos).max(1.0);
    let pathloss = pathloss_db(params, class, distance);
    let shadowing = shadow.sample(params, class, tx_pos, rx_pos, rng);
    let mut blockage = 0.0;
    if class == LinkClass::Nlosv {
        let dist = Normal::new(params.blockage_loss_mean_db, params.blockage_loss_sigma_db)
            .map_err(|_| Error::Config("channel.blockage_loss_sigma_db invalid".into()))?;
        for _ in 0..blockers {
            blockage += dist.sample(rng).max(0.0);
        }
    }
    Ok(LargeScaleLoss {
        pathloss_db: pathloss,
        shadowing_db: shadowing,
        blockage_db: blockage,
    })
}

/// Fast-fading power gain `|h|^2`, unit mean.
///
/// LOS and NLOSv draw from a Rician distribution with the configured
/// K-factor; NLOS is Rayleigh (K = 0).
pub fn fading_gain<R: Rng>(params: &ChannelParams, class: LinkClass, rng: &mut R) -> f64 {
    let k_lin = match class {
        LinkClass::Los | LinkClass::Nlosv => 10f64.powf(params.rician_k_db / 10.0),
        LinkClass::Nlos => 0.0,
    };
    // h = sqrt(K/(K+1)) + w, w ~ CN(0, 1/(K+1)); E|h|^2 = 1.
    let specular = (k_lin / (k_lin + 1.0)).sqrt();
    let scatter_sigma = (1.0 / (2.0 * (k_lin + 1.0))).sqrt();
    let n = Normal::new(0.0, scatter_sigma).unwrap();
    let re = specular + n.sample(rng);
    let im: f64 = n.sample(rng);
    re * re + im * im
}

/// Shannon rate with a spectral-efficiency cap, bit/s.
pub fn achievable_rate(
    params: &ChannelParams,
    bandwidth_hz: f64,
    total_loss_db: f64,
    fading_power: f64,
) -> f64 {
    debug_assert!(bandwidth_hz > 0.0);
    let noise_dbm =
        params.noise_psd_dbm_hz + 10.0 * bandwidth_hz.log10() + params.noise_figure_db;
    let snr_lin = 10f64.powf((params.tx_power_dbm - total_loss_db - noise_dbm) / 10.0)
        * fading_power;
    bandwidth_hz * (1.0 + snr_lin).log2().min(params.spectral_efficiency_cap)
}

/// SNR in dB for a realized link, for logging.
pub fn snr_db(params: &ChannelParams, bandwidth_hz: f64, total_loss_db: f64, fading_power: f64) -> f64 {
    let noise_dbm =
        params.noise_psd_dbm_hz + 10.0 * bandwidth_hz.log10() + params.noise_figure_db;
    params.tx_power_dbm - total_loss_db - noise_dbm + 10.0 * fading_power.max(1e-300).log10()
}
