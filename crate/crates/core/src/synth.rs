//! Seeded synthetic 5G SA uplink drive traces.
//!
//! Each second the serving band may hand over (a Markov chain whose jump
//! rate is the scenario's handover rate and whose target distribution is
//! the scenario's band mix). RSRP and SINR are discrete Ornstein-Uhlenbeck
//! processes around band-dependent means; cell load is another bounded OU
//! process. Throughput is
//!
//! ```text
//! cap(band) · efficiency(SINR) · load · lognormal noise
//! ```
//!
//! clipped to `[0, cap]`, where `cap` is the carrier's TS 38.306 maximum and
//! `efficiency` is a logistic curve in dB. A handover may knock throughput to
//! zero for 1–3 s. The distributions are artifact assumptions calibrated only
//! to the aggregate drive-test statistics (mean RSRP −92.96 dBm, mean
//! throughput 12.07 Mbps for the train corpus).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{TelemetrySample, Trace, TraceMeta, TraceRow};
use crate::phy::{band_cap_mbps, BandClass, Duplex};

/// SINR (dB) at which the link reaches half of its capacity.
pub const EFFICIENCY_MIDPOINT_DB: f64 = 15.0;
/// Logistic scale of the efficiency curve in dB.
pub const EFFICIENCY_SCALE_DB: f64 = 4.0;

const RSRP_REVERSION: f64 = 0.02;
const RSRP_STEP_SD: f64 = 0.8;
const SINR_REVERSION: f64 = 0.03;
const SINR_STEP_SD: f64 = 0.6;
/// dB of SINR per dB of RSRP deviation.
const SINR_RSRP_COUPLING: f64 = 0.35;
const LOAD_REVERSION: f64 = 0.015;
const LOAD_STEP_SD: f64 = 0.025;
/// RSRQ drop (dB) per unit of cell load.
const RSRQ_LOAD_DB: f64 = 10.0;
const SPEED_REVERSION: f64 = 0.05;

/// Fraction of capacity reached at `sinr_db`.
pub fn efficiency(sinr_db: f64) -> f64 {
    1.0 / (1.0 + (-(sinr_db - EFFICIENCY_MIDPOINT_DB) / EFFICIENCY_SCALE_DB).exp())
}

fn band_rsrp_offset(b: BandClass) -> f64 {
    match b {
        BandClass::N28_700 => 4.0,
        BandClass::N3_1800 => 1.0,
        BandClass::N77_3400 => -2.0,
        BandClass::N77_3900 => -3.0,
        BandClass::Other => 0.0,
    }
}

fn band_sinr_offset(b: BandClass) -> f64 {
    match b {
        BandClass::N28_700 => -2.0,
        BandClass::N3_1800 => 0.0,
        BandClass::N77_3400 => 1.0,
        BandClass::N77_3900 => 1.5,
        BandClass::Other => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("unknown preset {0:?} (train, walk, drive, tram, metro, n3_locked, n28_locked)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mobility {
    Walking,
    Driving,
    Tram,
    Metro,
    Train,
}

impl Mobility {
    fn speed_sd(self) -> f64 {
        match self {
            Mobility::Walking => 0.4,
            Mobility::Driving => 4.0,
            Mobility::Tram => 2.5,
            Mobility::Metro => 4.0,
            Mobility::Train => 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandPolicy {
    All,
    Locked(BandClass),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub mobility: Mobility,
    pub mean_speed_kmh: f64,
    pub band_policy: BandPolicy,
    /// Share of time per carrier (n28, n3, n77 3.4 GHz, n77 3.9 GHz) when
    /// the band is not locked.
    pub band_mix: [f64; 4],
    pub duration_s: u32,
    pub handover_rate_per_min: f64,
    pub dropout_prob: f64,
    pub rsrp_mean_dbm: f64,
    pub rsrq_mean_db: f64,
    pub sinr_mean_db: f64,
    pub load_mean: f64,
    /// Lower bound of the load factor.
    pub load_floor: f64,
    /// Standard deviation of the per-second log-normal throughput noise.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Scenario(m));
        if self.duration_s < 60 {
            return bad(format!("duration {} s is below 60 s", self.duration_s));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout probability {}", self.dropout_prob));
        }
        if !(self.handover_rate_per_min >= 0.0 && self.handover_rate_per_min <= 60.0) {
            return bad(format!("handover rate {} per minute", self.handover_rate_per_min));
        }
        if self.mean_speed_kmh < 0.0 || self.noise_sd < 0.0 {
            return bad("speed and noise must be non-negative".into());
        }
        if !(self.load_floor > 0.0 && self.load_floor <= self.load_mean && self.load_mean <= 1.0) {
            return bad(format!("load floor {} / mean {}", self.load_floor, self.load_mean));
        }
        match self.band_policy {
            BandPolicy::Locked(BandClass::Other) => return bad("cannot lock to an unclassified band".into()),
            BandPolicy::Locked(_) => {}
            BandPolicy::All => {
                if self.band_mix.iter().any(|w| *w < 0.0) || self.band_mix.iter().sum::<f64>() <= 0.0 {
                    return bad(format!("band mix {:?}", self.band_mix));
                }
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_duration(mut self, duration_s: u32) -> Self {
        self.duration_s = duration_s;
        self
    }

    /// Time share per carrier under this policy.
    pub fn effective_mix(&self) -> [f64; 4] {
        match self.band_policy {
            BandPolicy::All => {
                let total: f64 = self.band_mix.iter().sum();
                self.band_mix.map(|w| w / total)
            }
            BandPolicy::Locked(b) => BandClass::CARRIERS.map(|c| if c == b { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Train,
    Walk,
    Drive,
    Tram,
    Metro,
    N3Locked,
    N28Locked,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Train,
        Preset::Walk,
        Preset::Drive,
        Preset::Tram,
        Preset::Metro,
        Preset::N3Locked,
        Preset::N28Locked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Train => "train",
            Preset::Walk => "walk",
            Preset::Drive => "drive",
            Preset::Tram => "tram",
            Preset::Metro => "metro",
            Preset::N3Locked => "n3_locked",
            Preset::N28Locked => "n28_locked",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| SynthError::UnknownPreset(s.to_string()))
    }
}

/// Scenario parameters per preset. Speeds, signal means and band shares
/// follow the published per-route summaries; durations match the typical
/// trace length of each route class.
pub fn preset(name: &str) -> Result<Scenario, SynthError> {
    Ok(preset_scenario(name.parse()?))
}

pub fn preset_scenario(p: Preset) -> Scenario {
    let base = Scenario {
        name: p.name().to_string(),
        mobility: Mobility::Train,
        mean_speed_kmh: 50.45,
        band_policy: BandPolicy::All,
        band_mix: [12.14, 24.16, 59.63, 4.08],
        duration_s: 2514,
        handover_rate_per_min: 1.0,
        dropout_prob: 0.3,
        rsrp_mean_dbm: -92.96,
        rsrq_mean_db: -15.21,
        sinr_mean_db: 12.36,
        load_mean: 0.5,
        load_floor: 0.05,
        noise_sd: 0.5,
        seed: 0,
    };
    match p {
        Preset::Train => base,
        Preset::Walk => Scenario {
            mobility: Mobility::Walking,
            mean_speed_kmh: 3.29,
            band_mix: [44.78, 22.83, 2.20, 30.19],
            duration_s: 1590,
            handover_rate_per_min: 0.2,
            dropout_prob: 0.2,
            rsrp_mean_dbm: -82.29,
            rsrq_mean_db: -15.27,
            sinr_mean_db: 14.48,
            ..base
        },
        Preset::Drive => Scenario {
            mobility: Mobility::Driving,
            mean_speed_kmh: 15.98,
            band_mix: [2.81, 72.73, 24.46, 0.0],
            duration_s: 605,
            handover_rate_per_min: 0.5,
            rsrp_mean_dbm: -86.37,
            rsrq_mean_db: -14.53,
            sinr_mean_db: 15.81,
            ..base
        },
        Preset::Tram => Scenario {
            mobility: Mobility::Tram,
            mean_speed_kmh: 12.06,
            band_mix: [8.87, 66.94, 20.32, 3.86],
            duration_s: 3572,
            handover_rate_per_min: 0.4,
            rsrp_mean_dbm: -81.27,
            rsrq_mean_db: -13.97,
            sinr_mean_db: 14.52,
            ..base
        },
        Preset::Metro => Scenario {
            mobility: Mobility::Metro,
            mean_speed_kmh: 25.86,
            band_mix: [20.72, 55.77, 8.77, 14.75],
            duration_s: 1947,
            handover_rate_per_min: 0.8,
            rsrp_mean_dbm: -78.27,
            rsrq_mean_db: -15.17,
            sinr_mean_db: 9.82,
            ..base
        },
        Preset::N3Locked => Scenario {
            mean_speed_kmh: 53.28,
            band_policy: BandPolicy::Locked(BandClass::N3_1800),
            duration_s: 3857,
            rsrp_mean_dbm: -95.61,
            rsrq_mean_db: -17.32,
            sinr_mean_db: 7.59,
            ..base
        },
        Preset::N28Locked => Scenario {
            mean_speed_kmh: 53.94,
            band_policy: BandPolicy::Locked(BandClass::N28_700),
            duration_s: 3954,
            rsrp_mean_dbm: -97.64,
            rsrq_mean_db: -17.02,
            sinr_mean_db: 5.35,
            ..base
        },
    }
}

struct Carrier {
    band: BandClass,
    cap: f64,
    n_prb: u32,
    bw_mhz: f64,
    arfcn: u64,
    ul_slots_per_s: f64,
}

impl Carrier {
    fn of(band: BandClass) -> Carrier {
        let link = band.carrier().expect("carrier class");
        let slots_per_s = 1000.0 * f64::from(1u32 << link.numerology().expect("FR1 numerology"));
        let ul_slots_per_s = match link.duplex {
            Duplex::Fdd => slots_per_s,
            Duplex::Tdd => slots_per_s * 0.2,
        };
        Carrier {
            band,
            cap: band_cap_mbps(band).expect("carrier class"),
            n_prb: link.n_prb,
            bw_mhz: f64::from(link.bandwidth_mhz),
            arfcn: band.ssb_arfcn().expect("carrier class"),
            ul_slots_per_s,
        }
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn pick_band(rng: &mut ChaCha8Rng, mix: &[f64; 4]) -> BandClass {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (b, w) in BandClass::CARRIERS.iter().zip(mix) {
        acc += w;
        if u < acc {
            return *b;
        }
    }
    *BandClass::CARRIERS
        .iter()
        .zip(mix)
        .rev()
        .find(|(_, w)| **w > 0.0)
        .map(|(b, _)| b)
        .expect("mix has positive weight")
}

/// Generates one trace; identical scenarios (including seed) give identical traces.
pub fn synth_trace(s: &Scenario) -> Result<Trace, SynthError> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mix = s.effective_mix();
    let carriers: Vec<Carrier> = BandClass::CARRIERS.into_iter().map(Carrier::of).collect();
    let carrier = |b: BandClass| &carriers[BandClass::CARRIERS.iter().position(|c| *c == b).unwrap()];

    // Centre the band offsets so the time-averaged RSRP/SINR match the scenario means.
    let rsrp_bias: f64 = BandClass::CARRIERS.iter().zip(&mix).map(|(b, w)| w * band_rsrp_offset(*b)).sum();
    let sinr_bias: f64 = BandClass::CARRIERS.iter().zip(&mix).map(|(b, w)| w * band_sinr_offset(*b)).sum();
    let rsrp_stationary_sd = RSRP_STEP_SD / (1.0 - (1.0 - RSRP_REVERSION).powi(2)).sqrt();
    let ho_prob = s.handover_rate_per_min / 60.0;
    let noise = Normal::new(-0.5 * s.noise_sd * s.noise_sd, s.noise_sd).expect("non-negative sd");

    let mut band = pick_band(&mut rng, &mix);
    let mut rsrp_dev: f64 = rng.sample::<f64, _>(StandardNormal) * rsrp_stationary_sd;
    let mut sinr_dev = 0.0;
    let mut load = s.load_mean;
    let mut speed = s.mean_speed_kmh;
    let (mut lat, mut lon) = (35.681_236_f64, 139.767_125_f64);
    let mut dropout_left = 0u32;

    let mut rows = Vec::with_capacity(s.duration_s as usize);
    for t in 0..s.duration_s {
        if t > 0 && rng.gen::<f64>() < ho_prob {
            band = pick_band(&mut rng, &mix);
            rsrp_dev = rng.sample::<f64, _>(StandardNormal) * rsrp_stationary_sd;
            if rng.gen::<f64>() < s.dropout_prob {
                dropout_left = rng.gen_range(1..=3);
            }
        }
        let c = carrier(band);

        rsrp_dev = (1.0 - RSRP_REVERSION) * rsrp_dev + RSRP_STEP_SD * rng.sample::<f64, _>(StandardNormal);
        sinr_dev = (1.0 - SINR_REVERSION) * sinr_dev + SINR_STEP_SD * rng.sample::<f64, _>(StandardNormal);
        load += LOAD_REVERSION * (s.load_mean - load) + LOAD_STEP_SD * rng.sample::<f64, _>(StandardNormal);
        load = load.clamp(s.load_floor, 1.0);
        speed += SPEED_REVERSION * (s.mean_speed_kmh - speed)
            + s.mobility.speed_sd() * 0.3 * rng.sample::<f64, _>(StandardNormal);
        speed = speed.max(0.0);

        let rsrp = round_to(
            (s.rsrp_mean_dbm + band_rsrp_offset(band) - rsrp_bias + rsrp_dev).clamp(-140.0, -44.0),
            2,
        );
        let sinr = round_to(
            (s.sinr_mean_db + band_sinr_offset(band) - sinr_bias + SINR_RSRP_COUPLING * rsrp_dev + sinr_dev)
                .clamp(-10.0, 35.0),
            2,
        );
        let rsrq_noise: f64 = rng.sample(StandardNormal);
        let rsrq = round_to(
            (s.rsrq_mean_db + 0.2 * (sinr - s.sinr_mean_db) - RSRQ_LOAD_DB * (load - s.load_mean) + 0.3 * rsrq_noise)
                .clamp(-30.0, -3.0),
            2,
        );

        let eff = efficiency(sinr);
        let achievable = c.cap * eff;
        let raw = achievable * load * noise.sample(&mut rng).exp();
        let thpt = if dropout_left > 0 {
            dropout_left -= 1;
            0.0
        } else {
            round_to(raw.min(c.cap), 2).max(0.01)
        };
        let share = (thpt / achievable).min(1.0);
        let pucch_noise: f64 = rng.sample(StandardNormal);
        let pucch = round_to((-100.0 + (18.0 - rsrp) + pucch_noise).clamp(-40.0, 23.0), 1);

        let metres = speed / 3.6;
        lon += metres / (111_320.0 * lat.to_radians().cos());
        lat += 0.2 * metres / 110_574.0;

        rows.push(TraceRow::Sample(TelemetrySample {
            t,
            rsrp_dbm: rsrp,
            rsrq_db: rsrq,
            sinr_db: sinr,
            ssb_arfcn: c.arfcn,
            thpt_mbps: thpt,
            rb_alloc: Some((f64::from(c.n_prb) * share).round() as u32),
            sched_count: Some((c.ul_slots_per_s * share).round() as u32),
            pucch_tx_dbm: Some(pucch),
            bw_mhz: Some(c.bw_mhz),
            lat: Some(round_to(lat, 6)),
            lon: Some(round_to(lon, 6)),
            speed_kmh: Some(round_to(speed, 1)),
        }));
        debug_assert_eq!(c.band, band);
    }

    let meta = TraceMeta {
        id: format!("{}-s{}", s.name, s.seed),
        scenario: Some(s.name.clone()),
        band_lock: match s.band_policy {
            BandPolicy::Locked(b) => Some(b),
            BandPolicy::All => None,
        },
        source: Some(format!("synthetic seed={} duration={}", s.seed, s.duration_s)),
    };
    Trace::new(meta, rows).map_err(|e| SynthError::Scenario(e.to_string()))
}
