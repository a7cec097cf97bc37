//! NR uplink numerology: the global frequency raster, band classes of the
//! four SoftBank 5G SA carriers, TDD uplink share and the TS 38.306
//! approximate maximum data rate for a single uplink carrier.
//!
//! Rational quantities (`Rmax`, overhead, uplink symbol share) are carried as
//! exact fractions and converted to `f64` only for the final product.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Fraction = Ratio<i128>;

/// Largest `NREF` of the global raster.
pub const MAX_NREF: u64 = 3_279_165;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhyError {
    #[error("ARFCN {0} outside the global raster (0..={MAX_NREF})")]
    ArfcnOutOfRange(u64),
    #[error("invalid link configuration: {0}")]
    Config(String),
    #[error("invalid TDD pattern: {0}")]
    Pattern(String),
}

/// Carrier frequency in kHz for a global-raster channel number.
pub fn arfcn_to_khz(n_ref: u64) -> Result<u64, PhyError> {
    match n_ref {
        0..=599_999 => Ok(5 * n_ref),
        600_000..=2_016_666 => Ok(3_000_000 + 15 * (n_ref - 600_000)),
        2_016_667..=MAX_NREF => Ok(24_250_080 + 60 * (n_ref - 2_016_667)),
        _ => Err(PhyError::ArfcnOutOfRange(n_ref)),
    }
}

pub fn arfcn_to_mhz(n_ref: u64) -> Result<f64, PhyError> {
    arfcn_to_khz(n_ref).map(|khz| khz as f64 / 1000.0)
}

/// Formats a kHz value as MHz without trailing zeros (`700`, `3799.995`).
pub fn format_mhz(khz: u64) -> String {
    let whole = khz / 1000;
    let frac = khz % 1000;
    if frac == 0 {
        whole.to_string()
    } else {
        format!("{whole}.{frac:03}").trim_end_matches('0').to_string()
    }
}

#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandClass {
    N28_700,
    N3_1800,
    N77_3400,
    N77_3900,
    Other,
}

impl BandClass {
    pub const CARRIERS: [BandClass; 4] = [
        BandClass::N28_700,
        BandClass::N3_1800,
        BandClass::N77_3400,
        BandClass::N77_3900,
    ];

    /// Half-open classification range `[lo, hi)` in MHz.
    pub fn range_mhz(self) -> Option<(f64, f64)> {
        match self {
            BandClass::N28_700 => Some((690.0, 810.0)),
            BandClass::N3_1800 => Some((1710.0, 1880.0)),
            BandClass::N77_3400 => Some((3300.0, 3700.0)),
            BandClass::N77_3900 => Some((3700.0, 4200.0)),
            BandClass::Other => None,
        }
    }

    pub fn band(self) -> &'static str {
        match self {
            BandClass::N28_700 => "n28",
            BandClass::N3_1800 => "n3",
            BandClass::N77_3400 | BandClass::N77_3900 => "n77",
            BandClass::Other => "other",
        }
    }

    pub fn nominal_mhz(self) -> Option<u32> {
        match self {
            BandClass::N28_700 => Some(700),
            BandClass::N3_1800 => Some(1800),
            BandClass::N77_3400 => Some(3400),
            BandClass::N77_3900 => Some(3900),
            BandClass::Other => None,
        }
    }

    /// The deployed carrier configuration for this class.
    pub fn carrier(self) -> Option<UlLinkConfig> {
        let (duplex, bw) = match self {
            BandClass::N28_700 => (Duplex::Fdd, 10),
            BandClass::N3_1800 => (Duplex::Fdd, 15),
            BandClass::N77_3400 => (Duplex::Tdd, 40),
            BandClass::N77_3900 => (Duplex::Tdd, 100),
            BandClass::Other => return None,
        };
        Some(UlLinkConfig::for_carrier(duplex, bw, None, &PrbTable::default()).expect("shipped rows"))
    }

    /// Representative SSB ARFCN inside the class range.
    pub fn ssb_arfcn(self) -> Option<u64> {
        match self {
            BandClass::N28_700 => Some(152_650),
            BandClass::N3_1800 => Some(368_410),
            BandClass::N77_3400 => Some(628_000),
            BandClass::N77_3900 => Some(663_334),
            BandClass::Other => None,
        }
    }

    pub fn parse(s: &str) -> Option<BandClass> {
        match s.to_ascii_lowercase().as_str() {
            "n28" | "n28_700" | "700" => Some(BandClass::N28_700),
            "n3" | "n3_1800" | "1800" => Some(BandClass::N3_1800),
            "n77_3400" | "3400" => Some(BandClass::N77_3400),
            "n77_3900" | "3900" => Some(BandClass::N77_3900),
            _ => None,
        }
    }
}

impl fmt::Display for BandClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.nominal_mhz() {
            Some(mhz) => write!(f, "{} ({} MHz)", self.band(), mhz),
            None => f.write_str("other"),
        }
    }
}

/// Total: frequencies outside every configured range are `Other`.
pub fn classify_band(freq_mhz: f64) -> BandClass {
    BandClass::CARRIERS
        .into_iter()
        .find(|b| {
            let (lo, hi) = b.range_mhz().expect("carrier classes have ranges");
            freq_mhz >= lo && freq_mhz < hi
        })
        .unwrap_or(BandClass::Other)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Duplex {
    Fdd,
    Tdd,
}

impl fmt::Display for Duplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Duplex::Fdd => "FDD",
            Duplex::Tdd => "TDD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Downlink,
    Special,
    Uplink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TddPattern {
    slots: Vec<SlotKind>,
    /// Special-slot symbols `(dl, gap, ul)`.
    special: (u32, u32, u32),
}

impl TddPattern {
    pub fn new(slots: Vec<SlotKind>, special: (u32, u32, u32)) -> Result<Self, PhyError> {
        let (dl, gap, ul) = special;
        if dl + gap + ul != 14 {
            return Err(PhyError::Pattern(format!("special slot split {special:?} does not sum to 14")));
        }
        if slots.is_empty() {
            return Err(PhyError::Pattern("empty slot period".into()));
        }
        let has_ul = slots.contains(&SlotKind::Uplink)
            || (ul > 0 && slots.contains(&SlotKind::Special));
        if !has_ul {
            return Err(PhyError::Pattern("no uplink symbols in period".into()));
        }
        Ok(TddPattern { slots, special })
    }

    /// Parses a slot string such as `DDDDDDDSUU`.
    pub fn parse(slots: &str, special: (u32, u32, u32)) -> Result<Self, PhyError> {
        let slots = slots
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'D' => Ok(SlotKind::Downlink),
                'S' => Ok(SlotKind::Special),
                'U' => Ok(SlotKind::Uplink),
                other => Err(PhyError::Pattern(format!("unknown slot symbol {other:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        TddPattern::new(slots, special)
    }

    /// `DDDDDDDSUU` with a 6:4:4 special slot, the 7:2 DL:UL timing.
    pub fn dl7_ul2() -> Self {
        TddPattern::parse("DDDDDDDSUU", (6, 4, 4)).expect("valid default pattern")
    }

    pub fn slots(&self) -> &[SlotKind] {
        &self.slots
    }

    pub fn uplink_slots_per_period(&self) -> usize {
        self.slots.iter().filter(|s| **s == SlotKind::Uplink).count()
    }
}

/// `(14·#U + ul_sym·#S) / (14·#slots)`
pub fn tdd_ul_fraction(p: &TddPattern) -> Fraction {
    let n_u = p.slots.iter().filter(|s| **s == SlotKind::Uplink).count() as i128;
    let n_s = p.slots.iter().filter(|s| **s == SlotKind::Special).count() as i128;
    Fraction::new(14 * n_u + p.special.2 as i128 * n_s, 14 * p.slots.len() as i128)
}

/// Maximum transmission bandwidth `N_RB` per (SCS, channel bandwidth).
///
/// Only the four deployed carriers ship by default; further rows may be
/// added from a TOML file of `[[prb]]` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrbTable {
    rows: BTreeMap<(u32, u32), u32>,
}

#[derive(Deserialize)]
struct PrbFile {
    prb: Vec<PrbRow>,
}

#[derive(Deserialize)]
struct PrbRow {
    scs_khz: u32,
    bandwidth_mhz: u32,
    n_prb: u32,
}

impl Default for PrbTable {
    fn default() -> Self {
        let rows = [((15, 10), 52), ((15, 15), 79), ((30, 40), 106), ((30, 100), 273)]
            .into_iter()
            .collect();
        PrbTable { rows }
    }
}

impl PrbTable {
    pub fn lookup(&self, scs_khz: u32, bandwidth_mhz: u32) -> Option<u32> {
        self.rows.get(&(scs_khz, bandwidth_mhz)).copied()
    }

    pub fn insert(&mut self, scs_khz: u32, bandwidth_mhz: u32, n_prb: u32) {
        self.rows.insert((scs_khz, bandwidth_mhz), n_prb);
    }

    /// Adds or overrides rows from TOML text.
    pub fn extend_from_toml(&mut self, text: &str) -> Result<(), PhyError> {
        let file: PrbFile = toml::from_str(text).map_err(|e| PhyError::Config(format!("PRB table: {e}")))?;
        for r in file.prb {
            if r.n_prb == 0 || !matches!(r.scs_khz, 15 | 30) {
                return Err(PhyError::Config(format!(
                    "PRB row scs={} bw={} n_prb={} is not usable",
                    r.scs_khz, r.bandwidth_mhz, r.n_prb
                )));
            }
            self.insert(r.scs_khz, r.bandwidth_mhz, r.n_prb);
        }
        Ok(())
    }
}

/// Parameters of the TS 38.306 data-rate approximation for one UL carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct UlLinkConfig {
    pub duplex: Duplex,
    pub bandwidth_mhz: u32,
    pub scs_khz: u32,
    pub n_prb: u32,
    pub layers: u32,
    /// Modulation order `Qm` (8 for 256QAM).
    pub modulation_order: u32,
    pub code_rate_max: Fraction,
    pub overhead: Fraction,
    pub scaling: Fraction,
    pub ul_symbol_fraction: Fraction,
}

impl UlLinkConfig {
    /// UL-1Tx, 256QAM, `Rmax = 948/1024`, FR1 UL overhead 0.08, `f = 1`.
    /// SCS defaults to 15 kHz for FDD and 30 kHz for TDD; TDD uses the
    /// 7:2 pattern.
    pub fn for_carrier(
        duplex: Duplex,
        bandwidth_mhz: u32,
        scs_khz: Option<u32>,
        table: &PrbTable,
    ) -> Result<Self, PhyError> {
        let scs_khz = scs_khz.unwrap_or(match duplex {
            Duplex::Fdd => 15,
            Duplex::Tdd => 30,
        });
        let n_prb = table.lookup(scs_khz, bandwidth_mhz).ok_or_else(|| {
            PhyError::Config(format!("no PRB entry for {bandwidth_mhz} MHz at {scs_khz} kHz SCS"))
        })?;
        let ul_symbol_fraction = match duplex {
            Duplex::Fdd => Fraction::from_integer(1),
            Duplex::Tdd => tdd_ul_fraction(&TddPattern::dl7_ul2()),
        };
        Ok(UlLinkConfig {
            duplex,
            bandwidth_mhz,
            scs_khz,
            n_prb,
            layers: 1,
            modulation_order: 8,
            code_rate_max: Fraction::new(948, 1024),
            overhead: Fraction::new(8, 100),
            scaling: Fraction::from_integer(1),
            ul_symbol_fraction,
        })
    }

    pub fn numerology(&self) -> Option<u32> {
        match self.scs_khz {
            15 => Some(0),
            30 => Some(1),
            _ => None,
        }
    }

    pub fn validate(&self, table: &PrbTable) -> Result<(), PhyError> {
        let bad = |m: String| Err(PhyError::Config(m));
        if self.numerology().is_none() {
            return bad(format!("unsupported SCS {} kHz", self.scs_khz));
        }
        match table.lookup(self.scs_khz, self.bandwidth_mhz) {
            Some(n) if n == self.n_prb => {}
            Some(n) => {
                return bad(format!(
                    "n_prb {} inconsistent with {} MHz at {} kHz (expected {n})",
                    self.n_prb, self.bandwidth_mhz, self.scs_khz
                ))
            }
            None => {
                return bad(format!(
                    "no PRB entry for {} MHz at {} kHz SCS",
                    self.bandwidth_mhz, self.scs_khz
                ))
            }
        }
        if self.layers == 0 || self.modulation_order == 0 {
            return bad("layers and modulation order must be positive".into());
        }
        let zero = Fraction::from_integer(0);
        let one = Fraction::from_integer(1);
        if self.code_rate_max <= zero || self.code_rate_max > one {
            return bad(format!("code rate {} outside (0, 1]", self.code_rate_max));
        }
        if self.overhead < zero || self.overhead >= one {
            return bad(format!("overhead {} outside [0, 1)", self.overhead));
        }
        if self.scaling <= zero || self.scaling > one {
            return bad(format!("scaling factor {} outside (0, 1]", self.scaling));
        }
        if self.ul_symbol_fraction <= zero || self.ul_symbol_fraction > one {
            return bad(format!("UL symbol fraction {} outside (0, 1]", self.ul_symbol_fraction));
        }
        let is_full = self.ul_symbol_fraction == one;
        match self.duplex {
            Duplex::Fdd if !is_full => bad("FDD carriers use the full symbol budget".into()),
            Duplex::Tdd if is_full => bad("TDD carriers need a UL fraction below 1".into()),
            _ => Ok(()),
        }
    }

    /// Exact data rate in bit/s as a fraction.
    pub fn rate_bps(&self) -> Fraction {
        let mu = self.numerology().expect("validated numerology");
        // 1 / Ts = 14 · 2^μ · 1000 symbols per second
        let symbols_per_s = 14 * (1i128 << mu) * 1000;
        Fraction::from_integer(self.layers as i128 * self.modulation_order as i128)
            * self.scaling
            * self.code_rate_max
            * Fraction::from_integer(self.n_prb as i128 * 12 * symbols_per_s)
            * (Fraction::from_integer(1) - self.overhead)
            * self.ul_symbol_fraction
    }
}

impl fmt::Display for UlLinkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "duplex={} bw_mhz={} scs_khz={} n_prb={} layers={} qm={} rmax={} overhead={} scaling={} ul_fraction={}",
            self.duplex,
            self.bandwidth_mhz,
            self.scs_khz,
            self.n_prb,
            self.layers,
            self.modulation_order,
            self.code_rate_max,
            self.overhead,
            self.scaling,
            self.ul_symbol_fraction
        )
    }
}

/// Maximum UL throughput in Mbps, validated against the shipped PRB table.
pub fn max_ul_throughput(cfg: &UlLinkConfig) -> Result<f64, PhyError> {
    max_ul_throughput_with(cfg, &PrbTable::default())
}

pub fn max_ul_throughput_with(cfg: &UlLinkConfig, table: &PrbTable) -> Result<f64, PhyError> {
    cfg.validate(table)?;
    let mbps = cfg.rate_bps() / Fraction::from_integer(1_000_000);
    Ok(*mbps.numer() as f64 / *mbps.denom() as f64)
}

/// Throughput cap of a band class's deployed carrier; `None` for `Other`.
pub fn band_cap_mbps(band: BandClass) -> Option<f64> {
    band.carrier().map(|c| max_ul_throughput(&c).expect("shipped carrier is valid"))
}
