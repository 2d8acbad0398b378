//! System constants, geometry, large-scale fading and Doppler arithmetic.
//!
//! [`SystemConfig`] stores everything in linear SI units. The on-disk
//! configuration ([`ConfigFile`]) uses dBm for powers and dB for gains and is
//! converted once on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rounded value; Doppler figures in this crate are quoted against it
/// (5 m/s at 3 GHz is exactly 50 Hz).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Path-loss exponents for the three links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossExponents {
    pub bs_ue: f64,
    pub ris_ue: f64,
    pub bs_ris: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// N
    pub n_bs_antennas: usize,
    /// M̃, the physical element count.
    pub ris_elements_total: usize,
    /// M, the number of sub-surfaces sharing one coefficient each.
    pub ris_groups: usize,
    pub n_users: usize,
    /// Reflection-pattern slots T per coherence interval.
    pub pilot_slots: usize,
    /// V
    pub train_intervals: usize,
    /// P
    pub predict_intervals: usize,
    /// Q, order of the pre-computed AR bank.
    pub ar_order: usize,
    pub pilot_power: f64,
    pub data_power: f64,
    pub noise_variance: f64,
    pub carrier_freq: f64,
    /// Diagonal loading ε added to the lag-0 autocorrelation.
    pub loading: f64,
    /// L0, linear gain at 1 m.
    pub pathloss_ref: f64,
    pub pathloss_exponents: PathLossExponents,
    pub shadowing_loss_db: f64,
    pub sample_interval: f64,
    /// When set, each sub-surface composite channel is the coherent sum of
    /// its `M̃ / M` fully correlated elements (power gain `(M̃/M)^2`).
    pub coherent_grouping: bool,
    /// Maximum Doppler frequencies (Hz) of the aging classes.
    pub doppler_grid_hz: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_bs_antennas: 12,
            ris_elements_total: 225,
            ris_groups: 15,
            n_users: 2,
            pilot_slots: 16,
            train_intervals: 25,
            predict_intervals: 20,
            ar_order: 24,
            pilot_power: dbm_to_watts(0.0),
            data_power: dbm_to_watts(5.0),
            noise_variance: dbm_to_watts(-174.0),
            carrier_freq: 3.0e9,
            loading: 0.1,
            pathloss_ref: db_to_linear(-30.0),
            pathloss_exponents: PathLossExponents {
                bs_ue: 3.0,
                ris_ue: 3.0,
                bs_ris: 2.0,
            },
            shadowing_loss_db: 10.0,
            sample_interval: 1.0e-3,
            coherent_grouping: true,
            doppler_grid_hz: (1..=10).map(|i| 10.0 * i as f64).collect(),
            rng_seed: 2024,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_bs_antennas", self.n_bs_antennas),
            ("ris_elements_total", self.ris_elements_total),
            ("ris_groups", self.ris_groups),
            ("n_users", self.n_users),
            ("pilot_slots", self.pilot_slots),
            ("train_intervals", self.train_intervals),
            ("ar_order", self.ar_order),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.ris_groups * self.ris_groups != self.ris_elements_total {
            return Err(Error::Config(format!(
                "ris_groups^2 = {} must equal ris_elements_total = {}",
                self.ris_groups * self.ris_groups,
                self.ris_elements_total
            )));
        }
        if self.pilot_slots < self.ris_groups + 1 {
            return Err(Error::Identifiability {
                slots: self.pilot_slots,
                unknowns: self.ris_groups + 1,
            });
        }
        if self.ar_order > self.train_intervals {
            return Err(Error::Config(format!(
                "ar_order {} exceeds train_intervals {}",
                self.ar_order, self.train_intervals
            )));
        }
        let positives = [
            ("pilot_power", self.pilot_power),
            ("data_power", self.data_power),
            ("noise_variance", self.noise_variance),
            ("carrier_freq", self.carrier_freq),
            ("loading", self.loading),
            ("pathloss_ref", self.pathloss_ref),
            ("sample_interval", self.sample_interval),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let e = &self.pathloss_exponents;
        if [e.bs_ue, e.ris_ue, e.bs_ris]
            .iter()
            .any(|a| !(a.is_finite() && *a > 0.0))
        {
            return Err(Error::Config("path-loss exponents must be positive".into()));
        }
        if self.doppler_grid_hz.is_empty() {
            return Err(Error::Config("doppler_grid_hz is empty".into()));
        }
        if self.doppler_grid_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "doppler_grid_hz must be strictly increasing".into(),
            ));
        }
        for &fd in &self.doppler_grid_hz {
            doppler_hz_to_normalized(fd, self)?;
        }
        Ok(())
    }

    /// Linear shadowing gain (< 1) applied to BS-UE and RIS-UE links.
    pub fn shadowing_gain(&self) -> f64 {
        db_to_linear(-self.shadowing_loss_db)
    }

    /// Power gain of one sub-surface composite channel over a single element.
    pub fn group_gain(&self) -> f64 {
        if self.coherent_grouping {
            let per_group = self.ris_elements_total as f64 / self.ris_groups as f64;
            per_group * per_group
        } else {
            1.0
        }
    }

    /// Length of the stacked estimate `[d; f_1; ...; f_M]`.
    pub fn coefficient_count(&self) -> usize {
        self.n_bs_antennas * (self.ris_groups + 1)
    }

    /// Normalized Doppler of every class in the grid.
    pub fn class_dopplers(&self) -> Result<Vec<f64>> {
        self.doppler_grid_hz
            .iter()
            .map(|&fd| doppler_hz_to_normalized(fd, self))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub d_bs_ris: f64,
    /// Horizontal offset of each user from the BS along the BS-RIS axis.
    pub d_h: Vec<f64>,
    /// Vertical offset of each user from the BS-RIS axis.
    pub d_v: Vec<f64>,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            d_bs_ris: 51.0,
            d_h: vec![25.0, 25.0],
            d_v: vec![2.0, 3.0],
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_bs_ris > 0.0) {
            return Err(Error::Config("d_bs_ris must be positive".into()));
        }
        if self.d_h.len() != self.d_v.len() {
            return Err(Error::Config(
                "d_h and d_v must have one entry per user".into(),
            ));
        }
        for (k, (&h, &v)) in self.d_h.iter().zip(&self.d_v).enumerate() {
            if !(h > 0.0 && h <= self.d_bs_ris) {
                return Err(Error::Config(format!(
                    "user {k}: d_h = {h} outside (0, d_BR]"
                )));
            }
            if !(v > 0.0) {
                return Err(Error::Config(format!(
                    "user {k}: d_v = {v} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.d_h.len()
    }

    /// Geometry with every user at the same horizontal offset.
    pub fn with_common_offset(&self, d_h: f64) -> Self {
        Self {
            d_bs_ris: self.d_bs_ris,
            d_h: vec![d_h; self.d_v.len()],
            d_v: self.d_v.clone(),
        }
    }
}

/// `l0 * d^(-alpha)`.
pub fn path_loss(d: f64, alpha: f64, l0: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!(
            "path_loss distance must be positive, got {d}"
        )));
    }
    if !(l0 > 0.0) {
        return Err(Error::Domain(format!(
            "path_loss reference gain must be positive, got {l0}"
        )));
    }
    Ok(l0 * d.powf(-alpha))
}

/// BS-UE and RIS-UE distances of user `k`.
pub fn user_distances(geom: &Geometry, k: usize) -> Result<(f64, f64)> {
    let len = geom.n_users();
    if k >= len {
        return Err(Error::IndexOutOfRange { index: k, len });
    }
    let (h, v) = (geom.d_h[k], geom.d_v[k]);
    let d_bu = h.hypot(v);
    let d_ru = (geom.d_bs_ris - h).hypot(v);
    Ok((d_bu, d_ru))
}

/// `f_n = v f_c / c * T_s`, rejected when it aliases.
pub fn normalized_doppler(velocity: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(velocity >= 0.0) {
        return Err(Error::Domain(format!(
            "velocity must be non-negative, got {velocity}"
        )));
    }
    doppler_hz_to_normalized(velocity * cfg.carrier_freq / SPEED_OF_LIGHT, cfg)
}

pub fn doppler_hz_to_normalized(f_d: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(f_d >= 0.0) {
        return Err(Error::Domain(format!(
            "Doppler must be non-negative, got {f_d}"
        )));
    }
    let f_n = f_d * cfg.sample_interval;
    if f_n >= 0.5 {
        return Err(Error::Aliasing { f_n });
    }
    Ok(f_n)
}

/// Average per-coefficient powers of the three links for one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkVariances {
    pub direct: f64,
    pub ris_user: f64,
    pub bs_ris: f64,
}

pub fn link_variances(cfg: &SystemConfig, geom: &Geometry, k: usize) -> Result<LinkVariances> {
    let (d_bu, d_ru) = user_distances(geom, k)?;
    let e = &cfg.pathloss_exponents;
    let shadow = cfg.shadowing_gain();
    Ok(LinkVariances {
        direct: path_loss(d_bu, e.bs_ue, cfg.pathloss_ref)? * shadow,
        ris_user: path_loss(d_ru, e.ris_ue, cfg.pathloss_ref)? * shadow * cfg.group_gain(),
        bs_ris: bs_ris_variance(cfg, geom)?,
    })
}

pub fn bs_ris_variance(cfg: &SystemConfig, geom: &Geometry) -> Result<f64> {
    path_loss(
        geom.d_bs_ris,
        cfg.pathloss_exponents.bs_ris,
        cfg.pathloss_ref,
    )
}

/// Ranges from which training geometries are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRanges {
    pub d_h: [f64; 2],
    pub d_v: [f64; 2],
}

impl Default for DatasetRanges {
    fn default() -> Self {
        Self {
            d_h: [1.0, 50.0],
            d_v: [1.0, 5.0],
        }
    }
}

impl DatasetRanges {
    pub fn validate(&self, d_bs_ris: f64) -> Result<()> {
        let [h0, h1] = self.d_h;
        let [v0, v1] = self.d_v;
        if !(h0 > 0.0 && h0 <= h1 && h1 <= d_bs_ris) {
            return Err(Error::Config(format!(
                "d_h range [{h0}, {h1}] must lie in (0, {d_bs_ris}]"
            )));
        }
        if !(v0 > 0.0 && v0 <= v1) {
            return Err(Error::Config(format!("d_v range [{v0}, {v1}] is invalid")));
        }
        Ok(())
    }
}

/// On-disk configuration: TOML with powers in dBm and gains in dB.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: SystemSection,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub dataset: DatasetRanges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub n_bs_antennas: usize,
    pub ris_elements_total: usize,
    pub ris_groups: usize,
    pub n_users: usize,
    pub pilot_slots: usize,
    pub train_intervals: usize,
    pub predict_intervals: usize,
    pub ar_order: usize,
    pub pilot_power_dbm: f64,
    pub data_power_dbm: f64,
    pub noise_variance_dbm: f64,
    pub carrier_freq_hz: f64,
    pub loading: f64,
    pub pathloss_ref_db: f64,
    /// BS-UE, RIS-UE, BS-RIS.
    pub pathloss_exponents: [f64; 3],
    pub shadowing_db: f64,
    pub sample_interval_s: f64,
    pub coherent_grouping: bool,
    pub doppler_grid_hz: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for SystemSection {
    fn default() -> Self {
        let c = SystemConfig::default();
        Self {
            n_bs_antennas: c.n_bs_antennas,
            ris_elements_total: c.ris_elements_total,
            ris_groups: c.ris_groups,
            n_users: c.n_users,
            pilot_slots: c.pilot_slots,
            train_intervals: c.train_intervals,
            predict_intervals: c.predict_intervals,
            ar_order: c.ar_order,
            pilot_power_dbm: 0.0,
            data_power_dbm: 5.0,
            noise_variance_dbm: -174.0,
            carrier_freq_hz: c.carrier_freq,
            loading: c.loading,
            pathloss_ref_db: -30.0,
            pathloss_exponents: [3.0, 3.0, 2.0],
            shadowing_db: c.shadowing_loss_db,
            sample_interval_s: c.sample_interval,
            coherent_grouping: c.coherent_grouping,
            doppler_grid_hz: c.doppler_grid_hz,
            rng_seed: c.rng_seed,
        }
    }
}

/// Fully validated scenario: system constants, geometry and dataset ranges.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub system: SystemConfig,
    pub geometry: Geometry,
    pub dataset: DatasetRanges,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let s = self.system;
        let [bs_ue, ris_ue, bs_ris] = s.pathloss_exponents;
        let system = SystemConfig {
            n_bs_antennas: s.n_bs_antennas,
            ris_elements_total: s.ris_elements_total,
            ris_groups: s.ris_groups,
            n_users: s.n_users,
            pilot_slots: s.pilot_slots,
            train_intervals: s.train_intervals,
            predict_intervals: s.predict_intervals,
            ar_order: s.ar_order,
            pilot_power: dbm_to_watts(s.pilot_power_dbm),
            data_power: dbm_to_watts(s.data_power_dbm),
            noise_variance: dbm_to_watts(s.noise_variance_dbm),
            carrier_freq: s.carrier_freq_hz,
            loading: s.loading,
            pathloss_ref: db_to_linear(s.pathloss_ref_db),
            pathloss_exponents: PathLossExponents {
                bs_ue,
                ris_ue,
                bs_ris,
            },
            shadowing_loss_db: s.shadowing_db,
            sample_interval: s.sample_interval_s,
            coherent_grouping: s.coherent_grouping,
            doppler_grid_hz: s.doppler_grid_hz,
            rng_seed: s.rng_seed,
        };
        system.validate()?;
        self.geometry.validate()?;
        if self.geometry.n_users() != system.n_users {
            return Err(Error::Config(format!(
                "geometry lists {} users, n_users = {}",
                self.geometry.n_users(),
                system.n_users
            )));
        }
        self.dataset.validate(self.geometry.d_bs_ris)?;
        Ok(Scenario {
            system,
            geometry: self.geometry,
            dataset: self.dataset,
        })
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        ConfigFile::load(path)?.into_scenario()
    }
}
