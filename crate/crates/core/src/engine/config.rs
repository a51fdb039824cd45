//! Scenario configuration: every knob of a run, a flat `key = value` file
//! format, and load-time validation (including the slot-list byte budgets).

use crate::mac::ChargeTable;
use crate::packet::PacketSizes;
use crate::pb::max_injected_list_length;
use thiserror::Error;

/// Which stack variant a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackMode {
    /// Standard 6TiSCH: MSF scheduling + OF0 routing.
    Msf,
    /// The cross-layer piggyback variant on top of the same base stack.
    Pb,
}

impl StackMode {
    pub fn label(self) -> &'static str {
        match self {
            StackMode::Msf => "MSF",
            StackMode::Pb => "PB",
        }
    }
}

/// 2-step or 3-step 6P ADD for the benchmark scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SixpAddStyle {
    TwoStep,
    ThreeStep,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("invalid value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

/// Full description of one run. Defaults reproduce the desk-scale baseline
/// scenario; [`ScenarioConfig::validate`] runs every structural check,
/// including the PB payload budget derived from the slotframe length.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    // Network scale and timing.
    pub n_nodes: u16,
    pub duration_minutes: f64,
    pub app_period_seconds: f64,
    pub slotframe_length: u16,
    pub slot_duration_s: f64,
    pub queue_capacity: usize,
    pub nb_channels: u16,
    pub secure_joining: bool,
    pub stack_mode: StackMode,
    pub rng_seed: u64,
    pub run_index: u32,

    // Packet-size table (MSF and PB columns).
    pub tsch_max_payload_msf: u16,
    pub tsch_max_payload_pb: u16,
    pub dio_bytes_msf: u16,
    pub dio_bytes_pb: u16,
    pub dao_bytes_msf: u16,
    pub dao_bytes_pb: u16,
    pub eb_bytes: u16,
    pub dis_bytes: u16,
    pub sixp_bytes: u16,
    pub ack_bytes: u16,

    // PB parameters.
    pub proposed_slots_per_dio: u16,
    pub dio_cells_duration_slotframes: u16,
    pub permanent_dio_slots: u16,
    pub slot_selection_ratio: u16,
    pub max_cells_at_once: u8,
    pub initial_phase_minutes: f64,
    pub post_initial_proposed_slots: u16,
    pub queue_free_threshold: usize,
    pub reserve_cooldown_slotframes: u64,
    pub cells_on_pressure: u8,
    pub min_nb: u8,
    pub pb_fallback_backoff_min: u64,
    pub pb_fallback_backoff_max: u64,

    // 6P / MSF parameters.
    pub sixp_proposal_cells: usize,
    pub sixp_add_style: SixpAddStyle,
    pub t_lock_slotframes: u64,
    pub msf_hi_threshold: f64,
    pub msf_lo_threshold: f64,
    pub msf_window: u32,
    pub sixp_retry_min_slotframes: u64,
    pub sixp_retry_max_slotframes: u64,
    pub retry_limit: u8,

    // RPL parameters.
    pub trickle_imin_slotframes: u64,
    pub trickle_doublings: u32,
    pub trickle_redundancy: u32,
    pub dao_period_seconds: f64,
    pub rank_step: u32,
    pub rank_stretch: bool,

    // Status-cycle and beaconing parameters.
    pub eb_period_slotframes: u64,
    pub eb_threshold: u32,
    pub dy_sync_seconds: f64,
    pub dis_join_seconds: f64,

    // Radio / topology parameters.
    pub area_m: f64,
    pub pister_degradation_db: f64,
    pub per_slot_fading: bool,
    pub topology_max_retries: u32,

    // Energy parameters (microcoulombs per slot, one decimal).
    pub charge_sleep_uc: f64,
    pub charge_idle_uc: f64,
    pub charge_tx_data_rx_ack_uc: f64,
    pub charge_rx_data_tx_ack_uc: f64,
    pub charge_tx_data_uc: f64,
    pub charge_rx_data_uc: f64,
    pub battery_capacity_uah: f64,
}

impl Default for ScenarioConfig {
    fn default() -> ScenarioConfig {
        ScenarioConfig {
            n_nodes: 50,
            duration_minutes: 30.0,
            app_period_seconds: 15.0,
            slotframe_length: 100,
            slot_duration_s: 0.01,
            queue_capacity: 10,
            nb_channels: 16,
            secure_joining: true,
            stack_mode: StackMode::Msf,
            rng_seed: 1,
            run_index: 0,

            tsch_max_payload_msf: 90,
            tsch_max_payload_pb: 120,
            dio_bytes_msf: 76,
            dio_bytes_pb: 120,
            dao_bytes_msf: 20,
            dao_bytes_pb: 75,
            eb_bytes: 35,
            dis_bytes: 14,
            sixp_bytes: 40,
            ack_bytes: 25,

            proposed_slots_per_dio: 7,
            dio_cells_duration_slotframes: 10,
            permanent_dio_slots: 1,
            slot_selection_ratio: 3,
            max_cells_at_once: 5,
            initial_phase_minutes: 45.0,
            post_initial_proposed_slots: 3,
            queue_free_threshold: 2,
            reserve_cooldown_slotframes: 2,
            cells_on_pressure: 1,
            min_nb: 1,
            pb_fallback_backoff_min: 1,
            pb_fallback_backoff_max: 2,

            sixp_proposal_cells: 5,
            sixp_add_style: SixpAddStyle::TwoStep,
            t_lock_slotframes: 60,
            msf_hi_threshold: 0.75,
            msf_lo_threshold: 0.25,
            msf_window: 64,
            sixp_retry_min_slotframes: 1,
            sixp_retry_max_slotframes: 4,
            retry_limit: 5,

            trickle_imin_slotframes: 1,
            trickle_doublings: 8,
            trickle_redundancy: 1,
            dao_period_seconds: 60.0,
            rank_step: 256,
            rank_stretch: false,

            eb_period_slotframes: 4,
            eb_threshold: 1,
            dy_sync_seconds: 120.0,
            dis_join_seconds: 30.0,

            area_m: 1000.0,
            pister_degradation_db: 10.0,
            per_slot_fading: false,
            topology_max_retries: 2000,

            charge_sleep_uc: 0.1,
            charge_idle_uc: 6.4,
            charge_tx_data_rx_ack_uc: 54.5,
            charge_rx_data_tx_ack_uc: 32.6,
            charge_tx_data_uc: 49.5,
            charge_rx_data_uc: 22.6,
            battery_capacity_uah: 2_200_000.0,
        }
    }
}

impl ScenarioConfig {
    pub fn is_pb(&self) -> bool {
        self.stack_mode == StackMode::Pb
    }

    pub fn total_slots(&self) -> u64 {
        (self.duration_minutes * 60.0 / self.slot_duration_s).round() as u64
    }

    pub fn slots_per_frame(&self) -> u64 {
        u64::from(self.slotframe_length)
    }

    pub fn sizes(&self) -> PacketSizes {
        match self.stack_mode {
            StackMode::Msf => PacketSizes {
                max_payload: self.tsch_max_payload_msf,
                dio: self.dio_bytes_msf,
                dao: self.dao_bytes_msf,
                eb: self.eb_bytes,
                dis: self.dis_bytes,
                sixp: self.sixp_bytes,
                ack: self.ack_bytes,
            },
            StackMode::Pb => PacketSizes {
                max_payload: self.tsch_max_payload_pb,
                dio: self.dio_bytes_pb,
                dao: self.dao_bytes_pb,
                eb: self.eb_bytes,
                dis: self.dis_bytes,
                sixp: self.sixp_bytes,
                ack: self.ack_bytes,
            },
        }
    }

    /// Bytes the PB DIO extension may occupy.
    pub fn dio_extension_capacity(&self) -> usize {
        usize::from(self.dio_bytes_pb.saturating_sub(self.dio_bytes_msf))
    }

    /// Bytes the PB DAO extension may occupy.
    pub fn dao_extension_capacity(&self) -> usize {
        usize::from(self.dao_bytes_pb.saturating_sub(self.dao_bytes_msf))
    }

    pub fn charge_table(&self) -> Result<ChargeTable, ConfigError> {
        ChargeTable::from_uc([
            self.charge_sleep_uc,
            self.charge_idle_uc,
            self.charge_tx_data_rx_ack_uc,
            self.charge_rx_data_tx_ack_uc,
            self.charge_tx_data_uc,
            self.charge_rx_data_uc,
        ])
        .map_err(ConfigError::Invalid)
    }

    pub fn radio_params(&self) -> crate::radio::RadioParams {
        crate::radio::RadioParams {
            area_m: self.area_m,
            freq_hz: 2.4e9,
            tx_power_dbm: 0.0,
            degradation_db: self.pister_degradation_db,
            per_slot_fading: self.per_slot_fading,
            max_retries: self.topology_max_retries,
        }
    }

    /// Full structural validation; every run calls this before starting.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n_nodes < 2 {
            return fail(format!("n_nodes must be >= 2, got {}", self.n_nodes));
        }
        if self.duration_minutes <= 0.0 {
            return fail("duration_minutes must be positive".into());
        }
        if self.app_period_seconds <= 0.0 {
            return fail("app_period_seconds must be positive".into());
        }
        if self.slot_duration_s <= 0.0 {
            return fail("slot_duration must be positive".into());
        }
        if !(6..=256).contains(&self.slotframe_length) {
            return fail(format!(
                "slotframe_length must be in [6, 256] (8-bit slot ids), got {}",
                self.slotframe_length
            ));
        }
        if self.queue_capacity == 0 {
            return fail("queue_capacity must be >= 1".into());
        }
        if self.nb_channels == 0 {
            return fail("nb_channels must be >= 1".into());
        }
        if self.queue_free_threshold > self.queue_capacity {
            return fail("queue_empty_places_threshold cannot exceed queue_capacity".into());
        }
        if !(1..=5).contains(&self.max_cells_at_once) {
            return fail("max_cells_at_once must be in [1, 5] (5 one-byte grants fit the ACK)".into());
        }
        if self.min_nb == 0 || self.min_nb > self.max_cells_at_once {
            return fail("min_nb must be in [1, max_cells_at_once]".into());
        }
        if self.permanent_dio_slots != 1 {
            return fail("permanent_dio_slots: only 1 is supported (the autonomous Rx cell)".into());
        }
        if self.slot_selection_ratio == 0 {
            return fail("slot_selection_ratio must be >= 1".into());
        }
        if self.proposed_slots_per_dio == 0 {
            return fail("proposed_slots_per_dio must be >= 1".into());
        }
        if self.post_initial_proposed_slots > self.proposed_slots_per_dio {
            return fail("post_initial_proposed_slots cannot exceed proposed_slots_per_dio".into());
        }
        if !(0.0..=1.0).contains(&self.msf_lo_threshold)
            || !(0.0..=1.0).contains(&self.msf_hi_threshold)
            || self.msf_lo_threshold >= self.msf_hi_threshold
        {
            return fail("MSF thresholds must satisfy 0 <= lo < hi <= 1".into());
        }
        if self.msf_window == 0 {
            return fail("msf_window must be >= 1".into());
        }
        if self.sixp_proposal_cells == 0 {
            return fail("sixp_proposal_cells must be >= 1".into());
        }
        if self.retry_limit == 0 {
            return fail("retry_limit must be >= 1".into());
        }
        if self.eb_threshold == 0 {
            return fail("eb_threshold must be >= 1".into());
        }
        if self.sixp_retry_min_slotframes > self.sixp_retry_max_slotframes {
            return fail("sixp retry backoff range inverted".into());
        }
        if self.pb_fallback_backoff_min > self.pb_fallback_backoff_max {
            return fail("pb fallback backoff range inverted".into());
        }
        if self.t_lock_slotframes == 0 {
            return fail("t_lock_slotframes must be >= 1".into());
        }
        if self.reserve_cooldown_slotframes == 0 {
            return fail("cycle_interval_slotframes must be >= 1".into());
        }
        if self.battery_capacity_uah <= 0.0 {
            return fail("battery_capacity_uah must be positive".into());
        }

        // Slot-list injection budget (fails for slotframes shorter than 6).
        let l_length = max_injected_list_length(self.slotframe_length)
            .map_err(ConfigError::Invalid)?;

        // PB byte budgets: extended sizes inside the payload cap, and enough
        // extension room for the codec header, the proposal/selection lists
        // and at least one slot id.
        if self.dio_bytes_pb > self.tsch_max_payload_pb {
            return fail("PB DIO size exceeds the TSCH max payload".into());
        }
        if self.dao_bytes_pb > self.tsch_max_payload_pb {
            return fail("PB DAO size exceeds the TSCH max payload".into());
        }
        let dio_needed = 2 + 1 + usize::from(self.proposed_slots_per_dio) + 1;
        if self.dio_extension_capacity() < dio_needed {
            return fail(format!(
                "DIO extension capacity {} cannot carry {} proposed slots plus a slot list",
                self.dio_extension_capacity(),
                self.proposed_slots_per_dio
            ));
        }
        let dao_needed = 2 + 1 + usize::from(self.max_cells_at_once) + 1;
        if self.dao_extension_capacity() < dao_needed {
            return fail(format!(
                "DAO extension capacity {} cannot carry {} selected slots plus a slot list",
                self.dao_extension_capacity(),
                self.max_cells_at_once
            ));
        }
        let _ = l_length;

        self.charge_table()?;
        Ok(())
    }

    /// Parses the flat `key = value` scenario format. Blank lines and lines
    /// starting with `#` are ignored; unknown keys are rejected.
    pub fn from_key_values(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(lineno + 1));
            };
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse::<T>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "n_nodes" => self.n_nodes = parse(key, value)?,
            "duration_minutes" => self.duration_minutes = parse(key, value)?,
            "app_period_seconds" => self.app_period_seconds = parse(key, value)?,
            "slotframe_length" => self.slotframe_length = parse(key, value)?,
            "slot_duration" => self.slot_duration_s = parse(key, value)?,
            "queue_capacity" => self.queue_capacity = parse(key, value)?,
            "nb_channels" => self.nb_channels = parse(key, value)?,
            "secure_joining" => self.secure_joining = parse(key, value)?,
            "stack_mode" => {
                self.stack_mode = match value {
                    "MSF" | "msf" => StackMode::Msf,
                    "PB" | "pb" => StackMode::Pb,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            reason: format!("expected MSF or PB, got {other}"),
                        })
                    }
                }
            }
            "rng_seed" => self.rng_seed = parse(key, value)?,
            "run_index" => self.run_index = parse(key, value)?,

            "tsch_max_payload_msf" => self.tsch_max_payload_msf = parse(key, value)?,
            "tsch_max_payload_pb" => self.tsch_max_payload_pb = parse(key, value)?,
            "dio_bytes_msf" => self.dio_bytes_msf = parse(key, value)?,
            "dio_bytes_pb" => self.dio_bytes_pb = parse(key, value)?,
            "dao_bytes_msf" => self.dao_bytes_msf = parse(key, value)?,
            "dao_bytes_pb" => self.dao_bytes_pb = parse(key, value)?,
            "eb_bytes" => self.eb_bytes = parse(key, value)?,
            "dis_bytes" => self.dis_bytes = parse(key, value)?,
            "sixp_bytes" => self.sixp_bytes = parse(key, value)?,
            "ack_bytes" => self.ack_bytes = parse(key, value)?,

            "proposed_slots_per_dio" => self.proposed_slots_per_dio = parse(key, value)?,
            "dio_cells_duration_slotframes" => {
                self.dio_cells_duration_slotframes = parse(key, value)?
            }
            "permanent_dio_slots" => self.permanent_dio_slots = parse(key, value)?,
            "slot_selection_ratio" => self.slot_selection_ratio = parse(key, value)?,
            "max_cells_at_once" => self.max_cells_at_once = parse(key, value)?,
            "initial_phase_minutes" => self.initial_phase_minutes = parse(key, value)?,
            "post_initial_proposed_slots" => self.post_initial_proposed_slots = parse(key, value)?,
            "queue_empty_places_threshold" => self.queue_free_threshold = parse(key, value)?,
            "cycle_interval_slotframes" => self.reserve_cooldown_slotframes = parse(key, value)?,
            "cells_reserved_upon_overflow" => self.cells_on_pressure = parse(key, value)?,
            "min_nb" => self.min_nb = parse(key, value)?,
            "pb_fallback_backoff_min" => self.pb_fallback_backoff_min = parse(key, value)?,
            "pb_fallback_backoff_max" => self.pb_fallback_backoff_max = parse(key, value)?,

            "sixp_proposal_cells" => self.sixp_proposal_cells = parse(key, value)?,
            "sixp_add_style" => {
                self.sixp_add_style = match value {
                    "2step" | "two_step" => SixpAddStyle::TwoStep,
                    "3step" | "three_step" => SixpAddStyle::ThreeStep,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            reason: format!("expected 2step or 3step, got {other}"),
                        })
                    }
                }
            }
            "t_lock_slotframes" => self.t_lock_slotframes = parse(key, value)?,
            "msf_hi_threshold" => self.msf_hi_threshold = parse(key, value)?,
            "msf_lo_threshold" => self.msf_lo_threshold = parse(key, value)?,
            "msf_window" => self.msf_window = parse(key, value)?,
            "sixp_retry_min_slotframes" => self.sixp_retry_min_slotframes = parse(key, value)?,
            "sixp_retry_max_slotframes" => self.sixp_retry_max_slotframes = parse(key, value)?,
            "retry_limit" => self.retry_limit = parse(key, value)?,

            "trickle_imin_slotframes" => self.trickle_imin_slotframes = parse(key, value)?,
            "trickle_doublings" => self.trickle_doublings = parse(key, value)?,
            "trickle_redundancy" => self.trickle_redundancy = parse(key, value)?,
            "dao_period_seconds" => self.dao_period_seconds = parse(key, value)?,
            "rank_step" => self.rank_step = parse(key, value)?,
            "rank_stretch" => self.rank_stretch = parse(key, value)?,

            "eb_period_slotframes" => self.eb_period_slotframes = parse(key, value)?,
            "eb_threshold" => self.eb_threshold = parse(key, value)?,
            "dy_sync_seconds" => self.dy_sync_seconds = parse(key, value)?,
            "dis_join_seconds" => self.dis_join_seconds = parse(key, value)?,

            "area_m" => self.area_m = parse(key, value)?,
            "pister_degradation_db" => self.pister_degradation_db = parse(key, value)?,
            "per_slot_fading" => self.per_slot_fading = parse(key, value)?,
            "topology_max_retries" => self.topology_max_retries = parse(key, value)?,

            "charge_sleep_uc" => self.charge_sleep_uc = parse(key, value)?,
            "charge_idle_uc" => self.charge_idle_uc = parse(key, value)?,
            "charge_tx_data_rx_ack_uc" => self.charge_tx_data_rx_ack_uc = parse(key, value)?,
            "charge_rx_data_tx_ack_uc" => self.charge_rx_data_tx_ack_uc = parse(key, value)?,
            "charge_tx_data_uc" => self.charge_tx_data_uc = parse(key, value)?,
            "charge_rx_data_uc" => self.charge_rx_data_uc = parse(key, value)?,
            "battery_capacity_uah" => self.battery_capacity_uah = parse(key, value)?,

            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Serializes back to the flat file format (all keys, fixed order).
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("n_nodes", self.n_nodes.to_string());
        push("duration_minutes", self.duration_minutes.to_string());
        push("app_period_seconds", self.app_period_seconds.to_string());
        push("slotframe_length", self.slotframe_length.to_string());
        push("slot_duration", self.slot_duration_s.to_string());
        push("queue_capacity", self.queue_capacity.to_string());
        push("nb_channels", self.nb_channels.to_string());
        push("secure_joining", self.secure_joining.to_string());
        push("stack_mode", self.stack_mode.label().to_string());
        push("rng_seed", self.rng_seed.to_string());
        push("run_index", self.run_index.to_string());
        push("tsch_max_payload_msf", self.tsch_max_payload_msf.to_string());
        push("tsch_max_payload_pb", self.tsch_max_payload_pb.to_string());
        push("dio_bytes_msf", self.dio_bytes_msf.to_string());
        push("dio_bytes_pb", self.dio_bytes_pb.to_string());
        push("dao_bytes_msf", self.dao_bytes_msf.to_string());
        push("dao_bytes_pb", self.dao_bytes_pb.to_string());
        push("eb_bytes", self.eb_bytes.to_string());
        push("dis_bytes", self.dis_bytes.to_string());
        push("sixp_bytes", self.sixp_bytes.to_string());
        push("ack_bytes", self.ack_bytes.to_string());
        push("proposed_slots_per_dio", self.proposed_slots_per_dio.to_string());
        push(
            "dio_cells_duration_slotframes",
            self.dio_cells_duration_slotframes.to_string(),
        );
        push("permanent_dio_slots", self.permanent_dio_slots.to_string());
        push("slot_selection_ratio", self.slot_selection_ratio.to_string());
        push("max_cells_at_once", self.max_cells_at_once.to_string());
        push("initial_phase_minutes", self.initial_phase_minutes.to_string());
        push(
            "post_initial_proposed_slots",
            self.post_initial_proposed_slots.to_string(),
        );
        push(
            "queue_empty_places_threshold",
            self.queue_free_threshold.to_string(),
        );
        push(
            "cycle_interval_slotframes",
            self.reserve_cooldown_slotframes.to_string(),
        );
        push(
            "cells_reserved_upon_overflow",
            self.cells_on_pressure.to_string(),
        );
        push("min_nb", self.min_nb.to_string());
        push("pb_fallback_backoff_min", self.pb_fallback_backoff_min.to_string());
        push("pb_fallback_backoff_max", self.pb_fallback_backoff_max.to_string());
        push("sixp_proposal_cells", self.sixp_proposal_cells.to_string());
        push(
            "sixp_add_style",
            match self.sixp_add_style {
                SixpAddStyle::TwoStep => "2step".to_string(),
                SixpAddStyle::ThreeStep => "3step".to_string(),
            },
        );
        push("t_lock_slotframes", self.t_lock_slotframes.to_string());
        push("msf_hi_threshold", self.msf_hi_threshold.to_string());
        push("msf_lo_threshold", self.msf_lo_threshold.to_string());
        push("msf_window", self.msf_window.to_string());
        push(
            "sixp_retry_min_slotframes",
            self.sixp_retry_min_slotframes.to_string(),
        );
        push(
            "sixp_retry_max_slotframes",
            self.sixp_retry_max_slotframes.to_string(),
        );
        push("retry_limit", self.retry_limit.to_string());
        push("trickle_imin_slotframes", self.trickle_imin_slotframes.to_string());
        push("trickle_doublings", self.trickle_doublings.to_string());
        push("trickle_redundancy", self.trickle_redundancy.to_string());
        push("dao_period_seconds", self.dao_period_seconds.to_string());
        push("rank_step", self.rank_step.to_string());
        push("rank_stretch", self.rank_stretch.to_string());
        push("eb_period_slotframes", self.eb_period_slotframes.to_string());
        push("eb_threshold", self.eb_threshold.to_string());
        push("dy_sync_seconds", self.dy_sync_seconds.to_string());
        push("dis_join_seconds", self.dis_join_seconds.to_string());
        push("area_m", self.area_m.to_string());
        push("pister_degradation_db", self.pister_degradation_db.to_string());
        push("per_slot_fading", self.per_slot_fading.to_string());
        push("topology_max_retries", self.topology_max_retries.to_string());
        push("charge_sleep_uc", self.charge_sleep_uc.to_string());
        push("charge_idle_uc", self.charge_idle_uc.to_string());
        push(
            "charge_tx_data_rx_ack_uc",
            self.charge_tx_data_rx_ack_uc.to_string(),
        );
        push(
            "charge_rx_data_tx_ack_uc",
            self.charge_rx_data_tx_ack_uc.to_string(),
        );
        push("charge_tx_data_uc", self.charge_tx_data_uc.to_string());
        push("charge_rx_data_uc", self.charge_rx_data_uc.to_string());
        push("battery_capacity_uah", self.battery_capacity_uah.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.stack_mode = StackMode::Pb;
        cfg.n_nodes = 100;
        cfg.rng_seed = 99;
        let text = cfg.to_key_values();
        let parsed = ScenarioConfig::from_key_values(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ScenarioConfig::from_key_values("bogus_knob = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "bogus_knob"));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = ScenarioConfig::from_key_values(
            "# a scenario\n\nn_nodes = 10\nstack_mode = PB\n",
        )
        .unwrap();
        assert_eq!(cfg.n_nodes, 10);
        assert_eq!(cfg.stack_mode, StackMode::Pb);
    }

    #[test]
    fn slotframe_bounds_enforced() {
        let mut cfg = ScenarioConfig::default();
        cfg.slotframe_length = 5;
        assert!(cfg.validate().is_err());
        cfg.slotframe_length = 300;
        assert!(cfg.validate().is_err());
        cfg.slotframe_length = 256;
        cfg.validate().unwrap();
    }

    #[test]
    fn pb_budget_checked_at_load() {
        let mut cfg = ScenarioConfig::default();
        // 7 proposed slots + codec header cannot fit in 8 spare bytes.
        cfg.dio_bytes_pb = cfg.dio_bytes_msf + 8;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn duration_and_slots() {
        let cfg = ScenarioConfig::default();
        assert_eq!(cfg.total_slots(), 180_000);
    }
}
