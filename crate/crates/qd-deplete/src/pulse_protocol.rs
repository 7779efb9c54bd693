//! Pulse schedule and the power-to-rate law.
//!
//! A [`Protocol`] is one repetition period containing a non-resonant
//! generation pulse, a resonant depletion drive, and an instantaneous
//! probe transfer. Shaped pulses are linear trapezoids; the drive power
//! maps to a pump rate through a saturation law.

use crate::level_model::{LevelId, DEPLETE_CHANNEL};
use thiserror::Error;

/// Trapezoidal envelope: 0 before `t_start`, linear rise over `rise`,
/// flat top, linear fall over `fall`, 0 after `t_start + duration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    pub t_start: f64,
    pub duration: f64,
    pub rise: f64,
    pub fall: f64,
}

impl PulseShape {
    pub fn new(t_start: f64, duration: f64, rise: f64, fall: f64) -> Result<Self, ProtocolError> {
        let shape = PulseShape { t_start, duration, rise, fall };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.duration > 0.0) {
            return Err(ProtocolError::InvalidShape("duration must be > 0"));
        }
        if self.rise < 0.0 || self.fall < 0.0 {
            return Err(ProtocolError::InvalidShape("rise and fall must be >= 0"));
        }
        if self.rise + self.fall > self.duration {
            return Err(ProtocolError::InvalidShape("rise + fall must not exceed duration"));
        }
        Ok(())
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }

    /// Envelope value in [0,1] at time `t`, continuous in `t`.
    pub fn envelope(&self, t: f64) -> f64 {
        let dt = t - self.t_start;
        if dt < 0.0 || dt > self.duration {
            return 0.0;
        }
        if self.rise > 0.0 && dt < self.rise {
            return dt / self.rise;
        }
        let from_end = self.duration - dt;
        if self.fall > 0.0 && from_end < self.fall {
            return from_end / self.fall;
        }
        1.0
    }

    /// Largest envelope value over `[t0, t1]`; tight for the trapezoid.
    pub fn max_envelope(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= self.t_start || t0 >= self.t_end() {
            return 0.0;
        }
        // The envelope is piecewise monotone, so the supremum over an
        // interval is attained at an endpoint or on the flat top.
        let flat_lo = self.t_start + self.rise;
        let flat_hi = self.t_end() - self.fall;
        if t1 > flat_lo && t0 < flat_hi {
            return 1.0;
        }
        self.envelope(t0.max(self.t_start)).max(self.envelope(t1.min(self.t_end())))
    }

    /// Times where the envelope's slope changes (segment boundaries).
    pub fn breakpoints(&self) -> [f64; 4] {
        [
            self.t_start,
            self.t_start + self.rise,
            self.t_end() - self.fall,
            self.t_end(),
        ]
    }
}

/// What a pulse does to the dot.
#[derive(Debug, Clone, PartialEq)]
pub enum PulseKind {
    /// Non-resonant excitation: exciton-capture Poisson process at
    /// `gen_rate`·envelope; a capture on an empty dot populates BE or DE
    /// with probability 1/2 each, captures on an occupied dot are
    /// discarded.
    NonResonantGeneration { gen_rate: f64 },
    /// Resonant pumping of a driven transition channel at the given
    /// dimensionless power (in units of the saturation power).
    ResonantDrive { channel: String, power: f64 },
    /// Instantaneous population transfer at `t_start`, applied to each
    /// (from, to) pair with the given transfer fraction. The recorded
    /// duration is far below every model timescale and is not integrated.
    PiProbe { mapping: Vec<(LevelId, LevelId)>, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub shape: PulseShape,
    pub kind: PulseKind,
}

impl Pulse {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.shape.validate()?;
        match &self.kind {
            PulseKind::NonResonantGeneration { gen_rate } => {
                if *gen_rate < 0.0 {
                    return Err(ProtocolError::InvalidPulse("gen_rate must be >= 0"));
                }
            }
            PulseKind::ResonantDrive { power, .. } => {
                if *power < 0.0 {
                    return Err(ProtocolError::InvalidPulse("power must be >= 0"));
                }
            }
            PulseKind::PiProbe { mapping, fraction } => {
                if !(0.0..=1.0).contains(fraction) {
                    return Err(ProtocolError::InvalidPulse("transfer fraction must lie in [0,1]"));
                }
                for (i, (from, to)) in mapping.iter().enumerate() {
                    if from == to {
                        return Err(ProtocolError::InvalidPulse("probe mapping must move population"));
                    }
                    for (from2, to2) in &mapping[i + 1..] {
                        if from2 == from {
                            return Err(ProtocolError::InvalidPulse(
                                "probe mapping must be a partial function (sources unique)",
                            ));
                        }
                        if to2 == to {
                            return Err(ProtocolError::InvalidPulse(
                                "probe mapping must be injective (targets unique)",
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Saturation law mapping drive power to a pump rate:
/// R = r_max · x / (x + p_sat) with x = power · envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    /// Saturated pump rate, ns⁻¹.
    pub r_max: f64,
    /// Saturation power (dimensionless power unit).
    pub p_sat: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel { r_max: 2.0, p_sat: 1.0 }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.r_max > 0.0) || !(self.p_sat > 0.0) {
            return Err(ProtocolError::InvalidPulse("r_max and p_sat must be > 0"));
        }
        Ok(())
    }

    /// Pump rate at the given power and envelope value.
    pub fn drive_rate(&self, power: f64, env: f64) -> f64 {
        let x = power * env;
        if x <= 0.0 {
            return 0.0;
        }
        self.r_max * x / (x + self.p_sat)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid pulse shape: {0}")]
    InvalidShape(&'static str),
    #[error("invalid pulse: {0}")]
    InvalidPulse(&'static str),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(&'static str),
    #[error("unknown drive channel `{0}`")]
    UnknownChannel(String),
}

/// One repetition period of the pulse sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub period: f64,
    pub pulses: Vec<Pulse>,
    pub power_model: PowerModel,
}

impl Protocol {
    pub fn new(period: f64, pulses: Vec<Pulse>, power_model: PowerModel) -> Result<Self, ProtocolError> {
        let protocol = Protocol { period, pulses, power_model };
        protocol.validate()?;
        Ok(protocol)
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.period > 0.0) {
            return Err(ProtocolError::InvalidProtocol("period must be > 0"));
        }
        self.power_model.validate()?;
        for pulse in &self.pulses {
            pulse.validate()?;
            if pulse.shape.t_start < 0.0 || pulse.shape.t_end() > self.period {
                return Err(ProtocolError::InvalidProtocol("all pulses must fit within [0, period]"));
            }
        }
        // At most one resonant drive per channel at any instant.
        for (i, a) in self.pulses.iter().enumerate() {
            let PulseKind::ResonantDrive { channel: ca, .. } = &a.kind else { continue };
            for b in &self.pulses[i + 1..] {
                let PulseKind::ResonantDrive { channel: cb, .. } = &b.kind else { continue };
                if ca == cb
                    && a.shape.t_start < b.shape.t_end()
                    && b.shape.t_start < a.shape.t_end()
                {
                    return Err(ProtocolError::InvalidProtocol(
                        "resonant drives on the same channel must not overlap",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Instantaneous pump rate on `channel` at time `t`.
    pub fn drive_rate_at(&self, channel: &str, t: f64) -> f64 {
        let mut total = 0.0;
        for pulse in &self.pulses {
            if let PulseKind::ResonantDrive { channel: c, power } = &pulse.kind {
                if c == channel {
                    total += self.power_model.drive_rate(*power, pulse.shape.envelope(t));
                }
            }
        }
        total
    }

    /// Instantaneous exciton-capture rate at time `t` (empty dot).
    pub fn generation_rate_at(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for pulse in &self.pulses {
            if let PulseKind::NonResonantGeneration { gen_rate } = &pulse.kind {
                total += gen_rate * pulse.shape.envelope(t);
            }
        }
        total
    }

    /// Upper bound on the capture rate over `[t0, t1]`.
    pub fn generation_rate_bound(&self, t0: f64, t1: f64) -> f64 {
        let mut total = 0.0;
        for pulse in &self.pulses {
            if let PulseKind::NonResonantGeneration { gen_rate } = &pulse.kind {
                total += gen_rate * pulse.shape.max_envelope(t0, t1);
            }
        }
        total
    }

    /// Probe pulses as (instant, mapping, fraction), ordered by instant.
    pub fn probes(&self) -> Vec<(f64, &[(LevelId, LevelId)], f64)> {
        let mut probes: Vec<_> = self
            .pulses
            .iter()
            .filter_map(|p| match &p.kind {
                PulseKind::PiProbe { mapping, fraction } => {
                    Some((p.shape.t_start, mapping.as_slice(), *fraction))
                }
                _ => None,
            })
            .collect();
        probes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        probes
    }

    /// Known drive channel labels referenced by this protocol.
    pub fn channels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for pulse in &self.pulses {
            if let PulseKind::ResonantDrive { channel, .. } = &pulse.kind {
                if !out.contains(&channel.as_str()) {
                    out.push(channel);
                }
            }
        }
        out
    }

    /// Times within [0, period] where any pulse envelope changes slope or
    /// a probe fires; sorted, deduplicated, and bracketed by 0 and period.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut points = vec![0.0, self.period];
        for pulse in &self.pulses {
            match &pulse.kind {
                PulseKind::PiProbe { .. } => points.push(pulse.shape.t_start),
                _ => points.extend(pulse.shape.breakpoints()),
            }
        }
        points.retain(|t| (0.0..=self.period).contains(t));
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        points
    }

    /// Upper bound on the pump rate of `channel` over `[t0, t1]`, tight
    /// for trapezoidal envelopes.
    pub fn rate_bound(&self, channel: &str, t0: f64, t1: f64) -> Result<f64, ProtocolError> {
        if !self.channels().contains(&channel) {
            return Err(ProtocolError::UnknownChannel(channel.to_owned()));
        }
        let mut bound = 0.0_f64;
        for pulse in &self.pulses {
            if let PulseKind::ResonantDrive { channel: c, power } = &pulse.kind {
                if c == channel {
                    let env = pulse.shape.max_envelope(t0, t1);
                    bound += self.power_model.drive_rate(*power, env);
                }
            }
        }
        Ok(bound)
    }
}

/// Timing and strength knobs for the standard three-pulse schedule.
/// All times are ns; powers are in units of the saturation power.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub period: f64,
    pub gen_rate: f64,
    pub gen_pulse: f64,
    pub gap: f64,
    pub deplete_pulse: f64,
    pub probe_delay: f64,
    pub rise: f64,
    pub fall: f64,
    pub power_model: PowerModel,
    pub probe_mapping: Vec<(LevelId, LevelId)>,
    pub pi_fraction: f64,
}

/// Default repetition period (9.5 MHz repetition rate).
pub const DEFAULT_PERIOD: f64 = 1000.0 / 9.5;

/// Default capture rate of the generation pulse. Chosen so the
/// undepleted dot holds a dark exciton roughly half the time at the
/// probe once cycle-to-cycle carryover has reached its steady state.
pub const DEFAULT_GEN_RATE: f64 = 0.032;

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            period: DEFAULT_PERIOD,
            gen_rate: DEFAULT_GEN_RATE,
            gen_pulse: 20.0,
            gap: 3.0,
            deplete_pulse: 20.0,
            probe_delay: 5.0,
            rise: 0.5,
            fall: 0.5,
            power_model: PowerModel::default(),
            probe_mapping: vec![(LevelId::De, LevelId::XxT3)],
            pi_fraction: 1.0,
        }
    }
}

impl ProtocolParams {
    /// Start of the depletion drive.
    pub fn drive_start(&self) -> f64 {
        self.gen_pulse + self.gap
    }

    /// End of the depletion drive.
    pub fn drive_end(&self) -> f64 {
        self.drive_start() + self.deplete_pulse
    }

    /// Instant of the probe transfer.
    pub fn probe_instant(&self) -> f64 {
        self.drive_end() + self.probe_delay
    }

    /// Build the protocol at a given depletion power.
    pub fn protocol(&self, depletion_power: f64) -> Result<Protocol, ProtocolError> {
        if depletion_power < 0.0 {
            return Err(ProtocolError::InvalidPulse("power must be >= 0"));
        }
        let pulses = vec![
            Pulse {
                shape: PulseShape::new(0.0, self.gen_pulse, self.rise, self.fall)?,
                kind: PulseKind::NonResonantGeneration { gen_rate: self.gen_rate },
            },
            Pulse {
                shape: PulseShape::new(self.drive_start(), self.deplete_pulse, self.rise, self.fall)?,
                kind: PulseKind::ResonantDrive {
                    channel: DEPLETE_CHANNEL.to_owned(),
                    power: depletion_power,
                },
            },
            Pulse {
                // 8 ps recorded duration; treated as instantaneous.
                shape: PulseShape::new(self.probe_instant(), 0.008, 0.0, 0.0)?,
                kind: PulseKind::PiProbe {
                    mapping: self.probe_mapping.clone(),
                    fraction: self.pi_fraction,
                },
            },
        ];
        Protocol::new(self.period, pulses, self.power_model)
    }
}

/// The standard schedule with all defaults: generation over [0, 20],
/// depletion drive over [23, 43], probe transfer at 48, period 1000/9.5.
pub fn protocol_paper_default(depletion_power: f64) -> Result<Protocol, ProtocolError> {
    ProtocolParams::default().protocol(depletion_power)
}
