//! Fixed-step master-equation integrator.
//!
//! Integrates dp/dt = M(t) p with the classical 4th-order Runge-Kutta
//! scheme on a fixed grid, clipping steps at pulse-envelope corners and
//! probe instants so every step sees a smooth right-hand side. Probe
//! transfers are applied exactly at their instants. Per-line emission
//! intensities (rate times source population) are accumulated alongside.

use std::collections::BTreeMap;

use crate::dynamics::{
    apply_instantaneous_pulse, EngineError, IntegratorConfig, PopulationVector, DRIFT_ERR,
};
use crate::level_model::{rate_matrix, GeneratorMatrix, LevelGraph, LevelId, TransitionKind};
use crate::pulse_protocol::{Protocol, PulseKind};

/// Time-indexed populations plus cumulative per-line emission.
///
/// Probe instants appear twice in `times`: once with the populations just
/// before the transfer and once just after.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub levels: Vec<LevelId>,
    pub lines: Vec<String>,
    pub times: Vec<f64>,
    /// Row per time point, aligned to `levels`.
    pub populations: Vec<Vec<f64>>,
    /// Row per time point, aligned to `lines`: integral of the line's
    /// emission intensity from 0 to that time (photons per cycle).
    pub cumulative_emission: Vec<Vec<f64>>,
}

impl Trajectory {
    fn level_index(&self, level: LevelId) -> Option<usize> {
        self.levels.iter().position(|&l| l == level)
    }

    fn line_index(&self, line: &str) -> Option<usize> {
        self.lines.iter().position(|l| l == line)
    }

    /// Index of the last sample taken at or before `t` (after any probe
    /// transfer applied exactly at `t`).
    fn index_at_or_before(&self, t: f64) -> usize {
        let idx = self.times.partition_point(|&x| x <= t);
        idx.saturating_sub(1)
    }

    /// Index of the sample at `t` before any transfer applied exactly at
    /// `t`; for other times, the last sample at or before `t`.
    fn index_just_before(&self, t: f64) -> usize {
        let first_ge = self.times.partition_point(|&x| x < t);
        if first_ge < self.times.len() && self.times[first_ge] == t {
            first_ge
        } else {
            first_ge.saturating_sub(1)
        }
    }

    /// Population of `level` at time `t` (post-transfer at probe instants).
    pub fn population_at(&self, level: LevelId, t: f64) -> f64 {
        let Some(l) = self.level_index(level) else { return 0.0 };
        self.populations[self.index_at_or_before(t)][l].max(0.0)
    }

    /// Population of `level` at `t` before any instantaneous transfer
    /// applied exactly at `t`.
    pub fn population_just_before(&self, level: LevelId, t: f64) -> f64 {
        let Some(l) = self.level_index(level) else { return 0.0 };
        self.populations[self.index_just_before(t)][l].max(0.0)
    }

    /// Expected photons per cycle emitted on `line` within `[t0, t1]`.
    pub fn emission_in_window(&self, line: &str, t0: f64, t1: f64) -> f64 {
        let Some(l) = self.line_index(line) else { return 0.0 };
        let hi = self.cumulative_emission[self.index_at_or_before(t1)][l];
        let lo = self.cumulative_emission[self.index_at_or_before(t0)][l];
        (hi - lo).max(0.0)
    }

    /// Expected photons per cycle on `line` over the whole window.
    pub fn total_emission(&self, line: &str) -> f64 {
        let Some(l) = self.line_index(line) else { return 0.0 };
        self.cumulative_emission.last().map_or(0.0, |row| row[l])
    }

    pub fn final_populations(&self) -> PopulationVector {
        let p = self.populations.last().expect("trajectory is never empty");
        PopulationVector::from_raw(self.levels.clone(), p.clone())
            .expect("integrator output stays normalized")
    }
}

/// Everything the right-hand side needs, precomputed once per run.
struct Assembler<'a> {
    graph: &'a LevelGraph,
    protocol: &'a Protocol,
    stat: GeneratorMatrix,
    driven: Vec<(usize, usize, String, f64)>, // (to, from, channel, weight)
    generation: Option<(usize, usize, usize)>, // (empty, be, de)
    radiative: Vec<(usize, usize, f64)>,      // (line index, from, rate)
    lines: Vec<String>,
}

impl<'a> Assembler<'a> {
    fn new(graph: &'a LevelGraph, protocol: &'a Protocol) -> Result<Self, EngineError> {
        let stat = rate_matrix(graph, &BTreeMap::new())?;
        let mut driven = Vec::new();
        let lines = graph.lines();
        let mut radiative = Vec::new();
        for t in graph.transitions() {
            let from = graph.index_of(t.from).ok_or(EngineError::UndeclaredLevel(t.from))?;
            let to = graph.index_of(t.to).ok_or(EngineError::UndeclaredLevel(t.to))?;
            match &t.kind {
                TransitionKind::Driven { channel } => {
                    driven.push((to, from, channel.clone(), t.branch_weight));
                }
                TransitionKind::Radiative { line } => {
                    let line_idx = lines.iter().position(|l| l == line).expect("line collected");
                    radiative.push((line_idx, from, t.effective_rate().unwrap_or(0.0)));
                }
                TransitionKind::NonRadiative => {}
            }
        }
        let has_generation = protocol
            .pulses
            .iter()
            .any(|p| matches!(p.kind, PulseKind::NonResonantGeneration { gen_rate } if gen_rate > 0.0));
        let generation = if has_generation {
            let empty = graph
                .index_of(LevelId::Empty)
                .ok_or(EngineError::UndeclaredLevel(LevelId::Empty))?;
            let be = graph.index_of(LevelId::Be).ok_or(EngineError::UndeclaredLevel(LevelId::Be))?;
            let de = graph.index_of(LevelId::De).ok_or(EngineError::UndeclaredLevel(LevelId::De))?;
            Some((empty, be, de))
        } else {
            None
        };
        Ok(Assembler { graph, protocol, stat, driven, generation, radiative, lines })
    }

    /// M(t) into `m`.
    fn assemble(&self, t: f64, m: &mut GeneratorMatrix) {
        m.clone_from(&self.stat);
        for (to, from, channel, weight) in &self.driven {
            let rate = self.protocol.drive_rate_at(channel, t) * weight;
            if rate > 0.0 {
                m.add_rate(*to, *from, rate);
            }
        }
        if let Some((empty, be, de)) = self.generation {
            // Mean-field capture: Empty feeds BE and DE at gen/2 each.
            let half = 0.5 * self.protocol.generation_rate_at(t);
            if half > 0.0 {
                m.add_rate(be, empty, half);
                m.add_rate(de, empty, half);
            }
        }
    }

    /// Per-line emission intensity at populations `p`.
    fn intensities(&self, p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (line_idx, from, rate) in &self.radiative {
            out[*line_idx] += rate * p[*from].max(0.0);
        }
    }

    fn n(&self) -> usize {
        self.graph.levels().len()
    }
}

/// Integrate over `[0, cfg.t_end]` from `init`, recording every step.
pub fn master_equation_evolve(
    graph: &LevelGraph,
    protocol: &Protocol,
    cfg: &IntegratorConfig,
    init: &PopulationVector,
) -> Result<Trajectory, EngineError> {
    evolve_inner(graph, protocol, cfg, init.as_slice(), true).map(|(traj, _)| traj.expect("recorded"))
}

/// Final populations only; same stepping as `master_equation_evolve`.
pub fn evolve_final(
    graph: &LevelGraph,
    protocol: &Protocol,
    cfg: &IntegratorConfig,
    init: &[f64],
) -> Result<Vec<f64>, EngineError> {
    evolve_inner(graph, protocol, cfg, init, false).map(|(_, p)| p)
}

fn evolve_inner(
    graph: &LevelGraph,
    protocol: &Protocol,
    cfg: &IntegratorConfig,
    init: &[f64],
    record: bool,
) -> Result<(Option<Trajectory>, Vec<f64>), EngineError> {
    cfg.validate(graph, protocol.period)?;
    let n = graph.levels().len();
    if init.len() != n {
        return Err(EngineError::BadInit("level/probability length mismatch"));
    }
    {
        let sum: f64 = init.iter().sum();
        if init.iter().any(|&v| !v.is_finite() || v < -crate::dynamics::CLAMP_TOL)
            || (sum - 1.0).abs() > crate::dynamics::NORM_TOL
        {
            return Err(EngineError::BadInit("init must be a probability distribution"));
        }
    }

    let asm = Assembler::new(graph, protocol)?;
    let probes = protocol.probes();
    for (_, mapping, _) in &probes {
        for &(from, to) in *mapping {
            for level in [from, to] {
                if graph.index_of(level).is_none() {
                    return Err(EngineError::UndeclaredLevel(level));
                }
            }
        }
    }

    // Step boundaries: protocol breakpoints clipped to [0, t_end].
    let mut boundaries: Vec<f64> = protocol
        .breakpoints()
        .into_iter()
        .filter(|&t| t < cfg.t_end - 1e-15)
        .collect();
    boundaries.push(cfg.t_end);

    let mut p = init.to_vec();
    let mut traj = record.then(|| Trajectory {
        levels: graph.levels().to_vec(),
        lines: asm.lines.clone(),
        times: vec![0.0],
        populations: vec![p.clone()],
        cumulative_emission: vec![vec![0.0; asm.lines.len()]],
    });

    let mut m = GeneratorMatrix::zeros(n);
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut intensity_prev = vec![0.0; asm.lines.len()];
    let mut intensity_now = vec![0.0; asm.lines.len()];
    let mut cumulative = vec![0.0; asm.lines.len()];
    asm.intensities(&p, &mut intensity_prev);

    let mut t = 0.0_f64;
    let mut probe_iter = probes.iter().peekable();
    // Fire any probe scheduled exactly at t = 0.
    while let Some(&&(tp, mapping, fraction)) = probe_iter.peek() {
        if tp <= t {
            apply_probe(graph, &mut p, mapping, fraction)?;
            if let Some(traj) = traj.as_mut() {
                traj.times.push(t);
                traj.populations.push(p.clone());
                traj.cumulative_emission.push(cumulative.clone());
            }
            asm.intensities(&p, &mut intensity_prev);
            probe_iter.next();
        } else {
            break;
        }
    }

    for &b in &boundaries {
        if b <= t + 1e-15 {
            continue;
        }
        let span = b - t;
        let steps = (span / cfg.dt).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for _ in 0..steps {
            // Classical RK4 with the generator assembled at t, t+h/2, t+h.
            asm.assemble(t, &mut m);
            m.apply(&p, &mut k1);
            asm.assemble(t + 0.5 * h, &mut m);
            for i in 0..n {
                tmp[i] = p[i] + 0.5 * h * k1[i];
            }
            m.apply(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = p[i] + 0.5 * h * k2[i];
            }
            m.apply(&tmp, &mut k3);
            asm.assemble(t + h, &mut m);
            for i in 0..n {
                tmp[i] = p[i] + h * k3[i];
            }
            m.apply(&tmp, &mut k4);
            for i in 0..n {
                p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += h;

            let sum: f64 = p.iter().sum();
            let drift = (sum - 1.0).abs();
            if drift > DRIFT_ERR || p.iter().any(|&v| v < -DRIFT_ERR) {
                return Err(EngineError::NormalizationDrift { t, drift });
            }

            asm.intensities(&p, &mut intensity_now);
            for (c, (now, prev)) in cumulative
                .iter_mut()
                .zip(intensity_now.iter().zip(intensity_prev.iter()))
            {
                *c += 0.5 * h * (now + prev);
            }
            intensity_prev.copy_from_slice(&intensity_now);

            if let Some(traj) = traj.as_mut() {
                traj.times.push(t);
                traj.populations.push(p.clone());
                traj.cumulative_emission.push(cumulative.clone());
            }
        }
        t = b;

        // Probe transfers scheduled at this boundary.
        while let Some(&&(tp, mapping, fraction)) = probe_iter.peek() {
            if (tp - t).abs() < 1e-9 || tp < t {
                apply_probe(graph, &mut p, mapping, fraction)?;
                if let Some(traj) = traj.as_mut() {
                    traj.times.push(t);
                    traj.populations.push(p.clone());
                    traj.cumulative_emission.push(cumulative.clone());
                }
                asm.intensities(&p, &mut intensity_prev);
                probe_iter.next();
            } else {
                break;
            }
        }
    }

    Ok((traj, p))
}

fn apply_probe(
    graph: &LevelGraph,
    p: &mut [f64],
    mapping: &[(LevelId, LevelId)],
    fraction: f64,
) -> Result<(), EngineError> {
    let moved: Vec<(usize, usize, f64)> = mapping
        .iter()
        .map(|&(from, to)| {
            let f = graph.index_of(from).ok_or(EngineError::UndeclaredLevel(from))?;
            let t = graph.index_of(to).ok_or(EngineError::UndeclaredLevel(to))?;
            Ok((f, t, fraction * p[f]))
        })
        .collect::<Result<_, EngineError>>()?;
    for (f, t, m) in moved {
        p[f] -= m;
        p[t] += m;
    }
    Ok(())
}

/// One-period propagator: column `j` is the populations after one period
/// starting from all population on level `j` (probe transfers included).
pub fn period_propagator(
    graph: &LevelGraph,
    protocol: &Protocol,
    dt: f64,
) -> Result<Vec<Vec<f64>>, EngineError> {
    let n = graph.levels().len();
    let cfg = IntegratorConfig { dt, t_end: protocol.period };
    let mut columns = Vec::with_capacity(n);
    for j in 0..n {
        let mut init = vec![0.0; n];
        init[j] = 1.0;
        columns.push(evolve_final(graph, protocol, &cfg, &init)?);
    }
    Ok(columns)
}

/// Start-of-period populations of the cyclic steady state, found as the
/// fixed point of the one-period propagator (unique because every level
/// drains to Empty and the drive/generation reinject from there).
pub fn steady_state_start(
    graph: &LevelGraph,
    protocol: &Protocol,
    dt: f64,
) -> Result<Vec<f64>, EngineError> {
    let columns = period_propagator(graph, protocol, dt)?;
    let n = columns.len();
    // Solve (Phi - I) p = 0 with the normalization row sum(p) = 1.
    let mut a = vec![vec![0.0_f64; n + 1]; n];
    for row in 0..n {
        for (col, column) in columns.iter().enumerate() {
            a[row][col] = column[row] - if row == col { 1.0 } else { 0.0 };
        }
    }
    for col in 0..n {
        a[n - 1][col] = 1.0;
    }
    a[n - 1][n] = 1.0;
    // Gaussian elimination with partial pivoting.
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let pv = a[col][col];
        if pv.abs() < 1e-14 {
            return Err(EngineError::BadConfig("period propagator is singular"));
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col] / pv;
                for k in col..=n {
                    let v = a[col][k];
                    a[row][k] -= f * v;
                }
            }
        }
    }
    let mut p: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
    // One power-iteration pass cleans up elimination roundoff and restores
    // exact nonnegativity before the vector is used as an initial state.
    let cfg = IntegratorConfig { dt, t_end: protocol.period };
    for v in p.iter_mut() {
        *v = v.max(0.0);
    }
    let sum: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= sum;
    }
    evolve_final(graph, protocol, &cfg, &p)
}
