//! Excitonic level structure of the quantum dot.
//!
//! The dot is modelled as a small set of named levels connected by
//! radiative, nonradiative, and optically driven transitions. A
//! [`LevelGraph`] holds the levels, the transitions with their rates, and
//! the physical parameters they were built from; [`rate_matrix`] assembles
//! the continuous-time Markov generator consumed by both dynamics engines.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Tolerance for branch-weight closure and generator column sums.
pub const RATE_SUM_TOL: f64 = 1e-12;

/// Identifier of a quantum-dot level.
///
/// `Empty` is the charge-free dot, `Be`/`De` the bright and dark exciton,
/// `XxExcited` the optically reached excited biexciton, `XxGround` the
/// ground biexciton, and `XxT3` the spin-blockaded metastable biexciton.
/// `XProbe` is a spare exciton level for custom probe configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LevelId {
    Empty,
    Be,
    De,
    XxExcited,
    XxGround,
    XxT3,
    XProbe,
}

impl LevelId {
    pub const ALL: [LevelId; 7] = [
        LevelId::Empty,
        LevelId::Be,
        LevelId::De,
        LevelId::XxExcited,
        LevelId::XxGround,
        LevelId::XxT3,
        LevelId::XProbe,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            LevelId::Empty => "Empty",
            LevelId::Be => "BE",
            LevelId::De => "DE",
            LevelId::XxExcited => "XX_excited",
            LevelId::XxGround => "XX_ground",
            LevelId::XxT3 => "XX_T3",
            LevelId::XProbe => "X_emitting_probe",
        }
    }

    pub fn parse(label: &str) -> Option<LevelId> {
        LevelId::ALL.iter().copied().find(|l| l.label() == label)
    }
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How a transition moves population.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionKind {
    /// Spontaneous emission on a named spectral line.
    Radiative { line: String },
    /// Phonon-assisted or otherwise dark relaxation.
    NonRadiative,
    /// Optically pumped; its rate comes from the pulse protocol via a
    /// named drive channel.
    Driven { channel: String },
}

/// A directed transition between two levels.
///
/// `base_rate` is in ns⁻¹ and applies to radiative/nonradiative
/// transitions; driven transitions get their rate from the protocol.
/// `branch_weight` splits a shared relaxation rate between competing
/// channels out of the same level and is 1 for single-exit transitions.
#[derive(Debug, Clone)]
pub struct Transition {
    pub from: LevelId,
    pub to: LevelId,
    pub kind: TransitionKind,
    pub base_rate: Option<f64>,
    pub branch_weight: f64,
}

impl Transition {
    pub fn radiative(from: LevelId, to: LevelId, rate: f64, line: &str) -> Self {
        Transition {
            from,
            to,
            kind: TransitionKind::Radiative { line: line.to_owned() },
            base_rate: Some(rate),
            branch_weight: 1.0,
        }
    }

    pub fn nonradiative(from: LevelId, to: LevelId, rate: f64, branch_weight: f64) -> Self {
        Transition {
            from,
            to,
            kind: TransitionKind::NonRadiative,
            base_rate: Some(rate),
            branch_weight,
        }
    }

    pub fn driven(from: LevelId, to: LevelId, channel: &str) -> Self {
        Transition {
            from,
            to,
            kind: TransitionKind::Driven { channel: channel.to_owned() },
            base_rate: None,
            branch_weight: 1.0,
        }
    }

    /// Rate in ns⁻¹ contributed to the generator, `None` for driven
    /// transitions (protocol-dependent).
    pub fn effective_rate(&self) -> Option<f64> {
        self.base_rate.map(|r| r * self.branch_weight)
    }

    pub fn is_driven(&self) -> bool {
        matches!(self.kind, TransitionKind::Driven { .. })
    }

    pub fn line(&self) -> Option<&str> {
        match &self.kind {
            TransitionKind::Radiative { line } => Some(line),
            _ => None,
        }
    }

    pub fn channel(&self) -> Option<&str> {
        match &self.kind {
            TransitionKind::Driven { channel } => Some(channel),
            _ => None,
        }
    }
}

/// Lifetimes (ns) and branching of the default model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Bright-exciton radiative lifetime.
    pub tau_x0: f64,
    /// Ground-biexciton radiative lifetime.
    pub tau_xx0: f64,
    /// Dark-exciton lifetime.
    pub tau_de: f64,
    /// Excited-biexciton nonradiative relaxation time.
    pub tau_relax: f64,
    /// Spin-blockaded biexciton radiative lifetime.
    pub tau_xx_t3: f64,
    /// Probability that the excited biexciton relaxes into the
    /// spin-blockaded channel.
    pub branch_b: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            tau_x0: 0.470,
            tau_xx0: 0.270,
            tau_de: 1000.0,
            tau_relax: 0.030,
            tau_xx_t3: 0.270,
            branch_b: 0.5,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let lifetimes = [
            ("tau_x0", self.tau_x0),
            ("tau_xx0", self.tau_xx0),
            ("tau_de", self.tau_de),
            ("tau_relax", self.tau_relax),
            ("tau_xx_t3", self.tau_xx_t3),
        ];
        for (name, value) in lifetimes {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ModelError::InvalidParam {
                    field: name,
                    constraint: "must be a finite positive lifetime in ns",
                });
            }
        }
        if !(0.0..=1.0).contains(&self.branch_b) {
            return Err(ModelError::InvalidParam {
                field: "branch_b",
                constraint: "must lie in [0,1]",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter `{field}`: {constraint}")]
    InvalidParam {
        field: &'static str,
        constraint: &'static str,
    },
    #[error("unknown drive channel `{0}`")]
    UnknownChannel(String),
    #[error("level `{0}` is not declared in the graph")]
    UndeclaredLevel(LevelId),
}

/// Drive channel used by the default depletion model.
pub const DEPLETE_CHANNEL: &str = "deplete";

/// Spectral line labels of the default model.
pub const LINE_X0: &str = "X0";
pub const LINE_XX0: &str = "XX0";
pub const LINE_XX0_T3: &str = "XX0_T3";

/// The level set plus the transitions connecting them.
#[derive(Debug, Clone)]
pub struct LevelGraph {
    levels: Vec<LevelId>,
    transitions: Vec<Transition>,
    params: ModelParams,
}

impl LevelGraph {
    /// Assemble a graph from explicit parts. Used by tests and custom
    /// configurations; `build_default_model` covers the standard case.
    pub fn new(levels: Vec<LevelId>, transitions: Vec<Transition>, params: ModelParams) -> Self {
        LevelGraph { levels, transitions, params }
    }

    pub fn levels(&self) -> &[LevelId] {
        &self.levels
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn index_of(&self, level: LevelId) -> Option<usize> {
        self.levels.iter().position(|&l| l == level)
    }

    /// Distinct radiative line labels in declaration order.
    pub fn lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for t in &self.transitions {
            if let Some(line) = t.line() {
                if !lines.iter().any(|l| l == line) {
                    lines.push(line.to_owned());
                }
            }
        }
        lines
    }

    /// Distinct drive channel labels in declaration order.
    pub fn channels(&self) -> Vec<String> {
        let mut channels = Vec::new();
        for t in &self.transitions {
            if let Some(c) = t.channel() {
                if !channels.iter().any(|x| x == c) {
                    channels.push(c.to_owned());
                }
            }
        }
        channels
    }

    /// Smallest timescale 1/rate over non-driven transitions, if any.
    pub fn min_timescale(&self) -> Option<f64> {
        self.transitions
            .iter()
            .filter_map(|t| t.base_rate)
            .filter(|&r| r > 0.0)
            .map(|r| 1.0 / r)
            .fold(None, |acc, x| Some(acc.map_or(x, |a: f64| a.min(x))))
    }
}

/// Build the canonical depletion model.
///
/// Driven: DE → XX_excited on the `deplete` channel. The excited
/// biexciton relaxes nonradiatively at 1/tau_relax, split
/// (1−branch_b)/branch_b between the ground biexciton and the
/// spin-blockaded biexciton. The ground biexciton cascades radiatively
/// XX_ground → BE → Empty; the blockaded biexciton returns to the dark
/// exciton radiatively (hole relaxation lumped in); the dark exciton
/// leaks nonradiatively to Empty at 1/tau_de.
pub fn build_default_model(params: ModelParams) -> Result<LevelGraph, ModelError> {
    params.validate()?;
    let levels = vec![
        LevelId::Empty,
        LevelId::Be,
        LevelId::De,
        LevelId::XxExcited,
        LevelId::XxGround,
        LevelId::XxT3,
    ];
    let relax_rate = 1.0 / params.tau_relax;
    let mut transitions = vec![Transition::driven(LevelId::De, LevelId::XxExcited, DEPLETE_CHANNEL)];
    // Degenerate branchings (branch_b 0 or 1) collapse to a single branch.
    if params.branch_b < 1.0 {
        transitions.push(Transition::nonradiative(
            LevelId::XxExcited,
            LevelId::XxGround,
            relax_rate,
            1.0 - params.branch_b,
        ));
    }
    if params.branch_b > 0.0 {
        transitions.push(Transition::nonradiative(
            LevelId::XxExcited,
            LevelId::XxT3,
            relax_rate,
            params.branch_b,
        ));
    }
    transitions.push(Transition::radiative(
        LevelId::XxGround,
        LevelId::Be,
        1.0 / params.tau_xx0,
        LINE_XX0,
    ));
    transitions.push(Transition::radiative(
        LevelId::Be,
        LevelId::Empty,
        1.0 / params.tau_x0,
        LINE_X0,
    ));
    transitions.push(Transition::radiative(
        LevelId::XxT3,
        LevelId::De,
        1.0 / params.tau_xx_t3,
        LINE_XX0_T3,
    ));
    transitions.push(Transition::nonradiative(
        LevelId::De,
        LevelId::Empty,
        1.0 / params.tau_de,
        1.0,
    ));
    Ok(LevelGraph::new(levels, transitions, params))
}

/// Report produced by [`validate`]; empty `violations` means pass.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural checks on a graph: declared levels, nonnegative rates,
/// branch-weight closure, and absorption into `Empty` without drive.
pub fn validate(graph: &LevelGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    {
        let mut seen = Vec::new();
        for &l in graph.levels() {
            if seen.contains(&l) {
                report.violations.push(format!("level {l} declared more than once"));
            }
            seen.push(l);
        }
    }
    for required in [LevelId::Empty, LevelId::Be, LevelId::De] {
        if graph.index_of(required).is_none() {
            report.violations.push(format!("required level {required} is missing"));
        }
    }

    for t in graph.transitions() {
        for end in [t.from, t.to] {
            if graph.index_of(end).is_none() {
                report
                    .violations
                    .push(format!("transition {} -> {} references undeclared level {end}", t.from, t.to));
            }
        }
        if let Some(rate) = t.base_rate {
            if rate < 0.0 || !rate.is_finite() {
                report
                    .violations
                    .push(format!("transition {} -> {} has negative or non-finite rate", t.from, t.to));
            }
        }
        if !(0.0..=1.0).contains(&t.branch_weight) {
            report
                .violations
                .push(format!("transition {} -> {} has branch weight outside [0,1]", t.from, t.to));
        }
        if let TransitionKind::Radiative { line } = &t.kind {
            if line.is_empty() {
                report
                    .violations
                    .push(format!("radiative transition {} -> {} has an empty line label", t.from, t.to));
            }
        }
    }

    // Branch-weight closure per level over nonradiative branches.
    let mut branch_sums: BTreeMap<LevelId, (f64, usize)> = BTreeMap::new();
    for t in graph.transitions() {
        if matches!(t.kind, TransitionKind::NonRadiative) {
            let e = branch_sums.entry(t.from).or_insert((0.0, 0));
            e.0 += t.branch_weight;
            e.1 += 1;
        }
    }
    for (level, (sum, count)) in branch_sums {
        if count > 0 && (sum - 1.0).abs() > RATE_SUM_TOL {
            report.violations.push(format!(
                "nonradiative branch weights out of {level} sum to {sum:.6}, expected 1"
            ));
        }
    }

    // Reachability of Empty along non-driven transitions with positive rate.
    if graph.index_of(LevelId::Empty).is_some() {
        for &start in graph.levels() {
            if start == LevelId::Empty {
                continue;
            }
            if !reaches_empty(graph, start) {
                report
                    .violations
                    .push(format!("{start} cannot reach Empty without drive"));
            }
        }
    }

    report
}

fn reaches_empty(graph: &LevelGraph, start: LevelId) -> bool {
    let mut stack = vec![start];
    let mut visited = vec![start];
    while let Some(level) = stack.pop() {
        if level == LevelId::Empty {
            return true;
        }
        for t in graph.transitions() {
            if t.from == level && !t.is_driven() && t.effective_rate().unwrap_or(0.0) > 0.0 {
                if !visited.contains(&t.to) {
                    visited.push(t.to);
                    stack.push(t.to);
                }
            }
        }
    }
    false
}

/// Continuous-time Markov generator over the graph's level order.
///
/// Stored dense row-major; `entry(to, from)` is the rate from → to and
/// the diagonal holds the negated exit rates, so columns sum to zero.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    n: usize,
    data: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn zeros(n: usize) -> Self {
        GeneratorMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, to: usize, from: usize) -> f64 {
        self.data[to * self.n + from]
    }

    pub fn entry_mut(&mut self, to: usize, from: usize) -> &mut f64 {
        &mut self.data[to * self.n + from]
    }

    /// Add `rate` on the transition from → to, keeping columns zero-sum.
    pub fn add_rate(&mut self, to: usize, from: usize, rate: f64) {
        *self.entry_mut(to, from) += rate;
        *self.entry_mut(from, from) -= rate;
    }

    /// y = M p
    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (row, out_v) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            let base = row * self.n;
            for (col, pv) in p.iter().enumerate() {
                acc += self.data[base + col] * pv;
            }
            *out_v = acc;
        }
    }

    pub fn column_sum(&self, col: usize) -> f64 {
        (0..self.n).map(|row| self.entry(row, col)).sum()
    }
}

/// Assemble the generator for the graph under the given drive rates
/// (channel label → pump rate in ns⁻¹). Every channel named here must
/// exist in the graph; channels left out contribute zero.
pub fn rate_matrix(
    graph: &LevelGraph,
    drive_rates: &BTreeMap<String, f64>,
) -> Result<GeneratorMatrix, ModelError> {
    let channels = graph.channels();
    for name in drive_rates.keys() {
        if !channels.iter().any(|c| c == name) {
            return Err(ModelError::UnknownChannel(name.clone()));
        }
    }
    let n = graph.levels().len();
    let mut m = GeneratorMatrix::zeros(n);
    for t in graph.transitions() {
        let from = graph
            .index_of(t.from)
            .ok_or(ModelError::UndeclaredLevel(t.from))?;
        let to = graph
            .index_of(t.to)
            .ok_or(ModelError::UndeclaredLevel(t.to))?;
        let rate = match &t.kind {
            TransitionKind::Driven { channel } => {
                *drive_rates.get(channel).unwrap_or(&0.0) * t.branch_weight
            }
            _ => t.effective_rate().unwrap_or(0.0),
        };
        if rate < 0.0 {
            return Err(ModelError::InvalidParam {
                field: "drive_rates",
                constraint: "drive rates must be nonnegative",
            });
        }
        if rate > 0.0 {
            m.add_rate(to, from, rate);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drives(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn defaults_give_six_levels_and_six_transitions() {
        let g = build_default_model(ModelParams::default()).unwrap();
        assert_eq!(g.levels().len(), 6);
        assert_eq!(g.transitions().len(), 6);
        let be_decay = g
            .transitions()
            .iter()
            .find(|t| t.from == LevelId::Be && t.to == LevelId::Empty)
            .unwrap();
        let rate = be_decay.effective_rate().unwrap();
        assert!((rate - 1.0 / 0.470).abs() < 1e-12);
        assert!((rate - 2.127659574468085).abs() < 1e-9);
    }

    #[test]
    fn zero_branching_collapses_to_single_relaxation_branch() {
        let params = ModelParams { branch_b: 0.0, ..ModelParams::default() };
        let g = build_default_model(params).unwrap();
        let branches: Vec<_> = g
            .transitions()
            .iter()
            .filter(|t| t.from == LevelId::XxExcited)
            .collect();
        assert_eq!(branches.len(), 1);
        assert_eq!(branches[0].to, LevelId::XxGround);
        assert_eq!(branches[0].branch_weight, 1.0);
        assert!(validate(&g).is_pass());
    }

    #[test]
    fn half_branching_splits_relaxation_rate() {
        let params = ModelParams { branch_b: 0.5, tau_relax: 0.03, ..ModelParams::default() };
        let g = build_default_model(params).unwrap();
        // Hand oracle: 0.5 * (1 / 0.03) = 16.666...
        let expected = 0.5 * (1.0 / 0.03);
        for to in [LevelId::XxGround, LevelId::XxT3] {
            let t = g
                .transitions()
                .iter()
                .find(|t| t.from == LevelId::XxExcited && t.to == to)
                .unwrap();
            let r = t.effective_rate().unwrap();
            assert!((r - expected).abs() < 1e-9, "branch to {to}: {r}");
            assert!((r - 16.666666666666668).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_params_name_the_offending_field() {
        let params = ModelParams { tau_de: -1.0, ..ModelParams::default() };
        let err = build_default_model(params).unwrap_err();
        assert!(err.to_string().contains("tau_de"));
        let params = ModelParams { branch_b: 1.5, ..ModelParams::default() };
        let err = build_default_model(params).unwrap_err();
        assert!(err.to_string().contains("branch_b"));
    }

    #[test]
    fn default_graph_validates() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let report = validate(&g);
        assert!(report.is_pass(), "{:?}", report.violations);
    }

    #[test]
    fn bad_branch_weights_are_reported() {
        let params = ModelParams::default();
        let mut g = build_default_model(params).unwrap();
        // Force the 0.6/0.6 violation.
        let mut transitions = g.transitions().to_vec();
        for t in &mut transitions {
            if t.from == LevelId::XxExcited {
                t.branch_weight = 0.6;
            }
        }
        g = LevelGraph::new(g.levels().to_vec(), transitions, params);
        let report = validate(&g);
        assert!(!report.is_pass());
        assert!(report.violations.iter().any(|v| v.contains("XX_excited")), "{:?}", report.violations);
    }

    #[test]
    fn missing_de_decay_breaks_reachability() {
        let params = ModelParams::default();
        let g = build_default_model(params).unwrap();
        let transitions: Vec<_> = g
            .transitions()
            .iter()
            .filter(|t| !(t.from == LevelId::De && t.to == LevelId::Empty))
            .cloned()
            .collect();
        let g = LevelGraph::new(g.levels().to_vec(), transitions, params);
        let report = validate(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| v == "DE cannot reach Empty without drive"), "{:?}", report.violations);
    }

    #[test]
    fn undeclared_level_is_reported() {
        let params = ModelParams::default();
        let g = build_default_model(params).unwrap();
        let mut transitions = g.transitions().to_vec();
        transitions.push(Transition::nonradiative(LevelId::XProbe, LevelId::Empty, 1.0, 1.0));
        let g = LevelGraph::new(g.levels().to_vec(), transitions, params);
        let report = validate(&g);
        assert!(report.violations.iter().any(|v| v.contains("undeclared")));
    }

    #[test]
    fn generator_zero_drive_matches_single_exit_rates() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let m = rate_matrix(&g, &drives(&[])).unwrap();
        let be = g.index_of(LevelId::Be).unwrap();
        let empty = g.index_of(LevelId::Empty).unwrap();
        assert!((m.entry(be, be) + 1.0 / 0.470).abs() < 1e-12);
        assert!((m.entry(empty, be) - 1.0 / 0.470).abs() < 1e-12);
    }

    #[test]
    fn generator_diagonal_includes_drive_exit() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let m = rate_matrix(&g, &drives(&[(DEPLETE_CHANNEL, 1.0)])).unwrap();
        let de = g.index_of(LevelId::De).unwrap();
        // Hand oracle: exits from DE are the drive (1.0) plus 1/tau_de.
        assert!((m.entry(de, de) + (1.0 + 1.0 / 1000.0)).abs() < 1e-12);
    }

    #[test]
    fn generator_columns_sum_to_zero_for_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let params = ModelParams {
                tau_x0: rng.gen_range(0.05..2.0),
                tau_xx0: rng.gen_range(0.05..2.0),
                tau_de: rng.gen_range(10.0..5000.0),
                tau_relax: rng.gen_range(0.001..0.1),
                tau_xx_t3: rng.gen_range(0.05..2.0),
                branch_b: rng.gen_range(0.0..=1.0),
            };
            let g = build_default_model(params).unwrap();
            let m = rate_matrix(&g, &drives(&[(DEPLETE_CHANNEL, rng.gen_range(0.0..10.0))])).unwrap();
            for col in 0..m.dim() {
                assert!(m.column_sum(col).abs() <= RATE_SUM_TOL);
                for row in 0..m.dim() {
                    if row != col {
                        assert!(m.entry(row, col) >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_drive_channel_is_an_error() {
        let g = build_default_model(ModelParams::default()).unwrap();
        let err = rate_matrix(&g, &drives(&[("no_such_channel", 1.0)])).unwrap_err();
        assert!(matches!(err, ModelError::UnknownChannel(_)));
    }

    #[test]
    fn absorption_probability_into_empty_is_one_without_drive() {
        // Absorbing-chain oracle: solve a_i = sum_j P(i->j) a_j with
        // a_Empty = 1 on the embedded jump chain via Gaussian elimination.
        let g = build_default_model(ModelParams::default()).unwrap();
        let n = g.levels().len();
        let empty = g.index_of(LevelId::Empty).unwrap();
        let mut exit = vec![0.0_f64; n];
        let mut jump = vec![vec![0.0_f64; n]; n]; // jump[i][j] = P(i -> j)
        for t in g.transitions() {
            if t.is_driven() {
                continue;
            }
            let r = t.effective_rate().unwrap_or(0.0);
            let from = g.index_of(t.from).unwrap();
            let to = g.index_of(t.to).unwrap();
            exit[from] += r;
            jump[from][to] += r;
        }
        for i in 0..n {
            if exit[i] > 0.0 {
                for j in 0..n {
                    jump[i][j] /= exit[i];
                }
            }
        }
        // Linear system (I - J) a = e_Empty restricted rows; absorbing rows
        // pinned to identity.
        let mut a = vec![vec![0.0_f64; n + 1]; n];
        for i in 0..n {
            if i == empty || exit[i] == 0.0 {
                a[i][i] = 1.0;
                a[i][n] = if i == empty { 1.0 } else { 0.0 };
            } else {
                for j in 0..n {
                    a[i][j] = if i == j { 1.0 } else { 0.0 };
                    a[i][j] -= jump[i][j];
                }
            }
        }
        // Gaussian elimination with partial pivoting.
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let p = a[col][col];
            assert!(p.abs() > 1e-12);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / p;
                    for k in col..=n {
                        let v = a[col][k];
                        a[row][k] -= f * v;
                    }
                }
            }
        }
        for (i, &level) in g.levels().iter().enumerate() {
            let prob = a[i][n] / a[i][i];
            assert!(
                (prob - 1.0).abs() < 1e-9,
                "absorption probability from {level} = {prob}"
            );
        }
    }
}
