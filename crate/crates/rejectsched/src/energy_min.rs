//! Greedy primal-dual engine for deadline-constrained energy minimization
//! over discretized speeds and times.
//!
//! Model: every job `j` must receive `p_ij` units of volume on one machine
//! between its release and deadline. A *strategy* fixes the machine, a
//! grid-aligned start `τ`, and a constant speed `v` from a finite menu, so
//! the job occupies `[τ, τ + p_ij/v)`. Strategies on one machine may
//! overlap — slot speeds add — and running machine `i` at speed `u` costs
//! `P_i(u)` per time unit. Jobs are handled in arrival order: each one
//! greedily commits the strategy with the smallest *marginal energy*
//! against the current load profile (ties: machine, then start, then
//! speed), irrevocably.
//!
//! Alongside the schedule, the engine prices every strategy into a dual
//! solution: `β_{i,j,k} = marginal/λ` against the pre-arrival profile,
//! `δ_j = min_k β_{i,j,k}` (the committed strategy's price), and
//! `γ_i = −(μ/λ)·f_i(A*_i)` from each machine's final energy, where
//! `(λ, μ)` are smoothness parameters of the power functions. The
//! accompanying estimator samples the nested-prefix configurations used
//! in the smoothness argument to bound the smallest feasible `λ` for a
//! given `μ` empirically.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{
    Event, EventKind, ExecutionRecord, Instance, Job, Model, Outcome, ScheduleTrace,
};

/// Engine-level failures.
#[derive(Debug, Error)]
pub enum EnergyMinError {
    #[error("instance model is {got}, engine needs {want}")]
    ModelMismatch { want: Model, got: Model },
    #[error("bad grids: {0}")]
    BadGrids(String),
    #[error(
        "job {job} volume on machine {machine} at speed {speed} needs \
         {duration} time units, not a multiple of the {step} grid; \
         coarsest compatible step is {suggestion}"
    )]
    OffGridVolume { job: u64, machine: usize, speed: f64, duration: f64, step: f64, suggestion: f64 },
    #[error("job {job} admits no feasible strategy on the grid")]
    NoFeasibleStrategy { job: u64 },
    #[error("bad power function: {0}")]
    BadPower(String),
    #[error("bad smoothness parameters: {0}")]
    BadParams(String),
}

/// Relative snapping tolerance for grid arithmetic.
const SNAP_TOL: f64 = 1e-9;

/// Rounds `x` to the nearest integer if it is within tolerance, else None.
fn snap_int(x: f64) -> Option<i64> {
    let k = x.round();
    if (x - k).abs() <= SNAP_TOL * x.abs().max(1.0) {
        Some(k as i64)
    } else {
        None
    }
}

/// Discretization of speeds and time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grids {
    /// Ascending positive speed menu 𝒱.
    pub speeds: Vec<f64>,
    /// Slot length; starts and ends land on integer multiples.
    pub time_step: f64,
    /// End of the time axis, a multiple of `time_step`.
    pub horizon: f64,
}

impl Grids {
    /// Validates and normalizes a grid description (the horizon snaps up
    /// to the next slot boundary).
    pub fn new(speeds: Vec<f64>, time_step: f64, horizon: f64) -> Result<Self, EnergyMinError> {
        if speeds.is_empty() {
            return Err(EnergyMinError::BadGrids("empty speed menu".into()));
        }
        for w in speeds.windows(2) {
            if !(w[0] < w[1]) {
                return Err(EnergyMinError::BadGrids(format!(
                    "speeds not strictly ascending: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !(speeds[0] > 0.0 && speeds.iter().all(|s| s.is_finite())) {
            return Err(EnergyMinError::BadGrids("speeds must be positive and finite".into()));
        }
        if !(time_step.is_finite() && time_step > 0.0) {
            return Err(EnergyMinError::BadGrids(format!("time step {time_step}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(EnergyMinError::BadGrids(format!("horizon {horizon}")));
        }
        let slots = (horizon / time_step - SNAP_TOL).ceil().max(1.0);
        Ok(Grids { speeds, time_step, horizon: slots * time_step })
    }

    /// Grid for an instance: the horizon covers the latest deadline.
    pub fn for_instance(
        speeds: Vec<f64>,
        time_step: f64,
        inst: &Instance,
    ) -> Result<Self, EnergyMinError> {
        let horizon = inst
            .jobs
            .iter()
            .filter_map(|j| j.deadline)
            .fold(time_step, f64::max);
        Grids::new(speeds, time_step, horizon)
    }

    /// Number of slots on the time axis.
    pub fn slots(&self) -> usize {
        snap_int(self.horizon / self.time_step).expect("horizon snapped in constructor") as usize
    }

    /// Duration `p/v` in slots, if it lands on the grid.
    fn duration_slots(&self, volume: f64, speed: f64) -> Option<usize> {
        let d = snap_int(volume / speed / self.time_step)?;
        (d >= 1).then_some(d as usize)
    }

    /// Checks that every (job, machine, speed) combination has a
    /// grid-aligned duration and at least one feasible strategy.
    pub fn validate_for(&self, inst: &Instance) -> Result<(), EnergyMinError> {
        for job in &inst.jobs {
            for (i, &p) in job.proc.iter().enumerate() {
                for &v in &self.speeds {
                    if self.duration_slots(p, v).is_none() {
                        let duration = p / v;
                        let k = (duration / self.time_step).ceil().max(1.0);
                        return Err(EnergyMinError::OffGridVolume {
                            job: job.id,
                            machine: i,
                            speed: v,
                            duration,
                            step: self.time_step,
                            suggestion: duration / k,
                        });
                    }
                }
            }
            enumerate_strategies(inst, job.id, self)?;
        }
        Ok(())
    }
}

/// One way to run a job: a machine, a grid start, and a menu speed; the
/// job then occupies `[start, end)` with `end = start + p_ij/speed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub machine: usize,
    pub job: u64,
    pub start: f64,
    pub speed: f64,
    pub end: f64,
}

/// Feasible strategies of one job (which must carry a deadline) in
/// (machine, start, speed) lexicographic order: all grid starts `τ ≥ r_j`
/// with `τ + p_ij/v ≤ d_j`. Speeds whose duration falls off the grid
/// yield no strategies; an empty result means the grid admits none.
pub fn strategies_for(j: &Job, grids: &Grids) -> Vec<Strategy> {
    let job = j.id;
    let deadline = j.deadline.expect("deadline model validated");
    let step = grids.time_step;
    let mut out = Vec::new();
    for (i, &p) in j.proc.iter().enumerate() {
        let durations: Vec<(usize, f64)> = grids
            .speeds
            .iter()
            .filter_map(|&v| grids.duration_slots(p, v).map(|d| (d, v)))
            .collect();
        let first_slot = (j.release / step - SNAP_TOL).ceil().max(0.0) as i64;
        let last_slot = (deadline / step + SNAP_TOL).floor() as i64;
        for tau_slot in first_slot..=last_slot {
            for &(dur, v) in &durations {
                if tau_slot + dur as i64 <= last_slot {
                    let start = tau_slot as f64 * step;
                    out.push(Strategy {
                        machine: i,
                        job,
                        start,
                        speed: v,
                        end: (tau_slot as usize + dur) as f64 * step,
                    });
                }
            }
        }
    }
    out
}

/// Strategies of an instance's job, erroring when the grid admits none.
pub fn enumerate_strategies(
    inst: &Instance,
    job: u64,
    grids: &Grids,
) -> Result<Vec<Strategy>, EnergyMinError> {
    let out = strategies_for(inst.job(job), grids);
    if out.is_empty() {
        return Err(EnergyMinError::NoFeasibleStrategy { job });
    }
    Ok(out)
}

/// Power-per-time-unit as a function of speed, vanishing at 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Power {
    /// P(s) = s^α.
    Monomial { alpha: f64 },
    /// Piecewise-linear through ascending `(speed, power)` breakpoints
    /// starting at (0, 0), extended past the last point with the final
    /// slope. Powers must be non-decreasing; convexity is not assumed.
    Table(Vec<(f64, f64)>),
}

impl Power {
    /// Validates the shape invariants.
    pub fn validate(&self) -> Result<(), EnergyMinError> {
        match self {
            Power::Monomial { alpha } => {
                if !(alpha.is_finite() && *alpha >= 1.0) {
                    return Err(EnergyMinError::BadPower(format!("alpha {alpha}")));
                }
            }
            Power::Table(points) => {
                if points.first() != Some(&(0.0, 0.0)) {
                    return Err(EnergyMinError::BadPower(
                        "table must start at (0, 0)".into(),
                    ));
                }
                for w in points.windows(2) {
                    if !(w[0].0 < w[1].0 && w[0].1 <= w[1].1) {
                        return Err(EnergyMinError::BadPower(format!(
                            "table not ascending at ({}, {}) then ({}, {})",
                            w[0].0, w[0].1, w[1].0, w[1].1
                        )));
                    }
                }
                if points.iter().any(|(s, p)| !(s.is_finite() && p.is_finite())) {
                    return Err(EnergyMinError::BadPower("non-finite table entry".into()));
                }
            }
        }
        Ok(())
    }

    /// P(s).
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Power::Monomial { alpha } => s.powf(*alpha),
            Power::Table(points) => {
                if points.len() == 1 {
                    return 0.0;
                }
                // Segment containing s, extending the last slope beyond.
                let idx = points.partition_point(|&(x, _)| x < s).clamp(1, points.len() - 1);
                let (x0, y0) = points[idx - 1];
                let (x1, y1) = points[idx];
                y0 + (y1 - y0) * (s - x0) / (x1 - x0)
            }
        }
    }
}

/// Per-machine, per-slot speed totals of the committed strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub time_step: f64,
    /// `u[i][t]` = sum of committed strategy speeds covering slot t of
    /// machine i.
    pub u: Vec<Vec<f64>>,
}

impl LoadProfile {
    pub fn new(machines: usize, slots: usize, time_step: f64) -> Self {
        LoadProfile { time_step, u: vec![vec![0.0; slots]; machines] }
    }

    /// Slot span `[first, last)` covered by a strategy.
    pub fn slot_span(&self, s: &Strategy) -> (usize, usize) {
        self.span(s)
    }

    fn span(&self, s: &Strategy) -> (usize, usize) {
        let a = snap_int(s.start / self.time_step).expect("grid-aligned start");
        let b = snap_int(s.end / self.time_step).expect("grid-aligned end");
        (a as usize, b as usize)
    }

    /// Adds the strategy's speed to every covered slot.
    pub fn add(&mut self, s: &Strategy) {
        let (a, b) = self.span(s);
        for t in a..b {
            self.u[s.machine][t] += s.speed;
        }
    }

    /// Energy of machine i under its power function: Σ_t P(u_it)·step.
    pub fn machine_energy(&self, i: usize, power: &Power) -> f64 {
        self.u[i].iter().map(|&u| power.eval(u)).sum::<f64>() * self.time_step
    }

    /// Total energy Σ_i f_i.
    pub fn energy(&self, powers: &[Power]) -> f64 {
        (0..self.u.len()).map(|i| self.machine_energy(i, &powers[i])).sum()
    }
}

/// Marginal energy of adding `s` to the profile:
/// Σ over covered slots of (P(u+v) − P(u))·time_step.
pub fn marginal_energy(s: &Strategy, load: &LoadProfile, power: &Power) -> f64 {
    let (a, b) = load.span(s);
    load.u[s.machine][a..b]
        .iter()
        .map(|&u| power.eval(u + s.speed) - power.eval(u))
        .sum::<f64>()
        * load.time_step
}

/// Online interface for engines that irrevocably fix a job's execution
/// the moment it is released — the hook the adaptive lower-bound
/// adversary drives, observing each commitment before shaping the next
/// release.
pub trait EnergyCommitter {
    /// Commits the newly released job and returns the fixed execution.
    fn commit(&mut self, job: &Job) -> Result<ExecutionRecord, EnergyMinError>;
    /// Total energy of everything committed so far.
    fn energy(&self) -> f64;
}

/// The greedy engine behind the commit interface: one shared load
/// profile, each commit taking the minimum-marginal strategy with the
/// same (machine, start, speed) tie rule as the batch assignment.
pub struct GreedyCommitter {
    grids: Grids,
    powers: Vec<Power>,
    profile: LoadProfile,
}

impl GreedyCommitter {
    pub fn new(
        machines: usize,
        grids: Grids,
        powers: Vec<Power>,
    ) -> Result<Self, EnergyMinError> {
        if powers.len() != machines {
            return Err(EnergyMinError::BadPower(format!(
                "{} power functions for {machines} machines",
                powers.len()
            )));
        }
        for p in &powers {
            p.validate()?;
        }
        let profile = LoadProfile::new(machines, grids.slots(), grids.time_step);
        Ok(GreedyCommitter { grids, powers, profile })
    }
}

impl EnergyCommitter for GreedyCommitter {
    fn commit(&mut self, job: &Job) -> Result<ExecutionRecord, EnergyMinError> {
        let strategies = strategies_for(job, &self.grids);
        let mut best: Option<(f64, &Strategy)> = None;
        for s in &strategies {
            let marginal = marginal_energy(s, &self.profile, &self.powers[s.machine]);
            if best.map(|(m, _)| marginal < m).unwrap_or(true) {
                best = Some((marginal, s));
            }
        }
        let (_, s) = best.ok_or(EnergyMinError::NoFeasibleStrategy { job: job.id })?;
        self.profile.add(s);
        Ok(ExecutionRecord {
            job: job.id,
            machine: s.machine,
            start: s.start,
            speed: s.speed,
            end: s.end,
            outcome: Outcome::Completed,
        })
    }

    fn energy(&self) -> f64 {
        self.profile.energy(&self.powers)
    }
}

/// Dual solution built alongside the greedy assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyDuals {
    /// δ_j: the committed strategy's price marginal/λ (the minimum β).
    pub delta: BTreeMap<u64, f64>,
    /// β_{i,j,k}: price of job j's k-th enumerated strategy (on machine
    /// i) against the pre-arrival profile. Serialized as flat
    /// `[machine, job, k, value]` rows: JSON maps cannot key on tuples.
    #[serde(with = "beta_rows")]
    pub beta: BTreeMap<(usize, u64, usize), f64>,
    /// γ_i = −(μ/λ)·f_i(A*_i) ≤ 0 from each machine's final energy.
    pub gamma_m: Vec<f64>,
    /// The (λ, μ) smoothness parameters the prices were scaled with.
    pub lambda_mu: (f64, f64),
}

impl EnergyDuals {
    /// Dual objective Σ_j δ_j + Σ_i γ_i.
    pub fn objective(&self) -> f64 {
        self.delta.values().sum::<f64>() + self.gamma_m.iter().sum::<f64>()
    }
}

/// Flat-row (de)serialization for the tuple-keyed β map.
mod beta_rows {
    use std::collections::BTreeMap;

    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        beta: &BTreeMap<(usize, u64, usize), f64>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let mut seq = ser.serialize_seq(Some(beta.len()))?;
        for (&(machine, job, k), &value) in beta {
            seq.serialize_element(&(machine, job, k, value))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<(usize, u64, usize), f64>, D::Error> {
        let rows = Vec::<(usize, u64, usize, f64)>::deserialize(de)?;
        Ok(rows.into_iter().map(|(m, j, k, v)| ((m, j, k), v)).collect())
    }
}

/// Runs the greedy primal-dual assignment: jobs in arrival order, each
/// committing its minimum-marginal strategy (ties: machine, start, speed)
/// and pricing every alternative into β. Returns the trace (objective =
/// total energy) and the dual solution.
pub fn greedy_assign(
    inst: &Instance,
    grids: &Grids,
    powers: &[Power],
    lambda: f64,
    mu: f64,
) -> Result<(ScheduleTrace, EnergyDuals), EnergyMinError> {
    if inst.model != Model::EnergyDeadline {
        return Err(EnergyMinError::ModelMismatch {
            want: Model::EnergyDeadline,
            got: inst.model,
        });
    }
    if powers.len() != inst.machines {
        return Err(EnergyMinError::BadPower(format!(
            "{} power functions for {} machines",
            powers.len(),
            inst.machines
        )));
    }
    for p in powers {
        p.validate()?;
        if p.eval(0.0) != 0.0 {
            return Err(EnergyMinError::BadPower("P(0) must be 0".into()));
        }
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(EnergyMinError::BadParams(format!("lambda {lambda}")));
    }
    if !(mu.is_finite() && (0.0..1.0).contains(&mu)) {
        return Err(EnergyMinError::BadParams(format!("mu {mu}")));
    }

    let mut profile = LoadProfile::new(inst.machines, grids.slots(), grids.time_step);
    let mut delta = BTreeMap::new();
    let mut beta = BTreeMap::new();
    let mut records = BTreeMap::new();
    let mut events = Vec::new();

    for job in &inst.jobs {
        let strategies = enumerate_strategies(inst, job.id, grids)?;
        let mut best: Option<(f64, &Strategy)> = None;
        for (k, s) in strategies.iter().enumerate() {
            let marginal = marginal_energy(s, &profile, &powers[s.machine]);
            beta.insert((s.machine, job.id, k), marginal / lambda);
            // Strict < keeps the earliest (machine, start, speed) on ties
            // since enumeration is lexicographic.
            if best.map(|(m, _)| marginal < m).unwrap_or(true) {
                best = Some((marginal, s));
            }
        }
        let (marginal, s) = best.expect("non-empty strategy list");
        delta.insert(job.id, marginal / lambda);
        profile.add(s);
        records.insert(
            job.id,
            ExecutionRecord {
                job: job.id,
                machine: s.machine,
                start: s.start,
                speed: s.speed,
                end: s.end,
                outcome: Outcome::Completed,
            },
        );
        events.push(Event {
            time: job.release,
            kind: EventKind::Dispatch,
            job: job.id,
            machine: s.machine,
        });
        events.push(Event { time: s.start, kind: EventKind::Start, job: job.id, machine: s.machine });
        events.push(Event { time: s.end, kind: EventKind::Complete, job: job.id, machine: s.machine });
    }

    // Commits schedule future intervals, so order events globally:
    // completions first at equal times, then dispatches, then starts.
    let rank = |k: &EventKind| match k {
        EventKind::Complete => 0u8,
        EventKind::Dispatch => 1,
        _ => 2,
    };
    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(rank(&a.kind).cmp(&rank(&b.kind)))
            .then(a.job.cmp(&b.job))
    });

    let gamma_m: Vec<f64> = (0..inst.machines)
        .map(|i| -(mu / lambda) * profile.machine_energy(i, &powers[i]))
        .collect();
    let objective = profile.energy(powers);
    Ok((
        ScheduleTrace {
            records,
            events,
            objective,
            rejected_ids: BTreeSet::new(),
            definitive_finish: BTreeMap::new(),
        },
        EnergyDuals { delta, beta, gamma_m, lambda_mu: (lambda, mu) },
    ))
}

/// Empirically estimates the smallest feasible smoothness parameter λ for
/// a given μ: the maximum over seeded random nested-prefix configurations
/// (sequences `a`, `b` of equal length ≤ 6 with values in (0, 2]) of
///
/// `(Σ_i [P(b_i + A_i) − P(A_i)] − μ·P(A_n)) / P(Σ_i b_i)`,
///
/// where `A_i = Σ_{j≤i} a_j`. Values are drawn half uniform on (0, 2] and
/// half from the lattice {0.25, 0.5, …, 2.0} so exact rational witnesses
/// (like a=(2), b=(1) for P=s²) are hit with certainty at modest trial
/// counts.
pub fn smoothness_lambda_estimate(power: &Power, trials: usize, seed: u64, mu: f64) -> f64 {
    assert!((0.0..1.0).contains(&mu), "mu must lie in [0, 1)");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        if rng.gen_bool(0.5) {
            2.0 - rng.gen_range(0.0..2.0)
        } else {
            0.25 * rng.gen_range(1..=8) as f64
        }
    };
    let mut best = f64::NEG_INFINITY;
    for _ in 0..trials {
        let n = rng.gen_range(1..=6);
        let a: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let mut prefix = 0.0;
        let mut num = 0.0;
        for i in 0..n {
            prefix += a[i];
            num += power.eval(b[i] + prefix) - power.eval(prefix);
        }
        num -= mu * power.eval(prefix);
        let den = power.eval(b.iter().sum());
        if den > 0.0 {
            best = best.max(num / den);
        }
    }
    best
}
