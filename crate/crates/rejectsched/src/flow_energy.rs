//! Online engine for weighted flow-time plus energy on unrelated machines
//! with speed scaling and weight-counter rejection.
//!
//! Model: each machine runs its dispatched jobs non-preemptively in
//! non-increasing *density* order `δ_ij = w_j/p_ij` (ties by release then
//! id). When a job starts, the machine's speed is fixed for its whole
//! execution at `s = γ·(Σ_{ℓ∈U_i(t)} w_ℓ)^{1/α}`, summing over every
//! pending job including the one being started; running at speed `s`
//! costs energy at rate `s^α`. Arriving jobs are dispatched immediately to
//! the machine minimizing a price `λ_ij` built from the queue's suffix
//! weights, and the running job `k` carries a real counter `v_k` that
//! grows by `w_j` per dispatch to its machine; `k` is interrupted and
//! rejected the first time `v_k > w_k/ε` (strict).
//!
//! Alongside the schedule, the engine constructs a dual solution online:
//! a frozen price `λ_j = (ε/(1+ε))·min_i λ_ij` per job, and per-machine
//! curves `V_i(t) = Σ_ℓ w_ℓ·q_iℓ(t)/p_iℓ` — the total fractional weight
//! of jobs not yet *definitively finished*, where a rejected job's
//! remaining volume `q` freezes at its rejection value and keeps counting
//! until its definitive finish `C̃_j` (completion/rejection time plus the
//! delay terms `q_ik/s_k` charged by rejections). The dual speed variable
//! is the monotone transform `u_i(t) = (ε/(γ(1+ε)(α−1)))^{1/(α−1)}·
//! V_i(t)^{1/α}`. Rejected jobs accrue weighted flow only up to their
//! rejection time.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowtime::EvKey;
use crate::instance::{
    Event, EventKind, ExecutionRecord, Instance, InstanceError, Job, Model, Outcome,
    ScheduleTrace,
};

/// Engine-level failures.
#[derive(Debug, Error)]
pub enum FlowEnergyError {
    #[error("instance model is {got}, engine needs {want}")]
    ModelMismatch { want: Model, got: Model },
    #[error("epsilon {0} is not positive and finite")]
    BadEpsilon(f64),
    #[error("alpha {0} violates alpha-1+ln(alpha-1) > 0 (needs alpha > ~1.5671)")]
    BadAlpha(f64),
    #[error("speed undefined: no pending jobs at start")]
    EmptyPending,
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Speed-scaling coefficient
/// `γ = (ε/(1+ε))^{1/(α−1)} · (1/(α−1)) · (α−1+ln(α−1))^{(α−1)/α}`.
///
/// Defined only where `α−1+ln(α−1) > 0`, i.e. `α−1` above the root of
/// `x+ln x` (≈ 0.5671), so `α ≳ 1.5671`; smaller exponents are rejected.
pub fn gamma_of(epsilon: f64, alpha: f64) -> Result<f64, FlowEnergyError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(FlowEnergyError::BadEpsilon(epsilon));
    }
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(FlowEnergyError::BadAlpha(alpha));
    }
    let base = alpha - 1.0 + (alpha - 1.0).ln();
    if base <= 0.0 {
        return Err(FlowEnergyError::BadAlpha(alpha));
    }
    Ok((epsilon / (1.0 + epsilon)).powf(1.0 / (alpha - 1.0)) / (alpha - 1.0)
        * base.powf((alpha - 1.0) / alpha))
}

/// Closed-form competitive-ratio certificate at `γ = gamma_of(ε, α)`:
///
/// `(2 + α/(γ(α−1)) + γ^α) / (ε/(1+ε) − (ε/(γ(1+ε)))^{α/(α−1)}·(α−1)^{−1/(α−1)})`.
///
/// The denominator vanishes as α → 2 from above (and is negative at
/// α = 2, where γ = ε/(1+ε) makes the subtracted term exactly 1), so the
/// certificate is vacuous there; callers must treat non-positive bounds
/// as "no guarantee".
pub fn ratio_certificate_bound(epsilon: f64, alpha: f64) -> Result<f64, FlowEnergyError> {
    let gamma = gamma_of(epsilon, alpha)?;
    let numerator = 2.0 + alpha / (gamma * (alpha - 1.0)) + gamma.powf(alpha);
    let denominator = epsilon / (1.0 + epsilon)
        - (epsilon / (gamma * (1.0 + epsilon))).powf(alpha / (alpha - 1.0))
            * (alpha - 1.0).powf(-1.0 / (alpha - 1.0));
    Ok(numerator / denominator)
}

/// The currently executing job on one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningEnergy {
    pub job: u64,
    pub start: f64,
    /// Speed fixed at start time.
    pub speed: f64,
    /// Unprocessed volume as of the machine's last bookkeeping instant.
    pub remaining: f64,
}

/// Per-machine engine state.
#[derive(Debug, Clone, Default)]
pub struct MachineStateEnergy {
    /// Waiting jobs (running job excluded), sorted by non-increasing
    /// density `w/p`, ties by release then id.
    pub pending: Vec<u64>,
    pub running: Option<RunningEnergy>,
    /// Weight counter of the running job: total weight dispatched to this
    /// machine during the current execution.
    pub v: f64,
}

/// One linear piece of a piecewise-linear curve: value `v0` at `t0`
/// ramping to `v1` at `t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub v0: f64,
    pub v1: f64,
}

/// A piecewise-linear function of time, stored as contiguous segments
/// (`t1` of one piece equals `t0` of the next); jumps show up as a
/// mismatch between one piece's `v1` and the next piece's `v0`. The
/// function is 0 before the first piece and holds its last value after
/// the final piece.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Piecewise {
    pub segments: Vec<Segment>,
}

impl Piecewise {
    /// Value just after time `t` (right limit).
    pub fn value_after(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|s| s.t1 <= t);
        match self.segments.get(idx) {
            None => self.segments.last().map(|s| s.v1).unwrap_or(0.0),
            Some(s) if t <= s.t0 => s.v0,
            Some(s) => s.v0 + (s.v1 - s.v0) * (t - s.t0) / (s.t1 - s.t0),
        }
    }

    /// Value just before time `t` (left limit).
    pub fn value_before(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|s| s.t0 < t);
        if idx == 0 {
            return self.segments.first().map(|s| s.v0).unwrap_or(0.0);
        }
        let s = &self.segments[idx - 1];
        if t >= s.t1 {
            s.v1
        } else {
            s.v0 + (s.v1 - s.v0) * (t - s.t0) / (s.t1 - s.t0)
        }
    }

    /// Exact integral over all time (trapezoid per linear piece).
    pub fn integral(&self) -> f64 {
        self.segments.iter().map(|s| (s.t1 - s.t0) * (s.v0 + s.v1) * 0.5).sum()
    }
}

/// Everything a run produces: trace, duals, and summary statistics.
///
/// `u_i(t)` is represented exactly by its closed form
/// `u_coef · V_i(t)^{1/α}` on top of the stored `v` curves; see
/// [`EnergyFlowResult::u_after`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyFlowResult {
    pub instance: Instance,
    pub epsilon: f64,
    pub alpha: f64,
    /// `gamma_of(epsilon, alpha)`.
    pub gamma: f64,
    /// `(ε/(γ(1+ε)(α−1)))^{1/(α−1)}`, the factor turning `V^{1/α}` into u.
    pub u_coef: f64,
    pub trace: ScheduleTrace,
    /// Frozen dual price per job.
    pub lambda: BTreeMap<u64, f64>,
    /// Per machine: total fractional weight `V_i(t)` of jobs dispatched
    /// but not definitively finished, rejected members counted at their
    /// frozen rejection-time volume.
    pub v: Vec<Piecewise>,
    /// Σ_j w_j·(C_j − r_j), rejected jobs counted up to rejection.
    pub weighted_flow: f64,
    /// Σ_i ∫ s_i(t)^α dt, exact since speeds are piecewise constant.
    pub energy: f64,
    /// weighted_flow + energy.
    pub objective: f64,
    /// Total rejected weight over total weight.
    pub rejected_weight_fraction: f64,
}

impl EnergyFlowResult {
    /// `u_i` just after time `t`.
    pub fn u_after(&self, i: usize, t: f64) -> f64 {
        self.u_coef * self.v[i].value_after(t).max(0.0).powf(1.0 / self.alpha)
    }

    /// `u_i` just before time `t`.
    pub fn u_before(&self, i: usize, t: f64) -> f64 {
        self.u_coef * self.v[i].value_before(t).max(0.0).powf(1.0 / self.alpha)
    }

    /// Σ_i ∫ V_i(t) dt.
    pub fn v_integral_sum(&self) -> f64 {
        self.v.iter().map(Piecewise::integral).sum()
    }

    /// Σ_j λ_j.
    pub fn lambda_sum(&self) -> f64 {
        self.lambda.values().sum()
    }

    /// Dual objective Σλ_j + Σ_i ∫(1−α)·u_i(t)^α dt. Since
    /// `u^α = u_coef^α · V`, the integral is exact on the stored curves.
    pub fn dual_objective(&self) -> f64 {
        self.lambda_sum()
            + (1.0 - self.alpha) * self.u_coef.powf(self.alpha) * self.v_integral_sum()
    }

    /// Σ_j w_j·(C̃_j − r_j), the flow measured to definitive finish times.
    pub fn definitive_weighted_flow(&self) -> f64 {
        self.instance
            .jobs
            .iter()
            .map(|j| j.weight * (self.trace.definitive_finish[&j.id] - j.release))
            .sum()
    }
}

/// Strict total order "a runs before b" on machine `i`: higher density
/// `w/p` first, ties by release then id.
pub fn density_precedes(a: &Job, b: &Job, i: usize) -> bool {
    (-(a.weight / a.proc[i]), a.release, a.id) < (-(b.weight / b.proc[i]), b.release, b.id)
}

fn cmp_density(inst: &Instance, i: usize, a: u64, b: u64) -> std::cmp::Ordering {
    let (ja, jb) = (inst.job(a), inst.job(b));
    (-(ja.weight / ja.proc[i]), ja.release, ja.id)
        .partial_cmp(&(-(jb.weight / jb.proc[i]), jb.release, jb.id))
        .expect("finite keys")
}

/// Speed for a job starting now: `γ·(Σ_{ℓ∈pending} w_ℓ)^{1/α}`, where
/// `state.pending` still contains the job about to start.
pub fn speed_at_start(
    inst: &Instance,
    state: &MachineStateEnergy,
    gamma: f64,
    alpha: f64,
) -> Result<f64, FlowEnergyError> {
    if state.pending.is_empty() {
        return Err(FlowEnergyError::EmptyPending);
    }
    let total_w: f64 = state.pending.iter().map(|&id| inst.job(id).weight).sum();
    Ok(gamma * total_w.powf(1.0 / alpha))
}

/// Price of dispatching `j` to machine `i`:
/// `w_j·(p_ij/ε + Σ_{ℓ⪯j} p_iℓ/(γ·W_ℓ^{1/α})) + (Σ_{ℓ≻j} w_ℓ)·p_ij/(γ·W_j^{1/α})`,
/// where `ℓ` ranges over the waiting jobs of `i` (running job excluded)
/// with `j` itself inserted into the density order, and `W_ℓ` is the
/// suffix weight `Σ_{ℓ'⪰ℓ} w_{ℓ'}` of that order — so `ℓ ⪯ j` includes
/// `j` and `W_j` includes `w_j`.
pub fn lambda_i_weighted(
    inst: &Instance,
    j: &Job,
    i: usize,
    state: &MachineStateEnergy,
    epsilon: f64,
    gamma: f64,
    alpha: f64,
) -> f64 {
    assert!(epsilon > 0.0, "epsilon must be positive");
    assert!(gamma > 0.0, "gamma must be positive");
    let p_ij = j.proc[i];
    // Waiting queue with j inserted, in processing order.
    let mut merged: Vec<&Job> = state.pending.iter().map(|&id| inst.job(id)).collect();
    let pos = merged.partition_point(|other| density_precedes(other, j, i));
    merged.insert(pos, j);
    // Suffix weights W_ℓ in one backward sweep.
    let mut suffix = vec![0.0; merged.len()];
    let mut acc = 0.0;
    for (idx, job) in merged.iter().enumerate().rev() {
        acc += job.weight;
        suffix[idx] = acc;
    }
    let inv_alpha = 1.0 / alpha;
    let own_delay: f64 = merged[..=pos]
        .iter()
        .zip(&suffix)
        .map(|(l, w)| l.proc[i] / (gamma * w.powf(inv_alpha)))
        .sum();
    let succ_weight = suffix[pos] - j.weight;
    j.weight * (p_ij / epsilon + own_delay)
        + succ_weight * p_ij / (gamma * suffix[pos].powf(inv_alpha))
}

/// Evaluates `lambda_i_weighted` on every machine and returns the argmin
/// machine (ties: lowest index) together with the frozen dual price
/// `λ_j = (ε/(1+ε))·min_i λ_ij`.
pub fn dispatch_flow_energy(
    inst: &Instance,
    j: &Job,
    states: &[MachineStateEnergy],
    epsilon: f64,
    gamma: f64,
    alpha: f64,
) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_val = f64::INFINITY;
    for (i, state) in states.iter().enumerate() {
        let v = lambda_i_weighted(inst, j, i, state, epsilon, gamma, alpha);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    (best, epsilon / (1.0 + epsilon) * best_val)
}

/// Incrementally built piecewise-linear curve.
#[derive(Debug, Clone)]
struct Curve {
    cur_t: f64,
    val: f64,
    slope: f64,
    segments: Vec<Segment>,
}

impl Curve {
    fn new() -> Self {
        Curve { cur_t: 0.0, val: 0.0, slope: 0.0, segments: Vec::new() }
    }

    /// Extends the current linear piece up to `t`.
    fn advance(&mut self, t: f64) {
        if t > self.cur_t {
            let v1 = self.val + self.slope * (t - self.cur_t);
            self.segments.push(Segment { t0: self.cur_t, t1: t, v0: self.val, v1 });
            self.cur_t = t;
            self.val = v1;
        }
    }
}

struct EnergyEngine<'a> {
    inst: &'a Instance,
    epsilon: f64,
    alpha: f64,
    gamma: f64,
    states: Vec<MachineStateEnergy>,
    curves: Vec<Curve>,
    lambda: BTreeMap<u64, f64>,
    /// Delay terms Σ q_ik(τ_k)/s_k accrued per still-waiting job.
    accrued: BTreeMap<u64, f64>,
    /// Frozen V-contribution w·q/p of rejected jobs awaiting their
    /// definitive finish.
    frozen: BTreeMap<u64, f64>,
    records: BTreeMap<u64, ExecutionRecord>,
    events: Vec<Event>,
    rejected: BTreeSet<u64>,
    definitive_finish: BTreeMap<u64, f64>,
    weighted_flow: f64,
    energy: f64,
    heap: BinaryHeap<std::cmp::Reverse<EvKey>>,
}

impl<'a> EnergyEngine<'a> {
    fn new(inst: &'a Instance, epsilon: f64, alpha: f64, gamma: f64) -> Self {
        let m = inst.machines;
        EnergyEngine {
            inst,
            epsilon,
            alpha,
            gamma,
            states: vec![MachineStateEnergy::default(); m],
            curves: vec![Curve::new(); m],
            lambda: BTreeMap::new(),
            accrued: BTreeMap::new(),
            frozen: BTreeMap::new(),
            records: BTreeMap::new(),
            events: Vec::new(),
            rejected: BTreeSet::new(),
            definitive_finish: BTreeMap::new(),
            weighted_flow: 0.0,
            energy: 0.0,
            heap: BinaryHeap::new(),
        }
    }

    fn event(&mut self, time: f64, kind: EventKind, job: u64, machine: usize) {
        self.events.push(Event { time, kind, job, machine });
    }

    /// Brings machine `i`'s V-curve and running volume up to time `t`.
    fn advance_machine(&mut self, i: usize, t: f64) {
        let dt = t - self.curves[i].cur_t;
        if dt > 0.0 {
            self.curves[i].advance(t);
            if let Some(run) = &mut self.states[i].running {
                run.remaining -= run.speed * dt;
            }
        }
    }

    /// Moves a finished/rejected job toward its definitive finish and
    /// schedules the V-drop event (skipped when C̃ = C). `frozen` is the
    /// rejected job's leftover fractional weight (0 for completed jobs,
    /// whose live contribution already reached 0).
    fn enter_q(&mut self, i: usize, job: u64, c_j: f64, c_tilde: f64, frozen: f64) {
        self.definitive_finish.insert(job, c_tilde);
        if c_tilde > c_j {
            if frozen != 0.0 {
                self.frozen.insert(job, frozen);
            }
            self.heap.push(std::cmp::Reverse(EvKey {
                time: c_tilde,
                class: 1,
                machine: i,
                job,
            }));
        }
    }

    /// Starts the density-maximal waiting job whenever the machine is
    /// idle, fixing its speed from the whole pending set.
    fn repair(&mut self, i: usize, t: f64) {
        if self.states[i].running.is_none() && !self.states[i].pending.is_empty() {
            let speed = speed_at_start(self.inst, &self.states[i], self.gamma, self.alpha)
                .expect("pending set non-empty");
            let job = self.states[i].pending.remove(0);
            let w = self.inst.job(job).weight;
            let p = self.inst.job(job).proc[i];
            self.states[i].running =
                Some(RunningEnergy { job, start: t, speed, remaining: p });
            self.states[i].v = 0.0;
            self.curves[i].slope = -speed * w / p;
            self.event(t, EventKind::Start, job, i);
            self.heap.push(std::cmp::Reverse(EvKey {
                time: t + p / speed,
                class: 0,
                machine: i,
                job,
            }));
        }
    }

    fn complete(&mut self, i: usize, job: u64, t: f64) {
        // Stale completion events (job was rejected mid-run) are filtered
        // by the caller; here the running job always matches.
        self.advance_machine(i, t);
        let run = self.states[i].running.take().expect("machine busy at completion");
        debug_assert_eq!(run.job, job);
        let j = self.inst.job(job);
        self.records.insert(
            job,
            ExecutionRecord {
                job,
                machine: i,
                start: run.start,
                speed: run.speed,
                end: t,
                outcome: Outcome::Completed,
            },
        );
        self.energy += (t - run.start) * run.speed.powf(self.alpha);
        self.weighted_flow += j.weight * (t - j.release);
        self.event(t, EventKind::Complete, job, i);
        self.curves[i].slope = 0.0;
        let c_tilde = t + self.accrued.get(&job).copied().unwrap_or(0.0);
        self.enter_q(i, job, t, c_tilde, 0.0);
        self.repair(i, t);
    }

    fn definitive_finish_event(&mut self, i: usize, job: u64, t: f64) {
        self.advance_machine(i, t);
        self.curves[i].val -= self.frozen.remove(&job).unwrap_or(0.0);
        self.event(t, EventKind::DefinitiveFinish, job, i);
    }

    fn arrival(&mut self, j: &Job) {
        let t = j.release;
        // (1) Dispatch to the argmin-price machine and freeze λ_j.
        let (i, lambda_j) = dispatch_flow_energy(
            self.inst,
            j,
            &self.states,
            self.epsilon,
            self.gamma,
            self.alpha,
        );
        self.lambda.insert(j.id, lambda_j);
        self.event(t, EventKind::Dispatch, j.id, i);
        self.advance_machine(i, t);
        let pos = self.states[i]
            .pending
            .binary_search_by(|&other| cmp_density(self.inst, i, other, j.id))
            .unwrap_err();
        self.states[i].pending.insert(pos, j.id);
        self.curves[i].val += j.weight; // full fractional weight w·p/p

        // (2) Weight counter: bump by the arriving weight; reject the
        // running job on a strict crossing of w_k/ε.
        if self.states[i].running.is_some() {
            self.states[i].v += j.weight;
            let run = self.states[i].running.as_ref().expect("checked");
            let k = self.inst.job(run.job);
            if self.states[i].v > k.weight / self.epsilon {
                let run = self.states[i].running.take().expect("running");
                let q_rej = run.remaining.max(0.0); // synced by advance_machine
                let q_time = q_rej / run.speed;
                self.records.insert(
                    k.id,
                    ExecutionRecord {
                        job: k.id,
                        machine: i,
                        start: run.start,
                        speed: run.speed,
                        end: t,
                        outcome: Outcome::RejectedWeightCounter,
                    },
                );
                self.energy += (t - run.start) * run.speed.powf(self.alpha);
                self.weighted_flow += k.weight * (t - k.release);
                self.rejected.insert(k.id);
                self.event(t, EventKind::Reject, k.id, i);
                // Every job waiting on i and released strictly before now
                // inherits the leftover processing time q/s as a
                // definitive-finish delay; the trigger (released exactly
                // now) does not.
                for &x in &self.states[i].pending {
                    if self.inst.job(x).release < t {
                        *self.accrued.entry(x).or_insert(0.0) += q_time;
                    }
                }
                let c_tilde = t + self.accrued.get(&k.id).copied().unwrap_or(0.0) + q_time;
                // The rejected job's live contribution freezes: the curve
                // is continuous here, only its slope stops.
                self.curves[i].slope = 0.0;
                self.enter_q(i, k.id, t, c_tilde, k.weight * q_rej / k.proc[i]);
            }
        }

        // (3) Eager start: an idle machine immediately runs its
        // density-maximal waiting job (possibly j itself).
        self.repair(i, t);
    }

    fn run(mut self) -> EnergyFlowResult {
        let jobs = &self.inst.jobs;
        let mut next_arrival = 0usize;
        loop {
            let dyn_time = self.heap.peek().map(|e| e.0.time);
            let arr_time = jobs.get(next_arrival).map(|j| j.release);
            match (dyn_time, arr_time) {
                (None, None) => break,
                (Some(dt), at) if at.is_none() || dt <= at.unwrap() => {
                    let ev = self.heap.pop().expect("peeked").0;
                    match ev.class {
                        0 => {
                            // Skip stale completions of rejected jobs.
                            let valid = self.states[ev.machine]
                                .running
                                .as_ref()
                                .map(|r| r.job == ev.job)
                                .unwrap_or(false);
                            if valid {
                                self.complete(ev.machine, ev.job, ev.time);
                            }
                        }
                        _ => self.definitive_finish_event(ev.machine, ev.job, ev.time),
                    }
                }
                _ => {
                    let j = &jobs[next_arrival];
                    next_arrival += 1;
                    self.arrival(j);
                }
            }
        }
        // Close every V-curve at the global end of activity.
        let t_end = self
            .events
            .last()
            .map(|e| e.time)
            .into_iter()
            .chain(self.curves.iter().map(|c| c.cur_t))
            .fold(0.0, f64::max);
        for i in 0..self.inst.machines {
            self.advance_machine(i, t_end);
            // A definitive-finish drop at the very last instant has no
            // later segment to land in; record it as a zero-length marker
            // so the right limit at the end of the timeline is the
            // post-drop value.
            let c = &mut self.curves[i];
            let tail = c.segments.last().map(|s| s.v1).unwrap_or(0.0);
            if c.val != tail {
                c.segments.push(Segment { t0: c.cur_t, t1: c.cur_t, v0: c.val, v1: c.val });
            }
        }

        let total_weight: f64 = self.inst.jobs.iter().map(|j| j.weight).sum();
        let rejected_weight: f64 =
            self.rejected.iter().map(|&id| self.inst.job(id).weight).sum();
        let rejected_weight_fraction =
            if total_weight > 0.0 { rejected_weight / total_weight } else { 0.0 };
        let objective = self.weighted_flow + self.energy;
        let u_coef = (self.epsilon / (self.gamma * (1.0 + self.epsilon) * (self.alpha - 1.0)))
            .powf(1.0 / (self.alpha - 1.0));
        EnergyFlowResult {
            instance: self.inst.clone(),
            epsilon: self.epsilon,
            alpha: self.alpha,
            gamma: self.gamma,
            u_coef,
            trace: ScheduleTrace {
                records: self.records,
                events: self.events,
                objective,
                rejected_ids: self.rejected,
                definitive_finish: self.definitive_finish,
            },
            lambda: self.lambda,
            v: self.curves.into_iter().map(|c| Piecewise { segments: c.segments }).collect(),
            weighted_flow: self.weighted_flow,
            energy: self.energy,
            objective,
            rejected_weight_fraction,
        }
    }
}

/// Runs the full online simulation on a FlowEnergy-model instance.
pub fn simulate_flow_energy(
    inst: &Instance,
    epsilon: f64,
) -> Result<EnergyFlowResult, FlowEnergyError> {
    if inst.model != Model::FlowEnergy {
        return Err(FlowEnergyError::ModelMismatch {
            want: Model::FlowEnergy,
            got: inst.model,
        });
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(FlowEnergyError::BadEpsilon(epsilon));
    }
    let alpha = match inst.alpha {
        Some(a) if a.is_finite() && a > 1.0 => a,
        other => return Err(FlowEnergyError::BadAlpha(other.unwrap_or(f64::NAN))),
    };
    let gamma = gamma_of(epsilon, alpha)?;
    Ok(EnergyEngine::new(inst, epsilon, alpha, gamma).run())
}

/// Tests whether adding one last-arriving job can only raise the
/// fractional-weight curve: simulates `inst` and `inst + {j_extra}` on a
/// single machine and returns true iff `V_with(t) ≥ V_without(t)` (up to
/// 1e−9 relative slack) just before and after every event time of either
/// run. `j_extra` must be released no earlier than every job of `inst`.
pub fn monotonicity_probe(
    inst: &Instance,
    j_extra: &Job,
    epsilon: f64,
) -> Result<bool, FlowEnergyError> {
    assert_eq!(inst.machines, 1, "the monotonicity probe is a single-machine construction");
    assert!(
        inst.jobs.iter().all(|j| j.release <= j_extra.release),
        "no arrivals may follow the extra job"
    );
    let without = simulate_flow_energy(inst, epsilon)?;
    let mut bigger = inst.clone();
    bigger.jobs.push(j_extra.clone());
    bigger.validate()?;
    let with = simulate_flow_energy(&bigger, epsilon)?;

    let mut times: Vec<f64> = Vec::new();
    for res in [&without, &with] {
        for s in &res.v[0].segments {
            times.push(s.t0);
            times.push(s.t1);
        }
    }
    for &t in &times {
        let pairs = [
            (with.v[0].value_before(t), without.v[0].value_before(t)),
            (with.v[0].value_after(t), without.v[0].value_after(t)),
        ];
        for (hi, lo) in pairs {
            if hi < lo - 1e-9 * lo.abs().max(1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
