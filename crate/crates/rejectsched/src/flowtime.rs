//! Online engine for non-preemptive total flow-time minimization with
//! rejection, on unrelated machines.
//!
//! Model: every arriving job is immediately dispatched to the machine
//! minimizing a price `λ_ij` computed from the waiting queue; each machine
//! runs its waiting jobs in shortest-processing-time order (`⪯`, ties by
//! release then id). Two counter rules discard work:
//!
//! * Rule 1 — each running job `k` carries a counter `v_k`; every dispatch
//!   to its machine during its execution increments `v_k`, and `k` is
//!   interrupted and rejected the moment `v_k = 1/ε`.
//! * Rule 2 — each machine carries a counter `c_i` incremented per
//!   dispatch; when `c_i = 1 + 1/ε` the waiting job with the largest
//!   processing time is rejected and the counter resets.
//!
//! `ε` is restricted to `1/q` for integer `q ≥ 1` so both thresholds are
//! exact integer counter values.
//!
//! Alongside the schedule, the engine constructs a dual solution online:
//! a frozen price `λ_j = (ε/(1+ε))·min_i (λ_ij − p_ij)` per job, and per-machine
//! step functions `β_i(t) = (ε/(1+ε)²)·(|U_i(t)| + |V_i(t)|)`, where
//! `U_i(t)` is the set of dispatched-but-unfinished jobs and `V_i(t)`
//! holds jobs past their completion/rejection time `C_j` but before their
//! *definitive finish* `C̃_j` — `C_j` plus delay terms charged by
//! rejections. Rejected jobs accrue flow only up to their rejection time.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{
    Event, EventKind, ExecutionRecord, Instance, Job, Model, Outcome, ScheduleTrace,
};

/// Engine-level failures.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("instance model is {got}, engine needs {want}")]
    ModelMismatch { want: Model, got: Model },
    #[error("epsilon {0} is not the reciprocal of a positive integer")]
    BadEpsilon(f64),
}

/// The currently executing job on one machine (unit speed).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningFlow {
    pub job: u64,
    pub start: f64,
    /// Rule-1 counter: dispatches to this machine during the execution.
    pub v: u32,
}

/// Per-machine engine state.
#[derive(Debug, Clone, Default)]
pub struct MachineStateFlow {
    /// Waiting jobs (running job excluded), kept sorted ascending by `⪯`.
    pub pending: Vec<u64>,
    pub running: Option<RunningFlow>,
    /// Rule-2 counter.
    pub c: u32,
}

/// Everything a run produces: trace, duals, and summary statistics.
///
/// The sets `U_i(t)`/`V_i(t)`/`R_i(t)` are recoverable from the trace:
/// a job is in `U_i` from its dispatch to its completion/rejection, in
/// `V_i` from then until `definitive_finish`, and in `R_i ⊆ V_i` if its
/// outcome is `RejectedRule2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowResult {
    pub instance: Instance,
    /// Normalized ε = 1/q actually used.
    pub epsilon: f64,
    pub trace: ScheduleTrace,
    /// Frozen dual price per job.
    pub lambda: BTreeMap<u64, f64>,
    /// Per machine: `(time, β_i just after)` breakpoints, one per
    /// dispatch/complete/reject/definitive-finish event in processing
    /// order (leading `(0, 0)` sentinel). Repeated times are sub-events.
    pub beta: Vec<Vec<(f64, f64)>>,
    /// Σ_j (C_j − r_j), rejected jobs counted up to rejection.
    pub total_flow: f64,
    pub rejected_fraction: f64,
}

impl FlowResult {
    /// β_i evaluated just after time `t` (0 before the first event).
    pub fn beta_after(&self, i: usize, t: f64) -> f64 {
        let steps = &self.beta[i];
        let idx = steps.partition_point(|&(bt, _)| bt <= t);
        if idx == 0 {
            0.0
        } else {
            steps[idx - 1].1
        }
    }

    /// Exact integral of the step function β_i over all time.
    pub fn beta_integral(&self, i: usize) -> f64 {
        let steps = &self.beta[i];
        let mut total = 0.0;
        for w in steps.windows(2) {
            total += w[0].1 * (w[1].0 - w[0].0);
        }
        total
    }

    /// Σ_i ∫ β_i(t) dt.
    pub fn beta_integral_sum(&self) -> f64 {
        (0..self.instance.machines).map(|i| self.beta_integral(i)).sum()
    }

    /// Σ_j λ_j.
    pub fn lambda_sum(&self) -> f64 {
        self.lambda.values().sum()
    }

    /// Dual objective Σλ_j − Σ_i ∫β_i.
    pub fn dual_objective(&self) -> f64 {
        self.lambda_sum() - self.beta_integral_sum()
    }

    /// Σ_j (C̃_j − r_j), the flow measured to definitive finish times.
    pub fn definitive_flow(&self) -> f64 {
        self.instance
            .jobs
            .iter()
            .map(|j| self.trace.definitive_finish[&j.id] - j.release)
            .sum()
    }
}

/// Strict total order `a ⪯ b` on machine `i`: lexicographic on
/// `(p_ia, release, id)`.
pub fn order_precedes(a: &Job, b: &Job, i: usize) -> bool {
    (a.proc[i], a.release, a.id) < (b.proc[i], b.release, b.id)
}

fn cmp_on_machine(inst: &Instance, i: usize, a: u64, b: u64) -> Ordering {
    let (ja, jb) = (inst.job(a), inst.job(b));
    (ja.proc[i], ja.release, ja.id)
        .partial_cmp(&(jb.proc[i], jb.release, jb.id))
        .expect("finite keys")
}

/// Price of dispatching `j` to machine `i`:
/// `(1/ε)·p_ij + Σ_{ℓ⪯j} p_iℓ + |{ℓ≻j}|·p_ij`, where `ℓ` ranges over the
/// waiting jobs of `i` (running job excluded) with `j` itself inserted,
/// so `ℓ ⪯ j` includes `j`.
pub fn lambda_i(
    inst: &Instance,
    j: &Job,
    i: usize,
    state: &MachineStateFlow,
    epsilon: f64,
) -> f64 {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let p_ij = j.proc[i];
    let mut ahead = p_ij; // Σ_{ℓ⪯j} p_iℓ, starting with j itself
    let mut succ = 0usize;
    for &id in &state.pending {
        let other = inst.job(id);
        if order_precedes(other, j, i) {
            ahead += other.proc[i];
        } else {
            succ += 1;
        }
    }
    (1.0 / epsilon) * p_ij + ahead + succ as f64 * p_ij
}

/// Evaluates `lambda_i` on every machine and returns the argmin machine
/// (ties: lowest index) together with the frozen dual price
/// `λ_j = (ε/(1+ε))·min_i (λ_ij − p_ij)`.
///
/// The price drops the job's own `p_ij` term: the dual constraint must hold
/// on every machine, including those `j` never runs on, where nothing in the
/// schedule compensates that term. Dispatch still compares the full `λ_ij`.
pub fn dispatch_flow(
    inst: &Instance,
    j: &Job,
    states: &[MachineStateFlow],
    epsilon: f64,
) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_val = f64::INFINITY;
    let mut price = f64::INFINITY;
    for (i, state) in states.iter().enumerate() {
        let v = lambda_i(inst, j, i, state, epsilon);
        if v < best_val {
            best_val = v;
            best = i;
        }
        price = price.min(v - j.proc[i]);
    }
    (best, epsilon / (1.0 + epsilon) * price)
}

/// Key for the dynamic event queue, shared by the event-driven engines.
/// Completions process before definitive finishes, and both before
/// arrivals at the same timestamp.
#[derive(Debug, PartialEq)]
pub(crate) struct EvKey {
    pub(crate) time: f64,
    pub(crate) class: u8, // 0 = completion, 1 = definitive finish
    pub(crate) machine: usize,
    pub(crate) job: u64,
}

impl Eq for EvKey {}

impl Ord for EvKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.class.cmp(&other.class))
            .then(self.machine.cmp(&other.machine))
            .then(self.job.cmp(&other.job))
    }
}

impl PartialOrd for EvKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct FlowEngine<'a> {
    inst: &'a Instance,
    inv_eps: u32,
    lambda_scale: f64, // ε/(1+ε) = 1/(q+1)
    beta_coef: f64,    // ε/(1+ε)² = q/(q+1)²
    states: Vec<MachineStateFlow>,
    u_count: Vec<usize>,
    v_count: Vec<usize>,
    beta: Vec<Vec<(f64, f64)>>,
    lambda: BTreeMap<u64, f64>,
    /// Rule-1 delay terms Σ q_ik(r_{j_k}) accrued per still-pending job.
    accrued: BTreeMap<u64, f64>,
    records: BTreeMap<u64, ExecutionRecord>,
    events: Vec<Event>,
    rejected: BTreeSet<u64>,
    definitive_finish: BTreeMap<u64, f64>,
    total_flow: f64,
    heap: BinaryHeap<std::cmp::Reverse<EvKey>>,
}

impl<'a> FlowEngine<'a> {
    fn new(inst: &'a Instance, inv_eps: u32) -> Self {
        let m = inst.machines;
        let q = inv_eps as f64;
        FlowEngine {
            inst,
            inv_eps,
            lambda_scale: 1.0 / (q + 1.0),
            beta_coef: q / ((q + 1.0) * (q + 1.0)),
            states: vec![MachineStateFlow::default(); m],
            u_count: vec![0; m],
            v_count: vec![0; m],
            beta: vec![vec![(0.0, 0.0)]; m],
            lambda: BTreeMap::new(),
            accrued: BTreeMap::new(),
            records: BTreeMap::new(),
            events: Vec::new(),
            rejected: BTreeSet::new(),
            definitive_finish: BTreeMap::new(),
            total_flow: 0.0,
            heap: BinaryHeap::new(),
        }
    }

    fn event(&mut self, time: f64, kind: EventKind, job: u64, machine: usize) {
        self.events.push(Event { time, kind, job, machine });
    }

    fn beta_mark(&mut self, i: usize, t: f64) {
        let val = self.beta_coef * (self.u_count[i] + self.v_count[i]) as f64;
        self.beta[i].push((t, val));
    }

    /// Moves a finished/rejected job into V_i and schedules its
    /// definitive-finish event (skipped when C̃ = C).
    fn enter_v(&mut self, i: usize, job: u64, c_j: f64, c_tilde: f64) {
        self.definitive_finish.insert(job, c_tilde);
        if c_tilde > c_j {
            self.v_count[i] += 1;
            self.heap.push(std::cmp::Reverse(EvKey {
                time: c_tilde,
                class: 1,
                machine: i,
                job,
            }));
        }
    }

    /// Starts the ⪯-minimal waiting job whenever the machine is idle.
    fn repair(&mut self, i: usize, t: f64) {
        if self.states[i].running.is_none() && !self.states[i].pending.is_empty() {
            let job = self.states[i].pending.remove(0);
            let p = self.inst.job(job).proc[i];
            self.states[i].running = Some(RunningFlow { job, start: t, v: 0 });
            self.event(t, EventKind::Start, job, i);
            self.heap.push(std::cmp::Reverse(EvKey {
                time: t + p,
                class: 0,
                machine: i,
                job,
            }));
        }
    }

    fn complete(&mut self, i: usize, job: u64, t: f64) {
        // Stale completion events (job was rejected mid-run) are filtered
        // by the caller; here the running job always matches.
        let run = self.states[i].running.take().expect("machine busy at completion");
        debug_assert_eq!(run.job, job);
        let r = self.inst.job(job).release;
        self.records.insert(
            job,
            ExecutionRecord {
                job,
                machine: i,
                start: run.start,
                speed: 1.0,
                end: t,
                outcome: Outcome::Completed,
            },
        );
        self.total_flow += t - r;
        self.event(t, EventKind::Complete, job, i);
        self.u_count[i] -= 1;
        let c_tilde = t + self.accrued.get(&job).copied().unwrap_or(0.0);
        self.enter_v(i, job, t, c_tilde);
        self.beta_mark(i, t);
        self.repair(i, t);
    }

    fn definitive_finish_event(&mut self, i: usize, job: u64, t: f64) {
        self.v_count[i] -= 1;
        self.event(t, EventKind::DefinitiveFinish, job, i);
        self.beta_mark(i, t);
    }

    fn arrival(&mut self, j: &Job) {
        let t = j.release;
        // (1) Dispatch to the argmin-price machine; freeze λ_j with the
        // exact rational scale ε/(1+ε) = 1/(q+1). The frozen price drops
        // the job's own p_ij term (see `dispatch_flow`); dispatch compares
        // the full λ_ij.
        let eps = 1.0 / self.inv_eps as f64;
        let mut i = 0usize;
        let mut best = f64::INFINITY;
        let mut price = f64::INFINITY;
        for (cand, state) in self.states.iter().enumerate() {
            let v = lambda_i(self.inst, j, cand, state, eps);
            if v < best {
                best = v;
                i = cand;
            }
            price = price.min(v - j.proc[cand]);
        }
        self.lambda.insert(j.id, self.lambda_scale * price);
        self.event(t, EventKind::Dispatch, j.id, i);
        let pos = self.states[i]
            .pending
            .binary_search_by(|&other| cmp_on_machine(self.inst, i, other, j.id))
            .unwrap_err();
        self.states[i].pending.insert(pos, j.id);
        self.u_count[i] += 1;
        self.beta_mark(i, t);

        // (2) Rule 1: bump the running job's counter; reject at 1/ε.
        if let Some(run) = &mut self.states[i].running {
            run.v += 1;
            if run.v == self.inv_eps {
                let run = self.states[i].running.take().expect("running");
                let k = run.job;
                let p_k = self.inst.job(k).proc[i];
                let q_rej = p_k - (t - run.start);
                let r_k = self.inst.job(k).release;
                self.records.insert(
                    k,
                    ExecutionRecord {
                        job: k,
                        machine: i,
                        start: run.start,
                        speed: 1.0,
                        end: t,
                        outcome: Outcome::RejectedRule1,
                    },
                );
                self.total_flow += t - r_k;
                self.rejected.insert(k);
                self.event(t, EventKind::Reject, k, i);
                // Every job pending on i and released strictly before now
                // inherits the leftover volume as a definitive-finish
                // delay; the trigger (released exactly now) does not.
                for &x in &self.states[i].pending {
                    if self.inst.job(x).release < t {
                        *self.accrued.entry(x).or_insert(0.0) += q_rej;
                    }
                }
                let c_tilde = t + self.accrued.get(&k).copied().unwrap_or(0.0) + q_rej;
                self.u_count[i] -= 1;
                self.enter_v(i, k, t, c_tilde);
                self.beta_mark(i, t);
            }
        }

        // (3) Eager start: an idle machine immediately runs its ⪯-minimal
        // waiting job (possibly j itself).
        self.repair(i, t);

        // (4) Rule 2: machine dispatch counter.
        self.states[i].c += 1;
        if self.states[i].c == self.inv_eps + 1 {
            self.states[i].c = 0;
            if !self.states[i].pending.is_empty() {
                let victim = *self.states[i].pending.last().expect("non-empty");
                self.states[i].pending.pop();
                let r_v = self.inst.job(victim).release;
                let p_v = self.inst.job(victim).proc[i];
                self.records.insert(
                    victim,
                    ExecutionRecord {
                        job: victim,
                        machine: i,
                        start: t,
                        speed: 1.0,
                        end: t,
                        outcome: Outcome::RejectedRule2,
                    },
                );
                self.total_flow += t - r_v;
                self.rejected.insert(victim);
                self.event(t, EventKind::Reject, victim, i);
                // Definitive-finish estimate fixed at rejection time: the
                // running job's leftover plus all waiting volumes except
                // the trigger's, plus the victim's own volume.
                let mut extra = p_v;
                if let Some(run) = &self.states[i].running {
                    extra += self.inst.job(run.job).proc[i] - (t - run.start);
                }
                for &x in &self.states[i].pending {
                    if x != j.id {
                        extra += self.inst.job(x).proc[i];
                    }
                }
                let c_tilde = t + self.accrued.get(&victim).copied().unwrap_or(0.0) + extra;
                self.u_count[i] -= 1;
                self.enter_v(i, victim, t, c_tilde);
                self.beta_mark(i, t);
            }
        }

        // (5) Start again in case the machine is somehow idle.
        self.repair(i, t);
    }

    fn run(mut self) -> FlowResult {
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
        let n = self.inst.n_jobs();
        let rejected_fraction = if n == 0 {
            0.0
        } else {
            self.rejected.len() as f64 / n as f64
        };
        let objective = self.total_flow;
        FlowResult {
            instance: self.inst.clone(),
            epsilon: 1.0 / self.inv_eps as f64,
            trace: ScheduleTrace {
                records: self.records,
                events: self.events,
                objective,
                rejected_ids: self.rejected,
                definitive_finish: self.definitive_finish,
            },
            lambda: self.lambda,
            beta: self.beta,
            total_flow: self.total_flow,
            rejected_fraction,
        }
    }
}

/// Validates that ε is the reciprocal of a positive integer and returns
/// that integer `q = 1/ε`.
pub fn eps_inverse(epsilon: f64) -> Result<u32, FlowError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(FlowError::BadEpsilon(epsilon));
    }
    let inv = 1.0 / epsilon;
    let q = inv.round();
    if (inv - q).abs() > 1e-9 * inv.max(1.0) || q < 1.0 || q > u32::MAX as f64 {
        return Err(FlowError::BadEpsilon(epsilon));
    }
    Ok(q as u32)
}

/// Runs the full online simulation on a Flow-model instance.
pub fn simulate_flow(inst: &Instance, epsilon: f64) -> Result<FlowResult, FlowError> {
    if inst.model != Model::Flow {
        return Err(FlowError::ModelMismatch { want: Model::Flow, got: inst.model });
    }
    let inv = eps_inverse(epsilon)?;
    Ok(FlowEngine::new(inst, inv).run())
}

// === Partition witness ===================================================

/// Failure modes of the partition construction/checks.
#[derive(Debug, Error)]
pub enum WitnessError {
    #[error("machine {machine} at t={time}: {msg}")]
    Construction { machine: usize, time: f64, msg: String },
    #[error("machine {machine} at t={time}: bucket {bucket} has {size} jobs, bound {bound}")]
    SizeBound { machine: usize, time: f64, bucket: usize, size: usize, bound: usize },
    #[error(
        "machine {machine} at t={time}: job {job} estimated completion {est} exceeds \
         bucket key definitive finish {bound}"
    )]
    EstimateBound { machine: usize, time: f64, job: u64, est: f64, bound: f64 },
}

/// The partition of `U_i(t)`: one bucket per not-yet-definitively-finished
/// Rule-2 rejection (in definitive-finish order, each of size ≤ 1/ε) plus
/// the counter bucket, returned last.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingWitness {
    /// Keyed buckets as `(rejected job id, members)`.
    pub keyed: Vec<(u64, Vec<u64>)>,
    /// The counter bucket (size tracked by `c_i`).
    pub counter_bucket: Vec<u64>,
}

struct WitnessReplay<'a> {
    res: &'a FlowResult,
    i: usize,
    inv_eps: u32,
    keyed: Vec<(u64, f64, Vec<u64>)>, // (key, key C̃, members) sorted by C̃
    cbucket: Vec<u64>,
    c: u32,
    straggler: Option<u64>,
    fire_pending: bool,
    /// Job currently executing, tracked through Start/Complete/Reject.
    running: Option<u64>,
}

impl<'a> WitnessReplay<'a> {
    fn inst(&self) -> &Instance {
        &self.res.instance
    }

    fn remove_everywhere(&mut self, job: u64) -> bool {
        if let Some(pos) = self.cbucket.iter().position(|&x| x == job) {
            self.cbucket.remove(pos);
            return true;
        }
        for (_, _, members) in &mut self.keyed {
            if let Some(pos) = members.iter().position(|&x| x == job) {
                members.remove(pos);
                return true;
            }
        }
        false
    }

    /// Resolves a Rule-2 firing that rejected nothing: the counter
    /// resets; a sole surviving counter-bucket member (necessarily the
    /// freshly started job) is tolerated as a straggler.
    fn resolve_empty_fire(&mut self, t: f64) -> Result<(), WitnessError> {
        self.c = 0;
        self.fire_pending = false;
        match self.cbucket.len() {
            0 => self.straggler = None,
            1 => self.straggler = Some(self.cbucket[0]),
            n => {
                return Err(WitnessError::Construction {
                    machine: self.i,
                    time: t,
                    msg: format!("counter fired on an empty waiting set but {n} jobs remain"),
                })
            }
        }
        Ok(())
    }

    /// Cascade insertion of a newly dispatched job: every keyed bucket
    /// whose largest waiting member succeeds the new job takes part, in
    /// ascending order of those maxima — the new job enters the first,
    /// each displaced maximum shifts to the next, and the overall largest
    /// lands in the counter bucket. Each participating bucket trades a
    /// member for a ⪯-smaller one, so its completion-estimate bound is
    /// preserved; buckets whose waiting members all precede the new job
    /// are unaffected by its arrival and stay untouched. The running job
    /// is never displaced (its estimate is its fixed remainder, which a
    /// replacement would not inherit).
    fn insert(&mut self, job: u64) {
        let inst = &self.res.instance;
        let i = self.i;
        let running = self.running;
        let mut chain: Vec<(usize, u64)> = Vec::new(); // (bucket, waiting max)
        for (idx, (_, _, members)) in self.keyed.iter().enumerate() {
            let wmax = members
                .iter()
                .copied()
                .filter(|&x| Some(x) != running)
                .max_by(|&a, &b| cmp_on_machine(inst, i, a, b));
            if let Some(wm) = wmax {
                if cmp_on_machine(inst, i, job, wm) == Ordering::Less {
                    chain.push((idx, wm));
                }
            }
        }
        if chain.is_empty() {
            self.cbucket.push(job);
            return;
        }
        chain.sort_by(|a, b| cmp_on_machine(inst, i, a.1, b.1));
        let mut incoming = job;
        for &(idx, wm) in &chain {
            let members = &mut self.keyed[idx].2;
            members.push(incoming);
            let pos = members.iter().position(|&x| x == wm).expect("max present");
            members.remove(pos);
            incoming = wm;
        }
        self.cbucket.push(incoming);
    }

    fn step(&mut self, ev: &Event) -> Result<(), WitnessError> {
        let t = ev.time;
        match ev.kind {
            EventKind::Dispatch => {
                if self.fire_pending {
                    self.resolve_empty_fire(t)?;
                }
                self.insert(ev.job);
                self.c += 1;
                if self.c == self.inv_eps + 1 {
                    // Whether this firing rejects a job is decided by the
                    // Reject event that follows at this timestamp (if any).
                    self.fire_pending = true;
                }
            }
            EventKind::Start => self.running = Some(ev.job),
            EventKind::Complete => {
                if !self.remove_everywhere(ev.job) {
                    return Err(WitnessError::Construction {
                        machine: self.i,
                        time: t,
                        msg: format!("completed job {} missing from partition", ev.job),
                    });
                }
                if self.straggler == Some(ev.job) {
                    self.straggler = None;
                }
                if self.running == Some(ev.job) {
                    self.running = None;
                }
            }
            EventKind::Reject => {
                let outcome = self.res.trace.records[&ev.job].outcome;
                if outcome == Outcome::RejectedRule2 {
                    if !self.fire_pending {
                        return Err(WitnessError::Construction {
                            machine: self.i,
                            time: t,
                            msg: format!("rejection of {} without a counter firing", ev.job),
                        });
                    }
                    self.fire_pending = false;
                    self.c = 0;
                    // The victim is the largest *waiting* job anywhere in
                    // the partition (the running job, possibly larger, is
                    // exempt from rejection).
                    let waiting_max = self
                        .keyed
                        .iter()
                        .flat_map(|(_, _, m)| m.iter())
                        .chain(self.cbucket.iter())
                        .copied()
                        .filter(|&x| Some(x) != self.running)
                        .max_by(|&a, &b| cmp_on_machine(self.inst(), self.i, a, b));
                    if waiting_max != Some(ev.job) {
                        return Err(WitnessError::Construction {
                            machine: self.i,
                            time: t,
                            msg: format!(
                                "rejected job {} is not the largest waiting job",
                                ev.job
                            ),
                        });
                    }
                    // New keyed bucket = counter bucket minus one job: the
                    // victim itself when it is here, otherwise the counter
                    // bucket's largest waiting member is swapped into the
                    // keyed bucket the victim vacates (it is ⪯ victim, so
                    // the vacated bucket's estimate bound stays covered).
                    let mut members = std::mem::take(&mut self.cbucket);
                    if let Some(pos) = members.iter().position(|&x| x == ev.job) {
                        members.remove(pos);
                    } else {
                        let z = self
                            .keyed
                            .iter()
                            .position(|(_, _, m)| m.contains(&ev.job))
                            .ok_or_else(|| WitnessError::Construction {
                                machine: self.i,
                                time: t,
                                msg: format!("rejected job {} missing from partition", ev.job),
                            })?;
                        self.keyed[z].2.retain(|&x| x != ev.job);
                        if let Some(mx) = members
                            .iter()
                            .copied()
                            .filter(|&x| Some(x) != self.running)
                            .max_by(|&a, &b| cmp_on_machine(&self.res.instance, self.i, a, b))
                        {
                            self.keyed[z].2.push(mx);
                            members.retain(|&x| x != mx);
                        }
                    }
                    let key_ct = self.res.trace.definitive_finish[&ev.job];
                    self.keyed.push((ev.job, key_ct, members));
                    // Keep keyed buckets sorted by definitive finish time;
                    // stable sort preserves rejection order on ties.
                    self.keyed.sort_by(|a, b| a.1.total_cmp(&b.1));
                    self.straggler = None;
                } else {
                    if !self.remove_everywhere(ev.job) {
                        return Err(WitnessError::Construction {
                            machine: self.i,
                            time: t,
                            msg: format!("rejected job {} missing from partition", ev.job),
                        });
                    }
                    if self.straggler == Some(ev.job) {
                        self.straggler = None;
                    }
                    if self.running == Some(ev.job) {
                        self.running = None;
                    }
                }
            }
            EventKind::DefinitiveFinish => {
                if let Some(pos) = self.keyed.iter().position(|&(k, _, _)| k == ev.job) {
                    // Definitive finishes arrive in C̃ order, so only a
                    // front-running bucket (possibly tied) may expire.
                    let front_ct = self.keyed[0].1;
                    if self.keyed[pos].1 > front_ct {
                        return Err(WitnessError::Construction {
                            machine: self.i,
                            time: t,
                            msg: format!("bucket key {} expired out of order", ev.job),
                        });
                    }
                    if !self.keyed[pos].2.is_empty() {
                        return Err(WitnessError::Construction {
                            machine: self.i,
                            time: t,
                            msg: format!(
                                "bucket of {} still holds {:?} at its definitive finish",
                                ev.job, self.keyed[pos].2
                            ),
                        });
                    }
                    self.keyed.remove(pos);
                }
            }
        }
        Ok(())
    }
}

/// Replays the run on machine `i` up to and including event time `t` and
/// returns the partition of `U_i(t)`, checking the three structural
/// bounds: keyed buckets hold ≤ 1/ε jobs, the counter bucket holds ≤ c_i
/// jobs (one freshly started straggler tolerated after a rejection-less
/// counter firing), and every member of a keyed bucket would complete by
/// its key's definitive finish time if no further job arrived.
pub fn mapping_witness(res: &FlowResult, i: usize, t: f64) -> Result<MappingWitness, WitnessError> {
    let inv_eps = eps_inverse(res.epsilon).expect("result carries normalized epsilon");
    let mut replay = WitnessReplay {
        res,
        i,
        inv_eps,
        keyed: Vec::new(),
        cbucket: Vec::new(),
        c: 0,
        straggler: None,
        fire_pending: false,
        running: None,
    };
    for ev in &res.trace.events {
        if ev.time > t {
            break;
        }
        if ev.machine != i {
            continue;
        }
        replay.step(ev)?;
    }
    if replay.fire_pending {
        replay.resolve_empty_fire(t)?;
    }

    // (i) keyed bucket sizes.
    for (idx, (_, _, members)) in replay.keyed.iter().enumerate() {
        if members.len() > inv_eps as usize {
            return Err(WitnessError::SizeBound {
                machine: i,
                time: t,
                bucket: idx,
                size: members.len(),
                bound: inv_eps as usize,
            });
        }
    }
    // (ii) counter bucket size.
    let allowance = replay.c as usize + usize::from(replay.straggler.is_some());
    if replay.cbucket.len() > allowance {
        return Err(WitnessError::SizeBound {
            machine: i,
            time: t,
            bucket: replay.keyed.len(),
            size: replay.cbucket.len(),
            bound: allowance,
        });
    }
    // (iii) completion estimates against bucket keys, using the runner
    // tracked by the replay (its remaining volume comes from the record).
    let running: Option<(u64, f64)> = replay.running.map(|job| {
        let rec = &res.trace.records[&job];
        let p = res.instance.job(job).proc[i];
        (job, p - (t - rec.start))
    });
    let q_run = running.map(|(_, q)| q).unwrap_or(0.0);
    let members_of = |w: &WitnessReplay| -> Vec<u64> {
        w.keyed
            .iter()
            .flat_map(|(_, _, m)| m.iter().copied())
            .chain(w.cbucket.iter().copied())
            .collect()
    };
    let all_members = members_of(&replay);
    for (_, key_ct, members) in &replay.keyed {
        for &x in members {
            let est = if running.map(|(k, _)| k) == Some(x) {
                t + q_run
            } else {
                let mut wait = 0.0;
                for &l in &all_members {
                    if running.map(|(k, _)| k) == Some(l) {
                        continue;
                    }
                    if cmp_on_machine(&res.instance, i, l, x) != Ordering::Greater {
                        wait += res.instance.job(l).proc[i];
                    }
                }
                t + q_run + wait
            };
            if est > key_ct + 1e-9 * key_ct.abs().max(1.0) {
                return Err(WitnessError::EstimateBound {
                    machine: i,
                    time: t,
                    job: x,
                    est,
                    bound: *key_ct,
                });
            }
        }
    }

    Ok(MappingWitness {
        keyed: replay.keyed.iter().map(|(k, _, m)| (*k, m.clone())).collect(),
        counter_bucket: replay.cbucket,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_random;

    fn job(id: u64, release: f64, proc: Vec<f64>) -> Job {
        Job { id, release, weight: 1.0, proc, deadline: None }
    }

    fn flow_instance(m: usize, jobs: Vec<Job>) -> Instance {
        let mut inst = Instance { model: Model::Flow, machines: m, alpha: None, jobs };
        inst.validate().unwrap();
        inst
    }

    #[test]
    fn order_precedes_examples() {
        let a = job(0, 0.0, vec![1.0]);
        let b = job(1, 0.0, vec![2.0]);
        assert!(order_precedes(&a, &b, 0), "shorter job precedes");
        let a = job(0, 0.0, vec![2.0]);
        let b = job(1, 1.0, vec![2.0]);
        assert!(order_precedes(&a, &b, 0), "tie broken by earlier release");
        let a = job(3, 0.0, vec![2.0]);
        let b = job(7, 0.0, vec![2.0]);
        assert!(order_precedes(&a, &b, 0), "final tie broken by id");
        assert!(!order_precedes(&b, &a, 0), "antisymmetric");
    }

    #[test]
    fn lambda_i_empty_pending() {
        let inst = flow_instance(1, vec![job(0, 0.0, vec![5.0])]);
        let state = MachineStateFlow::default();
        let v = lambda_i(&inst, &inst.jobs[0], 0, &state, 1.0);
        assert_eq!(v, 10.0, "(1/1)*5 + 5");
    }

    #[test]
    fn lambda_i_mixed_pending() {
        // Waiting {p=1, p=3}, new job p=2, eps=1/2:
        // 2*2 + (1 + 2) + 1*2 = 9.
        let inst = flow_instance(
            1,
            vec![job(0, 0.0, vec![1.0]), job(1, 0.0, vec![3.0]), job(2, 0.0, vec![2.0])],
        );
        let state = MachineStateFlow { pending: vec![0, 1], running: None, c: 0 };
        let v = lambda_i(&inst, inst.job(2), 0, &state, 0.5);
        assert_eq!(v, 9.0);
    }

    #[test]
    fn lambda_i_tie_by_release() {
        // Waiting {p=1 released later}; new job p=1 released earlier, so
        // the waiting job strictly succeeds it: 1*1 + 1 + 1*1 = 3.
        let inst = flow_instance(1, vec![job(0, 0.0, vec![1.0]), job(1, 1.0, vec![1.0])]);
        let state = MachineStateFlow { pending: vec![1], running: None, c: 0 };
        let v = lambda_i(&inst, inst.job(0), 0, &state, 1.0);
        assert_eq!(v, 3.0);
    }

    #[test]
    fn dispatch_prefers_cheaper_machine_and_low_index_ties() {
        // Machine 0 has a waiting p=2 job; machine 1 is empty. New job
        // has p=2 on both: λ_0 = 2+ (2+2) = wait, eps=1: 2 + 4 = ...
        let inst = flow_instance(
            2,
            vec![job(0, 0.0, vec![2.0, 9.0]), job(1, 0.0, vec![2.0, 2.0])],
        );
        let mut states = vec![MachineStateFlow::default(), MachineStateFlow::default()];
        states[0].pending.push(0);
        let (i, lam) = dispatch_flow(&inst, inst.job(1), &states, 1.0);
        // λ_0j = 1*2 + (2+2) + 0 = 6 (job 0 ⪯ j by id), λ_1j = 1*2 + 2 = 4.
        // Price drops p_ij per machine: min(6−2, 4−2) = 2.
        assert_eq!(i, 1);
        assert_eq!(lam, 0.5 * 2.0);

        let states = vec![MachineStateFlow::default(), MachineStateFlow::default()];
        let inst2 = flow_instance(2, vec![job(0, 0.0, vec![3.0, 3.0])]);
        let (i, _) = dispatch_flow(&inst2, inst2.job(0), &states, 1.0);
        assert_eq!(i, 0, "identical machines tie to the lowest index");
    }

    #[test]
    fn simulate_two_jobs_spt_order() {
        let inst = flow_instance(1, vec![job(0, 0.0, vec![1.0]), job(1, 0.0, vec![2.0])]);
        let res = simulate_flow(&inst, 0.5).unwrap();
        assert_eq!(res.total_flow, 4.0);
        assert!(res.trace.rejected_ids.is_empty());
        let a = &res.trace.records[&0];
        let b = &res.trace.records[&1];
        assert_eq!((a.start, a.end), (0.0, 1.0));
        assert_eq!((b.start, b.end), (1.0, 3.0));
    }

    #[test]
    fn simulate_rule1_rejection_walk() {
        // A(r=0, p=10) is running; B(r=1, p=1) arrives and pushes v_A to
        // 1 = 1/ε. A is rejected at t=1 with flow 1; B runs [1,2].
        let inst = flow_instance(1, vec![job(0, 0.0, vec![10.0]), job(1, 1.0, vec![1.0])]);
        let res = simulate_flow(&inst, 1.0).unwrap();
        let a = &res.trace.records[&0];
        assert_eq!(a.outcome, Outcome::RejectedRule1);
        assert_eq!((a.start, a.end), (0.0, 1.0));
        let b = &res.trace.records[&1];
        assert_eq!(b.outcome, Outcome::Completed);
        assert_eq!((b.start, b.end), (1.0, 2.0));
        assert_eq!(res.total_flow, 2.0, "F_A = 1 plus F_B = 1");
        // Definitive finishes: A keeps its leftover 9 ⇒ C̃_A = 10; B has
        // no delay terms (the rejection happened at B's own release).
        assert_eq!(res.trace.definitive_finish[&0], 10.0);
        assert_eq!(res.trace.definitive_finish[&1], 2.0);
    }

    #[test]
    fn simulate_two_equal_length_jobs_no_rejection() {
        // Two jobs of length L=4 at t=0 with ε=1/2: the machine counter
        // reaches 2 < 3, so nothing is rejected; flow = 4 + 8 = 12.
        let inst = flow_instance(1, vec![job(0, 0.0, vec![4.0]), job(1, 0.0, vec![4.0])]);
        let res = simulate_flow(&inst, 0.5).unwrap();
        assert!(res.trace.rejected_ids.is_empty());
        assert_eq!(res.total_flow, 12.0);
    }

    #[test]
    fn epsilon_must_be_unit_fraction() {
        let inst = flow_instance(1, vec![job(0, 0.0, vec![1.0])]);
        assert!(matches!(simulate_flow(&inst, 0.4), Err(FlowError::BadEpsilon(_))));
        assert!(simulate_flow(&inst, 1.0 / 3.0).is_ok());
    }

    /// Replays the event log to recover |U|+|V| counts and checks the β
    /// step function matches, including the transfer at rejections.
    fn check_beta_against_replay(res: &FlowResult) {
        let m = res.instance.machines;
        let coef = {
            let q = (1.0 / res.epsilon).round();
            q / ((q + 1.0) * (q + 1.0))
        };
        let mut u = vec![0i64; m];
        let mut v = vec![0i64; m];
        let mut idx = vec![1usize; m]; // skip the (0,0) sentinel
        for ev in &res.trace.events {
            let i = ev.machine;
            match ev.kind {
                EventKind::Dispatch => u[i] += 1,
                EventKind::Start => continue,
                EventKind::Complete | EventKind::Reject => {
                    u[i] -= 1;
                    let c = ev.time;
                    if res.trace.definitive_finish[&ev.job] > c {
                        v[i] += 1;
                    }
                }
                EventKind::DefinitiveFinish => v[i] -= 1,
            }
            let expect = coef * (u[i] + v[i]) as f64;
            let (bt, bv) = res.beta[i][idx[i]];
            assert_eq!(bt, ev.time, "β mark aligned with event");
            assert_eq!(bv, expect, "β value = coef·(|U|+|V|)");
            if ev.kind == EventKind::Reject {
                let before = res.beta[i][idx[i] - 1].1;
                assert_eq!(bv, before, "rejection moves a job U→V, β unchanged");
            }
            idx[i] += 1;
        }
        for i in 0..m {
            assert_eq!(idx[i], res.beta[i].len(), "every β mark consumed");
            assert_eq!(res.beta[i].last().unwrap().1, 0.0, "system empties");
        }
    }

    fn check_non_overlap(res: &FlowResult) {
        for i in 0..res.instance.machines {
            let mut execs: Vec<(f64, f64)> = res
                .trace
                .records
                .values()
                .filter(|r| r.machine == i && r.end > r.start)
                .map(|r| (r.start, r.end))
                .collect();
            execs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in execs.windows(2) {
                assert!(w[0].1 <= w[1].0 + 1e-12, "executions overlap: {w:?}");
            }
        }
        for rec in res.trace.records.values() {
            if rec.outcome == Outcome::Completed {
                let p = res.instance.job(rec.job).proc[rec.machine];
                assert!((rec.end - rec.start - p).abs() < 1e-9, "completed run lasts p_ij");
            }
        }
    }

    /// Load-vs-rejections bound |U_i(t)| ≤ (1/ε)(|R_i(t)|+1), checked by
    /// replay at the end of every event group (mid-arrival the dispatch has
    /// landed but the compensating rejection may not have fired yet).
    fn check_load_bound(res: &FlowResult) {
        let inv = (1.0 / res.epsilon).round() as usize;
        let m = res.instance.machines;
        let mut u: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); m];
        let mut r: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); m];
        let events = &res.trace.events;
        for (k, ev) in events.iter().enumerate() {
            let i = ev.machine;
            match ev.kind {
                EventKind::Dispatch => {
                    u[i].insert(ev.job);
                }
                EventKind::Start => {}
                EventKind::Complete => {
                    u[i].remove(&ev.job);
                }
                EventKind::Reject => {
                    u[i].remove(&ev.job);
                    if res.trace.records[&ev.job].outcome == Outcome::RejectedRule2
                        && res.trace.definitive_finish[&ev.job] > ev.time
                    {
                        r[i].insert(ev.job);
                    }
                }
                EventKind::DefinitiveFinish => {
                    r[i].remove(&ev.job);
                }
            }
            let boundary = match events.get(k + 1) {
                None => true,
                Some(next) => next.time > ev.time || next.kind == EventKind::Dispatch,
            };
            if boundary {
                assert!(
                    u[i].len() <= inv * (r[i].len() + 1),
                    "|U|={} exceeds (1/ε)(|R|+1)={} on machine {} at t={}",
                    u[i].len(),
                    inv * (r[i].len() + 1),
                    i,
                    ev.time
                );
            }
        }
    }

    fn check_dual_accounting(res: &FlowResult) {
        let q = (1.0 / res.epsilon).round();
        let scale = 1.0 / (q + 1.0); // ε/(1+ε)
        let coef = q / ((q + 1.0) * (q + 1.0)); // ε/(1+ε)²
        let ctilde_flow = res.definitive_flow();
        let beta_sum = res.beta_integral_sum();
        let expect = coef * ctilde_flow;
        assert!(
            (beta_sum - expect).abs() <= 1e-9 * expect.abs().max(1e-12),
            "Σ∫β = {beta_sum} vs coef·Σ(C̃−r) = {expect}"
        );
        let lam_sum = res.lambda_sum();
        assert!(
            lam_sum >= scale * ctilde_flow - 1e-9 * (scale * ctilde_flow).max(1.0),
            "Σλ = {lam_sum} < (ε/(1+ε))·Σ(C̃−r) = {}",
            scale * ctilde_flow
        );
        let dual = res.dual_objective();
        let bound = scale * scale * ctilde_flow;
        assert!(
            dual >= bound - 1e-9 * bound.abs().max(1.0),
            "dual objective {dual} < (ε/(1+ε))²·Σ(C̃−r) = {bound}"
        );
        assert!(ctilde_flow >= res.total_flow - 1e-9 * res.total_flow.max(1.0));
    }

    #[test]
    fn randomized_runs_satisfy_structural_invariants() {
        for seed in 0..60 {
            let n = 2 + (seed as usize * 7) % 24;
            let m = 1 + (seed as usize) % 3;
            let inst =
                gen_random(seed, n, m, (0.5, 6.0), (1.0, 1.0), 10.0, Model::Flow).unwrap();
            for eps in [1.0, 0.5, 0.25] {
                let res = simulate_flow(&inst, eps).unwrap();
                let budget = (2.0 * eps * n as f64).floor() as usize;
                assert!(
                    res.trace.rejected_ids.len() as f64 <= 2.0 * eps * n as f64,
                    "rejections {} exceed 2εn = {budget}",
                    res.trace.rejected_ids.len()
                );
                check_non_overlap(&res);
                check_beta_against_replay(&res);
                check_load_bound(&res);
                check_dual_accounting(&res);
                assert_eq!(res.trace.records.len(), n, "every job gets a record");
            }
        }
    }

    #[test]
    fn witness_partition_holds_on_random_traces() {
        for seed in 100..140 {
            let n = 3 + (seed as usize) % 20;
            let m = 1 + (seed as usize) % 2;
            let inst =
                gen_random(seed, n, m, (0.5, 6.0), (1.0, 1.0), 6.0, Model::Flow).unwrap();
            for eps in [1.0, 0.5, 0.25] {
                let res = simulate_flow(&inst, eps).unwrap();
                for ev in &res.trace.events {
                    let w = mapping_witness(&res, ev.machine, ev.time)
                        .unwrap_or_else(|e| panic!("witness failed (seed {seed}, ε={eps}): {e}"));
                    let inv = (1.0 / eps).round() as usize;
                    for (_, members) in &w.keyed {
                        assert!(members.len() <= inv);
                    }
                }
            }
        }
    }

    #[test]
    fn witness_simple_cases() {
        // No Rule-2 rejection ever fires: the partition is a single
        // counter bucket of size ≤ c_i.
        let inst = flow_instance(1, vec![job(0, 0.0, vec![1.0]), job(1, 0.0, vec![2.0])]);
        let res = simulate_flow(&inst, 0.5).unwrap();
        let w = mapping_witness(&res, 0, 0.0).unwrap();
        assert!(w.keyed.is_empty());
        assert_eq!(w.counter_bucket.len(), 2, "both jobs waiting at t=0");

        // Empty U_i(t): after everything definitively finishes.
        let w = mapping_witness(&res, 0, 100.0).unwrap();
        assert!(w.keyed.is_empty());
        assert!(w.counter_bucket.is_empty());
    }
}
