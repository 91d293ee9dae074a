//! Jobs, instances, execution traces, and the canonical serialization.
//!
//! An [`Instance`] is a set of [`Job`]s over `m` unrelated machines: each
//! job carries one processing volume per machine. Three scheduling models
//! share the format, selected by [`Model`]. Times and volumes are 64-bit
//! floats; engines compute each completion time once, store it, and reuse
//! it, so event ordering never depends on tolerances.
//!
//! Simultaneous releases are processed one at a time in ascending id
//! order, each arrival fully updating engine state before the next. The
//! job list is kept sorted by `(release, id)` — the canonical arrival
//! order — and generators are pure functions of their seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scheduling model an instance is meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Unweighted total flow time, unit speeds.
    Flow,
    /// Weighted flow time plus energy under speed scaling.
    FlowEnergy,
    /// Deadline-constrained energy minimization on speed/time grids.
    EnergyDeadline,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Model::Flow => "flow",
            Model::FlowEnergy => "flow_energy",
            Model::EnergyDeadline => "energy_deadline",
        };
        f.write_str(s)
    }
}

fn default_weight() -> f64 {
    1.0
}

/// One job: release time, weight, per-machine processing volumes, and an
/// optional deadline (deadline model only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub release: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
    pub proc: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<f64>,
}

/// A scheduling instance: machine count, model tag, optional speed-scaling
/// exponent, and jobs sorted by `(release, id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub model: Model,
    pub machines: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub jobs: Vec<Job>,
}

/// Validation and parsing failures for instances.
#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("instance has zero machines")]
    NoMachines,
    #[error("duplicate job id {0}")]
    DuplicateId(u64),
    #[error("job {job}: proc has {got} entries, instance has {want} machines")]
    ProcLengthMismatch { job: u64, got: usize, want: usize },
    #[error("job {job}: non-positive or non-finite processing volume on machine {machine}")]
    BadProc { job: u64, machine: usize },
    #[error("job {job}: non-positive or non-finite weight")]
    BadWeight { job: u64 },
    #[error("job {job}: negative or non-finite release time")]
    BadRelease { job: u64 },
    #[error("job {job}: deadline before release")]
    DeadlineBeforeRelease { job: u64 },
    #[error("job {job}: model requires a deadline")]
    MissingDeadline { job: u64 },
    #[error("model requires alpha > 1, got {got:?}")]
    BadAlpha { got: Option<f64> },
    #[error("invalid generator range: {0}")]
    BadRange(String),
}

impl Instance {
    /// Checks every structural invariant and sorts jobs into canonical
    /// `(release, id)` order. The Flow model forces all weights to 1.
    pub fn validate(&mut self) -> Result<(), InstanceError> {
        if self.machines == 0 {
            return Err(InstanceError::NoMachines);
        }
        let mut seen = BTreeSet::new();
        for job in &mut self.jobs {
            if !seen.insert(job.id) {
                return Err(InstanceError::DuplicateId(job.id));
            }
            if job.proc.len() != self.machines {
                return Err(InstanceError::ProcLengthMismatch {
                    job: job.id,
                    got: job.proc.len(),
                    want: self.machines,
                });
            }
            for (i, &p) in job.proc.iter().enumerate() {
                if !(p.is_finite() && p > 0.0) {
                    return Err(InstanceError::BadProc { job: job.id, machine: i });
                }
            }
            if self.model == Model::Flow {
                job.weight = 1.0;
            }
            if !(job.weight.is_finite() && job.weight > 0.0) {
                return Err(InstanceError::BadWeight { job: job.id });
            }
            if !(job.release.is_finite() && job.release >= 0.0) {
                return Err(InstanceError::BadRelease { job: job.id });
            }
            match job.deadline {
                Some(d) if !(d.is_finite() && d > job.release) => {
                    return Err(InstanceError::DeadlineBeforeRelease { job: job.id });
                }
                None if self.model == Model::EnergyDeadline => {
                    return Err(InstanceError::MissingDeadline { job: job.id });
                }
                _ => {}
            }
        }
        if self.model == Model::FlowEnergy {
            match self.alpha {
                Some(a) if a.is_finite() && a > 1.0 => {}
                got => return Err(InstanceError::BadAlpha { got }),
            }
        }
        self.jobs.sort_by(|a, b| {
            a.release
                .partial_cmp(&b.release)
                .expect("finite release")
                .then(a.id.cmp(&b.id))
        });
        Ok(())
    }

    pub fn n_jobs(&self) -> usize {
        self.jobs.len()
    }

    /// Looks up a job by id. Engines call this on ids taken from the
    /// instance itself, so a miss is a programming error.
    pub fn job(&self, id: u64) -> &Job {
        self.jobs
            .iter()
            .find(|j| j.id == id)
            .expect("job id present in instance")
    }
}

/// Parses the JSON instance format and validates/canonicalizes it.
///
/// Format: `{"model":"flow|flow_energy|energy_deadline","machines":m,
/// "alpha":a?,"jobs":[{"id":k,"release":r,"weight":w,"proc":[..],
/// "deadline":d?}]}`.
pub fn parse_instance(text: &str) -> Result<Instance, InstanceError> {
    let mut inst: Instance =
        serde_json::from_str(text).map_err(|e| InstanceError::MalformedJson(e.to_string()))?;
    inst.validate()?;
    Ok(inst)
}

/// Serializes an instance so that `parse_instance(serialize_instance(i))`
/// reproduces it bit-exactly (floats round-trip through shortest decimal).
pub fn serialize_instance(inst: &Instance) -> String {
    let mut s = serde_json::to_string_pretty(inst).expect("instance serializes");
    s.push('\n');
    s
}

/// How a job's stay in the system ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    RejectedRule1,
    RejectedRule2,
    RejectedWeightCounter,
    NeverStarted,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Outcome::Completed => "completed",
            Outcome::RejectedRule1 => "rejected_rule1",
            Outcome::RejectedRule2 => "rejected_rule2",
            Outcome::RejectedWeightCounter => "rejected_weight_counter",
            Outcome::NeverStarted => "never_started",
        };
        f.write_str(s)
    }
}

/// Where and how one job executed: machine, start, constant speed, end.
/// For a job rejected before it ever ran, `start == end` at the rejection
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub job: u64,
    pub machine: usize,
    pub start: f64,
    pub speed: f64,
    pub end: f64,
    pub outcome: Outcome,
}

/// Kinds of entries in the time-ordered event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Dispatch,
    Start,
    Complete,
    Reject,
    DefinitiveFinish,
}

/// One event-log entry. Entries at equal times appear in processing
/// order, which sub-event replays (witness construction) rely on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub job: u64,
    pub machine: usize,
}

/// Complete record of one engine run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScheduleTrace {
    /// Per-job execution record (every job appears exactly once).
    pub records: BTreeMap<u64, ExecutionRecord>,
    /// Time-ordered event log.
    pub events: Vec<Event>,
    /// Model-specific objective value (total flow, weighted flow +
    /// energy, or total energy).
    pub objective: f64,
    /// Ids of rejected jobs.
    pub rejected_ids: BTreeSet<u64>,
    /// Definitive-finish time per job: the completion/rejection time
    /// inflated by the delay terms used in the dual accounting.
    pub definitive_finish: BTreeMap<u64, f64>,
}

impl ScheduleTrace {
    /// CSV export with the fixed schema `job,machine,start,speed,end,outcome`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("job,machine,start,speed,end,outcome\n");
        for rec in self.records.values() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rec.job, rec.machine, rec.start, rec.speed, rec.end, rec.outcome
            ));
        }
        out
    }
}

/// Quantizes `x` to the nearest positive multiple of `step`.
fn quantize(x: f64, step: f64) -> f64 {
    (x / step).round().max(1.0) * step
}

/// Deterministically generates a random instance.
///
/// Releases are uniform on `[0, horizon]`, volumes uniform on `p_range`
/// per (job, machine), weights uniform on `w_range` (forced to 1 in the
/// Flow model). For the deadline model, releases snap to the 0.25 grid,
/// volumes to the 0.5 grid, and each deadline sits `1.5×..3×` the job's
/// largest volume past its release (0.25 grid), so the default speed/time
/// grids `{1,2}`/0.25 always admit a strategy.
pub fn gen_random(
    seed: u64,
    n: usize,
    m: usize,
    p_range: (f64, f64),
    w_range: (f64, f64),
    horizon: f64,
    model: Model,
) -> Result<Instance, InstanceError> {
    if n == 0 || m == 0 {
        return Err(InstanceError::BadRange("n and m must be positive".into()));
    }
    let check = |(lo, hi): (f64, f64), name: &str| {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            Err(InstanceError::BadRange(format!("{name} range ({lo}, {hi})")))
        } else {
            Ok(())
        }
    };
    check(p_range, "p")?;
    check(w_range, "w")?;
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(InstanceError::BadRange(format!("horizon {horizon}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let mut release = rng.gen_range(0.0..=horizon);
        let weight = if model == Model::Flow {
            1.0
        } else {
            rng.gen_range(w_range.0..=w_range.1)
        };
        let mut proc: Vec<f64> =
            (0..m).map(|_| rng.gen_range(p_range.0..=p_range.1)).collect();
        let mut deadline = None;
        if model == Model::EnergyDeadline {
            release = (release / 0.25).round() * 0.25;
            for p in &mut proc {
                *p = quantize(*p, 0.5);
            }
            let p_max = proc.iter().cloned().fold(f64::MIN, f64::max);
            let stretch = rng.gen_range(1.5..=3.0);
            let window = (stretch * p_max / 0.25).ceil() * 0.25;
            deadline = Some(release + window);
        }
        jobs.push(Job { id, release, weight, proc, deadline });
    }
    let mut inst = Instance {
        model,
        machines: m,
        alpha: match model {
            Model::Flow => None,
            Model::FlowEnergy | Model::EnergyDeadline => Some(2.0),
        },
        jobs,
    };
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_minimal_instance() {
        let inst = parse_instance(
            r#"{"model":"flow","machines":1,"jobs":[{"id":0,"release":0,"weight":1,"proc":[1]}]}"#,
        )
        .unwrap();
        assert_eq!(inst.machines, 1);
        assert_eq!(inst.n_jobs(), 1);
        assert_eq!(inst.jobs[0].proc, vec![1.0]);
    }

    #[test]
    fn parse_unrelated_volumes() {
        let inst = parse_instance(
            r#"{"model":"flow","machines":2,"jobs":[{"id":0,"release":0,"weight":1,"proc":[2,0.5]}]}"#,
        )
        .unwrap();
        assert_eq!(inst.jobs[0].proc, vec![2.0, 0.5]);
    }

    #[test]
    fn parse_rejects_deadline_before_release() {
        let err = parse_instance(
            r#"{"model":"energy_deadline","machines":1,
                "jobs":[{"id":0,"release":2,"weight":1,"proc":[1],"deadline":1}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, InstanceError::DeadlineBeforeRelease { job: 0 }));
    }

    #[test]
    fn parse_rejects_bad_proc_and_length() {
        let err = parse_instance(
            r#"{"model":"flow","machines":2,"jobs":[{"id":0,"release":0,"weight":1,"proc":[1]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, InstanceError::ProcLengthMismatch { .. }));
        let err = parse_instance(
            r#"{"model":"flow","machines":1,"jobs":[{"id":0,"release":0,"weight":1,"proc":[0]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, InstanceError::BadProc { .. }));
    }

    #[test]
    fn generator_is_deterministic() {
        let a = gen_random(1, 8, 2, (1.0, 5.0), (1.0, 4.0), 10.0, Model::Flow).unwrap();
        let b = gen_random(1, 8, 2, (1.0, 5.0), (1.0, 4.0), 10.0, Model::Flow).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_jobs(), 8);
        assert!(a.jobs.iter().all(|j| j.proc.len() == 2));
        assert!(a.jobs.iter().all(|j| j.weight == 1.0), "flow model forces unit weights");
    }

    #[test]
    fn generator_degenerate_range() {
        let inst = gen_random(7, 5, 3, (1.0, 1.0), (1.0, 1.0), 4.0, Model::Flow).unwrap();
        assert!(inst.jobs.iter().all(|j| j.proc.iter().all(|&p| p == 1.0)));
    }

    #[test]
    fn generator_deadline_model_snaps_to_grids() {
        let inst =
            gen_random(3, 6, 2, (0.5, 4.0), (1.0, 1.0), 8.0, Model::EnergyDeadline).unwrap();
        for j in &inst.jobs {
            assert_eq!(j.release % 0.25, 0.0, "release on 0.25 grid");
            for &p in &j.proc {
                assert!(p >= 0.5 && (p / 0.5).fract() == 0.0, "volume on 0.5 grid");
            }
            let d = j.deadline.unwrap();
            assert_eq!(d % 0.25, 0.0, "deadline on 0.25 grid");
            let p_max = j.proc.iter().cloned().fold(f64::MIN, f64::max);
            assert!(d - j.release >= 1.5 * p_max, "window admits a speed-1 strategy");
        }
    }

    #[test]
    fn trace_csv_schema() {
        let mut trace = ScheduleTrace::default();
        trace.records.insert(
            3,
            ExecutionRecord {
                job: 3,
                machine: 1,
                start: 0.5,
                speed: 2.0,
                end: 1.5,
                outcome: Outcome::Completed,
            },
        );
        assert_eq!(
            trace.to_csv(),
            "job,machine,start,speed,end,outcome\n3,1,0.5,2,1.5,completed\n"
        );
    }

    fn arb_model() -> impl Strategy<Value = Model> {
        prop_oneof![
            Just(Model::Flow),
            Just(Model::FlowEnergy),
            Just(Model::EnergyDeadline)
        ]
    }

    proptest! {
        // Round-trip: parse(serialize(I)) reproduces the instance bit-exactly.
        #[test]
        fn roundtrip_bit_exact(seed in 0u64..500, n in 1usize..10, m in 1usize..4,
                               model in arb_model()) {
            let inst = gen_random(seed, n, m, (0.5, 8.0), (1.0, 4.0), 12.0, model).unwrap();
            let back = parse_instance(&serialize_instance(&inst)).unwrap();
            prop_assert_eq!(inst, back);
        }

        // Canonical order: release non-decreasing, ties in ascending id.
        #[test]
        fn canonical_order(seed in 0u64..500, n in 1usize..20, m in 1usize..4) {
            let inst = gen_random(seed, n, m, (1.0, 5.0), (1.0, 2.0), 3.0, Model::Flow).unwrap();
            for w in inst.jobs.windows(2) {
                prop_assert!(w[0].release < w[1].release
                    || (w[0].release == w[1].release && w[0].id < w[1].id));
            }
        }
    }
}
