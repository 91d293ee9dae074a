//! Ground-truth baselines and adaptive lower-bound adversaries.
//!
//! Two exact brute-force optima provide denominators for empirical
//! competitive ratios: minimum total flow time over all machine
//! assignments and per-machine orders, and minimum total energy over all
//! per-job strategy choices on the discretized grid. Two adaptive
//! adversaries reproduce the classic hard instances — a batch of long
//! jobs followed by a flood of tiny ones for flow time, and a chain of
//! nested deadline windows shaped by the engine's own commitments for
//! energy — each with an independently validated schedule of its own.
//! Finally, verified dual objectives are exposed as certified lower
//! bounds via weak duality.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy_min::{
    enumerate_strategies, EnergyCommitter, EnergyMinError, Grids, LoadProfile, Power, Strategy,
    marginal_energy,
};
use crate::flow_energy::EnergyFlowResult;
use crate::flowtime::{FlowError, FlowResult};
use crate::instance::{EventKind, ExecutionRecord, Instance, InstanceError, Job, Model};
use crate::verify::{verify_flow_duals, verify_flow_energy_duals};

/// Oracle-level failures.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for brute force: n={n}, m={m} (caps: n ≤ {cap}, m ≤ 3)")]
    TooLarge { n: usize, m: usize, cap: usize },
    #[error("strategy combinations {combos:.3e} exceed the budget {cap:.3e}")]
    CombinationBudget { combos: f64, cap: f64 },
    #[error("dual solution has {violations} feasibility violations; no lower bound")]
    InfeasibleDuals { violations: usize },
    #[error("engine committed job {job} to [{start}, {end}] outside its window [{release}, {deadline}]")]
    BadCommit { job: u64, start: f64, end: f64, release: f64, deadline: f64 },
    #[error("adversary schedule infeasible: {0}")]
    InfeasibleAdversary(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Energy(#[from] EnergyMinError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Exact minimum total flow time: every job scheduled (no rejection) on
/// one machine, non-preemptively at `max(release, previous end)`,
/// minimized over all machine assignments and per-machine orders.
/// Per machine, a depth-first walk over all ordered subsets records the
/// best flow per subset; a partition DP then splits the jobs across
/// machines.
pub fn brute_force_flow_opt(inst: &Instance, cap: usize) -> Result<f64, OracleError> {
    let n = inst.jobs.len();
    let m = inst.machines;
    if n > cap || m > 3 {
        return Err(OracleError::TooLarge { n, m, cap });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let full: usize = (1 << n) - 1;
    let mut per_machine = Vec::with_capacity(m);
    for i in 0..m {
        let mut g = vec![f64::INFINITY; 1 << n];
        g[0] = 0.0;
        flow_orders(inst, i, 0, 0.0, 0.0, &mut g);
        per_machine.push(g);
    }
    // dp[s] = best flow with the machines seen so far covering set s.
    let mut dp = per_machine[0].clone();
    for g in per_machine.iter().skip(1) {
        let mut next = vec![f64::INFINITY; 1 << n];
        for s in 0..=full {
            let mut t = s;
            loop {
                let cand = dp[t] + g[s & !t];
                if cand < next[s] {
                    next[s] = cand;
                }
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
        }
        dp = next;
    }
    Ok(dp[full])
}

/// Walks every ordered completion of `set` on machine `i`, recording the
/// minimum flow per subset. Orders matter through both accumulated flow
/// and finishing time, so no dominance pruning is applied.
fn flow_orders(inst: &Instance, i: usize, set: usize, time: f64, flow: f64, g: &mut [f64]) {
    for (j, job) in inst.jobs.iter().enumerate() {
        if set & (1 << j) != 0 {
            continue;
        }
        let end = time.max(job.release) + job.proc[i];
        let s2 = set | (1 << j);
        let f2 = flow + (end - job.release);
        if f2 < g[s2] {
            g[s2] = f2;
        }
        flow_orders(inst, i, s2, end, f2, g);
    }
}

/// Exact minimum total energy of the discretized deadline problem:
/// every job picks one strategy, loads add per slot, cost is
/// `Σ_i Σ_t P_i(u_it)·step`. Exhaustive product enumeration with
/// branch-and-bound pruning on partial energy (admissible because
/// marginals are non-negative under non-decreasing power functions).
/// Errors when the strategy-combination count exceeds `cap`.
pub fn brute_force_energy_opt(
    inst: &Instance,
    grids: &Grids,
    powers: &[Power],
    cap: usize,
) -> Result<f64, OracleError> {
    let mut menus = Vec::with_capacity(inst.jobs.len());
    let mut combos = 1.0f64;
    for job in &inst.jobs {
        let mut menu = enumerate_strategies(inst, job.id, grids)?;
        combos *= menu.len() as f64;
        // Cheapest-solo-first ordering makes the first descent a good
        // pruning bound.
        menu.sort_by(|a, b| {
            let solo = |s: &Strategy| (s.end - s.start) * powers[s.machine].eval(s.speed);
            (solo(a), a.machine, a.start, a.speed)
                .partial_cmp(&(solo(b), b.machine, b.start, b.speed))
                .expect("finite strategy costs")
        });
        menus.push(menu);
    }
    if combos > cap as f64 {
        return Err(OracleError::CombinationBudget { combos, cap: cap as f64 });
    }
    let mut profile = LoadProfile::new(inst.machines, grids.slots(), grids.time_step);
    let mut best = f64::INFINITY;
    energy_choices(&menus, 0, &mut profile, 0.0, powers, &mut best);
    if menus.is_empty() {
        return Ok(0.0);
    }
    Ok(best)
}

fn energy_choices(
    menus: &[Vec<Strategy>],
    level: usize,
    profile: &mut LoadProfile,
    acc: f64,
    powers: &[Power],
    best: &mut f64,
) {
    if acc >= *best {
        return;
    }
    if level == menus.len() {
        *best = acc;
        return;
    }
    for s in &menus[level] {
        let dm = marginal_energy(s, profile, &powers[s.machine]);
        // Save the covered slots so the undo is bit-exact.
        let (a, b) = profile.slot_span(s);
        let saved: Vec<f64> = profile.u[s.machine][a..b].to_vec();
        profile.add(s);
        energy_choices(menus, level + 1, profile, acc + dm, powers, best);
        profile.u[s.machine][a..b].copy_from_slice(&saved);
    }
}

/// One speed-constant interval of an adversary's own schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvSegment {
    pub job: u64,
    pub start: f64,
    pub end: f64,
    pub speed: f64,
}

/// Record of one adversary run: the released jobs in order, the engine
/// execution observed for each, the adversary's own validated schedule,
/// and the resulting costs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversaryTranscript {
    pub jobs: Vec<Job>,
    /// Engine execution that answered (and shaped) each release.
    pub decisions: Vec<ExecutionRecord>,
    /// The adversary's own single-machine schedule, possibly split
    /// around windows it must leave free.
    pub adversary_schedule: Vec<AdvSegment>,
    pub adversary_cost: f64,
    pub algorithm_cost: f64,
    /// algorithm_cost / adversary_cost.
    pub ratio: f64,
}

/// Checks an adversary's single-machine schedule: segments inside each
/// job's window, per-job volume delivered exactly, no overlap.
fn validate_adversary(jobs: &[Job], schedule: &[AdvSegment]) -> Result<(), OracleError> {
    let err = |msg: String| Err(OracleError::InfeasibleAdversary(msg));
    for job in jobs {
        let mut volume = 0.0;
        for seg in schedule.iter().filter(|s| s.job == job.id) {
            if seg.start < job.release - 1e-9 {
                return err(format!("job {} runs before release", job.id));
            }
            if let Some(d) = job.deadline {
                if seg.end > d + 1e-9 {
                    return err(format!("job {} runs past deadline", job.id));
                }
            }
            if seg.end <= seg.start {
                return err(format!("job {} has an empty segment", job.id));
            }
            volume += (seg.end - seg.start) * seg.speed;
        }
        if (volume - job.proc[0]).abs() > 1e-9 * job.proc[0].max(1.0) {
            return err(format!("job {} volume {} != {}", job.id, volume, job.proc[0]));
        }
    }
    let mut spans: Vec<(f64, f64)> = schedule.iter().map(|s| (s.start, s.end)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 - 1e-9 {
            return err(format!("segments overlap at {}", w[1].0));
        }
    }
    Ok(())
}

/// Flow-time lower-bound adversary. Phase 1 releases `1/ε` jobs of
/// length `L` at time 0 on one machine and watches when the engine first
/// starts any of them (online determinism makes this two-phase replay
/// faithful). If that happens after `L²`, the batch alone is the
/// instance; otherwise `L²` jobs of size `1/L` are released every `1/L`
/// from the first start `t` onward. The adversary's own schedule runs
/// the small jobs at their releases and the long jobs back-to-back
/// afterwards.
pub fn lb1_adversary(
    epsilon: f64,
    l: f64,
    engine: impl Fn(&Instance) -> Result<FlowResult, FlowError>,
) -> Result<AdversaryTranscript, OracleError> {
    let k = (1.0 / epsilon).round();
    assert!(
        ((1.0 / epsilon) - k).abs() <= 1e-9 && k >= 1.0,
        "1/epsilon must be a positive integer"
    );
    assert!(l >= 1.0 && l.is_finite(), "L must be at least 1");
    let k = k as usize;
    let bigs: Vec<Job> = (0..k)
        .map(|id| Job {
            id: id as u64,
            release: 0.0,
            weight: 1.0,
            proc: vec![l],
            deadline: None,
        })
        .collect();
    let mut phase1 =
        Instance { model: Model::Flow, machines: 1, alpha: None, jobs: bigs.clone() };
    phase1.validate()?;
    let res1 = engine(&phase1)?;
    let first_start = res1
        .trace
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Start && e.job < k as u64)
        .map(|e| e.time)
        .fold(f64::INFINITY, f64::min);

    let (jobs, result, schedule, adversary_cost) = if first_start > l * l {
        // The engine idled the whole batch away: the batch alone already
        // separates it from the back-to-back schedule.
        let schedule: Vec<AdvSegment> = (0..k)
            .map(|j| AdvSegment {
                job: j as u64,
                start: j as f64 * l,
                end: (j + 1) as f64 * l,
                speed: 1.0,
            })
            .collect();
        let cost = (1..=k).map(|j| j as f64 * l).sum();
        (bigs, res1, schedule, cost)
    } else {
        let t = first_start;
        let count = (l * l).round() as usize;
        let mut jobs = bigs;
        jobs.extend((0..count).map(|i| Job {
            id: (k + i) as u64,
            release: t + i as f64 / l,
            weight: 1.0,
            proc: vec![1.0 / l],
            deadline: None,
        }));
        let mut full = Instance { model: Model::Flow, machines: 1, alpha: None, jobs };
        full.validate()?;
        let res2 = engine(&full)?;
        // Small jobs at release, then the long jobs sequentially.
        let mut schedule: Vec<AdvSegment> = (0..count)
            .map(|i| AdvSegment {
                job: (k + i) as u64,
                start: t + i as f64 / l,
                end: t + (i + 1) as f64 / l,
                speed: 1.0,
            })
            .collect();
        schedule.extend((0..k).map(|j| AdvSegment {
            job: j as u64,
            start: t + l + j as f64 * l,
            end: t + l + (j + 1) as f64 * l,
            speed: 1.0,
        }));
        let cost = count as f64 * (1.0 / l)
            + (0..k).map(|j| t + l + (j + 1) as f64 * l).sum::<f64>();
        (full.jobs.clone(), res2, schedule, cost)
    };

    validate_adversary(&jobs, &schedule)?;
    let decisions = jobs.iter().map(|j| result.trace.records[&j.id].clone()).collect();
    let algorithm_cost = result.total_flow;
    Ok(AdversaryTranscript {
        jobs,
        decisions,
        adversary_schedule: schedule,
        adversary_cost,
        algorithm_cost,
        ratio: algorithm_cost / adversary_cost,
    })
}

/// Deadline-energy lower-bound adversary. Job 1 spans `[0, 3^{α+1}]`
/// with volume a third of its span; after the engine commits job j's
/// (start, speed), job j+1 spans `[S_j + 1, C_j]`, again with volume a
/// third of the span. The chain stops at α jobs or when the next span
/// would be ≤ 1. The adversary itself runs every job at speed 1 inside
/// its own window but outside the next job's window, which the nesting
/// keeps collision-free.
pub fn lb2_adversary(
    alpha: u32,
    engine: &mut dyn EnergyCommitter,
) -> Result<AdversaryTranscript, OracleError> {
    assert!(alpha >= 2, "alpha must be an integer ≥ 2");
    let mut jobs: Vec<Job> = Vec::new();
    let mut decisions: Vec<ExecutionRecord> = Vec::new();
    let mut release = 0.0;
    let mut deadline = 3f64.powi(alpha as i32 + 1);
    loop {
        let p = (deadline - release) / 3.0;
        let job = Job {
            id: jobs.len() as u64,
            release,
            weight: 1.0,
            proc: vec![p],
            deadline: Some(deadline),
        };
        let rec = engine.commit(&job)?;
        if rec.start < release - 1e-9 || rec.end > deadline + 1e-9 || rec.end <= rec.start {
            return Err(OracleError::BadCommit {
                job: job.id,
                start: rec.start,
                end: rec.end,
                release,
                deadline,
            });
        }
        jobs.push(job);
        decisions.push(rec.clone());
        if jobs.len() as u32 >= alpha {
            break;
        }
        let (next_r, next_d) = (rec.start + 1.0, rec.end);
        if next_d - next_r <= 1.0 {
            break;
        }
        release = next_r;
        deadline = next_d;
    }

    // Each job runs at speed 1 in its window's free part: fill before
    // the next job's window, spill the rest after it.
    let mut schedule = Vec::new();
    for (idx, job) in jobs.iter().enumerate() {
        let p = job.proc[0];
        let r = job.release;
        match jobs.get(idx + 1) {
            None => schedule.push(AdvSegment { job: job.id, start: r, end: r + p, speed: 1.0 }),
            Some(inner) => {
                let front = (inner.release - r).min(p);
                if front > 0.0 {
                    schedule.push(AdvSegment {
                        job: job.id,
                        start: r,
                        end: r + front,
                        speed: 1.0,
                    });
                }
                let rest = p - front;
                if rest > 1e-12 {
                    let d_inner = inner.deadline.expect("adversary jobs carry deadlines");
                    schedule.push(AdvSegment {
                        job: job.id,
                        start: d_inner,
                        end: d_inner + rest,
                        speed: 1.0,
                    });
                }
            }
        }
    }
    validate_adversary(&jobs, &schedule)?;

    // Speed-1 monomial power: energy equals the volume delivered.
    let adversary_cost = jobs.iter().map(|j| j.proc[0]).sum::<f64>();
    let algorithm_cost = engine.energy();
    Ok(AdversaryTranscript {
        jobs,
        decisions,
        adversary_schedule: schedule,
        adversary_cost,
        algorithm_cost,
        ratio: algorithm_cost / adversary_cost,
    })
}

/// Certified lower bound on the optimal total flow time, up to the
/// factor 2 the non-preemptive relaxation loses: verifies the duals and
/// returns the dual objective `Σλ_j − Σ_i ∫β_i`. Errors when the duals
/// fail verification.
pub fn dual_lower_bound_flow(result: &FlowResult) -> Result<f64, OracleError> {
    let report = verify_flow_duals(result, result.epsilon);
    if !report.certified() {
        return Err(OracleError::InfeasibleDuals { violations: report.violations.len() });
    }
    Ok(result.dual_objective())
}

/// Certified lower bound on the optimal fractional weighted flow plus
/// energy: verifies the duals (8 interior samples per interval) and
/// returns `Σλ_j + (1−α)Σ_i ∫u_i^α`. Errors when the duals fail.
pub fn dual_lower_bound_flow_energy(result: &EnergyFlowResult) -> Result<f64, OracleError> {
    let report =
        verify_flow_energy_duals(result, result.epsilon, result.alpha, result.gamma, 8);
    if !report.certified() {
        return Err(OracleError::InfeasibleDuals { violations: report.violations.len() });
    }
    Ok(result.dual_objective())
}

/// Rejected-job ids of a transcript's engine decisions (kept for report
/// plumbing; the adversary itself never rejects).
pub fn rejected_ids(transcript: &AdversaryTranscript) -> BTreeSet<u64> {
    transcript
        .decisions
        .iter()
        .filter(|r| r.outcome != crate::instance::Outcome::Completed)
        .map(|r| r.job)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy_min::GreedyCommitter;
    use crate::flow_energy::simulate_flow_energy;
    use crate::flowtime::simulate_flow;
    use crate::instance::gen_random;

    fn flow_instance(m: usize, jobs: Vec<(f64, Vec<f64>)>) -> Instance {
        let jobs = jobs
            .into_iter()
            .enumerate()
            .map(|(id, (release, proc))| Job {
                id: id as u64,
                release,
                weight: 1.0,
                proc,
                deadline: None,
            })
            .collect();
        let mut inst = Instance { model: Model::Flow, machines: m, alpha: None, jobs };
        inst.validate().unwrap();
        inst
    }

    #[test]
    fn brute_flow_examples() {
        // Single job: flow = p.
        let one = flow_instance(1, vec![(0.0, vec![2.5])]);
        assert_eq!(brute_force_flow_opt(&one, 8).unwrap(), 2.5);
        // Two jobs at 0 with p ∈ {1, 2}: SPT gives 1 + 3 = 4.
        let two = flow_instance(1, vec![(0.0, vec![1.0]), (0.0, vec![2.0])]);
        assert_eq!(brute_force_flow_opt(&two, 8).unwrap(), 4.0);
        // A batch of 4 equal jobs of length L: Σ j·L.
        let l = 2.0;
        let batch = flow_instance(1, vec![(0.0, vec![l]); 4]);
        assert_eq!(brute_force_flow_opt(&batch, 8).unwrap(), (1 + 2 + 3 + 4) as f64 * l);
    }

    #[test]
    fn brute_flow_size_caps() {
        let big = flow_instance(1, vec![(0.0, vec![1.0]); 9]);
        assert!(matches!(
            brute_force_flow_opt(&big, 8),
            Err(OracleError::TooLarge { n: 9, .. })
        ));
        let wide = gen_random(1, 3, 4, (1.0, 2.0), (1.0, 1.0), 4.0, Model::Flow).unwrap();
        assert!(brute_force_flow_opt(&wide, 8).is_err());
    }

    /// Independent reference: enumerate every machine assignment and
    /// every per-machine permutation directly.
    fn reference_flow_opt(inst: &Instance) -> f64 {
        fn perms(order: &mut Vec<usize>, used: &mut Vec<bool>, jobs: &[&Job], i: usize, best: &mut f64) {
            if order.len() == jobs.len() {
                let mut t = 0.0f64;
                let mut flow = 0.0;
                for &idx in order.iter() {
                    let j = jobs[idx];
                    t = t.max(j.release) + j.proc[i];
                    flow += t - j.release;
                }
                *best = best.min(flow);
                return;
            }
            for idx in 0..jobs.len() {
                if !used[idx] {
                    used[idx] = true;
                    order.push(idx);
                    perms(order, used, jobs, i, best);
                    order.pop();
                    used[idx] = false;
                }
            }
        }
        let n = inst.jobs.len();
        let m = inst.machines;
        let mut best = f64::INFINITY;
        for assign in 0..m.pow(n as u32) {
            let mut total = 0.0;
            let mut code = assign;
            let mut buckets: Vec<Vec<&Job>> = vec![Vec::new(); m];
            for j in &inst.jobs {
                buckets[code % m].push(j);
                code /= m;
            }
            for (i, bucket) in buckets.iter().enumerate() {
                let mut sub = f64::INFINITY;
                perms(&mut Vec::new(), &mut vec![false; bucket.len()], bucket, i, &mut sub);
                total += if bucket.is_empty() { 0.0 } else { sub };
            }
            best = best.min(total);
        }
        best
    }

    #[test]
    fn brute_flow_matches_independent_enumeration() {
        for seed in 0..25u64 {
            let inst = gen_random(
                seed,
                2 + (seed as usize % 3),
                1 + (seed as usize % 2),
                (0.5, 3.0),
                (1.0, 1.0),
                5.0,
                Model::Flow,
            )
            .unwrap();
            let fast = brute_force_flow_opt(&inst, 8).unwrap();
            let slow = reference_flow_opt(&inst);
            assert!(
                (fast - slow).abs() < 1e-9,
                "seed {seed}: dp {fast} vs enumeration {slow}"
            );
        }
    }

    #[test]
    fn brute_flow_lower_bounds_list_schedules() {
        // Any feasible non-preemptive schedule is at least the optimum;
        // arrival-order round-robin list scheduling is one such.
        for seed in 0..40u64 {
            let inst = gen_random(
                seed,
                2 + (seed as usize % 7),
                1 + (seed as usize % 3),
                (0.5, 3.0),
                (1.0, 1.0),
                8.0,
                Model::Flow,
            )
            .unwrap();
            let opt = brute_force_flow_opt(&inst, 8).unwrap();
            let mut free = vec![0.0f64; inst.machines];
            let mut list = 0.0;
            for (pos, j) in inst.jobs.iter().enumerate() {
                let i = pos % inst.machines;
                free[i] = free[i].max(j.release) + j.proc[i];
                list += free[i] - j.release;
            }
            assert!(opt <= list + 1e-9, "seed {seed}: opt {opt} > list {list}");
        }
    }

    fn ed_instance(jobs: Vec<(f64, f64, f64)>) -> Instance {
        let jobs = jobs
            .into_iter()
            .enumerate()
            .map(|(id, (release, p, deadline))| Job {
                id: id as u64,
                release,
                weight: 1.0,
                proc: vec![p],
                deadline: Some(deadline),
            })
            .collect();
        let mut inst =
            Instance { model: Model::EnergyDeadline, machines: 1, alpha: Some(2.0), jobs };
        inst.validate().unwrap();
        inst
    }

    fn sq() -> Power {
        Power::Monomial { alpha: 2.0 }
    }

    #[test]
    fn brute_energy_examples() {
        // One job, window exactly p at the slowest speed: P(1)·p.
        let one = ed_instance(vec![(0.0, 2.0, 2.0)]);
        let grids = Grids::new(vec![1.0, 2.0], 0.5, 2.0).unwrap();
        assert_eq!(brute_force_energy_opt(&one, &grids, &[sq()], 1_000_000).unwrap(), 2.0);
        // Two jobs with disjoint windows: optima add.
        let two = ed_instance(vec![(0.0, 1.0, 1.0), (2.0, 1.0, 3.0)]);
        let grids = Grids::new(vec![1.0, 2.0], 0.5, 3.0).unwrap();
        assert_eq!(brute_force_energy_opt(&two, &grids, &[sq()], 1_000_000).unwrap(), 2.0);
        // Two unit jobs sharing a length-2 window at 𝒱={1}: staggering
        // beats the forced-parallel cost 4.
        let share = ed_instance(vec![(0.0, 1.0, 2.0), (0.0, 1.0, 2.0)]);
        let grids = Grids::new(vec![1.0], 1.0, 2.0).unwrap();
        assert_eq!(brute_force_energy_opt(&share, &grids, &[sq()], 1_000_000).unwrap(), 2.0);
    }

    #[test]
    fn brute_energy_budget_errors() {
        let inst = ed_instance(vec![(0.0, 0.5, 4.0); 4]);
        let grids = Grids::new(vec![1.0, 2.0], 0.25, 4.0).unwrap();
        assert!(matches!(
            brute_force_energy_opt(&inst, &grids, &[sq()], 10),
            Err(OracleError::CombinationBudget { .. })
        ));
    }

    #[test]
    fn brute_energy_brackets_the_greedy() {
        use crate::energy_min::greedy_assign;
        for seed in 0..30u64 {
            let inst = gen_random(
                seed,
                2 + (seed as usize % 3),
                1,
                (0.5, 2.0),
                (1.0, 1.0),
                4.0,
                Model::EnergyDeadline,
            )
            .unwrap();
            let grids = Grids::for_instance(vec![1.0, 2.0], 0.25, &inst).unwrap();
            let powers = vec![sq()];
            let opt = brute_force_energy_opt(&inst, &grids, &powers, 10_000_000).unwrap();
            let (trace, _) = greedy_assign(&inst, &grids, &powers, 3.0, 0.5).unwrap();
            assert!(opt <= trace.objective + 1e-9, "seed {seed}");
            assert!(trace.objective <= 4.0 * opt + 1e-9, "seed {seed}: α^α bound broken");
        }
    }

    #[test]
    fn lb1_flooded_engine_transcript() {
        // ε=1, L=4: one long job, flood of 16 sixteenth-jobs; the engine
        // starts at t=0 so the flood branch triggers.
        let t = lb1_adversary(1.0, 4.0, |inst| simulate_flow(inst, 1.0)).unwrap();
        assert_eq!(t.jobs.len(), 1 + 16);
        assert_eq!(t.decisions.len(), t.jobs.len());
        assert!(t.adversary_cost > 0.0);
        assert!((t.ratio - t.algorithm_cost / t.adversary_cost).abs() < 1e-12);
        // Adversary cost: smalls contribute L, bigs t + L + jL with t=0.
        assert!((t.adversary_cost - (4.0 + 8.0)).abs() < 1e-9);
    }

    #[test]
    fn lb1_idling_engine_pays_theta_l() {
        // Emulate an engine that idles L²+1 before starting anything by
        // shifting a faithful run's observables.
        let mut ratios = Vec::new();
        for &l in &[4.0, 16.0] {
            let delay = l * l + 1.0;
            let t = lb1_adversary(1.0, l, |inst| {
                let mut res = simulate_flow(inst, 1.0)?;
                for e in &mut res.trace.events {
                    e.time += delay;
                }
                res.total_flow += delay * inst.jobs.len() as f64;
                Ok(res)
            })
            .unwrap();
            // Idle branch: only the long batch is released.
            assert_eq!(t.jobs.len(), 1);
            assert!(t.ratio >= l, "L={l}: ratio {} not Θ(L)", t.ratio);
            ratios.push(t.ratio);
        }
        assert!(ratios[1] > ratios[0]);
    }

    #[test]
    fn lb1_degenerate_eps_one_l_one() {
        // ε=1, L=1: the engine rejects the long job on the small job's
        // dispatch and finishes the small one; flow 1 against the
        // adversary's 3.
        let t = lb1_adversary(1.0, 1.0, |inst| simulate_flow(inst, 1.0)).unwrap();
        assert_eq!(t.jobs.len(), 2);
        assert!((t.algorithm_cost - 1.0).abs() < 1e-9);
        assert!((t.adversary_cost - 3.0).abs() < 1e-9);
        assert!((t.ratio - 1.0 / 3.0).abs() < 1e-9);
    }

    fn lb2_committer(alpha: u32) -> GreedyCommitter {
        let step = 3f64.powi(-(alpha as i32 - 1));
        let horizon = 3f64.powi(alpha as i32 + 1);
        let grids = Grids::new(vec![1.0, 2.0], step, horizon).unwrap();
        GreedyCommitter::new(1, grids, vec![Power::Monomial { alpha: alpha as f64 }]).unwrap()
    }

    #[test]
    fn lb2_alpha_two_walk() {
        let mut engine = lb2_committer(2);
        let t = lb2_adversary(2, &mut engine).unwrap();
        // Job 1 spans [0, 27] with volume 9; the greedy runs it at speed
        // 1 from 0. Job 2 spans [1, 9] with volume 8/3, also at speed 1
        // starting at 1.
        assert_eq!(t.jobs.len(), 2);
        assert_eq!(
            (t.jobs[0].release, t.jobs[0].deadline.unwrap(), t.jobs[0].proc[0]),
            (0.0, 27.0, 9.0)
        );
        assert_eq!((t.decisions[0].start, t.decisions[0].speed), (0.0, 1.0));
        assert!((t.jobs[1].proc[0] - 8.0 / 3.0).abs() < 1e-12);
        // Overlap [1, 11/3] runs at speed 2: energy 9 + (8/3)·(4−1) = 17.
        assert!((t.algorithm_cost - 17.0).abs() < 1e-9);
        assert!((t.adversary_cost - (9.0 + 8.0 / 3.0)).abs() < 1e-9);
        assert!(t.adversary_cost <= 27.0);
        assert!(t.ratio >= 1.0);
    }

    #[test]
    fn lb2_alpha_three_is_feasible_and_short() {
        let mut engine = lb2_committer(3);
        let t = lb2_adversary(3, &mut engine).unwrap();
        assert!(t.jobs.len() <= 3);
        assert!(t.adversary_cost <= 81.0);
        assert!(t.ratio >= 1.0);
        assert!(rejected_ids(&t).is_empty());
    }

    #[test]
    fn dual_lower_bound_flow_examples() {
        // Single job p=2 at ε=1: λ = 1, ∫β = 2/4, dual = 0.5 ≤ p.
        let one = flow_instance(1, vec![(0.0, vec![2.0])]);
        let res = simulate_flow(&one, 1.0).unwrap();
        let lb = dual_lower_bound_flow(&res).unwrap();
        assert!((lb - 0.5).abs() < 1e-12);
        assert!(lb <= 2.0);
        // Empty instance: dual objective 0.
        let mut empty = Instance { model: Model::Flow, machines: 1, alpha: None, jobs: vec![] };
        empty.validate().unwrap();
        let lb0 = dual_lower_bound_flow(&simulate_flow(&empty, 1.0).unwrap()).unwrap();
        assert_eq!(lb0, 0.0);
        // Corrupted duals are refused.
        let mut bad = simulate_flow(&one, 1.0).unwrap();
        for l in bad.lambda.values_mut() {
            *l *= 10.0;
        }
        assert!(matches!(
            dual_lower_bound_flow(&bad),
            Err(OracleError::InfeasibleDuals { .. })
        ));
    }

    #[test]
    fn dual_lower_bound_respects_weak_duality() {
        // Σλ − Σ∫β lower-bounds twice the exact optimum (the relaxation
        // the duals certify is within factor 2 of non-preemptive OPT).
        for seed in 0..100u64 {
            for &eps in &[1.0, 0.5] {
                let inst = gen_random(
                    seed,
                    2 + (seed as usize % 5),
                    1 + (seed as usize % 2),
                    (0.5, 3.0),
                    (1.0, 1.0),
                    6.0,
                    Model::Flow,
                )
                .unwrap();
                let res = simulate_flow(&inst, eps).unwrap();
                let lb = dual_lower_bound_flow(&res).unwrap();
                let opt = brute_force_flow_opt(&inst, 8).unwrap();
                assert!(
                    lb <= 2.0 * opt + 1e-9,
                    "seed {seed} eps {eps}: dual {lb} > 2·opt {opt}"
                );
            }
        }
    }

    #[test]
    fn dual_lower_bound_flow_energy_is_verified() {
        for seed in 0..20u64 {
            let inst = gen_random(
                seed,
                3 + (seed as usize % 4),
                1,
                (0.5, 2.0),
                (0.5, 2.0),
                6.0,
                Model::FlowEnergy,
            )
            .unwrap();
            let res = simulate_flow_energy(&inst, 0.5).unwrap();
            let lb = dual_lower_bound_flow_energy(&res).unwrap();
            assert!(lb <= res.objective + 1e-9, "weak duality: {lb} vs {}", res.objective);
        }
    }
}
