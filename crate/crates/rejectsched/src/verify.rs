//! Pointwise numeric certification of the dual solutions the engines
//! build, turning each feasibility argument into an executable check.
//!
//! Three checkers, one per engine:
//!
//! * flow: `λ_j/p_ij − β_i(t) ≤ (t−r_j)/p_ij + 1` for every machine,
//!   job, and event time. Between events the left side is constant (β is
//!   a step function) while the right side grows, so event-time checks
//!   cover all `t`.
//! * flow+energy: `λ_j/p_ij ≤ δ_ij(t−r_j+p_ij) + α·u_i(t)^{α−1} +
//!   (α/(γ(α−1)))·w_j^{(α−1)/α}` with `δ_ij = w_j/p_ij`. Here `u_i`
//!   varies inside event intervals, so each interval is also sampled at
//!   interior grid points.
//! * deadline energy: `γ_i + Σ_{(i,j,k)∈A} β_{i,j,k} ≤ f_i(A)` over
//!   per-machine configurations (a subset of jobs, one strategy each),
//!   exhaustively when the count fits the budget and uniformly sampled
//!   otherwise, plus `δ_j ≤ β_{i,j,k}` for every priced strategy.
//!
//! Violations are data, not errors: every checker returns a report with
//! the offending constraint instances, and certification is simply an
//! empty list.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy_min::{enumerate_strategies, EnergyDuals, Grids, LoadProfile, Power, Strategy};
use crate::flow_energy::EnergyFlowResult;
use crate::flowtime::FlowResult;
use crate::instance::Instance;

/// Where a constraint was evaluated: a time, or a per-machine
/// configuration given as (job, strategy index) picks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CheckPoint {
    Time(f64),
    Config(Vec<(u64, usize)>),
}

/// One violated constraint instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub machine: usize,
    pub job: Option<u64>,
    pub at: CheckPoint,
    pub lhs: f64,
    pub rhs: f64,
    /// rhs − lhs (negative when violated).
    pub slack: f64,
}

/// Outcome of one checker run: certified iff `violations` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub violations: Vec<Violation>,
    pub checked_count: u64,
    /// Relative tolerance the checks were run at.
    pub tolerance: f64,
    /// Smallest rhs − lhs seen across all checks, violating or not.
    #[serde(skip_serializing_if = "is_not_finite", default = "infinity")]
    pub min_slack: f64,
}

fn is_not_finite(x: &f64) -> bool {
    !x.is_finite()
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl VerifyReport {
    pub fn certified(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative tolerance with an absolute floor for near-zero right sides.
const REL_TOL: f64 = 1e-9;
const ABS_FLOOR: f64 = 1e-12;

/// Accumulates checks into a report.
struct Checker {
    report: VerifyReport,
}

impl Checker {
    fn new() -> Self {
        Checker {
            report: VerifyReport {
                violations: Vec::new(),
                checked_count: 0,
                tolerance: REL_TOL,
                min_slack: f64::INFINITY,
            },
        }
    }

    /// Records lhs ≤ rhs, flagging a violation beyond tolerance.
    fn check(
        &mut self,
        constraint: &str,
        machine: usize,
        job: Option<u64>,
        at: CheckPoint,
        lhs: f64,
        rhs: f64,
    ) {
        self.report.checked_count += 1;
        let slack = rhs - lhs;
        if slack < self.report.min_slack {
            self.report.min_slack = slack;
        }
        let tol = (REL_TOL * rhs.abs()).max(ABS_FLOOR);
        if lhs > rhs + tol {
            self.report.violations.push(Violation {
                constraint: constraint.to_string(),
                machine,
                job,
                at,
                lhs,
                rhs,
                slack,
            });
        }
    }

    fn finish(self) -> VerifyReport {
        self.report
    }
}

/// Sorted, deduplicated event times of a trace.
fn event_times(events: &[crate::instance::Event]) -> Vec<f64> {
    let mut ts: Vec<f64> = events.iter().map(|e| e.time).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Certifies `λ_j/p_ij − β_i(t) ≤ (t−r_j)/p_ij + 1` for every machine
/// and job at `t = r_j` and at every later event time, with β evaluated
/// just after each time. β is constant between events while the right
/// side grows, so these points cover all t.
pub fn verify_flow_duals(result: &FlowResult, epsilon: f64) -> VerifyReport {
    assert!(
        (epsilon - result.epsilon).abs() <= 1e-12,
        "epsilon {epsilon} does not match the simulated {}",
        result.epsilon
    );
    let mut checker = Checker::new();
    let times = event_times(&result.trace.events);
    for j in &result.instance.jobs {
        let lambda = result.lambda[&j.id];
        for i in 0..result.instance.machines {
            let p = j.proc[i];
            for &t in std::iter::once(&j.release).chain(times.iter()) {
                if t < j.release {
                    continue;
                }
                let lhs = lambda / p - result.beta_after(i, t);
                let rhs = (t - j.release) / p + 1.0;
                checker.check("flow_dual", i, Some(j.id), CheckPoint::Time(t), lhs, rhs);
            }
        }
    }
    checker.finish()
}

/// Certifies `λ_j/p_ij ≤ δ_ij(t−r_j+p_ij) + α·u_i(t)^{α−1} +
/// (α/(γ(α−1)))·w_j^{(α−1)/α}` (δ_ij = w_j/p_ij) at every event time at
/// or after r_j, plus `grid_points` uniformly spaced interior samples per
/// event interval, since u_i decreases continuously inside intervals.
/// Interior-sample violations carry a distinct constraint id.
pub fn verify_flow_energy_duals(
    result: &EnergyFlowResult,
    epsilon: f64,
    alpha: f64,
    gamma: f64,
    grid_points: usize,
) -> VerifyReport {
    assert!((epsilon - result.epsilon).abs() <= 1e-12, "epsilon mismatch");
    assert!((alpha - result.alpha).abs() <= 1e-12, "alpha mismatch");
    assert!((gamma - result.gamma).abs() <= 1e-12, "gamma mismatch");
    let mut checker = Checker::new();
    let times = event_times(&result.trace.events);
    for j in &result.instance.jobs {
        let lambda = result.lambda[&j.id];
        let w_term = alpha / (gamma * (alpha - 1.0)) * j.weight.powf((alpha - 1.0) / alpha);
        for i in 0..result.instance.machines {
            let p = j.proc[i];
            let delta_ij = j.weight / p;
            let lhs = lambda / p;
            let rhs_at = |t: f64, u: f64| {
                delta_ij * (t - j.release + p) + alpha * u.powf(alpha - 1.0) + w_term
            };
            let mut prev: Option<f64> = None;
            for &t in std::iter::once(&j.release).chain(times.iter()) {
                if t < j.release {
                    continue;
                }
                if prev == Some(t) {
                    continue;
                }
                // Interior samples of the interval ending at t: u is
                // continuous there, so evaluation side does not matter.
                if let Some(t0) = prev {
                    for k in 1..=grid_points {
                        let ts = t0 + (t - t0) * k as f64 / (grid_points + 1) as f64;
                        let u = result.u_after(i, ts);
                        checker.check(
                            "flow_energy_dual_interior",
                            i,
                            Some(j.id),
                            CheckPoint::Time(ts),
                            lhs,
                            rhs_at(ts, u),
                        );
                    }
                }
                let u = result.u_after(i, t);
                checker.check(
                    "flow_energy_dual",
                    i,
                    Some(j.id),
                    CheckPoint::Time(t),
                    lhs,
                    rhs_at(t, u),
                );
                prev = Some(t);
            }
        }
    }
    checker.finish()
}

/// Seed for configuration sampling when exhaustive enumeration exceeds
/// the budget; fixed so reports are deterministic.
const CONFIG_SAMPLE_SEED: u64 = 0x5EED_CAFE;

/// Certifies the configuration constraints of an energy dual solution:
/// `δ_j ≤ β_{i,j,k}` for every priced strategy, and
/// `γ_i + Σ_{(i,j,k)∈A} β_{i,j,k} ≤ f_i(A)` for per-machine
/// configurations A (each job absent or contributing one strategy on
/// that machine). All configurations are enumerated when their count is
/// at most `max_configs`; otherwise `max_configs` are sampled uniformly
/// with a fixed seed. The power functions must be the ones the duals
/// were priced with.
pub fn verify_energy_config_duals(
    duals: &EnergyDuals,
    inst: &Instance,
    grids: &Grids,
    powers: &[Power],
    max_configs: usize,
) -> VerifyReport {
    let mut checker = Checker::new();

    for (&(i, j, k), &beta) in &duals.beta {
        checker.check(
            "delta_le_beta",
            i,
            Some(j),
            CheckPoint::Config(vec![(j, k)]),
            duals.delta[&j],
            beta,
        );
    }

    // Per-job strategies keyed by their enumeration index, split per
    // machine to mirror the β keys.
    let all: Vec<(u64, Vec<(usize, Strategy)>)> = inst
        .jobs
        .iter()
        .map(|j| {
            let strategies = enumerate_strategies(inst, j.id, grids)
                .expect("duals came from a feasible instance");
            (j.id, strategies.into_iter().enumerate().collect())
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(CONFIG_SAMPLE_SEED);
    for i in 0..inst.machines {
        let menu: Vec<(u64, Vec<(usize, Strategy)>)> = all
            .iter()
            .map(|(id, ss)| {
                let on_i: Vec<(usize, Strategy)> =
                    ss.iter().filter(|(_, s)| s.machine == i).cloned().collect();
                (*id, on_i)
            })
            .collect();
        let total: f64 = menu.iter().map(|(_, ss)| 1.0 + ss.len() as f64).product();
        let exhaustive = total <= max_configs as f64;
        let runs = if exhaustive { total as usize } else { max_configs };

        // choice[j] = 0 means job j absent, c > 0 picks menu entry c−1.
        let mut choice = vec![0usize; menu.len()];
        for run in 0..runs {
            if !exhaustive {
                for (c, (_, ss)) in choice.iter_mut().zip(&menu) {
                    *c = rng.gen_range(0..=ss.len());
                }
            }
            let mut profile = LoadProfile::new(inst.machines, grids.slots(), grids.time_step);
            let mut beta_sum = 0.0;
            let mut picks = Vec::new();
            for (&c, (id, ss)) in choice.iter().zip(&menu) {
                if c > 0 {
                    let (k, s) = &ss[c - 1];
                    profile.add(s);
                    beta_sum += duals.beta[&(i, *id, *k)];
                    picks.push((*id, *k));
                }
            }
            checker.check(
                "config_energy",
                i,
                None,
                CheckPoint::Config(picks),
                duals.gamma_m[i] + beta_sum,
                profile.machine_energy(i, &powers[i]),
            );
            // Mixed-radix increment walks every configuration once.
            if exhaustive && run + 1 < runs {
                for (c, (_, ss)) in choice.iter_mut().zip(&menu) {
                    if *c < ss.len() {
                        *c += 1;
                        break;
                    }
                    *c = 0;
                }
            }
        }
    }
    checker.finish()
}
