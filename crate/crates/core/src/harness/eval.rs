use super::metrics::{compute_metrics, EpisodeMetrics};
use super::policy::{ThresholdPolicy, TriggerPolicy};
use super::RunConfig;
use crate::empc::{Env, TraceRecord};
use crate::Result;

/// Runs one episode from reset. The trace is collected only when `trace` is set.
pub fn run_episode<P: TriggerPolicy + ?Sized>(env: &mut Env, policy: &mut P, trace: bool) -> Result<(EpisodeMetrics, Vec<TraceRecord>)> {
    env.enable_trace(trace);
    let mut obs = env.reset();
    policy.reset();
    let mut costs = Vec::with_capacity(env.episode_steps());
    let (mut ret, mut penalty, mut forced, mut solve_ms) = (0.0, 0.0, 0, 0.0);
    while !env.is_done() {
        let a = policy.decide(env, &obs)?;
        let out = env.step(a)?;
        costs.push((out.info.stage_cost, out.info.applied.effective_action().index()));
        ret += out.reward;
        penalty += out.info.penalty;
        forced += usize::from(out.info.applied.forced);
        solve_ms += out.info.applied.solve_seconds * 1e3;
        obs = out.next;
    }
    let mut m = compute_metrics(&costs, penalty, env.rho_c(), env.dt())?;
    m.ret = ret;
    m.forced = forced;
    m.solve_ms = solve_ms;
    Ok((m, env.take_trace()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeMetrics>,
    pub ret: f64,
    pub e_mpc: f64,
    /// Pooled over episodes: total solves over total steps.
    pub a_f: f64,
    pub forced: f64,
    pub solve_ms: f64,
    pub failures: usize,
}

impl EvalSummary {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let n = episodes.len().max(1) as f64;
        let mean = |f: fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        Self {
            ret: mean(|m| m.ret),
            e_mpc: mean(|m| m.e_mpc),
            a_f: episodes.iter().map(|m| m.triggers).sum::<usize>() as f64 / episodes.iter().map(|m| m.steps).sum::<usize>().max(1) as f64,
            forced: mean(|m| m.forced as f64),
            solve_ms: mean(|m| m.solve_ms),
            failures: episodes.iter().filter(|m| m.failed).count(),
            episodes,
        }
    }
}

/// Runs `episodes` episodes spread over worker threads, each owning its own
/// environment and policy instance. Results are ordered by episode index.
pub fn evaluate<P, F>(config: &RunConfig, episodes: usize, make_policy: F) -> Result<EvalSummary>
where
    P: TriggerPolicy,
    F: Fn() -> P + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).clamp(1, episodes.max(1));
    let make_policy = &make_policy;
    let parts: Vec<Result<Vec<(usize, EpisodeMetrics)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    let mut env = config.env()?;
                    let mut policy = make_policy();
                    (w..episodes).step_by(workers).map(|i| Ok((i, run_episode(&mut env, &mut policy, false)?.0))).collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut all = Vec::with_capacity(episodes);
    for p in parts {
        all.extend(p?);
    }
    all.sort_by_key(|(i, _)| *i);
    Ok(EvalSummary::from_episodes(all.into_iter().map(|(_, m)| m).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub a_f: f64,
    pub target: f64,
}

/// Bisects the baseline threshold towards trigger frequency `target` and
/// returns the closest frequency reached. `A_f` is non-increasing in the threshold.
pub fn calibrate_threshold(config: &RunConfig, target: f64, iterations: usize) -> Result<Calibration> {
    let mut env = config.env()?;
    let mut a_f = |threshold: f64| -> Result<f64> { Ok(run_episode(&mut env, &mut ThresholdPolicy(threshold), false)?.0.a_f) };
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut best = Calibration { threshold: lo, a_f: a_f(lo)?, target };
    let consider = |threshold: f64, f: f64, best: &mut Calibration| {
        if (f - target).abs() < (best.a_f - target).abs() {
            *best = Calibration { threshold, a_f: f, target };
        }
    };
    let mut f_hi = a_f(hi)?;
    while f_hi > target && hi < 1e3 {
        hi *= 2.0;
        f_hi = a_f(hi)?;
    }
    consider(hi, f_hi, &mut best);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let f = a_f(mid)?;
        consider(mid, f, &mut best);
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::super::policy::{AlwaysTrigger, NeverTrigger};
    use super::*;

    #[test]
    fn degenerate_policies() {
        let c = RunConfig::default();
        let always = evaluate(&c, 2, || AlwaysTrigger).unwrap();
        assert_eq!(always.a_f, 1.0);
        assert_eq!(always.episodes.len(), 2);
        let never = evaluate(&c, 1, || NeverTrigger).unwrap();
        assert_eq!(never.a_f, 0.2);
        assert_eq!(never.forced, 20.0);
    }

    #[test]
    fn metrics_identity_on_episodes() {
        let c = RunConfig { train: super::super::TrainConfig { rho_c: 0.01, ..Default::default() }, ..Default::default() };
        let s = evaluate(&c, 1, || ThresholdPolicy(0.0)).unwrap();
        for m in &s.episodes {
            assert!(m.identity_residual(0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluation_is_reproducible() {
        let c = RunConfig::default();
        let a = evaluate(&c, 2, || NeverTrigger).unwrap();
        let b = evaluate(&c, 2, || NeverTrigger).unwrap();
        assert_eq!(a.ret.to_bits(), b.ret.to_bits());
        assert_eq!(a.e_mpc.to_bits(), b.e_mpc.to_bits());
    }
}
