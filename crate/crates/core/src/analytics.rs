//! Experiment orchestration and statistics: paired MSF/PB sweeps, the
//! Monte-Carlo oracle for the reservation success probability, summary
//! statistics (mean/median/percentiles/ECDF), and the paired sign test used
//! by the comparison suite.

use crate::engine::config::{ConfigError, ScenarioConfig, StackMode};
use crate::engine::{RunOutput, SimError, Simulation};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

// ----------------------------------------------------------------------
// Closed-form cross-checks
// ----------------------------------------------------------------------

/// Monte-Carlo estimate of the first-attempt reservation success
/// probability: `trials` experiments, each drawing `k` independent slot
/// pairs that are free with probability `f_a/c` and `f_b/c` respectively.
/// Independent of the closed form it cross-checks.
pub fn mc_success_probability(
    f_a: f64,
    f_b: f64,
    c: f64,
    k: u32,
    trials: u32,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let ta = ((f_a / c) * 4_294_967_296.0) as u64;
    let tb = ((f_b / c) * 4_294_967_296.0) as u64;
    let mut successes = 0u32;
    for _ in 0..trials {
        for _ in 0..k {
            let a = u64::from(rng.next_u32()) < ta;
            let b = u64::from(rng.next_u32()) < tb;
            if a && b {
                successes += 1;
                break;
            }
        }
    }
    f64::from(successes) / f64::from(trials)
}

/// One cell of a success-probability sweep.
#[derive(Debug, Clone, Copy)]
pub struct PsuccessCell {
    pub f_a: f64,
    pub f_b: f64,
    pub c: f64,
    pub k: u32,
    pub analytic: f64,
    pub monte_carlo: Option<f64>,
}

/// Sweeps the closed form over a grid, optionally cross-checking every cell
/// against the Monte-Carlo oracle (seeded per cell for determinism).
pub fn psuccess_grid(
    f_a_values: &[f64],
    f_b_values: &[f64],
    c: f64,
    k_values: &[u32],
    verify_trials: Option<u32>,
    seed: u64,
) -> Vec<PsuccessCell> {
    let mut jobs = Vec::new();
    for &k in k_values {
        for &fa in f_a_values {
            for &fb in f_b_values {
                jobs.push((fa, fb, k));
            }
        }
    }
    jobs.par_iter()
        .map(|&(f_a, f_b, k)| {
            let analytic = crate::sixtop::first_attempt_success_probability(f_a, f_b, c, k);
            let monte_carlo = verify_trials.map(|trials| {
                let cell_seed = seed
                    ^ (f_a as u64).wrapping_mul(0x9e37_79b9)
                    ^ (f_b as u64).wrapping_mul(0x85eb_ca6b)
                    ^ u64::from(k) << 48;
                let mut rng = crate::rng::RngHub::new(cell_seed).stream(0, crate::rng::Purpose::Medium);
                mc_success_probability(f_a, f_b, c, k, trials, &mut rng)
            });
            PsuccessCell {
                f_a,
                f_b,
                c,
                k,
                analytic,
                monte_carlo,
            }
        })
        .collect()
}

// ----------------------------------------------------------------------
// Summary statistics
// ----------------------------------------------------------------------

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

/// Linear-interpolated percentile on a copy of the data; NaN when empty.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (p / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Empirical CDF: step points (value, cumulative fraction), outliers kept.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, (i + 1) as f64 / n))
        .collect()
}

/// One-sided paired sign test for "the first arm is smaller". Ties are
/// dropped; returns the exact binomial tail P[X >= wins | n, 1/2].
pub fn sign_test_p_less(diffs: &[f64]) -> f64 {
    let wins = diffs.iter().filter(|&&d| d < 0.0).count() as u32;
    let losses = diffs.iter().filter(|&&d| d > 0.0).count() as u32;
    binomial_upper_tail(wins + losses, wins)
}

/// P[Bin(n, 1/2) >= k], exact.
pub fn binomial_upper_tail(n: u32, k: u32) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut tail = 0.0;
    for i in k..=n {
        tail += binomial_coefficient(n, i);
    }
    tail / 2f64.powi(n as i32)
}

fn binomial_coefficient(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * f64::from(n - i) / f64::from(i + 1);
    }
    acc
}

// ----------------------------------------------------------------------
// Experiment plans
// ----------------------------------------------------------------------

/// A paired sweep: `modes x nodes x periods x seeds`, sharing topologies
/// across arms through the seed. Extra keys in the plan file are applied to
/// every scenario as overrides.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub modes: Vec<StackMode>,
    pub nodes: Vec<u16>,
    pub periods: Vec<f64>,
    pub seeds: Vec<u64>,
    pub overrides: Vec<(String, String)>,
}

impl Default for ExperimentPlan {
    fn default() -> ExperimentPlan {
        ExperimentPlan {
            modes: vec![StackMode::Msf, StackMode::Pb],
            nodes: vec![50],
            periods: vec![15.0],
            seeds: (1..=20).collect(),
            overrides: Vec::new(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|v| {
            v.trim().parse::<T>().map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                reason: e.to_string(),
            })
        })
        .collect()
}

fn parse_seed_spec(value: &str) -> Result<Vec<u64>, ConfigError> {
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| ConfigError::BadValue {
            key: "seeds".into(),
            reason: format!("bad range start in `{value}`"),
        })?;
        let hi: u64 = hi.trim().parse().map_err(|_| ConfigError::BadValue {
            key: "seeds".into(),
            reason: format!("bad range end in `{value}`"),
        })?;
        if lo > hi {
            return Err(ConfigError::BadValue {
                key: "seeds".into(),
                reason: "range start exceeds end".into(),
            });
        }
        Ok((lo..=hi).collect())
    } else {
        parse_list("seeds", value)
    }
}

impl ExperimentPlan {
    /// Parses the flat plan format: `modes`, `nodes`, `periods`, `seeds`
    /// plus arbitrary scenario overrides. Unknown scenario keys are
    /// rejected just like in a scenario file.
    pub fn parse(text: &str) -> Result<ExperimentPlan, ConfigError> {
        let mut plan = ExperimentPlan::default();
        let mut probe = ScenarioConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(lineno + 1));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "modes" => {
                    plan.modes = value
                        .split(',')
                        .map(|m| match m.trim() {
                            "MSF" | "msf" => Ok(StackMode::Msf),
                            "PB" | "pb" => Ok(StackMode::Pb),
                            other => Err(ConfigError::BadValue {
                                key: "modes".into(),
                                reason: format!("expected MSF or PB, got {other}"),
                            }),
                        })
                        .collect::<Result<_, _>>()?;
                }
                "nodes" => plan.nodes = parse_list(key, value)?,
                "periods" => plan.periods = parse_list(key, value)?,
                "seeds" => plan.seeds = parse_seed_spec(value)?,
                _ => {
                    // Validate the override against the scenario schema now.
                    probe.apply(key, value)?;
                    plan.overrides.push((key.to_string(), value.to_string()));
                }
            }
        }
        Ok(plan)
    }

    /// Expands to concrete configs; run_index follows the nesting order
    /// modes > nodes > periods > seeds.
    pub fn expand(&self) -> Result<Vec<ScenarioConfig>, ConfigError> {
        let mut configs = Vec::new();
        let mut run_index = 0u32;
        for &mode in &self.modes {
            for &n in &self.nodes {
                for &period in &self.periods {
                    for &seed in &self.seeds {
                        let mut cfg = ScenarioConfig::default();
                        for (k, v) in &self.overrides {
                            cfg.apply(k, v)?;
                        }
                        cfg.stack_mode = mode;
                        cfg.n_nodes = n;
                        cfg.app_period_seconds = period;
                        cfg.rng_seed = seed;
                        cfg.run_index = run_index;
                        cfg.validate()?;
                        configs.push(cfg);
                        run_index += 1;
                    }
                }
            }
        }
        Ok(configs)
    }
}

/// Per-run digest kept by the orchestrator (raw packet rows are handled by
/// the caller's sink to keep memory flat).
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_index: u32,
    pub seed: u64,
    pub mode: StackMode,
    pub n_nodes: u16,
    pub period_s: f64,
    pub topology_hash: u64,
    pub joined: u32,
    pub mean_join_s: Option<f64>,
    pub generated: u64,
    pub delivered: u64,
    pub drop_qfull: u64,
    pub charge_total_uc: f64,
    pub median_latency_s: Option<f64>,
    pub mean_jitter_s: Option<f64>,
    pub violations: usize,
}

impl RunSummary {
    pub fn from_output(out: &RunOutput) -> RunSummary {
        let latencies: Vec<f64> = out.packets.iter().map(|p| p.latency_s).collect();
        let jitters: Vec<f64> = out.packets.iter().filter_map(|p| p.jitter_s).collect();
        RunSummary {
            run_index: out.config.run_index,
            seed: out.config.rng_seed,
            mode: out.config.stack_mode,
            n_nodes: out.config.n_nodes,
            period_s: out.config.app_period_seconds,
            topology_hash: out.topology_hash,
            joined: out.joined_count,
            mean_join_s: out.mean_join_time_s(),
            generated: out.generated_data,
            delivered: out.delivered_data,
            drop_qfull: out
                .nodes
                .iter()
                .map(|n| n.drops.qfull_total())
                .sum(),
            charge_total_uc: out.charge_total_uc,
            median_latency_s: if latencies.is_empty() { None } else { Some(median(&latencies)) },
            mean_jitter_s: if jitters.is_empty() { None } else { Some(mean(&jitters)) },
            violations: out.violations.len(),
        }
    }
}

pub const SUMMARY_CSV_HEADER: &str = "run,seed,mode,n_nodes,period_s,topo_hash,joined,mean_join_s,generated,delivered,drop_qfull,charge_uC,median_latency_s,mean_jitter_s,violations";

pub fn summary_csv(summaries: &[RunSummary]) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for s in summaries {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{:016x},{},{},{},{},{},{:.1},{},{}\n",
            s.run_index,
            s.seed,
            s.mode.label(),
            s.n_nodes,
            s.period_s,
            s.topology_hash,
            s.joined,
            fmt_opt(s.mean_join_s),
            s.generated,
            s.delivered,
            s.drop_qfull,
            s.charge_total_uc,
            fmt_opt(s.median_latency_s),
            fmt_opt(s.mean_jitter_s),
        ));
        let _ = out.pop();
        out.push(',');
        out.push_str(&s.violations.to_string());
        out.push('\n');
    }
    out
}

/// Runs every config, applying `sink` to each finished run (CSV writing,
/// aggregation) in parallel; summaries come back ordered by run_index.
/// The paired design is asserted: arms differing only in stack mode must
/// share the topology hash.
pub fn execute_plan<F>(configs: Vec<ScenarioConfig>, threads: usize, sink: F) -> Result<Vec<RunSummary>, SimError>
where
    F: Fn(&RunOutput) + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    let mut summaries: Vec<RunSummary> = pool.install(|| {
        configs
            .into_par_iter()
            .map(|cfg| {
                let out = Simulation::run(cfg)?;
                sink(&out);
                Ok(RunSummary::from_output(&out))
            })
            .collect::<Result<Vec<_>, SimError>>()
    })?;
    summaries.sort_by_key(|s| s.run_index);

    // Paired-seed discipline: identical topologies across modes.
    let mut by_arm: BTreeMap<(u64, u16), u64> = BTreeMap::new();
    for s in &summaries {
        let key = (s.seed, s.n_nodes);
        match by_arm.get(&key) {
            None => {
                by_arm.insert(key, s.topology_hash);
            }
            Some(&h) => assert_eq!(
                h, s.topology_hash,
                "paired arms for seed {} diverged in topology",
                s.seed
            ),
        }
    }
    Ok(summaries)
}

/// Thread budget from the environment (`SIXSIM_THREADS`), defaulting to the
/// machine's parallelism.
pub fn thread_budget() -> usize {
    std::env::var("SIXSIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

// ----------------------------------------------------------------------
// CSV summarization
// ----------------------------------------------------------------------

/// Minimal CSV reader for the schemas this crate emits.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or("empty CSV")?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
        if row.len() != header.len() {
            return Err(format!("row {} has {} fields, expected {}", i + 2, row.len(), header.len()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Group statistics over one numeric metric column.
#[derive(Debug, Clone)]
pub struct GroupStats {
    pub group: Vec<String>,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
    pub values: Vec<f64>,
}

/// Groups rows by the named columns and summarizes `metric`. Rows with an
/// empty metric field are skipped; a group of empty values yields NaNs.
pub fn group_stats(
    header: &[String],
    rows: &[Vec<String>],
    group_by: &[String],
    metric: &str,
) -> Result<Vec<GroupStats>, String> {
    let metric_idx = header
        .iter()
        .position(|h| h == metric)
        .ok_or_else(|| format!("no column `{metric}`"))?;
    let group_idx: Vec<usize> = group_by
        .iter()
        .map(|g| {
            header
                .iter()
                .position(|h| h == g)
                .ok_or_else(|| format!("no column `{g}`"))
        })
        .collect::<Result<_, _>>()?;
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for row in rows {
        let key: Vec<String> = group_idx.iter().map(|&i| row[i].clone()).collect();
        let bucket = groups.entry(key).or_default();
        let field = &row[metric_idx];
        if field.is_empty() {
            continue;
        }
        let v: f64 = field
            .parse()
            .map_err(|_| format!("non-numeric value `{field}` in column `{metric}`"))?;
        bucket.push(v);
    }
    Ok(groups
        .into_iter()
        .map(|(group, values)| GroupStats {
            count: values.len(),
            mean: mean(&values),
            median: median(&values),
            p5: percentile(&values, 5.0),
            p95: percentile(&values, 95.0),
            group,
            values,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sixtop::first_attempt_success_probability;

    #[test]
    fn oracle_agrees_with_closed_form_midpoint() {
        let mut rng = crate::rng::RngHub::new(5).stream(0, crate::rng::Purpose::Medium);
        let mc = mc_success_probability(50.0, 50.0, 100.0, 5, 200_000, &mut rng);
        let analytic = first_attempt_success_probability(50.0, 50.0, 100.0, 5);
        assert!((analytic - 0.7627).abs() < 1e-4);
        assert!((mc - analytic).abs() < 0.005, "mc {mc} vs analytic {analytic}");
    }

    #[test]
    fn stats_basics() {
        assert_eq!(mean(&[2.0, 4.0]), 3.0);
        assert_eq!(median(&[1.0, 3.0, 2.0]), 2.0);
        // Single-row input: mean = median = the value.
        assert_eq!(mean(&[7.5]), 7.5);
        assert_eq!(median(&[7.5]), 7.5);
        // Two-point ECDF steps at 0.5 and 1.0.
        assert_eq!(ecdf(&[4.0, 1.0]), vec![(1.0, 0.5), (4.0, 1.0)]);
    }

    #[test]
    fn sign_test_tails() {
        // 15 of 20 wins: p ~ 0.0207 < 0.05.
        let mut diffs = vec![-1.0; 15];
        diffs.extend(vec![1.0; 5]);
        let p = sign_test_p_less(&diffs);
        assert!((p - 0.02069).abs() < 1e-4, "p = {p}");
        // Even split is nowhere near significant.
        let mut even = vec![-1.0; 10];
        even.extend(vec![1.0; 10]);
        assert!(sign_test_p_less(&even) > 0.5);
        // Ties drop out entirely.
        assert_eq!(sign_test_p_less(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn plan_parsing_and_expansion() {
        let plan = ExperimentPlan::parse(
            "modes = MSF,PB\nnodes = 50\nperiods = 5,15\nseeds = 1..3\nduration_minutes = 1\n",
        )
        .unwrap();
        assert_eq!(plan.seeds, vec![1, 2, 3]);
        let configs = plan.expand().unwrap();
        // 2 modes x 1 n x 2 periods x 3 seeds.
        assert_eq!(configs.len(), 12);
        assert_eq!(configs[0].run_index, 0);
        assert_eq!(configs[11].run_index, 11);
        assert!(configs.iter().all(|c| c.duration_minutes == 1.0));
    }

    #[test]
    fn plan_rejects_unknown_override() {
        assert!(ExperimentPlan::parse("warp_speed = 9\n").is_err());
    }

    #[test]
    fn group_stats_on_csv() {
        let text = "mode,period,join\nMSF,5,10\nMSF,5,14\nPB,5,8\nPB,5,\n";
        let (header, rows) = read_csv(text).unwrap();
        let stats = group_stats(&header, &rows, &["mode".into()], "join").unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].group, vec!["MSF"]);
        assert_eq!(stats[0].mean, 12.0);
        assert_eq!(stats[1].count, 1);
    }
}
