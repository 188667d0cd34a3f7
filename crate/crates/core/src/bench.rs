//! Runs a workload without reuse, with Store injection, and against a warm
//! repository, and reports overhead and speedup.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::dfs::{Dfs, DfsError};
use crate::engine::{sink_contents, submit, EngineError, SubmitConfig, SubmitReport};
use crate::exec::ExecConfig;
use crate::repository::{RepoError, Repository};
use crate::subjob::Heuristic;
use crate::workloads::{pigmix_script, qf_script, qp_script, Q1, Q2};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Dfs(#[from] DfsError),
    #[error("scratch directory '{path}': {source}")]
    Scratch {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One measured point: `setup` warms the repository, `target` is timed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub label: String,
    pub setup: String,
    pub target: String,
}

pub fn qp_scenarios(data: &str, widths: impl IntoIterator<Item = usize>) -> Vec<Scenario> {
    widths
        .into_iter()
        .map(|w| {
            let s = qp_script(data, w, "bench_out/qp");
            Scenario {
                label: format!("QP{w}"),
                setup: s.clone(),
                target: s,
            }
        })
        .collect()
}

pub fn qf_scenarios(data: &str, fields: impl IntoIterator<Item = usize>) -> Vec<Scenario> {
    fields
        .into_iter()
        .map(|f| {
            let s = qf_script(data, f, "0", "bench_out/qf");
            Scenario {
                label: format!("field{f}"),
                setup: s.clone(),
                target: s,
            }
        })
        .collect()
}

pub fn q1q2_scenario(page_views: &str, users: &str) -> Scenario {
    Scenario {
        label: "Q1->Q2".into(),
        setup: pigmix_script(Q1, page_views, users, "bench_out/l2"),
        target: pigmix_script(Q2, page_views, users, "bench_out/l3"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub label: String,
    /// Seconds per trial.
    pub baseline: Vec<f64>,
    pub instrumented: Vec<f64>,
    pub reused: Vec<f64>,
    pub overhead: f64,
    pub speedup: f64,
    /// Bytes written by injected Stores in one instrumented run.
    pub stored_bytes: u64,
    pub injection_points: Vec<String>,
    pub jobs_baseline: usize,
    pub jobs_reused: usize,
    pub reuse_matches: usize,
    /// Instrumented and plain runs produced the same sink contents.
    pub outputs_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendCheck {
    pub name: String,
    pub values: Vec<f64>,
    pub increasing: bool,
    pub inversions: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub workload: String,
    pub heuristic: Heuristic,
    pub trials: usize,
    pub points: Vec<BenchPoint>,
    pub trends: Vec<TrendCheck>,
}

impl BenchReport {
    pub fn trends_hold(&self) -> bool {
        self.trends.iter().all(|t| t.holds)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "workload {} (heuristic {}, {} trials)", self.workload, self.heuristic, self.trials);
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>12} {:>10} {:>9} {:>8} {:>14} {:>5}",
            "point", "baseline", "instrumented", "reused", "overhead", "speedup", "stored_bytes", "jobs"
        );
        for p in &self.points {
            let _ = writeln!(
                out,
                "{:<10} {:>10.3} {:>12.3} {:>10.3} {:>9.3} {:>8.3} {:>14} {:>2}->{}",
                p.label,
                mean(&p.baseline),
                mean(&p.instrumented),
                mean(&p.reused),
                p.overhead,
                p.speedup,
                p.stored_bytes,
                p.jobs_baseline,
                p.jobs_reused
            );
        }
        for t in &self.trends {
            let _ = writeln!(
                out,
                "trend {:<24} {} ({} inversion{})",
                t.name,
                if t.holds { "holds" } else { "FAILS" },
                t.inversions,
                if t.inversions == 1 { "" } else { "s" }
            );
        }
        out
    }

    /// Raw per-trial timings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point,config,trial,seconds\n");
        for p in &self.points {
            for (name, v) in [("baseline", &p.baseline), ("instrumented", &p.instrumented), ("reused", &p.reused)] {
                for (i, s) in v.iter().enumerate() {
                    let _ = writeln!(out, "{},{name},{i},{s:.6}", p.label);
                }
            }
        }
        out
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Monotonicity with at most one adjacent inversion, itself no larger than
/// `tolerance` relative to the earlier value.
pub fn check_trend(name: &str, values: &[f64], increasing: bool, tolerance: f64) -> TrendCheck {
    let mut inversions = 0;
    let mut within = true;
    for w in values.windows(2) {
        let (a, b) = (w[0], w[1]);
        let broken = if increasing { b < a } else { b > a };
        if broken {
            inversions += 1;
            if (b - a).abs() > tolerance * a.abs() {
                within = false;
            }
        }
    }
    TrendCheck {
        name: name.to_string(),
        values: values.to_vec(),
        increasing,
        inversions,
        holds: inversions <= 1 && within,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub exec: ExecConfig,
    pub heuristic: Heuristic,
    pub trials: usize,
    /// Directory for the throwaway repositories.
    pub scratch: PathBuf,
}

fn fresh_repo(dir: &Path) -> Result<Repository, BenchError> {
    let scratch = |source| BenchError::Scratch {
        path: dir.display().to_string(),
        source,
    };
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(scratch)?;
    }
    Ok(Repository::open(dir)?)
}

fn secs(r: &SubmitReport) -> f64 {
    r.stats.wall_time.as_secs_f64()
}

/// Remove every dataset the benchmark wrote.
fn clear_outputs(dfs: &Dfs) -> Result<(), DfsError> {
    for prefix in ["bench_out", "restore", "tmp"] {
        for p in dfs.list(Some(prefix))? {
            dfs.delete(&p)?;
        }
    }
    Ok(())
}

pub fn run_scenario(dfs: &Dfs, s: &Scenario, cfg: &BenchConfig) -> Result<BenchPoint, BenchError> {
    let exec = ExecConfig {
        overwrite: true,
        ..cfg.exec.clone()
    };
    let repo_dir = cfg.scratch.join("repo");
    let plain = SubmitConfig::plain(exec.clone());
    let instrumented_cfg = SubmitConfig {
        exec: exec.clone(),
        reuse: false,
        heuristic: Some(cfg.heuristic),
        admit: true,
        canonical: false,
    };
    let reuse_cfg = SubmitConfig {
        exec: exec.clone(),
        reuse: true,
        heuristic: None,
        admit: false,
        canonical: false,
    };
    let trials = cfg.trials.max(1);

    // The three configurations alternate within each trial so that slow
    // drift in machine speed affects numerator and denominator alike.
    let mut baseline = Vec::new();
    let mut instrumented = Vec::new();
    let mut reused = Vec::new();
    let mut plain_out = None;
    let mut jobs_baseline = 0;
    let mut stored_bytes = 0;
    let mut injection_points = Vec::new();
    let mut outputs_match = true;
    let mut jobs_reused = 0;
    let mut reuse_matches = 0;
    for t in 0..trials {
        clear_outputs(dfs)?;
        let repo = fresh_repo(&repo_dir)?;
        let r = submit(dfs, &repo, &s.target, &plain)?;
        baseline.push(secs(&r));
        jobs_baseline = r.jobs_executed;
        if plain_out.is_none() {
            plain_out = Some(sink_contents(dfs, &r.sinks)?);
        }

        clear_outputs(dfs)?;
        let repo = fresh_repo(&repo_dir)?;
        let r = submit(dfs, &repo, &s.target, &instrumented_cfg)?;
        instrumented.push(secs(&r));
        if t == 0 {
            outputs_match = plain_out.as_ref() == Some(&sink_contents(dfs, &r.sinks)?);
            stored_bytes = r.admissions.iter().filter(|a| a.op_id.is_some()).map(|a| a.bytes).sum();
            injection_points = r
                .points
                .iter()
                .filter(|p| !p.feeds_store)
                .map(|p| format!("{}:{}", p.job_id, p.op_id))
                .collect();
        }

        clear_outputs(dfs)?;
        let repo = fresh_repo(&repo_dir)?;
        submit(dfs, &repo, &s.setup, &instrumented_cfg)?;
        let r = submit(dfs, &repo, &s.target, &reuse_cfg)?;
        reused.push(secs(&r));
        jobs_reused = r.jobs_executed;
        reuse_matches = r.rewrite.matches.len();
    }
    clear_outputs(dfs)?;
    let _ = std::fs::remove_dir_all(&repo_dir);

    let (b, i, r) = (mean(&baseline), mean(&instrumented), mean(&reused));
    Ok(BenchPoint {
        label: s.label.clone(),
        overhead: if b > 0.0 { i / b } else { 1.0 },
        speedup: if r > 0.0 { b / r } else { 1.0 },
        baseline,
        instrumented,
        reused,
        stored_bytes,
        injection_points,
        jobs_baseline,
        jobs_reused,
        reuse_matches,
        outputs_match,
    })
}

/// Allowed relative size of the single tolerated trend inversion.
pub const TREND_TOLERANCE: f64 = 0.05;

/// Run every scenario and check that overhead rises and speedup falls
/// along the list.
pub fn run_benchmark(dfs: &Dfs, workload: &str, scenarios: &[Scenario], cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let points = scenarios
        .iter()
        .map(|s| run_scenario(dfs, s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut trends = Vec::new();
    if points.len() > 1 {
        let overhead: Vec<f64> = points.iter().map(|p| p.overhead).collect();
        let speedup: Vec<f64> = points.iter().map(|p| p.speedup).collect();
        trends.push(check_trend("overhead non-decreasing", &overhead, true, TREND_TOLERANCE));
        trends.push(check_trend("speedup non-increasing", &speedup, false, TREND_TOLERANCE));
    }
    Ok(BenchReport {
        workload: workload.to_string(),
        heuristic: cfg.heuristic,
        trials: cfg.trials,
        points,
        trends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_pigmix_like, generate_synthetic, PigMixSpec, SyntheticSpec};

    #[test]
    fn trend_allows_one_small_inversion() {
        assert!(check_trend("t", &[1.0, 2.0, 3.0], true, 0.05).holds);
        assert!(check_trend("t", &[1.0, 2.0, 1.95, 3.0], true, 0.05).holds);
        assert!(!check_trend("t", &[1.0, 2.0, 1.5, 3.0], true, 0.05).holds);
        assert!(!check_trend("t", &[1.0, 0.99, 2.0, 1.99], true, 0.05).holds);
        assert!(check_trend("t", &[3.0, 2.0, 1.0], false, 0.05).holds);
    }

    fn cfg(dir: &Path, h: Heuristic) -> BenchConfig {
        BenchConfig {
            exec: ExecConfig {
                parallelism: 2,
                reducers: 2,
                chunk_size: 1 << 20,
                overwrite: true,
            },
            heuristic: h,
            trials: 1,
            scratch: dir.join("scratch"),
        }
    }

    #[test]
    fn small_qp_run_reuses_the_projection() {
        let dir = tempfile::tempdir().unwrap();
        let dfs = Dfs::open(dir.path().join("dfs")).unwrap();
        generate_synthetic(&dfs, "syn", &SyntheticSpec::new(3000, 1), false).unwrap();
        let rep = run_benchmark(&dfs, "qp", &qp_scenarios("syn", [1, 3]), &cfg(dir.path(), Heuristic::Conservative)).unwrap();
        for p in &rep.points {
            assert!(p.outputs_match);
            assert!(p.reuse_matches >= 1, "{p:?}");
            assert_eq!(p.injection_points.len(), 1);
        }
        assert!(rep.points[0].stored_bytes < rep.points[1].stored_bytes);
        assert!(rep.to_table().contains("QP3"));
        assert_eq!(rep.to_csv().lines().count(), 1 + 2 * 3);
        assert!(dfs.list(Some("bench_out")).unwrap().is_empty());
    }

    #[test]
    fn q1q2_reuses_the_whole_join() {
        let dir = tempfile::tempdir().unwrap();
        let dfs = Dfs::open(dir.path().join("dfs")).unwrap();
        let spec = PigMixSpec { page_views: 2000, users: 200, seed: 5 };
        generate_pigmix_like(&dfs, "pv", "us", &spec, false).unwrap();
        let p = run_scenario(&dfs, &q1q2_scenario("pv", "us"), &cfg(dir.path(), Heuristic::Aggressive)).unwrap();
        assert_eq!((p.jobs_baseline, p.jobs_reused), (2, 1));
        assert!(p.outputs_match);
    }
}
