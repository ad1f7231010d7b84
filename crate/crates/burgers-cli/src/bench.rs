//! Repeated timing of the recording and the reverse pass.

use std::io::Write;
use std::time::Duration;

use crate::adjoint::record_and_reverse;
use crate::config::{AdjointConfig, SolverConfig};
use crate::solver::SolverError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pass {
    Forward,
    Reverse,
}

impl Pass {
    pub fn name(self) -> &'static str {
        match self {
            Pass::Forward => "forward",
            Pass::Reverse => "reverse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Timing {
    pub fn from_samples(samples: &[Duration]) -> Self {
        let secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
        Timing {
            mean: secs.iter().sum::<f64>() / secs.len() as f64,
            min: secs.iter().copied().fold(f64::INFINITY, f64::min),
            max: secs.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub config: AdjointConfig,
    pub threads: usize,
    pub pass: Pass,
    pub timing: Timing,
    pub speedup: f64,
    pub efficiency: f64,
}

#[derive(Clone, Debug)]
pub struct BenchPlan {
    pub configs: Vec<AdjointConfig>,
    pub threads: Vec<usize>,
    pub reps: usize,
    pub warmups: usize,
}

impl BenchPlan {
    /// Thread counts `1, 2, 4, …` up to and including `max`.
    pub fn doubling(max: usize) -> Vec<usize> {
        let mut counts: Vec<usize> = std::iter::successors(Some(1usize), |t| Some(t * 2))
            .take_while(|&t| t < max)
            .collect();
        counts.push(max.max(1));
        counts
    }
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, config: AdjointConfig, threads: usize, pass: Pass) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.threads == threads && r.pass == pass)
    }

    /// Mean serial reverse time of atomic over classical adjoints.
    pub fn atomic_classical_ratio(&self) -> Option<f64> {
        let atomic = self.row(AdjointConfig::Atomic, 1, Pass::Reverse)?;
        let classical = self.row(AdjointConfig::Classical, 1, Pass::Reverse)?;
        Some(atomic.timing.mean / classical.timing.mean)
    }

    /// Writes the rows, followed by the ratio row when both serial reverse
    /// timings exist.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "config",
            "threads",
            "pass",
            "mean_s",
            "min_s",
            "max_s",
            "speedup",
            "efficiency",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.config.name().to_owned(),
                r.threads.to_string(),
                r.pass.name().to_owned(),
                format!("{:.6}", r.timing.mean),
                format!("{:.6}", r.timing.min),
                format!("{:.6}", r.timing.max),
                format!("{:.4}", r.speedup),
                format!("{:.4}", r.efficiency),
            ])?;
        }
        if let Some(ratio) = self.atomic_classical_ratio() {
            w.write_record([
                "atomic/classical",
                "1",
                "reverse-ratio",
                &format!("{ratio:.4}"),
                "",
                "",
                "",
                "",
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `warmups` discarded and `reps` timed recordings per configuration
/// and thread count. The serial run is always included as the speedup
/// baseline.
pub fn run_benchmark(
    base: &SolverConfig,
    plan: &BenchPlan,
    mut progress: impl FnMut(&BenchRow),
) -> Result<BenchReport, SolverError> {
    let mut threads = plan.threads.clone();
    threads.push(1);
    threads.sort_unstable();
    threads.dedup();
    let reps = plan.reps.max(1);

    let mut report = BenchReport::default();
    for &config in &plan.configs {
        let mut baseline = [0.0; 2];
        for &t in &threads {
            let cfg = SolverConfig {
                threads: t,
                adjoint: config,
                ..base.clone()
            };
            for _ in 0..plan.warmups {
                record_and_reverse(&cfg)?;
            }
            let mut forward = Vec::with_capacity(reps);
            let mut reverse = Vec::with_capacity(reps);
            for _ in 0..reps {
                let g = record_and_reverse(&cfg)?;
                forward.push(g.forward);
                reverse.push(g.reverse);
            }
            for (slot, pass, samples) in
                [(0, Pass::Forward, &forward), (1, Pass::Reverse, &reverse)]
            {
                let timing = Timing::from_samples(samples);
                if t == 1 {
                    baseline[slot] = timing.mean;
                }
                let speedup = baseline[slot] / timing.mean;
                let row = BenchRow {
                    config,
                    threads: t,
                    pass,
                    timing,
                    speedup,
                    efficiency: speedup / t as f64,
                };
                progress(&row);
                report.rows.push(row);
            }
        }
    }
    Ok(report)
}
