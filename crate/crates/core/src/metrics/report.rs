use std::fmt::Write;

use serde::{Deserialize, Serialize};

/// Metrics from one sampling repetition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMetrics {
    pub seed: u64,
    pub fgd: f64,
    pub srgr: f64,
    pub beat_align: Option<f64>,
}

/// Averages over repetitions plus the per-repetition values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub clips: usize,
    pub repetitions: Vec<RepetitionMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub fn fgd(&self) -> f64 {
        mean(self.repetitions.iter().map(|r| r.fgd)).unwrap_or(f64::NAN)
    }

    pub fn srgr(&self) -> f64 {
        mean(self.repetitions.iter().map(|r| r.srgr)).unwrap_or(f64::NAN)
    }

    /// Mean over repetitions where beats were found on both sides.
    pub fn beat_align(&self) -> Option<f64> {
        mean(self.repetitions.iter().filter_map(|r| r.beat_align))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metrics report: {}", self.label);
        let _ = writeln!(s, "  clips        {}", self.clips);
        let _ = writeln!(s, "  repetitions  {}", self.repetitions.len());
        let _ = writeln!(s, "  FGD          {:.6}", self.fgd());
        let _ = writeln!(s, "  SRGR         {:.6}", self.srgr());
        let _ = writeln!(s, "  BeatAlign    {}", fmt_opt(self.beat_align()));
        s
    }

    /// One row per repetition followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,seed,fgd,srgr,beat_align\n");
        for r in &self.repetitions {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{}", self.label, r.seed, r.fgd, r.srgr, fmt_opt(r.beat_align));
        }
        let _ = writeln!(s, "{},mean,{:.6},{:.6},{}", self.label, self.fgd(), self.srgr(), fmt_opt(self.beat_align()));
        s
    }
}
