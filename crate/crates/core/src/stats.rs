//! Welch's t-test on trial accuracies, the special functions behind it,
//! and report generation (per-trial CSV, p-value matrices, text summary).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1−x) = π/sin(πx)
        let s = (std::f64::consts::PI * x).sin();
        std::f64::consts::PI.ln() - s.abs().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEFFS[0];
        for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 3e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::Domain(format!("beta parameters must be positive, got ({a}, {b})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("beta argument {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // the continued fraction converges fastest for x < (a+1)/(a+b+2)
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(a, b, x) / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased variance (n − 1 divisor).
    pub var: f64,
}

pub fn summarize(values: &[f64]) -> Result<SampleSummary> {
    if values.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 samples, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(SampleSummary {
        n: values.len(),
        mean,
        var,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// True when both samples had zero variance and the t statistic is
    /// conventional rather than computed.
    pub degenerate: bool,
}

/// Welch's unequal-variance t-test with the Welch–Satterthwaite degrees of
/// freedom. When both variances vanish: equal means give p = 1, unequal
/// means give p = 0, flagged as degenerate.
pub fn welch_t_test(a: &SampleSummary, b: &SampleSummary) -> Result<WelchResult> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::Domain("Welch test needs n >= 2 per sample".into()));
    }
    let va = a.var / a.n as f64;
    let vb = b.var / b.n as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if a.mean == b.mean {
            WelchResult { t: 0.0, df: f64::INFINITY, p: 1.0, degenerate: true }
        } else {
            let t = if a.mean > b.mean { f64::INFINITY } else { f64::NEG_INFINITY };
            WelchResult { t, df: f64::INFINITY, p: 0.0, degenerate: true }
        });
    }
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0));
    let p = if t == 0.0 {
        1.0
    } else {
        regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))?
    };
    Ok(WelchResult { t, df, p, degenerate: false })
}

pub fn welch_from_values(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    welch_t_test(&summarize(a)?, &summarize(b)?)
}

/// One fine-tuning trial's outcome, the unit every report is built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task: String,
    pub head: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub conv_id: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pooling: Option<String>,
    pub params: usize,
    pub trial: usize,
    pub accuracy: f64,
}

impl TrialRecord {
    /// Stable configuration label, e.g. `qcnn-c10-gen` or `c2c-1d`.
    pub fn label(&self) -> String {
        match (self.conv_id, &self.pooling) {
            (Some(id), Some(pool)) => format!("{}-c{id}-{pool}", self.head),
            _ => self.head.clone(),
        }
    }

    pub fn is_quantum(&self) -> bool {
        self.head == "qcnn"
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfigStats {
    pub task: String,
    pub label: String,
    pub head: String,
    pub conv_id: Option<u8>,
    pub pooling: Option<String>,
    pub params: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
}

impl ConfigStats {
    pub fn is_quantum(&self) -> bool {
        self.head == "qcnn"
    }
}

/// Group records by (task, config label) and compute mean/std per group,
/// sorted by task then label.
pub fn aggregate(records: &[TrialRecord]) -> Vec<ConfigStats> {
    let mut groups: BTreeMap<(String, String), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.task.clone(), r.label())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((task, label), rs)| {
            let accuracies: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let n = accuracies.len();
            let mean = accuracies.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                    / (n as f64 - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            ConfigStats {
                task,
                label,
                head: rs[0].head.clone(),
                conv_id: rs[0].conv_id,
                pooling: rs[0].pooling.clone(),
                params: rs[0].params,
                n,
                mean,
                std,
                accuracies,
            }
        })
        .collect()
}

/// Per-trial CSV: `task,head,conv_id,pooling,params,trial,accuracy`.
pub fn write_aggregate_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["task", "head", "conv_id", "pooling", "params", "trial", "accuracy"])
        ?;
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.task.clone(), r.label(), r.trial));
    for r in sorted {
        w.write_record([
            r.task.clone(),
            r.head.clone(),
            r.conv_id.map(|v| v.to_string()).unwrap_or_default(),
            r.pooling.clone().unwrap_or_default(),
            r.params.to_string(),
            r.trial.to_string(),
            format!("{:.6}", r.accuracy),
        ])
        ?;
    }
    w.flush()?;
    Ok(())
}

/// p-value matrix for one task: one row per classical baseline, one column
/// per quantum configuration. A trailing `*` marks cells where p < 0.05
/// and the quantum mean exceeds the classical mean.
pub fn write_pvalue_csv(path: &Path, task_stats: &[ConfigStats]) -> Result<()> {
    let quantum: Vec<&ConfigStats> = task_stats.iter().filter(|s| s.is_quantum()).collect();
    let classical: Vec<&ConfigStats> = task_stats.iter().filter(|s| !s.is_quantum()).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["baseline".to_string()];
    header.extend(quantum.iter().map(|s| s.label.clone()));
    w.write_record(&header)?;
    for c in &classical {
        let mut row = vec![c.label.clone()];
        for q in &quantum {
            if c.n < 2 || q.n < 2 {
                row.push("nan".into());
                continue;
            }
            let res = welch_from_values(&q.accuracies, &c.accuracies)?;
            let mark = if res.p < 0.05 && q.mean > c.mean { "*" } else { "" };
            row.push(format!("{:.6e}{mark}", res.p));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable accuracy table, one block per task.
pub fn render_summary(stats: &[ConfigStats]) -> String {
    let mut out = Vec::new();
    let mut tasks: Vec<&str> = stats.iter().map(|s| s.task.as_str()).collect();
    tasks.dedup();
    for task in tasks {
        writeln!(out, "task {task}").unwrap();
        writeln!(out, "  {:<22} {:>7} {:>3}  {:>8}  {:>8}", "config", "params", "n", "mean", "std").unwrap();
        for s in stats.iter().filter(|s| s.task == task) {
            writeln!(
                out,
                "  {:<22} {:>7} {:>3}  {:>8.4}  {:>8.4}",
                s.label, s.params, s.n, s.mean, s.std
            )
            .unwrap();
        }
    }
    String::from_utf8(out).unwrap()
}
