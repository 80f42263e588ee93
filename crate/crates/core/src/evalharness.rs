//! Benchmark evaluation: run an adapter over a corpus file, extract the
//! tagged answer, and summarize accuracy, macro averages and ablation
//! deltas.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::QAItem;
use crate::endpoint::{EndpointConfig, JsonEndpoint};
use crate::error::{Error, Result};
use crate::grpo::{Checkpoint, FeatureHasher, PolicyParams, Prompt};
use crate::reward::{extract_answer, labels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub name: String,
    pub path: PathBuf,
    pub n_options: usize,
    #[serde(default)]
    pub expected_size: Option<usize>,
}

/// Known benchmarks: name, option count, test-split size.
pub const REGISTRY: [(&str, usize, Option<usize>); 9] = [
    ("MedXpertQA", 4, Some(2450)),
    ("MedQA", 4, Some(1273)),
    ("MedMCQA", 4, Some(4183)),
    ("MMLU-Pro (Biology)", 10, Some(717)),
    ("MMLU-Pro (Health)", 10, Some(818)),
    ("CareQA", 4, Some(5621)),
    ("JMED", 21, Some(1000)),
    ("PubMedQA", 3, Some(1000)),
    ("Medbullets", 5, None),
];

impl BenchmarkSpec {
    pub fn new(name: impl Into<String>, path: impl Into<PathBuf>, n_options: usize, expected_size: Option<usize>) -> Result<Self> {
        let spec = BenchmarkSpec {
            name: name.into(),
            path: path.into(),
            n_options,
            expected_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec for a registered benchmark read from `path`.
    pub fn registered(name: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let (name, n, size) = REGISTRY
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown benchmark `{name}`")))?;
        Self::new(*name, path, *n, *size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=21).contains(&self.n_options) {
            return Err(Error::ConfigInvalid(format!(
                "benchmark {} has n_options {}, expected 2..=21",
                self.name, self.n_options
            )));
        }
        Ok(())
    }
}

pub trait ModelAdapter: Sync {
    fn respond(&self, stem: &str, options: &BTreeMap<String, String>) -> Result<String>;
}

/// Greedy decoding of a trained linear policy.
pub struct PolicyAdapter {
    pub params: PolicyParams,
    pub hasher: FeatureHasher,
}

impl PolicyAdapter {
    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        PolicyAdapter {
            hasher: ck.hasher(),
            params: ck.params,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_checkpoint(Checkpoint::load(path)?))
    }
}

impl ModelAdapter for PolicyAdapter {
    fn respond(&self, stem: &str, options: &BTreeMap<String, String>) -> Result<String> {
        let prompt = Prompt {
            item_id: String::new(),
            n_options: options.len(),
            key: 'A',
            features: self.hasher.features_of(stem, options),
        };
        Ok(self.params.greedy_action(&prompt)?.render())
    }
}

pub struct ScriptedAdapter<F>(pub F);

impl<F: Fn(&str, &BTreeMap<String, String>) -> String + Sync> ModelAdapter for ScriptedAdapter<F> {
    fn respond(&self, stem: &str, options: &BTreeMap<String, String>) -> Result<String> {
        Ok((self.0)(stem, options))
    }
}

pub struct HttpAdapter {
    endpoint: JsonEndpoint,
}

impl HttpAdapter {
    pub fn new(config: EndpointConfig) -> Self {
        HttpAdapter {
            endpoint: JsonEndpoint::new(config),
        }
    }
}

#[derive(Serialize)]
struct AdapterRequest<'a> {
    stem: &'a str,
    options: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct AdapterResponse {
    completion: String,
}

impl ModelAdapter for HttpAdapter {
    fn respond(&self, stem: &str, options: &BTreeMap<String, String>) -> Result<String> {
        let resp: AdapterResponse = self
            .endpoint
            .post(&AdapterRequest { stem, options })
            .map_err(Error::AdapterUnavailable)?;
        Ok(resp.completion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub response: String,
    pub extracted: Option<char>,
    pub key: char,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub name: String,
    pub n_items: usize,
    pub n_correct: usize,
    pub n_unparseable: usize,
    pub accuracy: f64,
}

impl BenchmarkReport {
    pub fn from_results(name: &str, results: &[ItemResult]) -> Self {
        let n_items = results.len();
        let n_correct = results.iter().filter(|r| r.correct).count();
        BenchmarkReport {
            name: name.to_string(),
            n_items,
            n_correct,
            n_unparseable: results.iter().filter(|r| r.extracted.is_none()).count(),
            accuracy: if n_items == 0 { 0.0 } else { n_correct as f64 / n_items as f64 },
        }
    }
}

/// Queries every item once; responses without a valid tagged label count
/// as wrong and as unparseable.
pub fn evaluate_items(adapter: &dyn ModelAdapter, items: &[QAItem], n_options: usize) -> Result<Vec<ItemResult>> {
    let valid = labels(n_options);
    items
        .par_iter()
        .map(|item| {
            let response = adapter.respond(&item.stem, &item.options)?;
            let extracted = extract_answer(&response, &valid);
            Ok(ItemResult {
                id: item.id.clone(),
                key: item.key(),
                correct: extracted == Some(item.key()),
                extracted,
                response,
            })
        })
        .collect()
}

pub fn run_benchmark(adapter: &dyn ModelAdapter, spec: &BenchmarkSpec) -> Result<(BenchmarkReport, Vec<ItemResult>)> {
    spec.validate()?;
    let items: Vec<QAItem> = crate::jsonl::read(&spec.path)?;
    if let Some(expected) = spec.expected_size {
        if items.len() != expected {
            return Err(Error::SizeMismatch {
                name: spec.name.clone(),
                expected,
                found: items.len(),
            });
        }
    }
    let results = evaluate_items(adapter, &items, spec.n_options)?;
    Ok((BenchmarkReport::from_results(&spec.name, &results), results))
}

/// Rounds half away from zero at `decimals` places, absorbing the binary
/// representation error of values printed at that precision.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    x.signum() * ((x.abs() * scale + 0.5 + 1e-9).floor() / scale)
}

/// Unweighted mean of per-benchmark accuracies.
pub fn macro_average(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::Precondition("macro average of zero benchmarks".into()));
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

/// One model's evaluation across benchmarks; the data file written by
/// `eval` and read by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub benchmarks: Vec<BenchmarkReport>,
    pub macro_average: f64,
}

pub fn macro_report(model: &str, reports: Vec<BenchmarkReport>) -> Result<ModelReport> {
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    Ok(ModelReport {
        model: model.to_string(),
        macro_average: macro_average(&acc)?,
        benchmarks: reports,
    })
}

/// `variant - base`, in the units of the inputs.
pub fn ablation_delta(base: f64, variant: f64) -> f64 {
    variant - base
}

/// Signed, one decimal; a zero delta prints as `+0.0`.
pub fn format_delta(delta: f64) -> String {
    let r = round_half_up(delta, 1);
    if r == 0.0 {
        "+0.0".to_string()
    } else {
        format!("{r:+.1}")
    }
}

fn columns(models: &[ModelReport]) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    for m in models {
        for b in &m.benchmarks {
            if !cols.contains(&b.name) {
                cols.push(b.name.clone());
            }
        }
    }
    cols
}

/// Model rows, benchmark columns and an Avg column, as percentages with two
/// decimals. With `with_delta`, the first model is the base and a ΔAvg
/// column follows.
pub fn render_table(models: &[ModelReport], with_delta: bool) -> String {
    let cols = columns(models);
    let mut header = vec!["Model".to_string()];
    header.extend(cols.iter().cloned());
    header.push("Avg.".into());
    if with_delta {
        header.push("ΔAvg".into());
    }
    let base = models.first().map(|m| 100.0 * m.macro_average);
    let mut rows = vec![header];
    for m in models {
        let mut row = vec![m.model.clone()];
        for c in &cols {
            row.push(match m.benchmarks.iter().find(|b| &b.name == c) {
                Some(b) => format!("{:.2}", round_half_up(100.0 * b.accuracy, 2)),
                None => "-".into(),
            });
        }
        let avg = 100.0 * m.macro_average;
        row.push(format!("{:.2}", round_half_up(avg, 2)));
        if with_delta {
            row.push(format_delta(ablation_delta(base.unwrap_or(avg), avg)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if n == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, acc: f64) -> BenchmarkReport {
        BenchmarkReport {
            name: name.into(),
            n_items: 100,
            n_correct: (acc * 100.0) as usize,
            n_unparseable: 0,
            accuracy: acc,
        }
    }

    #[test]
    fn rounding_and_deltas() {
        assert_eq!(round_half_up(63.365, 2), 63.37);
        assert_eq!(round_half_up(0.125, 2), 0.13);
        assert_eq!(format_delta(ablation_delta(55.4, 63.4)), "+8.0");
        assert_eq!(format_delta(ablation_delta(72.9, 75.4)), "+2.5");
        assert_eq!(format_delta(ablation_delta(61.2, 61.2)), "+0.0");
        assert_eq!(format_delta(-0.04), "+0.0");
        assert_eq!(format_delta(-1.25), "-1.3");
    }

    #[test]
    fn macro_of_single_and_identical() {
        assert_eq!(macro_average(&[0.5]).unwrap(), 0.5);
        assert_eq!(macro_average(&[0.3; 4]).unwrap(), 0.3);
        assert!(macro_average(&[]).is_err());
    }

    #[test]
    fn registry_lookup() {
        let s = BenchmarkSpec::registered("jmed", "x.jsonl").unwrap();
        assert_eq!((s.n_options, s.expected_size), (21, Some(1000)));
        assert_eq!(BenchmarkSpec::registered("Medbullets", "x").unwrap().expected_size, None);
        assert!(BenchmarkSpec::registered("nope", "x").is_err());
        assert!(BenchmarkSpec::new("x", "x", 22, None).is_err());
    }

    #[test]
    fn table_layout() {
        let base = macro_report("Base", vec![report("MedQA", 0.5), report("JMED", 0.25)]).unwrap();
        let var = macro_report("Variant", vec![report("MedQA", 0.75), report("JMED", 0.25)]).unwrap();
        let t = render_table(&[base, var], true);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Model") && lines[0].ends_with("ΔAvg"));
        let tail = |l: &str| l.split_whitespace().rev().take(2).map(str::to_string).collect::<Vec<_>>();
        assert_eq!(tail(lines[2]), ["+0.0", "37.50"]);
        assert_eq!(tail(lines[3]), ["+12.5", "50.00"]);
    }
}
