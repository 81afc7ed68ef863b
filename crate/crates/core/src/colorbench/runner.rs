use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::{region_color_distance, ColorMetricsReport};
use super::suite::{BenchmarkCase, ColorCategory};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::regionfuse::GenerationConfig;
use crate::richdoc::{extract_spans, Rgb, RichTextDocument, WordTokenizer};
use crate::sampler::{uniform_image, PaletteTarget, ToyDenoiser, ToyLayoutSpec, ToyTarget};
use crate::tensor::{Grid, Map2, Tensor};

/// Span id of the single colored span in a benchmark document.
const COLORED_SPAN: usize = 1;

/// A generated image and the region its colored span occupies.
#[derive(Debug, Clone)]
pub struct CaseOutput {
    pub image: Tensor,
    pub region: Map2,
}

/// Produces the image for one case.
pub trait CaseRunner: Send + Sync {
    fn run(&self, case: &BenchmarkCase, config: &GenerationConfig) -> Result<CaseOutput>;
}

/// Extra per-case metric such as a style or question-answering score.
pub trait CaseScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, case: &BenchmarkCase, image: &Tensor) -> std::result::Result<f64, String>;
}

/// Runs each case through an [`Engine`] and measures the colored span's
/// token map.
pub struct EngineRunner<F> {
    build: F,
}

impl<F> EngineRunner<F>
where
    F: Fn(&BenchmarkCase, &RichTextDocument) -> Result<Engine> + Send + Sync,
{
    pub fn new(build: F) -> Self {
        EngineRunner { build }
    }
}

impl<F> CaseRunner for EngineRunner<F>
where
    F: Fn(&BenchmarkCase, &RichTextDocument) -> Result<Engine> + Send + Sync,
{
    fn run(&self, case: &BenchmarkCase, config: &GenerationConfig) -> Result<CaseOutput> {
        let doc = case.document()?;
        let engine = (self.build)(case, &doc)?;
        let res = engine.generate(&doc, config)?;
        let region = res
            .token_maps
            .get(COLORED_SPAN)
            .cloned()
            .ok_or_else(|| Error::Invariant("no token map for the colored span".into()))?;
        Ok(CaseOutput {
            image: res.image,
            region,
        })
    }
}

/// Toy backend laid out from each case's spans. Region prompts converge to
/// the case's exact target color and the plain prompt to palette patches,
/// so a correct pipeline scores near zero.
pub fn toy_self_test_runner(image: Grid) -> impl CaseRunner {
    EngineRunner::new(move |case: &BenchmarkCase, doc: &RichTextDocument| {
        let spans = extract_spans(doc, &WordTokenizer)?;
        let layout = ToyLayoutSpec::for_spans(image, &spans);
        let plain = case.prompt.clone();
        let color = case.target_color.normalized();
        let target = move |prompt: &str, layout: &ToyLayoutSpec| {
            if prompt.trim().is_empty() || prompt == plain {
                PaletteTarget::default().target(prompt, layout)
            } else {
                uniform_image(layout.image, color)
            }
        };
        let backend = ToyDenoiser::with_target(layout, Arc::new(target))?;
        Ok(Engine::new(Arc::new(backend)))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case_id: String,
    pub category: ColorCategory,
    pub color_name: String,
    pub target_color: Rgb,
    /// Absent when the case was skipped.
    pub metrics: Option<ColorMetricsReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: ColorCategory,
    pub cases: usize,
    pub skipped: usize,
    /// Mean over evaluated cases of the per-case mean distance.
    pub mean_distance: Option<f64>,
    /// Mean over evaluated cases of the per-case minimum distance.
    pub min_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub categories: Vec<CategorySummary>,
    pub rows: Vec<CaseRow>,
}

#[derive(Clone, Default)]
pub struct BenchmarkOptions {
    /// Concurrent cases; zero uses the available parallelism.
    pub workers: usize,
    pub scorers: Vec<Arc<dyn CaseScorer>>,
}

/// Runs every case and aggregates per category. A failing case becomes a
/// skipped row instead of aborting the run.
pub fn run_color_benchmark(
    runner: &dyn CaseRunner,
    suite: &[BenchmarkCase],
    config: &GenerationConfig,
    options: &BenchmarkOptions,
) -> BenchmarkReport {
    let workers = match options.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(suite.len().max(1));

    let next = AtomicUsize::new(0);
    let mut rows: Vec<(usize, CaseRow)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(case) = suite.get(i) else { break };
                        out.push((i, run_case(runner, case, config, &options.scorers)));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    rows.sort_by_key(|(i, _)| *i);
    let rows: Vec<CaseRow> = rows.into_iter().map(|(_, r)| r).collect();
    BenchmarkReport {
        categories: summarize(&rows),
        rows,
    }
}

fn run_case(
    runner: &dyn CaseRunner,
    case: &BenchmarkCase,
    config: &GenerationConfig,
    scorers: &[Arc<dyn CaseScorer>],
) -> CaseRow {
    let mut row = CaseRow {
        case_id: case.case_id.clone(),
        category: case.category,
        color_name: case.color_name.clone(),
        target_color: case.target_color,
        metrics: None,
        scores: BTreeMap::new(),
        error: None,
    };
    let out = runner
        .run(case, config)
        .and_then(|o| region_color_distance(&o.image, &o.region, case.target_color.normalized()).map(|m| (o, m)));
    match out {
        Ok((o, m)) => {
            row.metrics = Some(m);
            let mut failures = Vec::new();
            for scorer in scorers {
                match scorer.score(case, &o.image) {
                    Ok(v) => {
                        row.scores.insert(scorer.name().to_string(), v);
                    }
                    Err(e) => failures.push(format!("{}: {e}", scorer.name())),
                }
            }
            if !failures.is_empty() {
                row.error = Some(failures.join("; "));
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn summarize(rows: &[CaseRow]) -> Vec<CategorySummary> {
    let mut out = Vec::new();
    for category in ColorCategory::ALL {
        let of: Vec<&CaseRow> = rows.iter().filter(|r| r.category == category).collect();
        if of.is_empty() {
            continue;
        }
        let done: Vec<&ColorMetricsReport> = of.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let mean = |f: fn(&ColorMetricsReport) -> f64| {
            (!done.is_empty()).then(|| done.iter().map(|m| f(m)).sum::<f64>() / done.len() as f64)
        };
        out.push(CategorySummary {
            category,
            cases: of.len(),
            skipped: of.len() - done.len(),
            mean_distance: mean(|m| m.mean_distance),
            min_distance: mean(|m| m.min_distance),
        });
    }
    out
}

impl BenchmarkReport {
    pub fn evaluated(&self) -> impl Iterator<Item = (&CaseRow, &ColorMetricsReport)> {
        self.rows.iter().filter_map(|r| r.metrics.as_ref().map(|m| (r, m)))
    }

    pub fn skipped(&self) -> impl Iterator<Item = &CaseRow> {
        self.rows.iter().filter(|r| r.metrics.is_none())
    }

    /// One row per case: `case_id, category, mean, min`, then one column per
    /// scorer. Skipped cases leave the numbers empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let score_names: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| r.scores.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["case_id".to_string(), "category".into(), "mean".into(), "min".into()];
        header.extend(score_names.iter().cloned());
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let num = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
            let mut rec = vec![
                r.case_id.clone(),
                r.category.to_string(),
                num(r.metrics.map(|m| m.mean_distance)),
                num(r.metrics.map(|m| m.min_distance)),
            ];
            rec.extend(score_names.iter().map(|n| num(r.scores.get(n).copied())));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-category means and the skipped cases with their errors.
    pub fn summary_json(&self) -> serde_json::Value {
        let skipped: Vec<_> = self
            .skipped()
            .map(|r| serde_json::json!({ "case_id": r.case_id, "error": r.error }))
            .collect();
        serde_json::json!({
            "cases": self.rows.len(),
            "categories": self.categories,
            "skipped": skipped,
        })
    }

    /// Writes the CSV to `csv_path` and the JSON summary beside it.
    pub fn write_files(&self, csv_path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        let json = serde_json::to_vec_pretty(&self.summary_json())?;
        std::fs::write(csv_path.with_extension("json"), json)?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}
