//! Color-fidelity benchmark: prompt suites over three color categories,
//! region color distances, and a concurrent runner with CSV/JSON reports.

mod metrics;
mod runner;
mod suite;

pub use self::metrics::{region_color_distance, ColorMetricsReport, MASK_THRESHOLD};
pub use self::runner::{
    run_color_benchmark, toy_self_test_runner, BenchmarkOptions, BenchmarkReport, CaseOutput, CaseRow, CaseRunner,
    CaseScorer, CategorySummary, EngineRunner,
};
pub use self::suite::{
    build_color_suite, default_color_suite, sample_rgb_colors, BenchmarkCase, ColorCategory, RgbSource, SuitePalettes,
    OBJECT_PROMPTS, RGB_SAMPLE_COUNT,
};
