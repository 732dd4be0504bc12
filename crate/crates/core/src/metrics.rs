//! Memory- and compute-efficiency ratios of a model against a baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Rounds to one decimal place, the precision used in reports.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Performance retention ratio `score_model / score_baseline`.
pub fn compute_prr(model_score: f64, baseline_score: f64) -> Result<f64> {
    if baseline_score == 0.0 {
        return Err(Error::InvalidArgument("baseline score is zero".into()));
    }
    Ok(model_score / baseline_score)
}

/// Parameter compression ratio `1 - model / baseline`. Use total counts for
/// PCR(All) and embedding counts for PCR(Emb).
pub fn compute_pcr(model_params: u64, baseline_params: u64) -> Result<f64> {
    if baseline_params == 0 {
        return Err(Error::InvalidArgument("baseline parameter count is zero".into()));
    }
    Ok(1.0 - model_params as f64 / baseline_params as f64)
}

/// Proportion of embedding parameters `emb / total`.
pub fn compute_poep(emb_params: u64, total_params: u64) -> Result<f64> {
    if total_params == 0 {
        return Err(Error::InvalidArgument("total parameter count is zero".into()));
    }
    Ok(emb_params as f64 / total_params as f64)
}

/// Speed-up `1 / (time_model / time_baseline)`.
pub fn compute_speedup(model_ms_per_sample: f64, baseline_ms_per_sample: f64) -> Result<f64> {
    if !(model_ms_per_sample > 0.0 && baseline_ms_per_sample > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "timings must be positive, got {model_ms_per_sample} and {baseline_ms_per_sample}"
        )));
    }
    Ok(1.0 / (model_ms_per_sample / baseline_ms_per_sample))
}

/// Scores, counts, and timings of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFigures {
    pub name: String,
    pub score: f64,
    pub total_params: u64,
    pub emb_params: u64,
    #[serde(default)]
    pub pt_ms_per_sample: Option<f64>,
    #[serde(default)]
    pub infer_ms_per_sample: Option<f64>,
}

/// Input of the `metrics` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsInput {
    pub baseline: ModelFigures,
    pub models: Vec<ModelFigures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub model: ModelFigures,
    pub prr: f64,
    pub pcr_all: f64,
    pub pcr_emb: f64,
    pub poep: f64,
    pub pt_speedup: Option<f64>,
    pub infer_speedup: Option<f64>,
    /// The ratios above as percentages (speed-ups as factors), one decimal.
    pub display: DisplayFigures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayFigures {
    pub prr_pct: f64,
    pub pcr_all_pct: f64,
    pub pcr_emb_pct: f64,
    pub poep_pct: f64,
    pub pt_speedup: Option<f64>,
    pub infer_speedup: Option<f64>,
}

impl EfficiencyReport {
    pub fn compute(model: &ModelFigures, baseline: &ModelFigures) -> Result<Self> {
        let prr = compute_prr(model.score, baseline.score)?;
        let pcr_all = compute_pcr(model.total_params, baseline.total_params)?;
        let pcr_emb = compute_pcr(model.emb_params, baseline.emb_params)?;
        let poep = compute_poep(model.emb_params, model.total_params)?;
        let speedup = |m: Option<f64>, b: Option<f64>| match (m, b) {
            (Some(m), Some(b)) => compute_speedup(m, b).map(Some),
            _ => Ok(None),
        };
        let pt_speedup = speedup(model.pt_ms_per_sample, baseline.pt_ms_per_sample)?;
        let infer_speedup = speedup(model.infer_ms_per_sample, baseline.infer_ms_per_sample)?;
        Ok(Self {
            model: model.clone(),
            prr,
            pcr_all,
            pcr_emb,
            poep,
            pt_speedup,
            infer_speedup,
            display: DisplayFigures {
                prr_pct: round1(100.0 * prr),
                pcr_all_pct: round1(100.0 * pcr_all),
                pcr_emb_pct: round1(100.0 * pcr_emb),
                poep_pct: round1(100.0 * poep),
                pt_speedup: pt_speedup.map(round1),
                infer_speedup: infer_speedup.map(round1),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsOutput {
    pub tool_version: String,
    pub input: MetricsInput,
    pub reports: Vec<EfficiencyReport>,
}

pub fn compute_reports(input: &MetricsInput) -> Result<MetricsOutput> {
    let reports = input
        .models
        .iter()
        .map(|m| EfficiencyReport::compute(m, &input.baseline))
        .collect::<Result<_>>()?;
    Ok(MetricsOutput {
        tool_version: TOOL_VERSION.into(),
        input: input.clone(),
        reports,
    })
}
