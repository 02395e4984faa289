use std::fmt;

use serde::Serialize;

use super::config::{AdapterSection, ExperimentConfig};
use super::runner::{prepare_data, run_with_data, ResultRecord};
use crate::adapter::{AdapterConfig, Init, Position, Preset, Scaling};
use crate::data::NormalizationSpec;
use crate::error::{ForgeError, Result};
use crate::training::TuneMode;

/// Mean and sample (n - 1) standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Which accuracy an ablation reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub label: String,
    pub params: usize,
    pub mean: f64,
    pub std: f64,
    /// Difference of `mean` to the reference row.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub title: String,
    pub metric: Metric,
    pub rows: Vec<TableRow>,
    #[serde(skip)]
    pub records: Vec<ResultRecord>,
}

impl AblationTable {
    pub fn labels(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.label.as_str()).collect()
    }

    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let metric = match self.metric {
            Metric::Val => "val",
            Metric::Test => "test",
        };
        writeln!(f, "{} ({metric} accuracy, %)", self.title)?;
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<w$}  {:>9}  {:>15}  {:>7}", "row", "params", "accuracy", "delta")?;
        for r in &self.rows {
            let delta = r.delta.map_or("-".to_string(), |d| format!("{d:+.2}"));
            let acc = format!("{:.2} ± {:.2}", r.mean, r.std);
            writeln!(f, "{:<w$}  {:>9}  {:>15}  {:>7}", r.label, r.params, acc, delta)?;
        }
        Ok(())
    }
}

/// One row of an ablation: a label and the config that produces it.
pub struct Variant {
    pub label: String,
    pub config: ExperimentConfig,
}

fn variant(label: impl Into<String>, config: ExperimentConfig) -> Variant {
    Variant {
        label: label.into(),
        config,
    }
}

/// Runs every variant on shared data and summarizes each row.
/// `reference` selects the row deltas are taken against.
pub fn run_variants(
    title: &str,
    variants: Vec<Variant>,
    metric: Metric,
    reference: Option<usize>,
) -> Result<AblationTable> {
    let first = variants
        .first()
        .ok_or_else(|| ForgeError::contract("an ablation needs at least one row"))?;
    let data = prepare_data(&first.config)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for v in &variants {
        if v.config.data != first.config.data {
            return Err(ForgeError::contract("ablation rows must share their data"));
        }
        let recs = run_with_data(&v.config, &data, &v.label)?;
        let accs: Vec<f64> = recs
            .iter()
            .map(|r| match metric {
                Metric::Val => r.val_acc,
                Metric::Test => r.test_acc,
            })
            .collect();
        let (mean, std) = mean_std(&accs);
        rows.push(TableRow {
            label: v.label.clone(),
            params: recs.first().map_or(0, |r| r.params),
            mean,
            std,
            delta: None,
        });
        records.extend(recs);
    }
    if let Some(i) = reference {
        let base = rows[i].mean;
        for r in &mut rows {
            r.delta = Some(r.mean - base);
        }
    }
    Ok(AblationTable {
        title: title.to_string(),
        metric,
        rows,
        records,
    })
}

fn with_adapter(base: &ExperimentConfig, adapter: AdapterSection) -> ExperimentConfig {
    let mut c = base.clone();
    c.train.mode = TuneMode::Adapter;
    c.adapter = adapter;
    c
}

fn base_adapter(base: &ExperimentConfig, position: Position) -> AdapterConfig {
    let mut a = AdapterConfig::base(base.adapter.rank, position);
    a.drop_path_rate = base.adapter.drop_path_rate.unwrap_or(0.0);
    a.dropout_rate = base.adapter.dropout_rate.unwrap_or(0.0);
    a
}

/// Base adapter in each of the four positions.
pub fn position_variants(base: &ExperimentConfig) -> Vec<Variant> {
    [Position::Pre, Position::Intermediate, Position::Parallel, Position::Post]
        .into_iter()
        .map(|p| variant(p.label(), with_adapter(base, AdapterSection::custom(&base_adapter(base, p)))))
        .collect()
}

pub fn run_position_ablation(base: &ExperimentConfig) -> Result<AblationTable> {
    run_variants("Adapter position", position_variants(base), Metric::Val, None)
}

/// The nine inner-structure rows; the first is the base adapter.
pub fn structure_variants(base: &ExperimentConfig) -> Vec<Variant> {
    let position = base.adapter.position.unwrap_or(Position::Post);
    let rows: [(bool, bool, Scaling, Init); 9] = [
        (true, false, Scaling::None, Init::Houlsby),
        (false, false, Scaling::None, Init::Houlsby),
        (true, false, Scaling::None, Init::Lora),
        (true, false, Scaling::None, Init::Bert),
        (true, true, Scaling::None, Init::Houlsby),
        (true, true, Scaling::LearnedLayer, Init::Houlsby),
        (true, false, Scaling::LearnedLayer, Init::Houlsby),
        (true, true, Scaling::LearnedChannel, Init::Houlsby),
        (true, false, Scaling::LearnedChannel, Init::Houlsby),
    ];
    rows.into_iter()
        .map(|(bias, ln, scaling, init)| {
            let a = AdapterConfig {
                use_bias: bias,
                use_layernorm: ln,
                scaling,
                init,
                ..base_adapter(base, position)
            };
            let label = format!(
                "bias={} norm={} scaling={} init={}",
                if bias { "on" } else { "off" },
                if ln { "on" } else { "off" },
                match scaling {
                    Scaling::LearnedLayer => "layer",
                    Scaling::LearnedChannel => "channel",
                    _ => "none",
                },
                init.label()
            );
            variant(label, with_adapter(base, AdapterSection::custom(&a)))
        })
        .collect()
}

pub fn run_structure_ablation(base: &ExperimentConfig) -> Result<AblationTable> {
    run_variants("Inner adapter structure", structure_variants(base), Metric::Val, Some(0))
}

/// Prior-work presets and the proposed configuration.
pub fn configuration_variants(base: &ExperimentConfig) -> Vec<Variant> {
    let rows = [
        ("houlsby r=8", Preset::Houlsby, 8),
        ("houlsby r=4", Preset::Houlsby, 4),
        ("pfeiffer r=8", Preset::Pfeiffer, 8),
        ("adaptformer r=8", Preset::AdaptFormer, 8),
        ("adapter-plus r=8", Preset::AdapterPlus, 8),
    ];
    rows.into_iter()
        .map(|(label, preset, rank)| {
            let mut s = AdapterSection::preset(preset, rank);
            s.drop_path_rate = base.adapter.drop_path_rate;
            s.dropout_rate = base.adapter.dropout_rate;
            variant(label, with_adapter(base, s))
        })
        .collect()
}

pub fn run_configuration_comparison(base: &ExperimentConfig) -> Result<AblationTable> {
    run_variants("Configurations from previous work", configuration_variants(base), Metric::Test, None)
}

/// The base config's adapter trained under both input normalizations, against
/// a backbone pretrained with the base config's pretraining normalization.
pub fn normalization_variants(base: &ExperimentConfig) -> Vec<Variant> {
    [NormalizationSpec::imagenet(), NormalizationSpec::inception()]
        .into_iter()
        .map(|n| {
            let mut c = base.clone();
            c.normalization = n;
            variant(n.name(), c)
        })
        .collect()
}

pub fn run_normalization_study(base: &ExperimentConfig) -> Result<AblationTable> {
    run_variants("Input normalization", normalization_variants(base), Metric::Val, Some(0))
}

/// Backbone stochastic depth on/off crossed with adapter regularization.
pub fn regularization_variants(base: &ExperimentConfig) -> Vec<Variant> {
    let rate = 0.1;
    let mut out = Vec::new();
    for backbone_dp in [true, false] {
        for (name, dp, dropout) in [("drop-path", rate, 0.0), ("dropout", 0.0, rate), ("none", 0.0, 0.0)] {
            let mut a = base_adapter(base, base.adapter.position.unwrap_or(Position::Post));
            a.drop_path_rate = dp;
            a.dropout_rate = dropout;
            let mut c = with_adapter(base, AdapterSection::custom(&a));
            c.backbone.drop_path_max = if backbone_dp { rate } else { 0.0 };
            let label = format!("backbone-dp={} adapter={name}", if backbone_dp { "on" } else { "off" });
            out.push(variant(label, c));
        }
    }
    out
}

pub fn run_regularization_grid(base: &ExperimentConfig) -> Result<AblationTable> {
    run_variants("Training regularization", regularization_variants(base), Metric::Val, None)
}
