use serde::Serialize;

use crate::adapter::{placement_params, preset_config, trainable_millions, Preset};
use crate::vit::BackboneConfig;

#[derive(Debug, Clone, Serialize)]
pub struct BudgetRow {
    pub label: String,
    /// Trainable parameters excluding the classifier.
    pub adapter_params: usize,
    /// Including a classifier with the given (possibly fractional) class count, in millions.
    pub millions: f64,
}

pub fn budget_row(backbone: &BackboneConfig, preset: Preset, rank: usize, classes: f64) -> BudgetRow {
    let placement = preset_config(preset, rank);
    BudgetRow {
        label: format!("{preset} r={rank}"),
        adapter_params: placement_params(backbone, &placement),
        millions: trainable_millions(backbone, Some(&placement), classes),
    }
}

/// Adapter+ over ranks 1 to 16 followed by the prior-work presets.
pub fn standard_budget(backbone: &BackboneConfig, classes: f64) -> Vec<BudgetRow> {
    let mut rows: Vec<BudgetRow> = [1, 2, 4, 8, 16]
        .into_iter()
        .map(|r| budget_row(backbone, Preset::AdapterPlus, r, classes))
        .collect();
    for (p, r) in [(Preset::Houlsby, 8), (Preset::Houlsby, 4), (Preset::Pfeiffer, 8), (Preset::AdaptFormer, 8)] {
        rows.push(budget_row(backbone, p, r, classes));
    }
    rows
}

/// Linear-probe budget `d c + c` in millions.
pub fn linear_budget(backbone: &BackboneConfig, classes: f64) -> f64 {
    trainable_millions(backbone, None, classes)
}
