//! Configuration-driven runs, ablation drivers and result emission.

mod ablation;
mod budget;
mod config;
mod emit;
mod runner;

pub use ablation::{
    configuration_variants, mean_std, normalization_variants, position_variants,
    regularization_variants, run_configuration_comparison, run_normalization_study,
    run_position_ablation, run_regularization_grid, run_structure_ablation, run_variants,
    structure_variants, AblationTable, Metric, TableRow, Variant,
};
pub use budget::{budget_row, linear_budget, standard_budget, BudgetRow};
pub use config::{
    config_to_toml, desk_train_config, parse_config, parse_config_str, AdapterSection, DataConfig,
    ExperimentConfig, FolderData, PretrainConfig,
};
pub use emit::{
    emit_results, format_sig, records_to_csv, records_to_json, render_records, OutputFormat,
    CSV_COLUMNS,
};
pub use runner::{
    clear_backbone_cache, prepare_data, pretrain_key, pretrained_backbone, run_experiment, run_with_data, thread_pool,
    PreparedData, ResultRecord, THREADS_ENV,
};

#[cfg(test)]
mod tests;
