use super::*;
use crate::adapter::{Init, Position, Preset, Scaling};
use crate::error::ForgeError;
use crate::tensor::DType;
use crate::training::TuneMode;

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seeds = vec![0, 1];
    c.backbone.hidden_dim = 16;
    c.backbone.num_layers = 2;
    c.backbone.num_heads = 2;
    c.backbone.image_size = 16;
    c.data.synthetic.image_size = 16;
    c.data.synthetic.num_classes = 3;
    c.data.synthetic.n_train = 24;
    c.data.synthetic.n_val = 9;
    c.data.synthetic.n_test = 9;
    c.pretrain.epochs = 1;
    c.pretrain.warmup_epochs = 0;
    c.pretrain.batch_size = 8;
    c.train.total_epochs = 2;
    c.train.warmup_epochs = 1;
    c.train.batch_size = 8;
    c
}

#[test]
fn defaults_parse_from_empty_document() {
    let cfg = parse_config_str("").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
    assert_eq!(cfg.train.total_epochs, 20);
}

#[test]
fn unknown_key_reports_its_path() {
    let err = parse_config_str("[train]\nbase_lr = 0.01\nlearning_rate = 3\n").unwrap_err();
    match err {
        ForgeError::Parse { path, message } => {
            assert!(path.starts_with("train"), "{path}");
            assert!(message.contains("learning_rate"), "{message}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn dotted_keys_address_nested_fields() {
    let cfg = parse_config_str("adapter.rank = 4\ntrain.base_lr = 0.01\ndata.synthetic.n_train = 40\n").unwrap();
    assert_eq!(cfg.adapter.rank, 4);
    assert_eq!(cfg.train.base_lr, 0.01);
    assert_eq!(cfg.train.total_epochs, 20);
    assert_eq!(cfg.data.synthetic.n_train, 40);
}

#[test]
fn partial_train_table_keeps_desk_defaults() {
    let cfg = parse_config_str("[train]\nmode = \"linear\"\n").unwrap();
    assert_eq!(cfg.train.mode, TuneMode::Linear);
    assert_eq!(cfg.train.total_epochs, desk_train_config().total_epochs);
    assert_eq!(cfg.train.warmup_epochs, desk_train_config().warmup_epochs);
}

#[test]
fn type_mismatch_reports_its_path() {
    let err = parse_config_str("[adapter]\nrank = \"eight\"\n").unwrap_err();
    match err {
        ForgeError::Parse { path, .. } => assert_eq!(path, "adapter.rank"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn invalid_values_are_config_errors() {
    assert!(matches!(parse_config_str("seeds = []\n"), Err(ForgeError::Config(_))));
    assert!(matches!(
        parse_config_str("[adapter]\nrank = 65\n"),
        Err(ForgeError::Config(_))
    ));
    assert!(parse_config_str("[adapter]\npreset = \"lora\"\n").is_err());
}

#[test]
fn toml_round_trip() {
    let mut cfg = tiny();
    cfg.name = "round".into();
    cfg.precision = DType::F64;
    cfg.adapter = AdapterSection::preset(Preset::Houlsby, 4);
    cfg.adapter.dropout_rate = Some(0.1);
    cfg.train.mode = TuneMode::Adapter;
    let text = config_to_toml(&cfg).unwrap();
    let back = parse_config_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn hash_ignores_seeds_and_output_only() {
    let a = tiny();
    let mut b = a.clone();
    b.seeds = vec![7];
    b.output = Some("x.csv".into());
    b.checkpoint_dir = Some("ckpt".into());
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 16);
    b.train.base_lr *= 2.0;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn placement_overrides_apply_on_top_of_presets() {
    let mut s = AdapterSection::preset(Preset::AdapterPlus, 8);
    s.position = Some(Position::Intermediate);
    s.init = Some(Init::Lora);
    let p = s.placement().unwrap();
    assert_eq!(p.adapter.position, Position::Intermediate);
    assert_eq!(p.adapter.init, Init::Lora);
    assert_eq!(p.adapter.scaling, Scaling::LearnedChannel);
    assert!(!p.attention);

    let plain = AdapterSection { preset: None, ..AdapterSection::default() };
    let p = plain.placement().unwrap();
    assert_eq!(p.adapter.position, Position::Post);
    assert_eq!(p.adapter.scaling, Scaling::None);
}

#[test]
fn placement_only_in_adapter_mode() {
    let mut c = tiny();
    assert!(c.placement().unwrap().is_some());
    c.train.mode = TuneMode::Linear;
    assert!(c.placement().unwrap().is_none());
}

#[test]
fn format_sig_keeps_six_digits() {
    assert_eq!(format_sig(0.0), "0");
    assert_eq!(format_sig(53.6), "53.6");
    assert_eq!(format_sig(1.0 / 3.0), "0.333333");
    assert_eq!(format_sig(123456789.0), "123457000");
    assert_eq!(format_sig(-2.5e-7), "-0.00000025");
    assert_eq!(format_sig(f64::NAN), "nan");
}

#[test]
fn mean_std_uses_sample_deviation() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    assert!(mean_std(&[]).0.is_nan());
}

#[test]
fn output_format_parses() {
    assert_eq!("csv".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
    assert_eq!("json".parse::<OutputFormat>().unwrap(), OutputFormat::Json);
    assert!("xml".parse::<OutputFormat>().is_err());
}

#[test]
fn ablation_row_counts_and_labels() {
    let base = ExperimentConfig::default();
    let pos = position_variants(&base);
    let labels: Vec<_> = pos.iter().map(|v| v.label.as_str()).collect();
    assert_eq!(labels, ["pre", "intermediate", "parallel", "post"]);
    assert_eq!(structure_variants(&base).len(), 9);
    assert_eq!(structure_variants(&base)[0].label, "bias=on norm=off scaling=none init=houlsby");
    assert_eq!(configuration_variants(&base).len(), 5);
    assert_eq!(normalization_variants(&base).len(), 2);
    let reg = regularization_variants(&base);
    assert_eq!(reg.len(), 6);
    assert_eq!(reg[0].label, "backbone-dp=on adapter=drop-path");
    assert_eq!(reg[5].label, "backbone-dp=off adapter=none");
    for v in pos.iter().chain(&reg) {
        assert_eq!(v.config.train.mode, TuneMode::Adapter);
        assert_eq!(v.config.data, base.data);
    }
}

#[test]
fn budget_rows_follow_the_accounting() {
    let bb = crate::vit::BackboneConfig::vit_b16();
    let rows = standard_budget(&bb, 100.0);
    assert_eq!(rows.len(), 9);
    let r8 = budget_row(&bb, Preset::AdapterPlus, 8, 100.0);
    let expected = 12 * (2 * 768 * 8 + 8 + 768 + 768) + 768 * 100 + 100;
    assert_eq!(r8.adapter_params, 12 * (2 * 768 * 8 + 8 + 768 + 768));
    assert!((r8.millions - expected as f64 / 1e6).abs() < 1e-12);
    assert!((linear_budget(&bb, 100.0) - 76_900.0 / 1e6).abs() < 1e-12);
}

#[test]
fn csv_has_fixed_header_and_seed_order() {
    let recs = run_experiment(&tiny()).unwrap();
    let csv = records_to_csv(&recs);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    let seeds: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(seeds, ["0", "1"]);
    for r in &recs {
        assert_eq!(r.epoch_losses.len(), 2);
        assert!((0.0..=100.0).contains(&r.test_acc));
        assert_eq!(r.position, "post");
    }
}

#[test]
fn runs_are_deterministic_modulo_timing() {
    let cfg = tiny();
    let strip = |mut v: Vec<ResultRecord>| {
        v.iter_mut().for_each(|r| r.seconds = 0.0);
        v
    };
    let a = strip(run_experiment(&cfg).unwrap());
    let b = strip(run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
    let mut single = cfg.clone();
    single.seeds = vec![1];
    assert_eq!(strip(run_experiment(&single).unwrap())[0], a[1]);
}

#[test]
fn json_output_is_rounded() {
    let recs = run_experiment(&tiny()).unwrap();
    let json = records_to_json(&recs).unwrap();
    let back: Vec<ResultRecord> = serde_json::from_str(&json).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(format_sig(back[0].seconds), format_sig(recs[0].seconds));
}
