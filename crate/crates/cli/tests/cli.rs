use std::path::Path;
use std::process::{Command, Output};

fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peft-forge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
name = "tiny"
seeds = [0, 1]

[backbone]
image_size = 16
patch_size = 8
hidden_dim = 16
num_layers = 2
num_heads = 2
ffn_expansion = 4
drop_path_max = 0.1

[data.synthetic]
image_size = 16
num_classes = 3
n_train = 24
n_val = 9
n_test = 9

[pretrain]
epochs = 1
warmup_epochs = 0
batch_size = 8

[train]
total_epochs = 2
warmup_epochs = 1
batch_size = 8
"#;

fn write_tiny(dir: &Path, extra: &str) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn count_params_prints_vit_b_budgets() {
    let o = forge(&["count-params"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let millions = |label: &str| -> String {
        let line = text.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("{label} missing"));
        line.split_whitespace().last().unwrap().to_string()
    };
    assert_eq!(millions("adapter-plus r=1 "), "0.07");
    assert_eq!(millions("adapter-plus r=8 "), "0.20");
    assert_eq!(millions("adapter-plus r=16"), "0.35");
    assert_eq!(millions("houlsby r=8"), "0.39");
    assert_eq!(millions("houlsby r=4"), "0.24");
    assert_eq!(millions("pfeiffer r=8"), "0.21");
    assert_eq!(millions("adaptformer r=8"), "0.19");
}

#[test]
fn count_params_single_preset_as_json() {
    let o = forge(&["count-params", "--preset", "houlsby", "--rank", "4", "--format", "json"]);
    assert!(o.status.success());
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
    assert_eq!(rows[0]["label"], "houlsby r=4");
}

#[test]
fn unknown_preset_is_rejected() {
    let o = forge(&["count-params", "--preset", "prefix"]);
    assert!(!o.status.success());
}

#[test]
fn bad_config_key_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[adapter]\nrank = \"eight\"\n").unwrap();
    let o = forge(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("adapter.rank"), "{err}");
}

#[test]
fn train_writes_csv_and_eval_reloads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    let cfg = write_tiny(dir.path(), "");
    let out = dir.path().join("out.csv");
    let mut toml = std::fs::read_to_string(&cfg).unwrap();
    toml = toml.replacen("seeds = [0, 1]", &format!("seeds = [0, 1]\ncheckpoint_dir = {:?}", ckpt.to_str().unwrap()), 1);
    std::fs::write(&cfg, toml).unwrap();

    let o = forge(&["train", "--config", &cfg, "--seeds", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("config_hash,seed,position"));
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[1], "3");
    let test_acc = fields[9].to_string();

    let model = ckpt.join("model-seed3.ckpt");
    assert!(ckpt.join("adapter-seed3.ckpt").exists());
    let o = forge(&["eval", "--config", &cfg, "--checkpoint", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains(&format!("test_acc={test_acc}")), "{}", stdout(&o));
}

#[test]
fn json_format_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let o = forge(&["train", "--config", &cfg, "--seeds", "5,6", "--format", "json", "--precision", "f64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let seeds: Vec<u64> = recs.as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [5, 6]);
}

#[test]
fn ablation_verbs_emit_one_record_per_row_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    for (verb, rows) in [("ablate-position", 4), ("study-norm", 2)] {
        let o = forge(&[verb, "--config", &cfg, "--seeds", "0"]);
        assert!(o.status.success(), "{verb}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(stdout(&o).lines().count(), rows + 1, "{verb}");
    }
}

#[test]
fn bad_thread_count_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let o = Command::new(env!("CARGO_BIN_EXE_peft-forge"))
        .args(["train", "--config", &cfg])
        .env("PEFT_FORGE_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
}

#[test]
fn rank_sweep_emits_one_block_per_rank() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let o = forge(&["train", "--config", &cfg, "--seeds", "0", "--ranks", "1,4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ranks: Vec<String> = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(3).unwrap().to_string()).collect();
    assert_eq!(ranks, ["1", "4"]);
}
