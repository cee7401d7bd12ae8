use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
[flow]
height = 16
width = 16
levels = 2
steps_per_level = 1
hidden = 4
[training]
epochs = 1
dataset_size = 8
batch_size = 8
[data]
test_count = 2
previews = 1
[mask]
ratio = 4.0
[noise]
snr_db = inf
[recon]
max_iters = 10
fista_iters = 200
lambda = 0.0
[evaluation]
realizations = 2
mus = [0.0]
fractions = [50.0]
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_flowrecon"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_key_exits_with_config_code_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "[recon]\nlamda = 1.0\n", &["mask"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

#[test]
fn invalid_value_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "[mask]\nratio = 0.5\n", &["mask"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mask.ratio"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), TINY, &["sample"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn corrupt_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/flow.ckpt"), b"not a checkpoint").unwrap();
    let o = run(dir.path(), TINY, &["sample"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn full_mask_noiseless_pls_tv_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let config = TINY.replace("kind = \"poisson_disc\"", "").replace("[mask]\nratio = 4.0", "[mask]\nkind = \"full\"\nratio = 1.0");
    let o = run(dir.path(), &config, &["reconstruct", "--method", "pls-tv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,mask,snr_db,k,mu,lambda,rmse,ssim"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "pls-tv");
    let rmse: f64 = row[6].parse().unwrap();
    assert!(rmse < 1e-6, "rmse {rmse}");
}

#[test]
fn train_then_truncate_and_misaligned_fraction() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), TINY, &["train"]).status.success());
    let resolved = std::fs::read_to_string(dir.path().join("out/config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 3"));
    let o = run(dir.path(), TINY, &["truncate-study", "--fractions", "50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/truncation.csv")).unwrap();
    assert!(csv.starts_with("transform,level,kept_fraction,mean_rmse,mean_ssim\n"));
    assert!(csv.lines().any(|l| l.starts_with("inn,")) && csv.lines().any(|l| l.starts_with("haar,")));

    let o = run(dir.path(), TINY, &["truncate-study", "--fractions", "30"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("0.5"), "valid fractions listed: {}", stderr(&o));
}

#[test]
fn checkpoint_architecture_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(dir.path(), TINY, &["train"]).status.success());
    let o = run(dir.path(), &TINY.replace("hidden = 4", "hidden = 6"), &["sample"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn seed_override_changes_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(a.path(), TINY, &["mask"]).status.success());
    assert!(run(b.path(), TINY, &["--seed", "4", "mask"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("out/mask.far")).unwrap();
    assert_ne!(read(a.path()), read(b.path()));
}

#[test]
fn bias_variance_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &TINY.replace("snr_db = inf", "snr_db = 20.0"), &["bias-variance", "--method", "pls-tv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/bias_variance.csv")).unwrap();
    assert!(csv.starts_with("mu,avg_sq_bias,avg_variance,d\n"));
    assert_eq!(csv.lines().count(), 2);
}
