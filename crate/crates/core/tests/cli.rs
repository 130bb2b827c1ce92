use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cfg_tokenizer::synth::{self, SynthConfig};
use cfg_tokenizer::{Tensor, TensorArchive, TokenFile};
use tempfile::TempDir;

fn cfgtok(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfgtok"))
        .args(args)
        .output()
        .expect("cfgtok runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success() && out.stderr.is_empty(),
        "status {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_scene() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(&SynthConfig {
        seed: 3,
        frames: 6,
        feature_size: 16,
        dim: 8,
        ..Default::default()
    })
    .unwrap()
    .write(dir.path())
    .unwrap();
    let manifest = dir.path().join("manifest.toml");
    (dir, manifest)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tokenize_reports_rates_and_writes_file() {
    let (dir, manifest) = small_scene();
    let out_path = dir.path().join("t.cfgk");
    let out = cfgtok(&["tokenize", s(&manifest), "--output", s(&out_path)]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("compression_rate"));
    assert!(text.contains("preservation_rate  1.000000"));
    let file = TokenFile::read(&out_path).unwrap();
    assert_eq!(file.dim, 8);
    assert_eq!(file.preservation_rate, 1.0);
}

#[test]
fn budget_of_one_keeps_one_token() {
    let (dir, manifest) = small_scene();
    let out_path = dir.path().join("one.cfgk");
    assert_ok(&cfgtok(&["tokenize", s(&manifest), "--max-tokens", "1", "--output", s(&out_path)]));
    let file = TokenFile::read(&out_path).unwrap();
    assert_eq!(file.tokens.len(), 1);
    let max = file.tokens[0].source_voxel_count;
    assert!(file.preservation_rate < 1.0);
    assert_eq!(file.retained_voxel_total, max);
}

#[test]
fn flags_override_manifest() {
    let (dir, manifest) = small_scene();
    let a = dir.path().join("a.cfgk");
    let b = dir.path().join("b.cfgk");
    assert_ok(&cfgtok(&["tokenize", s(&manifest), "--output", s(&a)]));
    assert_ok(&cfgtok(&["tokenize", s(&manifest), "--fourier-seed", "99", "--output", s(&b)]));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let coarse = dir.path().join("c.cfgk");
    assert_ok(&cfgtok(&["tokenize", s(&manifest), "--voxel-size", "0.5", "--output", s(&coarse)]));
    assert_eq!(TokenFile::read(&coarse).unwrap().voxel_size, 0.5);
}

#[test]
fn exported_weights_reproduce_seeded_run() {
    let (dir, manifest) = small_scene();
    let weights = dir.path().join("w.cfgt");
    assert_ok(&cfgtok(&["weights", "--dim", "8", "--seed", "3", "--output", s(&weights)]));
    let a = dir.path().join("a.cfgk");
    let b = dir.path().join("b.cfgk");
    assert_ok(&cfgtok(&["tokenize", s(&manifest), "--fourier-seed", "3", "--output", s(&a)]));
    assert_ok(&cfgtok(&["tokenize", s(&manifest), "--fourier-weights", s(&weights), "--output", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn seed_and_weights_conflict() {
    let (_dir, manifest) = small_scene();
    let out = cfgtok(&["tokenize", s(&manifest), "--fourier-seed", "1", "--fourier-weights", "w.cfgt"]);
    assert!(!out.status.success());
}

#[test]
fn missing_manifest_is_input_error() {
    let out = cfgtok(&["tokenize", "/nonexistent/manifest.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/manifest.toml"));
}

#[test]
fn all_invalid_depth_is_empty_scene() {
    let (dir, manifest) = small_scene();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap().to_str().unwrap().starts_with("depth_") {
            let t = TensorArchive::read(&path).unwrap().into_single().unwrap();
            let zero = Tensor::new(t.shape().to_vec(), vec![0.0; t.data().len()]).unwrap();
            TensorArchive::single("depth", zero).write(&path).unwrap();
        }
    }
    let out = cfgtok(&["tokenize", s(&manifest), "--output", s(&dir.path().join("t.cfgk"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_token_files_are_rejected() {
    let (dir, manifest) = small_scene();
    let path = dir.path().join("t.cfgk");
    assert_ok(&cfgtok(&["tokenize", s(&manifest), "--output", s(&path)]));
    assert_ok(&cfgtok(&["inspect", s(&path)]));
    let bytes = std::fs::read(&path).unwrap();

    // Compression rate sits at bytes 64..72 of the header.
    let mut stats = bytes.clone();
    stats[64..72].copy_from_slice(&0.5f64.to_le_bytes());
    std::fs::write(&path, &stats).unwrap();
    assert_eq!(cfgtok(&["inspect", s(&path)]).status.code(), Some(3));

    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(cfgtok(&["inspect", s(&path)]).status.code(), Some(1));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    std::fs::write(&path, &magic).unwrap();
    assert_eq!(cfgtok(&["inspect", s(&path)]).status.code(), Some(1));
}

#[test]
fn dpo_loss_on_jsonl_batch() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("b.jsonl");
    std::fs::write(
        &batch,
        "{\"lp_pos\": -1.0, \"lp_negans\": -1.0, \"lp_negscene\": -1.0}\n\n",
    )
    .unwrap();
    let out = cfgtok(&["dpo-loss", s(&batch), "--check-grad", "--grads"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("total       1.693147181"), "{text}");
    assert!(text.contains("L_a         0.693147181"));
    assert!(text.contains("d_lp_pos=-1.057500000"));
    assert!(text.contains("grad_check"));
}

#[test]
fn dpo_loss_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let batch = dir.path().join("b.jsonl");
    std::fs::write(
        &batch,
        "{\"lp_pos\": -1.0, \"lp_negans\": -1.0, \"lp_negscene\": -1.0}\n{\"lp_pos\": oops}\n",
    )
    .unwrap();
    let out = cfgtok(&["dpo-loss", s(&batch)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    std::fs::write(&batch, "{\"lp_pos\": -1.0, \"lp_negans\": -1.0, \"lp_negscene\": -1.0}\n").unwrap();
    let out = cfgtok(&["dpo-loss", s(&batch), "--with-reference"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ref_pos"));

    std::fs::write(&batch, "").unwrap();
    assert_eq!(cfgtok(&["dpo-loss", s(&batch)]).status.code(), Some(1));
}

#[test]
fn templates_report_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("answers.txt");
    std::fs::write(&corpus, "Red.\nblue\nthree chairs\na lamp\n").unwrap();
    let json = dir.path().join("report.json");
    let out = cfgtok(&["templates", s(&corpus), "--k", "2", "--output", s(&json)]);
    assert_ok(&out);
    let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(record["k"], 2);
    assert_eq!(record["coverage"], 0.75);
    assert_eq!(record["size"], 4);
    assert!(stdout(&out).contains("[COLOR]"));
}

#[test]
fn templates_custom_rules() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("answers.txt");
    std::fs::write(&corpus, "a chair\na table\n").unwrap();
    let rules = dir.path().join("rules.toml");
    std::fs::write(&rules, "[[rules]]\ncategory = \"OBJECT\"\nwords = [\"chair\", \"table\"]\n").unwrap();
    let out = cfgtok(&["templates", s(&corpus), "--rules", s(&rules), "--k", "1"]);
    assert_ok(&out);
    assert!(stdout(&out).contains("\"coverage\":1.0"), "{}", stdout(&out));

    std::fs::write(&rules, "[[rules]]\ncategory = \"bad name\"\nwords = [\"x\"]\n").unwrap();
    assert_eq!(cfgtok(&["templates", s(&corpus), "--rules", s(&rules)]).status.code(), Some(1));
}

#[test]
fn synth_writes_a_loadable_scene() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfgtok(&["synth", "--seed", "2", "--frames", "3", "--feature-size", "8", "--dim", "4", "--output", s(dir.path())]);
    assert_ok(&out);
    assert!(dir.path().join("manifest.toml").exists());
    assert!(dir.path().join("ground_truth.toml").exists());
    let truth = stdout(&out);
    let tok = cfgtok(&["tokenize", s(&dir.path().join("manifest.toml")), "--output", s(&dir.path().join("t.cfgk"))]);
    assert_ok(&tok);
    let voxels = |text: &str, key: &str| -> String {
        text.lines()
            .find(|l| l.starts_with(key))
            .and_then(|l| l.split_whitespace().nth(1))
            .unwrap()
            .to_string()
    };
    assert_eq!(voxels(&truth, "occupied_voxels"), voxels(&stdout(&tok), "voxels"));
}
