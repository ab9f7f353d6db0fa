use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gatefuse::cohort::read_cohort;

const RUN_FILE: &str = r#"
seed = 4
variants = ["ehr", "gated"]

[synth]
seed = 4
n_encounters = 240
event_rate = 0.2

[model]
encoder_hidden = [12]
projection_hidden = [12]
latent_dim = 8

[train]
max_epochs = 3
seed = 4

[search]
trials = 2
hidden_dim = [4, 8]
"#;

fn gatefuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gatefuse"))
        .arg("--config")
        .arg(dir.join("run.toml"))
        .args(args)
        .env_remove("GATEFUSE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gatefuse(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = gatefuse(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), format!("{RUN_FILE}\n{extra}")).unwrap();
    dir
}

fn full_run(dir: &Path) {
    ok(dir, &["gen"]);
    ok(dir, &["featurize"]);
    ok(dir, &["train", "--variant", "ehr"]);
    ok(dir, &["train", "--variant", "gated"]);
    ok(dir, &["eval"]);
    ok(dir, &["compare"]);
    ok(dir, &["report"]);
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["", "features", "checkpoints", "reports"] {
        let d = dir.join(sub);
        let mut entries: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        entries.sort();
        for p in entries {
            let rel = p.strip_prefix(dir).unwrap().to_path_buf();
            files.push((rel, fs::read(&p).unwrap()));
        }
    }
    files
}

#[test]
fn pipeline_outputs_are_complete_and_repeatable() {
    let a = setup("");
    let b = setup("");
    full_run(a.path());
    full_run(b.path());
    for name in ["ehr.vgm", "gated.vgm", "ehr.threshold.json", "gated.history.csv"] {
        assert!(a.path().join("checkpoints").join(name).exists(), "{name}");
    }
    for name in ["ehr.report.json", "gated.roc.csv", "comparison.md", "comparison.csv", "auroc_bars.csv", "summary.md"] {
        assert!(a.path().join("reports").join(name).exists(), "{name}");
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.len(), sb.len());
    for ((pa, ba), (pb, bb)) in sa.iter().zip(&sb) {
        assert_eq!(pa, pb);
        if pa.extension().is_some_and(|e| e == "toml") {
            continue;
        }
        let (ta, tb) = (String::from_utf8_lossy(ba), String::from_utf8_lossy(bb));
        // Absolute paths differ between the two directories.
        let ta = ta.replace(a.path().to_str().unwrap(), "");
        let tb = tb.replace(b.path().to_str().unwrap(), "");
        assert!(ta == tb, "{} differs between identical runs", pa.display());
    }

    let table = fs::read_to_string(a.path().join("reports/comparison.md")).unwrap();
    assert!(table.starts_with("| Predictor | AUC | Specificity | Sensitivity | PPV |"));
    assert!(table.contains("| EHR-only |") && table.contains("| Gated fusion |"));
    let bars = fs::read_to_string(a.path().join("reports/auroc_bars.csv")).unwrap();
    assert_eq!(bars.lines().count(), 3);
}

#[test]
fn gen_summary_matches_cohort_file() {
    let dir = setup("");
    let out = ok(dir.path(), &["gen", "--n-encounters", "1000", "--event-rate", "0.057"]);
    let cohort = read_cohort(&dir.path().join("cohort.jsonl")).unwrap();
    assert_eq!(cohort.len(), 1000);
    assert!(out.contains("| Encounters generated | 1000 |"));
    let ventilated = cohort.iter().filter(|e| e.t0().is_some()).count();
    assert_eq!(ventilated, 57);
    let included: Vec<_> = cohort
        .iter()
        .filter(|e| gatefuse::cohort::apply_inclusion_criteria(e, f64::INFINITY).included)
        .collect();
    let prevalence = included.iter().filter(|e| e.t0().is_some()).count() as f64 / included.len() as f64;
    assert!((prevalence - 0.057).abs() < 0.01, "prevalence {prevalence}");
    assert!(out.contains(&format!("| Included encounters | {} |", included.len())));
}

#[test]
fn ehr_only_needs_no_embeddings() {
    let dir = setup("");
    ok(dir.path(), &["gen"]);
    fs::remove_file(dir.path().join("embeddings.cxre")).unwrap();
    ok(dir.path(), &["featurize"]);
    ok(dir.path(), &["train", "--variant", "ehr"]);
    let err = fails(dir.path(), &["train", "--variant", "gated"]);
    assert!(err.contains("cxr"), "{err}");
}

#[test]
fn eval_requires_threshold_provenance() {
    let dir = setup("");
    ok(dir.path(), &["gen"]);
    ok(dir.path(), &["featurize"]);
    ok(dir.path(), &["train", "--variant", "ehr"]);
    fs::remove_file(dir.path().join("checkpoints/ehr.threshold.json")).unwrap();
    let err = fails(dir.path(), &["eval", "--variant", "ehr"]);
    assert!(err.contains("threshold"), "{err}");
}

#[test]
fn physician_calls_reproduce_published_counts() {
    let dir = setup("[paths]\nphysician_calls = \"calls.csv\"\n");
    ok(dir.path(), &["gen", "--n-encounters", "247", "--event-rate", "0.0567"]);
    let cohort = read_cohort(&dir.path().join("cohort.jsonl")).unwrap();
    let (mut vent, mut other) = (0, 0);
    let mut csv = String::from("encounter_id,call\n");
    for e in &cohort {
        let call = if e.t0().is_some() {
            vent += 1;
            u8::from(vent <= 3)
        } else {
            other += 1;
            u8::from(other <= 9)
        };
        csv += &format!("{},{call}\n", e.encounter_id);
    }
    assert_eq!((vent, other), (14, 233));
    fs::write(dir.path().join("calls.csv"), csv).unwrap();
    ok(dir.path(), &["eval", "--physician-only"]);
    let report = gatefuse::eval::EvalReport::load(&dir.path().join("reports/physician.report.json")).unwrap();
    assert!((report.sensitivity.unwrap() - 0.214).abs() < 1e-3);
    assert!((report.specificity.unwrap() - 0.961).abs() < 1e-3);
    assert!((report.balanced_accuracy.unwrap() - 0.588).abs() < 1e-3);
    assert!((report.ppv.unwrap() - 0.250).abs() < 1e-3);
    assert!(report.auroc.is_none());

    // One report is not a comparison.
    let err = fails(dir.path(), &["compare"]);
    assert!(!err.is_empty());
}

#[test]
fn gradcheck_and_search_run() {
    let dir = setup("");
    let out = ok(dir.path(), &["gradcheck", "--configs", "1"]);
    assert!(out.contains("5 configurations passed"), "{out}");
    ok(dir.path(), &["gen"]);
    ok(dir.path(), &["featurize"]);
    ok(dir.path(), &["search", "--variant", "ehr"]);
    let log = fs::read_to_string(dir.path().join("reports/search_ehr.trials.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(dir.path().join("reports/search_ehr.best.json").exists());
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = setup("");
    fails(dir.path(), &["featurize"]);
    fails(dir.path(), &["train", "--variant", "late"]);
    fs::write(dir.path().join("run.toml"), "[train]\nbatch_size = 0\n").unwrap();
    let err = fails(dir.path(), &["gen"]);
    assert!(err.contains("batch"), "{err}");
}
