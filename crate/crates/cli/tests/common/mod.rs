#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn pcmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcmi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("PCMI_LM_ENDPOINT")
        .output()
        .expect("run pcmi")
}

/// Runs `pcmi` and panics with its stderr unless it exits 0.
pub fn pcmi_ok(args: &[&str]) -> String {
    let out = pcmi(args);
    assert!(
        out.status.success(),
        "pcmi {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Compares `actual` to the golden file, or rewrites it when
/// `PCMI_UPDATE_GOLDEN` is set.
pub fn golden(path: &Path, actual: &str) {
    if std::env::var_os("PCMI_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{} is stale; rerun with PCMI_UPDATE_GOLDEN=1", path.display());
}

use pcmi_core::experiments::simulate::fixture_annotations;
use pcmi_core::experiments::{Annotation, CandidateRef, ComparisonPair, Experiment, Side};

/// `(experiment, n, K)` of the bundled annotation fixture: 100 pairs per
/// experiment, `n` of them with a majority, `K` favoring the hypothesis.
pub const FIXTURE_COUNTS: [(Experiment, usize, usize); 3] =
    [(Experiment::Exp1, 87, 55), (Experiment::Exp2, 95, 70), (Experiment::Exp3, 99, 59)];

pub fn annotation_fixture() -> (Vec<ComparisonPair>, Vec<Annotation>) {
    let mut pairs = Vec::new();
    let mut annotations = Vec::new();
    for (exp, n, k) in FIXTURE_COUNTS {
        let family: Vec<ComparisonPair> = (0..100)
            .map(|i| {
                let experiment = match exp {
                    Experiment::Exp1 if i % 2 == 0 => Experiment::Exp1Top,
                    Experiment::Exp1 => Experiment::Exp1Bottom,
                    other => other,
                };
                let side = |id: usize, text: String| CandidateRef {
                    candidate_id: id,
                    tokens: text.split(' ').map(String::from).collect(),
                    text,
                };
                ComparisonPair {
                    pair_id: format!("{exp}:fx{i:03}"),
                    instance_id: format!("fx{i:03}"),
                    experiment,
                    history: vec![format!("first turn {i}"), format!("second turn {i}")],
                    side_a: side(0, format!("response a for {i}")),
                    side_b: side(1, format!("response b for {i}")),
                    hypothesis_side: if i % 3 == 0 { Side::B } else { Side::A },
                    delta_pcmi_h: None,
                    delta_pcmi_k: None,
                }
            })
            .collect();
        annotations.extend(fixture_annotations(&family, n, k));
        pairs.extend(family);
    }
    (pairs, annotations)
}

pub fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect()
}
