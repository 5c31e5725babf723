use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sense_core::cli::run;

fn sense(args: &[&str]) -> i32 {
    let mut full = vec!["sense"];
    full.extend_from_slice(args);
    run(full)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn small_corpus(dir: &Path) -> PathBuf {
    let out = dir.join("corpus");
    let code = sense(&[
        "gen-corpus", "--languages", "2", "--concepts", "16", "--sentences", "12", "--heldout", "4",
        "--dim-in", "6", "--dim-embed", "8", "--seed", "5", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    out
}

fn small_model(dir: &Path, corpus: &Path) -> PathBuf {
    let out = dir.join("model");
    let code = sense(&[
        "train", "--manifest", p(&corpus.join("train.tsv")), "--heldout", p(&corpus.join("heldout.tsv")),
        "--dim-hidden", "8", "--epochs", "2", "--seed", "3", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    out
}

#[test]
fn gen_corpus_writes_manifest_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_corpus(dir.path());
    assert!(a.join("manifest.tsv").exists());
    assert!(a.join("run.meta").exists());
    let manifest = fs::read_to_string(a.join("manifest.tsv")).unwrap();
    assert!(manifest.starts_with("SENSE-MANIFEST 1 2 16 6 8 "));
    assert_eq!(manifest.lines().count(), 1 + 2 * 16);

    let b = dir.path().join("again");
    fs::create_dir(&b).unwrap();
    let b = small_corpus(&b);
    let (mut sa, mut sb) = (snapshot(&a), snapshot(&b));
    // run.meta records the output path, which differs.
    sa.remove(Path::new("run.meta"));
    sb.remove(Path::new("run.meta"));
    assert_eq!(sa, sb);
}

#[test]
fn invalid_settings_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    assert_eq!(sense(&["gen-corpus", "--languages", "1", "--out", p(&out)]), 2);
    assert_eq!(sense(&["gen-corpus", "--languages", "two", "--out", p(&out)]), 2);
    assert_eq!(sense(&["gen-corpus"]), 2);
    assert_eq!(sense(&["no-such-command"]), 2);
    assert_eq!(sense(&["retrieve", "--out", p(&out)]), 2);
}

#[test]
fn run_meta_reproduces_each_command() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let model = small_model(dir.path(), &corpus);
    let attn = dir.path().join("attn");
    assert_eq!(
        sense(&["attn", "--model", p(&model.join("model.sense")), "--manifest", p(&corpus.join("heldout.tsv")),
            "--grid", "7", "--svg", "--out", p(&attn)]),
        0
    );

    for out in [&corpus, &model, &attn] {
        let before = snapshot(out);
        let saved = dir.path().join("saved.meta");
        fs::copy(out.join("run.meta"), &saved).unwrap();
        fs::remove_dir_all(out).unwrap();
        let meta = fs::read_to_string(&saved).unwrap();
        let command = meta.lines().find_map(|l| l.strip_prefix("command=")).unwrap().to_string();
        assert_eq!(sense(&[&command, "--config", p(&saved)]), 0, "{command}");
        assert_eq!(snapshot(out), before, "{command} output changed");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "# settings\nepochs = 3\ndim-hidden=5\nseed=9\n").unwrap();
    let out = dir.path().join("m");
    assert_eq!(
        sense(&["train", "--config", p(&cfg), "--manifest", p(&corpus.join("train.tsv")), "--epochs", "1",
            "--epochs", "2", "--out", p(&out)]),
        0
    );
    let meta = fs::read_to_string(out.join("run.meta")).unwrap();
    assert!(meta.contains("\nepochs=2\n"));
    assert!(meta.contains("\ndim_hidden=5\n"));
    assert!(meta.contains("\nseed=9\n"));
    assert!(meta.contains("\ncommand=train\n"));
    let report = fs::read_to_string(out.join("train_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);

    fs::write(&cfg, "nonsense=1\n").unwrap();
    assert_eq!(sense(&["train", "--config", p(&cfg), "--out", p(&out)]), 2);
}

#[test]
fn embed_and_self_retrieval() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let model = small_model(dir.path(), &corpus);
    let manifest_before = fs::read(corpus.join("heldout.tsv")).unwrap();
    let speech = dir.path().join("speech");
    let text = dir.path().join("text");
    let m = model.join("model.sense");
    let held = corpus.join("heldout.tsv");
    assert_eq!(sense(&["embed", "--model", p(&m), "--manifest", p(&held), "--out", p(&speech)]), 0);
    assert_eq!(sense(&["embed", "--manifest", p(&held), "--modality", "text", "--out", p(&text)]), 0);
    assert_eq!(fs::read(corpus.join("heldout.tsv")).unwrap(), manifest_before);

    let store = speech.join("embeddings.emb");
    let out = dir.path().join("self");
    assert_eq!(sense(&["retrieve", "--query", p(&store), "--search", p(&store), "--out", p(&out)]), 0);
    let csv = fs::read_to_string(out.join("retrieval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "query_lang,query_mod,search_lang,search_mod,n_query,n_search,k,recall");
    assert!(lines.next().unwrap().ends_with(",8,8,1,100.00"));

    let matrix = dir.path().join("matrix");
    assert_eq!(
        sense(&["retrieve", "--model", p(&m), "--manifest", p(&held), "--center", "joint", "--k", "2",
            "--out", p(&matrix)]),
        0
    );
    let csv = fs::read_to_string(matrix.join("retrieval.csv")).unwrap();
    // 2 languages: 2 same-modality pairs per modality, 4 cross-modal pairs per direction.
    assert_eq!(csv.lines().count(), 1 + 2 + 2 + 4 + 4);
    assert!(fs::read_to_string(matrix.join("run.meta")).unwrap().contains("center=joint"));

    assert_eq!(sense(&["retrieve", "--query", p(&store), "--search", p(&store), "--center", "sideways",
        "--out", p(&out)]), 2);
}

#[test]
fn attn_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let model = small_model(dir.path(), &corpus);
    let out = dir.path().join("attn");
    assert_eq!(
        sense(&["attn", "--model", p(&model.join("model.sense")), "--manifest", p(&corpus.join("manifest.tsv")),
            "--first-k", "5", "--source", "weights", "--svg", "--out", p(&out)]),
        0
    );
    let first = fs::read_to_string(out.join("first_k.csv")).unwrap();
    let header: Vec<&str> = first.lines().next().unwrap().split(',').collect();
    assert!(header.contains(&"mass_fraction") && header.contains(&"frame_fraction"));
    assert_eq!(first.lines().count(), 1 + 32 + 1);
    assert!(first.lines().last().unwrap().starts_with("mean,5,"));

    let profile = fs::read_to_string(out.join("profile.csv")).unwrap();
    assert_eq!(profile.lines().next().unwrap(), "position,value,n_utterances");
    assert_eq!(profile.lines().count(), 101);
    assert!(fs::read_to_string(out.join("word_stats.csv")).unwrap().starts_with("word,utt_id,logit_sum,span_len\n"));
    assert!(out.join("top_words.csv").exists() && out.join("frequent_words.csv").exists());
    assert!(fs::read_to_string(out.join("profile.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn slu_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let tags = dir.path().join("tags.tsv");
    fs::write(&tags, "<\t>\tcity\n[\t]\tdate\n").unwrap();
    let reference = dir.path().join("ref.txt");
    fs::write(&reference, "va à <Paris> [lundi]\nrien\n<Lyon>\n").unwrap();
    let hyp = dir.path().join("hyp.txt");
    fs::write(&hyp, "va à <Paris> [mardi]\n<Nice>\n<Lyon>\n").unwrap();

    let out = dir.path().join("same");
    assert_eq!(sense(&["slu-score", "--ref", p(&reference), "--hyp", p(&reference), "--tags", p(&tags), "--out", p(&out)]), 0);
    assert_eq!(
        fs::read_to_string(out.join("scores.csv")).unwrap(),
        "metric,S,I,D,N,rate\nCOER,0,0,0,3,0.0000\nCVER,0,0,0,3,0.0000\n"
    );

    let out = dir.path().join("diff");
    assert_eq!(sense(&["slu-score", "--ref", p(&reference), "--hyp", p(&hyp), "--tags", p(&tags), "--out", p(&out)]), 0);
    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(csv.contains("COER,0,1,0,3,33.3333"), "{csv}");
    assert!(csv.contains("CVER,1,1,0,3,66.6667"), "{csv}");

    let out = dir.path().join("ent");
    assert_eq!(
        sense(&["slu-score", "--ref", p(&reference), "--hyp", p(&hyp), "--tags", p(&tags), "--kind", "entity",
            "--out", p(&out)]),
        0
    );
    assert!(fs::read_to_string(out.join("scores.csv")).unwrap().contains("NEER,0,1,0,3,33.3333"));

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "ok\n<never closed\n").unwrap();
    assert_eq!(sense(&["slu-score", "--ref", p(&bad), "--hyp", p(&bad), "--tags", p(&tags), "--out", p(&out)]), 2);
}

#[test]
fn binary_reports_errors_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let out = Command::new(env!("CARGO_BIN_EXE_sense"))
        .args(["train", "--manifest", p(&missing), "--out", p(&dir.path().join("m"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.tsv"), "{stderr}");
    assert!(out.stdout.is_empty());
}

#[test]
fn non_finite_frames_exit_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let frames = corpus.join("frames/m00003-l1.frames");
    let text = fs::read_to_string(&frames).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[3] = lines[3].replacen(lines[3].split(' ').next().unwrap(), "NaN", 1);
    fs::write(&frames, lines.join("\n") + "\n").unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_sense"))
        .args(["train", "--manifest", p(&corpus.join("train.tsv")), "--dim-hidden", "4", "--epochs", "1",
            "--out", p(&dir.path().join("m"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("m00003-l1"));
}
