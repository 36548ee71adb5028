use std::path::Path;
use std::process::{Command, Output};

fn tfgw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfgw"))
        .args(args)
        .env("TFGW_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tfgw(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_four_cycles(dir: &Path) {
    ok(&["dataset", "gen", "--kind", "four-cycles", "--out", p(dir), "--graphs", "24", "--nodes", "10", "--seed", "3"]);
}

const QUICK: [&str; 8] = ["--set", "epochs=3", "--set", "templates=2", "--set", "layers=0", "--set", "mlp_hidden=4"];

#[test]
fn skip_circles_info() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["dataset", "gen", "--kind", "skip-circles", "--copies", "15", "--out", p(dir.path())]);
    let info = ok(&["dataset", "info", p(dir.path())]);
    assert!(info.contains("graphs: 150"), "{info}");
    assert!(info.contains("classes: 10"), "{info}");
    assert!(dir.path().join("SKIP_CIRCLES_meta.txt").exists());
}

#[test]
fn distance_of_a_graph_to_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    small_four_cycles(dir.path());
    let spec = format!("{}:5", p(dir.path()));
    for structure in ["adj", "sp"] {
        let out = ok(&["dist", "--a", &spec, "--b", &spec, "--alpha", "0.5", "--structure", structure]);
        let value: f64 = out.lines().next().unwrap().strip_prefix("value: ").unwrap().parse().unwrap();
        assert!(value.abs() <= 1e-10, "{structure}: {value}");
    }
}

#[test]
fn generation_and_training_are_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    small_four_cycles(&a);
    small_four_cycles(&b);
    for f in ["FOUR_CYCLES_A.txt", "FOUR_CYCLES_graph_labels.txt", "FOUR_CYCLES_meta.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let runs: Vec<_> = ["m1", "m2"]
        .iter()
        .map(|m| {
            let out = root.path().join(m);
            let mut args = vec!["train", "--data", p(&a), "--out", p(&out), "--seed", "7"];
            args.extend(QUICK);
            ok(&args);
            out
        })
        .collect();
    for f in ["model.tfgw", "history.jsonl", "config.txt"] {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    let acc = ok(&["eval", "--model", p(&runs[0].join("model.tfgw")), "--data", p(&a)]);
    let acc: f64 = acc.trim().strip_prefix("accuracy: ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn embed_writes_one_row_per_graph_and_template() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("d");
    small_four_cycles(&data);
    let model = root.path().join("m");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&model)];
    args.extend(QUICK);
    ok(&args);
    let csv = root.path().join("emb.csv");
    ok(&["embed", "--model", p(&model.join("model.tfgw")), "--data", p(&data), "--out", p(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kind,index,label,tfgw_0,tfgw_1");
    assert_eq!(lines.len(), 1 + 24 + 2);
    assert_eq!(lines.iter().filter(|l| l.starts_with("template,")).count(), 2);
    let pca = std::fs::read_to_string(root.path().join("emb_pca.csv")).unwrap();
    assert_eq!(pca.lines().next().unwrap(), "kind,index,label,pc1,pc2");
    assert_eq!(pca.lines().count(), lines.len());
}

#[test]
fn exit_codes() {
    assert_eq!(tfgw(&["--help"]).status.code(), Some(0));
    assert_eq!(tfgw(&["--version"]).status.code(), Some(0));
    assert_eq!(tfgw(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tfgw(&["dist", "--a", "x"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    small_four_cycles(dir.path());
    let out = tfgw(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("m")), "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    let out = tfgw(&["train", "--data", p(dir.path()), "--out", p(&dir.path().join("m")), "--set", "epochs=zero"]);
    assert_eq!(out.status.code(), Some(1));

    let missing = dir.path().join("nothing-here");
    assert_eq!(tfgw(&["dataset", "info", p(&missing)]).status.code(), Some(2));
    assert_eq!(tfgw(&["eval", "--model", p(&missing), "--data", p(dir.path())]).status.code(), Some(2));
    let spec = format!("{}:999", p(dir.path()));
    assert_eq!(tfgw(&["dist", "--a", &spec, "--b", &spec]).status.code(), Some(2));
}

#[test]
fn flags_override_config_file_values() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("d");
    small_four_cycles(&data);
    let cfg = root.path().join("train.cfg");
    std::fs::write(&cfg, "# quick run\nepochs = 9\ntemplates = 2\nlayers = 0\nmlp_hidden = 4\nseed = 1\n").unwrap();
    let out = root.path().join("m");
    ok(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out), "--set", "epochs=2", "--seed", "5"]);
    let written = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.lines().any(|l| l == "epochs=2"), "{written}");
    assert!(written.lines().any(|l| l == "seed=5"), "{written}");
    assert!(written.lines().any(|l| l == "mlp_hidden=4"), "{written}");
}

#[test]
fn skip_circles_checkpoint_classifies_every_graph() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("sc");
    ok(&["dataset", "gen", "--kind", "skip-circles", "--copies", "15", "--seed", "0", "--out", p(&data)]);
    let cfg = root.path().join("sc.cfg");
    let text = "epochs=1000\nbatch_size=0\ntemplates=10\nlearn_templates=false\nlayers=0\nalpha=1\nstructure=adj\ncg_starts=5\n";
    std::fs::write(&cfg, text).unwrap();
    let model = root.path().join("m");
    ok(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&model)]);
    let acc = ok(&["eval", "--model", p(&model.join("model.tfgw")), "--data", p(&data)]);
    assert_eq!(acc.trim(), "accuracy: 1.0000");
}
