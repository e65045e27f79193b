use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn raea(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raea"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn raea")
}

const SMALL: [&str; 12] = [
    "--set", "synth_entities=60",
    "--set", "max_epochs=8",
    "--set", "patience=4",
    "--set", "lr_grid=0.004",
    "--set", "l2_grid=0",
    "--set", "bootstrap=20",
];

#[test]
fn unknown_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = raea(dir.path(), &["synth", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid keys"));
}

#[test]
fn missing_input_file_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("p.conf"),
        "kg1_rel = nope1.tsv\nkg1_attr = nope2.tsv\nkg2_rel = nope3.tsv\nkg2_attr = nope4.tsv\nseeds = nope5.tsv\n",
    )
    .unwrap();
    let out = raea(dir.path(), &["build-kg", "-c", "p.conf"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_rule_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("q.tsv"), "id\ttitle\tcategory\nq\t\tclimbing\n").unwrap();
    fs::write(dir.path().join("c.tsv"), "id\ttitle\tcategory\nc\tcrampons\tclimbing\n").unwrap();
    fs::write(dir.path().join("r.txt"), "climbing\t(unclosed\n").unwrap();
    let out = raea(
        dir.path(),
        &["rough-filter", "--set", "queries=q.tsv", "--set", "candidates=c.tsv", "--set", "rules=r.txt"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_top_k_respects_size_and_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = raea(dir.path(), &[&["synth", "-o", "data"][..], &SMALL[..]].concat());
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));

    let mut queries = String::from("id\ttitle\tcategory\n");
    for i in 0..10 {
        queries.push_str(&format!("e{i}\t\toutdoor, climbing\n"));
    }
    let mut cands = String::from("id\ttitle\tcategory\n");
    for j in 0..60 {
        let cat = if j % 3 == 0 { "climbing gear" } else { "kitchen" };
        cands.push_str(&format!("x{j}\tcrampons {j}\t{cat}\n"));
    }
    fs::write(data.join("queries.tsv"), queries).unwrap();
    fs::write(data.join("products.tsv"), cands).unwrap();
    fs::write(data.join("rules.txt"), "# blocking\nclimbing\tclimbing.*crampons\n").unwrap();

    let args = [
        &["pipeline", "-c", "data/pipeline.conf", "-o", "run"][..],
        &SMALL[..],
        &["--set", "queries=data/queries.tsv", "--set", "candidates=data/products.tsv", "--set", "rules=data/rules.txt"][..],
    ]
    .concat();
    let out = raea(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let allowed: BTreeSet<String> = (0..60).filter(|j| j % 3 == 0).map(|j| format!("x{j}")).collect();
    let topk = fs::read_to_string(dir.path().join("run/topk.tsv")).unwrap();
    let mut per_query: BTreeMap<&str, usize> = BTreeMap::new();
    for line in topk.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 4);
        *per_query.entry(f[0]).or_default() += 1;
        if f[0].starts_with('e') && f[0][1..].parse::<usize>().unwrap() < 10 {
            assert!(allowed.contains(f[2]), "{line}");
        }
    }
    assert!(per_query.values().all(|&n| n <= 10));
    for i in 0..10 {
        assert_eq!(per_query[format!("e{i}").as_str()], 10);
    }
    assert!(dir.path().join("run/report.txt").exists());
    assert!(dir.path().join("run/candidates.tsv").exists());
}
