use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deepsearch"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_jsonl(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn fixture(dir: &Path) {
    let long: String = (0..300).map(|i| format!("filler{i}")).collect::<Vec<_>>().join(" ");
    write_jsonl(
        &dir.join("docs.jsonl"),
        &[
            json!({"docid": "d1", "title": "Treble", "text": "Manchester United won the treble in 1999."}),
            json!({"docid": "d2", "text": "Fleas complete their life cycle in two to three weeks."}),
            json!({"docid": "d3", "text": format!("The match drew 61,880 fans. {long} The final score was 4-1.")}),
        ],
    );
    write_jsonl(
        &dir.join("queries.jsonl"),
        &[
            json!({"qid": "q1", "text": "Who won the treble?", "answer": "Manchester United"}),
            json!({"qid": "q2", "text": "Flea life cycle?", "answer": "two to three weeks"}),
        ],
    );
    write_jsonl(
        &dir.join("qrels.jsonl"),
        &[
            json!({"qid": "q1", "docid": "d1", "level": "gold"}),
            json!({"qid": "q2", "docid": "d2", "level": "gold"}),
            json!({"qid": "q2", "docid": "d3", "level": "evidence"}),
        ],
    );
    write_jsonl(
        &dir.join("scripts.jsonl"),
        &[
            json!({"qid": "q1", "items": [{"search": "treble"}, {"answer": "Manchester United"}]}),
            json!({"qid": "q2", "items": [{"reason": "look it up"}, {"search": "fleas"}, {"get_doc": "d2"}]}),
        ],
    );
    std::fs::write(
        dir.join("run.toml"),
        "corpus = \"docs.jsonl\"\nindex = \"idx\"\nparallelism = 2\n\n[agent]\nscripts = \"scripts.jsonl\"\n",
    )
    .unwrap();
}

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();

    ok(bin()
        .args(["segment", "--corpus", &p("docs.jsonl"), "--out", &p("passages.jsonl")])
        .output()
        .unwrap());
    let passages = std::fs::read_to_string(d.join("passages.jsonl")).unwrap();
    assert!(passages.contains("\"d3#1\""), "long document should span two passages");

    ok(bin()
        .args(["index", "build", "--corpus", &p("docs.jsonl"), "--out", &p("idx")])
        .output()
        .unwrap());
    ok(bin()
        .args(["index", "build", "--corpus", &p("docs.jsonl"), "--unit", "passage"])
        .args(["--passages", &p("passages.jsonl"), "--out", &p("pidx")])
        .output()
        .unwrap());

    let hits: Value = serde_json::from_str(&ok(bin()
        .args(["search", "--index", &p("idx"), "-q", "treble 1999", "--json"])
        .output()
        .unwrap()))
    .unwrap();
    assert_eq!(hits[0]["id"], "d1");
    let hits: Value = serde_json::from_str(&ok(bin()
        .args(["search", "--index", &p("pidx"), "-q", "score 4-1", "--maxp", "--json"])
        .output()
        .unwrap()))
    .unwrap();
    assert_eq!(hits[0]["id"], "d3");

    ok(bin()
        .args([
            "run",
            "--config",
            &p("run.toml"),
            "--queries",
            &p("queries.jsonl"),
            "--out",
            &p("t.dstp"),
        ])
        .output()
        .unwrap());
    let report: Value = serde_json::from_str(&ok(bin()
        .args([
            "eval",
            "--traces",
            &p("t.dstp"),
            "--queries",
            &p("queries.jsonl"),
            "--qrels",
            &p("qrels.jsonl"),
        ])
        .args(["--json", "--per-query", &p("pq.jsonl")])
        .output()
        .unwrap()))
    .unwrap();
    assert_eq!(report["n_queries"], 2);
    assert_eq!(report["completion_rate"], 0.5);
    assert_eq!(report["accuracy"], 0.5);
    assert_eq!(report["recall_mean"], 0.75);
    assert_eq!(report["avg_getdoc_calls"], 0.5);

    let stdout = ok(bin()
        .args(["compare", &p("pq.jsonl"), &p("pq.jsonl")])
        .output()
        .unwrap());
    assert!(stdout.contains("p=1.0000"), "{stdout}");

    let with_pass = |c: &mut Command| {
        c.env("DEEPSEARCH_PASSPHRASE", "hunter2");
    };
    let mut enc = bin();
    with_pass(&mut enc);
    ok(enc
        .args(["trace", "encrypt", &p("t.dstp"), &p("t.dste")])
        .output()
        .unwrap());
    assert!(std::fs::read(d.join("t.dste")).unwrap().starts_with(b"DSTE\x01"));
    let locked = bin().args(["trace", "stats", &p("t.dste")]).output().unwrap();
    assert!(!locked.status.success());
    let mut dec = bin();
    with_pass(&mut dec);
    ok(dec
        .args(["trace", "decrypt", &p("t.dste"), &p("t2.dstp")])
        .output()
        .unwrap());
    assert_eq!(
        std::fs::read(d.join("t.dstp")).unwrap(),
        std::fs::read(d.join("t2.dstp")).unwrap()
    );
    let mut stats = bin();
    with_pass(&mut stats);
    let s: Value = serde_json::from_str(&ok(stats
        .args(["trace", "stats", &p("t.dste"), "--json"])
        .output()
        .unwrap()))
    .unwrap();
    assert_eq!(s["n_searches"], 2);
    assert_eq!(s["search_histogram"]["1"], 2);

    ok(bin()
        .args([
            "grid",
            "--index",
            &p("idx"),
            "--queries",
            &p("queries.jsonl"),
            "--qrels",
            &p("qrels.jsonl"),
        ])
        .args([
            "--metric",
            "ndcg@10",
            "--k1",
            "0.9,2",
            "--b",
            "0,0.4",
            "--out",
            &p("grid.csv"),
        ])
        .output()
        .unwrap());
    let csv = std::fs::read_to_string(d.join("grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv
        .lines()
        .any(|l| l.starts_with("0.9,0.4,ndcg@10,") && l.contains("default")));
    ok(bin()
        .args(["heatmap", "--csv", &p("grid.csv"), "--out", &p("grid.svg")])
        .output()
        .unwrap());
    assert!(std::fs::read_to_string(d.join("grid.svg")).unwrap().contains("<svg"));
}

#[test]
fn serve_answers_tool_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    ok(bin()
        .args(["index", "build", "--corpus", &p("docs.jsonl"), "--out", &p("idx")])
        .output()
        .unwrap());

    let mut child = bin()
        .env("RUST_LOG", "info")
        .args(["serve", "--config", &p("run.toml"), "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let base = lines
        .by_ref()
        .map_while(Result::ok)
        .find_map(|l| l.split("serving tools on ").nth(1).map(str::to_string))
        .expect("server announces its address");
    let client = deepsearch::http::JsonClient::new(Duration::from_secs(5));
    let res: Value = client
        .get(&format!("{base}/search"), &[("q", "fleas"), ("k", "2")])
        .unwrap();
    assert_eq!(res["items"][0]["id"], "d2");
    let err = client.get::<Value>(&format!("{base}/doc/missing"), &[]).unwrap_err();
    assert!(
        matches!(err, deepsearch::http::HttpError::Status { status: 404, .. }),
        "{err:?}"
    );
    child.kill().unwrap();
    child.wait().unwrap();
}
