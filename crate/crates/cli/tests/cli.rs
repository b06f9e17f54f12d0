use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use serde_json::Value;
use tti_audit::ann::{self, KnnGraph, Probe};
use tti_audit::audit::{run_audit, AuditBundle, AuditConfig, RunOptions};
use tti_audit::pixel;
use tti_audit::visual_words;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tti-audit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic corpus plus features, codebook, vectors and index, all made
/// through the CLI.
struct Work {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Work {
    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn work() -> &'static Work {
    static W: OnceLock<Work> = OnceLock::new();
    W.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let w = Work { _tmp: tmp, root };
        ok(&["synth", "--out", s(&w.p("fx"))]);
        let manifest = w.p("fx/manifest.jsonl");
        ok(&["features", "--corpus", s(&manifest), "--out", s(&w.p("feats"))]);
        ok(&["codebook", "--feats", s(&w.p("feats")), "--k", "16", "--seed", "17", "--max-iter", "50", "--out", s(&w.p("cb.cbk"))]);
        ok(&["vectorize", "--codebook", s(&w.p("cb.cbk")), "--feats", s(&w.p("feats")), "--out", s(&w.p("vecs"))]);
        ok(&["index", "--vecs", s(&w.p("vecs")), "--k", "10", "--seed", "3"]);
        ok(&["run", "--config", s(&w.p("fx/audit.toml")), "--out", s(&w.p("bundle")), "--canonical"]);
        w
    })
}

#[test]
fn prompt_listing_matches_the_golden_file() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/prompts.txt");
    assert_eq!(ok(&["prompts"]), std::fs::read_to_string(golden).unwrap());
    assert_eq!(ok(&["prompts", "--set", "identity"]).lines().count(), 68);
    assert_eq!(ok(&["prompts", "--set", "adjective"]).lines().count(), 20);

    let tmp = tempfile::tempdir().unwrap();
    let list = tmp.path().join("p.txt");
    std::fs::write(&list, "cook\n\nsocial worker\n").unwrap();
    assert_eq!(ok(&["prompts", "--set", "profession", "--professions", s(&list)]), "Photo portrait of a cook\nPhoto portrait of a social worker\n");
}

#[test]
fn knn_matches_library_queries() {
    let w = work();
    let graph = KnnGraph::load(w.p("vecs/index.knn")).unwrap();
    let vectors = ann::align_vectors(&graph, visual_words::load_vectors(w.p("vecs/vectors.jsonl")).unwrap()).unwrap();
    let want = ann::query(&graph, &vectors, Probe::Id("sys-a_p01_2"), 5).unwrap();
    let got: Vec<Value> = serde_json::from_str(&ok(&["knn", "--probe", "sys-a_p01_2", "--k", "5", "--by", "bovw", "--vecs", s(&w.p("vecs")), "--json"])).unwrap();
    let got: Vec<(String, f64)> = got.iter().map(|v| (v["id"].as_str().unwrap().to_owned(), v["score"].as_f64().unwrap())).collect();
    assert_eq!(got, want);

    let scores = pixel::load_colorfulness_csv(w.p("feats/colorfulness.csv")).unwrap();
    assert_eq!(scores.len(), 200);
    let want = ann::colorfulness_neighbors(&scores, "sys-b_i003_0", 4).unwrap();
    let tsv = ok(&["knn", "--probe", "sys-b_i003_0", "--k", "4", "--by", "colorfulness", "--colorfulness", s(&w.p("feats/colorfulness.csv"))]);
    let got: Vec<(String, f64)> = tsv
        .lines()
        .map(|l| {
            let (id, v) = l.split_once('\t').unwrap();
            (id.to_owned(), v.parse().unwrap())
        })
        .collect();
    assert_eq!(got, want);

    let err = fails(&["knn", "--probe", "nope", "--vecs", s(&w.p("vecs"))]);
    assert!(err.contains("nope"), "{err}");
}

#[test]
fn stepwise_commands_reproduce_the_bundle() {
    let w = work();
    let bundle = AuditBundle::load(w.p("bundle")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let t = |n: &str| tmp.path().join(n);
    let (manifest, emb) = (w.p("fx/manifest.jsonl"), w.p("fx/embeddings.emb"));

    ok(&["cluster", "--emb", s(&emb), "--n", "8", "--corpus", s(&manifest), "--out", s(&t("m.clm"))]);
    ok(&["assign", "--model", s(&t("m.clm")), "--emb", s(&emb), "--corpus", s(&manifest), "--out", s(&t("a.json"))]);
    let assigned: std::collections::BTreeMap<String, u32> = serde_json::from_slice(&std::fs::read(t("a.json")).unwrap()).unwrap();
    assert_eq!(assigned, bundle.assignments.body.evaluated);

    let (assign_path, model_path, bls) = (t("a.json"), t("m.clm"), w.p("fx/bls.csv"));
    let common = ["--corpus", s(&manifest), "--assignments", s(&assign_path), "--bootstrap", "200", "--seed", "7"];
    let mut args = vec!["diversity", "--n", "8", "--ci", "0.99"];
    args.extend(common);
    let diversity: Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(diversity, serde_json::to_value(&bundle.diversity.as_ref().unwrap().body).unwrap());

    let quintiles = bundle.quintiles.as_ref().unwrap();
    for (key, group, want) in [("pct_women", "woman", &quintiles.body.women), ("pct_black", "Black", &quintiles.body.black)] {
        let mut args = vec!["quintiles", "--bls", s(&bls), "--key", key, "--group", group, "--model", s(&model_path)];
        args.extend(common);
        let got: Value = serde_json::from_str(&ok(&args)).unwrap();
        assert_eq!(got, serde_json::to_value(want).unwrap(), "{key}");
    }

    let markers: Value = serde_json::from_str(&ok(&["markers", "--annotations", s(&w.p("fx/annotations.jsonl")), "--corpus", s(&manifest)])).unwrap();
    let m = &bundle.markers.as_ref().unwrap().body;
    assert_eq!(markers, serde_json::to_value([&m.caption, &m.vqa_appearance]).unwrap());

    let md = ok(&["markers", "--annotations", s(&w.p("fx/annotations.jsonl")), "--corpus", s(&manifest), "--source", "caption", "--format", "md"]);
    assert!(md.contains('|'));
    let err = fails(&["quintiles", "--bls", s(&w.p("fx/bls.csv")), "--group", "Martian", "--model", s(&t("m.clm")), "--corpus", s(&manifest), "--assignments", s(&t("a.json"))]);
    assert!(err.contains("Martian"), "{err}");
}

#[test]
fn run_exit_codes_follow_stage_outcomes() {
    let w = work();
    let tmp = tempfile::tempdir().unwrap();
    let again = tmp.path().join("again");
    ok(&["run", "--config", s(&w.p("fx/audit.toml")), "--out", s(&again), "--canonical"]);
    for name in ["provenance.json", "regions.json", "diversity.json", "quintiles.json", "markers.json", "diversity.md"] {
        assert_eq!(std::fs::read(w.p("bundle").join(name)).unwrap(), std::fs::read(again.join(name)).unwrap(), "{name}");
    }

    let text = std::fs::read_to_string(w.p("fx/audit.toml")).unwrap();
    let broken = w.p("fx/no-bls.toml");
    std::fs::write(&broken, text.replace("bls = \"bls.csv\"\n", "")).unwrap();
    let err = fails(&["run", "--config", s(&broken), "--out", s(&tmp.path().join("x"))]);
    assert!(err.contains("bls"), "{err}");
    assert!(!tmp.path().join("x").exists());

    let bad_model = w.p("fx/bad-model.toml");
    std::fs::write(&bad_model, format!("cluster_model = \"bls.csv\"\n{text}")).unwrap();
    let out = tmp.path().join("partial");
    let err = fails(&["run", "--config", s(&bad_model), "--out", s(&out)]);
    assert!(err.contains("load"), "{err}");
    let prov: Value = serde_json::from_slice(&std::fs::read(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["failed_stage"], "load");
}

#[test]
fn ingest_writes_a_loadable_database() {
    let w = work();
    let tmp = tempfile::tempdir().unwrap();
    let db = tmp.path().join("corpus.db");
    ok(&["ingest", "--manifest", s(&w.p("fx/manifest.jsonl")), "--bls", s(&w.p("fx/bls.csv")), "--out", s(&db)]);
    let (corpus, bls) = tti_audit::corpus::load_corpus(&db).unwrap();
    assert_eq!(corpus.len(), 200);
    assert_eq!(bls.unwrap().len(), 8);
    corpus.check_files().unwrap();

    // the database works wherever a manifest does
    let cfg = AuditConfig::load(w.p("fx/audit.toml")).unwrap();
    let from_db = AuditConfig { corpus: db.clone(), ..cfg.clone() };
    let a = run_audit(&cfg, &tmp.path().join("a"), RunOptions { canonical: true }).unwrap();
    let b = run_audit(&from_db, &tmp.path().join("b"), RunOptions { canonical: true }).unwrap();
    assert_eq!(a.diversity, b.diversity.map(|mut d| {
        d.header.config_hash = a.diversity.as_ref().unwrap().header.config_hash.clone();
        d
    }));

    let missing = w.p("fx/missing.jsonl");
    std::fs::write(&missing, std::fs::read_to_string(w.p("fx/manifest.jsonl")).unwrap().replace("images/sys-a_p00_0.png", "images/gone.png")).unwrap();
    let err = fails(&["ingest", "--manifest", s(&missing), "--out", s(&tmp.path().join("x.db"))]);
    assert!(err.contains("gone.png"), "{err}");
}

/// Answers every inference call the same way, one request per connection.
fn mock_backend() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for mut stream in listener.incoming().flatten() {
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let route = line.split_whitespace().nth(1).unwrap_or("").to_owned();
                let mut len = 0;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let text = match route.as_str() {
                    "/caption" => r#"{"text":"a woman at a desk"}"#,
                    "/vqa" => r#"{"answer":"elf"}"#,
                    _ => r#"{"vector":[1.0,2.0,2.0]}"#,
                };
                let resp = format!("HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}", text.len());
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    url
}

#[test]
fn annotate_and_embed_talk_to_the_backend() {
    let w = work();
    let url = mock_backend();
    let tmp = tempfile::tempdir().unwrap();
    let ann = tmp.path().join("ann.jsonl");
    ok(&["annotate", "--corpus", s(&w.p("fx/manifest.jsonl")), "--endpoint", &url, "--out", s(&ann), "--parallelism", "16"]);
    let lines = tti_audit::gateway::load_annotations(&ann, None).unwrap();
    assert_eq!(lines.len(), 200);
    for a in &lines {
        assert_eq!(a.caption, "a woman at a desk");
        assert_eq!(a.vqa[&tti_audit::gateway::QuestionKey::Gender], "UNRESOLVED");
        assert_eq!(a.vqa[&tti_audit::gateway::QuestionKey::Appearance], "elf");
    }
    let emb = tmp.path().join("e.emb");
    ok(&["embed", "--corpus", s(&w.p("fx/manifest.jsonl")), "--endpoint", &url, "--out", s(&emb)]);
    let m = tti_audit::embedding::EmbeddingMatrix::load(&emb).unwrap();
    assert_eq!((m.len(), m.dim()), (200, 3));
    assert!((m.row(0)[1] - 2.0 / 3.0).abs() < 1e-6);

    let err = fails(&["annotate", "--corpus", s(&w.p("fx/manifest.jsonl")), "--endpoint", &url, "--constrain", "appearance"]);
    assert!(err.contains("appearance"), "{err}");
}

fn http_get(addr: &str, path: &str) -> Option<(u16, String)> {
    let mut stream = TcpStream::connect(addr).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nhost: {addr}\r\nconnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    stream.read_to_string(&mut text).ok()?;
    let status = text.split_whitespace().nth(1)?.parse().ok()?;
    Some((status, text.split_once("\r\n\r\n")?.1.to_owned()))
}

#[test]
fn serve_answers_and_refuses_bad_starts() {
    let w = work();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let (bundle, manifest, index) = (w.p("bundle"), w.p("fx/manifest.jsonl"), w.p("vecs/index.knn"));
    let args = ["serve", "--bundle", s(&bundle), "--corpus", s(&manifest), "--index", s(&index)];
    let mut child = bin().args(args).args(["--addr", &addr]).stderr(Stdio::null()).spawn().unwrap();
    let start = Instant::now();
    let reply = loop {
        if let Some(r) = http_get(&addr, "/clusters") {
            break r;
        }
        assert!(start.elapsed() < Duration::from_secs(60), "server did not come up");
        std::thread::sleep(Duration::from_millis(100));
    };
    let (status, _) = http_get(&addr, "/knn?id=missing").unwrap();
    let (knn_status, knn_body) = http_get(&addr, "/knn?id=sys-a_p01_2&by=bovw&k=5").unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert_eq!(reply.0, 200);
    let clusters: Vec<Value> = serde_json::from_str(&reply.1).unwrap();
    assert_eq!(clusters.len(), 8);
    assert_eq!(status, 404);
    assert_eq!(knn_status, 200);
    let cli: Vec<Value> = serde_json::from_str(&ok(&["knn", "--probe", "sys-a_p01_2", "--k", "5", "--vecs", s(&w.p("vecs")), "--json"])).unwrap();
    let served: Vec<Value> = serde_json::from_str(&knn_body).unwrap();
    assert_eq!(served, cli);

    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let taken = busy.local_addr().unwrap().to_string();
    let err = fails(&[&args[..], &["--addr", &taken]].concat());
    assert!(err.contains("cannot bind"), "{err}");

    let err = fails(&["serve", "--bundle", s(&w.p("nowhere")), "--corpus", s(&w.p("fx/manifest.jsonl")), "--index", s(&w.p("vecs/index.knn"))]);
    assert!(err.contains("bundle"), "{err}");
}
