//! Acceptance suite. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero when any criterion fails.

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use mindmap_core::clusterer::metrics::{adjusted_rand_index, group_purity};
use mindmap_core::clusterer::{kmeans, Category, KMeansParams};
use mindmap_core::config::{PipelineConfig, ServerSettings};
use mindmap_core::corpus::Recording;
use mindmap_core::fixtures::{planted60_dir, sized_category_store, write_corpus, FixtureRecording};
use mindmap_core::fsutil::sha256_hex;
use mindmap_core::illustrator::{ImageManifest, ImageTarget};
use mindmap_core::par::Execution;
use mindmap_core::pipeline::{cmd_curate, cmd_enrich, cmd_ingest, cmd_vectorize, EnrichProviders};
use mindmap_core::provider::{ProviderError, RetryPolicy};
use mindmap_core::search::{build_index, Boosts};
use mindmap_core::store::{self, StoreLayout};
use mindmap_core::textprep::Preprocessor;
use mindmap_core::topics::{TopicAssignment, TopicProvider};
use mindmap_core::vectorizer::{build_vocabulary, tfidf_rows, CleanDocument, SparseVector, Vocabulary};
use mindmap_server::{router, AppState, CategorySummary, MindMapGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};
use tower::ServiceExt;

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Outcome {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(())
}

// 1. TF-IDF oracle equivalence

fn oracle_rows(docs: &[Vec<&str>], vocab: &[String]) -> Vec<BTreeMap<String, f64>> {
    let n = docs.len() as f64;
    docs.iter()
        .map(|d| {
            let mut row = BTreeMap::new();
            for t in vocab {
                let count = d.iter().filter(|w| **w == t).count() as f64;
                if count == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|o| o.contains(&t.as_str())).count() as f64;
                row.insert(t.clone(), count * (((1.0 + n) / (1.0 + df)).ln() + 1.0));
            }
            let norm = row.values().map(|w| w * w).sum::<f64>().sqrt();
            row.values_mut().for_each(|w| *w /= norm);
            row
        })
        .collect()
}

fn tfidf_oracle() -> Outcome {
    let start = Instant::now();
    let raw: Vec<Vec<&str>> = vec![
        vec!["cat", "dog"],
        vec!["cat"],
        vec!["dog", "dog", "bird", "whale"],
        vec!["fish", "bird", "cat", "cat", "fish", "fish"],
        vec![],
    ];
    let docs: Vec<CleanDocument> = raw
        .iter()
        .enumerate()
        .map(|(i, d)| CleanDocument {
            recording_id: format!("d{i}"),
            tokens: d.iter().map(|s| s.to_string()).collect(),
        })
        .collect();
    let vocab = build_vocabulary(&docs, 1, 1.0).map_err(|e| e.to_string())?;
    let model = tfidf_rows(&docs, &vocab).map_err(|e| e.to_string())?;
    let expected = oracle_rows(&raw, vocab.terms());
    for (i, row) in expected.iter().enumerate() {
        let got = model.row(&format!("d{i}")).ok_or("missing row")?;
        ensure!(got.entries().len() == row.len(), "d{i}: {} entries, oracle {}", got.entries().len(), row.len());
        for (term, w) in row {
            let g = got.get(vocab.column(term).ok_or("missing column")?);
            ensure!((g - w).abs() <= 1e-9, "d{i}/{term}: {g} vs oracle {w}");
        }
    }

    // two-document worked example, values frozen from direct evaluation
    let pair = [
        CleanDocument {
            recording_id: "d1".into(),
            tokens: vec!["cat".into(), "dog".into()],
        },
        CleanDocument {
            recording_id: "d2".into(),
            tokens: vec!["cat".into()],
        },
    ];
    let v = build_vocabulary(&pair, 1, 1.0).map_err(|e| e.to_string())?;
    let m = tfidf_rows(&pair, &v).map_err(|e| e.to_string())?;
    let d1 = m.row("d1").ok_or("missing d1")?;
    let (cat, dog) = (d1.get(v.column("cat").unwrap()), d1.get(v.column("dog").unwrap()));
    ensure!(
        (cat - 0.5797386715376657).abs() < 1e-12 && (dog - 0.8148024746671689).abs() < 1e-12,
        "d1 = {cat}, {dog}"
    );
    within(Duration::from_secs(1), start)
}

// 2. K-Means on Gaussian blobs

fn kmeans_blobs() -> Outcome {
    let start = Instant::now();
    let centers = [(0.0, 0.0), (40.0, 0.0), (20.0, 35.0)];
    let sigma = 1.0;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..100 {
        let c = i % 3;
        let (cx, cy) = centers[c];
        let x: f64 = cx + noise.sample(&mut rng);
        let y: f64 = cy + noise.sample(&mut rng);
        rows.push(SparseVector::from_entries(vec![(0, x), (1, y)]));
        labels.push(c);
    }
    // closest pair of centers is 40 apart: 40x the spread
    let ids: Vec<String> = (0..rows.len()).map(|i| format!("p{i:03}")).collect();
    for seed in 0..10u64 {
        let r = kmeans(&rows, &ids, 2, &KMeansParams::new(3, seed)).map_err(|e| e.to_string())?;
        let ari = adjusted_rand_index(&r.assignments, &labels);
        ensure!(ari == 1.0, "seed {seed}: ARI {ari}");
        for w in r.inertia_trace.windows(2) {
            ensure!(w[1] <= w[0], "seed {seed}: inertia rose {} -> {}", w[0], w[1]);
        }
    }
    within(Duration::from_secs(1), start)
}

// 3. Brute-force optimality on four points

fn inertia_of(points: &[(f64, f64)], groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|g| {
            let n = g.len() as f64;
            let (mx, my) = g.iter().fold((0.0, 0.0), |(a, b), &i| (a + points[i].0 / n, b + points[i].1 / n));
            g.iter().map(|&i| (points[i].0 - mx).powi(2) + (points[i].1 - my).powi(2)).sum::<f64>()
        })
        .sum()
}

fn kmeans_brute_force() -> Outcome {
    let points = [(0.0, 0.0), (0.0, 1.0), (10.0, 0.0), (10.0, 1.0)];
    let mut best: Option<(f64, BTreeSet<BTreeSet<usize>>)> = None;
    // point 0 always in group A; masks enumerate group A's other members
    for mask in 0u32..8 {
        let a: Vec<usize> = std::iter::once(0).chain((1..4).filter(|i| mask & (1 << (i - 1)) != 0)).collect();
        let b: Vec<usize> = (1..4).filter(|i| !a.contains(i)).collect();
        if b.is_empty() {
            continue;
        }
        let inertia = inertia_of(&points, &[a.clone(), b.clone()]);
        let partition: BTreeSet<BTreeSet<usize>> = [a, b].into_iter().map(|g| g.into_iter().collect()).collect();
        if best.as_ref().is_none_or(|(i, _)| inertia < *i) {
            best = Some((inertia, partition));
        }
    }
    let (best_inertia, best_partition) = best.ok_or("no partitions")?;
    ensure!((best_inertia - 1.0).abs() < 1e-12, "minimal inertia {best_inertia}");

    let rows: Vec<SparseVector> = points.iter().map(|&(x, y)| SparseVector::from_entries(vec![(0, x), (1, y)])).collect();
    let ids: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
    for seed in 0..20u64 {
        let r = kmeans(&rows, &ids, 2, &KMeansParams::new(2, seed)).map_err(|e| e.to_string())?;
        let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (i, c) in r.assignments.iter().enumerate() {
            groups.entry(*c).or_default().insert(i);
        }
        let got: BTreeSet<BTreeSet<usize>> = groups.into_values().collect();
        ensure!(got == best_partition, "seed {seed}: {got:?} vs {best_partition:?}");
        ensure!((r.inertia - best_inertia).abs() < 1e-9, "seed {seed}: inertia {}", r.inertia);
    }
    Ok(())
}

// 4. Scripted curation through the CLI

fn mindmap(args: &[&str], corpus: &Path, derived: &Path, stdin: &str) -> Result<String, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mindmap"))
        .arg("--corpus")
        .arg(corpus)
        .arg("--derived")
        .arg(derived)
        .args(args)
        .env("RUST_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "mindmap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

const SIX_ROUND_SCRIPT: &str =
    "round 6\nkeep 0 as A\nkeep 1 as B\nkeep 2 as C\nkeep 3 as D\nkeep 4 as E\nkeep 5 as F\ncommit\nfinish\nquit\n";

fn planted_labels() -> HashMap<String, String> {
    std::fs::read_to_string(planted60_dir().join("labels.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once('\t'))
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

fn curation_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let derived = dir.path().join("derived");
    let corpus = planted60_dir();
    mindmap(&["ingest"], &corpus, &derived, "")?;
    mindmap(&["vectorize"], &corpus, &derived, "")?;
    let out = mindmap(&["curate"], &corpus, &derived, SIX_ROUND_SCRIPT)?;
    ensure!(out.contains("session saved"), "curation output:\n{out}");
    let cats: Vec<Category> = store::read_json(&StoreLayout::new(&derived).categories()).map_err(|e| e.to_string())?;
    let labels = planted_labels();
    let accepted: Vec<&Category> = cats.iter().filter(|c| c.name != "Miscellaneous").collect();
    ensure!(accepted.len() == 6, "{} accepted categories", accepted.len());
    for c in &accepted {
        let l: Vec<&String> = c.member_ids.iter().map(|id| &labels[id]).collect();
        let p = group_purity(&l);
        ensure!(p >= 0.8, "{} purity {p}", c.name);
    }
    let total: usize = cats.iter().map(|c| c.member_ids.len()).sum();
    let union: BTreeSet<&String> = cats.iter().flat_map(|c| &c.member_ids).collect();
    let all: BTreeSet<&String> = labels.keys().collect();
    ensure!(total == union.len(), "categories overlap");
    ensure!(union == all, "partition covers {} of {} recordings", union.len(), all.len());
    within(Duration::from_secs(10), start)
}

// 5. Pipeline determinism

fn store_digests(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}

fn pipeline_determinism() -> Outcome {
    let run = |dir: &Path| -> Result<BTreeMap<String, String>, String> {
        let cfg = PipelineConfig {
            corpus_root: planted60_dir(),
            derived_root: dir.join("derived"),
            ..PipelineConfig::default()
        };
        let e = |e: mindmap_core::pipeline::PipelineError| e.to_string();
        cmd_ingest(&cfg).map_err(e)?;
        cmd_vectorize(&cfg).map_err(e)?;
        cmd_curate(&cfg, SIX_ROUND_SCRIPT.as_bytes(), &mut Vec::new()).map_err(e)?;
        let mut providers = EnrichProviders::from_config(&cfg);
        providers.retry = RetryPolicy::no_wait(1);
        cmd_enrich(&cfg, &providers).map_err(e)?;
        let mut d = store_digests(&cfg.derived_root);
        ensure!(d.remove("manifest.json").is_some(), "no manifest.json");
        Ok(d)
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (da, db) = (run(a.path())?, run(b.path())?);
    ensure!(da.len() > 120, "only {} files in the store", da.len());
    let differing: Vec<&String> = da.keys().filter(|k| da.get(*k) != db.get(*k)).collect();
    ensure!(da.len() == db.len() && differing.is_empty(), "differing files: {differing:?}");
    Ok(())
}

// 6. Duplicate-topic distinctness

struct FixedTopic;

impl TopicProvider for FixedTopic {
    fn name(&self) -> &str {
        "fixed"
    }
    fn complete(&self, _prompt: &str) -> Result<String, ProviderError> {
        Ok("Hackers".into())
    }
}

fn duplicate_topics() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = mindmap_core::fixtures::offline_config(dir.path(), 256);
    cfg.min_df = 1;
    let texts = [
        "hackers broke into the bank network and stole passwords",
        "a teenage hacker found a flaw in the voting machines",
        "security researchers hack cars to show remote exploits",
    ];
    let recs: Vec<FixtureRecording> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| FixtureRecording {
            id: format!("Hacker{i}_2020"),
            speaker: format!("Speaker {i}"),
            title: format!("Talk {i}"),
            transcript: t.to_string(),
            audio: None,
        })
        .collect();
    write_corpus(&cfg.corpus_root, &recs).map_err(|e| e.to_string())?;
    cmd_ingest(&cfg).map_err(|e| e.to_string())?;
    cmd_vectorize(&cfg).map_err(|e| e.to_string())?;
    let layout = StoreLayout::new(&cfg.derived_root);
    let cats = vec![Category {
        name: "Security".into(),
        member_ids: recs.iter().map(|r| r.id.clone()).collect(),
        suggested_terms: vec![],
        origin_round: 0,
    }];
    store::write_json(&layout.categories(), &cats).map_err(|e| e.to_string())?;
    let providers = EnrichProviders {
        topic: Some(Box::new(FixedTopic)),
        image: cfg.image_provider(),
        retry: RetryPolicy::no_wait(1),
    };
    cmd_enrich(&cfg, &providers).map_err(|e| e.to_string())?;

    let topics: Vec<TopicAssignment> = store::read_json(&layout.topics()).map_err(|e| e.to_string())?;
    ensure!(topics.len() == 3 && topics.iter().all(|t| t.topic == "Hackers"), "topics: {topics:?}");
    let manifest: ImageManifest =
        store::read_json(&layout.images_dir().join("manifest.json")).map_err(|e| e.to_string())?;
    let files: Vec<&str> = manifest
        .assets
        .values()
        .filter(|a| matches!(a.target, ImageTarget::Recording { .. }))
        .map(|a| a.file.as_str())
        .collect();
    ensure!(files.len() == 3, "{} recording illustrations", files.len());
    let digests: BTreeSet<String> = files
        .iter()
        .map(|f| std::fs::read(layout.images_dir().join(f)).map(|b| sha256_hex(&b)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure!(digests.len() == 3, "illustration digests not pairwise distinct");
    Ok(())
}

// 7. Search self-retrieval and filter soundness

fn search_self_retrieval() -> Outcome {
    let adjectives = ["quiet", "golden", "frozen", "hidden", "broken"];
    let nouns = ["river", "engine", "garden", "mirror"];
    let filler = [
        "people", "world", "idea", "story", "change", "future", "design", "energy", "water", "city", "child", "science",
        "money", "health", "music", "language", "history", "nature", "power", "market", "island", "travel", "school",
        "family", "forest", "ocean", "machine", "question", "answer", "planet",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let prep = Preprocessor::default();
    let mut recs = Vec::new();
    for (i, (a, n)) in adjectives.iter().flat_map(|a| nouns.iter().map(move |n| (a, n))).enumerate() {
        // each body draws on its own slice of the filler words plus one
        // other document's title words
        let mut pool: Vec<&str> = (0..8).map(|_| filler[rng.random_range(0..filler.len())]).collect();
        pool.push(adjectives[rng.random_range(0..adjectives.len())]);
        pool.push(nouns[rng.random_range(0..nouns.len())]);
        let body: Vec<&str> = (0..60).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        recs.push(Recording {
            id: format!("doc{i:02}"),
            speaker: format!("Speaker {i}"),
            title: format!("The {a} {n}"),
            raw_transcript: body.join(" "),
            audio_path: None,
            duration_s: 0.0,
            source_file: format!("stm/doc{i:02}.stm"),
        });
    }
    let docs: Vec<CleanDocument> = recs
        .iter()
        .map(|r| CleanDocument {
            recording_id: r.id.clone(),
            tokens: prep.clean(&r.raw_transcript),
        })
        .collect();
    let vocab: Vocabulary = build_vocabulary(&docs, 2, 0.5).map_err(|e| e.to_string())?;
    let model = tfidf_rows(&docs, &vocab).map_err(|e| e.to_string())?;
    let cat_names = ["North", "South", "East", "West"];
    let cats: Vec<Category> = cat_names
        .iter()
        .enumerate()
        .map(|(c, name)| Category {
            name: name.to_string(),
            member_ids: recs.iter().enumerate().filter(|(i, _)| i % 4 == c).map(|(_, r)| r.id.clone()).collect(),
            suggested_terms: vec![],
            origin_round: 0,
        })
        .collect();
    let index = build_index(&model, &recs, &[], &cats, &prep, Boosts::default()).map_err(|e| e.to_string())?;
    for r in &recs {
        let hits = index.search(&prep, &r.title, &[] as &[&str], 25);
        ensure!(
            hits.first().map(|h| h.recording_id.as_str()) == Some(r.id.as_str()),
            "{:?}: top hit {:?}",
            r.title,
            hits.first().map(|h| &h.recording_id)
        );
        for name in cat_names {
            let filtered = index.search(&prep, &r.title, &[name], 25);
            ensure!(filtered.iter().all(|h| h.category == name), "{:?} in {name}: out-of-category hit", r.title);
        }
        let pair = index.search(&prep, &r.title, &cat_names[..2], 25);
        ensure!(pair.iter().all(|h| cat_names[..2].contains(&h.category.as_str())), "pair filter leaked");
    }
    Ok(())
}

// 8. API contract on the sized category fixture

async fn fetch(app: &axum::Router, uri: &str, range: Option<&str>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let mut req = Request::get(uri);
    if let Some(r) = range {
        req = req.header(header::RANGE, r);
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    let (parts, body) = resp.into_parts();
    (parts.status, parts.headers, to_bytes(body, usize::MAX).await.unwrap().to_vec())
}

fn api_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = sized_category_store(dir.path()).map_err(|e| e.to_string())?;
    let state = AppState::load(&cfg).map_err(|e| e.to_string())?;
    let app = router(state, &ServerSettings::default());
    let rt = tokio::runtime::Builder::new_current_thread().build().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let (status, _, body) = fetch(&app, "/api/categories", None).await;
        ensure!(status == StatusCode::OK, "categories: {status}");
        let cats: Vec<CategorySummary> = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        let head: Vec<(&str, usize)> = cats.iter().take(3).map(|c| (c.name.as_str(), c.count)).collect();
        ensure!(
            head == [("Computer Science", 44), ("Climate", 42), ("Health", 39)],
            "first categories {head:?}"
        );

        let (status, _, body) = fetch(&app, "/api/mindmap?categories=Music", None).await;
        ensure!(status == StatusCode::OK, "mindmap: {status}");
        let graph: MindMapGraph = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        let nodes: usize = graph.clusters.iter().map(|c| c.nodes.len()).sum();
        ensure!(graph.clusters.len() == 1 && nodes == 33, "{} clusters, {nodes} nodes", graph.clusters.len());

        let audio = cfg.corpus_root.join("audio/Music_000.wav");
        let len = std::fs::metadata(&audio).map_err(|e| e.to_string())?.len();
        ensure!(len == 1000, "fixture audio is {len} bytes");
        let full = std::fs::read(&audio).map_err(|e| e.to_string())?;
        let (status, headers, body) = fetch(&app, "/api/recordings/Music_000/audio", Some("bytes=0-99")).await;
        ensure!(status == StatusCode::PARTIAL_CONTENT, "range status {status}");
        ensure!(body == full[..100], "range body is {} bytes", body.len());
        let cr = headers.get(header::CONTENT_RANGE).and_then(|v| v.to_str().ok());
        ensure!(cr == Some("bytes 0-99/1000"), "Content-Range {cr:?}");
        Ok(())
    })
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("tf-idf oracle equivalence", tfidf_oracle),
        ("k-means blobs ARI=1 over 10 seeds", kmeans_blobs),
        ("k-means brute-force optimality", kmeans_brute_force),
        ("curation end-to-end on planted corpus", curation_end_to_end),
        ("pipeline determinism", pipeline_determinism),
        ("duplicate-topic illustration distinctness", duplicate_topics),
        ("search self-retrieval and filter soundness", search_self_retrieval),
        ("api contract on sized category store", api_contract),
    ];
    // keep exec mode visible in the report
    let exec = if cfg!(feature = "parallel") { Execution::Parallel } else { Execution::Sequential };
    println!("\nacceptance ({exec:?} build)");
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS [{}] {name} ({ms} ms)", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL [{}] {name} ({ms} ms): {e}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed\n", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
