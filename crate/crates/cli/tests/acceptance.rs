//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits nonzero when any criterion fails.
//!
//! Run with `cargo test -p concord-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use concord_core::classifier::{
    evaluate_at, loss, train, ClassifierModel, LossConfig, LossVariant, TrainConfig,
};
use concord_core::config::DEFAULT_CONFIG;
use concord_core::dataset::{
    assemble_dataset, export_joint_sequences, split_by_project, Catalog, FunctionInfo,
    PositivePair, SamplingConfig, Split, SubtokenCounter,
};
use concord_core::embedding::{cosine, EmbeddingVector};
use concord_core::eval::{all_negative_baseline, confusion, metrics, ConfusionMatrix};
use concord_core::fixture::{oversized_sequences, planted_signal, LABELS_FILE, PROJECTS_FILE};
use concord_core::pairing::{retrieve_top_k, Candidate, FunctionIndex, RankedCandidates};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------------------
// Binary driver

fn concord(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_concord"))
        .args(args)
        .env_remove("CONCORD_WORKSPACE")
        .env_remove("RUST_LOG")
        .output()
        .map_err(|e| format!("cannot spawn concord: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "`concord {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A workspace built from a fresh fixture through `assemble`.
struct Built {
    ws: PathBuf,
    pipeline_time: Duration,
}

fn build_workspace(root: &Path) -> Result<Built, String> {
    std::fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let fx = root.join("fx");
    let ws = root.join("ws");
    let cfg = root.join("cfg.toml");
    ensure(DEFAULT_CONFIG.contains("hash_dim = 0\n"), || {
        "default config lost its hash_dim line".into()
    })?;
    std::fs::write(&cfg, DEFAULT_CONFIG.replace("hash_dim = 0\n", "hash_dim = 256\n"))
        .map_err(|e| e.to_string())?;
    let w = s(&ws);
    let start = Instant::now();
    concord(&["fixture-gen", "--out", s(&fx)])?;
    concord(&["-w", w, "--config", s(&cfg), "init"])?;
    concord(&["-w", w, "register", "--from", s(&fx.join(PROJECTS_FILE))])?;
    for stage in ["ingest-paper", "ingest-code", "embed", "retrieve", "tasks"] {
        concord(&["-w", w, stage])?;
    }
    concord(&["-w", w, "decisions-import", "--labels", s(&fx.join(LABELS_FILE))])?;
    concord(&["-w", w, "decisions-export", "--finalize"])?;
    for stage in ["split", "sample", "assemble"] {
        concord(&["-w", w, stage])?;
    }
    let pipeline_time = start.elapsed();
    concord(&["-w", w, "export-seq"])?;
    Ok(Built { ws, pipeline_time })
}

fn model_stages(ws: &Path) -> Result<(), String> {
    let w = s(ws);
    concord(&["-w", w, "train"])?;
    concord(&["-w", w, "eval", "--run", "run1"])?;
    concord(&["-w", w, "sweep", "--run", "run1"])?;
    concord(&["-w", w, "ablate"])?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_examples(ws: &Path, split: &str) -> Result<Vec<Value>, String> {
    let path = ws.join("datasets/main").join(format!("{split}.examples"));
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

// ---------------------------------------------------------------------------
// Independent metric oracle over expanded prediction vectors

struct OracleMetrics {
    acc: f64,
    macro_f1: f64,
    binary_f1: f64,
    mcc: f64,
}

fn f1_of(pred: &[u8], gold: &[u8], class: u8) -> f64 {
    let hits = pred.iter().zip(gold).filter(|(p, g)| **p == class && **g == class).count();
    let predicted = pred.iter().filter(|p| **p == class).count();
    let actual = gold.iter().filter(|g| **g == class).count();
    if predicted + actual == 0 {
        0.0
    } else {
        2.0 * hits as f64 / (predicted + actual) as f64
    }
}

fn oracle(pred: &[u8], gold: &[u8]) -> OracleMetrics {
    let n = pred.len() as f64;
    let acc = pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / n;
    let pos = f1_of(pred, gold, 1);
    let neg = f1_of(pred, gold, 0);
    let x: Vec<f64> = pred.iter().map(|v| *v as f64).collect();
    let y: Vec<f64> = gold.iter().map(|v| *v as f64).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let mcc = if vx == 0.0 || vy == 0.0 { 0.0 } else { cov / (vx * vy).sqrt() };
    OracleMetrics {
        acc,
        macro_f1: (pos + neg) / 2.0,
        binary_f1: pos,
        mcc,
    }
}

fn expand(tp: u64, fp: u64, fn_: u64, tn: u64, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let mut pairs: Vec<(u8, u8)> = Vec::new();
    for (count, pair) in [(tp, (1, 1)), (fp, (1, 0)), (fn_, (0, 1)), (tn, (0, 0))] {
        pairs.extend(std::iter::repeat(pair).take(count as usize));
    }
    pairs.shuffle(rng);
    pairs.into_iter().unzip()
}

// ---------------------------------------------------------------------------
// Criteria

fn table_counts(built: &Result<Built, String>) -> Check {
    let built = built.as_ref().map_err(|e| e.clone())?;
    let split = read_json(&built.ws.join("datasets/main/split.json"))?;
    let mut projects = Vec::new();
    let mut partition: HashMap<String, &str> = HashMap::new();
    for name in ["train", "validation", "test"] {
        let list = split[name].as_array().ok_or_else(|| format!("split.json lacks {name}"))?;
        projects.push(list.len());
        for p in list {
            let p = p.as_str().unwrap_or_default().to_string();
            ensure(partition.insert(p.clone(), name).is_none(), || format!("{p} in two splits"))?;
        }
    }
    ensure(projects == [38, 5, 5], || format!("project counts {projects:?}"))?;
    let mut got = Vec::new();
    for name in ["train", "validation", "test"] {
        let ex = read_examples(&built.ws, name)?;
        let pos = ex.iter().filter(|e| e["label"] == 1).count();
        let neg = ex.iter().filter(|e| e["label"] == 0).count();
        ensure(pos + neg == ex.len(), || format!("{name}: labels outside {{0, 1}}"))?;
        ensure(neg == 5 * pos, || format!("{name}: {pos} positives but {neg} negatives"))?;
        for e in &ex {
            let src = e["source_project"].as_str().unwrap_or_default();
            ensure(partition.get(src) == Some(&name), || {
                format!("{name} example from project {src} outside the split")
            })?;
        }
        got.push((ex.len(), pos));
    }
    ensure(got == [(5742, 957), (540, 90), (498, 83)], || format!("examples/positives {got:?}"))?;
    ensure(built.pipeline_time < Duration::from_secs(120), || {
        format!("pipeline took {:?}", built.pipeline_time)
    })?;
    Ok(format!(
        "examples 5742/540/498, positives 957/90/83, projects 38/5/5 in {:.1}s",
        built.pipeline_time.as_secs_f64()
    ))
}

fn loss_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ce = LossConfig {
        gamma: 0.0,
        alpha: [1.0, 1.0],
    };
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p: f64 = rng.gen_range(1e-9..1.0);
        let y = rng.gen_range(0..2usize);
        worst = worst.max((loss(p, y, &ce) - (-p.ln())).abs());
    }
    ensure(worst <= 1e-12, || format!("cross-entropy deviation {worst:e}"))?;
    let wf = LossConfig {
        gamma: 2.0,
        alpha: [1.0, 5.0],
    };
    let v: f64 = loss(0.5, 1, &wf);
    let derived = 5.0 * 0.25 * std::f64::consts::LN_2;
    ensure(close(v, 0.8664, 1e-4) && close(v, derived, 1e-12), || {
        format!("worked value {v}, expected {derived}")
    })?;
    Ok(format!("max |FL - CE| {worst:.1e} over 1000 draws; worked value {v:.4}"))
}

fn flat(p: &concord_core::classifier::Params<f64>) -> Vec<f64> {
    p.blocks().iter().flat_map(|(b, _)| b.iter().copied()).collect()
}

fn set_flat(p: &mut concord_core::classifier::Params<f64>, i: usize, v: f64) {
    let mut i = i;
    for (block, _) in p.blocks_mut() {
        if i < block.len() {
            block[i] = v;
            return;
        }
        i -= block.len();
    }
    panic!("parameter index out of range");
}

fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..100 {
        let dim = rng.gen_range(2..10);
        let hidden = case % 2 == 1;
        let gamma = [0.0, 1.0, 2.0][case % 3];
        let alpha = if (case / 3) % 2 == 0 { [1.0, 1.0] } else { [1.0, 5.0] };
        let train_cfg = TrainConfig {
            hidden_layer: hidden,
            hidden_width: rng.gen_range(2..6),
            init_scale: 0.5,
            ..TrainConfig::default()
        };
        let loss_cfg = LossConfig { gamma, alpha };
        let model = ClassifierModel::<f64>::init(dim, loss_cfg, train_cfg, case as u64);
        let batch_size = rng.gen_range(1..9);
        let xs: Vec<Vec<f64>> = (0..batch_size)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().map(|x| (x.as_slice(), rng.gen_range(0..2))).collect();
        let (_, grad) = model.loss_and_gradient(&batch).map_err(|e| e.to_string())?;
        let analytic = flat(&grad);
        let theta = flat(&model.params);
        let mut numeric = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let mut plus = model.clone();
            set_flat(&mut plus.params, i, theta[i] + h);
            let mut minus = model.clone();
            set_flat(&mut minus.params, i, theta[i] - h);
            let lp = plus.loss_and_gradient(&batch).map_err(|e| e.to_string())?.0;
            let lm = minus.loss_and_gradient(&batch).map_err(|e| e.to_string())?.0;
            numeric.push((lp - lm) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / (na + nn).max(1e-12);
        worst = worst.max(rel);
        ensure(rel <= 1e-4, || {
            format!("case {case} (hidden {hidden}, gamma {gamma}, alpha {alpha:?}): relative error {rel:e}")
        })?;
    }
    Ok(format!("100 cases, max relative error {worst:.1e}"))
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let mut c = [0u64; 4];
        for v in c.iter_mut() {
            *v = if rng.gen_bool(0.15) { 0 } else { rng.gen_range(0..60) };
        }
        if c.iter().sum::<u64>() == 0 {
            c[i % 4] = 1;
        }
        let (pred, gold) = expand(c[0], c[1], c[2], c[3], &mut rng);
        let cm = confusion(&pred, &gold).map_err(|e| e.to_string())?;
        ensure(
            cm == ConfusionMatrix {
                tp: c[0],
                fp: c[1],
                fn_: c[2],
                tn: c[3],
            },
            || format!("confusion of {c:?} built as {cm:?}"),
        )?;
        let m = metrics(&cm).map_err(|e| e.to_string())?;
        let o = oracle(&pred, &gold);
        for (a, b) in [(m.acc, o.acc), (m.macro_f1, o.macro_f1), (m.binary_f1, o.binary_f1), (m.mcc, o.mcc)] {
            worst = worst.max((a - b).abs());
        }
        ensure(worst <= 1e-12, || format!("matrix {c:?}: deviation {worst:e}"))?;
    }
    for c in [[5, 3, 0, 0], [0, 0, 4, 7], [3, 0, 2, 0], [0, 4, 0, 6], [9, 0, 0, 0], [0, 0, 0, 9]] {
        let m = metrics(&ConfusionMatrix {
            tp: c[0],
            fp: c[1],
            fn_: c[2],
            tn: c[3],
        })
        .map_err(|e| e.to_string())?;
        ensure(m.mcc == 0.0, || format!("degenerate {c:?} gave MCC {}", m.mcc))?;
    }
    let worked = metrics(&ConfusionMatrix {
        tp: 4,
        fp: 1,
        fn_: 2,
        tn: 13,
    })
    .map_err(|e| e.to_string())?
    .mcc;
    ensure(close(worked, 0.6299, 1e-4), || format!("worked matrix MCC {worked}"))?;
    Ok(format!("10000 matrices, max deviation {worst:.1e}; degenerate MCC 0; worked MCC {worked:.4}"))
}

fn retrieval_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ties = 0usize;
    let mut pools = 0usize;
    for round in 0..60 {
        let n = if round == 0 { 1000 } else { rng.gen_range(1..=1000) };
        let dim = rng.gen_range(2..12);
        let mut raw: Vec<(String, Vec<f32>)> = Vec::with_capacity(n);
        for i in 0..n {
            let v: Vec<f32> = if i > 0 && rng.gen_bool(0.3) {
                raw[rng.gen_range(0..i)].1.clone()
            } else {
                (0..dim).map(|_| rng.gen_range(-3..=3) as f32).collect()
            };
            raw.push((format!("f{:05}", rng.gen_range(0..100_000)), v));
        }
        raw.sort_by(|a, b| a.0.cmp(&b.0));
        raw.dedup_by(|a, b| a.0 == b.0);
        raw.shuffle(&mut rng);
        let raw: Vec<(String, Vec<f32>)> = raw.into_iter().filter(|(_, v)| v.iter().any(|x| *x != 0.0)).collect();
        if raw.is_empty() {
            continue;
        }
        let vectors: Vec<EmbeddingVector<f32>> = raw
            .iter()
            .map(|(id, v)| EmbeddingVector::normalized(id.clone(), v.clone()).expect("non-zero"))
            .collect();
        let index = FunctionIndex::new(vectors.clone()).map_err(|e| e.to_string())?;
        pools += 1;
        for _ in 0..5 {
            let q: Vec<f32> = loop {
                let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-3..=3) as f32).collect();
                if q.iter().any(|x| *x != 0.0) {
                    break q;
                }
            };
            let query = EmbeddingVector::normalized("s", q.clone()).expect("non-zero");
            let got = retrieve_top_k(&query, &index, 10).map_err(|e| e.to_string())?;
            let mut full: Vec<(f64, &str)> = vectors
                .iter()
                .map(|f| (cosine(&query, f).expect("same dim") as f64, f.unit_id.as_str()))
                .collect();
            full.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            let want: Vec<&str> = full.iter().take(10).map(|x| x.1).collect();
            let have: Vec<&str> = got.ranked.iter().map(|c| c.function_id.as_str()).collect();
            ensure(have == want, || format!("pool {n}: got {have:?}, brute force {want:?}"))?;
            ties += full.iter().take(10).collect::<Vec<_>>().windows(2).filter(|w| w[0].0 == w[1].0).count();
            let qn = q.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            for c in &got.ranked {
                let (_, v) = raw.iter().find(|(id, _)| *id == c.function_id).expect("known id");
                let vn = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                let dot: f64 = q.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
                ensure(close(c.score, dot / (qn * vn), 1e-5), || {
                    format!("score of {} is {}, direct cosine {}", c.function_id, c.score, dot / (qn * vn))
                })?;
            }
        }
    }
    ensure(ties > 0, || "no tied scores were exercised".into())?;
    Ok(format!("{pools} pools up to 1000 functions, {ties} tied adjacent ranks"))
}

fn leakage_suite() -> Check {
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let nproj = rng.gen_range(10..25);
        let projects: Vec<String> = (0..nproj).map(|i| format!("p{i:02}")).collect();
        let mut catalog = Catalog::new();
        let mut by_project: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in &projects {
            for f in 0..rng.gen_range(12..30) {
                let fid = format!("{p}:f{f:02}");
                let body = if rng.gen_bool(0.1) { 7 } else { rng.gen() };
                catalog.insert(
                    fid.clone(),
                    FunctionInfo {
                        project_id: p.clone(),
                        body_hash: body,
                    },
                );
                by_project.entry(p.clone()).or_default().push(fid);
            }
        }
        let mut positives = Vec::new();
        let mut ranked = BTreeMap::new();
        for p in &projects {
            let fns = &by_project[p];
            for sidx in 0..rng.gen_range(1..6) {
                let sid = format!("{p}:s{sidx}");
                let mut pick: Vec<&String> = fns.choose_multiple(&mut rng, 10).collect();
                pick.shuffle(&mut rng);
                let ranked_fns: Vec<Candidate> = pick
                    .iter()
                    .enumerate()
                    .map(|(r, f)| Candidate {
                        function_id: (*f).clone(),
                        score: 1.0 - r as f64 * 0.05,
                    })
                    .collect();
                positives.push(PositivePair {
                    sentence_id: sid.clone(),
                    function_id: ranked_fns[rng.gen_range(0..4)].function_id.clone(),
                    project_id: p.clone(),
                });
                ranked.insert(
                    sid.clone(),
                    RankedCandidates {
                        sentence_id: sid,
                        k: 10,
                        ranked: ranked_fns,
                    },
                );
            }
        }
        let split = split_by_project(&projects, [8, 1, 1], seed).map_err(|e| e.to_string())?;
        let cfg = SamplingConfig::default();
        let assembled = assemble_dataset(&positives, &ranked, &catalog, &split, &cfg, seed)
            .map_err(|e| e.to_string())?;

        let mut owner: HashMap<&str, Split> = HashMap::new();
        for sp in Split::ALL {
            for p in split.projects(sp) {
                ensure(owner.insert(p.as_str(), sp).is_none(), || {
                    format!("seed {seed}: project {p} in two splits")
                })?;
            }
        }
        ensure(owner.len() == projects.len(), || format!("seed {seed}: projects missing from split"))?;
        let sentence_project: HashMap<&str, &str> =
            positives.iter().map(|p| (p.sentence_id.as_str(), p.project_id.as_str())).collect();
        let mut seen = BTreeSet::new();
        for sp in Split::ALL {
            for e in assembled.split(sp) {
                let sproj = sentence_project[e.sentence_id.as_str()];
                let fproj = catalog[&e.function_id].project_id.as_str();
                ensure(owner[sproj] == sp, || {
                    format!("seed {seed}: sentence {} placed in {sp}", e.sentence_id)
                })?;
                ensure(owner[fproj] == sp, || {
                    format!("seed {seed}: function {} crosses into {sp}", e.function_id)
                })?;
                ensure(seen.insert((e.sentence_id.clone(), e.function_id.clone())), || {
                    format!("seed {seed}: duplicate pair ({}, {})", e.sentence_id, e.function_id)
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("100 assemblies, {checked} examples, no leakage"))
}

fn separability() -> Check {
    let start = Instant::now();
    let [tr, va, _] = planted_signal([600, 100, 100], 7, 256).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    ensure(cfg.batch_size == 16 && cfg.max_epochs <= 10, || format!("training defaults {cfg:?}"))?;
    let weighted_focal = LossConfig::default().for_variant(LossVariant::WeightedFocal);
    ensure(weighted_focal.gamma == 2.0 && weighted_focal.alpha == [1.0, 5.0], || {
        format!("weighted focal is {weighted_focal:?}")
    })?;
    let out = train(&tr, &va, &cfg, &weighted_focal, 42).map_err(|e| e.to_string())?;
    let m = evaluate_at(&out.model, &va, 0.5).map_err(|e| e.to_string())?;
    let baseline = all_negative_baseline(&va.labels);
    let elapsed = start.elapsed();
    ensure(close(baseline, 5.0 / 6.0, 1e-12), || format!("baseline accuracy {baseline}"))?;
    ensure(m.mcc >= 0.9, || format!("validation MCC {}", m.mcc))?;
    ensure(m.acc > baseline, || format!("accuracy {} does not beat {baseline}", m.acc))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "validation MCC {:.4}, acc {:.4} > {:.4}, {} epochs in {:.1}s",
        m.mcc,
        m.acc,
        baseline,
        out.model.trained_epochs,
        elapsed.as_secs_f64()
    ))
}

fn read_scores(path: &Path) -> Result<HashMap<String, f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, p) = l.split_once('\t').ok_or_else(|| format!("bad score line {l:?}"))?;
            Ok((id.to_string(), p.trim().parse::<f64>().map_err(|e| e.to_string())?))
        })
        .collect()
}

/// Mean oracle metrics over runs, each scored at `threshold`.
fn recompute(ws: &Path, split: &str, files: &[PathBuf], threshold: f64) -> Result<[f64; 4], String> {
    let examples = read_examples(ws, split)?;
    let gold: Vec<u8> = examples.iter().map(|e| e["label"].as_u64().unwrap_or(9) as u8).collect();
    let mut sum = [0.0; 4];
    for f in files {
        let scores = read_scores(f)?;
        ensure(scores.len() == examples.len(), || format!("{} rows in {}", scores.len(), f.display()))?;
        let pred: Vec<u8> = examples
            .iter()
            .map(|e| {
                let id = e["example_id"].as_str().unwrap_or_default();
                scores.get(id).map(|p| u8::from(*p >= threshold)).ok_or_else(|| format!("{id} unscored"))
            })
            .collect::<Result<_, String>>()?;
        let o = oracle(&pred, &gold);
        for (acc, v) in sum.iter_mut().zip([o.acc, o.macro_f1, o.binary_f1, o.mcc]) {
            *acc += v;
        }
    }
    Ok(sum.map(|v| v / files.len() as f64))
}

fn row_values(row: &Value) -> [f64; 4] {
    ["acc", "macro_f1", "binary_f1", "mcc"].map(|k| row[k].as_f64().unwrap_or(f64::NAN))
}

fn same_row(a: [f64; 4], b: [f64; 4]) -> bool {
    a.iter().zip(&b).all(|(x, y)| close(*x, *y, 1e-12))
}

fn table_lines(text: &str, first: &str) -> usize {
    text.lines()
        .skip_while(|l| !l.starts_with(first))
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .count()
}

fn harness_shape(trained: &Result<PathBuf, String>) -> Check {
    let ws = trained.as_ref().map_err(|e| e.clone())?;
    let reports = ws.join("reports");

    let ablation = read_json(&reports.join("run1.ablation.report"))?;
    let rows = ablation["body"]["rows"].as_array().ok_or("ablation report has no rows")?;
    let variants: Vec<&str> = rows.iter().map(|r| r["variant"].as_str().unwrap_or("?")).collect();
    ensure(
        variants == ["cross_entropy", "focal", "weighted_cross_entropy", "weighted_focal"],
        || format!("ablation rows {variants:?}"),
    )?;
    let labels = ["CE", "Focal", "WeightedCE", "WeightedFocal"];
    let txt = std::fs::read_to_string(reports.join("run1.ablation.txt")).map_err(|e| e.to_string())?;
    let table: Vec<&str> = txt
        .lines()
        .skip_while(|l| !l.starts_with("Loss"))
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    ensure(table == labels, || format!("ablation table:\n{txt}"))?;
    let split = ablation["split"].as_str().unwrap_or_default().to_string();
    let threshold = ablation["body"]["threshold"].as_f64().unwrap_or(f64::NAN);
    for (row, variant) in rows.iter().zip(labels) {
        let seeds: Vec<u64> = row["summary"]["runs"]
            .as_array()
            .ok_or("ablation row has no runs")?
            .iter()
            .map(|r| r["seed"].as_u64().unwrap_or(0))
            .collect();
        let files: Vec<PathBuf> = seeds
            .iter()
            .map(|s| reports.join("run1.ablation").join(format!("{variant}-s{s}.{split}.scores")))
            .collect();
        let want = recompute(ws, &split, &files, threshold)?;
        let have = row_values(&row["summary"]["mean"]);
        ensure(same_row(want, have), || format!("{variant}: stored {have:?}, recomputed {want:?}"))?;
    }

    let sweep = read_json(&reports.join("run1.sweep.report"))?;
    let srows = sweep["body"]["sweep"]["rows"].as_array().ok_or("sweep report has no rows")?;
    let grid: Vec<f64> = srows.iter().map(|r| r["threshold"].as_f64().unwrap_or(f64::NAN)).collect();
    let expect = [0.40, 0.45, 0.50, 0.55, 0.60];
    ensure(grid.len() == 5 && grid.iter().zip(expect).all(|(a, b)| close(*a, b, 1e-12)), || {
        format!("sweep grid {grid:?}")
    })?;
    let txt = std::fs::read_to_string(reports.join("run1.sweep.txt")).map_err(|e| e.to_string())?;
    ensure(table_lines(&txt, "Threshold") == 5, || format!("sweep table:\n{txt}"))?;
    let run = read_json(&ws.join("models/run1/run.json"))?;
    let seeds: Vec<u64> = run["seeds"].as_array().ok_or("run.json has no seeds")?.iter().filter_map(|s| s.as_u64()).collect();
    let ssplit = sweep["split"].as_str().unwrap_or_default().to_string();
    let files: Vec<PathBuf> = seeds
        .iter()
        .map(|s| reports.join("run1").join(format!("seed-{s}.{ssplit}.scores")))
        .collect();
    for (row, t) in srows.iter().zip(expect) {
        let want = recompute(ws, &ssplit, &files, t)?;
        let have = row_values(row);
        ensure(same_row(want, have), || format!("threshold {t}: stored {have:?}, recomputed {want:?}"))?;
    }
    Ok(format!(
        "ablation 4 rows on {split}, sweep 5 rows on {ssplit}; all rows recomputed from {} score files",
        4 * seeds.len() + files.len()
    ))
}

/// Counts ASCII subtokens: identifier runs split at case and digit
/// boundaries, every other non-space character except `_` on its own, and
/// each marker as one token.
fn recount(text: &str) -> usize {
    let body = text.replace("[CLS]", " \u{1} ").replace("[SEP]", " \u{1} ");
    let chars: Vec<char> = body.chars().collect();
    let mut n = 0;
    for (i, &c) in chars.iter().enumerate() {
        if c == '\u{1}' {
            n += 1;
        } else if c.is_ascii_alphanumeric() {
            let prev = if i > 0 { Some(chars[i - 1]) } else { None };
            let starts = match prev {
                Some(p) if p.is_ascii_alphanumeric() => {
                    p.is_ascii_digit() != c.is_ascii_digit()
                        || (p.is_ascii_lowercase() && c.is_ascii_uppercase())
                        || (p.is_ascii_uppercase()
                            && c.is_ascii_uppercase()
                            && chars.get(i + 1).is_some_and(|x| x.is_ascii_lowercase()))
                }
                _ => true,
            };
            n += usize::from(starts);
        } else if !c.is_whitespace() && c != '_' {
            n += 1;
        }
    }
    n
}

fn truncation_contract() -> Check {
    let fx = oversized_sequences(1000, 512, 5);
    ensure(fx.code.values().all(|c| recount(c) > 512), || "fixture has code within budget".into())?;
    let out = export_joint_sequences(&fx.examples, &fx.sentences, &fx.code, 512, &SubtokenCounter)
        .map_err(|e| e.to_string())?;
    ensure(out.errors.is_empty(), || format!("{} sequence errors", out.errors.len()))?;
    ensure(out.records.len() == 1000, || format!("{} records", out.records.len()))?;
    let by_id: HashMap<&str, _> = fx.examples.iter().map(|e| (e.example_id.as_str(), e)).collect();
    let mut violations = 0;
    let mut longest = 0;
    for r in &out.records {
        let e = by_id[r.example_id.as_str()];
        let sentence = &fx.sentences[&e.sentence_id];
        let code = &fx.code[&e.function_id];
        let n = recount(&r.text);
        longest = longest.max(n);
        let prefix = format!("[CLS] {sentence} [SEP] ");
        let kept = r.text.strip_prefix(&prefix).and_then(|t| t.strip_suffix(" [SEP]"));
        let intact = kept.is_some_and(|k| !k.is_empty() && code.starts_with(k));
        if n > 512 || n != r.tokens || !intact || !r.truncated {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!("1000 oversized pairs, longest {longest} tokens, 0 violations"))
}

fn files_under(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
                out.insert(path.strip_prefix(root).expect("under root").to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn determinism(first: &Result<PathBuf, String>, root: &Path) -> Check {
    let a = first.as_ref().map_err(|e| e.clone())?;
    let b = build_workspace(root)?.ws;
    model_stages(&b)?;
    let mut compared = 0;
    for sub in ["datasets/main", "models/run1", "reports"] {
        let fa = files_under(&a.join(sub))?;
        let fb = files_under(&b.join(sub))?;
        let na: Vec<&PathBuf> = fa.keys().collect();
        let nb: Vec<&PathBuf> = fb.keys().collect();
        ensure(na == nb, || format!("{sub}: file sets differ"))?;
        for (path, bytes) in &fa {
            ensure(fb[path] == *bytes, || format!("{sub}/{} differs", path.display()))?;
            compared += 1;
        }
    }
    ensure(compared > 0, || "nothing to compare".into())?;
    Ok(format!("{compared} dataset, checkpoint and report files byte-identical across two runs"))
}

// ---------------------------------------------------------------------------

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let built = build_workspace(&dir.path().join("a"));
    let trained = built
        .as_ref()
        .map_err(|e| e.clone())
        .and_then(|b| model_stages(&b.ws).map(|_| b.ws.clone()));

    let results = [
        run("split counts", || table_counts(&built)),
        run("loss correctness", loss_correctness),
        run("gradient check", gradient_check),
        run("metric oracle", metric_oracle),
        run("retrieval oracle", retrieval_oracle),
        run("leakage suite", leakage_suite),
        run("synthetic separability", separability),
        run("ablation and sweep shape", || harness_shape(&trained)),
        run("truncation contract", truncation_contract),
        run("determinism", || determinism(&trained, &dir.path().join("b"))),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
