//! End-to-end acceptance checks. Criteria 1–5 and 7–9 read trained
//! artifacts from the runs directory (override with `LSA_RUNS_DIR`);
//! `scripts/prepare_acceptance.sh` produces them. Each criterion prints
//! one `criterion N: PASS/FAIL` line.

use lsa::alphabet::{Alphabet, LetterString};
use lsa::dataset;
use lsa::eval::{self, Cell, Grouping};
use lsa::interp;
use lsa::llmprobe::{self, ProbeConfig};
use lsa::model::{
    gradients, load_checkpoint, save_checkpoint, ModelConfig, ParamSet, Params, TokenBatch,
};
use lsa::rasp;
use lsa::taskgen::{build_alphabet_pool, build_task, oracle_answer, task_rng, AnalogyTask};
use lsa::tokenizer::{decode_task, encode_task};
use lsa::train::EpochMetrics;
use lsa::transform::{TransformClass, Transformation};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::Instant;

fn runs_dir() -> PathBuf {
    std::env::var("LSA_RUNS_DIR").map(PathBuf::from).unwrap_or_else(|_| PathBuf::from("../../runs"))
}

fn checkpoint(run: &str) -> Params {
    let path = runs_dir().join("models").join(run).join("checkpoints/final.ckpt");
    let (params, _) = load_checkpoint(&path)
        .unwrap_or_else(|e| panic!("missing trained artifact {} ({e}); run scripts/prepare_acceptance.sh", path.display()));
    params
}

fn suite(dataset: &str, name: &str, limit: usize) -> Vec<AnalogyTask> {
    let dir = runs_dir().join("data").join(dataset);
    let mut tasks = dataset::load_split(&dir, name)
        .unwrap_or_else(|e| panic!("missing dataset {} ({e}); run scripts/prepare_acceptance.sh", dir.display()));
    tasks.truncate(limit);
    tasks
}

fn cell(new_alphabet: bool, class: TransformClass) -> Cell {
    Cell { new_alphabet, class }
}

fn verdict(n: usize, ok: bool, detail: &str) {
    println!("criterion {n}: {} — {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn seen_seen_accuracy(params: &Params, dataset: &str, limit: usize) -> f64 {
    let tasks: Vec<AnalogyTask> =
        suite(dataset, "test_id", usize::MAX).into_iter().filter(|t| !t.is_copy).take(limit).collect();
    let results = eval::evaluate(params, &tasks, cell(false, TransformClass::Seen)).unwrap();
    eval::accuracy(&results).unwrap()
}

fn new_alpha_accuracy(params: &Params, dataset: &str, limit: usize) -> f64 {
    let tasks = suite(dataset, "ood_seen_new_alpha", limit);
    let results = eval::evaluate(params, &tasks, cell(true, TransformClass::Seen)).unwrap();
    eval::accuracy(&results).unwrap()
}

#[test]
fn criterion_01_copy_task_effect() {
    let copy = seen_seen_accuracy(&checkpoint("desk-copy-20"), "desk-copy-20", 1000);
    let nocopy = seen_seen_accuracy(&checkpoint("desk-nocopy-20"), "desk-nocopy-20", 1000);
    let ok = copy >= 0.80 && copy - nocopy >= 0.10;
    verdict(1, ok, &format!("copy-trained seen/seen {copy:.3} vs no-copy {nocopy:.3} (need ≥0.80 and gap ≥0.10)"));
}

#[test]
fn criterion_02_alphabet_heterogeneity() {
    let m200 = checkpoint("desk-copy-200");
    let m20 = checkpoint("desk-copy-20");
    let seen200 = seen_seen_accuracy(&m200, "desk-copy-200", 1000);
    let new200 = new_alpha_accuracy(&m200, "desk-copy-200", 1000);
    let seen20 = seen_seen_accuracy(&m20, "desk-copy-20", 1000);
    let new20 = new_alpha_accuracy(&m20, "desk-copy-20", 1000);
    let gap200 = seen200 - new200;
    let gap20 = seen20 - new20;
    let ok = gap200 <= 0.15 && gap20 > gap200;
    verdict(
        2,
        ok,
        &format!(
            "200-alphabet seen {seen200:.3} / new {new200:.3} (gap {gap200:.3}, need ≤0.15); \
             20-alphabet gap {gap20:.3} (need larger)"
        ),
    );
}

#[test]
fn criterion_03_new_transformation_ceiling() {
    let params = checkpoint("desk-copy-200");
    let novel_tasks = suite("desk-copy-200", "ood_novel_seen_alpha", 1000);
    let novel = eval::evaluate(&params, &novel_tasks, cell(false, TransformClass::Novel)).unwrap();
    let novel_acc = eval::accuracy(&novel).unwrap();
    let by_tag = eval::group_counts(&novel, Grouping::Transformation);
    let tag_acc = |tag: &str| by_tag.get(tag).map(|&(c, t)| c as f64 / t as f64).unwrap_or(0.0);
    let comp_tasks = suite("desk-copy-200", "ood_comp_seen_alpha", 1000);
    let comp = eval::evaluate(&params, &comp_tasks, cell(false, TransformClass::Compositional)).unwrap();
    let comp_by_tag = eval::group_counts(&comp, Grouping::Transformation);
    let best_comp = comp_by_tag
        .iter()
        .filter(|(_, &(_, t))| t >= 30)
        .map(|(tag, &(c, t))| (tag.clone(), c as f64 / t as f64))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let ok = novel_acc < 0.35
        && best_comp.1 > 0.30
        && tag_acc("reverse") < 0.10
        && tag_acc("shift") < 0.10
        && tag_acc("replicate") < 0.10;
    verdict(
        3,
        ok,
        &format!(
            "novel {novel_acc:.3} (<0.35); best compositional tag {} {:.3} (>0.30); \
             reverse {:.3} / shift {:.3} / replicate {:.3} (each <0.10)",
            best_comp.0,
            best_comp.1,
            tag_acc("reverse"),
            tag_acc("shift"),
            tag_acc("replicate")
        ),
    );
}

#[test]
fn criterion_04_failure_mode_confusion() {
    let params = checkpoint("desk-nocopy-20");
    let tasks: Vec<AnalogyTask> = suite("desk-nocopy-20", "test_id", usize::MAX)
        .into_iter()
        .filter(|t| matches!(t.transformation, Transformation::Predecessor | Transformation::Successor))
        .collect();
    let results = eval::evaluate(&params, &tasks, cell(false, TransformClass::Seen)).unwrap();
    let confusion = |from: Transformation, to: &str| -> (usize, usize) {
        let errors: Vec<_> = results
            .iter()
            .filter(|r| r.transformation == from && !r.correct)
            .collect();
        let hits = errors
            .iter()
            .filter(|r| r.error_label.as_deref() == Some(&format!("applied_{to}")))
            .count();
        (hits, errors.len())
    };
    let (ps, pn) = confusion(Transformation::Predecessor, "successor");
    let (sp, sn) = confusion(Transformation::Successor, "predecessor");
    let ok = pn > 0 && sn > 0 && ps * 2 >= pn && sp * 2 >= sn;
    verdict(
        4,
        ok,
        &format!(
            "predecessor errors applied_successor {ps}/{pn}; successor errors applied_predecessor {sp}/{sn} (each ≥50%)"
        ),
    );
}

fn final_val_accuracy(run: &str) -> f64 {
    let path = runs_dir().join("models").join(run).join("metrics.jsonl");
    let body = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing metrics {} ({e}); run scripts/prepare_acceptance.sh", path.display()));
    let last = body.lines().filter(|l| !l.trim().is_empty()).last().expect("metrics has rows");
    let m: EpochMetrics = serde_json::from_str(last).expect("metrics row parses");
    m.val_accuracy
}

#[test]
fn criterion_05_few_shot_degradation() {
    let one = final_val_accuracy("desk-nocopy-20");
    let five = final_val_accuracy("desk-5ex-nocopy-20");
    verdict(5, one > five, &format!("1-example val accuracy {one:.3} vs 5-example {five:.3} (need strictly higher)"));
}

#[test]
fn criterion_06_symbolic_oracle_equivalence() {
    let start = Instant::now();
    let alphabets = build_alphabet_pool(25, 777);
    let mut total = 0usize;
    let mut agree = 0usize;
    for alphabet in &alphabets {
        let prefix: String = alphabet.order().iter().take(10).map(|l| l.symbol()).collect();
        for len in 2..=6usize {
            for ex_start in 1..=(10 - len) {
                let ex_in = alphabet.run(ex_start, len).unwrap();
                let ex_out = oracle_answer(Transformation::Predecessor, alphabet, &ex_in, None).unwrap();
                for qy_start in 1..=(10 - len) {
                    let query = alphabet.run(qy_start, len).unwrap();
                    let expected = oracle_answer(Transformation::Predecessor, alphabet, &query, None).unwrap();
                    let task_string =
                        format!("{prefix}|{}>{}|{}", ex_in.compact(), ex_out.compact(), query.compact());
                    let out = rasp::run_predecessor_program(&task_string).unwrap();
                    let got: String = out.answer.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
                    total += 1;
                    agree += (got == expected.spaced()) as usize;
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = agree == total && elapsed < 60.0;
    verdict(6, ok, &format!("program agrees with oracle on {agree}/{total} instances in {elapsed:.1}s (<60s)"));
}

#[test]
fn criterion_07_matching_head_causality() {
    let params = checkpoint("desk-copy-200");
    let alphabet = Alphabet::standard();
    let scan_probe =
        interp::fixed_geometry_tasks(Transformation::Predecessor, &alphabet, 32, 3, 101).unwrap();
    let scores = interp::matching_head_scores(&params, &scan_probe).unwrap();
    let ((layer, head), similarity) = scores[0];
    let pairs = interp::paired_pred_succ_tasks(&alphabet, 200, 3, 202).unwrap();
    let mut flips = 0usize;
    for (target, donor) in &pairs {
        let spec = interp::PatchSpec { layer, head, donor: donor.clone(), target: target.clone() };
        let out = interp::patch_attention(&params, &spec).unwrap();
        let succ = oracle_answer(Transformation::Successor, &target.alphabet, &target.query, None)
            .unwrap()
            .spaced();
        flips += (out.patched == succ) as usize;
    }
    let flip_rate = flips as f64 / pairs.len() as f64;
    let mut identity_flips = 0usize;
    for (target, _) in pairs.iter().take(20) {
        let spec = interp::PatchSpec { layer, head, donor: target.clone(), target: target.clone() };
        identity_flips += interp::patch_attention(&params, &spec).unwrap().flipped as usize;
    }
    let ok = flip_rate >= 0.60 && identity_flips == 0;
    verdict(
        7,
        ok,
        &format!(
            "top head L{layer}H{head} (similarity {similarity:.3}); successor-donor patches flip \
             {flips}/200 ({:.1}%, need ≥60%); identity patches flip {identity_flips}/20 (need 0)",
            100.0 * flip_rate
        ),
    );
}

fn mean_offdiag_cosine(params: &Params, tasks: &[AnalogyTask]) -> f64 {
    let m = interp::mapping_invariance(params, tasks).unwrap();
    let n = m.dim().0;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m[[i, j]];
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

#[test]
fn criterion_08_mapping_invariance() {
    let trained = checkpoint("desk-copy-200");
    let alphabet = Alphabet::standard();
    let tasks = interp::fixed_geometry_tasks(Transformation::Predecessor, &alphabet, 50, 3, 303).unwrap();
    let trained_cos = mean_offdiag_cosine(&trained, &tasks);
    let untrained = ParamSet::init(&trained.config, 424_242).unwrap();
    let untrained_cos = mean_offdiag_cosine(&untrained, &tasks);
    let ok = trained_cos >= 0.9 && trained_cos - untrained_cos >= 0.2;
    verdict(
        8,
        ok,
        &format!("trained mean cosine {trained_cos:.3} (≥0.9); untrained {untrained_cos:.3} (≥0.2 lower)"),
    );
}

#[test]
fn criterion_09_role_separation() {
    let params = checkpoint("desk-copy-200");
    let alphabet = Alphabet::standard();
    let tasks = interp::fixed_geometry_tasks(Transformation::Predecessor, &alphabet, 200, 3, 404).unwrap();
    let pca = interp::role_pca(&params, &tasks).unwrap();
    let before = pca.separation[0];
    let after = pca.separation[1];
    verdict(
        9,
        after > before,
        &format!("separation before layer 1: {before:.3}; after: {after:.3} (need strictly higher)"),
    );
}

fn sample_tiny_batch() -> TokenBatch {
    let alphabet = Alphabet::standard();
    let tags = [Transformation::Successor, Transformation::Sort];
    let tasks: Vec<AnalogyTask> = (0..2)
        .map(|i| {
            let mut rng = task_rng(7, 0, i as u64);
            build_task(tags[i], &alphabet, &mut rng, 1, i == 0).unwrap()
        })
        .collect();
    TokenBatch::from_tasks(&tasks)
}

#[test]
fn criterion_10_numerical_soundness() {
    let start = Instant::now();
    // gradient check in f64
    let mut cfg = ModelConfig::tiny();
    cfg.dropout = 0.0;
    let params = ParamSet::<f64>::init(&cfg, 11).unwrap();
    let batch = sample_tiny_batch();
    let (_, grads) = gradients(&params, &batch, true, 0).unwrap();
    let flat = params.to_flat();
    let gflat = grads.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let i = rng.random_range(0..flat.len());
        let mut plus = params.clone();
        let mut minus = params.clone();
        let mut fp = flat.clone();
        fp[i] += eps;
        plus.from_flat(&fp).unwrap();
        fp[i] = flat[i] - eps;
        minus.from_flat(&fp).unwrap();
        let (lp, _) = gradients(&plus, &batch, true, 0).unwrap();
        let (lm, _) = gradients(&minus, &batch, true, 0).unwrap();
        let fd = (lp - lm) / (2.0 * eps);
        let rel = (gflat[i] - fd).abs() / (gflat[i].abs() + fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    // deterministic eval-mode decoding
    let small = Params::init(&cfg, 18).unwrap();
    let alphabet = Alphabet::standard();
    let tasks: Vec<AnalogyTask> = (0..8)
        .map(|i| {
            let mut rng = task_rng(70 + i, 0, 0);
            build_task(Transformation::Sort, &alphabet, &mut rng, 1, false).unwrap()
        })
        .collect();
    let d1 = eval::greedy_decode(&small, &tasks, 0).unwrap();
    let d2 = eval::greedy_decode(&small, &tasks, 0).unwrap();
    // bit-identical checkpoint round trip
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.ckpt");
    save_checkpoint(&path, &small, 18, 0).unwrap();
    let (loaded, _) = load_checkpoint(&path).unwrap();
    let bits_equal = small
        .to_flat()
        .iter()
        .zip(loaded.to_flat().iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst < 1e-4 && d1 == d2 && bits_equal && elapsed < 300.0;
    verdict(
        10,
        ok,
        &format!(
            "worst gradient rel err {worst:.2e} (<1e-4); decode deterministic: {}; \
             checkpoint bit-identical: {bits_equal}; {elapsed:.1}s (<300s)",
            d1 == d2
        ),
    );
}

#[test]
fn criterion_11_generator_integrity() {
    let start = Instant::now();
    let train = suite("desk-copy-20", "train", usize::MAX);
    let copy_fraction = train.iter().filter(|t| t.is_copy).count() as f64 / train.len() as f64;
    let val = suite("desk-copy-20", "val", usize::MAX);
    let mut oracle_ok = 0usize;
    let mut roundtrip_ok = 0usize;
    for task in &val {
        let expected = oracle_answer(task.transformation, &task.alphabet, &task.query, None);
        oracle_ok += (expected.ok().as_ref() == Some(&task.target)) as usize;
        let enc = encode_task(task);
        let decoded = decode_task(&enc.encoder, &enc.decoder_target).unwrap();
        let same = decoded.alphabet.order_string() == task.alphabet.order_string()
            && decoded.examples == task.examples
            && decoded.query == task.query
            && decoded.target == task.target;
        roundtrip_ok += same as usize;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = oracle_ok == val.len()
        && roundtrip_ok == val.len()
        && (copy_fraction - 0.5).abs() <= 0.01
        && elapsed < 600.0;
    verdict(
        11,
        ok,
        &format!(
            "oracle match {oracle_ok}/{}; tokenizer round trip {roundtrip_ok}/{0}; \
             copy fraction {copy_fraction:.4} (0.5±0.01); {elapsed:.1}s (<600s)",
            val.len()
        ),
    );
}

/// Minimal scripted chat-completions endpoint for criterion 12.
fn mock_server(replies: Vec<String>) -> (String, std::thread::JoinHandle<()>) {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        for content in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut content_length = 0usize;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if let Some(v) = header.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                if header == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let payload =
                serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                    .to_string();
            let reply = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), handle)
}

#[test]
fn criterion_12_probe_harness() {
    let alphabet = Alphabet::standard();
    let tasks: Vec<AnalogyTask> = (0..4)
        .map(|i| {
            let mut rng = task_rng(80 + i, 0, 0);
            build_task(Transformation::Predecessor, &alphabet, &mut rng, 1, false).unwrap()
        })
        .collect();
    // script: correct, correct, wrong, unparseable → accuracy 0.5, parse failures 0.25
    let replies = vec![
        format!("The answer is {}", tasks[0].target.spaced()),
        tasks[1].target.spaced(),
        "z z z".to_string(),
        "I cannot solve this one.".to_string(),
    ];
    let (endpoint, handle) = mock_server(replies);
    std::env::set_var("LSA_ACCEPT_PROBE_KEY", "k");
    let mut config = ProbeConfig::new(endpoint, "mock-model", "LSA_ACCEPT_PROBE_KEY");
    config.max_concurrency = 1;
    let report = llmprobe::run_probe(&config, &tasks, None).unwrap();
    handle.join().unwrap();
    let probe_rows = report.to_eval_results(&tasks, cell(false, TransformClass::Seen));
    let probe_table =
        eval::aggregate(&[eval::group_counts(&probe_rows, Grouping::Transformation)], false, 0).unwrap();
    let local = ParamSet::init(&ModelConfig::tiny(), 5).unwrap();
    let local_rows = eval::evaluate(&local, &tasks, cell(false, TransformClass::Seen)).unwrap();
    let local_table =
        eval::aggregate(&[eval::group_counts(&local_rows, Grouping::Transformation)], false, 0).unwrap();
    let csv = llmprobe::joined_csv(&[("local", &local_table), ("mock-model", &probe_table)]);
    let ok = report.aborted.is_none()
        && report.accuracy() == Some(0.5)
        && report.parse_failure_rate() == Some(0.25)
        && csv.starts_with("source,group,")
        && csv.contains("mock-model,predecessor,0.500000,0.500000")
        && csv.contains("local,predecessor,");
    verdict(
        12,
        ok,
        &format!(
            "mock probe accuracy {:?} (expect 0.5), parse failures {:?} (expect 0.25), joined CSV rows present",
            report.accuracy(),
            report.parse_failure_rate()
        ),
    );
}
