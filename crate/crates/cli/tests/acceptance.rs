//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. `cargo test --test acceptance -- 4 11` runs a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use embedkit::data::synth::{generate, SynthConfig};
use embedkit::data::{BatchSampler, PairRecord, SamplerConfig};
use embedkit::encoder::{
    sparse_pool, Checkpoint, EncoderConfig, EncoderModel, MaskSpec, Pooling, RetroMaeInput, TextEncoder, Vocab,
};
use embedkit::objectives::{
    batch_norm_loss, contrastive_loss, dot_scores, flops_loss, kd_loss, mlm_distill_loss, mlm_loss, norm_loss,
    sparse_total_loss, teacher_entropy, Candidates, ContrastiveBatch, ContrastiveConfig, DistillConfig,
    SparseLossConfig, SparseTerms,
};
use embedkit::retrieval::metrics::{mrr_at_k, ndcg_at_k, recall_at_k, Judgments};
use embedkit::retrieval::trec::{read_qrels, read_run};
use embedkit::retrieval::{InvertedIndex, SparseVector};
use embedkit::seed;
use embedkit::tensor::{Graph, Tensor, Var};
use embedkit::training::{merge_models, StageConfig, StageData, StageKind, Trainer};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fail<T>(msg: impl Into<String>) -> Result<T, String> {
    Err(msg.into())
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the backward-pass
/// gradient of `f` and central differences with step `h`.
fn gradient_error<F>(inputs: &[Tensor], f: F) -> Result<f64, String>
where
    F: for<'g> Fn(&[Var<'g>]) -> embedkit::Result<Var<'g>>,
{
    const H: f64 = 1e-5;
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = ok(f(&vars))?;
    ok(g.backward(loss))?;
    let mut analytic = Vec::new();
    for v in &vars {
        match v.grad() {
            Some(t) => analytic.extend_from_slice(t.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, v.value().len())),
        }
    }
    let eval = |ins: &[Tensor]| -> Result<f64, String> {
        let g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        Ok(ok(f(&vars))?.item())
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            numeric.push((eval(&plus)? - eval(&minus)?) / (2.0 * H));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    Ok(if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    })
}

fn random_counts(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..=max)).collect()
}

/// Values in `[-r, r]` kept away from zero, so `relu` kinks sit far from
/// every finite-difference probe.
fn off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, r: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.random_range(0.01..r);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn segments(lens: &[usize]) -> Vec<(usize, usize)> {
    let mut start = 0;
    lens.iter()
        .map(|&l| {
            let s = (start, l);
            start += l;
            s
        })
        .collect()
}

fn criterion_gradients() -> Outcome {
    const INSTANCES: u64 = 20;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for inst in 0..INSTANCES {
        let rng = &mut seed::rng(101, &[inst]);

        let n = rng.random_range(2..=4);
        let d = rng.random_range(3..=8);
        let counts = random_counts(rng, n, 2);
        let owners = ok(Candidates::from_counts(&counts))?.owners;
        let cfg = ContrastiveConfig {
            tau: rng.random_range(0.05..1.0),
            alpha: rng.random_range(0.0..1.0),
            beta: rng.random_range(0.0..1.0),
            gamma: rng.random_range(0.0..1.0),
        };
        let mut inputs = vec![uniform(rng, n, d, -1.0, 1.0), uniform(rng, n, d, -1.0, 1.0)];
        if !owners.is_empty() {
            inputs.push(uniform(rng, owners.len(), d, -1.0, 1.0));
        }
        record(
            "contrastive",
            gradient_error(&inputs, |v| {
                let batch = ContrastiveBatch::new(v[0], v[1], v.get(2).copied(), owners.clone())?;
                contrastive_loss(&batch, &cfg)
            })?,
        );

        let n = rng.random_range(1..=4);
        let cands = ok(Candidates::from_counts(&random_counts(rng, n, 3)))?;
        let mask = cands.mask();
        let teacher = uniform(rng, n, cands.width(), -3.0, 3.0);
        let dcfg = DistillConfig {
            tau_kd: rng.random_range(0.5..2.0),
            normalize: rng.random_bool(0.5),
        };
        let student = uniform(rng, n, cands.width(), -3.0, 3.0);
        record(
            "kd",
            gradient_error(&[student], |v| kd_loss(v[0], &teacher, &mask, &dcfg))?,
        );

        let rows = rng.random_range(2..=6);
        let vocab = rng.random_range(5..=12);
        let mut labels: Vec<(usize, u32)> = Vec::new();
        for r in 0..rows {
            if r == 0 || rng.random_bool(0.6) {
                labels.push((r, rng.random_range(0..vocab as u32)));
            }
        }
        let logits = uniform(rng, rows, vocab, -3.0, 3.0);
        record(
            "mlm",
            gradient_error(std::slice::from_ref(&logits), |v| mlm_loss(v[0], &labels))?,
        );
        let target = uniform(rng, rows, vocab, -3.0, 3.0);
        let picked: Vec<usize> = labels.iter().map(|l| l.0).collect();
        record(
            "mlm_distill",
            gradient_error(&[logits], |v| mlm_distill_loss(v[0], &target, &picked))?,
        );

        let b = rng.random_range(1..=4);
        let v = rng.random_range(3..=10);
        let weights = uniform(rng, b, v, 0.0, 2.0);
        record("flops", gradient_error(&[weights], |v| flops_loss(v[0]))?);

        let len = rng.random_range(2..=6);
        let positions: Vec<bool> = (0..len).map(|p| p == 0 || rng.random_bool(0.7)).collect();
        let v = rng.random_range(3..=10);
        let logits = off_zero(rng, len, v, 2.0);
        record("norm", gradient_error(&[logits], |v| norm_loss(v[0], &positions))?);

        let n = rng.random_range(1..=3);
        let cands = ok(Candidates::from_counts(&random_counts(rng, n, 2)))?;
        let vocab = rng.random_range(5..=10);
        let qlens: Vec<usize> = (0..n).map(|_| rng.random_range(1..=4)).collect();
        let plens: Vec<usize> = (0..cands.width()).map(|_| rng.random_range(1..=4)).collect();
        let (qseg, pseg) = (segments(&qlens), segments(&plens));
        let mask = cands.mask();
        let teacher = uniform(rng, n, cands.width(), -3.0, 3.0);
        let dcfg = DistillConfig {
            tau_kd: rng.random_range(0.5..2.0),
            normalize: rng.random_bool(0.5),
        };
        let scfg = SparseLossConfig {
            lambda_q: rng.random_range(0.0..0.5),
            lambda_p: rng.random_range(0.0..0.5),
            sigma_q: rng.random_range(0.0..0.5),
            sigma_p: rng.random_range(0.0..0.5),
        };
        let inputs = [
            off_zero(rng, qlens.iter().sum(), vocab, 2.0),
            off_zero(rng, plens.iter().sum(), vocab, 2.0),
        ];
        record(
            "sparse_composite",
            gradient_error(&inputs, |v| {
                let q = sparse_pool(v[0], &qseg)?;
                let p = sparse_pool(v[1], &pseg)?;
                let terms = SparseTerms {
                    kd: kd_loss(dot_scores(q, p)?, &teacher, &mask, &dcfg)?,
                    flops_q: flops_loss(q)?,
                    flops_p: flops_loss(p)?,
                    norm_q: batch_norm_loss(q)?,
                    norm_p: batch_norm_loss(p)?,
                };
                sparse_total_loss(&terms, &scfg)
            })?,
        );
    }
    let elapsed = start.elapsed();
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    let detail = format!(
        "{INSTANCES} instances per loss, worst relative error: {}; {:.1}s",
        summary.join(", "),
        elapsed.as_secs_f64()
    );
    if worst.values().all(|&e| e < TOL) && elapsed < Duration::from_secs(60) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Direct loop over the denominator terms of the contrastive loss.
fn contrastive_oracle(q: &Tensor, p: &Tensor, negs: &[(usize, Vec<f64>)], cfg: &ContrastiveConfig) -> f64 {
    let n = q.rows();
    let s = |a: &[f64], b: &[f64]| (cosine(a, b) / cfg.tau).exp();
    let mut total = 0.0;
    for i in 0..n {
        let pos = s(q.row(i), p.row(i));
        let mut denom = pos;
        for j in (0..n).filter(|&j| j != i) {
            denom += cfg.alpha * s(q.row(i), p.row(j));
            denom += cfg.beta * s(q.row(i), q.row(j));
            denom += cfg.gamma * s(p.row(i), p.row(j));
        }
        for (_, neg) in negs.iter().filter(|(o, _)| *o == i) {
            denom += cfg.alpha * s(q.row(i), neg);
            denom += cfg.gamma * s(p.row(i), neg);
        }
        total += -(pos / denom).ln();
    }
    total / n as f64
}

fn criterion_contrastive_oracle() -> Outcome {
    const TOL: f64 = 1e-10;
    let mut worst = 0.0f64;
    let mut cases = 0;
    for b in 0..10u64 {
        let rng = &mut seed::rng(202, &[b]);
        let n = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let counts = random_counts(rng, n, 2);
        let owners = ok(Candidates::from_counts(&counts))?.owners;
        let tau = rng.random_range(0.05..1.0);
        let q = uniform(rng, n, d, -1.0, 1.0);
        let p = uniform(rng, n, d, -1.0, 1.0);
        let negs = uniform(rng, owners.len(), d, -1.0, 1.0);
        let listed: Vec<(usize, Vec<f64>)> = owners
            .iter()
            .enumerate()
            .map(|(k, &o)| (o, negs.row(k).to_vec()))
            .collect();
        for combo in 0..8u32 {
            let bit = |i: u32| f64::from((combo >> i) & 1);
            let cfg = ContrastiveConfig {
                tau,
                alpha: bit(0),
                beta: bit(1),
                gamma: bit(2),
            };
            let g = Graph::new();
            let neg_var = (!owners.is_empty()).then(|| g.constant(negs.clone()));
            let batch = ok(ContrastiveBatch::new(
                g.constant(q.clone()),
                g.constant(p.clone()),
                neg_var,
                owners.clone(),
            ))?;
            let got = ok(contrastive_loss(&batch, &cfg))?.item();
            worst = worst.max((got - contrastive_oracle(&q, &p, &listed, &cfg)).abs());
            cases += 1;
        }
    }
    let detail = format!("{cases} cases (10 batches x 8 weight settings), max |diff| {worst:.1e}");
    if worst <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_kd_fixed_point() -> Outcome {
    const TOL: f64 = 1e-9;
    let (mut gap, mut grad) = (0.0f64, 0.0f64);
    for inst in 0..20u64 {
        let rng = &mut seed::rng(303, &[inst]);
        let n = rng.random_range(1..=6);
        let cands = ok(Candidates::from_counts(&random_counts(rng, n, 4)))?;
        let mask = cands.mask();
        let scores = uniform(rng, n, cands.width(), -5.0, 5.0);
        let cfg = DistillConfig {
            tau_kd: rng.random_range(0.25..4.0),
            normalize: rng.random_bool(0.5),
        };
        let g = Graph::new();
        let student = g.param(scores.clone());
        let loss = ok(kd_loss(student, &scores, &mask, &cfg))?;
        ok(g.backward(loss))?;
        let h = ok(teacher_entropy(&scores, &mask, &cfg))?;
        gap = gap.max((loss.item() - h).abs());
        let gmax = student
            .grad()
            .map_or(0.0, |t| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
        grad = grad.max(gmax);
    }
    let detail = format!("20 instances, max |kd - entropy| {gap:.1e}, max |grad| {grad:.1e}");
    if gap < TOL && grad < TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synth_vocab(set: &embedkit::data::synth::SynthSet) -> Result<Vocab, String> {
    ok(Vocab::build(
        set.pairs.iter().flat_map(|p| [p.query.as_str(), p.positive.as_str()]),
        4096,
    ))
}

/// Mean terms per corpus document and Recall@1 of a sparse model.
fn sparse_quality(
    model: &EncoderModel,
    vocab: &Vocab,
    set: &embedkit::data::synth::SynthSet,
) -> Result<(f64, f64), String> {
    let enc = TextEncoder::new(model, vocab);
    let docs: Vec<&str> = set.corpus.iter().map(|d| d.text.as_str()).collect();
    let vecs = ok(enc.embed_sparse(&docs))?;
    let nnz = vecs.iter().map(|v| v.nnz() as f64).sum::<f64>() / vecs.len() as f64;
    let idx = ok(InvertedIndex::build(
        set.corpus.iter().map(|d| d.id.clone()).collect(),
        vecs,
    ))?;
    let queries: Vec<&str> = set.queries.iter().map(|q| q.1.as_str()).collect();
    let hits = ok(idx.search_batch(&ok(enc.embed_sparse(&queries))?, 1))?;
    let correct = hits
        .iter()
        .zip(&set.qrels)
        .filter(|(h, (_, doc, _))| h.first().is_some_and(|h| idx.id(h.doc) == doc))
        .count();
    Ok((nnz, correct as f64 / set.queries.len() as f64))
}

fn criterion_sparsity() -> Outcome {
    let start = Instant::now();
    let set = generate(&SynthConfig {
        pairs: 200,
        ..Default::default()
    });
    let vocab = synth_vocab(&set)?;
    let data = StageData {
        pairs: set.pairs.clone(),
        texts: vec![],
    };
    let student_cfg = EncoderConfig {
        vocab_size: vocab.len(),
        layers: 1,
        hidden: 32,
        intermediate: 64,
        heads: 2,
        max_seq: 32,
        pooling: Pooling::MaxSparse,
        lm_head: true,
    };
    let teacher_cfg = EncoderConfig {
        pooling: Pooling::Cls,
        lm_head: false,
        ..student_cfg.clone()
    };
    let mut stage = StageConfig {
        steps: 300,
        ..Default::default()
    };
    stage.optim.learning_rate = 1e-3;
    let mut t = ok(Trainer::new(
        stage,
        vocab.clone(),
        ok(EncoderModel::init(teacher_cfg, 9))?,
        None,
        data.clone(),
    ))?;
    ok(t.run())?;
    let teacher = t.into_student();

    let mut arms = Vec::new();
    for reg in [0.0, 1e-2] {
        let arm_start = Instant::now();
        let mut stage = StageConfig {
            kind: StageKind::ScoreDistill,
            steps: 500,
            sparse: SparseLossConfig::uniform(reg),
            ..Default::default()
        };
        stage.optim.learning_rate = 1e-3;
        let student = ok(EncoderModel::init(student_cfg.clone(), 1))?;
        let mut t = ok(Trainer::new(
            stage,
            vocab.clone(),
            student,
            Some(teacher.clone()),
            data.clone(),
        ))?;
        ok(t.run())?;
        let (nnz, recall) = sparse_quality(t.student(), &vocab, &set)?;
        arms.push((nnz, recall, arm_start.elapsed()));
    }
    let (nnz0, r0, t0) = arms[0];
    let (nnz1, r1, t1) = arms[1];
    let reduction = 1.0 - nnz1 / nnz0;
    let drop = (r0 - r1) * 100.0;
    let detail = format!(
        "terms/doc {nnz0:.1} -> {nnz1:.1} ({:.0}% fewer), Recall@1 {r0:.3} -> {r1:.3}; arms {:.0}s/{:.0}s, total {:.0}s",
        reduction * 100.0,
        t0.as_secs_f64(),
        t1.as_secs_f64(),
        start.elapsed().as_secs_f64()
    );
    let limit = Duration::from_secs(300);
    if reduction >= 0.5 && drop <= 10.0 && t0 < limit && t1 < limit {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_embedkit"))
}

/// Runs the CLI in `dir` and fails with its stderr on a nonzero exit.
fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = ok(bin().current_dir(dir).args(args).output())?;
    if out.status.success() {
        Ok(())
    } else {
        fail(format!(
            "`embedkit {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), String> {
    ok(std::fs::write(dir.join(name), text))
}

/// Recall@1 of a run file against qrels.
fn run_recall_at_1(run: &Path, qrels: &Path) -> Result<f64, String> {
    let run = ok(read_run(run))?;
    let qrels = ok(read_qrels(qrels))?;
    let scores: Vec<f64> = qrels
        .iter()
        .filter_map(|(q, judged)| {
            let ranking: Vec<&str> = run
                .get(q)
                .map_or(vec![], |r| r.iter().map(|(d, _)| d.as_str()).collect());
            recall_at_k(&ranking, judged, 1)
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn criterion_dense_overfit() -> Outcome {
    let start = Instant::now();
    let tmp = ok(tempfile::tempdir())?;
    let dir = tmp.path();
    write(
        dir,
        "dense.toml",
        "[model]\nlayers = 2\nhidden = 64\nintermediate = 128\nheads = 4\nmax_seq = 32\nlm_head = false\n\n\
         [stage]\nsteps = 1000\nbatch_size = 16\n\n[stage.optim]\nlearning_rate = 1e-3\n",
    )?;
    cli(dir, &["synth", "--output", "data"])?;
    cli(dir, &["vocab", "--pairs", "data/pairs.jsonl", "--output", "vocab.txt"])?;
    cli(
        dir,
        &[
            "--config",
            "dense.toml",
            "train",
            "--vocab",
            "vocab.txt",
            "--pairs",
            "data/pairs.jsonl",
            "--output",
            "model.ckpt",
        ],
    )?;
    cli(
        dir,
        &[
            "index",
            "dense",
            "--model",
            "model.ckpt",
            "--vocab",
            "vocab.txt",
            "--corpus",
            "data/corpus.jsonl",
            "--output",
            "dense.idx",
        ],
    )?;
    cli(
        dir,
        &[
            "search",
            "dense",
            "--index",
            "dense.idx",
            "--model",
            "model.ckpt",
            "--vocab",
            "vocab.txt",
            "--queries",
            "data/queries.tsv",
            "--k",
            "1",
            "--output",
            "run.txt",
        ],
    )?;
    let recall = run_recall_at_1(&dir.join("run.txt"), &dir.join("data/qrels.tsv"))?;
    let elapsed = start.elapsed();
    let detail = format!(
        "Recall@1 {recall:.3} on 100 training pairs after 1000 steps; {:.0}s",
        elapsed.as_secs_f64()
    );
    if recall >= 0.95 && elapsed < Duration::from_secs(300) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_sampling() -> Outcome {
    const DRAWS: usize = 100_000;
    const TOL: f64 = 0.01;
    let sizes = [("a", 5usize), ("b", 50), ("c", 500)];
    let records: Vec<PairRecord> = sizes
        .iter()
        .flat_map(|&(name, n)| {
            (0..n).map(move |i| PairRecord {
                query: format!("q {i}"),
                positive: format!("p {i}"),
                negatives: vec![],
                dataset: name.to_string(),
            })
        })
        .collect();
    let mut worst = 0.0f64;
    for alpha in [0.0, 0.5, 0.9, 1.0] {
        let mut sampler = ok(BatchSampler::new(
            records.clone(),
            &SamplerConfig {
                alpha_sampling: alpha,
                seed: 404,
            },
        ))?;
        let names = sampler.dataset_names().to_vec();
        let mut counts = vec![0usize; names.len()];
        for _ in 0..DRAWS {
            counts[sampler.next_batch(1).0] += 1;
        }
        let z: f64 = sizes.iter().map(|&(_, n)| (n as f64).powf(alpha)).sum();
        for (name, n) in sizes {
            let expected = (n as f64).powf(alpha) / z;
            let k = names
                .iter()
                .position(|x| x == name)
                .ok_or("dataset missing from sampler")?;
            worst = worst.max((counts[k] as f64 / DRAWS as f64 - expected).abs());
        }
    }
    let detail = format!("sizes 5/50/500, alpha 0/0.5/0.9/1, {DRAWS} draws each, max |freq - p| {worst:.4}");
    if worst <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_sparse(rng: &mut ChaCha8Rng, vocab: u32, max_terms: usize) -> SparseVector {
    let terms: BTreeMap<u32, f64> = (0..rng.random_range(0..=max_terms))
        .map(|_| (rng.random_range(0..vocab), f64::from(rng.random_range(1u8..=8)) * 0.25))
        .collect();
    SparseVector::new(terms.into_iter().collect()).expect("sorted terms")
}

fn criterion_sparse_dense_equivalence() -> Outcome {
    let mut queries_checked = 0;
    for (c, &(docs, vocab)) in [(10usize, 20u32), (100, 50), (500, 200), (1000, 300)]
        .iter()
        .enumerate()
    {
        let rng = &mut seed::rng(505, &[c as u64]);
        let vecs: Vec<SparseVector> = (0..docs).map(|_| random_sparse(rng, vocab, 12)).collect();
        let ids: Vec<String> = (0..docs).map(|i| format!("doc{:04}", (i * 7919) % docs)).collect();
        let expanded: Vec<Vec<f64>> = vecs.iter().map(|v| v.to_dense(vocab as usize)).collect();
        let idx = ok(InvertedIndex::build(ids.clone(), vecs))?;
        for _ in 0..25 {
            let q = random_sparse(rng, vocab, 8);
            let k = rng.random_range(1..=docs);
            let qd = q.to_dense(vocab as usize);
            let mut want: Vec<(String, f64)> = expanded
                .iter()
                .zip(&ids)
                .map(|(d, id)| (id.clone(), qd.iter().zip(d).fold(0.0, |acc, (a, b)| acc + a * b)))
                .filter(|(_, s)| *s > 0.0)
                .collect();
            want.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            want.truncate(k);
            let got: Vec<(String, f64)> = ok(idx.search(&q, k))?
                .iter()
                .map(|h| (idx.id(h.doc).to_string(), h.score))
                .collect();
            if got != want {
                return fail(format!(
                    "corpus of {docs} docs: inverted index and dense expansion disagree at k={k}"
                ));
            }
            queries_checked += 1;
        }
    }
    Ok(format!(
        "{queries_checked} queries over corpora of 10-1000 docs, identical ids, order and scores"
    ))
}

fn criterion_metrics() -> Outcome {
    let judged: Judgments = [("rel".to_string(), 1)].into_iter().collect();
    let ndcg = ndcg_at_k(&["other", "rel", "x"], &judged, 10).ok_or("no nDCG for a judged query")?;
    if (ndcg - 0.6309).abs() > 1e-4 {
        return fail(format!(
            "nDCG@10 with the only relevant doc at rank 2 is {ndcg:.6}, expected 0.6309"
        ));
    }
    let mut worst = 0.0f64;
    for inst in 0..100u64 {
        let rng = &mut seed::rng(606, &[inst]);
        let pool: Vec<String> = (0..30).map(|i| format!("d{i}")).collect();
        let mut judged = Judgments::new();
        for _ in 0..rng.random_range(1..=8) {
            judged.insert(pool[rng.random_range(0..30)].clone(), rng.random_range(0..=3));
        }
        let forced = pool[rng.random_range(0..30)].clone();
        judged.insert(forced, rng.random_range(1..=3));
        let mut ranking: Vec<String> = pool.clone();
        for i in (1..ranking.len()).rev() {
            ranking.swap(i, rng.random_range(0..=i));
        }
        ranking.truncate(rng.random_range(0..=20));

        let relevant: BTreeSet<&str> = judged.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.as_str()).collect();
        let mrr = ranking
            .iter()
            .take(5)
            .position(|d| relevant.contains(d.as_str()))
            .map_or(0.0, |r| 1.0 / (r + 1) as f64);
        let found = ranking
            .iter()
            .take(10)
            .filter(|d| relevant.contains(d.as_str()))
            .count();
        let recall = found as f64 / relevant.len() as f64;
        let got_mrr = mrr_at_k(&ranking, &judged, 5).ok_or("no MRR for a judged query")?;
        let got_recall = recall_at_k(&ranking, &judged, 10).ok_or("no recall for a judged query")?;
        worst = worst.max((got_mrr - mrr).abs()).max((got_recall - recall).abs());
    }
    let detail = format!("nDCG@10 {ndcg:.6}; 100 random MRR@5/Recall@10 instances, max |diff| {worst:.1e}");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_merge() -> Outcome {
    let cfg = EncoderConfig {
        vocab_size: 40,
        layers: 1,
        hidden: 16,
        intermediate: 32,
        heads: 2,
        max_seq: 16,
        ..Default::default()
    };
    let a = ok(EncoderModel::init(cfg.clone(), 1))?.to_checkpoint();
    let b = ok(EncoderModel::init(cfg, 2))?.to_checkpoint();
    let mut worst = 0.0f64;
    for w in [0.0, 0.25, 0.5, 0.8, 1.0] {
        let m = ok(merge_models(&[(a.clone(), w), (b.clone(), 1.0 - w)]))?;
        for (name, t) in m.params.iter() {
            let (ta, tb) = (
                a.params.get(name).ok_or("missing tensor")?,
                b.params.get(name).ok_or("missing tensor")?,
            );
            for ((x, y), z) in ta.data().iter().zip(tb.data()).zip(t.data()) {
                worst = worst.max((w * x + (1.0 - w) * y - z).abs());
            }
        }
    }
    if worst > 1e-12 {
        return fail(format!(
            "merged values deviate from the convex combination by {worst:.1e}"
        ));
    }
    let identity = ok(merge_models(&[(a.clone(), 1.0), (b.clone(), 0.0)]))?;
    let round_trip = ok(Checkpoint::from_bytes(&identity.to_bytes()))?;
    if round_trip.to_bytes() != a.to_bytes() {
        return fail("weights (1, 0) did not reproduce the first checkpoint");
    }

    let tmp = ok(tempfile::tempdir())?;
    let dir = tmp.path();
    ok(a.write(&dir.join("a.ckpt")))?;
    ok(b.write(&dir.join("b.ckpt")))?;
    cli(
        dir,
        &[
            "merge", "--model", "a.ckpt", "--model", "b.ckpt", "--weight", "1", "--weight", "0", "--output", "m.ckpt",
        ],
    )?;
    if ok(std::fs::read(dir.join("m.ckpt")))? != ok(std::fs::read(dir.join("a.ckpt")))? {
        return fail("`embedkit merge` with weights 1,0 changed the checkpoint bytes");
    }
    Ok(format!(
        "max deviation from convex combination {worst:.1e}; weights (1, 0) byte-identical in library and CLI"
    ))
}

fn criterion_pretraining() -> Outcome {
    let (enc, dec) = (MaskSpec::encoder_default(), MaskSpec::decoder_default());
    let rng = &mut seed::rng(707, &[]);
    let (mut enc_range, mut dec_range) = ((f64::MAX, f64::MIN), (f64::MAX, f64::MIN));
    for _ in 0..10_000 {
        let len = rng.random_range(4..=40);
        let seq: Vec<u32> = (0..len).map(|_| rng.random_range(5..200)).collect();
        let input = RetroMaeInput::new(&seq, &enc, &dec, rng);
        enc_range = (
            enc_range.0.min(input.encoder.ratio),
            enc_range.1.max(input.encoder.ratio),
        );
        dec_range = (
            dec_range.0.min(input.decoder.ratio),
            dec_range.1.max(input.decoder.ratio),
        );
    }
    if enc_range.0 < 0.15 || enc_range.1 > 0.30 || dec_range.0 < 0.50 || dec_range.1 > 0.70 {
        return fail(format!(
            "mask ratios out of range: encoder {enc_range:?}, decoder {dec_range:?}"
        ));
    }

    let start = Instant::now();
    let tmp = ok(tempfile::tempdir())?;
    let dir = tmp.path();
    write(
        dir,
        "pretrain.toml",
        "[model]\nlayers = 1\nhidden = 32\nintermediate = 64\nheads = 2\nmax_seq = 32\n\n\
         [stage]\nsteps = 2000\nbatch_size = 32\n\n[stage.optim]\nlearning_rate = 2e-3\n",
    )?;
    write(dir, "synth.toml", "[synth]\npairs = 200\n")?;
    cli(dir, &["--config", "synth.toml", "synth", "--output", "data"])?;
    cli(dir, &["vocab", "--pairs", "data/pairs.jsonl", "--output", "vocab.txt"])?;
    cli(
        dir,
        &[
            "--config",
            "pretrain.toml",
            "pretrain",
            "--vocab",
            "vocab.txt",
            "--pairs",
            "data/pairs.jsonl",
            "--output",
            "pre.ckpt",
        ],
    )?;
    let mut reader = ok(csv::Reader::from_path(dir.join("pre.ckpt.metrics.csv")))?;
    let headers = ok(reader.headers())?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(format!("metrics lack `{name}`"))
    };
    let (loss_col, enc_col, dec_col) = (col("loss")?, col("encoder_mask_ratio")?, col("decoder_mask_ratio")?);
    let mut losses = Vec::new();
    for row in reader.records() {
        let row = ok(row)?;
        let field = |c: usize| -> Result<f64, String> { ok(row[c].parse::<f64>()) };
        let (e, d) = (field(enc_col)?, field(dec_col)?);
        if !(0.15..=0.30).contains(&e) || !(0.50..=0.70).contains(&d) {
            return fail(format!("logged mask ratios {e} / {d} out of range"));
        }
        losses.push(field(loss_col)?);
    }
    if losses.len() != 2000 {
        return fail(format!("expected 2000 logged steps, found {}", losses.len()));
    }
    let means: Vec<f64> = losses
        .chunks(100)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let detail = format!(
        "ratios encoder [{:.3}, {:.3}] decoder [{:.3}, {:.3}]; 100-step mean loss {:.3} -> {:.3} over 20 windows, strictly decreasing: {decreasing}; {:.0}s",
        enc_range.0,
        enc_range.1,
        dec_range.0,
        dec_range.1,
        means[0],
        means[means.len() - 1],
        start.elapsed().as_secs_f64()
    );
    if decreasing {
        Ok(detail)
    } else {
        Err(format!("{detail}; window means {means:.3?}"))
    }
}

/// The full pipeline on a small synthetic set, with relative paths so two
/// runs in different directories write identical manifests.
fn pipeline(dir: &Path, threads: &str) -> Result<(), String> {
    write(
        dir,
        "run.toml",
        "[synth]\npairs = 40\ndatasets = 2\ndistractors = 10\n\n\
         [model]\nlayers = 1\nhidden = 16\nintermediate = 32\nheads = 2\nmax_seq = 24\n\n\
         [stage]\nbatch_size = 8\nmax_negatives = 2\n\n[mine]\ntop_k = 10\nnegatives_per_query = 2\nfalse_negative_threshold = 1.0\n",
    )?;
    let with = |args: &[&str]| -> Result<(), String> {
        let mut full = vec!["--config", "run.toml", "--threads", threads];
        full.extend_from_slice(args);
        cli(dir, &full)
    };
    let common = ["--vocab", "vocab.txt", "--pairs", "data/pairs.jsonl"];
    with(&["synth", "--output", "data"])?;
    with(&[
        "vocab",
        "--pairs",
        "data/pairs.jsonl",
        "--corpus",
        "data/corpus.jsonl",
        "--output",
        "vocab.txt",
    ])?;
    with(&[&["pretrain", "--steps", "30", "--output", "pre.ckpt"], &common[..]].concat())?;
    with(
        &[
            &["train", "--steps", "30", "--init", "pre.ckpt", "--output", "train.ckpt"],
            &common[..],
        ]
        .concat(),
    )?;
    with(&[
        "mine",
        "--model",
        "train.ckpt",
        "--vocab",
        "vocab.txt",
        "--pairs",
        "data/pairs.jsonl",
        "--corpus",
        "data/corpus.jsonl",
        "--output",
        "mined.jsonl",
    ])?;
    with(&["perturb", "--pairs", "data/pairs.jsonl", "--output", "perturbed.jsonl"])?;
    with(&[
        "train",
        "--steps",
        "20",
        "--init",
        "train.ckpt",
        "--vocab",
        "vocab.txt",
        "--pairs",
        "mined.jsonl",
        "--output",
        "hard.ckpt",
    ])?;
    with(
        &[
            &[
                "--set",
                "stage.kind=\"self_distill\"",
                "distill",
                "--steps",
                "20",
                "--init",
                "hard.ckpt",
                "--output",
                "self.ckpt",
            ],
            &common[..],
        ]
        .concat(),
    )?;
    with(&[
        "merge",
        "--model",
        "hard.ckpt",
        "--model",
        "self.ckpt",
        "--weight",
        "0.3",
        "--weight",
        "0.7",
        "--output",
        "merged.ckpt",
    ])?;
    for kind in ["dense", "sparse"] {
        let index = format!("{kind}.idx");
        let run = format!("{kind}.run");
        with(&[
            "index",
            kind,
            "--model",
            "merged.ckpt",
            "--vocab",
            "vocab.txt",
            "--corpus",
            "data/corpus.jsonl",
            "--output",
            &index,
        ])?;
        with(&[
            "search",
            kind,
            "--index",
            &index,
            "--model",
            "merged.ckpt",
            "--vocab",
            "vocab.txt",
            "--queries",
            "data/queries.tsv",
            "--k",
            "10",
            "--output",
            &run,
        ])?;
        with(&[
            "eval",
            "--run",
            &run,
            "--qrels",
            "data/qrels.tsv",
            "--output",
            &format!("{kind}.eval.csv"),
        ])?;
    }
    Ok(())
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in ok(std::fs::read_dir(&d))? {
            let path = ok(entry)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .expect("inside dir")
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, ok(std::fs::read(&path))?);
            }
        }
    }
    Ok(out)
}

fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>, skip: impl Fn(&str) -> bool) -> Vec<String> {
    let names: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    names
        .into_iter()
        .filter(|n| !skip(n) && a.get(*n) != b.get(*n))
        .cloned()
        .collect()
}

fn criterion_determinism() -> Outcome {
    let start = Instant::now();
    let dirs = [
        ok(tempfile::tempdir())?,
        ok(tempfile::tempdir())?,
        ok(tempfile::tempdir())?,
    ];
    // Explicit pool sizes, so the comparison holds on single-core machines too.
    pipeline(dirs[0].path(), "4")?;
    pipeline(dirs[1].path(), "4")?;
    pipeline(dirs[2].path(), "1")?;
    let snaps = [
        snapshot(dirs[0].path())?,
        snapshot(dirs[1].path())?,
        snapshot(dirs[2].path())?,
    ];
    let rerun = differing(&snaps[0], &snaps[1], |_| false);
    if !rerun.is_empty() {
        return fail(format!("rerun changed {rerun:?}"));
    }
    // Manifests record the --threads flag itself; every artifact must match.
    let threads = differing(&snaps[0], &snaps[2], |n| n.ends_with(".manifest.json"));
    if !threads.is_empty() {
        return fail(format!("--threads 1 instead of 4 changed {threads:?}"));
    }
    let ckpts = snaps[0].keys().filter(|n| n.ends_with(".ckpt")).count();
    let runs = snaps[0].keys().filter(|n| n.ends_with(".run")).count();
    Ok(format!(
        "{} files ({ckpts} checkpoints, {runs} runs) byte-identical across reruns and thread counts; {:.0}s",
        snaps[0].len(),
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient checks", criterion_gradients),
        ("contrastive loss matches loop oracle", criterion_contrastive_oracle),
        ("distillation fixed point", criterion_kd_fixed_point),
        ("sparsity regularization", criterion_sparsity),
        ("dense overfit", criterion_dense_overfit),
        ("dataset sampling", criterion_sampling),
        (
            "sparse index equals dense expansion",
            criterion_sparse_dense_equivalence,
        ),
        ("ranking metrics", criterion_metrics),
        ("checkpoint merging", criterion_merge),
        ("masked pretraining", criterion_pretraining),
        ("CLI determinism", criterion_determinism),
    ];
    // Criterion numbers on the command line select a subset; other arguments
    // (flags passed by the test runner) are ignored.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (mut failed, mut ran) = (0, 0);
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
