use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::Value;

use embedkit::data::synth::{generate, SynthConfig};
use embedkit::data::{
    mine_hard_negatives, perturb_positive, read_corpus, read_pairs, write_jsonl, MinerConfig, PairRecord, PerturbConfig,
};
use embedkit::encoder::{Checkpoint, EncoderConfig, EncoderModel, TextEncoder, Vocab};
use embedkit::retrieval::metrics::QueryScores;
use embedkit::retrieval::trec::{read_qrels, read_run, write_qrels, write_run, Qrels, Run};
use embedkit::retrieval::{metrics, DenseIndex, Hit, InvertedIndex};
use embedkit::training::{merge_models, StageConfig, StageData, StageKind, Trainer};
use embedkit::{data, seed};

use crate::config::Layers;
use crate::manifest::Manifest;
use crate::{
    EvalArgs, Global, IndexArgs, IndexKind, MergeArgs, MineArgs, PerturbArgs, SearchArgs, StageArgs, SynthArgs,
    VocabArgs,
};

#[derive(Serialize)]
struct Record<'a, A: Serialize, C: Serialize> {
    args: &'a A,
    global: &'a Global,
    config: &'a C,
}

fn manifest<A: Serialize, C: Serialize>(
    command: &str,
    seed: Option<u64>,
    g: &Global,
    args: &A,
    config: &C,
) -> Result<Manifest> {
    Manifest::new(
        command,
        seed,
        &Record {
            args,
            global: g,
            config,
        },
    )
}

fn layers(g: &Global, seed_key: Option<&str>) -> Result<Layers> {
    let mut l = Layers::load(g.config.as_deref())?;
    l.apply_sets(&g.sets)?;
    if let (Some(key), Some(s)) = (seed_key, g.seed) {
        let s = i64::try_from(s).map_err(|_| anyhow!("seed {s} is too large"))?;
        l.set(key, Value::Integer(s))?;
    }
    Ok(l)
}

fn load_model(path: &Path) -> Result<EncoderModel> {
    EncoderModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::load(path).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

/// `query_id<TAB>text` lines.
fn read_queries(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading queries {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, q) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{}:{}: expected query_id<TAB>text", path.display(), n + 1))?;
        if id.is_empty() {
            bail!("{}:{}: empty query id", path.display(), n + 1);
        }
        out.push((id.to_string(), q.to_string()));
    }
    Ok(out)
}

fn write_queries(path: &Path, queries: &[(String, String)]) -> Result<()> {
    let text: String = queries.iter().map(|(id, q)| format!("{id}\t{q}\n")).collect();
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Clone, Copy)]
pub enum StageCommand {
    Pretrain,
    Train,
    Distill,
}

impl StageCommand {
    fn name(self) -> &'static str {
        match self {
            StageCommand::Pretrain => "pretrain",
            StageCommand::Train => "train",
            StageCommand::Distill => "distill",
        }
    }

    fn kinds(self) -> [StageKind; 2] {
        match self {
            StageCommand::Pretrain => [StageKind::RetromaePretrain, StageKind::RetromaeDistill],
            StageCommand::Train => [StageKind::Contrastive, StageKind::DomainAdapt],
            StageCommand::Distill => [StageKind::ScoreDistill, StageKind::SelfDistill],
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StageFile {
    /// Architecture of a freshly initialized student.
    model: EncoderConfig,
    stage: StageConfig,
}

pub fn stage(g: &Global, cmd: StageCommand, a: &StageArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let mut l = layers(g, Some("stage.seed"))?;
    let [default_kind, other] = cmd.kinds();
    l.set_default("stage.kind", Value::String(default_kind.as_str().into()))?;
    l.set_default("model.vocab_size", Value::Integer(vocab.len() as i64))?;
    if let Some(s) = a.steps {
        l.set("stage.steps", Value::Integer(i64::try_from(s)?))?;
    }
    let file: StageFile = l.resolve(&["model", "stage"])?;
    let cfg = file.stage.clone();
    if cfg.kind != default_kind && cfg.kind != other {
        bail!(
            "`{}` runs {} or {} stages, config asks for {}",
            cmd.name(),
            default_kind.as_str(),
            other.as_str(),
            cfg.kind.as_str()
        );
    }

    let mut pairs: Vec<PairRecord> = Vec::new();
    if let Some(p) = &a.pairs {
        pairs = read_pairs(p, cfg.max_negatives)?;
    }
    let texts = match &a.texts {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    let teacher = a.teacher.as_deref().map(load_model).transpose()?;
    let data = StageData { pairs, texts };

    let mut trainer = if let Some(state) = &a.resume {
        let ckpt = Checkpoint::read(state).with_context(|| format!("loading state {}", state.display()))?;
        Trainer::resume(cfg.clone(), vocab, teacher, data, &ckpt)?
    } else {
        let student = match &a.init {
            Some(p) => load_model(p)?,
            None => EncoderModel::init(file.model.clone(), seed::derive(cfg.seed, &[6]))?,
        };
        Trainer::new(cfg.clone(), vocab, student, teacher, data)?
    };
    let stop = a.stop_after.unwrap_or(cfg.steps).min(cfg.steps);
    while trainer.steps_done() < stop {
        let r = trainer.step()?;
        log::info!("step {} loss {:.6}", r.step, r.loss);
    }

    trainer.student().save(&a.output)?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| suffixed(&a.output, ".metrics.csv"));
    std::fs::write(&metrics_path, trainer.metrics_csv())
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    if let Some(p) = &a.save_state {
        trainer.save_state(p)?;
    }

    let mut m = manifest(cmd.name(), Some(cfg.seed), g, a, &file)?;
    m.input(&a.vocab)?;
    m.inputs(
        a.pairs
            .iter()
            .chain(&a.texts)
            .chain(&a.init)
            .chain(&a.teacher)
            .chain(&a.resume),
    )?;
    m.output(&a.output)?;
    m.output(&metrics_path)?;
    if let Some(p) = &a.save_state {
        m.output(p)?;
    }
    m.write(&a.output)?;
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn merge(g: &Global, a: &MergeArgs) -> Result<()> {
    let weights = if a.weights.is_empty() {
        vec![1.0 / a.models.len() as f64; a.models.len()]
    } else if a.weights.len() == a.models.len() {
        a.weights.clone()
    } else {
        bail!("{} weights given for {} models", a.weights.len(), a.models.len());
    };
    let inputs = a
        .models
        .iter()
        .zip(&weights)
        .map(|(p, &w)| {
            let c = Checkpoint::read(p).with_context(|| format!("loading {}", p.display()))?;
            Ok((c, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_models(&inputs)?;
    // Round-trip through the model type so the result is known to load.
    EncoderModel::from_checkpoint(merged.clone())?;
    merged.write(&a.output)?;
    let mut m = manifest("merge", None, g, a, &weights)?;
    m.inputs(&a.models)?;
    m.output(&a.output)?;
    m.write(&a.output)?;
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MineFile {
    mine: MinerConfig,
    max_negatives: Option<usize>,
}

pub fn mine(g: &Global, a: &MineArgs) -> Result<()> {
    let file: MineFile = layers(g, Some("mine.seed"))?.resolve(&["mine", "max_negatives"])?;
    let model = load_model(&a.model)?;
    let vocab = load_vocab(&a.vocab)?;
    let pairs = read_pairs(&a.pairs, file.max_negatives.unwrap_or(usize::MAX))?;
    let corpus = read_corpus(&a.corpus)?;
    let report = mine_hard_negatives(&pairs, &corpus, &TextEncoder::new(&model, &vocab), &file.mine)?;
    if !report.skipped.is_empty() {
        log::warn!(
            "{} of {} pairs had no surviving negative and were dropped",
            report.skipped.len(),
            pairs.len()
        );
    }
    write_jsonl(&a.output, &report.records)?;
    let mut m = manifest("mine", Some(file.mine.seed), g, a, &file)?;
    m.inputs([&a.model, &a.vocab, &a.pairs, &a.corpus])?;
    m.output(&a.output)?;
    m.write(&a.output)?;
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PerturbFile {
    perturb: PerturbConfig,
}

pub fn perturb(g: &Global, a: &PerturbArgs) -> Result<()> {
    let file: PerturbFile = layers(g, Some("perturb.seed"))?.resolve(&["perturb"])?;
    file.perturb.validate()?;
    let mut pairs = read_pairs(&a.pairs, usize::MAX)?;
    let mut added = 0;
    for (i, p) in pairs.iter_mut().enumerate() {
        if !p.negatives.is_empty() {
            continue;
        }
        let mut rng = seed::rng(file.perturb.seed, &[i as u64]);
        match perturb_positive(&p.positive, &file.perturb, &mut rng) {
            Ok(neg) => {
                p.negatives.push(neg);
                added += 1;
            }
            Err(e) => log::warn!("pair {i}: positive left unperturbed: {e}"),
        }
    }
    log::info!("added {added} perturbed negatives");
    write_jsonl(&a.output, &pairs)?;
    let mut m = manifest("perturb", Some(file.perturb.seed), g, a, &file)?;
    m.input(&a.pairs)?;
    m.output(&a.output)?;
    m.write(&a.output)?;
    Ok(())
}

pub fn index(g: &Global, a: &IndexArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let vocab = load_vocab(&a.vocab)?;
    let corpus = read_corpus(&a.corpus)?;
    let enc = TextEncoder::new(&model, &vocab);
    let ids: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
    let texts: Vec<&str> = corpus.iter().map(|d| d.text.as_str()).collect();
    match a.kind {
        IndexKind::Dense => DenseIndex::build(ids, &enc.embed_dense(&texts)?)?.write(&a.output)?,
        IndexKind::Sparse => {
            let idx = InvertedIndex::build(ids, enc.embed_sparse(&texts)?)?;
            log::info!(
                "{} terms, {:.2} terms per document",
                idx.term_count(),
                idx.mean_doc_terms()
            );
            idx.write(&a.output)?
        }
    }
    let mut m = manifest("index", None, g, a, &())?;
    m.inputs([&a.model, &a.vocab, &a.corpus])?;
    m.output(&a.output)?;
    m.write(&a.output)?;
    Ok(())
}

fn to_run(queries: &[(String, String)], hits: Vec<Vec<Hit>>, id: impl Fn(usize) -> String) -> Run {
    queries
        .iter()
        .zip(hits)
        .map(|((qid, _), h)| (qid.clone(), h.into_iter().map(|h| (id(h.doc), h.score)).collect()))
        .collect()
}

pub fn search(g: &Global, a: &SearchArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let vocab = load_vocab(&a.vocab)?;
    let queries = read_queries(&a.queries)?;
    let texts: Vec<String> = queries
        .iter()
        .map(|(_, q)| match &a.instruction {
            Some(task) => data::format_instruction_query(task, q),
            None => q.clone(),
        })
        .collect();
    let enc = TextEncoder::new(&model, &vocab);
    let run = match a.kind {
        IndexKind::Dense => {
            let idx = DenseIndex::read(&a.index)?;
            let hits = idx.search_batch(&enc.embed_dense(&texts)?, a.k)?;
            to_run(&queries, hits, |d| idx.id(d).to_string())
        }
        IndexKind::Sparse => {
            let idx = InvertedIndex::read(&a.index)?;
            let hits = idx.search_batch(&enc.embed_sparse(&texts)?, a.k)?;
            to_run(&queries, hits, |d| idx.id(d).to_string())
        }
    };
    write_run(&a.output, &run)?;
    let mut m = manifest("search", None, g, a, &())?;
    m.inputs([&a.index, &a.model, &a.vocab, &a.queries])?;
    m.output(&a.output)?;
    m.write(&a.output)?;
    Ok(())
}

fn scores_row(w: &mut csv::Writer<std::fs::File>, q: &QueryScores) -> Result<()> {
    w.write_record([
        q.query_id.clone(),
        q.ndcg_10.to_string(),
        q.mrr_5.to_string(),
        q.recall_10.to_string(),
    ])?;
    Ok(())
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let ev = metrics::evaluate(&run, &qrels);
    let mut w = csv::Writer::from_path(&a.output).with_context(|| format!("writing {}", a.output.display()))?;
    w.write_record(["query_id", "ndcg@10", "mrr@5", "recall@10"])?;
    for q in &ev.per_query {
        scores_row(&mut w, q)?;
    }
    match &ev.mean {
        Some(mean) => {
            scores_row(&mut w, mean)?;
            println!(
                "nDCG@10 {:.4}  MRR@5 {:.4}  Recall@10 {:.4}  ({} queries)",
                mean.ndcg_10,
                mean.mrr_5,
                mean.recall_10,
                ev.per_query.len()
            );
        }
        None => log::warn!("no judged query with a relevant document; nothing scored"),
    }
    w.flush()?;
    drop(w);
    let mut m = manifest("eval", None, g, a, &())?;
    m.inputs([&a.run, &a.qrels])?;
    m.output(&a.output)?;
    m.write(&a.output)?;
    Ok(())
}

pub fn vocab(g: &Global, a: &VocabArgs) -> Result<()> {
    let mut texts = Vec::new();
    for p in &a.pairs {
        for r in read_pairs(p, usize::MAX)? {
            texts.push(r.query);
            texts.push(r.positive);
            texts.extend(r.negatives);
        }
    }
    for p in &a.corpus {
        texts.extend(read_corpus(p)?.into_iter().map(|d| d.text));
    }
    for p in &a.texts {
        texts.extend(read_lines(p)?);
    }
    if texts.is_empty() {
        bail!("no input texts; pass --pairs, --corpus or --texts");
    }
    let v = Vocab::build(texts.iter().map(String::as_str), a.max_size)?;
    v.save(&a.output)?;
    let mut m = manifest("vocab", None, g, a, &())?;
    m.inputs(a.pairs.iter().chain(&a.corpus).chain(&a.texts))?;
    m.output(&a.output)?;
    m.write(&a.output)?;
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthFile {
    synth: SynthConfig,
}

pub fn synth(g: &Global, a: &SynthArgs) -> Result<()> {
    let file: SynthFile = layers(g, Some("synth.seed"))?.resolve(&["synth"])?;
    let set = generate(&file.synth);
    std::fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let out = |name: &str| a.output.join(name);
    write_jsonl(&out("pairs.jsonl"), &set.pairs)?;
    write_jsonl(&out("corpus.jsonl"), &set.corpus)?;
    write_queries(&out("queries.tsv"), &set.queries)?;
    let mut qrels = Qrels::new();
    for (q, d, grade) in &set.qrels {
        qrels.entry(q.clone()).or_default().insert(d.clone(), *grade);
    }
    write_qrels(&out("qrels.tsv"), &qrels)?;
    let mut m = manifest("synth", Some(file.synth.seed), g, a, &file)?;
    for name in ["pairs.jsonl", "corpus.jsonl", "queries.tsv", "qrels.tsv"] {
        m.output(&out(name))?;
    }
    m.write(&out("synth"))?;
    Ok(())
}
