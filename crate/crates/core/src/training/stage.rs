use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, OptimConfig};
use crate::data::{format_instruction_query, BatchSampler, PairRecord, SamplerConfig, SamplerState};
use crate::encoder::{
    retromae_forward, BoundEncoder, Checkpoint, EncoderConfig, EncoderModel, MaskSpec, Packed, Params, Pooling,
    RetroMaeDecoder, RetroMaeInput, TokenBatch, Vocab,
};
use crate::objectives::{
    batch_norm_loss, contrastive_loss, contrastive_loss_from_scores, dot_scores, flops_loss, kd_loss, mlm_distill_loss,
    mlm_loss, sparse_total_loss, teacher_entropy, ContrastiveBatch, ContrastiveConfig, DistillConfig, ScoreBlocks,
    SparseLossConfig, SparseTerms,
};
use crate::tensor::{Graph, Tensor, Var};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    RetromaePretrain,
    RetromaeDistill,
    #[default]
    Contrastive,
    ScoreDistill,
    SelfDistill,
    DomainAdapt,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::RetromaePretrain => "retromae_pretrain",
            StageKind::RetromaeDistill => "retromae_distill",
            StageKind::Contrastive => "contrastive",
            StageKind::ScoreDistill => "score_distill",
            StageKind::SelfDistill => "self_distill",
            StageKind::DomainAdapt => "domain_adapt",
        }
    }

    fn is_pretraining(self) -> bool {
        matches!(self, StageKind::RetromaePretrain | StageKind::RetromaeDistill)
    }

    fn is_distillation(self) -> bool {
        matches!(self, StageKind::ScoreDistill | StageKind::SelfDistill)
    }

    /// Column names of the per-step component losses.
    pub fn components(self) -> &'static [&'static str] {
        match self {
            StageKind::RetromaePretrain => &["encoder_mlm", "decoder_mlm", "encoder_mask_ratio", "decoder_mask_ratio"],
            StageKind::RetromaeDistill => &["encoder_kl", "decoder_mlm", "encoder_mask_ratio", "decoder_mask_ratio"],
            StageKind::Contrastive | StageKind::DomainAdapt => {
                &["contrastive", "flops_q", "flops_p", "norm_q", "norm_p"]
            }
            StageKind::ScoreDistill | StageKind::SelfDistill => &[
                "kd",
                "teacher_entropy",
                "candidates",
                "flops_q",
                "flops_p",
                "norm_q",
                "norm_p",
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub encoder_mask: MaskSpec,
    pub decoder_mask: MaskSpec,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder_mask: MaskSpec::encoder_default(),
            decoder_mask: MaskSpec::decoder_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub kind: StageKind,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Hard negatives used per record; extra ones are ignored.
    pub max_negatives: usize,
    pub alpha_sampling: f64,
    /// Task definition; when set, queries are wrapped in the instruction template.
    pub instruction: Option<String>,
    pub optim: OptimConfig,
    pub contrastive: ContrastiveConfig,
    pub distill: DistillConfig,
    pub sparse: SparseLossConfig,
    pub pretrain: PretrainConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            kind: StageKind::default(),
            steps: 100,
            batch_size: 16,
            seed: 0,
            max_negatives: 3,
            alpha_sampling: 0.5,
            instruction: None,
            optim: OptimConfig::default(),
            contrastive: ContrastiveConfig::default(),
            distill: DistillConfig::default(),
            sparse: SparseLossConfig::default(),
            pretrain: PretrainConfig::default(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optim.validate()?;
        self.contrastive.validate()?;
        self.distill.validate()?;
        self.sparse.validate()?;
        self.pretrain.encoder_mask.validate()?;
        self.pretrain.decoder_mask.validate()
    }
}

/// Training material for one stage.
#[derive(Clone, Debug, Default)]
pub struct StageData {
    pub pairs: Vec<PairRecord>,
    /// Raw texts for pretraining; when empty, queries and positives are used.
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub components: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct TextCursor {
    epoch: u64,
    pos: usize,
}

/// Runs one training stage step by step.
///
/// All randomness in step `t` derives from `(seed, t)` and the sampler state,
/// so a run resumed from [`Trainer::state`] follows the uninterrupted
/// trajectory exactly.
#[derive(Clone)]
pub struct Trainer {
    cfg: StageConfig,
    vocab: Vocab,
    student: EncoderModel,
    decoder: Option<RetroMaeDecoder>,
    teacher: Option<EncoderModel>,
    adam: Adam,
    sampler: Option<BatchSampler>,
    texts: Vec<Vec<u32>>,
    text_order: Vec<usize>,
    text_cursor: TextCursor,
    log: Vec<StepRecord>,
}

fn pair_scores<'g>(pooling: Pooling, q: Var<'g>, p: Var<'g>, tau: f64) -> Result<Var<'g>> {
    match pooling {
        Pooling::Cls => q.cosine_matrix(p, tau),
        Pooling::MaxSparse => dot_scores(q, p),
    }
}

struct PairBatch {
    queries: Vec<String>,
    /// Positives, then every kept negative.
    passages: Vec<String>,
    owners: Vec<usize>,
}

impl Trainer {
    /// Prepares a stage. `teacher` is required for the distillation kinds;
    /// for self-distillation it defaults to the student, and the student is
    /// always reset to the teacher's parameters.
    pub fn new(
        cfg: StageConfig,
        vocab: Vocab,
        mut student: EncoderModel,
        teacher: Option<EncoderModel>,
        data: StageData,
    ) -> Result<Self> {
        cfg.validate()?;
        let kind = cfg.kind;
        if vocab.len() > student.config().vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens, model only {}",
                vocab.len(),
                student.config().vocab_size
            )));
        }
        let teacher = match kind {
            StageKind::SelfDistill => {
                let t = teacher.unwrap_or_else(|| student.clone());
                if t.config() != student.config() {
                    return Err(Error::Config(
                        "self-distillation needs identical teacher and student architectures".into(),
                    ));
                }
                student = t.clone();
                Some(t)
            }
            StageKind::ScoreDistill | StageKind::RetromaeDistill => Some(
                teacher.ok_or_else(|| Error::Config(format!("stage {} needs a teacher checkpoint", kind.as_str())))?,
            ),
            _ => None,
        };
        let mut decoder = None;
        if kind.is_pretraining() {
            if !student.config().lm_head {
                return Err(Error::Config("pretraining needs a student with an LM head".into()));
            }
            decoder = Some(RetroMaeDecoder::init(
                student.config(),
                1,
                seed::derive(cfg.seed, &[3]),
            )?);
        }
        if kind == StageKind::RetromaeDistill {
            let t = teacher.as_ref().expect("checked");
            if !t.config().lm_head || t.config().vocab_size != student.config().vocab_size {
                return Err(Error::Config(
                    "MLM distillation needs a teacher LM head over the same vocabulary".into(),
                ));
            }
        }

        let mut trainer = Trainer {
            vocab,
            student,
            decoder,
            teacher,
            adam: Adam::new(),
            sampler: None,
            texts: Vec::new(),
            text_order: Vec::new(),
            text_cursor: TextCursor::default(),
            log: Vec::new(),
            cfg,
        };
        if kind.is_pretraining() {
            let texts: Vec<&str> = if data.texts.is_empty() {
                data.pairs
                    .iter()
                    .flat_map(|p| [p.query.as_str(), p.positive.as_str()])
                    .collect()
            } else {
                data.texts.iter().map(String::as_str).collect()
            };
            if texts.is_empty() {
                return Err(Error::Config("pretraining needs at least one text".into()));
            }
            let max_seq = trainer.student.config().max_seq;
            trainer.texts = texts.iter().map(|t| trainer.vocab.tokenize(t, max_seq).ids).collect();
            trainer.text_order = trainer.text_epoch(0);
        } else {
            if data.pairs.is_empty() {
                return Err(Error::Config(format!("stage {} needs training pairs", kind.as_str())));
            }
            let sampler_cfg = SamplerConfig {
                alpha_sampling: trainer.cfg.alpha_sampling,
                seed: seed::derive(trainer.cfg.seed, &[4]),
            };
            trainer.sampler = Some(BatchSampler::new(data.pairs, &sampler_cfg)?);
        }
        Ok(trainer)
    }

    fn text_epoch(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.texts.len()).collect();
        idx.shuffle(&mut seed::rng(self.cfg.seed, &[2, epoch]));
        idx
    }

    pub fn config(&self) -> &StageConfig {
        &self.cfg
    }

    pub fn student(&self) -> &EncoderModel {
        &self.student
    }

    pub fn into_student(self) -> EncoderModel {
        self.student
    }

    pub fn teacher(&self) -> Option<&EncoderModel> {
        self.teacher.as_ref()
    }

    pub fn decoder(&self) -> Option<&RetroMaeDecoder> {
        self.decoder.as_ref()
    }

    pub fn steps_done(&self) -> u64 {
        self.adam.step
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    /// Runs until `cfg.steps` steps have been taken in total.
    pub fn run(&mut self) -> Result<()> {
        while self.adam.step < self.cfg.steps {
            self.step()?;
        }
        Ok(())
    }

    /// Loss and component values of the next step, without updating anything.
    pub fn peek_loss(&self) -> Result<StepRecord> {
        let mut probe = self.clone();
        let g = Graph::new();
        let (loss, components, _) = probe.forward(&g)?;
        Ok(StepRecord {
            step: self.adam.step + 1,
            loss: loss.item(),
            components,
        })
    }

    pub fn step(&mut self) -> Result<&StepRecord> {
        let g = Graph::new();
        let (loss, components, bound) = self.forward(&g)?;
        g.backward(loss)?;
        let t = self.adam.step + 1;
        let lr = self.cfg.optim.rate_at(t, self.cfg.steps);
        let student_grads = bound.student.grads();
        let decoder_grads = bound.decoder.map(|d| d.grads()).unwrap_or_default();
        let mut groups: Vec<(&str, &mut Params, &BTreeMap<String, Tensor>)> =
            vec![("student.", self.student.params_mut(), &student_grads)];
        if let Some(dec) = self.decoder.as_mut() {
            groups.push(("decoder.", dec.params_mut(), &decoder_grads));
        }
        self.adam.update_groups(&mut groups, &self.cfg.optim, lr)?;
        self.log.push(StepRecord {
            step: t,
            loss: loss.item(),
            components,
        });
        Ok(self.log.last().expect("pushed"))
    }

    fn forward<'g>(&mut self, g: &'g Graph) -> Result<(Var<'g>, Vec<f64>, Bound<'g>)> {
        let t = self.adam.step + 1;
        match self.cfg.kind {
            StageKind::RetromaePretrain | StageKind::RetromaeDistill => self.pretrain_forward(g, t),
            StageKind::Contrastive | StageKind::DomainAdapt => self.contrastive_forward(g),
            StageKind::ScoreDistill | StageKind::SelfDistill => self.distill_forward(g),
        }
    }

    fn next_texts(&mut self) -> Vec<Vec<u32>> {
        let len = self.texts.len();
        let b = self.cfg.batch_size.clamp(1, len);
        if self.text_cursor.pos + b > len {
            self.text_cursor = TextCursor {
                epoch: self.text_cursor.epoch + 1,
                pos: 0,
            };
            self.text_order = self.text_epoch(self.text_cursor.epoch);
        }
        let start = self.text_cursor.pos;
        self.text_cursor.pos += b;
        self.text_order[start..start + b]
            .iter()
            .map(|&i| self.texts[i].clone())
            .collect()
    }

    fn pretrain_forward<'g>(&mut self, g: &'g Graph, t: u64) -> Result<(Var<'g>, Vec<f64>, Bound<'g>)> {
        let seqs = self.next_texts();
        let mut rng = seed::rng(self.cfg.seed, &[5, t]);
        let p = &self.cfg.pretrain;
        let inputs: Vec<RetroMaeInput> = seqs
            .iter()
            .map(|s| RetroMaeInput::new(s, &p.encoder_mask, &p.decoder_mask, &mut rng))
            .collect();
        let be = self.student.bind(g, true);
        let bd = self.decoder.as_ref().expect("pretraining decoder").bind(g, true);
        let out = retromae_forward(&be, &bd, &inputs)?;
        let enc_labels = out.encoder_labels(&inputs);
        let dec_labels = out.decoder_labels(&inputs);

        let enc_term = if enc_labels.is_empty() {
            None
        } else if self.cfg.kind == StageKind::RetromaeDistill {
            let teacher = self.teacher.as_ref().expect("checked in new");
            let tg = Graph::new();
            let tb = teacher.bind(&tg, false);
            let t_logits = tb.lm_logits(tb.hidden(&out.encoder_packed)?)?.value();
            let rows: Vec<usize> = enc_labels.iter().map(|l| l.0).collect();
            Some(mlm_distill_loss(out.encoder_logits, &t_logits, &rows)?)
        } else {
            Some(mlm_loss(out.encoder_logits, &enc_labels)?)
        };
        let dec_term = if dec_labels.is_empty() {
            None
        } else {
            Some(mlm_loss(out.decoder_logits, &dec_labels)?)
        };
        let loss = match (enc_term, dec_term) {
            (Some(e), Some(d)) => e.add(d)?,
            (Some(x), None) | (None, Some(x)) => x,
            (None, None) => return Err(Error::EmptyLabels),
        };
        let n = inputs.len() as f64;
        let components = vec![
            enc_term.map_or(0.0, |v| v.item()),
            dec_term.map_or(0.0, |v| v.item()),
            inputs.iter().map(|i| i.encoder.ratio).sum::<f64>() / n,
            inputs.iter().map(|i| i.decoder.ratio).sum::<f64>() / n,
        ];
        Ok((
            loss,
            components,
            Bound {
                student: be,
                decoder: Some(bd),
            },
        ))
    }

    fn next_pairs(&mut self) -> PairBatch {
        let sampler = self.sampler.as_mut().expect("pair stage sampler");
        let (_, records) = sampler.next_batch(self.cfg.batch_size);
        let mut batch = PairBatch {
            queries: Vec::with_capacity(records.len()),
            passages: records.iter().map(|r| r.positive.clone()).collect(),
            owners: Vec::new(),
        };
        for (i, r) in records.iter().enumerate() {
            batch.queries.push(match &self.cfg.instruction {
                Some(task) => format_instruction_query(task, &r.query),
                None => r.query.clone(),
            });
            for neg in r.negatives.iter().take(self.cfg.max_negatives) {
                batch.passages.push(neg.clone());
                batch.owners.push(i);
            }
        }
        batch
    }

    fn encode<'g>(&self, bound: &BoundEncoder<'g>, model: &EncoderModel, texts: &[String]) -> Result<Var<'g>> {
        let max_seq = model.config().max_seq;
        bound.pooled(&Packed::from_batch(
            &TokenBatch::tokenize(texts, &self.vocab, max_seq),
            max_seq,
        )?)
    }

    /// Sparsity penalties for a sparse student, zero terms for a dense one.
    fn sparsity<'g>(&self, g: &'g Graph, q: Var<'g>, p: Var<'g>) -> Result<[Var<'g>; 4]> {
        if self.student.config().pooling == Pooling::MaxSparse {
            Ok([flops_loss(q)?, flops_loss(p)?, batch_norm_loss(q)?, batch_norm_loss(p)?])
        } else {
            let z = g.constant(Tensor::scalar(0.0));
            Ok([z, z, z, z])
        }
    }

    fn contrastive_forward<'g>(&mut self, g: &'g Graph) -> Result<(Var<'g>, Vec<f64>, Bound<'g>)> {
        let batch = self.next_pairs();
        let n = batch.queries.len();
        let bound = self.student.bind(g, true);
        let q = self.encode(&bound, &self.student, &batch.queries)?;
        let all = self.encode(&bound, &self.student, &batch.passages)?;
        let pos = all.slice_rows(0, n)?;
        let negs = if batch.owners.is_empty() {
            None
        } else {
            Some(all.slice_rows(n, batch.owners.len())?)
        };
        let cb = ContrastiveBatch::new(q, pos, negs, batch.owners)?;
        let base = match self.student.config().pooling {
            Pooling::Cls => contrastive_loss(&cb, &self.cfg.contrastive)?,
            Pooling::MaxSparse => {
                let blocks = ScoreBlocks {
                    query_passage: dot_scores(q, all)?,
                    query_query: dot_scores(q, q)?,
                    positive_passage: dot_scores(pos, all)?,
                };
                contrastive_loss_from_scores(&blocks, &cb.candidates, &self.cfg.contrastive)?
            }
        };
        let [fq, fp, nq, np] = self.sparsity(g, q, all)?;
        let terms = SparseTerms {
            kd: base,
            flops_q: fq,
            flops_p: fp,
            norm_q: nq,
            norm_p: np,
        };
        let loss = sparse_total_loss(&terms, &self.cfg.sparse)?;
        let components = vec![base.item(), fq.item(), fp.item(), nq.item(), np.item()];
        Ok((
            loss,
            components,
            Bound {
                student: bound,
                decoder: None,
            },
        ))
    }

    fn distill_forward<'g>(&mut self, g: &'g Graph) -> Result<(Var<'g>, Vec<f64>, Bound<'g>)> {
        let batch = self.next_pairs();
        let n = batch.queries.len();
        let owners = batch.owners.clone();
        let cands = crate::objectives::Candidates::new(n, owners)?;
        let tau = self.cfg.contrastive.tau;

        let teacher = self.teacher.as_ref().expect("checked in new");
        let tg = Graph::new();
        let tb = teacher.bind(&tg, false);
        let tq = self.encode(&tb, teacher, &batch.queries)?;
        let tp = self.encode(&tb, teacher, &batch.passages)?;
        let t_scores = pair_scores(teacher.config().pooling, tq, tp, tau)?.value();

        let bound = self.student.bind(g, true);
        let q = self.encode(&bound, &self.student, &batch.queries)?;
        let all = self.encode(&bound, &self.student, &batch.passages)?;
        let s_scores = pair_scores(self.student.config().pooling, q, all, tau)?;
        if s_scores.shape() != t_scores.shape() {
            return Err(Error::Alignment(format!(
                "student scored {:?} candidates, teacher {:?}",
                s_scores.shape(),
                t_scores.shape()
            )));
        }
        let mask = cands.mask();
        let kd = kd_loss(s_scores, &t_scores, &mask, &self.cfg.distill)?;
        let entropy = teacher_entropy(&t_scores, &mask, &self.cfg.distill)?;
        let [fq, fp, nq, np] = self.sparsity(g, q, all)?;
        let terms = SparseTerms {
            kd,
            flops_q: fq,
            flops_p: fp,
            norm_q: nq,
            norm_p: np,
        };
        let loss = sparse_total_loss(&terms, &self.cfg.sparse)?;
        let mean_cands = (0..n).map(|i| cands.size_for(i)).sum::<usize>() as f64 / n as f64;
        let components = vec![
            kd.item(),
            entropy,
            mean_cands,
            fq.item(),
            fp.item(),
            nq.item(),
            np.item(),
        ];
        Ok((
            loss,
            components,
            Bound {
                student: bound,
                decoder: None,
            },
        ))
    }

    /// Everything needed to resume: parameters, optimizer moments, step and
    /// data position.
    pub fn state(&self) -> Result<Checkpoint> {
        let mut meta = vec![
            ("stage".to_string(), self.cfg.kind.as_str().to_string()),
            ("step".to_string(), self.adam.step.to_string()),
        ];
        if let Some(s) = &self.sampler {
            meta.push((
                "sampler".into(),
                serde_json::to_string(s.state()).map_err(|e| Error::Format(e.to_string()))?,
            ));
        }
        meta.push((
            "texts".into(),
            serde_json::to_string(&self.text_cursor).map_err(|e| Error::Format(e.to_string()))?,
        ));
        meta.extend(
            self.student
                .config()
                .to_meta()
                .into_iter()
                .map(|(k, v)| (format!("student.{k}"), v)),
        );
        let mut params = self.student.params().with_prefix("student.");
        if let Some(d) = &self.decoder {
            params.extend(d.params().with_prefix("decoder."));
        }
        if self.cfg.kind == StageKind::SelfDistill {
            // The default teacher is the initial student, which is gone once
            // training starts.
            let teacher = self.teacher.as_ref().expect("self-distillation teacher");
            params.extend(teacher.params().with_prefix("teacher."));
        }
        params.extend(self.adam.m.with_prefix("adam.m."));
        params.extend(self.adam.v.with_prefix("adam.v."));
        Ok(Checkpoint { meta, params })
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        self.state()?.write(path)
    }

    /// Rebuilds a trainer from the same configuration and data, then restores
    /// a saved state.
    pub fn resume(
        cfg: StageConfig,
        vocab: Vocab,
        teacher: Option<EncoderModel>,
        data: StageData,
        state: &Checkpoint,
    ) -> Result<Self> {
        let get = |k: &str| {
            state
                .meta_value(k)
                .ok_or_else(|| Error::Format(format!("training state lacks {k}")))
        };
        if get("stage")? != cfg.kind.as_str() {
            return Err(Error::Config(format!(
                "state belongs to stage {}, config runs {}",
                get("stage")?,
                cfg.kind.as_str()
            )));
        }
        let student_meta: Vec<(String, String)> = state
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("student.").map(|s| (s.to_string(), v.clone())))
            .collect();
        let student_cfg = EncoderConfig::from_meta(&student_meta)?;
        let student = EncoderModel::from_params(student_cfg.clone(), state.params.strip_prefix("student."))?;
        let teacher = match teacher {
            None if cfg.kind == StageKind::SelfDistill => Some(EncoderModel::from_params(
                student_cfg,
                state.params.strip_prefix("teacher."),
            )?),
            t => t,
        };
        let mut t = Trainer::new(cfg, vocab, student.clone(), teacher, data)?;
        t.student = student;
        if let Some(d) = t.decoder.as_mut() {
            *d = RetroMaeDecoder::from_params(t.student.config(), state.params.strip_prefix("decoder."))?;
        }
        t.adam = Adam {
            step: get("step")?
                .parse()
                .map_err(|_| Error::Format("training state step is not a number".into()))?,
            m: state.params.strip_prefix("adam.m."),
            v: state.params.strip_prefix("adam.v."),
        };
        if let Some(s) = t.sampler.as_mut() {
            let st: SamplerState = serde_json::from_str(get("sampler")?).map_err(|e| Error::Format(e.to_string()))?;
            s.restore(st)?;
        }
        t.text_cursor = serde_json::from_str(get("texts")?).map_err(|e| Error::Format(e.to_string()))?;
        if t.cfg.kind.is_pretraining() {
            t.text_order = t.text_epoch(t.text_cursor.epoch);
        }
        Ok(t)
    }

    /// Step log as CSV: `step,loss,<components>`.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("step,loss");
        for c in self.cfg.kind.components() {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.log {
            write!(s, "{},{}", r.step, r.loss).expect("string write");
            for v in &r.components {
                write!(s, ",{v}").expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn is_distillation(&self) -> bool {
        self.cfg.kind.is_distillation()
    }
}

struct Bound<'g> {
    student: BoundEncoder<'g>,
    decoder: Option<crate::encoder::BoundDecoder<'g>>,
}
