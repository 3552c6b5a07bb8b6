//! Training losses.
//!
//! Every loss is built from [`Var`] ops, so gradients come from the tape.
//! Scores are temperature-scaled cosines for dense models and raw dot
//! products of term weights for sparse ones.
//!
//! The contrastive denominator for query `i` is
//!
//! ```text
//! Z_i = e^{s(q_i,p_i)}
//!     + α Σ_{p ∈ N_i} e^{s(q_i,p)}
//!     + β Σ_{i'≠i} e^{s(q_i,q_i')}
//!     + γ Σ_{p ∈ N_i} e^{s(p_i,p)}
//! ```
//!
//! where `N_i` holds the hard negatives of query `i` together with the
//! positives of every other query in the batch. Hard negatives belonging to
//! other queries are not candidates for `i`.

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.05,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub tau_kd: f64,
    /// Divide the summed cross-entropy by the number of queries.
    pub normalize: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau_kd: 1.0,
            normalize: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_kd > 0.0 && self.tau_kd.is_finite()) {
            return Err(Error::Config(format!("tau_kd must be positive, got {}", self.tau_kd)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseLossConfig {
    pub lambda_q: f64,
    pub lambda_p: f64,
    pub sigma_q: f64,
    pub sigma_p: f64,
}

impl SparseLossConfig {
    pub fn uniform(w: f64) -> Self {
        SparseLossConfig {
            lambda_q: w,
            lambda_p: w,
            sigma_q: w,
            sigma_p: w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_q", self.lambda_q),
            ("lambda_p", self.lambda_p),
            ("sigma_q", self.sigma_q),
            ("sigma_p", self.sigma_p),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Which query owns each explicit negative row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidates {
    pub queries: usize,
    pub owners: Vec<usize>,
}

impl Candidates {
    pub fn new(queries: usize, owners: Vec<usize>) -> Result<Self> {
        if queries == 0 {
            return Err(Error::EmptyBatch);
        }
        if let Some(&o) = owners.iter().find(|&&o| o >= queries) {
            return Err(Error::shape(
                "candidates",
                format!("negative owned by query {o} of {queries}"),
            ));
        }
        Ok(Candidates { queries, owners })
    }

    /// `counts[i]` hard negatives per query, laid out query by query.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let owners = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
            .collect();
        Candidates::new(counts.len(), owners)
    }

    /// Passage columns: all positives, then all negatives.
    pub fn width(&self) -> usize {
        self.queries + self.owners.len()
    }

    /// Candidates scored for query `i`: its positive, its own negatives, and
    /// every other query's positive.
    pub fn size_for(&self, i: usize) -> usize {
        self.queries + self.owners.iter().filter(|&&o| o == i).count()
    }

    /// `n × width` indicator of each query's candidate passages.
    pub fn mask(&self) -> Tensor {
        let (n, w) = (self.queries, self.width());
        let mut m = vec![0.0; n * w];
        for i in 0..n {
            m[i * w..i * w + n].fill(1.0);
            for (k, &o) in self.owners.iter().enumerate() {
                if o == i {
                    m[i * w + n + k] = 1.0;
                }
            }
        }
        Tensor::matrix(n, w, m).expect("mask shape")
    }
}

/// Queries, their positives and their hard negatives as embedding rows.
pub struct ContrastiveBatch<'g> {
    pub queries: Var<'g>,
    pub positives: Var<'g>,
    /// Every explicit negative, stacked; `None` when there are none.
    pub negatives: Option<Var<'g>>,
    pub candidates: Candidates,
}

impl<'g> ContrastiveBatch<'g> {
    pub fn new(queries: Var<'g>, positives: Var<'g>, negatives: Option<Var<'g>>, owners: Vec<usize>) -> Result<Self> {
        let qs = queries.shape();
        if qs.len() != 2 || qs[0] == 0 {
            return Err(Error::EmptyBatch);
        }
        if positives.shape() != qs {
            return Err(Error::shape("contrastive batch", "one positive per query required"));
        }
        let k = negatives.map_or(0, |n| n.shape()[0]);
        if k != owners.len() {
            return Err(Error::shape("contrastive batch", "one owner per negative required"));
        }
        if let Some(n) = negatives {
            if n.shape()[1] != qs[1] {
                return Err(Error::shape("contrastive batch", "negative width differs"));
            }
        }
        Ok(ContrastiveBatch {
            queries,
            positives,
            negatives,
            candidates: Candidates::new(qs[0], owners)?,
        })
    }

    /// Positives followed by negatives.
    pub fn passages(&self) -> Result<Var<'g>> {
        match self.negatives {
            Some(n) => Var::concat_rows(&[self.positives, n]),
            None => Ok(self.positives),
        }
    }

    /// Temperature-scaled query–passage cosines, `n × width`.
    pub fn query_passage_scores(&self, tau: f64) -> Result<Var<'g>> {
        self.queries.cosine_matrix(self.passages()?, tau)
    }
}

/// Joins matrices with equal row counts side by side.
fn concat_cols<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let t = parts.iter().map(|p| p.transpose()).collect::<Result<Vec<_>>>()?;
    Var::concat_rows(&t)?.transpose()
}

pub fn contrastive_loss<'g>(batch: &ContrastiveBatch<'g>, cfg: &ContrastiveConfig) -> Result<Var<'g>> {
    cfg.validate()?;
    let all = batch.passages()?;
    let blocks = ScoreBlocks {
        query_passage: batch.queries.cosine_matrix(all, cfg.tau)?,
        query_query: batch.queries.cosine_matrix(batch.queries, cfg.tau)?,
        positive_passage: batch.positives.cosine_matrix(all, cfg.tau)?,
    };
    contrastive_loss_from_scores(&blocks, &batch.candidates, cfg)
}

/// The three similarity blocks of the contrastive denominator.
pub struct ScoreBlocks<'g> {
    /// `n × width`: queries against positives then negatives.
    pub query_passage: Var<'g>,
    /// `n × n`.
    pub query_query: Var<'g>,
    /// `n × width`: positives against positives then negatives.
    pub positive_passage: Var<'g>,
}

/// Contrastive loss over precomputed scores. `cfg.tau` is not applied here;
/// the scores are used as given.
pub fn contrastive_loss_from_scores<'g>(
    blocks: &ScoreBlocks<'g>,
    cands: &Candidates,
    cfg: &ContrastiveConfig,
) -> Result<Var<'g>> {
    cfg.validate()?;
    let (n, w) = (cands.queries, cands.width());
    for (name, v, cols) in [
        ("query_passage", blocks.query_passage, w),
        ("query_query", blocks.query_query, n),
        ("positive_passage", blocks.positive_passage, w),
    ] {
        if v.shape() != [n, cols] {
            return Err(Error::shape(
                "contrastive_loss",
                format!("{name} block is {:?}, expected [{n}, {cols}]", v.shape()),
            ));
        }
    }
    let scores = concat_cols(&[blocks.query_passage, blocks.query_query, blocks.positive_passage])?;

    let cols = 2 * w + n;
    let mut weights = vec![0.0; n * cols];
    for i in 0..n {
        let row = &mut weights[i * cols..(i + 1) * cols];
        for j in 0..n {
            row[j] = if j == i { 1.0 } else { cfg.alpha };
            row[w + j] = if j == i { 0.0 } else { cfg.beta };
            row[w + n + j] = if j == i { 0.0 } else { cfg.gamma };
        }
        for (k, &o) in cands.owners.iter().enumerate() {
            if o == i {
                row[n + k] = cfg.alpha;
                row[w + n + n + k] = cfg.gamma;
            }
        }
    }
    let weights = Tensor::matrix(n, cols, weights)?;
    let lse = scores.weighted_logsumexp_rows(&weights)?;
    let pos = scores.pick(&(0..n).collect::<Vec<_>>())?;
    lse.sub(pos)?.mean()
}

/// Row-wise softmax restricted to the columns where `mask` is nonzero.
pub fn masked_softmax(scores: &Tensor, mask: &Tensor, tau: f64) -> Result<Tensor> {
    if scores.shape() != mask.shape() {
        return Err(Error::Alignment(format!(
            "scores {:?} vs candidate mask {:?}",
            scores.shape(),
            mask.shape()
        )));
    }
    let (n, m) = (scores.rows(), scores.cols());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let (s, k) = (scores.row(i), mask.row(i));
        let max = s
            .iter()
            .zip(k)
            .filter(|(_, &k)| k > 0.0)
            .map(|(&v, _)| v / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Alignment(format!("query {i} has no candidates")));
        }
        let row = &mut out[i * m..(i + 1) * m];
        let mut z = 0.0;
        for j in 0..m {
            if k[j] > 0.0 {
                row[j] = (s[j] / tau - max).exp();
                z += row[j];
            }
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::matrix(n, m, out)
}

/// Entropy of each masked teacher distribution, summed (or averaged) the same
/// way as [`kd_loss`].
pub fn teacher_entropy(teacher: &Tensor, mask: &Tensor, cfg: &DistillConfig) -> Result<f64> {
    let p = masked_softmax(teacher, mask, cfg.tau_kd)?;
    let h: f64 = p.data().iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    Ok(if cfg.normalize { h / teacher.rows() as f64 } else { h })
}

/// Cross-entropy from the teacher's candidate distribution to the student's.
///
/// `student` and `teacher` are `n × m` score matrices over the same
/// candidate columns; `mask` selects each query's candidates. The teacher
/// is a constant.
pub fn kd_loss<'g>(student: Var<'g>, teacher: &Tensor, mask: &Tensor, cfg: &DistillConfig) -> Result<Var<'g>> {
    cfg.validate()?;
    let shape = student.shape();
    if shape != teacher.shape() {
        return Err(Error::Alignment(format!(
            "student scores {shape:?} vs teacher scores {:?}",
            teacher.shape()
        )));
    }
    let p_t = masked_softmax(teacher, mask, cfg.tau_kd)?;
    let scaled = student.scale(1.0 / cfg.tau_kd)?;
    let lse = scaled.weighted_logsumexp_rows(mask)?.sum()?;
    let target = student.graph().constant(p_t);
    let cross = scaled.mul(target)?.sum()?;
    let total = lse.sub(cross)?;
    if cfg.normalize {
        total.scale(1.0 / shape[0] as f64)
    } else {
        Ok(total)
    }
}

/// Mean cross-entropy at labeled rows. `labels` are `(row, target id)`.
pub fn mlm_loss<'g>(logits: Var<'g>, labels: &[(usize, u32)]) -> Result<Var<'g>> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let rows: Vec<usize> = labels.iter().map(|l| l.0).collect();
    let targets: Vec<usize> = labels.iter().map(|l| l.1 as usize).collect();
    logits
        .gather_rows(&rows)?
        .log_softmax_rows()?
        .pick(&targets)?
        .mean()?
        .scale(-1.0)
}

/// Mean KL divergence from the teacher's token distribution to the
/// student's at the given rows of both logit matrices.
pub fn mlm_distill_loss<'g>(student: Var<'g>, teacher: &Tensor, rows: &[usize]) -> Result<Var<'g>> {
    if rows.is_empty() {
        return Err(Error::EmptyLabels);
    }
    if student.shape().get(1) != teacher.shape().get(1) {
        return Err(Error::Alignment("student and teacher vocabularies differ".into()));
    }
    let v = teacher.cols();
    let mut p = Vec::with_capacity(rows.len() * v);
    let mut neg_entropy = 0.0;
    for &r in rows {
        if r >= teacher.rows() {
            return Err(Error::shape("mlm_distill_loss", format!("row {r} out of range")));
        }
        let row = teacher.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        for &x in row {
            let logp = x - max - z.ln();
            let pv = logp.exp();
            neg_entropy += pv * logp;
            p.push(pv);
        }
    }
    let target = student.graph().constant(Tensor::matrix(rows.len(), v, p)?);
    let cross = student.gather_rows(rows)?.log_softmax_rows()?.mul(target)?.sum()?;
    cross
        .scale(-1.0)?
        .add_scalar(neg_entropy)?
        .scale(1.0 / rows.len() as f64)
}

/// Sum over terms of the squared batch-mean weight.
pub fn flops_loss<'g>(weights: Var<'g>) -> Result<Var<'g>> {
    let shape = weights.shape();
    if shape.len() != 2 {
        return Err(Error::shape("flops_loss", "weights must be N×V"));
    }
    if shape[0] == 0 {
        return Err(Error::EmptyBatch);
    }
    let mean = weights.sum_axis0()?.scale(1.0 / shape[0] as f64)?;
    mean.mul(mean)?.sum()
}

/// L1 norm of the max-pooled `log(1 + relu(·))` weights of one sequence.
pub fn norm_loss<'g>(logits: Var<'g>, mask: &[bool]) -> Result<Var<'g>> {
    logits.max_over_positions(mask)?.relu()?.log1p()?.sum()
}

/// Mean L1 norm over a batch of pooled term weights (`B × V`).
pub fn batch_norm_loss<'g>(weights: Var<'g>) -> Result<Var<'g>> {
    let shape = weights.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::EmptyBatch);
    }
    weights.sum()?.scale(1.0 / shape[0] as f64)
}

pub struct SparseTerms<'g> {
    pub kd: Var<'g>,
    pub flops_q: Var<'g>,
    pub flops_p: Var<'g>,
    pub norm_q: Var<'g>,
    pub norm_p: Var<'g>,
}

pub fn sparse_total_loss<'g>(t: &SparseTerms<'g>, cfg: &SparseLossConfig) -> Result<Var<'g>> {
    cfg.validate()?;
    t.kd.add(t.flops_q.scale(cfg.lambda_q)?)?
        .add(t.flops_p.scale(cfg.lambda_p)?)?
        .add(t.norm_q.scale(cfg.sigma_q)?)?
        .add(t.norm_p.scale(cfg.sigma_p)?)
}

/// Raw inner products between every query row and every passage row.
pub fn dot_scores<'g>(queries: Var<'g>, passages: Var<'g>) -> Result<Var<'g>> {
    queries.matmul(passages.transpose()?)
}
