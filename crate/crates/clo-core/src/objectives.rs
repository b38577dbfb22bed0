//! Training objectives: response NLL, preference loss over (chosen,
//! rejected) pairs, the bidirectional cross-lingual preference loss, and
//! their convex combination.
//!
//! All losses are built on one scalar graph so values and gradients come
//! from a single code path. Within a batch, each distinct (prompt,
//! response) pair is scored once and the node reused; the reference
//! policy's scores enter as constants.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataprep::{Batch, PreferencePair};
use crate::error::{Error, Result};
use crate::nnet::{Graph, GradStore, NodeId, PolicyModel, ReferenceSnapshot};
use crate::synthlang::LanguageTag;

pub use crate::nnet::{sigmoid, softplus};

/// Which prompt/response pairs feed the NLL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NllMode {
    /// Only the target-language (x, y) pairs.
    TargetOnly,
    /// Target and source pairs averaged together.
    TargetAndEnglish,
}

/// How a response log-probability is reduced over its tokens inside the
/// NLL and margin terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Trade-off between the NLL term and the preference term.
    pub lambda: f64,
    /// Margin scale; strength of the implicit KL constraint.
    pub beta: f64,
    pub nll_mode: NllMode,
    pub logprob_reduction: Reduction,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 0.5,
            beta: 0.1,
            nll_mode: NllMode::TargetOnly,
            logprob_reduction: Reduction::Sum,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Per-batch scalars reported by the combined loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sft: f64,
    pub l_cl: f64,
    pub l_clo: f64,
    pub mean_z_en: f64,
    pub mean_z_tgt: f64,
    /// Fraction of examples with a positive source-direction margin.
    pub pref_acc_en: f64,
    pub pref_acc_tgt: f64,
    pub batch_size: usize,
}

/// -log sigmoid(z), the per-pair preference loss, in overflow-free form.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    softplus(-z)
}

/// The margin between chosen and rejected responses, relative to the
/// reference policy and scaled by beta.
pub fn pair_margin(
    beta: f64,
    policy_chosen: f64,
    ref_chosen: f64,
    policy_rejected: f64,
    ref_rejected: f64,
) -> f64 {
    beta * ((policy_chosen - ref_chosen) - (policy_rejected - ref_rejected))
}

/// Scores one (prompt, response) per policy/reference and caches by
/// content so repeated uses within a step share the forward pass.
struct ScoreCache<'r> {
    refm: &'r ReferenceSnapshot,
    reduction: Reduction,
    policy: HashMap<(Vec<u32>, Vec<u32>), NodeId>,
    reference: HashMap<(Vec<u32>, Vec<u32>), f64>,
}

impl<'r> ScoreCache<'r> {
    fn new(refm: &'r ReferenceSnapshot, reduction: Reduction) -> Self {
        ScoreCache {
            refm,
            reduction,
            policy: HashMap::new(),
            reference: HashMap::new(),
        }
    }

    fn policy_node(
        &mut self,
        graph: &mut Graph<'_>,
        prompt: &[u32],
        response: &[u32],
    ) -> Result<NodeId> {
        let key = (prompt.to_vec(), response.to_vec());
        if let Some(&node) = self.policy.get(&key) {
            return Ok(node);
        }
        let raw = graph.seq_logprob(prompt, response)?;
        let node = match self.reduction {
            Reduction::Sum => raw,
            Reduction::Mean => graph.scale(1.0 / response.len() as f64, raw)?,
        };
        self.policy.insert(key, node);
        Ok(node)
    }

    fn reference_score(&mut self, prompt: &[u32], response: &[u32]) -> Result<f64> {
        let key = (prompt.to_vec(), response.to_vec());
        if let Some(&v) = self.reference.get(&key) {
            return Ok(v);
        }
        let scored = self.refm.sequence_logprob(prompt, response)?;
        let v = match self.reduction {
            Reduction::Sum => scored.logprob_sum,
            Reduction::Mean => scored.logprob_sum / scored.token_count as f64,
        };
        self.reference.insert(key, v);
        Ok(v)
    }

    /// Node for the pair margin z; the reference scores fold into a
    /// constant offset.
    fn margin_node(
        &mut self,
        graph: &mut Graph<'_>,
        beta: f64,
        pair: &PreferencePair,
    ) -> Result<NodeId> {
        let pc = self.policy_node(graph, &pair.prompt, &pair.chosen)?;
        let pr = self.policy_node(graph, &pair.prompt, &pair.rejected)?;
        let rc = self.reference_score(&pair.prompt, &pair.chosen)?;
        let rr = self.reference_score(&pair.prompt, &pair.rejected)?;
        let diff = graph.sub(pc, pr)?;
        let shifted = graph.add_const(-(rc - rr), diff)?;
        graph.scale(beta, shifted)
    }
}

fn check_batch(batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("batch must be non-empty".into()));
    }
    for item in &batch.items {
        if item.en.prompt_lang != LanguageTag::LangA || item.tgt.prompt_lang != LanguageTag::LangB {
            return Err(Error::Pairing(format!(
                "item {} does not carry both directions",
                item.source_id
            )));
        }
    }
    Ok(())
}

fn build_nll(
    graph: &mut Graph<'_>,
    batch: &Batch,
    mode: NllMode,
    reduction: Reduction,
    cache: Option<&mut ScoreCache<'_>>,
) -> Result<NodeId> {
    check_batch(batch)?;
    let mut terms = Vec::new();
    // Without a shared cache (plain NLL has no reference policy in play),
    // score directly on the graph.
    let score = |graph: &mut Graph<'_>,
                     cache: &mut Option<&mut ScoreCache<'_>>,
                     prompt: &[u32],
                     response: &[u32]|
     -> Result<NodeId> {
        match cache {
            Some(c) => c.policy_node(graph, prompt, response),
            None => {
                let raw = graph.seq_logprob(prompt, response)?;
                match reduction {
                    Reduction::Sum => Ok(raw),
                    Reduction::Mean => graph.scale(1.0 / response.len() as f64, raw),
                }
            }
        }
    };
    let mut cache = cache;
    for item in &batch.items {
        let lp_tgt = score(graph, &mut cache, &item.tgt.prompt, &item.tgt.chosen)?;
        terms.push(graph.neg(lp_tgt)?);
        if mode == NllMode::TargetAndEnglish {
            let lp_en = score(graph, &mut cache, &item.en.prompt, &item.en.chosen)?;
            terms.push(graph.neg(lp_en)?);
        }
    }
    graph.mean(&terms)
}

/// Mean response NLL over the batch. `TargetOnly` uses the target-language
/// pairs; `TargetAndEnglish` averages the source-language pairs in as well.
pub fn nll_loss(
    model: &PolicyModel,
    batch: &Batch,
    mode: NllMode,
    reduction: Reduction,
) -> Result<f64> {
    let mut graph = Graph::new(model);
    let node = build_nll(&mut graph, batch, mode, reduction, None)?;
    graph.value(node)
}

/// NLL value plus its gradient.
pub fn nll_loss_grad(
    model: &PolicyModel,
    batch: &Batch,
    mode: NllMode,
    reduction: Reduction,
) -> Result<(f64, GradStore)> {
    let mut graph = Graph::new(model);
    let node = build_nll(&mut graph, batch, mode, reduction, None)?;
    let value = graph.value(node)?;
    let grads = graph.backward(node)?;
    Ok((value, grads))
}

fn build_dpo(
    graph: &mut Graph<'_>,
    cache: &mut ScoreCache<'_>,
    pairs: &[&PreferencePair],
    beta: f64,
) -> Result<(NodeId, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::Config("pair set must be non-empty".into()));
    }
    let mut losses = Vec::with_capacity(pairs.len());
    let mut margins = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let z = cache.margin_node(graph, beta, pair)?;
        margins.push(graph.value(z)?);
        let neg_z = graph.neg(z)?;
        losses.push(graph.softplus(neg_z)?);
    }
    let loss = graph.mean(&losses)?;
    Ok((loss, margins))
}

/// Standard preference loss: mean of -log sigmoid(z) over the pairs.
/// Returns the loss and the per-pair margins.
pub fn dpo_loss(
    model: &PolicyModel,
    refm: &ReferenceSnapshot,
    pairs: &[PreferencePair],
    beta: f64,
    reduction: Reduction,
) -> Result<(f64, Vec<f64>)> {
    let mut graph = Graph::new(model);
    let mut cache = ScoreCache::new(refm, reduction);
    let refs: Vec<&PreferencePair> = pairs.iter().collect();
    let (node, margins) = build_dpo(&mut graph, &mut cache, &refs, beta)?;
    Ok((graph.value(node)?, margins))
}

/// Preference loss value, margins, and gradient.
pub fn dpo_loss_grad(
    model: &PolicyModel,
    refm: &ReferenceSnapshot,
    pairs: &[PreferencePair],
    beta: f64,
    reduction: Reduction,
) -> Result<(f64, Vec<f64>, GradStore)> {
    let mut graph = Graph::new(model);
    let mut cache = ScoreCache::new(refm, reduction);
    let refs: Vec<&PreferencePair> = pairs.iter().collect();
    let (node, margins) = build_dpo(&mut graph, &mut cache, &refs, beta)?;
    let value = graph.value(node)?;
    let grads = graph.backward(node)?;
    Ok((value, margins, grads))
}

/// Per-direction margins of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMargins {
    pub z_en: Vec<f64>,
    pub z_tgt: Vec<f64>,
}

impl DirectionMargins {
    pub fn mean_en(&self) -> f64 {
        mean(&self.z_en)
    }

    pub fn mean_tgt(&self) -> f64 {
        mean(&self.z_tgt)
    }

    pub fn acc_en(&self) -> f64 {
        positive_fraction(&self.z_en)
    }

    pub fn acc_tgt(&self) -> f64 {
        positive_fraction(&self.z_tgt)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn positive_fraction(xs: &[f64]) -> f64 {
    xs.iter().filter(|z| **z > 0.0).count() as f64 / xs.len() as f64
}

fn build_cl(
    graph: &mut Graph<'_>,
    cache: &mut ScoreCache<'_>,
    batch: &Batch,
    beta: f64,
) -> Result<(NodeId, DirectionMargins)> {
    check_batch(batch)?;
    let mut contributions = Vec::with_capacity(batch.len());
    let mut z_en = Vec::with_capacity(batch.len());
    let mut z_tgt = Vec::with_capacity(batch.len());
    for item in &batch.items {
        let zen = cache.margin_node(graph, beta, &item.en)?;
        let ztg = cache.margin_node(graph, beta, &item.tgt)?;
        z_en.push(graph.value(zen)?);
        z_tgt.push(graph.value(ztg)?);
        let neg_en = graph.neg(zen)?;
        let neg_tg = graph.neg(ztg)?;
        let loss_en = graph.softplus(neg_en)?;
        let loss_tg = graph.softplus(neg_tg)?;
        contributions.push(graph.add(loss_en, loss_tg)?);
    }
    let loss = graph.mean(&contributions)?;
    Ok((loss, DirectionMargins { z_en, z_tgt }))
}

/// Cross-lingual preference loss: for each quadruple, both direction
/// margins contribute, averaged over the batch:
/// (1/N) sum_i [ -log sigmoid(z_en_i) - log sigmoid(z_tgt_i) ].
pub fn cl_loss(
    model: &PolicyModel,
    refm: &ReferenceSnapshot,
    batch: &Batch,
    beta: f64,
    reduction: Reduction,
) -> Result<(f64, DirectionMargins)> {
    let mut graph = Graph::new(model);
    let mut cache = ScoreCache::new(refm, reduction);
    let (node, margins) = build_cl(&mut graph, &mut cache, batch, beta)?;
    Ok((graph.value(node)?, margins))
}

struct BuiltClo {
    l_clo: NodeId,
    breakdown: LossBreakdown,
}

fn build_clo(
    graph: &mut Graph<'_>,
    refm: &ReferenceSnapshot,
    batch: &Batch,
    config: &ObjectiveConfig,
) -> Result<BuiltClo> {
    config.validate()?;
    let mut cache = ScoreCache::new(refm, config.logprob_reduction);
    let (l_cl, margins) = build_cl(graph, &mut cache, batch, config.beta)?;
    let l_sft = build_nll(
        graph,
        batch,
        config.nll_mode,
        config.logprob_reduction,
        Some(&mut cache),
    )?;
    let sft_part = graph.scale(config.lambda, l_sft)?;
    let cl_part = graph.scale(1.0 - config.lambda, l_cl)?;
    let l_clo = graph.add(sft_part, cl_part)?;
    let breakdown = LossBreakdown {
        l_sft: graph.value(l_sft)?,
        l_cl: graph.value(l_cl)?,
        l_clo: graph.value(l_clo)?,
        mean_z_en: margins.mean_en(),
        mean_z_tgt: margins.mean_tgt(),
        pref_acc_en: margins.acc_en(),
        pref_acc_tgt: margins.acc_tgt(),
        batch_size: batch.len(),
    };
    Ok(BuiltClo { l_clo, breakdown })
}

/// Combined loss lambda * L_sft + (1 - lambda) * L_cl with the full
/// per-batch breakdown.
pub fn clo_loss(
    model: &PolicyModel,
    refm: &ReferenceSnapshot,
    batch: &Batch,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    let mut graph = Graph::new(model);
    let built = build_clo(&mut graph, refm, batch, config)?;
    Ok(built.breakdown)
}

/// Combined loss breakdown plus its gradient.
pub fn clo_loss_grad(
    model: &PolicyModel,
    refm: &ReferenceSnapshot,
    batch: &Batch,
    config: &ObjectiveConfig,
) -> Result<(LossBreakdown, GradStore)> {
    let mut graph = Graph::new(model);
    let built = build_clo(&mut graph, refm, batch, config)?;
    let grads = graph.backward(built.l_clo)?;
    Ok((built.breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::{make_batches, PairedDirections};
    use crate::nnet::{init_model, snapshot_reference, ModelConfig};
    use crate::synthlang::{build_vocabulary, gen_corpus, TaskMix, Vocabulary};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn vocab() -> Vocabulary {
        build_vocabulary(16, 0.5).unwrap()
    }

    fn model_config(scale: f64) -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 16,
            init_seed: 13,
            init_scale: scale,
        }
    }

    fn batch_of(n: usize, seed: u64) -> (Vocabulary, Batch) {
        let v = vocab();
        let corpus = gen_corpus(n, seed, &TaskMix::default(), (2, 3), &v).unwrap();
        let batches = make_batches(&corpus, n, seed, &v).unwrap();
        (v, batches.into_iter().next().unwrap())
    }

    #[test]
    fn uniform_model_nll_is_log_vocab() {
        let mut cfg = model_config(0.0);
        cfg.vocab_size = 4;
        let model = init_model(&cfg).unwrap();
        // Hand-built batch over the 4-token vocabulary, responses length 3.
        let pair = |prompt: Vec<u32>, resp: Vec<u32>, lang| PreferencePair {
            prompt,
            chosen: resp.clone(),
            rejected: resp,
            prompt_lang: lang,
            source_id: 0,
        };
        let batch = Batch {
            items: vec![PairedDirections {
                source_id: 0,
                en: pair(vec![0, 1], vec![2, 3, 1], LanguageTag::LangA),
                tgt: pair(vec![1, 2], vec![3, 0, 2], LanguageTag::LangB),
            }],
        };
        let nll = nll_loss(&model, &batch, NllMode::TargetOnly, Reduction::Sum).unwrap();
        let expected = 3.0 * 4.0f64.ln();
        assert!((nll - expected).abs() < 1e-12, "{nll} vs {expected}");
    }

    #[test]
    fn near_perfect_model_has_near_zero_nll() {
        // Zero-layer model whose head gives the response token a huge
        // logit: NLL collapses toward zero.
        let mut cfg = model_config(0.0);
        cfg.vocab_size = 8;
        cfg.n_layers = 0;
        cfg.d_model = 4;
        cfg.n_heads = 1;
        let mut model = init_model(&cfg).unwrap();
        for v in model.param_mut("embed.tok").unwrap() {
            *v = 1.0;
        }
        let head = model.param_mut("head").unwrap();
        for i in 0..4 {
            head[5 * 4 + i] = 60.0; // token 5 dominates everywhere
        }
        let pair = PreferencePair {
            prompt: vec![4],
            chosen: vec![5, 5],
            rejected: vec![5, 5],
            prompt_lang: LanguageTag::LangB,
            source_id: 0,
        };
        let batch = Batch {
            items: vec![PairedDirections {
                source_id: 0,
                en: PreferencePair {
                    prompt_lang: LanguageTag::LangA,
                    ..pair.clone()
                },
                tgt: pair,
            }],
        };
        let nll = nll_loss(&model, &batch, NllMode::TargetOnly, Reduction::Sum).unwrap();
        assert!(nll >= 0.0);
        assert!(nll < 1e-12, "nll = {nll}");
    }

    #[test]
    fn both_mode_equals_target_only_on_score_identical_sides() {
        let model = init_model(&model_config(0.3)).unwrap();
        // Both directions carry the same sequences, so the English terms
        // duplicate the target terms exactly.
        let p = PreferencePair {
            prompt: vec![4, 5],
            chosen: vec![6, 7, 1],
            rejected: vec![6, 7, 1],
            prompt_lang: LanguageTag::LangA,
            source_id: 1,
        };
        let batch = Batch {
            items: vec![PairedDirections {
                source_id: 1,
                en: p.clone(),
                tgt: PreferencePair {
                    prompt_lang: LanguageTag::LangB,
                    ..p
                },
            }],
        };
        let a = nll_loss(&model, &batch, NllMode::TargetOnly, Reduction::Sum).unwrap();
        let b = nll_loss(&model, &batch, NllMode::TargetAndEnglish, Reduction::Sum).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dpo_at_reference_is_ln_two() {
        let model = init_model(&model_config(0.4)).unwrap();
        let refm = snapshot_reference(&model);
        let (v, batch) = batch_of(3, 2);
        let _ = v;
        let pairs: Vec<PreferencePair> = batch.pairs().cloned().collect();
        let (loss, zs) = dpo_loss(&model, &refm, &pairs, 0.1, Reduction::Sum).unwrap();
        assert!((loss - LN_2).abs() < 1e-12, "loss {loss}");
        assert!(zs.iter().all(|z| z.abs() < 1e-12));
    }

    #[test]
    fn dpo_beta_zero_is_ln_two_for_any_policies() {
        let model = init_model(&model_config(0.4)).unwrap();
        let other = init_model(&model_config(0.8)).unwrap();
        let refm = snapshot_reference(&other);
        let (_, batch) = batch_of(2, 7);
        let pairs: Vec<PreferencePair> = batch.pairs().cloned().collect();
        let (loss, _) = dpo_loss(&model, &refm, &pairs, 0.0, Reduction::Sum).unwrap();
        assert!((loss - LN_2).abs() < 1e-12);
    }

    #[test]
    fn doubling_beta_doubles_margins() {
        let model = init_model(&model_config(0.4)).unwrap();
        let other = init_model(&model_config(0.8)).unwrap();
        let refm = snapshot_reference(&other);
        let (_, batch) = batch_of(3, 8);
        let pairs: Vec<PreferencePair> = batch.pairs().cloned().collect();
        let (_, z1) = dpo_loss(&model, &refm, &pairs, 0.1, Reduction::Sum).unwrap();
        let (_, z2) = dpo_loss(&model, &refm, &pairs, 0.2, Reduction::Sum).unwrap();
        for (a, b) in z1.iter().zip(&z2) {
            assert!((2.0 * a - b).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn cl_at_reference_is_two_ln_two() {
        let model = init_model(&model_config(0.5)).unwrap();
        let refm = snapshot_reference(&model);
        let (_, batch) = batch_of(4, 3);
        let (loss, _) = cl_loss(&model, &refm, &batch, 0.1, Reduction::Sum).unwrap();
        assert!((loss - 2.0 * LN_2).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn cl_single_item_batch_equals_its_contribution() {
        let model = init_model(&model_config(0.5)).unwrap();
        let other = init_model(&model_config(0.2)).unwrap();
        let refm = snapshot_reference(&other);
        let (_, batch) = batch_of(1, 4);
        let (loss, m) = cl_loss(&model, &refm, &batch, 0.1, Reduction::Sum).unwrap();
        let item = &batch.items[0];
        let en = neg_log_sigmoid(margin_of(&model, &refm, &item.en, 0.1));
        let tgt = neg_log_sigmoid(margin_of(&model, &refm, &item.tgt, 0.1));
        assert!((loss - (en + tgt)).abs() < 1e-12);
        assert_eq!(m.z_en.len(), 1);
    }

    fn margin_of(
        model: &PolicyModel,
        refm: &ReferenceSnapshot,
        pair: &PreferencePair,
        beta: f64,
    ) -> f64 {
        let pc = model.sequence_logprob(&pair.prompt, &pair.chosen).unwrap().logprob_sum;
        let pr = model.sequence_logprob(&pair.prompt, &pair.rejected).unwrap().logprob_sum;
        let rc = refm.sequence_logprob(&pair.prompt, &pair.chosen).unwrap().logprob_sum;
        let rr = refm.sequence_logprob(&pair.prompt, &pair.rejected).unwrap().logprob_sum;
        pair_margin(beta, pc, rc, pr, rr)
    }

    #[test]
    fn cl_decomposes_into_direction_restricted_dpo() {
        let model = init_model(&model_config(0.6)).unwrap();
        let other = init_model(&model_config(0.3)).unwrap();
        let refm = snapshot_reference(&other);
        for seed in 0..5u64 {
            let (_, batch) = batch_of(3, 40 + seed);
            let (cl, _) = cl_loss(&model, &refm, &batch, 0.1, Reduction::Sum).unwrap();
            let en_pairs: Vec<PreferencePair> =
                batch.items.iter().map(|i| i.en.clone()).collect();
            let tgt_pairs: Vec<PreferencePair> =
                batch.items.iter().map(|i| i.tgt.clone()).collect();
            let (den, _) = dpo_loss(&model, &refm, &en_pairs, 0.1, Reduction::Sum).unwrap();
            let (dtg, _) = dpo_loss(&model, &refm, &tgt_pairs, 0.1, Reduction::Sum).unwrap();
            assert!((cl - (den + dtg)).abs() < 1e-10, "{cl} vs {}", den + dtg);
        }
    }

    #[test]
    fn clo_endpoints_match_components() {
        let model = init_model(&model_config(0.6)).unwrap();
        let other = init_model(&model_config(0.2)).unwrap();
        let refm = snapshot_reference(&other);
        let (_, batch) = batch_of(3, 5);
        let mut cfg = ObjectiveConfig {
            lambda: 1.0,
            ..ObjectiveConfig::default()
        };
        let b = clo_loss(&model, &refm, &batch, &cfg).unwrap();
        let nll = nll_loss(&model, &batch, cfg.nll_mode, cfg.logprob_reduction).unwrap();
        assert!((b.l_clo - nll).abs() < 1e-12);

        cfg.lambda = 0.0;
        let b = clo_loss(&model, &refm, &batch, &cfg).unwrap();
        let (cl, _) = cl_loss(&model, &refm, &batch, cfg.beta, cfg.logprob_reduction).unwrap();
        assert!((b.l_clo - cl).abs() < 1e-12);
    }

    #[test]
    fn breakdown_is_internally_consistent() {
        let model = init_model(&model_config(0.6)).unwrap();
        let other = init_model(&model_config(0.2)).unwrap();
        let refm = snapshot_reference(&other);
        let (_, batch) = batch_of(4, 6);
        let cfg = ObjectiveConfig::default();
        let b = clo_loss(&model, &refm, &batch, &cfg).unwrap();
        let recombined = cfg.lambda * b.l_sft + (1.0 - cfg.lambda) * b.l_cl;
        assert!((b.l_clo - recombined).abs() < 1e-12);
        assert_eq!(b.batch_size, 4);
        assert!((0.0..=1.0).contains(&b.pref_acc_en));
        assert!((0.0..=1.0).contains(&b.pref_acc_tgt));
    }

    #[test]
    fn increasing_chosen_score_decreases_pair_loss() {
        // Direct perturbation of cached scores: the loss must fall
        // strictly as the policy's chosen log-probability rises.
        let (pc, rc, pr, rr) = (-3.0, -2.5, -4.0, -3.5);
        let base = neg_log_sigmoid(pair_margin(0.1, pc, rc, pr, rr));
        let mut prev = base;
        for step in 1..=8 {
            let bumped = neg_log_sigmoid(pair_margin(0.1, pc + 0.5 * step as f64, rc, pr, rr));
            assert!(bumped < prev);
            prev = bumped;
        }
    }

    #[test]
    fn default_knobs_are_the_shipped_ones() {
        let cfg = ObjectiveConfig::default();
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.beta, 0.1);
        assert_eq!(cfg.nll_mode, NllMode::TargetOnly);
        assert_eq!(cfg.logprob_reduction, Reduction::Sum);
    }

    #[test]
    fn invalid_lambda_is_rejected() {
        let model = init_model(&model_config(0.4)).unwrap();
        let refm = snapshot_reference(&model);
        let (_, batch) = batch_of(1, 1);
        let cfg = ObjectiveConfig {
            lambda: 1.5,
            ..ObjectiveConfig::default()
        };
        assert!(clo_loss(&model, &refm, &batch, &cfg).is_err());
    }

    #[test]
    fn mislabeled_batch_is_rejected() {
        let model = init_model(&model_config(0.4)).unwrap();
        let refm = snapshot_reference(&model);
        let (_, mut batch) = batch_of(1, 1);
        batch.items[0].tgt.prompt_lang = LanguageTag::LangA;
        let err = cl_loss(&model, &refm, &batch, 0.1, Reduction::Sum).unwrap_err();
        assert!(matches!(err, Error::Pairing(_)), "got {err:?}");
    }

    proptest! {
        #[test]
        fn pair_loss_is_finite_for_large_margins(z in -1e4f64..1e4f64) {
            let loss = neg_log_sigmoid(z);
            prop_assert!(loss.is_finite());
            prop_assert!(loss >= 0.0);
        }
    }
}
