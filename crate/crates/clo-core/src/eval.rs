//! Evaluation protocols at desk scale: language consistency of generated
//! output, log-likelihood multiple choice, generation exact match, a
//! deterministic pairwise win-rate judge, and the data-size sweep harness.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::{build_splits, CrossLingualExample};
use crate::error::{Error, Result};
use crate::nnet::{generate, Decode, PolicyModel};
use crate::synthlang::{
    sample_task_from_mix, tokens, LanguageTag, TaskInstance, TaskMix, Vocabulary,
};
use crate::objectives::NllMode;
use crate::trainer::{train, Method, TrainConfig, UpdateMask};
use crate::util::{derive_seed, derive_seed_indexed};

/// Fraction of non-special tokens of `seq` lying in `lang`'s range; `None`
/// when there are no non-special tokens to count.
pub fn fraction_in_language(seq: &[u32], lang: LanguageTag, vocab: &Vocabulary) -> Option<f64> {
    let mut non_special = 0usize;
    let mut in_lang = 0usize;
    for &t in seq {
        if tokens::is_special(t) {
            continue;
        }
        non_special += 1;
        if vocab.range(lang).contains(&t) {
            in_lang += 1;
        }
    }
    if non_special == 0 {
        None
    } else {
        Some(in_lang as f64 / non_special as f64)
    }
}

/// Mean over prompts of the generated response's purity in `lang`. Empty
/// or special-only generations count as purity zero.
pub fn language_consistency(
    model: &PolicyModel,
    prompts: &[Vec<u32>],
    lang: LanguageTag,
    decode: Decode,
    max_new: usize,
    vocab: &Vocabulary,
) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::Config("prompt set must be non-empty".into()));
    }
    let mut total = 0.0;
    for prompt in prompts {
        let out = generate(model, prompt, decode, max_new)?;
        total += fraction_in_language(&out, lang, vocab).unwrap_or(0.0);
    }
    Ok(total / prompts.len() as f64)
}

/// Teacher-forced argmax accuracy over response tokens (terminator
/// included, matching how responses are scored in training).
pub fn token_accuracy(model: &PolicyModel, tasks: &[TaskInstance]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Config("task set must be non-empty".into()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for task in tasks {
        let mut gold = task.response.clone();
        gold.push(tokens::EOS);
        let preds = model.response_predictions(&task.prompt, &gold)?;
        for (p, g) in preds.iter().zip(&gold) {
            total += 1;
            if p == g {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// A four-option multiple-choice item. Options are token sequences of equal
/// length within the item, so summed log-likelihoods compare without a
/// length correction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCItem {
    pub passage: Vec<u32>,
    pub question: Vec<u32>,
    pub options: [Vec<u32>; 4],
    pub answer_index: usize,
    pub lang: LanguageTag,
}

/// Argmax over the four option scores, ties broken toward the lowest index.
pub fn mc_choice(scores: &[f64; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

/// Log-likelihood of each option given passage ++ question.
pub fn mc_scores(model: &PolicyModel, item: &MCItem) -> Result<[f64; 4]> {
    let mut prompt = item.passage.clone();
    prompt.extend_from_slice(&item.question);
    let mut scores = [0.0; 4];
    for (i, option) in item.options.iter().enumerate() {
        scores[i] = model.sequence_logprob(&prompt, option)?.logprob_sum;
    }
    Ok(scores)
}

/// Fraction of items whose highest-likelihood option is the labeled answer.
pub fn mc_loglik_eval(model: &PolicyModel, items: &[MCItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Config("item set must be non-empty".into()));
    }
    let mut correct = 0usize;
    for item in items {
        let scores = mc_scores(model, item)?;
        if mc_choice(&scores) == item.answer_index {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Synthetic multiple-choice items: random passage/question in `lang`, four
/// distinct equal-length options, answer position uniform.
pub fn gen_mc_items(
    n: usize,
    seed: u64,
    lang: LanguageTag,
    vocab: &Vocabulary,
    passage_len: usize,
    option_len: usize,
) -> Vec<MCItem> {
    let range = vocab.range(lang);
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, "mc-item", i as u64));
        let passage: Vec<u32> = (0..passage_len)
            .map(|_| rng.random_range(range.clone()))
            .collect();
        let question: Vec<u32> = (0..2).map(|_| rng.random_range(range.clone())).collect();
        let mut options: Vec<Vec<u32>> = Vec::with_capacity(4);
        while options.len() < 4 {
            let cand: Vec<u32> = (0..option_len)
                .map(|_| rng.random_range(range.clone()))
                .collect();
            if !options.contains(&cand) {
                options.push(cand);
            }
        }
        let answer_index = rng.random_range(0..4usize);
        items.push(MCItem {
            passage,
            question,
            options: [
                options[0].clone(),
                options[1].clone(),
                options[2].clone(),
                options[3].clone(),
            ],
            answer_index,
            lang,
        });
    }
    items
}

/// Multiple-choice items whose correct option is the task's gold response;
/// distractors are random same-length sequences in the same language.
pub fn mc_items_from_tasks(tasks: &[TaskInstance], seed: u64, vocab: &Vocabulary) -> Vec<MCItem> {
    let mut items = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(seed, "mc-task", i as u64));
        let range = vocab.range(task.lang);
        let mut options = vec![task.response.clone()];
        while options.len() < 4 {
            let cand: Vec<u32> = (0..task.response.len())
                .map(|_| rng.random_range(range.clone()))
                .collect();
            if !options.contains(&cand) {
                options.push(cand);
            }
        }
        let answer_index = rng.random_range(0..4usize);
        options.swap(0, answer_index);
        items.push(MCItem {
            passage: task.prompt.clone(),
            question: Vec::new(),
            options: [
                options[0].clone(),
                options[1].clone(),
                options[2].clone(),
                options[3].clone(),
            ],
            answer_index,
            lang: task.lang,
        });
    }
    items
}

/// Fraction of tasks whose generated continuation equals the gold response
/// exactly (generation already stops before EOS).
pub fn generative_exact_match(
    model: &PolicyModel,
    tasks: &[TaskInstance],
    decode: Decode,
    max_new: usize,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Config("task set must be non-empty".into()));
    }
    let mut hits = 0usize;
    for task in tasks {
        let out = generate(model, &task.prompt, decode, max_new)?;
        if out == task.response {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}

/// Weights of the deterministic pairwise judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeConfig {
    pub w_lang: f64,
    pub w_acc: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            w_lang: 0.5,
            w_acc: 0.5,
        }
    }
}

impl JudgeConfig {
    pub fn id(&self) -> String {
        format!("proxy(w_lang={},w_acc={})", self.w_lang, self.w_acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// wins / (wins + losses); 0.5 when every comparison tied.
    pub win_rate: f64,
    pub judge_id: String,
}

/// Positional token accuracy against the gold response, penalizing length
/// mismatch; two empty sequences count as a perfect match.
fn token_accuracy_vs_gold(generated: &[u32], gold: &[u32]) -> f64 {
    if generated.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let matches = generated
        .iter()
        .zip(gold)
        .filter(|(a, b)| a == b)
        .count();
    matches as f64 / generated.len().max(gold.len()) as f64
}

fn judge_score(
    generated: &[u32],
    task: &TaskInstance,
    judge: &JudgeConfig,
    vocab: &Vocabulary,
) -> f64 {
    let purity = fraction_in_language(generated, task.lang, vocab).unwrap_or(0.0);
    judge.w_lang * purity + judge.w_acc * token_accuracy_vs_gold(generated, &task.response)
}

/// Pairwise comparison of two models on the same tasks with the
/// deterministic judge: higher combined purity/accuracy score wins.
pub fn winrate_proxy(
    model_a: &PolicyModel,
    model_b: &PolicyModel,
    tasks: &[TaskInstance],
    judge: &JudgeConfig,
    decode: Decode,
    max_new: usize,
    vocab: &Vocabulary,
) -> Result<WinRateReport> {
    if tasks.is_empty() {
        return Err(Error::Config("task set must be non-empty".into()));
    }
    let mut wins = 0usize;
    let mut losses = 0usize;
    let mut ties = 0usize;
    for task in tasks {
        let out_a = generate(model_a, &task.prompt, decode, max_new)?;
        let out_b = generate(model_b, &task.prompt, decode, max_new)?;
        let sa = judge_score(&out_a, task, judge, vocab);
        let sb = judge_score(&out_b, task, judge, vocab);
        if sa > sb {
            wins += 1;
        } else if sb > sa {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let decisive = wins + losses;
    let win_rate = if decisive == 0 {
        0.5
    } else {
        wins as f64 / decisive as f64
    };
    Ok(WinRateReport {
        wins,
        losses,
        ties,
        win_rate,
        judge_id: judge.id(),
    })
}

/// Per-language metrics of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangReport {
    pub consistency_rate: f64,
    pub exact_match: f64,
    pub mean_nll: f64,
}

/// Aggregate report over held-out data in both languages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lang_a: LangReport,
    pub lang_b: LangReport,
    /// Multiple-choice accuracy on target-language items.
    pub mc_accuracy: f64,
    pub n_items: usize,
    pub seed: u64,
    pub model_id: String,
}

/// What and how much to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_prompts: usize,
    pub n_tasks: usize,
    pub n_mc_items: usize,
    pub max_new: usize,
    pub len_range: (usize, usize),
    pub task_mix: TaskMix,
    pub seed: u64,
}

fn heldout_tasks(
    lang: LanguageTag,
    n: usize,
    cfg: &EvalConfig,
    vocab: &Vocabulary,
    label: &str,
) -> Result<Vec<TaskInstance>> {
    (0..n)
        .map(|i| {
            let seed = derive_seed_indexed(cfg.seed, label, i as u64);
            sample_task_from_mix(seed, lang, &cfg.task_mix, cfg.len_range, vocab)
        })
        .collect()
}

fn lang_report(
    model: &PolicyModel,
    lang: LanguageTag,
    cfg: &EvalConfig,
    vocab: &Vocabulary,
) -> Result<LangReport> {
    let label = match lang {
        LanguageTag::LangA => "eval-a",
        LanguageTag::LangB => "eval-b",
    };
    let tasks = heldout_tasks(lang, cfg.n_tasks, cfg, vocab, label)?;
    let prompts: Vec<Vec<u32>> = heldout_tasks(lang, cfg.n_prompts, cfg, vocab, label)?
        .into_iter()
        .map(|t| t.prompt)
        .collect();
    let consistency =
        language_consistency(model, &prompts, lang, Decode::Greedy, cfg.max_new, vocab)?;
    let exact = generative_exact_match(model, &tasks, Decode::Greedy, cfg.max_new)?;
    let mut nll_sum = 0.0;
    for task in &tasks {
        let mut gold = task.response.clone();
        gold.push(tokens::EOS);
        nll_sum -= model.sequence_logprob(&task.prompt, &gold)?.logprob_sum;
    }
    Ok(LangReport {
        consistency_rate: consistency,
        exact_match: exact,
        mean_nll: nll_sum / tasks.len() as f64,
    })
}

/// Runs the full held-out evaluation of one checkpoint. Multiple-choice
/// items pit the gold continuation of a held-out target-language task
/// against random same-length distractors.
pub fn evaluate(
    model: &PolicyModel,
    vocab: &Vocabulary,
    cfg: &EvalConfig,
    model_id: &str,
) -> Result<EvalReport> {
    let lang_a = lang_report(model, LanguageTag::LangA, cfg, vocab)?;
    let lang_b = lang_report(model, LanguageTag::LangB, cfg, vocab)?;
    let mc_tasks = heldout_tasks(LanguageTag::LangB, cfg.n_mc_items, cfg, vocab, "eval-mc")?;
    let items = mc_items_from_tasks(&mc_tasks, derive_seed(cfg.seed, "eval-mc"), vocab);
    let mc_accuracy = mc_loglik_eval(model, &items)?;
    Ok(EvalReport {
        lang_a,
        lang_b,
        mc_accuracy,
        n_items: cfg.n_tasks + cfg.n_prompts + cfg.n_mc_items,
        seed: cfg.seed,
        model_id: model_id.to_string(),
    })
}

/// One sweep cell: a method trained at a corpus size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub method: Method,
    pub report: EvalReport,
}

/// Trains SFT and the combined objective from the same base at each corpus
/// size (sizes are prefixes of the corpus) and evaluates every checkpoint.
pub fn data_size_sweep(
    base: &PolicyModel,
    corpus: &[CrossLingualExample],
    sizes: &[usize],
    train_config: &TrainConfig,
    val_fraction: f64,
    eval_config: &EvalConfig,
    vocab: &Vocabulary,
) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() {
        return Err(Error::Config("sweep needs at least one size".into()));
    }
    for pair in sizes.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(format!(
                "sweep sizes must be strictly ascending, got {} after {}",
                pair[1], pair[0]
            )));
        }
    }
    if *sizes.last().unwrap() > corpus.len() {
        return Err(Error::Config(format!(
            "sweep size {} exceeds corpus size {}",
            sizes.last().unwrap(),
            corpus.len()
        )));
    }
    let mut rows = Vec::new();
    for &size in sizes {
        let subset = corpus[..size].to_vec();
        let splits = build_splits(subset, val_fraction, derive_seed(train_config.seed, "split"))?;
        for method in [Method::Sft, Method::Clo] {
            let mut cfg = train_config.clone();
            cfg.method = method;
            if method == Method::Sft {
                // The plain fine-tuning baseline trains on both languages
                // with all parameters.
                cfg.objective.nll_mode = NllMode::TargetAndEnglish;
                cfg.update_mask = UpdateMask::Full;
            }
            let (model, _) = train(base, &splits, vocab, &cfg)?;
            let report = evaluate(
                &model,
                vocab,
                eval_config,
                &format!("sweep-{method:?}-{size}").to_lowercase(),
            )?;
            rows.push(SweepRow {
                size,
                method,
                report,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{init_model, ModelConfig};
    use crate::synthlang::build_vocabulary;

    fn vocab() -> Vocabulary {
        build_vocabulary(24, 0.5).unwrap()
    }

    fn uniform_model(vocab_size: usize) -> PolicyModel {
        init_model(&ModelConfig {
            vocab_size,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 24,
            init_seed: 2,
            init_scale: 0.0,
        })
        .unwrap()
    }

    /// Zero-layer model rigged to always emit one fixed token.
    fn constant_token_model(vocab_size: usize, token: u32) -> PolicyModel {
        let mut m = init_model(&ModelConfig {
            vocab_size,
            d_model: 4,
            n_layers: 0,
            n_heads: 1,
            max_seq_len: 24,
            init_seed: 0,
            init_scale: 0.0,
        })
        .unwrap();
        for v in m.param_mut("embed.tok").unwrap() {
            *v = 1.0;
        }
        let head = m.param_mut("head").unwrap();
        for i in 0..4 {
            head[token as usize * 4 + i] = 8.0;
        }
        m
    }

    #[test]
    fn consistency_is_one_for_in_language_emitter() {
        let v = vocab();
        let b_token = v.range(LanguageTag::LangB).start;
        let model = constant_token_model(24, b_token);
        let prompts = vec![vec![b_token, b_token + 1], vec![b_token + 2]];
        let c = language_consistency(&model, &prompts, LanguageTag::LangB, Decode::Greedy, 6, &v)
            .unwrap();
        assert_eq!(c, 1.0);
        // Mirrored measurement against the other range.
        let c_a =
            language_consistency(&model, &prompts, LanguageTag::LangA, Decode::Greedy, 6, &v)
                .unwrap();
        assert_eq!(c_a, 0.0);
    }

    #[test]
    fn consistency_counts_empty_generation_as_zero() {
        let v = vocab();
        let model = constant_token_model(24, tokens::EOS);
        let prompts = vec![vec![v.range(LanguageTag::LangB).start]];
        let c = language_consistency(&model, &prompts, LanguageTag::LangB, Decode::Greedy, 6, &v)
            .unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn mc_choice_prefers_highest_and_breaks_ties_low() {
        assert_eq!(mc_choice(&[-1.0, -0.5, -2.0, -0.9]), 1);
        assert_eq!(mc_choice(&[-1.0, -1.0, -1.0, -1.0]), 0);
        assert_eq!(mc_choice(&[-3.0, -1.0, -1.0, -2.0]), 1);
    }

    #[test]
    fn uniform_model_mc_accuracy_matches_answer_zero_rate() {
        // Equal-length options under a uniform model tie exactly, so the
        // chosen option is always index 0.
        let v = vocab();
        let model = uniform_model(24);
        let items = gen_mc_items(200, 9, LanguageTag::LangB, &v, 3, 3);
        let zero_rate = items.iter().filter(|i| i.answer_index == 0).count() as f64 / 200.0;
        let acc = mc_loglik_eval(&model, &items).unwrap();
        assert_eq!(acc, zero_rate);
        assert!((acc - 0.25).abs() < 0.1, "answer positions look skewed: {acc}");
    }

    #[test]
    fn mc_scores_are_shift_invariant_in_argmax() {
        let v = vocab();
        let model = init_model(&ModelConfig {
            vocab_size: 24,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 24,
            init_seed: 4,
            init_scale: 0.4,
        })
        .unwrap();
        for item in gen_mc_items(20, 3, LanguageTag::LangA, &v, 3, 4) {
            let scores = mc_scores(&model, &item).unwrap();
            let pick = mc_choice(&scores);
            for shift in [-7.5, -1.0, 3.25, 100.0] {
                let shifted = [
                    scores[0] + shift,
                    scores[1] + shift,
                    scores[2] + shift,
                    scores[3] + shift,
                ];
                assert_eq!(mc_choice(&shifted), pick);
            }
        }
    }

    #[test]
    fn exact_match_requires_exact_sequence() {
        let v = vocab();
        let a = v.range(LanguageTag::LangA).start;
        // A model that emits nothing never matches a non-empty gold.
        let eos_model = constant_token_model(24, tokens::EOS);
        let tasks = vec![TaskInstance {
            prompt: vec![a, a + 1],
            response: vec![a, a + 1],
            lang: LanguageTag::LangA,
            task_kind: crate::synthlang::TaskKind::Echo,
        }];
        let em = generative_exact_match(&eos_model, &tasks, Decode::Greedy, 8).unwrap();
        assert_eq!(em, 0.0);
    }

    #[test]
    fn winrate_self_comparison_is_all_ties() {
        let v = vocab();
        let model = uniform_model(24);
        let tasks: Vec<TaskInstance> = (0..4)
            .map(|i| {
                sample_task_from_mix(i, LanguageTag::LangB, &TaskMix::default(), (2, 3), &v)
                    .unwrap()
            })
            .collect();
        let report = winrate_proxy(
            &model,
            &model,
            &tasks,
            &JudgeConfig::default(),
            Decode::Greedy,
            6,
            &v,
        )
        .unwrap();
        assert_eq!(report.ties, 4);
        assert_eq!(report.wins + report.losses, 0);
        assert_eq!(report.win_rate, 0.5);
    }

    #[test]
    fn winrate_right_language_dominates() {
        let v = vocab();
        let in_lang = constant_token_model(24, v.range(LanguageTag::LangB).start + 1);
        let out_lang = constant_token_model(24, v.range(LanguageTag::LangA).start + 1);
        let tasks: Vec<TaskInstance> = (0..5)
            .map(|i| {
                sample_task_from_mix(i, LanguageTag::LangB, &TaskMix::default(), (2, 3), &v)
                    .unwrap()
            })
            .collect();
        let report = winrate_proxy(
            &in_lang,
            &out_lang,
            &tasks,
            &JudgeConfig::default(),
            Decode::Greedy,
            4,
            &v,
        )
        .unwrap();
        assert_eq!(report.wins, 5);
        assert_eq!(report.losses, 0);
        // Swapping the models swaps the outcome exactly.
        let swapped = winrate_proxy(
            &out_lang,
            &in_lang,
            &tasks,
            &JudgeConfig::default(),
            Decode::Greedy,
            4,
            &v,
        )
        .unwrap();
        assert_eq!(swapped.losses, 5);
        assert_eq!(swapped.wins, 0);
        assert_eq!(report.ties, swapped.ties);
    }

    #[test]
    fn accuracy_only_judge_ignores_language() {
        let v = vocab();
        // Both emit wrong-language constants relative to the task, so with
        // w_lang = 0 everything reduces to (equal) token accuracy: ties.
        let m1 = constant_token_model(24, v.range(LanguageTag::LangA).start);
        let m2 = constant_token_model(24, v.range(LanguageTag::LangA).start + 1);
        let tasks: Vec<TaskInstance> = (0..3)
            .map(|i| {
                sample_task_from_mix(100 + i, LanguageTag::LangB, &TaskMix::default(), (2, 2), &v)
                    .unwrap()
            })
            .collect();
        let judge = JudgeConfig {
            w_lang: 0.0,
            w_acc: 1.0,
        };
        let report =
            winrate_proxy(&m1, &m2, &tasks, &judge, Decode::Greedy, 3, &v).unwrap();
        assert_eq!(report.ties, 3);
    }

    #[test]
    fn evaluate_produces_rates_in_range() {
        let v = vocab();
        let model = uniform_model(24);
        let cfg = EvalConfig {
            n_prompts: 4,
            n_tasks: 4,
            n_mc_items: 8,
            max_new: 6,
            len_range: (2, 3),
            task_mix: TaskMix::default(),
            seed: 77,
        };
        let report = evaluate(&model, &v, &cfg, "test-model").unwrap();
        for r in [&report.lang_a, &report.lang_b] {
            assert!((0.0..=1.0).contains(&r.consistency_rate));
            assert!((0.0..=1.0).contains(&r.exact_match));
            assert!(r.mean_nll >= 0.0);
        }
        assert!((0.0..=1.0).contains(&report.mc_accuracy));
        assert!(report.n_items > 0);
        // Deterministic.
        let again = evaluate(&model, &v, &cfg, "test-model").unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn purities_against_the_two_ranges_are_complementary() {
        // With a half/half vocabulary every non-special token sits in
        // exactly one range, so the two purities sum to one.
        use proptest::prelude::*;
        let v = vocab();
        let all_ids: Vec<u32> = (v.range(LanguageTag::LangA).start..v.range(LanguageTag::LangB).end)
            .collect();
        proptest!(|(indices in proptest::collection::vec(0..all_ids.len(), 1..24))| {
            let seq: Vec<u32> = indices.iter().map(|&i| all_ids[i]).collect();
            let a = fraction_in_language(&seq, LanguageTag::LangA, &v).unwrap();
            let b = fraction_in_language(&seq, LanguageTag::LangB, &v).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-15);
        });
    }

    #[test]
    fn single_size_sweep_equals_one_train_eval_run() {
        let v = vocab();
        let base = uniform_model(24);
        let corpus =
            crate::synthlang::gen_corpus(12, 2, &TaskMix::default(), (2, 3), &v).unwrap();
        let eval_cfg = EvalConfig {
            n_prompts: 2,
            n_tasks: 2,
            n_mc_items: 4,
            max_new: 4,
            len_range: (2, 3),
            task_mix: TaskMix::default(),
            seed: 5,
        };
        let train_cfg = TrainConfig {
            method: Method::Clo,
            epochs: 1,
            batch_size: 4,
            lr: 1e-3,
            min_lr: 1e-4,
            max_seq_len: 24,
            ..TrainConfig::default()
        };
        let rows =
            data_size_sweep(&base, &corpus, &[12], &train_cfg, 0.25, &eval_cfg, &v).unwrap();
        assert_eq!(rows.len(), 2);

        let splits = build_splits(
            corpus[..12].to_vec(),
            0.25,
            derive_seed(train_cfg.seed, "split"),
        )
        .unwrap();
        let (model, _) = train(&base, &splits, &v, &train_cfg).unwrap();
        let direct = evaluate(&model, &v, &eval_cfg, "sweep-clo-12").unwrap();
        let clo_row = rows.iter().find(|r| r.method == Method::Clo).unwrap();
        assert_eq!(clo_row.report, direct);
    }

    #[test]
    fn sweep_rejects_bad_sizes() {
        let v = vocab();
        let model = uniform_model(24);
        let corpus =
            crate::synthlang::gen_corpus(8, 1, &TaskMix::default(), (2, 3), &v).unwrap();
        let eval_cfg = EvalConfig {
            n_prompts: 2,
            n_tasks: 2,
            n_mc_items: 4,
            max_new: 4,
            len_range: (2, 3),
            task_mix: TaskMix::default(),
            seed: 5,
        };
        let train_cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            lr: 1e-3,
            min_lr: 1e-4,
            max_seq_len: 24,
            ..TrainConfig::default()
        };
        let err = data_size_sweep(&model, &corpus, &[4, 16], &train_cfg, 0.25, &eval_cfg, &v)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = data_size_sweep(&model, &corpus, &[4, 4], &train_cfg, 0.25, &eval_cfg, &v)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
