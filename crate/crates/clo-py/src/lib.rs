//! Python bindings for the core types and operations: vocabulary and
//! corpus construction, the translation oracle, sequence scoring, the
//! training objectives, transfer training, and generation.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use clo_core::dataprep::{build_splits, make_batches};
use clo_core::error::Error;
use clo_core::eval as core_eval;
use clo_core::nnet;
use clo_core::objectives;
use clo_core::synthlang;
use clo_core::trainer;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Config(_) => PyValueError::new_err(err.to_string()),
        Error::Io(_) => PyIOError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn parse_lang(tag: &str) -> PyResult<synthlang::LanguageTag> {
    match tag {
        "a" | "lang_a" => Ok(synthlang::LanguageTag::LangA),
        "b" | "lang_b" => Ok(synthlang::LanguageTag::LangB),
        other => Err(PyValueError::new_err(format!(
            "unknown language tag {other:?} (expected 'a' or 'b')"
        ))),
    }
}

fn parse_nll_mode(mode: &str) -> PyResult<objectives::NllMode> {
    match mode {
        "target-only" => Ok(objectives::NllMode::TargetOnly),
        "both" => Ok(objectives::NllMode::TargetAndEnglish),
        other => Err(PyValueError::new_err(format!(
            "unknown nll mode {other:?} (expected 'target-only' or 'both')"
        ))),
    }
}

fn parse_method(method: &str) -> PyResult<trainer::Method> {
    match method {
        "sft" => Ok(trainer::Method::Sft),
        "sft-dpo" => Ok(trainer::Method::SftDpo),
        "clo" => Ok(trainer::Method::Clo),
        other => Err(PyValueError::new_err(format!(
            "unknown method {other:?} (expected 'sft', 'sft-dpo', or 'clo')"
        ))),
    }
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Vocabulary {
    inner: synthlang::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    #[getter]
    fn total_size(&self) -> u32 {
        self.inner.total_size
    }

    #[getter]
    fn offset(&self) -> u32 {
        self.inner.offset
    }

    /// Half-open token-id range of a language.
    fn range(&self, lang: &str) -> PyResult<(u32, u32)> {
        let r = self.inner.range(parse_lang(lang)?);
        Ok((r.start, r.end))
    }

    fn __repr__(&self) -> String {
        format!(
            "Vocabulary(total_size={}, lang_a={:?}, lang_b={:?})",
            self.inner.total_size,
            self.inner.range(synthlang::LanguageTag::LangA),
            self.inner.range(synthlang::LanguageTag::LangB),
        )
    }
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct CrossLingualExample {
    #[pyo3(get)]
    id: u64,
    #[pyo3(get)]
    x_en: Vec<u32>,
    #[pyo3(get)]
    y_en: Vec<u32>,
    #[pyo3(get)]
    x_tgt: Vec<u32>,
    #[pyo3(get)]
    y_tgt: Vec<u32>,
}

impl CrossLingualExample {
    fn to_core(&self) -> clo_core::dataprep::CrossLingualExample {
        clo_core::dataprep::CrossLingualExample {
            id: self.id,
            x_en: self.x_en.clone(),
            y_en: self.y_en.clone(),
            x_tgt: self.x_tgt.clone(),
            y_tgt: self.y_tgt.clone(),
        }
    }

    fn from_core(ex: clo_core::dataprep::CrossLingualExample) -> Self {
        CrossLingualExample {
            id: ex.id,
            x_en: ex.x_en,
            y_en: ex.y_en,
            x_tgt: ex.x_tgt,
            y_tgt: ex.y_tgt,
        }
    }
}

#[pyclass]
struct PolicyModel {
    inner: nnet::PolicyModel,
}

#[pyclass(frozen)]
struct ReferenceSnapshot {
    inner: nnet::ReferenceSnapshot,
}

#[pymethods]
impl ReferenceSnapshot {
    fn sequence_logprob(&self, prompt: Vec<u32>, response: Vec<u32>) -> PyResult<f64> {
        Ok(self
            .inner
            .sequence_logprob(&prompt, &response)
            .map_err(to_py)?
            .logprob_sum)
    }
}

#[pymethods]
impl PolicyModel {
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    /// Natural-log probability of the response given the prompt, summed
    /// over response tokens.
    fn sequence_logprob(&self, prompt: Vec<u32>, response: Vec<u32>) -> PyResult<f64> {
        Ok(self
            .inner
            .sequence_logprob(&prompt, &response)
            .map_err(to_py)?
            .logprob_sum)
    }

    /// Greedy (default) or nucleus-sampled continuation of the prompt,
    /// stopping before EOS.
    #[pyo3(signature = (prompt, max_new, top_p=None, temperature=None, seed=0))]
    fn generate(
        &self,
        prompt: Vec<u32>,
        max_new: usize,
        top_p: Option<f64>,
        temperature: Option<f64>,
        seed: u64,
    ) -> PyResult<Vec<u32>> {
        let decode = match (top_p, temperature) {
            (None, None) => nnet::Decode::Greedy,
            (p, t) => nnet::Decode::TopP {
                p: p.unwrap_or(0.9),
                temperature: t.unwrap_or(0.6),
                seed,
            },
        };
        nnet::generate(&self.inner, &prompt, decode, max_new).map_err(to_py)
    }

    fn snapshot(&self) -> ReferenceSnapshot {
        ReferenceSnapshot {
            inner: nnet::snapshot_reference(&self.inner),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nnet::save_checkpoint(&path, &self.inner).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PolicyModel> {
        Ok(PolicyModel {
            inner: nnet::load_checkpoint(&path).map_err(to_py)?,
        })
    }
}

#[pyfunction]
fn build_vocabulary(total_size: u32, lang_fraction: f64) -> PyResult<Vocabulary> {
    Ok(Vocabulary {
        inner: synthlang::build_vocabulary(total_size, lang_fraction).map_err(to_py)?,
    })
}

#[pyfunction]
fn translate(seq: Vec<u32>, source: &str, vocab: &Vocabulary) -> PyResult<Vec<u32>> {
    synthlang::translate(&seq, parse_lang(source)?, &vocab.inner).map_err(to_py)
}

#[pyfunction]
fn detect_language(seq: Vec<u32>, vocab: &Vocabulary) -> PyResult<(String, f64)> {
    let (tag, purity) = synthlang::detect_language(&seq, &vocab.inner).map_err(to_py)?;
    Ok((tag.to_string(), purity))
}

#[pyfunction]
#[pyo3(signature = (n, seed, vocab, len_lo=3, len_hi=5))]
fn gen_corpus(
    n: usize,
    seed: u64,
    vocab: &Vocabulary,
    len_lo: usize,
    len_hi: usize,
) -> PyResult<Vec<CrossLingualExample>> {
    let corpus = synthlang::gen_corpus(
        n,
        seed,
        &synthlang::TaskMix::default(),
        (len_lo, len_hi),
        &vocab.inner,
    )
    .map_err(to_py)?;
    Ok(corpus.into_iter().map(CrossLingualExample::from_core).collect())
}

#[pyfunction]
#[pyo3(signature = (vocab_size, d_model, n_layers, n_heads, max_seq_len, init_seed=0, init_scale=0.08))]
#[allow(clippy::too_many_arguments)]
fn init_model(
    vocab_size: usize,
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    max_seq_len: usize,
    init_seed: u64,
    init_scale: f64,
) -> PyResult<PolicyModel> {
    let config = nnet::ModelConfig {
        vocab_size,
        d_model,
        n_layers,
        n_heads,
        max_seq_len,
        init_seed,
        init_scale,
    };
    Ok(PolicyModel {
        inner: nnet::init_model(&config).map_err(to_py)?,
    })
}

/// Combined-objective breakdown of one batch, as a dict.
#[pyfunction]
#[pyo3(signature = (model, reference, examples, vocab, lambda_=0.5, beta=0.1, nll_mode="target-only"))]
#[allow(clippy::too_many_arguments)]
fn clo_loss(
    model: &PolicyModel,
    reference: &ReferenceSnapshot,
    examples: Vec<CrossLingualExample>,
    vocab: &Vocabulary,
    lambda_: f64,
    beta: f64,
    nll_mode: &str,
) -> PyResult<HashMap<&'static str, f64>> {
    let core: Vec<_> = examples.iter().map(CrossLingualExample::to_core).collect();
    let batches = make_batches(&core, core.len().max(1), 0, &vocab.inner).map_err(to_py)?;
    let batch = batches
        .into_iter()
        .next()
        .ok_or_else(|| PyValueError::new_err("examples must be non-empty"))?;
    let config = objectives::ObjectiveConfig {
        lambda: lambda_,
        beta,
        nll_mode: parse_nll_mode(nll_mode)?,
        logprob_reduction: objectives::Reduction::Sum,
    };
    let b = objectives::clo_loss(&model.inner, &reference.inner, &batch, &config).map_err(to_py)?;
    Ok(HashMap::from([
        ("l_sft", b.l_sft),
        ("l_cl", b.l_cl),
        ("l_clo", b.l_clo),
        ("mean_z_en", b.mean_z_en),
        ("mean_z_tgt", b.mean_z_tgt),
        ("pref_acc_en", b.pref_acc_en),
        ("pref_acc_tgt", b.pref_acc_tgt),
        ("batch_size", b.batch_size as f64),
    ]))
}

/// Pretrains a fresh source-language base model.
#[pyfunction]
#[pyo3(signature = (vocab, d_model, n_layers, n_heads, max_seq_len, steps, batch_size=16, lr=1e-2, min_lr=1e-3, seed=0, len_lo=3, len_hi=5))]
#[allow(clippy::too_many_arguments)]
fn pretrain(
    vocab: &Vocabulary,
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    max_seq_len: usize,
    steps: usize,
    batch_size: usize,
    lr: f64,
    min_lr: f64,
    seed: u64,
    len_lo: usize,
    len_hi: usize,
) -> PyResult<PolicyModel> {
    let model_config = nnet::ModelConfig {
        vocab_size: vocab.inner.total_size as usize,
        d_model,
        n_layers,
        n_heads,
        max_seq_len,
        init_seed: seed,
        init_scale: 0.08,
    };
    let corpus = trainer::PretrainCorpus {
        task_mix: synthlang::TaskMix::default(),
        len_range: (len_lo, len_hi),
    };
    let config = trainer::PretrainConfig {
        steps,
        batch_size,
        lr,
        min_lr,
        seed,
    };
    let (model, _) =
        trainer::pretrain_base(&model_config, &vocab.inner, &corpus, &config).map_err(to_py)?;
    Ok(PolicyModel { inner: model })
}

/// Transfer-trains a base model on cross-lingual examples and returns the
/// best-validation checkpoint.
#[pyfunction]
#[pyo3(signature = (base, examples, vocab, method="clo", epochs=10, batch_size=8, lr=3e-3, min_lr=3e-4, lambda_=0.5, beta=0.1, nll_mode="target-only", attention_only=false, val_fraction=0.1, seed=0, max_seq_len=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    base: &PolicyModel,
    examples: Vec<CrossLingualExample>,
    vocab: &Vocabulary,
    method: &str,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    min_lr: f64,
    lambda_: f64,
    beta: f64,
    nll_mode: &str,
    attention_only: bool,
    val_fraction: f64,
    seed: u64,
    max_seq_len: Option<usize>,
) -> PyResult<PolicyModel> {
    let core: Vec<_> = examples.iter().map(CrossLingualExample::to_core).collect();
    let splits = build_splits(core, val_fraction, seed).map_err(to_py)?;
    let config = trainer::TrainConfig {
        method: parse_method(method)?,
        objective: objectives::ObjectiveConfig {
            lambda: lambda_,
            beta,
            nll_mode: parse_nll_mode(nll_mode)?,
            logprob_reduction: objectives::Reduction::Sum,
        },
        update_mask: if attention_only {
            trainer::UpdateMask::AttentionOnly
        } else {
            trainer::UpdateMask::Full
        },
        lr,
        min_lr,
        epochs,
        batch_size,
        seed,
        max_seq_len: max_seq_len.unwrap_or(base.inner.config().max_seq_len),
    };
    let (model, _) = trainer::train(&base.inner, &splits, &vocab.inner, &config).map_err(to_py)?;
    Ok(PolicyModel { inner: model })
}

/// Mean purity of greedy continuations in the prompts' language.
#[pyfunction]
#[pyo3(signature = (model, prompts, lang, vocab, max_new=10))]
fn language_consistency(
    model: &PolicyModel,
    prompts: Vec<Vec<u32>>,
    lang: &str,
    vocab: &Vocabulary,
    max_new: usize,
) -> PyResult<f64> {
    core_eval::language_consistency(
        &model.inner,
        &prompts,
        parse_lang(lang)?,
        nnet::Decode::Greedy,
        max_new,
        &vocab.inner,
    )
    .map_err(to_py)
}

#[pymodule]
fn clo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<CrossLingualExample>()?;
    m.add_class::<PolicyModel>()?;
    m.add_class::<ReferenceSnapshot>()?;
    m.add_function(wrap_pyfunction!(build_vocabulary, m)?)?;
    m.add_function(wrap_pyfunction!(translate, m)?)?;
    m.add_function(wrap_pyfunction!(detect_language, m)?)?;
    m.add_function(wrap_pyfunction!(gen_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(init_model, m)?)?;
    m.add_function(wrap_pyfunction!(clo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(language_consistency, m)?)?;
    Ok(())
}
