//! Greedy and nucleus-sampled decoding.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::synthlang::tokens;

use super::forward::{argmax, frame, full_logits};
use super::PolicyModel;

/// Decoding strategy. Sampled decoding follows the usual nucleus scheme:
/// temperature-scaled softmax, smallest prefix of the sorted distribution
/// whose mass reaches `p`, renormalize, draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decode {
    Greedy,
    TopP { p: f64, temperature: f64, seed: u64 },
}

impl Decode {
    /// Default sampling configuration: top-p 0.9, temperature 0.6.
    pub fn top_p_default(seed: u64) -> Self {
        Decode::TopP {
            p: 0.9,
            temperature: 0.6,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Decode::TopP { p, temperature, .. } = self {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Config(format!("top-p must lie in (0, 1], got {p}")));
            }
            if !temperature.is_finite() || *temperature < 0.0 {
                return Err(Error::Config(format!(
                    "temperature must be finite and >= 0, got {temperature}"
                )));
            }
        }
        Ok(())
    }
}

fn sample_top_p(logits: &[f64], p: f64, temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    // Temperature zero is exact argmax, not a division by zero.
    if temperature == 0.0 {
        return argmax(logits);
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scaled.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| exp[b].partial_cmp(&exp[a]).unwrap().then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += exp[i] / z;
        if mass >= p {
            break;
        }
    }
    let dart: f64 = rng.random_range(0.0..mass);
    let mut acc = 0.0;
    for &i in &kept {
        acc += exp[i] / z;
        if dart < acc {
            return i;
        }
    }
    *kept.last().unwrap()
}

/// Continues `prompt` until EOS or `max_new` tokens. The returned sequence
/// excludes the terminating EOS. The budget is clamped so the framed
/// sequence never exceeds the model's position capacity.
pub fn generate(
    model: &PolicyModel,
    prompt: &[u32],
    decode: Decode,
    max_new: usize,
) -> Result<Vec<u32>> {
    decode.validate()?;
    let cfg = model.config();
    if prompt.len() > cfg.max_seq_len {
        return Err(Error::Config(format!(
            "prompt length {} exceeds max_seq_len {}",
            prompt.len(),
            cfg.max_seq_len
        )));
    }
    let budget = max_new.min(cfg.max_seq_len - prompt.len());
    let mut seq = frame(prompt, &[]);
    let mut rng = match decode {
        Decode::TopP { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Decode::Greedy => None,
    };
    let mut out = Vec::new();
    for _ in 0..budget {
        let logits = full_logits(model, &seq)?;
        let last = logits.last().unwrap();
        let next = match decode {
            Decode::Greedy => argmax(last),
            Decode::TopP { p, temperature, .. } => {
                sample_top_p(last, p, temperature, rng.as_mut().unwrap())
            }
        } as u32;
        if next == tokens::EOS {
            break;
        }
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}
