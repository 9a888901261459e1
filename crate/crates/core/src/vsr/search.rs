use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::model::VsrModel;
use crate::error::{Error, Result};
use crate::nn::layers::log_softmax;
use crate::tokenizer::{Specials, TokenSequence};

/// Next-token log-probabilities for a set of prefixes (each starting with sos).
pub trait StepScorer {
    fn step_log_probs(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>>;
    fn specials(&self) -> Specials;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Maximum hypothesis length in tokens; `None` means twice the frame count.
    pub max_len: Option<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { beam: 1, max_len: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: TokenSequence,
    /// Log-probability of the tokens plus the closing eos (when present).
    pub logprob: f64,
    /// The length cap was reached before eos.
    pub truncated: bool,
}

impl Hypothesis {
    /// Log-probability divided by the number of scored steps.
    pub fn normalized(&self) -> f64 {
        let steps = self.tokens.len() + usize::from(!self.truncated);
        self.logprob / steps.max(1) as f64
    }
}

fn selectable(specials: Specials, tok: usize) -> bool {
    let t = tok as u32;
    t != specials.blank && t != specials.pad && t != specials.sos
}

pub fn greedy(scorer: &dyn StepScorer, max_len: usize) -> Result<Hypothesis> {
    let sp = scorer.specials();
    let mut prefix = vec![sp.sos];
    let mut logprob = 0.0;
    loop {
        let lp = scorer.step_log_probs(std::slice::from_ref(&prefix))?.remove(0);
        let (best, score) = lp
            .iter()
            .enumerate()
            .filter(|(k, _)| selectable(sp, *k))
            .fold((0usize, f64::NEG_INFINITY), |acc, (k, &s)| if s > acc.1 { (k, s) } else { acc });
        if best as u32 == sp.eos {
            return Ok(Hypothesis {
                tokens: TokenSequence(prefix[1..].to_vec()),
                logprob: logprob + score,
                truncated: false,
            });
        }
        if prefix.len() > max_len {
            return Ok(Hypothesis {
                tokens: TokenSequence(prefix[1..].to_vec()),
                logprob,
                truncated: true,
            });
        }
        prefix.push(best as u32);
        logprob += score;
    }
}

/// Beam search ranking finished hypotheses by length-normalized
/// log-probability. Width 1 is the greedy search.
pub fn beam_search(scorer: &dyn StepScorer, beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Invalid("beam width must be at least 1".into()));
    }
    if beam == 1 {
        return greedy(scorer, max_len);
    }
    let sp = scorer.specials();
    let mut alive: Vec<(Vec<u32>, f64)> = vec![(vec![sp.sos], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !alive.is_empty() && finished.len() < beam {
        let prefixes: Vec<Vec<u32>> = alive.iter().map(|(p, _)| p.clone()).collect();
        let scores = scorer.step_log_probs(&prefixes)?;
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (h, lp) in scores.iter().enumerate() {
            for (k, &s) in lp.iter().enumerate() {
                if selectable(sp, k) && s.is_finite() {
                    candidates.push((h, k as u32, alive[h].1 + s));
                }
            }
        }
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next = Vec::with_capacity(beam);
        for (h, tok, score) in candidates.into_iter().take(beam) {
            let prefix = &alive[h].0;
            if tok == sp.eos {
                finished.push(Hypothesis {
                    tokens: TokenSequence(prefix[1..].to_vec()),
                    logprob: score,
                    truncated: false,
                });
            } else if prefix.len() > max_len {
                finished.push(Hypothesis {
                    tokens: TokenSequence(prefix[1..].to_vec()),
                    logprob: alive[h].1,
                    truncated: true,
                });
            } else {
                let mut p = prefix.clone();
                p.push(tok);
                next.push((p, score));
            }
        }
        alive = next;
    }
    let complete = finished.iter().filter(|h| !h.truncated);
    let pool: Vec<&Hypothesis> = if complete.clone().next().is_some() {
        complete.collect()
    } else {
        finished.iter().collect()
    };
    pool.into_iter()
        .max_by(|a, b| a.normalized().total_cmp(&b.normalized()))
        .cloned()
        .ok_or_else(|| Error::Numerical("beam search produced no hypothesis".into()))
}

/// A clip already passed through the front-end and encoder.
pub struct EncodedClip<'a> {
    model: &'a VsrModel,
    z_e: Tensor,
    frames: usize,
}

impl<'a> EncodedClip<'a> {
    pub fn new(model: &'a VsrModel, clip: &Tensor) -> Result<Self> {
        let (z_f, lengths) = model.frontend(std::slice::from_ref(clip), false)?;
        let z_e = model.encode(&z_f, &lengths)?.detach();
        Ok(Self {
            model,
            z_e,
            frames: lengths[0],
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

impl StepScorer for EncodedClip<'_> {
    fn step_log_probs(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let n = prefixes.len();
        let (_, t, d) = self.z_e.dims3()?;
        let memory = self.z_e.broadcast_as((n, t, d))?.contiguous()?;
        let logits = self.model.decoder_logits(&memory, &vec![t; n], prefixes)?;
        let lp = log_softmax(&logits, 2)?.to_dtype(DType::F64)?;
        prefixes
            .iter()
            .enumerate()
            .map(|(i, p)| Ok(lp.get(i)?.get(p.len() - 1)?.to_vec1::<f64>()?))
            .collect()
    }

    fn specials(&self) -> Specials {
        self.model.specials()
    }
}

/// Decodes one `(T, 96, 96)` clip.
pub fn decode(model: &VsrModel, clip: &Tensor, opts: DecodeOptions) -> Result<Hypothesis> {
    let enc = EncodedClip::new(model, clip)?;
    let cap = opts.max_len.unwrap_or(2 * enc.frames());
    beam_search(&enc, opts.beam, cap)
}
