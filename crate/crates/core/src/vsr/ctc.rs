//! Connectionist temporal classification loss: forward-backward recursion in
//! log space, wrapped as a differentiable tensor op.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};

use crate::error::{Error, Result};

/// Loss reported for a target that no alignment can produce.
pub const INFEASIBLE_LOSS: f64 = 1e4;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Minimum number of frames needed to emit `target` (repeats need a blank between them).
pub fn min_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// `log_probs` (`frames × vocab`, row-major), together with its gradient with
/// respect to `log_probs`. Returns `None` when the target is infeasible.
pub fn ctc_nll(log_probs: &[f64], frames: usize, vocab: usize, target: &[u32], blank: u32) -> Option<(f64, Vec<f64>)> {
    if frames == 0 || min_frames(target) > frames {
        return None;
    }
    let lp = |t: usize, k: u32| log_probs[t * vocab + k as usize];
    // extended label sequence: blank, l1, blank, l2, ..., blank
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    let s_len = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; frames * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, prev[s - 2]);
            }
            alpha[t * s_len + s] = if a == neg { neg } else { a + lp(t, ext[s]) };
        }
    }
    let last = (frames - 1) * s_len;
    let log_p = if s_len > 1 {
        log_add(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };
    if !log_p.is_finite() {
        return None;
    }

    let mut beta = vec![neg; frames * s_len];
    beta[last + s_len - 1] = lp(frames - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(frames - 1, ext[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            beta[t * s_len + s] = if b == neg { neg } else { b + lp(t, ext[s]) };
        }
    }

    let mut grad = vec![0f64; frames * vocab];
    for t in 0..frames {
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s] - lp(t, ext[s]);
            if ab > neg {
                grad[t * vocab + ext[s] as usize] -= (ab - log_p).exp();
            }
        }
    }
    Some((-log_p, grad))
}

/// Batched CTC over `(B, T, V)` log-probabilities; produces per-utterance losses `(B,)`.
struct CtcOp {
    targets: Vec<Vec<u32>>,
    lengths: Vec<usize>,
    blank: u32,
}

impl CtcOp {
    fn run(&self, lp: &[f64], t_max: usize, vocab: usize) -> (Vec<f64>, Vec<f64>) {
        let b = self.targets.len();
        let mut losses = vec![0f64; b];
        let mut grads = vec![0f64; b * t_max * vocab];
        for i in 0..b {
            let frames = self.lengths[i];
            let slice = &lp[i * t_max * vocab..(i * t_max + frames) * vocab];
            match ctc_nll(slice, frames, vocab, &self.targets[i], self.blank) {
                Some((loss, g)) => {
                    losses[i] = loss;
                    grads[i * t_max * vocab..(i * t_max + frames) * vocab].copy_from_slice(&g);
                }
                None => {
                    log::warn!(
                        "ctc: target of {} tokens infeasible in {frames} frames; using sentinel loss",
                        self.targets[i].len()
                    );
                    losses[i] = INFEASIBLE_LOSS;
                }
            }
        }
        (losses, grads)
    }

    fn values(t: &Tensor) -> candle_core::Result<Vec<f64>> {
        t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()
    }
}

impl CustomOp1 for CtcOp {
    fn name(&self) -> &'static str {
        "ctc-loss"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (b, t_max, vocab) = layout.shape().dims3()?;
        let lp: Vec<f64> = match storage {
            CpuStorage::F64(v) => gather(v, layout)?,
            CpuStorage::F32(v) => gather(v, layout)?.into_iter().map(|x: f32| x as f64).collect(),
            _ => candle_core::bail!("ctc-loss expects f32 or f64 log-probabilities"),
        };
        let (losses, _) = self.run(&lp, t_max, vocab);
        debug_assert_eq!(losses.len(), b);
        let out = match storage {
            CpuStorage::F32(_) => CpuStorage::F32(losses.iter().map(|&x| x as f32).collect()),
            _ => CpuStorage::F64(losses),
        };
        Ok((out, Shape::from(b)))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (b, t_max, vocab) = arg.dims3()?;
        let lp = Self::values(arg)?;
        let (_, grads) = self.run(&lp, t_max, vocab);
        let g = Tensor::from_vec(grads, (b, t_max, vocab), arg.device())?.to_dtype(arg.dtype())?;
        let scale = grad_res.reshape((b, 1, 1))?;
        Ok(Some(g.broadcast_mul(&scale)?))
    }
}

fn gather<T: Copy>(data: &[T], layout: &Layout) -> candle_core::Result<Vec<T>> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(data[start..end].to_vec()),
        None => candle_core::bail!("ctc-loss expects contiguous log-probabilities"),
    }
}

/// Per-utterance CTC losses `(B,)` for log-probabilities `(B, T, V)`; frames
/// past `lengths[b]` are ignored.
pub fn ctc_loss(log_probs: &Tensor, targets: &[Vec<u32>], lengths: &[usize], blank: u32) -> Result<Tensor> {
    let (b, t_max, _) = log_probs.dims3()?;
    if targets.len() != b || lengths.len() != b || lengths.iter().any(|&l| l > t_max) {
        return Err(Error::Shape(format!(
            "ctc: {b} utterances of up to {t_max} frames, {} targets, lengths {lengths:?}",
            targets.len()
        )));
    }
    let op = CtcOp {
        targets: targets.to_vec(),
        lengths: lengths.to_vec(),
        blank,
    };
    Ok(log_probs.contiguous()?.apply_op1_arc(std::sync::Arc::new(Box::new(op)))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive path enumeration: every `V^T` frame labelling whose
    /// collapse (merge repeats, drop blanks) equals the target.
    fn brute_force(lp: &[f64], t: usize, v: usize, target: &[u32], blank: u32) -> f64 {
        let mut total = 0f64;
        let mut path = vec![0u32; t];
        for code in 0..v.pow(t as u32) {
            let mut c = code;
            for p in path.iter_mut() {
                *p = (c % v) as u32;
                c /= v;
            }
            let mut collapsed = Vec::new();
            let mut prev = None;
            for &p in &path {
                if Some(p) != prev && p != blank {
                    collapsed.push(p);
                }
                prev = Some(p);
            }
            if collapsed == target {
                total += path.iter().enumerate().map(|(i, &k)| lp[i * v + k as usize]).sum::<f64>().exp();
            }
        }
        -total.ln()
    }

    #[test]
    fn single_frame_uniform() {
        let lp = vec![0.5f64.ln(); 2];
        let (loss, _) = ctc_nll(&lp, 1, 2, &[1], 0).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_target_is_all_blanks() {
        let p: f64 = 0.3;
        let lp = vec![p.ln(), (1.0 - p).ln(), p.ln(), (1.0 - p).ln()];
        let (loss, _) = ctc_nll(&lp, 2, 2, &[], 0).unwrap();
        assert!((loss + 2.0 * p.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_enumeration_on_random_instance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (t, v) = (5, 4);
        let logits: Vec<f64> = (0..t * v).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut lp = logits.clone();
        for row in lp.chunks_mut(v) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() + m;
            row.iter_mut().for_each(|x| *x -= z);
        }
        let target = [2u32, 1];
        let (loss, _) = ctc_nll(&lp, t, v, &target, 0).unwrap();
        let want = brute_force(&lp, t, v, &target, 0);
        assert!((loss - want).abs() <= 1e-6 * want.abs(), "{loss} vs {want}");
    }

    #[test]
    fn infeasible_targets_yield_sentinel() {
        assert!(ctc_nll(&[0.0; 4], 2, 2, &[1, 1], 0).is_none());
        let lp = Tensor::zeros((1, 2, 3), DType::F64, &candle_core::Device::Cpu).unwrap();
        let l = ctc_loss(&lp, &[vec![1, 1]], &[2], 0).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(l[0], INFEASIBLE_LOSS);
    }

    #[test]
    fn gradient_of_log_probs_is_negative_posterior() {
        // posterior occupancies sum to one per frame
        let (t, v) = (4, 3);
        let lp: Vec<f64> = (0..t * v).map(|i| (i % v) as f64 * 0.3 - 0.2 - (i / v) as f64 * 0.1).collect();
        let (_, g) = ctc_nll(&lp, t, v, &[1, 2], 0).unwrap();
        for row in g.chunks(v) {
            assert!((row.iter().sum::<f64>() + 1.0).abs() < 1e-9);
        }
    }
}
