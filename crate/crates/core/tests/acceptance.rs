//! Acceptance gate. Prints one `[PASS]`/`[FAIL]` line per criterion and exits
//! non-zero when any criterion fails. `ACCEPTANCE_ONLY=1,2,6` restricts the run.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synthvsr::bridge::{kl_rows, perceptual_loss, PerceptualWeights};
use synthvsr::config::RunConfig;
use synthvsr::eval::{align, WerReport, WerRow};
use synthvsr::lipgen::{
    disc_objective, generator_adv, lam_total, lam_total_loss, reconstruction_loss, train_lam, FrameDiscriminator, Generator,
    GeneratorConfig, LamLossWeights, LamRun, LamTerms, LamTrainConfig, LamTrainer, SequenceDiscriminator,
};
use synthvsr::media::{chunk_speech, Manifest, RotationSequence, Waveform, FRAME_SIZE};
use synthvsr::nn::layers::log_softmax;
use synthvsr::nn::{Checkpoint, ParamStore};
use synthvsr::pipeline::{self, lam_clips, outputs, preprocess_manifest, Stage};
use synthvsr::tokenizer::{train_vocab, TokenSequence};
use synthvsr::toy::{self, ToySpec};
use synthvsr::trainer::{load_labeled, train_vsr, AugmentPolicy, VsrRun};
use synthvsr::vsr::{
    average_checkpoints, ctc_loss, ctc_nll, select_last, sequence_nll, teacher_forcing_pairs, EncodedClip, StepScorer,
    VsrConfig, VsrModel, VsrTrainConfig, VsrTrainer,
};

type Outcome = Result<(bool, String), String>;

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Recognizer small enough for finite differences in double precision.
fn tiny_vsr(seed: u64, frozen: bool) -> VsrModel {
    let mut c = VsrConfig::desk(12);
    c.frontend.stem_channels = 4;
    c.frontend.stage_channels = vec![4, 8];
    c.frontend.blocks_per_stage = vec![1, 1];
    c.encoder.depth = 1;
    c.encoder.width = 16;
    c.encoder.ff_width = 32;
    c.encoder.heads = 2;
    c.encoder.conv_kernel = 3;
    c.decoder_ff_width = 32;
    let store = ParamStore::new(seed, DType::F64);
    let store = if frozen { store.frozen() } else { store };
    VsrModel::new(&c, &store).unwrap()
}

/// Largest |analytic − numeric| and largest |numeric| over sampled coordinates.
#[derive(Default, Clone, Copy)]
struct GradDev {
    dev: f64,
    scale: f64,
}

impl GradDev {
    fn merge(self, o: GradDev) -> GradDev {
        GradDev { dev: self.dev.max(o.dev), scale: self.scale.max(o.scale) }
    }

    /// Max-norm relative error.
    fn rel(self) -> f64 {
        if self.scale == 0.0 { f64::INFINITY } else { self.dev / self.scale }
    }
}

/// Analytic gradient of `loss` with respect to `var` against central
/// differences at `coords` (flat indices).
fn grad_check(var: &Var, coords: &[usize], loss: &dyn Fn() -> candle_core::Result<Tensor>) -> Result<GradDev, String> {
    const H: f64 = 1e-6;
    let base = var.as_tensor().copy().map_err(fail)?;
    let shape = base.dims().to_vec();
    let flat = base.flatten_all().map_err(fail)?.to_vec1::<f64>().map_err(fail)?;
    let grads = loss().map_err(fail)?.backward().map_err(fail)?;
    let analytic = grads
        .get(var.as_tensor())
        .ok_or("no gradient reached the variable")?
        .flatten_all()
        .map_err(fail)?
        .to_vec1::<f64>()
        .map_err(fail)?;
    let eval_at = |i: usize, delta: f64| -> Result<f64, String> {
        let mut v = flat.clone();
        v[i] += delta;
        var.set(&Tensor::from_vec(v, shape.as_slice(), &Device::Cpu).map_err(fail)?).map_err(fail)?;
        let out = scalar(&loss().map_err(fail)?);
        Ok(out)
    };
    let mut worst = 0f64;
    let mut scale = 0f64;
    for &i in coords {
        let numeric = (eval_at(i, H)? - eval_at(i, -H)?) / (2.0 * H);
        worst = worst.max((numeric - analytic[i]).abs());
        scale = scale.max(numeric.abs());
    }
    var.set(&base).map_err(fail)?;
    Ok(GradDev { dev: worst, scale })
}

fn sample_coords(n: usize, k: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    (0..k).map(|_| r.random_range(0..n)).collect()
}

// ------------------------------------------------------------ criterion 1

/// Sum over every frame labelling whose collapse equals `target`.
fn ctc_enumerate(lp: &[f64], t: usize, v: usize, target: &[u32]) -> f64 {
    let mut total = 0f64;
    for code in 0..v.pow(t as u32) {
        let mut c = code;
        let mut logp = 0.0;
        let mut collapsed = Vec::new();
        let mut prev = u32::MAX;
        for f in 0..t {
            let k = (c % v) as u32;
            c /= v;
            logp += lp[f * v + k as usize];
            if k != prev && k != 0 {
                collapsed.push(k);
            }
            prev = k;
        }
        if collapsed == target {
            total += logp.exp();
        }
    }
    -total.ln()
}

fn criterion_ctc() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut worst, mut feasible, mut infeasible) = (0f64, 0, 0);
    for _ in 0..200 {
        let t = r.random_range(1..=6);
        let v = r.random_range(2..=4);
        let len = r.random_range(0..=3);
        let target: Vec<u32> = (0..len).map(|_| r.random_range(1..v as u32)).collect();
        let mut lp = vec![0f64; t * v];
        for row in lp.chunks_mut(v) {
            let logits: Vec<f64> = (0..v).map(|_| r.random_range(-3.0..3.0)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for (o, x) in row.iter_mut().zip(&logits) {
                *o = x - z;
            }
        }
        let oracle = ctc_enumerate(&lp, t, v, &target);
        match ctc_nll(&lp, t, v, &target, 0) {
            None => {
                if oracle.is_finite() {
                    return Ok((false, format!("feasible target {target:?} over {t} frames reported infeasible")));
                }
                infeasible += 1;
            }
            Some((nll, _)) => {
                let tensor = Tensor::from_vec(lp.clone(), (1, t, v), &Device::Cpu).map_err(fail)?;
                let op = scalar(&ctc_loss(&tensor, &[target.clone()], &[t], 0).map_err(fail)?.sum_all().map_err(fail)?);
                for got in [nll, op] {
                    worst = worst.max((got - oracle).abs() / oracle.abs().max(1e-12));
                }
                feasible += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst <= 1e-6 && secs < 30.0,
        format!("{feasible} feasible + {infeasible} infeasible instances, max rel err {worst:.2e} (tol 1e-6), {secs:.2}s (limit 30s)"),
    ))
}

// ------------------------------------------------------------ criterion 2

fn criterion_gradients() -> Outcome {
    let mut r = rng(2);
    let mut results: Vec<(&str, GradDev)> = Vec::new();

    let logits = Var::from_tensor(&uniform(&[2, 6, 5], -2.0, 2.0, &mut r)).map_err(fail)?;
    let targets = vec![vec![1u32, 2], vec![3, 3, 1]];
    let ctc = || {
        let lp = log_softmax(logits.as_tensor(), 2).map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        ctc_loss(&lp, &targets, &[6, 5], 0).map_err(|e| candle_core::Error::Msg(e.to_string()))?.sum_all()
    };
    results.push(("ctc", grad_check(&logits, &(0..60).collect::<Vec<_>>(), &ctc)?));

    let logits = Var::from_tensor(&uniform(&[2, 4, 7], -2.0, 2.0, &mut r)).map_err(fail)?;
    let outs = vec![vec![1u32, 2, 3, 6], vec![4, 5]];
    let ce = || {
        let lp = log_softmax(logits.as_tensor(), 2).map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        sequence_nll(&lp, &outs).map_err(|e| candle_core::Error::Msg(e.to_string()))?.sum_all()
    };
    results.push(("ce", grad_check(&logits, &(0..56).collect::<Vec<_>>(), &ce)?));

    let real = uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
    let generated = Var::from_tensor(&uniform(&[3, 8, 8], 0.0, 1.0, &mut r)).map_err(fail)?;
    let rec = || reconstruction_loss(&real, generated.as_tensor()).map_err(|e| candle_core::Error::Msg(e.to_string()));
    results.push(("reconstruction", grad_check(&generated, &(0..192).collect::<Vec<_>>(), &rec)?));

    let gcfg = GeneratorConfig { width: 0.0625 };
    let pixels = FRAME_SIZE * FRAME_SIZE;
    let di_store = ParamStore::new(21, DType::F64);
    let d_img = FrameDiscriminator::new(&di_store.root(), &gcfg).map_err(fail)?;
    let first = uniform(&[FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let real_k = uniform(&[2, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let fake_k = Var::from_tensor(&uniform(&[2, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r)).map_err(fail)?;
    let eq1 = || {
        let m = |e: synthvsr::Error| candle_core::Error::Msg(e.to_string());
        disc_objective(
            &d_img.forward(&real_k, &first, false).map_err(m)?,
            &d_img.forward(fake_k.as_tensor(), &first, false).map_err(m)?,
        )
        .map_err(m)
    };
    let mut worst = grad_check(&fake_k, &sample_coords(2 * pixels, 8, &mut r), &eq1)?;
    for (_, v) in di_store.trainable() {
        worst = worst.merge(grad_check(&v, &sample_coords(v.elem_count(), 2, &mut r), &eq1)?);
    }
    results.push(("frame adversarial", worst));
    let gadv = || {
        let m = |e: synthvsr::Error| candle_core::Error::Msg(e.to_string());
        generator_adv(&d_img.forward(fake_k.as_tensor(), &first, false).map_err(m)?).map_err(m)
    };
    results.push(("generator adversarial", grad_check(&fake_k, &sample_coords(2 * pixels, 8, &mut r), &gadv)?));

    let ds_store = ParamStore::new(22, DType::F64);
    let d_seq = SequenceDiscriminator::new(&ds_store.root(), &gcfg).map_err(fail)?;
    let real_c = uniform(&[1, 6, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let fake_c = Var::from_tensor(&uniform(&[1, 6, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r)).map_err(fail)?;
    let eq2 = || {
        let m = |e: synthvsr::Error| candle_core::Error::Msg(e.to_string());
        disc_objective(&d_seq.forward(&real_c, false).map_err(m)?, &d_seq.forward(fake_c.as_tensor(), false).map_err(m)?).map_err(m)
    };
    let mut worst = grad_check(&fake_c, &sample_coords(6 * pixels, 8, &mut r), &eq2)?;
    for (_, v) in ds_store.trainable() {
        worst = worst.merge(grad_check(&v, &sample_coords(v.elem_count(), 2, &mut r), &eq2)?);
    }
    results.push(("sequence adversarial", worst));

    let vsr = tiny_vsr(23, true);
    let real = uniform(&[3, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let synth = Var::from_tensor(&uniform(&[3, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r)).map_err(fail)?;
    let transcript = TokenSequence(vec![5, 6, 7]);
    let w = PerceptualWeights { visual: 1.0, logits: 1.0 };
    let perceptual = || {
        perceptual_loss(&vsr, &real, synth.as_tensor(), &transcript, &w).map_err(|e| candle_core::Error::Msg(e.to_string()))
    };
    results.push(("perceptual", grad_check(&synth, &sample_coords(3 * pixels, 12, &mut r), &perceptual)?));

    let ok = results.iter().all(|(_, e)| e.rel() <= 1e-4);
    let detail = results.iter().map(|(n, e)| format!("{n} {:.1e}", e.rel())).collect::<Vec<_>>().join(", ");
    Ok((ok, format!("max-norm rel err per loss vs central differences (tol 1e-4): {detail}")))
}

// ------------------------------------------------------------ criterion 3

fn criterion_analytic_points() -> Outcome {
    let mut r = rng(3);
    let gcfg = GeneratorConfig { width: 0.0625 };
    let zero_all = |store: &ParamStore| -> Result<(), String> {
        for (_, v) in store.trainable() {
            v.set(&v.as_tensor().zeros_like().map_err(fail)?).map_err(fail)?;
        }
        Ok(())
    };
    // networks whose every weight is zero output sigmoid(0) = 0.5 everywhere
    let di_store = ParamStore::new(31, DType::F64);
    let d_img = FrameDiscriminator::new(&di_store.root(), &gcfg).map_err(fail)?;
    zero_all(&di_store)?;
    let ds_store = ParamStore::new(32, DType::F64);
    let d_seq = SequenceDiscriminator::new(&ds_store.root(), &gcfg).map_err(fail)?;
    zero_all(&ds_store)?;
    let first = uniform(&[FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let a = uniform(&[2, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let b = uniform(&[2, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let eq1 = scalar(&disc_objective(&d_img.forward(&a, &first, false).map_err(fail)?, &d_img.forward(&b, &first, false).map_err(fail)?).map_err(fail)?);
    let ca = a.unsqueeze(0).map_err(fail)?;
    let cb = b.unsqueeze(0).map_err(fail)?;
    let eq2 = scalar(&disc_objective(&d_seq.forward(&ca, false).map_err(fail)?, &d_seq.forward(&cb, false).map_err(fail)?).map_err(fail)?);
    let want = 2.0 * 0.5f64.ln();

    let clip = uniform(&[4, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let eq4 = scalar(&reconstruction_loss(&clip, &clip).map_err(fail)?);
    let vsr = tiny_vsr(33, true);
    let eq3 = scalar(
        &perceptual_loss(&vsr, &clip, &clip, &TokenSequence(vec![5, 6]), &PerceptualWeights { visual: 1.0, logits: 1.0 })
            .map_err(fail)?,
    );

    let p = Tensor::new(&[[1.0f64, 0.0]], &Device::Cpu).map_err(fail)?;
    let q = Tensor::new(&[[0.5f64, 0.5]], &Device::Cpu).map_err(fail)?;
    let kl = scalar(&kl_rows(&p, &q).map_err(fail)?);

    let w = LamLossWeights::baseline();
    let unit = LamTerms { img: 1.0, seq: 1.0, rec: 1.0, vsr: 0.0 };
    let eq5 = lam_total(&w, &unit);
    let one = Tensor::new(1.0f64, &Device::Cpu).map_err(fail)?;
    let eq5_t = scalar(&lam_total_loss(&w, &one, &one, &one, None).map_err(fail)?);

    let ok = (eq1 - want).abs() <= 1e-9
        && (eq2 - want).abs() <= 1e-9
        && eq4 == 0.0
        && eq3.abs() <= 1e-12
        && (kl - 2f64.ln()).abs() <= 1e-6
        && (w.img, w.seq, w.rec) == (1.0, 0.2, 300.0)
        && eq5 == 301.2
        && eq5_t == 301.2;
    Ok((
        ok,
        format!(
            "D≡0.5: frame {:.1e}, sequence {:.1e} off 2·ln 0.5; identical clips: rec {eq4}, perceptual {eq3:.1e}; KL {:.1e} off ln 2; total {eq5} / {eq5_t}",
            (eq1 - want).abs(),
            (eq2 - want).abs(),
            (kl - 2f64.ln()).abs()
        ),
    ))
}

// ------------------------------------------------------------ criterion 4

fn speech(n: usize, r: &mut ChaCha8Rng) -> Waveform {
    let samples: Vec<f32> = (0..n * 640).map(|_| r.random_range(-0.5f32..0.5)).collect();
    Waveform::new(samples, 16_000).unwrap()
}

fn criterion_generator_contract() -> Outcome {
    let mut r = rng(4);
    let cfg = GeneratorConfig { width: 0.125 };
    let build = || -> Result<Generator, String> {
        let store = ParamStore::new(40, DType::F32);
        Generator::new(&store.root(), &cfg).map_err(fail)
    };
    let g1 = build()?;
    let g2 = build()?;
    let face: Vec<u8> = (0..FRAME_SIZE * FRAME_SIZE).map(|_| r.random()).collect();
    let mut shapes = Vec::new();
    let mut deterministic = true;
    let mut counts_ok = true;
    for n in [1usize, 5, 75] {
        let chunks = chunk_speech(&speech(n, &mut r), 25.0).map_err(fail)?;
        let rot = RotationSequence::identity(chunks.count());
        let a = g1.generate(&face, &chunks, &rot, 25.0).map_err(fail)?;
        let b = g1.generate(&face, &chunks, &rot, 25.0).map_err(fail)?;
        let c = g2.generate(&face, &chunks, &rot, 25.0).map_err(fail)?;
        deterministic &= a == b && a == c;
        counts_ok &= chunks.count() == n && a.num_frames() == n && a.frame(0).len() == FRAME_SIZE * FRAME_SIZE;
        shapes.push(format!("{n}→{}×96×96", a.num_frames()));
    }

    // one generator update with every baseline loss term
    let g_store = ParamStore::new(41, DType::F32);
    let g = Generator::new(&g_store.root(), &cfg).map_err(fail)?;
    let di_store = ParamStore::new(42, DType::F32);
    let d_img = FrameDiscriminator::new(&di_store.root(), &cfg).map_err(fail)?;
    let ds_store = ParamStore::new(43, DType::F32);
    let d_seq = SequenceDiscriminator::new(&ds_store.root(), &cfg).map_err(fail)?;
    let n = 5;
    let chunks = chunk_speech(&speech(n, &mut r), 25.0).map_err(fail)?;
    let chunks = Tensor::from_vec(chunks.as_slice().to_vec(), (n, chunks.chunk_len()), &Device::Cpu).map_err(fail)?;
    let rot = Tensor::from_vec(RotationSequence::identity(n).flatten(), (n, 9), &Device::Cpu).map_err(fail)?;
    let real = uniform(&[n, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r).to_dtype(DType::F32).map_err(fail)?;
    let first = real.get(0).map_err(fail)?;
    let fake = g.forward(&first, &chunks, &rot, true).map_err(fail)?;
    let img = generator_adv(&d_img.forward(&fake, &first, true).map_err(fail)?).map_err(fail)?;
    let seq = generator_adv(&d_seq.forward(&fake.unsqueeze(0).map_err(fail)?, true).map_err(fail)?).map_err(fail)?;
    let rec = reconstruction_loss(&real, &fake).map_err(fail)?;
    let total = lam_total_loss(&LamLossWeights::baseline(), &img, &seq, &rec, None).map_err(fail)?;
    let grads = total.backward().map_err(fail)?;
    let params = g_store.trainable();
    let starved: Vec<String> = params
        .iter()
        .filter(|(_, v)| match grads.get(v.as_tensor()) {
            Some(gr) => scalar(&gr.abs().unwrap().sum_all().unwrap()) == 0.0,
            None => true,
        })
        .map(|(k, _)| k.clone())
        .collect();
    Ok((
        deterministic && counts_ok && starved.is_empty() && !params.is_empty(),
        format!(
            "frames {}; deterministic {deterministic}; {}/{} generator tensors receive gradient{}",
            shapes.join(", "),
            params.len() - starved.len(),
            params.len(),
            if starved.is_empty() { String::new() } else { format!(" (missing: {})", starved.join(", ")) }
        ),
    ))
}

// ------------------------------------------------------------ criterion 5

fn criterion_decoder() -> Outcome {
    let mut r = rng(5);
    let model = tiny_vsr(50, false);
    let sp = model.specials();
    let clip = uniform(&[7, FRAME_SIZE, FRAME_SIZE], 0.0, 1.0, &mut r);
    let mut worst_fact = 0f64;
    for len in [1usize, 3, 6] {
        let y = TokenSequence((0..len).map(|_| r.random_range(5..12)).collect());
        let bundle = model.features(std::slice::from_ref(&clip), Some(std::slice::from_ref(&y)), false).map_err(fail)?;
        let (_, outs) = teacher_forcing_pairs(std::slice::from_ref(&y), sp);
        let lp = log_softmax(bundle.decoder_logits.as_ref().unwrap(), 2).map_err(fail)?;
        let joint = -scalar(&sequence_nll(&lp, &outs).map_err(fail)?.sum_all().map_err(fail)?);

        let enc = EncodedClip::new(&model, &clip).map_err(fail)?;
        let mut prefix = vec![sp.sos];
        let mut stepwise = 0.0;
        for &tok in outs[0].iter() {
            stepwise += enc.step_log_probs(std::slice::from_ref(&prefix)).map_err(fail)?[0][tok as usize];
            prefix.push(tok);
        }
        worst_fact = worst_fact.max((joint - stepwise).abs());
    }

    let z_e = uniform(&[1, 5, 16], -1.0, 1.0, &mut r);
    let mut worst_leak = 0f64;
    let mut sensitive = 0;
    for _ in 0..20 {
        let l = r.random_range(2..=8);
        let mut p: Vec<u32> = std::iter::once(sp.sos).chain((1..l).map(|_| r.random_range(5..12))).collect();
        let j = r.random_range(0..l - 1);
        let before = model.decoder_logits(&z_e, &[5], &[p.clone()]).map_err(fail)?;
        for tok in p.iter_mut().skip(j + 1) {
            *tok = 5 + (*tok - 5 + r.random_range(1..7)) % 7;
        }
        let after = model.decoder_logits(&z_e, &[5], &[p]).map_err(fail)?;
        let head = |t: &Tensor| t.narrow(1, 0, j + 1).unwrap();
        worst_leak = worst_leak.max(scalar(&(head(&before) - head(&after)).unwrap().abs().unwrap().max_all().unwrap()));
        let tail = |t: &Tensor| t.narrow(1, j + 1, l - j - 1).unwrap();
        if scalar(&(tail(&before) - tail(&after)).unwrap().abs().unwrap().max_all().unwrap()) > 1e-9 {
            sensitive += 1;
        }
    }
    Ok((
        worst_fact <= 1e-6 && worst_leak <= 1e-12 && sensitive == 20,
        format!(
            "joint vs stepwise max |Δ| {worst_fact:.1e} (tol 1e-6); 20 causality probes: earlier rows max |Δ| {worst_leak:.1e}, later rows changed in {sensitive}/20"
        ),
    ))
}

// ------------------------------------------------------------ criterion 6

/// Top-down memoized edit distance over word slices.
fn edit_memo(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if i == a.len() {
        return b.len() - j;
    }
    if j == b.len() {
        return a.len() - i;
    }
    if let Some(&d) = memo.get(&(i, j)) {
        return d;
    }
    let d = if a[i] == b[j] {
        edit_memo(a, b, i + 1, j + 1, memo)
    } else {
        1 + edit_memo(a, b, i + 1, j + 1, memo)
            .min(edit_memo(a, b, i + 1, j, memo))
            .min(edit_memo(a, b, i, j + 1, memo))
    };
    memo.insert((i, j), d);
    d
}

fn criterion_wer() -> Outcome {
    const WORDS: [&str; 6] = ["red", "blue", "green", "gold", "grey", "pink"];
    let mut r = rng(6);
    let mut rows = Vec::new();
    let (mut errors, mut ref_words, mut mismatches) = (0usize, 0usize, 0usize);
    for i in 0..200 {
        let nr = r.random_range(1..=12);
        let nh = r.random_range(0..=12);
        let rw: Vec<&str> = (0..nr).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect();
        let hw: Vec<&str> = (0..nh).map(|_| WORDS[r.random_range(0..WORDS.len())]).collect();
        let oracle = edit_memo(&rw, &hw, 0, 0, &mut HashMap::new());
        let counts = align(&rw, &hw);
        let row = WerRow::score(format!("u{i}"), &rw.join(" "), &hw.join(" "));
        let consistent = counts.errors() == oracle
            && row.counts == counts
            && row.ref_words == nr
            && counts.deletions + hw.len() == counts.insertions + nr;
        if !consistent {
            mismatches += 1;
        }
        errors += oracle;
        ref_words += nr;
        rows.push(row);
    }
    let report = WerReport::new(rows);
    let agg = errors as f64 / ref_words as f64;
    let ok = mismatches == 0 && report.wer() == agg;
    Ok((ok, format!("200 pairs, {mismatches} disagree with the memoized DP; aggregate {:.6} vs Σerrors/Σref {agg:.6}", report.wer())))
}

// ------------------------------------------------------------ criterion 7

fn criterion_overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(fail)?;
    let corpus = toy::generate(dir.path(), &ToySpec { train_utterances: 20, test_utterances: 0, ..Default::default() }).map_err(fail)?;
    let real = preprocess_manifest(&corpus.raw, &dir.path().join("pre")).map_err(fail)?;
    let texts: Vec<String> = real.entries.iter().filter_map(|e| e.transcript.clone()).collect();
    let distinct: std::collections::BTreeSet<&str> = texts.iter().flat_map(|t| t.split_whitespace()).collect();
    let vocab = train_vocab(&texts, 48).map_err(fail)?;
    let clips = load_labeled(&real, &vocab).map_err(fail)?;
    let store = ParamStore::new(7, DType::F32);
    let model = VsrModel::new(&VsrConfig::desk(vocab.len()), &store).map_err(fail)?;
    let params = store.num_params();
    let cfg = VsrTrainConfig { peak_lr: 1e-3, warmup_steps: 50, total_steps: 2000, weight_decay: 0.01, clip_norm: Some(5.0) };
    let mut trainer = VsrTrainer::new(model, &cfg).map_err(fail)?;
    let mut run = VsrRun::new(7, 2000);
    run.augment = AugmentPolicy::off();
    run.frame_budget = 60;
    run.max_batch = 16;
    run.eval_every = 50;
    run.stop_wer = Some(0.05);
    let summary = train_vsr(&mut trainer, &vocab, &[clips], &run).map_err(fail)?;
    let wer = summary.last_wer().unwrap_or(f64::INFINITY);
    let secs = start.elapsed().as_secs_f64();
    Ok((
        params <= 2_000_000 && wer <= 0.05 && trainer.steps() <= 2000 && secs <= 600.0 && clips_count(&real) == 20,
        format!(
            "{params} parameters, {} utterances over {} distinct words, training WER {wer:.3} after {} steps (limit 2000) in {secs:.0}s (limit 600s)",
            clips_count(&real),
            distinct.len(),
            trainer.steps()
        ),
    ))
}

fn clips_count(m: &Manifest) -> usize {
    m.entries.iter().filter(|e| e.video_path.is_some()).count()
}

// ------------------------------------------------------------ criterion 8

fn criterion_lam() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(fail)?;
    let corpus = toy::generate(dir.path(), &ToySpec { train_utterances: 5, test_utterances: 0, ..Default::default() }).map_err(fail)?;
    let real = preprocess_manifest(&corpus.raw, &dir.path().join("pre")).map_err(fail)?;
    let clips = lam_clips(&real, None).map_err(fail)?;
    let train_cfg = LamTrainConfig { seed: 8, window: 8, disc_frames: 2, lr_generator: 1e-4, ..Default::default() };
    let mut lam = LamTrainer::new(&GeneratorConfig { width: 0.125 }, LamLossWeights::baseline(), train_cfg, None).map_err(fail)?;
    let run = LamRun { steps: 1000, checkpoint_every: 1000, out_dir: dir.path().join("lam"), stop_below: Some(0.05), smoothing: 10 };
    let logs = train_lam(&mut lam, &clips, &run).map_err(fail)?;
    let tail = &logs[logs.len().saturating_sub(10)..];
    let mean_rec = tail.iter().map(|l| l.rec).sum::<f64>() / tail.len().max(1) as f64;

    let mut counts_ok = true;
    let mut full_rec = 0.0;
    for c in &clips {
        let rot = RotationSequence::identity(c.speech.count());
        let out = lam.generator().generate(c.video.frame(0), &c.speech, &rot, c.video.fps()).map_err(fail)?;
        counts_ok &= out.num_frames() == c.speech.count() && c.speech.count() == c.video.num_frames();
        let a = synthvsr::vsr::clip_tensor(&out, DType::F32).map_err(fail)?;
        let b = synthvsr::vsr::clip_tensor(&c.video, DType::F32).map_err(fail)?;
        full_rec += scalar(&reconstruction_loss(&b, &a).map_err(fail)?) / clips.len() as f64;
    }
    Ok((
        mean_rec < 0.05 && logs.len() <= 1000 && counts_ok && clips.len() == 5,
        format!(
            "mean reconstruction of last {} steps {mean_rec:.4} (< 0.05) after {} steps; whole-clip reconstruction {full_rec:.4}; frame counts match chunk counts: {counts_ok}; {:.0}s",
            tail.len(),
            logs.len(),
            start.elapsed().as_secs_f64()
        ),
    ))
}

// -------------------------------------------------------- criteria 9, 10

struct PipelineRun {
    manifests: BTreeMap<String, String>,
    hypotheses: String,
    synth_entries: usize,
    speech_entries: usize,
    complete: bool,
    cells: String,
    elapsed: Duration,
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn toy_pipeline(corpus_dir: &Path, root: &Path, seed: u64) -> Result<PipelineRun, String> {
    let start = Instant::now();
    let base = RunConfig::defaults()
        .with("seed", seed.to_string())
        .and_then(|c| c.with("run.root", root.display().to_string()))
        .map_err(fail)?;
    let stage = |cfg: &RunConfig, s: Stage| pipeline::run(s, cfg).map_err(|e| format!("{}: {e}", s.name()));
    let p = |d: &PathBuf, f: &str| d.join(f).display().to_string();
    let set = |cfg: &RunConfig, kv: &[(&str, String)]| -> Result<RunConfig, String> {
        let mut c = cfg.clone();
        for (k, v) in kv {
            c.set(k, v.clone()).map_err(fail)?;
        }
        Ok(c)
    };

    let pre = stage(&set(&base, &[("preprocess.input", corpus_dir.join("raw.jsonl").display().to_string())])?, Stage::Preprocess)?;
    let speech = corpus_dir.join("speech.jsonl").display().to_string();
    let voc = stage(&set(&base, &[("vocab.corpus", format!("{},{speech}", p(&pre, outputs::TRAIN)))])?, Stage::TrainVocab)?;
    let lam = stage(
        &set(&base, &[("lam.data", p(&pre, outputs::TRAIN)), ("lam.steps", "300".into()), ("lam.stop_below", "0.05".into())])?,
        Stage::TrainLam,
    )?;
    let synth = stage(
        &set(
            &base,
            &[
                ("synth.generator", p(&lam, outputs::GENERATOR)),
                ("synth.speech", speech.clone()),
                ("synth.faces", corpus_dir.join("faces.jsonl").display().to_string()),
                ("synth.n_per", "2".into()),
            ],
        )?,
        Stage::GenSynth,
    )?;
    let vsr_base = set(
        &base,
        &[
            ("vsr.vocab", p(&voc, outputs::VOCAB)),
            ("vsr.train", p(&pre, outputs::TRAIN)),
            ("vsr.steps", "300".into()),
            ("vsr.warmup", "50".into()),
            ("vsr.frame_budget", "60".into()),
            ("vsr.max_batch", "16".into()),
            ("vsr.eval_every", "50".into()),
            ("vsr.stop_wer", "0.05".into()),
        ],
    )?;
    let real_only = stage(&vsr_base, Stage::TrainVsr)?;
    let mixed = stage(&set(&vsr_base, &[("vsr.synth", p(&synth, outputs::SYNTH))])?, Stage::TrainVsr)?;
    let eval_base = set(&base, &[("vsr.vocab", p(&voc, outputs::VOCAB))])?;
    let dec = stage(
        &set(&eval_base, &[("decode.checkpoint", p(&mixed, outputs::RECOGNIZER)), ("decode.manifest", p(&pre, outputs::TEST))])?,
        Stage::Decode,
    )?;
    let mm = stage(
        &set(
            &eval_base,
            &[
                ("mismatch.real_model", p(&real_only, outputs::RECOGNIZER)),
                ("mismatch.mix_model", p(&mixed, outputs::RECOGNIZER)),
                ("mismatch.test", p(&pre, outputs::TEST)),
                ("synth.generator", p(&lam, outputs::GENERATOR)),
            ],
        )?,
        Stage::Mismatch,
    )?;

    let report: serde_json::Value = serde_json::from_str(&read(&mm.join("mismatch.json"))?).map_err(fail)?;
    let cells = report["cells"].as_array().cloned().unwrap_or_default();
    let complete = cells.len() == 4
        && ["real-only", "real+synth"].iter().all(|m| {
            ["real", "synthetic"].iter().all(|t| {
                cells.iter().any(|c| c["model"] == *m && c["test"] == *t && !c["report"]["rows"].as_array().map_or(true, |r| r.is_empty()))
            })
        });
    let cell_text = cells
        .iter()
        .map(|c| {
            let rep: WerReport = serde_json::from_value(c["report"].clone()).unwrap();
            format!("{}/{} {:.2}", c["model"].as_str().unwrap_or("?"), c["test"].as_str().unwrap_or("?"), rep.wer())
        })
        .collect::<Vec<_>>()
        .join(", ");

    let mut manifests = BTreeMap::new();
    for (name, path) in [
        ("real", pre.join(outputs::REAL)),
        ("train", pre.join(outputs::TRAIN)),
        ("test", pre.join(outputs::TEST)),
        ("synth", synth.join(outputs::SYNTH)),
        ("synth_test", mm.join("synth_test").join("synth_test.jsonl")),
    ] {
        manifests.insert(name.to_string(), read(&path)?);
    }
    Ok(PipelineRun {
        synth_entries: Manifest::load(synth.join(outputs::SYNTH)).map_err(fail)?.len(),
        speech_entries: Manifest::load(&speech).map_err(fail)?.len(),
        hypotheses: read(&dec.join(outputs::HYPOTHESES))?,
        manifests,
        complete,
        cells: cell_text,
        elapsed: start.elapsed(),
    })
}

fn criterion_pipeline(corpus: &Path, root: &Path) -> (Outcome, Option<PipelineRun>) {
    match toy_pipeline(corpus, root, 9) {
        Err(e) => (Err(e), None),
        Ok(run) => {
            let secs = run.elapsed.as_secs_f64();
            let ok = run.complete && run.synth_entries == 2 * run.speech_entries && secs <= 1800.0;
            let detail = format!(
                "synthetic entries {} = 2·{}; 2×2 mismatch report complete: {} [{}]; {secs:.0}s (limit 1800s)",
                run.synth_entries, run.speech_entries, run.complete, run.cells
            );
            (Ok((ok, detail)), Some(run))
        }
    }
}

fn criterion_determinism(corpus: &Path, root: &Path, first: Option<&PipelineRun>) -> Outcome {
    let first = first.ok_or("criterion 9 did not produce a run to compare against")?;
    let second = toy_pipeline(corpus, root, 9)?;
    let differing: Vec<&String> = first.manifests.keys().filter(|k| first.manifests[*k] != second.manifests[*k]).collect();
    let same_hyp = first.hypotheses == second.hypotheses && !first.hypotheses.is_empty();
    Ok((
        differing.is_empty() && same_hyp,
        format!(
            "{} manifests compared, differing: {:?}; decode hypotheses identical: {same_hyp} ({} lines)",
            first.manifests.len(),
            differing,
            first.hypotheses.lines().count()
        ),
    ))
}

// ----------------------------------------------------------- criterion 11

fn criterion_averaging() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let mut r = rng(11);
    let mut tensors = BTreeMap::new();
    tensors.insert("a.weight".to_string(), uniform(&[4, 3], -1.0, 1.0, &mut r).to_dtype(DType::F32).map_err(fail)?);
    tensors.insert("b.bias".to_string(), uniform(&[7], -1e3, 1e3, &mut r).to_dtype(DType::F32).map_err(fail)?);
    let bits = |m: &BTreeMap<String, Tensor>| -> Vec<(String, Vec<u32>)> {
        m.iter()
            .map(|(k, t)| (k.clone(), t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|x| x.to_bits()).collect()))
            .collect()
    };

    let mut identical = true;
    for k in [1usize, 3, 10] {
        let paths: Vec<PathBuf> = (0..k).map(|i| dir.path().join(format!("same-{k}-{i}.safetensors"))).collect();
        for p in &paths {
            Checkpoint::new("recognizer", tensors.clone()).save(p).map_err(fail)?;
        }
        identical &= bits(&average_checkpoints(&paths).map_err(fail)?.tensors) == bits(&tensors);
    }

    let neg: BTreeMap<String, Tensor> = tensors.iter().map(|(k, t)| (k.clone(), t.neg().unwrap())).collect();
    let (pp, pn) = (dir.path().join("w.safetensors"), dir.path().join("neg.safetensors"));
    Checkpoint::new("recognizer", tensors.clone()).save(&pp).map_err(fail)?;
    Checkpoint::new("recognizer", neg).save(&pn).map_err(fail)?;
    let avg = average_checkpoints(&[pp, pn]).map_err(fail)?;
    let cancels = avg.tensors.values().all(|t| t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|x| *x == 0.0));

    let t0 = SystemTime::now() - Duration::from_secs(3600);
    let mut paths = Vec::new();
    for i in 0..12u64 {
        let p = dir.path().join(format!("epoch-{i:02}.safetensors"));
        Checkpoint::new("recognizer", tensors.clone()).save(&p).map_err(fail)?;
        let f = std::fs::File::options().write(true).open(&p).map_err(fail)?;
        f.set_modified(t0 + Duration::from_secs(60 * i)).map_err(fail)?;
        paths.push(p);
    }
    let mut shuffled = paths.clone();
    shuffled.reverse();
    shuffled.swap(0, 7);
    let chosen = select_last(&shuffled, 10).map_err(fail)?;
    let selection_ok = chosen == paths[2..];
    Ok((
        identical && cancels && selection_ok,
        format!("k identical bit-equal (k=1,3,10): {identical}; avg(w,−w)=0: {cancels}; last 10 of 12 by mtime: {selection_ok}"),
    ))
}

// ------------------------------------------------------------------ main

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().map_or(true, |o| o.contains(&n));
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let (ok, detail) = match outcome {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failures += 1;
        }
        println!("[{}] {n:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };

    let simple: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "ctc oracle", criterion_ctc),
        (2, "gradient suite", criterion_gradients),
        (3, "analytic loss points", criterion_analytic_points),
        (4, "generator contract", criterion_generator_contract),
        (5, "decoder factorization", criterion_decoder),
        (6, "wer oracle", criterion_wer),
        (7, "overfit smoke", criterion_overfit),
        (8, "lam smoke", criterion_lam),
    ];
    for (n, name, f) in simple {
        if wanted(n) {
            report(n, name, f());
        }
    }
    if wanted(9) || wanted(10) {
        let work = tempfile::tempdir().expect("temp dir");
        let corpus = work.path().join("corpus");
        match toy::generate(&corpus, &ToySpec::default()) {
            Err(e) => report(9, "pipeline + mismatch", Err(e.to_string())),
            Ok(_) => {
                let (outcome, run) = criterion_pipeline(&corpus, &work.path().join("runs-a"));
                if wanted(9) {
                    report(9, "pipeline + mismatch", outcome);
                }
                if wanted(10) {
                    report(10, "determinism", criterion_determinism(&corpus, &work.path().join("runs-b"), run.as_ref()));
                }
            }
        }
    }
    if wanted(11) {
        report(11, "checkpoint averaging", criterion_averaging());
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
