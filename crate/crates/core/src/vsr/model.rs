use candle_core::{DType, Device, Tensor};

use super::attention::key_padding_mask;
use super::config::VsrConfig;
use super::conformer::ConformerEncoder;
use super::ctc::ctc_loss;
use super::decoder::TransformerDecoder;
use super::frontend::Frontend;
use crate::error::{Error, Result};
use crate::media::{VideoClip, FRAME_SIZE};
use crate::nn::layers::{log_softmax, Linear};
use crate::nn::ParamStore;
use crate::tokenizer::{Specials, TokenSequence};

/// Converts a stored clip to a `(T, 96, 96)` tensor of [0, 1] intensities.
pub fn clip_tensor(clip: &VideoClip, dtype: DType) -> Result<Tensor> {
    let t = clip.num_frames();
    Ok(Tensor::from_vec(clip.to_unit_f32(), (t, FRAME_SIZE, FRAME_SIZE), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Intermediate representations of one batch.
pub struct VsrFeatureBundle {
    /// Front-end features `(B, T, D_f)`.
    pub z_f: Tensor,
    /// Encoder features `(B, T, D)`.
    pub z_e: Tensor,
    pub lengths: Vec<usize>,
    /// CTC logits `(B, T, V)`, blank included.
    pub ctc_logits: Tensor,
    /// Teacher-forced decoder logits `(B, L, V)` when targets were supplied.
    pub decoder_logits: Option<Tensor>,
}

/// Scalar loss terms of one batch; each is a per-utterance sum averaged
/// over the batch.
pub struct VsrLoss {
    pub total: Tensor,
    pub ctc: Tensor,
    pub ce: Tensor,
}

/// α·L_ctc + (1−α)·L_ce.
pub fn joint_loss(ce: &Tensor, ctc: &Tensor, alpha: f64) -> Result<Tensor> {
    Ok(((ctc * alpha)? + (ce * (1.0 - alpha))?)?)
}

/// Decoder inputs `[sos, y…]` and outputs `[y…, eos]` for teacher forcing.
pub fn teacher_forcing_pairs(targets: &[TokenSequence], specials: Specials) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    targets
        .iter()
        .map(|y| {
            let mut inp = vec![specials.sos];
            inp.extend_from_slice(y.ids());
            let mut out = y.ids().to_vec();
            out.push(specials.eos);
            (inp, out)
        })
        .unzip()
}

/// Sum over positions of `−log p(target)`, per row of `log_probs (B, L, V)`.
/// Targets shorter than `L` leave the remaining positions out.
pub fn sequence_nll(log_probs: &Tensor, targets: &[Vec<u32>]) -> Result<Tensor> {
    let (b, l, v) = log_probs.dims3()?;
    let mut onehot = vec![0f64; b * l * v];
    for (i, y) in targets.iter().enumerate() {
        if y.len() > l {
            return Err(Error::Shape(format!("target of {} tokens exceeds {l} decoder positions", y.len())));
        }
        for (j, &tok) in y.iter().enumerate() {
            if tok as usize >= v {
                return Err(Error::Tokenizer(format!("token id {tok} outside vocabulary of {v}")));
            }
            onehot[(i * l + j) * v + tok as usize] = 1.0;
        }
    }
    let onehot = Tensor::from_vec(onehot, (b, l, v), log_probs.device())?.to_dtype(log_probs.dtype())?;
    Ok((log_probs * onehot)?.sum(2)?.sum(1)?.neg()?)
}

/// Lip-reading recognizer: visual front-end, Conformer encoder, CTC head and
/// attention decoder.
#[derive(Clone)]
pub struct VsrModel {
    cfg: VsrConfig,
    store: ParamStore,
    specials: Specials,
    frontend: Frontend,
    encoder: ConformerEncoder,
    ctc_head: Linear,
    decoder: TransformerDecoder,
}

impl VsrModel {
    /// Builds the model, creating parameters in `store` (or claiming tensors
    /// previously loaded into it).
    pub fn new(cfg: &VsrConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let root = store.root();
        let frontend = Frontend::new(&root.pp("frontend"), &cfg.frontend)?;
        let e = &cfg.encoder;
        let encoder = ConformerEncoder::new(&root.pp("encoder"), frontend.feature_dim(), e)?;
        let ctc_head = Linear::new(&root.pp("ctc"), e.width, cfg.vocab_size)?;
        let decoder = TransformerDecoder::new(
            &root.pp("decoder"),
            cfg.vocab_size,
            e.width,
            e.heads,
            cfg.decoder_ff_width,
            cfg.decoder_depth,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            store: store.clone(),
            specials: Specials::default(),
            frontend,
            encoder,
            ctc_head,
            decoder,
        })
    }

    pub fn config(&self) -> &VsrConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn frontend(&self, clips: &[Tensor], train: bool) -> Result<(Tensor, Vec<usize>)> {
        self.frontend.forward(clips, train)
    }

    pub fn encode(&self, z_f: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        self.encoder.forward(z_f, lengths)
    }

    pub fn ctc_logits(&self, z_e: &Tensor) -> Result<Tensor> {
        self.ctc_head.forward(z_e)
    }

    /// Decoder logits `(B, L, V)` for each prefix (each beginning with sos;
    /// shorter prefixes are right-padded and their extra rows are meaningless).
    pub fn decoder_logits(&self, z_e: &Tensor, lengths: &[usize], prefixes: &[Vec<u32>]) -> Result<Tensor> {
        let (b, t, _) = z_e.dims3()?;
        if prefixes.len() != b {
            return Err(Error::Shape(format!("{} prefixes for a batch of {b}", prefixes.len())));
        }
        if let Some(p) = prefixes.iter().find(|p| p.first() != Some(&self.specials.sos)) {
            return Err(Error::Invalid(format!("decoder prefix {p:?} does not begin with sos")));
        }
        let l = prefixes.iter().map(Vec::len).max().unwrap_or(1);
        let ids: Vec<u32> = prefixes
            .iter()
            .flat_map(|p| p.iter().copied().chain(std::iter::repeat(self.specials.pad)).take(l))
            .collect();
        let ids = Tensor::from_vec(ids, (b, l), z_e.device())?;
        let mask = key_padding_mask(lengths, t, z_e.dtype(), z_e.device())?;
        self.decoder.forward(&ids, z_e, &mask)
    }

    /// Full forward pass; decoder logits are teacher-forced on `targets`.
    pub fn features(&self, clips: &[Tensor], targets: Option<&[TokenSequence]>, train: bool) -> Result<VsrFeatureBundle> {
        let (z_f, lengths) = self.frontend(clips, train)?;
        let z_e = self.encode(&z_f, &lengths)?;
        let ctc_logits = self.ctc_logits(&z_e)?;
        let decoder_logits = match targets {
            Some(targets) => {
                let (inputs, _) = teacher_forcing_pairs(targets, self.specials);
                Some(self.decoder_logits(&z_e, &lengths, &inputs)?)
            }
            None => None,
        };
        Ok(VsrFeatureBundle {
            z_f,
            z_e,
            lengths,
            ctc_logits,
            decoder_logits,
        })
    }

    pub fn loss(&self, clips: &[Tensor], targets: &[TokenSequence], train: bool) -> Result<VsrLoss> {
        if clips.len() != targets.len() {
            return Err(Error::Shape(format!("{} clips but {} transcripts", clips.len(), targets.len())));
        }
        let bundle = self.features(clips, Some(targets), train)?;
        let b = clips.len() as f64;
        let ctc_lp = log_softmax(&bundle.ctc_logits, 2)?;
        let ids: Vec<Vec<u32>> = targets.iter().map(|t| t.0.clone()).collect();
        let ctc = (ctc_loss(&ctc_lp, &ids, &bundle.lengths, self.specials.blank)?.sum_all()? / b)?;
        let (_, outputs) = teacher_forcing_pairs(targets, self.specials);
        let dec = bundle.decoder_logits.expect("targets supplied");
        let ce = (sequence_nll(&log_softmax(&dec, 2)?, &outputs)?.sum_all()? / b)?;
        let total = joint_loss(&ce, &ctc, self.cfg.ctc_weight)?;
        Ok(VsrLoss { total, ctc, ce })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::log_softmax;

    fn tiny(vocab: usize, depth: usize) -> VsrConfig {
        let mut c = VsrConfig::desk(vocab);
        c.frontend.stem_channels = 4;
        c.frontend.stage_channels = vec![4, 8];
        c.frontend.blocks_per_stage = vec![1, 1];
        c.encoder.depth = depth;
        c.encoder.width = 16;
        c.encoder.ff_width = 32;
        c.encoder.heads = 2;
        c.encoder.conv_kernel = 3;
        c.decoder_ff_width = 32;
        c
    }

    fn clip(t: usize, seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..t * FRAME_SIZE * FRAME_SIZE).map(|_| rng.random()).collect();
        Tensor::from_vec(v, (t, FRAME_SIZE, FRAME_SIZE), &Device::Cpu).unwrap()
    }

    #[test]
    fn desk_model_fits_parameter_budget() {
        let store = ParamStore::new(0, DType::F32);
        VsrModel::new(&VsrConfig::desk(64), &store).unwrap();
        let n = store.num_params();
        assert!(n <= 2_000_000, "{n} parameters");
    }

    #[test]
    fn frontend_preserves_frames() {
        let store = ParamStore::new(1, DType::F32);
        let m = VsrModel::new(&tiny(12, 1), &store).unwrap();
        for t in [1, 7] {
            let (z, lengths) = m.frontend(&[clip(t, t as u64)], false).unwrap();
            assert_eq!(z.dims(), &[1, t, 8]);
            assert_eq!(lengths, vec![t]);
        }
        let bad = Tensor::zeros((2, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(m.frontend(&[bad], false).is_err());
    }

    #[test]
    fn constant_clip_gives_constant_interior_features() {
        let store = ParamStore::new(2, DType::F32);
        let m = VsrModel::new(&tiny(12, 1), &store).unwrap();
        let c = Tensor::full(0.6f32, (9, FRAME_SIZE, FRAME_SIZE), &Device::Cpu).unwrap();
        let (z, _) = m.frontend(&[c], false).unwrap();
        let z = z.squeeze(0).unwrap().to_vec2::<f32>().unwrap();
        // frames 2..=6 see the full 5-frame temporal kernel
        for t in 3..=6 {
            for (a, b) in z[t].iter().zip(&z[2]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_depth_encoder_is_projection_and_shapes_hold() {
        let store = ParamStore::new(3, DType::F32);
        let m = VsrModel::new(&tiny(12, 0), &store).unwrap();
        let (z_f, lengths) = m.frontend(&[clip(4, 9)], false).unwrap();
        let z_e = m.encode(&z_f, &lengths).unwrap();
        let w = store.tensors()["encoder.proj.weight"].clone();
        let b = store.tensors()["encoder.proj.bias"].clone();
        let want = z_f.squeeze(0).unwrap().matmul(&w.t().unwrap()).unwrap().broadcast_add(&b).unwrap();
        let diff = (z_e.squeeze(0).unwrap() - want).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f32>().unwrap() < 1e-5);

        let store = ParamStore::new(3, DType::F32);
        let m = VsrModel::new(&tiny(12, 2), &store).unwrap();
        for t in [1, 7, 12] {
            let z = Tensor::randn(0f32, 1.0, (1, t, 8), &Device::Cpu).unwrap();
            assert_eq!(m.encode(&z, &[t]).unwrap().dims(), &[1, t, 16]);
        }
    }

    #[test]
    fn shuffling_frames_changes_encoding() {
        let store = ParamStore::new(4, DType::F64);
        let m = VsrModel::new(&tiny(12, 1), &store).unwrap();
        let z = Tensor::randn(0f64, 1.0, (1, 6, 8), &Device::Cpu).unwrap();
        let perm = Tensor::new(&[3u32, 0, 5, 1, 4, 2], &Device::Cpu).unwrap();
        let shuffled = z.index_select(&perm, 1).unwrap();
        let a = m.encode(&z, &[6]).unwrap().index_select(&perm, 1).unwrap();
        let b = m.encode(&shuffled, &[6]).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff > 1e-6);
    }

    #[test]
    fn padding_does_not_leak_into_valid_frames() {
        let store = ParamStore::new(5, DType::F64);
        let m = VsrModel::new(&tiny(12, 2), &store).unwrap();
        let z = Tensor::randn(0f64, 1.0, (1, 5, 8), &Device::Cpu).unwrap();
        let alone = m.encode(&z, &[5]).unwrap();
        let noise = Tensor::randn(0f64, 1.0, (1, 3, 8), &Device::Cpu).unwrap();
        let padded = Tensor::cat(&[&z, &noise], 1).unwrap();
        let batched = m.encode(&padded, &[5]).unwrap().narrow(1, 0, 5).unwrap();
        let diff = (alone - batched).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn decoder_rows_normalize_and_prefix_must_start_with_sos() {
        let store = ParamStore::new(6, DType::F64);
        let m = VsrModel::new(&tiny(12, 1), &store).unwrap();
        let z_e = Tensor::randn(0f64, 1.0, (1, 4, 16), &Device::Cpu).unwrap();
        let logits = m.decoder_logits(&z_e, &[4], &[vec![2]]).unwrap();
        assert_eq!(logits.dims(), &[1, 1, 12]);
        let p = log_softmax(&logits, 2).unwrap().exp().unwrap().sum(2).unwrap();
        assert!((p.flatten_all().unwrap().to_vec1::<f64>().unwrap()[0] - 1.0).abs() < 1e-9);
        assert!(m.decoder_logits(&z_e, &[4], &[vec![5]]).is_err());
        assert!(m.decoder_logits(&z_e, &[4], &[vec![2, 40]]).is_err());
    }

    #[test]
    fn joint_loss_points() {
        let s = |v: f64| Tensor::new(v, &Device::Cpu).unwrap();
        let f = |t: Tensor| t.to_scalar::<f64>().unwrap();
        assert_eq!(f(joint_loss(&s(2.0), &s(5.0), 0.0).unwrap()), 2.0);
        assert_eq!(f(joint_loss(&s(2.0), &s(5.0), 1.0).unwrap()), 5.0);
        assert!((f(joint_loss(&s(2.0), &s(5.0), 0.1).unwrap()) - 2.3).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_is_finite_and_averaged() {
        let store = ParamStore::new(7, DType::F32);
        let m = VsrModel::new(&tiny(12, 1), &store).unwrap();
        let clips = [clip(6, 1), clip(4, 2)];
        let targets = [TokenSequence(vec![5, 6]), TokenSequence(vec![7])];
        let both = m.loss(&clips, &targets, false).unwrap();
        let one = m.loss(&clips[..1], &targets[..1], false).unwrap();
        let two = m.loss(&clips[1..], &targets[1..], false).unwrap();
        let v = |t: &Tensor| t.to_scalar::<f32>().unwrap();
        assert!(((v(&one.ce) + v(&two.ce)) / 2.0 - v(&both.ce)).abs() < 1e-3);
        assert!(((v(&one.ctc) + v(&two.ctc)) / 2.0 - v(&both.ctc)).abs() < 1e-3);
    }
}
