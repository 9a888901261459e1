use candle_core::{DType, Device, Tensor};

use super::config::GeneratorConfig;
use crate::error::{Error, Result};
use crate::media::{RotationSequence, SpeechChunks, VideoClip, FRAME_SIZE};
use crate::nn::layers::{leaky_relu, relu, sigmoid, upsample2x, BatchNorm, Conv1d, Conv2d, Gru};
use crate::nn::conv::conv2d;
use crate::nn::{Init, Scope};

/// Spatial size of the image-encoder features that seed the frame decoder.
pub const SEED_SIZE: usize = 6;

#[derive(Clone)]
struct ImageEncoder {
    convs: Vec<(Conv2d, BatchNorm)>,
    head: Conv2d,
}

impl ImageEncoder {
    fn new(s: &Scope, cfg: &GeneratorConfig) -> Result<Self> {
        let ch = cfg.image_channels();
        let mut convs = Vec::new();
        let mut inp = 1;
        for (i, &c) in ch[..4].iter().enumerate() {
            convs.push((
                Conv2d::new(&s.pp(format!("conv{i}")), inp, c, 4, 2, 1, false)?,
                BatchNorm::new(&s.pp(format!("bn{i}")), c)?,
            ));
            inp = c;
        }
        let head = Conv2d::new(&s.pp("conv4"), inp, ch[4], SEED_SIZE, 1, 0, true)?;
        Ok(Self { convs, head })
    }

    /// `(N, 1, 96, 96)` in [−1, 1] → (`z_i (N, C)`, penultimate `(N, C4, 6, 6)`).
    fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        for (conv, bn) in &self.convs {
            h = relu(&bn.forward(&conv.forward(&h)?, train)?)?;
        }
        let z = self.head.forward(&h)?.tanh()?.flatten_from(1)?;
        Ok((z, h))
    }
}

/// Kernel, stride, padding of the speech encoder convolutions.
const SPEECH_LAYERS: [(usize, usize, usize); 6] = [(80, 16, 32), (4, 2, 1), (4, 2, 1), (4, 2, 1), (10, 5, 3), (5, 1, 0)];

#[derive(Clone)]
struct SpeechEncoder {
    convs: Vec<(Conv1d, Option<BatchNorm>)>,
    gru: Gru,
}

impl SpeechEncoder {
    fn new(s: &Scope, cfg: &GeneratorConfig) -> Result<Self> {
        let (ch, hidden) = cfg.speech_channels();
        let mut convs = Vec::new();
        let mut inp = 1;
        for (i, (&(k, st, p), &c)) in SPEECH_LAYERS.iter().zip(&ch).enumerate() {
            let last = i + 1 == SPEECH_LAYERS.len();
            let bn = if last { None } else { Some(BatchNorm::new(&s.pp(format!("bn{i}")), c)?) };
            convs.push((Conv1d::new(&s.pp(format!("conv{i}")), inp, c, k, st, p, last)?, bn));
            inp = c;
        }
        Ok(Self {
            convs,
            gru: Gru::new(&s.pp("gru"), inp, hidden, 2)?,
        })
    }

    /// Chunks `(n, L)` → one embedding per chunk `(n, H)`; the recurrent
    /// state runs across the chunks of the clip.
    fn forward(&self, chunks: &Tensor, train: bool) -> Result<Tensor> {
        let (n, len) = chunks.dims2()?;
        let mut h = chunks.reshape((n, 1, len))?;
        for (conv, bn) in &self.convs {
            h = conv.forward(&h)?;
            h = match bn {
                Some(bn) => relu(&bn.forward(&h, train)?)?,
                None => h.tanh()?,
            };
        }
        // 3200-sample chunks reduce to length 1; other chunk lengths are averaged
        let h = h.mean(2)?;
        let c = h.dim(1)?;
        Ok(self.gru.forward(&h.reshape((1, n, c))?)?.squeeze(0)?)
    }
}

/// Convolution whose input channels are scaled by a per-sample style and
/// whose outputs are optionally demodulated to unit expected variance.
#[derive(Clone)]
struct ModConv {
    affine_w: Tensor,
    affine_b: Tensor,
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    demodulate: bool,
}

impl ModConv {
    fn new(s: &Scope, style_dim: usize, inp: usize, out: usize, k: usize, demodulate: bool) -> Result<Self> {
        Ok(Self {
            affine_w: s.param("affine.weight", &[inp, style_dim], Init::FanIn(style_dim))?,
            affine_b: s.param("affine.bias", &[inp], Init::Const(1.0))?,
            weight: s.param("weight", &[out, inp, k, k], Init::FanIn(inp * k * k))?,
            bias: s.param("bias", &[out], Init::Const(0.0))?,
            padding: k / 2,
            demodulate,
        })
    }

    fn forward(&self, x: &Tensor, style: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = x.dims4()?;
        let s = style.matmul(&self.affine_w.t()?)?.broadcast_add(&self.affine_b)?;
        let xs = x.broadcast_mul(&s.reshape((n, c, 1, 1))?)?;
        let mut y = conv2d(&xs, &self.weight, (1, 1), (self.padding, self.padding))?;
        let o = self.weight.dim(0)?;
        if self.demodulate {
            // Σ_{c,k} (w·s)² = s² · Σ_k w²
            let w2 = self.weight.sqr()?.sum(3)?.sum(2)?;
            let d = (s.sqr()?.matmul(&w2.t()?)? + 1e-8)?.sqrt()?.recip()?;
            y = y.broadcast_mul(&d.reshape((n, o, 1, 1))?)?;
        }
        Ok(y.broadcast_add(&self.bias.reshape((1, o, 1, 1))?)?)
    }
}

#[derive(Clone)]
struct DecoderStage {
    conv_a: ModConv,
    conv_b: ModConv,
    to_gray: ModConv,
}

/// Style-modulated frame decoder seeded with the image-encoder features;
/// each stage doubles the resolution and adds to a skip-connected output.
#[derive(Clone)]
struct FrameDecoder {
    seed_conv: ModConv,
    seed_gray: ModConv,
    stages: Vec<DecoderStage>,
}

impl FrameDecoder {
    fn new(s: &Scope, cfg: &GeneratorConfig) -> Result<Self> {
        let sd = cfg.style_dim();
        let img = cfg.image_channels();
        let c_seed = img[3];
        let chans = [img[3], img[2], img[1], img[0], cfg.ch(32)];
        let mut stages = Vec::new();
        for i in 0..4 {
            let st = s.pp(format!("stage{i}"));
            stages.push(DecoderStage {
                conv_a: ModConv::new(&st.pp("conv_a"), sd, chans[i], chans[i + 1], 3, true)?,
                conv_b: ModConv::new(&st.pp("conv_b"), sd, chans[i + 1], chans[i + 1], 3, true)?,
                to_gray: ModConv::new(&st.pp("to_gray"), sd, chans[i + 1], 1, 1, false)?,
            });
        }
        Ok(Self {
            seed_conv: ModConv::new(&s.pp("seed_conv"), sd, c_seed, c_seed, 3, true)?,
            seed_gray: ModConv::new(&s.pp("seed_gray"), sd, c_seed, 1, 1, false)?,
            stages,
        })
    }

    fn forward(&self, seed: &Tensor, style: &Tensor) -> Result<Tensor> {
        let mut x = leaky_relu(&self.seed_conv.forward(seed, style)?, 0.2)?;
        let mut gray = self.seed_gray.forward(&x, style)?;
        for st in &self.stages {
            x = upsample2x(&x)?;
            x = leaky_relu(&st.conv_a.forward(&x, style)?, 0.2)?;
            x = leaky_relu(&st.conv_b.forward(&x, style)?, 0.2)?;
            gray = (upsample2x(&gray)? + st.to_gray.forward(&x, style)?)?;
        }
        sigmoid(&gray)
    }
}

/// Speech-driven lip animation generator: one output frame per speech chunk,
/// conditioned on an identity frame and per-frame head rotations.
#[derive(Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    image: ImageEncoder,
    speech: SpeechEncoder,
    decoder: FrameDecoder,
    dtype: DType,
}

impl Generator {
    pub fn new(s: &Scope, cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            image: ImageEncoder::new(&s.pp("image_encoder"), cfg)?,
            speech: SpeechEncoder::new(&s.pp("speech_encoder"), cfg)?,
            decoder: FrameDecoder::new(&s.pp("frame_decoder"), cfg)?,
            dtype: s.dtype(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Identity frame `(96, 96)` in [0, 1], speech chunks `(n, L)` and
    /// flattened rotations `(n, 9)` → frames `(n, 96, 96)` in [0, 1].
    pub fn forward(&self, first_frame: &Tensor, chunks: &Tensor, rotations: &Tensor, train: bool) -> Result<Tensor> {
        let (n, _) = chunks.dims2()?;
        let (nr, nine) = rotations.dims2()?;
        if nr != n || nine != 9 {
            return Err(Error::Shape(format!(
                "{n} speech chunks but rotations of shape ({nr}, {nine}); need one 3×3 rotation per chunk"
            )));
        }
        let img = ((first_frame.to_dtype(self.dtype)?.reshape((1, 1, FRAME_SIZE, FRAME_SIZE))? * 2.0)? - 1.0)?;
        let (z_i, seed) = self.image.forward(&img, train)?;
        let z_s = self.speech.forward(&chunks.to_dtype(self.dtype)?, train)?;
        let zi = z_i.broadcast_as((n, z_i.dim(1)?))?;
        let style = Tensor::cat(&[zi.contiguous()?, z_s, rotations.to_dtype(self.dtype)?], 1)?;
        let (_, c, h, w) = seed.dims4()?;
        let seed = seed.broadcast_as((n, c, h, w))?.contiguous()?;
        Ok(self.decoder.forward(&seed, &style)?.reshape((n, FRAME_SIZE, FRAME_SIZE))?)
    }

    /// Generates one frame per speech chunk in inference mode.
    pub fn generate(&self, first_frame: &[u8], speech: &SpeechChunks, rotations: &RotationSequence, fps: f32) -> Result<VideoClip> {
        let n = speech.count();
        if rotations.len() != n {
            return Err(Error::Shape(format!(
                "rotation sequence has {} entries but speech has {n} chunks",
                rotations.len()
            )));
        }
        if first_frame.len() != FRAME_SIZE * FRAME_SIZE {
            return Err(Error::Shape(format!(
                "identity frame has {} pixels, expected {}",
                first_frame.len(),
                FRAME_SIZE * FRAME_SIZE
            )));
        }
        let dev = Device::Cpu;
        let frame: Vec<f32> = first_frame.iter().map(|&p| p as f32 / 255.0).collect();
        let frame = Tensor::from_vec(frame, (FRAME_SIZE, FRAME_SIZE), &dev)?;
        let chunks = Tensor::from_vec(speech.as_slice().to_vec(), (n, speech.chunk_len()), &dev)?;
        let rot = Tensor::from_vec(rotations.flatten(), (n, 9), &dev)?;
        let out = self.forward(&frame, &chunks, &rot, false)?;
        let values = out.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        VideoClip::from_unit_f32(&values, fps)
    }
}
