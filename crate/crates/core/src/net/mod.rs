//! Speaker-conditioned mask estimation.
//!
//! Two conditioning schemes share one code path for storage, training and
//! checkpointing:
//!
//! * **Concat**: an auxiliary BLSTM → ReLU → linear stack maps the enrollment
//!   magnitude to per-frame vectors whose mean over frames is the speaker
//!   embedding. The mask network runs BLSTM → [activation ‖ embedding] →
//!   ReLU → BLSTM → ReLU → sigmoid.
//! * **Adapt**: a frame-wise ReLU → ReLU → linear auxiliary net yields one
//!   weight per sub-layer (averaged over frames). After the first BLSTM the
//!   mask network sums K affine sub-layers weighted by those values,
//!   rectifies, then applies ReLU → ReLU → sigmoid.
//!
//! Gradients are derived by hand; `backward` covers the mask network and
//! continues through the pooled conditioning vector into the auxiliary net.

mod checkpoint;
mod lstm;
mod params;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::losses::{self, LossKind, LossTargets, LossWeights};
use crate::masks::Mask;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use lstm::lstm_param_count;
pub use params::{Gradients, Init, Layout, TensorId, TensorSpec};

use lstm::{blstm_backward, blstm_forward, BlstmCache, BlstmIds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Concat,
    Adapt,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Concat => "concat",
            Mode::Adapt => "adapt",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Mode::Concat),
            "adapt" => Ok(Mode::Adapt),
            other => Err(Error::InvalidConfig(format!("unknown network mode {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Desk,
    Paper,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub mode: Mode,
    /// Auxiliary network width (BLSTM cells per direction in concat mode,
    /// feed-forward units in adapt mode).
    pub aux_hidden: usize,
    /// Mask network width (BLSTM cells per direction and feed-forward units).
    pub mask_hidden: usize,
    pub embed_dim: usize,
    pub n_bins: usize,
    /// Adaptation sub-layer count; adapt mode only.
    pub n_sublayers: usize,
    pub scale_preset: ScalePreset,
}

impl NetConfig {
    pub fn desk(mode: Mode) -> Self {
        Self {
            mode,
            aux_hidden: 32,
            mask_hidden: 64,
            embed_dim: 30,
            n_bins: 129,
            n_sublayers: 30,
            scale_preset: ScalePreset::Desk,
        }
    }

    pub fn paper(mode: Mode) -> Self {
        Self {
            mode,
            aux_hidden: match mode {
                Mode::Concat => 256,
                Mode::Adapt => 512,
            },
            mask_hidden: 512,
            embed_dim: 30,
            n_bins: 129,
            n_sublayers: 30,
            scale_preset: ScalePreset::Paper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.aux_hidden == 0 || self.mask_hidden == 0 || self.n_bins == 0 {
            return bad("network sizes must be positive");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if self.mode == Mode::Adapt && self.embed_dim != self.n_sublayers {
            return bad("adapt mode needs embed_dim == n_sublayers");
        }
        Ok(())
    }

    /// Conditioning vector length produced by the auxiliary network.
    pub fn cond_dim(&self) -> usize {
        match self.mode {
            Mode::Concat => self.embed_dim,
            Mode::Adapt => self.n_sublayers,
        }
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        build(self).0.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseIds {
    w: TensorId,
    b: TensorId,
}

impl DenseIds {
    fn register(layout: &mut Layout, prefix: &str, input: usize, output: usize) -> Self {
        Self {
            w: layout.weight(format!("{prefix}.w"), input, output),
            b: layout.bias(format!("{prefix}.b"), output),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConcatIds {
    aux_rnn: BlstmIds,
    aux_hidden: DenseIds,
    aux_embed: DenseIds,
    rnn1: BlstmIds,
    hidden1: DenseIds,
    rnn2: BlstmIds,
    hidden2: DenseIds,
    out: DenseIds,
}

#[derive(Debug, Clone, Copy)]
struct AdaptIds {
    aux_hidden1: DenseIds,
    aux_hidden2: DenseIds,
    aux_weights: DenseIds,
    rnn1: BlstmIds,
    /// K×2H×H sub-layer weights and K×H sub-layer biases.
    adapt_w: TensorId,
    adapt_b: TensorId,
    hidden1: DenseIds,
    hidden2: DenseIds,
    out: DenseIds,
}

#[derive(Debug, Clone, Copy)]
enum Arch {
    Concat(ConcatIds),
    Adapt(AdaptIds),
}

fn build(cfg: &NetConfig) -> (Layout, Arch) {
    let mut l = Layout::default();
    let (ha, hm, f) = (cfg.aux_hidden, cfg.mask_hidden, cfg.n_bins);
    let arch = match cfg.mode {
        Mode::Concat => {
            let aux_rnn = BlstmIds::register(&mut l, "aux.blstm", f, ha);
            let aux_hidden = DenseIds::register(&mut l, "aux.hidden", 2 * ha, ha);
            let aux_embed = DenseIds::register(&mut l, "aux.embed", ha, cfg.embed_dim);
            let rnn1 = BlstmIds::register(&mut l, "mask.blstm1", f, hm);
            let hidden1 = DenseIds::register(&mut l, "mask.hidden1", 2 * hm + cfg.embed_dim, hm);
            let rnn2 = BlstmIds::register(&mut l, "mask.blstm2", hm, hm);
            let hidden2 = DenseIds::register(&mut l, "mask.hidden2", 2 * hm, hm);
            let out = DenseIds::register(&mut l, "mask.out", hm, f);
            Arch::Concat(ConcatIds {
                aux_rnn,
                aux_hidden,
                aux_embed,
                rnn1,
                hidden1,
                rnn2,
                hidden2,
                out,
            })
        }
        Mode::Adapt => {
            let k = cfg.n_sublayers;
            let aux_hidden1 = DenseIds::register(&mut l, "aux.hidden1", f, ha);
            let aux_hidden2 = DenseIds::register(&mut l, "aux.hidden2", ha, ha);
            let aux_weights = DenseIds::register(&mut l, "aux.weights", ha, k);
            let rnn1 = BlstmIds::register(&mut l, "mask.blstm", f, hm);
            let adapt_w = l.add(
                "mask.adapt.w",
                &[k, 2 * hm, hm],
                Init::Glorot { fan_in: 2 * hm, fan_out: hm },
            );
            let adapt_b = l.add(
                "mask.adapt.b",
                &[k, hm],
                Init::Constant { value: 0.0, start: 0, len: 0 },
            );
            let hidden1 = DenseIds::register(&mut l, "mask.hidden1", hm, hm);
            let hidden2 = DenseIds::register(&mut l, "mask.hidden2", hm, hm);
            let out = DenseIds::register(&mut l, "mask.out", hm, f);
            Arch::Adapt(AdaptIds {
                aux_hidden1,
                aux_hidden2,
                aux_weights,
                rnn1,
                adapt_w,
                adapt_b,
                hidden1,
                hidden2,
                out,
            })
        }
    };
    (l, arch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding(pub Vec<f64>);

/// Output of the auxiliary network, matched to the mask network's mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    Embedding(SpeakerEmbedding),
    AdaptWeights(Vec<f64>),
}

impl Conditioning {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Conditioning::Embedding(e) => &e.0,
            Conditioning::AdaptWeights(w) => w,
        }
    }
}

/// Inputs and supervision for one utterance.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub mix_mag: &'a Array2<f64>,
    pub enroll_mag: &'a Array2<f64>,
    pub psm: &'a Array2<f64>,
    pub ibm: &'a Array2<f64>,
}

impl<'a> Sample<'a> {
    pub fn targets(&self) -> LossTargets<'a> {
        LossTargets {
            mix_mag: self.mix_mag,
            psm: self.psm,
            ibm: self.ibm,
        }
    }
}

enum AuxCache {
    Concat { rnn: BlstmCache, hidden: Array2<f64> },
    Adapt { h1: Array2<f64>, h2: Array2<f64> },
}

enum MaskCache {
    Concat {
        rnn1: BlstmCache,
        cat: Array2<f64>,
        a1: Array2<f64>,
        rnn2: BlstmCache,
        a2: Array2<f64>,
    },
    Adapt {
        rnn1: BlstmCache,
        pre: Array2<f64>,
        adapted: Array2<f64>,
        a1: Array2<f64>,
        a2: Array2<f64>,
    },
}

/// Activations retained for one utterance's backward pass.
pub struct ForwardPass {
    aux: Option<AuxCache>,
    mask_cache: MaskCache,
    pub cond: Conditioning,
    pub mask: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: NetConfig,
    layout: Layout,
    arch: Arch,
    pub params: Vec<f64>,
    pub seed: u64,
}

fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

fn relu_grad(mut dy: Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    ndarray::Zip::from(&mut dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dy
}

fn sigmoid(z: f64) -> f64 {
    // ±30 keeps the output strictly inside (0, 1) in f64
    1.0 / (1.0 + (-z.clamp(-30.0, 30.0)).exp())
}

fn check_input(x: &Array2<f64>, n_bins: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if x.ncols() != n_bins {
        return Err(Error::ShapeMismatch(x.shape().to_vec(), vec![x.nrows(), n_bins]));
    }
    Ok(())
}

impl Model {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, arch) = build(&config);
        let params = layout.initialize(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            config,
            layout,
            arch,
            params,
            seed,
        })
    }

    fn new_uninit(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, arch) = build(&config);
        let params = vec![0.0; layout.len()];
        Ok(Self {
            config,
            layout,
            arch,
            params,
            seed,
        })
    }

    /// Model with the given parameter values; lengths must match the layout.
    pub fn from_params(config: NetConfig, params: Vec<f64>, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, arch) = build(&config);
        if params.len() != layout.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            arch,
            params,
            seed,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros(self.layout.len())
    }

    fn dense(&self, x: ArrayView2<f64>, d: &DenseIds) -> Array2<f64> {
        affine(
            x,
            self.layout.view2(&self.params, d.w),
            self.layout.view1(&self.params, d.b),
        )
    }

    fn dense_backward(
        &self,
        x: ArrayView2<f64>,
        d: &DenseIds,
        dy: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let mut dw = self.layout.view2_mut(&mut grads.values, d.w);
        dw += &x.t().dot(dy);
        let mut db = self.layout.view1_mut(&mut grads.values, d.b);
        db += &dy.sum_axis(Axis(0));
        dy.dot(&self.layout.view2(&self.params, d.w).t())
    }

    /// Per-frame auxiliary outputs before mean pooling, plus cached activations.
    fn aux_frames(&self, enroll: &Array2<f64>) -> Result<(Array2<f64>, AuxCache)> {
        check_input(enroll, self.config.n_bins)?;
        Ok(match &self.arch {
            Arch::Concat(ids) => {
                let rnn = blstm_forward(enroll.view(), &self.layout, &self.params, &ids.aux_rnn);
                let hidden = relu(self.dense(rnn.out.view(), &ids.aux_hidden));
                let q = self.dense(hidden.view(), &ids.aux_embed);
                (q, AuxCache::Concat { rnn, hidden })
            }
            Arch::Adapt(ids) => {
                let h1 = relu(self.dense(enroll.view(), &ids.aux_hidden1));
                let h2 = relu(self.dense(h1.view(), &ids.aux_hidden2));
                let q = self.dense(h2.view(), &ids.aux_weights);
                (q, AuxCache::Adapt { h1, h2 })
            }
        })
    }

    fn aux_forward_cached(&self, enroll: &Array2<f64>) -> Result<(Conditioning, AuxCache)> {
        let (q, cache) = self.aux_frames(enroll)?;
        let pooled = mean_pool(&q).to_vec();
        let cond = match self.config.mode {
            Mode::Concat => Conditioning::Embedding(SpeakerEmbedding(pooled)),
            Mode::Adapt => Conditioning::AdaptWeights(pooled),
        };
        Ok((cond, cache))
    }

    /// Auxiliary network output for this model's mode.
    pub fn aux_forward(&self, enroll_mag: &Array2<f64>) -> Result<Conditioning> {
        self.aux_forward_cached(enroll_mag).map(|(c, _)| c)
    }

    /// Speaker embedding from an enrollment magnitude (concat mode).
    pub fn aux_forward_concat(&self, enroll_mag: &Array2<f64>) -> Result<SpeakerEmbedding> {
        match self.aux_forward(enroll_mag)? {
            Conditioning::Embedding(e) => Ok(e),
            Conditioning::AdaptWeights(_) => Err(Error::ConditioningMismatch(self.config.mode.name())),
        }
    }

    /// Sub-layer weights from an enrollment magnitude (adapt mode).
    pub fn aux_forward_adapt(&self, enroll_mag: &Array2<f64>) -> Result<Vec<f64>> {
        match self.aux_forward(enroll_mag)? {
            Conditioning::AdaptWeights(w) => Ok(w),
            Conditioning::Embedding(_) => Err(Error::ConditioningMismatch(self.config.mode.name())),
        }
    }

    /// Auxiliary outputs for each enrollment frame, before pooling.
    pub fn aux_frame_outputs(&self, enroll_mag: &Array2<f64>) -> Result<Array2<f64>> {
        self.aux_frames(enroll_mag).map(|(q, _)| q)
    }

    fn check_cond(&self, cond: &Conditioning) -> Result<()> {
        let ok = matches!(
            (self.config.mode, cond),
            (Mode::Concat, Conditioning::Embedding(_)) | (Mode::Adapt, Conditioning::AdaptWeights(_))
        );
        if !ok || cond.as_slice().len() != self.config.cond_dim() {
            return Err(Error::ConditioningMismatch(self.config.mode.name()));
        }
        Ok(())
    }

    /// Weighted sub-layer sum before rectification: `Σ_k α_k (h·U_k + c_k)`.
    pub fn adaptation_preactivation(&self, h: ArrayView2<f64>, alpha: &[f64]) -> Result<Array2<f64>> {
        let Arch::Adapt(ids) = &self.arch else {
            return Err(Error::ConditioningMismatch(self.config.mode.name()));
        };
        if alpha.len() != self.config.n_sublayers {
            return Err(Error::ConditioningMismatch(self.config.mode.name()));
        }
        let (u_mix, c_mix) = self.mixed_sublayer(ids, alpha);
        Ok(affine(h, u_mix.view(), c_mix.view()))
    }

    /// One affine sub-layer `h·U_k + c_k` (adapt mode).
    pub fn sublayer(&self, h: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
        let Arch::Adapt(ids) = &self.arch else {
            return Err(Error::ConditioningMismatch(self.config.mode.name()));
        };
        let u = self.layout.view3(&self.params, ids.adapt_w);
        let c = self.layout.view2(&self.params, ids.adapt_b);
        Ok(affine(h, u.index_axis(Axis(0), k), c.row(k)))
    }

    fn mixed_sublayer(&self, ids: &AdaptIds, alpha: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let u = self.layout.view3(&self.params, ids.adapt_w);
        let c = self.layout.view2(&self.params, ids.adapt_b);
        let (_, rows, cols) = u.dim();
        let mut u_mix = Array2::zeros((rows, cols));
        let mut c_mix = Array1::zeros(cols);
        for (k, &a) in alpha.iter().enumerate() {
            u_mix.scaled_add(a, &u.index_axis(Axis(0), k));
            c_mix.scaled_add(a, &c.row(k));
        }
        (u_mix, c_mix)
    }

    fn output_layer(&self, a2: &Array2<f64>, out: &DenseIds) -> Array2<f64> {
        self.dense(a2.view(), out).mapv(sigmoid)
    }

    fn mask_forward_cached(&self, mix: &Array2<f64>, cond: &Conditioning) -> Result<(Array2<f64>, MaskCache)> {
        check_input(mix, self.config.n_bins)?;
        self.check_cond(cond)?;
        let v = cond.as_slice();
        Ok(match &self.arch {
            Arch::Concat(ids) => {
                let rnn1 = blstm_forward(mix.view(), &self.layout, &self.params, &ids.rnn1);
                let t_len = mix.nrows();
                let width = rnn1.out.ncols();
                let mut cat = Array2::zeros((t_len, width + v.len()));
                cat.slice_mut(s![.., ..width]).assign(&rnn1.out);
                cat.slice_mut(s![.., width..])
                    .assign(&ArrayView1::from(v).broadcast((t_len, v.len())).expect("broadcast rows"));
                let a1 = relu(self.dense(cat.view(), &ids.hidden1));
                let rnn2 = blstm_forward(a1.view(), &self.layout, &self.params, &ids.rnn2);
                let a2 = relu(self.dense(rnn2.out.view(), &ids.hidden2));
                let m = self.output_layer(&a2, &ids.out);
                (m, MaskCache::Concat { rnn1, cat, a1, rnn2, a2 })
            }
            Arch::Adapt(ids) => {
                let rnn1 = blstm_forward(mix.view(), &self.layout, &self.params, &ids.rnn1);
                let (u_mix, c_mix) = self.mixed_sublayer(ids, v);
                let pre = affine(rnn1.out.view(), u_mix.view(), c_mix.view());
                let adapted = relu(pre.clone());
                let a1 = relu(self.dense(adapted.view(), &ids.hidden1));
                let a2 = relu(self.dense(a1.view(), &ids.hidden2));
                let m = self.output_layer(&a2, &ids.out);
                (m, MaskCache::Adapt { rnn1, pre, adapted, a1, a2 })
            }
        })
    }

    /// Mask for `mix_mag` given the auxiliary network's conditioning output.
    pub fn mask_forward(&self, mix_mag: &Array2<f64>, cond: &Conditioning) -> Result<Mask> {
        self.mask_forward_cached(mix_mag, cond).map(|(m, _)| Mask(m))
    }

    /// Inference: enrollment → conditioning → mask.
    pub fn infer(&self, mix_mag: &Array2<f64>, enroll_mag: &Array2<f64>) -> Result<Mask> {
        let cond = self.aux_forward(enroll_mag)?;
        self.mask_forward(mix_mag, &cond)
    }

    pub fn forward(&self, mix_mag: &Array2<f64>, enroll_mag: &Array2<f64>) -> Result<ForwardPass> {
        let (cond, aux) = self.aux_forward_cached(enroll_mag)?;
        let (mask, mask_cache) = self.mask_forward_cached(mix_mag, &cond)?;
        Ok(ForwardPass {
            aux: Some(aux),
            mask_cache,
            cond,
            mask,
        })
    }

    /// Mask-network pass with externally supplied conditioning; its backward
    /// pass stops at the conditioning vector.
    pub fn forward_conditioned(&self, mix_mag: &Array2<f64>, cond: Conditioning) -> Result<ForwardPass> {
        let (mask, mask_cache) = self.mask_forward_cached(mix_mag, &cond)?;
        Ok(ForwardPass {
            aux: None,
            mask_cache,
            cond,
            mask,
        })
    }

    /// Gradients of a loss wrt every parameter, given `d_mask = ∂loss/∂mask`.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        mix_mag: &Array2<f64>,
        enroll_mag: &Array2<f64>,
        d_mask: &Array2<f64>,
    ) -> Gradients {
        self.backward_with_cond(pass, mix_mag, enroll_mag, d_mask).0
    }

    /// Like [`Model::backward`], also returning `∂loss/∂conditioning`.
    pub fn backward_with_cond(
        &self,
        pass: &ForwardPass,
        mix_mag: &Array2<f64>,
        enroll_mag: &Array2<f64>,
        d_mask: &Array2<f64>,
    ) -> (Gradients, Vec<f64>) {
        let mut g = self.zero_gradients();
        let m = &pass.mask;
        let d_logit = ndarray::Zip::from(d_mask)
            .and(m)
            .map_collect(|&d, &y| d * y * (1.0 - y));
        let d_cond: Array1<f64> = match (&self.arch, &pass.mask_cache) {
            (Arch::Concat(ids), MaskCache::Concat { rnn1, cat, a1, rnn2, a2 }) => {
                let d_a2 = self.dense_backward(a2.view(), &ids.out, &d_logit, &mut g);
                let d_a2 = relu_grad(d_a2, a2);
                let d_h2 = self.dense_backward(rnn2.out.view(), &ids.hidden2, &d_a2, &mut g);
                let d_a1 = blstm_backward(rnn2, a1.view(), &self.layout, &self.params, &ids.rnn2, d_h2.view(), &mut g);
                let d_a1 = relu_grad(d_a1, a1);
                let d_cat = self.dense_backward(cat.view(), &ids.hidden1, &d_a1, &mut g);
                let width = rnn1.out.ncols();
                let d_h1 = d_cat.slice(s![.., ..width]);
                blstm_backward(rnn1, mix_mag.view(), &self.layout, &self.params, &ids.rnn1, d_h1, &mut g);
                d_cat.slice(s![.., width..]).sum_axis(Axis(0))
            }
            (Arch::Adapt(ids), MaskCache::Adapt { rnn1, pre, adapted, a1, a2 }) => {
                let d_a2 = self.dense_backward(a2.view(), &ids.out, &d_logit, &mut g);
                let d_a2 = relu_grad(d_a2, a2);
                let d_a1 = self.dense_backward(a1.view(), &ids.hidden2, &d_a2, &mut g);
                let d_a1 = relu_grad(d_a1, a1);
                let d_ad = self.dense_backward(adapted.view(), &ids.hidden1, &d_a1, &mut g);
                let d_pre = relu_grad(d_ad, &relu(pre.clone()));
                let alpha = pass.cond.as_slice();
                // pre = H·(Σ α_k U_k) + Σ α_k c_k
                let gu = rnn1.out.t().dot(&d_pre);
                let gc = d_pre.sum_axis(Axis(0));
                let mut d_alpha = Array1::zeros(alpha.len());
                {
                    let u = self.layout.view3(&self.params, ids.adapt_w);
                    let c = self.layout.view2(&self.params, ids.adapt_b);
                    for k in 0..alpha.len() {
                        d_alpha[k] = (&gu * &u.index_axis(Axis(0), k)).sum() + gc.dot(&c.row(k));
                    }
                }
                {
                    let mut du = self.layout.view3_mut(&mut g.values, ids.adapt_w);
                    for (k, &a) in alpha.iter().enumerate() {
                        du.index_axis_mut(Axis(0), k).scaled_add(a, &gu);
                    }
                }
                {
                    let mut dc = self.layout.view2_mut(&mut g.values, ids.adapt_b);
                    for (k, &a) in alpha.iter().enumerate() {
                        dc.row_mut(k).scaled_add(a, &gc);
                    }
                }
                let (u_mix, _) = self.mixed_sublayer(ids, alpha);
                let d_h1 = d_pre.dot(&u_mix.t());
                blstm_backward(rnn1, mix_mag.view(), &self.layout, &self.params, &ids.rnn1, d_h1.view(), &mut g);
                d_alpha
            }
            _ => unreachable!("cache built by this model"),
        };

        let Some(aux) = &pass.aux else {
            return (g, d_cond.to_vec());
        };
        // mean pooling spreads the conditioning gradient evenly over frames
        let t_a = enroll_mag.nrows();
        let d_q = d_cond
            .broadcast((t_a, d_cond.len()))
            .expect("broadcast rows")
            .mapv(|v| v / t_a as f64);
        match (&self.arch, aux) {
            (Arch::Concat(ids), AuxCache::Concat { rnn, hidden }) => {
                let d_hidden = self.dense_backward(hidden.view(), &ids.aux_embed, &d_q, &mut g);
                let d_hidden = relu_grad(d_hidden, hidden);
                let d_rnn = self.dense_backward(rnn.out.view(), &ids.aux_hidden, &d_hidden, &mut g);
                blstm_backward(rnn, enroll_mag.view(), &self.layout, &self.params, &ids.aux_rnn, d_rnn.view(), &mut g);
            }
            (Arch::Adapt(ids), AuxCache::Adapt { h1, h2 }) => {
                let d_h2 = self.dense_backward(h2.view(), &ids.aux_weights, &d_q, &mut g);
                let d_h2 = relu_grad(d_h2, h2);
                let d_h1 = self.dense_backward(h1.view(), &ids.aux_hidden2, &d_h2, &mut g);
                let d_h1 = relu_grad(d_h1, h1);
                self.dense_backward(enroll_mag.view(), &ids.aux_hidden1, &d_h1, &mut g);
            }
            _ => unreachable!("cache built by this model"),
        }
        (g, d_cond.to_vec())
    }

    /// Loss for one utterance (forward only).
    pub fn loss(&self, sample: &Sample<'_>, kind: LossKind, w: &LossWeights) -> Result<f64> {
        let mask = self.infer(sample.mix_mag, sample.enroll_mag)?;
        losses::loss_value(kind, &mask.0, &sample.targets(), w)
    }

    /// Loss and parameter gradients for one utterance.
    pub fn loss_and_gradients(
        &self,
        sample: &Sample<'_>,
        kind: LossKind,
        w: &LossWeights,
    ) -> Result<(f64, Gradients)> {
        let pass = self.forward(sample.mix_mag, sample.enroll_mag)?;
        let (loss, d_mask) = losses::loss_and_grad(kind, &pass.mask, &sample.targets(), w)?;
        let g = self.backward(&pass, sample.mix_mag, sample.enroll_mag, &d_mask);
        Ok((loss, g))
    }

    /// Mean loss and mean gradient over a minibatch. Items may run in
    /// parallel; the reduction is always in batch order.
    pub fn batch_gradients(
        &self,
        batch: &[Sample<'_>],
        kind: LossKind,
        w: &LossWeights,
        exec: Execution,
    ) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        let parts = exec.map(batch, |s| self.loss_and_gradients(s, kind, w));
        let mut total = 0.0;
        let mut grads = self.zero_gradients();
        for part in parts {
            let (l, g) = part?;
            total += l;
            grads.add_assign(&g);
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// Mean loss over utterances, forward only.
    pub fn mean_loss(
        &self,
        samples: &[Sample<'_>],
        kind: LossKind,
        w: &LossWeights,
        exec: Execution,
    ) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let parts = exec.map(samples, |s| self.loss(s, kind, w));
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total / samples.len() as f64)
    }
}

/// Arithmetic mean over rows.
pub fn mean_pool(frames: &Array2<f64>) -> Array1<f64> {
    frames.sum_axis(Axis(0)) / frames.nrows() as f64
}
