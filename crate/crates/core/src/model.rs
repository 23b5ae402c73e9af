//! The decomposition network: U-Net pixel encoder, iterative slot calibration
//! (attention over slots, per-slot pixel normalization, GRU update) and a
//! chromaticity head whose outputs are fused by the final attention.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AidError, Result};
use crate::imaging::{ChromaticityRB, IlluminationMap, RawImage, WeightMaps};
use crate::losses::LossInputs;
use crate::tensor::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Offset inside the log-chromaticity input stem.
pub const STEM_EPS: f64 = 1e-3;
/// Added to attention before per-slot pixel normalization so an all-but-dead
/// column cannot divide by zero.
pub const ATTN_EPS: f64 = 1e-8;

/// Which attention map is paired with the final slot chromaticities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttnSource {
    /// The attention of the last calibration round, computed from `slots_{T-1}`.
    LastIter,
    /// One extra attention pass from `slots_T`.
    #[default]
    Recomputed,
}

impl std::str::FromStr for AttnSource {
    type Err = AidError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last-iter" => Ok(AttnSource::LastIter),
            "recomputed" => Ok(AttnSource::Recomputed),
            other => Err(AidError::Argument(format!(
                "unknown attention source '{other}' (last-iter, recomputed)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub t: usize,
    pub d_slot: usize,
    pub d_attn: usize,
    /// Channel width per U-Net resolution level, finest first.
    pub encoder_channels: Vec<usize>,
    pub n_domains: usize,
    pub seed: u64,
    #[serde(default)]
    pub attn_source: AttnSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 4,
            t: 3,
            d_slot: 32,
            d_attn: 32,
            encoder_channels: vec![8, 16],
            n_domains: 1,
            seed: 0,
            attn_source: AttnSource::Recomputed,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("K", self.k),
            ("T", self.t),
            ("D_slot", self.d_slot),
            ("D_attn", self.d_attn),
            ("n_domains", self.n_domains),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AidError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(AidError::Config("encoder channels must be a non-empty list of positive widths".into()));
        }
        Ok(())
    }

    /// Image sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.encoder_channels.len() - 1)
    }

    pub fn check_image(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(AidError::Config(format!(
                "image {h}x{w} must have both sides a positive multiple of {m}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Gate weights in `x·W + h·U + b` orientation.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// Two 3×3 convolutions per level.
    pub levels: Vec<(ConvParams, ConvParams)>,
    /// One 3×3 convolution per decoder level, finest first.
    pub up: Vec<ConvParams>,
    /// 1×1 projection to `D_slot`.
    pub head: ConvParams,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub key: LinearParams,
    pub query: LinearParams,
    pub value: LinearParams,
    pub gru: GruParams,
    pub head_hidden: LinearParams,
    pub head_out: LinearParams,
    /// `[n_domains, K, D_slot]`.
    pub slots0: ParamId,
}

struct Init {
    rng: ChaCha8Rng,
    store: ParamStore,
}

impl Init {
    fn add(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let t = Tensor::uniform(shape, bound, &mut self.rng);
        self.store.add(name, t)
    }

    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) -> ConvParams {
        let fan = inp * k * k;
        ConvParams {
            w: self.add(format!("{name}.w"), &[out, inp, k, k], fan),
            b: self.add(format!("{name}.b"), &[out], fan),
        }
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> LinearParams {
        LinearParams {
            w: self.add(format!("{name}.w"), &[inp, out], inp),
            b: self.add(format!("{name}.b"), &[out], inp),
        }
    }
}

impl ModelParams {
    /// Uniform `±1/√fan_in` initialization from `config.seed`; `slots_0` uses fan-in 1.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            store: ParamStore::new(),
        };
        let ch = &config.encoder_channels;
        let mut levels = Vec::new();
        let mut inp = STEM_CHANNELS;
        for (i, &c) in ch.iter().enumerate() {
            let a = init.conv(&format!("enc{i}.conv_a"), c, inp, 3);
            let b = init.conv(&format!("enc{i}.conv_b"), c, c, 3);
            levels.push((a, b));
            inp = c;
        }
        let up = (0..ch.len() - 1)
            .map(|i| init.conv(&format!("dec{i}.conv"), ch[i], ch[i] + ch[i + 1], 3))
            .collect();
        let head = init.conv("enc.head", config.d_slot, ch[0], 1);
        let (d, a) = (config.d_slot, config.d_attn);
        let key = init.linear("attn.k", d, a);
        let query = init.linear("attn.q", d, a);
        let value = init.linear("attn.v", d, d);
        let mut gate = |n: &str| {
            (
                init.add(format!("gru.w_{n}"), &[d, d], d),
                init.add(format!("gru.u_{n}"), &[d, d], d),
                init.add(format!("gru.b_{n}"), &[d], d),
            )
        };
        let (w_z, u_z, b_z) = gate("z");
        let (w_r, u_r, b_r) = gate("r");
        let (w_h, u_h, b_h) = gate("h");
        let gru = GruParams {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        };
        let head_hidden = init.linear("chroma.hidden", d, d);
        let head_out = init.linear("chroma.out", d, 2);
        let slots0 = init.add("slots0".into(), &[config.n_domains, config.k, d], 1);
        Ok(ModelParams {
            store: init.store,
            encoder: EncoderParams { levels, up, head },
            key,
            query,
            value,
            gru,
            head_hidden,
            head_out,
            slots0,
        })
    }
}

pub const STEM_CHANNELS: usize = 3;
/// Gain on the two log-ratio stem channels.
pub const STEM_LOG_SCALE: f64 = 10.0;

/// Fixed input stem: `s·ln((R+ε)/(G+ε))`, `s·ln((B+ε)/(G+ε))` and `G`, with `s` = [`STEM_LOG_SCALE`].
pub fn input_stem(img: &RawImage) -> Tensor {
    let hw = img.num_pixels();
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    let mut data = Vec::with_capacity(3 * hw);
    data.extend((0..hw).map(|i| STEM_LOG_SCALE * ((r[i] + STEM_EPS) / (g[i] + STEM_EPS)).ln()));
    data.extend((0..hw).map(|i| STEM_LOG_SCALE * ((b[i] + STEM_EPS) / (g[i] + STEM_EPS)).ln()));
    data.extend_from_slice(g);
    Tensor::new(&[3, img.height(), img.width()], data).expect("stem shape matches")
}

fn conv(g: &mut Graph, store: &ParamStore, x: NodeId, p: ConvParams, pad: usize) -> Result<NodeId> {
    let w = g.param(store, p.w);
    let b = g.param(store, p.b);
    g.conv2d(x, w, b, 1, pad)
}

fn linear(g: &mut Graph, store: &ParamStore, x: NodeId, p: LinearParams) -> Result<NodeId> {
    let w = g.param(store, p.w);
    let b = g.param(store, p.b);
    g.linear(x, w, b)
}

/// U-Net features of `x` (`C×H×W`), flattened to `[H·W, D_slot]` rows.
pub fn encode_features(g: &mut Graph, params: &ModelParams, x: NodeId) -> Result<NodeId> {
    let store = &params.store;
    let enc = &params.encoder;
    let depth = enc.levels.len();
    let mut skips = Vec::with_capacity(depth);
    let mut h = x;
    for (i, &(a, b)) in enc.levels.iter().enumerate() {
        if i > 0 {
            h = g.avg_pool2(h)?;
        }
        h = conv(g, store, h, a, 1)?;
        h = g.relu(h);
        h = conv(g, store, h, b, 1)?;
        h = g.relu(h);
        skips.push(h);
    }
    for i in (0..depth - 1).rev() {
        let up = g.upsample_nearest(h, 2)?;
        let cat = g.concat0(&[skips[i], up])?;
        h = conv(g, store, cat, enc.up[i], 1)?;
        h = g.relu(h);
    }
    let feat = conv(g, store, h, enc.head, 0)?;
    let s = g.shape(feat).to_vec();
    let flat = g.reshape(feat, &[s[0], s[1] * s[2]])?;
    g.transpose(flat)
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOut {
    /// `[HW, K]`, rows sum to 1.
    pub attn: NodeId,
    /// `[HW, K]`, columns sum to 1.
    pub w: NodeId,
    /// `[K, D_slot]`.
    pub updates: NodeId,
}

/// Scaled dot-product attention with the softmax taken over slots and a
/// subsequent per-slot normalization over pixels.
pub fn attention_step(
    g: &mut Graph,
    params: &ModelParams,
    keys: NodeId,
    values: NodeId,
    slots: NodeId,
) -> Result<AttentionOut> {
    let q = linear(g, &params.store, slots, params.query)?;
    let qt = g.transpose(q)?;
    let logits = g.matmul(keys, qt)?;
    let d_attn = g.shape(keys)[1];
    let logits = g.scale(logits, 1.0 / (d_attn as f64).sqrt());
    let attn = g.softmax(logits, 1)?;
    let eps = g.constant(Tensor::full(g.shape(attn), ATTN_EPS));
    let shifted = g.add(attn, eps)?;
    let w = g.normalize_sum(shifted, 0)?;
    let wt = g.transpose(w)?;
    let updates = g.matmul(wt, values)?;
    Ok(AttentionOut { attn, w, updates })
}

/// `h' = (1 − z)∘h + z∘h̃` with reset-gated candidate `h̃`, row-wise over slots.
pub fn gru_cell(g: &mut Graph, store: &ParamStore, p: &GruParams, input: NodeId, hidden: NodeId) -> Result<NodeId> {
    let gate = |g: &mut Graph, x: NodeId, hh: NodeId, w: ParamId, u: ParamId, b: ParamId| -> Result<NodeId> {
        let w = g.param(store, w);
        let u = g.param(store, u);
        let b = g.param(store, b);
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(hh, u)?;
        let s = g.add(xw, hu)?;
        g.add_row_bias(s, b)
    };
    let z = gate(g, input, hidden, p.w_z, p.u_z, p.b_z)?;
    let z = g.sigmoid(z);
    let r = gate(g, input, hidden, p.w_r, p.u_r, p.b_r)?;
    let r = g.sigmoid(r);
    let rh = g.mul(r, hidden)?;
    let cand = gate(g, input, rh, p.w_h, p.u_h, p.b_h)?;
    let cand = g.tanh(cand);
    let delta = g.sub(cand, hidden)?;
    let step = g.mul(z, delta)?;
    g.add(hidden, step)
}

/// Two-layer MLP with a ReLU hidden layer and softplus output: `[K, D] → [K, 2]`.
pub fn chroma_head(g: &mut Graph, params: &ModelParams, slots: NodeId) -> Result<NodeId> {
    let h = linear(g, &params.store, slots, params.head_hidden)?;
    let h = g.relu(h);
    let o = linear(g, &params.store, h, params.head_out)?;
    Ok(g.softplus(o))
}

#[derive(Clone, Copy, Debug)]
pub struct SnapshotNodes {
    pub attn: NodeId,
    pub chroma: NodeId,
}

#[derive(Clone, Debug)]
pub struct CalibrationNodes {
    pub slots: NodeId,
    pub attn: NodeId,
    /// Per-pixel-normalized `W` of the final attention pass.
    pub w: NodeId,
    /// Round `n` holds the attention and chromaticities of `slots_n`.
    pub snapshots: Vec<SnapshotNodes>,
}

/// `T` rounds of attention and GRU update from the domain's `slots_0` row.
pub fn calibrate(
    g: &mut Graph,
    params: &ModelParams,
    config: &ModelConfig,
    feat: NodeId,
    domain: usize,
) -> Result<CalibrationNodes> {
    if domain >= config.n_domains {
        return Err(AidError::Argument(format!(
            "domain {domain} out of range for {} slot tables",
            config.n_domains
        )));
    }
    let store = &params.store;
    let keys = linear(g, store, feat, params.key)?;
    let values = linear(g, store, feat, params.value)?;
    let table = g.param(store, params.slots0);
    let mut slots = g.select(table, 0, domain)?;
    let mut snapshots = Vec::with_capacity(config.t);
    let mut last = None;
    for _ in 0..config.t {
        let step = attention_step(g, params, keys, values, slots)?;
        let chroma = chroma_head(g, params, slots)?;
        snapshots.push(SnapshotNodes {
            attn: step.attn,
            chroma,
        });
        slots = gru_cell(g, store, &params.gru, step.updates, slots)?;
        last = Some(step);
    }
    let last = last.expect("T >= 1");
    let (attn, w) = match config.attn_source {
        AttnSource::LastIter => (last.attn, last.w),
        AttnSource::Recomputed => {
            let fin = attention_step(g, params, keys, values, slots)?;
            (fin.attn, fin.w)
        }
    };
    Ok(CalibrationNodes {
        slots,
        attn,
        w,
        snapshots,
    })
}

#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub feat: NodeId,
    pub calib: CalibrationNodes,
    pub chroma: NodeId,
    pub fused: NodeId,
}

impl ForwardNodes {
    pub fn loss_inputs(&self) -> LossInputs {
        LossInputs {
            attn: self.calib.attn,
            chroma: self.chroma,
            fused: self.fused,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationSnapshot {
    pub chromas: Vec<ChromaticityRB>,
    pub weights: WeightMaps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub chromas: Vec<ChromaticityRB>,
    pub weights: WeightMaps,
    pub fused: IlluminationMap,
    pub iterations: Vec<IterationSnapshot>,
}

fn chromas_of(t: &Tensor) -> Result<Vec<ChromaticityRB>> {
    t.data()
        .chunks(2)
        .map(|rb| ChromaticityRB::new(rb[0], rb[1]))
        .collect()
}

#[derive(Clone, Debug)]
pub struct AidModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl AidModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(AidModel { config, params })
    }

    /// Records the full forward pass of `img` into `g`.
    pub fn forward_graph(&self, g: &mut Graph, img: &RawImage, domain: usize) -> Result<ForwardNodes> {
        self.config.check_image(img.height(), img.width())?;
        let x = g.constant(input_stem(img));
        let feat = encode_features(g, &self.params, x)?;
        let calib = calibrate(g, &self.params, &self.config, feat, domain)?;
        let chroma = chroma_head(g, &self.params, calib.slots)?;
        let fused = g.matmul(calib.attn, chroma)?;
        Ok(ForwardNodes {
            feat,
            calib,
            chroma,
            fused,
        })
    }

    pub fn decompose(&self, img: &RawImage, domain: usize) -> Result<Decomposition> {
        let mut g = Graph::new();
        let nodes = self.forward_graph(&mut g, img, domain)?;
        decomposition_from(&g, &nodes, img.height(), img.width())
    }
}

/// Reads a [`Decomposition`] out of recorded forward values.
pub fn decomposition_from(g: &Graph, nodes: &ForwardNodes, h: usize, w: usize) -> Result<Decomposition> {
    let iterations = nodes
        .calib
        .snapshots
        .iter()
        .map(|s| {
            Ok(IterationSnapshot {
                chromas: chromas_of(g.value(s.chroma))?,
                weights: WeightMaps::from_attention(h, w, g.value(s.attn))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Decomposition {
        chromas: chromas_of(g.value(nodes.chroma))?,
        weights: WeightMaps::from_attention(h, w, g.value(nodes.calib.attn))?,
        fused: IlluminationMap::from_rows(h, w, g.value(nodes.fused))?,
        iterations,
    })
}

/// Anything that maps an image to a decomposition; lets evaluation run on stubs.
pub trait Decomposer {
    fn decompose_image(&self, img: &RawImage, domain: usize) -> Result<Decomposition>;
}

impl Decomposer for AidModel {
    fn decompose_image(&self, img: &RawImage, domain: usize) -> Result<Decomposition> {
        self.decompose(img, domain)
    }
}
