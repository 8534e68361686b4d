//! Edge classifier: class representation, a 72 -> 32 -> 32 -> 1 perceptron with
//! ReLU hidden layers and a sigmoid output, trained with binary cross-entropy.
//!
//! Per node the input is `[normalized box (4), class representation (32)]`;
//! a pair concatenates the lower-index node first. In hard mode the class
//! representation is a row of a `C x 32` embedding table; in soft mode it is
//! `probs · W + b` with `W` of the same shape.
//!
//! Gradients are derived by hand. Everything is `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OmrError, Result};
use crate::features::{ClassMode, ClassRef, PairCandidate};

pub const HIDDEN: usize = 32;
pub const BOX_DIMS: usize = 4;
pub const NODE_DIMS: usize = BOX_DIMS + HIDDEN;
pub const INPUT_DIMS: usize = 2 * NODE_DIMS;

const LOSS_CLAMP: f64 = 1e-12;

/// All learnable weights. Matrices are row-major with rows indexing the
/// layer input, so `w1` is `72 x 32`. The same shape doubles as a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mode: ClassMode,
    pub num_classes: usize,
    pub class_rep: Vec<f64>,
    /// Bias of the soft-mode linear map; `None` in hard mode or when disabled.
    pub class_bias: Option<Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_classes: usize, mode: ClassMode, soft_bias: bool) -> Self {
        Self {
            mode,
            num_classes,
            class_rep: vec![0.0; num_classes * HIDDEN],
            class_bias: (mode == ClassMode::Soft && soft_bias).then(|| vec![0.0; HIDDEN]),
            w1: vec![0.0; INPUT_DIMS * HIDDEN],
            b1: vec![0.0; HIDDEN],
            w2: vec![0.0; HIDDEN * HIDDEN],
            b2: vec![0.0; HIDDEN],
            w3: vec![0.0; HIDDEN],
            b3: vec![0.0; 1],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_classes, self.mode, self.class_bias.is_some())
    }

    /// Parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![("class_rep", &self.class_rep)];
        if let Some(b) = &self.class_bias {
            out.push(("class_bias", b));
        }
        out.extend([
            ("w1", self.w1.as_slice()),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
        ]);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        let mut out: Vec<(&'static str, &mut Vec<f64>)> = vec![("class_rep", &mut self.class_rep)];
        if let Some(b) = &mut self.class_bias {
            out.push(("class_bias", b));
        }
        out.extend([
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
            ("w3", &mut self.w3),
            ("b3", &mut self.b3),
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn has_same_shape(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.num_classes == other.num_classes
            && self.class_bias.is_some() == other.class_bias.is_some()
    }
}

/// Glorot-uniform weights, zero biases, drawn block by block from one seeded stream.
pub fn init_params(seed: u64, num_classes: usize, mode: ClassMode, soft_bias: bool) -> ModelParams {
    let mut p = ModelParams::zeros(num_classes.max(1), mode, soft_bias);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |w: &mut [f64], fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for x in w.iter_mut() {
            *x = rng.random_range(-bound..bound);
        }
    };
    fill(&mut p.class_rep, p.num_classes, HIDDEN);
    fill(&mut p.w1, INPUT_DIMS, HIDDEN);
    fill(&mut p.w2, HIDDEN, HIDDEN);
    fill(&mut p.w3, HIDDEN, 1);
    p
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: [f64; INPUT_DIMS],
    pub z1: [f64; HIDDEN],
    pub h1: [f64; HIDDEN],
    pub z2: [f64; HIDDEN],
    pub h2: [f64; HIDDEN],
    pub logit: f64,
    pub prob: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn class_representation(params: &ModelParams, class: ClassRef<'_>, out: &mut [f64]) -> Result<()> {
    match (params.mode, class) {
        (ClassMode::Hard, ClassRef::Id(c)) => {
            if c >= params.num_classes {
                return Err(OmrError::Dimension(format!(
                    "class id {c} outside embedding table of {}",
                    params.num_classes
                )));
            }
            out.copy_from_slice(&params.class_rep[c * HIDDEN..(c + 1) * HIDDEN]);
        }
        (ClassMode::Soft, ClassRef::Probs(p)) => {
            if p.len() != params.num_classes {
                return Err(OmrError::Dimension(format!(
                    "probability vector of length {} for {} classes",
                    p.len(),
                    params.num_classes
                )));
            }
            match &params.class_bias {
                Some(b) => out.copy_from_slice(b),
                None => out.fill(0.0),
            }
            for (k, &pk) in p.iter().enumerate() {
                if pk == 0.0 {
                    continue;
                }
                let row = &params.class_rep[k * HIDDEN..(k + 1) * HIDDEN];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += pk * w;
                }
            }
        }
        (mode, _) => {
            return Err(OmrError::Dimension(format!(
                "pair class features do not match {mode:?} model"
            )))
        }
    }
    Ok(())
}

fn affine_relu(input: &[f64], w: &[f64], b: &[f64], z: &mut [f64; HIDDEN], h: &mut [f64; HIDDEN]) {
    z.copy_from_slice(b);
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &w[i * HIDDEN..(i + 1) * HIDDEN];
        for (zo, wo) in z.iter_mut().zip(row) {
            *zo += x * wo;
        }
    }
    for (ho, zo) in h.iter_mut().zip(z.iter()) {
        *ho = zo.max(0.0);
    }
}

/// Edge probability for one pair.
pub fn forward(params: &ModelParams, pair: &PairCandidate<'_>) -> Result<Trace> {
    let mut input = [0.0; INPUT_DIMS];
    for side in 0..2 {
        let base = side * NODE_DIMS;
        input[base..base + BOX_DIMS].copy_from_slice(&pair.boxes[side]);
        class_representation(
            params,
            pair.classes[side],
            &mut input[base + BOX_DIMS..base + NODE_DIMS],
        )?;
    }
    let mut t = Trace {
        input,
        z1: [0.0; HIDDEN],
        h1: [0.0; HIDDEN],
        z2: [0.0; HIDDEN],
        h2: [0.0; HIDDEN],
        logit: 0.0,
        prob: 0.0,
    };
    affine_relu(&t.input, &params.w1, &params.b1, &mut t.z1, &mut t.h1);
    affine_relu(&t.h1, &params.w2, &params.b2, &mut t.z2, &mut t.h2);
    t.logit = params.b3[0] + t.h2.iter().zip(&params.w3).map(|(h, w)| h * w).sum::<f64>();
    t.prob = sigmoid(t.logit);
    Ok(t)
}

pub fn predict(params: &ModelParams, pair: &PairCandidate<'_>) -> Result<f64> {
    Ok(forward(params, pair)?.prob)
}

/// Binary cross-entropy on the prediction clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean BCE over `batch` and its exact gradient with respect to every block.
#[allow(clippy::needless_range_loop)]
pub fn backward(params: &ModelParams, batch: &[PairCandidate<'_>]) -> Result<(ModelParams, f64)> {
    let mut grads = params.zeros_like();
    if batch.is_empty() {
        return Ok((grads, 0.0));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for pair in batch {
        let t = forward(params, pair)?;
        loss += bce_loss(t.prob, pair.label);
        let target = if pair.label { 1.0 } else { 0.0 };
        let g_logit = (t.prob - target) * scale;

        grads.b3[0] += g_logit;
        let mut dz2 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            grads.w3[o] += t.h2[o] * g_logit;
            dz2[o] = if t.z2[o] > 0.0 { params.w3[o] * g_logit } else { 0.0 };
        }

        let mut dh1 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            let row = &params.w2[i * HIDDEN..(i + 1) * HIDDEN];
            let grow = &mut grads.w2[i * HIDDEN..(i + 1) * HIDDEN];
            let mut acc = 0.0;
            for o in 0..HIDDEN {
                grow[o] += t.h1[i] * dz2[o];
                acc += row[o] * dz2[o];
            }
            dh1[i] = acc;
        }
        let mut dz1 = [0.0; HIDDEN];
        for o in 0..HIDDEN {
            grads.b2[o] += dz2[o];
            dz1[o] = if t.z1[o] > 0.0 { dh1[o] } else { 0.0 };
            grads.b1[o] += dz1[o];
        }

        let mut dx = [0.0; INPUT_DIMS];
        for i in 0..INPUT_DIMS {
            let row = &params.w1[i * HIDDEN..(i + 1) * HIDDEN];
            let grow = &mut grads.w1[i * HIDDEN..(i + 1) * HIDDEN];
            let mut acc = 0.0;
            for o in 0..HIDDEN {
                grow[o] += t.input[i] * dz1[o];
                acc += row[o] * dz1[o];
            }
            dx[i] = acc;
        }

        for side in 0..2 {
            let d_rep = &dx[side * NODE_DIMS + BOX_DIMS..(side + 1) * NODE_DIMS];
            match pair.classes[side] {
                ClassRef::Id(c) => {
                    let grow = &mut grads.class_rep[c * HIDDEN..(c + 1) * HIDDEN];
                    for (g, d) in grow.iter_mut().zip(d_rep) {
                        *g += d;
                    }
                }
                ClassRef::Probs(p) => {
                    for (k, &pk) in p.iter().enumerate() {
                        if pk == 0.0 {
                            continue;
                        }
                        let grow = &mut grads.class_rep[k * HIDDEN..(k + 1) * HIDDEN];
                        for (g, d) in grow.iter_mut().zip(d_rep) {
                            *g += pk * d;
                        }
                    }
                    if let Some(gb) = &mut grads.class_bias {
                        for (g, d) in gb.iter_mut().zip(d_rep) {
                            *g += d;
                        }
                    }
                }
            }
        }
    }
    Ok((grads, loss * scale))
}

/// Compares `backward` with central finite differences of the mean loss,
/// returning `‖g - g_fd‖ / max(‖g‖, ‖g_fd‖)` per block (0 when both vanish).
pub fn gradient_check(
    params: &ModelParams,
    batch: &[PairCandidate<'_>],
    step: f64,
) -> Result<Vec<(&'static str, f64)>> {
    let mean_loss = |p: &ModelParams| -> Result<f64> {
        let mut total = 0.0;
        for pair in batch {
            total += bce_loss(forward(p, pair)?.prob, pair.label);
        }
        Ok(total / batch.len().max(1) as f64)
    };
    let (grads, _) = backward(params, batch)?;
    let mut probe = params.clone();
    let mut out = Vec::new();
    for (bi, (name, g)) in grads.blocks().into_iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for (k, &gk) in g.iter().enumerate() {
            let orig = probe.blocks_mut()[bi].1[k];
            probe.blocks_mut()[bi].1[k] = orig + step;
            let plus = mean_loss(&probe)?;
            probe.blocks_mut()[bi].1[k] = orig - step;
            let minus = mean_loss(&probe)?;
            probe.blocks_mut()[bi].1[k] = orig;
            let fd = (plus - minus) / (2.0 * step);
            diff += (gk - fd).powi(2);
            na += gk * gk;
            nn += fd * fd;
        }
        let denom = na.sqrt().max(nn.sqrt());
        out.push((name, if denom == 0.0 { 0.0 } else { diff.sqrt() / denom }));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if !params.has_same_shape(grads) || !params.has_same_shape(&state.m) {
        return Err(OmrError::Dimension(
            "gradient or optimizer state shape differs from parameters".into(),
        ));
    }
    for (name, block) in grads.blocks() {
        if block.iter().any(|g| !g.is_finite()) {
            return Err(OmrError::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let g_blocks = grads.blocks();
    let m_blocks = state.m.blocks_mut();
    let v_blocks = state.v.blocks_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params
        .blocks_mut()
        .into_iter()
        .zip(g_blocks)
        .zip(m_blocks)
        .zip(v_blocks)
    {
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

const MAGIC: &[u8; 8] = b"MUNGMLP1";
const FORMAT_VERSION: u32 = 1;

/// Run metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub mode: ClassMode,
    pub num_classes: usize,
    pub soft_bias: bool,
    pub vocab_hash: String,
    pub seed: u64,
    pub epoch: usize,
}

impl CheckpointMeta {
    pub fn expect_classes(&self, num_classes: usize) -> Result<()> {
        if self.num_classes != num_classes {
            return Err(OmrError::VocabMismatch {
                expected: num_classes,
                found: self.num_classes,
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    hidden: usize,
    blocks: Vec<(String, usize)>,
    #[serde(flatten)]
    meta: CheckpointMeta,
}

/// `MUNGMLP1`, a little-endian `u64` header length, the JSON header, then
/// each block as little-endian `f64` in [`ModelParams::blocks`] order.
pub fn save_checkpoint(params: &ModelParams, meta: &CheckpointMeta) -> Vec<u8> {
    let header = Header {
        version: FORMAT_VERSION,
        hidden: HIDDEN,
        blocks: params.blocks().iter().map(|(n, b)| (n.to_string(), b.len())).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, block) in params.blocks() {
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta)> {
    let bad = |m: &str| OmrError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing MUNGMLP1 magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body_start])?;
    if header.version != FORMAT_VERSION {
        return Err(OmrError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    if header.hidden != HIDDEN {
        return Err(OmrError::Checkpoint(format!(
            "hidden size {} differs from {HIDDEN}",
            header.hidden
        )));
    }
    let meta = header.meta;
    let mut params = ModelParams::zeros(meta.num_classes, meta.mode, meta.soft_bias);
    let expected: Vec<(String, usize)> = params.blocks().iter().map(|(n, b)| (n.to_string(), b.len())).collect();
    if expected != header.blocks {
        return Err(OmrError::Checkpoint(format!(
            "block layout {:?} does not match {} classes in {:?} mode",
            header.blocks, meta.num_classes, meta.mode
        )));
    }
    let mut cursor = body_start;
    for (_, block) in params.blocks_mut() {
        for x in block.iter_mut() {
            let end = cursor + 8;
            let raw = bytes.get(cursor..end).ok_or_else(|| bad("truncated weights"))?;
            *x = f64::from_le_bytes(raw.try_into().expect("8 bytes"));
            cursor = end;
        }
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after weights"));
    }
    Ok((params, meta))
}
