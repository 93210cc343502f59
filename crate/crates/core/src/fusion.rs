//! Adaptive multi-modal control fusion: a tiny strided encoder per
//! conditioning modality, a weight-prediction network over the concatenated
//! features, and a per-location convex combination of the feature maps.
//!
//! The weight predictor's final layer starts at zero, so a fresh network
//! fuses with exactly uniform weights and training only learns deviations
//! from that unbiased average.

use serde::{Deserialize, Serialize};

use crate::curation::Modality;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvStack, ParamVisitor, Parameterized, StackTrace, Tensor};
use crate::rng::{name_index, rng_for, Domain};

/// Architecture knobs. Encoder depth is fixed at four stride-2 layers
/// (total spatial reduction 16); only widths are configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Channel progression through the encoder, input included; length 5.
    pub encoder_channels: Vec<usize>,
    pub predictor_hidden: usize,
    pub predictor_layers: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            encoder_channels: vec![3, 16, 32, 64, 128],
            predictor_hidden: 64,
            predictor_layers: 8,
        }
    }
}

/// Spatial reduction factor of every modality encoder.
pub const ENCODER_REDUCTION: usize = 16;

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != 5 {
            return Err(Error::invalid(format!(
                "encoder needs 5 channel counts (4 layers), got {}",
                self.encoder_channels.len()
            )));
        }
        if self.encoder_channels.iter().any(|&c| c == 0) || self.predictor_hidden == 0 {
            return Err(Error::invalid("zero-width layer"));
        }
        if self.predictor_layers < 2 {
            return Err(Error::invalid(
                "weight predictor needs at least an input and an output layer",
            ));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.encoder_channels.last().unwrap()
    }
}

/// Encoded control input for one modality.
#[derive(Debug, Clone)]
pub struct ControlFeatureMap {
    pub modality: Modality,
    pub values: Tensor,
}

/// Per-modality, per-location fusion weights. Channel `m` holds modality
/// `m`'s weight plane; every location's weights are non-negative and sum
/// to 1.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    pub values: Tensor,
}

impl FusionWeights {
    pub fn modality_count(&self) -> usize {
        self.values.c
    }

    /// Uniform weights, the zero-init fixed point of the predictor.
    pub fn uniform(m: usize, h: usize, w: usize) -> FusionWeights {
        let mut values = Tensor::zeros(m, h, w);
        values.data.fill(1.0 / m as f64);
        FusionWeights { values }
    }
}

/// Four stride-2 4x4 convolutions, SiLU between them, linear feature
/// output. Each modality owns one.
#[derive(Debug, Clone)]
pub struct ModalityEncoder {
    pub modality: Modality,
    stack: ConvStack,
}

impl ModalityEncoder {
    fn new(modality: Modality, config: &FusionConfig, seed: u64) -> ModalityEncoder {
        let convs = config
            .encoder_channels
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let name = format!("fusion.enc.{modality}.{i}");
                let mut rng = rng_for(seed, Domain::Init, name_index(&name));
                Conv2d::new(io[0], io[1], 4, 2, 1, &mut rng)
            })
            .collect();
        ModalityEncoder {
            modality,
            stack: ConvStack {
                convs,
                activate_last: false,
            },
        }
    }

    /// Encode a control image. Spatial size must be divisible by 16 and the
    /// output is 16x smaller on each side.
    pub fn encode(&self, image: &Tensor) -> Result<(ControlFeatureMap, StackTrace)> {
        if image.h % ENCODER_REDUCTION != 0 || image.w % ENCODER_REDUCTION != 0 || image.h == 0 {
            return Err(Error::invalid(format!(
                "encoder input {}x{} not divisible by {ENCODER_REDUCTION}",
                image.h, image.w
            )));
        }
        let trace = self.stack.forward(image)?;
        let features = ControlFeatureMap {
            modality: self.modality,
            values: trace.output.clone(),
        };
        Ok((features, trace))
    }
}

/// Stride-1 3x3 conv tower over the concatenated modality features, ending
/// in one logit plane per modality. The final layer starts at zero.
#[derive(Debug, Clone)]
pub struct WeightPredictor {
    stack: ConvStack,
    modalities: usize,
    in_channels: usize,
}

impl WeightPredictor {
    fn new(modalities: usize, config: &FusionConfig, seed: u64) -> WeightPredictor {
        let in_channels = modalities * config.feature_channels();
        let hidden = config.predictor_hidden;
        let n = config.predictor_layers;
        let mut convs = Vec::with_capacity(n);
        for i in 0..n - 1 {
            let cin = if i == 0 { in_channels } else { hidden };
            let name = format!("fusion.pred.{i}");
            let mut rng = rng_for(seed, Domain::Init, name_index(&name));
            convs.push(Conv2d::new(cin, hidden, 3, 1, 1, &mut rng));
        }
        convs.push(Conv2d::zeros(hidden, modalities, 3, 1, 1));
        WeightPredictor {
            stack: ConvStack {
                convs,
                activate_last: false,
            },
            modalities,
            in_channels,
        }
    }

    /// Softmax-normalized per-location weights over the modality axis.
    pub fn predict(&self, features: &[ControlFeatureMap]) -> Result<(FusionWeights, StackTrace)> {
        let parts = check_features(features)?;
        if features.len() != self.modalities {
            return Err(Error::shape(
                format!("{} modalities", self.modalities),
                format!("{}", features.len()),
            ));
        }
        let cat = Tensor::concat_channels(&parts)?;
        if cat.c != self.in_channels {
            return Err(Error::shape(
                format!("{} feature channels", self.in_channels),
                format!("{}", cat.c),
            ));
        }
        let trace = self.stack.forward(&cat)?;
        let weights = FusionWeights {
            values: softmax_channels(&trace.output),
        };
        Ok((weights, trace))
    }
}

fn check_features<'a>(features: &'a [ControlFeatureMap]) -> Result<Vec<&'a Tensor>> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("fusion of zero modalities"))?;
    for f in features {
        if !f.values.same_shape(&first.values) {
            return Err(Error::shape(
                format!("{:?}", first.values.shape()),
                format!("{:?} ({})", f.values.shape(), f.modality),
            ));
        }
    }
    Ok(features.iter().map(|f| &f.values).collect())
}

/// Per-location softmax across the channel axis.
fn softmax_channels(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let plane = logits.h * logits.w;
    for p in 0..plane {
        let mut peak = f64::NEG_INFINITY;
        for m in 0..logits.c {
            peak = peak.max(logits.data[m * plane + p]);
        }
        let mut sum = 0.0;
        for m in 0..logits.c {
            let e = (logits.data[m * plane + p] - peak).exp();
            out.data[m * plane + p] = e;
            sum += e;
        }
        for m in 0..logits.c {
            out.data[m * plane + p] /= sum;
        }
    }
    out
}

/// Gradient of [`softmax_channels`]: `gl[m] = w[m] * (gw[m] - sum_k gw[k] w[k])`.
fn softmax_channels_backward(weights: &Tensor, gout: &Tensor) -> Tensor {
    let mut gin = weights.clone();
    let plane = weights.h * weights.w;
    for p in 0..plane {
        let mut dot = 0.0;
        for m in 0..weights.c {
            dot += gout.data[m * plane + p] * weights.data[m * plane + p];
        }
        for m in 0..weights.c {
            let w = weights.data[m * plane + p];
            gin.data[m * plane + p] = w * (gout.data[m * plane + p] - dot);
        }
    }
    gin
}

/// Per-location convex combination of the feature maps, weights broadcast
/// over channels: `fused[c,y,x] = sum_m weights[m,y,x] * features[m][c,y,x]`.
pub fn fuse(features: &[ControlFeatureMap], weights: &FusionWeights) -> Result<Tensor> {
    let parts = check_features(features)?;
    let (c, h, w) = parts[0].shape();
    weights.values.check_shape(features.len(), h, w)?;
    let plane = h * w;
    let mut fused = Tensor::zeros(c, h, w);
    for (m, part) in parts.iter().enumerate() {
        let wplane = &weights.values.data[m * plane..(m + 1) * plane];
        for ch in 0..c {
            let src = &part.data[ch * plane..(ch + 1) * plane];
            let dst = &mut fused.data[ch * plane..(ch + 1) * plane];
            for ((d, s), wv) in dst.iter_mut().zip(src).zip(wplane) {
                *d += wv * s;
            }
        }
    }
    Ok(fused)
}

/// Gradients of [`fuse`] with respect to the features and the weights.
fn fuse_backward(
    features: &[ControlFeatureMap],
    weights: &FusionWeights,
    gout: &Tensor,
) -> (Vec<Tensor>, Tensor) {
    let (c, h, w) = gout.shape();
    let plane = h * w;
    let mut gweights = Tensor::zeros(features.len(), h, w);
    let mut gfeatures = Vec::with_capacity(features.len());
    for (m, f) in features.iter().enumerate() {
        let wplane = &weights.values.data[m * plane..(m + 1) * plane];
        let gw = &mut gweights.data[m * plane..(m + 1) * plane];
        let mut gf = Tensor::zeros(c, h, w);
        for ch in 0..c {
            let src = &f.values.data[ch * plane..(ch + 1) * plane];
            let go = &gout.data[ch * plane..(ch + 1) * plane];
            let gd = &mut gf.data[ch * plane..(ch + 1) * plane];
            for i in 0..plane {
                gd[i] = wplane[i] * go[i];
                gw[i] += src[i] * go[i];
            }
        }
        gfeatures.push(gf);
    }
    (gfeatures, gweights)
}

/// Scalar-weighted sum of embeddings, the fixed-weight fusion baseline.
/// Weights must sum to 1.
pub fn fixed_weight_fuse(embeddings: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if embeddings.is_empty() || embeddings.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} embeddings vs {} weights",
            embeddings.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("fusion weights sum to {sum}, not 1")));
    }
    let mut fused = Tensor::zeros(embeddings[0].c, embeddings[0].h, embeddings[0].w);
    for (e, &w) in embeddings.iter().zip(weights) {
        if !e.same_shape(&fused) {
            return Err(Error::shape(
                format!("{:?}", fused.shape()),
                format!("{:?}", e.shape()),
            ));
        }
        for (d, s) in fused.data.iter_mut().zip(&e.data) {
            *d += w * s;
        }
    }
    Ok(fused)
}

/// How control features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Learned per-location weights from the predictor network.
    Adaptive,
    /// Constant uniform weights, the ablation baseline.
    FixedEqual,
    /// One modality passed through; requires exactly one encoder.
    Single,
}

/// The full fusion network: one encoder per modality plus, in adaptive
/// mode, the weight predictor. Modality order is fixed at construction and
/// `forward` expects control maps in that order.
#[derive(Debug, Clone)]
pub struct FusionNet {
    pub config: FusionConfig,
    pub mode: FusionMode,
    encoders: Vec<ModalityEncoder>,
    predictor: Option<WeightPredictor>,
}

/// Forward activations of one fusion pass.
pub struct FusionTrace {
    enc_traces: Vec<StackTrace>,
    features: Vec<ControlFeatureMap>,
    pred_trace: Option<StackTrace>,
    pub weights: FusionWeights,
    pub fused: Tensor,
}

impl FusionNet {
    pub fn new(
        modalities: &[Modality],
        mode: FusionMode,
        config: FusionConfig,
        seed: u64,
    ) -> Result<FusionNet> {
        config.validate()?;
        if modalities.is_empty() {
            return Err(Error::invalid("fusion needs at least one modality"));
        }
        let mut seen = modalities.to_vec();
        seen.dedup();
        if seen.len() != modalities.len() || {
            let mut s = modalities.to_vec();
            s.sort();
            s.dedup();
            s.len() != modalities.len()
        } {
            return Err(Error::invalid("duplicate fusion modality"));
        }
        if mode == FusionMode::Single && modalities.len() != 1 {
            return Err(Error::invalid(format!(
                "single-modality mode with {} modalities",
                modalities.len()
            )));
        }
        let encoders = modalities
            .iter()
            .map(|&m| ModalityEncoder::new(m, &config, seed))
            .collect();
        let predictor = (mode == FusionMode::Adaptive)
            .then(|| WeightPredictor::new(modalities.len(), &config, seed));
        Ok(FusionNet {
            config,
            mode,
            encoders,
            predictor,
        })
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.encoders.iter().map(|e| e.modality).collect()
    }

    pub fn feature_channels(&self) -> usize {
        self.config.feature_channels()
    }

    /// Encode every control map, predict weights, fuse. `maps` follow the
    /// construction-time modality order; all must share one spatial size.
    pub fn forward(&self, maps: &[Tensor]) -> Result<FusionTrace> {
        if maps.len() != self.encoders.len() {
            return Err(Error::shape(
                format!("{} control maps", self.encoders.len()),
                format!("{}", maps.len()),
            ));
        }
        let mut enc_traces = Vec::with_capacity(maps.len());
        let mut features = Vec::with_capacity(maps.len());
        for (enc, map) in self.encoders.iter().zip(maps) {
            let (f, trace) = enc.encode(map)?;
            features.push(f);
            enc_traces.push(trace);
        }
        let (weights, pred_trace) = match &self.predictor {
            Some(pred) => {
                let (w, t) = pred.predict(&features)?;
                (w, Some(t))
            }
            None => {
                let f0 = &features[0].values;
                (FusionWeights::uniform(maps.len(), f0.h, f0.w), None)
            }
        };
        let fused = fuse(&features, &weights)?;
        Ok(FusionTrace {
            enc_traces,
            features,
            pred_trace,
            weights,
            fused,
        })
    }

    /// Accumulate parameter gradients from a fused-output gradient. Control
    /// maps are data, so their input gradients are discarded.
    pub fn backward(&mut self, trace: &FusionTrace, gfused: &Tensor) -> Result<()> {
        let (mut gfeatures, gweights) = fuse_backward(&trace.features, &trace.weights, gfused);
        if let (Some(pred), Some(pred_trace)) = (&mut self.predictor, &trace.pred_trace) {
            let glogits = softmax_channels_backward(&trace.weights.values, &gweights);
            let gcat = pred.stack.backward(pred_trace, &glogits)?;
            let sizes = vec![self.config.feature_channels(); gfeatures.len()];
            for (gf, extra) in gfeatures.iter_mut().zip(gcat.split_channels(&sizes)?) {
                gf.add_assign(&extra);
            }
        }
        for (enc, (trace, gf)) in self
            .encoders
            .iter_mut()
            .zip(trace.enc_traces.iter().zip(&gfeatures))
        {
            enc.stack.backward(trace, gf)?;
        }
        Ok(())
    }
}

impl Parameterized for FusionNet {
    fn visit_params(&mut self, prefix: &str, f: ParamVisitor<'_>) {
        for enc in &mut self.encoders {
            enc.stack.visit(&format!("{prefix}.enc.{}", enc.modality), f);
        }
        if let Some(pred) = &mut self.predictor {
            pred.stack.visit(&format!("{prefix}.pred"), f);
        }
    }
}
