//! Posture decoding: (grasp type, grasp size, latent point) to joint angles.
//!
//! Two decoders sit behind [`SynergyDecoder`]:
//!
//! * `Analytic` interpolates per joint between a calibrated open and closed
//!   posture for each grasp type. The sizes attached to those postures are
//!   measured with forward kinematics when the decoder is bound to a hand.
//! * `Learned` runs a small feed-forward network loaded from a weights file.
//!   Its input is `[z | one-hot(grasp type) | size_m]`.
//!
//! Both are pure once built; both clamp their output into the joint limits
//! of the hand they were bound to.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{HandModel, JointConfiguration};
use crate::units::{GraspContext, GraspType};

pub const SYNERGY_SCHEMA: &str = "synergy/1";
pub const DECODER_SCHEMA: &str = "decoder/1";

const DEFAULT_SYNERGY_JSON: &str = include_str!("../data/default_synergy.json");

/// Size range a learned decoder is swept over when none is given.
pub const DEFAULT_LEARNED_RANGE: (f64, f64) = (0.0, 0.15);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint(pub Vec<f64>);

impl LatentPoint {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub joints: JointConfiguration,
    /// The requested size was outside the supported range and was clamped.
    pub size_clamped: bool,
    /// At least one joint angle had to be pulled back into its limits.
    pub limit_clamped: bool,
}

/// Calibrated endpoints for one grasp type.
#[derive(Debug, Clone, PartialEq)]
pub struct PostureSpan {
    pub q_open: JointConfiguration,
    pub q_closed: JointConfiguration,
    pub size_open: f64,
    pub size_closed: f64,
}

impl PostureSpan {
    /// Largest per-joint slope `|q_open - q_closed| / (size_open - size_closed)`.
    pub fn lipschitz(&self) -> f64 {
        let span = self.size_open - self.size_closed;
        self.q_open
            .angles()
            .iter()
            .zip(self.q_closed.angles())
            .map(|(o, c)| (o - c).abs() / span)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSynergy {
    spans: BTreeMap<GraspType, PostureSpan>,
    limits: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedDecoder {
    latent_dim: usize,
    grasp_types: Vec<GraspType>,
    layers: Vec<DenseLayer>,
    size_range: (f64, f64),
    limits: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynergyDecoder {
    Analytic(AnalyticSynergy),
    Learned(LearnedDecoder),
}

// ---- file formats ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynergyFile {
    pub schema: String,
    pub postures: BTreeMap<GraspType, PosturePair>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosturePair {
    pub open: Vec<f64>,
    pub closed: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderFile {
    pub schema: String,
    pub latent_dim: usize,
    pub grasp_types: Vec<GraspType>,
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_range: Option<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Deserialize)]
struct SchemaProbe {
    schema: String,
}

fn json_err(path: &str) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.to_string(),
        source,
    }
}

impl SynergyDecoder {
    /// Analytic decoder for the bundled hand.
    pub fn default_for(model: &HandModel) -> Result<Self> {
        Self::from_json_str(DEFAULT_SYNERGY_JSON, model)
    }

    /// Load either a `synergy/1` posture table or a `decoder/1` weights file.
    pub fn load(path: impl AsRef<Path>, model: &HandModel) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string(), model)
    }

    pub fn from_json_str(text: &str, model: &HandModel) -> Result<Self> {
        Self::parse(text, "<decoder>", model)
    }

    fn parse(text: &str, origin: &str, model: &HandModel) -> Result<Self> {
        let probe: SchemaProbe = serde_json::from_str(text).map_err(json_err(origin))?;
        match probe.schema.as_str() {
            SYNERGY_SCHEMA => {
                let file: SynergyFile = serde_json::from_str(text).map_err(json_err(origin))?;
                Ok(Self::Analytic(AnalyticSynergy::from_file(file, model)?))
            }
            DECODER_SCHEMA => {
                let file: DecoderFile = serde_json::from_str(text).map_err(json_err(origin))?;
                Ok(Self::Learned(LearnedDecoder::from_file(file, model)?))
            }
            other => Err(Error::InvalidDecoder(format!(
                "{origin}: unknown schema `{other}` (expected `{SYNERGY_SCHEMA}` or `{DECODER_SCHEMA}`)"
            ))),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Self::Analytic(_) => 0,
            Self::Learned(l) => l.latent_dim,
        }
    }

    pub fn supports(&self, grasp_type: GraspType) -> bool {
        match self {
            Self::Analytic(a) => a.spans.contains_key(&grasp_type),
            Self::Learned(l) => l.grasp_types.contains(&grasp_type),
        }
    }

    /// `(smallest, largest)` commandable size for a grasp type.
    pub fn size_range(&self, grasp_type: GraspType) -> Result<(f64, f64)> {
        match self {
            Self::Analytic(a) => {
                let span = a.span(grasp_type)?;
                Ok((span.size_closed, span.size_open))
            }
            Self::Learned(l) => {
                l.check_type(grasp_type)?;
                Ok(l.size_range)
            }
        }
    }

    pub fn decode(&self, ctx: &GraspContext, z: &LatentPoint) -> Result<Decoded> {
        match self {
            Self::Analytic(a) => a.decode(ctx),
            Self::Learned(l) => l.decode(ctx, z),
        }
    }
}

impl AnalyticSynergy {
    pub fn from_file(file: SynergyFile, model: &HandModel) -> Result<Self> {
        if file.schema != SYNERGY_SCHEMA {
            return Err(Error::InvalidDecoder(format!("schema `{}`", file.schema)));
        }
        let postures = file
            .postures
            .into_iter()
            .map(|(gt, pair)| {
                (
                    gt,
                    (
                        JointConfiguration(pair.open),
                        JointConfiguration(pair.closed),
                    ),
                )
            })
            .collect();
        Self::calibrate(postures, model)
    }

    /// Measure the open/closed sizes of every posture pair on `model`.
    pub fn calibrate(
        postures: BTreeMap<GraspType, (JointConfiguration, JointConfiguration)>,
        model: &HandModel,
    ) -> Result<Self> {
        if postures.is_empty() {
            return Err(Error::InvalidDecoder("no postures".into()));
        }
        let mut spans = BTreeMap::new();
        for (gt, (q_open, q_closed)) in postures {
            model.validate(&q_open)?;
            model.validate(&q_closed)?;
            let size_open = model.thumb_index_distance(&q_open)?;
            let size_closed = model.thumb_index_distance(&q_closed)?;
            if size_open <= size_closed {
                return Err(Error::InvalidDecoder(format!(
                    "{gt}: open size {size_open} must exceed closed size {size_closed}"
                )));
            }
            spans.insert(
                gt,
                PostureSpan {
                    q_open,
                    q_closed,
                    size_open,
                    size_closed,
                },
            );
        }
        Ok(Self {
            spans,
            limits: model.joints().map(|j| j.limits).collect(),
        })
    }

    pub fn span(&self, grasp_type: GraspType) -> Result<&PostureSpan> {
        self.spans
            .get(&grasp_type)
            .ok_or_else(|| Error::UnsupportedGraspType(grasp_type.to_string()))
    }

    pub fn decode(&self, ctx: &GraspContext) -> Result<Decoded> {
        let span = self.span(ctx.grasp_type)?;
        if !ctx.grasp_size.is_finite() {
            return Err(Error::InvalidParams(format!(
                "grasp size {}",
                ctx.grasp_size
            )));
        }
        let raw = (ctx.grasp_size - span.size_closed) / (span.size_open - span.size_closed);
        let lambda = raw.clamp(0.0, 1.0);
        let size_clamped = lambda != raw;
        let mut angles: Vec<f64> = if lambda == 1.0 {
            span.q_open.0.clone()
        } else if lambda == 0.0 {
            span.q_closed.0.clone()
        } else {
            span.q_closed
                .angles()
                .iter()
                .zip(span.q_open.angles())
                .map(|(c, o)| c + lambda * (o - c))
                .collect()
        };
        let limit_clamped = clamp_angles(&mut angles, &self.limits);
        Ok(Decoded {
            joints: JointConfiguration(angles),
            size_clamped,
            limit_clamped,
        })
    }
}

fn clamp_angles(angles: &mut [f64], limits: &[[f64; 2]]) -> bool {
    let mut clamped = false;
    for (a, [lo, hi]) in angles.iter_mut().zip(limits) {
        let c = a.clamp(*lo, *hi);
        if c != *a {
            *a = c;
            clamped = true;
        }
    }
    clamped
}

impl LearnedDecoder {
    pub fn from_file(file: DecoderFile, model: &HandModel) -> Result<Self> {
        if file.schema != DECODER_SCHEMA {
            return Err(Error::InvalidDecoder(format!("schema `{}`", file.schema)));
        }
        if file.grasp_types.is_empty() {
            return Err(Error::InvalidDecoder("grasp_types is empty".into()));
        }
        if file.layers.is_empty() {
            return Err(Error::InvalidDecoder("no layers".into()));
        }
        let mut width = file.latent_dim + file.grasp_types.len() + 1;
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            if l.cols != width {
                return Err(Error::InvalidDecoder(format!(
                    "layers[{i}] expects {} inputs but receives {width}",
                    l.cols
                )));
            }
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::InvalidDecoder(format!(
                    "layers[{i}] is {}x{} but has {} weights and {} biases",
                    l.rows,
                    l.cols,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::InvalidDecoder(format!(
                    "layers[{i}] has non-finite entries"
                )));
            }
            width = l.rows;
            layers.push(DenseLayer {
                rows: l.rows,
                cols: l.cols,
                weights: l.weights,
                bias: l.bias,
                activation: l.activation,
            });
        }
        if width != model.joint_count() {
            return Err(Error::InvalidDecoder(format!(
                "decoder emits {width} angles, hand has {} joints",
                model.joint_count()
            )));
        }
        let size_range = match file.size_range {
            Some([lo, hi]) if lo < hi => (lo, hi),
            Some([lo, hi]) => {
                return Err(Error::InvalidDecoder(format!(
                    "size_range [{lo}, {hi}] is empty"
                )))
            }
            None => DEFAULT_LEARNED_RANGE,
        };
        Ok(Self {
            latent_dim: file.latent_dim,
            grasp_types: file.grasp_types,
            layers,
            size_range,
            limits: model.joints().map(|j| j.limits).collect(),
        })
    }

    fn check_type(&self, grasp_type: GraspType) -> Result<usize> {
        self.grasp_types
            .iter()
            .position(|g| *g == grasp_type)
            .ok_or_else(|| Error::UnsupportedGraspType(grasp_type.to_string()))
    }

    pub fn decode(&self, ctx: &GraspContext, z: &LatentPoint) -> Result<Decoded> {
        let slot = self.check_type(ctx.grasp_type)?;
        if z.0.len() != self.latent_dim {
            return Err(Error::InvalidParams(format!(
                "latent point has {} components, decoder expects {}",
                z.0.len(),
                self.latent_dim
            )));
        }
        if !ctx.grasp_size.is_finite() || !z.0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("non-finite decoder input".into()));
        }
        let mut x = Vec::with_capacity(self.latent_dim + self.grasp_types.len() + 1);
        x.extend_from_slice(&z.0);
        x.extend((0..self.grasp_types.len()).map(|i| if i == slot { 1.0 } else { 0.0 }));
        x.push(ctx.grasp_size);
        for layer in &self.layers {
            x = layer
                .weights
                .chunks_exact(layer.cols)
                .zip(&layer.bias)
                .map(|(row, b)| {
                    layer
                        .activation
                        .apply(row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + b)
                })
                .collect();
        }
        let limit_clamped = clamp_angles(&mut x, &self.limits);
        let (lo, hi) = self.size_range;
        Ok(Decoded {
            joints: JointConfiguration(x),
            size_clamped: ctx.grasp_size < lo || ctx.grasp_size > hi,
            limit_clamped,
        })
    }
}

/// Commanded size against the thumb-index distance actually achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeMap {
    pub grasp_type: GraspType,
    /// `(commanded, achieved)` pairs sorted by commanded size.
    pub entries: Vec<(f64, f64)>,
    /// Number of adjacent pairs where the achieved size went down.
    pub violations: usize,
}

impl SizeMap {
    pub fn max_deviation(&self) -> f64 {
        self.entries
            .iter()
            .map(|(c, a)| (c - a).abs())
            .fold(0.0, f64::max)
    }
}

/// Sweep the commandable size range and measure the achieved aperture.
pub fn calibrate_size_map(
    decoder: &SynergyDecoder,
    model: &HandModel,
    grasp_type: GraspType,
    n_samples: usize,
) -> Result<SizeMap> {
    if n_samples < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    let (lo, hi) = decoder.size_range(grasp_type)?;
    let z = LatentPoint::zeros(decoder.latent_dim());
    let mut entries = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let commanded = if i == n_samples - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n_samples - 1) as f64
        };
        let decoded = decoder.decode(
            &GraspContext {
                grasp_type,
                grasp_size: commanded,
            },
            &z,
        )?;
        entries.push((commanded, model.thumb_index_distance(&decoded.joints)?));
    }
    let violations = entries
        .windows(2)
        .filter(|w| w[1].1 < w[0].1 - 1e-12)
        .count();
    Ok(SizeMap {
        grasp_type,
        entries,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn analytic() -> (HandModel, SynergyDecoder, AnalyticSynergy) {
        let hand = HandModel::default_hand();
        let dec = SynergyDecoder::default_for(&hand).unwrap();
        let SynergyDecoder::Analytic(a) = dec.clone() else {
            unreachable!()
        };
        (hand, dec, a)
    }

    fn ctx(grasp_type: GraspType, grasp_size: f64) -> GraspContext {
        GraspContext {
            grasp_type,
            grasp_size,
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let (_, dec, a) = analytic();
        let z = LatentPoint::default();
        for gt in GraspType::ALL {
            let span = a.span(gt).unwrap();
            let open = dec.decode(&ctx(gt, span.size_open), &z).unwrap();
            assert_eq!(open.joints, span.q_open);
            assert!(!open.size_clamped);
            let closed = dec.decode(&ctx(gt, span.size_closed), &z).unwrap();
            assert_eq!(closed.joints, span.q_closed);

            let mid = dec
                .decode(&ctx(gt, 0.5 * (span.size_open + span.size_closed)), &z)
                .unwrap();
            for ((m, o), c) in mid
                .joints
                .angles()
                .iter()
                .zip(span.q_open.angles())
                .zip(span.q_closed.angles())
            {
                assert_abs_diff_eq!(*m, 0.5 * (o + c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_size_is_clamped_and_flagged() {
        let (_, dec, a) = analytic();
        let span = a.span(GraspType::Tripod).unwrap();
        let d = dec
            .decode(
                &ctx(GraspType::Tripod, span.size_open + 0.05),
                &LatentPoint::default(),
            )
            .unwrap();
        assert!(d.size_clamped);
        assert_eq!(d.joints, span.q_open);
    }

    #[test]
    fn missing_grasp_type_is_an_error() {
        let hand = HandModel::default_hand();
        let json = r#"{"schema":"synergy/1","postures":{"tripod":{
            "open":[1.5707963267948966,0,0,1.5707963267948966,0,0,1.5707963267948966,0,0],
            "closed":[2.0707963267948966,0.2,-0.7,1.0707963267948966,-0.2,0.7,1.0707963267948966,-0.2,0.7]}}}"#;
        let dec = SynergyDecoder::from_json_str(json, &hand).unwrap();
        assert!(matches!(
            dec.decode(&ctx(GraspType::Pinch, 0.05), &LatentPoint::default()),
            Err(Error::UnsupportedGraspType(_))
        ));
    }

    #[test]
    fn default_spans_are_ordered() {
        let (_, _, a) = analytic();
        for gt in GraspType::ALL {
            let s = a.span(gt).unwrap();
            assert!(s.size_open > s.size_closed + 0.05, "{gt}: {s:?}");
        }
    }

    #[test]
    fn size_map_with_two_samples_is_the_endpoints() {
        let (hand, dec, a) = analytic();
        let map = calibrate_size_map(&dec, &hand, GraspType::Tripod, 2).unwrap();
        let span = a.span(GraspType::Tripod).unwrap();
        assert_eq!(map.entries.len(), 2);
        assert_abs_diff_eq!(map.entries[0].0, span.size_closed, epsilon = 0.0);
        assert_abs_diff_eq!(map.entries[0].1, span.size_closed, epsilon = 1e-12);
        assert_abs_diff_eq!(map.entries[1].1, span.size_open, epsilon = 1e-12);
        assert!(calibrate_size_map(&dec, &hand, GraspType::Tripod, 1).is_err());
    }

    #[test]
    fn analytic_map_is_monotone_and_close_to_identity() {
        let (hand, dec, _) = analytic();
        for gt in GraspType::ALL {
            let map = calibrate_size_map(&dec, &hand, gt, 50).unwrap();
            assert_eq!(map.violations, 0, "{gt}");
            // joint-space interpolation is not linear in aperture; it stays within a few mm
            assert!(map.max_deviation() < 0.01, "{gt}: {}", map.max_deviation());
        }
    }

    #[test]
    fn lipschitz_bound_holds() {
        let (_, dec, a) = analytic();
        let z = LatentPoint::default();
        for gt in GraspType::ALL {
            let span = a.span(gt).unwrap();
            let l = span.lipschitz();
            let sizes: Vec<f64> = (0..=20)
                .map(|i| span.size_closed + (span.size_open - span.size_closed) * i as f64 / 20.0)
                .collect();
            for s1 in &sizes {
                for s2 in &sizes {
                    let q1 = dec.decode(&ctx(gt, *s1), &z).unwrap().joints;
                    let q2 = dec.decode(&ctx(gt, *s2), &z).unwrap().joints;
                    let dq = q1
                        .angles()
                        .iter()
                        .zip(q2.angles())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    assert!(dq <= l * (s1 - s2).abs() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn changing_type_at_fixed_size_never_errors() {
        let (_, dec, _) = analytic();
        for size in [0.0, 0.03, 0.06, 0.2] {
            for gt in GraspType::ALL {
                dec.decode(&ctx(gt, size), &LatentPoint::default()).unwrap();
            }
        }
    }

    fn learned_identity_json(hand: &HandModel, size_gain: f64) -> String {
        // 9 outputs, input = [z0 | 3 one-hot | size]; outputs are constant except index_base
        let cols = 1 + 3 + 1;
        let mut w = vec![0.0; 9 * cols];
        w[4 * cols + 4] = size_gain;
        let mut bias = vec![
            std::f64::consts::FRAC_PI_2,
            0.0,
            0.0,
            1.2,
            0.0,
            0.0,
            std::f64::consts::FRAC_PI_2,
            0.0,
            0.0,
        ];
        bias[4] = 0.0;
        assert_eq!(hand.joint_count(), 9);
        serde_json::json!({
            "schema": "decoder/1",
            "latent_dim": 1,
            "grasp_types": ["tripod", "pinch", "lateral_tripod"],
            "layers": [{"rows": 9, "cols": cols, "weights": w, "bias": bias, "activation": "identity"}]
        })
        .to_string()
    }

    #[test]
    fn learned_forward_pass() {
        let hand = HandModel::default_hand();
        let dec = SynergyDecoder::from_json_str(&learned_identity_json(&hand, 2.0), &hand).unwrap();
        assert_eq!(dec.latent_dim(), 1);
        let d = dec
            .decode(&ctx(GraspType::Pinch, 0.1), &LatentPoint(vec![0.3]))
            .unwrap();
        assert_eq!(d.joints.0[3], 1.2);
        assert_abs_diff_eq!(d.joints.0[4], 0.2, epsilon = 1e-15);
        assert!(dec
            .decode(&ctx(GraspType::Pinch, 0.1), &LatentPoint(vec![]))
            .is_err());
    }

    #[test]
    fn learned_dimension_checks() {
        let hand = HandModel::default_hand();
        let bad = learned_identity_json(&hand, 1.0).replace("\"cols\":5", "\"cols\":4");
        assert!(matches!(
            SynergyDecoder::from_json_str(&bad, &hand),
            Err(Error::InvalidDecoder(_))
        ));
        let unknown = learned_identity_json(&hand, 1.0).replace("decoder/1", "decoder/9");
        assert!(SynergyDecoder::from_json_str(&unknown, &hand).is_err());
    }
}
