//! Polyline subgraph encoder plus one global attention step with the ego
//! polyline as the query.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::nn::{attention, attention_backward, Linear, Mlp, MlpTape, Parameters};
use crate::scene::vectorize::attr;
use crate::scene::{PolylineRole, PolylineSet, VectorRow, ATTR_WIDTH};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Inputs per vector: start, end and the attribute block.
pub const VECTOR_INPUT: usize = 4 + ATTR_WIDTH;
/// Scale applied to ego-frame positions before they enter a network.
pub const POSITION_SCALE: f64 = 20.0;
pub const SPEED_SCALE: f64 = 10.0;
const SIZE_SCALE: f64 = 5.0;
const INDEX_SCALE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderDims {
    pub hidden: usize,
    pub embed: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            hidden: 64,
            embed: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub subgraph: Mlp,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// Maps `[context, ego feature, goal]` to the scene embedding.
    pub global: Mlp,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(dims: &EncoderDims, rng: &mut R) -> Self {
        let (h, e) = (dims.hidden, dims.embed);
        EncoderParams {
            subgraph: Mlp::new(&[VECTOR_INPUT, h, h, e], rng),
            query: Linear::init(e, e, rng),
            key: Linear::init(e, e, rng),
            value: Linear::init(e, e, rng),
            global: Mlp::new(&[2 * e + 2, h, h, e], rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.global.out_dim()
    }
}

impl Parameters for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        self.subgraph.visit(&p("subgraph"), f);
        self.query.visit(&p("query"), f);
        self.key.visit(&p("key"), f);
        self.value.visit(&p("value"), f);
        self.global.visit(&p("global"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        self.subgraph.visit_mut(&p("subgraph"), f);
        self.query.visit_mut(&p("query"), f);
        self.key.visit_mut(&p("key"), f);
        self.value.visit_mut(&p("value"), f);
        self.global.visit_mut(&p("global"), f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolylineFeature {
    pub polyline_id: u32,
    pub role: PolylineRole,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneEmbedding {
    pub global_context: Vec<f64>,
    pub polyline_features: Vec<PolylineFeature>,
    /// Ego-query attention row, aligned with `polyline_features`.
    pub attention_weights: Vec<f64>,
}

/// One attention entry for export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub polyline_id: u32,
    pub role: PolylineRole,
    pub weight: f64,
}

impl SceneEmbedding {
    pub fn attention_entries(&self) -> Vec<AttentionEntry> {
        self.polyline_features
            .iter()
            .zip(&self.attention_weights)
            .map(|(p, &w)| AttentionEntry {
                polyline_id: p.polyline_id,
                role: p.role,
                weight: w,
            })
            .collect()
    }

    /// The `k` highest-weight polylines, ties broken by lowest id then role.
    pub fn top_attention(&self, k: usize) -> Vec<AttentionEntry> {
        top_k(self.attention_entries(), k)
    }
}

pub fn top_k(mut entries: Vec<AttentionEntry>, k: usize) -> Vec<AttentionEntry> {
    entries.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.polyline_id.cmp(&b.polyline_id))
            .then(a.role.cmp(&b.role))
    });
    entries.truncate(k);
    entries
}

/// Network input for one vector row.
pub fn vector_input(row: &VectorRow) -> [f64; VECTOR_INPUT] {
    let mut x = [0.0; VECTOR_INPUT];
    x[0] = row.start.x / POSITION_SCALE;
    x[1] = row.start.y / POSITION_SCALE;
    x[2] = row.end.x / POSITION_SCALE;
    x[3] = row.end.y / POSITION_SCALE;
    let a = &mut x[4..];
    a.copy_from_slice(&row.attrs);
    a[attr::SPEED] /= SPEED_SCALE;
    a[attr::LENGTH] /= SIZE_SCALE;
    a[attr::WIDTH] /= SIZE_SCALE;
    a[attr::SPEED_LIMIT] /= SPEED_SCALE;
    a[attr::LOCAL_INDEX] /= INDEX_SCALE;
    x
}

pub fn goal_input(goal: Vec2) -> [f64; 2] {
    [goal.x / POSITION_SCALE, goal.y / POSITION_SCALE]
}

struct PolylineTape {
    tapes: Vec<MlpTape>,
    /// Per output channel, the vector that won the max-pool.
    argmax: Vec<usize>,
}

/// Everything [`backward`] needs from a forward pass.
pub struct EncoderTape {
    polylines: Vec<PolylineTape>,
    global: GlobalTape,
}

struct GlobalTape {
    ego: usize,
    query: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    weights: Vec<f64>,
    mlp: MlpTape,
}

fn encode_one(params: &EncoderParams, vectors: &[VectorRow]) -> Result<(Vec<f64>, PolylineTape)> {
    if vectors.is_empty() {
        return Err(Error::Empty("polyline vectors"));
    }
    let e = params.subgraph.out_dim();
    let mut feat = vec![f64::NEG_INFINITY; e];
    let mut argmax = vec![0; e];
    let mut tapes = Vec::with_capacity(vectors.len());
    for (j, row) in vectors.iter().enumerate() {
        let x = vector_input(row);
        let (y, tape) = params.subgraph.forward(&x)?;
        for c in 0..e {
            if y[c] > feat[c] {
                feat[c] = y[c];
                argmax[c] = j;
            }
        }
        tapes.push(tape);
    }
    Ok((feat, PolylineTape { tapes, argmax }))
}

/// Per-polyline features: subgraph MLP on every vector, then channel-wise
/// max-pool.
pub fn encode_polylines(set: &PolylineSet, params: &EncoderParams) -> Result<Vec<Vec<f64>>> {
    if set.polylines.is_empty() {
        return Err(Error::Empty("polyline set"));
    }
    set.polylines
        .iter()
        .map(|p| {
            if p.vectors.is_empty() {
                return Err(Error::Empty("polyline vectors"));
            }
            let mut feat = vec![f64::NEG_INFINITY; params.subgraph.out_dim()];
            for row in &p.vectors {
                let y = params.subgraph.eval(&vector_input(row))?;
                for (f, v) in feat.iter_mut().zip(y) {
                    *f = f.max(v);
                }
            }
            Ok(feat)
        })
        .collect()
}

/// Attention of the ego feature over all polyline features, followed by the
/// global MLP over `[context, ego feature, goal]`.
pub fn global_interaction(
    set: &PolylineSet,
    features: Vec<Vec<f64>>,
    params: &EncoderParams,
) -> Result<SceneEmbedding> {
    global_forward(set, features, params).map(|(e, _)| e)
}

fn global_forward(
    set: &PolylineSet,
    features: Vec<Vec<f64>>,
    params: &EncoderParams,
) -> Result<(SceneEmbedding, GlobalTape)> {
    let egos: Vec<usize> = set
        .polylines
        .iter()
        .enumerate()
        .filter(|(_, p)| p.role == PolylineRole::Ego)
        .map(|(i, _)| i)
        .collect();
    if egos.len() != 1 {
        return Err(Error::Structure(format!(
            "expected exactly one ego polyline, found {}",
            egos.len()
        )));
    }
    let ego = egos[0];
    let query = params.query.forward(&features[ego]);
    let keys: Vec<Vec<f64>> = features.iter().map(|f| params.key.forward(f)).collect();
    let values: Vec<Vec<f64>> = features.iter().map(|f| params.value.forward(f)).collect();
    let (ctx, weights) = attention(&query, &keys, &values)?;
    let mut gin = ctx;
    gin.extend_from_slice(&features[ego]);
    gin.extend_from_slice(&goal_input(set.goal));
    let (out, mlp) = params.global.forward(&gin)?;
    let emb = SceneEmbedding {
        global_context: out,
        polyline_features: set
            .polylines
            .iter()
            .zip(&features)
            .map(|(p, f)| PolylineFeature {
                polyline_id: p.id,
                role: p.role,
                feature: f.clone(),
            })
            .collect(),
        attention_weights: weights.clone(),
    };
    let tape = GlobalTape {
        ego,
        query,
        keys,
        values,
        features,
        weights,
        mlp,
    };
    Ok((emb, tape))
}

pub fn encode(set: &PolylineSet, params: &EncoderParams) -> Result<SceneEmbedding> {
    let features = encode_polylines(set, params)?;
    global_interaction(set, features, params)
}

pub fn encode_with_tape(set: &PolylineSet, params: &EncoderParams) -> Result<(SceneEmbedding, EncoderTape)> {
    if set.polylines.is_empty() {
        return Err(Error::Empty("polyline set"));
    }
    let mut features = Vec::with_capacity(set.polylines.len());
    let mut polylines = Vec::with_capacity(set.polylines.len());
    for p in &set.polylines {
        let (f, t) = encode_one(params, &p.vectors)?;
        features.push(f);
        polylines.push(t);
    }
    let (emb, global) = global_forward(set, features, params)?;
    Ok((emb, EncoderTape { polylines, global }))
}

/// Backpropagates `d_context` (gradient w.r.t. the global context) through
/// the whole encoder, accumulating into `grads`.
pub fn backward(params: &EncoderParams, tape: &EncoderTape, d_context: &[f64], grads: &mut EncoderParams) -> Result<()> {
    let e = params.embed_dim();
    let (pl, tape) = (&tape.polylines, &tape.global);
    let dgin = params.global.backward(&tape.mlp, d_context, &mut grads.global)?;
    let dctx = &dgin[..e];
    let mut dfeat: Vec<Vec<f64>> = vec![vec![0.0; e]; tape.features.len()];
    for (d, g) in dfeat[tape.ego].iter_mut().zip(&dgin[e..2 * e]) {
        *d += g;
    }
    let ag = attention_backward(&tape.query, &tape.keys, &tape.values, &tape.weights, dctx, None);
    let dq = params
        .query
        .backward(&tape.features[tape.ego], &ag.dquery, &mut grads.query);
    for (d, g) in dfeat[tape.ego].iter_mut().zip(&dq) {
        *d += g;
    }
    for (i, f) in tape.features.iter().enumerate() {
        let dk = params.key.backward(f, &ag.dkeys[i], &mut grads.key);
        let dv = params.value.backward(f, &ag.dvalues[i], &mut grads.value);
        for ((d, a), b) in dfeat[i].iter_mut().zip(&dk).zip(&dv) {
            *d += a + b;
        }
    }
    for (pt, df) in pl.iter().zip(&dfeat) {
        let mut per_vec: Vec<Option<Vec<f64>>> = vec![None; pt.tapes.len()];
        for (c, &j) in pt.argmax.iter().enumerate() {
            if df[c] != 0.0 {
                per_vec[j].get_or_insert_with(|| vec![0.0; e])[c] += df[c];
            }
        }
        for (j, g) in per_vec.into_iter().enumerate() {
            if let Some(g) = g {
                params.subgraph.backward(&pt.tapes[j], &g, &mut grads.subgraph)?;
            }
        }
    }
    Ok(())
}
