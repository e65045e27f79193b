//! The per-channel alignment network.
//!
//! Stages, in order:
//! 1. attribute-aware entity encoder: attention over an entity's
//!    (predicate, value) rows, scored against the previous hidden state;
//! 2. entity → relation: head-view and tail-view attention over every
//!    triple of a relation, combined into one relation vector;
//! 3. relation → entity: attention over outgoing and incoming triples,
//!    concatenated with the entity vector (`x_rel = [x ‖ x_out ‖ x_in]`);
//! 4. entity enhancement: one graph-attention layer over the undirected
//!    neighbourhood, concatenated (`x_out = [x_rel ‖ agg]`).
//!
//! The Structure channel skips stage 1 and learns its entity vectors
//! directly, one table per graph. Empty aggregations produce zero rows.

use std::collections::HashSet;
use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, RowIndex, Segments, Tape, Var};
use crate::embed::{embed_attributes, Embedder};
use crate::error::{Error, Result};
use crate::kg::{ChannelGraph, ChannelKind, IncidenceIndex, PredicateId};
use crate::tensor::Tensor;

/// How the head-view and tail-view relation vectors are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationCombine {
    Sum,
    Concat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionsConfig {
    pub d_entity: usize,
    pub d_attr: usize,
    pub d_value: usize,
    /// Width of the initial entity vectors fed to the first attention layer.
    pub d_init: usize,
    /// Hidden width of each attribute layer; the last must equal `d_entity`.
    pub hidden: Vec<usize>,
    pub d_relation: usize,
}

impl DimensionsConfig {
    /// `attr_layers` layers of width `d_entity`, `d_relation = d_entity`,
    /// and text vectors of width `d_text`.
    pub fn new(d_entity: usize, d_text: usize, attr_layers: usize) -> Self {
        Self {
            d_entity,
            d_attr: d_text,
            d_value: d_text,
            d_init: d_text,
            hidden: vec![d_entity; attr_layers],
            d_relation: d_entity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = self.d_entity > 0
            && self.d_attr > 0
            && self.d_value > 0
            && self.d_init > 0
            && self.d_relation > 0
            && !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0);
        if !all_positive {
            return Err(Error::Validation(format!("dimensions must be positive: {self:?}")));
        }
        if self.hidden.last() != Some(&self.d_entity) {
            return Err(Error::Validation(format!(
                "last attribute layer width {:?} must equal d_entity {}",
                self.hidden.last(),
                self.d_entity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOptions {
    pub relation_combine: RelationCombine,
    /// Run the relation-aware attention stages; when false the output is
    /// the normalized encoder output.
    pub rgat: bool,
    pub leaky_slope: f64,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            relation_combine: RelationCombine::Sum,
            rgat: true,
            leaky_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttrLayer {
    /// `(d_attr + d_value) × hidden[i]`
    pub w: ParamId,
    /// `(previous width + d_attr) × 1`
    pub u: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrEncoderParams {
    pub layers: Vec<AttrLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelGatParams {
    pub w_head: ParamId,
    pub w_tail: ParamId,
    pub a_rel_head: ParamId,
    pub a_rel_tail: ParamId,
    pub a_ent_out: ParamId,
    pub a_ent_in: ParamId,
    pub a_enh: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// All learnable state of one channel, shared by the source and target graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub dims: DimensionsConfig,
    pub options: NetOptions,
    pub store: ParamStore,
    pub attr: Option<AttrEncoderParams>,
    pub rel: Option<RelGatParams>,
    /// Learned entity vectors of the Structure channel (source, target).
    pub entity_init: Option<[ParamId; 2]>,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect()).expect("shape")
}

impl ChannelModel {
    /// Fresh parameters. `n_source`/`n_target` size the Structure
    /// channel's entity tables and are ignored for other channels.
    pub fn new(
        kind: ChannelKind,
        dims: DimensionsConfig,
        options: NetOptions,
        n_source: usize,
        n_target: usize,
        seed: u64,
    ) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut attr = None;
        let mut entity_init = None;
        if kind.has_attributes() {
            let mut layers = Vec::new();
            let mut prev = dims.d_init;
            for (i, &h) in dims.hidden.iter().enumerate() {
                let w = store.add(format!("attr.{i}.w"), xavier(&mut rng, dims.d_attr + dims.d_value, h));
                let u = store.add(format!("attr.{i}.u"), xavier(&mut rng, prev + dims.d_attr, 1));
                layers.push(AttrLayer { w, u });
                prev = h;
            }
            attr = Some(AttrEncoderParams { layers });
        } else {
            let bound = 1.0 / (dims.d_entity as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let mut table = |n: usize| {
                Tensor::from_vec(n, dims.d_entity, (0..n * dims.d_entity).map(|_| dist.sample(&mut rng)).collect())
                    .expect("shape")
            };
            let src = table(n_source);
            let tgt = table(n_target);
            entity_init = Some([store.add("entity.source", src), store.add("entity.target", tgt)]);
        }
        let rel = if options.rgat {
            let (de, dr) = (dims.d_entity, dims.d_relation);
            let dr_out = relation_width(&dims, &options);
            let d_rel = de + 2 * dr_out;
            Some(RelGatParams {
                w_head: store.add("rel.w_head", xavier(&mut rng, de, dr)),
                w_tail: store.add("rel.w_tail", xavier(&mut rng, de, dr)),
                a_rel_head: store.add("rel.a_head", xavier(&mut rng, 2 * dr, 1)),
                a_rel_tail: store.add("rel.a_tail", xavier(&mut rng, 2 * dr, 1)),
                a_ent_out: store.add("rel.a_out", xavier(&mut rng, de + dr_out, 1)),
                a_ent_in: store.add("rel.a_in", xavier(&mut rng, de + dr_out, 1)),
                a_enh: store.add("rel.a_enh", xavier(&mut rng, 2 * d_rel, 1)),
            })
        } else {
            None
        };
        Ok(Self {
            kind,
            dims,
            options,
            store,
            attr,
            rel,
            entity_init,
        })
    }

    /// Width of the relation vectors.
    pub fn relation_dim(&self) -> usize {
        relation_width(&self.dims, &self.options)
    }

    /// Width of `x_rel = [x ‖ x_out ‖ x_in]`.
    pub fn relation_aware_dim(&self) -> usize {
        self.dims.d_entity + 2 * self.relation_dim()
    }

    /// Width of the channel output.
    pub fn output_dim(&self) -> usize {
        if self.options.rgat {
            2 * self.relation_aware_dim()
        } else {
            self.dims.d_entity
        }
    }

    pub fn num_entities(&self, side: Side) -> Option<usize> {
        self.entity_init
            .map(|ids| self.store.get(ids[side_index(side)]).value.rows())
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Source => 0,
        Side::Target => 1,
    }
}

fn relation_width(dims: &DimensionsConfig, options: &NetOptions) -> usize {
    match options.relation_combine {
        RelationCombine::Sum => dims.d_relation,
        RelationCombine::Concat => 2 * dims.d_relation,
    }
}

/// Index arrays derived from a graph's incidence tables.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    pub num_entities: usize,
    pub num_relations: usize,
    pub heads: RowIndex,
    pub tails: RowIndex,
    pub relations: RowIndex,
    pub by_relation: Segments,
    pub by_head: Segments,
    pub by_tail: Segments,
    pub edge_from: RowIndex,
    pub edge_to: RowIndex,
    pub by_edge_from: Segments,
}

impl GraphTopology {
    pub fn new(idx: &IncidenceIndex) -> Result<Self> {
        let n = idx.num_entities();
        let r = idx.num_relations();
        let triples = idx.triples();
        let heads: Vec<usize> = triples.iter().map(|t| t.head.0).collect();
        let tails: Vec<usize> = triples.iter().map(|t| t.tail.0).collect();
        let rels: Vec<usize> = triples.iter().map(|t| t.relation.0).collect();
        let mut from = Vec::new();
        let mut to = Vec::new();
        for (i, nbrs) in idx.neighbors.iter().enumerate() {
            for j in nbrs {
                from.push(i);
                to.push(j.0);
            }
        }
        Ok(Self {
            num_entities: n,
            num_relations: r,
            by_relation: Segments::new(rels.clone(), r)?,
            by_head: Segments::new(heads.clone(), n)?,
            by_tail: Segments::new(tails.clone(), n)?,
            heads: heads.into(),
            tails: tails.into(),
            relations: rels.into(),
            by_edge_from: Segments::new(from.clone(), n)?,
            edge_from: from.into(),
            edge_to: to.into(),
        })
    }
}

/// Attribute rows of one graph in one channel.
#[derive(Debug, Clone)]
pub struct AttrInput {
    /// `[a_j ; v_j]` rows.
    pub attr_value: Tensor,
    /// `a_j` rows.
    pub attr: Tensor,
    pub owner: RowIndex,
    pub by_owner: Segments,
    /// Initial entity vectors `h⁰`.
    pub init: Tensor,
}

/// Everything one graph contributes to a channel's forward pass.
#[derive(Debug, Clone)]
pub struct ChannelInput {
    pub kind: ChannelKind,
    pub side: Side,
    pub topology: Arc<GraphTopology>,
    pub attrs: Option<AttrInput>,
}

impl ChannelInput {
    /// Embeds the channel's attribute rows and the entity names used as `h⁰`.
    pub fn build(
        channel: &ChannelGraph<'_>,
        side: Side,
        topology: Arc<GraphTopology>,
        embedder: &Embedder,
        name_predicates: &HashSet<PredicateId>,
    ) -> Result<Self> {
        let attrs = if channel.kind.has_attributes() {
            let feats = embed_attributes(channel, embedder)?;
            let n = channel.num_entities();
            let dim = embedder.dim();
            let mut init = Tensor::zeros(n, dim);
            for (e, name) in channel.graph.entity_names(name_predicates).into_iter().enumerate() {
                if let Some(name) = name {
                    init.row_mut(e).copy_from_slice(&embedder.embed(name));
                }
            }
            Some(AttrInput::new(feats.attr, feats.value, feats.entity, init)?)
        } else {
            None
        };
        Ok(Self {
            kind: channel.kind,
            side,
            topology,
            attrs,
        })
    }
}

impl AttrInput {
    pub fn new(attr: Tensor, value: Tensor, owner: Vec<usize>, init: Tensor) -> Result<Self> {
        if attr.rows() != value.rows() || attr.rows() != owner.len() {
            return Err(Error::Contract(format!(
                "attribute rows disagree: {} predicates, {} values, {} owners",
                attr.rows(),
                value.rows(),
                owner.len()
            )));
        }
        let m = attr.rows();
        let mut attr_value = Tensor::zeros(m, attr.cols() + value.cols());
        for r in 0..m {
            let row = attr_value.row_mut(r);
            row[..attr.cols()].copy_from_slice(attr.row(r));
            row[attr.cols()..].copy_from_slice(value.row(r));
        }
        let by_owner = Segments::new(owner.clone(), init.rows())?;
        Ok(Self {
            attr_value,
            attr,
            owner: owner.into(),
            by_owner,
            init,
        })
    }
}

/// Tape handles of the intermediate results of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub x: Option<Var>,
    pub relations: Option<Var>,
    pub x_rel: Option<Var>,
    pub x_out: Option<Var>,
    pub output: Option<Var>,
    /// Every attention-weight column with the segments it is normalized over.
    pub attention: Vec<(&'static str, Var, Segments)>,
}

/// Attribute-aware entity encoding:
/// `o_j = LeakyReLU(uᵀ[h_e ; a_j])`, `α = softmax_e(o)`, `h_e' = ELU(Σ_j α_j [a_j ; v_j] W)`.
pub fn attr_entity_encode(
    tape: &mut Tape,
    model: &ChannelModel,
    input: &AttrInput,
    trace: &mut ForwardTrace,
) -> Result<Var> {
    let params = model
        .attr
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("{} channel has no attribute encoder", model.kind)))?;
    let dims = &model.dims;
    if input.attr.cols() != dims.d_attr || input.attr_value.cols() != dims.d_attr + dims.d_value {
        return Err(Error::Contract(format!(
            "attribute features are {}+{} wide, model expects {}+{}",
            input.attr.cols(),
            input.attr_value.cols() - input.attr.cols(),
            dims.d_attr,
            dims.d_value
        )));
    }
    if input.init.cols() != dims.d_init {
        return Err(Error::Contract(format!(
            "initial entity vectors are {} wide, model expects {}",
            input.init.cols(),
            dims.d_init
        )));
    }
    let av = tape.constant(input.attr_value.clone())?;
    let a = tape.constant(input.attr.clone())?;
    let mut h = tape.constant(input.init.clone())?;
    for layer in &params.layers {
        let w = tape.param(&model.store, layer.w);
        let u = tape.param(&model.store, layer.u);
        let h_rows = tape.gather_rows(h, &input.owner)?;
        let query = tape.concat(&[h_rows, a])?;
        let logits = tape.matmul(query, u)?;
        let scores = tape.leaky_relu(logits, model.options.leaky_slope)?;
        let alpha = tape.segment_softmax(scores, &input.by_owner)?;
        trace.attention.push(("attribute", alpha, input.by_owner.clone()));
        let proj = tape.linear(av, w)?;
        let agg = tape.weighted_segment_sum(alpha, proj, &input.by_owner)?;
        h = tape.elu(agg)?;
    }
    Ok(h)
}

fn attention_scores(tape: &mut Tape, parts: &[Var], a: Var, slope: f64) -> Result<Var> {
    let cat = tape.concat(parts)?;
    let logits = tape.matmul(cat, a)?;
    tape.leaky_relu(logits, slope)
}

/// Relation vectors from the entities they connect.
pub fn relation_from_entities(
    tape: &mut Tape,
    model: &ChannelModel,
    x: Var,
    topo: &GraphTopology,
    trace: &mut ForwardTrace,
) -> Result<Var> {
    let p = model
        .rel
        .ok_or_else(|| Error::Contract("relation attention is disabled for this model".into()))?;
    let slope = model.options.leaky_slope;
    let w_head = tape.param(&model.store, p.w_head);
    let w_tail = tape.param(&model.store, p.w_tail);
    let a_head = tape.param(&model.store, p.a_rel_head);
    let a_tail = tape.param(&model.store, p.a_rel_tail);
    let xh = tape.matmul(x, w_head)?;
    let xt = tape.matmul(x, w_tail)?;
    let h = tape.gather_rows(xh, &topo.heads)?;
    let t = tape.gather_rows(xt, &topo.tails)?;

    let s_head = attention_scores(tape, &[h, t], a_head, slope)?;
    let alpha_head = tape.segment_softmax(s_head, &topo.by_relation)?;
    let r_head = tape.weighted_segment_sum(alpha_head, h, &topo.by_relation)?;
    let r_head = tape.relu(r_head)?;

    let s_tail = attention_scores(tape, &[h, t], a_tail, slope)?;
    let alpha_tail = tape.segment_softmax(s_tail, &topo.by_relation)?;
    let r_tail = tape.weighted_segment_sum(alpha_tail, t, &topo.by_relation)?;
    let r_tail = tape.relu(r_tail)?;

    trace.attention.push(("relation.head", alpha_head, topo.by_relation.clone()));
    trace.attention.push(("relation.tail", alpha_tail, topo.by_relation.clone()));
    match model.options.relation_combine {
        RelationCombine::Sum => tape.add(r_head, r_tail),
        RelationCombine::Concat => tape.concat(&[r_head, r_tail]),
    }
}

/// `x_rel = [x ‖ x_out ‖ x_in]` from attention over each entity's outgoing
/// and incoming triples.
pub fn entity_from_relations(
    tape: &mut Tape,
    model: &ChannelModel,
    x: Var,
    r: Var,
    topo: &GraphTopology,
    trace: &mut ForwardTrace,
) -> Result<Var> {
    let p = model
        .rel
        .ok_or_else(|| Error::Contract("relation attention is disabled for this model".into()))?;
    let slope = model.options.leaky_slope;
    let a_out = tape.param(&model.store, p.a_ent_out);
    let a_in = tape.param(&model.store, p.a_ent_in);
    let rk = tape.gather_rows(r, &topo.relations)?;

    let xi = tape.gather_rows(x, &topo.heads)?;
    let s_out = attention_scores(tape, &[xi, rk], a_out, slope)?;
    let alpha_out = tape.segment_softmax(s_out, &topo.by_head)?;
    let x_out = tape.weighted_segment_sum(alpha_out, rk, &topo.by_head)?;
    let x_out = tape.relu(x_out)?;

    let xj = tape.gather_rows(x, &topo.tails)?;
    let s_in = attention_scores(tape, &[xj, rk], a_in, slope)?;
    let alpha_in = tape.segment_softmax(s_in, &topo.by_tail)?;
    let x_in = tape.weighted_segment_sum(alpha_in, rk, &topo.by_tail)?;
    let x_in = tape.relu(x_in)?;

    trace.attention.push(("entity.out", alpha_out, topo.by_head.clone()));
    trace.attention.push(("entity.in", alpha_in, topo.by_tail.clone()));
    tape.concat(&[x, x_out, x_in])
}

/// `x_out = [x_rel ‖ ReLU(Σ_{j∈N_i} α_ij x_rel_j)]`.
pub fn entity_enhance(
    tape: &mut Tape,
    model: &ChannelModel,
    x_rel: Var,
    topo: &GraphTopology,
    trace: &mut ForwardTrace,
) -> Result<Var> {
    let p = model
        .rel
        .ok_or_else(|| Error::Contract("relation attention is disabled for this model".into()))?;
    let a = tape.param(&model.store, p.a_enh);
    let xi = tape.gather_rows(x_rel, &topo.edge_from)?;
    let xj = tape.gather_rows(x_rel, &topo.edge_to)?;
    let s = attention_scores(tape, &[xi, xj], a, model.options.leaky_slope)?;
    let alpha = tape.segment_softmax(s, &topo.by_edge_from)?;
    let agg = tape.weighted_segment_sum(alpha, xj, &topo.by_edge_from)?;
    let agg = tape.relu(agg)?;
    trace.attention.push(("enhance", alpha, topo.by_edge_from.clone()));
    tape.concat(&[x_rel, agg])
}

/// Full channel forward pass; returns L2-row-normalized embeddings.
pub fn channel_forward(tape: &mut Tape, model: &ChannelModel, input: &ChannelInput) -> Result<Var> {
    channel_forward_traced(tape, model, input).map(|(v, _)| v)
}

pub fn channel_forward_traced(
    tape: &mut Tape,
    model: &ChannelModel,
    input: &ChannelInput,
) -> Result<(Var, ForwardTrace)> {
    if model.kind != input.kind {
        return Err(Error::Contract(format!(
            "{} model applied to {} channel input",
            model.kind, input.kind
        )));
    }
    let topo = &input.topology;
    let n = topo.num_entities;
    let mut trace = ForwardTrace::default();
    let x = match (model.entity_init, &input.attrs) {
        (Some(ids), _) => {
            let x = tape.param(&model.store, ids[side_index(input.side)]);
            if tape.value(x).rows() != n {
                return Err(Error::Contract(format!(
                    "structure table has {} rows for a graph of {n} entities",
                    tape.value(x).rows()
                )));
            }
            x
        }
        (None, Some(attrs)) => attr_entity_encode(tape, model, attrs, &mut trace)?,
        (None, None) => return Err(Error::Contract(format!("{} channel input lacks attributes", input.kind))),
    };
    check_width(tape, x, n, model.dims.d_entity, "x")?;
    trace.x = Some(x);
    let out = if model.options.rgat {
        let r = relation_from_entities(tape, model, x, topo, &mut trace)?;
        check_width(tape, r, topo.num_relations, model.relation_dim(), "relations")?;
        let x_rel = entity_from_relations(tape, model, x, r, topo, &mut trace)?;
        check_width(tape, x_rel, n, model.relation_aware_dim(), "x_rel")?;
        let x_out = entity_enhance(tape, model, x_rel, topo, &mut trace)?;
        check_width(tape, x_out, n, model.output_dim(), "x_out")?;
        trace.relations = Some(r);
        trace.x_rel = Some(x_rel);
        trace.x_out = Some(x_out);
        x_out
    } else {
        x
    };
    let normalized = tape.l2_normalize_rows(out)?;
    trace.output = Some(normalized);
    Ok((normalized, trace))
}

fn check_width(tape: &Tape, v: Var, rows: usize, cols: usize, what: &str) -> Result<()> {
    let shape = tape.value(v).shape();
    if shape != (rows, cols) {
        return Err(Error::Contract(format!("{what} has shape {shape:?}, expected ({rows}, {cols})")));
    }
    Ok(())
}

/// Forward pass without keeping the tape; returns the output rows.
pub fn embed(model: &ChannelModel, input: &ChannelInput) -> Result<Tensor> {
    let mut tape = Tape::new();
    let out = channel_forward(&mut tape, model, input)?;
    Ok(tape.value(out).clone())
}
