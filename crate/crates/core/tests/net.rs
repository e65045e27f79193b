use std::collections::HashSet;
use std::sync::Arc;

use raea_core::autodiff::{gradient_check, Distance, GradCheckConfig, Tape};
use raea_core::embed::{Embedder, HashNGramConfig};
use raea_core::kg::{partition_channels, ChannelKind, DigitalRule, IncidenceIndex, KnowledgeGraph, RelationTriple};
use raea_core::net::{
    attr_entity_encode, channel_forward, channel_forward_traced, embed, entity_enhance, entity_from_relations,
    relation_from_entities, AttrInput, ChannelInput, ChannelModel, DimensionsConfig, ForwardTrace, GraphTopology,
    NetOptions, RelationCombine, Side,
};
use raea_core::tensor::Tensor;
use raea_core::train::{margin_loss, NegativeSampleSet};

fn small_dims() -> DimensionsConfig {
    DimensionsConfig {
        d_entity: 3,
        d_attr: 2,
        d_value: 2,
        d_init: 2,
        hidden: vec![3],
        d_relation: 3,
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn encoder_output(model: &ChannelModel, input: &AttrInput) -> (Tensor, Vec<f64>) {
    let mut tape = Tape::new();
    let mut trace = ForwardTrace::default();
    let h = attr_entity_encode(&mut tape, model, input, &mut trace).unwrap();
    let alpha = tape.value(trace.attention[0].1).data().to_vec();
    (tape.value(h).clone(), alpha)
}

fn literal_model(dims: DimensionsConfig, rgat: bool) -> ChannelModel {
    let opts = NetOptions { rgat, ..Default::default() };
    ChannelModel::new(ChannelKind::Literal, dims, opts, 0, 0, 3).unwrap()
}

#[test]
fn single_attribute_gets_full_weight() {
    let model = literal_model(small_dims(), false);
    let attr = Tensor::from_rows(&[vec![0.3, -0.4]]).unwrap();
    let value = Tensor::from_rows(&[vec![0.5, 0.1]]).unwrap();
    let input = AttrInput::new(attr, value, vec![0], Tensor::zeros(1, 2)).unwrap();
    let (h, alpha) = encoder_output(&model, &input);
    assert_eq!(alpha, vec![1.0]);
    let w = &model.store.get(model.attr.as_ref().unwrap().layers[0].w).value;
    let av = [0.3, -0.4, 0.5, 0.1];
    for c in 0..3 {
        let z: f64 = (0..4).map(|k| av[k] * w.get(k, c)).sum();
        assert!((h.get(0, c) - elu(z)).abs() < 1e-12);
    }
}

#[test]
fn identical_attributes_split_attention_evenly() {
    let model = literal_model(small_dims(), false);
    let row = vec![0.2, 0.7];
    let attr = Tensor::from_rows(&[row.clone(), row.clone()]).unwrap();
    let value = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let input = AttrInput::new(attr, value, vec![0, 0], Tensor::zeros(1, 2)).unwrap();
    let (_, alpha) = encoder_output(&model, &input);
    assert_eq!(alpha, vec![0.5, 0.5]);
}

#[test]
fn entity_without_attributes_encodes_to_zero() {
    let model = literal_model(small_dims(), false);
    let attr = Tensor::from_rows(&[vec![0.2, 0.7]]).unwrap();
    let value = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let input = AttrInput::new(attr, value, vec![1], Tensor::zeros(2, 2)).unwrap();
    let (h, _) = encoder_output(&model, &input);
    assert!(h.row(0).iter().all(|&v| v == 0.0));
    assert!(h.row(1).iter().any(|&v| v != 0.0));
}

fn topology(n: usize, triples: &[(usize, usize, usize)], n_rel: usize) -> GraphTopology {
    let ts: Vec<RelationTriple> = triples
        .iter()
        .map(|&(h, r, t)| RelationTriple {
            head: raea_core::kg::EntityId(h),
            relation: raea_core::kg::RelationId(r),
            tail: raea_core::kg::EntityId(t),
        })
        .collect();
    GraphTopology::new(&IncidenceIndex::build(n, n_rel, &ts)).unwrap()
}

#[test]
fn zero_entities_give_zero_relation() {
    let model = literal_model(small_dims(), true);
    let topo = topology(2, &[(0, 0, 1)], 1);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(2, 3)).unwrap();
    let r = relation_from_entities(&mut tape, &model, x, &topo, &mut ForwardTrace::default()).unwrap();
    assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
}

#[test]
fn entity_without_outgoing_triples_has_zero_out_part() {
    let model = literal_model(small_dims(), true);
    let topo = topology(3, &[(0, 0, 1), (1, 0, 2)], 1);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.5, -0.2, 0.1], vec![0.3, 0.3, 0.3]]).unwrap()).unwrap();
    let mut trace = ForwardTrace::default();
    let r = relation_from_entities(&mut tape, &model, x, &topo, &mut trace).unwrap();
    let xr = entity_from_relations(&mut tape, &model, x, r, &topo, &mut trace).unwrap();
    let v = tape.value(xr);
    assert_eq!(v.cols(), 3 + 3 + 3);
    // entity 2 is never a head, entity 0 never a tail
    assert!(v.row(2)[3..6].iter().all(|&a| a == 0.0));
    assert!(v.row(0)[6..9].iter().all(|&a| a == 0.0));
}

#[test]
fn isolated_entity_keeps_its_vector_and_zero_neighbourhood() {
    let model = literal_model(small_dims(), true);
    let topo = topology(3, &[(0, 0, 1)], 1);
    let mut tape = Tape::new();
    let x_rel = tape.constant(Tensor::from_vec(3, 9, (0..27).map(|i| i as f64 * 0.01).collect()).unwrap()).unwrap();
    let out = entity_enhance(&mut tape, &model, x_rel, &topo, &mut ForwardTrace::default()).unwrap();
    let v = tape.value(out);
    assert_eq!(&v.row(2)[..9], &(18..27).map(|i| i as f64 * 0.01).collect::<Vec<_>>()[..]);
    assert!(v.row(2)[9..].iter().all(|&a| a == 0.0));
}

fn toy_graph(order: &[usize]) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::new();
    for &i in order {
        kg.intern_entity(&format!("e{i}"));
    }
    let triples = [(0, "a", 1), (1, "b", 2), (2, "a", 3), (3, "c", 0), (4, "b", 0), (1, "a", 4), (5, "c", 3), (6, "a", 7), (7, "b", 8), (8, "c", 9), (9, "a", 6), (2, "c", 5)];
    for &(h, r, t) in &triples {
        kg.add_relation(&format!("e{h}"), r, &format!("e{t}"));
    }
    for &i in order {
        kg.add_attribute(&format!("e{i}"), "name", &format!("item {i}"));
        kg.add_attribute(&format!("e{i}"), "colour", ["red", "green", "blue"][i % 3]);
        kg.add_attribute(&format!("e{i}"), "material", &format!("alloy {}", i * 7 % 5));
        kg.add_attribute(&format!("e{i}"), "weight", &format!("{}.5 kg", i));
    }
    kg.reindex();
    kg
}

fn inputs(kg: &KnowledgeGraph, kind: ChannelKind, side: Side, dim: usize) -> ChannelInput {
    let names: HashSet<_> = kg.predicate_id("name").into_iter().collect();
    let channels = partition_channels(kg, &names, &DigitalRule::default());
    let idx = ChannelKind::ALL.iter().position(|&k| k == kind).unwrap();
    let embedder = Embedder::Hashed(HashNGramConfig { dim, ..Default::default() });
    ChannelInput::build(&channels[idx], side, Arc::new(GraphTopology::new(kg.incidence()).unwrap()), &embedder, &names).unwrap()
}

#[test]
fn output_dimensions_follow_the_stage_chain() {
    let kg = toy_graph(&(0..10).collect::<Vec<_>>());
    let input = inputs(&kg, ChannelKind::Literal, Side::Source, 16);
    for (combine, d_rel, d_out) in [(RelationCombine::Sum, 8 + 16, 2 * (8 + 16)), (RelationCombine::Concat, 8 + 32, 2 * (8 + 32))] {
        let opts = NetOptions { relation_combine: combine, ..Default::default() };
        let model = ChannelModel::new(ChannelKind::Literal, DimensionsConfig::new(8, 16, 2), opts, 0, 0, 1).unwrap();
        assert_eq!(model.relation_aware_dim(), d_rel);
        let mut tape = Tape::new();
        let (out, trace) = channel_forward_traced(&mut tape, &model, &input).unwrap();
        assert_eq!(tape.value(out).shape(), (10, d_out));
        assert_eq!(tape.value(trace.x.unwrap()).shape(), (10, 8));
        for r in 0..10 {
            let norm: f64 = tape.value(out).row(r).iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn without_relation_attention_output_is_encoder_width() {
    let kg = toy_graph(&(0..10).collect::<Vec<_>>());
    let input = inputs(&kg, ChannelKind::Literal, Side::Source, 16);
    let opts = NetOptions { rgat: false, ..Default::default() };
    let model = ChannelModel::new(ChannelKind::Literal, DimensionsConfig::new(8, 16, 2), opts, 0, 0, 1).unwrap();
    assert!(model.rel.is_none());
    assert_eq!(embed(&model, &input).unwrap().shape(), (10, 8));
}

#[test]
fn structure_channel_uses_one_table_per_side() {
    let kg = toy_graph(&(0..10).collect::<Vec<_>>());
    let src = inputs(&kg, ChannelKind::Structure, Side::Source, 16);
    let tgt = inputs(&kg, ChannelKind::Structure, Side::Target, 16);
    let model = ChannelModel::new(ChannelKind::Structure, DimensionsConfig::new(8, 16, 1), NetOptions::default(), 10, 10, 2).unwrap();
    assert!(model.attr.is_none());
    let a = embed(&model, &src).unwrap();
    let b = embed(&model, &tgt).unwrap();
    assert_eq!(a.shape(), (10, 2 * (8 + 2 * 8)));
    assert_ne!(a, b);
    let wrong = ChannelModel::new(ChannelKind::Structure, DimensionsConfig::new(8, 16, 1), NetOptions::default(), 9, 10, 2).unwrap();
    assert!(embed(&wrong, &src).is_err());
    let lit = ChannelModel::new(ChannelKind::Literal, DimensionsConfig::new(8, 16, 1), NetOptions::default(), 0, 0, 2).unwrap();
    assert!(embed(&lit, &src).is_err());
}

#[test]
fn attention_weights_are_distributions() {
    let kg = toy_graph(&(0..10).collect::<Vec<_>>());
    let input = inputs(&kg, ChannelKind::Literal, Side::Source, 16);
    let model = ChannelModel::new(ChannelKind::Literal, DimensionsConfig::new(8, 16, 2), NetOptions::default(), 0, 0, 5).unwrap();
    let mut tape = Tape::new();
    let (_, trace) = channel_forward_traced(&mut tape, &model, &input).unwrap();
    assert_eq!(trace.attention.len(), 2 + 2 + 2 + 1);
    for (name, alpha, segs) in &trace.attention {
        let a = tape.value(*alpha).data();
        for s in 0..segs.count() {
            let m = segs.members(s);
            if !m.is_empty() {
                let total: f64 = m.iter().map(|&i| a[i]).sum();
                assert!((total - 1.0).abs() < 1e-9, "{name} segment {s}: {total}");
            }
        }
    }
}

#[test]
fn relabelling_entities_permutes_outputs_exactly() {
    let ident: Vec<usize> = (0..10).collect();
    let perm = vec![7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
    let a = toy_graph(&ident);
    let b = toy_graph(&perm);
    let model = ChannelModel::new(ChannelKind::Literal, DimensionsConfig::new(8, 16, 2), NetOptions::default(), 0, 0, 11).unwrap();
    let ea = embed(&model, &inputs(&a, ChannelKind::Literal, Side::Source, 16)).unwrap();
    let eb = embed(&model, &inputs(&b, ChannelKind::Literal, Side::Source, 16)).unwrap();
    for i in 0..10 {
        let j = b.entity_id(&format!("e{i}")).unwrap().index();
        assert_eq!(ea.row(i), eb.row(j), "entity e{i}");
    }
}

fn grad_check_channel(kind: ChannelKind) {
    let kg1 = toy_graph(&(0..10).collect::<Vec<_>>());
    let kg2 = toy_graph(&[3, 1, 4, 0, 5, 9, 2, 6, 8, 7]);
    let src = inputs(&kg1, kind, Side::Source, 6);
    let tgt = inputs(&kg2, kind, Side::Target, 6);
    let model = ChannelModel::new(kind, DimensionsConfig::new(4, 6, 2), NetOptions::default(), 10, 10, 9).unwrap();
    let seeds: Vec<(usize, usize)> = (0..4).map(|i| (i, kg2.entity_id(&format!("e{i}")).unwrap().index())).collect();
    let negs = NegativeSampleSet {
        epoch: 1,
        source: seeds.iter().map(|&(s, _)| vec![(s + 3) % 10, (s + 5) % 10]).collect(),
        target: seeds.iter().map(|&(_, t)| vec![(t + 1) % 10, (t + 7) % 10]).collect(),
    };
    let loss = |tape: &mut Tape, store: &raea_core::autodiff::ParamStore| {
        let mut m = model.clone();
        m.store = store.clone();
        let s = channel_forward(tape, &m, &src)?;
        let t = channel_forward(tape, &m, &tgt)?;
        margin_loss(tape, s, t, &seeds, &negs, 3.0, Distance::L1)
    };
    let report = gradient_check(&model.store, loss, GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{kind}: {report:?}");
    assert!(report.checked > report.skipped_at_kinks, "{report:?}");
}

#[test]
fn composed_gradients_match_finite_differences_literal() {
    grad_check_channel(ChannelKind::Literal);
}

#[test]
fn composed_gradients_match_finite_differences_structure() {
    grad_check_channel(ChannelKind::Structure);
}
