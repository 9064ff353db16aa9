mod common;

use common::*;
use proptest::prelude::*;
use recdistill_core::eval::*;
use recdistill_core::model::*;
use recdistill_core::numerics::Tensor;
use recdistill_core::Error;

fn trace(hidden: Tensor) -> ForwardTrace {
    ForwardTrace { embedding_output: hidden.clone(), hidden_states: vec![hidden], attention_maps: vec![], logits: None }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i}")).collect()
}

#[test]
fn zero_projection_gives_the_bias() {
    let mut head = TaskHead::new(HeadKind::TokenClassification, 4, labels(3), 0.0, &mut Init::Zeros).unwrap();
    head.bias = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
    let h = Tensor::new(vec![2, 3, 4], (0..24).map(|v| v as f64 * 0.1).collect()).unwrap();
    let out = head_forward(&trace(h), &head).unwrap();
    assert_eq!(out.shape(), &[2, 3, 3]);
    for row in out.data().chunks(3) {
        assert_eq!(row, &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn sequence_head_reads_the_first_position() {
    let mut head = TaskHead::new(HeadKind::SequenceClassification, 3, labels(2), 0.0, &mut Init::Zeros).unwrap();
    head.projection = Tensor::new(vec![3, 2], vec![1.0, -1.0, 2.0, 0.5, 0.0, 3.0]).unwrap();
    head.bias = Tensor::from_vec(vec![0.1, 0.2]);
    // First position of each row: [1, 2, 3] and [-1, 0, 1].
    let h = Tensor::new(vec![2, 2, 3], vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0, -1.0, 0.0, 1.0, 9.0, 9.0, 9.0]).unwrap();
    let out = head_forward(&trace(h), &head).unwrap();
    assert_eq!(out.shape(), &[2, 2]);
    let want = [1.0 + 4.0 + 0.1, -1.0 + 1.0 + 9.0 + 0.2, -1.0 + 0.1, 1.0 + 3.0 + 0.2];
    for (a, b) in out.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let wrong = Tensor::zeros(&[1, 2, 5]);
    assert!(matches!(head_forward(&trace(wrong), &head), Err(Error::Shape(_))));
}

#[test]
fn heads_need_two_labels() {
    assert!(TaskHead::new(HeadKind::SequenceClassification, 4, labels(1), 0.0, &mut Init::Zeros).is_err());
}

#[test]
fn evaluation_is_deterministic_and_consistent() {
    let toy = toy_corpus(1, 4);
    let data = tagging(&toy, 2, 30);
    let m = task_model(Backbone::Student(student(tiny(toy.vocab.len(), 2), 1)), &data, 1);
    let a = evaluate(&m, &data, 7, false).unwrap();
    assert_eq!(a, evaluate(&m, &data, 7, false).unwrap());
    assert_eq!(a.params_total, count_parameters(&m, false));
    assert_eq!(a.examples, 30);
    assert!(a.entity_f1.is_some());
    for c in &a.per_class {
        assert_eq!(c.tp + c.fn_, c.support);
    }
    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), a);
    assert!(a.to_csv().starts_with(REPORT_CSV_HEADER));
}

#[test]
fn evaluation_errors() {
    let toy = toy_corpus(1, 4);
    let data = classification(&toy, 2, 10);
    let m = task_model(Backbone::Student(student(tiny(toy.vocab.len(), 2), 1)), &data, 1);
    let empty = TaskDataset { examples: vec![], ..data.clone() };
    assert!(matches!(evaluate(&m, &empty, 4, false), Err(Error::Input(_))));
    let other = tagging(&toy, 2, 4);
    assert!(matches!(evaluate(&m, &other, 4, false), Err(Error::Input(_))));
    let bad = recdistill_core::data::ClassificationExample { text: "a".into(), label: "maybe".into() };
    assert!(matches!(TaskDataset::from_classification(&[bad], &toy.vocab, &data.labels, 8), Err(Error::Input(_))));
}

#[test]
fn untrained_model_is_at_chance_on_a_balanced_task() {
    let toy = toy_corpus(2, 4);
    let data = classification(&toy, 5, 1000);
    let m = task_model(Backbone::Student(student(tiny(toy.vocab.len(), 2), 4)), &data, 4);
    let r = evaluate(&m, &data, 100, false).unwrap();
    assert!((r.accuracy - 0.5).abs() <= 0.1, "{}", r.accuracy);
}

#[test]
fn metrics_ignore_example_order() {
    let toy = toy_corpus(3, 4);
    let data = classification(&toy, 6, 24);
    let m = task_model(Backbone::Teacher(teacher(tiny(toy.vocab.len(), 2), 2)), &data, 2);
    let a = evaluate(&m, &data, 5, false).unwrap();
    let mut rev = data.clone();
    rev.examples.reverse();
    assert_eq!(evaluate(&m, &rev, 5, false).unwrap(), a);
}

fn bio() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["O", "B-A", "I-A", "B-B", "I-B"]), 1..12)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn entity_f1_is_one_iff_span_sets_match(pairs in prop::collection::vec((bio(), bio()), 1..5)) {
        let (mut p, mut g): (Vec<_>, Vec<_>) = (vec![], vec![]);
        for (a, b) in pairs {
            let n = a.len().min(b.len());
            p.push(a[..n].to_vec());
            g.push(b[..n].to_vec());
        }
        let f = f1_score(&p, &g, F1Scheme::EntitySpan).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let same = p.iter().zip(&g).all(|(a, b)| bio_spans(a) == bio_spans(b));
        prop_assert_eq!(f == 1.0, same);
        let t = f1_score(&p, &g, F1Scheme::TokenMicro).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
        let mut rp = p.clone();
        let mut rg = g.clone();
        rp.reverse();
        rg.reverse();
        prop_assert_eq!(f1_score(&rp, &rg, F1Scheme::EntitySpan).unwrap(), f);
    }
}
