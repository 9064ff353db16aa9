use recdistill_core::model::*;
use recdistill_core::numerics::{ops, Tape, Tensor};
use recdistill_core::seed::{rng, Stream};
use recdistill_core::Error;

fn cfg(layers: usize) -> ModelConfig {
    ModelConfig { num_layers: layers, dropout_prob: 0.0, ..ModelConfig::tiny(40) }
}

fn batch() -> TokenBatch {
    TokenBatch::new(
        vec![2, 7, 9, 11, 3, 0, 2, 5, 6, 8, 13, 3],
        vec![true, true, true, true, true, false, true, true, true, true, true, true],
        2,
        6,
    )
    .unwrap()
}

fn student(layers: usize, b: usize, seed: u64) -> RecursiveStudent {
    let mut r = rng(seed, Stream::Init, 0);
    let c = ModelConfig { adapter_bottleneck: b, ..cfg(layers) };
    RecursiveStudent::new(c, &mut Init::Normal(&mut r)).unwrap()
}

fn randomize_up(s: &mut RecursiveStudent, seed: u64) {
    let mut r = rng(seed, Stream::Synthetic, 0);
    let mut init = Init::Normal(&mut r);
    for pair in &mut s.adapters {
        pair.att.up_w = init.weight(pair.att.up_w.shape());
        pair.mlp.up_w = init.weight(pair.mlp.up_w.shape());
    }
}

fn max_diff(a: &ForwardTrace, b: &ForwardTrace) -> f64 {
    let mut m = a.embedding_output.max_abs_diff(&b.embedding_output);
    for (x, y) in a.hidden_states.iter().zip(&b.hidden_states) {
        m = m.max(x.max_abs_diff(y));
    }
    for (x, y) in a.attention_maps.iter().zip(&b.attention_maps) {
        m = m.max(x.max_abs_diff(y));
    }
    m.max(a.logits.as_ref().unwrap().max_abs_diff(b.logits.as_ref().unwrap()))
}

#[test]
fn unroll_equivalence() {
    for layers in [1, 2, 4, 6] {
        for b in [0, 3] {
            let mut s = student(layers, b, 7 + layers as u64);
            randomize_up(&mut s, 3);
            let unrolled = s.materialize_unrolled();
            assert_eq!(unrolled.num_layers(), layers);
            let a = s.forward_trace(&batch()).unwrap();
            let u = unrolled.forward_trace(&batch()).unwrap();
            assert_eq!(a.hidden_states.len(), layers);
            assert!(max_diff(&a, &u) < 1e-10, "L={layers} b={b}");
        }
    }
}

#[test]
fn unrolled_parameter_count() {
    let s = student(4, 3, 1);
    let u = s.materialize_unrolled();
    let block = TransformerBlockParams::expected_count(16, 32);
    let shared = count_parameters(&s, false) - block;
    assert_eq!(count_parameters(&u, false), shared + 4 * block);
    assert_eq!(count_parameters(&student(1, 0, 1).materialize_unrolled(), false), count_parameters(&student(1, 0, 1), false));
}

#[test]
fn tied_gradient_law() {
    let mut s = student(3, 2, 11);
    randomize_up(&mut s, 5);
    let b = batch();
    let loss_of = |m: &dyn Encoder, tape: &mut Tape| {
        let vars = m.encode(tape, &b, &mut Mode::Eval).unwrap();
        let logits = m.mlm_logits(tape, vars.last_hidden()).unwrap();
        let labels: Vec<Option<usize>> = (0..12).map(|i| (i % 3 == 0).then_some(i + 1)).collect();
        let loss = tape.cross_entropy_rows(logits, &labels, 0.25).unwrap();
        tape.backward(loss).unwrap();
    };
    let mut ts = Tape::new();
    loss_of(&s, &mut ts);
    let u = s.materialize_unrolled();
    let mut tu = Tape::new();
    loss_of(&u, &mut tu);

    let mut names = Vec::new();
    s.block.visit("block", &mut |n, _| names.push(n.to_string()));
    // One scale for the whole block: the key bias gradient is exactly zero
    // and carries only rounding noise.
    let (mut gap, mut scale) = (0.0f64, 0.0f64);
    for name in names {
        let tied = ts.param_grad(&name).unwrap();
        let mut sum = vec![0.0; tied.len()];
        for i in 0..3 {
            let g = tu.param_grad(&format!("layers.{i}.{name}")).unwrap();
            sum.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        for (a, b) in tied.iter().zip(&sum) {
            gap = gap.max((a - b).abs());
            scale = scale.max(b.abs());
        }
    }
    assert!(gap / scale <= 1e-8, "{gap} vs {scale}");
}

#[test]
fn zero_up_adapters_are_bitwise_identity() {
    let adapted = student(3, 4, 21);
    let mut plain = adapted.clone();
    plain.adapters.clear();
    plain.config.adapter_bottleneck = 0;
    let a = adapted.forward_trace(&batch()).unwrap();
    let p = plain.forward_trace(&batch()).unwrap();
    assert!(a.bit_eq(&p));
}

#[test]
fn adapter_causality_across_iterations() {
    let base = student(4, 3, 31);
    let t0 = base.forward_trace(&batch()).unwrap();
    for i in 0..4 {
        let mut m = base.clone();
        m.adapters[i].att.up_w.data_mut().iter_mut().for_each(|v| *v = 0.05);
        let t = m.forward_trace(&batch()).unwrap();
        for j in 0..4 {
            let same = t.hidden_states[j].bit_eq(&t0.hidden_states[j]);
            assert_eq!(same, j < i, "pair {i}, hidden {j}");
        }
    }
}

#[test]
fn student_without_adapters_matches_repeated_block() {
    let s = student(3, 0, 41);
    let b = batch();
    let mut tape = Tape::new();
    let emb = s.embed(&mut tape, &b, &mut Mode::Eval).unwrap();
    let mut x = tape.value(emb).clone().reshape(vec![2, 6, 16]).unwrap();
    for _ in 0..3 {
        x = block_forward(&x, &s.block, &b, &s.config).unwrap().0;
    }
    let trace = s.forward_trace(&b).unwrap();
    assert!(trace.hidden_states[2].bit_eq(&x));
}

#[test]
fn teacher_single_layer_is_composition() {
    let mut r = rng(5, Stream::Init, 0);
    let t = TeacherModel::new(cfg(1), &mut Init::Normal(&mut r)).unwrap();
    let b = batch();
    let trace = t.forward_trace(&b).unwrap();
    let (out, probs) = block_forward(&trace.embedding_output, &t.layers[0].block, &b, &t.config).unwrap();
    assert!(out.bit_eq(&trace.hidden_states[0]));
    assert!(probs.bit_eq(&trace.attention_maps[0]));
    assert_eq!(trace.logits.unwrap().shape(), &[2, 6, 40]);
}

#[test]
fn teacher_layer_permutation_changes_output() {
    let mut r = rng(6, Stream::Init, 0);
    let t = TeacherModel::new(cfg(3), &mut Init::Normal(&mut r)).unwrap();
    let mut p = t.clone();
    p.layers.swap(0, 2);
    let a = t.forward_trace(&batch()).unwrap();
    let b = p.forward_trace(&batch()).unwrap();
    assert_eq!(a.hidden_states.len(), 3);
    assert_eq!(a.attention_maps.len(), 3);
    assert!(!a.hidden_states[2].bit_eq(&b.hidden_states[2]));
}

#[test]
fn teacher_blocks_are_independent() {
    let mut r = rng(8, Stream::Init, 0);
    let t = TeacherModel::new(cfg(3), &mut Init::Normal(&mut r)).unwrap();
    let mut m = t.clone();
    m.layers[2].block.q_w.data_mut()[0] += 0.5;
    let a = t.forward_trace(&batch()).unwrap();
    let b = m.forward_trace(&batch()).unwrap();
    assert!(a.hidden_states[0].bit_eq(&b.hidden_states[0]));
    assert!(a.hidden_states[1].bit_eq(&b.hidden_states[1]));
    assert!(!a.hidden_states[2].bit_eq(&b.hidden_states[2]));
}

#[test]
fn attention_rows_sum_to_one_and_padding_gets_zero() {
    let s = student(2, 0, 9);
    let b = batch();
    let trace = s.forward_trace(&b).unwrap();
    for map in &trace.attention_maps {
        assert_eq!(map.shape(), &[2, 2, 6, 6]);
        for (r, row) in map.data().chunks(6).enumerate() {
            let bi = r / 12;
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for (k, &p) in row.iter().enumerate() {
                if !b.valid[bi * 6 + k] {
                    assert_eq!(p, 0.0);
                }
            }
        }
    }
}

#[test]
fn zero_weight_block_gives_double_layer_norm_and_uniform_attention() {
    let c = cfg(1);
    let block = TransformerBlockParams::new(&c, &mut Init::Zeros);
    let b = TokenBatch::unpadded(vec![1, 2, 3, 4], 1, 4).unwrap();
    let mut r = rng(1, Stream::Synthetic, 0);
    let x = Init::Normal(&mut r).weight(&[1, 4, 16]);
    let (out, probs) = block_forward(&x, &block, &b, &c).unwrap();
    let ones = Tensor::full(&[16], 1.0);
    let zeros = Tensor::zeros(&[16]);
    let ln = |t: &Tensor| ops::layer_norm(t, &ones, &zeros, c.layer_norm_eps).unwrap();
    let want = ln(&ln(&x));
    assert!(out.max_abs_diff(&want) < 1e-12);
    assert!(probs.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
}

#[test]
fn single_position_attention_is_one() {
    let s = student(2, 0, 2);
    let b = TokenBatch::unpadded(vec![5], 1, 1).unwrap();
    let trace = s.forward_trace(&b).unwrap();
    for m in &trace.attention_maps {
        assert_eq!(m.data(), &[1.0, 1.0]);
    }
}

#[test]
fn factorization_identity() {
    let full = cfg(1);
    let mut r = rng(3, Stream::Init, 0);
    let emb = EmbeddingParams::new(&full, &mut Init::Normal(&mut r));
    assert!(emb.w_e.is_none());
    let mut explicit = emb.clone();
    explicit.w_e = Some(Tensor::eye(16));
    let b = batch();
    let run = |e: &EmbeddingParams| {
        let mut tape = Tape::new();
        let v = e.forward(&mut tape, "e", &b, &full, &mut Mode::Eval).unwrap();
        tape.value(v).clone()
    };
    assert!(run(&emb).bit_eq(&run(&explicit)));
    assert!(emb.effective().bit_eq(&emb.e_low));
}

#[test]
fn single_token_embedding_is_normalized_row() {
    let c = ModelConfig { embedding_rank: 4, token_types: false, ..cfg(1) };
    let mut r = rng(4, Stream::Init, 0);
    let mut emb = EmbeddingParams::new(&c, &mut Init::Normal(&mut r));
    emb.positional = Tensor::zeros(emb.positional.shape());
    let b = TokenBatch::unpadded(vec![7], 1, 1).unwrap();
    let mut tape = Tape::new();
    let v = emb.forward(&mut tape, "e", &b, &c, &mut Mode::Eval).unwrap();
    let e = emb.effective();
    let row = Tensor::from_vec(e.data()[7 * 16..8 * 16].to_vec());
    let want = ops::layer_norm(&row, &emb.ln_gain, &emb.ln_bias, c.layer_norm_eps).unwrap();
    assert!(tape.value(v).data().iter().zip(want.data()).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn embedding_rejects_bad_ids_and_lengths() {
    let s = student(1, 0, 1);
    let mut tape = Tape::new();
    let bad = TokenBatch::unpadded(vec![40], 1, 1).unwrap();
    assert!(matches!(s.encode(&mut tape, &bad, &mut Mode::Eval), Err(Error::Input(_))));
    let long = TokenBatch::unpadded(vec![1; 33], 1, 33).unwrap();
    assert!(matches!(s.encode(&mut tape, &long, &mut Mode::Eval), Err(Error::Input(_))));
}

#[test]
fn block_parameter_formula() {
    for (d, f) in [(16, 32), (768, 3072), (24, 40)] {
        let c = ModelConfig { hidden_dim: d, ffn_dim: f, num_heads: 4, embedding_rank: d, ..cfg(1) };
        let block = TransformerBlockParams::new(&c, &mut Init::Zeros);
        let mut n = 0;
        block.visit("b", &mut |_, t| n += t.numel());
        assert_eq!(n, TransformerBlockParams::expected_count(d, f));
    }
}

#[test]
fn student_has_one_block_and_two_adapters_per_iteration() {
    let s = student(5, 2, 1);
    let mut blocks = std::collections::BTreeSet::new();
    let mut adapters = std::collections::BTreeSet::new();
    s.visit(&mut |n, _| {
        if n.starts_with("block.") {
            blocks.insert("block");
        }
        if is_adapter_param(n) {
            adapters.insert(n.rsplit_once('.').unwrap().0.to_string());
        }
    });
    assert_eq!(blocks.len(), 1);
    assert_eq!(adapters.len(), 10);
}

fn within(count: usize, target: f64) -> bool {
    ((count as f64) - target).abs() <= 0.05 * target
}

#[test]
fn base_budgets() {
    let m = RecursiveStudent::new(ModelConfig::base(768, 0), &mut Init::Zeros).unwrap();
    let n = count_parameters(&m, false);
    assert!(within(n, 31e6), "{n}");

    let b = derive_adapter_bottleneck(768, 12, 850_000);
    assert_eq!(b, 23);
    let mut m = RecursiveStudent::new(ModelConfig::base(128, b), &mut Init::Zeros).unwrap();
    let n = count_parameters(&m, false);
    assert!(within(n, 12e6), "{n}");

    apply_freeze(&mut m, &is_adapter_param);
    let tunable = count_parameters(&m, true);
    assert_eq!(tunable, 2 * 12 * adapter_param_count(768, b));
    assert!(within(tunable, 0.9e6), "{tunable}");
}

#[test]
fn embedding_budget() {
    let emb = EmbeddingParams::new(&ModelConfig::base(128, 0), &mut Init::Zeros);
    assert_eq!(emb.e_low.numel() + emb.w_e.as_ref().unwrap().numel(), 30522 * 128 + 128 * 768);
}

#[test]
fn inject_adapters_then_freeze() {
    let mut s = student(3, 0, 1);
    let mut r = rng(1, Stream::Init, 9);
    s.inject_adapters(4, &mut Init::Normal(&mut r)).unwrap();
    assert_eq!(s.adapters.len(), 3);
    assert!(s.inject_adapters(4, &mut Init::Zeros).is_err());
    apply_freeze(&mut s, &is_adapter_param);
    assert_eq!(count_parameters(&s, true), 6 * adapter_param_count(16, 4));
}

#[test]
fn init_from_teacher_copies_layer() {
    let mut r = rng(2, Stream::Init, 0);
    let t = TeacherModel::new(cfg(4), &mut Init::Normal(&mut r)).unwrap();
    let mut s = student(2, 0, 3);
    s.init_from_teacher(&t, 2).unwrap();
    assert_eq!(s.block, t.layers[2].block);
    assert!(s.init_from_teacher(&t, 9).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut s = student(2, 3, 5);
    randomize_up(&mut s, 1);
    let model = Backbone::Student(s);
    model.to_checkpoint().save(&path).unwrap();
    let back = Backbone::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(flatten(&model).iter().map(|v| v.to_bits()).collect::<Vec<_>>(), flatten(&back).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(model.config(), back.config());
    assert_eq!(param_digest(&model, &|_| true), param_digest(&back, &|_| true));

    let mut r = rng(2, Stream::Init, 0);
    let t = Backbone::Teacher(TeacherModel::new(cfg(2), &mut Init::Normal(&mut r)).unwrap());
    let back = Backbone::from_checkpoint(&Checkpoint::from_bytes(&t.to_checkpoint().to_bytes()).unwrap()).unwrap();
    assert_eq!(back, t);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let s = Backbone::Student(student(1, 0, 5));
    let bytes = s.to_checkpoint().to_bytes();
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Corrupt(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]), Err(Error::Corrupt(_))));
    assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Corrupt(_))));
}

#[test]
fn output_placement_also_identity_at_init() {
    let mut s = student(2, 3, 12);
    s.config.adapter_placement = AdapterPlacement::Output;
    let mut plain = s.clone();
    plain.adapters.clear();
    plain.config.adapter_bottleneck = 0;
    assert!(s.forward_trace(&batch()).unwrap().bit_eq(&plain.forward_trace(&batch()).unwrap()));
    randomize_up(&mut s, 2);
    let u = s.materialize_unrolled();
    assert!(max_diff(&s.forward_trace(&batch()).unwrap(), &u.forward_trace(&batch()).unwrap()) < 1e-10);
}

#[test]
fn dropout_only_in_train_mode() {
    let mut s = student(2, 0, 3);
    s.config.dropout_prob = 0.3;
    let b = batch();
    let eval = |s: &RecursiveStudent| {
        let mut tape = Tape::new();
        let v = s.encode(&mut tape, &b, &mut Mode::Eval).unwrap();
        tape.value(v.last_hidden()).clone()
    };
    assert!(eval(&s).bit_eq(&eval(&s)));
    let mut tape = Tape::new();
    let v = s.encode(&mut tape, &b, &mut Mode::Train(rng(1, Stream::Dropout, 0))).unwrap();
    assert!(!tape.value(v.last_hidden()).bit_eq(&eval(&s)));
}

#[test]
fn block_finite_difference() {
    use recdistill_core::numerics::gradcheck::check_tape_fn;
    let s = student(1, 2, 17);
    let mut s = s;
    randomize_up(&mut s, 9);
    let b = TokenBatch::new(vec![0; 6], vec![true, true, false, true, true, true], 2, 3).unwrap();
    let mut r = rng(4, Stream::Synthetic, 1);
    let x = Init::Normal(&mut r).weight(&[6, 16]);
    let x = Tensor::new(vec![6, 16], x.data().iter().map(|v| v * 50.0).collect()).unwrap();
    let mut pr = rng(4, Stream::Synthetic, 2);
    let proj = Init::Normal(&mut pr).weight(&[6, 16]);
    let report = check_tape_fn(
        |tape, xv| {
            let pair = &s.adapters[0];
            let (out, _) = s.block.forward(tape, "block", xv, Some((pair, "adapters.0")), &s.config, &b, &mut Mode::Eval)?;
            let p = tape.constant(proj.clone());
            let prod = tape.matmul_nt(out, p)?;
            let ones = tape.constant(Tensor::full(&[6, 1], 1.0));
            let col = tape.matmul(prod, ones)?;
            let ones_row = tape.constant(Tensor::full(&[1, 6], 1.0));
            tape.matmul(ones_row, col)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}
