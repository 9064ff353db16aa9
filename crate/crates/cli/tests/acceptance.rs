//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits 0
//! unless `ACCEPTANCE_STRICT=1` is set and a criterion failed.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use recdistill_cli::commands::{cmd_distill, cmd_gen_data, cmd_pretrain_teacher, DistillOptions, GenDataOptions, Overrides};
use recdistill_core::data::*;
use recdistill_core::distill::*;
use recdistill_core::eval::*;
use recdistill_core::model::*;
use recdistill_core::numerics::{finite_difference_check, Tape, Tensor};
use recdistill_core::seed::{rng, Stream};
use recdistill_core::train::*;
use serde_json::{json, Value};
use tempfile::TempDir;

type Check = std::result::Result<(bool, String), String>;

fn ok<E: std::fmt::Display>(r: std::result::Result<impl Sized, E>) -> std::result::Result<(), String> {
    r.map(|_| ()).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Shared fixtures

fn tiny(vocab: usize, layers: usize, b: usize, rank: usize) -> ModelConfig {
    ModelConfig { num_layers: layers, adapter_bottleneck: b, embedding_rank: rank, dropout_prob: 0.0, ..ModelConfig::tiny(vocab) }
}

fn randomize_up(s: &mut RecursiveStudent, seed: u64) {
    let mut r = rng(seed, Stream::Synthetic, 77);
    let mut init = Init::Normal(&mut r);
    for pair in &mut s.adapters {
        pair.att.up_w = init.weight(pair.att.up_w.shape());
        pair.mlp.up_w = init.weight(pair.mlp.up_w.shape());
    }
}

/// Random ids in `0..vocab` with right padding on some rows.
fn random_batch(seed: u64, vocab: usize) -> TokenBatch {
    let mut r = rng(seed, Stream::Synthetic, 5);
    let (b, s) = (r.random_range(1..4usize), r.random_range(2..9usize));
    let mut ids = Vec::with_capacity(b * s);
    let mut valid = Vec::with_capacity(b * s);
    for row in 0..b {
        let len = if row == 0 { s } else { r.random_range(1..=s) };
        for j in 0..s {
            valid.push(j < len);
            ids.push(if j < len { r.random_range(0..vocab) } else { PAD_ID as usize });
        }
    }
    TokenBatch::new(ids, valid, b, s).expect("valid batch")
}

fn trace_diff(a: &ForwardTrace, b: &ForwardTrace) -> f64 {
    let mut m = a.embedding_output.max_abs_diff(&b.embedding_output);
    for (x, y) in a.hidden_states.iter().zip(&b.hidden_states) {
        m = m.max(x.max_abs_diff(y));
    }
    for (x, y) in a.attention_maps.iter().zip(&b.attention_maps) {
        m = m.max(x.max_abs_diff(y));
    }
    match (&a.logits, &b.logits) {
        (Some(x), Some(y)) => m.max(x.max_abs_diff(y)),
        _ => f64::INFINITY,
    }
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).expect("json")).expect("write config");
    p
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("read json")).expect("parse json")
}

fn metrics(path: &Path) -> std::result::Result<Vec<BTreeMap<String, f64>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty metrics file")?.split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(k, v)| v.parse().map(|x| (k.to_string(), x)).map_err(|e| format!("{v}: {e}")))
                .collect()
        })
        .collect()
}

/// Generated data plus the desk-scale teacher (d=32, 4 layers, 300 steps),
/// shared by the CLI-driven criteria.
struct Pipeline {
    dir: TempDir,
    teacher_secs: f64,
}

fn pipeline() -> std::result::Result<&'static Pipeline, String> {
    static P: OnceLock<std::result::Result<Pipeline, String>> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        let opts = GenDataOptions { output_dir: d.to_path_buf(), seed: 0, docs: 200, train_examples: 400, eval_examples: 200 };
        ok(cmd_gen_data(&opts))?;
        let start = Instant::now();
        ok(cmd_pretrain_teacher(&d.join("teacher.json"), &Overrides::default()))?;
        let teacher_secs = start.elapsed().as_secs_f64();
        let mut cfg = read_json(&d.join("distill.json"));
        cfg["layer_map"] = json!("identity");
        write_json(d, "distill_identity.json", &cfg);
        Ok(Pipeline { dir, teacher_secs })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn distill_run(out: &str, steps: Option<usize>, alignment: Option<AlignmentMode>) -> std::result::Result<PathBuf, String> {
    let p = pipeline()?;
    let out = p.dir.path().join(out);
    let ov = Overrides { output_dir: Some(out.clone()), steps, ..Default::default() };
    ok(cmd_distill(&p.dir.path().join("distill_identity.json"), &ov, &DistillOptions { alignment, ..Default::default() }))?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Criteria

fn c1_gradient() -> Check {
    let start = Instant::now();
    let mut r = rng(3, Stream::Init, 0);
    let teacher = TeacherModel::new(tiny(50, 4, 0, 16), &mut Init::Normal(&mut r)).map_err(|e| e.to_string())?;
    let mut student = RecursiveStudent::new(tiny(50, 3, 4, 8), &mut Init::Normal(&mut r)).map_err(|e| e.to_string())?;
    randomize_up(&mut student, 3);
    let batch = TokenBatch::new(
        vec![2, 11, 4, 17, 3, 2, 30, 4, 3, 0],
        vec![true, true, true, true, true, true, true, true, true, false],
        2,
        5,
    )
    .map_err(|e| e.to_string())?;
    let labels = vec![None, None, Some(23), None, None, None, None, Some(9), None, None];
    let map = build_layer_map(3, 4, LayerMapStrategy::UniformStride).map_err(|e| e.to_string())?;
    let trace = teacher_trace(&teacher, &batch).map_err(|e| e.to_string())?;
    let w = LossWeights::default();
    let objective = |s: &RecursiveStudent, tape: &mut Tape| {
        total_loss(tape, s, &trace, &batch, &labels, &w, &map, &mut Mode::Eval).map_err(|e| e.to_string())
    };

    let mut tape = Tape::new();
    let (loss, _) = objective(&student, &mut tape)?;
    tape.backward(loss).map_err(|e| e.to_string())?;
    let mut with_grads = student.clone();
    accumulate_grads(&mut with_grads, &tape);
    let analytic = flatten_grads(&with_grads);
    let theta = Tensor::from_vec(flatten(&student));
    let report = finite_difference_check(
        |p| {
            let mut probe = student.clone();
            unflatten(&mut probe, p.data())?;
            let mut t = Tape::new();
            Ok(total_loss(&mut t, &probe, &trace, &batch, &labels, &w, &map, &mut Mode::Eval)?.1.total)
        },
        &analytic,
        &theta,
        1e-5,
    )
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let tiny_grads = analytic.iter().filter(|g| g.abs() < 1e-6).count();
    Ok((
        report.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "max relative error {:.3e} over {} coordinates (worst: analytic {:.6e}, numeric {:.6e}, gap {:.2e}); \
             {tiny_grads} coordinates have |g| < 1e-6; {secs:.1} s",
            report.max_rel_error,
            report.checked,
            report.analytic,
            report.numeric,
            (report.analytic - report.numeric).abs()
        ),
    ))
}

fn c2_unroll() -> Check {
    let mut worst_fwd = 0.0f64;
    let mut worst_grad = 0.0f64;
    for layers in [1, 2, 4, 6] {
        let mut r = rng(10 + layers as u64, Stream::Init, 0);
        let mut s = RecursiveStudent::new(tiny(40, layers, 3, 8), &mut Init::Normal(&mut r)).map_err(|e| e.to_string())?;
        randomize_up(&mut s, layers as u64);
        let u = s.materialize_unrolled();
        if u.num_layers() != layers {
            return Ok((false, format!("unrolled model has {} layers, expected {layers}", u.num_layers())));
        }
        for i in 0..10 {
            let b = random_batch(100 * layers as u64 + i, 40);
            let a = s.forward_trace(&b).map_err(|e| e.to_string())?;
            let v = u.forward_trace(&b).map_err(|e| e.to_string())?;
            worst_fwd = worst_fwd.max(trace_diff(&a, &v));
        }

        let b = random_batch(7 + layers as u64, 40);
        let labels: Vec<Option<usize>> = (0..b.positions()).map(|i| (b.valid[i] && i % 2 == 0).then_some(5 + i % 30)).collect();
        let grads = |m: &dyn Encoder| -> std::result::Result<Tape, String> {
            let mut tape = Tape::new();
            let vars = m.encode(&mut tape, &b, &mut Mode::Eval).map_err(|e| e.to_string())?;
            let logits = m.mlm_logits(&mut tape, vars.last_hidden()).map_err(|e| e.to_string())?;
            let loss = tape.cross_entropy_rows(logits, &labels, 1.0).map_err(|e| e.to_string())?;
            tape.backward(loss).map_err(|e| e.to_string())?;
            Ok(tape)
        };
        let ts = grads(&s)?;
        let tu = grads(&u)?;
        let mut names = Vec::new();
        s.block.visit("block", &mut |n, _| names.push(n.to_string()));
        // Relative to the largest entry over the whole shared block: the key
        // bias gradient is exactly zero and carries only rounding noise.
        let mut gap = 0.0f64;
        let mut scale = 0.0f64;
        for name in names {
            let tied = ts.param_grad(&name).ok_or(format!("no gradient for {name}"))?;
            let mut sum = vec![0.0; tied.len()];
            for l in 0..layers {
                let g = tu.param_grad(&format!("layers.{l}.{name}")).ok_or(format!("no gradient for layer {l} {name}"))?;
                sum.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            for (a, b) in tied.iter().zip(&sum) {
                gap = gap.max((a - b).abs());
                scale = scale.max(b.abs());
            }
        }
        worst_grad = worst_grad.max(gap / scale.max(1e-300));
    }
    Ok((
        worst_fwd < 1e-10 && worst_grad <= 1e-8,
        format!("L in {{1,2,4,6}} x 10 batches: max forward diff {worst_fwd:.2e}; tied gradient law max rel {worst_grad:.2e}"),
    ))
}

fn c3_adapter_identity() -> Check {
    let mut checked = 0;
    for placement in [AdapterPlacement::Input, AdapterPlacement::Output] {
        for layers in [1, 3, 6] {
            let mut r = rng(20 + layers as u64, Stream::Init, 0);
            let mut adapted = RecursiveStudent::new(tiny(40, layers, 4, 8), &mut Init::Normal(&mut r)).map_err(|e| e.to_string())?;
            adapted.config.adapter_placement = placement;
            for pair in &mut adapted.adapters {
                for a in [&mut pair.att, &mut pair.mlp] {
                    if a.up_w.data().iter().any(|&v| v != 0.0) {
                        return Ok((false, "adapter up-projection is not zero at initialization".into()));
                    }
                }
            }
            let mut plain = adapted.clone();
            plain.adapters.clear();
            plain.config.adapter_bottleneck = 0;
            for i in 0..5 {
                let b = random_batch(300 + i, 40);
                let x = adapted.forward_trace(&b).map_err(|e| e.to_string())?;
                let y = plain.forward_trace(&b).map_err(|e| e.to_string())?;
                if !x.bit_eq(&y) {
                    return Ok((false, format!("{placement:?} placement, L={layers}, batch {i}: traces differ")));
                }
                checked += 1;
            }
        }
    }
    Ok((true, format!("{checked} forward traces bitwise equal (input and output placement, L in {{1,3,6}})")))
}

fn c4_factorization() -> Check {
    let full = tiny(40, 1, 0, 16);
    let mut r = rng(4, Stream::Init, 0);
    let emb = EmbeddingParams::new(&full, &mut Init::Normal(&mut r));
    if emb.w_e.is_some() {
        return Ok((false, "r = d built an explicit projection".into()));
    }
    let mut explicit = emb.clone();
    explicit.w_e = Some(Tensor::eye(16));
    let b = random_batch(1, 40);
    let run = |e: &EmbeddingParams| -> std::result::Result<Tensor, String> {
        let mut tape = Tape::new();
        let v = e.forward(&mut tape, "e", &b, &full, &mut Mode::Eval).map_err(|e| e.to_string())?;
        Ok(tape.value(v).clone())
    };
    let identity_ok = run(&emb)?.bit_eq(&run(&explicit)?) && emb.effective().bit_eq(&emb.e_low);

    let vocab = 64;
    let mut shapes = Vec::new();
    let mut worst = 0.0f64;
    for rank in [8, 128, 312] {
        let cfg = ModelConfig { vocab_size: vocab, ..ModelConfig::base(rank, 0) };
        let mut r = rng(rank as u64, Stream::Init, 0);
        let e = EmbeddingParams::new(&cfg, &mut Init::Normal(&mut r));
        let w = e.w_e.as_ref().ok_or("factorized embedding has no projection")?;
        let eff = e.effective();
        if e.e_low.shape() != [vocab, rank] || w.shape() != [rank, 768] || eff.shape() != [vocab, 768] {
            return Ok((false, format!("r={rank}: shapes {:?} {:?} {:?}", e.e_low.shape(), w.shape(), eff.shape())));
        }
        // Triple-loop product as the oracle.
        for i in 0..vocab {
            for j in 0..768 {
                let mut acc = 0.0;
                for k in 0..rank {
                    acc += e.e_low.data()[i * rank + k] * w.data()[k * 768 + j];
                }
                worst = worst.max((acc - eff.data()[i * 768 + j]).abs());
            }
        }
        shapes.push(format!("r={rank}: {vocab}x{rank} . {rank}x768 -> {vocab}x768"));
    }
    Ok((
        identity_ok && worst < 1e-12,
        format!("r=d identity bitwise: {identity_ok}; {}; max product error {worst:.1e}", shapes.join(", ")),
    ))
}

fn c5_budgets() -> Check {
    let count = |b: usize| 2 * 12 * (768 * b + b + b * 768 + 768);
    let oracle_b = (1..768).find(|&b| count(b) >= 850_000).ok_or("no bottleneck reaches the budget")?;
    let b = derive_adapter_bottleneck(768, 12, 850_000);
    if b != oracle_b {
        return Ok((false, format!("derived bottleneck {b} differs from oracle {oracle_b}")));
    }
    let total = |rank: usize, b: usize| -> std::result::Result<(usize, RecursiveStudent), String> {
        let m = RecursiveStudent::new(ModelConfig::base(rank, b), &mut Init::Zeros).map_err(|e| e.to_string())?;
        Ok((count_parameters(&m, false), m))
    };
    let within = |n: usize, target: f64| ((n as f64) - target).abs() <= 0.05 * target;
    let (n768, _) = total(768, 0)?;
    let (n312, _) = total(312, b)?;
    let (n128, mut m) = total(128, b)?;
    apply_freeze(&mut m, &is_adapter_param);
    let tunable = count_parameters(&m, true);
    let pass = within(n768, 31e6) && within(n312, 18e6) && within(n128, 12e6) && within(tunable, 0.9e6) && tunable == count(b);
    Ok((
        pass,
        format!(
            "b={b}; r=768 {:.2}M (31M), r=312 {:.2}M (18M), r=128 {:.2}M (12M), adapter-only {:.3}M (0.9M)",
            n768 as f64 / 1e6,
            n312 as f64 / 1e6,
            n128 as f64 / 1e6,
            tunable as f64 / 1e6
        ),
    ))
}

fn c6_loss_identities() -> Check {
    // Self-distillation: a one-block teacher copied into the student.
    let mut r = rng(6, Stream::Init, 0);
    let single = TeacherModel::new(tiny(50, 1, 0, 16), &mut Init::Normal(&mut r)).map_err(|e| e.to_string())?;
    let mut student = RecursiveStudent::new(tiny(50, 1, 0, 16), &mut Init::Zeros).map_err(|e| e.to_string())?;
    student.init_from_teacher(&single, 0).map_err(|e| e.to_string())?;
    let b = random_batch(6, 50);
    let labels: Vec<Option<usize>> = (0..b.positions()).map(|i| (b.valid[i] && i % 3 == 1).then_some(7 + i)).collect();
    let map = build_layer_map(1, 1, LayerMapStrategy::Identity).map_err(|e| e.to_string())?;
    let trace = teacher_trace(&single, &b).map_err(|e| e.to_string())?;
    let report = |s: &RecursiveStudent, w: &LossWeights| -> std::result::Result<LossReport, String> {
        let mut tape = Tape::new();
        Ok(total_loss(&mut tape, s, &trace, &b, &labels, w, &map, &mut Mode::Eval).map_err(|e| e.to_string())?.1)
    };
    let selfd = report(&student, &LossWeights::default())?;
    let self_ok = selfd.align.abs() < 1e-12 && selfd.out.abs() < 1e-12;

    // Linearity in each weight on a student that differs from the teacher.
    let mut r = rng(7, Stream::Init, 0);
    let other = RecursiveStudent::new(tiny(50, 1, 2, 8), &mut Init::Normal(&mut r)).map_err(|e| e.to_string())?;
    let base = LossWeights { embed_loss: true, ..LossWeights::default() };
    let mut worst_lin = 0.0f64;
    type Setter = fn(&mut LossWeights, f64);
    let setters: [Setter; 3] = [|w, x| w.lambda_mlm = x, |w, x| w.lambda_align = x, |w, x| w.lambda_out = x];
    for set in setters {
        let mut v = [0.0; 3];
        for (k, x) in [0.5, 1.5, 2.5].into_iter().enumerate() {
            let mut w = base.clone();
            set(&mut w, x);
            v[k] = report(&other, &w)?.total;
        }
        worst_lin = worst_lin.max(((v[2] - v[1]) - (v[1] - v[0])).abs() / v[1].abs());
    }

    // Embedding term: off by default, zero for identical embeddings.
    let default_off = !LossWeights::default().embed_loss && report(&other, &LossWeights::default())?.embed == 0.0;
    let x = trace.embedding_output.clone();
    let same = embedding_loss(&x, &x).map_err(|e| e.to_string())?;

    // CLI run with alignment disabled.
    let out = distill_run("acc_align_none", Some(20), Some(AlignmentMode::None))?;
    let rows = metrics(&out.join("metrics.csv"))?;
    let column_zero = !rows.is_empty() && rows.iter().all(|r| r["align"] == 0.0 && r["att"] == 0.0 && r["hidden"] == 0.0);

    let pass = self_ok && worst_lin < 1e-10 && default_off && same.abs() < 1e-12 && column_zero;
    Ok((
        pass,
        format!(
            "self-distillation align {:.1e} out {:.1e}; lambda linearity residual {worst_lin:.1e}; embed off by default {default_off}, \
             identical embeddings {same:.1e}; --alignment none zero column over {} rows: {column_zero}",
            selfd.align,
            selfd.out,
            rows.len()
        ),
    ))
}

fn c7_smoke() -> Check {
    let p = pipeline()?;
    let start = Instant::now();
    let out = distill_run("acc_smoke", None, None)?;
    let secs = p.teacher_secs + start.elapsed().as_secs_f64();
    let rows = metrics(&out.join("metrics.csv"))?;
    if rows.len() != 500 {
        return Ok((false, format!("{} distillation rows, expected 500", rows.len())));
    }
    let ckpt = Checkpoint::load(out.join("student.ckpt")).map_err(|e| e.to_string())?;
    let cfg = ckpt.config().map_err(|e| e.to_string())?;
    let mean = |lo: usize, hi: usize, key: &str| rows[lo..hi].iter().map(|r| r[key]).sum::<f64>() / (hi - lo) as f64;
    let (a0, a1) = (mean(0, 100, "align"), mean(400, 500, "align"));
    let (o0, o1) = (mean(0, 100, "out"), mean(400, 500, "out"));
    Ok((
        a1 < a0 && o1 < o0 && secs < 600.0 && cfg.num_layers == 4 && cfg.hidden_dim == 32,
        format!("align {a0:.4} -> {a1:.4}, out {o0:.4} -> {o1:.4} (steps 0-100 vs 400-500); teacher + student {secs:.1} s"),
    ))
}

fn c8_ablation() -> Check {
    let corpus = synthetic_corpus(8, 160, 2, 6);
    let vocab = Vocabulary::build(&corpus, 400, TokenizerMode::Word).map_err(|e| e.to_string())?;
    let ids: Vec<Vec<u32>> = corpus.iter().map(|d| vocab.encode(d)).collect();
    let sequences = window_corpus(&ids, 20, 10, 10).map_err(|e| e.to_string())?;
    let masking = MaskingConfig::default();
    let sched = |steps: usize, lr: f64| ScheduleConfig {
        peak_lr: lr,
        warmup_steps: steps / 10,
        total_steps: steps,
        batch_size: 16,
        ..Default::default()
    };
    let base = ModelConfig { max_positions: 32, ..ModelConfig::tiny(vocab.len()) };
    let mut teacher = TeacherModel::new(ModelConfig { num_layers: 4, ..base.clone() }, &mut Init::Normal(&mut rng(8, Stream::Init, 0)))
        .map_err(|e| e.to_string())?;
    ok(pretrain_teacher(&mut teacher, &sequences, &masking, &sched(400, 3e-3), &RunOptions { seed: 8, timing: false }))?;
    freeze_all(&mut teacher);

    let modes = [AlignmentMode::Full, AlignmentMode::HiddenOnly, AlignmentMode::AttentionOnly, AlignmentMode::None];
    let map = build_layer_map(4, 4, LayerMapStrategy::Identity).map_err(|e| e.to_string())?;
    let mut acc = [[0.0; 3]; 4];
    for seed in 0..3u64 {
        let train_ex = synthetic_classification(100 + seed, 200);
        let eval_ex = synthetic_classification(200 + seed, 200);
        let labels = classification_labels(&train_ex);
        let train = TaskDataset::from_classification(&train_ex, &vocab, &labels, 24).map_err(|e| e.to_string())?;
        let eval = TaskDataset::from_classification(&eval_ex, &vocab, &labels, 24).map_err(|e| e.to_string())?;
        for (m, mode) in modes.iter().enumerate() {
            let cfg = ModelConfig { num_layers: 4, embedding_rank: 8, adapter_bottleneck: 4, ..base.clone() };
            let mut student = RecursiveStudent::new(cfg, &mut Init::Normal(&mut rng(seed, Stream::Init, 0))).map_err(|e| e.to_string())?;
            let w = LossWeights { alignment_mode: *mode, ..LossWeights::default() };
            let opts = RunOptions { seed, timing: false };
            ok(distill_student(&mut student, &teacher, &sequences, &masking, &w, &map, &sched(300, 3e-3), &opts))?;
            let head = TaskHead::new(HeadKind::SequenceClassification, 16, labels.clone(), 0.1, &mut Init::Normal(&mut rng(seed, Stream::Init, 99)))
                .map_err(|e| e.to_string())?;
            let mut model = TaskModel { backbone: Backbone::Student(student), head };
            ok(finetune(&mut model, &train, &sched(100, 2e-3), &opts, TuneRegime::Full))?;
            acc[m][seed as usize] = evaluate(&model, &eval, 32, false).map_err(|e| e.to_string())?.accuracy;
        }
    }
    let mean = |m: usize| acc[m].iter().sum::<f64>() / 3.0;
    let fmt = |m: usize| format!("{:.3} [{:.3} {:.3} {:.3}]", mean(m), acc[m][0], acc[m][1], acc[m][2]);
    Ok((
        mean(0) >= mean(3),
        format!("eval accuracy after 100 fine-tuning steps, mean [per seed]: full {}, hidden-only {}, attention-only {}, none {}", fmt(0), fmt(1), fmt(2), fmt(3)),
    ))
}

fn freeze_all<M: Parameterized>(m: &mut M) {
    apply_freeze(m, &|_| false);
}

fn c9_adapter_contract() -> Check {
    let train_ex = synthetic_classification(9, 200);
    let corpus: Vec<String> = train_ex.iter().map(|e| e.text.clone()).collect();
    let vocab = Vocabulary::build(&corpus, 200, TokenizerMode::Word).map_err(|e| e.to_string())?;
    let labels = classification_labels(&train_ex);
    let data = TaskDataset::from_classification(&train_ex, &vocab, &labels, 24).map_err(|e| e.to_string())?;
    let (d, layers, b) = (32, 4, 4);
    let cfg = ModelConfig {
        hidden_dim: d,
        num_heads: 2,
        ffn_dim: 64,
        num_layers: layers,
        max_positions: 32,
        embedding_rank: 16,
        adapter_bottleneck: b,
        ..ModelConfig::tiny(vocab.len())
    };
    let student = RecursiveStudent::new(cfg, &mut Init::Normal(&mut rng(9, Stream::Init, 0))).map_err(|e| e.to_string())?;
    let head = TaskHead::new(HeadKind::SequenceClassification, d, labels.clone(), 0.1, &mut Init::Normal(&mut rng(9, Stream::Init, 99)))
        .map_err(|e| e.to_string())?;
    let initial = TaskModel { backbone: Backbone::Student(student), head };
    let sched = ScheduleConfig { peak_lr: 3e-3, warmup_steps: 20, total_steps: 200, batch_size: 16, ..Default::default() };
    let opts = RunOptions { seed: 9, timing: true };

    let backbone_only = |n: &str| !is_adapter_param(n) && !is_task_head_param(n);
    let mut adapted = initial.clone();
    let before = param_digest(&adapted.backbone, &backbone_only);
    let alog = adapter_tune(&mut adapted, &data, &sched, &opts, None).map_err(|e| e.to_string())?;
    let after = param_digest(&adapted.backbone, &backbone_only);
    let tunable = count_parameters(&adapted, true);
    let expected = 2 * layers * adapter_param_count(d, b) + d * labels.len() + labels.len();

    // Runs in A F F A order; per regime the faster of two per-step medians.
    let median = |log: &TuneLog| {
        let mut v: Vec<f64> = log.rows.iter().map(|r| r.wall_ms).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let full_run = || finetune(&mut initial.clone(), &data, &sched, &opts, TuneRegime::Full).map_err(|e| e.to_string());
    let f1 = full_run()?;
    let f2 = full_run()?;
    let a2 = adapter_tune(&mut initial.clone(), &data, &sched, &opts, None).map_err(|e| e.to_string())?;
    let ta = median(&alog).min(median(&a2));
    let tf = median(&f1).min(median(&f2));
    let pass = alog.rows.len() == 200 && before == after && tunable == expected && ta < tf;
    Ok((
        pass,
        format!(
            "checksum unchanged {}; tunable {tunable} (adapters + head {expected}); median {ta:.3} ms/step adapter vs {tf:.3} ms/step full ({:.0}% faster)",
            before == after,
            100.0 * (1.0 - ta / tf)
        ),
    ))
}

fn c10_masking() -> Check {
    let vocab = 1000;
    let mut r = rng(10, Stream::Synthetic, 0);
    let mut ordinary = 0usize;
    let mut masked = 0usize;
    let mut special_hit = 0usize;
    let (mut as_mask, mut as_random, mut kept) = (0usize, 0usize, 0usize);
    let mut index = 0u64;
    while ordinary < 100_000 {
        let mut seq = vec![CLS_ID];
        seq.extend((0..98).map(|_| r.random_range(NUM_SPECIAL as u32..vocab as u32)));
        seq.push(SEP_ID);
        seq.extend([PAD_ID; 4]);
        let m = apply_mlm_masking(&seq, vocab, &MaskingConfig::default(), 10, index).map_err(|e| e.to_string())?;
        index += 1;
        for (i, &id) in seq.iter().enumerate() {
            if Vocabulary::is_special(id) {
                if m.labels[i].is_some() || m.input[i] != id {
                    special_hit += 1;
                }
                continue;
            }
            ordinary += 1;
            if m.labels[i].is_some() {
                masked += 1;
                match m.input[i] {
                    x if x == MASK_ID => as_mask += 1,
                    x if x == id => kept += 1,
                    _ => as_random += 1,
                }
            }
        }
    }
    let frac = masked as f64 / ordinary as f64;

    let long: Vec<u32> = (0..2000).map(|i| NUM_SPECIAL as u32 + (i % 50)).collect();
    let capped = window_corpus(std::slice::from_ref(&long), 30, 15, 10).map_err(|e| e.to_string())?;
    let uncapped = window_corpus(&[long], 30, 15, usize::MAX).map_err(|e| e.to_string())?.len();
    let pass = (0.14..=0.16).contains(&frac) && special_hit == 0 && capped.len() == 10 && uncapped > 10;
    Ok((
        pass,
        format!(
            "{masked}/{ordinary} = {frac:.4} masked; split mask/random/keep {:.3}/{:.3}/{:.3}; special tokens touched {special_hit}; \
             long document {uncapped} windows uncapped -> {} capped",
            as_mask as f64 / masked as f64,
            as_random as f64 / masked as f64,
            kept as f64 / masked as f64,
            capped.len()
        ),
    ))
}

fn c11_determinism() -> Check {
    let a = distill_run("acc_det_a", Some(40), None)?;
    let b = distill_run("acc_det_b", Some(40), None)?;
    let ma = std::fs::read(a.join("metrics.csv")).map_err(|e| e.to_string())?;
    let mb = std::fs::read(b.join("metrics.csv")).map_err(|e| e.to_string())?;
    let ca = std::fs::read(a.join("student.ckpt")).map_err(|e| e.to_string())?;
    let cb = std::fs::read(b.join("student.ckpt")).map_err(|e| e.to_string())?;

    let ckpt = Checkpoint::from_bytes(&ca).map_err(|e| e.to_string())?;
    let model = Backbone::from_checkpoint(&ckpt).map_err(|e| e.to_string())?;
    let mut again = model.to_checkpoint();
    for (k, v) in &ckpt.header {
        again.header.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("round.ckpt");
    again.save(&path).map_err(|e| e.to_string())?;
    let back = Backbone::from_checkpoint(&Checkpoint::load(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let bits = |m: &Backbone| flatten(m).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let round_trip = bits(&model) == bits(&back) && model == back && std::fs::read(&path).map_err(|e| e.to_string())? == ca;
    Ok((
        ma == mb && ca == cb && round_trip,
        format!(
            "metrics CSVs identical {} ({} bytes); checkpoints identical {}; round trip bit-exact {round_trip}",
            ma == mb,
            ma.len(),
            ca == cb
        ),
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("gradient correctness", c1_gradient),
        ("unroll equivalence", c2_unroll),
        ("adapter identity", c3_adapter_identity),
        ("factorization identity", c4_factorization),
        ("parameter budgets", c5_budgets),
        ("loss-term identities", c6_loss_identities),
        ("distillation smoke run", c7_smoke),
        ("alignment ablation direction", c8_ablation),
        ("adapter-tuning contract", c9_adapter_contract),
        ("masking statistics", c10_masking),
        ("determinism", c11_determinism),
    ];
    let filter: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if filter.as_ref().is_some_and(|f| !f.contains(&n)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                (false, format!("panicked: {}", msg.unwrap_or_default()))
            }
        };
        if !outcome.0 {
            failed += 1;
        }
        println!(
            "{} {n:>2} {name}: {} [{:.1} s]",
            if outcome.0 { "PASS" } else { "FAIL" },
            outcome.1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
