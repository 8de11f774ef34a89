//! The acceptance criteria as runnable checks, shared by the `verify`
//! subcommand and the acceptance test target.

use std::time::Instant;

use hpd_core::engine::{
    ar_decode, hpd_decode, oracle_full_recompute, ArRequest, DecodeConfig, DecodeTrace, HpdSession,
};
use hpd_core::masks::{inference_mask, mask_equivalence_check};
use hpd_core::model::{Backend, EarlyStop, ForwardStep, Logits, ModelConfig, ScriptedBackend, ScriptedCompute, TinyModel, ValueScript};
use hpd_core::scheduler::{assign_position_ids, slot_position, LayoutShape, SkeletonLayout, StackedPrompt, Template, ValueSlot, DEFAULT_INSTRUCTION};
use hpd_core::tokenizer::{TokenSeq, DELIM};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::gold_labels;
use crate::metrics::{cost_per_1k, exact_f1, judge_f1, JudgeCounts};
use crate::pipeline::{extract, Mode};
use crate::synth::{synth_corpus, SynthConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

type Check = fn() -> Result<(bool, String), String>;

pub const CRITERIA: [(u8, &str, Check); 10] = [
    (1, "cache consistency", cache_consistency),
    (2, "single-slot degeneracy", degeneracy),
    (3, "first-step independence", first_step_independence),
    (4, "mask equivalence", mask_equivalence),
    (5, "pass arithmetic", pass_arithmetic),
    (6, "pass savings", pass_savings),
    (7, "batch isolation", batch_isolation),
    (8, "metrics", metrics),
    (9, "model invariants", model_invariants),
    (10, "scripted pipeline", scripted_pipeline),
];

pub fn run(id: u8) -> Option<Outcome> {
    let &(id, name, check) = CRITERIA.iter().find(|c| c.0 == id)?;
    let (passed, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    Some(Outcome { id, name, passed, detail })
}

pub fn run_all() -> Vec<Outcome> {
    CRITERIA.iter().filter_map(|c| run(c.0)).collect()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny(seed: u64) -> Result<TinyModel, String> {
    TinyModel::new(ModelConfig::toy(seed)).map_err(err)
}

fn stopping_tiny(seed: u64) -> Result<EarlyStop<TinyModel>, String> {
    EarlyStop::new(tiny(seed)?, 3).map_err(err)
}

/// Random layout with up to `max_docs` documents and `max_attrs` attributes.
pub fn random_layout(rng: &mut impl Rng, max_docs: usize, max_attrs: usize) -> SkeletonLayout {
    let shape = LayoutShape {
        prompt_len: rng.gen_range(3..16),
        docs: rng.gen_range(1..=max_docs),
        attributes: rng.gen_range(1..=max_attrs),
        doc_open_len: rng.gen_range(0..3),
        key_len: rng.gen_range(1..4),
        close_len: rng.gen_range(0..3),
    };
    let tokens: Vec<u32> = (0..4096).map(|_| rng.gen_range(32..127)).collect();
    shape.build(|i| tokens[i]).expect("valid shape")
}

fn three_slots(k_max: usize) -> Result<StackedPrompt, String> {
    let layout = LayoutShape::THREE_SLOTS.build(|i| 65 + i as u32).map_err(err)?;
    StackedPrompt::new(layout, k_max).map_err(err)
}

fn script_for(layout: &SkeletonLayout, values: &[&str]) -> ValueScript {
    let n = layout.attributes().len();
    let mut script = ValueScript::new();
    for (i, v) in values.iter().enumerate() {
        script.insert(layout.doc_ids()[i / n].clone(), layout.attributes()[i % n].clone(), *v);
    }
    script
}

fn config(k_max: usize) -> DecodeConfig {
    DecodeConfig {
        k_max,
        ..DecodeConfig::default()
    }
}

fn max_rel_diff(a: &[f32], b: &[f32]) -> f32 {
    let scale = b.iter().fold(0.0f32, |m, x| m.max(x.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f32, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn prefill_logits(model: &impl Backend, tokens: &[u32], positions: &[usize]) -> Result<Logits, String> {
    let mask = inference_mask(positions, positions, &vec![true; positions.len()]);
    model
        .forward(&ForwardStep::new(tokens, positions, &mask), &mut model.new_cache())
        .map_err(err)
}

fn cache_consistency() -> Result<(bool, String), String> {
    let started = Instant::now();
    let mut mismatches = Vec::new();
    let mut lengths = [0usize; 6];
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let prompt = StackedPrompt::new(random_layout(&mut r, 3, 6), 5).map_err(err)?;
        let backend = stopping_tiny(seed)?;
        let (cached, _) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(5)).map_err(err)?;
        let oracle = oracle_full_recompute(&backend, &prompt, &config(5)).map_err(err)?;
        if cached[0] != oracle {
            mismatches.push(seed);
        }
        for v in &cached[0].values {
            lengths[v.tokens.len()] += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Ok((
        mismatches.is_empty() && elapsed < 60.0,
        format!("50 layouts, mismatching seeds {mismatches:?}, value-length histogram {lengths:?}, {elapsed:.2}s (< 60s)"),
    ))
}

fn degeneracy() -> Result<(bool, String), String> {
    let mut bad = Vec::new();
    let k_max = 6;
    for seed in 0..20u64 {
        let mut r = rng(2000 + seed);
        let prompt_len = r.gen_range(2..30);
        let layout = LayoutShape {
            prompt_len,
            docs: 1,
            attributes: 1,
            doc_open_len: r.gen_range(0..3),
            key_len: r.gen_range(1..4),
            close_len: r.gen_range(0..3),
        };
        let tokens: Vec<u32> = (0..64).map(|_| r.gen_range(0..256)).collect();
        let prompt = StackedPrompt::new(layout.build(|i| tokens[i]).map_err(err)?, k_max).map_err(err)?;
        let backend = stopping_tiny(seed)?;
        let (hpd, _) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(k_max)).map_err(err)?;
        let anchor = prompt.layout.slots()[0].anchor;
        let request = ArRequest {
            prompt: prompt.layout.tokens()[..=anchor].to_vec(),
            stop: vec![DELIM],
            max_new_tokens: k_max,
            context: None,
        };
        let (mut ar, _) = ar_decode(&backend, &request, &config(k_max)).map_err(err)?;
        if ar.last() == Some(&DELIM) {
            ar.pop();
        }
        if hpd[0].values[0].tokens != ar {
            bad.push(seed);
        }
    }
    Ok((bad.is_empty(), format!("20 seeds, N=1 J=1 b=1, mismatching seeds {bad:?}")))
}

fn first_step_independence() -> Result<(bool, String), String> {
    let mut worst = 0.0f32;
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut r = rng(3000 + seed);
        let prompt = StackedPrompt::new(random_layout(&mut r, 3, 6), 5).map_err(err)?;
        let model = tiny(seed)?;
        let positions = &prompt.plan.position_ids;
        let base = prefill_logits(&model, prompt.layout.tokens(), positions)?;
        let slots = prompt.layout.slots();
        for (n, slot) in slots.iter().enumerate() {
            if n + 1 == slots.len() {
                continue;
            }
            let mut tokens = prompt.layout.tokens().to_vec();
            for later in &slots[n + 1..] {
                for t in later.attr_span.clone() {
                    tokens[t] = r.gen_range(0..256);
                }
            }
            let out = prefill_logits(&model, &tokens, positions)?;
            worst = worst.max(max_rel_diff(out.row(slot.anchor), base.row(slot.anchor)));
            checked += 1;
        }
    }
    Ok((
        worst <= 1e-5,
        format!("20 seeds, {checked} anchors, worst relative change {worst:.2e} (<= 1e-5)"),
    ))
}

fn mask_equivalence() -> Result<(bool, String), String> {
    let prompt = three_slots(7)?;
    let anchors: Vec<usize> = prompt.layout.slots().iter().map(|s| prompt.plan.at(s.anchor)).collect();
    let firsts = prompt
        .layout
        .slots()
        .iter()
        .map(|s| slot_position(&ValueSlot::new(s, &prompt.plan), 1, &prompt.plan))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let geometry = anchors == [12, 22, 32] && firsts == [13, 23, 33];
    let gold: Vec<TokenSeq> = vec![vec![97, 98, 99], vec![100, 101, 102], vec![103, 104, 105]];
    let mut failures = Vec::new();
    if !mask_equivalence_check(&prompt.layout, &prompt.plan, &gold).map_err(err)?.is_equal() {
        failures.push(0);
    }
    let mut pairs = 0;
    for seed in 1..100u64 {
        let mut r = rng(4000 + seed);
        let layout = random_layout(&mut r, 3, 6);
        let k_max = r.gen_range(1..=5);
        let plan = assign_position_ids(&layout, k_max).map_err(err)?;
        let gold: Vec<TokenSeq> = (0..layout.slots().len())
            .map(|_| (0..r.gen_range(0..=k_max)).map(|_| r.gen_range(97..123)).collect())
            .collect();
        let report = mask_equivalence_check(&layout, &plan, &gold).map_err(err)?;
        pairs += report.pairs_checked;
        if !report.is_equal() {
            failures.push(seed);
        }
    }
    Ok((
        geometry && failures.is_empty(),
        format!(
            "anchors {anchors:?}, first values {firsts:?}; 100 layouts, {pairs} random-layout pairs, failing {failures:?}"
        ),
    ))
}

fn pass_arithmetic() -> Result<(bool, String), String> {
    let prompt = three_slots(7)?;
    let backend = ScriptedBackend::new(script_for(&prompt.layout, &["abc", "def", "ghi"]), Template::default());
    let (_, three) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(7)).map_err(err)?;

    let mut traces: Vec<(usize, DecodeTrace)> = vec![(7, three.clone())];
    let truncating = ScriptedBackend::new(script_for(&prompt.layout, &["abcdefghijk", "", "x"]), Template::default());
    traces.push((7, hpd_decode(&truncating, std::slice::from_ref(&prompt), &config(7)).map_err(err)?.1));
    for seed in 0..10u64 {
        let mut r = rng(5000 + seed);
        let k_max = r.gen_range(1..=5);
        let p = StackedPrompt::new(random_layout(&mut r, 3, 6), k_max).map_err(err)?;
        traces.push((k_max, hpd_decode(&stopping_tiny(seed)?, &[p], &config(k_max)).map_err(err)?.1));
    }
    let bounded = traces.iter().all(|(k, t)| t.forward_passes <= k + 1);

    let (b, j, n) = (2, 3, 4);
    let layout = LayoutShape {
        docs: j,
        attributes: n,
        ..LayoutShape::THREE_SLOTS
    }
    .build(|i| 65 + (i as u32 % 26))
    .map_err(err)?;
    let stacked = StackedPrompt::new(layout, 7).map_err(err)?;
    let values: Vec<String> = (0..j * n).map(|i| "v".repeat(1 + i % 4)).collect();
    let refs: Vec<&str> = values.iter().map(String::as_str).collect();
    let scripted = ScriptedBackend::new(script_for(&stacked.layout, &refs), Template::default());
    let (_, batch) = hpd_decode(&scripted, &vec![stacked; b], &config(7)).map_err(err)?;
    let first = batch.tokens_emitted_per_pass[0];

    Ok((
        three.steps_excluding_delimiter == 3 && bounded && first == b * j * n,
        format!(
            "3x3 case: {} steps excluding delimiter, {} passes; {} runs within k_max+1; pass 1 emitted {first} = {b}x{j}x{n}",
            three.steps_excluding_delimiter,
            three.forward_passes,
            traces.len()
        ),
    ))
}

fn pass_savings() -> Result<(bool, String), String> {
    let corpus = synth_corpus(&SynthConfig {
        seed: 6,
        categories: 1,
        products: 24,
        attrs_per_category: 16,
        absent_fraction: 0.0,
    })
    .map_err(err)?;
    let template = Template::default();
    let backend = ScriptedBackend::new(corpus.script.clone(), template.clone());
    let cfg = DecodeConfig {
        docs_per_prompt: 6,
        ..DecodeConfig::default()
    };
    let hpd = extract(&backend, &template, DEFAULT_INSTRUCTION, &corpus.records, &corpus.attribute_sets, Mode::Hpd, &cfg)
        .map_err(err)?;
    let ar = extract(&backend, &template, DEFAULT_INSTRUCTION, &corpus.records, &corpus.attribute_sets, Mode::Ar, &cfg)
        .map_err(err)?;

    // Exact pass identities: HPD takes (longest value + 1) per prompt, AR one pass per output token.
    let mut expected_hpd = 0;
    for chunk in corpus.records.chunks(6) {
        let longest = chunk
            .iter()
            .flat_map(|r| r.labels.iter().flatten().map(|(_, v)| v.as_ref().map_or(4, String::len)))
            .max()
            .unwrap_or(0);
        expected_hpd += longest + 1;
    }
    let identities = hpd.trace.forward_passes == expected_hpd && ar.trace.forward_passes == ar.trace.total_tokens();
    let ratio = ar.trace.forward_passes as f64 / hpd.trace.forward_passes as f64;

    let timing = wall_clock_trend().map_err(err)?;
    Ok((
        identities && ratio >= 10.0,
        format!(
            "N=16 J=6: AR {} passes / HPD {} passes = {ratio:.1}x (>= 10); identities hold: {identities}; tiny-model wall-clock speedup vs AR J=1 (reported): {timing}",
            ar.trace.forward_passes, hpd.trace.forward_passes
        ),
    ))
}

/// Wall-clock speedup over AR at J=1 for increasing J, on the tiny model
/// with scripted value lengths.
fn wall_clock_trend() -> Result<String, String> {
    let corpus = synth_corpus(&SynthConfig {
        seed: 7,
        categories: 1,
        products: 6,
        attrs_per_category: 16,
        absent_fraction: 0.0,
    })
    .map_err(err)?;
    let template = Template::default();
    let backend = ScriptedCompute::new(tiny(7)?, corpus.script.clone(), template.clone());
    let run = |mode, j| {
        let cfg = DecodeConfig {
            docs_per_prompt: j,
            ..DecodeConfig::default()
        };
        extract(&backend, &template, DEFAULT_INSTRUCTION, &corpus.records, &corpus.attribute_sets, mode, &cfg)
            .map(|e| e.trace.wall_clock.as_secs_f64())
            .map_err(err)
    };
    let ar = run(Mode::Ar, 1)?;
    let mut parts = Vec::new();
    for j in [1, 2, 3, 6] {
        parts.push(format!("J={j} {:.1}x", ar / run(Mode::Hpd, j)?.max(1e-9)));
    }
    Ok(parts.join(", "))
}

fn batch_isolation() -> Result<(bool, String), String> {
    let mut bad = Vec::new();
    let mut padded_rows = 0;
    for seed in 0..5u64 {
        let mut r = rng(7000 + seed);
        let prompts: Vec<StackedPrompt> = (0..4)
            .map(|_| StackedPrompt::new(random_layout(&mut r, 3, 4), 5))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let backend = stopping_tiny(seed)?;
        let mut session = HpdSession::new(&backend, &prompts, &config(5)).map_err(err)?;
        session.run().map_err(err)?;
        padded_rows += (0..4).filter(|&i| session.cache(i).live().iter().any(|l| !l)).count();
        let together = session.results();
        for (i, p) in prompts.iter().enumerate() {
            let (alone, _) = hpd_decode(&backend, std::slice::from_ref(p), &config(5)).map_err(err)?;
            if alone[0] != together[i] {
                bad.push((seed, i));
            }
        }
    }
    // Scripted ragged values: prompts finish at different passes.
    let prompts: Vec<StackedPrompt> = (0..4).map(|_| three_slots(7)).collect::<Result<_, _>>()?;
    let mut script = ValueScript::new();
    for (n, a) in prompts[0].layout.attributes().iter().enumerate() {
        script.insert("d0", a.clone(), "x".repeat(n * 2 + 1));
    }
    let backend = ScriptedCompute::new(tiny(11)?, script, Template::default());
    let (together, _) = hpd_decode(&backend, &prompts, &config(7)).map_err(err)?;
    for (i, p) in prompts.iter().enumerate() {
        let (alone, _) = hpd_decode(&backend, std::slice::from_ref(p), &config(7)).map_err(err)?;
        if alone[0] != together[i] {
            bad.push((99, i));
        }
    }
    Ok((
        bad.is_empty() && padded_rows > 0,
        format!("20 random prompts in batches of 4 ({padded_rows} rows padded) plus a ragged scripted batch; mismatches {bad:?}"),
    ))
}

fn exact_judge(c: &JudgeCounts) -> (Ratio<i128>, Ratio<i128>, Ratio<i128>) {
    let hits = (c.c + c.cn) as i128;
    let ratio = |d: i128| if d == 0 { Ratio::from_integer(0) } else { Ratio::new(hits, d) };
    let p = ratio(hits + (c.h + c.i) as i128);
    let r = ratio(hits + (c.m + c.i) as i128);
    let f = if p + r == Ratio::from_integer(0) {
        Ratio::from_integer(0)
    } else {
        Ratio::from_integer(2) * p * r / (p + r)
    };
    (p, r, f)
}

fn metrics() -> Result<(bool, String), String> {
    let mut r = rng(8000);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let hi = if i % 10 == 0 { 3 } else { 500 };
        let counts = JudgeCounts {
            c: r.gen_range(0..hi),
            cn: r.gen_range(0..hi),
            i: r.gen_range(0..hi),
            m: r.gen_range(0..hi),
            h: r.gen_range(0..hi),
        };
        let got = judge_f1(&counts);
        let (p, rc, f) = exact_judge(&counts);
        for (x, want) in [(got.precision, p), (got.recall, rc), (got.f1, f)] {
            let want = *want.numer() as f64 / *want.denom() as f64;
            worst = worst.max((x - want).abs());
        }
    }
    let cost = cost_per_1k(1.17, 30.13, 8).map_err(err)?;
    Ok((
        worst <= 1e-12 && (0.885..=0.905).contains(&cost),
        format!("1000 count vectors vs rational oracle, worst abs error {worst:.1e} (<= 1e-12); cost_per_1k(1.17, 30.13, 8) = {cost:.4}"),
    ))
}

fn model_invariants() -> Result<(bool, String), String> {
    let (mut rope, mut chunk) = (0.0f32, 0.0f32);
    for seed in 0..20u64 {
        let mut r = rng(9000 + seed);
        let model = tiny(seed)?;
        let len = r.gen_range(8..40);
        let tokens: Vec<u32> = (0..len).map(|_| r.gen_range(0..256)).collect();
        let mut positions = Vec::with_capacity(len);
        let mut p = 0;
        for _ in 0..len {
            positions.push(p);
            p += r.gen_range(1..4);
        }
        let whole = prefill_logits(&model, &tokens, &positions)?;

        let shifted: Vec<usize> = positions.iter().map(|p| p + 100).collect();
        let moved = prefill_logits(&model, &tokens, &shifted)?;
        for i in 0..len {
            rope = rope.max(max_rel_diff(moved.row(i), whole.row(i)));
        }

        let mut cache = model.new_cache();
        let mut start = 0;
        while start < len {
            let end = (start + r.gen_range(1..6)).min(len);
            let mut keys = cache.positions().to_vec();
            keys.extend_from_slice(&positions[start..end]);
            let mask = inference_mask(&positions[start..end], &keys, &vec![true; keys.len()]);
            let part = model
                .forward(&ForwardStep::new(&tokens[start..end], &positions[start..end], &mask), &mut cache)
                .map_err(err)?;
            for (i, row) in part.rows().enumerate() {
                chunk = chunk.max(max_rel_diff(row, whole.row(start + i)));
            }
            start = end;
        }
    }
    Ok((
        rope <= 1e-4 && chunk <= 1e-5,
        format!("20 seeds each: RoPE +100 shift worst {rope:.2e} (<= 1e-4), chunked cache worst {chunk:.2e} (<= 1e-5)"),
    ))
}

fn scripted_pipeline() -> Result<(bool, String), String> {
    let mut lines = Vec::new();
    let mut ok = true;
    for absent in [0.0, 0.2] {
        let corpus = synth_corpus(&SynthConfig {
            seed: 10,
            categories: 3,
            products: 36,
            attrs_per_category: 12,
            absent_fraction: absent,
        })
        .map_err(err)?;
        let template = Template::default();
        let backend = ScriptedBackend::new(corpus.script.clone(), template.clone());
        let cfg = DecodeConfig {
            batch_size: 2,
            ..DecodeConfig::default()
        };
        let out = extract(&backend, &template, DEFAULT_INSTRUCTION, &corpus.records, &corpus.attribute_sets, Mode::Hpd, &cfg)
            .map_err(err)?;
        let gold = gold_labels(&corpus.records, &corpus.attribute_sets);
        let report = exact_f1(&out.predictions, &gold).map_err(err)?;
        ok &= if absent == 0.0 {
            report.f1 == 1.0
        } else {
            report.precision == 1.0 && report.recall == 1.0
        };
        lines.push(format!(
            "absent {absent}: P={} R={} F1={}",
            report.precision, report.recall, report.f1
        ));
    }
    Ok((ok, lines.join("; ")))
}
