mod common;

use common::{random_layout, rng, script_for, stopping_tiny, three_slots, tiny};
use hpd_core::engine::{
    ar_decode, hpd_decode, oracle_full_recompute, oracle_independent, ArRequest, DecodeConfig, HpdSession,
};
use hpd_core::masks::inference_mask;
use hpd_core::model::{Backend, ForwardStep, ScriptedBackend};
use hpd_core::scheduler::{LayoutShape, StackedPrompt, Template};
use hpd_core::tokenizer::{tokenize, DELIM, PAD};

fn config(k_max: usize) -> DecodeConfig {
    DecodeConfig {
        k_max,
        ..DecodeConfig::default()
    }
}

fn scripted(prompt: &StackedPrompt, values: &[&str]) -> ScriptedBackend {
    ScriptedBackend::new(script_for(&prompt.layout, values), Template::default())
}

#[test]
fn prefill_forwards_whole_layout_and_queries_every_anchor() {
    let prompt = three_slots();
    let backend = scripted(&prompt, &["abc", "def", "ghi"]);
    let mut session = HpdSession::new(&backend, std::slice::from_ref(&prompt), &config(7)).unwrap();
    let first = session.prefill().unwrap();
    assert_eq!(first, vec![tokenize(b"adg")]);
    assert_eq!(session.cache(0).len(), 20);
    assert_eq!(session.cache(0).positions(), prompt.plan.position_ids.as_slice());
    assert_eq!(session.last_query_counts(), &[3]);
    let next: Vec<_> = session.slots(0).iter().map(|s| s.last_position().unwrap()).collect();
    assert_eq!(next, vec![13, 23, 33]);
}

#[test]
fn two_mirrored_documents_decode_in_parallel() {
    let layout = LayoutShape {
        docs: 2,
        ..LayoutShape::THREE_SLOTS
    }
    .build(|i| 65 + i as u32)
    .unwrap();
    let prompt = StackedPrompt::new(layout, 7).unwrap();
    let backend = scripted(&prompt, &["ab", "c", "def", "ab", "c", "def"]);
    let (results, trace) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(7)).unwrap();
    assert_eq!(trace.tokens_emitted_per_pass[0], 6);
    let texts: Vec<_> = results[0].values.iter().map(|v| v.text()).collect();
    assert_eq!(texts[..3], texts[3..]);
    assert_eq!(texts[..3], ["ab", "c", "def"]);
}

#[test]
fn no_attributes_is_an_error() {
    let layout = LayoutShape {
        attributes: 0,
        ..LayoutShape::THREE_SLOTS
    }
    .build(|i| 65 + i as u32)
    .unwrap();
    let prompt = StackedPrompt::new(layout, 7).unwrap();
    let backend = scripted(&prompt, &[]);
    assert!(hpd_decode(&backend, &[prompt], &config(7)).is_err());
}

#[test]
fn pruned_slots_leave_the_query_set_and_positions_advance() {
    let prompt = three_slots();
    let backend = scripted(&prompt, &["ab", "a", "abc"]);
    let mut session = HpdSession::new(&backend, std::slice::from_ref(&prompt), &config(7)).unwrap();
    session.prefill().unwrap();
    assert!(session.step().unwrap());
    assert_eq!(session.last_query_counts(), &[3]);
    assert_eq!(&session.cache(0).positions()[20..], &[13, 23, 33]);
    assert!(session.step().unwrap());
    assert_eq!(session.last_query_counts(), &[2]);
    assert_eq!(&session.cache(0).positions()[23..], &[14, 34]);
    assert!(session.step().unwrap());
    assert_eq!(session.last_query_counts(), &[1]);
    assert_eq!(&session.cache(0).positions()[25..], &[35]);
    assert!(!session.step().unwrap());
    assert_eq!(session.trace().forward_passes, 4);
}

#[test]
fn three_values_of_three_tokens_take_three_steps() {
    let prompt = three_slots();
    let backend = scripted(&prompt, &["abc", "def", "ghi"]);
    let (results, trace) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(7)).unwrap();
    assert_eq!(trace.steps_excluding_delimiter, 3);
    assert_eq!(trace.forward_passes, 4);
    assert_eq!(trace.tokens_emitted_per_pass, vec![3, 3, 3, 3]);
    let texts: Vec<_> = results[0].values.iter().map(|v| v.text()).collect();
    assert_eq!(texts, ["abc", "def", "ghi"]);
}

#[test]
fn passes_follow_the_longest_value() {
    let prompt = three_slots();
    let backend = scripted(&prompt, &["ab", "abcde", "a"]);
    let (_, trace) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(7)).unwrap();
    assert_eq!(trace.forward_passes, 6);
    assert_eq!(trace.steps_excluding_delimiter, 5);
    assert_eq!(trace.tokens_emitted_per_pass, vec![3, 3, 2, 1, 1, 1]);
}

#[test]
fn values_longer_than_the_gap_are_truncated() {
    let prompt = three_slots();
    let backend = scripted(&prompt, &["abcdefghij", "", "x"]);
    let (results, trace) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(7)).unwrap();
    let v = &results[0].values;
    assert_eq!((v[0].text().as_str(), v[0].truncated), ("abcdefg", true));
    assert_eq!((v[1].text().as_str(), v[1].truncated), ("", false));
    assert_eq!(trace.forward_passes, 7);
    assert!(trace.forward_passes <= 7 + 1);
}

#[test]
fn cached_decode_matches_full_recompute() {
    let mut lengths = std::collections::BTreeSet::new();
    for seed in 0..25 {
        let mut r = rng(seed);
        let prompt = StackedPrompt::new(random_layout(&mut r, 3, 6), 5).unwrap();
        let backend = stopping_tiny(seed);
        let (cached, trace) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(5)).unwrap();
        let recomputed = oracle_full_recompute(&backend, &prompt, &config(5)).unwrap();
        assert_eq!(cached[0], recomputed, "seed {seed}");
        assert!(trace.forward_passes <= 6);
        lengths.extend(cached[0].values.iter().map(|v| v.tokens.len()));
    }
    assert!(lengths.len() >= 4, "value lengths too uniform: {lengths:?}");
}

#[test]
fn corrupted_cache_is_detected_by_the_oracle() {
    let mut detected = 0;
    for seed in 0..8 {
        let mut r = rng(seed);
        let prompt = StackedPrompt::new(random_layout(&mut r, 2, 4), 5).unwrap();
        let backend = stopping_tiny(seed);
        let oracle = oracle_full_recompute(&backend, &prompt, &config(5)).unwrap();
        let mut session = HpdSession::new(&backend, std::slice::from_ref(&prompt), &config(5)).unwrap();
        session.prefill().unwrap();
        // Push the first prompt token past every later query.
        session.cache_mut(0).corrupt_position(0, 5000);
        session.run().unwrap();
        if session.results()[0] != oracle {
            detected += 1;
        }
    }
    assert!(detected >= 4, "only {detected} of 8 corruptions changed the output");
}

#[test]
fn first_step_ignores_later_attributes() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let prompt = StackedPrompt::new(random_layout(&mut r, 2, 5), 5).unwrap();
        let model = tiny(seed);
        let positions = &prompt.plan.position_ids;
        let prefill = |tokens: &[u32]| {
            let mask = inference_mask(positions, positions, &vec![true; positions.len()]);
            model
                .forward(&ForwardStep::new(tokens, positions, &mask), &mut model.new_cache())
                .unwrap()
        };
        let base = prefill(prompt.layout.tokens());
        let slots = prompt.layout.slots();
        for (n, slot) in slots.iter().enumerate() {
            let mut tokens = prompt.layout.tokens().to_vec();
            for later in &slots[n + 1..] {
                for t in later.attr_span.clone() {
                    tokens[t] = (tokens[t] + 37) % 256;
                }
            }
            let out = prefill(&tokens);
            assert_eq!(out.row(slot.anchor), base.row(slot.anchor), "seed {seed} slot {n}");
        }
    }
}

#[test]
fn single_slot_matches_autoregressive_decoding() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let mut shape = common::random_shape(&mut r, 1, 1);
        shape.docs = 1;
        shape.attributes = 1;
        let layout = shape.build(|i| 40 + (i as u32 * 7) % 80).unwrap();
        let prompt = StackedPrompt::new(layout, 6).unwrap();
        let backend = stopping_tiny(seed);
        let (hpd, _) = hpd_decode(&backend, std::slice::from_ref(&prompt), &config(6)).unwrap();

        let anchor = prompt.layout.slots()[0].anchor;
        let request = ArRequest {
            prompt: prompt.layout.tokens()[..=anchor].to_vec(),
            stop: vec![DELIM],
            max_new_tokens: 6,
            context: None,
        };
        let (mut ar, _) = ar_decode(&backend, &request, &config(6)).unwrap();
        if ar.last() == Some(&DELIM) {
            ar.pop();
        }
        assert_eq!(hpd[0].values[0].tokens, ar, "seed {seed}");
        let alone = oracle_independent(&backend, &prompt, 0, &config(6)).unwrap();
        assert_eq!(alone, ar, "seed {seed}");
    }
}

#[test]
fn batched_prompts_decode_as_if_alone() {
    let mut r = rng(77);
    let prompts: Vec<_> = (0..4)
        .map(|_| StackedPrompt::new(random_layout(&mut r, 3, 4), 5).unwrap())
        .collect();
    let backend = stopping_tiny(77);
    let (together, trace) = hpd_decode(&backend, &prompts, &config(5)).unwrap();
    let slots: usize = prompts.iter().map(|p| p.layout.slots().len()).sum();
    assert_eq!(trace.tokens_emitted_per_pass[0], slots);
    for (i, p) in prompts.iter().enumerate() {
        let (alone, _) = hpd_decode(&backend, std::slice::from_ref(p), &config(5)).unwrap();
        assert_eq!(together[i], alone[0], "prompt {i}");
    }
}

#[test]
fn padding_stays_out_of_the_way() {
    let short = three_slots();
    let long = StackedPrompt::new(
        LayoutShape {
            prompt_len: 30,
            ..LayoutShape::THREE_SLOTS
        }
        .build(|i| 90 + i as u32 % 20)
        .unwrap(),
        7,
    )
    .unwrap();
    let backend = stopping_tiny(4);
    let prompts = [short.clone(), long];
    let mut session = HpdSession::new(&backend, &prompts, &config(7)).unwrap();
    session.run().unwrap();
    let pads = session.cache(0).live().iter().filter(|l| !**l).count();
    assert!(pads >= 20, "short row should have been padded");
    let (alone, _) = hpd_decode(&backend, &[short], &config(7)).unwrap();
    assert_eq!(session.results()[0], alone[0]);
    assert_eq!(PAD, 256);
}

#[test]
fn session_protocol_errors() {
    let prompt = three_slots();
    let backend = scripted(&prompt, &["a", "b", "c"]);
    let mut session = HpdSession::new(&backend, std::slice::from_ref(&prompt), &config(7)).unwrap();
    assert!(session.step().is_err());
    session.prefill().unwrap();
    assert!(session.prefill().is_err());
    assert!(HpdSession::new(&backend, std::slice::from_ref(&prompt), &config(8)).is_err());
    assert!(HpdSession::new(&backend, &[], &config(7)).is_err());
}
