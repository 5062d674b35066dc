//! Structural checks on generated instances, written against the cluster
//! and configuration without reusing the assembler's own helpers.

use xdoc_core::assembler::{GenerationConfig, Mode, PretrainInstance};
use xdoc_core::corpus::DocumentCluster;

fn tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Every violation found in `inst`, empty when it is well formed.
pub fn violations(inst: &PretrainInstance, cluster: &DocumentCluster, config: &GenerationConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut fail = |msg: String| out.push(format!("{}/{}/{}: {msg}", inst.cluster_id, inst.doc_id, inst.mode));

    let Some(held_out) = cluster.documents.iter().position(|d| d.doc_id == inst.doc_id) else {
        fail("unknown document".into());
        return out;
    };
    let held = &cluster.documents[held_out];
    if !held.sentences.iter().any(|s| s.text == inst.salient_sentence) {
        fail("salient sentence is not from the held-out document".into());
    }
    if inst.answer.is_empty() || !inst.salient_sentence.contains(&inst.answer) {
        fail(format!("answer `{}` is not a span of the salient sentence", inst.answer));
    }

    let full_target = if config.answer_only_target {
        inst.answer.clone()
    } else {
        format!("{}{}{}", inst.answer, config.target_separator, inst.salient_sentence)
    };
    if tokens(&full_target) <= config.max_output_tokens {
        if inst.target_text != full_target {
            fail(format!("target `{}` != `{full_target}`", inst.target_text));
        }
    } else {
        let kept: Vec<&str> = full_target.split_whitespace().take(config.max_output_tokens).collect();
        if inst.target_text != kept.join(" ") {
            fail("truncated target is not a token prefix".into());
        }
    }
    if tokens(&inst.target_text) > config.max_output_tokens {
        fail("target over budget".into());
    }
    if tokens(&inst.input_text) > config.max_input_tokens {
        fail(format!("input has {} tokens", tokens(&inst.input_text)));
    }

    let masks = inst.input_text.matches(config.mask_token.as_str()).count();
    let elsewhere = |text: &str| {
        cluster.documents.iter().enumerate().any(|(i, d)| i != held_out && d.joined_text().contains(text))
            || (config.include_question && inst.question.contains(text))
    };
    match inst.mode {
        Mode::A => {
            if masks != 0 {
                fail("mode A input holds a mask".into());
            }
            if !elsewhere(&inst.salient_sentence) && inst.input_text.contains(&inst.salient_sentence) {
                fail("mode A input leaks the salient sentence".into());
            }
            for s in held.sentences.iter().filter(|s| tokens(&s.text) >= 4) {
                if !elsewhere(&s.text) && inst.input_text.contains(&s.text) {
                    fail(format!("mode A input leaks `{}`", s.text));
                }
            }
        }
        Mode::B | Mode::C => {
            if masks != 1 {
                fail(format!("{masks} masks"));
            }
            if inst.mode == Mode::B && !elsewhere(&inst.salient_sentence) && inst.input_text.contains(&inst.salient_sentence) {
                fail("mode B input keeps the salient sentence".into());
            }
        }
    }

    match &inst.global_token_positions {
        Some(pos) => {
            let words: Vec<&str> = inst.input_text.split_whitespace().collect();
            let expected: Vec<usize> =
                words.iter().enumerate().filter(|(_, w)| **w == config.doc_sep_token).map(|(i, _)| i).collect();
            if *pos != expected {
                fail(format!("global positions {pos:?} != {expected:?}"));
            }
        }
        None => fail("missing global positions".into()),
    }
    if config.include_question && !inst.input_text.contains(&inst.question) {
        fail("question missing from input".into());
    }
    out
}
