use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context};
use serde_json::{json, Value};
use xdoc_core::metrics::{qa_em_f1_multi, RougeAccumulator};
use xdoc_core::textproc::TokenNorm;

use crate::{EvalCommand, EvalQaArgs, EvalRougeArgs};

pub fn run(cmd: EvalCommand) -> anyhow::Result<ExitCode> {
    let report = match cmd {
        EvalCommand::Rouge(args) => rouge(&args)?,
        EvalCommand::Qa(args) => qa(&args)?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

/// One value per non-blank line: a bare JSON string or list, or an object
/// holding `field`.
fn read_values(path: &Path, field: &str) -> anyhow::Result<Values> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let location = || format!("{}:{}", path.display(), i + 1);
        let value: Value = serde_json::from_str(&line).with_context(location)?;
        let value = match value {
            Value::Object(mut o) => o.remove(field).with_context(|| format!("{}: missing field `{field}`", location()))?,
            v => v,
        };
        let texts = match value {
            Value::String(s) => vec![s],
            Value::Array(items) => items
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    _ => bail!("{}: expected a list of strings", location()),
                })
                .collect::<anyhow::Result<_>>()?,
            _ => bail!("{}: expected a string", location()),
        };
        out.push(texts);
    }
    Ok(out)
}

type Values = Vec<Vec<String>>;

fn paired(pred: &Path, gold: &Path, field: &str) -> anyhow::Result<(Values, Values)> {
    let p = read_values(pred, field)?;
    let g = read_values(gold, field)?;
    if p.len() != g.len() {
        bail!("{} has {} records but {} has {}", pred.display(), p.len(), gold.display(), g.len());
    }
    Ok((p, g))
}

fn rouge(args: &EvalRougeArgs) -> anyhow::Result<Value> {
    let (preds, refs) = paired(&args.pred, &args.reference, &args.field)?;
    let norm = if args.no_stem { TokenNorm::scoring() } else { TokenNorm::evaluation() };
    let mut acc = RougeAccumulator::default();
    for (p, r) in preds.iter().zip(&refs) {
        acc.add(&p.join(" "), &r.join(" "), norm);
    }
    let report = acc.report();
    let part = |s: xdoc_core::metrics::RougeScore| json!({ "p": s.precision, "r": s.recall, "f1": s.f1 });
    Ok(json!({ "r1": part(report.r1), "r2": part(report.r2), "rl": part(report.rl), "count": report.count }))
}

fn qa(args: &EvalQaArgs) -> anyhow::Result<Value> {
    let (preds, golds) = paired(&args.pred, &args.gold, &args.field)?;
    let (mut em, mut f1) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(&golds) {
        let r = qa_em_f1_multi(p.first().map_or("", String::as_str), g);
        em += r.exact_match;
        f1 += r.f1;
    }
    let n = preds.len().max(1) as f64;
    Ok(json!({ "exact_match": em / n, "f1": f1 / n, "count": preds.len() }))
}
