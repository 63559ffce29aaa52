use serde_json::{json, Value};

use crate::attribution::Rule;
use crate::bounding::{
    run_event_admission, run_post_attribution, run_pre_attribution, run_unbounded,
    AttributedDataset, Configuration, EnforcementPoint, Relation,
};
use crate::events::{canonical_credit_path, canonical_fixture_fig2, Impression};
use crate::validity::{
    classification_table, table_rules, CheckOptions, Classification, TableCell, TableOptions,
    ValidityError, Verdict,
};

/// A reproduced table: aligned text for people, JSON for machines.
#[derive(Debug, Clone)]
pub struct TableOutput {
    pub text: String,
    pub json: Value,
}

/// Recomputes table 1, 3, 4 or 5. `trials` only affects table 5.
pub fn reproduce_table(table: u8, trials: usize, seed: u64) -> Result<TableOutput, ValidityError> {
    match table {
        1 => Ok(credit_table()),
        3 => Ok(post_table()?),
        4 => Ok(admission_table()?),
        5 => classification(trials, seed),
        other => Err(ValidityError::Domain(format!("no table {other}"))),
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|k| rows.iter().filter_map(|r| r.get(k)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(k, c)| format!("{c:<width$}", width = widths[k]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn credit_table() -> TableOutput {
    let d = canonical_credit_path();
    let c = &d.conversions[0];
    let refs: Vec<&Impression> = d.impressions.iter().collect();
    let mut rows = vec![std::iter::once("Rule".to_owned())
        .chain(d.impressions.iter().map(|i| format!("{} ({})", i.publisher, i.engagement.as_str())))
        .collect::<Vec<_>>()];
    let mut json_rows = Vec::new();
    for (name, rule) in [
        ("LTA", Rule::LastTouch),
        ("FTA", Rule::FirstTouch),
        ("UNI", Rule::Uniform),
        ("EXP", Rule::ExpDecay { half_life: 1.0 }),
    ] {
        let w = rule.attribute(&refs, c).expect("credit path is a valid input");
        rows.push(std::iter::once(name.to_owned()).chain(w.iter().map(|x| format!("{x:.4}"))).collect());
        json_rows.push(json!({"rule": name, "weights": w}));
    }
    TableOutput {
        text: format!(
            "Table 1: credit for one conversion at t=5 after four unit-spaced impressions (EXP half-life 1)\n{}",
            align(&rows)
        ),
        json: json!({"table": 1, "publishers": d.impressions.iter().map(|i| i.publisher.as_str()).collect::<Vec<_>>(), "rows": json_rows}),
    }
}

fn pair_list(a: &AttributedDataset) -> String {
    if a.is_empty() {
        return "Empty".into();
    }
    a.iter()
        .map(|(i, c, _)| format!("({i}, {c})"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn pair_json(a: &AttributedDataset) -> Value {
    Value::Array(
        a.iter()
            .map(|(i, c, w)| json!({"impression": i, "conversion": c, "weight": w}))
            .collect(),
    )
}

fn lta(relation: Relation, enforcement: EnforcementPoint, r: u32) -> Configuration {
    Configuration::new(Rule::LastTouch, relation, enforcement, r).expect("fixed configurations are consistent")
}

fn post_table() -> Result<TableOutput, ValidityError> {
    let d = canonical_fixture_fig2();
    let mut rows = vec![vec!["Bounding".to_owned(), "Attributed dataset".to_owned()]];
    let mut json_rows = Vec::new();
    let none = run_unbounded(&d, &Rule::LastTouch)?;
    rows.push(vec!["None".into(), pair_list(&none)]);
    json_rows.push(json!({"bounding": "none", "pairs": pair_json(&none)}));
    for (label, relation) in [
        ("Impression (r = 2)", Relation::Impression),
        ("User x Advertiser (r = 2)", Relation::UserAdvertiser),
        ("User (r = 2)", Relation::User),
    ] {
        let a = run_post_attribution(&d, &lta(relation, EnforcementPoint::Post, 2))?;
        rows.push(vec![label.into(), pair_list(&a)]);
        json_rows.push(json!({"bounding": relation, "r": 2, "pairs": pair_json(&a)}));
    }
    Ok(TableOutput {
        text: format!("Table 3: post-attribution contribution bounding, LTA, two-advertiser fixture\n{}", align(&rows)),
        json: json!({"table": 3, "enforcement": "post", "rows": json_rows}),
    })
}

const ADMISSION_NOTE: &str = "Note: the event-admission runner charges one unit per admitted event, so the advertiser and user budgets run out on i1 and i2. \
The pre-attribution runner charges one unit per scope per conversion and keeps (i2, c1) and (i2, c2), \
because both conversions are attributed before the advertiser budget is spent.";

fn admission_table() -> Result<TableOutput, ValidityError> {
    let d = canonical_fixture_fig2();
    let mut rows = vec![vec![
        "Bounding".to_owned(),
        "Event admission".to_owned(),
        "Pre-attribution runner".to_owned(),
    ]];
    let mut json_rows = Vec::new();
    for (label, relation) in [
        ("User x Advertiser (r = 2)", Relation::UserAdvertiser),
        ("User (r = 2)", Relation::User),
    ] {
        let admitted = run_event_admission(&d, &lta(relation, EnforcementPoint::EventAdmission, 2))?;
        let pre = run_pre_attribution(&d, &lta(relation, EnforcementPoint::Pre, 2))?;
        rows.push(vec![label.into(), pair_list(&admitted), pair_list(&pre)]);
        json_rows.push(json!({
            "bounding": relation,
            "r": 2,
            "event_admission": pair_json(&admitted),
            "pre_attribution": pair_json(&pre),
        }));
    }
    Ok(TableOutput {
        text: format!(
            "Table 4: pre-attribution contribution bounding, LTA, two-advertiser fixture\n{}{}\n",
            align(&rows),
            ADMISSION_NOTE
        ),
        json: json!({"table": 4, "rows": json_rows, "note": ADMISSION_NOTE}),
    })
}

fn cell_text(cell: &TableCell) -> String {
    let expected = match &cell.expected {
        Classification::Valid { c0 } => format!("+ C0={c0}"),
        Classification::Invalid { .. } => "-".to_owned(),
        _ => "n/a".to_owned(),
    };
    match (cell.observed(), cell.agrees()) {
        (Some(_), false) => format!("{expected} (MISMATCH)"),
        (Some(Verdict::InvalidWitnessed), true) => {
            let ratio = cell.report.as_ref().map_or(0.0, |r| r.max_ratio);
            format!("{expected} ({ratio:.4})")
        }
        _ => expected,
    }
}

fn classification(trials: usize, seed: u64) -> Result<TableOutput, ValidityError> {
    let rules = table_rules();
    let opts = TableOptions {
        check: CheckOptions {
            trials,
            seed,
            ..CheckOptions::default()
        },
        ..TableOptions::default()
    };
    let cells = classification_table(&rules, &Relation::ALL, &opts)?;
    let labels: Vec<String> = rules.iter().map(Rule::label).collect();
    let mut text = format!(
        "Table 5: validity per configuration, {trials} random trials per cell (+ valid with constant, - invalid with the largest ratio witnessed)\n"
    );
    let sections = [
        (EnforcementPoint::Post, &Relation::SCOPED[..]),
        (EnforcementPoint::Pre, &Relation::SCOPED[..]),
        (EnforcementPoint::None, &[Relation::Conversion][..]),
    ];
    for (enforcement, relations) in sections {
        let mut rows = vec![std::iter::once(format!("[{enforcement}]")).chain(labels.iter().cloned()).collect::<Vec<_>>()];
        for &relation in relations {
            let mut row = vec![relation.to_string()];
            for label in &labels {
                let cell = cells
                    .iter()
                    .find(|c| &c.rule == label && c.relation == relation && c.enforcement == enforcement)
                    .expect("every cell is planned");
                row.push(cell_text(cell));
            }
            rows.push(row);
        }
        text.push_str(&align(&rows));
    }
    let json_cells: Vec<Value> = cells
        .iter()
        .map(|c| {
            json!({
                "rule": c.rule,
                "relation": c.relation,
                "enforcement": c.enforcement,
                "expected": c.expected,
                "observed": c.observed(),
                "agrees": c.agrees(),
                "max_ratio": c.report.as_ref().map(|r| r.max_ratio),
            })
        })
        .collect();
    Ok(TableOutput {
        text,
        json: json!({"table": 5, "trials": trials, "seed": seed, "all_agree": cells.iter().all(TableCell::agrees), "cells": json_cells}),
    })
}
