//! Plain-text report: one table per experiment, then the reference checks.

use std::fmt::Write;

use super::claims::ClaimCheck;
use super::expectations::ExpectationCheck;
use super::table::{ResultTable, SummaryRow};

fn caption(experiment: &str) -> &'static str {
    match experiment {
        "learning_curve" => "Whole test set by number of training maps",
        "hidden_target" => "Test samples split by whether the actor sees its target",
        "distractors" => "Ignored and aligned distractors by target visibility",
        "cognitive" => "Test actors planning with smaller budgets",
        "speed" => "Test actors replayed at other speeds",
        _ => "",
    }
}

fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        _ => "",
    }
}

fn cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{:6.2} ± {:5.2}", 100.0 * m, 100.0 * s),
        (Some(m), None) => format!("{:6.2}", 100.0 * m),
        _ => "-".into(),
    }
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(|| "-".into(), f)
}

fn experiment_table(out: &mut String, name: &str, rows: &[&SummaryRow], table: &ResultTable) {
    let _ = writeln!(out, "{name}: {}", caption(name));
    let _ = writeln!(out, "accuracy in %, mean ± std over seeds; gain = Beliefs − NoBeliefs");
    let width = rows.iter().map(|r| r.condition.len()).max().unwrap_or(9).max(9);
    let _ = writeln!(
        out,
        "{:<width$}  {:>4}  {:>5}  {:>6}  {:>15}  {:>15}  {:>7}  {:>8}",
        "condition", "maps", "seeds", "n", "Beliefs", "NoBeliefs", "gain", "p"
    );
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| r.map_count);
    for r in sorted {
        let n = table
            .conditions
            .iter()
            .find(|c| c.experiment == r.experiment && c.condition == r.condition)
            .map_or_else(|| "-".into(), |c| format!("{}{}", c.n, if c.flagged { "!" } else { "" }));
        let _ = writeln!(
            out,
            "{:<width$}  {:>4}  {:>5}  {:>6}  {:>15}  {:>15}  {:>7}  {:>8}",
            r.condition,
            r.map_count,
            r.seeds,
            n,
            cell(r.beliefs_mean, r.beliefs_std),
            cell(r.nobeliefs_mean, r.nobeliefs_std),
            opt(r.gain, |g| format!("{:+.2}", 100.0 * g)),
            opt(r.p_value, |p| format!("{p:.4}{}", stars(r.p_value))),
        );
    }
    out.push('\n');
}

pub fn render_report(table: &ResultTable, expectations: &[ExpectationCheck], claims: &[ClaimCheck]) -> String {
    let mut out = String::new();
    let summary = table.summary();
    let mut experiments: Vec<&str> = Vec::new();
    for r in &summary {
        if !experiments.contains(&r.experiment.as_str()) {
            experiments.push(&r.experiment);
        }
    }
    for name in experiments {
        let rows: Vec<&SummaryRow> = summary.iter().filter(|r| r.experiment == name).collect();
        experiment_table(&mut out, name, &rows, table);
    }
    let flagged: Vec<_> = table.conditions.iter().filter(|c| c.flagged).collect();
    if !flagged.is_empty() {
        let _ = writeln!(out, "flagged conditions (infeasible placements ≥ 5%, marked !):");
        for c in flagged {
            let _ = writeln!(out, "  {} {}: {} of {} skipped", c.experiment, c.condition, c.skipped, c.attempts);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "p: two-tailed Welch test over seeds; * < .05, ** < .01, *** < .001\n");

    if !expectations.is_empty() {
        let _ = writeln!(out, "reference values");
        let width = expectations.iter().map(|e| e.id.len()).max().unwrap_or(0);
        for e in expectations {
            let _ = writeln!(
                out,
                "  {:<width$}  expected {:>8.4} ± {:<6.4}  measured {:>8}  {}",
                e.id,
                e.expected,
                e.tolerance,
                opt(e.measured, |m| format!("{m:.4}")),
                e.status
            );
        }
        out.push('\n');
    }
    if !claims.is_empty() {
        let _ = writeln!(out, "directional claims");
        let width = claims.iter().map(|c| c.id.len()).max().unwrap_or(0);
        for c in claims {
            let _ = writeln!(out, "  {:<width$}  {:<7}  {}: {}", c.id, c.status.to_string(), c.claim, c.detail);
        }
    }
    out
}
