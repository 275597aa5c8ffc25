//! Directional claims that should hold whatever the exact magnitudes.

use serde::{Deserialize, Serialize};

use super::expectations::Status;
use super::stats;
use super::table::{ResultTable, SummaryRow};
use crate::observer::Variant;

const ALPHA: f64 = 0.05;
const CHANCE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub id: String,
    pub claim: String,
    pub status: Status,
    pub detail: String,
}

type Outcome = Result<(bool, String), String>;

struct View<'a> {
    table: &'a ResultTable,
    summary: Vec<SummaryRow>,
}

impl View<'_> {
    fn row(&self, exp: &str, cond: &str, n: usize) -> Result<&SummaryRow, String> {
        self.summary
            .iter()
            .find(|r| r.experiment == exp && r.condition == cond && r.map_count == n)
            .ok_or_else(|| format!("no {exp} results for {cond} at {n} maps"))
    }

    fn mean(&self, exp: &str, cond: &str, v: Variant, n: usize) -> Result<f64, String> {
        self.row(exp, cond, n)?
            .mean(v)
            .ok_or_else(|| format!("no {v} results for {exp} {cond} at {n} maps"))
    }

    fn gain(&self, exp: &str, cond: &str, n: usize) -> Result<f64, String> {
        self.row(exp, cond, n)?
            .gain
            .ok_or_else(|| format!("{exp} {cond} at {n} maps lacks one architecture"))
    }

    fn p(&self, exp: &str, cond: &str, n: usize) -> Result<f64, String> {
        self.row(exp, cond, n)?
            .p_value
            .ok_or_else(|| format!("{exp} {cond} at {n} maps has fewer than 2 seeds per side"))
    }

    fn counts(&self, exp: &str) -> Vec<usize> {
        let mut c: Vec<usize> = self.summary.iter().filter(|r| r.experiment == exp).map(|r| r.map_count).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Every (architecture, seed) accuracy at one point, both sides pooled.
    fn pooled(&self, exp: &str, cond: &str, n: usize) -> Vec<f64> {
        Variant::ALL
            .iter()
            .flat_map(|&v| self.table.by_seed(exp, cond, v, n).into_values())
            .collect()
    }
}

fn learning_accuracy(v: &View) -> Outcome {
    let m = v.mean("learning_curve", "random/any", Variant::Beliefs, 300)?;
    Ok((m >= 0.65, format!("Beliefs at 300 maps: {m:.4}")))
}

fn learning_gain(v: &View) -> Outcome {
    let g = v.gain("learning_curve", "random/any", 25)?;
    let p = v.p("learning_curve", "random/any", 25)?;
    Ok((g > 0.0 && p < ALPHA, format!("gain at 25 maps {g:+.4}, p = {p:.4}")))
}

fn learning_peak(v: &View) -> Outcome {
    let mid = v.gain("learning_curve", "random/any", 25)?;
    let end = v.gain("learning_curve", "random/any", 300)?;
    Ok((mid > end, format!("gain {mid:+.4} at 25 maps vs {end:+.4} at 300")))
}

/// The 15–25 map point with the largest hidden-target gain.
fn hidden_point(v: &View) -> Result<usize, String> {
    v.counts("hidden_target")
        .into_iter()
        .filter(|n| (15..=25).contains(n))
        .filter_map(|n| v.gain("hidden_target", "random/hidden", n).ok().map(|g| (n, g)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, _)| n)
        .ok_or_else(|| "no hidden-target results between 15 and 25 maps".into())
}

fn hidden_amplified(v: &View) -> Outcome {
    let n = hidden_point(v)?;
    let hidden = v.gain("hidden_target", "random/hidden", n)?;
    let whole = v.gain("hidden_target", "random/any", n)?;
    let p = v.p("hidden_target", "random/hidden", n)?;
    Ok((
        hidden > whole && p < ALPHA,
        format!("{n} maps: hidden gain {hidden:+.4} (p = {p:.4}) vs whole-set gain {whole:+.4}"),
    ))
}

fn hidden_above_chance(v: &View) -> Outcome {
    let n = hidden_point(v)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for arch in Variant::ALL {
        let xs: Vec<f64> = v.table.by_seed("hidden_target", "random/hidden", arch, n).into_values().collect();
        let p = stats::one_sample(&xs, CHANCE).map_err(|e| e.to_string())?;
        let m = stats::mean(&xs);
        ok &= m > CHANCE && p < 0.001;
        parts.push(format!("{arch} {m:.4} (p = {p:.2e})"));
    }
    Ok((ok, format!("{n} maps: {}", parts.join(", "))))
}

fn aligned_worst(v: &View) -> Outcome {
    let worst = "aligned:3/visible";
    let target = v.mean("distractors", worst, Variant::NoBeliefs, 25)?;
    let rest = v
        .summary
        .iter()
        .filter(|r| r.experiment == "distractors" && r.map_count == 25 && r.condition != worst)
        .filter_map(|r| r.nobeliefs_mean.map(|m| (r.condition.as_str(), m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or("no other distractor conditions at 25 maps")?;
    Ok((
        target < rest.1,
        format!("NoBeliefs {worst} {target:.4}; next worst {} {:.4}", rest.0, rest.1),
    ))
}

/// Per-seed gain averaged over the conditions whose name starts with `prefix`.
fn seed_gains(v: &View, prefix: &str, n: usize) -> Vec<f64> {
    let conds: Vec<&str> = v
        .summary
        .iter()
        .filter(|r| r.experiment == "distractors" && r.map_count == n && r.condition.starts_with(prefix))
        .map(|r| r.condition.as_str())
        .collect();
    let per_cond: Vec<_> = conds.iter().map(|c| v.table.gains_by_seed("distractors", c, n)).collect();
    let Some(first) = per_cond.first() else {
        return Vec::new();
    };
    first
        .keys()
        .filter(|s| per_cond.iter().all(|g| g.contains_key(s)))
        .map(|s| stats::mean(&per_cond.iter().map(|g| g[s]).collect::<Vec<_>>()))
        .collect()
}

fn aligned_gain(v: &View) -> Outcome {
    let aligned = seed_gains(v, "aligned:", 120);
    let random = seed_gains(v, "random/", 120);
    if aligned.is_empty() || random.is_empty() {
        return Err("aligned or random distractor results missing at 120 maps".into());
    }
    let p = stats::significance(&aligned, &random).map_err(|e| e.to_string())?;
    let (a, r) = (stats::mean(&aligned), stats::mean(&random));
    Ok((a > r && p < ALPHA, format!("120 maps: aligned gain {a:+.4} vs random {r:+.4}, p = {p:.4}")))
}

fn ignored_ceiling(v: &View) -> Outcome {
    let counts: Vec<usize> = v.counts("distractors").into_iter().filter(|&n| n >= 25).collect();
    if counts.is_empty() {
        return Err("no distractor results at 25 or more maps".into());
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for n in counts {
        for arch in Variant::ALL {
            let (mut hits, mut total) = (0.0, 0usize);
            for r in v.table.rows.iter().filter(|r| {
                r.experiment == "distractors"
                    && r.map_count == n
                    && r.architecture == arch
                    && r.condition.starts_with("ignored:3/")
            }) {
                hits += r.accuracy * r.n as f64;
                total += r.n;
            }
            if total == 0 {
                return Err(format!("no ignored:3 {arch} results at {n} maps"));
            }
            let acc = hits / total as f64;
            ok &= acc >= 0.9;
            parts.push(format!("{arch}@{n} {acc:.4}"));
        }
    }
    Ok((ok, parts.join(", ")))
}

fn budget_trend(v: &View) -> Outcome {
    let n = *v.counts("cognitive").first().ok_or("no cognitive results")?;
    let mut points = Vec::new();
    for b in [150, 50, 25, 5] {
        let xs = v.pooled("cognitive", &format!("random/any/budget={b}"), n);
        if xs.is_empty() {
            return Err(format!("no cognitive results at budget {b}"));
        }
        points.push((b, stats::mean(&xs), stats::std_dev(&xs)));
    }
    let inversions: Vec<_> = points
        .windows(2)
        .filter(|w| w[1].1 > w[0].1)
        .map(|w| (w[1].1 - w[0].1, w[0].2.max(w[1].2)))
        .collect();
    let ok = inversions.len() <= 1 && inversions.iter().all(|(rise, sd)| rise <= sd);
    let trace: Vec<String> = points.iter().map(|(b, m, _)| format!("{b}: {m:.4}")).collect();
    Ok((ok, format!("{n} maps, {}", trace.join(", "))))
}

fn speed_order(v: &View) -> Outcome {
    let n = *v.counts("speed").first().ok_or("no speed results")?;
    let slow = v.pooled("speed", "random/any/speed=0.75", n);
    let fast = v.pooled("speed", "random/any/speed=1.25", n);
    if slow.is_empty() || fast.is_empty() {
        return Err("speed 0.75 or 1.25 results missing".into());
    }
    let (s, f) = (stats::mean(&slow), stats::mean(&fast));
    Ok((s < f, format!("{n} maps: x0.75 {s:.4} vs x1.25 {f:.4}")))
}

fn finetune_gap(v: &View) -> Outcome {
    let n = *v.counts("speed").first().ok_or("no speed results")?;
    let before = v.gain("speed", "random/any/speed=0.75", n)?;
    let after = v.gain("speed", "random/any/speed=0.75/finetuned", n)?;
    Ok((after > before, format!("x0.75 gain {before:+.4} before, {after:+.4} after finetuning")))
}

pub fn check_claims(table: &ResultTable) -> Vec<ClaimCheck> {
    let view = View {
        table,
        summary: table.summary(),
    };
    let claims: [(&str, &str, fn(&View) -> Outcome); 11] = [
        ("learning_curve.accuracy", "Beliefs reaches 65% at 300 maps", learning_accuracy),
        ("learning_curve.gain", "positive, significant gain at 25 maps", learning_gain),
        ("learning_curve.peak", "gain at 25 maps exceeds gain at 300", learning_peak),
        ("hidden_target.amplified", "hidden-target gain beats whole-set gain, significantly", hidden_amplified),
        ("hidden_target.chance", "both architectures above chance on hidden targets", hidden_above_chance),
        ("distractors.aligned_worst", "aligned:3/visible is the worst NoBeliefs condition", aligned_worst),
        ("distractors.aligned_gain", "aligned gain exceeds random-placement gain at 120 maps", aligned_gain),
        ("distractors.ignored_ceiling", "three ignored distractors reach 90% for both", ignored_ceiling),
        ("generalization.budget", "accuracy falls with the test actor's budget", budget_trend),
        ("generalization.speed", "slow actors are harder than fast ones", speed_order),
        ("generalization.finetune", "finetuning on slow actors widens the gain", finetune_gap),
    ];
    claims
        .into_iter()
        .map(|(id, claim, f)| {
            let (status, detail) = match f(&view) {
                Ok((true, d)) => (Status::Pass, d),
                Ok((false, d)) => (Status::Fail, d),
                Err(d) => (Status::Missing, d),
            };
            ClaimCheck {
                id: id.into(),
                claim: claim.into(),
                status,
                detail,
            }
        })
        .collect()
}
