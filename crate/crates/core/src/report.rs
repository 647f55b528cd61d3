//! Text and CSV renderings of experiment results.

use std::fmt::Write as _;

use crate::crossval::{CvResult, FoldAssignment, StratumLabel};
use crate::efficiency::EfficiencyResult;
use crate::elicitation::{ElicitationRecord, PriorParamStats};
use crate::experiment::CvCondition;
use crate::sampler::PosteriorDraws;

/// Left-aligned columns separated by two spaces, with a rule under the header.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let _ = write!(s, "{c:<w$}");
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_line(cells: &[String]) -> String {
    let mut s = cells.iter().map(|c| csv_escape(c)).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn condition_cells(c: &CvCondition) -> [String; 3] {
    match c {
        CvCondition::MetaAnalytical => ["meta_analytical".into(), "-".into(), "-".into()],
        CvCondition::Llm {
            model_id,
            strategy,
            temperature,
        } => [model_id.clone(), strategy.to_string(), temperature.to_string()],
    }
}

/// Per-fold rows: `model,prompt_type,temperature,fold,alpha_rate,beta_rate,lpd_mean,lpd_sd`.
pub fn cv_folds_csv(results: &[CvResult]) -> String {
    let mut out = String::from("model,prompt_type,temperature,fold,alpha_rate,beta_rate,lpd_mean,lpd_sd\n");
    for r in results {
        let [m, p, t] = condition_cells(&r.condition);
        for f in &r.per_fold {
            out.push_str(&csv_line(&[
                m.clone(),
                p.clone(),
                t.clone(),
                f.fold.to_string(),
                f.spec.alpha_rate().to_string(),
                f.spec.beta_rate().to_string(),
                f.lpd_mean.to_string(),
                f.lpd_sd.to_string(),
            ]));
        }
    }
    out
}

pub fn cv_summary_csv(results: &[CvResult]) -> String {
    let mut out = String::from(
        "model,prompt_type,temperature,lpd_mean,lpd_sd_patients,lpd_sd_sites,lpd_sd_folds,n_folds,n_test_patients\n",
    );
    for r in results {
        let [m, p, t] = condition_cells(&r.condition);
        let n: usize = r.per_fold.iter().map(|f| f.n_test_patients).sum();
        out.push_str(&csv_line(&[
            m,
            p,
            t,
            r.pooled_mean.to_string(),
            r.pooled_sd.to_string(),
            r.site_sd.to_string(),
            r.fold_sd.to_string(),
            r.per_fold.len().to_string(),
            n.to_string(),
        ]));
    }
    out
}

/// Model / Prompt Type / Temperature / `LPD (± SD)` with SD across patients.
pub fn cv_table(results: &[CvResult]) -> String {
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.condition.model_name(),
                r.condition.prompt_name().to_string(),
                r.condition.temperature_name(),
                format!("{:.3} ± {:.3}", r.pooled_mean, r.pooled_sd),
            ]
        })
        .collect();
    aligned_table(&["Model", "Prompt Type", "Temperature", "LPD (± SD)"], &rows)
}

pub fn fold_composition_csv(folds: &FoldAssignment) -> String {
    let mut out = String::from("fold,small,medium,large,total\n");
    for (i, c) in folds.composition.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{}\n",
            c[StratumLabel::Small as usize],
            c[StratumLabel::Medium as usize],
            c[StratumLabel::Large as usize],
            c.iter().sum::<usize>()
        ));
    }
    out
}

/// Per-run rows: `condition,rho,replication,n_train_patients,lpd_mean` plus
/// the prior actually used.
pub fn efficiency_runs_csv(result: &EfficiencyResult) -> String {
    let mut out = String::from("condition,rho,replication,n_train_patients,lpd_mean,alpha_rate,beta_rate\n");
    for r in &result.runs {
        out.push_str(&csv_line(&[
            r.condition.clone(),
            r.rho.to_string(),
            r.replication.to_string(),
            r.n_train_patients.to_string(),
            r.lpd_mean.to_string(),
            r.spec.alpha_rate().to_string(),
            r.spec.beta_rate().to_string(),
        ]));
    }
    out
}

pub fn efficiency_summary_csv(result: &EfficiencyResult) -> String {
    let mut out = String::from(
        "condition,rho,n_runs,lpd_mean,lpd_sd,train_patients_mean,train_patients_min,train_patients_max\n",
    );
    for c in &result.cells {
        out.push_str(&csv_line(&[
            c.condition.label(),
            c.rho.to_string(),
            c.n_runs.to_string(),
            c.lpd_mean.to_string(),
            c.lpd_sd.to_string(),
            c.train_patients_mean.to_string(),
            c.train_patients_min.to_string(),
            c.train_patients_max.to_string(),
        ]));
    }
    out
}

/// Training Sample Size / LPD Mean / LPD Std. LLM rows are labelled by
/// percentage; the baseline row is labelled `Meta-analytical (p%)`.
pub fn efficiency_table(result: &EfficiencyResult) -> String {
    let rows: Vec<Vec<String>> = result
        .cells
        .iter()
        .map(|c| {
            let pct = format!("{:.0}%", c.rho * 100.0);
            let label = match &c.condition {
                CvCondition::MetaAnalytical => format!("Meta-analytical ({pct})"),
                CvCondition::Llm { .. } => pct,
            };
            vec![
                label,
                format!("{:.3}", c.lpd_mean),
                format!("{:.3}", c.lpd_sd),
                format!("{:.1}", c.train_patients_mean),
            ]
        })
        .collect();
    aligned_table(
        &["Training Sample Size", "LPD Mean", "LPD Std", "Train Patients"],
        &rows,
    )
}

pub fn rhat_csv(draws: &PosteriorDraws) -> String {
    let mut out = String::from("parameter,rhat,degenerate\n");
    for e in &draws.diagnostics.rhat {
        out.push_str(&csv_line(&[
            e.parameter.clone(),
            e.rhat.as_f64().to_string(),
            e.rhat.is_degenerate().to_string(),
        ]));
    }
    out
}

pub fn fit_report(draws: &PosteriorDraws) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "chains: {}  draws per chain: {}  sites: {}",
        draws.n_chains(),
        draws.n_draws(),
        draws.n_sites()
    );
    if !draws.hyper_frozen() {
        let mean = |m: &Vec<Vec<f64>>| crate::stats::mean(m.iter().flatten().copied());
        let _ = writeln!(out, "posterior mean alpha: {:.4}", mean(&draws.alpha));
        let _ = writeln!(out, "posterior mean beta:  {:.4}", mean(&draws.beta));
    }
    for (c, (a, b)) in draws.diagnostics.acceptance.iter().enumerate() {
        let _ = writeln!(out, "chain {c} acceptance: alpha {a:.3}, beta {b:.3}");
    }
    if let Some(max) = draws.diagnostics.max_rhat() {
        let _ = writeln!(out, "max R-hat: {max:.4} (threshold {})", draws.config.rhat_threshold);
    }
    let rows: Vec<Vec<String>> = draws
        .diagnostics
        .rhat
        .iter()
        .map(|e| vec![e.parameter.clone(), e.rhat.to_string()])
        .collect();
    out.push_str(&aligned_table(&["Parameter", "R-hat"], &rows));
    for w in &draws.diagnostics.warnings {
        let _ = writeln!(out, "WARNING: {w}");
    }
    out
}

pub fn prior_stats_csv(stats: &[PriorParamStats]) -> String {
    let mut out = String::from("model,prompt_type,temperature,parameter,n,mean,sd,min,q1,median,q3,max\n");
    for s in stats {
        for (name, b) in [("alpha_rate", &s.alpha_rate), ("beta_rate", &s.beta_rate)] {
            out.push_str(&csv_line(&[
                s.key.model_id.clone(),
                s.key.strategy.to_string(),
                s.key.temperature.to_string(),
                name.to_string(),
                b.n.to_string(),
                b.mean.to_string(),
                b.sd.to_string(),
                b.min.to_string(),
                b.q1.to_string(),
                b.median.to_string(),
                b.q3.to_string(),
                b.max.to_string(),
            ]));
        }
    }
    out
}

pub fn prior_points_csv(stats: &[PriorParamStats]) -> String {
    let mut out = String::from("model,prompt_type,temperature,alpha_rate,beta_rate\n");
    for s in stats {
        for (a, b) in &s.points {
            out.push_str(&csv_line(&[
                s.key.model_id.clone(),
                s.key.strategy.to_string(),
                s.key.temperature.to_string(),
                a.to_string(),
                b.to_string(),
            ]));
        }
    }
    out
}

/// One JSON object per line.
pub fn audit_jsonl(records: &[ElicitationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = aligned_table(&["A", "Long"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "A    Long\n---------\nxyz  1\n");
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_line(&["a,b".into(), "c".into()]), "\"a,b\",c\n");
    }
}
