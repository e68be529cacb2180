//! Results CSV and summary-table rendering. All output is byte-deterministic
//! for a given set of records, independent of job parallelism.

use dsgnn_core::training::{SweepOutcome, SweepRunRecord, VariantSummary};
use dsgnn_core::Variant;

pub const RESULTS_HEADER: &str =
    "run_id,variant,pairnorm,depth,seed,fold,repeat,lr,weight_decay,dropout,split,metric,value,epochs_trained,diverged";

fn variant_label(variant: Variant, pairnorm: bool) -> String {
    if pairnorm {
        format!("{}-pn", variant.as_str())
    } else {
        variant.as_str().to_string()
    }
}

/// Renders the per-run CSV: one row per (run, split).
pub fn results_csv(records: &[SweepRunRecord]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        let fold = r.fold.map_or_else(|| "-".to_string(), |f| f.to_string());
        for (split, value) in [
            ("train", r.train_value),
            ("val", r.val_value),
            ("test", r.test_value),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.run_id,
                r.variant.as_str(),
                if r.pairnorm { "on" } else { "off" },
                r.depth,
                r.seed,
                fold,
                r.repeat,
                r.grid.lr,
                r.grid.weight_decay,
                r.grid.dropout,
                split,
                r.metric.as_str(),
                value,
                r.epochs_trained,
                r.diverged,
            ));
        }
    }
    out
}

pub const SUMMARY_HEADER: &str =
    "variant,pairnorm,metric,best_depth,test_mean,test_sd,val_mean,selected_runs,total_runs,diverged_runs";

pub fn summary_csv(summaries: &[VariantSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.variant.as_str(),
            if s.pairnorm { "on" } else { "off" },
            s.metric.as_str(),
            s.best_depth,
            s.test_mean,
            s.test_sd,
            s.val_mean,
            s.selected_runs,
            s.total_runs,
            s.diverged_runs,
        ));
    }
    out
}

/// Aligned plain-text table with the `mean (sd) [depth]` convention.
pub fn summary_table(summaries: &[VariantSummary]) -> String {
    let mut rows: Vec<(String, String, String)> = vec![(
        "model".to_string(),
        "metric".to_string(),
        "result".to_string(),
    )];
    for s in summaries {
        rows.push((
            variant_label(s.variant, s.pairnorm),
            s.metric.as_str().to_string(),
            format!("{:.4} ({:.4}) [{}]", s.test_mean, s.test_sd, s.best_depth),
        ));
    }
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (a, b, c) in rows {
        out.push_str(&format!("{a:<w0$}  {b:<w1$}  {c}\n"));
    }
    out
}

/// Divergence note appended to sweep output when runs were excluded.
pub fn divergence_note(outcome: &SweepOutcome) -> Option<String> {
    let diverged: usize = outcome.summaries.iter().map(|s| s.diverged_runs).sum();
    (diverged > 0).then(|| format!("excluded {diverged} diverged run(s) from aggregation\n"))
}

/// Diagnostics CSV: `layer,row_diff,col_diff`.
pub fn diagnostics_csv(diagnostics: &[dsgnn_core::training::LayerDiagnostics]) -> String {
    let mut out = String::from("layer,row_diff,col_diff\n");
    for d in diagnostics {
        out.push_str(&format!("{},{},{}\n", d.layer, d.row_diff, d.col_diff));
    }
    out
}
