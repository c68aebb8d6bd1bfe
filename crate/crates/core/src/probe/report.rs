use super::sweep::ProbeResult;
use crate::table::{fmt_f, Table};

/// One probe sweep with the labels needed for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub segment: String,
    pub representation: String,
    pub result: ProbeResult,
}

/// One row per (segment, representation, probe, layer).
pub fn layer_scores_table(runs: &[ProbeRun]) -> Table {
    let mut t = Table::new(&[
        "segment",
        "representation",
        "probe",
        "layer",
        "weighted_f1",
        "cv_f1",
        "lambda",
        "n_selected",
        "best",
    ]);
    for r in runs {
        for s in &r.result.per_layer {
            t.push(vec![
                r.segment.clone(),
                r.representation.clone(),
                r.result.kind.to_string(),
                s.layer.to_string(),
                fmt_f(s.f1, 2),
                fmt_f(s.cv_f1, 2),
                format!("{:.6e}", s.lambda),
                s.n_selected.to_string(),
                ((s.layer == r.result.best_layer) as u8).to_string(),
            ]);
        }
    }
    t
}

/// Best-layer summary, one row per (segment, representation, probe).
pub fn best_layer_table(runs: &[ProbeRun]) -> Table {
    let mut t = Table::new(&[
        "segment",
        "representation",
        "probe",
        "best_layer",
        "weighted_f1",
        "n_selected",
    ]);
    for r in runs {
        let s = &r.result.per_layer[r.result.best_layer];
        t.push(vec![
            r.segment.clone(),
            r.representation.clone(),
            r.result.kind.to_string(),
            s.layer.to_string(),
            fmt_f(s.f1, 2),
            s.n_selected.to_string(),
        ]);
    }
    t
}
