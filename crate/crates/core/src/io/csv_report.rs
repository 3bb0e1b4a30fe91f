use crate::model::LayerwiseErrorReport;
use crate::planner::CandidateResult;

/// Scientific notation with 17 significant digits; parses back to the same
/// `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

/// `layer_index,relative_error`, one row per layer. Undefined errors are
/// left empty.
pub fn layerwise_csv(report: &LayerwiseErrorReport) -> String {
    let mut out = String::from("layer_index,relative_error\n");
    for e in &report.per_layer {
        out.push_str(&format!("{},{}\n", e.layer_index, opt(e.relative_error)));
    }
    out
}

/// Parses a `layer_index,relative_error` table.
pub fn parse_layerwise_csv(text: &str) -> Result<Vec<(usize, Option<f64>)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some("layer_index,relative_error") {
        return Err("missing header".into());
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (idx, err) = l.split_once(',').ok_or_else(|| format!("bad row {l:?}"))?;
            let idx = idx.parse().map_err(|_| format!("bad index in {l:?}"))?;
            let err = if err.is_empty() { None } else { Some(err.parse().map_err(|_| format!("bad error in {l:?}"))?) };
            Ok((idx, err))
        })
        .collect()
}

/// `k,layer_ratio,final_error`, ascending `k`. Failed candidates have an
/// empty error.
pub fn candidate_table_csv(table: &[CandidateResult]) -> String {
    let mut out = String::from("k,layer_ratio,final_error\n");
    for row in table {
        out.push_str(&format!("{},{},{}\n", row.k, format_real(row.layer_ratio.to_f64()), opt(row.final_error)));
    }
    out
}
