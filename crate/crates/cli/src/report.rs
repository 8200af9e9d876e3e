//! Markdown summary of an artifact directory.

use std::fmt::Write as _;
use std::path::Path;

use convdec::codes::CssCode;
use serde_json::Value;

use crate::commands::code_summary;
use crate::manifest::{file_hash, Manifest, MANIFEST};
use crate::pipeline::{
    CALIBRATION_FILE, CENSUS_FILE, CODE_FILE, COMPRESSION_FILE, EVAL_SUMMARY, HARDWARE_FILE, LAMBDA_FILE, METRICS_FILE,
    POST_SELECTION_FILE, WATERFALL_FILE,
};

pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub markdown: String,
    pub warnings: Vec<String>,
}

fn read_json(dir: &Path, rel: &str) -> Option<Value> {
    serde_json::from_str(&std::fs::read_to_string(dir.join(rel)).ok()?).ok()
}

fn num(v: &Value) -> String {
    match v {
        Value::Number(n) => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            if n.is_u64() || n.is_i64() {
                n.to_string()
            } else if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) {
                format!("{x:.4e}")
            } else {
                format!("{x:.6}")
            }
        }
        Value::Null => "–".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn table(out: &mut String, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

/// Builds the report. Artifacts listed in the manifest but missing or
/// modified on disk are reported and their sections skipped.
pub fn build_report(dir: &Path) -> Report {
    let mut report = Report::default();
    let mut md = String::from("# Run report\n\n");
    let Some(manifest) = Manifest::load(dir) else {
        let w = format!("no {MANIFEST} in {}; nothing to report", dir.display());
        let _ = writeln!(md, "> Warning: {w}.");
        report.warnings.push(w);
        report.markdown = md;
        return report;
    };
    let _ = writeln!(md, "Config hash `{}`, seed {}.\n", manifest.config_hash, manifest.seed);
    let mut missing = Vec::new();
    for o in &manifest.outputs {
        match file_hash(&dir.join(&o.path)) {
            None => missing.push(format!("{} (missing)", o.path)),
            Some(h) if h != o.sha256 => missing.push(format!("{} (modified)", o.path)),
            _ => {}
        }
    }
    let ok = |rel: &str| manifest.output(rel).is_some() && !missing.iter().any(|m| m.starts_with(&format!("{rel} ")));
    let ran = |stage: &str| manifest.stage(stage).is_some();

    if ran("code") && ok(CODE_FILE) {
        if let Ok(code) = CssCode::load(dir.join(CODE_FILE)) {
            let s = code_summary(&code);
            md.push_str("## Code\n\n");
            table(
                &mut md,
                &["name", "n", "k", "d", "X checks", "Z checks", "layout"],
                [vec![
                    s.name,
                    s.n.to_string(),
                    s.k.to_string(),
                    s.d.map_or("–".into(), |d| d.to_string()),
                    s.x_checks.to_string(),
                    s.z_checks.to_string(),
                    s.layout,
                ]],
            );
        }
    }
    if ran("train") && ok(METRICS_FILE) {
        training_section(&mut md, dir);
    }
    if ran("eval") && ok(EVAL_SUMMARY) {
        if let Some(Value::Array(rows)) = read_json(dir, EVAL_SUMMARY) {
            md.push_str("## Error-rate curves\n\n");
            table(
                &mut md,
                &["decoder", "basis", "p", "shots", "failures", "P_block", "P_L"],
                rows.iter().map(|r| {
                    ["decoder", "basis", "p", "shots", "failures", "block_error_rate", "p_l"]
                        .iter()
                        .map(|k| num(&r[*k]))
                        .collect()
                }),
            );
        }
    }
    if ran("analysis") {
        fits_section(&mut md, dir, &ok);
        if ok(CENSUS_FILE) {
            if let Some(c) = read_json(dir, CENSUS_FILE) {
                md.push_str("## Failure-mode census\n\n");
                let census = &c["census"];
                let _ = writeln!(
                    md,
                    "Decoder `{}`, basis {}, complete to weight {}{}. Predicted P_L at p = {}: {}.\n",
                    num(&census["decoder"]),
                    num(&census["basis"]),
                    num(&census["wmax"]),
                    if census["truncated"] == Value::Bool(true) { " (truncated by budget)" } else { "" },
                    num(&c["p"]),
                    num(&c["predicted"]),
                );
                if let Some(counts) = census["counts"].as_object() {
                    table(&mut md, &["w", "N(w)"], counts.iter().map(|(w, n)| vec![w.clone(), num(n)]));
                }
            }
        }
        if ok(CALIBRATION_FILE) {
            if let Some(c) = read_json(dir, CALIBRATION_FILE) {
                md.push_str("## Calibration\n\n");
                let _ = writeln!(md, "ECE {}.\n", num(&c["ece"]));
                if let Some(bins) = c["bins"].as_array() {
                    table(
                        &mut md,
                        &["bin", "mean prediction", "frequency", "count"],
                        bins.iter().map(|b| {
                            vec![
                                format!("[{}, {})", num(&b["low"]), num(&b["high"])),
                                num(&b["mean_prediction"]),
                                num(&b["frequency"]),
                                num(&b["count"]),
                            ]
                        }),
                    );
                }
                if ok(POST_SELECTION_FILE) {
                    if let Ok(csv) = std::fs::read_to_string(dir.join(POST_SELECTION_FILE)) {
                        md.push_str("### Post-selection\n\n");
                        let mut lines = csv.lines();
                        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
                        table(&mut md, &header, lines.map(|l| l.split(',').map(String::from).collect()));
                    }
                }
            }
        }
    }
    if ran("hardware") && ok(HARDWARE_FILE) {
        hardware_section(&mut md, dir, ok(COMPRESSION_FILE));
    }
    if !missing.is_empty() {
        md.push_str("## Missing artifacts\n\n");
        for m in &missing {
            let _ = writeln!(md, "- {m}");
            report.warnings.push(format!("artifact {m}"));
        }
        md.push('\n');
    }
    report.markdown = md;
    report
}

fn training_section(md: &mut String, dir: &Path) {
    let Ok(text) = std::fs::read_to_string(dir.join(METRICS_FILE)) else {
        return;
    };
    let rows: Vec<Value> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    if rows.is_empty() {
        return;
    }
    let window = rows.len().min(100);
    let mean = |r: &[Value]| r.iter().filter_map(|v| v["loss"].as_f64()).sum::<f64>() / r.len() as f64;
    md.push_str("## Training\n\n");
    table(
        md,
        &["steps", "first-window loss", "last-window loss", "final lr", "final p"],
        [vec![
            rows.len().to_string(),
            format!("{:.5}", mean(&rows[..window])),
            format!("{:.5}", mean(&rows[rows.len() - window..])),
            num(&rows[rows.len() - 1]["lr"]),
            num(&rows[rows.len() - 1]["p"]),
        ]],
    );
}

fn fit_row(label: &str, fit: &Value) -> Vec<String> {
    let pair = |v: &Value| match v.as_array() {
        Some(a) if a.len() == 2 => format!("{}, {}", num(&a[0]), num(&a[1])),
        _ => "–".into(),
    };
    vec![
        label.to_string(),
        num(&fit["kind"]),
        num(&fit["lambda"]),
        pair(&fit["exponents"]),
        num(&fit["m"]),
        num(&fit["p_th"]),
        num(&fit["residual_norm"]),
        num(&fit["degenerate"]),
    ]
}

fn fits_section(md: &mut String, dir: &Path, ok: &dyn Fn(&str) -> bool) {
    let mut rows = Vec::new();
    if ok(LAMBDA_FILE) {
        if let Some(l) = read_json(dir, LAMBDA_FILE) {
            rows.push(fit_row("Λ across distances", &l["fit"]));
        }
    }
    if ok(WATERFALL_FILE) {
        if let Some(Value::Array(fits)) = read_json(dir, WATERFALL_FILE) {
            for f in &fits {
                let curve = num(&f["curve"]);
                for key in ["two_power", "single_power"] {
                    if !f["fit"][key].is_null() {
                        rows.push(fit_row(&curve, &f["fit"][key]));
                    }
                }
            }
        }
    }
    if rows.is_empty() {
        return;
    }
    md.push_str("## Fits\n\n");
    table(
        md,
        &["data", "kind", "Λ", "exponents", "m", "p_th", "residual", "degenerate"],
        rows,
    );
}

fn hardware_section(md: &mut String, dir: &Path, compression: bool) {
    let Some(h) = read_json(dir, HARDWARE_FILE) else {
        return;
    };
    md.push_str("## Hardware\n\n");
    if let Some(rows) = h["macs"].as_array().filter(|r| !r.is_empty()) {
        md.push_str("### MACs per block\n\n");
        table(
            md,
            &["variant", "n", "H", "b", "K", "pointwise", "spatial", "attention proj.", "per block", "spatial share", "vs conv"],
            rows.iter().map(|r| {
                let s = &r["spec"];
                let m = &r["macs"];
                vec![
                    num(&s["variant"]),
                    num(&s["n"]),
                    num(&s["hidden"]),
                    num(&s["bottleneck"]),
                    num(&s["kernel"]),
                    num(&m["pointwise"]),
                    num(&m["spatial"]),
                    num(&m["attn_proj"]),
                    num(&m["per_block"]),
                    format!("{:.1}%", 100.0 * r["spatial_fraction"].as_f64().unwrap_or(f64::NAN)),
                    format!("{:.4}", r["relative_to_conv"].as_f64().unwrap_or(f64::NAN)),
                ]
            }),
        );
    }
    if let Some(rows) = h["buffers"].as_array().filter(|r| !r.is_empty()) {
        md.push_str("### On-chip buffers\n\n");
        table(
            md,
            &["variant", "n", "H", "L", "bytes/value", "residual/block (B)", "residual total (B)", "weights total (B)"],
            rows.iter().map(|r| {
                let s = &r["spec"];
                let b = &r["report"];
                vec![
                    num(&s["variant"]),
                    num(&s["n"]),
                    num(&s["hidden"]),
                    num(&s["layers"]),
                    num(&r["bytes_per_value"]),
                    num(&b["residual_per_block"]),
                    num(&b["residual_total"]),
                    num(&b["weights_total"]),
                ]
            }),
        );
    }
    if let Some(rows) = h["roofline"].as_array().filter(|r| !r.is_empty()) {
        md.push_str("### Roofline latency\n\n");
        table(
            md,
            &["device", "TOPS", "code", "convention", "n", "K", "L", "MACs", "latency (μs)", "slowdown"],
            rows.iter().map(|r| {
                vec![
                    num(&r["device"]),
                    format!("{}", r["throughput"].as_f64().unwrap_or(f64::NAN) / 1e12),
                    num(&r["code"]),
                    num(&r["convention"]),
                    num(&r["n"]),
                    num(&r["kernel"]),
                    num(&r["layers"]),
                    num(&r["macs_per_network"]),
                    format!("{:.3}", r["latency_us"].as_f64().unwrap_or(f64::NAN)),
                    format!("{:.4}", r["slowdown"].as_f64().unwrap_or(f64::NAN)),
                ]
            }),
        );
    }
    if compression {
        if let Some(c) = read_json(dir, COMPRESSION_FILE) {
            md.push_str("### Folding and FP8\n\n");
            let _ = writeln!(
                md,
                "Folded {} batch norms; folded-vs-unfolded logit deviation {}. {} tensors quantized.\n",
                c["fold"]["folded"].as_array().map_or(0, Vec::len),
                num(&c["fold_deviation"]),
                num(&c["quantized_tensors"]),
            );
            if let Some(rows) = c["comparisons"].as_array() {
                table(
                    md,
                    &["basis", "p", "shots", "32-bit rate", "FP8 rate", "σ", "within 2σ"],
                    rows.iter().map(|r| {
                        ["basis", "p", "shots", "rate_f32", "rate_fp8", "sigma", "within_two_sigma"]
                            .iter()
                            .map(|k| num(&r[*k]))
                            .collect()
                    }),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_warns() {
        let dir = tempfile::tempdir().unwrap();
        let r = build_report(dir.path());
        assert_eq!(r.warnings.len(), 1);
        assert!(r.markdown.contains("Warning"));
        assert!(!r.markdown.contains("## "));
    }
}
