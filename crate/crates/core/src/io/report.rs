//! Metrics and trace documents in text (`key = value`) and JSON form.
//!
//! Numbers are printed with shortest round-trip formatting, so parsing a
//! written document reproduces the original values bit for bit in either
//! format. The text parser is strict: every key is fixed, sections must be
//! complete, and unknown keys fail rather than being dropped.

use crate::energy::{EnergyBreakdown, EnergyWeights};
use crate::error::{Error, Result};
use crate::metrics::{
    FieldMetrics, LiverMetrics, MetricsReport, TruthMetrics, VesselMetrics,
};
use crate::optimizer::TraceEntry;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

/// Output encoding of [`write_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    /// Flat `key = value` lines.
    Text,
    /// Pretty-printed JSON.
    Structured,
}

/// Everything one registration run reports: final metrics plus the accepted
/// energy trace. Either part may be empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub metrics: MetricsReport,
    pub trace: Vec<TraceEntry>,
}

fn emit(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key} = {value}");
}

fn emit_energy(out: &mut String, prefix: &str, e: &EnergyBreakdown) {
    emit(out, &format!("{prefix}.sim"), e.sim);
    emit(out, &format!("{prefix}.seg_liver"), e.seg_liver);
    emit(out, &format!("{prefix}.seg_vessel"), e.seg_vessel);
    emit(out, &format!("{prefix}.reg_forward"), e.reg_forward);
    emit(out, &format!("{prefix}.reg_backward"), e.reg_backward);
    emit(out, &format!("{prefix}.surface_forward"), e.surface_forward);
    emit(out, &format!("{prefix}.surface_backward"), e.surface_backward);
    emit(
        out,
        &format!("{prefix}.centerline_forward"),
        e.centerline_forward,
    );
    emit(
        out,
        &format!("{prefix}.centerline_backward"),
        e.centerline_backward,
    );
    emit(
        out,
        &format!("{prefix}.inverse_consistency"),
        e.inverse_consistency,
    );
    emit(out, &format!("{prefix}.weights.liver"), e.weights.liver);
    emit(out, &format!("{prefix}.weights.vessel"), e.weights.vessel);
    emit(
        out,
        &format!("{prefix}.weights.smoothness"),
        e.weights.smoothness,
    );
    emit(out, &format!("{prefix}.weights.surface"), e.weights.surface);
    emit(
        out,
        &format!("{prefix}.weights.centerline"),
        e.weights.centerline,
    );
    emit(
        out,
        &format!("{prefix}.weights.inverse_consistency"),
        e.weights.inverse_consistency,
    );
    emit(out, &format!("{prefix}.total"), e.total);
}

fn render_text(doc: &ReportDocument) -> String {
    let mut out = String::new();
    if let Some(l) = &doc.metrics.liver {
        emit(&mut out, "liver.dsc", l.dsc);
        emit(&mut out, "liver.ravd", l.ravd);
        emit(&mut out, "liver.assd", l.assd);
        emit(&mut out, "liver.mssd", l.mssd);
    }
    if let Some(v) = &doc.metrics.vessel {
        emit(&mut out, "vessel.dsc", v.dsc);
        emit(&mut out, "vessel.connected_regions", v.connected_regions);
    }
    if let Some(f) = &doc.metrics.field {
        emit(&mut out, "field.rfp", f.rfp);
    }
    if let Some(t) = &doc.metrics.truth {
        emit(&mut out, "truth.mean_epe", t.mean_epe);
        emit(&mut out, "truth.median_epe", t.median_epe);
        emit(&mut out, "truth.max_epe", t.max_epe);
    }
    emit(&mut out, "trace.count", doc.trace.len());
    for (i, entry) in doc.trace.iter().enumerate() {
        emit(&mut out, &format!("trace.{i}.level"), entry.level);
        emit(&mut out, &format!("trace.{i}.iteration"), entry.iteration);
        emit_energy(&mut out, &format!("trace.{i}.energy"), &entry.energy);
    }
    out
}

struct KeyMap {
    entries: BTreeMap<String, String>,
}

impl KeyMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ReportParse(format!(
                    "line {}: no `=` in {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::ReportParse(format!("duplicate key {key}")));
            }
        }
        Ok(KeyMap { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self
            .entries
            .remove(key)
            .ok_or_else(|| Error::ReportParse(format!("missing key {key}")))?;
        raw.parse()
            .map_err(|_| Error::ReportParse(format!("bad value {raw:?} for {key}")))
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.entries
            .range(prefix.to_string()..)
            .next()
            .is_some_and(|(k, _)| k.starts_with(prefix))
    }
}

fn parse_energy(map: &mut KeyMap, prefix: &str) -> Result<EnergyBreakdown> {
    Ok(EnergyBreakdown {
        sim: map.take(&format!("{prefix}.sim"))?,
        seg_liver: map.take(&format!("{prefix}.seg_liver"))?,
        seg_vessel: map.take(&format!("{prefix}.seg_vessel"))?,
        reg_forward: map.take(&format!("{prefix}.reg_forward"))?,
        reg_backward: map.take(&format!("{prefix}.reg_backward"))?,
        surface_forward: map.take(&format!("{prefix}.surface_forward"))?,
        surface_backward: map.take(&format!("{prefix}.surface_backward"))?,
        centerline_forward: map.take(&format!("{prefix}.centerline_forward"))?,
        centerline_backward: map.take(&format!("{prefix}.centerline_backward"))?,
        inverse_consistency: map.take(&format!("{prefix}.inverse_consistency"))?,
        weights: EnergyWeights {
            liver: map.take(&format!("{prefix}.weights.liver"))?,
            vessel: map.take(&format!("{prefix}.weights.vessel"))?,
            smoothness: map.take(&format!("{prefix}.weights.smoothness"))?,
            surface: map.take(&format!("{prefix}.weights.surface"))?,
            centerline: map.take(&format!("{prefix}.weights.centerline"))?,
            inverse_consistency: map.take(&format!("{prefix}.weights.inverse_consistency"))?,
        },
        total: map.take(&format!("{prefix}.total"))?,
    })
}

fn parse_text(text: &str) -> Result<ReportDocument> {
    let mut map = KeyMap::parse(text)?;
    let mut doc = ReportDocument::default();
    if map.has_prefix("liver.") {
        doc.metrics.liver = Some(LiverMetrics {
            dsc: map.take("liver.dsc")?,
            ravd: map.take("liver.ravd")?,
            assd: map.take("liver.assd")?,
            mssd: map.take("liver.mssd")?,
        });
    }
    if map.has_prefix("vessel.") {
        doc.metrics.vessel = Some(VesselMetrics {
            dsc: map.take("vessel.dsc")?,
            connected_regions: map.take("vessel.connected_regions")?,
        });
    }
    if map.has_prefix("field.") {
        doc.metrics.field = Some(FieldMetrics {
            rfp: map.take("field.rfp")?,
        });
    }
    if map.has_prefix("truth.") {
        doc.metrics.truth = Some(TruthMetrics {
            mean_epe: map.take("truth.mean_epe")?,
            median_epe: map.take("truth.median_epe")?,
            max_epe: map.take("truth.max_epe")?,
        });
    }
    let count: usize = map.take("trace.count")?;
    for i in 0..count {
        doc.trace.push(TraceEntry {
            level: map.take(&format!("trace.{i}.level"))?,
            iteration: map.take(&format!("trace.{i}.iteration"))?,
            energy: parse_energy(&mut map, &format!("trace.{i}.energy"))?,
        });
    }
    if let Some((key, _)) = map.entries.iter().next() {
        return Err(Error::ReportParse(format!("unknown key {key}")));
    }
    Ok(doc)
}

/// Parses either format; JSON is recognized by its leading brace.
pub fn parse_report(text: &str) -> Result<ReportDocument> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| Error::ReportParse(e.to_string()))
    } else {
        parse_text(text)
    }
}

/// Writes the document to `path` in the requested format.
pub fn write_report(
    doc: &ReportDocument,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let rendered = match format {
        ReportFormat::Text => render_text(doc),
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(doc)
                .map_err(|e| Error::ReportParse(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    fs::write(path, rendered)?;
    Ok(())
}

/// Loads a report written by [`write_report`] in either format.
pub fn read_report(path: impl AsRef<Path>) -> Result<ReportDocument> {
    parse_report(&fs::read_to_string(path)?)
}
