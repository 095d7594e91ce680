use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dream::{activation_maximize, DreamOptions, DreamResult};
use super::view::{filter_count, filter_view, FilterView};
use super::IntrospectError;
use crate::nn::{ModelSpec, ModelState};

pub const INDEX_NAME: &str = "views.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportOptions {
    pub layer: usize,
    /// `None` exports every filter of the layer.
    pub filters: Option<Vec<usize>>,
    /// `None` skips activation maximization.
    pub dream: Option<DreamOptions>,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            layer: 0,
            filters: None,
            dream: Some(DreamOptions::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub filter: usize,
    pub taps_file: String,
    pub spectrum_file: String,
    pub dream_file: Option<String>,
    pub trace_file: Option<String>,
    pub degenerate: Option<bool>,
    pub initial_activation: Option<f64>,
    pub final_activation: Option<f64>,
}

/// Contents of the index JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewIndex {
    pub layer: usize,
    pub entries: Vec<ViewEntry>,
    /// Every file written, index excluded, in write order.
    pub files: Vec<String>,
}

fn csv_err(e: csv::Error) -> IntrospectError {
    IntrospectError::Export(e.to_string())
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), IntrospectError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_view(dir: &Path, v: &FilterView, stem: &str) -> Result<(String, String), IntrospectError> {
    let taps = format!("{stem}_taps.csv");
    write_rows(
        &dir.join(&taps),
        &["n", "tap_i", "tap_q"],
        v.taps
            .iter()
            .enumerate()
            .map(|(n, h)| [n.to_string(), h.re.to_string(), h.im.to_string()]),
    )?;
    let spectrum = format!("{stem}_spectrum.csv");
    write_rows(
        &dir.join(&spectrum),
        &["bin", "magnitude"],
        v.spectrum.iter().enumerate().map(|(k, m)| [k.to_string(), m.to_string()]),
    )?;
    Ok((taps, spectrum))
}

fn write_dream(dir: &Path, d: &DreamResult, stem: &str) -> Result<(String, String), IntrospectError> {
    let frame = format!("{stem}_dream.csv");
    write_rows(
        &dir.join(&frame),
        &["n", "i", "q"],
        d.frame
            .i()
            .iter()
            .zip(d.frame.q())
            .enumerate()
            .map(|(n, (i, q))| [n.to_string(), i.to_string(), q.to_string()]),
    )?;
    let trace = format!("{stem}_trace.csv");
    write_rows(
        &dir.join(&trace),
        &["step", "activation"],
        d.trace.iter().enumerate().map(|(s, a)| [s.to_string(), a.to_string()]),
    )?;
    Ok((frame, trace))
}

/// Writes tap and spectrum CSVs for each selected filter, optional dream
/// frame and trace CSVs, and an index JSON listing them.
///
/// Dead filters are recorded in the index, not treated as errors.
pub fn export_views(
    spec: &ModelSpec,
    state: &ModelState<f32>,
    out_dir: &Path,
    opts: &ExportOptions,
) -> Result<ViewIndex, IntrospectError> {
    let count = filter_count(spec, state, opts.layer)?;
    let filters = opts.filters.clone().unwrap_or_else(|| (0..count).collect());
    fs::create_dir_all(out_dir)?;
    let mut index = ViewIndex {
        layer: opts.layer,
        entries: Vec::with_capacity(filters.len()),
        files: Vec::new(),
    };
    for f in filters {
        let view = filter_view(spec, state, opts.layer, f)?;
        let stem = format!("layer{}_filter{:03}", opts.layer, f);
        let (taps_file, spectrum_file) = write_view(out_dir, &view, &stem)?;
        index.files.extend([taps_file.clone(), spectrum_file.clone()]);
        let mut entry = ViewEntry {
            filter: f,
            taps_file,
            spectrum_file,
            dream_file: None,
            trace_file: None,
            degenerate: None,
            initial_activation: None,
            final_activation: None,
        };
        if let Some(d_opts) = &opts.dream {
            let d = activation_maximize(spec, state, opts.layer, f, d_opts)?;
            let (frame, trace) = write_dream(out_dir, &d, &stem)?;
            index.files.extend([frame.clone(), trace.clone()]);
            entry.dream_file = Some(frame);
            entry.trace_file = Some(trace);
            entry.degenerate = Some(d.degenerate);
            entry.initial_activation = Some(d.initial());
            entry.final_activation = Some(d.last());
        }
        index.entries.push(entry);
    }
    let json = serde_json::to_string_pretty(&index).map_err(|e| IntrospectError::Export(e.to_string()))?;
    let mut f = File::create(out_dir.join(INDEX_NAME))?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(index)
}
