use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::spec::{BenchRecord, Mask, Mode, Status};
use vir_core::DType;

pub const CSV_HEADER: &str =
    "mode,mask,resolution,patch,N,dim,heads,chunk,dtype,median_seconds,tokens_per_sec,peak_live_f64,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Serialize, Deserialize)]
struct Row {
    mode: Mode,
    mask: Mask,
    resolution: Option<usize>,
    patch: usize,
    #[serde(rename = "N")]
    n: usize,
    dim: usize,
    heads: usize,
    chunk: Option<usize>,
    dtype: DType,
    #[serde(serialize_with = "exact_float", deserialize_with = "parse_float")]
    median_seconds: f64,
    #[serde(serialize_with = "exact_float", deserialize_with = "parse_float")]
    tokens_per_sec: f64,
    peak_live_f64: usize,
    status: Status,
}

fn exact_float<S: serde::Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn parse_float<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let text = String::deserialize(d)?;
    text.trim().parse().map_err(serde::de::Error::custom)
}

impl From<&BenchRecord> for Row {
    fn from(r: &BenchRecord) -> Self {
        Row {
            mode: r.mode,
            mask: r.mask,
            resolution: r.resolution,
            patch: r.patch,
            n: r.n,
            dim: r.dim,
            heads: r.heads,
            chunk: r.chunk,
            dtype: r.dtype,
            median_seconds: r.median_seconds,
            tokens_per_sec: r.tokens_per_sec,
            peak_live_f64: r.peak_live_f64,
            status: r.status,
        }
    }
}

impl From<Row> for BenchRecord {
    fn from(r: Row) -> Self {
        BenchRecord {
            mode: r.mode,
            mask: r.mask,
            resolution: r.resolution,
            patch: r.patch,
            n: r.n,
            dim: r.dim,
            heads: r.heads,
            chunk: r.chunk,
            dtype: r.dtype,
            median_seconds: r.median_seconds,
            tokens_per_sec: r.tokens_per_sec,
            peak_live_f64: r.peak_live_f64,
            status: r.status,
            timings: Vec::new(),
        }
    }
}

/// CSV text; the header is always present, even with no records.
pub fn to_csv(records: &[BenchRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.serialize(Row::from(r))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn from_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<Row>().map(|row| Ok(row?.into())).collect()
}

pub fn to_json(records: &[BenchRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(records)?)
}

pub fn from_json(text: &str) -> Result<Vec<BenchRecord>> {
    Ok(serde_json::from_str(text)?)
}

pub fn render(records: &[BenchRecord], format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(records),
        Format::Json => to_json(records),
    }
}

pub fn emit(records: &[BenchRecord], format: Format, path: &Path) -> Result<()> {
    std::fs::write(path, render(records, format)?).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path, format: Format) -> Result<Vec<BenchRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match format {
        Format::Csv => from_csv(&text),
        Format::Json => from_json(&text),
    }
}
