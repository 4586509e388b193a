//! CSV formats for run artifacts. Every writer has a matching reader.
//!
//! | file | columns |
//! |---|---|
//! | trace | `time,doc_index,event,detail` |
//! | metrics | `config,repeat,seed,end_to_end_latency,bytes_uploaded_total,bytes_saved_total,docs_processed_at_edge` |
//! | summary | `config,min,q1,median,q3,max,mean` |
//! | spline knots | `index,ratio` |
//! | spline estimates | `index,estimate` |
//! | fig5 | `index,true_ratio,spline_estimate,processed` |
//! | fig6 | `doc_index,activity,start,end` |

use std::collections::BTreeMap;
use std::io::{Read, Write};

use edgeprio_core::trace::TraceEvent;
use edgeprio_core::{BoxSummary, EventKind, RatioSpline, SelectionKind, Workload};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: unknown event `{event}`")]
    UnknownEvent { line: u64, event: String },
    #[error("line {line}: {message}")]
    Invalid { line: u64, message: String },
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    time: f64,
    doc_index: u32,
    event: String,
    detail: f64,
}

pub fn write_trace<W: Write>(writer: W, events: &[TraceEvent]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for e in events {
        w.serialize(TraceRow {
            time: e.time,
            doc_index: e.index,
            event: e.kind.as_str().to_owned(),
            detail: e.detail,
        })?;
    }
    // Header even when empty.
    if events.is_empty() {
        w.write_record(["time", "doc_index", "event", "detail"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceEvent>, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = row?;
        let kind: EventKind = row.event.parse().map_err(|_| FormatError::UnknownEvent {
            line: i as u64 + 2,
            event: row.event.clone(),
        })?;
        out.push(TraceEvent::new(row.time, row.doc_index, kind, row.detail));
    }
    Ok(out)
}

/// One simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config: String,
    pub repeat: usize,
    pub seed: u64,
    pub end_to_end_latency: f64,
    pub bytes_uploaded_total: u64,
    pub bytes_saved_total: u64,
    pub docs_processed_at_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl SummaryRow {
    pub fn new(config: impl Into<String>, s: &BoxSummary) -> Self {
        SummaryRow {
            config: config.into(),
            min: s.min,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            max: s.max,
            mean: s.mean,
        }
    }
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows = rdr.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnotRow {
    pub index: u32,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub index: u32,
    pub estimate: f64,
}

pub fn spline_knots(spline: &RatioSpline) -> Vec<KnotRow> {
    spline
        .knots()
        .iter()
        .map(|&(index, ratio)| KnotRow { index, ratio })
        .collect()
}

/// Estimates at every index in `0..n`.
pub fn spline_estimates(spline: &RatioSpline, n: usize) -> Vec<EstimateRow> {
    (0..n as u32)
        .map(|index| EstimateRow {
            index,
            estimate: spline.estimate(index),
        })
        .collect()
}

/// Rebuilds a spline from its dumped knots.
pub fn spline_from_knots(knots: &[KnotRow]) -> Result<RatioSpline, FormatError> {
    let mut s = RatioSpline::new();
    for (i, k) in knots.iter().enumerate() {
        s.observe(k.index, k.ratio)
            .map_err(|e| FormatError::Invalid {
                line: i as u64 + 2,
                message: e.to_string(),
            })?;
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig5Row {
    pub index: u32,
    pub true_ratio: f64,
    pub spline_estimate: f64,
    pub processed: bool,
}

/// Ground truth against the final spline, with the set of documents that
/// were processed at the edge taken from the trace.
pub fn fig5(workload: &Workload, spline: &RatioSpline, trace: &[TraceEvent]) -> Vec<Fig5Row> {
    let mut processed = vec![false; workload.len()];
    for e in trace {
        if e.kind == EventKind::ProcEnd {
            if let Some(p) = processed.get_mut(e.index as usize) {
                *p = true;
            }
        }
    }
    workload
        .docs()
        .iter()
        .map(|d| Fig5Row {
            index: d.index,
            true_ratio: d.true_ratio(),
            spline_estimate: spline.estimate(d.index),
            processed: processed[d.index as usize],
        })
        .collect()
}

/// One bar of the activity timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig6Row {
    pub doc_index: u32,
    /// `proc_prio`, `proc_search`, `proc_plain`, `upload` or `upload_original`.
    pub activity: String,
    pub start: f64,
    pub end: f64,
}

/// Pairs start and end events into intervals, ordered by start time.
pub fn fig6(trace: &[TraceEvent]) -> Result<Vec<Fig6Row>, FormatError> {
    let mut proc_open: BTreeMap<u32, (f64, SelectionKind)> = BTreeMap::new();
    let mut upload_open: BTreeMap<u32, f64> = BTreeMap::new();
    let mut processed: BTreeMap<u32, bool> = BTreeMap::new();
    let mut rows = Vec::new();
    for (i, e) in trace.iter().enumerate() {
        let unmatched = || FormatError::Invalid {
            line: i as u64 + 2,
            message: format!("{} without a matching start", e.kind),
        };
        match e.kind {
            EventKind::ProcStart(kind) => {
                proc_open.insert(e.index, (e.time, kind));
            }
            EventKind::ProcEnd | EventKind::ProcFail => {
                let (start, kind) = proc_open.remove(&e.index).ok_or_else(unmatched)?;
                processed.insert(e.index, e.kind == EventKind::ProcEnd);
                rows.push(Fig6Row {
                    doc_index: e.index,
                    activity: format!("proc_{}", kind.as_str()),
                    start,
                    end: e.time,
                });
            }
            EventKind::UploadStart => {
                upload_open.insert(e.index, e.time);
            }
            EventKind::UploadEnd => {
                let start = upload_open.remove(&e.index).ok_or_else(unmatched)?;
                let activity = if processed.get(&e.index).copied().unwrap_or(false) {
                    "upload"
                } else {
                    "upload_original"
                };
                rows.push(Fig6Row {
                    doc_index: e.index,
                    activity: activity.to_owned(),
                    start,
                    end: e.time,
                });
            }
            EventKind::Arrive => {}
        }
    }
    rows.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.doc_index.cmp(&b.doc_index))
    });
    Ok(rows)
}

/// Gnuplot script for the two figure CSVs.
pub fn gnuplot_script(fig5_csv: &str, fig6_csv: &str) -> String {
    format!(
        r##"set datafile separator ","
set key autotitle columnhead

set terminal pngcairo size 1200,500
set output "fig5.png"
set xlabel "document index"
set ylabel "bytes saved per cpu second"
plot "{fig5_csv}" using 1:2 with points pt 7 ps 0.4 title "true ratio", \
     "" using 1:3 with lines lw 2 title "spline estimate", \
     "" using 1:($4 eq "true" ? $2 : 1/0) with points pt 6 title "processed"

set output "fig6.png"
set xlabel "time (s)"
set ylabel "document index"
set style arrow 1 nohead lw 3 lc rgb "#d62728"
set style arrow 2 nohead lw 3 lc rgb "#1f77b4"
set style arrow 3 nohead lw 3 lc rgb "#2ca02c"
set style arrow 4 nohead lw 3 lc rgb "#7f7f7f"
plot "{fig6_csv}" using 3:1:($4-$3):(0):(strcol(2) eq "proc_prio" ? 1 : strcol(2) eq "proc_search" ? 2 : strcol(2) eq "upload" ? 3 : 4) with vectors arrowstyle variable notitle
"##
    )
}
