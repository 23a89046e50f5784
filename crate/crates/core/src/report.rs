//! Results file I/O, per-parameter summaries and speedup comparisons.
//!
//! Results are comma-separated with one header line:
//!
//! ```text
//! mode,parameter,repetition,seed,total_mutants,tested_mutants,score,test_time_s,cluster_time_s,killed_classes
//! ```
//!
//! `parameter` is empty for vanilla rows. Speedup and score error are
//! always computed against the mean vanilla time and score of the same
//! file (ratio of means).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::engine::{score_error, speedup, Mode, RunResult};
use crate::stats::{mann_whitney_u, MannWhitney};

pub const RESULTS_HEADER: [&str; 10] = [
    "mode",
    "parameter",
    "repetition",
    "seed",
    "total_mutants",
    "tested_mutants",
    "score",
    "test_time_s",
    "cluster_time_s",
    "killed_classes",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed rows at lines {}", .lines.iter().map(|(l, _)| l.to_string()).collect::<Vec<_>>().join(", "))]
    Malformed {
        path: PathBuf,
        /// 1-based line number and reason.
        lines: Vec<(usize, String)>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identifies a sweep cell; the parameter is kept in its textual form so
/// resumed files compare exactly.
pub type CellKey = (Mode, String, usize);

pub fn format_parameter(p: Option<f64>) -> String {
    p.map(|v| v.to_string()).unwrap_or_default()
}

pub fn cell_key(r: &RunResult) -> CellKey {
    (r.mode, format_parameter(r.parameter), r.repetition)
}

fn to_record(r: &RunResult) -> [String; 10] {
    [
        r.mode.to_string(),
        format_parameter(r.parameter),
        r.repetition.to_string(),
        r.seed.to_string(),
        r.total_mutants.to_string(),
        r.tested_mutants.to_string(),
        r.mutation_score.to_string(),
        r.test_time_s.to_string(),
        r.cluster_time_s.to_string(),
        r.killed_classes.to_string(),
    ]
}

fn parse_record(rec: &csv::StringRecord) -> Result<RunResult, String> {
    if rec.len() != RESULTS_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            RESULTS_HEADER.len(),
            rec.len()
        ));
    }
    fn num<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, String> {
        rec[i]
            .trim()
            .parse()
            .map_err(|_| format!("bad {} {:?}", RESULTS_HEADER[i], &rec[i]))
    }
    let mode: Mode = rec[0].trim().parse()?;
    let parameter = match rec[1].trim() {
        "" => None,
        _ => Some(num::<f64>(rec, 1)?),
    };
    if (mode == Mode::Vanilla) != parameter.is_none() {
        return Err("parameter must be empty exactly for vanilla rows".into());
    }
    let r = RunResult {
        mode,
        parameter,
        repetition: num(rec, 2)?,
        seed: num(rec, 3)?,
        total_mutants: num(rec, 4)?,
        tested_mutants: num(rec, 5)?,
        mutation_score: num(rec, 6)?,
        test_time_s: num(rec, 7)?,
        cluster_time_s: num(rec, 8)?,
        killed_classes: num(rec, 9)?,
    };
    if r.tested_mutants > r.total_mutants {
        return Err("tested_mutants exceeds total_mutants".into());
    }
    if !(0.0..=1.0).contains(&r.mutation_score) {
        return Err("score outside [0, 1]".into());
    }
    Ok(r)
}

/// Reads a results file, collecting every malformed line.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<RunResult>, ReportError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    match reader.headers() {
        Ok(h) if h.iter().map(str::trim).eq(RESULTS_HEADER) => {}
        Ok(_) => bad.push((1, "unexpected header".to_string())),
        Err(e) => bad.push((1, e.to_string())),
    }
    for rec in reader.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line() as usize);
                match parse_record(&rec) {
                    Ok(r) => rows.push(r),
                    Err(e) => bad.push((line, e)),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                bad.push((line, e.to_string()));
            }
        }
    }
    if bad.is_empty() {
        Ok(rows)
    } else {
        Err(ReportError::Malformed {
            path: path.to_path_buf(),
            lines: bad,
        })
    }
}

/// Append-only results writer. Every row is flushed as soon as it is
/// written so an interrupted sweep leaves only complete rows behind.
pub struct ResultsWriter {
    path: PathBuf,
    file: File,
}

impl ResultsWriter {
    /// Creates or truncates `path` and writes the header.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::create(&path).map_err(io_err(&path))?;
        writeln!(file, "{}", RESULTS_HEADER.join(",")).map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    /// Opens `path` for appending, writing the header if the file is new
    /// or empty. A trailing partial row is discarded.
    pub fn append(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref().to_path_buf();
        let fresh = std::fs::metadata(&path)
            .map(|m| m.len() == 0)
            .unwrap_or(true);
        if fresh {
            return Self::create(path);
        }
        // drop a partial trailing row left by an interrupted write
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        if bytes.last() != Some(&b'\n') {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            OpenOptions::new()
                .write(true)
                .open(&path)
                .and_then(|f| f.set_len(keep as u64))
                .map_err(io_err(&path))?;
            if keep == 0 {
                return Self::create(path);
            }
        }
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    pub fn write(&mut self, r: &RunResult) -> Result<(), ReportError> {
        let mut line = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut line);
            w.write_record(to_record(r)).map_err(|e| ReportError::Io {
                path: self.path.clone(),
                source: io::Error::other(e),
            })?;
            w.flush().map_err(io_err(&self.path))?;
        }
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

/// Aggregate of all repetitions of one `(mode, parameter)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: Mode,
    pub parameter: Option<f64>,
    pub runs: usize,
    pub mean_score: f64,
    pub mean_time_s: f64,
    /// Against the mean vanilla time; `None` for vanilla rows or when the
    /// file has no vanilla rows.
    pub speedup: Option<f64>,
    /// Against the mean vanilla score; `None` like `speedup`, or when the
    /// vanilla score is zero.
    pub score_error: Option<f64>,
    pub tested_mutants: f64,
    pub total_mutants: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn vanilla_means(rows: &[RunResult]) -> Option<(f64, f64)> {
    let v: Vec<&RunResult> = rows.iter().filter(|r| r.mode == Mode::Vanilla).collect();
    if v.is_empty() {
        return None;
    }
    Some((
        mean(v.iter().map(|r| r.test_time_s)),
        mean(v.iter().map(|r| r.mutation_score)),
    ))
}

/// Ordered parameter values present for `mode`.
pub fn parameters(rows: &[RunResult], mode: Mode) -> Vec<Option<f64>> {
    let mut ps: Vec<Option<f64>> = Vec::new();
    for r in rows.iter().filter(|r| r.mode == mode) {
        if !ps
            .iter()
            .any(|p| format_parameter(*p) == format_parameter(r.parameter))
        {
            ps.push(r.parameter);
        }
    }
    ps.sort_by(|a, b| {
        a.unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&b.unwrap_or(f64::NEG_INFINITY))
    });
    ps
}

fn cell(rows: &[RunResult], mode: Mode, p: Option<f64>) -> impl Iterator<Item = &RunResult> {
    let key = format_parameter(p);
    rows.iter()
        .filter(move |r| r.mode == mode && format_parameter(r.parameter) == key)
}

pub fn summarize(rows: &[RunResult]) -> Vec<SummaryRow> {
    let baseline = vanilla_means(rows);
    let mut out = Vec::new();
    for mode in [Mode::Vanilla, Mode::Neuron, Mode::Mutant] {
        for p in parameters(rows, mode) {
            let rs: Vec<&RunResult> = cell(rows, mode, p).collect();
            let mean_score = mean(rs.iter().map(|r| r.mutation_score));
            let mean_time_s = mean(rs.iter().map(|r| r.test_time_s));
            let (sp, err) = match (mode, baseline) {
                (Mode::Vanilla, _) | (_, None) => (None, None),
                (_, Some((t, s))) => (
                    speedup(t, mean_time_s).ok(),
                    score_error(s, mean_score).ok(),
                ),
            };
            out.push(SummaryRow {
                mode,
                parameter: p,
                runs: rs.len(),
                mean_score,
                mean_time_s,
                speedup: sp,
                score_error: err,
                tested_mutants: mean(rs.iter().map(|r| r.tested_mutants as f64)),
                total_mutants: mean(rs.iter().map(|r| r.total_mutants as f64)),
            });
        }
    }
    out
}

/// U-test between the per-repetition speedups of the `i`-th neuron-mode
/// parameter and the `i`-th mutant-mode parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub neuron_parameter: f64,
    pub mutant_parameter: f64,
    pub test: MannWhitney,
}

pub fn compare_speedups(rows: &[RunResult]) -> Vec<Comparison> {
    let Some((t_v, _)) = vanilla_means(rows) else {
        return Vec::new();
    };
    let speedups = |mode, p| -> Vec<f64> {
        cell(rows, mode, p)
            .filter_map(|r| speedup(t_v, r.test_time_s).ok())
            .collect()
    };
    parameters(rows, Mode::Neuron)
        .into_iter()
        .zip(parameters(rows, Mode::Mutant))
        .filter_map(|(pn, pm)| {
            let test =
                mann_whitney_u(&speedups(Mode::Neuron, pn), &speedups(Mode::Mutant, pm)).ok()?;
            Some(Comparison {
                neuron_parameter: pn?,
                mutant_parameter: pm?,
                test,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

/// Human-readable summary and comparison tables.
pub fn render(summary: &[SummaryRow], comparisons: &[Comparison]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>9} {:>5} {:>10} {:>12} {:>9} {:>11} {:>9} {:>9}",
        "mode", "param", "runs", "score", "time_s", "speedup", "score_err", "tested", "total"
    );
    for r in summary {
        let _ = writeln!(
            out,
            "{:<8} {:>9} {:>5} {:>10.6} {:>12.6} {:>9} {:>11} {:>9.1} {:>9.1}",
            r.mode.as_str(),
            format_parameter(r.parameter),
            r.runs,
            r.mean_score,
            r.mean_time_s,
            opt(r.speedup),
            opt(r.score_error),
            r.tested_mutants,
            r.total_mutants
        );
    }
    if !comparisons.is_empty() {
        let _ = writeln!(out, "\nspeedup comparison (Mann-Whitney U, two-sided)");
        let _ = writeln!(out, "{:>9} {:>9} {:>9} {:>10}", "s", "threshold", "U", "p");
        for c in comparisons {
            let _ = writeln!(
                out,
                "{:>9} {:>9} {:>9} {:>10.6}",
                c.neuron_parameter, c.mutant_parameter, c.test.u, c.test.p_value
            );
        }
    }
    out
}

/// Summary rows as CSV (plot-ready).
pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out = String::from("mode,parameter,runs,mean_score,mean_time_s,speedup,score_error,tested_mutants,total_mutants\n");
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.mode,
            format_parameter(r.parameter),
            r.runs,
            r.mean_score,
            r.mean_time_s,
            o(r.speedup),
            o(r.score_error),
            r.tested_mutants,
            r.total_mutants
        );
    }
    out
}

/// Keys already present in an existing results file.
pub fn existing_cells(rows: &[RunResult]) -> BTreeSet<CellKey> {
    rows.iter().map(cell_key).collect()
}
