//! Result files. CSV and JSON carry the same columns; JSON groups the
//! per-prosumer and per-bus columns into arrays.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fair_curtail::grid::{Network, Snapshot};
use fair_curtail::simulator::SimulationTrace;
use fair_curtail::solvers::SolveResult;
use fair_curtail::welfare::SchemeConfig;
use fair_curtail::{Error, Result};
use serde::Serialize;

use crate::Format;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_error(path))
}

fn write_csv(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_error(path))
}

fn numbers(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(f64::to_string)
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

#[derive(Serialize)]
struct SolveRecord<'a> {
    scheme: &'static str,
    config: &'a SchemeConfig,
    lambda: Option<f64>,
    welfare: f64,
    feasible: bool,
    x: &'a [f64],
    u: &'a [f64],
    v_bus: Vec<f64>,
}

fn voltages(r: &SolveResult, buses: usize) -> Vec<f64> {
    r.report
        .as_ref()
        .and_then(|rep| rep.pf.as_ref())
        .map(|pf| pf.magnitudes.clone())
        .unwrap_or_else(|| vec![f64::NAN; buses])
}

pub fn write_solve(path: &Path, format: Format, net: &Network, results: &[SolveResult]) -> Result<()> {
    let (n, b) = (net.prosumer_count(), net.bus_count());
    match format {
        Format::Json => {
            let records: Vec<SolveRecord> = results
                .iter()
                .map(|r| SolveRecord {
                    scheme: r.scheme.name(),
                    config: &r.scheme,
                    lambda: r.lambda,
                    welfare: r.welfare,
                    feasible: r.feasible,
                    x: &r.x,
                    u: &r.utilities,
                    v_bus: voltages(r, b),
                })
                .collect();
            write_json(path, &records)
        }
        Format::Csv => {
            let mut header: Vec<String> = ["scheme", "lambda", "welfare"].map(String::from).to_vec();
            header.extend(indexed("x_", n));
            header.extend(indexed("u_", n));
            header.extend(indexed("v_bus", b));
            let rows = results
                .iter()
                .map(|r| {
                    let mut row = vec![
                        r.scheme.name().to_string(),
                        r.lambda.map(|l| l.to_string()).unwrap_or_default(),
                        r.welfare.to_string(),
                    ];
                    row.extend(numbers(&r.x));
                    row.extend(numbers(&r.utilities));
                    row.extend(numbers(&voltages(r, b)));
                    row
                })
                .collect();
            write_csv(path, header, rows)
        }
    }
}

#[derive(Serialize)]
struct CompareRow {
    scheme: &'static str,
    prosumer: usize,
    x: Option<f64>,
    p_bar: f64,
    d: f64,
    export: Option<f64>,
    status: String,
}

pub fn write_compare(
    path: &Path,
    format: Format,
    snap: &Snapshot,
    configs: &[SchemeConfig],
    results: &[Result<SolveResult>],
) -> Result<()> {
    let mut rows = Vec::new();
    for (cfg, r) in configs.iter().zip(results) {
        for i in 0..snap.len() {
            let (p_bar, d) = (snap.potential()[i], snap.demand()[i]);
            let x = r.as_ref().ok().map(|r| r.x[i]);
            rows.push(CompareRow {
                scheme: cfg.name(),
                prosumer: i + 1,
                x,
                p_bar,
                d,
                export: x.map(|x| x - d),
                status: match r {
                    Ok(_) => "ok".into(),
                    Err(e) => format!("ERR:{}", e.kind()),
                },
            });
        }
    }
    match format {
        Format::Json => write_json(path, &rows),
        Format::Csv => {
            let header = ["scheme", "prosumer", "x", "p_bar", "d", "export", "status"].map(String::from).to_vec();
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let rows = rows
                .into_iter()
                .map(|r| {
                    vec![
                        r.scheme.to_string(),
                        r.prosumer.to_string(),
                        opt(r.x),
                        r.p_bar.to_string(),
                        r.d.to_string(),
                        opt(r.export),
                        r.status,
                    ]
                })
                .collect();
            write_csv(path, header, rows)
        }
    }
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    t: &'a str,
    scheme: &'static str,
    lambda: Option<f64>,
    welfare: Option<f64>,
    error: Option<&'static str>,
    x: Option<&'a [f64]>,
    u: Option<&'a [f64]>,
    v_bus: Option<&'a [f64]>,
    cum_curt: &'a [f64],
}

pub fn write_traces(path: &Path, format: Format, traces: &[SimulationTrace]) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = create(path)?;
            for (k, trace) in traces.iter().enumerate() {
                let mut buf = Vec::new();
                trace.write_csv(&mut buf)?;
                // one header for the whole file
                let body = if k == 0 {
                    &buf[..]
                } else {
                    let skip = buf.iter().position(|c| *c == b'\n').map_or(buf.len(), |p| p + 1);
                    &buf[skip..]
                };
                w.write_all(body).map_err(io_error(path))?;
            }
            w.flush().map_err(io_error(path))
        }
        Format::Json => {
            let records: Vec<TraceRecord> = traces
                .iter()
                .flat_map(|trace| {
                    trace.steps.iter().map(move |s| {
                        let r = s.result();
                        TraceRecord {
                            t: &s.label,
                            scheme: trace.scheme.name(),
                            lambda: r.and_then(|r| r.lambda),
                            welfare: r.map(|r| r.welfare),
                            error: s.outcome.as_ref().err().map(Error::kind),
                            x: r.map(|r| r.x.as_slice()),
                            u: r.map(|r| &r.utilities[..]),
                            v_bus: s.voltages(),
                            cum_curt: &s.cumulative_curtailment,
                        }
                    })
                })
                .collect();
            write_json(path, &records)
        }
    }
}
