//! 24-hour replay with independent curtailment decisions per timestep.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{read_profile_csv, write_profile_csv, Network, Snapshot};
use crate::solvers::{solve, SolveOptions, SolveResult};
use crate::welfare::SchemeConfig;

pub const DEFAULT_RESOLUTION_MINUTES: u32 = 15;

/// Shape of the synthetic duck curve. Times are hours of the day; demand
/// and PV shapes are multiplied by each prosumer's nominal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DuckCurveParams {
    pub resolution_minutes: u32,
    pub sunrise: f64,
    pub sunset: f64,
    pub demand_base: f64,
    pub morning_peak: f64,
    pub morning_amplitude: f64,
    pub morning_width: f64,
    pub evening_peak: f64,
    pub evening_amplitude: f64,
    pub evening_width: f64,
    /// Relative noise amplitude, e.g. 0.05 for ±5 %.
    pub noise: f64,
}

impl Default for DuckCurveParams {
    fn default() -> Self {
        DuckCurveParams {
            resolution_minutes: DEFAULT_RESOLUTION_MINUTES,
            sunrise: 6.0,
            sunset: 18.0,
            demand_base: 0.3,
            morning_peak: 7.5,
            morning_amplitude: 0.5,
            morning_width: 1.5,
            evening_peak: 19.5,
            evening_amplitude: 0.7,
            evening_width: 2.0,
            noise: 0.05,
        }
    }
}

impl DuckCurveParams {
    pub fn validate(&self) -> Result<()> {
        if self.resolution_minutes == 0 || 1440 % self.resolution_minutes != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution of {} minutes does not divide a day",
                self.resolution_minutes
            )));
        }
        if self.sunrise.partial_cmp(&self.sunset) != Some(std::cmp::Ordering::Less) {
            return Err(Error::InvalidArgument("sunrise must precede sunset".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!("noise {} outside [0, 1)", self.noise)));
        }
        Ok(())
    }

    /// Clipped cosine, one at solar noon and zero outside daylight.
    pub fn solar_shape(&self, hour: f64) -> f64 {
        let noon = 0.5 * (self.sunrise + self.sunset);
        let half = 0.5 * (self.sunset - self.sunrise);
        if hour <= self.sunrise || hour >= self.sunset {
            return 0.0;
        }
        (std::f64::consts::FRAC_PI_2 * (hour - noon) / half).cos().max(0.0)
    }

    pub fn demand_shape(&self, hour: f64) -> f64 {
        let bump = |center: f64, width: f64| (-0.5 * ((hour - center) / width).powi(2)).exp();
        self.demand_base
            + self.morning_amplitude * bump(self.morning_peak, self.morning_width)
            + self.evening_amplitude * bump(self.evening_peak, self.evening_width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    snapshots: Vec<Snapshot>,
    resolution_minutes: u32,
}

impl Scenario {
    /// Labels default to `HH:MM` from the resolution when a snapshot has none.
    pub fn new(snapshots: Vec<Snapshot>, resolution_minutes: u32) -> Result<Self> {
        if resolution_minutes == 0 {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        if let Some(first) = snapshots.first() {
            for s in &snapshots {
                check_len("snapshot", s.len(), first.len())?;
            }
        }
        let snapshots = snapshots
            .into_iter()
            .enumerate()
            .map(|(k, s)| match s.timestamp() {
                Some(_) => s,
                None => s.with_timestamp(clock_label(k, resolution_minutes)),
            })
            .collect();
        Ok(Scenario {
            snapshots,
            resolution_minutes,
        })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn resolution_minutes(&self) -> u32 {
        self.resolution_minutes
    }

    pub fn labels(&self) -> Vec<&str> {
        self.snapshots.iter().map(|s| s.timestamp().unwrap_or("")).collect()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn read_csv<R: Read>(reader: R, prosumers: usize, resolution_minutes: u32) -> Result<Self> {
        Scenario::new(read_profile_csv(reader, prosumers)?, resolution_minutes)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_profile_csv(writer, &self.snapshots)
    }
}

fn clock_label(step: usize, resolution_minutes: u32) -> String {
    let minutes = step * resolution_minutes as usize;
    format!("{:02}:{:02}", (minutes / 60) % 24, minutes % 60)
}

pub fn generate_duck_curve(net: &Network, seed: u64) -> Scenario {
    generate_duck_curve_with(net, seed, &DuckCurveParams::default())
        .expect("default duck-curve parameters are valid")
}

/// Synthetic day of demand and PV potential in kW.
///
/// Each prosumer's PV output gets one seeded scale factor for the whole
/// day, so its maximum stays at solar noon; demand gets independent noise
/// at every step.
pub fn generate_duck_curve_with(net: &Network, seed: u64, params: &DuckCurveParams) -> Result<Scenario> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = params.noise;
    let jitter = move |rng: &mut ChaCha8Rng| {
        if noise > 0.0 {
            1.0 + rng.random_range(-noise..=noise)
        } else {
            1.0
        }
    };
    let pv_scale: Vec<f64> = net.prosumers().iter().map(|_| jitter(&mut rng)).collect();
    let steps = (1440 / params.resolution_minutes) as usize;
    let mut snapshots = Vec::with_capacity(steps);
    for k in 0..steps {
        let hour = (k * params.resolution_minutes as usize) as f64 / 60.0;
        let solar = params.solar_shape(hour);
        let load = params.demand_shape(hour);
        let mut demand = Vec::with_capacity(net.prosumer_count());
        let mut potential = Vec::with_capacity(net.prosumer_count());
        for (p, scale) in net.prosumers().iter().zip(&pv_scale) {
            demand.push(p.nominal_demand / 1000.0 * load * jitter(&mut rng));
            potential.push(p.pv_capacity / 1000.0 * solar * scale);
        }
        snapshots.push(Snapshot::new(demand, potential)?.with_timestamp(clock_label(k, params.resolution_minutes)));
    }
    Scenario::new(snapshots, params.resolution_minutes)
}

#[derive(Debug)]
pub struct TraceStep {
    pub label: String,
    /// Failures are tagged with the timestep index.
    pub outcome: Result<SolveResult>,
    /// Energy curtailed per prosumer since midnight, kWh.
    pub cumulative_curtailment: Vec<f64>,
}

impl TraceStep {
    pub fn result(&self) -> Option<&SolveResult> {
        self.outcome.as_ref().ok()
    }

    pub fn voltages(&self) -> Option<&[f64]> {
        self.result()?.report.as_ref()?.pf.as_ref().map(|pf| pf.magnitudes.as_slice())
    }

    pub fn lambda(&self) -> Option<f64> {
        self.result()?.lambda
    }
}

#[derive(Debug)]
pub struct SimulationTrace {
    pub scheme: SchemeConfig,
    pub resolution_minutes: u32,
    pub prosumers: usize,
    pub buses: usize,
    pub steps: Vec<TraceStep>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn failures(&self) -> impl Iterator<Item = &Error> {
        self.steps.iter().filter_map(|s| s.outcome.as_ref().err())
    }

    pub fn min_lambda(&self) -> Option<f64> {
        self.steps.iter().filter_map(TraceStep::lambda).reduce(f64::min)
    }

    /// Highest bus voltage over the day and the step where it occurs.
    pub fn peak_voltage(&self) -> Option<(usize, f64)> {
        self.steps
            .iter()
            .enumerate()
            .filter_map(|(k, s)| Some((k, s.voltages()?.iter().cloned().fold(f64::NEG_INFINITY, f64::max))))
            .reduce(|a, b| if b.1 > a.1 { b } else { a })
    }

    pub fn total_curtailed_kwh(&self) -> f64 {
        self.steps
            .last()
            .map(|s| s.cumulative_curtailment.iter().sum())
            .unwrap_or(0.0)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(trace_header(self.prosumers, self.buses)).map_err(csv_error)?;
        let name = self.scheme.name();
        for step in &self.steps {
            let mut row = vec![step.label.clone(), name.to_string()];
            match &step.outcome {
                Ok(r) => {
                    row.push(r.lambda.map(|l| l.to_string()).unwrap_or_default());
                    row.push(r.welfare.to_string());
                    row.extend(r.x.iter().map(f64::to_string));
                    row.extend(r.utilities.iter().map(f64::to_string));
                    match step.voltages() {
                        Some(v) => row.extend(v.iter().map(f64::to_string)),
                        None => row.extend(std::iter::repeat_n(String::new(), self.buses)),
                    }
                }
                Err(e) => {
                    row.push(String::new());
                    row.push(format!("ERR:{}", e.kind()));
                    row.extend(std::iter::repeat_n(String::new(), 2 * self.prosumers + self.buses));
                }
            }
            row.extend(step.cumulative_curtailment.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<trace>".into(),
            source: e,
        })
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn trace_header(prosumers: usize, buses: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "scheme", "lambda", "welfare"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=prosumers).map(|i| format!("x_{i}")));
    h.extend((1..=prosumers).map(|i| format!("u_{i}")));
    h.extend((1..=buses).map(|b| format!("v_bus{b}")));
    h.extend((1..=prosumers).map(|i| format!("cum_curt_{i}")));
    h
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: String,
    pub scheme: String,
    pub lambda: Option<f64>,
    pub welfare: Option<f64>,
    /// Error kind of a failed step.
    pub error: Option<String>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub cumulative_curtailment: Vec<f64>,
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (n, b) = (count("x_"), count("v_bus"));
    let expected = trace_header(n, b);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse("unexpected trace header".into()));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Parse(format!("not a number: {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let block = |start: usize, len: usize| -> Result<Vec<f64>> {
            (start..start + len).filter_map(|k| num(field(k)).transpose()).collect()
        };
        let (welfare, error) = match field(3).strip_prefix("ERR:") {
            Some(kind) => (None, Some(kind.to_string())),
            None => (num(field(3))?, None),
        };
        rows.push(TraceRow {
            t: field(0).to_string(),
            scheme: field(1).to_string(),
            lambda: num(field(2))?,
            welfare,
            error,
            x: block(4, n)?,
            u: block(4 + n, n)?,
            v: block(4 + 2 * n, b)?,
            cumulative_curtailment: block(4 + 2 * n + b, n)?,
        });
    }
    Ok(rows)
}

/// Solves every snapshot independently; timesteps run in parallel on the
/// current rayon pool and come back in order.
pub fn run_timeseries(
    net: &Network,
    scenario: &Scenario,
    cfg: &SchemeConfig,
    opts: SolveOptions,
) -> Result<SimulationTrace> {
    cfg.validate()?;
    for snap in scenario.snapshots() {
        snap.check_network(net)?;
    }
    let outcomes: Vec<Result<SolveResult>> = scenario
        .snapshots()
        .par_iter()
        .enumerate()
        .map(|(index, snap)| {
            solve(net, snap, cfg, opts).map_err(|e| Error::Timestep {
                index,
                source: Box::new(e),
            })
        })
        .collect();

    let hours = scenario.resolution_minutes() as f64 / 60.0;
    let mut cumulative = vec![0.0; net.prosumer_count()];
    let steps = scenario
        .snapshots()
        .iter()
        .zip(outcomes)
        .map(|(snap, outcome)| {
            if let Ok(r) = &outcome {
                for ((c, p), x) in cumulative.iter_mut().zip(snap.potential()).zip(&r.x) {
                    *c += (p - x).max(0.0) * hours;
                }
            }
            TraceStep {
                label: snap.timestamp().unwrap_or_default().to_string(),
                outcome,
                cumulative_curtailment: cumulative.clone(),
            }
        })
        .collect();
    Ok(SimulationTrace {
        scheme: *cfg,
        resolution_minutes: scenario.resolution_minutes(),
        prosumers: net.prosumer_count(),
        buses: net.bus_count(),
        steps,
    })
}

/// One solve per configuration; a failing configuration does not affect
/// the others.
pub fn compare_schemes(
    net: &Network,
    snap: &Snapshot,
    configs: &[SchemeConfig],
    opts: SolveOptions,
) -> Result<Vec<Result<SolveResult>>> {
    snap.check_network(net)?;
    Ok(configs.par_iter().map(|cfg| solve(net, snap, cfg, opts)).collect())
}

/// The six comparison panels for a snapshot: the four bargaining schemes,
/// utilitarian with `gamma = 0` and Nash on export.
///
/// The uniform entitlement `K` is the smallest export capability among
/// exporting prosumers and the egalitarian reference is the smallest PV
/// potential, so neither reference is clipped by the box.
pub fn comparison_panels(snap: &Snapshot) -> Vec<SchemeConfig> {
    let k = snap
        .demand()
        .iter()
        .zip(snap.potential())
        .map(|(d, p)| p - d)
        .filter(|e| *e > 0.0)
        .reduce(f64::min)
        .unwrap_or(1.0);
    let c_ref = snap
        .potential()
        .iter()
        .cloned()
        .filter(|p| *p > 0.0)
        .reduce(f64::min)
        .unwrap_or(1.0);
    vec![
        SchemeConfig::OpfGeneration,
        SchemeConfig::OpfExport,
        SchemeConfig::UniformDynamicExport { k },
        SchemeConfig::Egalitarian { c_ref },
        SchemeConfig::UtilitarianMix { gamma: 0.0 },
        SchemeConfig::NashExport,
    ]
}
