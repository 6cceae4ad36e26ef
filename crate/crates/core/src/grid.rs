//! Network description, prosumers and per-instant snapshots.
//!
//! Networks are read from a TOML file with a `[network]` table and
//! `[[bus]]`, `[[line]]`, `[[prosumer]]` arrays. Electrical quantities are
//! SI (ohm, ampere, volt, watt); voltage magnitudes and limits are per unit.
//! Validation rejects anything that is not a single radial tree rooted at
//! exactly one slack bus.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

const TESTBED_TOML: &str = include_str!("../data/testbed.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: u32,
    pub to_bus: u32,
    /// Series resistance in ohm.
    pub resistance: f64,
    /// Series reactance in ohm.
    pub reactance: f64,
    /// Thermal limit in ampere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prosumer {
    pub id: u32,
    pub bus: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Nominal PV capacity in watt, used to scale generated profiles.
    #[serde(default)]
    pub pv_capacity: f64,
    /// Nominal peak demand in watt, used to scale generated profiles.
    #[serde(default)]
    pub nominal_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    slack_voltage: f64,
    #[serde(default = "default_base_voltage")]
    base_voltage: f64,
    #[serde(default = "default_base_power")]
    base_power: f64,
}

fn default_base_voltage() -> f64 {
    400.0
}

fn default_base_power() -> f64 {
    100_000.0
}

/// On-disk layout of a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkFile {
    network: NetworkHeader,
    #[serde(default)]
    bus: Vec<Bus>,
    #[serde(default)]
    line: Vec<Line>,
    #[serde(default)]
    prosumer: Vec<Prosumer>,
}

/// A validated radial feeder.
///
/// Buses keep their file order; prosumers are sorted by id so that vector
/// position `i` in a [`Snapshot`] refers to `prosumers()[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: Option<String>,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    prosumers: Vec<Prosumer>,
    slack_voltage: f64,
    base_voltage: f64,
    base_power: f64,
    bus_index: BTreeMap<u32, usize>,
    slack: usize,
    /// For each line, (from index, to index).
    line_ends: Vec<(usize, usize)>,
    /// For each prosumer, the index of its bus.
    prosumer_bus: Vec<usize>,
}

impl Network {
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn prosumers(&self) -> &[Prosumer] {
        &self.prosumers
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn slack_voltage(&self) -> f64 {
        self.slack_voltage
    }

    /// Line-to-line base voltage in volt.
    pub fn base_voltage(&self) -> f64 {
        self.base_voltage
    }

    /// Three-phase base power in watt.
    pub fn base_power(&self) -> f64 {
        self.base_power
    }

    /// Base impedance in ohm.
    pub fn base_impedance(&self) -> f64 {
        self.base_voltage * self.base_voltage / self.base_power
    }

    /// Base line current in ampere.
    pub fn base_current(&self) -> f64 {
        self.base_power / (3f64.sqrt() * self.base_voltage)
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn prosumer_count(&self) -> usize {
        self.prosumers.len()
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn line_ends(&self) -> &[(usize, usize)] {
        &self.line_ends
    }

    /// Bus index of every prosumer, aligned with [`Network::prosumers`].
    pub fn prosumer_buses(&self) -> &[usize] {
        &self.prosumer_bus
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: NetworkFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn to_toml_string(&self) -> String {
        let file = NetworkFile {
            network: NetworkHeader {
                name: self.name.clone(),
                slack_voltage: self.slack_voltage,
                base_voltage: self.base_voltage,
                base_power: self.base_power,
            },
            bus: self.buses.clone(),
            line: self.lines.clone(),
            prosumer: self.prosumers.clone(),
        };
        toml::to_string(&file).expect("network serializes to TOML")
    }

    fn from_file(file: NetworkFile) -> Result<Self> {
        let NetworkFile {
            network: header,
            bus: buses,
            line: lines,
            prosumer: mut prosumers,
        } = file;

        positive("network.slack_voltage", header.slack_voltage)?;
        positive("network.base_voltage", header.base_voltage)?;
        positive("network.base_power", header.base_power)?;

        if buses.is_empty() {
            return Err(Error::Validation("network has no buses".into()));
        }
        let mut bus_index = BTreeMap::new();
        for (k, bus) in buses.iter().enumerate() {
            if bus_index.insert(bus.id, k).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.v_min > 0.0 && bus.v_min < bus.v_max && bus.v_max.is_finite()) {
                return Err(Error::Validation(format!(
                    "bus {}: voltage limits must satisfy 0 < v_min < v_max (got {} and {})",
                    bus.id, bus.v_min, bus.v_max
                )));
            }
        }
        let slacks: Vec<_> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .collect();
        let slack = match slacks.as_slice() {
            [(k, _)] => *k,
            [] => return Err(Error::Validation("missing slack bus".into())),
            many => {
                let ids: Vec<_> = many.iter().map(|(_, b)| b.id.to_string()).collect();
                return Err(Error::Validation(format!(
                    "exactly one slack bus required, found buses {}",
                    ids.join(", ")
                )));
            }
        };

        let mut line_ends = Vec::with_capacity(lines.len());
        let mut forest = DisjointSet::new(buses.len());
        for line in &lines {
            let name = format!("line {}-{}", line.from_bus, line.to_bus);
            let from = *bus_index.get(&line.from_bus).ok_or_else(|| {
                Error::Validation(format!("{name}: unknown bus {}", line.from_bus))
            })?;
            let to = *bus_index
                .get(&line.to_bus)
                .ok_or_else(|| Error::Validation(format!("{name}: unknown bus {}", line.to_bus)))?;
            if from == to {
                return Err(Error::Validation(format!("{name}: connects a bus to itself")));
            }
            let finite = line.resistance.is_finite() && line.reactance.is_finite();
            if !finite || line.resistance < 0.0 || line.reactance < 0.0 {
                return Err(Error::Validation(format!(
                    "{name}: resistance and reactance must be finite and non-negative"
                )));
            }
            if line.resistance == 0.0 && line.reactance == 0.0 {
                return Err(Error::Validation(format!("{name}: zero impedance")));
            }
            if let Some(limit) = line.current_limit {
                positive(&format!("{name}: current_limit"), limit)?;
            }
            if !forest.union(from, to) {
                return Err(Error::Validation(format!(
                    "non-radial topology: {name} closes a cycle"
                )));
            }
            line_ends.push((from, to));
        }
        if let Some(k) = (0..buses.len()).find(|&k| !forest.same(k, slack)) {
            return Err(Error::Validation(format!(
                "bus {} is not connected to the slack bus",
                buses[k].id
            )));
        }

        prosumers.sort_by_key(|p| p.id);
        let mut seen = BTreeSet::new();
        let mut prosumer_bus = Vec::with_capacity(prosumers.len());
        for p in &prosumers {
            if !seen.insert(p.id) {
                return Err(Error::Validation(format!("duplicate prosumer id {}", p.id)));
            }
            let k = *bus_index.get(&p.bus).ok_or_else(|| {
                Error::Validation(format!("prosumer {}: unknown bus {}", p.id, p.bus))
            })?;
            if buses[k].kind != BusKind::Pq {
                return Err(Error::Validation(format!(
                    "prosumer {}: bus {} is not a pq bus",
                    p.id, p.bus
                )));
            }
            if !(p.pv_capacity >= 0.0 && p.pv_capacity.is_finite())
                || !(p.nominal_demand >= 0.0 && p.nominal_demand.is_finite())
            {
                return Err(Error::Validation(format!(
                    "prosumer {}: pv_capacity and nominal_demand must be non-negative",
                    p.id
                )));
            }
            prosumer_bus.push(k);
        }

        Ok(Network {
            name: header.name,
            buses,
            lines,
            prosumers,
            slack_voltage: header.slack_voltage,
            base_voltage: header.base_voltage,
            base_power: header.base_power,
            bus_index,
            slack,
            line_ends,
            prosumer_bus,
        })
    }
}

fn positive(what: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} must be positive, got {value}")))
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut k: usize) -> usize {
        while self.parent[k] != k {
            self.parent[k] = self.parent[self.parent[k]];
            k = self.parent[k];
        }
        k
    }

    /// Returns false if `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }

    fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Network::from_toml_str(&text)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_toml_string()).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The bundled six-bus low-voltage feeder with five prosumers.
pub fn builtin_testbed() -> Network {
    Network::from_toml_str(TESTBED_TOML).expect("bundled testbed is valid")
}

/// Raw text of the bundled testbed file.
pub fn builtin_testbed_toml() -> &'static str {
    TESTBED_TOML
}

/// Demand and PV potential of every prosumer at one instant, in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    demand: Vec<f64>,
    potential: Vec<f64>,
    timestamp: Option<String>,
}

impl Snapshot {
    pub fn new(demand: Vec<f64>, potential: Vec<f64>) -> Result<Self> {
        check_len("potential", potential.len(), demand.len())?;
        for (what, values) in [("demand", &demand), ("potential", &potential)] {
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
            {
                return Err(Error::Parse(format!(
                    "{what} of prosumer {} must be finite and non-negative, got {v}",
                    i + 1
                )));
            }
        }
        Ok(Snapshot {
            demand,
            potential,
            timestamp: None,
        })
    }

    pub fn with_timestamp(mut self, label: impl Into<String>) -> Self {
        self.timestamp = Some(label.into());
        self
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn timestamp(&self) -> Option<&str> {
        self.timestamp.as_deref()
    }

    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }

    pub fn check_network(&self, net: &Network) -> Result<()> {
        check_len("snapshot", self.len(), net.prosumer_count())
    }
}

/// Reads a profile CSV with header `t,demand_1..demand_N,potential_1..potential_N`.
pub fn read_profile_csv<R: Read>(reader: R, prosumers: usize) -> Result<Vec<Snapshot>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected = profile_header(prosumers);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse(format!(
            "profile header must be `{}`, got `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let parse = |k: usize| -> Result<f64> {
            record[k].trim().parse::<f64>().map_err(|e| {
                Error::Parse(format!("row {}, column {}: {e}", row + 1, expected[k]))
            })
        };
        let demand = (1..=prosumers).map(parse).collect::<Result<Vec<_>>>()?;
        let potential = (prosumers + 1..=2 * prosumers)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        out.push(Snapshot::new(demand, potential)?.with_timestamp(record[0].trim()));
    }
    Ok(out)
}

pub fn write_profile_csv<W: Write>(writer: W, snapshots: &[Snapshot]) -> Result<()> {
    let n = snapshots.first().map_or(0, Snapshot::len);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(profile_header(n)).map_err(csv_err)?;
    for (k, snap) in snapshots.iter().enumerate() {
        check_len("snapshot", snap.len(), n)?;
        let t = snap.timestamp().map_or_else(|| k.to_string(), str::to_string);
        let row = std::iter::once(t)
            .chain(snap.demand().iter().map(f64::to_string))
            .chain(snap.potential().iter().map(f64::to_string));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

fn profile_header(n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("demand_{i}")))
        .chain((1..=n).map(|i| format!("potential_{i}")))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
