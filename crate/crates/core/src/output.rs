//! Run manifests, CSV/JSON-lines writers and the binary field container.
//!
//! Every CSV starts with a `# run <id>` comment line, where the id hashes
//! the scenario, seed and code version (no timestamps), so reruns of the
//! same manifest produce byte-identical files.
//!
//! Field container layout (little endian): magic `SPNF`, `u32` format
//! version, `u32` header length, UTF-8 JSON [`ContainerHeader`], then
//! `(re, im)` `f64` pairs in storage order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::born::EnsembleResult;
use crate::error::{Error, Result};
use crate::grid::{SpacetimeGrid, Spinor, SpinorField, C64};
use crate::nparticle::{PairAmplitude, TwoParticleField, TIME_REPRESENTATION};
use crate::solver::{CalibrationRow, CollapseDiagnostics, LogEntry};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the normalized (re-emitted) configuration text.
    pub scenario_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub discretization: Option<String>,
    pub kernel: Option<String>,
    pub epsilon: Option<f64>,
    pub threads: usize,
    pub notes: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, normalized_config: &str, seed: u64, threads: usize) -> Self {
        let now = unix_now();
        Self {
            command: command.to_string(),
            scenario_hash: sha256_hex(normalized_config.as_bytes()),
            seed,
            code_version: CODE_VERSION.to_string(),
            discretization: None,
            kernel: None,
            epsilon: None,
            threads,
            notes: Vec::new(),
            started_unix: now,
            finished_unix: now,
        }
    }

    /// Timestamp-free identity stamped into every output file.
    pub fn id(&self) -> String {
        let key = format!(
            "{}|{}|{}|{}|{:?}|{:?}",
            self.command,
            self.scenario_hash,
            self.seed,
            self.code_version,
            self.kernel,
            self.epsilon
        );
        sha256_hex(key.as_bytes())[..16].to_string()
    }

    pub fn finish(&mut self) {
        self.finished_unix = unix_now();
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Shortest round-trip decimal; exponent form for very small or large values.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer<W: Write>(mut out: W, run_id: &str) -> Result<csv::Writer<W>> {
    writeln!(out, "# run {run_id}")?;
    Ok(csv::Writer::from_writer(out))
}

/// `slice,time,total,residual,pop_<mode id>...`
pub fn write_diagnostics_csv<W: Write>(
    out: W,
    run_id: &str,
    grid: &SpacetimeGrid,
    d: &CollapseDiagnostics,
) -> Result<()> {
    let mut w = csv_writer(out, run_id)?;
    let mut header = vec![
        "slice".to_string(),
        "time".into(),
        "total".into(),
        "residual".into(),
    ];
    header.extend(d.mode_ids.iter().map(|id| format!("pop_{id}")));
    w.write_record(&header)?;
    for (t, row) in d.populations.iter().enumerate() {
        let mut rec = vec![
            t.to_string(),
            num(grid.time(t)),
            num(d.totals[t]),
            num(d.residuals[t]),
        ];
        rec.extend(row.iter().map(|&p| num(p)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per accepted optimizer iteration.
pub fn write_iterations_jsonl<W: Write>(mut out: W, run_id: &str, log: &[LogEntry]) -> Result<()> {
    for e in log {
        let mut v = serde_json::to_value(e)?;
        v["run"] = serde_json::Value::String(run_id.to_string());
        serde_json::to_writer(&mut out, &v)?;
        writeln!(out)?;
    }
    Ok(())
}

/// `t_i,winner,pop_<group>...`; a tied sample has an empty winner.
pub fn write_ensemble_csv<W: Write>(out: W, run_id: &str, r: &EnsembleResult) -> Result<()> {
    let mut w = csv_writer(out, run_id)?;
    let mut header = vec!["t_i".to_string(), "winner".into()];
    header.extend((0..r.initial_weights.len()).map(|g| format!("pop_{g}")));
    w.write_record(&header)?;
    for s in &r.samples {
        let mut rec = vec![
            num(s.t_i),
            s.winner.map(|g| g.to_string()).unwrap_or_default(),
        ];
        rec.extend(s.populations.iter().map(|&p| num(p)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_calibration_csv<W: Write>(
    out: W,
    run_id: &str,
    rows: &[CalibrationRow],
) -> Result<()> {
    let mut w = csv_writer(out, run_id)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const CONTAINER_MAGIC: &[u8; 4] = b"SPNF";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub grid: SpacetimeGrid,
    pub particles: usize,
    /// Complex components per configuration (4 or 16).
    pub components: usize,
    pub run: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_representation: Option<String>,
}

fn write_container<W: Write>(
    mut out: W,
    header: &ContainerHeader,
    data: impl Iterator<Item = C64>,
) -> Result<()> {
    let h = serde_json::to_vec(header)?;
    out.write_all(CONTAINER_MAGIC)?;
    out.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    out.write_all(&(h.len() as u32).to_le_bytes())?;
    out.write_all(&h)?;
    for c in data {
        out.write_all(&c.re.to_le_bytes())?;
        out.write_all(&c.im.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_container<R: Read>(mut inp: R) -> Result<(ContainerHeader, Vec<C64>)> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::Container("not a field container (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    inp.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!(
            "unsupported container version {version}"
        )));
    }
    inp.read_exact(&mut word)?;
    let mut h = vec![0u8; u32::from_le_bytes(word) as usize];
    inp.read_exact(&mut h)?;
    let header: ContainerHeader = serde_json::from_slice(&h)?;
    let n_conf = header.grid.len().pow(header.particles as u32);
    let n = n_conf * header.components;
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 16];
    for _ in 0..n {
        inp.read_exact(&mut buf)
            .map_err(|_| Error::Container("truncated field data".into()))?;
        let re = f64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(buf[8..].try_into().expect("8 bytes"));
        data.push(C64::new(re, im));
    }
    if inp.read(&mut buf)? != 0 {
        return Err(Error::Container("trailing bytes after field data".into()));
    }
    Ok((header, data))
}

pub fn write_field<W: Write>(out: W, run_id: &str, psi: &SpinorField) -> Result<()> {
    let header = ContainerHeader {
        grid: psi.grid,
        particles: 1,
        components: 4,
        run: run_id.to_string(),
        time_representation: None,
    };
    write_container(
        out,
        &header,
        psi.values.iter().flat_map(|v| v.iter().copied()),
    )
}

pub fn read_field<R: Read>(inp: R) -> Result<(ContainerHeader, SpinorField)> {
    let (header, data) = read_container(inp)?;
    if header.particles != 1 || header.components != 4 {
        return Err(Error::Container(format!(
            "expected a single-particle field, found {} particles x {} components",
            header.particles, header.components
        )));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| Spinor::new(c[0], c[1], c[2], c[3]))
        .collect();
    let psi = SpinorField::from_values(header.grid, values)?;
    Ok((header, psi))
}

pub fn write_pair_field<W: Write>(out: W, run_id: &str, psi: &TwoParticleField) -> Result<()> {
    let header = ContainerHeader {
        grid: psi.grid,
        particles: 2,
        components: 16,
        run: run_id.to_string(),
        time_representation: Some(TIME_REPRESENTATION.to_string()),
    };
    // Row-major 4x4 blocks: component index 4 alpha + beta.
    write_container(
        out,
        &header,
        psi.values
            .iter()
            .flat_map(|m| (0..16).map(move |i| m[(i / 4, i % 4)])),
    )
}

pub fn read_pair_field<R: Read>(inp: R) -> Result<(ContainerHeader, TwoParticleField)> {
    let (header, data) = read_container(inp)?;
    if header.particles != 2 || header.components != 16 {
        return Err(Error::Container(format!(
            "expected a two-particle field, found {} particles x {} components",
            header.particles, header.components
        )));
    }
    let values = data
        .chunks_exact(16)
        .map(|c| PairAmplitude::from_fn(|a, b| c[4 * a + b]))
        .collect();
    Ok((
        header.clone(),
        TwoParticleField {
            grid: header.grid,
            values,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> SpinorField {
        let g = SpacetimeGrid::new(3, 4, 0.1, 0.2).unwrap();
        SpinorField::from_fn(g, |t, x| {
            Spinor::new(
                C64::new(t as f64 + 0.1, -(x as f64)),
                C64::new(1e-300, f64::MAX),
                C64::new(-0.0, 1.0 / 3.0),
                C64::new(std::f64::consts::PI, 0.5),
            )
        })
    }

    #[test]
    fn field_container_round_trips_bit_exactly() {
        let psi = field();
        let mut buf = Vec::new();
        write_field(&mut buf, "abc", &psi).unwrap();
        let (h, back) = read_field(buf.as_slice()).unwrap();
        assert_eq!(h.run, "abc");
        assert_eq!(h.grid, psi.grid);
        for (a, b) in psi.values.iter().zip(&back.values) {
            for c in 0..4 {
                assert_eq!(a[c].re.to_bits(), b[c].re.to_bits());
                assert_eq!(a[c].im.to_bits(), b[c].im.to_bits());
            }
        }
    }

    #[test]
    fn pair_container_round_trips_with_header_note() {
        let g = SpacetimeGrid::new(2, 3, 0.1, 0.2).unwrap();
        let psi = SpinorField::from_fn(g, |t, x| {
            Spinor::new(
                C64::new(t as f64, 0.5),
                C64::new(-1.0, x as f64),
                C64::new(0.25, 0.0),
                C64::new(0.0, -2.0),
            )
        });
        let pair = TwoParticleField::product(&psi, &psi.scaled(C64::new(0.0, 2.0))).unwrap();
        let mut buf = Vec::new();
        write_pair_field(&mut buf, "r", &pair).unwrap();
        let (h, back) = read_pair_field(buf.as_slice()).unwrap();
        assert_eq!(back, pair);
        assert_eq!(h.time_representation.as_deref(), Some(TIME_REPRESENTATION));
        assert!(read_field(buf.as_slice()).is_err());
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let mut buf = Vec::new();
        write_field(&mut buf, "x", &field()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_field(bad.as_slice()),
            Err(Error::Container(_))
        ));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_field(short), Err(Error::Container(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            read_field(long.as_slice()),
            Err(Error::Container(_))
        ));
    }

    #[test]
    fn manifest_id_ignores_timestamps() {
        let mut a = RunManifest::new("simulate", "epsilon = 1.0\n", 3, 4);
        let id = a.id();
        a.started_unix += 100;
        a.finish();
        assert_eq!(a.id(), id);
        let b = RunManifest::new("simulate", "epsilon = 2.0\n", 3, 4);
        assert_ne!(b.id(), id);
    }

    #[test]
    fn floats_are_written_at_full_precision() {
        let r = CalibrationRow {
            epsilon: 0.1 + 0.2,
            max_population: 1.0 / 3.0,
            dominance: 0.5,
            norm_deviation: 1e-17,
            a1: 2.0,
            a2: f64::MIN_POSITIVE,
            iterations: 4,
        };
        let mut buf = Vec::new();
        write_calibration_csv(&mut buf, "id", &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let rec = rd.records().next().unwrap().unwrap();
        assert_eq!(rec[0].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(rec[1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(rec[5].parse::<f64>().unwrap(), f64::MIN_POSITIVE);
    }
}
