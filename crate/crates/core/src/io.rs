//! CSV and JSON file formats. Column names are part of the interface.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cooling::PulseRecord;
use crate::noise::NoiseMeasurement;
use crate::stats::Estimate;
use crate::thermometry::{HeatingFit, HeatingSample, HeatingSeries, Side, SidebandScan};
use crate::{Error, Result};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// `trap field` output row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    #[serde(rename = "Ex")]
    pub ex: f64,
    #[serde(rename = "Ey")]
    pub ey: f64,
    #[serde(rename = "Ez")]
    pub ez: f64,
}

/// `populations.csv` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub pulse_index: usize,
    pub p0: f64,
    pub nbar: f64,
}

impl From<&PulseRecord> for PopulationRow {
    fn from(r: &PulseRecord) -> Self {
        Self {
            pulse_index: r.pulse_index,
            p0: r.p0,
            nbar: r.nbar,
        }
    }
}

/// Scan CSV row. `delay_s` groups scans of one heating series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub detuning_rad_s: f64,
    pub excitation: f64,
    pub shots: u32,
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_s: Option<f64>,
}

pub fn scan_rows(scan: &SidebandScan, delay: Option<f64>) -> Vec<ScanRow> {
    (0..scan.detunings.len())
        .map(|i| ScanRow {
            detuning_rad_s: scan.detunings[i],
            excitation: scan.excitation[i],
            shots: scan.shots[i],
            side: scan.side,
            delay_s: delay,
        })
        .collect()
}

/// A red/blue scan pair at one delay.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGroup {
    pub delay: Option<f64>,
    pub red: SidebandScan,
    pub blue: SidebandScan,
}

/// Group scan rows by delay, in order of first appearance.
pub fn group_scans(rows: &[ScanRow]) -> Result<Vec<ScanGroup>> {
    let mut order: Vec<Option<u64>> = Vec::new();
    type Sides = (Option<f64>, Vec<ScanRow>, Vec<ScanRow>);
    let mut groups: BTreeMap<Option<u64>, Sides> = BTreeMap::new();
    for r in rows {
        let key = r.delay_s.map(f64::to_bits);
        let e = groups.entry(key).or_insert_with(|| {
            order.push(key);
            (r.delay_s, Vec::new(), Vec::new())
        });
        match r.side {
            Side::Red => e.1.push(*r),
            Side::Blue => e.2.push(*r),
        }
    }
    let to_scan = |rows: &[ScanRow], side: Side| SidebandScan {
        detunings: rows.iter().map(|r| r.detuning_rad_s).collect(),
        excitation: rows.iter().map(|r| r.excitation).collect(),
        shots: rows.iter().map(|r| r.shots).collect(),
        side,
    };
    order
        .into_iter()
        .map(|k| {
            let (delay, red, blue) = &groups[&k];
            if red.is_empty() || blue.is_empty() {
                return Err(Error::InvalidParams(format!(
                    "delay {delay:?} needs both red and blue scans"
                )));
            }
            let g = ScanGroup {
                delay: *delay,
                red: to_scan(red, Side::Red),
                blue: to_scan(blue, Side::Blue),
            };
            g.red.validate()?;
            g.blue.validate()?;
            Ok(g)
        })
        .collect()
}

/// `nbar.csv` / `series.csv` row. The first three columns are the heating
/// series; the rest document the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbarRow {
    pub delay_s: f64,
    pub nbar: f64,
    pub sigma: f64,
    pub ratio: f64,
    pub ratio_sigma: f64,
    pub red_amplitude: f64,
    pub red_amplitude_sigma: f64,
    pub blue_amplitude: f64,
    pub blue_amplitude_sigma: f64,
}

/// Minimal heating-series row; extra columns in the file are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub delay_s: f64,
    pub nbar: f64,
    pub sigma: f64,
}

pub fn read_series(path: &Path) -> Result<HeatingSeries> {
    let rows: Vec<SeriesRow> = read_csv(path)?;
    Ok(HeatingSeries {
        samples: rows
            .into_iter()
            .map(|r| HeatingSample {
                delay: r.delay_s,
                nbar: r.nbar,
                sigma: r.sigma,
            })
            .collect(),
    })
}

/// `rate.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateJson {
    pub ndot: f64,
    pub ndot_sigma: f64,
    pub intercept: f64,
    pub intercept_sigma: f64,
    pub chi2: f64,
    pub dof: usize,
}

impl From<&HeatingFit> for RateJson {
    fn from(f: &HeatingFit) -> Self {
        Self {
            ndot: f.ndot.value,
            ndot_sigma: f.ndot.sigma,
            intercept: f.intercept.value,
            intercept_sigma: f.intercept.sigma,
            chi2: f.chi2,
            dof: f.dof,
        }
    }
}

/// Input row for `noise convert`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub d_m: f64,
    pub omega_rad_s: f64,
    pub ndot: f64,
    pub ndot_sigma: f64,
    #[serde(rename = "T_K")]
    pub t_k: f64,
    #[serde(default)]
    pub label: String,
}

/// Column name of the normalized noise for a reference frequency in Hz.
pub fn normalized_column(freq_hz: f64) -> String {
    let mhz = freq_hz / 1e6;
    let s = format!("{mhz}");
    format!("S_E_{}MHz", s.replace('.', "p"))
}

/// Header of `noise.csv` for a normalization frequency in Hz.
pub fn noise_header(freq_hz: f64) -> Vec<String> {
    let norm = normalized_column(freq_hz);
    [
        "d_m",
        "omega_rad_s",
        "ndot",
        "ndot_sigma",
        "T_K",
        "S_E",
        "S_E_sigma",
        &norm,
        &format!("{norm}_sigma"),
        "label",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn write_noise_csv(path: &Path, rows: &[NoiseMeasurement], freq_hz: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(noise_header(freq_hz))?;
    for m in rows {
        w.write_record([
            fmt_f64(m.trap_size_d),
            fmt_f64(m.secular_frequency),
            fmt_f64(m.heating_rate.value),
            fmt_f64(m.heating_rate.sigma),
            fmt_f64(m.temperature_k),
            fmt_f64(m.s_e.value),
            fmt_f64(m.s_e.sigma),
            fmt_f64(m.s_e_normalized.value),
            fmt_f64(m.s_e_normalized.sigma),
            m.label.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip form
    format!("{v:?}")
}

/// Column-addressed numeric table, for files whose columns are chosen at
/// run time.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidParams(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidParams(format!("row {}: `{name}` is not a number", k + 1)))
            })
            .collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }
}

/// `noise fit` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawJson {
    pub x: String,
    pub y: String,
    pub exponent: Estimate,
    pub amplitude: Estimate,
    pub chi2: f64,
    pub dof: usize,
    pub points: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_column_names() {
        assert_eq!(normalized_column(1e6), "S_E_1MHz");
        assert_eq!(normalized_column(2.5e6), "S_E_2p5MHz");
    }

    #[test]
    fn scan_round_trip_and_grouping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scans.csv");
        let red = SidebandScan {
            detunings: vec![-1.0, -0.5, 0.0, 0.5],
            excitation: vec![0.0, 0.01, 0.02, 0.0],
            shots: vec![100; 4],
            side: Side::Red,
        };
        let blue = SidebandScan {
            side: Side::Blue,
            excitation: vec![0.1, 0.5, 0.9, 0.2],
            ..red.clone()
        };
        let mut rows = scan_rows(&red, Some(0.01));
        rows.extend(scan_rows(&blue, Some(0.01)));
        rows.extend(scan_rows(&blue, Some(0.0)));
        rows.extend(scan_rows(&red, Some(0.0)));
        write_csv(&path, &rows).unwrap();
        let back: Vec<ScanRow> = read_csv(&path).unwrap();
        assert_eq!(back, rows);
        let groups = group_scans(&back).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].delay, Some(0.01));
        assert_eq!(groups[1].red, red);
        assert_eq!(groups[1].blue, blue);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("detuning_rad_s,excitation,shots,side,delay_s\n"));
    }

    #[test]
    fn missing_side_is_an_error() {
        let rows = vec![ScanRow {
            detuning_rad_s: 0.0,
            excitation: 0.0,
            shots: 1,
            side: Side::Red,
            delay_s: None,
        }];
        assert!(group_scans(&rows).is_err());
    }

    #[test]
    fn table_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, "a,b\n1,2.5\n3,x\n").unwrap();
        let t = Table::read(&path).unwrap();
        assert!(t.column("b").is_err());
        assert_eq!(t.column("a").unwrap(), vec![1.0, 3.0]);
        assert!(t.column("c").is_err());
    }

    #[test]
    fn hashes() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
