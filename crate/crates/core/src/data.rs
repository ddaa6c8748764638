//! Sampling plan, synthetic high-fidelity oracle and dataset persistence.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bem::BladePolar;
use crate::error::{Error, Result};
use crate::flight::{AeroCoefficients, FlightState, Sample, HOVER_RPM, INPUT_NAMES, OUTPUT_NAMES};
use crate::geometry::AircraftConfig;
use crate::physics::{Aircraft, PropSettings};

/// Closed sampling interval per flight input, in [`INPUT_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: [f64; 7],
    pub upper: [f64; 7],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lower: [0.0, -15.0, 4000.0, 4000.0, 0.0, 0.0, -15.0],
            upper: [45.0, 15.0, 10000.0, 10000.0, 110.0, 110.0, 15.0],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for k in 0..7 {
            if !(self.lower[k] < self.upper[k]) {
                return Err(Error::Config(format!(
                    "bound for {} is empty: [{}, {}]",
                    INPUT_NAMES[k], self.lower[k], self.upper[k]
                )));
            }
        }
        Ok(())
    }

    /// Names of the inputs outside their interval.
    pub fn violations(&self, flight: &FlightState) -> Vec<&'static str> {
        flight
            .to_array()
            .iter()
            .enumerate()
            .filter(|(k, v)| !(self.lower[*k]..=self.upper[*k]).contains(*v))
            .map(|(k, _)| INPUT_NAMES[k])
            .collect()
    }
}

/// Latin hypercube: per dimension one point in each of `n` equal strata,
/// strata permuted and jittered uniformly, deterministic per seed.
pub fn lhs_sample(bounds: &Bounds, n: usize, seed: u64) -> Result<Vec<FlightState>> {
    bounds.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = Vec::with_capacity(7);
    for k in 0..7 {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let (lo, hi) = (bounds.lower[k], bounds.upper[k]);
        let col: Vec<f64> = strata
            .into_iter()
            .map(|s| {
                let u: f64 = rng.gen();
                (lo + (s as f64 + u) / n as f64 * (hi - lo)).clamp(lo, hi)
            })
            .collect();
        cols.push(col);
    }
    Ok((0..n)
        .map(|i| FlightState::from_array(std::array::from_fn(|k| cols[k][i])))
        .collect())
}

/// Stratum index of `x` among `n` equal strata of `[lo, hi]`.
pub fn stratum(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    (((x - lo) / (hi - lo) * n as f64).floor() as usize).min(n - 1)
}

/// Constants of the perturbed-physics oracle that stands in for
/// high-fidelity data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub version: u32,
    /// Blade polar of the oracle's propeller model.
    pub polar: BladePolar,
    /// Multiplier on the axial slipstream increment.
    pub wash_gain: f64,
    /// Lift saturation `C_L ← C_L,max · tanh(C_L / C_L,max)`.
    pub cl_max: f64,
    /// Parasite drag `ΔC_D = cd0 + cd_k · C_L²` on the saturated lift.
    pub cd0: f64,
    pub cd_k: f64,
    /// Pitch offset `ΔC_m = cm0 + cm_elev · θ_elev · v / v_ref`.
    pub cm0: f64,
    pub cm_elev: f64,
    pub v_ref: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            version: 1,
            polar: BladePolar {
                lift_slope_factor: 1.15,
                cl_max: 1.2,
                cd: 0.03,
            },
            wash_gain: 0.9,
            cl_max: 1.4,
            cd0: 0.03,
            cd_k: 0.05,
            cm0: -0.02,
            cm_elev: -0.004,
            v_ref: 45.0,
        }
    }
}

impl OracleConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: OracleConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("oracle config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.wash_gain,
            self.cl_max,
            self.cd0,
            self.cd_k,
            self.cm0,
            self.cm_elev,
            self.v_ref,
            self.polar.lift_slope_factor,
            self.polar.cl_max,
            self.polar.cd,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.cl_max <= 0.0 || self.v_ref <= 0.0 {
            return Err(Error::Config(
                "oracle constants must be finite, cl_max and v_ref positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plain data serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic "truth" model: the low-fidelity pipeline with a perturbed
/// propeller model and output-level discrepancies.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub config: OracleConfig,
    aircraft: Aircraft,
}

impl Oracle {
    pub fn new(aircraft: AircraftConfig, config: OracleConfig) -> Result<Self> {
        config.validate()?;
        let props = PropSettings {
            polar: config.polar,
            wash_gain: config.wash_gain,
            hover_rpm: HOVER_RPM,
        };
        Ok(Oracle {
            aircraft: Aircraft::with_settings(aircraft, props)?,
            config,
        })
    }

    pub fn aircraft_mut(&mut self) -> &mut Aircraft {
        &mut self.aircraft
    }

    /// Coefficients and whether every BEM solve converged.
    pub fn evaluate(&self, flight: &FlightState) -> Result<(AeroCoefficients, bool)> {
        let lf = self.aircraft.lf_forward(flight)?;
        Ok((self.perturb(flight, lf.coefficients), lf.converged))
    }

    /// Output-level discrepancy terms.
    pub fn perturb(&self, flight: &FlightState, c: AeroCoefficients) -> AeroCoefficients {
        let o = &self.config;
        let cl = o.cl_max * (c.cl / o.cl_max).tanh();
        AeroCoefficients {
            cl,
            cd: c.cd + o.cd0 + o.cd_k * cl * cl,
            c_roll: c.c_roll,
            cm: c.cm + o.cm0 + o.cm_elev * flight.theta_elev * flight.v / o.v_ref,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    /// Invalid records carry no split.
    None,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub flight: FlightState,
    pub target: AeroCoefficients,
    pub valid: bool,
    pub split: Split,
}

impl SampleRecord {
    pub fn sample(&self) -> Sample {
        Sample {
            flight: self.flight,
            target: self.target,
        }
    }
}

/// Ordered records with validity and split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub seed: Option<u64>,
    pub oracle_hash: Option<String>,
}

/// Offset separating the split shuffle from the sampling stream of the same seed.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Multiple of the interquartile range beyond which a target is an outlier.
pub const FENCE_FACTOR: f64 = 5.0;

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Marks records whose targets lie outside `[Q1 − k·IQR, Q3 + k·IQR]` of the
/// currently valid records, per coefficient.
pub fn apply_fence(records: &mut [SampleRecord], factor: f64) {
    let mut fences = [(f64::NEG_INFINITY, f64::INFINITY); 4];
    for (k, fence) in fences.iter_mut().enumerate() {
        let mut v: Vec<f64> = records
            .iter()
            .filter(|r| r.valid)
            .map(|r| r.target.to_array()[k])
            .collect();
        if v.len() < 4 {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
        let iqr = q3 - q1;
        *fence = (q1 - factor * iqr, q3 + factor * iqr);
    }
    for r in records.iter_mut().filter(|r| r.valid) {
        let t = r.target.to_array();
        if (0..4).any(|k| t[k] < fences[k].0 || t[k] > fences[k].1) {
            r.valid = false;
        }
    }
}

impl Dataset {
    /// LHS inputs → oracle targets → validity filter → split.
    pub fn generate(
        oracle: &Oracle,
        bounds: &Bounds,
        n: usize,
        seed: u64,
        n_train: usize,
    ) -> Result<Self> {
        if n < 10 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least 10 samples, got {n}"
            )));
        }
        let flights = lhs_sample(bounds, n, seed)?;
        let mut records: Vec<SampleRecord> = flights
            .par_iter()
            .map(|f| {
                let (target, ok) = match oracle.evaluate(f) {
                    Ok((c, converged)) => (c, converged),
                    Err(e) => {
                        log::warn!("oracle failed at {:?}: {e}", f.to_array());
                        (AeroCoefficients::from_array([f64::NAN; 4]), false)
                    }
                };
                SampleRecord {
                    flight: *f,
                    target,
                    valid: ok && target.is_finite(),
                    split: Split::None,
                }
            })
            .collect();
        apply_fence(&mut records, FENCE_FACTOR);
        let mut ds = Dataset {
            records,
            seed: Some(seed),
            oracle_hash: Some(oracle.config.hash()),
        };
        let valid = ds.valid_count();
        if valid < 2 {
            return Err(Error::Data(format!(
                "only {valid} valid records out of {n}"
            )));
        }
        ds.split(n_train, seed)?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.records.iter().filter(|r| r.valid).count()
    }

    /// Seeded shuffle of the valid records; the first `n_train` train, the
    /// rest validate.
    pub fn split(&mut self, n_train: usize, seed: u64) -> Result<()> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.records[i].valid).collect();
        if n_train == 0 || n_train >= idx.len() {
            return Err(Error::InvalidArgument(format!(
                "training size {n_train} must lie in [1, {}) for {} valid records",
                idx.len(),
                idx.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(SPLIT_STREAM));
        idx.shuffle(&mut rng);
        for r in &mut self.records {
            r.split = Split::None;
        }
        for (pos, &i) in idx.iter().enumerate() {
            self.records[i].split = if pos < n_train {
                Split::Train
            } else {
                Split::Val
            };
        }
        Ok(())
    }

    fn subset(&self, split: Split) -> Vec<Sample> {
        self.records
            .iter()
            .filter(|r| r.valid && r.split == split)
            .map(|r| r.sample())
            .collect()
    }

    pub fn train(&self) -> Vec<Sample> {
        self.subset(Split::Train)
    }

    pub fn val(&self) -> Vec<Sample> {
        self.subset(Split::Val)
    }

    /// Every valid record, in file order.
    pub fn valid(&self) -> Vec<Sample> {
        self.records
            .iter()
            .filter(|r| r.valid)
            .map(|r| r.sample())
            .collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = INPUT_NAMES
            .iter()
            .chain(&OUTPUT_NAMES)
            .copied()
            .chain(["valid", "split"])
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row: Vec<String> = r.flight.to_array().iter().map(|v| v.to_string()).collect();
            row.extend(r.target.to_array().iter().map(|v| v.to_string()));
            row.push(u8::from(r.valid).to_string());
            row.push(r.split.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ascii output"))
    }

    /// Parses the dataset CSV; `path` only labels errors.
    pub fn from_csv_str(s: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(s.as_bytes());
        let header = rd
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let expected: Vec<&str> = INPUT_NAMES
            .iter()
            .chain(&OUTPUT_NAMES)
            .copied()
            .chain(["valid", "split"])
            .collect();
        for (k, want) in expected.iter().enumerate() {
            match header.get(k) {
                Some(got) if got.trim() == *want => {}
                Some(got) => {
                    return Err(parse_err(
                        1,
                        format!("column {} is `{got}`, expected `{want}`", k + 1),
                    ))
                }
                None => return Err(parse_err(1, format!("missing column `{want}`"))),
            }
        }
        if header.len() != expected.len() {
            return Err(parse_err(
                1,
                format!("unexpected extra column `{}`", &header[expected.len()]),
            ));
        }
        let mut records = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("column `{}`: {e}", expected[k])))
            };
            let x: [f64; 7] = [
                num(0)?,
                num(1)?,
                num(2)?,
                num(3)?,
                num(4)?,
                num(5)?,
                num(6)?,
            ];
            let y: [f64; 4] = [num(7)?, num(8)?, num(9)?, num(10)?];
            let valid = match rec[11].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(parse_err(
                        line,
                        format!("column `valid`: expected 0 or 1, got `{other}`"),
                    ))
                }
            };
            let split = match rec[12].trim() {
                "train" => Split::Train,
                "val" => Split::Val,
                "none" | "" => Split::None,
                other => {
                    return Err(parse_err(
                        line,
                        format!("column `split`: unknown split `{other}`"),
                    ))
                }
            };
            if split != Split::None && !valid {
                return Err(parse_err(line, "invalid record assigned to a split".into()));
            }
            records.push(SampleRecord {
                flight: FlightState::from_array(x),
                target: AeroCoefficients::from_array(y),
                valid,
                split,
            });
        }
        Ok(Dataset {
            records,
            seed: None,
            oracle_hash: None,
        })
    }

    /// Writes the CSV and its provenance sidecar (`<stem>.json`).
    pub fn save(&self, path: impl AsRef<Path>, oracle: Option<&OracleConfig>) -> Result<PathBuf> {
        let path = path.as_ref();
        let csv = self.to_csv_string()?;
        std::fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let prov = Provenance {
            seed: self.seed,
            oracle_hash: self.oracle_hash.clone(),
            oracle: oracle.cloned(),
            records: self.len(),
            valid: self.valid_count(),
            train: self.train().len(),
            val: self.val().len(),
            hover_rpm: HOVER_RPM,
            csv_sha256: hex(&Sha256::digest(csv.as_bytes())),
        };
        std::fs::write(&side, serde_json::to_string_pretty(&prov)? + "\n")
            .map_err(|e| Error::io(&side, e))?;
        Ok(side)
    }

    /// Reads the CSV and, when present, the sidecar's seed and oracle hash.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ds = Self::from_csv_str(&s, path)?;
        let side = sidecar_path(path);
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let prov: Provenance = serde_json::from_str(&text)?;
            ds.seed = prov.seed;
            ds.oracle_hash = prov.oracle_hash;
        }
        Ok(ds)
    }
}

/// Sidecar describing how a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub oracle_hash: Option<String>,
    pub oracle: Option<OracleConfig>,
    pub records: usize,
    pub valid: usize,
    pub train: usize,
    pub val: usize,
    pub hover_rpm: f64,
    pub csv_sha256: String,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lhs_stratifies_every_dimension() {
        let b = Bounds::default();
        let s = lhs_sample(&b, 100, 7).unwrap();
        assert_eq!(s.len(), 100);
        for k in 0..7 {
            let mut idx: Vec<usize> = s
                .iter()
                .map(|f| stratum(f.to_array()[k], b.lower[k], b.upper[k], 100))
                .collect();
            idx.sort();
            assert_eq!(idx, (0..100).collect::<Vec<_>>());
        }
        assert!(s.iter().all(|f| b.violations(f).is_empty()));
        assert_eq!(s, lhs_sample(&b, 100, 7).unwrap());
        assert_ne!(s, lhs_sample(&b, 100, 8).unwrap());
        let one = lhs_sample(&b, 1, 3).unwrap();
        assert!(b.violations(&one[0]).is_empty());
        assert!(lhs_sample(&b, 0, 3).is_err());
    }

    proptest! {
        #[test]
        fn lhs_stratification_holds_for_any_size(n in 1usize..60, seed in any::<u64>()) {
            let b = Bounds::default();
            let s = lhs_sample(&b, n, seed).unwrap();
            for k in 0..7 {
                let mut idx: Vec<usize> = s.iter().map(|f| stratum(f.to_array()[k], b.lower[k], b.upper[k], n)).collect();
                idx.sort();
                prop_assert_eq!(idx, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn oracle_zero_lift_point() {
        let mut o = Oracle::new(AircraftConfig::default(), OracleConfig::default()).unwrap();
        o.aircraft_mut().props.hover_rpm = 0.0;
        let f = FlightState::from_array([30.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (c, ok) = o.evaluate(&f).unwrap();
        assert!(ok);
        assert!(c.cl.abs() <= 1e-10);
        assert!((c.cd - 0.03).abs() <= 1e-10);
        assert!((c.cm + 0.02).abs() <= 1e-10);
        assert_eq!(o.evaluate(&f).unwrap().0, c);
    }

    #[test]
    fn oracle_differs_from_low_fidelity() {
        let o = Oracle::new(AircraftConfig::default(), OracleConfig::default()).unwrap();
        let lf = Aircraft::new(AircraftConfig::default()).unwrap();
        for f in lhs_sample(&Bounds::default(), 20, 11).unwrap() {
            let a = o.evaluate(&f).unwrap().0.to_array();
            let b = lf.lf_forward(&f).unwrap().coefficients.to_array();
            let gap = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(gap >= 0.01, "{:?}", f.to_array());
        }
    }

    #[test]
    fn oracle_hash_tracks_constants() {
        let a = OracleConfig::default();
        let mut b = a.clone();
        b.cd0 = 0.031;
        assert_eq!(a.hash(), OracleConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let text = toml::to_string(&a).unwrap();
        assert_eq!(OracleConfig::from_toml_str(&text).unwrap(), a);
    }

    fn synthetic(n: usize) -> Dataset {
        let flights = lhs_sample(&Bounds::default(), n, 1).unwrap();
        Dataset {
            records: flights
                .into_iter()
                .enumerate()
                .map(|(i, f)| SampleRecord {
                    flight: f,
                    target: AeroCoefficients::from_array([0.1 * i as f64, 0.02, -1e-3 / 3.0, 0.1]),
                    valid: true,
                    split: Split::None,
                })
                .collect(),
            seed: Some(1),
            oracle_hash: None,
        }
    }

    #[test]
    fn split_contract() {
        let mut d = synthetic(87);
        d.split(70, 4).unwrap();
        assert_eq!((d.train().len(), d.val().len()), (70, 17));
        let first = d.clone();
        d.split(70, 4).unwrap();
        assert_eq!(d, first);
        d.split(86, 4).unwrap();
        assert_eq!(d.val().len(), 1);
        assert!(d.split(87, 4).is_err());
        let train = d.train();
        assert!(d.val().iter().all(|v| !train.contains(v)));
    }

    #[test]
    fn fence_drops_outliers_and_nan_excluded() {
        let mut d = synthetic(30);
        d.records[3].target.cd = 50.0;
        d.records[4].target.cm = f64::NAN;
        d.records[4].valid = false;
        apply_fence(&mut d.records, FENCE_FACTOR);
        assert!(!d.records[3].valid);
        assert_eq!(d.valid_count(), 28);
        d.split(20, 0).unwrap();
        assert!(d
            .train()
            .iter()
            .chain(&d.val())
            .all(|s| s.target.is_finite()));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let mut d = synthetic(87);
        d.records[5].valid = false;
        d.records[5].target.cl = f64::NAN;
        d.split(70, 2).unwrap();
        d.save(&p, Some(&OracleConfig::default())).unwrap();
        let back = Dataset::load(&p).unwrap();
        assert_eq!(back.len(), 87);
        for (a, b) in d.records.iter().zip(&back.records) {
            for (x, y) in a.flight.to_array().iter().zip(b.flight.to_array()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.target.to_array().iter().zip(b.target.to_array()) {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
            assert_eq!((a.valid, a.split), (b.valid, b.split));
        }
        assert_eq!(back.seed, Some(1));
        assert_eq!((back.train().len(), back.val().len()), (70, 16));
    }

    #[test]
    fn csv_errors_name_line_and_column() {
        let p = Path::new("x.csv");
        let bad_header =
            "v,alpha,omega_star,omega_port,theta_star,theta_port,elev,CL,CD,Cl,Cm,valid,split\n";
        let e = Dataset::from_csv_str(bad_header, p)
            .unwrap_err()
            .to_string();
        assert!(e.contains("`elev`") && e.contains("theta_elev"), "{e}");
        let good = Dataset {
            records: synthetic(3).records,
            seed: None,
            oracle_hash: None,
        }
        .to_csv_string()
        .unwrap();
        let broken = good.replacen("0.02", "abc", 2);
        match Dataset::from_csv_str(&broken, p).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("CD"), "{message}");
            }
            e => panic!("{e}"),
        }
    }
}
