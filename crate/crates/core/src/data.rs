//! Specimens, range validation, CSV persistence, train/validation splits,
//! label transforms and the synthetic specimen generator.
//!
//! Units are fixed: lengths in mm, stresses in MPa, capacities in kN.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codes;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::seed;

/// Exact CSV header, in order.
pub const CSV_HEADER: [&str; 7] = ["D_mm", "t_mm", "L_mm", "fy_MPa", "fc_MPa", "N_kN", "source_id"];

/// One axially loaded circular CFST test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Specimen<T> {
    /// Outer diameter (mm).
    pub d: T,
    /// Wall thickness (mm).
    pub t: T,
    /// Column length (mm).
    pub l: T,
    /// Steel yield strength (MPa).
    pub fy: T,
    /// Concrete cylinder strength (MPa).
    pub fc: T,
    /// Measured capacity (kN).
    pub n: T,
    pub source_id: String,
}

impl<T: Real> Specimen<T> {
    pub fn new(d: T, t: T, l: T, fy: T, fc: T, n: T, source_id: impl Into<String>) -> Result<Self> {
        let s = Specimen { d, t, l, fy, fc, n, source_id: source_id.into() };
        s.validate()?;
        Ok(s)
    }

    /// Hard invariants: all values finite, `D > 2t > 0`, `L, fy, fc, N > 0`.
    pub fn validate(&self) -> Result<()> {
        let fields = [("D", self.d), ("t", self.t), ("L", self.l), ("fy", self.fy), ("fc", self.fc), ("N", self.n)];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidSpecimen(format!("{name} is not finite")));
            }
            if v <= T::zero() {
                return Err(Error::InvalidSpecimen(format!("{name} = {v} must be positive")));
            }
        }
        if self.d <= self.t + self.t {
            return Err(Error::InvalidSpecimen(format!("D = {} must exceed 2t = {}", self.d, self.t + self.t)));
        }
        Ok(())
    }

    /// Envelope fields that fall outside the experimental range.
    pub fn envelope_violations(&self) -> Vec<RangeViolation> {
        ENVELOPE
            .iter()
            .filter_map(|b| {
                let v = b.field.get(self).as_f64();
                (!b.contains(v)).then_some(RangeViolation { field: b.field, value: v, min: b.min, max: b.max })
            })
            .collect()
    }

    /// Steel ratio As/Ac.
    pub fn alpha_sc(&self) -> T {
        let core = self.d - self.t - self.t;
        (self.d * self.d - core * core) / (core * core)
    }
}

/// The five geometric/material inputs that define a specimen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    D,
    T,
    L,
    Fy,
    Fc,
}

impl Field {
    pub const ALL: [Field; 5] = [Field::D, Field::T, Field::L, Field::Fy, Field::Fc];

    pub fn get<T: Real>(self, s: &Specimen<T>) -> T {
        match self {
            Field::D => s.d,
            Field::T => s.t,
            Field::L => s.l,
            Field::Fy => s.fy,
            Field::Fc => s.fc,
        }
    }

    pub fn set<T: Real>(self, s: &mut Specimen<T>, v: T) {
        match self {
            Field::D => s.d = v,
            Field::T => s.t = v,
            Field::L => s.l = v,
            Field::Fy => s.fy = v,
            Field::Fc => s.fc = v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::D => "D",
            Field::T => "t",
            Field::L => "L",
            Field::Fy => "fy",
            Field::Fc => "fc",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub field: Field,
    pub min: f64,
    pub max: f64,
}

impl Bound {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Experimental envelope of the reference database.
pub const ENVELOPE: [Bound; 5] = [
    Bound { field: Field::D, min: 44.95, max: 1020.0 },
    Bound { field: Field::T, min: 0.52, max: 30.0 },
    Bound { field: Field::L, min: 114.3, max: 5560.0 },
    Bound { field: Field::Fy, min: 178.28, max: 1153.0 },
    Bound { field: Field::Fc, min: 6.41, max: 200.0 },
];

pub fn envelope(field: Field) -> Bound {
    ENVELOPE[Field::ALL.iter().position(|f| *f == field).unwrap()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeViolation {
    pub field: Field,
    pub value: f64,
    pub min: f64,
    pub max: f64,
}

impl fmt::Display for RangeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} outside [{}, {}]", self.field, self.value, self.min, self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeMode {
    #[default]
    Warn,
    Reject,
}

/// Ordered specimens plus the split configuration used with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Dataset<T> {
    pub specimens: Vec<Specimen<T>>,
    pub split_seed: u64,
    pub split_fraction: f64,
}

pub const DEFAULT_SPLIT_SEED: u64 = 42;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.8;

impl<T: Real> Dataset<T> {
    pub fn new(specimens: Vec<Specimen<T>>) -> Self {
        Dataset { specimens, split_seed: DEFAULT_SPLIT_SEED, split_fraction: DEFAULT_SPLIT_FRACTION }
    }

    pub fn len(&self) -> usize {
        self.specimens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specimens.is_empty()
    }

    /// Split using the dataset's own seed and fraction.
    pub fn split(&self) -> Result<Split> {
        split(self.len(), self.split_fraction, self.split_seed)
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Specimen<T>> {
        indices.iter().map(|&i| self.specimens[i].clone()).collect()
    }

    pub fn labels(&self) -> Vec<T> {
        self.specimens.iter().map(|s| s.n).collect()
    }
}

/// A warning raised while loading in [`RangeMode::Warn`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowWarning {
    pub row: usize,
    pub violation: RangeViolation,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub dataset: Dataset<T>,
    pub warnings: Vec<RowWarning>,
}

pub fn load_csv<T: Real>(path: impl AsRef<Path>, range_mode: RangeMode) -> Result<Loaded<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, range_mode)
}

/// Parses specimens from CSV. Row numbers in diagnostics are 1-based data
/// rows (the header is not counted).
pub fn read_csv<T: Real, R: Read>(reader: R, range_mode: RangeMode) -> Result<Loaded<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 7];
    for (slot, name) in cols.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut specimens = Vec::new();
    let mut warnings = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |k: usize| -> Result<&str> {
            record.get(cols[k]).ok_or_else(|| Error::Row { row, message: format!("missing value for {}", CSV_HEADER[k]) })
        };
        let mut values = [T::zero(); 6];
        for (k, v) in values.iter_mut().enumerate() {
            let raw = cell(k)?;
            if raw.is_empty() {
                return Err(Error::Row { row, message: format!("missing value for {}", CSV_HEADER[k]) });
            }
            let parsed: f64 = raw
                .parse()
                .map_err(|_| Error::Row { row, message: format!("non-numeric {} = {raw:?}", CSV_HEADER[k]) })?;
            *v = T::lit(parsed);
        }
        let [d, t, l, fy, fc, n] = values;
        let specimen = Specimen::new(d, t, l, fy, fc, n, cell(6)?)
            .map_err(|e| Error::Row { row, message: e.to_string() })?;
        for violation in specimen.envelope_violations() {
            match range_mode {
                RangeMode::Reject => {
                    return Err(Error::Row { row, message: format!("out of range: {violation}") });
                }
                RangeMode::Warn => {
                    log::warn!("row {row}: {violation}");
                    warnings.push(RowWarning { row, violation });
                }
            }
        }
        specimens.push(specimen);
    }
    Ok(Loaded { dataset: Dataset::new(specimens), warnings })
}

pub fn save_csv<T: Real>(path: impl AsRef<Path>, specimens: &[Specimen<T>]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(file, specimens)
}

pub fn write_csv<T: Real, W: Write>(writer: W, specimens: &[Specimen<T>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in specimens {
        w.write_record([
            s.d.to_string(),
            s.t.to_string(),
            s.l.to_string(),
            s.fy.to_string(),
            s.fc.to_string(),
            s.n.to_string(),
            s.source_id.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Disjoint, exhaustive train/validation index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Deterministic shuffled split with `|train| = round(fraction * n)`,
/// clamped so neither side is empty.
pub fn split(n: usize, fraction: f64, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} specimens")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let validation = idx.split_off(n_train);
    Ok(Split { train: idx, validation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelTransform {
    #[default]
    Log,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl LabelTransform {
    pub fn forward<T: Real>(self, y: T) -> Result<T> {
        match self {
            LabelTransform::Log => {
                if y > T::zero() && y.is_finite() {
                    Ok(y.ln())
                } else {
                    Err(Error::invalid(format!("log transform needs a positive label, got {y}")))
                }
            }
            LabelTransform::Identity => Ok(y),
        }
    }

    pub fn inverse<T: Real>(self, z: T) -> T {
        match self {
            LabelTransform::Log => z.exp(),
            LabelTransform::Identity => z,
        }
    }

    pub fn apply<T: Real>(self, y: T, direction: Direction) -> Result<T> {
        match direction {
            Direction::Forward => self.forward(y),
            Direction::Inverse => Ok(self.inverse(y)),
        }
    }
}

/// Bounds on the diameter-to-thickness ratio used by the generator.
pub const SYNTH_D_OVER_T: (f64, f64) = (10.0, 150.0);
/// Bounds on the length-to-diameter ratio used by the generator.
pub const SYNTH_L_OVER_D: (f64, f64) = (1.0, 30.0);

fn log_uniform<R: rand::Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Synthetic specimens inside the envelope, labelled with the Han capacity
/// times mean-one lognormal noise of coefficient of variation `noise_cov`.
///
/// Geometry: D log-uniform; D/t log-uniform within [`SYNTH_D_OVER_T`]
/// intersected with the thickness envelope; L log-uniform with L/D within
/// [`SYNTH_L_OVER_D`] intersected with the length envelope.
pub fn generate_synthetic<T: Real>(n: usize, seed: u64, noise_cov: f64) -> Result<Dataset<T>> {
    if n == 0 {
        return Err(Error::invalid("synthetic dataset needs n >= 1"));
    }
    if !(noise_cov >= 0.0 && noise_cov.is_finite()) {
        return Err(Error::invalid(format!("noise_cov = {noise_cov} must be >= 0")));
    }
    let mut rng = seed::rng(seed);
    let sigma = (1.0 + noise_cov * noise_cov).ln().sqrt();
    let noise = Normal::new(-0.5 * sigma * sigma, sigma).map_err(|e| Error::Numeric(e.to_string()))?;
    let b = |f| envelope(f);

    let mut specimens = Vec::with_capacity(n);
    for i in 0..n {
        let d = log_uniform(&mut rng, b(Field::D).min, b(Field::D).max);
        let r_lo = SYNTH_D_OVER_T.0.max(d / b(Field::T).max);
        let r_hi = SYNTH_D_OVER_T.1.min(d / b(Field::T).min);
        let t = d / log_uniform(&mut rng, r_lo, r_hi);
        let l_lo = (SYNTH_L_OVER_D.0 * d).max(b(Field::L).min);
        let l_hi = (SYNTH_L_OVER_D.1 * d).min(b(Field::L).max);
        let l = log_uniform(&mut rng, l_lo, l_hi);
        let fy = log_uniform(&mut rng, b(Field::Fy).min, b(Field::Fy).max);
        let fc = log_uniform(&mut rng, b(Field::Fc).min, b(Field::Fc).max);
        let factor = if noise_cov > 0.0 { noise.sample(&mut rng).exp() } else { 1.0 };

        let mut s = Specimen {
            d: T::lit(d),
            t: T::lit(t),
            l: T::lit(l),
            fy: T::lit(fy),
            fc: T::lit(fc),
            n: T::one(),
            source_id: format!("synthetic-{i}"),
        };
        let han = codes::han_capacity_kn(&s, codes::FckConvention::Cylinder);
        s.n = if noise_cov > 0.0 { han * T::lit(factor) } else { han };
        s.validate()?;
        specimens.push(s);
    }
    Ok(Dataset::new(specimens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, mode: RangeMode) -> Result<Loaded<f64>> {
        read_csv(text.as_bytes(), mode)
    }

    const HEADER: &str = "D_mm,t_mm,L_mm,fy_MPa,fc_MPa,N_kN,source_id\n";

    #[test]
    fn parses_reference_row() {
        let loaded = parse(&format!("{HEADER}100,5,300,300,30,650,labA\n"), RangeMode::Reject).unwrap();
        let s = &loaded.dataset.specimens[0];
        assert_eq!((s.d, s.t, s.l, s.fy, s.fc, s.n), (100.0, 5.0, 300.0, 300.0, 30.0, 650.0));
        assert_eq!(s.source_id, "labA");
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn rejects_thick_wall_with_row_number() {
        let text = format!("{HEADER}100,5,300,300,30,650,a\n100,60,300,300,30,650,b\n");
        match parse(&text, RangeMode::Warn) {
            Err(Error::Row { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("2t"), "{message}");
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_envelope_warns_or_rejects() {
        let text = format!("{HEADER}2000,10,3000,300,30,6500,big\n");
        let loaded = parse(&text, RangeMode::Warn).unwrap();
        assert_eq!(loaded.dataset.len(), 1);
        assert_eq!(loaded.warnings.len(), 1);
        assert_eq!(loaded.warnings[0].violation.field, Field::D);
        assert!(matches!(parse(&text, RangeMode::Reject), Err(Error::Row { row: 1, .. })));
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            parse("D_mm,t_mm,L_mm,fy_MPa,N_kN,source_id\n1,1,1,1,1,x\n", RangeMode::Warn),
            Err(Error::MissingColumn(c)) if c == "fc_MPa"
        ));
        assert!(matches!(
            parse(&format!("{HEADER}100,abc,300,300,30,650,a\n"), RangeMode::Warn),
            Err(Error::Row { row: 1, .. })
        ));
        assert!(matches!(
            parse(&format!("{HEADER}100,5,300,300,,650,a\n"), RangeMode::Warn),
            Err(Error::Row { row: 1, .. })
        ));
        assert!(matches!(
            parse(&format!("{HEADER}100,5,300,-300,30,650,a\n"), RangeMode::Warn),
            Err(Error::Row { row: 1, .. })
        ));
    }

    #[test]
    fn accepts_crlf() {
        let text = "D_mm,t_mm,L_mm,fy_MPa,fc_MPa,N_kN,source_id\r\n100,5,300,300,30,650,a\r\n";
        assert_eq!(parse(text, RangeMode::Reject).unwrap().dataset.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic::<f64>(50, 3, 0.1).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &ds.specimens).unwrap();
        let back = read_csv::<f64, _>(buf.as_slice(), RangeMode::Warn).unwrap();
        for (a, b) in ds.specimens.iter().zip(&back.dataset.specimens) {
            for f in Field::ALL {
                assert!((f.get(a) - f.get(b)).abs() <= 1e-9 * f.get(a).abs());
            }
            assert!((a.n - b.n).abs() <= 1e-9 * a.n);
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split(10, 0.8, 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (8, 2));
        assert_eq!(s, split(10, 0.8, 7).unwrap());
        assert_ne!(split(100, 0.8, 1).unwrap(), split(100, 0.8, 2).unwrap());
        assert!(split(1, 0.5, 0).is_err());
        assert!(split(10, 1.0, 0).is_err());
        assert!(split(10, 0.0, 0).is_err());
    }

    #[test]
    fn label_transform() {
        let lt = LabelTransform::Log;
        assert_eq!(lt.forward(1.0_f64).unwrap(), 0.0);
        assert!((lt.forward(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!((lt.inverse(lt.forward(650.0_f64).unwrap()) - 650.0).abs() < 1e-9);
        assert!(lt.forward(0.0_f64).is_err());
        assert!(lt.apply(-3.0_f64, Direction::Forward).is_err());
    }

    #[test]
    fn zero_noise_labels_equal_han() {
        let ds = generate_synthetic::<f64>(200, 11, 0.0).unwrap();
        for s in &ds.specimens {
            assert_eq!(s.n, codes::han_capacity_kn(s, codes::FckConvention::Cylinder));
        }
    }

    #[test]
    fn synthetic_is_valid_and_seeded() {
        let ds = generate_synthetic::<f64>(10_000, 5, 0.1).unwrap();
        for s in &ds.specimens {
            s.validate().unwrap();
            assert!(s.envelope_violations().is_empty(), "{s:?}");
        }
        let a = generate_synthetic::<f64>(20, 1, 0.1).unwrap();
        assert_eq!(a, generate_synthetic::<f64>(20, 1, 0.1).unwrap());
        assert_ne!(a, generate_synthetic::<f64>(20, 2, 0.1).unwrap());
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_exhaustive(n in 2usize..300, fraction in 0.01f64..0.99, seed in any::<u64>()) {
            let s = split(n, fraction, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.clone(), split(n, fraction, seed).unwrap());
            prop_assert!(!s.train.is_empty() && !s.validation.is_empty());
        }
    }
}
