//! Engineered section/capacity features, Pearson correlation and
//! rank-aggregated feature selection.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Specimen;
use crate::error::{Error, Result};
use crate::num::{mean, Real};

/// Canonical feature vocabulary: five raw inputs followed by the fourteen
/// engineered quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureName {
    D,
    #[serde(rename = "t")]
    T,
    L,
    #[serde(rename = "fy")]
    Fy,
    #[serde(rename = "fc")]
    Fc,
    As,
    Ac,
    Asc,
    C,
    #[serde(rename = "D_over_t")]
    DOverT,
    Vs,
    Vc,
    #[serde(rename = "xi")]
    Xi,
    Nu0,
    Ns,
    Nc,
    #[serde(rename = "SEF")]
    Sef,
    #[serde(rename = "alpha_sc")]
    AlphaSc,
    #[serde(rename = "lambda")]
    Lambda,
}

impl FeatureName {
    pub const ALL: [FeatureName; 19] = [
        FeatureName::D,
        FeatureName::T,
        FeatureName::L,
        FeatureName::Fy,
        FeatureName::Fc,
        FeatureName::As,
        FeatureName::Ac,
        FeatureName::Asc,
        FeatureName::C,
        FeatureName::DOverT,
        FeatureName::Vs,
        FeatureName::Vc,
        FeatureName::Xi,
        FeatureName::Nu0,
        FeatureName::Ns,
        FeatureName::Nc,
        FeatureName::Sef,
        FeatureName::AlphaSc,
        FeatureName::Lambda,
    ];

    /// The ten network inputs used by the reference model.
    pub const PUBLISHED_SELECTION: [FeatureName; 10] = [
        FeatureName::Nu0,
        FeatureName::As,
        FeatureName::Vc,
        FeatureName::Vs,
        FeatureName::D,
        FeatureName::Ac,
        FeatureName::Asc,
        FeatureName::C,
        FeatureName::Ns,
        FeatureName::Fc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureName::D => "D",
            FeatureName::T => "t",
            FeatureName::L => "L",
            FeatureName::Fy => "fy",
            FeatureName::Fc => "fc",
            FeatureName::As => "As",
            FeatureName::Ac => "Ac",
            FeatureName::Asc => "Asc",
            FeatureName::C => "C",
            FeatureName::DOverT => "D_over_t",
            FeatureName::Vs => "Vs",
            FeatureName::Vc => "Vc",
            FeatureName::Xi => "xi",
            FeatureName::Nu0 => "Nu0",
            FeatureName::Ns => "Ns",
            FeatureName::Nc => "Nc",
            FeatureName::Sef => "SEF",
            FeatureName::AlphaSc => "alpha_sc",
            FeatureName::Lambda => "lambda",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown feature `{s}`")))
    }
}

/// Engineered quantities of one specimen. Areas in mm², volumes in mm³,
/// forces in kN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Engineered<T> {
    pub a_s: T,
    pub a_c: T,
    pub a_sc: T,
    pub perimeter: T,
    pub d_over_t: T,
    pub v_s: T,
    pub v_c: T,
    pub xi: T,
    pub nu0: T,
    pub n_s: T,
    pub n_c: T,
    pub sef: T,
    pub alpha_sc: T,
    pub lambda: T,
}

pub fn engineer<T: Real>(s: &Specimen<T>) -> Engineered<T> {
    let quarter_pi = T::FRAC_PI_4();
    let kilo = T::lit(1000.0);
    let core = s.d - s.t - s.t;
    let a_s = quarter_pi * (s.d * s.d - core * core);
    let a_c = quarter_pi * core * core;
    let n_s = a_s * s.fy / kilo;
    let n_c = a_c * s.fc / kilo;
    Engineered {
        a_s,
        a_c,
        a_sc: a_s + a_c,
        perimeter: T::PI() * s.d,
        d_over_t: s.d / s.t,
        v_s: a_s * s.l,
        v_c: a_c * s.l,
        xi: a_s * s.fy / (a_c * s.fc),
        nu0: n_s + n_c,
        n_s,
        n_c,
        sef: s.d / (s.t * (s.fy / T::lit(235.0)).sqrt()),
        alpha_sc: a_s / a_c,
        lambda: T::lit(4.0) * s.l / s.d,
    }
}

/// Raw and engineered values of one specimen, addressable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRecord<T> {
    pub specimen: [T; 5],
    pub engineered: Engineered<T>,
}

impl<T: Real> FeatureRecord<T> {
    pub fn new(s: &Specimen<T>) -> Self {
        FeatureRecord { specimen: [s.d, s.t, s.l, s.fy, s.fc], engineered: engineer(s) }
    }

    pub fn get(&self, name: FeatureName) -> T {
        let e = &self.engineered;
        match name {
            FeatureName::D => self.specimen[0],
            FeatureName::T => self.specimen[1],
            FeatureName::L => self.specimen[2],
            FeatureName::Fy => self.specimen[3],
            FeatureName::Fc => self.specimen[4],
            FeatureName::As => e.a_s,
            FeatureName::Ac => e.a_c,
            FeatureName::Asc => e.a_sc,
            FeatureName::C => e.perimeter,
            FeatureName::DOverT => e.d_over_t,
            FeatureName::Vs => e.v_s,
            FeatureName::Vc => e.v_c,
            FeatureName::Xi => e.xi,
            FeatureName::Nu0 => e.nu0,
            FeatureName::Ns => e.n_s,
            FeatureName::Nc => e.n_c,
            FeatureName::Sef => e.sef,
            FeatureName::AlphaSc => e.alpha_sc,
            FeatureName::Lambda => e.lambda,
        }
    }

    pub fn select(&self, names: &[FeatureName]) -> Vec<T> {
        names.iter().map(|&n| self.get(n)).collect()
    }
}

/// Named feature columns plus the capacity label (kN, untransformed).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame<T> {
    names: Vec<FeatureName>,
    columns: Vec<Vec<T>>,
    label: Vec<T>,
}

impl<T: Real> FeatureFrame<T> {
    pub fn new(names: Vec<FeatureName>, columns: Vec<Vec<T>>, label: Vec<T>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: columns.len() });
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate feature `{n}`")));
            }
        }
        for c in &columns {
            if c.len() != label.len() {
                return Err(Error::DimensionMismatch { expected: label.len(), got: c.len() });
            }
        }
        Ok(FeatureFrame { names, columns, label })
    }

    pub fn from_specimens(specimens: &[Specimen<T>], names: &[FeatureName]) -> Result<Self> {
        let records: Vec<_> = specimens.iter().map(FeatureRecord::new).collect();
        let columns = names.iter().map(|&n| records.iter().map(|r| r.get(n)).collect()).collect();
        Self::new(names.to_vec(), columns, specimens.iter().map(|s| s.n).collect())
    }

    /// Every feature in the canonical vocabulary.
    pub fn full(specimens: &[Specimen<T>]) -> Result<Self> {
        Self::from_specimens(specimens, &FeatureName::ALL)
    }

    pub fn names(&self) -> &[FeatureName] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<T>] {
        &self.columns
    }

    pub fn label(&self) -> &[T] {
        &self.label
    }

    pub fn n_rows(&self) -> usize {
        self.label.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: FeatureName) -> Option<&[T]> {
        self.names.iter().position(|&n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    pub fn select(&self, names: &[FeatureName]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|&n| self.column(n).map(<[T]>::to_vec).ok_or_else(|| Error::MissingColumn(n.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(names.to_vec(), columns, self.label.clone())
    }

    pub fn take_rows(&self, indices: &[usize]) -> Self {
        FeatureFrame {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| indices.iter().map(|&i| c[i]).collect()).collect(),
            label: indices.iter().map(|&i| self.label[i]).collect(),
        }
    }

    /// CSV with the frame's column order followed by `N_kN`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(|n| n.as_str()).collect();
        header.push("N_kN");
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.columns.iter().map(|c| c[i].to_string()).collect();
            rec.push(self.label[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Pearson correlation with population moments.
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::invalid("pearson needs at least two observations"));
    }
    let (mx, my) = (mean(x).unwrap(), mean(y).unwrap());
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Symmetric correlation matrix over the frame's features plus the label
/// (named `N`). `None` marks an undefined entry (constant column).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix<T> {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<T>>>,
}

impl<T: Real> CorrelationMatrix<T> {
    pub fn get(&self, a: &str, b: &str) -> Option<T> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.values[i][j]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into())));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn correlation_matrix<T: Real>(frame: &FeatureFrame<T>) -> Result<CorrelationMatrix<T>> {
    if frame.n_rows() == 0 {
        return Err(Error::invalid("empty frame"));
    }
    let mut names: Vec<String> = frame.names.iter().map(|n| n.to_string()).collect();
    names.push("N".into());
    let cols: Vec<&[T]> = frame.columns.iter().map(Vec::as_slice).chain(std::iter::once(frame.label.as_slice())).collect();
    let k = cols.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        values[i][i] = Some(T::one());
        for j in (i + 1)..k {
            let r = pearson(cols[i], cols[j]).ok();
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { names, values })
}

/// Features ordered most important first.
pub type Ranking = Vec<FeatureName>;

/// Orders features by descending score; ties by canonical order.
pub fn rank_by_score<T: Real>(scores: &[(FeatureName, T)]) -> Ranking {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(n, _)| n).collect()
}

/// |ρ(feature, label)| for every column; undefined correlations score 0.
pub fn label_correlations<T: Real>(frame: &FeatureFrame<T>) -> Vec<(FeatureName, T)> {
    frame
        .names
        .iter()
        .zip(&frame.columns)
        .map(|(&n, c)| (n, pearson(c, &frame.label).map(T::abs).unwrap_or_else(|_| T::zero())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Borda rank sums across the three importance rankings.
    #[default]
    Consensus,
    /// The published ten-feature list.
    Published,
}

/// Consensus feature subset. Each ranking awards `V - position` points
/// (`V` = vocabulary size); the `k` highest totals win, ties broken by
/// canonical vocabulary order.
pub fn select_features(
    rank_pcc: &[FeatureName],
    rank_shap: &[FeatureName],
    rank_mdi: &[FeatureName],
    k: usize,
    mode: SelectionMode,
) -> Result<Vec<FeatureName>> {
    if mode == SelectionMode::Published {
        if k > FeatureName::PUBLISHED_SELECTION.len() {
            return Err(Error::invalid(format!("k = {k} exceeds the fixed list")));
        }
        return Ok(FeatureName::PUBLISHED_SELECTION[..k].to_vec());
    }
    let mut vocab = rank_pcc.to_vec();
    vocab.sort();
    for r in [rank_shap, rank_mdi] {
        let mut other = r.to_vec();
        other.sort();
        if other != vocab {
            return Err(Error::invalid("rankings cover different candidate sets"));
        }
    }
    if vocab.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("ranking lists a feature twice"));
    }
    if k > vocab.len() {
        return Err(Error::invalid(format!("k = {k} exceeds vocabulary size {}", vocab.len())));
    }
    let v = vocab.len();
    let mut scores: Vec<(FeatureName, usize)> = vocab
        .iter()
        .map(|&f| {
            let pts = [rank_pcc, rank_shap, rank_mdi]
                .iter()
                .map(|r| v - r.iter().position(|&g| g == f).unwrap())
                .sum();
            (f, pts)
        })
        .collect();
    scores.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scores.into_iter().take(k).map(|(f, _)| f).collect())
}
