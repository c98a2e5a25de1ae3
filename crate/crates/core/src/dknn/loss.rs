//! Hybrid loss: supervised MSE plus γ-weighted domain penalties, with the
//! gradient taken by reverse-mode differentiation through the network.

use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, Result};
use crate::features::FeatureName;
use crate::num::Real;
use crate::seed;

/// Features the capacity is expected to increase with.
pub const MONOTONE_CANDIDATES: [FeatureName; 9] = [
    FeatureName::As,
    FeatureName::Ac,
    FeatureName::Asc,
    FeatureName::D,
    FeatureName::C,
    FeatureName::Nu0,
    FeatureName::Ns,
    FeatureName::Vs,
    FeatureName::Vc,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSpec {
    /// Weight γ of the domain losses.
    pub gamma: f64,
    /// Approximate band `[κl·Nu0, κu·Nu0]`; `None` disables the penalty.
    pub bounds: Option<(f64, f64)>,
    pub monotone_features: Vec<FeatureName>,
    /// Maximum dominance pairs per batch; more are subsampled.
    pub pair_budget: usize,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec {
            gamma: 0.1,
            bounds: Some((0.7, 2.2)),
            monotone_features: MONOTONE_CANDIDATES.to_vec(),
            pair_budget: 512,
        }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma = {} must be finite and >= 0", self.gamma)));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Config(format!("bounds ({lo}, {hi}) must satisfy 0 < lower < upper")));
            }
        }
        if let Some(f) = self.monotone_features.iter().find(|f| !MONOTONE_CANDIDATES.contains(f)) {
            return Err(Error::Config(format!("{f} is not an admissible monotone feature")));
        }
        if self.pair_budget == 0 {
            return Err(Error::Config("pair_budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// Model family of the ablation study, all expressed as a [`ConstraintSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Plain network, γ = 0.
    Ann,
    /// Approximate-band constraint only.
    Annwa,
    /// Monotonicity constraint only.
    Annwm,
    /// Both constraints.
    Annwt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ann, Variant::Annwa, Variant::Annwm, Variant::Annwt];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ann => "ANN",
            Variant::Annwa => "ANNWA",
            Variant::Annwm => "ANNWM",
            Variant::Annwt => "ANNWT",
        }
    }

    /// Derives the variant's spec from a fully constrained `base`.
    pub fn constraint(self, base: &ConstraintSpec) -> ConstraintSpec {
        let mut s = base.clone();
        match self {
            Variant::Ann => s.gamma = 0.0,
            Variant::Annwa => s.monotone_features.clear(),
            Variant::Annwm => s.bounds = None,
            Variant::Annwt => {}
        }
        s
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

#[inline]
fn relu<T: Real>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

pub fn loss_supervised<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: target.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty prediction vector"));
    }
    let se: T = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(se / T::from_usize_lossy(pred.len()))
}

/// `Σ [relu(yl − p) + relu(p − yu)] / n`: distance outside the band.
pub fn loss_approx<T: Real>(pred: &[T], yl: &[T], yu: &[T]) -> Result<T> {
    if yl.len() != pred.len() || yu.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), got: yl.len().min(yu.len()) });
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty prediction vector"));
    }
    if let Some(i) = (0..yl.len()).find(|&i| yl[i].partial_cmp(&yu[i]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::invalid(format!("bound ordering violated at row {i}: {} >= {}", yl[i], yu[i])));
    }
    let total: T = (0..pred.len()).map(|i| relu(yl[i] - pred[i]) + relu(pred[i] - yu[i])).sum();
    Ok(total / T::from_usize_lossy(pred.len()))
}

/// True when row `b` dominates row `a`: `b ≥ a` on every column and
/// `b > a` on every column in `monotone`.
#[inline]
pub fn dominates<T: Real>(b: &[T], a: &[T], monotone: &[usize]) -> bool {
    !monotone.is_empty() && monotone.iter().all(|&j| b[j] > a[j]) && a.iter().zip(b).all(|(x, y)| y >= x)
}

/// Ordered pairs `(a, b)` with `b` dominating `a`, in row-major order.
pub fn dominance_pairs<T: Real>(rows: &[Vec<T>], monotone: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if monotone.is_empty() {
        return pairs;
    }
    for a in 0..rows.len() {
        for b in 0..rows.len() {
            if a != b && dominates(&rows[b], &rows[a], monotone) {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Keeps at most `budget` pairs, chosen uniformly at random (order kept).
pub fn subsample_pairs(mut pairs: Vec<(usize, usize)>, budget: usize, rng: &mut seed::Rng) -> Vec<(usize, usize)> {
    if pairs.len() <= budget {
        return pairs;
    }
    let mut keep = rand::seq::index::sample(rng, pairs.len(), budget).into_vec();
    keep.sort_unstable();
    let picked = keep.iter().map(|&i| pairs[i]).collect();
    pairs.clear();
    picked
}

/// `Σ relu(p_a − p_b) / n_pairs`; zero without pairs.
pub fn loss_monotone<T: Real>(pred: &[T], pairs: &[(usize, usize)]) -> T {
    if pairs.is_empty() {
        return T::zero();
    }
    let total: T = pairs.iter().map(|&(a, b)| relu(pred[a] - pred[b])).sum();
    total / T::from_usize_lossy(pairs.len())
}

/// Inputs of one loss evaluation. Everything is in transformed label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// Normalized network inputs.
    pub x: Vec<Vec<T>>,
    pub y: Vec<T>,
    /// Per-row `(yl, yu)`; absent when the band penalty is off.
    pub bounds: Option<(Vec<T>, Vec<T>)>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub supervised: T,
    pub approx: T,
    pub monotone: T,
    pub total: T,
}

/// Loss components and, if `grad` is given, their gradient with respect to
/// the flat network parameters (overwritten).
pub fn loss_total<T: Real>(net: &Network<T>, batch: &Batch<T>, gamma: T, grad: Option<&mut [T]>) -> Result<LossParts<T>> {
    let n = batch.x.len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if batch.y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: batch.y.len() });
    }
    let traces: Vec<_> = batch.x.iter().map(|x| net.trace(x)).collect();
    let pred: Vec<T> = traces.iter().map(|t| t.output()).collect();
    let supervised = loss_supervised(&pred, &batch.y)?;
    let approx = match &batch.bounds {
        Some((yl, yu)) => loss_approx(&pred, yl, yu)?,
        None => T::zero(),
    };
    let monotone = loss_monotone(&pred, &batch.pairs);
    let total = supervised + gamma * (approx + monotone);

    if let Some(grad) = grad {
        if grad.len() != net.n_params() {
            return Err(Error::DimensionMismatch { expected: net.n_params(), got: grad.len() });
        }
        grad.iter_mut().for_each(|g| *g = T::zero());
        let nf = T::from_usize_lossy(n);
        let two = T::lit(2.0);
        let mut d_pred: Vec<T> = (0..n).map(|i| two * (pred[i] - batch.y[i]) / nf).collect();
        if gamma > T::zero() {
            if let Some((yl, yu)) = &batch.bounds {
                for i in 0..n {
                    if pred[i] < yl[i] {
                        d_pred[i] = d_pred[i] - gamma / nf;
                    }
                    if pred[i] > yu[i] {
                        d_pred[i] = d_pred[i] + gamma / nf;
                    }
                }
            }
            if !batch.pairs.is_empty() {
                let w = gamma / T::from_usize_lossy(batch.pairs.len());
                for &(a, b) in &batch.pairs {
                    if pred[a] > pred[b] {
                        d_pred[a] = d_pred[a] + w;
                        d_pred[b] = d_pred[b] - w;
                    }
                }
            }
        }
        for (tr, &d) in traces.iter().zip(&d_pred) {
            net.backward(tr, d, grad);
        }
    }
    Ok(LossParts { supervised, approx, monotone, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn supervised_examples() {
        assert_eq!(loss_supervised(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_supervised(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(loss_supervised(&[2.0, -2.0], &[0.0, 0.0]).unwrap(), 4.0);
        assert!(loss_supervised::<f64>(&[], &[]).is_err());
        assert!(loss_supervised(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn approx_examples() {
        assert_eq!(loss_approx(&[12.0, 19.0], &[10.0, 10.0], &[20.0, 20.0]).unwrap(), 0.0);
        assert_eq!(loss_approx(&[8.0], &[10.0], &[20.0]).unwrap(), 2.0);
        assert_eq!(loss_approx(&[25.0], &[10.0], &[20.0]).unwrap(), 5.0);
        assert_eq!(loss_approx(&[8.0, 25.0], &[10.0, 10.0], &[20.0, 20.0]).unwrap(), 3.5);
        assert!(loss_approx(&[1.0], &[5.0], &[5.0]).is_err());
    }

    #[test]
    fn monotone_examples() {
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let pairs = dominance_pairs(&rows, &[0, 1]);
        assert_eq!(pairs, vec![(0, 1)]);
        assert_eq!(loss_monotone(&[5.0, 3.0], &pairs), 2.0);
        assert_eq!(loss_monotone(&[3.0, 5.0], &pairs), 0.0);
        // translation consistency
        assert_eq!(loss_monotone(&[105.0, 103.0], &pairs), 2.0);
        // incomparable rows
        let rows = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(dominance_pairs(&rows, &[0, 1]).is_empty());
        assert_eq!(loss_monotone::<f64>(&[5.0, 3.0], &[]), 0.0);
        // non-monotone column must not decrease
        let rows = vec![vec![1.0, 5.0], vec![2.0, 4.0]];
        assert!(dominance_pairs(&rows, &[0]).is_empty());
        assert_eq!(dominance_pairs(&[vec![1.0, 5.0], vec![2.0, 5.0]], &[0]), vec![(0, 1)]);
        assert!(dominance_pairs(&[vec![1.0], vec![2.0]], &[]).is_empty());
    }

    #[test]
    fn pair_budget_subsamples_deterministically() {
        let pairs: Vec<(usize, usize)> = (0..100).map(|i| (i, i + 1)).collect();
        let a = subsample_pairs(pairs.clone(), 10, &mut seed::rng(1));
        let b = subsample_pairs(pairs.clone(), 10, &mut seed::rng(1));
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_pairs(pairs.clone(), 200, &mut seed::rng(1)), pairs);
    }

    #[test]
    fn variants_share_one_spec() {
        let base = ConstraintSpec::default();
        assert_eq!(Variant::Ann.constraint(&base).gamma, 0.0);
        assert!(Variant::Annwa.constraint(&base).monotone_features.is_empty());
        assert!(Variant::Annwa.constraint(&base).bounds.is_some());
        assert_eq!(Variant::Annwm.constraint(&base).bounds, None);
        assert_eq!(Variant::Annwt.constraint(&base), base);
        assert_eq!("annwt".parse::<Variant>().unwrap(), Variant::Annwt);
    }

    #[test]
    fn spec_validation() {
        assert!(ConstraintSpec::default().validate().is_ok());
        assert!(ConstraintSpec { gamma: -1.0, ..Default::default() }.validate().is_err());
        assert!(ConstraintSpec { bounds: Some((2.0, 1.0)), ..Default::default() }.validate().is_err());
        let with_fc = ConstraintSpec { monotone_features: vec![FeatureName::Fc], ..Default::default() };
        assert!(with_fc.validate().is_err());
    }

    #[test]
    fn zero_gamma_is_supervised_only() {
        let net = Network::<f64>::init(&[2, 3, 1], 3).unwrap();
        let batch = Batch {
            x: vec![vec![0.1, 0.2], vec![0.4, 0.9]],
            y: vec![1.0, 2.0],
            bounds: Some((vec![5.0, 5.0], vec![6.0, 6.0])),
            pairs: vec![(0, 1)],
        };
        let parts = loss_total(&net, &batch, 0.0, None).unwrap();
        assert_eq!(parts.total, parts.supervised);
        assert!(parts.approx > 0.0);
    }
}
