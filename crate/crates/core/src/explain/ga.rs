use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Field, Specimen, ENVELOPE};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::seed;

/// Genes in [`Field::ALL`] order: D, t, L, fy, fc.
pub type Genes = [f64; 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of the gene range.
    pub mutation_scale: f64,
    pub elite_count: usize,
    pub tournament_size: usize,
    /// Extension factor of blend crossover.
    pub blend_alpha: f64,
    pub seed: u64,
    /// `[min, max]` per gene, D, t, L, fy, fc.
    pub bounds: [(f64, f64); 5],
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 60,
            generations: 100,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_scale: 0.1,
            elite_count: 2,
            tournament_size: 3,
            blend_alpha: 0.5,
            seed: 0,
            bounds: ENVELOPE.map(|b| (b.min, b.max)),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if self.population < 4 {
            return Err(Error::Config("GA population must be >= 4".into()));
        }
        if !rate(self.crossover_rate) || !rate(self.mutation_rate) {
            return Err(Error::Config("GA rates must lie in [0, 1]".into()));
        }
        if self.elite_count >= self.population || self.tournament_size == 0 {
            return Err(Error::Config("elite_count must be below population; tournament_size >= 1".into()));
        }
        if !(self.mutation_scale >= 0.0 && self.blend_alpha >= 0.0) {
            return Err(Error::Config("mutation_scale and blend_alpha must be >= 0".into()));
        }
        if let Some((lo, hi)) = self.bounds.iter().find(|(lo, hi)| !(lo > &0.0 && lo <= hi && hi.is_finite())) {
            return Err(Error::Config(format!("gene bounds ({lo}, {hi}) must be positive and ordered")));
        }
        Ok(())
    }

    /// Gene bounds spanning the observed specimens.
    pub fn bounds_from<T: Real>(specimens: &[Specimen<T>]) -> Result<[(f64, f64); 5]> {
        if specimens.is_empty() {
            return Err(Error::invalid("no specimens to take bounds from"));
        }
        Ok(Field::ALL.map(|f| {
            specimens.iter().map(|s| f.get(s).as_f64()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        }))
    }
}

/// Genes held constant during the search. Fixing `alpha_sc` ties the
/// thickness to the diameter so that As/Ac equals it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedGenes {
    pub d: Option<f64>,
    pub t: Option<f64>,
    pub l: Option<f64>,
    pub fy: Option<f64>,
    pub fc: Option<f64>,
    pub alpha_sc: Option<f64>,
}

/// Wall thickness over diameter giving steel ratio `alpha`:
/// `(D / (D − 2t))² = 1 + α`.
pub fn thickness_ratio(alpha: f64) -> f64 {
    0.5 * (1.0 - 1.0 / (1.0 + alpha).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GaResult<T> {
    pub specimen: Specimen<T>,
    pub genes: Genes,
    /// `|prediction − target|` in kN.
    pub fitness: f64,
    pub prediction: f64,
    /// Best fitness after each generation, generation 0 first.
    pub history: Vec<f64>,
}

struct Search<'a, T, F> {
    capacity: &'a F,
    target: f64,
    bounds: [(f64, f64); 5],
    /// `t = ratio · D` when the steel ratio is fixed.
    t_ratio: Option<f64>,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real, F: Fn(&Specimen<T>) -> Result<T>> Search<'_, T, F> {
    fn repair(&self, g: &mut Genes) {
        for (v, &(lo, hi)) in g.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
        if let Some(k) = self.t_ratio {
            g[1] = k * g[0];
        }
    }

    fn specimen(&self, g: &Genes, n: f64) -> Result<Specimen<T>> {
        Specimen::new(T::lit(g[0]), T::lit(g[1]), T::lit(g[2]), T::lit(g[3]), T::lit(g[4]), T::lit(n), "ga")
    }

    /// Infeasible or non-finite individuals get infinite fitness.
    fn evaluate(&self, g: &Genes) -> (f64, f64) {
        let pred = self.specimen(g, self.target).and_then(|s| (self.capacity)(&s)).map(|v| v.as_f64());
        match pred {
            Ok(p) if p.is_finite() => ((p - self.target).abs(), p),
            _ => (f64::INFINITY, f64::NAN),
        }
    }
}

fn fixed_bounds(fixed: &FixedGenes, config: &GaConfig) -> Result<([(f64, f64); 5], Option<f64>)> {
    let mut b = config.bounds;
    let values = [fixed.d, fixed.t, fixed.l, fixed.fy, fixed.fc];
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if !(v >= b[i].0 && v <= b[i].1) {
                return Err(Error::invalid(format!("fixed {} = {v} outside [{}, {}]", Field::ALL[i], b[i].0, b[i].1)));
            }
            b[i] = (v, v);
        }
    }
    let Some(alpha) = fixed.alpha_sc else {
        if b[1].0 * 2.0 >= b[0].1 {
            return Err(Error::invalid("no thickness in bounds satisfies D > 2t"));
        }
        return Ok((b, None));
    };
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha_sc = {alpha} must be positive")));
    }
    if fixed.t.is_some() {
        return Err(Error::invalid("t and alpha_sc cannot both be fixed"));
    }
    let k = thickness_ratio(alpha);
    // t = k D must stay inside the thickness bounds
    let lo = b[0].0.max(b[1].0 / k);
    let hi = b[0].1.min(b[1].1 / k);
    if lo > hi {
        return Err(Error::invalid(format!("alpha_sc = {alpha} is unrealizable within the D and t bounds")));
    }
    b[0] = (lo, hi);
    b[1] = (k * lo, k * hi);
    Ok((b, Some(k)))
}

/// Real-coded GA minimizing `|capacity(specimen) − target|`.
pub fn ga_invert<T: Real, F>(capacity: &F, target: f64, fixed: &FixedGenes, config: &GaConfig) -> Result<GaResult<T>>
where
    F: Fn(&Specimen<T>) -> Result<T>,
{
    ga_invert_from(capacity, target, fixed, config, &[])
}

/// As [`ga_invert`], with the first individuals of the initial population
/// taken from `initial` (after repair) and the rest drawn uniformly.
pub fn ga_invert_from<T: Real, F>(
    capacity: &F,
    target: f64,
    fixed: &FixedGenes,
    config: &GaConfig,
    initial: &[Genes],
) -> Result<GaResult<T>>
where
    F: Fn(&Specimen<T>) -> Result<T>,
{
    config.validate()?;
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::invalid(format!("target capacity {target} must be positive")));
    }
    let (bounds, t_ratio) = fixed_bounds(fixed, config)?;
    let search = Search { capacity, target, bounds, t_ratio, _scalar: std::marker::PhantomData };
    let mut rng = seed::rng(config.seed);
    let np = config.population;

    let mut pop: Vec<Genes> = Vec::with_capacity(np);
    for g in initial.iter().take(np) {
        let mut g = *g;
        search.repair(&mut g);
        pop.push(g);
    }
    while pop.len() < np {
        let mut g = [0.0; 5];
        for (v, &(lo, hi)) in g.iter_mut().zip(&bounds) {
            *v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        search.repair(&mut g);
        pop.push(g);
    }
    let mut scored: Vec<(f64, f64)> = pop.iter().map(|g| search.evaluate(g)).collect();
    let best_of = |scored: &[(f64, f64)]| {
        (0..scored.len()).min_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0).then(a.cmp(&b))).unwrap()
    };
    let mut history = vec![scored[best_of(&scored)].0];
    let sigma: Vec<f64> = bounds.iter().map(|(lo, hi)| config.mutation_scale * (hi - lo)).collect();
    let tournament = |rng: &mut seed::Rng, scored: &[(f64, f64)]| {
        let mut best = rng.random_range(0..np);
        for _ in 1..config.tournament_size {
            let c = rng.random_range(0..np);
            if scored[c].0 < scored[best].0 {
                best = c;
            }
        }
        best
    };

    for _ in 0..config.generations {
        let mut order: Vec<usize> = (0..np).collect();
        order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0).then(a.cmp(&b)));
        let mut next: Vec<Genes> = order[..config.elite_count].iter().map(|&i| pop[i]).collect();
        let mut next_scored: Vec<(f64, f64)> = order[..config.elite_count].iter().map(|&i| scored[i]).collect();
        while next.len() < np {
            let (a, b) = (pop[tournament(&mut rng, &scored)], pop[tournament(&mut rng, &scored)]);
            let (mut c1, mut c2) = (a, b);
            if rng.random::<f64>() < config.crossover_rate {
                for j in 0..5 {
                    let (lo, hi) = (a[j].min(b[j]), a[j].max(b[j]));
                    let ext = config.blend_alpha * (hi - lo);
                    if hi - lo + 2.0 * ext > 0.0 {
                        c1[j] = rng.random_range(lo - ext..=hi + ext);
                        c2[j] = rng.random_range(lo - ext..=hi + ext);
                    }
                }
            }
            for c in [&mut c1, &mut c2] {
                for j in 0..5 {
                    if sigma[j] > 0.0 && rng.random::<f64>() < config.mutation_rate {
                        let n = Normal::new(0.0, sigma[j]).map_err(|e| Error::Numeric(e.to_string()))?;
                        c[j] += n.sample(&mut rng);
                    }
                }
                search.repair(c);
            }
            for c in [c1, c2] {
                if next.len() < np {
                    next_scored.push(search.evaluate(&c));
                    next.push(c);
                }
            }
        }
        pop = next;
        scored = next_scored;
        history.push(scored[best_of(&scored)].0);
    }

    let best = best_of(&scored);
    let (fitness, prediction) = scored[best];
    if !fitness.is_finite() {
        return Err(Error::Numeric("GA found no feasible individual".into()));
    }
    Ok(GaResult { specimen: search.specimen(&pop[best], prediction)?, genes: pop[best], fitness, prediction, history })
}
