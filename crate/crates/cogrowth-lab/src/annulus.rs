//! Thick annuli A_i = {g : i − i^q ≤ ‖g‖ ≤ i}, first hitting times and
//! measures, and the pointwise-decay / Poincaré-divergence experiments built
//! on them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::rng::RngState;
use crate::subgroup::CoreGraph;
use crate::walk::{drift_estimate, EstimatorReport, FirstPassage, SamplePath, Walker};
use crate::word::{StepDistribution, Word};

/// The annulus at radius i with thickness exponent q in (0,1); window
/// [max(0, i − ceil(i^q)), i] in the integer word metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusSpec {
    pub i: usize,
    pub q: f64,
}

pub const DEFAULT_Q: f64 = 0.5;

impl AnnulusSpec {
    pub fn new(i: usize, q: f64) -> Result<Self> {
        if i == 0 {
            return Err(LabError::Precondition("annulus radius must be >= 1".into()));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(LabError::Precondition(format!(
                "thickness exponent q must lie in (0,1), got {q}"
            )));
        }
        Ok(AnnulusSpec { i, q })
    }

    /// Inclusive window of word lengths.
    pub fn window(&self) -> (usize, usize) {
        let width = (self.i as f64).powf(self.q).ceil() as usize;
        (self.i.saturating_sub(width), self.i)
    }

    pub fn contains_len(&self, len: usize) -> bool {
        let (lo, hi) = self.window();
        lo <= len && len <= hi
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingSample {
    pub annulus: AnnulusSpec,
    /// hitting step; None = censored at the path horizon
    pub tau: Option<usize>,
    pub point: Option<Word>,
}

/// Minimal n ≥ 1 with ‖ω_n‖ in the window; censored when no position
/// qualifies within the path.
pub fn first_hitting_time(path: &SamplePath, spec: AnnulusSpec) -> HittingSample {
    for n in 1..path.lengths.len() {
        if spec.contains_len(path.lengths[n]) {
            return HittingSample {
                annulus: spec,
                tau: Some(n),
                point: Some(path.positions[n].clone()),
            };
        }
    }
    HittingSample { annulus: spec, tau: None, point: None }
}

/// Streaming version: walk until the annulus is hit or the horizon runs out.
fn stream_hit(
    mu: &StepDistribution,
    spec: AnnulusSpec,
    horizon: usize,
    state: RngState,
) -> (Option<usize>, Option<Word>) {
    let mut w = Walker::new(mu, state);
    for n in 1..=horizon {
        w.step();
        if spec.contains_len(w.position.len()) {
            return (Some(n), Some(w.position));
        }
    }
    (None, None)
}

/// Quick internal drift estimate on a dedicated stream block, used to size
/// censoring horizons. Returns an error for walks with drift consistent
/// with zero.
fn drift_for_horizon(mu: &StepDistribution, state: RngState) -> Result<f64> {
    let rep = drift_estimate(mu, 300, 100, state.substream(1 << 40))?;
    if rep.value <= (3.0 * rep.std_error).max(0.01) {
        return Err(LabError::Degenerate(format!(
            "drift {} too close to zero to size hitting horizons",
            rep.value
        )));
    }
    Ok(rep.value)
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingRow {
    pub i: usize,
    pub q: f64,
    pub report: EstimatorReport,
    /// mean of τ_i/‖ω_{τ_i}‖: same 1/l limit, but free of the O(i^{q−1})
    /// window-edge bias of τ_i/i
    pub debiased: f64,
    pub censored_fraction: f64,
    pub horizon: usize,
    /// censored fraction below 1%
    pub ok: bool,
    /// censored fraction at or above 10%: experiment invalid
    pub invalid: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingTable {
    pub rows: Vec<HittingRow>,
}

/// Mean τ_i/i across paths, per radius; the law τ_i/i → 1/l(μ).
pub fn hitting_ratio_experiment(
    mu: &StepDistribution,
    i_list: &[usize],
    q: f64,
    m: usize,
    state: RngState,
) -> Result<HittingTable> {
    if m < 10 {
        return Err(LabError::Precondition("need m >= 10 paths".into()));
    }
    let l_hat = drift_for_horizon(mu, state)?;
    let mut rows = Vec::with_capacity(i_list.len());
    for (block, &i) in i_list.iter().enumerate() {
        let spec = AnnulusSpec::new(i, q)?;
        let horizon = (8.0 * i as f64 / l_hat).ceil() as usize;
        let base = state.substream((block as u64) << 32);
        let samples: Vec<Option<(usize, usize)>> = (0..m as u64)
            .into_par_iter()
            .map(|j| {
                let (tau, point) = stream_hit(mu, spec, horizon, base.substream(j));
                tau.map(|t| (t, point.unwrap().len()))
            })
            .collect();
        let hits: Vec<f64> = samples
            .iter()
            .filter_map(|s| s.map(|(tau, _)| tau as f64 / i as f64))
            .collect();
        let ratios: Vec<f64> = samples
            .iter()
            .filter_map(|s| s.map(|(tau, len)| tau as f64 / len as f64))
            .collect();
        let censored_fraction = 1.0 - hits.len() as f64 / m as f64;
        let (value, std_error) = mean_and_stderr(&hits);
        let (debiased, _) = mean_and_stderr(&ratios);
        rows.push(HittingRow {
            i,
            q,
            report: EstimatorReport {
                value,
                std_error,
                n_samples: hits.len() as u64,
                horizon: horizon as u64,
                seed: state.seed,
                stream: state.stream,
                method: "hitting-ratio".into(),
            },
            debiased,
            censored_fraction,
            horizon,
            ok: censored_fraction < 0.01,
            invalid: censored_fraction >= 0.10,
        });
    }
    Ok(HittingTable { rows })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct TanakaRow {
    pub i: usize,
    pub q: f64,
    /// mean of −log F(e, ω_{τ_i})/i; F is the first-passage surrogate
    /// dominating the hitting measure pointwise
    pub report: EstimatorReport,
    pub censored_fraction: f64,
    /// −log ν̂_i(g)/i on the most-hit point, when the empirical measure
    /// resolves it (small i only)
    pub direct_top_point: Option<String>,
    pub direct_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TanakaTable {
    pub rows: Vec<TanakaRow>,
}

/// Pointwise decay of the hitting measure: −log ν_i(ω_{τ_i})/i → δ(μ),
/// observed through the surrogate ν_i(g) ≤ F(e,g).
pub fn tanaka_pointwise_experiment(
    mu: &StepDistribution,
    i_list: &[usize],
    q: f64,
    m: usize,
    f_horizon: usize,
    state: RngState,
) -> Result<TanakaTable> {
    if m < 10 {
        return Err(LabError::Precondition("need m >= 10 paths".into()));
    }
    let fp = FirstPassage::new(mu, f_horizon)?;
    let l_hat = drift_for_horizon(mu, state)?;
    let mut rows = Vec::with_capacity(i_list.len());
    for (block, &i) in i_list.iter().enumerate() {
        let spec = AnnulusSpec::new(i, q)?;
        let horizon = (8.0 * i as f64 / l_hat).ceil() as usize;
        let base = state.substream((block as u64) << 32);
        let points: Vec<Option<Word>> = (0..m as u64)
            .into_par_iter()
            .map(|j| stream_hit(mu, spec, horizon, base.substream(j)).1)
            .collect();
        let values: Vec<f64> = points
            .iter()
            .flatten()
            .map(|g| -fp.log_f(g) / i as f64)
            .collect();
        let censored_fraction = 1.0 - values.len() as f64 / m as f64;
        let (value, std_error) = mean_and_stderr(&values);
        // direct empirical measure only where atoms repeat
        let mut counts: BTreeMap<&Word, u64> = BTreeMap::new();
        for g in points.iter().flatten() {
            *counts.entry(g).or_insert(0) += 1;
        }
        let top = counts.iter().max_by_key(|(w, c)| (**c, std::cmp::Reverse(*w)));
        let (direct_top_point, direct_value) = match top {
            Some((w, &c)) if c >= 20 => {
                let nu = c as f64 / values.len() as f64;
                (Some(w.to_string()), Some(-nu.ln() / i as f64))
            }
            _ => (None, None),
        };
        rows.push(TanakaRow {
            i,
            q,
            report: EstimatorReport {
                value,
                std_error,
                n_samples: values.len() as u64,
                horizon: horizon as u64,
                seed: state.seed,
                stream: state.stream,
                method: "tanaka-first-passage-surrogate".into(),
            },
            censored_fraction,
            direct_top_point,
            direct_value,
        });
    }
    Ok(TanakaTable { rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportCount {
    pub i: usize,
    pub epsilon: f64,
    /// distinct hit points needed to cover ε of the empirical hitting mass
    pub covering_count: usize,
    pub distinct_points: usize,
    pub censored: usize,
    pub total: usize,
    pub delta_hat: f64,
    /// C calibrated at i = 4 from the same run
    pub calibrated_c: f64,
    pub lower_bound: f64,
    pub bound_ok: bool,
    /// μ not generating: the walk explores a single ray or less
    pub degenerate: bool,
}

fn covering_count(points: &[Option<Word>], epsilon: f64) -> (usize, usize, usize) {
    let mut counts: BTreeMap<&Word, u64> = BTreeMap::new();
    let mut censored = 0usize;
    for p in points {
        match p {
            Some(g) => *counts.entry(g).or_insert(0) += 1,
            None => censored += 1,
        }
    }
    let hit_total: u64 = counts.values().sum();
    let mut by_mass: Vec<(&&Word, &u64)> = counts.iter().collect();
    // heaviest first; ties broken by word order for determinism
    by_mass.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let target = epsilon * hit_total as f64;
    let mut acc = 0u64;
    let mut count = 0usize;
    for (_, &c) in &by_mass {
        if acc as f64 >= target {
            break;
        }
        acc += c;
        count += 1;
    }
    (count, counts.len(), censored)
}

/// Number of distinct entry points carrying ε of the hitting mass, checked
/// against the exponential lower bound C·e^{iδ}.
pub fn hitting_support_count(
    mu: &StepDistribution,
    i: usize,
    q: f64,
    epsilon: f64,
    m: usize,
    state: RngState,
) -> Result<SupportCount> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LabError::Precondition("epsilon must lie in (0,1)".into()));
    }
    let degenerate = !mu.validate().generating;
    let k = mu.rank().get() as f64;
    // δ̂ for the scale check: Green-metric route when available, else the
    // uniform-measure value
    let delta_hat = if degenerate {
        0.0
    } else if mu.max_atom_len() <= 1 {
        let h = crate::walk::green_metric_entropy(mu, 200, 100, 50, state.substream(1 << 41))?;
        let l = drift_for_horizon(mu, state)?;
        h.value / l
    } else {
        (2.0 * k - 1.0).ln()
    };
    if !degenerate {
        let required = 100.0 * (i as f64 * delta_hat).exp();
        if (m as f64) < required {
            return Err(LabError::BudgetExceeded(
                format!(
                    "support count at i={i} needs m >= {:.0} samples, got {m}",
                    required
                ),
                required as u64,
            ));
        }
    }
    let l_hat = if degenerate { 1.0 } else { drift_for_horizon(mu, state)? };
    let run = |i: usize, block: u64| -> Result<Vec<Option<Word>>> {
        let spec = AnnulusSpec::new(i, q)?;
        let horizon = (8.0 * i as f64 / l_hat).ceil() as usize;
        let base = state.substream(block << 32);
        Ok((0..m as u64)
            .into_par_iter()
            .map(|j| stream_hit(mu, spec, horizon, base.substream(j)).1)
            .collect())
    };
    let points = run(i, 0)?;
    let (count, distinct, censored) = covering_count(&points, epsilon);
    // Calibrate C on the small annulus i = 4 from this very run. The walk
    // enters the annulus near its lower edge, so the observable count scales
    // with e^{δ·edge}; the edge deficit i − edge is O(i^q) and gets absorbed
    // into C (the run reports the C it certifies).
    let edge = |i: usize, q: f64| -> f64 {
        AnnulusSpec::new(i, q).map(|s| s.window().0.max(1) as f64).unwrap_or(1.0)
    };
    let calib_i = 4.min(i);
    let (calib_count, _, _) = covering_count(&run(calib_i, 1)?, epsilon);
    let lower_bound = 0.5
        * calib_count as f64
        * (delta_hat * (edge(i, q) - edge(calib_i, q))).exp();
    let calibrated_c = lower_bound / (i as f64 * delta_hat).exp();
    let bound_ok = degenerate || count as f64 >= lower_bound;
    Ok(SupportCount {
        i,
        epsilon,
        covering_count: count,
        distinct_points: distinct,
        censored,
        total: m,
        delta_hat,
        calibrated_c,
        lower_bound,
        bound_ok,
        degenerate,
    })
}

/// Membership predicate W over words, with per-shell counts in closed form
/// wherever possible so Poincaré sums need no enumeration.
#[derive(Debug, Clone)]
pub enum VisitPredicate {
    /// all nontrivial words
    All,
    Empty,
    Subgroup(CoreGraph),
    /// nonzero powers of a fixed word
    Axis(Word),
    /// words with ‖γ‖ ≡ r (mod m)
    ModLength { r: usize, m: usize },
    Explicit(std::collections::BTreeSet<Word>),
}

impl VisitPredicate {
    pub fn contains(&self, w: &Word) -> bool {
        if w.is_identity() {
            return false;
        }
        match self {
            VisitPredicate::All => true,
            VisitPredicate::Empty => false,
            VisitPredicate::Subgroup(h) => h.membership(w),
            VisitPredicate::Axis(g) => {
                if g.is_identity() {
                    return false;
                }
                // w = g^m for some m ≠ 0: march powers until too long
                let mut pow = g.clone();
                loop {
                    if &pow == w || pow.inverse() == *w {
                        return true;
                    }
                    match pow.mul(g) {
                        Ok(next) => {
                            if next.len() <= pow.len() || next.len() > w.len() {
                                return false;
                            }
                            pow = next;
                        }
                        Err(_) => return false,
                    }
                }
            }
            VisitPredicate::ModLength { r, m } => w.len() % m == r % m,
            VisitPredicate::Explicit(set) => set.contains(w),
        }
    }

    /// ln(#{γ ∈ W : ‖γ‖ = n}), NEG_INFINITY for zero; exact closed forms.
    fn log_shell_count(&self, rank: crate::word::FreeGroupRank, n: usize) -> f64 {
        if n == 0 {
            return f64::NEG_INFINITY;
        }
        let k = rank.get() as f64;
        let log_sphere =
            (2.0 * k).ln() + (n as f64 - 1.0) * (2.0 * k - 1.0).ln();
        match self {
            VisitPredicate::All => log_sphere,
            VisitPredicate::Empty => f64::NEG_INFINITY,
            VisitPredicate::Subgroup(h) => h.ball_counts(n)[n],
            VisitPredicate::Axis(g) => {
                if g.is_identity() {
                    return f64::NEG_INFINITY;
                }
                let mut count = 0u64;
                let mut pow = g.clone();
                loop {
                    if pow.len() == n {
                        count += if pow == pow.inverse() { 1 } else { 2 };
                    }
                    if pow.len() >= n {
                        break;
                    }
                    match pow.mul(g) {
                        Ok(next) => {
                            if next.len() <= pow.len() {
                                break;
                            }
                            pow = next;
                        }
                        Err(_) => break,
                    }
                }
                if count == 0 {
                    f64::NEG_INFINITY
                } else {
                    (count as f64).ln()
                }
            }
            VisitPredicate::ModLength { r, m } => {
                if n % m == r % m {
                    log_sphere
                } else {
                    f64::NEG_INFINITY
                }
            }
            VisitPredicate::Explicit(set) => {
                let c = set.iter().filter(|w| w.len() == n).count();
                if c == 0 {
                    f64::NEG_INFINITY
                } else {
                    (c as f64).ln()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VisitedPoincare {
    pub s: f64,
    /// rows (j, partial sum up to length j, shell term at j)
    pub rows: Vec<(usize, f64, f64)>,
    /// max shell term over the last 5 nonzero shells
    pub tail_term: f64,
    pub verdict: crate::subgroup::PoincareVerdict,
}

/// j ↦ Σ_{γ ∈ W, ‖γ‖ ≤ j} e^{−s‖γ‖}, shells in closed form (log space).
pub fn visited_set_poincare(
    mu: &StepDistribution,
    w: &VisitPredicate,
    j_max: usize,
    s: f64,
) -> Result<VisitedPoincare> {
    let rank = mu.rank();
    let mut rows = Vec::with_capacity(j_max + 1);
    let mut sum = 0.0f64;
    let mut nonzero_terms: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    for j in 0..=j_max {
        let lc = w.log_shell_count(rank, j);
        let term = if lc.is_finite() { (lc - s * j as f64).exp() } else { 0.0 };
        sum += term;
        if term > 0.0 {
            if let Some(&prev) = nonzero_terms.last() {
                ratios.push(term / prev);
            }
            nonzero_terms.push(term);
        }
        rows.push((j, sum, term));
    }
    let tail_term = nonzero_terms.iter().rev().take(5).fold(0.0f64, |a, &t| a.max(t));
    let tail_ratio = ratios.iter().rev().take(5).fold(0.0f64, |a, &r| a.max(r));
    let verdict = if nonzero_terms.is_empty() || tail_term < 1e-12 || tail_ratio < 0.999 {
        crate::subgroup::PoincareVerdict::Converging
    } else if tail_ratio >= 0.999 && tail_term > 1e-9 {
        crate::subgroup::PoincareVerdict::Diverging
    } else {
        crate::subgroup::PoincareVerdict::Inconclusive
    };
    Ok(VisitedPoincare { s, rows, tail_term, verdict })
}

/// Empirical contact of the walk with W: fraction of steps i ≤ n with
/// ω_i ∈ W, and the hitting-point frequency ε̂ = fraction of entry points
/// ω_{τ_i} landing in W.
#[derive(Debug, Clone, Serialize)]
pub struct PredicateVisitStats {
    pub step_frequency: f64,
    pub hit_frequency: f64,
    pub n_steps: usize,
    pub m_paths: usize,
    pub annulus_i: usize,
    pub censored: usize,
}

pub fn predicate_visit_stats(
    mu: &StepDistribution,
    w: &VisitPredicate,
    annulus_i: usize,
    q: f64,
    n: usize,
    m: usize,
    state: RngState,
) -> Result<PredicateVisitStats> {
    let spec = AnnulusSpec::new(annulus_i, q)?;
    let l_hat = drift_for_horizon(mu, state)?;
    let horizon = (8.0 * annulus_i as f64 / l_hat).ceil() as usize;
    struct PathStats {
        in_w: usize,
        hit_in_w: Option<bool>,
    }
    let per_path: Vec<PathStats> = (0..m as u64)
        .into_par_iter()
        .map(|j| {
            let mut walker = Walker::new(mu, state.substream(j));
            let mut in_w = 0usize;
            let mut hit: Option<bool> = None;
            for step in 1..=horizon.max(n) {
                walker.step();
                if step <= n && w.contains(&walker.position) {
                    in_w += 1;
                }
                if hit.is_none() && spec.contains_len(walker.position.len()) {
                    hit = Some(w.contains(&walker.position));
                }
                if step >= n && hit.is_some() {
                    break;
                }
            }
            PathStats { in_w, hit_in_w: hit }
        })
        .collect();
    let step_frequency = per_path.iter().map(|p| p.in_w as f64 / n as f64).sum::<f64>()
        / m as f64;
    let hits: Vec<bool> = per_path.iter().filter_map(|p| p.hit_in_w).collect();
    let censored = m - hits.len();
    let hit_frequency = if hits.is_empty() {
        0.0
    } else {
        hits.iter().filter(|&&b| b).count() as f64 / hits.len() as f64
    };
    Ok(PredicateVisitStats {
        step_frequency,
        hit_frequency,
        n_steps: n,
        m_paths: m,
        annulus_i,
        censored,
    })
}

/// Length-based weight functions for the weighted Tanaka sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LengthWeight {
    One,
    /// 1/(1+‖g‖)
    InverseLength,
    /// e^{‖g‖}: deliberately violates the subexponential hypothesis
    ExpLength,
}

impl LengthWeight {
    fn log_value(&self, len: usize) -> f64 {
        match self {
            LengthWeight::One => 0.0,
            LengthWeight::InverseLength => -((1 + len) as f64).ln(),
            LengthWeight::ExpLength => len as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightedPoincare {
    pub a: f64,
    pub delta_hat: f64,
    /// rows (i, e^{−(δ̂−a)i}·Σ_{g∈W∩A_i} S(g), running max)
    pub rows: Vec<(usize, f64, f64)>,
    /// limsup witness: running max over the last half stays above zero
    pub positive_witness: bool,
    /// S(ω_n)^{1/n} strayed from 1 on more than 1% of sampled paths
    pub hypothesis_violated: bool,
}

/// limsup_i e^{−(δ−a)i} Σ_{g ∈ W∩A_i} S(g) > 0 witness table; S must be
/// subexponential along the walk.
pub fn weighted_visited_poincare(
    mu: &StepDistribution,
    w: &VisitPredicate,
    s_weight: LengthWeight,
    i_max: usize,
    q: f64,
    a: f64,
    delta_hat: Option<f64>,
    state: RngState,
) -> Result<WeightedPoincare> {
    let rank = mu.rank();
    let delta_hat = match delta_hat {
        Some(d) => d,
        None => {
            let h = crate::walk::green_metric_entropy(mu, 200, 100, 50, state.substream(1 << 42))?;
            let l = drift_for_horizon(mu, state)?;
            h.value / l
        }
    };
    // empirical subexponential check: S(ω_n)^{1/n} within 10% of 1
    let check_n = 200usize;
    let check_m = 100usize;
    let violations: usize = (0..check_m as u64)
        .into_par_iter()
        .map(|j| {
            let mut walker = Walker::new(mu, state.substream((1 << 43) + j));
            for _ in 0..check_n {
                walker.step();
            }
            let root = (s_weight.log_value(walker.position.len()) / check_n as f64).exp();
            usize::from((root - 1.0).abs() > 0.1)
        })
        .sum();
    let hypothesis_violated = violations as f64 > 0.01 * check_m as f64;
    let mut rows = Vec::with_capacity(i_max);
    let mut running_max = 0.0f64;
    for i in 1..=i_max {
        let spec = AnnulusSpec::new(i, q)?;
        let (lo, hi) = spec.window();
        let mut sum = 0.0f64;
        for n in lo..=hi {
            let lc = w.log_shell_count(rank, n);
            if lc.is_finite() {
                sum += (lc + s_weight.log_value(n) - (delta_hat - a) * i as f64).exp();
            }
        }
        running_max = running_max.max(sum);
        rows.push((i, sum, running_max));
    }
    let tail_max = rows
        .iter()
        .skip(i_max / 2)
        .fold(0.0f64, |acc, &(_, _, m)| acc.max(m));
    Ok(WeightedPoincare {
        a,
        delta_hat,
        rows,
        positive_witness: tail_max > 1e-9,
        hypothesis_violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subgroup::{fold, PoincareVerdict};
    use crate::walk::sample_path;
    use crate::word::{sphere_size, FreeGroupRank};

    fn rank2() -> FreeGroupRank {
        FreeGroupRank::new(2).unwrap()
    }

    fn mu2() -> StepDistribution {
        StepDistribution::uniform(rank2())
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(AnnulusSpec::new(4, 0.5).unwrap().window(), (2, 4));
        assert_eq!(AnnulusSpec::new(1, 0.5).unwrap().window(), (0, 1));
        assert_eq!(AnnulusSpec::new(10, 0.5).unwrap().window(), (6, 10));
        assert_eq!(AnnulusSpec::new(50, 0.5).unwrap().window(), (42, 50));
        // clamp at zero
        assert_eq!(AnnulusSpec::new(2, 0.9).unwrap().window(), (0, 2));
    }

    #[test]
    fn spec_rejects_bad_q() {
        assert!(AnnulusSpec::new(5, 1.5).is_err());
        assert!(AnnulusSpec::new(5, 0.0).is_err());
        assert!(AnnulusSpec::new(0, 0.5).is_err());
    }

    #[test]
    fn tau_is_one_at_radius_one() {
        let mu = mu2();
        for s in 0..50 {
            let p = sample_path(&mu, 5, RngState::new(s, 0)).unwrap();
            let h = first_hitting_time(&p, AnnulusSpec::new(1, 0.5).unwrap());
            assert_eq!(h.tau, Some(1));
        }
    }

    #[test]
    fn tau_two_with_probability_three_quarters() {
        // window [2,4]: hit at step 2 iff no backtrack, probability 3/4
        let mu = mu2();
        let spec = AnnulusSpec::new(4, 0.5).unwrap();
        let m = 20_000;
        let mut at_two = 0;
        for j in 0..m {
            let p = sample_path(&mu, 12, RngState::new(3, j)).unwrap();
            if first_hitting_time(&p, spec).tau == Some(2) {
                at_two += 1;
            }
        }
        let freq = at_two as f64 / m as f64;
        let sigma = (0.75f64 * 0.25 / m as f64).sqrt();
        assert!((freq - 0.75).abs() < 4.0 * sigma, "freq {freq}");
    }

    #[test]
    fn point_mass_deterministic_ray_enters_at_lower_edge() {
        let a = Word::parse(rank2(), "a").unwrap();
        let mu = StepDistribution::point_mass(a).unwrap();
        let p = sample_path(&mu, 20, RngState::new(0, 0)).unwrap();
        let h = first_hitting_time(&p, AnnulusSpec::new(10, 0.5).unwrap());
        // window [6,10], ray enters at length 6
        assert_eq!(h.tau, Some(6));
        assert_eq!(h.point.unwrap().to_string(), "aaaaaa");
    }

    #[test]
    fn no_earlier_position_in_window_exhaustive() {
        // invariant sweep on 10^4 samples
        let mu = mu2();
        let spec = AnnulusSpec::new(12, 0.5).unwrap();
        for j in 0..10_000u64 {
            let p = sample_path(&mu, 60, RngState::new(17, j)).unwrap();
            let h = first_hitting_time(&p, spec);
            if let Some(tau) = h.tau {
                for n in 1..tau {
                    assert!(!spec.contains_len(p.lengths[n]));
                }
                assert!(spec.contains_len(h.point.as_ref().unwrap().len()));
            }
        }
    }

    #[test]
    fn hitting_ratio_mu2() {
        let t = hitting_ratio_experiment(&mu2(), &[100], DEFAULT_Q, 400, RngState::new(5, 0))
            .unwrap();
        let row = &t.rows[0];
        // entry happens at the window's lower edge 90, so the finite-i
        // oracle is (90/100)·(1/l) = 1.8; the debiased ratio is 1/l = 2
        assert!((row.report.value - 1.8).abs() < 0.05, "{row:?}");
        assert!((row.debiased - 2.0).abs() < 0.02 * 2.0, "{row:?}");
        assert!(row.ok, "censored {}", row.censored_fraction);
    }

    #[test]
    fn hitting_ratio_mu3() {
        let mu3 = StepDistribution::uniform(FreeGroupRank::new(3).unwrap());
        let t = hitting_ratio_experiment(&mu3, &[100], DEFAULT_Q, 400, RngState::new(5, 0))
            .unwrap();
        let row = &t.rows[0];
        assert!((row.report.value - 1.35).abs() < 0.04, "{row:?}");
        assert!((row.debiased - 1.5).abs() < 0.02 * 1.5, "{row:?}");
    }

    #[test]
    fn hitting_ratio_thin_window_approaches_limit() {
        // q = 0.3 shrinks the edge bias to i^{-0.7}: τ/i lands within 5%
        // of 1/l already at i = 200
        let t = hitting_ratio_experiment(&mu2(), &[200], 0.3, 300, RngState::new(5, 0)).unwrap();
        let row = &t.rows[0];
        assert!((row.report.value - 2.0).abs() < 0.05 * 2.0, "{row:?}");
    }

    #[test]
    fn hitting_ratio_point_mass_enters_lower_edge() {
        let a = Word::parse(rank2(), "a").unwrap();
        let mu = StepDistribution::point_mass(a).unwrap();
        let t = hitting_ratio_experiment(&mu, &[50], DEFAULT_Q, 20, RngState::new(1, 0)).unwrap();
        let row = &t.rows[0];
        // ceil(50^{1/2}) = 8, so the ray enters at length 42
        assert!((row.report.value - 42.0 / 50.0).abs() < 1e-12);
        assert!(row.report.std_error < 1e-12);
    }

    #[test]
    fn censored_fraction_small_at_moderate_radius() {
        let t = hitting_ratio_experiment(&mu2(), &[200], DEFAULT_Q, 1000, RngState::new(9, 0))
            .unwrap();
        assert!(t.rows[0].censored_fraction < 1e-3);
    }

    #[test]
    fn tanaka_sandwich_mu2() {
        let t = tanaka_pointwise_experiment(&mu2(), &[100], DEFAULT_Q, 300, 60, RngState::new(8, 0))
            .unwrap();
        let row = &t.rows[0];
        let log3 = 3.0f64.ln();
        let i_slack = (100f64).powf(DEFAULT_Q - 1.0);
        let lo = log3 * (1.0 - i_slack);
        let hi = log3 * (1.0 + i_slack) * (1.0 + 3.0 * row.report.std_error);
        assert!(row.report.value >= lo && row.report.value <= hi, "{row:?}");
        assert!((row.report.value - log3).abs() < 0.10 * log3);
    }

    #[test]
    fn tanaka_direct_estimate_small_i() {
        // at i=3 the same points recur; the direct ν̂ check activates
        let t = tanaka_pointwise_experiment(&mu2(), &[3], DEFAULT_Q, 2000, 60, RngState::new(4, 0))
            .unwrap();
        let row = &t.rows[0];
        assert!(row.direct_value.is_some());
        // surrogate dominates: ν̂(g) ≤ F(e,g) means −log ν̂/i ≥ −log F/i − noise
        assert!(row.direct_value.unwrap() > 0.0);
    }

    #[test]
    fn support_count_small_annulus() {
        let sc = hitting_support_count(&mu2(), 2, DEFAULT_Q, 0.999, 20_000, RngState::new(2, 0))
            .unwrap();
        // window [0,2] is entered on the first step: entry points are the
        // 4 single letters
        assert_eq!(sc.distinct_points, 4);
        assert!(sc.bound_ok, "{sc:?}");
    }

    #[test]
    fn support_count_grows_exponentially() {
        let sc = hitting_support_count(&mu2(), 6, DEFAULT_Q, 0.5, 1_000_000, RngState::new(2, 0))
            .unwrap();
        assert!(sc.bound_ok, "{sc:?}");
        assert!(sc.covering_count as f64 >= 0.01 * (6.0 * 3.0f64.ln()).exp(), "{sc:?}");
    }

    #[test]
    fn support_count_budget_refusal() {
        let err = hitting_support_count(&mu2(), 12, DEFAULT_Q, 0.5, 1000, RngState::new(2, 0));
        assert!(matches!(err, Err(LabError::BudgetExceeded(_, _))));
    }

    #[test]
    fn support_count_point_mass_degenerate() {
        let a = Word::parse(rank2(), "a").unwrap();
        let mu = StepDistribution::point_mass(a).unwrap();
        let sc = hitting_support_count(&mu, 10, DEFAULT_Q, 0.5, 100, RngState::new(0, 0)).unwrap();
        assert!(sc.degenerate);
        assert_eq!(sc.distinct_points, 1);
    }

    #[test]
    fn poincare_all_words_linear_at_log3() {
        let t = visited_set_poincare(&mu2(), &VisitPredicate::All, 30, 3.0f64.ln()).unwrap();
        // shells contribute exactly 4/3 each
        let (_, sum, _) = t.rows[30];
        assert!((sum - 40.0).abs() < 1e-9, "sum {sum}");
        for j in 2..=30 {
            let slope = t.rows[j].1 - t.rows[j - 1].1;
            assert!((slope - 4.0 / 3.0).abs() < 1e-9);
        }
        assert_eq!(t.verdict, PoincareVerdict::Diverging);
    }

    #[test]
    fn poincare_above_critical_converges() {
        let s = 3.0f64.ln() + 0.05;
        let t = visited_set_poincare(&mu2(), &VisitPredicate::All, 400, s).unwrap();
        assert_eq!(t.verdict, PoincareVerdict::Converging);
        // Cauchy within 1e-6 over the last 5 shells
        let tail: f64 = t.rows[396..=400].iter().map(|r| r.2).sum();
        assert!(tail < 1e-6, "tail {tail}");
        // geometric total: 1 + identityless sum = (4/3)Σ e^{-0.05 n} ...
        let exact: f64 = (1..=400)
            .map(|n| 4.0 / 3.0 * (-(0.05) * n as f64).exp() * (3.0f64.ln() * 0.0).exp())
            .sum();
        assert!((t.rows[400].1 - exact).abs() < 1e-6);
    }

    #[test]
    fn poincare_axis_converges_to_one() {
        let a = Word::parse(rank2(), "a").unwrap();
        let t = visited_set_poincare(&mu2(), &VisitPredicate::Axis(a), 40, 3.0f64.ln()).unwrap();
        // Σ_{n≥1} 2·3^{−n} = 1
        assert!((t.rows[40].1 - 1.0).abs() < 1e-12, "{}", t.rows[40].1);
        assert_eq!(t.verdict, PoincareVerdict::Converging);
    }

    #[test]
    fn poincare_empty_is_zero() {
        let t = visited_set_poincare(&mu2(), &VisitPredicate::Empty, 10, 1.0).unwrap();
        assert_eq!(t.rows[10].1, 0.0);
        assert_eq!(t.verdict, PoincareVerdict::Converging);
    }

    #[test]
    fn poincare_subgroup_shells_match_enumeration() {
        let r = rank2();
        let gens = vec![
            Word::parse(r, "a").unwrap(),
            Word::parse(r, "bab").unwrap(),
        ];
        let h = fold(r, &gens);
        let w = VisitPredicate::Subgroup(h.clone());
        let t = visited_set_poincare(&mu2(), &w, 8, 0.7).unwrap();
        // brute-force over the ball
        let mut brute = 0.0f64;
        for j in 1..=8usize {
            for g in crate::word::enumerate_sphere(r, j).unwrap() {
                if h.membership(&g) {
                    brute += (-0.7 * j as f64).exp();
                }
            }
        }
        assert!((t.rows[8].1 - brute).abs() < 1e-9);
    }

    #[test]
    fn axis_predicate_membership() {
        let r = rank2();
        let ab = Word::parse(r, "ab").unwrap();
        let w = VisitPredicate::Axis(ab.clone());
        assert!(w.contains(&Word::parse(r, "abab").unwrap()));
        assert!(w.contains(&Word::parse(r, "BABA").unwrap()));
        assert!(!w.contains(&Word::parse(r, "aab").unwrap()));
        assert!(!w.contains(&Word::identity(r)));
    }

    #[test]
    fn mod_length_predicate() {
        let r = rank2();
        let w = VisitPredicate::ModLength { r: 0, m: 2 };
        assert!(w.contains(&Word::parse(r, "ab").unwrap()));
        assert!(!w.contains(&Word::parse(r, "a").unwrap()));
        assert!(!w.contains(&Word::identity(r)));
    }

    #[test]
    fn weighted_poincare_constant_weight_positive() {
        let t = weighted_visited_poincare(
            &mu2(),
            &VisitPredicate::All,
            LengthWeight::One,
            40,
            DEFAULT_Q,
            0.1,
            Some(3.0f64.ln()),
            RngState::new(11, 0),
        )
        .unwrap();
        assert!(t.positive_witness, "{:?}", t.rows.last());
        assert!(!t.hypothesis_violated);
        // growing like the e^{a i} envelope: later values dominate early ones
        assert!(t.rows[39].1 > t.rows[10].1);
    }

    #[test]
    fn weighted_poincare_harmonic_weight_positive() {
        let t = weighted_visited_poincare(
            &mu2(),
            &VisitPredicate::All,
            LengthWeight::InverseLength,
            40,
            DEFAULT_Q,
            0.1,
            Some(3.0f64.ln()),
            RngState::new(11, 0),
        )
        .unwrap();
        assert!(t.positive_witness);
        assert!(!t.hypothesis_violated);
    }

    #[test]
    fn weighted_poincare_exponential_weight_flagged() {
        let t = weighted_visited_poincare(
            &mu2(),
            &VisitPredicate::All,
            LengthWeight::ExpLength,
            10,
            DEFAULT_Q,
            0.1,
            Some(3.0f64.ln()),
            RngState::new(11, 0),
        )
        .unwrap();
        assert!(t.hypothesis_violated);
    }

    #[test]
    fn predicate_stats_axis_frequency_decays() {
        let a = Word::parse(rank2(), "a").unwrap();
        let w = VisitPredicate::Axis(a);
        let short = predicate_visit_stats(&mu2(), &w, 10, DEFAULT_Q, 20, 200, RngState::new(6, 0))
            .unwrap();
        let long = predicate_visit_stats(&mu2(), &w, 10, DEFAULT_Q, 200, 200, RngState::new(6, 0))
            .unwrap();
        // transience: the axis is left for good, frequency shrinks with n
        assert!(long.step_frequency < short.step_frequency);
        assert!(long.step_frequency < 0.2);
    }

    #[test]
    fn sphere_size_consistency_with_log_shell() {
        let r = rank2();
        for n in 1..=20usize {
            let lc = VisitPredicate::All.log_shell_count(r, n);
            let direct = (sphere_size(r, n) as f64).ln();
            assert!((lc - direct).abs() < 1e-9);
        }
    }
}
