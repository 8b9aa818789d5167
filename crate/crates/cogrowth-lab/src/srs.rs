//! Stationary-random-subgroup experiments: Cesàro conjugation sampling,
//! visit frequencies of conjugate intersections with a test window, and the
//! empirical pipeline behind the lower bound δ(Δ) > δ(μ)/2.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::annulus::{visited_set_poincare, VisitPredicate, VisitedPoincare};
use crate::error::{LabError, Result};
use crate::rng::RngState;
use crate::subgroup::{CoreGraph, CriticalExponent, PoincareTable};
use crate::walk::{DeltaMuConfig, EntropyMethod, Walker};
use crate::word::{enumerate_ball, sphere_size, FreeGroupRank, StepDistribution, Word};

/// Sampler for the finite-N Cesàro approximant of a μ-stationary random
/// subgroup seeded at a fixed base subgroup.
#[derive(Debug, Clone)]
pub struct SrsSampler {
    pub base: CoreGraph,
    pub mu: StepDistribution,
    pub cesaro_n: usize,
    pub state: RngState,
}

#[derive(Debug, Clone)]
pub struct CesaroSample {
    pub conjugator: Word,
    pub steps: usize,
    pub graph: CoreGraph,
}

impl SrsSampler {
    pub fn new(
        base: CoreGraph,
        mu: StepDistribution,
        cesaro_n: usize,
        state: RngState,
    ) -> Result<Self> {
        if cesaro_n < 1 {
            return Err(LabError::Precondition("Cesàro horizon N must be >= 1".into()));
        }
        if base.rank() != mu.rank() {
            return Err(LabError::RankMismatch(base.rank().get(), mu.rank().get()));
        }
        Ok(SrsSampler { base, mu, cesaro_n, state })
    }

    /// One draw: i uniform in [1..N], g ~ μ^{*i}, return base^g = g⁻¹·base·g.
    pub fn sample(&self, index: u64) -> CesaroSample {
        let state = self.state.substream(index);
        let mut rng = state.rng();
        let u = crate::rng::uniform01(&mut rng);
        let steps = 1 + ((u * self.cesaro_n as f64) as usize).min(self.cesaro_n - 1);
        let mut pos = Word::identity(self.mu.rank());
        for _ in 0..steps {
            let v = crate::rng::uniform01(&mut rng);
            let atom = self.mu.pick(v).clone();
            pos = pos.mul(&atom).unwrap();
        }
        let graph = self.base.conjugate_subgroup(&pos);
        CesaroSample { conjugator: pos, steps, graph }
    }
}

/// Finite test neighborhood V of nontrivial elements.
#[derive(Debug, Clone)]
pub struct VisitWindow {
    words: BTreeSet<Word>,
    max_len: usize,
}

impl VisitWindow {
    pub fn from_words(words: BTreeSet<Word>) -> Result<Self> {
        if words.iter().any(|w| w.is_identity()) {
            return Err(LabError::Precondition(
                "the test window must not contain the identity".into(),
            ));
        }
        let max_len = words.iter().map(|w| w.len()).max().unwrap_or(0);
        Ok(VisitWindow { words, max_len })
    }

    /// All nontrivial words of length at most `l` (the default window).
    pub fn ball(rank: FreeGroupRank, l: usize) -> Result<Self> {
        let words: BTreeSet<Word> = enumerate_ball(rank, l)?
            .into_iter()
            .filter(|w| !w.is_identity())
            .collect();
        VisitWindow::from_words(words)
    }

    pub fn words(&self) -> &BTreeSet<Word> {
        &self.words
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Δ^g ∩ V ≠ ∅, i.e. some v ∈ V with g·v·g⁻¹ ∈ Δ.
    pub fn meets_conjugate(&self, delta: &CoreGraph, g: &Word) -> bool {
        self.words
            .iter()
            .any(|v| delta.membership(&g.conjugate(v).expect("same rank")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyReport {
    pub frequency: f64,
    pub n: usize,
    pub std_error: f64,
    /// running frequency after each step, for liminf inspection
    pub running: Vec<f64>,
}

/// Fraction of steps i ≤ n with Δ^{ω_i} ∩ V ≠ ∅ along one μ-trajectory.
pub fn visit_frequency(
    base: &CoreGraph,
    v: &VisitWindow,
    mu: &StepDistribution,
    n: usize,
    state: RngState,
) -> Result<FrequencyReport> {
    if n < 1 {
        return Err(LabError::Precondition("need n >= 1 steps".into()));
    }
    if base.is_trivial() {
        // Δ^g ∩ V = ∅ always
        return Ok(FrequencyReport {
            frequency: 0.0,
            n,
            std_error: 0.0,
            running: vec![0.0; n],
        });
    }
    let mut walker = Walker::new(mu, state);
    let mut hits = 0usize;
    let mut running = Vec::with_capacity(n);
    for i in 1..=n {
        walker.step();
        if v.meets_conjugate(base, &walker.position) {
            hits += 1;
        }
        running.push(hits as f64 / i as f64);
    }
    let frequency = hits as f64 / n as f64;
    let std_error = (frequency * (1.0 - frequency) / n as f64).sqrt();
    Ok(FrequencyReport { frequency, n, std_error, running })
}

#[derive(Debug, Clone, Serialize)]
pub struct SrsConfig {
    /// steps of the visit-frequency trajectory
    pub steps: usize,
    /// ball radius for the visited-prefix set W_Δ
    pub w_ball_radius: usize,
    /// shell horizon for the Poincaré partial sums of Δ
    pub j_max: usize,
    /// δ̂(μ); estimated from μ when absent
    pub delta_hat: Option<f64>,
    pub delta_hat_sigma: f64,
    /// positive-evidence gate on the Cesàro-window frequency
    pub frequency_gate: f64,
    /// early window length over which the gate frequency is averaged; any
    /// infinite-index subgroup has long-run frequency 0 by transience, so
    /// evidence is read off at the Cesàro scale, not in the tail
    pub gate_window: usize,
    /// paths averaged for the gate frequency
    pub gate_paths: usize,
}

impl Default for SrsConfig {
    fn default() -> Self {
        SrsConfig {
            steps: 400,
            w_ball_radius: 6,
            j_max: 40,
            delta_hat: None,
            delta_hat_sigma: 0.0,
            frequency_gate: 0.10,
            gate_window: 32,
            gate_paths: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SrsReport {
    pub delta_hat_mu: f64,
    pub delta_hat_sigma: f64,
    pub frequency: FrequencyReport,
    /// liminf proxy: minimum running frequency over the tail half
    pub tail_liminf: f64,
    /// mean frequency over the first `gate_window` steps across
    /// `gate_paths` paths — the Cesàro-scale observable the gate reads
    pub early_frequency: f64,
    pub positive_evidence: bool,
    /// Σ over the visited-prefix set W_Δ at s = δ̂(μ)
    pub w_poincare: VisitedPoincare,
    /// fraction of ball elements lying in W_Δ
    pub w_density: f64,
    pub delta_subgroup: CriticalExponent,
    /// P_Δ at s = δ̂(μ)/2
    pub poincare_half: PoincareTable,
    /// δ(Δ) > δ̂(μ)/2 − 3σ, asserted when evidence is positive
    pub passes: bool,
    /// the theorem's hypothesis-side evidence failed (frequency gate)
    pub hypothesis_failure: bool,
}

/// δ̂(μ) via exact convolution entropy over Monte Carlo drift, with
/// propagated σ.
fn delta_hat_for(mu: &StepDistribution, state: RngState) -> Result<(f64, f64)> {
    let cfg = DeltaMuConfig {
        drift_n: 400,
        drift_m: 200,
        entropy_n_max: if mu.rank().get() <= 2 { 10 } else { 7 },
        green_n: 0,
        green_m: 0,
        f_horizon: 0,
        method: EntropyMethod::Convolution,
    };
    let rep = crate::walk::delta_mu(mu, &cfg, state.substream(1 << 44))?;
    Ok((rep.value, rep.std_error))
}

/// Full desk pipeline for the stationary lower bound δ(Δ) > δ(μ)/2.
pub fn srs_delta_experiment(
    base: &CoreGraph,
    mu: &StepDistribution,
    v: &VisitWindow,
    config: &SrsConfig,
    state: RngState,
) -> Result<SrsReport> {
    if base.is_trivial() {
        return Err(LabError::Precondition(
            "the base subgroup must be nontrivial".into(),
        ));
    }
    let (delta_hat_mu, delta_hat_sigma) = match config.delta_hat {
        Some(d) => (d, config.delta_hat_sigma),
        None => delta_hat_for(mu, state)?,
    };
    // (1) visit frequency: one long trajectory for liminf inspection plus
    // the early-window average that feeds the gate
    let frequency = visit_frequency(base, v, mu, config.steps, state)?;
    let tail = &frequency.running[frequency.running.len() / 2..];
    let tail_liminf = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let early: Vec<f64> = (0..config.gate_paths as u64)
        .into_par_iter()
        .map(|j| {
            visit_frequency(base, v, mu, config.gate_window, state.substream((1 << 45) + j))
                .map(|r| r.frequency)
        })
        .collect::<Result<Vec<f64>>>()?;
    let early_frequency = early.iter().sum::<f64>() / early.len().max(1) as f64;
    let positive_evidence = early_frequency > config.frequency_gate;
    // (2) W_Δ = {γ in the ball : Δ^γ ∩ V ≠ ∅}
    let ball = enumerate_ball(mu.rank(), config.w_ball_radius)?;
    let w_set: BTreeSet<Word> = ball
        .par_iter()
        .filter(|g| !g.is_identity() && v.meets_conjugate(base, g))
        .cloned()
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let w_density = w_set.len() as f64 / (ball.len() - 1) as f64;
    let w_pred = VisitPredicate::Explicit(w_set);
    // (3) Poincaré sum of W_Δ at s = δ̂(μ), ball-restricted
    let w_poincare = visited_set_poincare(mu, &w_pred, config.w_ball_radius, delta_hat_mu)?;
    // (4) δ(Δ) against δ̂(μ)/2
    let delta_subgroup = base.critical_exponent(1e-12);
    let poincare_half = base.poincare_partial(delta_hat_mu / 2.0, config.j_max);
    let delta_value = delta_subgroup.delta().unwrap_or(f64::NEG_INFINITY);
    let bound = delta_hat_mu / 2.0 - 3.0 * delta_hat_sigma;
    let passes = positive_evidence && delta_value > bound;
    Ok(SrsReport {
        delta_hat_mu,
        delta_hat_sigma,
        frequency,
        tail_liminf,
        early_frequency,
        positive_evidence,
        w_poincare,
        w_density,
        delta_subgroup,
        poincare_half,
        passes,
        hypothesis_failure: !positive_evidence,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyBoundRow {
    pub r: usize,
    /// #{g in the enumerated ball : ‖gγg⁻¹‖ ≤ R}
    pub lhs: u64,
    /// #{g : ‖g‖ ≤ (R − ‖γ‖)/2} (full count, closed form)
    pub rhs: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugacyBoundTable {
    pub gamma: String,
    pub rows: Vec<ConjugacyBoundRow>,
    pub all_ok: bool,
}

/// |{g : ‖gγg⁻¹‖ ≤ R}| ≥ |{g : ‖g‖ ≤ (R−‖γ‖)/2}| for every R ≤ r_max.
/// The left side is restricted to the enumerated ball of radius r_max,
/// which keeps the inequality valid: every g with 2‖g‖ + ‖γ‖ ≤ R already
/// lies in that ball.
pub fn conjugacy_growth_bound_check(gamma: &Word, r_max: usize) -> Result<ConjugacyBoundTable> {
    let rank = gamma.rank();
    let ball = enumerate_ball(rank, r_max)?;
    let conj_lens: Vec<usize> = ball
        .par_iter()
        .map(|g| g.conjugate(gamma).expect("same rank").len())
        .collect();
    let mut rows = Vec::with_capacity(r_max + 1);
    let mut all_ok = true;
    for r in 0..=r_max {
        let lhs = conj_lens.iter().filter(|&&l| l <= r).count() as u64;
        let rhs = if r < gamma.len() {
            0
        } else {
            let half = (r - gamma.len()) / 2;
            (0..=half).map(|j| sphere_size(rank, j)).sum()
        };
        let ok = lhs >= rhs;
        all_ok &= ok;
        rows.push(ConjugacyBoundRow { r, lhs, rhs, ok });
    }
    Ok(ConjugacyBoundTable { gamma: gamma.to_string(), rows, all_ok })
}
