//! Free products Γ = A ∗ B of finite groups: the lattice measure weighted by
//! the root ρ, random walks in the Bass–Serre tree metric, and exact orbit
//! growth on the biregular tree.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::rng::{uniform01, RngState};
use crate::walk::EstimatorReport;

/// A finite factor group given by its multiplication table; element 0 is the
/// identity. Any group of order ≤ 12 is accepted, cyclic by default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGroup {
    order: usize,
    table: Vec<Vec<u8>>,
    inverse: Vec<u8>,
}

impl FactorGroup {
    pub fn cyclic(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(LabError::Precondition("factor order must be >= 2".into()));
        }
        let table: Vec<Vec<u8>> = (0..order)
            .map(|i| (0..order).map(|j| ((i + j) % order) as u8).collect())
            .collect();
        FactorGroup::from_table(table)
    }

    /// Validates: identity row/column, Latin square, inverses, associativity.
    pub fn from_table(table: Vec<Vec<u8>>) -> Result<Self> {
        let order = table.len();
        if order < 2 || order > 12 {
            return Err(LabError::Precondition(format!(
                "factor order must lie in [2,12], got {order}"
            )));
        }
        for row in &table {
            if row.len() != order || row.iter().any(|&v| v as usize >= order) {
                return Err(LabError::Parse("malformed multiplication table".into()));
            }
        }
        for i in 0..order {
            if table[0][i] != i as u8 || table[i][0] != i as u8 {
                return Err(LabError::Parse("element 0 is not an identity".into()));
            }
            let mut seen_row = vec![false; order];
            let mut seen_col = vec![false; order];
            for j in 0..order {
                seen_row[table[i][j] as usize] = true;
                seen_col[table[j][i] as usize] = true;
            }
            if seen_row.iter().any(|&s| !s) || seen_col.iter().any(|&s| !s) {
                return Err(LabError::Parse("table is not a Latin square".into()));
            }
        }
        let mut inverse = vec![0u8; order];
        for i in 0..order {
            match (0..order).find(|&j| table[i][j] == 0) {
                Some(j) if table[j][i] == 0 => inverse[i] = j as u8,
                _ => return Err(LabError::Parse("missing two-sided inverse".into())),
            }
        }
        for i in 0..order {
            for j in 0..order {
                for k in 0..order {
                    let left = table[table[i][j] as usize][k];
                    let right = table[i][table[j][k] as usize];
                    if left != right {
                        return Err(LabError::Parse("table is not associative".into()));
                    }
                }
            }
        }
        Ok(FactorGroup { order, table, inverse })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mul(&self, a: u8, b: u8) -> u8 {
        self.table[a as usize][b as usize]
    }

    pub fn inv(&self, a: u8) -> u8 {
        self.inverse[a as usize]
    }
}

/// Γ = A ∗ B with (|A|−1)(|B|−1) ≥ 2 (non-elementary).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeProductSpec {
    pub a: FactorGroup,
    pub b: FactorGroup,
}

impl FreeProductSpec {
    pub fn new(a: FactorGroup, b: FactorGroup) -> Result<Self> {
        if (a.order - 1) * (b.order - 1) < 2 {
            return Err(LabError::Precondition(
                "need (|A|-1)(|B|-1) >= 2; the (2,2) case is the infinite dihedral group".into(),
            ));
        }
        Ok(FreeProductSpec { a, b })
    }

    pub fn cyclic(a_order: usize, b_order: usize) -> Result<Self> {
        FreeProductSpec::new(FactorGroup::cyclic(a_order)?, FactorGroup::cyclic(b_order)?)
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.a.order, self.b.order)
    }

    /// δ(Γ) = ½ log((|A|−1)(|B|−1)), the exact orbit growth exponent.
    pub fn delta_exact(&self) -> f64 {
        0.5 * (((self.a.order - 1) * (self.b.order - 1)) as f64).ln()
    }
}

/// Spec file lines: `A <order> [table]`, `B <order> [table]`; the table is
/// optional (cyclic default) and written as semicolon-separated rows of
/// comma-separated entries, e.g. `0,1;1,0`.
pub fn parse_spec_file(text: &str) -> Result<FreeProductSpec> {
    let mut a: Option<FactorGroup> = None;
    let mut b: Option<FactorGroup> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let which = parts.next().unwrap();
        let order: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| LabError::Parse(format!("expected `{which} <order>` in {line:?}")))?;
        let factor = match parts.next() {
            None => FactorGroup::cyclic(order)?,
            Some(tab) => {
                let rows: Vec<Vec<u8>> = tab
                    .split(';')
                    .map(|row| {
                        row.split(',')
                            .map(|e| {
                                e.parse::<u8>()
                                    .map_err(|_| LabError::Parse(format!("bad table entry {e:?}")))
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                if rows.len() != order {
                    return Err(LabError::Parse(format!(
                        "table has {} rows for order {order}",
                        rows.len()
                    )));
                }
                FactorGroup::from_table(rows)?
            }
        };
        match which {
            "A" => a = Some(factor),
            "B" => b = Some(factor),
            _ => return Err(LabError::Parse(format!("unknown factor label {which:?}"))),
        }
    }
    match (a, b) {
        (Some(a), Some(b)) => FreeProductSpec::new(a, b),
        _ => Err(LabError::Parse("spec file needs both an A and a B line".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Factor {
    A,
    B,
}

/// Normal form: alternating nontrivial syllables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FPElement {
    syllables: Vec<(Factor, u8)>,
}

impl FPElement {
    pub fn identity() -> Self {
        FPElement { syllables: Vec::new() }
    }

    pub fn syllable(factor: Factor, value: u8) -> Result<Self> {
        if value == 0 {
            return Err(LabError::Precondition("syllables must be nontrivial".into()));
        }
        Ok(FPElement { syllables: vec![(factor, value)] })
    }

    pub fn syllables(&self) -> &[(Factor, u8)] {
        &self.syllables
    }

    pub fn syllable_len(&self) -> usize {
        self.syllables.len()
    }

    pub fn is_identity(&self) -> bool {
        self.syllables.is_empty()
    }

    /// Bass–Serre tree displacement ‖g‖ = d(g·v_A, v_A) = 2·(number of
    /// B-syllables in the normal form).
    pub fn tree_len(&self) -> usize {
        2 * self.syllables.iter().filter(|(f, _)| *f == Factor::B).count()
    }

    pub fn inverse(&self, spec: &FreeProductSpec) -> FPElement {
        let syllables = self
            .syllables
            .iter()
            .rev()
            .map(|&(f, v)| {
                let inv = match f {
                    Factor::A => spec.a.inv(v),
                    Factor::B => spec.b.inv(v),
                };
                (f, inv)
            })
            .collect();
        FPElement { syllables }
    }
}

/// Normal-form product: concatenate and cascade cancellation/merging at the
/// junction.
pub fn fp_mul(a: &FPElement, b: &FPElement, spec: &FreeProductSpec) -> FPElement {
    let mut left = a.syllables.clone();
    let mut right_iter = b.syllables.iter().copied().peekable();
    while let Some(&(rf, rv)) = right_iter.peek() {
        match left.last().copied() {
            Some((lf, lv)) if lf == rf => {
                right_iter.next();
                let merged = match lf {
                    Factor::A => spec.a.mul(lv, rv),
                    Factor::B => spec.b.mul(lv, rv),
                };
                left.pop();
                if merged != 0 {
                    left.push((lf, merged));
                    break;
                }
                // full cancellation: the new junction may merge again
            }
            _ => break,
        }
    }
    left.extend(right_iter);
    FPElement { syllables: left }
}

/// μ₁: nontrivial A-elements share total weight (|A|−1)/(|A|−1+ρ), B-elements
/// share (|B|−1)/(|B|−1+ρ), uniformly within each factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeMeasure {
    pub rho: f64,
    pub weight_a: f64,
    pub weight_b: f64,
    pub residual: f64,
}

/// The unique positive root of
/// (|A|−1)/(|A|−1+ρ) + (|B|−1)/(|B|−1+ρ) = 1, which reduces to ρ² = (|A|−1)(|B|−1).
pub fn solve_rho(spec: &FreeProductSpec) -> Result<LatticeMeasure> {
    let x = (spec.a.order - 1) as f64;
    let y = (spec.b.order - 1) as f64;
    let rho = (x * y).sqrt();
    let weight_a = x / (x + rho);
    let weight_b = y / (y + rho);
    let residual = (weight_a + weight_b - 1.0).abs();
    if residual > 1e-14 {
        return Err(LabError::Degenerate(format!(
            "rho equation residual {residual} exceeds 1e-14"
        )));
    }
    Ok(LatticeMeasure { rho, weight_a, weight_b, residual })
}

impl LatticeMeasure {
    /// Draw one μ₁-increment.
    fn sample(&self, spec: &FreeProductSpec, u1: f64, u2: f64) -> FPElement {
        if u1 < self.weight_a {
            let x = spec.a.order - 1;
            let v = 1 + ((u2 * x as f64) as usize).min(x - 1);
            FPElement::syllable(Factor::A, v as u8).unwrap()
        } else {
            let y = spec.b.order - 1;
            let v = 1 + ((u2 * y as f64) as usize).min(y - 1);
            FPElement::syllable(Factor::B, v as u8).unwrap()
        }
    }
}

/// First-passage probabilities (f_A, f_B) of the μ₁-walk between adjacent
/// elements within an A-clique resp. B-clique, solved by monotone fixed-point
/// iteration of
///   f_A = w_A/(|A|−1) + w_A (|A|−2)/(|A|−1) f_A + w_B f_B f_A
/// and symmetrically for f_B. Within a coset the walk moves to a uniformly
/// random other element, so the factor's group structure drops out.
pub fn syllable_first_passage(spec: &FreeProductSpec, measure: &LatticeMeasure) -> (f64, f64) {
    let x = (spec.a.order - 1) as f64;
    let y = (spec.b.order - 1) as f64;
    let (wa, wb) = (measure.weight_a, measure.weight_b);
    let mut fa = 0.0f64;
    let mut fb = 0.0f64;
    for _ in 0..10_000 {
        let na = wa / x + wa * (x - 1.0) / x * fa + wb * fb * fa;
        let nb = wb / y + wb * (y - 1.0) / y * fb + wa * fa * fb;
        if (na - fa).abs() < 1e-16 && (nb - fb).abs() < 1e-16 {
            return (na, nb);
        }
        fa = na;
        fb = nb;
    }
    (fa, fb)
}

#[derive(Debug, Clone, Serialize)]
pub struct FpDeltaReport {
    pub delta: f64,
    pub std_error: f64,
    pub drift: EstimatorReport,
    pub entropy: EstimatorReport,
    pub f_a: f64,
    pub f_b: f64,
    pub metric: String,
}

/// δ̂(μ₁) = ĥ/l̂ with the drift in the tree metric and the entropy through
/// the Green-metric surrogate −log F(e, ω_n)/n, where F factors over
/// syllables as f_A^{#A} f_B^{#B}.
pub fn fp_walk_delta(
    spec: &FreeProductSpec,
    measure: &LatticeMeasure,
    n: usize,
    m: usize,
    state: RngState,
) -> Result<FpDeltaReport> {
    if n < 100 || m < 10 {
        return Err(LabError::Precondition(format!(
            "free-product estimator needs n >= 100 and m >= 10, got n={n} m={m}"
        )));
    }
    let (f_a, f_b) = syllable_first_passage(spec, measure);
    let (log_fa, log_fb) = (f_a.ln(), f_b.ln());
    let samples: Vec<(f64, f64)> = (0..m as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = state.substream(j).rng();
            let mut pos = FPElement::identity();
            for _ in 0..n {
                let u1 = uniform01(&mut rng);
                let u2 = uniform01(&mut rng);
                let step = measure.sample(spec, u1, u2);
                pos = fp_mul(&pos, &step, spec);
            }
            let n_b = pos.tree_len() as f64 / 2.0;
            let n_a = (pos.syllable_len() as f64) - n_b;
            let l = pos.tree_len() as f64 / n as f64;
            let h = -(n_a * log_fa + n_b * log_fb) / n as f64;
            (l, h)
        })
        .collect();
    let ls: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let hs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (l_mean, l_se) = mean_and_stderr(&ls);
    let (h_mean, h_se) = mean_and_stderr(&hs);
    if l_mean <= 3.0 * l_se {
        return Err(LabError::Degenerate(format!(
            "tree-metric drift {l_mean} consistent with zero"
        )));
    }
    let delta = h_mean / l_mean;
    let rel = ((h_se / h_mean.max(1e-12)).powi(2) + (l_se / l_mean).powi(2)).sqrt();
    let drift = EstimatorReport {
        value: l_mean,
        std_error: l_se,
        n_samples: m as u64,
        horizon: n as u64,
        seed: state.seed,
        stream: state.stream,
        method: "fp-drift-tree-metric".into(),
    };
    let entropy = EstimatorReport {
        value: h_mean,
        std_error: h_se,
        n_samples: m as u64,
        horizon: n as u64,
        seed: state.seed,
        stream: state.stream,
        method: "fp-entropy-syllable-first-passage".into(),
    };
    Ok(FpDeltaReport {
        delta,
        std_error: delta.abs() * rel,
        drift,
        entropy,
        f_a,
        f_b,
        metric: "tree".into(),
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct FpGrowth {
    /// orbit points Γ·v_A at tree distance n, indexed by n (odd distances
    /// hold B-type vertices of the ambient tree, not orbit points: 0 there)
    pub counts: Vec<u64>,
    pub delta: f64,
}

/// Exact vertex counts on the (|A|,|B|)-biregular Bruhat–Tits tree: the
/// Γ-orbit of the base vertex is the set of A-type vertices, at even
/// distances; δ(Γ) = ½ log((|A|−1)(|B|−1)).
pub fn fp_growth_exact(spec: &FreeProductSpec, n_max: usize) -> FpGrowth {
    let x = (spec.a.order - 1) as u64;
    let y = (spec.b.order - 1) as u64;
    let mut counts = vec![0u64; n_max + 1];
    counts[0] = 1;
    // b_m = B-type vertices at distance 2m+1, a_m = A-type at distance 2m
    let mut frontier_b: u64;
    let mut frontier_a = 1u64;
    let mut dist = 0usize;
    while dist + 2 <= n_max {
        // A-vertex fans out to (|A|−1) B-children, |A| at the root
        frontier_b = frontier_a * if dist == 0 { x + 1 } else { x };
        frontier_a = frontier_b * y;
        counts[dist + 2] = frontier_a;
        dist += 2;
    }
    FpGrowth { counts, delta: spec.delta_exact() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn spec23() -> FreeProductSpec {
        FreeProductSpec::cyclic(2, 3).unwrap()
    }

    fn spec33() -> FreeProductSpec {
        FreeProductSpec::cyclic(3, 3).unwrap()
    }

    #[test]
    fn spec_file_roundtrip() {
        let spec = parse_spec_file("A 2\nB 3\n").unwrap();
        assert_eq!(spec.sizes(), (2, 3));
        let klein = parse_spec_file(
            "# Klein four times Z/3\nA 4 0,1,2,3;1,0,3,2;2,3,0,1;3,2,1,0\nB 3\n",
        )
        .unwrap();
        assert_eq!(klein.sizes(), (4, 3));
        assert_eq!(klein.a.mul(2, 3), 1);
        assert!(parse_spec_file("A 2\n").is_err());
        assert!(parse_spec_file("A 2\nB 2\n").is_err());
        assert!(parse_spec_file("A 3 0,1;1,0\nB 3\n").is_err());
    }

    #[test]
    fn dihedral_case_rejected() {
        assert!(FreeProductSpec::cyclic(2, 2).is_err());
    }

    #[test]
    fn rho_examples() {
        let m = solve_rho(&spec23()).unwrap();
        assert!((m.rho - 2.0f64.sqrt()).abs() < 1e-12, "rho {}", m.rho);
        let m33 = solve_rho(&spec33()).unwrap();
        assert!((m33.rho - 2.0).abs() < 1e-12);
        // weights for (2,3): 1/(1+√2) and 2/(2+√2), summing to 1
        assert!((m.weight_a - 1.0 / (1.0 + 2.0f64.sqrt())).abs() < 1e-12);
        assert!((m.weight_b - 2.0 / (2.0 + 2.0f64.sqrt())).abs() < 1e-12);
        assert!((m.weight_a + m.weight_b - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rho_residual_sweep() {
        for ao in 2..=10usize {
            for bo in 2..=10usize {
                if (ao - 1) * (bo - 1) < 2 {
                    continue;
                }
                let spec = FreeProductSpec::cyclic(ao, bo).unwrap();
                let m = solve_rho(&spec).unwrap();
                let x = (ao - 1) as f64;
                let y = (bo - 1) as f64;
                let res = x / (x + m.rho) + y / (y + m.rho) - 1.0;
                assert!(res.abs() <= 1e-14, "({ao},{bo}) residual {res}");
            }
        }
    }

    #[test]
    fn factor_table_validation() {
        // non-associative Latin square with identity: a quasigroup
        let bad = vec![
            vec![0, 1, 2, 3, 4],
            vec![1, 0, 3, 4, 2],
            vec![2, 4, 0, 1, 3],
            vec![3, 2, 4, 0, 1],
            vec![4, 3, 1, 2, 0],
        ];
        assert!(FactorGroup::from_table(bad).is_err());
        // Klein four-group passes
        let klein = vec![
            vec![0, 1, 2, 3],
            vec![1, 0, 3, 2],
            vec![2, 3, 0, 1],
            vec![3, 2, 1, 0],
        ];
        let k = FactorGroup::from_table(klein).unwrap();
        assert_eq!(k.inv(1), 1);
        assert_eq!(k.mul(2, 3), 1);
    }

    #[test]
    fn fp_mul_examples() {
        let spec = spec33();
        let a1 = FPElement::syllable(Factor::A, 1).unwrap();
        let a2 = FPElement::syllable(Factor::A, 2).unwrap();
        // a₁ · a₁⁻¹ = e in Z/3 (inverse of 1 is 2)
        assert!(fp_mul(&a1, &a2, &spec).is_identity());
        let b1 = FPElement::syllable(Factor::B, 1).unwrap();
        let b2 = FPElement::syllable(Factor::B, 2).unwrap();
        // (a₁ b₁)(b₁⁻¹ a₁) cascades to a₁·a₁ = a₂
        let left = fp_mul(&a1, &b1, &spec);
        let right = fp_mul(&b2, &a1, &spec);
        let prod = fp_mul(&left, &right, &spec);
        assert_eq!(prod.syllables(), &[(Factor::A, 2)]);
    }

    #[test]
    fn fp_mul_length_subadditive_and_alternating() {
        use rand::{Rng, SeedableRng};
        let spec = spec23();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let random_el = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut e = FPElement::identity();
            for _ in 0..rng.gen_range(0..8) {
                let f = if rng.gen_bool(0.5) { Factor::A } else { Factor::B };
                let max = match f {
                    Factor::A => spec.a.order() - 1,
                    Factor::B => spec.b.order() - 1,
                };
                let v = rng.gen_range(1..=max) as u8;
                e = fp_mul(&e, &FPElement::syllable(f, v).unwrap(), &spec);
            }
            e
        };
        for _ in 0..5000 {
            let a = random_el(&mut rng);
            let b = random_el(&mut rng);
            let p = fp_mul(&a, &b, &spec);
            assert!(p.syllable_len() <= a.syllable_len() + b.syllable_len());
            // normal form: alternating, nontrivial syllables
            for w in p.syllables().windows(2) {
                assert_ne!(w[0].0, w[1].0);
            }
            assert!(p.syllables().iter().all(|&(_, v)| v != 0));
        }
    }

    #[test]
    fn fp_mul_associative_property() {
        use rand::{Rng, SeedableRng};
        let spec = spec33();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let random_el = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut e = FPElement::identity();
            for _ in 0..rng.gen_range(0..6) {
                let f = if rng.gen_bool(0.5) { Factor::A } else { Factor::B };
                let v = rng.gen_range(1..=2) as u8;
                e = fp_mul(&e, &FPElement::syllable(f, v).unwrap(), &spec);
            }
            e
        };
        for _ in 0..100_000 {
            let a = random_el(&mut rng);
            let b = random_el(&mut rng);
            let c = random_el(&mut rng);
            let left = fp_mul(&fp_mul(&a, &b, &spec), &c, &spec);
            let right = fp_mul(&a, &fp_mul(&b, &c, &spec), &spec);
            assert_eq!(left, right);
        }
    }

    #[test]
    fn inverse_cancels() {
        use rand::{Rng, SeedableRng};
        let spec = spec23();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let mut e = FPElement::identity();
            for _ in 0..rng.gen_range(0..8) {
                let f = if rng.gen_bool(0.5) { Factor::A } else { Factor::B };
                let max = match f {
                    Factor::A => 1,
                    Factor::B => 2,
                };
                let v = rng.gen_range(1..=max) as u8;
                e = fp_mul(&e, &FPElement::syllable(f, v).unwrap(), &spec);
            }
            assert!(fp_mul(&e, &e.inverse(&spec), &spec).is_identity());
        }
    }

    #[test]
    fn tree_metric_examples() {
        let spec = spec33();
        let a = FPElement::syllable(Factor::A, 1).unwrap();
        let b = FPElement::syllable(Factor::B, 1).unwrap();
        assert_eq!(FPElement::identity().tree_len(), 0);
        assert_eq!(a.tree_len(), 0); // A fixes the base vertex
        assert_eq!(b.tree_len(), 2);
        let ab = fp_mul(&a, &b, &spec);
        let ba = fp_mul(&b, &a, &spec);
        let bab = fp_mul(&ba, &b, &spec);
        assert_eq!(ab.tree_len(), 2);
        assert_eq!(ba.tree_len(), 2);
        assert_eq!(bab.tree_len(), 4);
    }

    #[test]
    fn growth_exact_small_counts_match_enumeration() {
        for spec in [spec23(), spec33(), FreeProductSpec::cyclic(2, 5).unwrap()] {
            let growth = fp_growth_exact(&spec, 8);
            assert_eq!(growth.counts[0], 1);
            // enumeration oracle: BFS over normal forms, count vertices gA
            // (normal forms with no trailing A-syllable) by tree distance
            let mut layer: BTreeSet<FPElement> = BTreeSet::new();
            layer.insert(FPElement::identity());
            let mut seen = layer.clone();
            let mut counts = vec![0u64; 9];
            counts[0] = 1;
            for _ in 0..10 {
                let mut next = BTreeSet::new();
                for e in &layer {
                    for (f, ord) in
                        [(Factor::A, spec.a.order()), (Factor::B, spec.b.order())]
                    {
                        for v in 1..ord {
                            let s = FPElement::syllable(f, v as u8).unwrap();
                            let p = fp_mul(e, &s, &spec);
                            if seen.insert(p.clone()) {
                                next.insert(p);
                            }
                        }
                    }
                }
                layer = next;
            }
            let mut vertices: BTreeSet<Vec<(Factor, u8)>> = BTreeSet::new();
            for e in &seen {
                let mut syl = e.syllables().to_vec();
                if matches!(syl.last(), Some((Factor::A, _))) {
                    syl.pop();
                }
                vertices.insert(syl);
            }
            for v in vertices {
                let d = 2 * v.iter().filter(|(f, _)| *f == Factor::B).count();
                if d <= 8 && d > 0 {
                    counts[d] += 1;
                }
            }
            assert_eq!(growth.counts, counts, "sizes {:?}", spec.sizes());
        }
    }

    #[test]
    fn growth_exact_formula_check() {
        // counts at distance 2m follow |A|(|B|−1)((|A|−1)(|B|−1))^{m−1}
        let spec = spec23();
        let g = fp_growth_exact(&spec, 10);
        let (ao, bo) = (2u64, 3u64);
        for m in 1..=5usize {
            let expect = ao * (bo - 1) * ((ao - 1) * (bo - 1)).pow(m as u32 - 1);
            assert_eq!(g.counts[2 * m], expect);
        }
        assert!((g.delta - 0.5 * 2.0f64.ln()).abs() < 1e-15);
        assert!((fp_growth_exact(&spec33(), 2).delta - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn syllable_first_passage_symmetric_case() {
        let spec = spec33();
        let m = solve_rho(&spec).unwrap();
        let (fa, fb) = syllable_first_passage(&spec, &m);
        // symmetric (3,3): f = 1/2 from 2f² − 3f + 1 = 0
        assert!((fa - 0.5).abs() < 1e-12, "fa {fa}");
        assert!((fb - 0.5).abs() < 1e-12);
    }

    #[test]
    fn walk_delta_23() {
        let spec = spec23();
        let m = solve_rho(&spec).unwrap();
        let rep = fp_walk_delta(&spec, &m, 2000, 300, RngState::new(31, 0)).unwrap();
        let target = 0.5 * 2.0f64.ln();
        assert!(
            (rep.delta - target).abs() < 0.05 * target,
            "delta {} target {target}",
            rep.delta
        );
        assert_eq!(rep.metric, "tree");
    }

    #[test]
    fn walk_delta_33() {
        let spec = spec33();
        let m = solve_rho(&spec).unwrap();
        let rep = fp_walk_delta(&spec, &m, 2000, 300, RngState::new(31, 0)).unwrap();
        let target = 2.0f64.ln();
        assert!((rep.delta - target).abs() < 0.05 * target, "delta {}", rep.delta);
    }

    #[test]
    fn walk_delta_matches_exact_growth() {
        for (ao, bo) in [(2usize, 3usize), (3, 3), (2, 5)] {
            let spec = FreeProductSpec::cyclic(ao, bo).unwrap();
            let m = solve_rho(&spec).unwrap();
            let rep = fp_walk_delta(&spec, &m, 1500, 200, RngState::new(8, 0)).unwrap();
            let exact = fp_growth_exact(&spec, 2).delta;
            assert!(
                (rep.delta - exact).abs() < 0.05 * exact,
                "({ao},{bo}): walk {} exact {exact}",
                rep.delta
            );
        }
    }

    #[test]
    fn walk_delta_deterministic() {
        let spec = spec23();
        let m = solve_rho(&spec).unwrap();
        let a = fp_walk_delta(&spec, &m, 200, 50, RngState::new(3, 1)).unwrap();
        let b = fp_walk_delta(&spec, &m, 200, 50, RngState::new(3, 1)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn drift_positive_across_specs() {
        for (ao, bo) in [(2usize, 3usize), (3, 3), (2, 5), (4, 7), (10, 10)] {
            let spec = FreeProductSpec::cyclic(ao, bo).unwrap();
            let m = solve_rho(&spec).unwrap();
            let rep = fp_walk_delta(&spec, &m, 300, 60, RngState::new(1, 0)).unwrap();
            assert!(rep.drift.value > 3.0 * rep.drift.std_error, "({ao},{bo})");
        }
    }
}
