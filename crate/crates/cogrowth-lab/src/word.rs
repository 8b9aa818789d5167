//! Exact arithmetic for reduced words in the free group F_k, sphere
//! enumeration and validated step distributions.
//!
//! A letter is a signed generator index in {±1,..,±k}; negative means
//! inverse. Words are kept reduced at all times, so `letters.len()` is the
//! word length ‖g‖ in the word metric.

use std::collections::BTreeMap;
use std::fmt;

use crate::budget;
use crate::error::{LabError, Result};

/// Rank of the free group, k ≥ 2 (non-amenable range).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FreeGroupRank(u8);

impl FreeGroupRank {
    pub fn new(k: u8) -> Result<Self> {
        if k < 2 || k > 26 {
            return Err(LabError::Precondition(format!(
                "rank must satisfy 2 <= k <= 26, got {k}"
            )));
        }
        Ok(FreeGroupRank(k))
    }

    pub fn get(&self) -> u8 {
        self.0
    }

    /// Alphabet in enumeration order: generators before inverses per index,
    /// i.e. 1, -1, 2, -2, ...
    pub fn alphabet(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(2 * self.0 as usize);
        for i in 1..=self.0 as i8 {
            out.push(i);
            out.push(-i);
        }
        out
    }
}

/// A reduced word in F_k.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Word {
    rank: u8,
    letters: Vec<i8>,
}

impl Word {
    pub fn identity(rank: FreeGroupRank) -> Self {
        Word { rank: rank.get(), letters: Vec::new() }
    }

    /// Reduce an arbitrary letter sequence by stack scan. Idempotent.
    pub fn reduce(rank: FreeGroupRank, raw: &[i32]) -> Result<Self> {
        let k = rank.get() as i32;
        let mut stack: Vec<i8> = Vec::with_capacity(raw.len());
        for &l in raw {
            if l == 0 || l.abs() > k {
                return Err(LabError::InvalidAlphabet(l, rank.get()));
            }
            let l = l as i8;
            if stack.last() == Some(&-l) {
                stack.pop();
            } else {
                stack.push(l);
            }
        }
        Ok(Word { rank: rank.get(), letters: stack })
    }

    /// Build directly from letters already known to be reduced and in range.
    pub(crate) fn from_reduced(rank: u8, letters: Vec<i8>) -> Self {
        debug_assert!(letters.windows(2).all(|w| w[0] != -w[1]));
        Word { rank, letters }
    }

    pub fn rank(&self) -> FreeGroupRank {
        FreeGroupRank(self.rank)
    }

    pub fn letters(&self) -> &[i8] {
        &self.letters
    }

    /// Word length ‖g‖.
    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_identity(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn generator(rank: FreeGroupRank, i: i8) -> Result<Self> {
        if i == 0 || i.unsigned_abs() > rank.get() {
            return Err(LabError::InvalidAlphabet(i as i32, rank.get()));
        }
        Ok(Word { rank: rank.get(), letters: vec![i] })
    }

    pub fn inverse(&self) -> Self {
        Word {
            rank: self.rank,
            letters: self.letters.iter().rev().map(|&l| -l).collect(),
        }
    }

    /// Reduced product a·b. Length is at most len(a)+len(b).
    pub fn mul(&self, other: &Word) -> Result<Self> {
        if self.rank != other.rank {
            return Err(LabError::RankMismatch(self.rank, other.rank));
        }
        let mut letters = self.letters.clone();
        for &l in &other.letters {
            if letters.last() == Some(&-l) {
                letters.pop();
            } else {
                letters.push(l);
            }
        }
        Ok(Word { rank: self.rank, letters })
    }

    /// In-place right multiplication by a single letter; used in walk loops.
    pub(crate) fn push_letter(&mut self, l: i8) {
        if self.letters.last() == Some(&-l) {
            self.letters.pop();
        } else {
            self.letters.push(l);
        }
    }

    /// g·x·g⁻¹, with the length bound ‖gxg⁻¹‖ ≤ 2‖g‖ + ‖x‖.
    pub fn conjugate(&self, x: &Word) -> Result<Self> {
        let out = self.mul(x)?.mul(&self.inverse())?;
        debug_assert!(out.len() <= 2 * self.len() + x.len());
        Ok(out)
    }
}

impl fmt::Display for Word {
    /// Compact string form: a..z for generators, A..Z for inverses, "e" for
    /// the identity.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.letters.is_empty() {
            return write!(f, "e");
        }
        for &l in &self.letters {
            let c = if l > 0 {
                (b'a' + (l - 1) as u8) as char
            } else {
                (b'A' + (-l - 1) as u8) as char
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl serde::Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl Word {
    pub fn parse(rank: FreeGroupRank, s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "e" || s == "1" {
            return Ok(Word::identity(rank));
        }
        let mut raw = Vec::with_capacity(s.len());
        for c in s.chars() {
            let l = match c {
                'a'..='z' => (c as u8 - b'a') as i32 + 1,
                'A'..='Z' => -((c as u8 - b'A') as i32 + 1),
                _ => return Err(LabError::Parse(format!("bad word character {c:?}"))),
            };
            raw.push(l);
        }
        Word::reduce(rank, &raw)
    }
}

/// Number of reduced words of length exactly n: 2k(2k−1)^{n−1}, 1 for n = 0.
pub fn sphere_size(rank: FreeGroupRank, n: usize) -> u64 {
    let k = rank.get() as u64;
    if n == 0 {
        return 1;
    }
    2 * k * (2 * k - 1).pow((n - 1) as u32)
}

/// Deterministic lexicographic enumeration of the sphere of radius n,
/// alphabet order 1, -1, 2, -2, ...
pub fn enumerate_sphere(rank: FreeGroupRank, n: usize) -> Result<SphereIter> {
    let count = sphere_size(rank, n);
    let cap = budget::enumeration_cap();
    if count > cap {
        return Err(LabError::BudgetExceeded(
            format!("sphere of radius {n} in F_{}", rank.get()),
            count,
        ));
    }
    Ok(SphereIter { rank, n, stack: vec![], started: false, done: false })
}

pub struct SphereIter {
    rank: FreeGroupRank,
    n: usize,
    stack: Vec<i8>,
    started: bool,
    done: bool,
}

impl SphereIter {
    fn alphabet_pos(&self, l: i8) -> usize {
        // position of l in the order 1,-1,2,-2,...
        let idx = (l.unsigned_abs() as usize - 1) * 2;
        if l > 0 {
            idx
        } else {
            idx + 1
        }
    }

    fn next_letter(&self, after: Option<i8>, forbidden: Option<i8>) -> Option<i8> {
        let alphabet = self.rank.alphabet();
        let start = match after {
            None => 0,
            Some(l) => self.alphabet_pos(l) + 1,
        };
        alphabet[start..]
            .iter()
            .copied()
            .find(|&l| Some(-l) != forbidden)
    }
}

impl Iterator for SphereIter {
    type Item = Word;

    fn next(&mut self) -> Option<Word> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            // descend to the lexicographically first word of length n
            while self.stack.len() < self.n {
                let last = self.stack.last().copied();
                let l = self.next_letter(None, last)?;
                self.stack.push(l);
            }
            if self.n == 0 {
                self.done = true;
                return Some(Word::identity(self.rank));
            }
            return Some(Word::from_reduced(self.rank.get(), self.stack.clone()));
        }
        // advance like an odometer over reduced words
        loop {
            let cur = match self.stack.pop() {
                Some(c) => c,
                None => {
                    self.done = true;
                    return None;
                }
            };
            let prev = self.stack.last().copied();
            if let Some(nl) = self.next_letter(Some(cur), prev) {
                self.stack.push(nl);
                // refill to full length with first admissible letters
                while self.stack.len() < self.n {
                    let last = self.stack.last().copied();
                    let l = self.next_letter(None, last).expect("k >= 2");
                    self.stack.push(l);
                }
                return Some(Word::from_reduced(self.rank.get(), self.stack.clone()));
            }
        }
    }
}

/// Enumerate the closed ball of radius n, sphere by sphere.
pub fn enumerate_ball(rank: FreeGroupRank, n: usize) -> Result<Vec<Word>> {
    let mut total = 0u64;
    for j in 0..=n {
        total = total.saturating_add(sphere_size(rank, j));
    }
    if total > budget::enumeration_cap() {
        return Err(LabError::BudgetExceeded(
            format!("ball of radius {n} in F_{}", rank.get()),
            total,
        ));
    }
    let mut out = Vec::with_capacity(total as usize);
    for j in 0..=n {
        out.extend(enumerate_sphere(rank, j)?);
    }
    Ok(out)
}

/// A finitely supported probability measure on F_k.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    rank: FreeGroupRank,
    atoms: Vec<(Word, f64)>,
    cumulative: Vec<f64>,
    lazy: bool,
}

/// Outcome of `validate_distribution`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DistributionReport {
    pub sum_ok: bool,
    pub positive: bool,
    pub symmetric: bool,
    pub generating: bool,
    pub missing_direction: Option<String>,
    pub lazy: bool,
}

impl DistributionReport {
    pub fn is_valid(&self) -> bool {
        self.sum_ok && self.positive && self.generating
    }
}

impl StepDistribution {
    /// Build a distribution; weights must be positive and sum to 1 within
    /// 1e-12. The identity atom is forbidden unless `lazy` is set (lazy walks
    /// rescale the drift by the non-lazy mass).
    pub fn new(rank: FreeGroupRank, atoms: BTreeMap<Word, f64>, lazy: bool) -> Result<Self> {
        if atoms.is_empty() {
            return Err(LabError::InvalidDistribution("empty support".into()));
        }
        let mut sum = 0.0;
        for (w, &p) in &atoms {
            if w.rank() != rank {
                return Err(LabError::RankMismatch(w.rank().get(), rank.get()));
            }
            if !(p > 0.0) {
                return Err(LabError::InvalidDistribution(format!(
                    "non-positive weight {p} at {w}"
                )));
            }
            if w.is_identity() && !lazy {
                return Err(LabError::InvalidDistribution(
                    "identity atom requires the lazy flag".into(),
                ));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidDistribution(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        let atoms: Vec<(Word, f64)> = atoms.into_iter().collect();
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for (_, p) in &atoms {
            acc += p;
            cumulative.push(acc);
        }
        // guard against roundoff at the top
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(StepDistribution { rank, atoms, cumulative, lazy })
    }

    /// The canonical measure μ_k: uniform on the 2k standard generators and
    /// inverses.
    pub fn uniform(rank: FreeGroupRank) -> Self {
        let p = 1.0 / (2.0 * rank.get() as f64);
        let atoms: BTreeMap<Word, f64> = rank
            .alphabet()
            .into_iter()
            .map(|l| (Word::generator(rank, l).unwrap(), p))
            .collect();
        StepDistribution::new(rank, atoms, false).unwrap()
    }

    /// Point mass at a single word (degenerate, non-generating; useful as a
    /// deterministic control).
    pub fn point_mass(w: Word) -> Result<Self> {
        if w.is_identity() {
            return Err(LabError::InvalidDistribution(
                "point mass at the identity".into(),
            ));
        }
        let rank = w.rank();
        let mut atoms = BTreeMap::new();
        atoms.insert(w, 1.0);
        StepDistribution::new(rank, atoms, false)
    }

    pub fn rank(&self) -> FreeGroupRank {
        self.rank
    }

    pub fn atoms(&self) -> &[(Word, f64)] {
        &self.atoms
    }

    pub fn is_lazy(&self) -> bool {
        self.lazy
    }

    pub fn max_atom_len(&self) -> usize {
        self.atoms.iter().map(|(w, _)| w.len()).max().unwrap_or(0)
    }

    /// True when every atom is a single letter; several exact DP routines
    /// require this.
    pub fn is_nearest_neighbor(&self) -> bool {
        self.atoms.iter().all(|(w, _)| w.len() == 1)
    }

    pub fn weight_of(&self, w: &Word) -> f64 {
        self.atoms
            .iter()
            .find(|(a, _)| a == w)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    /// Draw one atom given a uniform u in [0,1).
    pub fn pick(&self, u: f64) -> &Word {
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.atoms.len() - 1);
        &self.atoms[idx].0
    }

    /// Check sum-to-one, positivity, symmetry (μ = μ̌) and that the support
    /// together with inverses generates all of F_k (the folded support graph
    /// is a wedge of k loops at one vertex).
    pub fn validate(&self) -> DistributionReport {
        let sum: f64 = self.atoms.iter().map(|(_, p)| p).sum();
        let sum_ok = (sum - 1.0).abs() <= 1e-12;
        let positive = self.atoms.iter().all(|(_, p)| *p > 0.0);
        let symmetric = self.atoms.iter().all(|(w, p)| {
            let q = self.weight_of(&w.inverse());
            (p - q).abs() <= 1e-12
        });
        let gens: Vec<Word> = self.atoms.iter().map(|(w, _)| w.clone()).collect();
        let graph = crate::subgroup::fold(self.rank, &gens);
        let generating = graph.is_full_wedge();
        let missing_direction = if generating {
            None
        } else {
            // name a generator not reachable as a basepoint loop
            (1..=self.rank.get() as i8)
                .map(|i| Word::generator(self.rank, i).unwrap())
                .find(|g| !graph.membership(g))
                .map(|g| g.to_string())
        };
        DistributionReport {
            sum_ok,
            positive,
            symmetric,
            generating,
            missing_direction,
            lazy: self.lazy,
        }
    }

    /// Serialize as the key-value table format: `rank k` header then
    /// `word weight` lines.
    pub fn to_table(&self) -> String {
        let mut out = format!("rank {}\n", self.rank.get());
        for (w, p) in &self.atoms {
            out.push_str(&format!("{w} {p}\n"));
        }
        out
    }

    pub fn parse_table(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| LabError::Parse("empty distribution table".into()))?;
        let mut parts = header.split_whitespace();
        let (Some("rank"), Some(kstr)) = (parts.next(), parts.next()) else {
            return Err(LabError::Parse("expected `rank k` header".into()));
        };
        let k: u8 = kstr
            .parse()
            .map_err(|_| LabError::Parse(format!("bad rank {kstr}")))?;
        let rank = FreeGroupRank::new(k)?;
        let mut atoms = BTreeMap::new();
        let mut lazy = false;
        for line in lines {
            let mut parts = line.split_whitespace();
            let (Some(wstr), Some(pstr)) = (parts.next(), parts.next()) else {
                return Err(LabError::Parse(format!("bad table line {line:?}")));
            };
            let w = Word::parse(rank, wstr)?;
            let p: f64 = pstr
                .parse()
                .map_err(|_| LabError::Parse(format!("bad weight {pstr}")))?;
            if w.is_identity() {
                lazy = true;
            }
            atoms.insert(w, p);
        }
        StepDistribution::new(rank, atoms, lazy)
    }
}
