//! Stallings core graphs for finitely generated subgroups H ≤ F_k.
//!
//! The core graph is a folded, based, generator-labeled automaton whose
//! basepoint loops are exactly the elements of H. On top of it sit the exact
//! growth machinery: non-backtracking spectral radius (= e^{δ(H)}), loop
//! counts, Poincaré series, Schreier systoles and confinement probes.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::collections::hash_map::Entry;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::word::{FreeGroupRank, Word};

/// Folded core graph. Edges are deterministic: at most one outgoing edge per
/// vertex per signed generator. Vertex 0 is the basepoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreGraph {
    rank: FreeGroupRank,
    adj: Vec<BTreeMap<i8, u32>>,
}

struct Folder {
    parent: Vec<u32>,
    adj: Vec<BTreeMap<i8, Vec<u32>>>,
}

impl Folder {
    fn new() -> Self {
        Folder { parent: vec![0], adj: vec![BTreeMap::new()] }
    }

    fn fresh(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.adj.push(BTreeMap::new());
        id
    }

    fn find(&mut self, v: u32) -> u32 {
        let mut root = v;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = v;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn add_edge(&mut self, u: u32, l: i8, v: u32) {
        self.adj[u as usize].entry(l).or_default().push(v);
        self.adj[v as usize].entry(-l).or_default().push(u);
    }

    /// Merge vertices until the automaton is deterministic.
    fn fold(&mut self) {
        loop {
            let mut to_merge: Option<(u32, u32)> = None;
            'scan: for u in 0..self.parent.len() as u32 {
                if self.find(u) != u {
                    continue;
                }
                let labels: Vec<i8> = self.adj[u as usize].keys().copied().collect();
                for l in labels {
                    let targets = self.adj[u as usize].get(&l).cloned().unwrap_or_default();
                    let mut seen: Option<u32> = None;
                    for t in targets {
                        let t = self.find(t);
                        match seen {
                            None => seen = Some(t),
                            Some(s) if s != t => {
                                to_merge = Some((s, t));
                                break 'scan;
                            }
                            _ => {}
                        }
                    }
                }
            }
            match to_merge {
                None => break,
                Some((a, b)) => {
                    // keep the smaller id (so the basepoint 0 stays a root)
                    let (keep, drop) = if a < b { (a, b) } else { (b, a) };
                    self.parent[drop as usize] = keep;
                    let edges = std::mem::take(&mut self.adj[drop as usize]);
                    for (l, ts) in edges {
                        self.adj[keep as usize].entry(l).or_default().extend(ts);
                    }
                }
            }
        }
    }

    fn into_graph(mut self, rank: FreeGroupRank) -> CoreGraph {
        self.fold();
        // renumber reachable roots, basepoint first
        let base = self.find(0);
        let mut index: HashMap<u32, u32> = HashMap::new();
        index.insert(base, 0);
        let mut order = vec![base];
        let mut qi = 0;
        while qi < order.len() {
            let u = order[qi];
            qi += 1;
            let labels: Vec<(i8, Vec<u32>)> = self.adj[u as usize]
                .iter()
                .map(|(l, ts)| (*l, ts.clone()))
                .collect();
            for (_, ts) in labels {
                for t in ts {
                    let t = self.find(t);
                    if !index.contains_key(&t) {
                        index.insert(t, order.len() as u32);
                        order.push(t);
                    }
                }
            }
        }
        let mut adj: Vec<BTreeMap<i8, u32>> = vec![BTreeMap::new(); order.len()];
        for (&old, &new) in &index {
            let labels: Vec<(i8, u32)> = self.adj[old as usize]
                .iter()
                .map(|(l, ts)| (*l, ts[0]))
                .collect();
            for (l, t) in labels {
                let t = self.find(t);
                adj[new as usize].insert(l, index[&t]);
            }
        }
        let mut g = CoreGraph { rank, adj };
        g.trim();
        g
    }
}

/// Fold the flower of the given generator words into a core graph.
/// An empty list yields the single-vertex graph of the trivial subgroup.
pub fn fold(rank: FreeGroupRank, generators: &[Word]) -> CoreGraph {
    let mut f = Folder::new();
    for g in generators {
        let mut cur = 0u32;
        let letters = g.letters();
        for (i, &l) in letters.iter().enumerate() {
            let next = if i + 1 == letters.len() { 0 } else { f.fresh() };
            f.add_edge(cur, l, next);
            cur = next;
        }
    }
    f.into_graph(rank)
}

/// Verdict of `critical_exponent`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CriticalExponent {
    /// Trivial subgroup: δ undefined.
    Empty,
    Value { delta: f64, spectrum: NBSpectrum },
}

impl CriticalExponent {
    pub fn delta(&self) -> Option<f64> {
        match self {
            CriticalExponent::Empty => None,
            CriticalExponent::Value { delta, .. } => Some(*delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NBSpectrum {
    pub spectral_radius: f64,
    pub iterations: u32,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PoincareVerdict {
    Diverging,
    Converging,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareTable {
    pub s: f64,
    /// rows (j, partial_sum, term_ratio)
    pub rows: Vec<(usize, f64, f64)>,
    pub verdict: PoincareVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Systole {
    Found(usize),
    ExceedsRadius,
}

#[derive(Debug, Clone, Serialize)]
pub enum ConfinementVerdict {
    /// Complete automaton swept exhaustively; the maximal coset systole.
    ConfinedAtScale { max_systole: usize },
    /// Coset with systole above the threshold.
    Witness { conjugator: String, systole: usize },
    Inconclusive,
}

impl CoreGraph {
    pub fn rank(&self) -> FreeGroupRank {
        self.rank
    }

    pub fn num_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn basepoint(&self) -> u32 {
        0
    }

    fn degree(&self, v: u32) -> usize {
        self.adj[v as usize].len()
    }

    fn step(&self, v: u32, l: i8) -> Option<u32> {
        self.adj[v as usize].get(&l).copied()
    }

    /// Remove degree-≤1 vertices other than the basepoint.
    fn trim(&mut self) {
        loop {
            let victim = (1..self.adj.len() as u32).find(|&v| self.degree(v) <= 1);
            let Some(v) = victim else { break };
            // drop the vertex and its single edge (if any), then compact ids
            let edges: Vec<(i8, u32)> = self.adj[v as usize].iter().map(|(l, t)| (*l, *t)).collect();
            for (l, t) in edges {
                self.adj[t as usize].remove(&-l);
            }
            self.adj.remove(v as usize);
            for m in &mut self.adj {
                for t in m.values_mut() {
                    if *t > v {
                        *t -= 1;
                    }
                }
            }
        }
    }

    /// h ∈ H iff the path labeled h from the basepoint exists and closes up.
    pub fn membership(&self, g: &Word) -> bool {
        let mut cur = 0u32;
        for &l in g.letters() {
            match self.step(cur, l) {
                Some(next) => cur = next,
                None => return false,
            }
        }
        cur == 0
    }

    /// Single vertex carrying all 2k loops, i.e. H = F_k.
    pub fn is_full_wedge(&self) -> bool {
        self.adj.len() == 1 && self.adj[0].len() == 2 * self.rank.get() as usize
    }

    /// Complete automaton: every vertex has all 2k outgoing slots; this is
    /// exactly the finite-index case.
    pub fn is_complete(&self) -> bool {
        let full = 2 * self.rank.get() as usize;
        self.adj.iter().all(|m| m.len() == full)
    }

    pub fn is_trivial(&self) -> bool {
        self.adj.len() == 1 && self.adj[0].is_empty()
    }

    /// Free generating set read off a BFS spanning tree (one generator per
    /// non-tree edge).
    pub fn generators(&self) -> Vec<Word> {
        let n = self.adj.len();
        let mut parent: Vec<Option<(u32, i8)>> = vec![None; n];
        let mut visited = vec![false; n];
        visited[0] = true;
        let mut queue = VecDeque::from([0u32]);
        let mut order = vec![0u32];
        while let Some(u) = queue.pop_front() {
            for (&l, &t) in &self.adj[u as usize] {
                if !visited[t as usize] {
                    visited[t as usize] = true;
                    parent[t as usize] = Some((u, l));
                    queue.push_back(t);
                    order.push(t);
                }
            }
        }
        let path_to = |mut v: u32| -> Vec<i8> {
            let mut rev = Vec::new();
            while let Some((p, l)) = parent[v as usize] {
                rev.push(l);
                v = p;
            }
            rev.reverse();
            rev
        };
        let mut tree_edges: Vec<(u32, i8)> = Vec::new();
        for v in 0..n as u32 {
            if let Some((p, l)) = parent[v as usize] {
                tree_edges.push((p, l));
            }
        }
        let mut gens = Vec::new();
        for u in 0..n as u32 {
            for (&l, &t) in &self.adj[u as usize] {
                // take each undirected edge once, skip tree edges
                let canonical = l > 0;
                if !canonical {
                    continue;
                }
                let is_tree = tree_edges.contains(&(u, l)) || tree_edges.contains(&(t, -l));
                if is_tree {
                    continue;
                }
                let mut letters = path_to(u);
                letters.push(l);
                let mut back = path_to(t);
                back.reverse();
                for bl in back {
                    letters.push(-bl);
                }
                let raw: Vec<i32> = letters.iter().map(|&x| x as i32).collect();
                let w = Word::reduce(self.rank, &raw).expect("letters in range");
                if !w.is_identity() {
                    gens.push(w);
                }
            }
        }
        gens
    }

    /// Core graph of H^g = g⁻¹ H g.
    pub fn conjugate_subgroup(&self, g: &Word) -> CoreGraph {
        let gens: Vec<Word> = self
            .generators()
            .iter()
            .map(|w| g.inverse().conjugate(w).expect("same rank"))
            .collect();
        fold(self.rank, &gens)
    }

    /// Canonical serialization: BFS numbering from the basepoint in label
    /// order. Equal strings iff equal subgroups.
    pub fn canonical_form(&self) -> String {
        let n = self.adj.len();
        let mut index: Vec<Option<u32>> = vec![None; n];
        index[0] = Some(0);
        let mut order = vec![0u32];
        let mut qi = 0;
        let mut next_id = 1u32;
        while qi < order.len() {
            let u = order[qi];
            qi += 1;
            for (_, &t) in &self.adj[u as usize] {
                if index[t as usize].is_none() {
                    index[t as usize] = Some(next_id);
                    next_id += 1;
                    order.push(t);
                }
            }
        }
        let mut lines = Vec::new();
        for &u in &order {
            for (&l, &t) in &self.adj[u as usize] {
                if l > 0 {
                    lines.push(format!(
                        "{} {} {}",
                        index[u as usize].unwrap(),
                        l,
                        index[t as usize].unwrap()
                    ));
                }
            }
        }
        lines.sort();
        format!("rank {}\nvertices {}\n{}", self.rank.get(), n, lines.join("\n"))
    }

    fn directed_edges(&self) -> Vec<(u32, i8, u32)> {
        let mut out = Vec::new();
        for u in 0..self.adj.len() as u32 {
            for (&l, &t) in &self.adj[u as usize] {
                out.push((u, l, t));
            }
        }
        out
    }

    /// Perron value of the non-backtracking edge operator by power iteration
    /// on B + I (the shift removes periodicity).
    pub fn nb_spectral_radius(&self, tol: f64, max_iter: u32) -> Option<NBSpectrum> {
        let edges = self.directed_edges();
        if edges.is_empty() {
            return None;
        }
        let m = edges.len();
        let mut edge_id: HashMap<(u32, i8), usize> = HashMap::new();
        for (i, &(u, l, _)) in edges.iter().enumerate() {
            edge_id.insert((u, l), i);
        }
        // successors under the non-backtracking rule
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (i, &(_, l, t)) in edges.iter().enumerate() {
            for (&ml, _) in &self.adj[t as usize] {
                if ml != -l {
                    succ[i].push(edge_id[&(t, ml)]);
                }
            }
        }
        let mut x = vec![1.0f64; m];
        let mut lambda = 0.0f64;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        for it in 1..=max_iter {
            let mut y = x.clone(); // the +I part
            for i in 0..m {
                let xi = x[i];
                for &j in &succ[i] {
                    y[j] += xi;
                }
            }
            let norm = y.iter().fold(0.0f64, |a, &v| a.max(v));
            let new_lambda = norm;
            for v in &mut y {
                *v /= norm;
            }
            // residual of (B+I)x = λx in the sup norm
            residual = x
                .iter()
                .zip(y.iter())
                .fold(0.0f64, |a, (&xi, &yi)| a.max((xi - yi).abs()));
            let stable = (new_lambda - lambda).abs() <= tol && residual <= tol.max(1e-13);
            lambda = new_lambda;
            x = y;
            iterations = it;
            if stable {
                break;
            }
        }
        Some(NBSpectrum { spectral_radius: lambda - 1.0, iterations, residual })
    }

    /// δ(H) = log of the non-backtracking Perron value; `Empty` for the
    /// trivial subgroup.
    pub fn critical_exponent(&self, tol: f64) -> CriticalExponent {
        match self.nb_spectral_radius(tol, 100_000) {
            None => CriticalExponent::Empty,
            Some(spec) => {
                let delta = spec.spectral_radius.max(1.0).ln();
                CriticalExponent::Value { delta, spectrum: spec }
            }
        }
    }

    /// Exact |{h ∈ H : ‖h‖ = n}| for n = 0..=n_max via non-backtracking path
    /// DP. Counts are carried as f64 with a log-scale offset; `log_counts`
    /// entry is ln(count), -inf for zero.
    pub fn ball_counts(&self, n_max: usize) -> Vec<f64> {
        let edges = self.directed_edges();
        let m = edges.len();
        let mut edge_id: HashMap<(u32, i8), usize> = HashMap::new();
        for (i, &(u, l, _)) in edges.iter().enumerate() {
            edge_id.insert((u, l), i);
        }
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (i, &(_, l, t)) in edges.iter().enumerate() {
            for (&ml, _) in &self.adj[t as usize] {
                if ml != -l {
                    succ[i].push(edge_id[&(t, ml)]);
                }
            }
        }
        let mut log_counts = vec![f64::NEG_INFINITY; n_max + 1];
        log_counts[0] = 0.0; // the identity
        if n_max == 0 || m == 0 {
            return log_counts;
        }
        // x[e] = number of NB paths from the basepoint of length n ending
        // with edge e, rescaled; `scale` is the accumulated ln factor.
        let mut x = vec![0.0f64; m];
        for (i, &(u, _, _)) in edges.iter().enumerate() {
            if u == 0 {
                x[i] = 1.0;
            }
        }
        let mut scale = 0.0f64;
        for n in 1..=n_max {
            let closing: f64 = edges
                .iter()
                .enumerate()
                .filter(|(_, &(_, _, t))| t == 0)
                .map(|(i, _)| x[i])
                .sum();
            if closing > 0.0 {
                log_counts[n] = closing.ln() + scale;
            }
            if n == n_max {
                break;
            }
            let mut y = vec![0.0f64; m];
            for i in 0..m {
                let xi = x[i];
                if xi == 0.0 {
                    continue;
                }
                for &j in &succ[i] {
                    y[j] += xi;
                }
            }
            let mx = y.iter().fold(0.0f64, |a, &v| a.max(v));
            if mx > 1e250 {
                for v in &mut y {
                    *v /= mx;
                }
                scale += mx.ln();
            }
            x = y;
        }
        log_counts
    }

    /// Exact per-length element counts as integers, for small n.
    pub fn ball_counts_u64(&self, n_max: usize) -> Vec<u64> {
        self.ball_counts(n_max)
            .iter()
            .map(|&lc| if lc.is_finite() { lc.exp().round() as u64 } else { 0 })
            .collect()
    }

    /// Growth-rate estimate: least-squares slope of ln(count) over the upper
    /// half of the nonzero entries.
    pub fn growth_slope(&self, n_max: usize) -> Option<f64> {
        slope_fit(&self.ball_counts(n_max))
    }

    /// Partial sums of P_H(s) = Σ_{h∈H} e^{-s‖h‖}, identity term included.
    pub fn poincare_partial(&self, s: f64, j_max: usize) -> PoincareTable {
        let log_counts = self.ball_counts(j_max);
        let mut rows = Vec::with_capacity(j_max + 1);
        let mut sum = 0.0f64;
        let mut prev_term = f64::NAN;
        let mut last_ratios: Vec<f64> = Vec::new();
        let mut last_terms: Vec<f64> = Vec::new();
        for j in 0..=j_max {
            let term = if log_counts[j].is_finite() {
                (log_counts[j] - s * j as f64).exp()
            } else {
                0.0
            };
            sum += term;
            let ratio = if term > 0.0 && prev_term > 0.0 { term / prev_term } else { 0.0 };
            if term > 0.0 {
                if prev_term > 0.0 {
                    last_ratios.push(ratio);
                }
                last_terms.push(term);
                prev_term = term;
            }
            rows.push((j, sum, ratio));
        }
        let tail_ratio = last_ratios.iter().rev().take(5).fold(0.0f64, |a, &r| a.max(r));
        let tail_term = last_terms.iter().rev().take(5).fold(0.0f64, |a, &t| a.max(t));
        let verdict = if last_terms.is_empty() || tail_term < 1e-12 || tail_ratio < 0.999 {
            PoincareVerdict::Converging
        } else if tail_ratio >= 0.999 && tail_term > 1e-9 {
            PoincareVerdict::Diverging
        } else {
            PoincareVerdict::Inconclusive
        };
        PoincareTable { s, rows, verdict }
    }

    /// Shortest non-backtracking loop length at vertex v, up to `cap`.
    pub fn girth_at(&self, v: u32, cap: usize) -> Option<usize> {
        let mut dist: HashMap<(u32, i8), usize> = HashMap::new();
        let mut queue: VecDeque<(u32, i8)> = VecDeque::new();
        for (&l, &t) in &self.adj[v as usize] {
            if t == v {
                return Some(1);
            }
            dist.insert((v, l), 1);
            queue.push_back((v, l));
        }
        while let Some((u, l)) = queue.pop_front() {
            let d = dist[&(u, l)];
            if d >= cap {
                continue;
            }
            let t = self.step(u, l).unwrap();
            for (&ml, &mt) in &self.adj[t as usize] {
                if ml == -l {
                    continue;
                }
                if mt == v {
                    return Some(d + 1);
                }
                if let Entry::Vacant(e) = dist.entry((t, ml)) {
                    e.insert(d + 1);
                    queue.push_back((t, ml));
                }
            }
        }
        None
    }

    /// Length of the shortest nontrivial element of H^g: the systole of the
    /// Schreier graph at the coset Hg. Hairs are handled analytically:
    /// a coset at depth d inside a hair rooted at core vertex u has systole
    /// 2d + girth(u).
    pub fn schreier_systole(&self, g: &Word, search_radius: usize) -> Systole {
        let cap = 2 * search_radius;
        let mut cur = 0u32;
        let letters = g.letters();
        for (i, &l) in letters.iter().enumerate() {
            match self.step(cur, l) {
                Some(next) => cur = next,
                None => {
                    // entered the hair hanging at `cur`; remaining letters
                    // descend the tree
                    let depth = letters.len() - i;
                    return match self.girth_at(cur, cap) {
                        Some(girth) if 2 * depth + girth <= cap => {
                            Systole::Found(2 * depth + girth)
                        }
                        _ => Systole::ExceedsRadius,
                    };
                }
            }
        }
        match self.girth_at(cur, cap) {
            Some(girth) => Systole::Found(girth),
            None => Systole::ExceedsRadius,
        }
    }

    /// Search cosets for one whose systole exceeds T, or certify the sweep.
    ///
    /// Finite index: exhaustive sweep of all cosets, exact maximal systole.
    /// Infinite index: any missing edge slot spawns an infinite hair, so a
    /// witness of arbitrarily large systole exists; we construct one
    /// explicitly and verify it.
    pub fn confinement_probe(&self, threshold: usize, budget: usize) -> ConfinementVerdict {
        if self.is_trivial() {
            // every conjugate is trivial: no nontrivial intersection ever
            return ConfinementVerdict::Witness { conjugator: "e".into(), systole: usize::MAX };
        }
        if self.is_complete() {
            let mut max_systole = 0usize;
            for v in 0..self.adj.len() as u32 {
                match self.girth_at(v, budget) {
                    Some(g) => max_systole = max_systole.max(g),
                    None => return ConfinementVerdict::Inconclusive,
                }
            }
            return ConfinementVerdict::ConfinedAtScale { max_systole };
        }
        // find a reachable vertex with a free slot (BFS for a short witness)
        let full = 2 * self.rank.get() as usize;
        let mut path: Vec<Vec<i8>> = vec![Vec::new(); self.adj.len()];
        let mut visited = vec![false; self.adj.len()];
        visited[0] = true;
        let mut queue = VecDeque::from([0u32]);
        let mut hair: Option<(u32, i8)> = None;
        'bfs: while let Some(u) = queue.pop_front() {
            if self.adj[u as usize].len() < full {
                let l = self
                    .rank
                    .alphabet()
                    .into_iter()
                    .find(|l| !self.adj[u as usize].contains_key(l))
                    .unwrap();
                hair = Some((u, l));
                break 'bfs;
            }
            for (&l, &t) in &self.adj[u as usize] {
                if !visited[t as usize] {
                    visited[t as usize] = true;
                    let mut p = path[u as usize].clone();
                    p.push(l);
                    path[t as usize] = p;
                    queue.push_back(t);
                }
            }
        }
        let Some((u, l)) = hair else {
            return ConfinementVerdict::Inconclusive;
        };
        let girth = self.girth_at(u, budget).unwrap_or(1);
        let depth = (threshold.saturating_sub(girth)) / 2 + 1;
        let mut letters = path[u as usize].clone();
        letters.push(l);
        // keep descending without backtracking
        while letters.len() < path[u as usize].len() + depth {
            let last = *letters.last().unwrap();
            let next = self
                .rank
                .alphabet()
                .into_iter()
                .find(|&m| m != -last)
                .unwrap();
            letters.push(next);
        }
        let raw: Vec<i32> = letters.iter().map(|&x| x as i32).collect();
        let g = Word::reduce(self.rank, &raw).unwrap();
        match self.schreier_systole(&g, threshold + girth + 2) {
            Systole::Found(s) if s > threshold => {
                ConfinementVerdict::Witness { conjugator: g.to_string(), systole: s }
            }
            Systole::ExceedsRadius => {
                ConfinementVerdict::Witness { conjugator: g.to_string(), systole: usize::MAX }
            }
            Systole::Found(_) => ConfinementVerdict::Inconclusive,
        }
    }

    /// Serialize in the exchange format: `rank k`, `vertices n`,
    /// `basepoint 0`, then `from gen to` lines with positive gen.
    pub fn to_file_format(&self) -> String {
        let mut out = format!(
            "rank {}\nvertices {}\nbasepoint 0\n",
            self.rank.get(),
            self.adj.len()
        );
        for u in 0..self.adj.len() as u32 {
            for (&l, &t) in &self.adj[u as usize] {
                if l > 0 {
                    out.push_str(&format!("{u} {l} {t}\n"));
                }
            }
        }
        out
    }

    /// Parse the exchange format; the graph is re-folded and re-cored.
    pub fn parse_file_format(text: &str) -> Result<CoreGraph> {
        let mut rank: Option<FreeGroupRank> = None;
        let mut edges: Vec<(u32, i8, u32)> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["rank", k] => {
                    let k: u8 = k.parse().map_err(|_| LabError::Parse(format!("bad rank {k}")))?;
                    rank = Some(FreeGroupRank::new(k)?);
                }
                ["vertices", _] | ["basepoint", _] => {}
                [f, g, t] => {
                    let f: u32 = f.parse().map_err(|_| LabError::Parse(line.into()))?;
                    let g: i8 = g.parse().map_err(|_| LabError::Parse(line.into()))?;
                    let t: u32 = t.parse().map_err(|_| LabError::Parse(line.into()))?;
                    let rank = rank.ok_or_else(|| LabError::Parse("edge before rank header".into()))?;
                    if g <= 0 || g as u8 > rank.get() {
                        return Err(LabError::Parse(format!("bad generator {g}")));
                    }
                    edges.push((f, g, t));
                }
                _ => return Err(LabError::Parse(format!("bad line {line:?}"))),
            }
        }
        let rank = rank.ok_or_else(|| LabError::Parse("missing rank header".into()))?;
        let mut f = Folder::new();
        let max_v = edges
            .iter()
            .map(|&(a, _, b)| a.max(b))
            .max()
            .unwrap_or(0);
        for _ in 0..max_v {
            f.fresh();
        }
        for (a, l, b) in edges {
            f.add_edge(a, l, b);
        }
        Ok(f.into_graph(rank))
    }
}

fn slope_fit(log_counts: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = log_counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &lc)| lc.is_finite())
        .map(|(n, &lc)| (n as f64, lc))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let upper = &pts[pts.len() / 2..];
    let n = upper.len() as f64;
    let sx: f64 = upper.iter().map(|p| p.0).sum();
    let sy: f64 = upper.iter().map(|p| p.1).sum();
    let sxx: f64 = upper.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = upper.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Multiplication oracle for a quotient F_k -> Q; handles must support exact
/// equality so DP states merge correctly.
pub trait QuotientOracle {
    type Handle: Clone + Eq + Hash + Ord;
    fn identity(&self) -> Self::Handle;
    /// Right-multiply by the image of a signed generator.
    fn mul(&self, h: &Self::Handle, letter: i8) -> Self::Handle;
}

/// Finite cyclic quotient Z/m with prescribed generator images.
pub struct CyclicQuotient {
    pub modulus: i64,
    pub images: Vec<i64>,
}

impl QuotientOracle for CyclicQuotient {
    type Handle = i64;
    fn identity(&self) -> i64 {
        0
    }
    fn mul(&self, h: &i64, letter: i8) -> i64 {
        let img = self.images[(letter.unsigned_abs() as usize) - 1];
        let step = if letter > 0 { img } else { -img };
        (h + step).rem_euclid(self.modulus.max(1))
    }
}

/// The identity quotient F_k -> F_k (trivial kernel).
pub struct FreeQuotient {
    pub rank: FreeGroupRank,
}

impl QuotientOracle for FreeQuotient {
    type Handle = Word;
    fn identity(&self) -> Word {
        Word::identity(self.rank)
    }
    fn mul(&self, h: &Word, letter: i8) -> Word {
        let g = Word::generator(self.rank, letter).unwrap();
        h.mul(&g).unwrap()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QuotientGrowth {
    /// c_n = number of reduced words of length n in the kernel.
    pub counts: Vec<f64>,
    pub delta_estimate: Option<f64>,
    pub fit_window: (usize, usize),
    pub states_used: usize,
}

/// Kernel growth of F_k -> Q by DP over (quotient element, last letter).
pub fn quotient_dp_growth<Q: QuotientOracle>(
    oracle: &Q,
    rank: FreeGroupRank,
    n_max: usize,
    state_budget: usize,
) -> Result<QuotientGrowth> {
    let mut counts = vec![0.0f64; n_max + 1];
    counts[0] = 1.0;
    let identity = oracle.identity();
    // state: (element, last letter) -> count of reduced words
    let mut states: BTreeMap<(Q::Handle, i8), f64> = BTreeMap::new();
    for l in rank.alphabet() {
        let h = oracle.mul(&identity, l);
        *states.entry((h, l)).or_insert(0.0) += 1.0;
    }
    let mut max_states = states.len();
    for n in 1..=n_max {
        counts[n] = states
            .iter()
            .filter(|((h, _), _)| *h == identity)
            .map(|(_, &c)| c)
            .sum();
        if n == n_max {
            break;
        }
        let mut next: BTreeMap<(Q::Handle, i8), f64> = BTreeMap::new();
        for ((h, last), c) in &states {
            for l in rank.alphabet() {
                if l == -*last {
                    continue;
                }
                let nh = oracle.mul(h, l);
                *next.entry((nh, l)).or_insert(0.0) += c;
            }
        }
        states = next;
        max_states = max_states.max(states.len());
        if states.len() > state_budget {
            return Err(LabError::BudgetExceeded(
                "quotient DP state space".into(),
                states.len() as u64,
            ));
        }
    }
    let log_counts: Vec<f64> = counts
        .iter()
        .map(|&c| if c > 0.0 { c.ln() } else { f64::NEG_INFINITY })
        .collect();
    let delta_estimate = slope_fit(&log_counts);
    Ok(QuotientGrowth {
        counts,
        delta_estimate,
        fit_window: (n_max / 2, n_max),
        states_used: max_states,
    })
}

/// Walk spectral radius of the Schreier graph H\X predicted from δ(H) by the
/// cogrowth correspondence (Grigorchuk's formula). λ₀ = 1 − ρ.
pub fn grigorchuk_rho(delta: f64, rank: FreeGroupRank) -> Result<f64> {
    let k = rank.get() as f64;
    let q = 2.0 * k - 1.0;
    let top = q.ln();
    if !(0.0..=top + 1e-12).contains(&delta) {
        return Err(LabError::Precondition(format!(
            "delta {delta} outside [0, log(2k-1) = {top}]"
        )));
    }
    let alpha = delta.exp();
    let rho = if alpha <= q.sqrt() {
        q.sqrt() / k
    } else {
        (q.sqrt() / (2.0 * k)) * (alpha / q.sqrt() + q.sqrt() / alpha)
    };
    Ok(rho)
}

/// Elstrodt relation between the critical exponent and the bottom of the
/// spectrum: λ₀ = d²/4 below the half-way point, δ(d−δ) above it.
pub fn elstrodt_lambda0(delta: f64, d: f64) -> Result<f64> {
    if !(0.0..=d).contains(&delta) {
        return Err(LabError::Precondition(format!(
            "delta {delta} outside [0, d = {d}]"
        )));
    }
    if delta <= d / 2.0 {
        Ok(d * d / 4.0)
    } else {
        Ok(delta * (d - delta))
    }
}

/// Spectral radius of the simple random walk on the 2k-regular tree truncated
/// at the given depth, by power iteration on the radial chain (the Perron
/// vector is radial).
pub fn tree_walk_spectral_radius(rank: FreeGroupRank, depth: usize) -> f64 {
    let k = rank.get() as f64;
    let n = depth + 1;
    let mut x = vec![1.0f64; n];
    let mut lambda = 0.0;
    for _ in 0..200_000 {
        let mut y = x.clone(); // +I shift against bipartite oscillation
        y[0] += x[1];
        for d in 1..depth {
            y[d] += x[d - 1] / (2.0 * k) + x[d + 1] * (2.0 * k - 1.0) / (2.0 * k);
        }
        y[depth] += x[depth - 1] / (2.0 * k);
        let norm = y.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for v in &mut y {
            *v /= norm;
        }
        let diff = x
            .iter()
            .zip(y.iter())
            .fold(0.0f64, |a, (&xi, &yi)| a.max((xi - yi).abs()));
        x = y;
        lambda = norm;
        if diff < 1e-14 {
            break;
        }
    }
    lambda - 1.0
}

#[derive(Debug, Clone, Serialize)]
pub struct SemicontinuityReport {
    pub deltas: Vec<f64>,
    pub delta_limit: f64,
    pub liminf: f64,
    pub holds: bool,
}

/// Check liminf δ(H_n) ≥ δ(H_limit) − tol over a finite sequence; the liminf
/// proxy is the minimum over the tail half.
pub fn delta_semicontinuity_check(
    sequence: &[CoreGraph],
    limit: &CoreGraph,
    tol: f64,
) -> SemicontinuityReport {
    let deltas: Vec<f64> = sequence
        .iter()
        .map(|h| h.critical_exponent(1e-12).delta().unwrap_or(0.0))
        .collect();
    let delta_limit = limit.critical_exponent(1e-12).delta().unwrap_or(0.0);
    let tail = &deltas[deltas.len() / 2..];
    let liminf = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    SemicontinuityReport { deltas: deltas.clone(), delta_limit, liminf, holds: liminf >= delta_limit - tol }
}

/// Seeded random finitely generated subgroup, for test corpora.
pub fn random_subgroup(
    rank: FreeGroupRank,
    n_gens: usize,
    max_len: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> CoreGraph {
    use rand::Rng;
    let alphabet = rank.alphabet();
    let mut gens = Vec::new();
    for _ in 0..n_gens {
        let len = rng.gen_range(1..=max_len.max(1));
        let mut raw: Vec<i32> = Vec::with_capacity(len);
        for _ in 0..len {
            raw.push(alphabet[rng.gen_range(0..alphabet.len())] as i32);
        }
        let w = Word::reduce(rank, &raw).unwrap();
        if !w.is_identity() {
            gens.push(w);
        }
    }
    fold(rank, &gens)
}
