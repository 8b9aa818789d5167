//! Experiment runner: key=value configs in, deterministic CSV/JSON reports
//! out. Exit codes: 0 success, 2 precondition or parse failure, 3 budget
//! refusal, 4 a report whose verdict failed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::annulus::{
    hitting_ratio_experiment, tanaka_pointwise_experiment, visited_set_poincare, VisitPredicate,
};
use crate::error::{LabError, Result};
use crate::freeproduct::{fp_growth_exact, fp_walk_delta, parse_spec_file, solve_rho, FreeProductSpec};
use crate::rng::RngState;
use crate::srs::{srs_delta_experiment, SrsConfig, SrsSampler, VisitWindow};
use crate::subgroup::{
    elstrodt_lambda0, fold, grigorchuk_rho, quotient_dp_growth, tree_walk_spectral_radius,
    ConfinementVerdict, CoreGraph, CyclicQuotient, FreeQuotient,
};
use crate::walk::{
    delta_mu, drift_estimate, entropy_exact, first_return_f, DeltaMuConfig, EntropyMethod,
};
use crate::word::{FreeGroupRank, StepDistribution, Word};

pub const EXPERIMENTS: &[&str] = &[
    "drift",
    "entropy",
    "delta-mu",
    "green",
    "hitting",
    "tanaka",
    "poincare",
    "subgroup-delta",
    "systole",
    "confine",
    "quotient-growth",
    "srs",
    "freeproduct",
    "elstrodt",
    "grigorchuk",
];

fn allowed_keys(experiment: &str) -> Option<&'static [&'static str]> {
    Some(match experiment {
        "drift" => &["k", "mu", "n", "m"],
        "entropy" => &["k", "mu", "n_max"],
        "delta-mu" => &["k", "mu", "n", "m", "n_max", "green_n", "green_m", "f_horizon", "method"],
        "green" => &["k", "mu", "target", "horizon"],
        "hitting" => &["k", "mu", "i", "q", "m"],
        "tanaka" => &["k", "mu", "i", "q", "m", "f_horizon"],
        "poincare" => &["k", "mu", "W", "s", "j_max"],
        "subgroup-delta" => &["subgroup", "gens", "k", "tol", "n_max"],
        "systole" => &["subgroup", "gens", "k", "g", "radius"],
        "confine" => &["subgroup", "gens", "k", "threshold", "budget"],
        "quotient-growth" => &["k", "quotient", "n_max", "state_budget"],
        "srs" => &[
            "base",
            "V",
            "k",
            "mu",
            "cesaro_N",
            "steps",
            "paths",
            "w_ball_radius",
            "j_max",
            "delta_hat",
            "delta_hat_sigma",
        ],
        "freeproduct" => &["spec", "a", "b", "n", "m", "n_max", "tol"],
        "elstrodt" => &["d", "delta"],
        "grigorchuk" => &["k", "delta", "depth"],
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(LabError::Parse(format!("format must be csv or json, got {other:?}"))),
        }
    }
}

/// A validated experiment description; file-valued parameters are resolved
/// relative to `base_dir` (the config file's directory).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    pub base_dir: PathBuf,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_at(text, Path::new("."))
}

/// Plain `key=value` lines; `#` comments, blank lines and cosmetic
/// `[section]` headers are skipped. The `experiment` key is required.
pub fn parse_config_at(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut experiment: Option<String> = None;
    let mut seed = 0u64;
    let mut params = BTreeMap::new();
    for raw_line in text.lines() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || (line.starts_with('[') && line.ends_with(']'))
        {
            continue;
        }
        // allow several key=value tokens per line (the minimal one-liner form)
        for token in line.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| LabError::Parse(format!("expected key=value, got {token:?}")))?;
            match key {
                "experiment" => experiment = Some(value.to_string()),
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|_| LabError::Parse(format!("key `seed`: bad integer {value:?}")))?;
                }
                _ => {
                    if params.insert(key.to_string(), value.to_string()).is_some() {
                        return Err(LabError::Parse(format!("key `{key}` given twice")));
                    }
                }
            }
        }
    }
    let experiment =
        experiment.ok_or_else(|| LabError::Parse("missing `experiment=` key".into()))?;
    let config = ExperimentConfig { experiment, seed, params, base_dir: base_dir.to_path_buf() };
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// Canonical text form; `parse_config(to_text(c))` is semantically
    /// identical to `c`.
    pub fn to_text(&self) -> String {
        let mut out = format!("experiment={}\nseed={}\n", self.experiment, self.seed);
        for (k, v) in &self.params {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    fn echo(&self) -> BTreeMap<String, String> {
        let mut echo = self.params.clone();
        echo.insert("experiment".into(), self.experiment.clone());
        echo.insert("seed".into(), self.seed.to_string());
        echo
    }

    /// Every key checked against the target experiment's vocabulary and the
    /// cheap type/range preconditions, before any computation starts.
    pub fn validate(&self) -> Result<()> {
        let allowed = allowed_keys(&self.experiment).ok_or_else(|| {
            LabError::Parse(format!(
                "unknown experiment {:?}; expected one of {}",
                self.experiment,
                EXPERIMENTS.join(", ")
            ))
        })?;
        for key in self.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(LabError::Parse(format!(
                    "key `{}.{key}` unknown; allowed: {}",
                    self.experiment,
                    allowed.join(", ")
                )));
            }
        }
        let p = Params { map: &self.params, base_dir: &self.base_dir };
        for key in ["n", "m", "n_max", "j_max", "horizon", "f_horizon", "steps", "paths",
            "radius", "threshold", "budget", "state_budget", "cesaro_N", "w_ball_radius",
            "green_n", "green_m", "depth"]
        {
            p.usize_or(key, 1)?;
        }
        for key in ["s", "tol", "d", "delta_hat", "delta_hat_sigma"] {
            p.f64_or(key, 0.0)?;
        }
        if let Some(q) = p.f64_opt("q")? {
            if !(q > 0.0 && q < 1.0) {
                return Err(LabError::Precondition(format!(
                    "key `{}.q`: must lie in (0,1), got {q}",
                    self.experiment
                )));
            }
        }
        if let Some(k) = p.map.get("k") {
            let k: u8 = k
                .parse()
                .map_err(|_| LabError::Parse(format!("key `k`: bad integer {k:?}")))?;
            FreeGroupRank::new(k)?;
        }
        for key in ["a", "b"] {
            p.usize_or(key, 2)?;
        }
        p.usize_list_or("i", &[])?;
        p.f64_list_or("delta", &[])?;
        if let Some(m) = p.map.get("method") {
            parse_method(m)?;
        }
        if let Some(f) = p.map.get("format") {
            OutputFormat::parse(f)?;
        }
        Ok(())
    }
}

struct Params<'a> {
    map: &'a BTreeMap<String, String>,
    base_dir: &'a Path,
}

impl<'a> Params<'a> {
    fn opt(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.opt(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| LabError::Parse(format!("key `{key}`: bad integer {v:?}"))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        match self.opt(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| LabError::Parse(format!("key `{key}`: bad number {v:?}"))),
        }
    }

    fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.opt(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|e| {
                    e.trim()
                        .parse()
                        .map_err(|_| LabError::Parse(format!("key `{key}`: bad integer {e:?}")))
                })
                .collect(),
        }
    }

    fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.opt(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|e| {
                    e.trim()
                        .parse()
                        .map_err(|_| LabError::Parse(format!("key `{key}`: bad number {e:?}")))
                })
                .collect(),
        }
    }

    fn read_file(&self, key: &str, name: &str) -> Result<String> {
        let path = self.base_dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| {
            LabError::Parse(format!("key `{key}`: cannot read {}: {e}", path.display()))
        })
    }

    fn rank(&self) -> Result<FreeGroupRank> {
        let k: u8 = match self.opt("k") {
            Some(v) => v
                .parse()
                .map_err(|_| LabError::Parse(format!("key `k`: bad integer {v:?}")))?,
            None => 2,
        };
        FreeGroupRank::new(k)
    }

    /// Step distribution: `mu=<table file>` wins over the uniform measure on
    /// the rank-`k` generators.
    fn mu(&self) -> Result<StepDistribution> {
        match self.opt("mu") {
            Some(name) => StepDistribution::parse_table(&self.read_file("mu", name)?),
            None => Ok(StepDistribution::uniform(self.rank()?)),
        }
    }

    /// Subgroup input: `subgroup=<core-graph file>` or `gens=<words>` + `k`.
    fn core_graph(&self, key_file: &str, key_gens: &str) -> Result<CoreGraph> {
        match (self.opt(key_file), self.opt(key_gens)) {
            (Some(name), None) => CoreGraph::parse_file_format(&self.read_file(key_file, name)?),
            (None, Some(gens)) => {
                let rank = self.rank()?;
                let words: Vec<Word> = gens
                    .split(',')
                    .map(|g| Word::parse(rank, g.trim()))
                    .collect::<Result<_>>()?;
                Ok(fold(rank, &words))
            }
            _ => Err(LabError::Parse(format!(
                "need exactly one of `{key_file}=<file>` or `{key_gens}=<words>`"
            ))),
        }
    }

    /// `W=all | subgroup:<file> | axis:<word> | mod-length:<r,m>`.
    fn predicate(&self, rank: FreeGroupRank) -> Result<VisitPredicate> {
        let spec = self.opt("W").unwrap_or("all");
        if spec == "all" {
            return Ok(VisitPredicate::All);
        }
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| LabError::Parse(format!("key `W`: bad predicate {spec:?}")))?;
        match kind {
            "subgroup" => {
                let graph = CoreGraph::parse_file_format(&self.read_file("W", arg)?)?;
                Ok(VisitPredicate::Subgroup(graph))
            }
            "axis" => Ok(VisitPredicate::Axis(Word::parse(rank, arg)?)),
            "mod-length" => {
                let (r, m) = arg
                    .split_once(',')
                    .and_then(|(r, m)| Some((r.trim().parse().ok()?, m.trim().parse().ok()?)))
                    .ok_or_else(|| {
                        LabError::Parse(format!("key `W`: expected mod-length:<r,m>, got {arg:?}"))
                    })?;
                Ok(VisitPredicate::ModLength { r, m })
            }
            other => Err(LabError::Parse(format!("key `W`: unknown predicate kind {other:?}"))),
        }
    }
}

fn parse_method(s: &str) -> Result<EntropyMethod> {
    match s {
        "convolution" => Ok(EntropyMethod::Convolution),
        "green" => Ok(EntropyMethod::GreenMetric),
        "both" => Ok(EntropyMethod::Both),
        other => Err(LabError::Parse(format!(
            "key `method`: expected convolution|green|both, got {other:?}"
        ))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub artifact_version: String,
    pub experiment: String,
    /// echoed config: re-running it reproduces `results` bit-for-bit
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    /// verdict: false maps to exit code 4
    pub ok: bool,
    pub results: Value,
    /// timing; excluded from golden comparisons
    pub wall_ms: u128,
}

pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let start = std::time::Instant::now();
    let p = Params { map: &config.params, base_dir: &config.base_dir };
    let state = RngState::new(config.seed, 0);
    let (results, ok) = dispatch(&config.experiment, &p, state)?;
    Ok(RunReport {
        artifact_version: format!("cogrowth-lab {}", env!("CARGO_PKG_VERSION")),
        experiment: config.experiment.clone(),
        config: config.echo(),
        seed: config.seed,
        ok,
        results,
        wall_ms: start.elapsed().as_millis(),
    })
}

fn dispatch(experiment: &str, p: &Params, state: RngState) -> Result<(Value, bool)> {
    match experiment {
        "drift" => {
            let mu = p.mu()?;
            let report = drift_estimate(&mu, p.usize_or("n", 2000)?, p.usize_or("m", 2000)?, state)?;
            Ok((serde_json::to_value(&report).unwrap(), true))
        }
        "entropy" => {
            let mu = p.mu()?;
            let default_n = if mu.rank().get() <= 2 { 10 } else { 8 };
            let report = entropy_exact(&mu, p.usize_or("n_max", default_n)?)?;
            Ok((serde_json::to_value(&report).unwrap(), true))
        }
        "delta-mu" => {
            let mu = p.mu()?;
            let mut cfg = DeltaMuConfig::standard(mu.rank().get());
            cfg.drift_n = p.usize_or("n", cfg.drift_n)?;
            cfg.drift_m = p.usize_or("m", cfg.drift_m)?;
            cfg.entropy_n_max = p.usize_or("n_max", cfg.entropy_n_max)?;
            cfg.green_n = p.usize_or("green_n", cfg.green_n)?;
            cfg.green_m = p.usize_or("green_m", cfg.green_m)?;
            cfg.f_horizon = p.usize_or("f_horizon", cfg.f_horizon)?;
            if let Some(m) = p.opt("method") {
                cfg.method = parse_method(m)?;
            }
            let report = delta_mu(&mu, &cfg, state)?;
            let ok = report.guivarch_ok;
            Ok((serde_json::to_value(&report).unwrap(), ok))
        }
        "green" => {
            let mu = p.mu()?;
            let horizon = p.usize_or("horizon", 60)?;
            let target = Word::parse(mu.rank(), p.opt("target").unwrap_or("e"))?;
            let fr = first_return_f(&mu, &target, horizon)?;
            if target.is_identity() {
                let green = 1.0 / (1.0 - fr.value);
                Ok((json!({ "return_probability": fr, "green_at_identity": green }), true))
            } else {
                Ok((json!({ "first_passage": fr }), true))
            }
        }
        "hitting" => {
            let mu = p.mu()?;
            let i_list = p.usize_list_or("i", &[50, 100, 200])?;
            let table = hitting_ratio_experiment(
                &mu,
                &i_list,
                p.f64_or("q", crate::annulus::DEFAULT_Q)?,
                p.usize_or("m", 400)?,
                state,
            )?;
            let ok = table.rows.iter().all(|r| !r.invalid);
            Ok((serde_json::to_value(&table).unwrap(), ok))
        }
        "tanaka" => {
            let mu = p.mu()?;
            let i_list = p.usize_list_or("i", &[100])?;
            let table = tanaka_pointwise_experiment(
                &mu,
                &i_list,
                p.f64_or("q", crate::annulus::DEFAULT_Q)?,
                p.usize_or("m", 400)?,
                p.usize_or("f_horizon", 60)?,
                state,
            )?;
            Ok((serde_json::to_value(&table).unwrap(), true))
        }
        "poincare" => {
            let mu = p.mu()?;
            let w = p.predicate(mu.rank())?;
            let s = match p.f64_opt("s")? {
                Some(s) => s,
                None => (2.0 * mu.rank().get() as f64 - 1.0).ln(),
            };
            let table = visited_set_poincare(&mu, &w, p.usize_or("j_max", 30)?, s)?;
            Ok((serde_json::to_value(&table).unwrap(), true))
        }
        "subgroup-delta" => {
            let graph = p.core_graph("subgroup", "gens")?;
            let exponent = graph.critical_exponent(p.f64_or("tol", 1e-12)?);
            let slope = graph.growth_slope(p.usize_or("n_max", 16)?);
            Ok((
                json!({
                    "critical_exponent": exponent,
                    "ball_growth_slope": slope,
                    "vertices": graph.num_vertices(),
                }),
                true,
            ))
        }
        "systole" => {
            let graph = p.core_graph("subgroup", "gens")?;
            let g = Word::parse(
                graph.rank(),
                p.opt("g").ok_or_else(|| LabError::Parse("key `g`: required".into()))?,
            )?;
            let systole = graph.schreier_systole(&g, p.usize_or("radius", 50)?);
            Ok((json!({ "conjugator": g, "systole": systole }), true))
        }
        "confine" => {
            let graph = p.core_graph("subgroup", "gens")?;
            let verdict =
                graph.confinement_probe(p.usize_or("threshold", 50)?, p.usize_or("budget", 20_000)?);
            let ok = !matches!(verdict, ConfinementVerdict::Inconclusive);
            Ok((json!({ "verdict": verdict }), ok))
        }
        "quotient-growth" => {
            let rank = p.rank()?;
            let n_max = p.usize_or("n_max", 12)?;
            let budget = p.usize_or("state_budget", 100_000)?;
            let spec = p.opt("quotient").unwrap_or("cyclic:2");
            let growth = match spec.split(':').collect::<Vec<_>>().as_slice() {
                ["free"] => quotient_dp_growth(&FreeQuotient { rank }, rank, n_max, budget)?,
                ["cyclic", modulus] => {
                    let modulus: i64 = modulus
                        .parse()
                        .map_err(|_| LabError::Parse(format!("bad modulus {modulus:?}")))?;
                    let images = vec![1; rank.get() as usize];
                    quotient_dp_growth(&CyclicQuotient { modulus, images }, rank, n_max, budget)?
                }
                ["cyclic", modulus, images] => {
                    let modulus: i64 = modulus
                        .parse()
                        .map_err(|_| LabError::Parse(format!("bad modulus {modulus:?}")))?;
                    let images: Vec<i64> = images
                        .split(',')
                        .map(|e| {
                            e.parse()
                                .map_err(|_| LabError::Parse(format!("bad image {e:?}")))
                        })
                        .collect::<Result<_>>()?;
                    if images.len() != rank.get() as usize {
                        return Err(LabError::Parse(format!(
                            "need {} generator images, got {}",
                            rank.get(),
                            images.len()
                        )));
                    }
                    quotient_dp_growth(&CyclicQuotient { modulus, images }, rank, n_max, budget)?
                }
                _ => {
                    return Err(LabError::Parse(format!(
                        "key `quotient`: expected free | cyclic:<m>[:<images>], got {spec:?}"
                    )))
                }
            };
            Ok((serde_json::to_value(&growth).unwrap(), true))
        }
        "srs" => {
            let base = p.core_graph("base", "gens")?;
            let mu = match p.opt("mu") {
                Some(name) => StepDistribution::parse_table(&p.read_file("mu", name)?),
                None => Ok(StepDistribution::uniform(base.rank())),
            }?;
            let v = match p.opt("V").unwrap_or("ball:2") {
                spec if spec.starts_with("ball:") => {
                    let l: usize = spec[5..]
                        .parse()
                        .map_err(|_| LabError::Parse(format!("key `V`: bad radius in {spec:?}")))?;
                    VisitWindow::ball(base.rank(), l)?
                }
                spec if spec.starts_with("list:") => {
                    let text = p.read_file("V", &spec[5..])?;
                    let words = text
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty() && !l.starts_with('#'))
                        .map(|l| Word::parse(base.rank(), l))
                        .collect::<Result<_>>()?;
                    VisitWindow::from_words(words)?
                }
                spec => {
                    return Err(LabError::Parse(format!(
                        "key `V`: expected ball:<L> or list:<file>, got {spec:?}"
                    )))
                }
            };
            let mut cfg = SrsConfig::default();
            cfg.steps = p.usize_or("steps", cfg.steps)?;
            cfg.gate_paths = p.usize_or("paths", cfg.gate_paths)?;
            cfg.w_ball_radius = p.usize_or("w_ball_radius", cfg.w_ball_radius)?;
            cfg.j_max = p.usize_or("j_max", cfg.j_max)?;
            cfg.delta_hat = p.f64_opt("delta_hat")?;
            cfg.delta_hat_sigma = p.f64_or("delta_hat_sigma", 0.0)?;
            let report = srs_delta_experiment(&base, &mu, &v, &cfg, state)?;
            // a glance at the Cesàro approximant itself: how varied are the
            // sampled conjugates at horizon N
            let cesaro_n = p.usize_or("cesaro_N", 100)?;
            let sampler = SrsSampler::new(base, mu, cesaro_n, state.substream(1 << 50))?;
            let draws = 12usize;
            let distinct: std::collections::BTreeSet<String> =
                (0..draws as u64).map(|j| sampler.sample(j).graph.canonical_form()).collect();
            let ok = report.passes || report.hypothesis_failure;
            Ok((
                json!({
                    "report": report,
                    "cesaro": { "N": cesaro_n, "draws": draws, "distinct_conjugates": distinct.len() },
                }),
                ok,
            ))
        }
        "freeproduct" => {
            let spec = match (p.opt("spec"), p.opt("a"), p.opt("b")) {
                (Some(name), None, None) => parse_spec_file(&p.read_file("spec", name)?)?,
                (None, Some(_), Some(_)) => {
                    FreeProductSpec::cyclic(p.usize_or("a", 2)?, p.usize_or("b", 3)?)?
                }
                _ => {
                    return Err(LabError::Parse(
                        "need either `spec=<file>` or both `a=` and `b=` orders".into(),
                    ))
                }
            };
            let measure = solve_rho(&spec)?;
            let walk =
                fp_walk_delta(&spec, &measure, p.usize_or("n", 1500)?, p.usize_or("m", 200)?, state)?;
            let growth = fp_growth_exact(&spec, p.usize_or("n_max", 12)?);
            let tol = p.f64_or("tol", 0.1)?;
            let agrees = (walk.delta - growth.delta).abs() <= tol * growth.delta;
            Ok((
                json!({
                    "sizes": spec.sizes(),
                    "measure": measure,
                    "walk": walk,
                    "growth": growth,
                    "agrees_exact": agrees,
                }),
                agrees,
            ))
        }
        "elstrodt" => {
            let d = p.f64_or("d", 2.0)?;
            let deltas = match p.opt("delta") {
                Some(_) => p.f64_list_or("delta", &[])?,
                None => (0..=20).map(|i| d * i as f64 / 20.0).collect(),
            };
            let rows: Vec<(f64, f64)> = deltas
                .iter()
                .map(|&delta| elstrodt_lambda0(delta, d).map(|l| (delta, l)))
                .collect::<Result<_>>()?;
            let eps = d / 2.0 * 1e-13;
            let gap = (elstrodt_lambda0(d / 2.0 - eps, d)? - elstrodt_lambda0(d / 2.0 + eps, d)?)
                .abs();
            let ok = gap <= 1e-12;
            Ok((json!({ "d": d, "rows": rows, "continuity_gap_at_half": gap }), ok))
        }
        "grigorchuk" => {
            let rank = p.rank()?;
            let k = rank.get() as f64;
            let top = (2.0 * k - 1.0).ln();
            let deltas = match p.opt("delta") {
                Some(_) => p.f64_list_or("delta", &[])?,
                None => vec![0.0, top / 2.0, top],
            };
            let rows: Vec<(f64, f64)> = deltas
                .iter()
                .map(|&delta| grigorchuk_rho(delta, rank).map(|r| (delta, r)))
                .collect::<Result<_>>()?;
            let amenable_endpoint = grigorchuk_rho(top, rank)?;
            let free_endpoint = grigorchuk_rho(0.0, rank)?;
            let target = (2.0 * k - 1.0).sqrt() / k;
            let depth = p.usize_or("depth", 40)?;
            let power = tree_walk_spectral_radius(rank, depth);
            let ok = (amenable_endpoint - 1.0).abs() <= 1e-12
                && (free_endpoint - target).abs() <= 1e-12
                && (power - target).abs() <= 1e-2;
            Ok((
                json!({
                    "rows": rows,
                    "endpoint_free": free_endpoint,
                    "endpoint_amenable": amenable_endpoint,
                    "tree_power_iteration": { "depth": depth, "value": power, "target": target },
                }),
                ok,
            ))
        }
        other => Err(LabError::Parse(format!("unknown experiment {other:?}"))),
    }
}

/// JSON rendering: pretty, stable key order (structs serialize in declaration
/// order, maps are sorted).
pub fn render_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn flatten(prefix: &str, value: &Value, rows: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, rows);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), v, rows);
            }
        }
        Value::Null => rows.push((prefix.to_string(), String::new())),
        Value::Bool(b) => rows.push((prefix.to_string(), b.to_string())),
        Value::Number(n) => rows.push((prefix.to_string(), n.to_string())),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
    }
}

/// CSV rendering. `hitting` and `tanaka` have fixed tabular schemas; every
/// other experiment flattens to `key,value` rows. Timing is never included.
pub fn render_csv(report: &RunReport) -> String {
    match report.experiment.as_str() {
        "hitting" => {
            let mut out = String::from("i,q,mean_tau_over_i,std_err,censored_frac,m,seed\n");
            if let Some(rows) = report.results.get("rows").and_then(Value::as_array) {
                for row in rows {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        row["i"],
                        row["q"],
                        row["report"]["value"],
                        row["report"]["std_error"],
                        row["censored_fraction"],
                        row["report"]["n_samples"],
                        report.seed,
                    ));
                }
            }
            out
        }
        "tanaka" => {
            let mut out = String::from("i,observable,value,std_err\n");
            if let Some(rows) = report.results.get("rows").and_then(Value::as_array) {
                for row in rows {
                    out.push_str(&format!(
                        "{},neg_log_F_over_i,{},{}\n",
                        row["i"], row["report"]["value"], row["report"]["std_error"],
                    ));
                    out.push_str(&format!(
                        "{},censored_fraction,{},\n",
                        row["i"], row["censored_fraction"],
                    ));
                    if let Some(v) = row.get("direct_value").filter(|v| !v.is_null()) {
                        out.push_str(&format!("{},direct_nu_top,{},\n", row["i"], v));
                    }
                }
            }
            out
        }
        _ => {
            let mut rows = Vec::new();
            flatten("", &report.results, &mut rows);
            let mut out = String::from("key,value\n");
            for (k, v) in rows {
                out.push_str(&format!("{},{}\n", csv_escape(&k), csv_escape(&v)));
            }
            out
        }
    }
}

/// `report` with the timing line removed: the golden-comparable form.
pub fn golden_form(rendered_json: &str) -> String {
    rendered_json
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_ms\""))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn run_with_workers(config: &ExperimentConfig, workers: Option<usize>) -> Result<RunReport> {
    match workers {
        None => run(config),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| LabError::Precondition(format!("worker pool: {e}")))?;
            pool.install(|| run(config))
        }
    }
}

#[derive(clap::Parser, Debug)]
#[command(
    name = "cogrowth-lab",
    about = "Reproducible random-walk and critical-exponent experiments on free groups",
    after_help = "Experiments: drift, entropy, delta-mu, green, hitting, tanaka, poincare,\n\
                  subgroup-delta, systole, confine, quotient-growth, srs, freeproduct,\n\
                  elstrodt, grigorchuk.\n\
                  The environment variable COGROWTH_LAB_BUDGET caps enumeration sizes."
)]
struct CliArgs {
    /// experiment name (must match the config's `experiment=` key if both
    /// are given)
    experiment: String,
    /// optional config file followed by key=value overrides
    args: Vec<String>,
    /// RNG seed; overrides the config's `seed=` key
    #[arg(long)]
    seed: Option<u64>,
    /// worker-pool size (never affects results, only wall time)
    #[arg(long)]
    workers: Option<usize>,
    /// write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json
    #[arg(long, default_value = "json")]
    format: String,
}

/// Full CLI entry; returns the process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    use clap::Parser;
    let parsed = match CliArgs::try_parse_from(std::iter::once("cogrowth-lab".to_string()).chain(args.iter().cloned())) {
        Ok(p) => p,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let format = match OutputFormat::parse(&parsed.format) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let mut config_file: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    for arg in &parsed.args {
        if let Some((k, v)) = arg.split_once('=') {
            overrides.push((k.to_string(), v.to_string()));
        } else if config_file.is_none() {
            config_file = Some(PathBuf::from(arg));
        } else {
            eprintln!("unexpected argument {arg:?}");
            return 2;
        }
    }
    let config = match build_config(
        &parsed.experiment,
        config_file.as_deref(),
        &overrides,
        parsed.seed,
    ) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let out = parsed.out;
    match run_with_workers(&config, parsed.workers) {
        Ok(report) => {
            let rendered = match format {
                OutputFormat::Json => render_json(&report),
                OutputFormat::Csv => render_csv(&report),
            };
            if let Err(code) = emit(&rendered, out.as_deref()) {
                return code;
            }
            if report.ok {
                0
            } else {
                4
            }
        }
        Err(e @ LabError::BudgetExceeded(..)) => {
            // partial report: config echo plus the refusal, so the run is
            // still reproducible from the artifact
            let partial = json!({
                "experiment": config.experiment,
                "config": config.echo(),
                "error": e.to_string(),
            });
            let mut rendered = serde_json::to_string_pretty(&partial).unwrap();
            rendered.push('\n');
            let _ = emit(&rendered, out.as_deref());
            3
        }
        Err(e) => {
            eprintln!("{e}");
            2
        }
    }
}

fn build_config(
    experiment: &str,
    config_file: Option<&Path>,
    overrides: &[(String, String)],
    seed_flag: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut config = match config_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| LabError::Parse(format!("cannot read {}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            let parsed = parse_config_at(&text, &base)?;
            if parsed.experiment != experiment {
                return Err(LabError::Parse(format!(
                    "config names experiment {:?} but the subcommand is {experiment:?}",
                    parsed.experiment
                )));
            }
            parsed
        }
        None => ExperimentConfig {
            experiment: experiment.to_string(),
            seed: 0,
            params: BTreeMap::new(),
            base_dir: PathBuf::from("."),
        },
    };
    for (k, v) in overrides {
        if k == "seed" {
            config.seed = v
                .parse()
                .map_err(|_| LabError::Parse(format!("key `seed`: bad integer {v:?}")))?;
        } else if k == "experiment" {
            if v != &config.experiment {
                return Err(LabError::Parse(format!(
                    "experiment override {v:?} contradicts subcommand {:?}",
                    config.experiment
                )));
            }
        } else {
            config.params.insert(k.clone(), v.clone());
        }
    }
    if let Some(s) = seed_flag {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn emit(rendered: &str, out: Option<&Path>) -> std::result::Result<(), i32> {
    match out {
        None => {
            print!("{rendered}");
            Ok(())
        }
        Some(path) => std::fs::write(path, rendered).map_err(|e| {
            eprintln!("cannot write {}: {e}", path.display());
            2
        }),
    }
}

pub fn main_entry() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    run_cli(&args)
}
