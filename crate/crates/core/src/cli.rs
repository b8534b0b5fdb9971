//! Batch runner: exact verification suites, float refinement experiments
//! and moment tables, reported as CSV.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{usage, Error, Result};
use crate::fock::{FockOperator, FockVector, OneVec};
use crate::kspoly::ks_row_formula;
use crate::model::{GridSpec, Letter, ModelConfig, ModelKind, MomentSequence, ProcessModel};
use crate::partitions::SetPartition;
use crate::qscalar::{parse_rational, Mode, QScalar};
use crate::stochastic::{
    fit_slope, ito_integral, ito_isometry_rhs, ks_operator_chain, l2q_inner, multiple_integral, power_decomposition,
    st_pi_convergence, traciality_witness, two_sided_convergence, AdaptedProcess, ConvergenceRow, Integrator, Side,
    StepFunction,
};
use crate::wick::{product_expansion, vacuum_moment, WickElement, WickEngine, MAX_EXPANSION};

pub const DEFAULT_MODEL: &str = "\
nu.atoms = [(1, 1/2), (-2, 1/4), (3, 1/4)]
grid = uniform(1, 2)
degree_cutoff = 3
fock_depth = 5
";

pub const SUITES: [&str; 8] =
    ["commutation", "product_wick", "moments", "st_pi", "kailath_segall", "isometry", "ito", "traciality"];

#[derive(Parser, Debug, Clone)]
#[command(name = "qfock", version, about = "Exact q-Fock identities and q-Levy refinement experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Model file (`key = value` lines).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Directory for the CSV report.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated suite or experiment names.
    #[arg(long, global = true, value_delimiter = ',')]
    pub suite: Vec<String>,
    /// `exact`, a rational value, or a float for `converge`.
    #[arg(long, global = true)]
    pub q: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub nmax: Option<usize>,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true)]
    pub cutoff: Option<usize>,
    /// Number of uniform grid atoms.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Refinement schedule, e.g. `4,8,16,32,64`.
    #[arg(long, global = true)]
    pub schedule: Option<String>,
    #[arg(long, global = true, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Run the exact identity suites.
    Verify,
    /// Run the float refinement experiments.
    Converge,
    /// Print vacuum moments of X(1).
    Moments,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Converge => "converge",
            Command::Moments => "moments",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QSetting {
    Exact,
    Value(BigRational),
}

/// Resolved run settings: model file values overridden by flags.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelConfig,
    pub out: Option<PathBuf>,
    pub suites: Vec<String>,
    pub q: QSetting,
    pub q_float: Option<f64>,
    pub seed: u64,
    pub nmax: usize,
    pub schedule: Vec<usize>,
    pub fault: Option<String>,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<RunConfig> {
        let text = match &cli.model {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Usage(format!("cannot read {}: {e}", p.display())))?,
            None => DEFAULT_MODEL.to_string(),
        };
        let mut model: ModelConfig = text.parse()?;
        if let Some(d) = cli.depth {
            model.depth = Some(d);
        }
        if let Some(c) = cli.cutoff {
            model.cutoff = Some(c);
        }
        if let Some(n) = cli.grid {
            let t = match &model.grid {
                Some(GridSpec::Uniform(t, _)) => t.clone(),
                Some(GridSpec::Explicit(p)) => p.last().cloned().unwrap_or_else(BigRational::one),
                None => BigRational::one(),
            };
            model.grid = Some(GridSpec::Uniform(t, n));
        }
        let q_text = cli.q.clone().or_else(|| model.q.clone()).unwrap_or_else(|| "exact".into());
        let (q, q_float) = if cli.command == Command::Converge {
            if q_text == "exact" {
                (QSetting::Exact, None)
            } else {
                let v: f64 = q_text.parse().map_err(|_| Error::Usage(format!("bad float q '{q_text}'")))?;
                Mode::float(v)?;
                (QSetting::Exact, Some(v))
            }
        } else if q_text == "exact" {
            (QSetting::Exact, None)
        } else {
            (QSetting::Value(parse_rational(&q_text)?), None)
        };
        let nmax = cli.nmax.unwrap_or(5);
        if nmax > MAX_EXPANSION {
            return usage(format!("nmax {nmax} exceeds the product-expansion budget {MAX_EXPANSION}"));
        }
        if nmax == 0 {
            return usage("nmax must be positive");
        }
        let schedule = match &cli.schedule {
            None => vec![4, 8, 16, 32, 64],
            Some(s) => {
                let v: Vec<usize> = s
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| x.parse().map_err(|_| Error::Usage(format!("bad schedule entry '{x}'"))))
                    .collect::<Result<_>>()?;
                if v.is_empty() {
                    return usage("empty refinement schedule");
                }
                v
            }
        };
        let known: &[&str] = match cli.command {
            Command::Verify => &SUITES,
            Command::Converge => &EXPERIMENT_NAMES,
            Command::Moments => &[],
        };
        for s in &cli.suite {
            if !known.contains(&s.as_str()) {
                return usage(format!("unknown suite '{s}' for {}", cli.command.name()));
            }
        }
        Ok(RunConfig {
            command: cli.command,
            model,
            out: cli.out.clone(),
            suites: cli.suite.clone(),
            q,
            q_float,
            seed: cli.seed,
            nmax,
            schedule,
            fault: cli.inject_fault.clone(),
        })
    }

    fn selected(&self, name: &str) -> bool {
        self.suites.is_empty() || self.suites.iter().any(|s| s == name)
    }

    /// Exact model with the degree cutoff raised to at least `min_cutoff`
    /// and the depth to at least `min_depth`.
    pub fn exact_model(&self, min_cutoff: usize, min_depth: usize) -> Result<ProcessModel> {
        let grid = self.model.grid.clone().unwrap_or(GridSpec::Uniform(BigRational::one(), 2)).build()?;
        let depth = self.model.depth.unwrap_or(5).max(min_depth);
        match self.model.construction.as_deref() {
            Some("appendix") => {
                let atoms = self.model.atoms.clone().ok_or_else(|| Error::Usage("appendix model needs nu.atoms".into()))?;
                let (p, w) = atoms.into_iter().unzip();
                ProcessModel::appendix(Mode::Exact, p, w, grid, depth)
            }
            _ => {
                let cutoff = self.model.cutoff.unwrap_or(3).max(min_cutoff);
                let m = self.model.moment_sequence(cutoff)?;
                ProcessModel::body(Mode::Exact, m, grid, cutoff, depth)
            }
        }
    }

    fn moments_for_float(&self) -> Result<MomentSequence> {
        self.model.moment_sequence(self.model.cutoff.unwrap_or(3).max(3))
    }
}

/// One exact identity check.
#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow {
    pub identity: String,
    pub n: usize,
    pub residual: QScalar,
}

impl LedgerRow {
    pub fn exact_zero(&self) -> bool {
        self.residual.is_zero()
    }
}

fn vector_residual(d: &FockVector) -> QScalar {
    d.terms().values().next().cloned().unwrap_or_else(|| d.mode().zero())
}

struct Checker<'a> {
    cfg: &'a RunConfig,
    rows: Vec<LedgerRow>,
}

impl Checker<'_> {
    fn scalar(&mut self, identity: &str, n: usize, lhs: &QScalar, rhs: &QScalar) -> Result<()> {
        let mut res = lhs.try_sub(rhs)?;
        if self.cfg.fault.as_deref() == Some(identity) {
            res = res.try_add(&res.mode().one())?;
        }
        if let QSetting::Value(q) = &self.cfg.q {
            res = res.substitute(q)?;
        }
        self.rows.push(LedgerRow { identity: identity.into(), n, residual: res });
        Ok(())
    }

    fn vector(&mut self, identity: &str, n: usize, lhs: &FockVector, rhs: &FockVector) -> Result<()> {
        let d = lhs.sub(rhs)?;
        let d = match &self.cfg.q {
            QSetting::Value(q) => d.map_coeffs(Mode::Exact, |c| c.substitute(q))?,
            QSetting::Exact => d,
        };
        let r = vector_residual(&d);
        self.scalar(identity, n, &r, &r.mode().zero())
    }
}

fn random_letter(model: &ProcessModel, g: &mut ChaCha8Rng) -> Letter {
    let pick: Vec<usize> = match model.kind {
        ModelKind::Body => (0..model.grid.atoms()).map(|a| model.index(a, 1)).collect(),
        _ => (0..model.alg.dim()).collect(),
    };
    loop {
        let mut e: Vec<(u32, QScalar)> = Vec::new();
        for &i in &pick {
            if g.gen_bool(0.7) {
                e.push((i as u32, model.mode.ratio(&nonzero(g))));
            }
        }
        let xi = OneVec::from_entries(e);
        if !xi.is_zero() {
            return model.alg.letter(&xi);
        }
    }
}

fn nonzero(g: &mut ChaCha8Rng) -> BigRational {
    loop {
        let n: i64 = g.gen_range(-3..=3);
        if n != 0 {
            return BigRational::new(n.into(), g.gen_range(1..=2i64).into());
        }
    }
}

fn suite_commutation(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    let m = cfg.exact_model(1, 5)?;
    let fock = m.fock();
    let mut g = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = m.alg.dim();
    for deg in 0..=3usize.min(m.depth - 1) {
        let z = random_letter(&m, &mut g).xi;
        let e = random_letter(&m, &mut g).xi;
        let op = FockOperator::sum(vec![
            (m.mode.one(), FockOperator::annihilation(z.clone()).times(&FockOperator::creation(e.clone()))),
            (-m.mode.q(), FockOperator::creation(e.clone()).times(&FockOperator::annihilation(z.clone()))),
            (-m.alg.space().inner(&z, &e), FockOperator::identity(m.mode)),
        ]);
        let w: Vec<u32> = (0..deg).map(|_| g.gen_range(0..dim) as u32).collect();
        let v = FockVector::word(m.mode, m.depth, &w)?;
        ck.vector("commutation", deg, &fock.apply(&op, &v)?, &fock.zero_vector())?;
    }
    Ok(())
}

fn suite_product_wick(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    let mut g = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51);
    for n in 1..=cfg.nmax {
        let m = cfg.exact_model(n, n)?;
        let fock = m.fock();
        let letters: Vec<Letter> = (0..n).map(|_| random_letter(&m, &mut g)).collect();
        let lhs = product_expansion(&m.alg, &letters)?.vacuum_vector(m.mode, &fock)?;
        let mut rhs = fock.vacuum();
        for l in letters.iter().rev() {
            rhs = fock.apply(&l.field(), &rhs)?;
        }
        ck.vector("product_wick", n, &lhs, &rhs)?;
    }
    Ok(())
}

fn suite_moments(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    for n in 1..=cfg.nmax.clamp(6, MAX_EXPANSION) {
        let m = cfg.exact_model(n, n)?;
        let fock = m.fock();
        let x = m.x_letter(&m.full_span())?;
        let lhs = vacuum_moment(&m.alg, &vec![x.clone(); n])?;
        let mut v = fock.vacuum();
        for _ in 0..n {
            v = fock.apply(&x.field(), &v)?;
        }
        ck.scalar("moments", n, &lhs, &v.vacuum_coefficient())?;
    }
    Ok(())
}

fn suite_st_pi(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    for n in 1..=cfg.nmax.min(5) {
        let m = cfg.exact_model(n, n)?;
        let d = power_decomposition(&m, n, &m.full_span())?;
        ck.vector("st_pi", n, &d.power, &d.partition_sum)?;
    }
    Ok(())
}

fn suite_kailath_segall(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    let m = cfg.exact_model(5, 5)?;
    for j in 1..=3 {
        for n in 1..=4 {
            let rep = ks_row_formula(j, n, &m.moments, m.mode)?;
            let res = rep.residual();
            let r = res.terms().values().next().cloned().unwrap_or_else(|| m.mode.zero());
            ck.scalar(&format!("ks_row_j{j}"), n, &r, &m.mode.zero())?;
        }
    }
    if m.kind == ModelKind::Body {
        for n in 0..=3 {
            let mm = m.with_depth(n + 1);
            let engine = WickEngine::new(mm.alg.clone());
            let (lhs, rhs) = ks_operator_chain(&mm, &engine, n, &mm.full_span())?;
            ck.vector("ks_chain", n, &lhs, &rhs)?;
        }
    }
    Ok(())
}

fn suite_isometry(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    let m = cfg.exact_model(1, 3)?;
    if m.kind != ModelKind::Body {
        return Ok(());
    }
    let fock = m.fock();
    let mut g = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x150);
    let atoms = m.grid.atoms();
    let r2 = m.moments.r(2)?.clone();
    for n in 1..=3usize.min(atoms) {
        let mut f = StepFunction::new(m.mode, n);
        let mut h = StepFunction::new(m.mode, n);
        for _ in 0..4 {
            for s in [&mut f, &mut h] {
                let mut t: Vec<usize> = (0..atoms).collect();
                for i in 0..n {
                    let j = g.gen_range(i..atoms);
                    t.swap(i, j);
                }
                t.truncate(n);
                s.add_at(t, m.mode.ratio(&nonzero(&mut g)))?;
            }
        }
        let procs = vec![Integrator::X; n];
        let om = fock.vacuum();
        let a = fock.apply(&multiple_integral(&m, &f, &procs)?, &om)?;
        let b = fock.apply(&multiple_integral(&m, &h, &procs)?, &om)?;
        let scale = (0..n).fold(BigRational::one(), |p, _| p * &r2);
        ck.scalar("isometry", n, &fock.innerq(&a, &b)?, &l2q_inner(&m.grid, &f, &h)?.scale_ratio(&scale))?;
    }
    Ok(())
}

fn past_element(m: &ProcessModel, g: &mut ChaCha8Rng, before: usize) -> WickElement {
    let mut e = WickElement::zero(m.mode);
    for deg in 0..=2 {
        let letters: Vec<Letter> = (0..deg)
            .map(|_| {
                let xi = OneVec::from_entries(
                    (0..before).map(|a| (m.index(a, 1) as u32, m.mode.ratio(&nonzero(g)))).collect(),
                );
                m.alg.letter(&xi)
            })
            .collect();
        e.push(m.mode.ratio(&nonzero(g)), letters);
    }
    e
}

fn suite_ito(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    let m = cfg.exact_model(1, 4)?;
    if m.kind != ModelKind::Body || m.grid.atoms() < 2 {
        return Ok(());
    }
    let engine = WickEngine::new(m.alg.clone());
    let fock = m.fock();
    let mut g = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x170);
    let n = m.grid.atoms();
    let u = AdaptedProcess::new(&m, (1..n).map(|a| (a..a + 1, past_element(&m, &mut g, a))).collect())?;
    let v = AdaptedProcess::new(&m, (1..n).map(|a| (a..a + 1, past_element(&m, &mut g, a))).collect())?;
    let expect = ito_isometry_rhs(&m, &u, &v)?;
    for (i, side) in [Side::Left, Side::Right].into_iter().enumerate() {
        let a = fock.apply(&ito_integral(&m, &engine, &u, side)?, &fock.vacuum())?;
        let b = fock.apply(&ito_integral(&m, &engine, &v, side)?, &fock.vacuum())?;
        ck.scalar("ito_isometry", i, &fock.innerq(&a, &b)?, &expect)?;
    }
    Ok(())
}

fn suite_traciality(cfg: &RunConfig, ck: &mut Checker) -> Result<()> {
    let m = cfg.exact_model(5, 5)?;
    if m.kind != ModelKind::Body || m.grid.atoms() < 2 {
        return Ok(());
    }
    let a = m.grid.atoms();
    for k in 1..=3 {
        let w = traciality_witness(&m, &(0..a / 2), &(a / 2..a), k)?;
        ck.scalar("traciality_forward", k, &w.forward, &w.expected_forward)?;
        ck.scalar("traciality_backward", k, &w.backward, &w.expected_backward)?;
    }
    Ok(())
}

type Suite = fn(&RunConfig, &mut Checker) -> Result<()>;

fn suite_fn(name: &str) -> Suite {
    match name {
        "commutation" => suite_commutation,
        "product_wick" => suite_product_wick,
        "moments" => suite_moments,
        "st_pi" => suite_st_pi,
        "kailath_segall" => suite_kailath_segall,
        "isometry" => suite_isometry,
        "ito" => suite_ito,
        _ => suite_traciality,
    }
}

/// Runs the selected suites in parallel; rows keep suite order.
pub fn run_verify(cfg: &RunConfig) -> Result<Vec<LedgerRow>> {
    let names: Vec<&str> = SUITES.iter().copied().filter(|s| cfg.selected(s)).collect();
    let parts: Vec<Result<Vec<LedgerRow>>> = names
        .par_iter()
        .map(|name| {
            let mut ck = Checker { cfg, rows: Vec::new() };
            suite_fn(name)(cfg, &mut ck)?;
            Ok(ck.rows)
        })
        .collect();
    let mut rows = Vec::new();
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

/// A shipped refinement experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub name: &'static str,
    pub q: f64,
    pub kind: ExperimentKind,
}

#[derive(Clone, Debug)]
pub enum ExperimentKind {
    StPi { blocks: Vec<Vec<usize>>, point_mass: bool },
    TwoSided { k: usize },
}

pub const EXPERIMENT_NAMES: [&str; 6] =
    ["st_pi_pair_free", "st_pi_singletons", "st_pi_pair_singleton", "st_pi_crossing", "st_pi_triple", "two_sided"];

pub fn shipped_experiments() -> Vec<Experiment> {
    let st = |name, q, blocks: Vec<Vec<usize>>, point_mass| Experiment {
        name,
        q,
        kind: ExperimentKind::StPi { blocks, point_mass },
    };
    vec![
        st("st_pi_pair_free", 0.0, vec![vec![1, 2]], true),
        st("st_pi_singletons", 0.5, vec![vec![1], vec![2]], false),
        st("st_pi_pair_singleton", 0.3, vec![vec![1, 2], vec![3]], false),
        st("st_pi_crossing", 0.7, vec![vec![1, 3], vec![2]], false),
        st("st_pi_triple", 0.5, vec![vec![1, 2, 3]], false),
        Experiment { name: "two_sided", q: 0.5, kind: ExperimentKind::TwoSided { k: 1 } },
    ]
}

/// Rows and fitted slope of one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub name: String,
    pub rows: Vec<ConvergenceRow>,
    pub slope: f64,
}

pub fn run_experiment(e: &Experiment, q: f64, moments: &MomentSequence, schedule: &[usize]) -> Result<ExperimentResult> {
    let t = BigRational::one();
    let rows = match &e.kind {
        ExperimentKind::StPi { blocks, point_mass } => {
            let n = blocks.iter().map(Vec::len).sum();
            let pi = SetPartition::new(n, blocks.clone())?;
            let nu = if *point_mass {
                MomentSequence::from_atoms(&[(BigRational::one(), BigRational::one())], 8)?
            } else {
                moments.clone()
            };
            st_pi_convergence(q, &nu, &pi, &t, schedule)?
        }
        ExperimentKind::TwoSided { k } => two_sided_convergence(q, moments, *k, &t, schedule)?,
    };
    let slope = fit_slope(&rows)?;
    Ok(ExperimentResult { name: e.name.to_string(), rows, slope })
}

pub fn run_converge(cfg: &RunConfig) -> Result<Vec<ExperimentResult>> {
    let moments = cfg.moments_for_float()?;
    shipped_experiments()
        .iter()
        .filter(|e| cfg.selected(e.name))
        .map(|e| run_experiment(e, cfg.q_float.unwrap_or(e.q), &moments, &cfg.schedule))
        .collect()
}

/// `(n, phi[X(1)^n])` for `n <= nmax`.
pub fn run_moments(cfg: &RunConfig) -> Result<Vec<(usize, QScalar)>> {
    let mut out = Vec::new();
    for n in 1..=cfg.nmax.max(4) {
        let m = cfg.exact_model(n, n)?;
        let end = m.grid.end().clone();
        let span = if end >= BigRational::one() { m.span(&BigRational::zero(), &BigRational::one())? } else { m.full_span() };
        let x = m.x_letter(&span)?;
        let mut v = vacuum_moment(&m.alg, &vec![x; n])?;
        if let QSetting::Value(q) = &cfg.q {
            v = v.substitute(q)?;
        }
        out.push((n, v));
    }
    Ok(out)
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Resource(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Resource(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Resource(e.to_string()))
}

/// Runs a command, writing the report to `stdout` (and `--out`); returns
/// the exit status.
pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::from_cli(cli)?;
    let (report, status) = match cfg.command {
        Command::Verify => {
            let rows = run_verify(&cfg)?;
            let mut status = 0;
            for r in rows.iter().filter(|r| !r.exact_zero()) {
                status = 1;
                let _ = writeln!(stderr, "FAIL: {} (n = {}): residual {}", r.identity, r.n, r.residual);
            }
            let recs = rows
                .iter()
                .map(|r| vec![r.identity.clone(), r.n.to_string(), r.exact_zero().to_string(), r.residual.to_string()])
                .collect();
            (csv_bytes(&["identity", "n", "exact_zero", "residual"], recs)?, status)
        }
        Command::Converge => {
            let res = run_converge(&cfg)?;
            let mut recs = Vec::new();
            for e in &res {
                for r in &e.rows {
                    recs.push(vec![e.name.clone(), r.atoms.to_string(), format!("{:.6e}", r.delta), format!("{:.6e}", r.error), String::new()]);
                }
                let s = if e.slope.is_infinite() { "exact".to_string() } else { format!("{:.4}", e.slope) };
                recs.push(vec![e.name.clone(), "fit".into(), String::new(), String::new(), s]);
            }
            (csv_bytes(&["experiment", "N", "delta", "l2_error", "slope"], recs)?, 0)
        }
        Command::Moments => {
            let recs = run_moments(&cfg)?.into_iter().map(|(n, v)| vec![n.to_string(), v.to_string()]).collect();
            (csv_bytes(&["n", "moment"], recs)?, 0)
        }
    };
    stdout.write_all(&report).map_err(|e| Error::Resource(e.to_string()))?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir).map_err(|e| Error::Usage(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(format!("{}.csv", cfg.command.name()));
        fs::write(&path, &report).map_err(|e| Error::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(status)
}

/// Entry point for the binary: exit 0 on success, 1 on a nonzero
/// residual, 2 on usage or resource errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    match execute(&cli, &mut out, &mut err) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}
