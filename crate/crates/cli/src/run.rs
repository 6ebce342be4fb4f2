//! Command pipelines and artifact emission.

use crate::config::{Command, ConfigError, RunConfig};
use gfflab_core::dgff::sample_fields;
use gfflab_core::export::{num, site_heatmap, Pgm, Table};
use gfflab_core::green::{green_via_kernel_row, harmonic_measure, solve_green, GreenOperator};
use gfflab_core::isomorphism::{
    clt_datasets, exp_moment, hitting_identity, kac_moment, kac_monte_carlo, ray_knight_datasets,
    verdict_table, TestFunction, Verdict,
};
use gfflab_core::lattice::{discretize, WiredDomain};
use gfflab_core::measures::{
    avoided_first_moment, build_point_measure, light_point_histogram, scale_params, small_value_masses,
    thick_first_moment, Exponent, Overrides, PointKind, PointSource, ScaleParams,
};
use gfflab_core::potential::{PotentialKernel, G};
use gfflab_core::rng::Stream;
use gfflab_core::stats::{ks_two_sample, mean, normal_cdf, ks_one_sample, variance};
use gfflab_core::walk::{avoidance_prob_exact, sample_local_times, Walker};
use rayon::prelude::*;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Core(gfflab_core::Error),
    Io(io::Error),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => e.fmt(f),
            RunError::Core(e) => write!(f, "runtime error: {e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<gfflab_core::Error> for RunError {
    fn from(e: gfflab_core::Error) -> Self {
        use gfflab_core::Error as E;
        match e {
            E::BadParameterRange(_) | E::EmptyDomain { .. } | E::InvalidDomain(_) | E::ContractionViolated { .. } => {
                RunError::Config(ConfigError(e.to_string()))
            }
            e => RunError::Core(e),
        }
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

impl RunError {
    /// 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// What a completed run produced.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub verdicts: Vec<Verdict>,
    /// Human-readable summary lines.
    pub report: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// 0 when every verdict passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// Writes `{command}_{N}_{seed}_{index}.{csv|pgm}` files into the output directory.
struct Emitter<'a> {
    cfg: &'a RunConfig,
    files: Vec<PathBuf>,
}

impl<'a> Emitter<'a> {
    fn path(&self, index: &dyn fmt::Display, ext: &str) -> PathBuf {
        let c = self.cfg;
        c.output_dir
            .join(format!("{}_{}_{}_{}.{}", c.command, c.n, c.master_seed, index, ext))
    }

    fn csv(&mut self, index: impl fmt::Display, table: &Table) -> io::Result<()> {
        let p = self.path(&index, "csv");
        std::fs::write(&p, table.to_bytes())?;
        self.files.push(p);
        Ok(())
    }

    fn pgm(&mut self, index: impl fmt::Display, image: &Pgm) -> io::Result<()> {
        let p = self.path(&index, "pgm");
        std::fs::write(&p, image.to_bytes())?;
        self.files.push(p);
        Ok(())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Runs the configured pipeline on a dedicated thread pool and writes all artifacts,
/// `verdict.csv` (verification commands) and `run.json`.
pub fn run_experiment(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let threads = cfg.effective_threads();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Io(io::Error::other(e)))?;
    let mut em = Emitter { cfg, files: Vec::new() };
    let mut out = pool.install(|| dispatch(cfg, &mut em))?;
    out.files = em.files;
    if !out.verdicts.is_empty() {
        let p = cfg.output_dir.join("verdict.csv");
        std::fs::write(&p, verdict_table(&out.verdicts).to_bytes())?;
        out.files.push(p);
    }
    let manifest = serde_json::json!({
        "command": cfg.command.name(),
        "config": cfg.raw,
        "seed": cfg.master_seed.to_string(),
        "N": cfg.n,
        "version": env!("CARGO_PKG_VERSION"),
        "threads": pool.current_num_threads(),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "files": out.files.iter().map(|p| file_name(p)).collect::<Vec<_>>(),
        "verdicts_passed": if out.verdicts.is_empty() { serde_json::Value::Null } else { out.passed().into() },
    });
    let p = cfg.output_dir.join("run.json");
    let mut text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(&p, text)?;
    out.files.push(p);
    Ok(out)
}

fn dispatch(cfg: &RunConfig, em: &mut Emitter<'_>) -> Result<Outcome, RunError> {
    let stream = Stream::root(cfg.master_seed).tagged(cfg.command.name());
    match cfg.command {
        Command::GreenCheck => green_check(cfg, em),
        Command::SampleDgff => sample_dgff(cfg, em, stream),
        Command::ThickPoints => thick_points(cfg, em, stream),
        Command::RunWalk => run_walk(cfg, em, stream),
        Command::AvoidedPoints => avoided_points(cfg, em, stream),
        Command::LightPoints => light_points(cfg, em, stream),
        Command::VerifyIsomorphism => verify_isomorphism(cfg, em, stream),
        Command::CoverTime => cover_time(cfg, em, stream),
        Command::ReportConstants => report_constants(cfg, em),
    }
}

fn wired(cfg: &RunConfig) -> Result<WiredDomain, RunError> {
    Ok(discretize(&cfg.domain, cfg.n)?)
}

/// The site with the largest `G(x, x)`, lowest index on ties.
pub fn central_site(green: &GreenOperator) -> usize {
    let d = green.diagonal();
    (0..d.len()).fold(0, |best, i| if d[i] > d[best] { i } else { best })
}

const KERNEL_CHECK_MAX_SITES: usize = 4096;

fn green_check(cfg: &RunConfig, em: &mut Emitter<'_>) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let green = solve_green(&d)?;
    let mut out = Outcome::default();
    em.csv(0, &green.diagonal_table())?;
    em.pgm(0, &site_heatmap(&d, green.diagonal()))?;
    let c = central_site(&green);
    let hm = harmonic_measure(&d, &[c])?;
    em.csv(1, &hm.to_table(&d))?;
    let exit = green.exit_distribution(c);
    let exit_gap = exit.iter().zip(hm.row(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.verdicts.push(Verdict::within_tol("harmonic-measure-routes", exit_gap, 0.0, 1e-9));
    out.verdicts.push(Verdict::within_tol("harmonic-row-sum", hm.max_row_defect(), 0.0, 1e-9));
    if d.len() <= KERNEL_CHECK_MAX_SITES {
        let targets: Vec<usize> = (0..d.len()).collect();
        let via_kernel = green_via_kernel_row(&d, &PotentialKernel::new(), c, &targets)?;
        let column = green.column(c);
        let mut t = Table::new(&["ix", "iy", "G_solve", "G_kernel", "diff"]);
        let mut gap: f64 = 0.0;
        for (i, s) in d.sites().iter().enumerate() {
            let diff = column[i] - via_kernel[i];
            gap = gap.max(diff.abs());
            t.push(vec![s.x.to_string(), s.y.to_string(), num(column[i]), num(via_kernel[i]), num(diff)]);
        }
        em.csv(2, &t)?;
        out.verdicts.push(Verdict::within_tol("green-vs-kernel", gap, 0.0, 1e-9));
    }
    let s = d.site(c);
    out.report.push(format!("sites={} center=({}, {}) G(center)={}", d.len(), s.x, s.y, green.diag(c)));
    Ok(out)
}

fn sample_dgff(cfg: &RunConfig, em: &mut Emitter<'_>, stream: Stream) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let green = solve_green(&d)?;
    let fields = sample_fields(&green, stream, cfg.replicas);
    let scale = 2.0 * G.sqrt() * f64::from(cfg.n).ln();
    let mut summary = Table::new(&["replica", "max", "max_over_2sqrtg_logN"]);
    let mut ratios = Vec::with_capacity(fields.len());
    for (i, h) in fields.iter().enumerate() {
        em.csv(i, &h.to_table(&d))?;
        em.pgm(i, &h.heatmap(&d))?;
        let m = h.max();
        ratios.push(m / scale);
        summary.push(vec![i.to_string(), num(m), num(m / scale)]);
    }
    em.csv("summary", &summary)?;
    Ok(Outcome {
        report: vec![format!("median max/(2√g log N) = {}", median(&ratios))],
        ..Outcome::default()
    })
}

fn thick_params(cfg: &RunConfig) -> Result<ScaleParams, RunError> {
    let lambda = cfg.lambda.ok_or_else(|| ConfigError(format!("lambda: required by {}", cfg.command)))?;
    Ok(scale_params(cfg.n, Exponent::Lambda(lambda), Overrides { a_n: cfg.a, t_n: None })?)
}

fn theta_params(cfg: &RunConfig) -> Result<ScaleParams, RunError> {
    let ln = f64::from(cfg.n).ln();
    let theta = match (cfg.theta, cfg.t) {
        (Some(th), _) => th,
        (None, Some(t)) => t / (2.0 * G * ln * ln),
        (None, None) => return Err(ConfigError(format!("theta: required by {}", cfg.command)).into()),
    };
    Ok(scale_params(cfg.n, Exponent::Theta(theta), Overrides { a_n: None, t_n: cfg.t })?)
}

fn thick_points(cfg: &RunConfig, em: &mut Emitter<'_>, stream: Stream) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let green = solve_green(&d)?;
    let params = thick_params(cfg)?;
    let b = cfg.b.unwrap_or(0.0);
    let fields = sample_fields(&green, stream, cfg.replicas);
    let mut summary = Table::new(&["replica", "count", "mass"]);
    let mut masses = Vec::with_capacity(fields.len());
    for (i, h) in fields.iter().enumerate() {
        let mut m = build_point_measure(&d, PointSource::Field(h), &params, PointKind::Thick)?;
        m.atoms.retain(|(_, v)| *v >= b);
        em.csv(i, &m.to_table())?;
        let mass = m.total_mass();
        masses.push(mass);
        summary.push(vec![i.to_string(), m.atoms.len().to_string(), num(mass)]);
    }
    em.csv("summary", &summary)?;
    let moment = thick_first_moment(&green, &params, &cfg.domain, None, b)?;
    let (mc, se) = mean_se(&masses);
    let mut t = Table::new(&["N", "lambda", "b", "exact", "limit", "mc_mean", "mc_se"]);
    t.push(vec![cfg.n.to_string(), num(params.lambda()?), num(b), num(moment.exact), num(moment.limit), num(mc), num(se)]);
    em.csv("moments", &t)?;
    Ok(Outcome {
        verdicts: vec![Verdict::within_sigma("thick-mass-mean", mc, moment.exact, se, 4.0)],
        report: vec![format!("exact={} limit={} mc={mc}±{se}", moment.exact, moment.limit)],
        ..Outcome::default()
    })
}

fn run_walk(cfg: &RunConfig, em: &mut Emitter<'_>, stream: Stream) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let t = cfg.t.ok_or_else(|| ConfigError("t: required by run-walk".into()))?;
    let profiles = sample_local_times(&d, t, cfg.holding, stream, cfg.replicas)?;
    let mut summary = Table::new(&["replica", "excursions", "steps", "avoided"]);
    for (i, p) in profiles.iter().enumerate() {
        em.csv(i, &p.to_table(&d))?;
        em.pgm(i, &p.heatmap(&d))?;
        let avoided = p.visits.iter().filter(|&&v| v == 0).count();
        summary.push(vec![i.to_string(), p.n_excursions.to_string(), p.steps.to_string(), avoided.to_string()]);
    }
    em.csv("summary", &summary)?;
    Ok(Outcome::default())
}

fn avoided_points(cfg: &RunConfig, em: &mut Emitter<'_>, stream: Stream) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let green = solve_green(&d)?;
    let params = theta_params(cfg)?;
    let t = params.t_n()?;
    let profiles = sample_local_times(&d, t, cfg.holding, stream, cfg.replicas)?;
    let mut summary = Table::new(&["replica", "count", "mass"]);
    let mut counts = Vec::with_capacity(profiles.len());
    for (i, p) in profiles.iter().enumerate() {
        let m = build_point_measure(&d, PointSource::LocalTime(p), &params, PointKind::Avoided)?;
        em.csv(i, &m.to_table())?;
        counts.push(m.atoms.len() as f64);
        summary.push(vec![i.to_string(), m.atoms.len().to_string(), num(m.total_mass())]);
    }
    em.csv("summary", &summary)?;
    let exact_count: f64 = avoidance_prob_exact(&green, t).iter().sum();
    let normalized = avoided_first_moment(&green, &params)?;
    let (mc, se) = mean_se(&counts);
    let mut tab = Table::new(&["N", "theta", "t", "hatK", "exact_count", "exact_normalized", "mc_count", "mc_se"]);
    tab.push(vec![
        cfg.n.to_string(),
        num(params.theta()?),
        num(t),
        num(params.hat_k_n()?),
        num(exact_count),
        num(normalized),
        num(mc),
        num(se),
    ]);
    em.csv("moments", &tab)?;
    Ok(Outcome {
        verdicts: vec![Verdict::within_sigma("avoided-count-mean", mc, exact_count, se, 3.0)],
        report: vec![format!("exact={exact_count} mc={mc}±{se} normalized={normalized}")],
        ..Outcome::default()
    })
}

fn light_points(cfg: &RunConfig, em: &mut Emitter<'_>, stream: Stream) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let params = theta_params(cfg)?;
    let cap = cfg.b.ok_or_else(|| ConfigError("b: required by light-points".into()))?;
    let profiles = sample_local_times(&d, params.t_n()?, cfg.holding, stream, cfg.replicas)?;
    for (i, p) in profiles.iter().enumerate() {
        let m = build_point_measure(&d, PointSource::LocalTime(p), &params, PointKind::Light { cap })?;
        em.csv(i, &m.to_table())?;
    }
    let hist = light_point_histogram(&profiles, &params, cap, cfg.bins)?;
    em.csv("histogram", &hist.to_table())?;
    let eps = [0.25, 0.5, 1.0];
    let small = small_value_masses(&profiles, &params, &eps)?;
    let mut t = Table::new(&["eps", "mass"]);
    for (e, m) in eps.iter().zip(&small) {
        t.push(vec![num(*e), num(*m)]);
    }
    em.csv("small_values", &t)?;
    Ok(Outcome {
        report: vec![format!(
            "atom ratio={} bound constant={}",
            hist.zero_ratio, hist.bound_constant
        )],
        ..Outcome::default()
    })
}

fn verify_isomorphism(cfg: &RunConfig, em: &mut Emitter<'_>, stream: Stream) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let green = solve_green(&d)?;
    let n = d.len();
    let r = cfg.replicas;
    let t = cfg.t.unwrap_or(1.0);
    let c = central_site(&green);
    let mut v = Vec::new();

    let ones = TestFunction::new(vec![1.0; n])?;
    let kac = kac_monte_carlo(&d, &ones, 3, r, stream.tagged("kac"))?;
    for (k, (m, se)) in kac.into_iter().enumerate() {
        let exact = kac_moment(&green, &ones, k as u32 + 1)?;
        v.push(Verdict::within_sigma(format!("kac-n{}", k + 1), m, exact, se, 3.0));
    }

    // spectral radius 1/4 keeps e^{2⟨L,f⟩} integrable, so the MC variance is finite
    let f = TestFunction::point(n, c, 0.25 / green.diag(c));
    let log_mgf = exp_moment(&green, &f, t)?;
    let w = Walker::new(&d);
    let exp_samples: Vec<f64> = (0..r as u64)
        .into_par_iter()
        .map(|i| w.local_time(t, cfg.holding, stream.tagged("exp").child(i)).map(|l| l.pair(f.values()).exp()))
        .collect::<Result<_, _>>()?;
    let (m, se) = mean_se(&exp_samples);
    v.push(Verdict::within_sigma("exp-moment", m, log_mgf.exp(), se, 3.0));

    let rk_replicas = r.max(1000);
    let probes = vec![
        TestFunction::point(n, c, 1.0),
        TestFunction::point(n, 0, 1.0),
        TestFunction::new(vec![1.0 / n as f64; n])?,
    ];
    let rk = ray_knight_datasets(&green, t, rk_replicas, &probes, stream.tagged("ray-knight"))?;
    for data in &rk {
        let (a, b) = (&data.a.values, &data.b.values);
        let sigma = ((variance(a) + variance(b)) / rk_replicas as f64).sqrt();
        v.push(Verdict::within_sigma(format!("ray-knight-mean-p{}", data.probe), mean(a), mean(b), sigma, 4.0));
        let a2: Vec<f64> = a.iter().map(|x| x * x).collect();
        let b2: Vec<f64> = b.iter().map(|x| x * x).collect();
        let sigma2 = ((variance(&a2) + variance(&b2)) / rk_replicas as f64).sqrt();
        v.push(Verdict::within_sigma(format!("ray-knight-second-p{}", data.probe), mean(&a2), mean(&b2), sigma2, 4.0));
        let ks = ks_two_sample(a, b)?;
        v.push(Verdict::p_value_above(format!("ray-knight-ks-p{}", data.probe), ks.p_value, 0.001));
    }

    let clt_t = 256.0 * t;
    let probe = TestFunction::point(n, c, 1.0);
    let target_var = green.diag(c);
    let clt = clt_datasets(&d, &[clt_t], &probe, rk_replicas, stream.tagged("clt"))?;
    let samples = &clt[0].1.values;
    let var = variance(samples);
    let var_se = gfflab_core::stats::variance_std_error(samples);
    v.push(Verdict::within_sigma("clt-variance", var, target_var, var_se, 4.0));
    let sd = target_var.sqrt();
    let ks = ks_one_sample(samples, |x| normal_cdf(x / sd))?;
    v.push(Verdict::p_value_above("clt-ks", ks.p_value, 0.001));

    let hit = hitting_identity(&green, &[c], r, stream.tagged("hitting"))?;
    for h in &hit {
        v.push(Verdict::within_sigma("hitting-escape-product", h.product, 1.0, h.product_se, 4.0));
        let z = h.reversibility_z(d.pi_rho() as f64);
        v.push(Verdict::within_sigma("hitting-reversibility", z, 0.0, 1.0, 4.0));
    }
    em.csv("verdicts", &verdict_table(&v))?;
    Ok(Outcome {
        verdicts: v,
        ..Outcome::default()
    })
}

fn cover_time(cfg: &RunConfig, em: &mut Emitter<'_>, stream: Stream) -> Result<Outcome, RunError> {
    let d = wired(cfg)?;
    let w = Walker::new(&d);
    let runs: Vec<_> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|i| w.cover_time(stream.child(i)))
        .collect::<Result<_, _>>()?;
    let scale = (2.0 * G).sqrt() * f64::from(cfg.n).ln();
    let mut t = Table::new(&["replica", "t_cover", "natural_steps", "excursions", "last_discovery", "ratio"]);
    let mut ratios = Vec::with_capacity(runs.len());
    for (i, c) in runs.iter().enumerate() {
        let ratio = c.t_cover.sqrt() / scale;
        ratios.push(ratio);
        t.push(vec![
            i.to_string(),
            num(c.t_cover),
            c.natural_steps.to_string(),
            c.excursions.to_string(),
            num(c.last_discovery),
            num(ratio),
        ]);
    }
    em.csv("summary", &t)?;
    Ok(Outcome {
        report: vec![format!("median √t_cover/(√(2g) log N) = {}", median(&ratios))],
        ..Outcome::default()
    })
}

fn report_constants(cfg: &RunConfig, em: &mut Emitter<'_>) -> Result<Outcome, RunError> {
    let mut rows: Vec<(&str, f64)> = Vec::new();
    let mut base = None;
    if cfg.lambda.is_some() {
        let p = thick_params(cfg)?;
        rows.extend([
            ("lambda", p.lambda()?),
            ("a_N", p.a_n()?),
            ("K_N", p.k_n()?),
            ("c_hat", p.c_hat.unwrap_or(f64::NAN)),
        ]);
        base = Some(p);
    }
    if cfg.theta.is_some() {
        let p = theta_params(cfg)?;
        rows.extend([("theta", p.theta()?), ("t_N", p.t_n()?), ("hatK_N", p.hat_k_n()?)]);
        base.get_or_insert(p);
    }
    let p = base.ok_or_else(|| ConfigError("lambda: required by report-constants".into()))?;
    let mut all = vec![("N", f64::from(cfg.n)), ("g", p.g), ("c0", p.c0), ("alpha", p.alpha), ("m_N", p.m_n)];
    all.extend(rows);
    let mut t = Table::new(&["name", "value"]);
    let mut report = Vec::new();
    for (k, v) in all {
        t.push(vec![k.to_string(), num(v)]);
        report.push(format!("{k} = {v}"));
    }
    em.csv("constants", &t)?;
    Ok(Outcome {
        report,
        ..Outcome::default()
    })
}

fn mean_se(a: &[f64]) -> (f64, f64) {
    let m = mean(a);
    if a.len() < 2 {
        return (m, 0.0);
    }
    (m, (variance(a) / a.len() as f64).sqrt())
}

fn median(a: &[f64]) -> f64 {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}
