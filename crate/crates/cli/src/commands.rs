use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use shearlab_core::linear_stability::{
    self as ls, energy_certificate, energy_decay_check, integrate_mode_robust, Regime,
};
use shearlab_core::localization::{
    band_diagnostics, collapse_discrepancy, pde_residual, residual_refinement, LocalizedSolution,
};
use shearlab_core::model::{self, MaterialParams, ScalingParams};
use shearlab_core::orbit::{self, equilibria, reparametrize, shoot_heteroclinic, PlanarParams};
use shearlab_core::pde_sim::{self, InitialData, Scheme, SimConfig, SimResult, Tolerances};
use shearlab_core::profile::{self, endpoint_report, log_grid, msys_residual, reconstruct};

use crate::config::{flags_object, from_object, overlay, resolve};
use crate::output::{meta_of, no_seeds, Sink};
use crate::CliError;

/// Result of a subcommand, before the manifest is written.
pub struct Outcome {
    pub params: Value,
    pub tolerances: Value,
    pub seeds: Value,
    pub summary: Value,
    /// Failure after partial outputs were written.
    pub failure: Option<CliError>,
}

impl Outcome {
    fn new(params: &impl Serialize, summary: Value) -> Self {
        Self {
            params: json!(params),
            tolerances: json!({}),
            seeds: no_seeds(),
            summary,
            failure: None,
        }
    }
    fn tolerances(mut self, t: Value) -> Self {
        self.tolerances = t;
        self
    }
}

fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![a];
    }
    (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
}

fn need(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(msg.into()))
    }
}

fn fig2_n() -> f64 {
    0.05
}
fn fig2_alpha() -> f64 {
    0.5
}
fn fig2_kappa() -> f64 {
    0.5
}
fn fig2_theta0() -> f64 {
    1.0
}
fn fig3_n() -> f64 {
    0.1
}
fn fig3_alpha() -> f64 {
    0.5
}
fn fig3_theta0() -> f64 {
    10.0
}
fn fig3_lambda() -> f64 {
    0.1
}
fn fig3_sigma0() -> f64 {
    1.88
}
fn default_eps() -> f64 {
    orbit::DEFAULT_EPS
}
fn default_tol() -> f64 {
    orbit::DEFAULT_TOL
}

// spectrum

#[derive(Args, Serialize, Debug)]
pub struct SpectrumFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Frozen diffusion coefficient.
    #[arg(long)]
    k: Option<f64>,
    /// Highest mode number.
    #[arg(long)]
    jmax: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct SpectrumParams {
    n: f64,
    alpha: f64,
    #[serde(default)]
    k: f64,
    #[serde(default = "default_jmax")]
    jmax: usize,
}

fn default_jmax() -> usize {
    ls::DEFAULT_JMAX
}

pub fn spectrum(f: &SpectrumFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: SpectrumParams = resolve(cfg, f)?;
    let mp = MaterialParams::new(p.n, p.alpha, 0.0, 0.0)?;
    let s = ls::spectrum(&mp, p.k, p.jmax)?;
    let regime = Regime::of(p.n, p.k).map_or("unclassified", |r| r.as_str());
    let meta = meta_of(&p);
    sink.csv(
        None,
        &meta,
        &["j", "lambda_minus", "lambda_plus", "classification"],
        s.modes.iter().map(|m| (m.j, m.lambda_minus, m.lambda_plus, m.classification.as_str())),
    )?;
    let summary = json!({ "num_unstable": s.num_unstable, "regime": regime });
    Ok(Outcome::new(&p, summary))
}

// uniform-shear

#[derive(Args, Serialize, Debug)]
pub struct UniformShearFlags {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct UniformShearParams {
    #[serde(default = "fig2_alpha")]
    alpha: f64,
    #[serde(default = "fig2_theta0")]
    theta0: f64,
    #[serde(default = "ten")]
    t_end: f64,
    #[serde(default = "hundred_one")]
    samples: usize,
}

fn ten() -> f64 {
    10.0
}
fn hundred_one() -> usize {
    101
}

pub fn uniform_shear(f: &UniformShearFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: UniformShearParams = resolve(cfg, f)?;
    need(p.t_end > 0.0, "t_end must be > 0")?;
    need(p.samples >= 2, "samples must be >= 2")?;
    let mp = MaterialParams::new(0.0, p.alpha, 0.0, p.theta0)?;
    let rows = linspace(0.0, p.t_end, p.samples)
        .into_iter()
        .map(|t| {
            let s = model::uniform_shear(&mp, t)?;
            Ok((t, model::tau_of_t(&mp, t)?, s.theta_s, s.sigma_s))
        })
        .collect::<shearlab_core::Result<Vec<_>>>()?;
    sink.csv(None, &meta_of(&p), &["t", "tau", "theta_s", "sigma_s"], &rows)?;
    let last = rows.last().unwrap();
    let summary = json!({ "theta_s_end": last.2, "sigma_s_end": last.3 });
    Ok(Outcome::new(&p, summary))
}

// modes

#[derive(Args, Serialize, Debug)]
pub struct ModesFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    /// Mode numbers, comma separated.
    #[arg(long, value_delimiter = ',')]
    j: Option<Vec<usize>>,
    /// Initial strain-rate amplitude of every mode.
    #[arg(long)]
    init_u: Option<f64>,
    /// Initial temperature amplitude of every mode.
    #[arg(long)]
    init_theta: Option<f64>,
    /// End of the run in rescaled time.
    #[arg(long)]
    tau_end: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Freeze the diffusion coefficient at this value.
    #[arg(long)]
    frozen_k: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ModesParams {
    #[serde(default = "fig2_n")]
    n: f64,
    #[serde(default = "fig2_alpha")]
    alpha: f64,
    #[serde(default = "fig2_kappa")]
    kappa: f64,
    #[serde(default = "fig2_theta0")]
    theta0: f64,
    #[serde(default = "first_mode")]
    j: Vec<usize>,
    #[serde(default)]
    init_u: f64,
    #[serde(default = "small_amplitude")]
    init_theta: f64,
    #[serde(default = "five")]
    tau_end: f64,
    #[serde(default = "hundred_one")]
    samples: usize,
    #[serde(default)]
    frozen_k: Option<f64>,
}

fn first_mode() -> Vec<usize> {
    vec![1]
}
fn small_amplitude() -> f64 {
    1e-3
}
fn five() -> f64 {
    5.0
}

pub fn modes(f: &ModesFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: ModesParams = resolve(cfg, f)?;
    need(!p.j.is_empty(), "at least one mode is required")?;
    need(p.samples >= 2, "samples must be >= 2")?;
    let mp = MaterialParams::new(p.n, p.alpha, p.kappa, p.theta0)?;
    let init = [p.init_u, p.init_theta];
    let trajs = p
        .j
        .par_iter()
        .map(|&j| integrate_mode_robust(&mp, j, init, p.tau_end, p.frozen_k))
        .collect::<shearlab_core::Result<Vec<_>>>()?;
    let taus = linspace(0.0, p.tau_end, p.samples);
    let ts = taus.iter().map(|&s| model::t_of_tau(&mp, s)).collect::<shearlab_core::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for tr in &trajs {
        for (&tau, &t) in taus.iter().zip(&ts) {
            let y = tr.at(tau);
            rows.push((tr.j, tau, t, y[0], y[1]));
        }
    }
    sink.csv(None, &meta_of(&p), &["j", "tau", "t", "u", "theta"], &rows)?;
    let per_mode: Vec<Value> = trajs
        .iter()
        .map(|tr| {
            let y = tr.end();
            json!({ "j": tr.j, "method": tr.method, "u_end": y[0], "theta_end": y[1] })
        })
        .collect();
    Ok(Outcome::new(&p, json!({ "modes": per_mode })).tolerances(json!({ "rtol": ls::MODE_RTOL })))
}

// energy

#[derive(Args, Serialize, Debug)]
pub struct EnergyFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    /// Modes 1..=jmax are excited.
    #[arg(long)]
    jmax: Option<usize>,
    /// Initial amplitude of u and θ in every mode.
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    tau_end: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct EnergyParams {
    #[serde(default = "fig2_n")]
    n: f64,
    #[serde(default = "fig2_alpha")]
    alpha: f64,
    #[serde(default = "fig2_kappa")]
    kappa: f64,
    #[serde(default = "fig2_theta0")]
    theta0: f64,
    #[serde(default = "eight")]
    jmax: usize,
    #[serde(default = "small_amplitude")]
    amplitude: f64,
    #[serde(default = "ten")]
    tau_end: f64,
    #[serde(default = "two_hundred_one")]
    samples: usize,
}

fn eight() -> usize {
    8
}
fn two_hundred_one() -> usize {
    201
}

pub fn energy(f: &EnergyFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: EnergyParams = resolve(cfg, f)?;
    need(p.jmax >= 1, "jmax must be >= 1")?;
    let mp = MaterialParams::new(p.n, p.alpha, p.kappa, p.theta0)?;
    let cert = energy_certificate(&mp)?;
    let modes: Vec<(usize, [f64; 2])> = (1..=p.jmax).map(|j| (j, [p.amplitude, p.amplitude])).collect();
    let rep = energy_decay_check(&mp, &cert, &modes, p.tau_end, p.samples)?;
    let mut meta = meta_of(&p);
    meta.push(("A".into(), cert.a.to_string()));
    meta.push(("T".into(), cert.t.to_string()));
    let flags = rep.monotone_flags();
    sink.csv(
        None,
        &meta,
        &["tau", "t", "E", "monotone_after_T"],
        (0..rep.tau.len()).map(|i| (rep.tau[i], rep.t[i], rep.energy[i], flags[i])),
    )?;
    let summary = json!({
        "certificate": cert,
        "tau_cert": rep.tau_cert,
        "max_before_cert": rep.max_before_cert,
        "monotone_after_cert": rep.monotone_after_cert,
        "decay_ratio": rep.decay_ratio,
    });
    Ok(Outcome::new(&p, summary).tolerances(json!({ "rtol": ls::MODE_RTOL, "monotone_rtol": ls::MONOTONE_RTOL })))
}

// heteroclinic

#[derive(Args, Serialize, Debug)]
pub struct HeteroclinicFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    /// Seed offset from the saddle.
    #[arg(long)]
    eps: Option<f64>,
    /// Distance to the node that ends the shoot.
    #[arg(long)]
    tol: Option<f64>,
    /// Shift the parametrization so that the profile has this Σ(0).
    #[arg(long)]
    sigma0: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct HeteroclinicParams {
    #[serde(default = "fig3_n")]
    n: f64,
    #[serde(default = "fig3_alpha")]
    alpha: f64,
    #[serde(default = "fig3_lambda")]
    nu: f64,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default)]
    sigma0: Option<f64>,
}

pub fn heteroclinic(f: &HeteroclinicFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: HeteroclinicParams = resolve(cfg, f)?;
    let pp = PlanarParams::new(p.n, p.alpha, p.nu)?;
    let mut path = shoot_heteroclinic(&pp, p.eps, p.tol)?;
    if let Some(s0) = p.sigma0 {
        path = reparametrize(&path, s0)?;
    }
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
    let meta = vec![
        ("n", p.n.to_string()),
        ("alpha", p.alpha.to_string()),
        ("nu", p.nu.to_string()),
        ("c_nu", pp.c_nu().to_string()),
        ("eta0", path.eta0.to_string()),
        ("kappa1", opt(path.kappa1)),
        ("eps", path.eps.to_string()),
        ("tol", p.tol.to_string()),
    ];
    sink.csv(None, &meta, &["eta", "a", "b"], (0..path.len()).map(|i| (path.eta[i], path.a[i], path.b[i])))?;
    let (at_p, at_q) = equilibria(&pp);
    let summary = json!({
        "points": path.len(),
        "eps_used": path.eps,
        "node_gap": path.node_gap(),
        "in_region": path.all_in_region(),
        "a_increasing": path.a_strictly_increasing(),
        "equilibrium_p": at_p,
        "equilibrium_q": at_q,
        "tail_fits": path.tail_fits().ok(),
        "accepted": path.accepted,
        "rejected": path.rejected,
    });
    Ok(Outcome::new(&p, summary).tolerances(json!({ "eps": p.eps, "tol": p.tol, "rtol": orbit::SHOOT_RTOL })))
}

// profile

#[derive(Args, Serialize, Debug)]
pub struct ProfileFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    xi_min: Option<f64>,
    #[arg(long)]
    xi_max: Option<f64>,
    /// Number of log-spaced output points.
    #[arg(long)]
    count: Option<usize>,
    /// Where the far-field deviations are reported.
    #[arg(long)]
    xi_far: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ProfileParams {
    #[serde(default = "fig3_n")]
    n: f64,
    #[serde(default = "fig3_alpha")]
    alpha: f64,
    #[serde(default = "fig3_lambda")]
    nu: f64,
    #[serde(default = "fig3_sigma0")]
    sigma0: f64,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "xi_lo")]
    xi_min: f64,
    #[serde(default = "xi_hi")]
    xi_max: f64,
    #[serde(default = "four_hundred")]
    count: usize,
    #[serde(default = "xi_hi")]
    xi_far: f64,
}

fn xi_lo() -> f64 {
    1e-3
}
fn xi_hi() -> f64 {
    1e3
}
fn four_hundred() -> usize {
    400
}

pub fn profile(f: &ProfileFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: ProfileParams = resolve(cfg, f)?;
    let pp = PlanarParams::new(p.n, p.alpha, p.nu)?;
    let path = reparametrize(&shoot_heteroclinic(&pp, p.eps, p.tol)?, p.sigma0)?;
    let prof = reconstruct(&path)?;
    let s = prof.sample_log_grid(p.xi_min, p.xi_max, p.count)?;
    let meta = vec![
        ("n", p.n.to_string()),
        ("alpha", p.alpha.to_string()),
        ("nu", p.nu.to_string()),
        ("sigma0", p.sigma0.to_string()),
        ("U0", prof.u0.to_string()),
        ("Theta0", prof.theta0.to_string()),
        ("c_nu", pp.c_nu().to_string()),
    ];
    sink.csv(
        None,
        &meta,
        &["xi", "U", "Sigma", "Theta"],
        (0..s.len()).map(|i| (s.xi[i], s.u[i], s.sigma[i], s.theta[i])),
    )?;
    let grid = log_grid(p.xi_min, p.xi_max, 200);
    let res = msys_residual(|x| prof.eval(x), p.n, p.alpha, p.nu, &grid, profile::FD_REL_STEP)?;
    let ends = endpoint_report(&prof, p.xi_far)?;
    let summary = json!({ "endpoints": ends, "residual": res, "xi_window": prof.xi_window() });
    Ok(Outcome::new(&p, summary).tolerances(json!({ "eps": p.eps, "tol": p.tol, "rel_step": profile::FD_REL_STEP })))
}

// localize

#[derive(Args, Serialize, Debug)]
pub struct LocalizeFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    /// Localization rate λ (> 0).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    /// Half-length of the x window.
    #[arg(long)]
    xmax: Option<f64>,
    #[arg(long)]
    tmax: Option<f64>,
    /// Number of output times in [0, tmax].
    #[arg(long)]
    frames: Option<usize>,
    /// Number of x points.
    #[arg(long)]
    nx: Option<usize>,
    /// Number of diagnostics times.
    #[arg(long)]
    diag_samples: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct LocalizeParams {
    #[serde(default = "fig3_n")]
    n: f64,
    #[serde(default = "fig3_alpha")]
    alpha: f64,
    #[serde(default = "fig3_theta0")]
    theta0: f64,
    #[serde(default = "fig3_lambda")]
    lambda: f64,
    #[serde(default = "fig3_sigma0")]
    sigma0: f64,
    #[serde(default = "twenty_five")]
    xmax: f64,
    #[serde(default = "two_hundred")]
    tmax: f64,
    #[serde(default = "five_frames")]
    frames: usize,
    #[serde(default = "four_hundred_one")]
    nx: usize,
    #[serde(default = "hundred_one")]
    diag_samples: usize,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_tol")]
    tol: f64,
}

fn twenty_five() -> f64 {
    25.0
}
fn two_hundred() -> f64 {
    200.0
}
fn five_frames() -> usize {
    5
}
fn four_hundred_one() -> usize {
    401
}

fn build_solution(
    n: f64,
    alpha: f64,
    theta0: f64,
    lambda: f64,
    sigma0: f64,
    eps: f64,
    tol: f64,
) -> Result<LocalizedSolution, CliError> {
    let mp = MaterialParams::new(n, alpha, 0.0, theta0)?;
    let sc = ScalingParams::new(lambda, sigma0)?;
    Ok(LocalizedSolution::build(mp, sc, eps, tol)?)
}

pub fn localize(f: &LocalizeFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: LocalizeParams = resolve(cfg, f)?;
    need(p.xmax > 0.0, "xmax must be > 0")?;
    need(p.tmax > 0.0, "tmax must be > 0")?;
    need(p.frames >= 2 && p.nx >= 2 && p.diag_samples >= 2, "frames, nx and diag_samples must be >= 2")?;
    let sol = build_solution(p.n, p.alpha, p.theta0, p.lambda, p.sigma0, p.eps, p.tol)?;
    let meta = meta_of(&p);

    let prof = sol.profile();
    let s = prof.sample_log_grid(1e-3, 1e3, 400)?;
    let mut pmeta = meta.clone();
    pmeta.push(("U0".into(), prof.u0.to_string()));
    pmeta.push(("Theta0".into(), prof.theta0.to_string()));
    pmeta.push(("c_nu".into(), prof.params.c_nu().to_string()));
    sink.csv(
        Some("profile"),
        &pmeta,
        &["xi", "U", "Sigma", "Theta"],
        (0..s.len()).map(|i| (s.xi[i], s.u[i], s.sigma[i], s.theta[i])),
    )?;

    let xs = linspace(-p.xmax, p.xmax, p.nx);
    let ts = linspace(0.0, p.tmax, p.frames);
    let field = sol.evaluate_grid(&xs, &ts)?;
    sink.csv(
        Some("fields"),
        &meta,
        &["x", "t", "u", "sigma", "theta"],
        field.iter().map(|(x, t, v)| (x, t, v.u, v.sigma, v.theta)),
    )?;

    let diag = band_diagnostics(&sol, &linspace(0.0, p.tmax, p.diag_samples))?;
    sink.csv(
        Some("diagnostics"),
        &meta,
        &["t", "peak_u", "halfwidth", "theta_excess"],
        diag.iter().map(|d| (d.t, d.peak_u, d.halfwidth, d.theta_excess)),
    )?;

    // residual check over the band itself, with steps tied to its width
    let hw = diag[0].halfwidth;
    let rx = linspace(-2.0 * hw, 2.0 * hw, 21);
    let rt = linspace(0.0, p.tmax, 6);
    let (levels, orders) = residual_refinement(&sol, &rx, &rt, 0.1 * hw, 0.08 * p.tmax, 3)?;
    let finest = levels.last().map_or(f64::NAN, |r| r.max_sup());
    sink.json("residual", &json!({ "levels": levels, "orders": orders, "finest_sup": finest }))?;

    let collapse = collapse_discrepancy(&sol, &ts, 3.0, 400)?;
    let (d0, d1) = (diag[0], diag[diag.len() - 1]);
    let summary = json!({
        "peak_u": [d0.peak_u, d1.peak_u],
        "halfwidth": [d0.halfwidth, d1.halfwidth],
        "residual_finest_sup": finest,
        "residual_orders": orders,
        "collapse_discrepancy": collapse,
        "extrapolated_points": field.iter().filter(|(_, _, v)| v.extrapolated).count(),
    });
    Ok(Outcome::new(&p, summary).tolerances(json!({ "eps": p.eps, "tol": p.tol })))
}

// residual

#[derive(Args, Serialize, Debug)]
pub struct ResidualFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    xmax: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    nt: Option<usize>,
    /// Coarsest difference step in x.
    #[arg(long)]
    hx: Option<f64>,
    /// Coarsest difference step in t.
    #[arg(long)]
    ht: Option<f64>,
    /// Number of halvings of both steps.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct ResidualParams {
    #[serde(default = "fig3_n")]
    n: f64,
    #[serde(default = "fig3_alpha")]
    alpha: f64,
    #[serde(default = "fig3_theta0")]
    theta0: f64,
    #[serde(default = "fig3_lambda")]
    lambda: f64,
    #[serde(default = "fig3_sigma0")]
    sigma0: f64,
    #[serde(default = "five")]
    xmax: f64,
    #[serde(default = "twenty_one")]
    nx: usize,
    #[serde(default = "ten")]
    tmax: f64,
    #[serde(default = "six")]
    nt: usize,
    #[serde(default = "coarse_hx")]
    hx: f64,
    #[serde(default = "coarse_ht")]
    ht: f64,
    #[serde(default = "four")]
    levels: usize,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_tol")]
    tol: f64,
}

fn twenty_one() -> usize {
    21
}
fn six() -> usize {
    6
}
fn four() -> usize {
    4
}
fn coarse_hx() -> f64 {
    0.8
}
fn coarse_ht() -> f64 {
    16.0
}

pub fn residual(f: &ResidualFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    let p: ResidualParams = resolve(cfg, f)?;
    need(p.levels >= 1, "levels must be >= 1")?;
    need(p.nx >= 1 && p.nt >= 1, "nx and nt must be >= 1")?;
    let sol = build_solution(p.n, p.alpha, p.theta0, p.lambda, p.sigma0, p.eps, p.tol)?;
    let xs = linspace(-p.xmax, p.xmax, p.nx);
    let ts = linspace(0.0, p.tmax, p.nt);
    let (levels, orders) = if p.levels == 1 {
        (vec![pde_residual(&sol, &xs, &ts, p.hx, p.ht)?], Vec::new())
    } else {
        residual_refinement(&sol, &xs, &ts, p.hx, p.ht, p.levels)?
    };
    sink.csv(
        None,
        &meta_of(&p),
        &[
            "level", "hx", "ht", "sup_u", "sup_theta", "sup_sigma", "l2_u", "l2_theta", "l2_sigma", "fd_u",
            "fd_theta", "at_floor", "order",
        ],
        levels.iter().enumerate().map(|(i, r)| {
            let order = if i == 0 { None } else { orders.get(i - 1).copied() };
            (
                i, r.hx, r.ht, r.sup[0], r.sup[1], r.sup[2], r.l2[0], r.l2[1], r.l2[2], r.fd_error[0], r.fd_error[1],
                r.at_floor, order,
            )
        }),
    )?;
    let summary = json!({
        "finest_sup": levels.last().map(|r| r.max_sup()),
        "orders": orders,
        "at_floor": levels.last().map(|r| r.at_floor),
    });
    Ok(Outcome::new(&p, summary).tolerances(json!({ "eps": p.eps, "tol": p.tol })))
}

// simulate

#[derive(Args, Serialize, Debug)]
pub struct SimulateFlags {
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    /// Number of grid cells.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    diag_every: Option<f64>,
    #[arg(long)]
    snapshot_every: Option<f64>,
    /// `explicit` or `implicit`.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    energy_weight: Option<f64>,
    #[serde(skip)]
    #[arg(long)]
    rtol: Option<f64>,
    #[serde(skip)]
    #[arg(long)]
    atol: Option<f64>,
    /// Initial data kind: uniform, gaussian-bump, mode or file.
    #[serde(skip)]
    #[arg(long)]
    init: Option<String>,
    #[serde(skip)]
    #[arg(long)]
    center: Option<f64>,
    #[serde(skip)]
    #[arg(long)]
    width: Option<f64>,
    #[serde(skip)]
    #[arg(long)]
    amplitude: Option<f64>,
    /// Uniform noise added to the bump.
    #[serde(skip)]
    #[arg(long)]
    noise: Option<f64>,
    /// Seed of the bump noise.
    #[serde(skip)]
    #[arg(long)]
    seed: Option<u64>,
    /// Mode number for `--init mode`.
    #[serde(skip)]
    #[arg(long)]
    j: Option<usize>,
    /// CSV of x, v, theta for `--init file`.
    #[serde(skip)]
    #[arg(long)]
    path: Option<String>,
}

impl SimulateFlags {
    fn initial_overlay(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        put("center", self.center.map(Value::from));
        put("width", self.width.map(Value::from));
        put("amplitude", self.amplitude.map(Value::from));
        put("noise", self.noise.map(Value::from));
        put("seed", self.seed.map(Value::from));
        put("j", self.j.map(Value::from));
        put("path", self.path.clone().map(Value::from));
        m
    }
}

/// Default run: the metastability configuration.
fn fig2_config() -> Map<String, Value> {
    match json!({
        "n": 0.05,
        "alpha": 0.5,
        "kappa": 0.5,
        "theta0": 1.0,
        "cells": 512,
        "initial": { "kind": "gaussian-bump", "center": 0.5, "width": 0.1, "amplitude": 0.1 },
        "t_end": 500.0,
        "diag_every": 1.0,
        "snapshot_every": 50.0,
        "scheme": "implicit",
    }) {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn object(v: Option<&Value>) -> Map<String, Value> {
    match v {
        Some(Value::Object(m)) => m.clone(),
        _ => Map::new(),
    }
}

fn sim_config(f: &SimulateFlags, layer: Option<Value>) -> Result<SimConfig, CliError> {
    let mut m = fig2_config();
    let layer = match layer {
        None => Map::new(),
        Some(Value::Object(l)) => l,
        Some(_) => return Err(CliError::Usage("each run config must be a JSON object".into())),
    };
    // the initial data and tolerances are replaced as a whole by the config
    overlay(&mut m, layer);
    overlay(&mut m, flags_object(f));

    let mut init = object(m.get("initial"));
    if let Some(kind) = &f.init {
        if init.get("kind").and_then(Value::as_str) != Some(kind) {
            init = Map::new();
        }
        init.insert("kind".into(), json!(kind));
    }
    overlay(&mut init, f.initial_overlay());
    m.insert("initial".into(), Value::Object(init));

    if f.rtol.is_some() || f.atol.is_some() {
        let scheme: Scheme = serde_json::from_value(m.get("scheme").cloned().unwrap_or(json!("explicit")))
            .map_err(|e| CliError::Usage(format!("scheme: {e}")))?;
        let base = Tolerances::default_for(scheme);
        let mut tol = object(m.get("tolerances"));
        tol.entry("rtol").or_insert(json!(base.rtol));
        tol.entry("atol").or_insert(json!(base.atol));
        if let Some(r) = f.rtol {
            tol.insert("rtol".into(), json!(r));
        }
        if let Some(a) = f.atol {
            tol.insert("atol".into(), json!(a));
        }
        m.insert("tolerances".into(), Value::Object(tol));
    }
    from_object(m)
}

fn write_run(sink: &mut Sink, tag: Option<&str>, r: &SimResult) -> Result<(), CliError> {
    let part = |s: &str| tag.map_or(s.to_string(), |t| format!("{t}.{s}"));
    let mut meta = meta_of(&r.config);
    if r.config.energy_weight.is_none() {
        meta.push(("energy_weight".into(), r.energy_weight.to_string()));
    }
    if let Some(t) = r.certificate_time {
        meta.push(("certificate_time".into(), t.to_string()));
    }
    sink.csv(
        Some(&part("diagnostics")),
        &meta,
        &["t", "inhomogeneity", "max_u", "mode1_u", "mode1_theta", "energy"],
        r.diagnostics.iter().map(|d| (d.t, d.inhomogeneity, d.max_u, d.mode1_u, d.mode1_theta, d.energy)),
    )?;
    let rows = r.snapshots.iter().flat_map(|s| {
        (0..s.x.len()).map(move |i| (s.t, s.x[i], s.v[i], s.u[i], s.theta[i], s.sigma[i]))
    });
    sink.csv(Some(&part("snapshots")), &meta, &["t", "x", "v", "u", "theta", "sigma"], rows)?;
    Ok(())
}

fn run_summary(r: &SimResult) -> Value {
    let d = &r.diagnostics;
    let peak = d.iter().fold(d[0], |a, s| if s.inhomogeneity > a.inhomogeneity { *s } else { a });
    let umax = d.iter().fold(d[0], |a, s| if s.max_u > a.max_u { *s } else { a });
    let last = d[d.len() - 1];
    json!({
        "t_reached": last.t,
        "initial_inhomogeneity": d[0].inhomogeneity,
        "peak_inhomogeneity": peak.inhomogeneity,
        "peak_inhomogeneity_t": peak.t,
        "final_inhomogeneity": last.inhomogeneity,
        "max_u": umax.max_u,
        "max_u_t": umax.t,
        "certificate_time": r.certificate_time,
        "energy_weight": r.energy_weight,
        "accepted": r.accepted,
        "rejected": r.rejected,
        "evals": r.evals,
        "aborted": r.aborted.as_ref().map(|e| e.to_string()),
    })
}

fn seeds_of(c: &SimConfig) -> Value {
    match &c.initial {
        InitialData::GaussianBump { seed, noise, .. } if *noise > 0.0 => json!({ "bump_noise": seed }),
        _ => json!({}),
    }
}

fn tolerances_of(c: &SimConfig) -> Value {
    json!(c.tolerances.unwrap_or(Tolerances::default_for(c.scheme)))
}

pub fn simulate(f: &SimulateFlags, cfg: Option<Value>, sink: &mut Sink) -> Result<Outcome, CliError> {
    match cfg {
        Some(Value::Array(runs)) => {
            need(!runs.is_empty(), "empty run list")?;
            let configs =
                runs.into_iter().map(|r| sim_config(f, Some(r))).collect::<Result<Vec<_>, _>>()?;
            let results: Vec<_> = configs.par_iter().map(pde_sim::run_partial).collect();
            let mut summaries = Vec::new();
            let mut failure = None;
            for (i, r) in results.iter().enumerate() {
                let r = r.as_ref().map_err(|e| CliError::Numerical(e.clone()))?;
                write_run(sink, Some(&format!("run{i}")), r)?;
                summaries.push(run_summary(r));
                if failure.is_none() {
                    failure = r.aborted.clone().map(CliError::Numerical);
                }
            }
            Ok(Outcome {
                params: json!(configs),
                tolerances: json!(configs.iter().map(tolerances_of).collect::<Vec<_>>()),
                seeds: json!(configs.iter().map(seeds_of).collect::<Vec<_>>()),
                summary: json!({ "runs": summaries }),
                failure,
            })
        }
        layer => {
            let c = sim_config(f, layer)?;
            let r = pde_sim::run_partial(&c)?;
            write_run(sink, None, &r)?;
            Ok(Outcome {
                params: json!(c),
                tolerances: tolerances_of(&c),
                seeds: seeds_of(&c),
                summary: run_summary(&r),
                failure: r.aborted.clone().map(CliError::Numerical),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        f: SimulateFlags,
    }

    fn flags(args: &[&str]) -> SimulateFlags {
        Wrap::parse_from(std::iter::once("x").chain(args.iter().copied())).f
    }

    #[test]
    fn default_run_is_the_metastability_setup() {
        let c = sim_config(&flags(&[]), None).unwrap();
        assert_eq!((c.n, c.alpha, c.kappa, c.theta0, c.cells), (0.05, 0.5, 0.5, 1.0, 512));
        assert_eq!(c.scheme, Scheme::Implicit);
        assert!(matches!(c.initial, InitialData::GaussianBump { width, .. } if width == 0.1));
    }

    #[test]
    fn initial_flags_edit_the_configured_bump() {
        let layer = json!({ "initial": { "kind": "gaussian-bump", "center": 0.3, "width": 0.2, "amplitude": 0.5 } });
        let c = sim_config(&flags(&["--amplitude", "0.01"]), Some(layer)).unwrap();
        assert_eq!(
            c.initial,
            InitialData::GaussianBump { center: 0.3, width: 0.2, amplitude: 0.01, noise: 0.0, seed: 0 }
        );
    }

    #[test]
    fn changing_the_kind_starts_afresh() {
        let c = sim_config(&flags(&["--init", "mode", "--j", "2", "--amplitude", "1e-4"]), None).unwrap();
        assert_eq!(c.initial, InitialData::Mode { j: 2, amplitude: 1e-4 });
        assert!(sim_config(&flags(&["--init", "mode"]), None).is_err());
    }

    #[test]
    fn tolerance_flags_fill_from_the_scheme_default() {
        let c = sim_config(&flags(&["--scheme", "explicit", "--rtol", "1e-10"]), None).unwrap();
        let t = c.tolerances.unwrap();
        assert_eq!(t.rtol, 1e-10);
        assert_eq!(t.atol, Tolerances::default_for(Scheme::Explicit).atol);
    }

    #[test]
    fn linspace_hits_both_ends() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
    }
}
