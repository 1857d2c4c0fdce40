//! Pipelines behind the subcommands and the on-disk layout of their results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gns_core::diagnostics::{
    decay_fit, hartree_potential, pohozaev_per_orbital, pohozaev_trace, virial_check, DecayFit, IdentityReport,
};
use gns_core::eigen::EigenControls;
use gns_core::gns::{multipliers_and_residuals, optimize_gns, GnsProblem, GnsResult, RestartSummary};
use gns_core::lt::{default_beta_grid, duality_check, negative_spectrum, LtProblem};
use gns_core::oracle::oracle_suite;
use gns_core::state::{Manifest, StateMeta};
use gns_core::trapped::{
    divergence_probe, fit_blowup, minimize_trapped, sweep_k, write_sweep_csv, AdaptiveBox, AufbauReport,
    PotentialSpec, SweepRecord, TrappedControls, TrappedProblem, TrappedResult,
};
use gns_core::{DensityOperator, Field, FieldTag, SchattenIndex};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{CliError, Outcome};

/// Output directory of one run. Every result file carries the resolved
/// configuration and the hashes of its inputs.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    config: RunConfig,
    config_hash: String,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    status: &'a str,
    config: &'a RunConfig,
    config_sha256: &'a str,
    inputs: &'a BTreeMap<String, String>,
    result: &'a T,
}

impl Output {
    pub fn create(dir: PathBuf, command: &'static str, config: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Config(format!("output: cannot create {}: {e}", dir.display())))?;
        let text = serde_json::to_string_pretty(config)?;
        std::fs::write(dir.join("config.json"), &text)?;
        let config_hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(Output { dir, command, config: config.clone(), config_hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write<T: Serialize>(
        &self,
        name: &str,
        result: &T,
        inputs: &BTreeMap<String, String>,
        outcome: Outcome,
    ) -> Result<(), CliError> {
        let env = Envelope {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            status: match outcome {
                Outcome::Converged => "converged",
                Outcome::Partial => "partial",
            },
            config: &self.config,
            config_sha256: &self.config_hash,
            inputs,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        std::fs::write(self.path(name), text)?;
        Ok(())
    }
}

fn outcome(ok: bool) -> Outcome {
    if ok {
        Outcome::Converged
    } else {
        Outcome::Partial
    }
}

fn read_state(dir: &Path) -> Result<(DensityOperator, Manifest), CliError> {
    DensityOperator::read_dir(dir).map_err(|e| CliError::at(&format!("state {}", dir.display()), e))
}

fn identity_reports(op: &DensityOperator, mu: &[f64], alpha: f64, tol: f64) -> Result<Vec<IdentityReport>, CliError> {
    let mut reports = pohozaev_per_orbital(op, mu, alpha, tol)?;
    reports.push(pohozaev_trace(op, mu, alpha, tol)?);
    reports.push(virial_check(op, alpha, tol)?);
    Ok(reports)
}

fn all_pass(reports: &[IdentityReport]) -> bool {
    reports.iter().all(|r| r.pass || r.is_skipped())
}

#[derive(Serialize)]
struct GnsSummary<'a> {
    alpha: f64,
    q: SchattenIndex,
    rank: usize,
    k_est: f64,
    converged: bool,
    multipliers: &'a [f64],
    residuals: &'a [f64],
    max_residual: f64,
    weights: &'a [f64],
    iterations: usize,
    gauge_scale: f64,
    max_imag_residue: f64,
    normalized_box_length: f64,
    restarts: &'a [RestartSummary],
    optimizer_sha256: String,
    identities: Option<Vec<IdentityReport>>,
}

pub fn gns(cfg: &RunConfig, out: &Output) -> Result<Outcome, CliError> {
    let grid = cfg.grid.build()?;
    let g = &cfg.gns;
    let problem = GnsProblem::new(g.alpha, g.q, g.rank, grid, g.controls(cfg.seed))
        .map_err(|e| CliError::at("gns", e))?;
    let r = optimize_gns(&problem)?;
    log::info!("K_est = {:.10}, residual {:.2e}", r.k_est, r.max_residual());
    let manifest = r.optimizer.write_dir(&out.path("optimizer"), &r.state_meta())?;
    let identities = if g.verify {
        Some(identity_reports(&r.optimizer, &r.multipliers, r.alpha, gns_core::diagnostics::DEFAULT_TOLERANCE)?)
    } else {
        None
    };
    let ok = r.converged && identities.as_deref().is_none_or(all_pass);
    let summary = GnsSummary {
        alpha: r.alpha,
        q: r.q,
        rank: r.rank,
        k_est: r.k_est,
        converged: r.converged,
        multipliers: &r.multipliers,
        residuals: &r.residuals,
        max_residual: r.max_residual(),
        weights: r.optimizer.weights(),
        iterations: r.iterations,
        gauge_scale: r.gauge_scale,
        max_imag_residue: r.max_imag_residue,
        normalized_box_length: r.optimizer.grid().box_length(),
        restarts: &r.restarts,
        optimizer_sha256: manifest.provenance_hash.clone(),
        identities,
    };
    out.write("result.json", &summary, &BTreeMap::new(), outcome(ok))?;
    out.write("iterations.json", &r.log, &BTreeMap::new(), outcome(ok))?;
    Ok(outcome(ok))
}

/// A stored optimizer as a full result, with α and q taken from its manifest.
fn saved_gns(dir: &Path, alpha: f64) -> Result<(GnsResult, String), CliError> {
    let (op, manifest) = read_state(dir)?;
    let a = manifest.meta.alpha.unwrap_or(alpha);
    let q = manifest.meta.q.unwrap_or(SchattenIndex::INFINITY);
    Ok((GnsResult::from_saved(op, a, q)?, manifest.provenance_hash))
}

pub fn lt(cfg: &RunConfig, out: &Output) -> Result<Outcome, CliError> {
    let c = &cfg.lt;
    let controls = EigenControls { tol: c.tol, max_iter: c.max_iter };
    let mut inputs = BTreeMap::new();
    if c.duality {
        let dir = c.state.as_ref().ok_or_else(|| CliError::Config("lt.state: required for a duality scan".into()))?;
        let (gns, hash) = saved_gns(dir, c.alpha)?;
        inputs.insert(dir.display().to_string(), hash);
        let betas = if c.betas.is_empty() { default_beta_grid(gns.alpha) } else { c.betas.clone() };
        let report = duality_check(&gns, &betas, c.eig_cap, &controls)?;
        let ok = report.entries.iter().all(|e| e.converged);
        out.write("result.json", &report, &inputs, outcome(ok))?;
        return Ok(outcome(ok));
    }
    let potential = match (&c.field, &c.state) {
        (Some(path), None) => {
            let f = Field::read(path).map_err(|e| CliError::at("lt.field", e))?;
            inputs.insert(path.display().to_string(), f.content_hash());
            f
        }
        (None, Some(dir)) => {
            let beta = c.beta.ok_or_else(|| CliError::Config("lt.beta: required with lt.state".into()))?;
            let (op, manifest) = read_state(dir)?;
            inputs.insert(dir.display().to_string(), manifest.provenance_hash);
            let v: Vec<f64> = op.density_values().iter().map(|r| -beta * r).collect();
            Field::from_real(op.grid(), FieldTag::Potential, &v)?
        }
        _ => return Err(CliError::Config("lt: give exactly one of lt.field and lt.state".into())),
    };
    let problem = LtProblem::new(potential, c.alpha, c.qprime, c.eig_cap, controls)
        .map_err(|e| CliError::at("lt", e))?;
    let r = negative_spectrum(&problem)?;
    out.write("result.json", &r, &inputs, outcome(r.converged))?;
    Ok(outcome(r.converged))
}

fn potential_spec(cfg: &RunConfig, inputs: &mut BTreeMap<String, String>) -> Result<PotentialSpec, CliError> {
    let p = &cfg.trapped.potential;
    if let Some(poly) = p.polynomial()? {
        return Ok(PotentialSpec::PolynomialZeros(poly));
    }
    let path = p.field.as_ref().expect("validated above");
    let f = Field::read(path).map_err(|e| CliError::at("trapped.potential.field", e))?;
    inputs.insert(path.display().to_string(), f.content_hash());
    Ok(PotentialSpec::Sampled(f))
}

fn trapped_problem(cfg: &RunConfig, inputs: &mut BTreeMap<String, String>) -> Result<TrappedProblem, CliError> {
    let t = &cfg.trapped;
    let controls = TrappedControls {
        tol: t.tol,
        max_iter: t.max_iter,
        restarts: t.restarts,
        seed: cfg.seed,
        energy_floor: t.energy_floor,
    };
    let potential = potential_spec(cfg, inputs)?;
    Ok(TrappedProblem::new(t.n_cap, t.coupling, t.mass, potential, cfg.grid.build()?, controls)
        .map_err(|e| CliError::at("trapped", e))?
        .with_center(t.center))
}

#[derive(Serialize)]
struct TrappedSummary<'a> {
    coupling: f64,
    energy: f64,
    rank: usize,
    multipliers: &'a [f64],
    epsilon: f64,
    centroid: [f64; 3],
    converged: bool,
    unbounded: bool,
    residual: f64,
    iterations: usize,
    aufbau: &'a AufbauReport,
    rank_energies: &'a [(usize, f64)],
    restart_energies: &'a [f64],
    warning: &'a Option<String>,
    minimizer_sha256: String,
}

fn trapped_summary<'a>(p: &TrappedProblem, r: &'a TrappedResult, hash: String) -> TrappedSummary<'a> {
    TrappedSummary {
        coupling: p.coupling,
        energy: r.energy,
        rank: r.rank,
        multipliers: &r.multipliers,
        epsilon: r.epsilon,
        centroid: r.centroid,
        converged: r.converged,
        unbounded: r.unbounded,
        residual: r.residual,
        iterations: r.iterations,
        aufbau: &r.aufbau,
        rank_energies: &r.rank_energies,
        restart_energies: &r.restart_energies,
        warning: &r.warning,
        minimizer_sha256: hash,
    }
}

pub fn trapped(cfg: &RunConfig, out: &Output) -> Result<Outcome, CliError> {
    let mut inputs = BTreeMap::new();
    let problem = trapped_problem(cfg, &mut inputs)?;
    if let Some(dir) = &cfg.trapped.probe_state {
        let (op, manifest) = read_state(dir)?;
        inputs.insert(dir.display().to_string(), manifest.provenance_hash);
        let unit = op.with_weights(vec![1.0; op.len()])?;
        let report = divergence_probe(&problem, &unit, cfg.trapped.probe_point, cfg.trapped.probe_trials)?;
        out.write("probe.json", &report, &inputs, Outcome::Converged)?;
        return Ok(Outcome::Converged);
    }
    let r = minimize_trapped(&problem)?;
    let meta = StateMeta {
        alpha: Some(1.0),
        multipliers: Some(r.multipliers.clone()),
        kind: Some("trapped-minimizer".into()),
        ..StateMeta::default()
    };
    let op = DensityOperator::new(r.frame.clone(), vec![1.0; r.rank])?;
    let manifest = op.write_dir(&out.path("minimizer"), &meta)?;
    let ok = r.converged && r.aufbau.verified && !r.unbounded;
    out.write("result.json", &trapped_summary(&problem, &r, manifest.provenance_hash), &inputs, outcome(ok))?;
    Ok(outcome(ok))
}

pub fn sweep(cfg: &RunConfig, out: &Output) -> Result<Outcome, CliError> {
    let mut inputs = BTreeMap::new();
    let template = trapped_problem(cfg, &mut inputs)?;
    let s = &cfg.sweep;
    let ks = match (&s.ladder, s.couplings.is_empty()) {
        (Some(l), true) => l.couplings()?,
        (None, false) => s.couplings.clone(),
        (Some(_), false) => return Err(CliError::Config("sweep: give either sweep.couplings or sweep.ladder".into())),
        (None, true) => return Err(CliError::Config("sweep.couplings: empty and no sweep.ladder".into())),
    };
    if ks.windows(2).any(|w| w[1] < w[0]) {
        return Err(CliError::Config("sweep.couplings: must be ascending".into()));
    }
    let reference = s.reference.or(s.ladder.as_ref().map(|l| l.reference));
    let adaptive = match s.adaptive_factor {
        Some(f) if !(f > 0.0) => return Err(CliError::Config("sweep.adaptive_factor: must be positive".into())),
        Some(f) => {
            if reference.is_none() {
                return Err(CliError::Config("sweep.reference: required with an adaptive box".into()));
            }
            Some(AdaptiveBox { factor: f, points: cfg.grid.points })
        }
        None => None,
    };
    let records: Vec<SweepRecord> = if s.independent {
        if adaptive.is_some() {
            return Err(CliError::Config("sweep.independent: not available with an adaptive box".into()));
        }
        let runs: Result<Vec<Vec<SweepRecord>>, _> = ks
            .par_iter()
            .map(|&k| sweep_k(&template, &[k], None, reference.unwrap_or(k)))
            .collect();
        runs?.into_iter().flatten().collect()
    } else {
        sweep_k(&template, &ks, adaptive, reference.unwrap_or(f64::NAN))?
    };
    write_sweep_csv(&out.path("sweep.csv"), &records)?;
    let ok = records.iter().all(|r| r.converged && r.aufbau_verified);
    out.write("records.json", &records, &inputs, outcome(ok))?;
    Ok(outcome(ok))
}

fn read_records(path: &Path) -> Result<(Vec<SweepRecord>, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("fit.records: {}: {e}", path.display())))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("fit.records: {e}")))?;
    let list = match value {
        serde_json::Value::Object(mut m) => m.remove("result").unwrap_or(serde_json::Value::Null),
        v => v,
    };
    let records = serde_json::from_value(list).map_err(|e| CliError::Config(format!("fit.records: {e}")))?;
    Ok((records, hash))
}

pub fn fit(cfg: &RunConfig, out: &Output) -> Result<Outcome, CliError> {
    let mut inputs = BTreeMap::new();
    let path = cfg.fit.records.as_ref().ok_or_else(|| CliError::Config("fit.records: missing".into()))?;
    let (records, hash) = read_records(path)?;
    inputs.insert(path.display().to_string(), hash);
    let dir = cfg.fit.state.as_ref().ok_or_else(|| CliError::Config("fit.state: missing".into()))?;
    let (gns, hash) = saved_gns(dir, 1.0)?;
    inputs.insert(dir.display().to_string(), hash);
    let poly = cfg
        .trapped
        .potential
        .polynomial()?
        .ok_or_else(|| CliError::Config("trapped.potential: the fit needs points/exponents".into()))?;
    let report = fit_blowup(&records, &poly, &gns)?;
    out.write("fit.json", &report, &inputs, outcome(report.reliable))?;
    Ok(outcome(report.reliable))
}

#[derive(Serialize)]
struct VerifySummary {
    alpha: f64,
    identities: Vec<IdentityReport>,
    orbital_decay: Vec<DecayFit>,
    hartree_decay: Option<DecayFit>,
}

pub fn verify(dir: &Path, alpha: Option<f64>, tol: f64, out: &Output) -> Result<Outcome, CliError> {
    let (op, manifest) = read_state(dir)?;
    let alpha = alpha
        .or(manifest.meta.alpha)
        .ok_or_else(|| CliError::Config("alpha: not recorded in the manifest; pass --alpha".into()))?;
    let (mu, _, _) = multipliers_and_residuals(&op, alpha)?;
    let identities = identity_reports(&op, &mu, alpha, tol)?;
    let orbital_decay = (0..op.len()).map(|i| decay_fit(&op.frame().orbital_field(i), None)).collect::<Result<_, _>>()?;
    let hartree_decay = Some(decay_fit(&hartree_potential(&op, alpha)?, None)?);
    let ok = all_pass(&identities);
    let mut inputs = BTreeMap::new();
    inputs.insert(dir.display().to_string(), manifest.provenance_hash);
    out.write("verify.json", &VerifySummary { alpha, identities, orbital_decay, hartree_decay }, &inputs, outcome(ok))?;
    Ok(outcome(ok))
}

pub fn oracle(cfg: &RunConfig, out: &Output) -> Result<Outcome, CliError> {
    let checks = oracle_suite(&cfg.grid.build()?)?;
    for c in &checks {
        eprintln!("{:<32} {:>14.10} err {:.2e} ({})", c.name, c.computed, c.error, if c.pass { "pass" } else { "FAIL" });
    }
    let ok = checks.iter().all(|c| c.pass);
    out.write("oracle.json", &checks, &BTreeMap::new(), outcome(ok))?;
    Ok(outcome(ok))
}
