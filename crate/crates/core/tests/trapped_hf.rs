mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;

use approx::assert_relative_eq;
use common::*;
use gns_core::eigen::{lobpcg, EigenControls};
use gns_core::gns::GnsResult;
use gns_core::trapped::*;
use gns_core::{loewdin_orthonormalize, DensityOperator, Field, FieldTag, Grid, SchattenIndex};
use num_complex::Complex64;

fn grid() -> Grid {
    Grid::new(12.0, 32).unwrap()
}

fn sqrt_potential() -> PotentialSpec {
    PotentialSpec::PolynomialZeros(PolynomialZeros::single([0.0; 3], 0.5).unwrap())
}

fn controls() -> TrappedControls {
    TrappedControls { restarts: 1, ..Default::default() }
}

fn gaussian_operator(g: &Grid, s: f64) -> DensityOperator {
    DensityOperator::new(loewdin_orthonormalize(vec![gaussian(g, [0.0; 3], s)]).unwrap(), vec![1.0]).unwrap()
}

/// Solved N = 1, K = 0.5 problem, shared by several tests.
fn solved() -> &'static (TrappedProblem, TrappedResult) {
    static CELL: OnceLock<(TrappedProblem, TrappedResult)> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = TrappedProblem::new(1, 0.5, 1.0, sqrt_potential(), grid(), controls()).unwrap();
        let r = minimize_trapped(&p).unwrap();
        (p, r)
    })
}

#[test]
fn functional_matches_gaussian_oracles() {
    let g = Grid::new(16.0, 48).unwrap();
    let u = gaussian(&g, [0.0; 3], 1.0);
    let orbs = vec![u.values().to_vec()];
    let zero = vec![0.0; g.len()];
    // massless kinetic part: ⟨u, √−Δ u⟩ = 2/√π
    let free = HfFunctional::new(&g, 0.0, zero.clone(), 0.0).unwrap();
    assert_relative_eq!(free.evaluate(&orbs).energy, 2.0 / PI.sqrt(), max_relative = 1e-3);
    // interaction: ℰ is affine in K with slope −D(ρ)
    let k = 0.7;
    let with = HfFunctional::new(&g, 0.0, zero, k).unwrap().evaluate(&orbs);
    assert_relative_eq!(with.interaction, gaussian_self_energy(), max_relative = 1e-3);
    assert_relative_eq!(with.energy, 2.0 / PI.sqrt() - k * with.interaction, max_relative = 1e-3);
    // potential term: ∫|x|² |u|² = 3/2
    let v: Vec<f64> = (0..g.len()).map(|i| g.position(i).iter().map(|x| x * x).sum()).collect();
    let harm = HfFunctional::new(&g, 0.0, v, 0.0).unwrap().evaluate(&orbs);
    assert_relative_eq!(harm.potential[0], 1.5, max_relative = 1e-6);
    assert_relative_eq!(harm.energy, harm.kinetic[0] + 1.5, max_relative = 1e-6);
}

#[test]
fn energy_decreases_with_coupling() {
    let g = grid();
    let frame = loewdin_orthonormalize(vec![gaussian(&g, [0.0; 3], 1.0)]).unwrap();
    let mut last = f64::INFINITY;
    for k in [0.1, 0.5, 1.0, 2.0] {
        let p = TrappedProblem::new(1, k, 1.0, sqrt_potential(), g, controls()).unwrap();
        let e = hf_energy(&frame, &p).unwrap();
        assert!(e < last);
        last = e;
    }
}

#[test]
fn rejects_bad_problems() {
    let g = grid();
    assert!(TrappedProblem::new(0, 0.5, 1.0, sqrt_potential(), g, controls()).is_err());
    assert!(TrappedProblem::new(1, -0.5, 1.0, sqrt_potential(), g, controls()).is_err());
    assert!(TrappedProblem::new(1, 0.5, -1.0, sqrt_potential(), g, controls()).is_err());
    let neg = Field::from_real_fn(&g, FieldTag::Potential, |x, _, _| x);
    assert!(PotentialSpec::Sampled(neg).trapping_check(&g, [0.0; 3]).is_err());
    let flat = Field::from_real_fn(&g, FieldTag::Potential, |_, _, _| 1.0);
    assert!(PotentialSpec::Sampled(flat).trapping_check(&g, [0.0; 3]).unwrap().is_some());
    // |x|^{1/2} grows too slowly on this box to count as strong trapping
    assert!(sqrt_potential().trapping_check(&g, [0.0; 3]).unwrap().is_some());
    let steep = Field::from_real_fn(&g, FieldTag::Potential, |x, y, z| (x * x + y * y + z * z).powi(3));
    assert!(PotentialSpec::Sampled(steep).trapping_check(&g, [0.0; 3]).unwrap().is_none());
}

#[test]
fn weak_coupling_minimizer_is_an_aufbau_state() {
    let (p, r) = solved();
    assert!(r.converged, "residual {}", r.residual);
    assert!(r.aufbau_verified(), "{:?}", r.aufbau);
    assert_eq!(r.rank, 1);
    assert!(!r.unbounded);
    assert!(r.energy > 0.0);
    assert!(r.multipliers[0] < r.aufbau.complement_lowest);
    assert_relative_eq!(hf_energy(&r.frame, p).unwrap(), r.energy, max_relative = 1e-12);
    assert_relative_eq!(r.epsilon, epsilon_of(&p.grid, r.frame.orbitals()), max_relative = 1e-12);
    // the state sits on the zero of V
    assert!(r.centroid.iter().all(|c| c.abs() < 1e-2 * p.grid.spacing()), "{:?}", r.centroid);
}

#[test]
fn minimizer_beats_trial_states() {
    let (p, r) = solved();
    for s in [0.4, 0.7, 1.0, 1.5] {
        let f = loewdin_orthonormalize(vec![gaussian(&p.grid, [0.0; 3], s)]).unwrap();
        assert!(hf_energy(&f, p).unwrap() > r.energy);
    }
}

#[test]
fn vanishing_coupling_reduces_to_one_body_levels() {
    let g = grid();
    let v = sqrt_potential().sample(&g, [0.0; 3]).unwrap();
    let p = TrappedProblem::new(2, 1e-9, 1.0, sqrt_potential(), g, controls()).unwrap();
    let r = minimize_trapped(&p).unwrap();
    let func = HfFunctional::new(&g, 1.0, v, 0.0).unwrap();
    let mut op = OneBody(&func);
    let start: Vec<Vec<Complex64>> =
        (0..4).map(|i| gaussian(&g, [0.1 * i as f64, 0.0, 0.0], 1.0 + 0.2 * i as f64).values().to_vec()).collect();
    let eig = lobpcg(&mut op, start.clone(), &[], g.cell_volume(), &EigenControls { tol: 1e-8, max_iter: 500 });
    let two: f64 = eig.values[..2].iter().sum();
    // both levels are positive, so filling two orbitals costs more than one
    assert_eq!(r.rank, 1);
    assert_relative_eq!(r.energy, eig.values[0], max_relative = 1e-5);
    assert!(two > r.energy);
}

struct OneBody<'a>(&'a HfFunctional);

impl gns_core::eigen::LinearOperator for OneBody<'_> {
    fn apply(&mut self, x: &[Complex64], out: &mut [Complex64]) {
        let u = vec![x.to_vec()];
        let ev = self.0.evaluate(&u);
        out.copy_from_slice(&self.0.apply_h(&u, &ev).0[0]);
    }
    fn precondition(&mut self, r: &[Complex64], _shift: f64) -> Vec<Complex64> {
        r.to_vec()
    }
}

#[test]
fn kappa_bar_of_a_gaussian() {
    let g = Grid::new(16.0, 40).unwrap();
    let rho = density_of(&gaussian(&g, [0.0; 3], 1.0));
    let (k, y) = compute_kappa_bar(&rho, 1.0).unwrap();
    // ∫|x| π^{−3/2} e^{−r²} = 2/√π
    assert_relative_eq!(k, 2.0 / PI.sqrt(), max_relative = 3e-3);
    assert!(y.iter().all(|c| c.abs() < 1e-3));
    let moved = density_of(&gaussian(&g, [1.0, -0.5, 0.0], 1.0));
    let (k2, y2) = compute_kappa_bar(&moved, 1.0).unwrap();
    assert_relative_eq!(k2, 2.0 / PI.sqrt(), max_relative = 3e-3);
    assert!((y2[0] + 1.0).abs() < 5e-3 && (y2[1] - 0.5).abs() < 5e-3, "{y2:?}");
    // small exponents approach the mass
    let (k3, _) = compute_kappa_bar(&rho, 1e-3).unwrap();
    assert!((k3 - 1.0).abs() < 5e-3);
}

#[test]
fn blowup_zero_has_the_smallest_coefficient() {
    let v = PolynomialZeros::new(
        vec![[0.0; 3], [2.0, 0.0, 0.0], [5.0, 0.0, 0.0]],
        vec![0.5; 3],
        SmoothFactor::default(),
    )
    .unwrap();
    assert_eq!(v.blowup_set(), vec![1]);
    assert_relative_eq!(v.iota(), 6f64.sqrt(), max_relative = 1e-14);
}

fn gaussian_gns() -> GnsResult {
    let g = Grid::new(16.0, 32).unwrap();
    GnsResult::from_saved(gaussian_operator(&g, 1.0), 1.0, SchattenIndex::INFINITY).unwrap()
}

fn synthetic(k: f64, k_inf: f64) -> SweepRecord {
    let gap = k_inf - k;
    SweepRecord {
        coupling: k,
        energy: 2.0 * gap.powf(1.0 / 3.0),
        epsilon: 0.9 * gap.powf(2.0 / 3.0),
        rank: 1,
        multipliers: vec![-1.0],
        centroid: [0.0; 3],
        box_length: 1.0,
        spacing: 0.1,
        converged: true,
        aufbau_verified: true,
        residual: 1e-6,
        gns_ratio: 1.4,
    }
}

#[test]
fn blowup_fit_recovers_synthetic_exponents() {
    let gns = gaussian_gns();
    let k_inf = 1.3;
    let ks: Vec<f64> = (0..8).map(|i| k_inf * (1.0 - 0.1 * 0.7f64.powi(i))).collect();
    let recs: Vec<SweepRecord> = ks.iter().map(|&k| synthetic(k, k_inf)).collect();
    let v = PolynomialZeros::single([0.0; 3], 0.5).unwrap();
    let fit = fit_blowup(&recs, &v, &gns).unwrap();
    assert!(fit.reliable);
    assert_relative_eq!(fit.k_inf_est, k_inf, max_relative = 1e-4);
    assert!((fit.energy.exponent - 1.0 / 3.0).abs() < 1e-3, "{}", fit.energy.exponent);
    assert!((fit.epsilon.exponent - 2.0 / 3.0).abs() < 1e-3);
    assert_relative_eq!(fit.fitted_energy_prefactor, 2.0, max_relative = 1e-2);
    assert_eq!(fit.centroid_cells, 0.0);
    assert_eq!(fit.expected_energy_exponent, 1.0 / 3.0);
    assert!(fit_blowup(&recs[..4], &v, &gns).is_err());
}

#[test]
fn sweep_repeats_and_orders_energies() {
    let template = TrappedProblem::new(1, 0.3, 1.0, sqrt_potential(), grid(), controls()).unwrap();
    let recs = sweep_k(&template, &[0.3, 0.3, 0.6], None, 1.35).unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(serde_json::to_string(&recs[0]).unwrap(), serde_json::to_string(&recs[1]).unwrap());
    assert!(recs[2].energy <= recs[0].energy);
    assert!(recs.iter().all(|r| r.converged && r.aufbau_verified));
    assert!(sweep_k(&template, &[0.6, 0.3], None, 1.35).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &recs).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 4);
}

#[test]
fn probe_separates_sub_and_supercritical_couplings() {
    let g = Grid::new(16.0, 32).unwrap();
    let q = gaussian_operator(&g, 1.0);
    let ratio = gns_core::gns::gns_ratio(&q, 1.0, SchattenIndex::INFINITY).unwrap();
    let base = TrappedProblem::new(1, 1.0, 1.0, sqrt_potential(), g, controls()).unwrap();
    let hi = divergence_probe(&base.clone().with_coupling(1.5 * ratio), &q, [0.0; 3], 40).unwrap();
    assert!(hi.unbounded);
    let lo = divergence_probe(&base.with_coupling(0.5 * ratio), &q, [0.0; 3], 12).unwrap();
    assert!(!lo.unbounded);
    assert_eq!(lo.trials, 12);
}
