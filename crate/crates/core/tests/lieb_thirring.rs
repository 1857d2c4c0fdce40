mod common;

use approx::assert_relative_eq;
use common::*;
use gns_core::eigen::EigenControls;
use gns_core::lt::*;
use gns_core::{Field, FieldTag, Grid, KineticOperator, KineticSpec};
use num_complex::Complex64;

fn grid() -> Grid {
    Grid::new(16.0, 32).unwrap()
}

/// V = −β·(normalized Gaussian density of width s).
fn well(g: &Grid, beta: f64, s: f64) -> Field {
    let u = gaussian(g, [0.0; 3], s);
    let v: Vec<f64> = u.values().iter().map(|c| -beta * c.norm_sqr()).collect();
    Field::from_real(g, FieldTag::Potential, &v).unwrap()
}

#[test]
fn zero_potential_has_no_bound_states() {
    let g = grid();
    let p = LtProblem::new(Field::zeros(&g, FieldTag::Potential), 1.0, 1.0, 3, EigenControls::default()).unwrap();
    let r = negative_spectrum(&p).unwrap();
    assert!(r.eigenvalues.is_empty());
    assert_eq!(r.riesz_mean, 0.0);
    assert!(r.rhs.is_none() && r.l_lower.is_none());
}

#[test]
fn repulsive_potential_has_no_bound_states() {
    let g = grid();
    let v = well(&g, -3.0, 1.0);
    let r = negative_spectrum(&LtProblem::new(v, 1.0, 1.0, 3, EigenControls::default()).unwrap()).unwrap();
    assert!(r.eigenvalues.is_empty());
}

#[test]
fn eigenpairs_are_accurate_and_variational() {
    let g = grid();
    let beta = 6.0;
    let v = well(&g, beta, 1.0);
    let r = negative_spectrum(&LtProblem::new(v.clone(), 1.0, 1.0, 3, EigenControls::default()).unwrap()).unwrap();
    assert!(r.converged);
    assert!(!r.eigenvalues.is_empty());
    assert!(r.residuals.iter().all(|&x| x <= 1e-6), "{:?}", r.residuals);
    assert!(r.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    assert!(r.eigenvalues.iter().all(|&e| e < 0.0));
    // the Gaussian trial bounds λ₁ from above
    let solver = SpectrumSolver::new(&g, 1.0).unwrap();
    let w = solver.convolved_potential(&v.real_parts());
    let trial = gaussian(&g, [0.0; 3], 1.2);
    let kin = KineticOperator::new(&g, &KineticSpec::massless());
    let e = kin.form(trial.values())
        + trial.values().iter().zip(&w).map(|(a, p)| p * a.norm_sqr()).sum::<f64>() * g.cell_volume();
    assert!(r.eigenvalues[0] <= e + 1e-9, "{} > {e}", r.eigenvalues[0]);
    // eigenvectors are orthonormal
    let dv = g.cell_volume();
    for i in 0..r.eigenvectors.len() {
        for j in 0..r.eigenvectors.len() {
            let s: Complex64 = r.eigenvectors[i].iter().zip(&r.eigenvectors[j]).map(|(a, b)| a.conj() * b).sum::<Complex64>() * dv;
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!((s - expect).norm() < 1e-8);
        }
    }
    assert_relative_eq!(r.riesz_mean, r.eigenvalues.iter().map(|e| e.abs()).sum::<f64>(), max_relative = 1e-14);
    let l = r.l_lower.unwrap();
    assert!(l > 0.0 && l.is_finite());
}

#[test]
fn deepening_the_well_lowers_every_level() {
    let g = grid();
    let mut prev: Option<Vec<f64>> = None;
    let mut warm = None;
    let solver = SpectrumSolver::new(&g, 1.0).unwrap();
    for beta in [4.0, 6.0, 8.0, 11.0, 15.0] {
        let v = well(&g, beta, 1.0).real_parts();
        let (vals, res, vecs, ok, _) = solver.solve(&v, 2, &EigenControls::default(), warm.as_deref());
        assert!(ok, "β={beta}: {res:?}");
        if let Some(p) = &prev {
            for (a, b) in vals.iter().zip(p) {
                assert!(a <= b, "β={beta}: {a} > {b}");
            }
            assert!(vals.len() >= p.len());
        }
        prev = Some(vals);
        warm = Some(vecs);
    }
}

#[test]
fn rejects_bad_problems() {
    let g = grid();
    let v = well(&g, 1.0, 1.0);
    assert!(LtProblem::new(v.clone(), 1.0, 0.5, 2, EigenControls::default()).is_err());
    assert!(LtProblem::new(v.clone(), 2.5, 1.0, 2, EigenControls::default()).is_err());
    assert!(LtProblem::new(v, 1.0, 1.0, 0, EigenControls::default()).is_err());
    assert!(riesz_mean(&[-1.0, 0.0], 1.0).is_err());
}

#[test]
fn duality_constants() {
    assert_relative_eq!(duality_target(1.0), 0.25, max_relative = 1e-15);
    assert_eq!(default_beta_grid(1.0).len(), 20);
}
