mod common;

use std::sync::OnceLock;

use approx::assert_relative_eq;
use common::*;
use gns_core::diagnostics::*;
use gns_core::gns::*;
use gns_core::{loewdin_orthonormalize, DensityOperator, Field, FieldTag, Grid, SchattenIndex};

fn ground() -> &'static GnsResult {
    static CELL: OnceLock<GnsResult> = OnceLock::new();
    CELL.get_or_init(|| {
        let ctl = GnsControls { restarts: 1, ..Default::default() };
        let g = Grid::new(24.0, 64).unwrap();
        optimize_gns(&GnsProblem::new(1.0, SchattenIndex::INFINITY, 1, g, ctl).unwrap()).unwrap()
    })
}

/// Two Gaussians brought to Tr = D = 1, which is not a critical point. With
/// a single orbital the per-orbital identity reduces to the normalization.
fn normalized_pair() -> (DensityOperator, Vec<f64>) {
    let g = Grid::new(24.0, 64).unwrap();
    let frame = loewdin_orthonormalize(vec![gaussian(&g, [0.0; 3], 1.0), gaussian(&g, [1.5, 0.0, 0.0], 0.6)]).unwrap();
    let engine = GnsEngine::new(&g, 1.0, SchattenIndex::INFINITY).unwrap();
    let op = normalized_operator(&engine, frame.orbitals(), &[1.0, 0.5]).unwrap();
    let (mu, _, _) = multipliers_and_residuals(&op, 1.0).unwrap();
    (op, mu)
}

#[test]
fn optimizer_satisfies_the_identities() {
    let r = ground();
    for rep in pohozaev_per_orbital(&r.optimizer, &r.multipliers, 1.0, DEFAULT_TOLERANCE).unwrap() {
        assert!(rep.pass, "{rep:?}");
    }
    let t = pohozaev_trace(&r.optimizer, &r.multipliers, 1.0, DEFAULT_TOLERANCE).unwrap();
    assert!(t.pass, "{t:?}");
    let v = virial_check(&r.optimizer, 1.0, DEFAULT_TOLERANCE).unwrap();
    assert!(v.pass && v.note.is_none(), "{v:?}");
    assert_relative_eq!(v.lhs, 1.0, max_relative = 1e-10);
}

#[test]
fn non_critical_state_fails_pohozaev() {
    let (op, mu) = normalized_pair();
    let reps = pohozaev_per_orbital(&op, &mu, 1.0, DEFAULT_TOLERANCE).unwrap();
    assert!(reps.iter().any(|r| !r.pass), "{reps:?}");
    // wrong multipliers are caught too
    let r = ground();
    let off: Vec<f64> = r.multipliers.iter().map(|m| m * 1.1).collect();
    assert!(!pohozaev_trace(&r.optimizer, &off, 1.0, DEFAULT_TOLERANCE).unwrap().pass);
    assert!(pohozaev_per_orbital(&r.optimizer, &[], 1.0, DEFAULT_TOLERANCE).is_err());
}

#[test]
fn virial_flags_broken_normalization() {
    let r = ground();
    let doubled = r.optimizer.scaled(2.0).unwrap();
    let v = virial_check(&doubled, 1.0, DEFAULT_TOLERANCE).unwrap();
    assert!(!v.pass);
    assert!(v.note.is_some());
}

#[test]
fn zero_state_is_skipped() {
    let r = ground();
    let zero = r.optimizer.scaled(0.0).unwrap();
    let v = virial_check(&zero, 1.0, DEFAULT_TOLERANCE).unwrap();
    assert!(v.is_skipped() && !v.pass);
    assert!(pohozaev_trace(&zero, &r.multipliers, 1.0, DEFAULT_TOLERANCE).unwrap().is_skipped());
}

#[test]
fn gaussian_tail_is_not_a_power_law() {
    let g = Grid::new(24.0, 64).unwrap();
    let fit = decay_fit(&gaussian(&g, [0.0; 3], 1.0), None).unwrap();
    assert!(!fit.power_law, "{fit:?}");
    assert_eq!(fit.window, (3.0, 6.0));
}

#[test]
fn power_law_exponent_is_recovered() {
    let g = Grid::new(24.0, 64).unwrap();
    let f = Field::from_real_fn(&g, FieldTag::Orbital, |x, y, z| (x * x + y * y + z * z + 1e-6).powf(-1.5));
    let fit = decay_fit(&f, None).unwrap();
    assert!(fit.power_law);
    assert!((fit.exponent + 3.0).abs() < 1e-3, "{fit:?}");
    assert!(decay_fit(&f, Some((2.0, 1.0))).is_err());
}

#[test]
fn hartree_potential_of_a_gaussian_decays_like_coulomb() {
    let g = Grid::new(24.0, 64).unwrap();
    let op = DensityOperator::new(loewdin_orthonormalize(vec![gaussian(&g, [0.0; 3], 1.0)]).unwrap(), vec![1.0]).unwrap();
    let pot = hartree_potential(&op, 1.0).unwrap();
    let at0 = pot.real_parts()[g.index(32, 32, 32)];
    let x0 = g.position(g.index(32, 32, 32));
    let r0 = x0.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert_relative_eq!(at0, gaussian_coulomb(r0), max_relative = 1e-4);
    let fit = decay_fit(&pot, None).unwrap();
    assert!((fit.exponent + 1.0).abs() < 0.1, "{fit:?}");
}

#[test]
fn linear_fit_is_exact_on_lines() {
    let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.5 - 0.75 * i as f64)).collect();
    let (slope, r2) = linear_fit(&pts);
    assert_relative_eq!(slope, -0.75, max_relative = 1e-14);
    assert_relative_eq!(r2, 1.0, max_relative = 1e-14);
    assert!(linear_fit(&pts[..1]).0.is_nan());
    assert_relative_eq!(relative_residual(1.0, 1.001), 0.001 / 1.001, max_relative = 1e-12);
}
