mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use common::*;
use gns_core::kinetic::{apply_fractional_kinetic, KineticOperator, KineticSpec};
use gns_core::riesz::{hartree_energy, riesz_convolve};
use gns_core::{Field, FieldTag, Grid};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_grid() -> Grid {
    Grid::new(24.0, 64).unwrap()
}

#[test]
fn quadrature_oracles_agree_with_closed_forms() {
    assert_relative_eq!(gaussian_symbol_average(|k| k, 1.0), 2.0 / PI.sqrt(), max_relative = 1e-10);
    assert_relative_eq!(gaussian_self_energy(), (2.0 / PI).sqrt(), max_relative = 1e-9);
    assert_relative_eq!(erf(1.0), 0.842_700_792_949_714_9, max_relative = 1e-12);
}

#[test]
fn gaussian_kinetic_form() {
    let g = reference_grid();
    let u = gaussian(&g, [0.0; 3], 1.0);
    let oracle = gaussian_symbol_average(|k| k, 1.0);
    let op = KineticOperator::new(&g, &KineticSpec::massless());
    let t = op.form(u.values());
    assert!((t / oracle - 1.0).abs() < 1e-3, "T = {t}, oracle {oracle}");
    // the plain multiplier is a lattice sum; it agrees to the low-frequency defect
    let tu = apply_fractional_kinetic(&u, &KineticSpec::massless()).unwrap();
    let plain = u.inner(&tu).unwrap().re;
    assert!((plain / oracle - 1.0).abs() < 1e-3, "{plain}");
    assert!((t - oracle).abs() < (plain - oracle).abs());
}

#[test]
fn low_frequency_correction_tracks_mass() {
    // small box: the lattice defect is visible in the plain form and removed by the correction
    let g = Grid::new(16.0, 32).unwrap();
    for &m in &[0.0, 0.1, 0.3, 1.0] {
        let spec = KineticSpec::new(m, false).unwrap();
        let u = gaussian(&g, [0.0; 3], 1.0);
        let oracle = gaussian_symbol_average(|k| (k * k + m * m).sqrt(), 1.0);
        let fixed = KineticOperator::new(&g, &spec).form(u.values());
        let plain = KineticOperator::periodic(&g, &spec).form(u.values());
        assert!(
            (fixed - oracle).abs() <= 0.2 * (plain - oracle).abs() + 1e-8 * oracle,
            "m={m}: {fixed} vs {oracle} (plain {plain})"
        );
    }
}

#[test]
fn coulomb_potential_of_gaussian_pointwise() {
    let g = reference_grid();
    let rho = density_of(&gaussian(&g, [0.0; 3], 1.0));
    let f = riesz_convolve(&rho, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, v) in f.values().iter().enumerate() {
        let p = g.position(idx);
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r <= g.box_length() / 4.0 {
            worst = worst.max((v.re - gaussian_coulomb(r)).abs());
        }
    }
    assert!(worst < 1e-4, "max pointwise error {worst}");
    let origin = f.values()[g.index(32, 32, 32)].re;
    assert_relative_eq!(origin, 2.0 / PI.sqrt(), max_relative = 1e-6);
}

#[test]
fn gaussian_self_energy_and_symmetry() {
    let g = reference_grid();
    let rho = density_of(&gaussian(&g, [0.0; 3], 1.0));
    let d = hartree_energy(&rho, &rho, 1.0).unwrap();
    assert!((d / gaussian_self_energy() - 1.0).abs() < 1e-3, "{d}");
    let rho2 = density_of(&gaussian(&g, [1.0, -0.5, 2.0], 0.8));
    let a = hartree_energy(&rho, &rho2, 1.0).unwrap();
    let b = hartree_energy(&rho2, &rho, 1.0).unwrap();
    assert!((a - b).abs() <= 1e-10 * a.abs());
    let zero = Field::zeros(&g, FieldTag::Density);
    assert_eq!(hartree_energy(&zero, &rho, 1.0).unwrap(), 0.0);
    assert!(riesz_convolve(&zero, 1.0).unwrap().values().iter().all(|v| v.norm() == 0.0));
}

#[test]
fn far_field_is_monopole() {
    let g = reference_grid();
    let a = density_of(&gaussian(&g, [0.6, 0.0, 0.0], 0.5));
    let b = density_of(&gaussian(&g, [-0.6, 0.0, 0.0], 0.5));
    let vals: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x.re + y.re).collect();
    let rho = Field::from_real(&g, FieldTag::Density, &vals).unwrap();
    let f = riesz_convolve(&rho, 1.0).unwrap();
    // point at |x| = L/4 along the y axis
    let j = 32 + 16;
    let v = f.values()[g.index(32, j, 32)].re;
    let r = g.coord(j);
    assert!((v * r / 2.0 - 1.0).abs() < 1e-2, "{}", v * r / 2.0);
}

#[test]
fn riesz_rejects_bad_inputs() {
    let g = Grid::new(8.0, 8).unwrap();
    let rho = Field::from_real_fn(&g, FieldTag::Density, |_, _, _| 1.0);
    assert!(riesz_convolve(&rho, 2.0).is_err());
    assert!(riesz_convolve(&rho, 0.0).is_err());
    let neg = Field::from_real_fn(&g, FieldTag::Density, |x, _, _| x);
    assert!(riesz_convolve(&neg, 1.0).is_err());
}

#[test]
fn doubling_the_box_leaves_self_energy_unchanged() {
    let small = Grid::new(12.0, 32).unwrap();
    let big = Grid::new(24.0, 64).unwrap();
    let e1 = hartree_energy(&density_of(&gaussian(&small, [0.0; 3], 1.0)), &density_of(&gaussian(&small, [0.0; 3], 1.0)), 1.0).unwrap();
    let e2 = hartree_energy(&density_of(&gaussian(&big, [0.0; 3], 1.0)), &density_of(&gaussian(&big, [0.0; 3], 1.0)), 1.0).unwrap();
    assert!((e1 / e2 - 1.0).abs() < 1e-3, "{e1} {e2}");
}

#[test]
fn riesz_potential_for_fractional_alpha() {
    // ρ ∗ |x|^{−α} at the origin for ρ = π^{−3/2}e^{−r²}: 4π^{−1/2} ∫ r^{2−α} e^{−r²} dr = 2Γ((3−α)/2)/√π
    let g = Grid::new(16.0, 48).unwrap();
    let rho = density_of(&gaussian(&g, [0.0; 3], 1.0));
    for &alpha in &[0.5, 1.5] {
        let oracle = simpson(|r| 4.0 * PI.powf(-0.5) * r.powf(2.0 - alpha) * (-r * r).exp(), 0.0, 10.0, 200000);
        let f = riesz_convolve(&rho, alpha).unwrap();
        let v = f.values()[g.index(24, 24, 24)].re;
        assert!((v / oracle - 1.0).abs() < 1e-5, "alpha {alpha}: {v} vs {oracle}");
    }
}

#[test]
fn scaling_covariance_by_grid_reinterpretation() {
    let g = Grid::new(24.0, 64).unwrap();
    let u = gaussian(&g, [0.0; 3], 1.3);
    let half = g.rescaled(0.5).unwrap();
    // u_λ(x) = λ^{3/2} u(λx) sampled on the halved box has the same samples × λ^{3/2}
    let lam: f64 = 2.0;
    let mut v = Field::from_values(&half, FieldTag::Orbital, u.values().to_vec()).unwrap();
    v.scale(lam.powf(1.5));
    let t1 = KineticOperator::new(&g, &KineticSpec::massless()).form(u.values());
    let t2 = KineticOperator::new(&half, &KineticSpec::massless()).form(v.values());
    assert!((t2 / t1 - lam).abs() < 1e-3 * lam);
    let d1 = hartree_energy(&density_of(&u), &density_of(&u), 1.0).unwrap();
    let d2 = hartree_energy(&density_of(&v), &density_of(&v), 1.0).unwrap();
    assert!((d2 / d1 - lam).abs() < 1e-3 * lam);
}

#[test]
fn hardy_kato_ratio_is_bounded_over_random_states() {
    let g = Grid::new(12.0, 24).unwrap();
    let op = KineticOperator::periodic(&g, &KineticSpec::massless());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let s = rng.gen_range(0.6..2.0);
        let mut u = gaussian(&g, c, s);
        for v in u.values_mut() {
            *v *= 1.0 + 0.3 * rng.gen_range(-1.0..1.0);
        }
        let nrm = u.norm();
        u.scale(1.0 / nrm);
        let rho = density_of(&u);
        let d = hartree_energy(&rho, &rho, 1.0).unwrap();
        let t = op.form(u.values());
        worst = worst.max(d / t);
    }
    // ⟨u,|x|^{-1}u⟩ ≤ (π/2)⟨u,√−Δ u⟩ (Kato) and the Hartree term is at most that
    assert!(worst < PI / 2.0, "C = {worst}");
}

fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> Field {
    let v = (0..g.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    Field::from_values(g, FieldTag::Generic, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn kinetic_is_self_adjoint_and_bounded_below(seed in 0u64..1000, m in 0.0f64..3.0) {
        let g = Grid::new(5.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_field(&g, &mut rng);
        let v = random_field(&g, &mut rng);
        let spec = KineticSpec::new(m, false).unwrap();
        let tu = apply_fractional_kinetic(&u, &spec).unwrap();
        let tv = apply_fractional_kinetic(&v, &spec).unwrap();
        let lhs = u.inner(&tv).unwrap();
        let rhs = tu.inner(&v).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * u.norm() * v.norm());
        let q = u.inner(&tu).unwrap().re;
        prop_assert!(q >= m * u.norm_squared() - 1e-10);
    }
}
