mod common;

use std::sync::OnceLock;

use approx::assert_relative_eq;
use common::*;
use gns_core::gns::*;
use gns_core::resample::dilate;
use gns_core::{loewdin_orthonormalize, DensityOperator, Field, FieldTag, Grid, SchattenIndex};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reference_grid() -> Grid {
    Grid::new(24.0, 64).unwrap()
}

/// The N = 1, α = 1, q = ∞ optimizer on the reference grid, shared by the tests below.
fn ground() -> &'static GnsResult {
    static CELL: OnceLock<GnsResult> = OnceLock::new();
    CELL.get_or_init(|| {
        let ctl = GnsControls { restarts: 1, ..Default::default() };
        optimize_gns(&GnsProblem::new(1.0, SchattenIndex::INFINITY, 1, reference_grid(), ctl).unwrap()).unwrap()
    })
}

fn unit_gaussian_operator(g: &Grid, s: f64, k: f64) -> DensityOperator {
    DensityOperator::new(loewdin_orthonormalize(vec![gaussian(g, [0.0; 3], s)]).unwrap(), vec![k]).unwrap()
}

#[test]
fn gaussian_ratio_is_sqrt_two() {
    let g = reference_grid();
    let r = gns_ratio(&unit_gaussian_operator(&g, 1.0, 1.0), 1.0, SchattenIndex::INFINITY).unwrap();
    assert!((r / 2f64.sqrt() - 1.0).abs() < 1e-3, "{r}");
}

#[test]
fn ratio_is_scale_free() {
    let g = reference_grid();
    let inf = SchattenIndex::INFINITY;
    let op = unit_gaussian_operator(&g, 1.3, 1.0);
    let r = gns_ratio(&op, 1.0, inf).unwrap();
    for c in [1e-3, 0.5, 7.0, 1e4] {
        assert_relative_eq!(gns_ratio(&op.scaled(c).unwrap(), 1.0, inf).unwrap(), r, max_relative = 1e-10);
    }
    // λ = 2 by interpolation on the same grid
    let u = op.frame().orbitals()[0].clone();
    let v = dilate(&g, &u, 2.0, [0.0; 3]);
    let f = Field::from_values(&g, FieldTag::Orbital, v).unwrap();
    let d = DensityOperator::new(loewdin_orthonormalize(vec![f]).unwrap(), vec![1.0]).unwrap();
    assert!((gns_ratio(&d, 1.0, inf).unwrap() / r - 1.0).abs() < 1e-3);
}

#[test]
fn rejects_parameters_outside_the_window() {
    let g = Grid::new(12.0, 32).unwrap();
    let c = GnsControls::default();
    assert!(GnsProblem::new(0.5, SchattenIndex::new(3.5).unwrap(), 1, g, c.clone()).is_err());
    assert!(GnsProblem::new(2.0, SchattenIndex::INFINITY, 1, g, c.clone()).is_err());
    assert!(GnsProblem::new(1.0, SchattenIndex::INFINITY, 0, g, c.clone()).is_err());
    assert!(GnsProblem::new(0.5, SchattenIndex::new(3.0).unwrap(), 2, g, c).is_ok());
}

fn random_tangent(u: &[Vec<Complex64>], dv: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<Complex64>> {
    let r = u.len();
    let len = u[0].len();
    // (I − UU*)Z + UΩ with Ω skew-Hermitian
    let mut xi: Vec<Vec<Complex64>> = (0..r)
        .map(|_| (0..len).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3))).collect())
        .collect();
    for x in xi.iter_mut() {
        for uj in u {
            let c: Complex64 = uj.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum::<Complex64>() * dv;
            for (xv, uv) in x.iter_mut().zip(uj) {
                *xv -= c * uv;
            }
        }
    }
    let mut om = vec![vec![Complex64::default(); r]; r];
    for i in 0..r {
        for j in 0..i {
            let w = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            om[j][i] = w;
            om[i][j] = -w.conj();
        }
        om[i][i] = Complex64::new(0.0, rng.gen_range(-1.0..1.0));
    }
    for i in 0..r {
        for j in 0..r {
            for (xv, uv) in xi[i].iter_mut().zip(&u[j]) {
                *xv += om[j][i] * uv;
            }
        }
    }
    // scale to unit metric norm
    let n: f64 = xi.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>() * 2.0 * dv;
    xi.iter_mut().flatten().for_each(|v| *v /= n.sqrt());
    xi
}

#[test]
fn gradient_matches_central_differences() {
    let g = Grid::new(12.0, 32).unwrap();
    let dv = g.cell_volume();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (q, k) in [(SchattenIndex::new(2.0).unwrap(), vec![0.7, 0.4]), (SchattenIndex::INFINITY, vec![0.9, 0.5])] {
        let engine = GnsEngine::new(&g, 1.0, q).unwrap();
        let u = initial_frame(&g, 2, 1.4, 5).unwrap();
        let ev = engine.evaluate(&u, &k).unwrap();
        let slope = engine.gradient(&u, &k, &ev);
        let f = |v: &[Vec<Complex64>], w: &[f64]| engine.evaluate(v, w).unwrap().f;
        for _ in 0..20 {
            let xi = random_tangent(&u, dv, &mut rng);
            let eta: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let predicted: f64 = xi.iter().zip(&slope.g).map(|(a, b)| 2.0 * a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum::<f64>() * dv).sum::<f64>()
                + eta.iter().zip(&slope.gt).map(|(a, b)| a * b).sum::<f64>();
            let t = 1e-4;
            let at = |s: f64| {
                let v: Vec<Vec<Complex64>> =
                    u.iter().zip(&xi).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y * s).collect()).collect();
                let v = orthonormalize(v, dv).unwrap();
                let w: Vec<f64> = k.iter().zip(&eta).map(|(a, b)| a * (b * s).exp()).collect();
                f(&v, &w)
            };
            let fd = (at(t) - at(-t)) / (2.0 * t);
            assert!((fd - predicted).abs() <= 1e-5 * predicted.abs().max(1e-2), "q={q}: fd {fd} vs {predicted}");
        }
    }
}

#[test]
fn optimizer_basic_properties() {
    let r = ground();
    assert!(r.converged, "residual {}", r.max_residual());
    assert!(r.k_est <= 2f64.sqrt() + 1e-3 && r.k_est > 0.5, "{}", r.k_est);
    assert!(r.multipliers[0] < 0.0);
    assert_relative_eq!(gns_ratio(&r.optimizer, 1.0, r.q).unwrap(), r.k_est, max_relative = 1e-10);
    assert!(r.max_imag_residue < 1e-8);
    // ⟨u, H u⟩ reproduces μ₁
    let u = r.optimizer.frame().orbital_field(0);
    let hu = mean_field_operator_apply(&r.optimizer, 1.0, &u).unwrap();
    assert!((u.inner(&hu).unwrap().re - r.multipliers[0]).abs() < 1e-6);
    // stored state is normalized
    let engine = GnsEngine::new(r.optimizer.grid(), 1.0, r.q).unwrap();
    let ev = engine.evaluate(r.optimizer.frame().orbitals(), r.optimizer.weights()).unwrap();
    assert!((ev.tsum - 1.0).abs() < 1e-9 && (ev.d - 1.0).abs() < 1e-9);
}

#[test]
fn random_states_do_not_beat_the_optimizer() {
    let r = ground();
    let g = *r.optimizer.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = f64::INFINITY;
    for s in 0..100 {
        let centers = 1 + s % 3;
        let raw = Field::from_real_fn(&g, FieldTag::Orbital, {
            let parts: Vec<([f64; 3], f64, f64)> = (0..centers)
                .map(|_| {
                    (
                        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.2..1.0),
                    )
                })
                .collect();
            move |x, y, z| {
                parts
                    .iter()
                    .map(|(c, w, a)| {
                        let r2 = (x - c[0]).powi(2) + (y - c[1]).powi(2) + (z - c[2]).powi(2);
                        a * (-r2 / (2.0 * w * w)).exp()
                    })
                    .sum()
            }
        });
        let op = DensityOperator::new(loewdin_orthonormalize(vec![raw]).unwrap(), vec![1.0]).unwrap();
        worst = worst.min(gns_ratio(&op, 1.0, r.q).unwrap());
    }
    assert!(worst >= r.k_est - 1e-9, "{worst} < {}", r.k_est);
}

#[test]
fn restart_from_optimizer_is_a_fixed_point() {
    let r = ground();
    let problem =
        GnsProblem::new(1.0, SchattenIndex::INFINITY, 1, reference_grid(), GnsControls { restarts: 1, ..Default::default() })
            .unwrap();
    let again = optimize_gns_from(&problem, &r.optimizer).unwrap();
    assert!((again.k_est - r.k_est).abs() < 1e-8, "{} vs {}", again.k_est, r.k_est);
    let rep = monotonicity_report(r, r, 1, 1e-4);
    assert_eq!(rep.gap, 0.0);
    assert!(rep.pass);
}

#[test]
fn stored_optimizer_round_trips() {
    let r = ground();
    let dir = tempfile::tempdir().unwrap();
    r.optimizer.write_dir(dir.path(), &r.state_meta()).unwrap();
    let (op, manifest) = DensityOperator::read_dir(dir.path()).unwrap();
    assert_eq!(manifest.meta.k_est, Some(r.k_est));
    let back = GnsResult::from_saved(op, 1.0, SchattenIndex::INFINITY).unwrap();
    assert_relative_eq!(back.k_est, r.k_est, max_relative = 1e-12);
    assert_relative_eq!(back.multipliers[0], r.multipliers[0], max_relative = 1e-6);
}

#[test]
fn weight_rule_signals_drops() {
    assert!(matches!(weight_update(&[-1.0, 0.0], 1.0, SchattenIndex::INFINITY), WeightUpdate::Drop(_)));
    let WeightUpdate::Weights(k) = weight_update(&[-0.5, -0.5], 1.0, SchattenIndex::INFINITY) else { panic!() };
    assert_eq!(k, vec![1.0, 1.0]);
}
