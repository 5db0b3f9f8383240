mod common;

use common::{c, rng};
use proptest::prelude::*;
use qisim_core::environment::{Atom, DeltaComb, Distribution, TabulatedDensity};
use qisim_core::kernels::{kernel_eval, kernel_from_density, KernelSpec, QuadratureParams};
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identities_hold(seed in any::<u64>(), t in -50.0f64..50.0) {
        let mut r = rng(seed);
        let k = common::random_kernel(&mut r, 2);
        prop_assert_eq!(kernel_eval(&k, 0.0), c(1.0, 0.0));
        let d = kernel_eval(&k, t);
        prop_assert!(d.norm() <= 1.0 + 1e-9);
        prop_assert!((kernel_eval(&k, -t) - d.conj()).norm() <= 1e-12);
        prop_assert!((kernel_eval(&k.conjugate(), t) - d.conj()).norm() <= 1e-12);
    }

    #[test]
    fn comb_sum_order_independent(seed in any::<u64>(), t in -20.0f64..20.0) {
        let mut r = rng(seed);
        let count = r.gen_range(1..200);
        let raw: Vec<f64> = (0..count).map(|_| r.gen_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut atoms: Vec<Atom> = raw
            .iter()
            .map(|w| Atom { epsilon: r.gen_range(-5.0..5.0), weight: c(w / total, 0.0) })
            .collect();
        // exact normalization on the last atom
        let head: f64 = atoms[..count - 1].iter().map(|a| a.weight.re).sum();
        atoms[count - 1].weight = c(1.0 - head, 0.0);
        prop_assume!(atoms[count - 1].weight.re >= 0.0);
        let forward = KernelSpec::from_comb(DeltaComb::new(atoms.clone())).unwrap();
        atoms.reverse();
        let backward = KernelSpec::from_comb(DeltaComb::new(atoms)).unwrap();
        prop_assert!((kernel_eval(&forward, t) - kernel_eval(&backward, t)).norm() <= 1e-13);
    }

    #[test]
    fn mixture_is_linear(seed in any::<u64>(), t in -10.0f64..10.0) {
        let mut r = rng(seed);
        if let KernelSpec::Mixture(parts) = common::random_kernel(&mut r, 1) {
            let direct: qisim_core::Complex64 = parts.iter().map(|p| kernel_eval(&p.kernel, t) * p.weight).sum();
            let whole = kernel_eval(&KernelSpec::Mixture(parts), t);
            prop_assert!((whole - direct).norm() <= 1e-15);
        }
    }
}

fn uniform_error(panels: usize, t: f64) -> f64 {
    let q = QuadratureParams::new(-1.0, 1.0, panels).unwrap();
    let table = TabulatedDensity::new(q.nodes(), vec![0.5; panels + 1]).unwrap();
    let k = kernel_from_density(&Distribution::Tabulated(table), &q).unwrap();
    (kernel_eval(&k, t) - c(t.sin() / t, 0.0)).norm()
}

#[test]
fn simpson_converges_at_fourth_order() {
    let errors: Vec<f64> = [16, 32, 64, 128].iter().map(|&p| uniform_error(p, 6.0)).collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 4.0).abs() < 0.3, "observed order {order} from {errors:?}");
    }
}

#[test]
fn family_window_reports_missing_mass() {
    use qisim_core::environment::AnalyticFamily;
    let q = QuadratureParams::new(-10.0, 10.0, 4000).unwrap();
    let k = kernel_from_density(&Distribution::Family(AnalyticFamily::Lorentz { gamma: 1.0 }), &q).unwrap();
    let KernelSpec::Numeric(n) = &k else { panic!() };
    let expected = 2.0 / std::f64::consts::PI * 10f64.atan();
    assert!((n.captured_mass() - expected).abs() < 1e-14);
    assert_eq!(k.warnings().len(), 1);
    // truncated mass appears as D(t) → captured mass just after t = 0
    assert!((kernel_eval(&k, 1e-9).re - expected).abs() < 1e-8);
    assert_eq!(kernel_eval(&k, 0.0), c(1.0, 0.0));
}
