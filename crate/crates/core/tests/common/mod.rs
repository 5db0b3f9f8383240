#![allow(dead_code)]

use qisim_core::dynamics::{KernelAssignment, ReducedModel};
use qisim_core::environment::{AnalyticFamily, Atom, DeltaComb, Distribution, TabulatedDensity};
use qisim_core::kernels::{kernel_from_density, FluctuatingAtom, KernelSpec, MixturePart, QuadratureParams};
use qisim_core::oracle::{build_composite, sample_bath_from_density, CompositeState, CompositeSystem};
use qisim_core::spectrum::{Observable, ReducedInitialState, SystemSpectrum};
use qisim_core::{CMatrix, Complex64, RMatrix};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| random_complex(rng));
    (&g + g.adjoint()).scale(0.5)
}

/// G G† / Tr, plus `floor` · 1 before normalizing.
pub fn random_density_with_floor(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| random_complex(rng));
    let mut rho = &g * g.adjoint() + CMatrix::identity(n, n).scale(floor);
    rho = (&rho + rho.adjoint()).scale(0.5);
    let tr: Complex64 = rho.trace();
    rho.unscale(tr.re)
}

pub fn random_density(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    random_density_with_floor(rng, n, 0.0)
}

/// Density of rank `rank` (G is n × rank).
pub fn random_low_rank_density(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMatrix {
    let g = CMatrix::from_fn(n, rank, |_, _| random_complex(rng));
    let rho = &g * g.adjoint();
    let tr = rho.trace().re;
    rho.unscale(tr)
}

pub fn random_spectrum(rng: &mut ChaCha8Rng, n: usize) -> SystemSpectrum {
    SystemSpectrum::new((0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
}

pub fn random_observable(rng: &mut ChaCha8Rng, n: usize) -> Observable {
    Observable::new(random_hermitian(rng, n)).unwrap()
}

pub fn random_bath_eigenvalues(rng: &mut ChaCha8Rng, n: usize, k: usize) -> RMatrix {
    RMatrix::from_fn(n, k, |_, _| rng.gen_range(-2.0..2.0))
}

pub fn random_composite(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (SystemSpectrum, CompositeSystem, CompositeState) {
    let spectrum = random_spectrum(rng, n);
    let sys = build_composite(&spectrum, random_bath_eigenvalues(rng, n, k)).unwrap();
    let state = CompositeState::new(random_density(rng, n * k)).unwrap();
    (spectrum, sys, state)
}

fn normalized_weights(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    let head: f64 = w[..count - 1].iter().sum();
    w[count - 1] = 1.0 - head;
    w
}

pub fn random_family(rng: &mut ChaCha8Rng) -> AnalyticFamily {
    let scale = rng.gen_range(0.2..2.0);
    match rng.gen_range(0..4) {
        0 => AnalyticFamily::Gaussian { sigma: scale },
        1 => AnalyticFamily::Lorentz { gamma: scale },
        2 => AnalyticFamily::Poisson { gamma: scale },
        _ => AnalyticFamily::Uniform { delta: scale },
    }
}

/// Any kernel variant, with nesting up to `depth` mixture levels.
pub fn random_kernel(rng: &mut ChaCha8Rng, depth: usize) -> KernelSpec {
    let choices = if depth == 0 { 8 } else { 9 };
    match rng.gen_range(0..choices) {
        0 => KernelSpec::gaussian(rng.gen_range(0.1..3.0)).unwrap(),
        1 => KernelSpec::lorentz(rng.gen_range(0.1..3.0)).unwrap(),
        2 => KernelSpec::poisson(rng.gen_range(0.1..3.0)).unwrap(),
        3 => KernelSpec::uniform(rng.gen_range(0.1..3.0)).unwrap(),
        4 => {
            let count = rng.gen_range(1..4);
            let w = normalized_weights(rng, count);
            KernelSpec::fluctuating(
                w.into_iter()
                    .map(|coefficient| FluctuatingAtom {
                        coefficient,
                        frequency: rng.gen_range(-3.0..3.0),
                    })
                    .collect(),
            )
            .unwrap()
        }
        5 => {
            let count = rng.gen_range(1..12);
            let w = normalized_weights(rng, count);
            let atoms = w
                .into_iter()
                .map(|x| Atom {
                    epsilon: rng.gen_range(-4.0..4.0),
                    weight: c(x, 0.0),
                })
                .collect();
            KernelSpec::from_comb(DeltaComb::new(atoms)).unwrap()
        }
        6 => {
            let fam = AnalyticFamily::Gaussian { sigma: rng.gen_range(0.3..2.0) };
            let half = 10.0 * rng.gen_range(0.3..2.0);
            let table = TabulatedDensity::from_family(fam, -half, half, 257).unwrap();
            kernel_from_density(&Distribution::Tabulated(table), &QuadratureParams::new(-half, half, 256).unwrap())
                .unwrap()
        }
        7 => {
            // asymmetric window over an analytic family
            let fam = random_family(rng);
            let lo = -rng.gen_range(1.0..8.0);
            let hi = rng.gen_range(1.0..8.0);
            kernel_from_density(&Distribution::Family(fam), &QuadratureParams::new(lo, hi, 512).unwrap()).unwrap()
        }
        _ => {
            let count = rng.gen_range(2..4);
            let w = normalized_weights(rng, count);
            KernelSpec::mixture(
                w.into_iter()
                    .map(|weight| MixturePart {
                        weight,
                        kernel: random_kernel(rng, depth - 1),
                    })
                    .collect(),
            )
            .unwrap()
        }
    }
}

/// Random model with one random kernel per pair.
pub fn random_reduced_model(rng: &mut ChaCha8Rng, n: usize) -> ReducedModel {
    let spectrum = random_spectrum(rng, n);
    let rho = ReducedInitialState::new(random_density(rng, n)).unwrap();
    let mut assignment = KernelAssignment::default();
    for m in 0..n {
        for k in m + 1..n {
            assignment = assignment.with_pair(m, k, random_kernel(rng, 1));
        }
    }
    ReducedModel::new(spectrum, rho, assignment).unwrap()
}

pub fn sigma_x() -> Observable {
    Observable::new(CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])).unwrap()
}

pub fn plus_state() -> CMatrix {
    CMatrix::from_element(2, 2, c(0.5, 0.0))
}

/// Two levels with ε_0k = 0 and ε_1k = s_k, the stratified Gaussian
/// samples, in the product state |+⟩⟨+| ⊗ 1/K.
pub fn stratified_gaussian_model(k: usize) -> (CompositeSystem, CompositeState, ReducedModel) {
    let spectrum = SystemSpectrum::new(vec![0.0, 1.0]).unwrap();
    let s = sample_bath_from_density(&Distribution::Family(AnalyticFamily::Gaussian { sigma: 1.0 }), k).unwrap();
    let eps = RMatrix::from_fn(2, k, |n, q| if n == 0 { 0.0 } else { s[q] });
    let sys = build_composite(&spectrum, eps).unwrap();
    let state = CompositeState::product(&plus_state(), &CMatrix::identity(k, k).unscale(k as f64)).unwrap();
    let model = ReducedModel::from_bath(spectrum, &state.to_discrete_bath(&sys).unwrap()).unwrap();
    (sys, state, model)
}
