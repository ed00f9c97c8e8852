//! Shared helpers: finite differences, independent numerical oracles and
//! small cohorts.
#![allow(dead_code)]

use gate_core::autodiff::{Tape, Var};
use gate_core::signal::{BoldRecording, Phenotype, SubjectMeta};
use gate_core::Result;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient
/// is ~0 are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Max relative error between reverse-mode gradients and central
/// differences, over every entry of every input.
pub fn gradcheck<F>(inputs: &[Array2<f64>], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone(), false)).collect();
        let out = f(&mut tape, &vars).expect("forward");
        tape.item(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&mut tape, &vars).expect("forward");
    tape.backward(out).expect("backward");
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = tape.grad(*v);
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let x0 = inputs[k][[r, c]];
            work[k][[r, c]] = x0 + FD_STEP;
            let fp = eval(&work);
            work[k][[r, c]] = x0 - FD_STEP;
            let fm = eval(&work);
            work[k][[r, c]] = x0;
            let num = (fp - fm) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g[[r, c]], num));
        }
    }
    worst
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix: eigenvalues
/// ascending, matching unit eigenvectors as columns.
pub fn jacobi_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

pub fn jacobi_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    jacobi_eigen(m).0
}

/// Singular values of `z`, descending, as ||Z v|| over the Jacobi
/// eigenvectors of Z^T Z.
pub fn jacobi_singular_values(z: &Array2<f64>) -> Vec<f64> {
    let (_, vecs) = jacobi_eigen(&z.t().dot(z));
    let mut sv: Vec<f64> = vecs.columns().into_iter().map(|v| {
        let zv = z.dot(&v);
        zv.dot(&zv).sqrt()
    }).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-sided tail mass of Student's t with `df` degrees of freedom beyond
/// |t|, by quadrature of the unnormalized density after x = tan(theta).
pub fn t_two_sided_quadrature(t: f64, df: f64) -> f64 {
    let dens = |theta: f64| {
        let c = theta.cos();
        if c <= 0.0 {
            return if df == 1.0 { 1.0 } else { 0.0 };
        }
        let x = theta.tan();
        (1.0 + x * x / df).powf(-(df + 1.0) / 2.0) / (c * c)
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let total = integrate(dens, 0.0, half_pi, 1e-13);
    let tail = integrate(dens, t.abs().atan(), half_pi, 1e-13);
    (tail / total).min(1.0)
}

/// O(P * N) pairwise AUC with ties worth 1/2.
pub fn brute_force_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// Small labeled cohort of white-noise recordings with random phenotypes.
pub fn noise_cohort(n: usize, rois: usize, t: usize, seed: u64) -> Vec<BoldRecording> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let signal = random_matrix(rois, t, &mut r);
            let meta = SubjectMeta::new(Some(i % 2))
                .unwrap()
                .with_phenotype("sex", Phenotype::Categorical(if r.random_bool(0.5) { "F" } else { "M" }.into()))
                .with_phenotype("age", Phenotype::Real(r.random_range(18.0..80.0)))
                .with_phenotype("site", Phenotype::Categorical(format!("s{}", r.random_range(0..3))));
            BoldRecording::new(format!("n{i}"), signal, meta).unwrap()
        })
        .collect()
}
