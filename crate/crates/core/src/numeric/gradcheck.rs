//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backend::{Backend, Eager};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A scalar function of a parameter list that can run on any backend.
pub trait Differentiable {
    fn eval<B: Backend>(&self, backend: &mut B, params: &[B::Value]) -> Result<B::Value>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor; `None` checks all of them.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// Lower bound on the relative-error denominator. Coordinates whose true
    /// gradient is below the round-off noise of the difference quotient
    /// (about `ε_mach·|f| / ε`) need a floor above that noise.
    pub denominator_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coords_per_tensor: None,
            seed: 0,
            denominator_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor, coordinate)` holding the largest error.
    pub worst: Option<(usize, usize)>,
    pub coordinates_checked: usize,
    pub passed: bool,
}

/// Value and tape gradients of `f` at `params`.
pub fn value_and_grad<F: Differentiable>(f: &F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f.eval(&mut tape, &vars)?;
    let value = tape.value(&out).item()?;
    let grads = tape.backward(out)?;
    Ok((value, vars.into_iter().map(|v| grads.get(v)).collect()))
}

/// Compares tape gradients of `f` against central differences.
pub fn check<F: Differentiable>(f: &F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (_, analytic) = value_and_grad(f, params)?;
    let eval = |p: &[Tensor]| -> Result<f64> {
        let mut eager = Eager;
        f.eval(&mut eager, p)?.item()
    };
    grad_check(eval, &analytic, params, opts)
}

/// Relative error per sampled coordinate:
/// `|a - n| / max(floor, |a| + |n|)` with `n = (f(p+ε) - f(p-ε)) / 2ε`.
pub fn grad_check(
    f: impl Fn(&[Tensor]) -> Result<f64>,
    analytic: &[Tensor],
    params: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::Contract(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    if analytic.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates_checked: 0,
        passed: true,
    };
    for (ti, p) in params.iter().enumerate() {
        if analytic[ti].shape() != p.shape() {
            return Err(Error::Shape {
                op: "grad_check",
                left: p.shape().to_vec(),
                right: analytic[ti].shape().to_vec(),
            });
        }
        let coords: Vec<usize> = match opts.max_coords_per_tensor {
            Some(k) if k < p.len() => {
                let mut c = sample(&mut rng, p.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.len()).collect(),
        };
        for j in coords {
            let orig = p.data()[j];
            work[ti].data_mut()[j] = orig + opts.epsilon;
            let plus = f(&work)?;
            work[ti].data_mut()[j] = orig - opts.epsilon;
            let minus = f(&work)?;
            work[ti].data_mut()[j] = orig;

            let a = analytic[ti].data()[j];
            if !plus.is_finite() || !minus.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value at tensor {ti} coordinate {j}: f+={plus}, f-={minus}, grad={a}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(opts.denominator_floor);
            report.coordinates_checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((ti, j));
            }
        }
    }
    report.passed = report.max_relative_error < opts.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    struct Quadratic;
    impl Differentiable for Quadratic {
        fn eval<B: Backend>(&self, b: &mut B, p: &[B::Value]) -> Result<B::Value> {
            let sq = b.mul(&p[0], &p[0])?;
            let s = b.sum(&sq);
            Ok(b.scale(&s, 0.5))
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let p = vec![Tensor::vector(vec![0.3, -1.2, 0.8, 0.5])];
        let r = check(&Quadratic, &p, &GradCheckOptions::default()).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert!(r.passed);
    }

    /// Exercises every primitive in one scalar function.
    struct AllPrimitives;
    impl Differentiable for AllPrimitives {
        fn eval<B: Backend>(&self, b: &mut B, p: &[B::Value]) -> Result<B::Value> {
            let (w, x, bias, k, kb, table) = (&p[0], &p[1], &p[2], &p[3], &p[4], &p[5]);
            let y = b.linear(w, bias, x)?; // [3, 4]
            let s = b.sigmoid(&y);
            let t = b.tanh(&y);
            let shifted = b.add(&y, &t)?;
            let r = b.relu(&shifted);
            let m = b.mul(&s, &r)?;
            let d = b.sub(&m, &t)?;
            let cat = b.concat(&[d.clone(), s])?; // [3, 8]
            let conv = b.conv1d(&cat, k, kb, 2)?; // [3, 4]
            let g = b.gather(table, &[1, 0, 2, 1, 2, 2, 0, 1, 1, 1, 2, 0], &[3, 4])?;
            let gc = b.mul(&g, &conv)?;
            let scaled = b.scale(&gc, 0.7);
            let a = b.mean(&scaled)?;
            let c = b.sum(&d);
            b.add(&a, &c)
        }
    }

    fn all_primitive_params(seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        vec![
            random(&mut rng, &[4, 5]),
            random(&mut rng, &[3, 5]),
            random(&mut rng, &[4]),
            random(&mut rng, &[2]),
            random(&mut rng, &[1]),
            random(&mut rng, &[3]),
        ]
    }

    #[test]
    fn every_primitive_passes_on_ten_seeds() {
        for seed in 0..10 {
            let p = all_primitive_params(seed);
            let r = check(&AllPrimitives, &p, &GradCheckOptions::default()).unwrap();
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn corrupted_sigmoid_adjoint_is_caught() {
        let p = all_primitive_params(3);
        let mut tape = Tape::new();
        tape.corrupt_sigmoid = true;
        let vars: Vec<_> = p.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = AllPrimitives.eval(&mut tape, &vars).unwrap();
        let grads = tape.backward(out).unwrap();
        let analytic: Vec<Tensor> = vars.iter().map(|v| grads.get(*v)).collect();
        let eval = |q: &[Tensor]| AllPrimitives.eval(&mut Eager, q)?.item();
        let r = grad_check(eval, &analytic, &p, &GradCheckOptions::default()).unwrap();
        assert!(!r.passed, "{r:?}");
    }

    #[test]
    fn taped_and_eager_forward_agree_bitwise() {
        let p = all_primitive_params(11);
        let mut tape = Tape::new();
        let vars: Vec<_> = p.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = AllPrimitives.eval(&mut tape, &vars).unwrap();
        let eager = AllPrimitives.eval(&mut Eager, &p).unwrap();
        assert_eq!(tape.value(&out).data()[0].to_bits(), eager.data()[0].to_bits());
    }

    #[test]
    fn rejects_non_finite_values() {
        let eval = |_: &[Tensor]| Ok(f64::INFINITY);
        let p = vec![Tensor::vector(vec![1.0])];
        let err = grad_check(eval, &p, &p, &GradCheckOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matvec_adjoint_matches_differences(seed in any::<u64>()) {
            struct MatVec;
            impl Differentiable for MatVec {
                fn eval<B: Backend>(&self, b: &mut B, p: &[B::Value]) -> Result<B::Value> {
                    let y = b.matvec(&p[0], &p[1])?;
                    let t = b.tanh(&y);
                    Ok(b.sum(&t))
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = vec![random(&mut rng, &[3, 4]), random(&mut rng, &[2, 4])];
            let r = check(&MatVec, &p, &GradCheckOptions::default()).unwrap();
            prop_assert!(r.passed, "{:?}", r);
        }

        #[test]
        fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, c in -3.0f64..3.0) {
            struct Combo(f64, f64);
            impl Differentiable for Combo {
                fn eval<B: Backend>(&self, b: &mut B, p: &[B::Value]) -> Result<B::Value> {
                    let f = if self.0 != 0.0 { Some(AllPrimitives.eval(b, p)?) } else { None };
                    let g = if self.1 != 0.0 { Some(Quadratic.eval(b, &p[..1])?) } else { None };
                    match (f, g) {
                        (Some(f), Some(g)) => {
                            let fa = b.scale(&f, self.0);
                            let gb = b.scale(&g, self.1);
                            b.add(&fa, &gb)
                        }
                        (Some(f), None) => Ok(b.scale(&f, self.0)),
                        (None, Some(g)) => Ok(b.scale(&g, self.1)),
                        (None, None) => unreachable!(),
                    }
                }
            }
            let p = all_primitive_params(seed);
            let (_, combined) = value_and_grad(&Combo(a, c), &p).unwrap();
            let (_, gf) = value_and_grad(&Combo(1.0, 0.0), &p).unwrap();
            let (_, gg) = value_and_grad(&Combo(0.0, 1.0), &p).unwrap();
            for i in 0..p.len() {
                for j in 0..p[i].len() {
                    let expected = a * gf[i].data()[j] + c * gg[i].data()[j];
                    prop_assert!((combined[i].data()[j] - expected).abs() < 1e-10);
                }
            }
        }
    }
}
