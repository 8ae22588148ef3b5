use super::{Real, Tensor};
use crate::error::{Error, Result};

/// `log(Σ exp(x_i))` with max-shift. Errors on an empty list.
pub fn logsumexp<F: Real>(xs: &[F]) -> Result<F> {
    if xs.is_empty() {
        return Err(Error::Domain("logsumexp of an empty list".into()));
    }
    Ok(logsumexp_slice(xs))
}

/// Infallible variant; returns `-inf` for an empty or all `-inf` slice.
#[inline]
pub fn logsumexp_slice<F: Real>(xs: &[F]) -> F {
    let m = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if m == F::neg_infinity() {
        return m;
    }
    if m == F::infinity() {
        return m;
    }
    let s: F = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Two-term log-add.
#[inline]
pub fn log_add<F: Real>(a: F, b: F) -> F {
    if a == F::neg_infinity() {
        return b;
    }
    if b == F::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Row-wise log-softmax over the last dimension of a plain tensor.
pub fn log_softmax_rows<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    if !x.is_finite() {
        return Err(Error::Numeric("log_softmax of non-finite input".into()));
    }
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c) {
        log_softmax_in_place(row);
    }
    Ok(out)
}

#[inline]
pub(crate) fn log_softmax_in_place<F: Real>(row: &mut [F]) {
    let lse = logsumexp_slice(row);
    row.iter_mut().for_each(|v| *v -= lse);
}

#[inline]
pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v = *v / s);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_examples() {
        let q = 0.25f64.ln();
        assert!((logsumexp(&[q, q]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(logsumexp(&[3.5f64]).unwrap(), 3.5);
        assert!(logsumexp::<f64>(&[]).is_err());
    }

    #[test]
    fn logsumexp_near_underflow() {
        // exact value: -745 + ln 100
        let xs = vec![-745.0f64; 100];
        let got = logsumexp(&xs).unwrap();
        assert!((got - (-745.0 + 100f64.ln())).abs() < 1e-12);
        assert!(got >= -745.0);
    }

    #[test]
    fn log_softmax_examples() {
        let t = Tensor::new(vec![1, 2], vec![0.0f64, 0.0]).unwrap();
        let y = log_softmax_rows(&t).unwrap();
        for &v in y.data() {
            assert!((v + 2f64.ln()).abs() < 1e-15);
        }
        let c = 17.25;
        let t = Tensor::new(vec![3], vec![c, c, c]).unwrap();
        let y = log_softmax_rows(&t).unwrap();
        for &v in y.data() {
            assert!((v + 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_large_spread_matches_f64_oracle() {
        let t = Tensor::new(vec![2], vec![1000.0f32, 0.0]).unwrap();
        let y = log_softmax_rows(&t).unwrap();
        // oracle in f64: lse = 1000 + ln(1 + e^-1000)
        let lse = 1000.0f64 + (-1000.0f64).exp().ln_1p();
        assert!((y.data()[0] as f64 - (1000.0 - lse)).abs() < 1e-6);
        assert!((y.data()[1] as f64 - (0.0 - lse)).abs() < 1e-3);
        assert!(y.is_finite());
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        let t = Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap();
        assert!(log_softmax_rows(&t).is_err());
    }

    #[test]
    fn log_add_matches_logsumexp() {
        let a = -3.2f64;
        let b = -1.1;
        assert!((log_add(a, b) - logsumexp(&[a, b]).unwrap()).abs() < 1e-15);
        assert_eq!(log_add(f64::NEG_INFINITY, b), b);
    }
}
