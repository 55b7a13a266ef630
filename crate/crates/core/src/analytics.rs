//! Closed-form duplication, collection, delay and spreading-time models.
//!
//! All functions are generic over [`Scalar`]. Exact finite sums (harmonic
//! numbers, cumulative collection counts) are evaluated directly; the
//! `ln n`-style asymptotic forms are reported next to them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meeting::MeetingRate;
use crate::protocol::decode_threshold;
use crate::scalar::{harmonic, Scalar};

fn require_nodes(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::config(format!("need at least 2 nodes, got {n}")))
    } else {
        Ok(())
    }
}

/// Probability that a naive-protocol reception from a relay is new:
/// `κ = (√n − 1)/(n − 1)`.
pub fn naive_kappa<T: Scalar>(n: usize) -> Result<T> {
    require_nodes(n)?;
    let n = T::of_usize(n);
    Ok((n.sqrt() - T::one()) / (n - T::one()))
}

/// `P(Δt_j^k < Δt_s^1)`: the `k`-th relay–destination meeting precedes the
/// relay's next source meeting. Erlang(k, λ) against an independent Exp(λ)
/// gives `(λ/(λ+λ))^k = 2^{-k}`.
pub fn duplication_tail<T: Scalar>(k: u32) -> T {
    T::of_f64(0.5).powi(k as i32)
}

/// `P(received exactly k times | received at least once) = 2^{-k}`.
pub fn duplication_pmf<T: Scalar>(k: u32) -> Result<T> {
    if k == 0 {
        return Err(Error::config("duplication count k starts at 1"));
    }
    Ok((duplication_tail::<T>(k) - duplication_tail::<T>(k + 1)) / duplication_tail::<T>(1))
}

/// Expected redundant copies per delivered packet, `Σ_{k≥2} P(Δt_j^k < Δt_s^1) / P(Δt_j^1 < Δt_s^1) = 1`.
pub fn expected_redundant_copies<T: Scalar>() -> T {
    // The tail sum Σ_{k≥2} 2^{-k} is 1/2 in closed form.
    T::of_f64(0.5) / duplication_tail::<T>(1)
}

fn check_state(n: usize, k: usize) -> Result<()> {
    require_nodes(n)?;
    if k == 0 || k >= n {
        return Err(Error::config(format!("state k must lie in [1, {}], got {k}", n - 1)));
    }
    Ok(())
}

/// Per-state success probability `p_k = (2n − 2k)/(2n − k)` of the geometric
/// collection law.
pub fn collection_success_prob<T: Scalar>(n: usize, k: usize) -> Result<T> {
    check_state(n, k)?;
    let (n, k) = (T::of_usize(n), T::of_usize(k));
    Ok((T::two() * n - T::two() * k) / (T::two() * n - k))
}

/// `P(Δl_k = i) = (1 − p_k)^i p_k`: packets a destination collects while the
/// network sits in relay-initialization state `k`.
pub fn delta_l_pmf<T: Scalar>(n: usize, k: usize, i: u32) -> Result<T> {
    let p = collection_success_prob::<T>(n, k)?;
    Ok((T::one() - p).powi(i as i32) * p)
}

/// `E[Δl_k] = k / (2(n − k))`.
pub fn expected_delta_l<T: Scalar>(n: usize, k: usize) -> Result<T> {
    check_state(n, k)?;
    let (nf, kf) = (T::of_usize(n), T::of_usize(k));
    Ok(kf / (T::two() * (nf - kf)))
}

/// `E[l(k)] = Σ_{j=1}^{k} j/(2(n − j))`, for `k ≤ n − 1`.
pub fn expected_collected<T: Scalar>(n: usize, k: usize) -> Result<T> {
    require_nodes(n)?;
    if k >= n {
        return Err(Error::config(format!("state k must be below n = {n}")));
    }
    let nf = T::of_usize(n);
    Ok((1..=k).fold(T::zero(), |acc, j| {
        let jf = T::of_usize(j);
        acc + jf / (T::two() * (nf - jf))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Approximated<T> {
    pub exact: T,
    pub asymptotic: T,
}

/// Expected distinct packets per node at the end of relay initialization:
/// exact `Σ_{k=1}^{n−1} k/(2(n−k))`, asymptotically `n ln n / 2`.
pub fn l0<T: Scalar>(n: usize) -> Result<Approximated<T>> {
    let exact = expected_collected(n, n - 1)?;
    let nf = T::of_usize(n);
    Ok(Approximated {
        exact,
        asymptotic: nf * nf.ln() / T::two(),
    })
}

/// Smallest `k ≤ n − 1` with `E[l(k)] ≥ l`, or `n` when relay initialization
/// ends before `l` packets are expected.
pub fn k_star<T: Scalar>(n: usize, l: T) -> usize {
    let nf = T::of_usize(n);
    let mut cumulative = T::zero();
    for k in 1..n {
        let kf = T::of_usize(k);
        cumulative = cumulative + kf / (T::two() * (nf - kf));
        if cumulative >= l {
            return k;
        }
    }
    n
}

/// `k* ≈ 2√(nl)`, valid while `k* = o(n)`.
pub fn k_star_closed_form<T: Scalar>(n: usize, l: T) -> T {
    T::two() * (T::of_usize(n) * l).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Destinations decode during relay initialization (`k* < n`).
    SmallL,
    /// Collection continues after every node became a relay (`k* = n`).
    LargeL,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate<T> {
    pub regime: Regime,
    pub k_star: usize,
    /// `(2l + k*)/(nλ)` in the small-l regime,
    /// `H_{n−1}/λ + 2(l′ − l₀ − 1)/(nλ)` in the large-l regime.
    pub value: T,
    /// Same with `ln n` in place of `H_{n−1}` (large-l) or equal to `value` (small-l).
    pub asymptotic: T,
    /// `(2l + 2√(nl))/(nλ)`, reported when `l < n`.
    pub closed_form: Option<T>,
}

/// Expected source-to-destination decode delay `E[D(l)]`.
pub fn expected_delay<T: Scalar>(n: usize, lambda: MeetingRate<T>, l: u64, epsilon: T) -> Result<DelayEstimate<T>> {
    require_nodes(n)?;
    if l == 0 {
        return Err(Error::config("need at least one source packet"));
    }
    let (nf, lam, lf) = (T::of_usize(n), lambda.get(), T::of_f64(l as f64));
    let ks = k_star(n, lf);
    let closed_form = (l < n as u64).then(|| (T::two() * lf + k_star_closed_form(n, lf)) / (nf * lam));
    if ks < n {
        let value = (T::two() * lf + T::of_usize(ks)) / (nf * lam);
        return Ok(DelayEstimate {
            regime: Regime::SmallL,
            k_star: ks,
            value,
            asymptotic: value,
            closed_form,
        });
    }
    let residual = residual_mean(n, lam, l, epsilon)?;
    Ok(DelayEstimate {
        regime: Regime::LargeL,
        k_star: n,
        value: harmonic::<T>(n - 1) / lam + residual,
        asymptotic: nf.ln() / lam + residual,
        closed_form,
    })
}

fn l_prime<T: Scalar>(l: u64, epsilon: T) -> Result<T> {
    let eps = epsilon
        .to_f64()
        .filter(|e| *e >= 0.0 && e.is_finite())
        .ok_or_else(|| Error::config("overhead must be non-negative"))?;
    Ok(T::of_f64(decode_threshold(l, eps) as f64))
}

/// Residual Erlang shape `l′ − l₀ − 1` clamped at zero.
fn residual_shape<T: Scalar>(n: usize, l: u64, epsilon: T) -> Result<T> {
    let lp = l_prime(l, epsilon)?;
    Ok((lp - l0::<T>(n)?.exact - T::one()).max(T::zero()))
}

fn residual_mean<T: Scalar>(n: usize, lam: T, l: u64, epsilon: T) -> Result<T> {
    Ok(T::two() * residual_shape(n, l, epsilon)? / (T::of_usize(n) * lam))
}

/// Time for the source to meet every other node: exact `H_{n−1}/λ`,
/// asymptotically `ln n/λ`.
pub fn expected_relay_init_time<T: Scalar>(n: usize, lambda: MeetingRate<T>) -> Result<Approximated<T>> {
    require_nodes(n)?;
    let lam = lambda.get();
    Ok(Approximated {
        exact: harmonic::<T>(n - 1) / lam,
        asymptotic: T::of_usize(n).ln() / lam,
    })
}

/// First-order growth `√(2 ln n)` of the maximum of `n` standard normals.
pub fn max_gaussian_expectation<T: Scalar>(n: usize) -> Result<T> {
    require_nodes(n)?;
    Ok((T::two() * T::of_usize(n).ln()).sqrt())
}

/// Same growth law for a real-valued count (e.g. `n = e²`).
pub fn max_gaussian_growth<T: Scalar>(n: T) -> T {
    (T::two() * n.ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualMoments<T> {
    pub shape: T,
    pub mean: T,
    pub variance: T,
    /// Set when `l′ ≤ l₀ + 1`: no residual collection, moments are zero.
    pub small_l: bool,
}

/// Moments of `T_residual ~ Erlang(l′ − l₀ − 1, nλ/2)`.
pub fn erlang_residual_moments<T: Scalar>(l_prime: T, l0: T, n: usize, lambda: MeetingRate<T>) -> Result<ResidualMoments<T>> {
    require_nodes(n)?;
    let shape = l_prime - l0 - T::one();
    if shape <= T::zero() {
        return Ok(ResidualMoments {
            shape: T::zero(),
            mean: T::zero(),
            variance: T::zero(),
            small_l: true,
        });
    }
    let rate = T::of_usize(n) * lambda.get() / T::two();
    Ok(ResidualMoments {
        shape,
        mean: shape / rate,
        variance: shape / (rate * rate),
        small_l: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadingEstimate<T> {
    pub regime: Regime,
    pub lower: T,
    /// `H_{n−1}/λ` in the small-l regime.
    pub upper: Option<T>,
    /// `H_{n−1}/λ + (2R + 2√(2R ln(n−1)))/(nλ)` with `R = l′ − l₀ − 1`, large-l only.
    pub point: Option<T>,
    /// `(2l + 2√(2(l − l₀) ln n))/(nλ)` with `l₀ = n ln n/2`, large-l only.
    pub simplified: Option<T>,
}

/// Expected time until every destination decodes, `E[T(l)]`.
pub fn expected_spreading_time<T: Scalar>(n: usize, lambda: MeetingRate<T>, l: u64, epsilon: T) -> Result<SpreadingEstimate<T>> {
    let delay = expected_delay(n, lambda, l, epsilon)?;
    let lam = lambda.get();
    let init = expected_relay_init_time(n, lambda)?.exact;
    match delay.regime {
        Regime::SmallL => Ok(SpreadingEstimate {
            regime: Regime::SmallL,
            lower: delay.value,
            upper: Some(init),
            point: None,
            simplified: None,
        }),
        Regime::LargeL => {
            let nf = T::of_usize(n);
            let two = T::two();
            let r = residual_shape(n, l, epsilon)?;
            let spread = (two * r + two * (two * r * (nf - T::one()).ln()).sqrt()) / (nf * lam);
            let lf = T::of_f64(l as f64);
            let excess = (lf - l0::<T>(n)?.asymptotic).max(T::zero());
            let simplified = (two * lf + two * (two * excess * nf.ln()).sqrt()) / (nf * lam);
            Ok(SpreadingEstimate {
                regime: Regime::LargeL,
                lower: delay.value,
                upper: None,
                point: Some(init + spread),
                simplified: Some(simplified),
            })
        }
    }
}

/// Every closed-form prediction for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction<T> {
    pub n: usize,
    pub lambda: MeetingRate<T>,
    pub l: u64,
    pub epsilon: T,
    pub l_prime: u64,
    pub regime: Regime,
    pub l0: T,
    pub l0_asymptotic: T,
    pub k_star: usize,
    pub k_star_closed_form: T,
    pub expected_delay: T,
    pub expected_delay_asymptotic: T,
    pub expected_delay_closed_form: Option<T>,
    pub relay_init_time: T,
    pub relay_init_time_asymptotic: T,
    pub spreading_time_lower: T,
    pub spreading_time_upper: Option<T>,
    pub spreading_time_point: Option<T>,
    pub spreading_time_simplified: Option<T>,
    pub naive_kappa: T,
    pub duplication_mean: T,
}

impl<T: Scalar> TheoryPrediction<T> {
    /// Best single-number spreading-time prediction: the point estimate in
    /// the large-l regime, otherwise none.
    pub fn spreading_time(&self) -> Option<T> {
        self.spreading_time_point
    }

    /// A time scale long enough to cover a whole trial.
    pub fn spreading_time_scale(&self) -> T {
        self.spreading_time_point
            .or(self.spreading_time_upper)
            .unwrap_or(self.spreading_time_lower)
    }
}

pub fn predict<T: Scalar>(n: usize, lambda: MeetingRate<T>, l: u64, epsilon: T) -> Result<TheoryPrediction<T>> {
    let delay = expected_delay(n, lambda, l, epsilon)?;
    let spread = expected_spreading_time(n, lambda, l, epsilon)?;
    let init = expected_relay_init_time(n, lambda)?;
    let l0 = l0::<T>(n)?;
    let lf = T::of_f64(l as f64);
    Ok(TheoryPrediction {
        n,
        lambda,
        l,
        epsilon,
        l_prime: l_prime(l, epsilon)?.to_u64().unwrap_or(u64::MAX),
        regime: delay.regime,
        l0: l0.exact,
        l0_asymptotic: l0.asymptotic,
        k_star: delay.k_star,
        k_star_closed_form: k_star_closed_form(n, lf),
        expected_delay: delay.value,
        expected_delay_asymptotic: delay.asymptotic,
        expected_delay_closed_form: delay.closed_form,
        relay_init_time: init.exact,
        relay_init_time_asymptotic: init.asymptotic,
        spreading_time_lower: spread.lower,
        spreading_time_upper: spread.upper,
        spreading_time_point: spread.point,
        spreading_time_simplified: spread.simplified,
        naive_kappa: naive_kappa(n)?,
        duplication_mean: expected_redundant_copies(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rate(l: f64) -> MeetingRate {
        MeetingRate::new(l).unwrap()
    }

    #[test]
    fn kappa_values() {
        assert_abs_diff_eq!(naive_kappa::<f64>(4).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(naive_kappa::<f64>(100).unwrap(), 9.0 / 99.0, epsilon = 1e-15);
        let big = 1_000_000;
        let k = naive_kappa::<f64>(big).unwrap();
        assert_abs_diff_eq!(big as f64 * k * k, 1.0, epsilon = 3e-3);
        assert!(naive_kappa::<f64>(1).is_err());
    }

    #[test]
    fn duplication_law() {
        assert_eq!(duplication_pmf::<f64>(1).unwrap(), 0.5);
        assert_eq!(duplication_pmf::<f64>(3).unwrap(), 0.125);
        assert!(duplication_pmf::<f64>(0).is_err());
        let total: f64 = (1..60).map(|k| duplication_pmf::<f64>(k).unwrap()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
        let redundant: f64 = (1..60).map(|k| (k - 1) as f64 * duplication_pmf::<f64>(k).unwrap()).sum();
        assert_abs_diff_eq!(redundant, 1.0, epsilon = 1e-14);
        assert_eq!(expected_redundant_copies::<f64>(), 1.0);
        assert_eq!(duplication_pmf::<f32>(2).unwrap(), 0.25f32);
    }

    #[test]
    fn geometric_collection_law() {
        assert_abs_diff_eq!(collection_success_prob::<f64>(10, 5).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(delta_l_pmf::<f64>(10, 5, 0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(delta_l_pmf::<f64>(10, 5, 1).unwrap(), 2.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(expected_delta_l::<f64>(10, 5).unwrap(), 0.5, epsilon = 1e-15);
        assert!(delta_l_pmf::<f64>(10, 10, 0).is_err());
        assert!(delta_l_pmf::<f64>(10, 0, 0).is_err());
    }

    #[test]
    fn geometric_mean_matches_pmf_moment() {
        for (n, k) in [(10, 5), (50, 10), (100, 60), (100, 99)] {
            let mean: f64 = (0..20_000).map(|i| i as f64 * delta_l_pmf::<f64>(n, k, i).unwrap()).sum();
            assert_abs_diff_eq!(mean, expected_delta_l::<f64>(n, k).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn l0_values() {
        let l = l0::<f64>(10).unwrap();
        assert_abs_diff_eq!(l.exact, 9.644_841_269_841_27, epsilon = 1e-12);
        assert_abs_diff_eq!(l.asymptotic, 5.0 * 10f64.ln(), epsilon = 1e-12);
        // Harmonic identity (n/2)H_{n−1} − (n−1)/2.
        for n in [2usize, 7, 100, 513] {
            let h = harmonic::<f64>(n - 1);
            let closed = n as f64 / 2.0 * h - (n as f64 - 1.0) / 2.0;
            assert_abs_diff_eq!(l0::<f64>(n).unwrap().exact, closed, epsilon = 1e-9 * closed.max(1.0));
        }
        let big = l0::<f64>(10_000).unwrap();
        assert!((big.exact / big.asymptotic - 1.0).abs() < 0.05);
    }

    #[test]
    fn k_star_values() {
        assert_eq!(k_star(10, 2.0f64), 7);
        assert_eq!(k_star(10, 20.0f64), 10);
        assert_eq!(k_star(100, 10.0f64), 51);
        assert_eq!(k_star(10, 1.0 / 18.0f64), 1);
        assert_eq!(k_star(10, 0.01f64), 1);
    }

    #[test]
    fn k_star_closed_form_values() {
        assert_abs_diff_eq!(k_star_closed_form(100, 1.0f64), 20.0);
        assert_abs_diff_eq!(k_star_closed_form(10, 2.0f64), 8.944_271_909_999_16, epsilon = 1e-12);
        assert_abs_diff_eq!(k_star_closed_form(37, 12.0f64), 2.0 * k_star_closed_form(37, 3.0f64), epsilon = 1e-12);
    }

    #[test]
    fn delay_small_l() {
        let d = expected_delay(10, rate(1.0), 2, 0.0).unwrap();
        assert_eq!(d.regime, Regime::SmallL);
        assert_eq!(d.k_star, 7);
        assert_abs_diff_eq!(d.value, 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(d.closed_form.unwrap(), (4.0 + 2.0 * 20f64.sqrt()) / 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.closed_form.unwrap(), 1.294, epsilon = 1e-3);
    }

    #[test]
    fn delay_large_l_approaches_linear() {
        let n = 50;
        let ratios: Vec<f64> = [1_000u64, 10_000, 100_000, 1_000_000]
            .iter()
            .map(|&l| {
                let d = expected_delay(n, rate(1.0), l, 0.0).unwrap();
                assert_eq!(d.regime, Regime::LargeL);
                d.value * n as f64 / (2.0 * l as f64)
            })
            .collect();
        assert!(ratios.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs()));
        assert!((ratios[3] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn delay_continuous_across_regime_boundary() {
        for n in [10usize, 50, 100] {
            let l0 = l0::<f64>(n).unwrap().exact;
            let below = expected_delay(n, rate(1.0), l0.floor() as u64, 0.0).unwrap();
            let above = expected_delay(n, rate(1.0), l0.ceil() as u64, 0.0).unwrap();
            assert_eq!(below.regime, Regime::SmallL);
            assert_eq!(above.regime, Regime::LargeL);
            assert!((above.value - below.value).abs() <= 2.0 / n as f64, "n={n}");
        }
    }

    #[test]
    fn relay_init_values() {
        let r = expected_relay_init_time(10, rate(1.0)).unwrap();
        assert_abs_diff_eq!(r.exact, 2.828_968_253_968_254, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_relay_init_time(2, rate(2.0)).unwrap().exact, 0.5);
        let big = expected_relay_init_time(1_000_000, rate(1.0)).unwrap();
        assert_abs_diff_eq!(big.exact - big.asymptotic, 0.577_215_664_9, epsilon = 1e-5);
    }

    #[test]
    fn max_gaussian_values() {
        assert_abs_diff_eq!(max_gaussian_growth(std::f64::consts::E.powi(2)), 2.0, epsilon = 1e-12);
        let mut last = 0.0;
        for n in 2..500 {
            let v = max_gaussian_expectation::<f64>(n).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn residual_moments() {
        let m = erlang_residual_moments(36.0, 10.0, 10, rate(1.0)).unwrap();
        assert_abs_diff_eq!(m.mean, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.variance, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean * m.mean / m.variance, m.shape, epsilon = 1e-12);
        let one = erlang_residual_moments(12.0, 10.0, 4, rate(0.5)).unwrap();
        // Erlang(1, 1) = Exp(1).
        assert_abs_diff_eq!(one.mean, 1.0);
        assert_abs_diff_eq!(one.variance, 1.0);
        let none = erlang_residual_moments(10.0, 9.5, 4, rate(1.0)).unwrap();
        assert!(none.small_l && none.mean == 0.0 && none.variance == 0.0);
    }

    #[test]
    fn spreading_small_l_bounds() {
        let s = expected_spreading_time(100, rate(1.0), 10, 0.0).unwrap();
        let d = expected_delay(100, rate(1.0), 10, 0.0).unwrap();
        assert_eq!(s.regime, Regime::SmallL);
        assert_eq!(s.lower, d.value);
        assert_abs_diff_eq!(s.upper.unwrap(), 5.177_377_517_639_621, epsilon = 1e-12);
        assert!(s.point.is_none());
    }

    #[test]
    fn spreading_degenerate_residual() {
        // l′ − l₀ − 1 ≤ 0 just above the regime boundary: point = H₉₉/λ.
        let l = l0::<f64>(100).unwrap().exact.ceil() as u64;
        let s = expected_spreading_time(100, rate(1.0), l, 0.0).unwrap();
        assert_eq!(s.regime, Regime::LargeL);
        assert_abs_diff_eq!(s.point.unwrap(), 5.1774, epsilon = 1e-4);
    }

    #[test]
    fn spreading_large_l_exceeds_delay() {
        let l = 2 * l0::<f64>(100).unwrap().exact.round() as u64;
        let s = expected_spreading_time(100, rate(1.0), l, 0.0).unwrap();
        let d = expected_delay(100, rate(1.0), l, 0.0).unwrap();
        assert!(s.point.unwrap() > d.value);
        assert!(s.simplified.unwrap() > 0.0);
    }

    #[test]
    fn prediction_invariants_and_f32() {
        for (n, l) in [(10usize, 2u64), (100, 10), (100, 420), (37, 5000)] {
            let p = predict(n, rate(1.3), l, 0.05).unwrap();
            assert!(p.k_star >= 1 && p.k_star <= n);
            if let Some(upper) = p.spreading_time_upper {
                assert!(p.spreading_time_lower <= upper);
                assert!(p.expected_delay <= upper);
            }
            let p32 = predict(n, MeetingRate::new(1.3f32).unwrap(), l, 0.05f32).unwrap();
            assert_eq!(p32.k_star, p.k_star);
            assert_eq!(p32.regime, p.regime);
            assert!((p32.expected_delay as f64 - p.expected_delay).abs() < 1e-4 * p.expected_delay);
        }
    }

    #[test]
    fn prediction_json_has_fields() {
        let p = predict(10, rate(1.0), 2, 0.0).unwrap();
        let v: serde_json::Value = serde_json::to_value(p).unwrap();
        assert_eq!(v["k_star"], 7);
        assert_eq!(v["regime"], "small_l");
        assert_abs_diff_eq!(v["expected_delay"].as_f64().unwrap(), 1.1, epsilon = 1e-12);
        assert_eq!(v["lambda"], 1.0);
    }

    proptest! {
        #[test]
        fn time_outputs_scale_inverse_with_lambda(n in 2usize..200, l in 1u64..3000, lam in 0.05f64..20.0, c in 0.1f64..10.0) {
            let a = predict(n, rate(lam), l, 0.0).unwrap();
            let b = predict(n, rate(lam * c), l, 0.0).unwrap();
            let close = |x: f64, y: f64| (x - c * y).abs() <= 1e-12 * x.abs().max(1e-300);
            prop_assert!(close(a.expected_delay, b.expected_delay));
            prop_assert!(close(a.relay_init_time, b.relay_init_time));
            prop_assert!(close(a.spreading_time_lower, b.spreading_time_lower));
            if let (Some(x), Some(y)) = (a.spreading_time_point, b.spreading_time_point) {
                prop_assert!(close(x, y));
            }
            prop_assert_eq!(a.k_star, b.k_star);
        }

        #[test]
        fn k_star_brackets_target(n in 2usize..300, l in 0.001f64..2000.0) {
            let k = k_star(n, l);
            prop_assert!(k >= 1 && k <= n);
            if k < n {
                prop_assert!(expected_collected::<f64>(n, k).unwrap() >= l);
                if k > 1 {
                    prop_assert!(expected_collected::<f64>(n, k - 1).unwrap() < l);
                }
            } else {
                prop_assert!(l0::<f64>(n).unwrap().exact < l);
            }
        }

        #[test]
        fn delta_l_pmf_normalized(n in 2usize..200, k_frac in 0.0f64..1.0) {
            let k = 1 + ((n - 2) as f64 * k_frac) as usize;
            let total: f64 = (0..5000).map(|i| delta_l_pmf::<f64>(n, k, i).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
