//! Shared numerical utilities: error function, Gaussian and chi-squared
//! distributions, descriptive statistics, a rank-sum test, and the seeded
//! random-number stream contract used by every module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_2PI: f64 = 1.837877066409345483560659472811;
/// 1/sqrt(pi)
const FRAC_1_SQRT_PI: f64 = 0.56418958354775628695;

// ── error function ──────────────────────────────────────────────────────

// Rational approximations from W. J. Cody's SPECFUN `calerf`;
// absolute error well below 1e-15 across all three regimes.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

/// erfc(y) for y in (0.46875, inf), via the two tail regimes.
fn erfc_tail(y: f64) -> f64 {
    let result = if y <= 4.0 {
        let mut xnum = ERF_C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + ERF_C[i]) * y;
            xden = (xden + ERF_D[i]) * y;
        }
        (xnum + ERF_C[7]) / (xden + ERF_D[7])
    } else {
        let ysq = 1.0 / (y * y);
        let mut xnum = ERF_P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + ERF_P[i]) * ysq;
            xden = (xden + ERF_Q[i]) * ysq;
        }
        let r = ysq * (xnum + ERF_P[4]) / (xden + ERF_Q[4]);
        (FRAC_1_SQRT_PI - r) / y
    };
    // exp(-y^2) split for accuracy, per Cody.
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * result
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let ysq = if y > 5.93e-17 { y * y } else { 0.0 };
        let mut xnum = ERF_A[4] * ysq;
        let mut xden = ysq;
        for i in 0..3 {
            xnum = (xnum + ERF_A[i]) * ysq;
            xden = (xden + ERF_B[i]) * ysq;
        }
        x * (xnum + ERF_A[3]) / (xden + ERF_B[3])
    } else {
        let tail = if y >= 27.0 { 0.0 } else { erfc_tail(y) };
        if x > 0.0 {
            1.0 - tail
        } else {
            tail - 1.0
        }
    }
}

/// Complementary error function, accurate in the far tail.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let tail = if y <= 0.46875 {
        return 1.0 - erf(x);
    } else if y >= 27.0 {
        0.0
    } else {
        erfc_tail(y)
    };
    if x > 0.0 {
        tail
    } else {
        2.0 - tail
    }
}

// ── distributions ───────────────────────────────────────────────────────

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal PDF.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// CDF of the chi-squared distribution with one degree of freedom.
///
/// Identity: P(X <= x) = 2 Phi(sqrt(x)) - 1 = erf(sqrt(x/2)).
pub fn chi2_1_cdf(x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::InvalidCommand(format!(
            "chi2_1_cdf requires x >= 0, got {x}"
        )));
    }
    Ok(erf((x / 2.0).sqrt()))
}

/// Survival function 1 - CDF of chi-squared(1), stable in the tail.
pub fn chi2_1_sf(x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::InvalidCommand(format!(
            "chi2_1_sf requires x >= 0, got {x}"
        )));
    }
    Ok(erfc((x / 2.0).sqrt()))
}

/// Quantile of chi-squared(1): smallest x with CDF(x) >= p, by bisection.
pub fn chi2_1_quantile(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidCommand(format!(
            "chi2_1_quantile requires p in [0,1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while erf((hi / 2.0).sqrt()) < p {
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erf((mid / 2.0).sqrt()) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Log-density of a Gaussian with the given mean and standard deviation.
pub fn gaussian_logpdf(x: f64, mean: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidCommand(format!(
            "gaussian_logpdf requires sigma > 0, got {sigma}"
        )));
    }
    let z = (x - mean) / sigma;
    Ok(-0.5 * z * z - sigma.ln() - 0.5 * LN_2PI)
}

// ── descriptive statistics ──────────────────────────────────────────────

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divide by n).
pub fn std_pop(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One-sided Mann-Whitney rank-sum test.
///
/// Tests H1: values in `greater` are stochastically larger than `other`.
/// Returns the approximate p-value (normal approximation with tie
/// correction and continuity correction); small p supports H1.
pub fn mann_whitney_one_sided(greater: &[f64], other: &[f64]) -> f64 {
    let n1 = greater.len() as f64;
    let n2 = other.len() as f64;
    assert!(n1 > 0.0 && n2 > 0.0, "rank test requires non-empty samples");

    let mut pooled: Vec<(f64, usize)> = greater
        .iter()
        .map(|&x| (x, 0usize))
        .chain(other.iter().map(|&x| (x, 1usize)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let n = pooled.len();
    let mut ranks = vec![0.0f64; n];
    let mut tie_term = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = avg_rank;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }

    let r1: f64 = pooled
        .iter()
        .zip(&ranks)
        .filter(|((_, g), _)| *g == 0)
        .map(|(_, r)| *r)
        .sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;

    let nn = n1 + n2;
    let mean_u = n1 * n2 / 2.0;
    let var_u = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if var_u <= 0.0 {
        return if u1 > mean_u { 0.0 } else { 1.0 };
    }
    let z = (u1 - mean_u - 0.5) / var_u.sqrt();
    1.0 - normal_cdf(z)
}

// ── seeded random-number streams ────────────────────────────────────────

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Seeded, stream-addressed random number generator.
///
/// `(seed, stream_id)` fully determines the sequence; distinct stream ids
/// give independent streams, so parallel rollouts and ensemble members
/// never share generator state.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive an independent child stream; deterministic in (seed, stream, id).
    pub fn child(&self, id: u64) -> RngStream {
        let seed = splitmix64(self.seed ^ splitmix64(self.stream_id));
        let stream = splitmix64(self.stream_id.wrapping_add(splitmix64(id)));
        RngStream::new(seed, stream)
    }

    /// Uniform double in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform double in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.rng.gen_range(0..n)
    }

    /// Standard normal draw via the Marsaglia polar method.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * m);
                return u * m;
            }
        }
    }

    /// Fill a slice with standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }
}
