//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use aeprior::{Dataset, PatientRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

/// Lanczos approximation (g = 7, n = 9) with reflection; about 15
/// significant digits for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// ln y! by direct summation.
pub fn ln_factorial_sum(y: u32) -> f64 {
    (2..=y).map(|k| (k as f64).ln()).sum()
}

/// Negative-binomial marginal of a Poisson count whose rate is
/// Gamma(alpha, beta) distributed.
pub fn nb_ln_pmf(y: u32, alpha: f64, beta: f64) -> f64 {
    let y_f = y as f64;
    ln_gamma(y_f + alpha) - ln_gamma(alpha) - ln_factorial_sum(y)
        + alpha * (beta / (1.0 + beta)).ln()
        + y_f * (1.0 / (1.0 + beta)).ln()
}

pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Builds a dataset from `(site, counts)` pairs; patients are `site-i`.
pub fn dataset(sites: &[(&str, &[u32])]) -> Dataset {
    let mut recs = Vec::new();
    for (site, counts) in sites {
        for (i, &c) in counts.iter().enumerate() {
            recs.push(PatientRecord {
                patient_id: format!("{site}-{i}"),
                site_id: site.to_string(),
                ae_count: c,
            });
        }
    }
    Dataset::from_records(recs).unwrap()
}

/// Draws `n_sites x per_site` counts from the hierarchical model using
/// `rand_distr` directly.
pub fn generate(n_sites: usize, per_site: usize, alpha: f64, beta: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(alpha, 1.0 / beta).unwrap();
    let mut recs = Vec::new();
    for s in 0..n_sites {
        let lambda: f64 = g.sample(&mut rng);
        let p = Poisson::new(lambda.max(1e-12)).unwrap();
        for i in 0..per_site {
            recs.push(PatientRecord {
                patient_id: format!("g{s}-{i}"),
                site_id: format!("g{s}"),
                ae_count: p.sample(&mut rng) as u32,
            });
        }
    }
    Dataset::from_records(recs).unwrap()
}

/// Sites with the given sizes; every count is `s % 4`.
pub fn sized(sizes: &[usize]) -> Dataset {
    let mut recs = Vec::new();
    for (s, &n) in sizes.iter().enumerate() {
        for p in 0..n {
            recs.push(PatientRecord {
                patient_id: format!("s{s:03}p{p}"),
                site_id: format!("s{s:03}"),
                ae_count: ((s + p) % 4) as u32,
            });
        }
    }
    Dataset::from_records(recs).unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}
