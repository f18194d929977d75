//! Reference implementations used as oracles by the integration tests.
//! Each one is written the slow, obvious way on purpose.
#![allow(dead_code)]

use hybridchain::classifier::Design;
use hybridchain::ledger::{ValidatorId, Verdict};

/// Posterior validity by multiplying plain probabilities.
pub fn direct_posterior(psi: f64, entries: &[(Verdict, f64)], beta: f64) -> f64 {
    let mut valid = 1.0;
    let mut invalid = 1.0;
    for &(v, rho) in entries {
        let q = v == Verdict::Clear;
        valid *= if q { rho } else { 1.0 - rho };
        invalid *= if q {
            (1.0 - beta) * rho + beta * (1.0 - rho)
        } else {
            beta * rho + (1.0 - beta) * (1.0 - rho)
        };
    }
    valid * psi / (valid * psi + invalid * (1.0 - psi))
}

pub fn beta_direct(w: u32) -> f64 {
    2f64.powi(w as i32 - 1) / (2f64.powi(w as i32) - 1.0)
}

/// Sort the received beliefs, drop f from each end, take the minimum of
/// what is left together with the own belief and psi.
pub fn trimmed_min(own: f64, received: &[f64], f: usize, psi: f64) -> f64 {
    let mut v = received.to_vec();
    v.sort_by(f64::total_cmp);
    let mut best = own.min(psi);
    for &x in &v[f..v.len() - f] {
        best = best.min(x);
    }
    best
}

/// k-th smallest of the values of every entry but `skip`, plus `pad_count`
/// copies of `pad`.
pub fn kth_padded(values: &[(ValidatorId, f64)], skip: ValidatorId, pad: f64, pad_count: usize, k: usize) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().filter(|(id, _)| *id != skip).map(|&(_, x)| x).collect();
    v.extend(std::iter::repeat_n(pad, pad_count));
    v.sort_by(f64::total_cmp);
    v.get(k).copied()
}

pub fn nearest_rank_sorted(samples: &[u64], q: f64) -> u64 {
    let mut s = samples.to_vec();
    s.sort();
    let n = s.len();
    let mut rank = 1;
    while (rank as f64) < q * n as f64 {
        rank += 1;
    }
    s[rank.min(n) - 1]
}

/// Mean of Gamma(shape, scale) truncated to (0, hi], by Simpson's rule.
pub fn truncated_gamma_mean(shape: f64, scale: f64, hi: f64) -> f64 {
    let n = 20_000;
    let h = hi / n as f64;
    let pdf = |x: f64| if x <= 0.0 { 0.0 } else { x.powf(shape - 1.0) * (-x / scale).exp() };
    let (mut mass, mut first) = (0.0, 0.0);
    for i in 0..=n {
        let x = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        mass += w * pdf(x);
        first += w * x * pdf(x);
    }
    first / mass
}

/// Largest relative error between the analytic gradient and central
/// finite differences at `params`, measured as a vector norm ratio.
pub fn gradient_error(design: &Design, params: &[f64; 6], reg: f64) -> f64 {
    let g = design.gradient(params, reg);
    let mut fd = [0.0; 6];
    for i in 0..6 {
        let h = 1e-6 * params[i].abs().max(1.0);
        let mut up = *params;
        let mut down = *params;
        up[i] += h;
        down[i] -= h;
        fd[i] = (design.objective(&up, reg) - design.objective(&down, reg)) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}
