//! Shared oracles for integration tests, independent of the library's
//! implementation paths.

#![allow(dead_code)]

/// Standard normal cdf by Simpson quadrature of the density.
pub fn phi_oracle(z: f64) -> f64 {
    let steps = 4000;
    let (a, b) = if z < 0.0 { (z, 0.0) } else { (0.0, z) };
    let h = (b - a) / steps as f64;
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = density(a) + density(b);
    for i in 1..steps {
        let t = a + i as f64 * h;
        acc += density(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = acc * h / 3.0;
    if z < 0.0 {
        0.5 - integral
    } else {
        0.5 + integral
    }
}

/// Brute-force pairwise AUROC: (concordant + ties/2) / (P * N).
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut concordant = 0.0;
    let mut pairs = 0.0;
    for (&si, &li) in scores.iter().zip(labels) {
        if !li {
            continue;
        }
        for (&sj, &lj) in scores.iter().zip(labels) {
            if lj {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                concordant += 1.0;
            } else if si == sj {
                concordant += 0.5;
            }
        }
    }
    concordant / pairs
}

/// Exhaustive FPR at the largest observed-score threshold reaching the
/// TPR level under the `score >= t` rule.
pub fn brute_fpr_at_tpr(scores: &[f64], labels: &[bool], level: f64) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut best_t = f64::NEG_INFINITY;
    for &t in scores {
        let tp = scores.iter().zip(labels).filter(|(s, &l)| l && **s >= t).count() as f64;
        if tp / n_pos >= level && t > best_t {
            best_t = t;
        }
    }
    let fp = scores.iter().zip(labels).filter(|(s, &l)| !l && **s >= best_t).count() as f64;
    fp / n_neg
}

/// Kolmogorov-Smirnov distance between a sample and a cdf.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut worst = 0.0f64;
    for (i, &v) in sample.iter().enumerate() {
        let f = cdf(v);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        worst = worst.max((f - lo).abs()).max((f - hi).abs());
    }
    worst
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, &idx) in order.iter().enumerate() {
            r[idx] = rank as f64;
        }
        r
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Sample median (odd/even handled by lower middle).
pub fn sample_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}
