#![allow(dead_code)]

use longfuse::simulation::SimCase;
use longfuse::{FusedDataset, Unit};

pub fn draw(case: u32, n1: usize, n0: usize, seed: u64) -> FusedDataset {
    SimCase::from_id(case).unwrap().generate(n1, n0, seed).unwrap().data
}

/// Same units with `T` replaced by `1 − T`.
pub fn relabel(data: &FusedDataset) -> FusedDataset {
    let units: Vec<Unit> = data
        .units()
        .iter()
        .cloned()
        .map(|mut u| {
            u.treated = !u.treated;
            u
        })
        .collect();
    data.with_units(units).unwrap()
}

/// Every observed outcome multiplied by `c`.
pub fn scale_outcome(data: &FusedDataset, c: f64) -> FusedDataset {
    let units: Vec<Unit> = data
        .units()
        .iter()
        .cloned()
        .map(|mut u| {
            u.y = u.y.map(|y| y * c);
            u
        })
        .collect();
    FusedDataset::new(units, Some(data.outcome_family())).unwrap()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// `max |a − b| / max(max |b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for c in 0..d {
        let p = (c..d)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..d {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..d {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..d).map(|i| b[i] / a[i][i]).collect()
}

/// Ordinary least squares with an intercept via the normal equations;
/// returns coefficients and their conventional standard errors.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len() + 1;
    let aug = |r: &Vec<f64>| std::iter::once(1.0).chain(r.iter().copied()).collect::<Vec<f64>>();
    let mut xtx = vec![vec![0.0; d]; d];
    let mut xty = vec![0.0; d];
    for (r, &yi) in rows.iter().zip(y) {
        let x = aug(r);
        for i in 0..d {
            xty[i] += x[i] * yi;
            for j in 0..d {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    let beta = solve(xtx.clone(), xty);
    let rss: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, &yi)| {
            let x = aug(r);
            let fit: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    let sigma2 = rss / (y.len() - d) as f64;
    let se = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            (sigma2 * solve(xtx.clone(), e)[j]).sqrt()
        })
        .collect();
    (beta, se)
}
