use dpmeb::geometry::{exact_meb, uncovered_mean};
use dpmeb::{Dataset, Point};
use proptest::prelude::*;

/// Smallest ball among circumballs of all subsets of at most `d + 1` points
/// that enclose the whole set.
fn brute_force_meb(rows: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let d = rows[0].len();
    let n = rows.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if idx.len() > d + 1 {
            continue;
        }
        let Some(c) = circumcenter(&idx.iter().map(|&i| rows[i].as_slice()).collect::<Vec<_>>()) else {
            continue;
        };
        let r = dist(&c, &rows[idx[0]]);
        if rows.iter().all(|x| dist(&c, x) <= r * (1.0 + 1e-9) + 1e-12)
            && best.as_ref().is_none_or(|(_, b)| r < *b)
        {
            best = Some((c, r));
        }
    }
    best.expect("some subset encloses the set")
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Center of the sphere through `pts` within their affine hull.
fn circumcenter(pts: &[&[f64]]) -> Option<Vec<f64>> {
    let p0 = pts[0];
    let v: Vec<Vec<f64>> = pts[1..]
        .iter()
        .map(|p| p.iter().zip(p0).map(|(a, b)| a - b).collect())
        .collect();
    let k = v.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut m: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|j| 2.0 * dot(&v[i], &v[j])).collect();
            row.push(dot(&v[i], &v[i]));
            row
        })
        .collect();
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=k {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let lambda: Vec<f64> = (0..k).map(|i| m[i][k] / m[i][i]).collect();
    let mut c = p0.to_vec();
    for (l, vi) in lambda.iter().zip(&v) {
        for (cj, vj) in c.iter_mut().zip(vi) {
            *cj += l * vj;
        }
    }
    Some(c)
}

fn cloud(max_n: usize, max_d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_d).prop_flat_map(move |d| prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), 1..=max_n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_meb_matches_brute_force(rows in cloud(8, 3)) {
        let ball = exact_meb(&Dataset::from_rows(&rows).unwrap()).unwrap();
        let (_, r) = brute_force_meb(&rows);
        prop_assert!((ball.radius - r).abs() <= 1e-7 * (1.0 + r), "{} vs {}", ball.radius, r);
        for x in &rows {
            prop_assert!(dist(&ball.center, x) <= ball.radius * (1.0 + 1e-9) + 1e-9);
        }
    }

    /// For any θ and any x outside B(θ, r) with r ≥ r_opt:
    /// ⟨θ − θ_opt, x − θ_opt⟩ ≤ ½‖θ − θ_opt‖².
    #[test]
    fn uncovered_points_lean_away(rows in cloud(12, 4), theta_seed in prop::collection::vec(-15.0..15.0f64, 4), slack in 0.0..2.0f64) {
        let p = Dataset::from_rows(&rows).unwrap();
        let opt = exact_meb(&p).unwrap();
        let theta: Vec<f64> = theta_seed[..p.dim()].to_vec();
        let r = opt.radius * (1.0 + slack);
        for x in p.iter().filter(|x| dist(x, &theta) > r) {
            let u: Vec<f64> = theta.iter().zip(opt.center.coords()).map(|(a, b)| a - b).collect();
            let w: Vec<f64> = x.iter().zip(opt.center.coords()).map(|(a, b)| a - b).collect();
            let lhs: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
            let rhs = 0.5 * u.iter().map(|a| a * a).sum::<f64>();
            prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
        }
    }

    #[test]
    fn uncovered_mean_matches_compensated_sum(rows in cloud(40, 5), r in 0.0..12.0f64) {
        let p = Dataset::from_rows(&rows).unwrap();
        let theta = Point::origin(p.dim());
        let s = uncovered_mean(&p, &theta, r).unwrap();
        let out: Vec<&Vec<f64>> = rows.iter().filter(|x| dist(x, theta.coords()) > r).collect();
        prop_assert_eq!(s.count, out.len());
        if let Some(mean) = s.mean {
            for j in 0..p.dim() {
                let (mut sum, mut comp) = (0.0f64, 0.0f64);
                for x in &out {
                    let y = x[j] - comp;
                    let t = sum + y;
                    comp = (t - sum) - y;
                    sum = t;
                }
                let want = sum / out.len() as f64;
                prop_assert!((mean[j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        } else {
            prop_assert!(out.is_empty());
        }
    }
}

#[test]
fn brute_force_reference_on_known_sets() {
    let (c, r) = brute_force_meb(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 0.1]]);
    assert!((r - 1.0).abs() < 1e-12 && dist(&c, &[1.0, 0.0]) < 1e-12);
    let s3 = 3f64.sqrt();
    let (_, r) = brute_force_meb(&[vec![1.0, 0.0], vec![-0.5, s3 / 2.0], vec![-0.5, -s3 / 2.0]]);
    assert!((r - 1.0).abs() < 1e-12);
}
