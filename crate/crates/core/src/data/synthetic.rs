//! Synthetic dataset generators used by tests, the acceptance suite, and the
//! demo plans.

use crate::data::dataset::{CellValue, Dataset};
use crate::data::schema::{ColumnKind, ColumnSchema};
use crate::numerics::rng::Rng;

fn numeric_schema(n_features: usize) -> Vec<ColumnSchema> {
    (0..n_features)
        .map(|j| ColumnSchema {
            name: format!("f{j}"),
            kind: ColumnKind::Numerical,
            categories: None,
        })
        .collect()
}

fn from_points(name: &str, points: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Dataset {
    let n_features = points[0].len();
    let rows = points
        .into_iter()
        .map(|p| p.into_iter().map(|v| Some(CellValue::Num(v))).collect())
        .collect();
    Dataset {
        name: name.to_string(),
        schema: numeric_schema(n_features),
        rows,
        labels,
        n_classes,
        label_names: (0..n_classes).map(|c| format!("c{c}")).collect(),
    }
}

/// Two well-separated Gaussian blobs in 2-D, balanced classes.
pub fn two_blobs(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let centers = [(-2.0, -2.0), (2.0, 2.0)];
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let (cx, cy) = centers[class];
        points.push(vec![cx + noise * rng.normal(), cy + noise * rng.normal()]);
        labels.push(class);
    }
    from_points("two_blobs", points, labels, 2)
}

/// Two blobs with a `ratio`:1 class imbalance (class 0 is the larger).
pub fn imbalanced_blobs(n: usize, ratio: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let n0 = n * ratio / (ratio + 1);
    let centers = [(-2.0, -2.0), (2.0, 2.0)];
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n0);
        let (cx, cy) = centers[class];
        points.push(vec![cx + noise * rng.normal(), cy + noise * rng.normal()]);
        labels.push(class);
    }
    from_points("imbalanced_blobs", points, labels, 2)
}

/// Two concentric noisy rings (radii 1 and 2), embedded into `n_features`
/// dimensions through a fixed random orthonormal map plus ambient noise.
/// Not linearly separable in any projection.
pub fn annuli(n: usize, n_features: usize, seed: u64) -> Dataset {
    assert!(n_features >= 2);
    let mut rng = Rng::new(seed);

    // random 2 -> n_features embedding with orthonormal columns
    let mut q1: Vec<f64> = (0..n_features).map(|_| rng.normal()).collect();
    let mut q2: Vec<f64> = (0..n_features).map(|_| rng.normal()).collect();
    let n1 = q1.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut q1 {
        *v /= n1;
    }
    let proj: f64 = q1.iter().zip(&q2).map(|(a, b)| a * b).sum();
    for (v, &u) in q2.iter_mut().zip(&q1) {
        *v -= proj * u;
    }
    let n2 = q2.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut q2 {
        *v /= n2;
    }

    let radii = [1.0, 2.0];
    let radial_noise = 0.15;
    let ambient_noise = 0.05;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let theta = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
        let r = radii[class] + radial_noise * rng.normal();
        let (px, py) = (r * theta.cos(), r * theta.sin());
        let point: Vec<f64> = (0..n_features)
            .map(|k| px * q1[k] + py * q2[k] + ambient_noise * rng.normal())
            .collect();
        points.push(point);
        labels.push(class);
    }
    from_points("annuli", points, labels, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = annuli(50, 8, 3);
        let b = annuli(50, 8, 3);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn annuli_classes_sit_on_distinct_radii() {
        let ds = annuli(400, 8, 1);
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for (row, &y) in ds.rows.iter().zip(&ds.labels) {
            let norm2: f64 = row
                .iter()
                .map(|c| match c {
                    Some(CellValue::Num(v)) => v * v,
                    _ => 0.0,
                })
                .sum();
            sums[y] += norm2.sqrt();
            counts[y] += 1;
        }
        let mean0 = sums[0] / counts[0] as f64;
        let mean1 = sums[1] / counts[1] as f64;
        assert!((mean0 - 1.0).abs() < 0.1, "inner radius {mean0}");
        assert!((mean1 - 2.0).abs() < 0.1, "outer radius {mean1}");
    }
}
