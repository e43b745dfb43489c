//! Principal component analysis by cyclic Jacobi diagonalization of the
//! sample covariance.

use super::{NumericsError, Tensor};

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `d × d` row-major matrix.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors
/// as rows. Each eigenvector is signed so its largest-magnitude entry is
/// positive.
pub fn symmetric_eigen(matrix: &[f64], d: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>), NumericsError> {
    if matrix.len() != d * d || d == 0 {
        return Err(NumericsError::Shape {
            op: "symmetric_eigen",
            left: vec![matrix.len()],
            right: vec![d, d],
        });
    }
    let mut a = matrix.to_vec();
    for i in 0..d {
        for j in 0..i {
            if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * (1.0 + a[i * d + j].abs()) {
                return Err(NumericsError::Invalid("matrix is not symmetric".into()));
            }
        }
    }
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * d + j] * a[i * d + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k * d + p], a[k * d + q]);
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p * d + k], a[q * d + k]);
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j * d + j].total_cmp(&a[i * d + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * d + i]).collect();
    let vectors = order
        .iter()
        .map(|&col| {
            let mut vec: Vec<f64> = (0..d).map(|k| v[k * d + col]).collect();
            let lead = vec
                .iter()
                .copied()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
            vec
        })
        .collect();
    Ok((values, vectors))
}

/// Fitted projection onto the leading principal axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// `[k × d]`, orthonormal rows.
    pub components: Tensor,
    /// Sample variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Fits `k` components to the rows of `x: [n × d]` (n ≥ 2, k ≤ d).
pub fn pca_fit(x: &Tensor, k: usize) -> Result<Pca, NumericsError> {
    let (n, d) = x.dims2("pca_fit")?;
    if n < 2 || k == 0 || k > d {
        return Err(NumericsError::Invalid(format!(
            "pca_fit needs n >= 2 and 1 <= k <= d (n={n}, d={d}, k={k})"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(x.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= (n - 1) as f64;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, d)?;
    Ok(Pca {
        components: Tensor::from_raw(vec![k, d], vectors[..k].concat()),
        explained_variance: values[..k].iter().map(|&v| v.max(0.0)).collect(),
        mean,
    })
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.components.shape()[0]
    }

    /// Projects rows of `x: [n × d]` to `[n × k]`.
    pub fn transform(&self, x: &Tensor) -> Result<Tensor, NumericsError> {
        let (n, d) = x.dims2("pca_transform")?;
        if d != self.mean.len() {
            return Err(NumericsError::Shape {
                op: "pca_transform",
                left: x.shape().to_vec(),
                right: self.components.shape().to_vec(),
            });
        }
        let k = self.n_components();
        let mut out = Vec::with_capacity(n * k);
        for r in 0..n {
            let row = x.row(r);
            for c in 0..k {
                let comp = self.components.row(c);
                out.push((0..d).map(|j| (row[j] - self.mean[j]) * comp[j]).sum());
            }
        }
        Ok(Tensor::from_raw(vec![n, k], out))
    }

    /// Maps `[n × k]` scores back to the original space.
    pub fn inverse_transform(&self, z: &Tensor) -> Result<Tensor, NumericsError> {
        let (n, k) = z.dims2("pca_inverse_transform")?;
        if k != self.n_components() {
            return Err(NumericsError::Shape {
                op: "pca_inverse_transform",
                left: z.shape().to_vec(),
                right: self.components.shape().to_vec(),
            });
        }
        let d = self.mean.len();
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let scores = z.row(r);
            for j in 0..d {
                out.push(self.mean[j] + (0..k).map(|c| scores[c] * self.components.row(c)[j]).sum::<f64>());
            }
        }
        Ok(Tensor::from_raw(vec![n, d], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_are_rank_one() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 4.0], vec![-3.0, -6.0]]).unwrap();
        let pca = pca_fit(&x, 2).unwrap();
        let total: f64 = pca.explained_variance.iter().sum();
        assert!(pca.explained_variance[0] / total >= 0.9999);
    }

    #[test]
    fn axis_aligned_covariance() {
        // sample covariance exactly diag(2, 1)
        let a = 3f64.sqrt();
        let b = 1.5f64.sqrt();
        let x = Tensor::from_rows(&[vec![a, 0.0], vec![-a, 0.0], vec![0.0, b], vec![0.0, -b]]).unwrap();
        let pca = pca_fit(&x, 2).unwrap();
        assert!((pca.explained_variance[0] - 2.0).abs() < 1e-12);
        assert!((pca.explained_variance[1] - 1.0).abs() < 1e-12);
        assert!((pca.components.data()[0] - 1.0).abs() < 1e-12);
        assert!((pca.components.data()[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_variances_are_equal() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let pca = pca_fit(&x, 2).unwrap();
        assert!((pca.explained_variance[0] - pca.explained_variance[1]).abs() < 1e-8);
    }

    #[test]
    fn rejects_degenerate_requests() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(pca_fit(&x, 1).is_err());
        let y = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!(pca_fit(&y, 3).is_err());
        assert!(symmetric_eigen(&[1.0, 2.0, 0.0, 1.0], 2).is_err());
    }
}
