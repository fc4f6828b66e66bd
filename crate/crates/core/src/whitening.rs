//! Asymmetric instance-adaptive whitening.
//!
//! Covariances are taken over instance-normalized features. Per class, the
//! element-wise variance between original and augmented covariances marks
//! the style-sensitive channel pairs; the top fraction of strictly-upper
//! positions (a larger fraction for real than for spoof) is pushed to zero on
//! both branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Class;
use crate::numcore::{Tape, Tensor, Var, NORM_EPS};

/// Symmetric `C×C` second-moment matrix of a normalized feature.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub c: usize,
    pub data: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.c + j]
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.c {
            for j in i + 1..self.c {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.data, self.c)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Splits an `N×C×C` tensor into per-sample matrices.
    pub fn split_batch(t: &Tensor) -> Result<Vec<CovarianceMatrix>> {
        match t.shape() {
            &[_, c, c2] if c == c2 => Ok(t
                .data()
                .chunks(c * c)
                .map(|d| CovarianceMatrix { c, data: d.to_vec() })
                .collect()),
            s => Err(Error::shape("covariance", format!("expected N×C×C, got {s:?}"))),
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(data: &[f64], n: usize) -> Vec<f64> {
    let mut a = data.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// `Σ = F Fᵀ / HW` of the instance-normalized feature, on the tape. `N×C×C`.
pub fn covariance_on_tape(tape: &mut Tape, features: Var) -> Result<Var> {
    let normalized = tape.instance_norm(features, NORM_EPS)?;
    tape.gram(normalized)
}

/// Covariance of one raw `C×H×W` (or `1×C×H×W`) feature map.
pub fn covariance(features: &Tensor) -> Result<CovarianceMatrix> {
    let f = match features.shape() {
        &[c, h, w] => features.reshape(&[1, c, h, w])?,
        &[1, _, _, _] => features.clone(),
        s => return Err(Error::shape("covariance", format!("expected one instance, got {s:?}"))),
    };
    let mut tape = Tape::new();
    let v = tape.constant(f);
    let cov = covariance_on_tape(&mut tape, v)?;
    Ok(CovarianceMatrix::split_batch(tape.value(cov))?.remove(0))
}

/// Mean over pairs of the element-wise variance of `(Σ_org, Σ_aug)`.
pub fn variance_matrix(pairs: &[(&CovarianceMatrix, &CovarianceMatrix)]) -> Result<Tensor> {
    let (first, _) = pairs
        .first()
        .ok_or_else(|| Error::InvalidArgument("variance matrix over an empty set of pairs".into()))?;
    let c = first.c;
    let mut v = vec![0.0; c * c];
    for (org, aug) in pairs {
        if org.c != c || aug.c != c {
            return Err(Error::shape("variance_matrix", "covariance sizes differ"));
        }
        for ((acc, &a), &b) in v.iter_mut().zip(&org.data).zip(&aug.data) {
            let mean = 0.5 * (a + b);
            *acc += 0.5 * ((a - mean) * (a - mean) + (b - mean) * (b - mean));
        }
    }
    let n = pairs.len() as f64;
    Tensor::new(&[c, c], v.into_iter().map(|x| x / n).collect())
}

/// Binary strictly-upper-triangular selection over a `C×C` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveMask {
    pub c: usize,
    pub ratio: f64,
    /// Selected `(row, col)` positions, `row < col`.
    pub positions: Vec<(usize, usize)>,
}

impl SelectiveMask {
    pub fn upper_count(c: usize) -> usize {
        c * c.saturating_sub(1) / 2
    }

    /// `floor(U · ratio)` with `U = C(C−1)/2`.
    pub fn target_count(c: usize, ratio: f64) -> usize {
        (Self::upper_count(c) as f64 * ratio).floor() as usize
    }

    pub fn popcount(&self) -> usize {
        self.positions.len()
    }

    pub fn full(c: usize) -> Self {
        let positions = (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j))).collect();
        Self { c, ratio: 1.0, positions }
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.c, self.c]);
        for &(i, j) in &self.positions {
            t.data_mut()[i * self.c + j] = 1.0;
        }
        t
    }
}

/// Top `floor(U·k)` strictly-upper positions of `v` by value; ties broken by
/// `(row, col)` order.
pub fn selective_mask(v: &Tensor, ratio: f64) -> Result<SelectiveMask> {
    let (c, c2) = v.dims2()?;
    if c != c2 {
        return Err(Error::shape("selective_mask", format!("variance matrix is {c}×{c2}")));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("selective ratio {ratio} outside [0, 1]")));
    }
    let mut cand: Vec<(usize, usize)> = (0..c).flat_map(|i| (i + 1..c).map(move |j| (i, j))).collect();
    // Stable sort keeps lexicographic order among equal values.
    cand.sort_by(|a, b| {
        let (va, vb) = (v.data()[a.0 * c + a.1], v.data()[b.0 * c + b.1]);
        vb.total_cmp(&va)
    });
    cand.truncate(SelectiveMask::target_count(c, ratio));
    Ok(SelectiveMask { c, ratio, positions: cand })
}

/// Whitening-loss variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhiteningMode {
    Off,
    /// Every strictly-upper entry suppressed.
    FullIw,
    /// Same ratio (`k_r`) for both classes.
    Symmetric,
    #[default]
    Asymmetric,
}

/// Configured whitening loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WhiteningLoss {
    pub mode: WhiteningMode,
    pub k_real: f64,
    pub k_spoof: f64,
}

/// Output of one whitening evaluation.
#[derive(Debug)]
pub struct WhiteningTerms {
    pub loss: Var,
    pub real_mask: SelectiveMask,
    pub spoof_mask: SelectiveMask,
}

impl WhiteningLoss {
    pub fn new(mode: WhiteningMode, k_real: f64, k_spoof: f64) -> Result<Self> {
        if mode == WhiteningMode::Asymmetric && k_real < k_spoof {
            return Err(Error::Config(format!(
                "real selective ratio {k_real} must be at least the spoof ratio {k_spoof}"
            )));
        }
        for k in [k_real, k_spoof] {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::Config(format!("selective ratio {k} outside [0, 1]")));
            }
        }
        Ok(Self { mode, k_real, k_spoof })
    }

    fn ratio(&self, class: Class) -> f64 {
        match (self.mode, class) {
            (WhiteningMode::FullIw, _) => 1.0,
            (WhiteningMode::Symmetric, _) | (_, Class::Real) => self.k_real,
            (_, Class::Spoof) => self.k_spoof,
        }
    }

    /// Mask for one class subgroup of the batch.
    pub fn class_mask(&self, org: &[CovarianceMatrix], aug: Option<&[CovarianceMatrix]>, labels: &[Class], class: Class) -> Result<SelectiveMask> {
        let c = org.first().map_or(0, |m| m.c);
        if self.mode == WhiteningMode::FullIw {
            return Ok(SelectiveMask::full(c));
        }
        let aug = aug.ok_or_else(|| Error::Config("adaptive whitening needs the augmented branch".into()))?;
        let pairs: Vec<_> = (0..labels.len())
            .filter(|&i| labels[i] == class)
            .map(|i| (&org[i], &aug[i]))
            .collect();
        if pairs.is_empty() {
            return Ok(SelectiveMask {
                c,
                ratio: self.ratio(class),
                positions: Vec::new(),
            });
        }
        selective_mask(&variance_matrix(&pairs)?, self.ratio(class))
    }

    /// `Σ_class Σ_branch mean_subgroup mean_selected |Σ ⊙ M|`. Empty masks
    /// and empty subgroups contribute zero. Masks are hard selections; the
    /// gradient flows through the covariances only.
    pub fn evaluate(&self, tape: &mut Tape, cov_org: Var, cov_aug: Option<Var>, labels: &[Class]) -> Result<Option<WhiteningTerms>> {
        if self.mode == WhiteningMode::Off {
            return Ok(None);
        }
        let org = CovarianceMatrix::split_batch(tape.value(cov_org))?;
        if org.len() != labels.len() {
            return Err(Error::shape("whitening", format!("{} covariances for {} labels", org.len(), labels.len())));
        }
        let aug = match cov_aug {
            Some(v) => Some(CovarianceMatrix::split_batch(tape.value(v))?),
            None => None,
        };
        let c = org[0].c;
        let real_mask = self.class_mask(&org, aug.as_deref(), labels, Class::Real)?;
        let spoof_mask = self.class_mask(&org, aug.as_deref(), labels, Class::Spoof)?;

        let mut weights = vec![0.0; labels.len() * c * c];
        for class in Class::BOTH {
            let mask = if class.is_real() { &real_mask } else { &spoof_mask };
            let members = labels.iter().filter(|&&l| l == class).count();
            if members == 0 || mask.popcount() == 0 {
                continue;
            }
            let w = 1.0 / (members as f64 * mask.popcount() as f64);
            for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == class) {
                for &(r, col) in &mask.positions {
                    weights[i * c * c + r * c + col] = w;
                }
            }
        }
        let weights = tape.constant(Tensor::new(&[labels.len(), c, c], weights)?);
        let mut total: Option<Var> = None;
        for cov in std::iter::once(cov_org).chain(cov_aug) {
            let magnitude = tape.abs(cov);
            let weighted = tape.mul(magnitude, weights)?;
            let term = tape.sum(weighted);
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
        Ok(Some(WhiteningTerms {
            loss: total.expect("original branch always present"),
            real_mask,
            spoof_mask,
        }))
    }

    /// Loss value on plain covariance matrices.
    pub fn value(&self, org: &[CovarianceMatrix], aug: Option<&[CovarianceMatrix]>, labels: &[Class]) -> Result<f64> {
        let stack = |ms: &[CovarianceMatrix]| -> Result<Tensor> {
            let c = ms[0].c;
            Tensor::new(&[ms.len(), c, c], ms.iter().flat_map(|m| m.data.iter().copied()).collect())
        };
        let mut tape = Tape::new();
        let o = tape.constant(stack(org)?);
        let a = match aug {
            Some(a) => Some(tape.constant(stack(a)?)),
            None => None,
        };
        Ok(match self.evaluate(&mut tape, o, a, labels)? {
            Some(terms) => tape.value(terms.loss).item(),
            None => 0.0,
        })
    }
}

/// Mean `|Σ|` over the selected positions of each sample's class mask;
/// samples whose mask is empty are skipped.
pub fn masked_abs_means(covs: &[CovarianceMatrix], labels: &[Class], real_mask: &SelectiveMask, spoof_mask: &SelectiveMask) -> Vec<f64> {
    covs.iter()
        .zip(labels)
        .filter_map(|(cov, &l)| {
            let mask = if l.is_real() { real_mask } else { spoof_mask };
            (mask.popcount() > 0).then(|| {
                mask.positions.iter().map(|&(i, j)| cov.get(i, j).abs()).sum::<f64>() / mask.popcount() as f64
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(c: usize, vals: &[f64]) -> CovarianceMatrix {
        CovarianceMatrix { c, data: vals.to_vec() }
    }

    #[test]
    fn covariance_of_identical_rows() {
        // Rows [1, −1] are already zero-mean with unit variance; IN leaves
        // them (almost) unchanged, so Σ ≈ [[1, 1], [1, 1]].
        let f = Tensor::new(&[2, 1, 2], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let cov = covariance(&f).unwrap();
        let shrink = 1.0 / (1.0 + NORM_EPS);
        for v in &cov.data {
            assert!((v - shrink).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_of_orthogonal_rows() {
        let f = Tensor::new(&[2, 1, 4], vec![1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0]).unwrap();
        let cov = covariance(&f).unwrap();
        assert!(cov.get(0, 1).abs() < 1e-15);
    }

    #[test]
    fn variance_matrix_examples() {
        let a = mat(1, &[3.0]);
        let b = mat(1, &[1.0]);
        assert_eq!(variance_matrix(&[(&a, &b)]).unwrap().data(), &[1.0]);
        let (p, q) = (mat(1, &[0.0]), mat(1, &[2.0]));
        assert_eq!(variance_matrix(&[(&p, &q), (&q, &p)]).unwrap().data(), &[1.0]);
        assert_eq!(variance_matrix(&[(&a, &a)]).unwrap().data(), &[0.0]);
        assert!(variance_matrix(&[]).is_err());
    }

    #[test]
    fn mask_examples() {
        let mut v = Tensor::zeros(&[3, 3]);
        v.data_mut()[1] = 0.5;
        v.data_mut()[2] = 0.2;
        v.data_mut()[5] = 0.9;
        assert_eq!(selective_mask(&v, 0.0).unwrap().popcount(), 0);
        assert_eq!(selective_mask(&v, 0.34).unwrap().positions, vec![(1, 2)]);
        assert_eq!(selective_mask(&v, 1.0).unwrap().popcount(), 3);
        // Ties resolve in (row, col) order.
        assert_eq!(selective_mask(&Tensor::zeros(&[3, 3]), 0.67).unwrap().positions, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn desk_scale_mask_counts() {
        assert_eq!(SelectiveMask::target_count(64, 0.003), 6);
        assert_eq!(SelectiveMask::target_count(64, 0.0006), 1);
    }

    #[test]
    fn single_real_sample_hand_evaluation() {
        let org = vec![mat(2, &[1.0, 1.0, 1.0, 1.0])];
        let aug = vec![mat(2, &[1.0, 0.5, 0.5, 1.0])];
        let loss = WhiteningLoss::new(WhiteningMode::Asymmetric, 1.0, 0.0).unwrap();
        let v = loss.value(&org, Some(&aug), &[Class::Real]).unwrap();
        assert!((v - 1.5).abs() < 1e-15);
    }

    #[test]
    fn diagonal_covariances_give_zero() {
        let org = vec![mat(2, &[1.0, 0.0, 0.0, 1.0]); 2];
        let labels = [Class::Real, Class::Spoof];
        for mode in [WhiteningMode::FullIw, WhiteningMode::Symmetric, WhiteningMode::Asymmetric] {
            let loss = WhiteningLoss::new(mode, 0.5, 0.5).unwrap();
            assert_eq!(loss.value(&org, Some(&org), &labels).unwrap(), 0.0);
        }
    }

    #[test]
    fn ratio_order_enforced() {
        assert!(WhiteningLoss::new(WhiteningMode::Asymmetric, 0.001, 0.003).is_err());
        assert!(WhiteningLoss::new(WhiteningMode::Asymmetric, 0.003, 0.0006).is_ok());
    }

    #[test]
    fn jacobi_eigenvalues() {
        let ev = symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        let (lo, hi) = (ev[0].min(ev[1]), ev[0].max(ev[1]));
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }
}
