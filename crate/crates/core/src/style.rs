//! Categorical style assembly.
//!
//! Per-instance style = channel mean and std of the stage-one feature. Each
//! epoch a bank of basis styles is chosen per class by farthest point
//! sampling; novel styles are Dirichlet-weighted combinations of one class's
//! basis and are only ever applied to content of that same class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Class;
use crate::model::Model;
use crate::numcore::{Rng, Tape, Tensor, Var, NORM_EPS};
use crate::synthdata::SyntheticSample;

/// Channel mean/std of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleStats {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub class: Class,
}

impl StyleStats {
    /// `[mu; sigma]`, the point used for farthest point sampling.
    pub fn vector(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.sigma).copied().collect()
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

/// Per-class basis styles for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleBank {
    pub real: Vec<StyleStats>,
    pub spoof: Vec<StyleStats>,
    pub epoch_stamp: usize,
}

impl StyleBank {
    pub fn basis(&self, class: Class) -> &[StyleStats] {
        match class {
            Class::Real => &self.real,
            Class::Spoof => &self.spoof,
        }
    }

    pub fn channels(&self) -> usize {
        self.real.first().map_or(0, StyleStats::channels)
    }
}

/// Style augmentation applied after stage one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleAugment {
    Off,
    /// Mix each instance's style with a random batch partner of any class.
    RandomMix,
    #[default]
    Csa,
}

/// Per-instance target statistics, each `N×C`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTargets {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl StyleTargets {
    pub fn from_stats(stats: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let n = stats.len();
        let c = stats.first().map_or(0, |s| s.0.len());
        let mu = stats.iter().flat_map(|s| s.0.iter().copied()).collect();
        let sigma = stats.iter().flat_map(|s| s.1.iter().copied()).collect();
        Ok(Self {
            mu: Tensor::new(&[n, c], mu)?,
            sigma: Tensor::new(&[n, c], sigma)?,
        })
    }
}

/// Mean and `sqrt(var + eps)` of every channel of every instance in `N×C×H×W`.
pub fn compute_style_stats(features: &Tensor, labels: &[Class], eps: f64) -> Result<Vec<StyleStats>> {
    let (n, c, h, w) = features.dims4()?;
    if labels.len() != n {
        return Err(Error::shape("compute_style_stats", format!("{n} instances but {} labels", labels.len())));
    }
    let hw = h * w;
    if hw < 2 {
        return Err(Error::shape("compute_style_stats", "needs at least two spatial positions"));
    }
    let mut out = Vec::with_capacity(n);
    for (i, &class) in labels.iter().enumerate() {
        let mut mu = Vec::with_capacity(c);
        let mut sigma = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = &features.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw];
            let m = plane.iter().sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / hw as f64;
            mu.push(m);
            sigma.push((var + eps).sqrt());
        }
        out.push(StyleStats { mu, sigma, class });
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy farthest point sampling under the Euclidean metric.
///
/// Starts from the point farthest from the centroid, then repeatedly adds the
/// point whose distance to the selected set is largest. Ties go to the lowest
/// index. When `l` covers every point, all indices are returned in order.
pub fn fps_select(points: &[Vec<f64>], l: usize) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("farthest point sampling over an empty set".into()));
    }
    if l == 0 {
        return Err(Error::InvalidArgument("farthest point sampling needs L ≥ 1".into()));
    }
    let n = points.len();
    if l >= n {
        return Ok((0..n).collect());
    }
    let dim = points[0].len();
    let mut centroid = vec![0.0; dim];
    for p in points {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v / n as f64;
        }
    }
    let argmax = |scores: &[f64], taken: &[bool]| {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            if best.map_or(true, |b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        best.expect("at least one point remains")
    };

    let mut taken = vec![false; n];
    let from_centroid: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroid)).collect();
    let first = argmax(&from_centroid, &taken);
    taken[first] = true;
    let mut selected = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while selected.len() < l {
        let next = argmax(&nearest, &taken);
        taken[next] = true;
        selected.push(next);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    Ok(selected)
}

/// Selects up to `l` basis styles per class.
pub fn build_bank(stats: &[StyleStats], l: usize, epoch: usize) -> Result<StyleBank> {
    let mut per_class = Vec::with_capacity(2);
    for class in Class::BOTH {
        let members: Vec<&StyleStats> = stats.iter().filter(|s| s.class == class).collect();
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("no {class:?} samples to build a style bank from")));
        }
        let points: Vec<Vec<f64>> = members.iter().map(|s| s.vector()).collect();
        let chosen = fps_select(&points, l)?;
        per_class.push(chosen.into_iter().map(|i| members[i].clone()).collect::<Vec<_>>());
    }
    let spoof = per_class.pop().expect("two classes");
    let real = per_class.pop().expect("two classes");
    Ok(StyleBank {
        real,
        spoof,
        epoch_stamp: epoch,
    })
}

/// One pass of the frozen model over `samples` collecting stage-one styles,
/// followed by per-class farthest point sampling.
pub fn refresh_bank(model: &Model, samples: &[SyntheticSample], l: usize, epoch: usize, chunk: usize) -> Result<StyleBank> {
    let stats = model.stage1_style_stats(samples, chunk)?;
    build_bank(&stats, l, epoch)
}

/// Symmetric Dirichlet(1/L, …, 1/L) weights.
///
/// Small concentrations make raw Gamma draws underflow, so each variate is
/// drawn in log space via `Gamma(a) = Gamma(a + 1) · U^(1/a)` and normalized
/// with a max-shifted softmax.
pub fn sample_weights(l: usize, rng: &mut Rng) -> Vec<f64> {
    assert!(l >= 1, "need at least one basis style");
    if l == 1 {
        return vec![1.0];
    }
    let alpha = 1.0 / l as f64;
    let logs: Vec<f64> = (0..l)
        .map(|_| rng.gamma(alpha + 1.0).ln() + rng.uniform_open0().ln() / alpha)
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Convex combination of the class-`class` basis styles.
pub fn assemble_style(weights: &[f64], bank: &StyleBank, class: Class) -> Result<(Vec<f64>, Vec<f64>)> {
    let basis = bank.basis(class);
    if basis.len() != weights.len() {
        return Err(Error::shape(
            "assemble_style",
            format!("{} weights for {} basis styles", weights.len(), basis.len()),
        ));
    }
    let c = bank.channels();
    let mut mu = vec![0.0; c];
    let mut sigma = vec![0.0; c];
    for (w, s) in weights.iter().zip(basis) {
        for ch in 0..c {
            mu[ch] += w * s.mu[ch];
            sigma[ch] += w * s.sigma[ch];
        }
    }
    Ok((mu, sigma))
}

/// Draws augmentation targets for a batch whose current styles are `stats`.
pub fn draw_targets(stats: &[StyleStats], bank: Option<&StyleBank>, mode: StyleAugment, rng: &mut Rng) -> Result<Option<StyleTargets>> {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = match mode {
        StyleAugment::Off => return Ok(None),
        StyleAugment::Csa => {
            let bank = bank.ok_or_else(|| Error::Config("style assembly needs a populated style bank".into()))?;
            stats
                .iter()
                .map(|s| {
                    let w = sample_weights(bank.basis(s.class).len(), rng);
                    assemble_style(&w, bank, s.class)
                })
                .collect::<Result<_>>()?
        }
        StyleAugment::RandomMix => stats
            .iter()
            .map(|s| {
                let partner = &stats[rng.below(stats.len())];
                let lam = rng.beta(0.1, 0.1);
                let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
                (mix(&s.mu, &partner.mu), mix(&s.sigma, &partner.sigma))
            })
            .collect(),
    };
    StyleTargets::from_stats(&rows).map(Some)
}

/// `sigma_aug · (F − μ(F)) / σ(F) + mu_aug` per channel, recorded on the tape.
pub fn reassemble_on_tape(tape: &mut Tape, features: Var, targets: &StyleTargets, eps: f64) -> Result<Var> {
    let normalized = tape.instance_norm(features, eps)?;
    let scale = tape.constant(targets.sigma.clone());
    let shift = tape.constant(targets.mu.clone());
    tape.channel_affine(normalized, scale, shift)
}

/// Plain-tensor reassembly of an `N×C×H×W` map to the given targets.
pub fn reassemble(features: &Tensor, targets: &StyleTargets, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let f = tape.constant(features.clone());
    let out = reassemble_on_tape(&mut tape, f, targets, eps)?;
    Ok(tape.value(out).clone())
}

/// Targets equal to each instance's own statistics (AdaIN identity).
pub fn identity_targets(features: &Tensor) -> Result<StyleTargets> {
    let n = features.shape()[0];
    let stats = compute_style_stats(features, &vec![Class::Real; n], NORM_EPS)?;
    let rows: Vec<_> = stats.into_iter().map(|s| (s.mu, s.sigma)).collect();
    StyleTargets::from_stats(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mu: &[f64], sigma: &[f64], class: Class) -> StyleStats {
        StyleStats {
            mu: mu.to_vec(),
            sigma: sigma.to_vec(),
            class,
        }
    }

    #[test]
    fn style_stats_examples() {
        let f = Tensor::full(&[1, 1, 2, 2], 3.0);
        let s = &compute_style_stats(&f, &[Class::Real], 1e-5).unwrap()[0];
        assert_eq!(s.mu, vec![3.0]);
        assert!((s.sigma[0] - 1e-5f64.sqrt()).abs() < 1e-15);

        let f = Tensor::new(&[1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        let s = &compute_style_stats(&f, &[Class::Spoof], 1e-5).unwrap()[0];
        assert_eq!(s.mu, vec![1.0]);
        assert!((s.sigma[0] - (1.0 + 1e-5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fps_hand_traced() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 3.0, 7.0].iter().map(|&v| vec![v]).collect();
        assert_eq!(fps_select(&pts, 2).unwrap(), vec![3, 0]);
        assert_eq!(fps_select(&pts, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(fps_select(&pts, 9).unwrap(), vec![0, 1, 2, 3]);
        let same = vec![vec![1.0, 2.0]; 6];
        assert_eq!(fps_select(&same, 3).unwrap(), vec![0, 1, 2]);
        assert!(fps_select(&[], 2).is_err());
    }

    #[test]
    fn dirichlet_single_and_simplex() {
        let mut rng = Rng::new(1);
        assert_eq!(sample_weights(1, &mut rng), vec![1.0]);
        for l in [2, 3, 16, 64] {
            for _ in 0..200 {
                let w = sample_weights(l, &mut rng);
                assert!(w.iter().all(|&v| v >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assemble_examples() {
        let bank = StyleBank {
            real: vec![
                stats(&[1.0, 0.0], &[1.0, 2.0], Class::Real),
                stats(&[2.0, 1.0], &[0.5, 1.0], Class::Real),
                stats(&[4.0, -1.0], &[2.0, 3.0], Class::Real),
            ],
            spoof: vec![stats(&[9.0, 9.0], &[9.0, 9.0], Class::Spoof); 3],
            epoch_stamp: 0,
        };
        let (mu, sigma) = assemble_style(&[0.0, 1.0, 0.0], &bank, Class::Real).unwrap();
        assert_eq!((mu, sigma), (vec![2.0, 1.0], vec![0.5, 1.0]));

        let w = [0.2, 0.3, 0.5];
        let (mu, sigma) = assemble_style(&w, &bank, Class::Real).unwrap();
        let expect_mu = [0.2 * 1.0 + 0.3 * 2.0 + 0.5 * 4.0, 0.2 * 0.0 + 0.3 * 1.0 + 0.5 * -1.0];
        let expect_sigma = [0.2 * 1.0 + 0.3 * 0.5 + 0.5 * 2.0, 0.2 * 2.0 + 0.3 * 1.0 + 0.5 * 3.0];
        for i in 0..2 {
            assert!((mu[i] - expect_mu[i]).abs() < 1e-12);
            assert!((sigma[i] - expect_sigma[i]).abs() < 1e-12);
        }
        let (mu, _) = assemble_style(&[1.0 / 3.0; 3], &bank, Class::Spoof).unwrap();
        assert!(mu.iter().all(|&m| (m - 9.0).abs() < 1e-12));
    }

    #[test]
    fn reassemble_two_point_channel() {
        let f = Tensor::new(&[1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        let targets = StyleTargets {
            mu: Tensor::new(&[1, 1], vec![5.0]).unwrap(),
            sigma: Tensor::new(&[1, 1], vec![2.0]).unwrap(),
        };
        // With eps → 0 the normalized channel is [−1, 1].
        let out = reassemble(&f, &targets, 1e-300).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn csa_targets_need_bank() {
        let s = vec![stats(&[0.0], &[1.0], Class::Real)];
        let mut rng = Rng::new(0);
        assert!(draw_targets(&s, None, StyleAugment::Csa, &mut rng).is_err());
        assert!(draw_targets(&s, None, StyleAugment::Off, &mut rng).unwrap().is_none());
    }
}
