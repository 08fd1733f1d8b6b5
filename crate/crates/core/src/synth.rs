//! Synthetic subjects with class signal in long-range correlations.
//!
//! ROIs are laid out on a ring and grouped into contiguous communities. Each
//! ROI follows its community latent. ROIs named in a planted pair carry an
//! extra component of strength `beta`. In class 1 the two ends of an active
//! pair share that component; otherwise each end draws its own, so marginal
//! variances match across classes and only the pair correlation differs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataset::{write_dataset, write_json, DatasetManifest, LabeledSeries};
use crate::error::{Error, Result};
use crate::graph::TimeSeriesTable;
use crate::matrix::Matrix;

pub const SYNTH_MANIFEST: &str = "synth_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub name: String,
    pub n_rois: usize,
    pub timepoints: usize,
    pub subjects_per_class: usize,
    pub communities: usize,
    pub community_size: usize,
    pub planted_pairs: Vec<(usize, usize)>,
    /// Planted pairs switched on per class-1 subject, drawn without
    /// replacement. `None` switches on every pair.
    pub active_pairs: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synthetic".into(),
            n_rois: 40,
            timepoints: 200,
            subjects_per_class: 200,
            communities: 8,
            community_size: 5,
            planted_pairs: vec![
                (0, 20),
                (5, 25),
                (10, 30),
                (15, 35),
                (2, 17),
                (7, 32),
                (12, 27),
                (22, 37),
            ],
            active_pairs: Some(1),
            alpha: 1.0,
            beta: 0.8,
            sigma: 0.1,
            seed: 0,
        }
    }
}

pub fn ring_distance(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

impl SynthConfig {
    pub fn min_ring_distance(&self) -> usize {
        self.n_rois / 4
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_rois < 4 || self.timepoints < 2 || self.subjects_per_class == 0 {
            return bad("need n_rois >= 4, timepoints >= 2 and subjects_per_class >= 1".into());
        }
        if self.communities * self.community_size > self.n_rois {
            return bad(format!(
                "{} communities of {} ROIs do not fit in {} ROIs",
                self.communities, self.community_size, self.n_rois
            ));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.sigma > 0.0)
            || ![self.alpha, self.beta, self.sigma].iter().all(|v| v.is_finite())
        {
            return bad("alpha, beta and sigma must be positive and finite".into());
        }
        let min = self.min_ring_distance();
        let mut used = Vec::new();
        for &(i, j) in &self.planted_pairs {
            if i >= self.n_rois || j >= self.n_rois {
                return bad(format!("planted pair ({i}, {j}) out of range"));
            }
            if ring_distance(i, j, self.n_rois) < min {
                return bad(format!(
                    "planted pair ({i}, {j}) has ring distance {} < {min}",
                    ring_distance(i, j, self.n_rois)
                ));
            }
            if used.contains(&i) || used.contains(&j) {
                return bad(format!("planted pair ({i}, {j}) reuses an ROI"));
            }
            used.extend([i, j]);
        }
        if let Some(k) = self.active_pairs {
            if k == 0 || k > self.planted_pairs.len() {
                return bad(format!("active_pairs {k} must lie in 1..={}", self.planted_pairs.len()));
            }
        }
        Ok(())
    }

    /// Community of ROI `i`, if any.
    pub fn community_of(&self, i: usize) -> Option<usize> {
        let c = i / self.community_size.max(1);
        (self.community_size > 0 && c < self.communities).then_some(c)
    }

    fn in_pair(&self, i: usize) -> bool {
        self.planted_pairs.iter().any(|&(a, b)| a == i || b == i)
    }

    /// Population variance of ROI `i`.
    fn variance(&self, i: usize) -> f64 {
        let mut v = self.sigma * self.sigma;
        if self.community_of(i).is_some() {
            v += self.alpha * self.alpha;
        }
        if self.in_pair(i) {
            v += self.beta * self.beta;
        }
        v
    }

    /// Population correlation of ROIs `i != j` for a class-1 subject in which
    /// the pair containing them (if any) is active.
    pub fn expected_correlation(&self, i: usize, j: usize, paired: bool) -> f64 {
        let mut cov = 0.0;
        if let (Some(a), Some(b)) = (self.community_of(i), self.community_of(j)) {
            if a == b {
                cov += self.alpha * self.alpha;
            }
        }
        if paired {
            cov += self.beta * self.beta;
        }
        cov / (self.variance(i) * self.variance(j)).sqrt()
    }
}

fn normal_series(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
    (0..t).map(|_| rng.sample(StandardNormal)).collect()
}

/// One subject's `timepoints × n_rois` series, a pure function of
/// `(cfg, label, seed)`.
pub fn generate_subject(cfg: &SynthConfig, label: usize, seed: u64) -> Result<Matrix> {
    cfg.validate()?;
    if label > 1 {
        return Err(Error::invalid(format!("label {label} is not binary")));
    }
    let (n, t) = (cfg.n_rois, cfg.timepoints);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let community: Vec<Vec<f64>> = (0..cfg.communities).map(|_| normal_series(&mut rng, t)).collect();
    let active: Vec<bool> = if label == 0 {
        vec![false; cfg.planted_pairs.len()]
    } else {
        match cfg.active_pairs {
            None => vec![true; cfg.planted_pairs.len()],
            Some(k) => {
                let mut on = vec![false; cfg.planted_pairs.len()];
                for idx in sample(&mut rng, cfg.planted_pairs.len(), k) {
                    on[idx] = true;
                }
                on
            }
        }
    };

    let mut extra: Vec<Option<Vec<f64>>> = vec![None; n];
    for (&(i, j), &on) in cfg.planted_pairs.iter().zip(&active) {
        if on {
            let shared = normal_series(&mut rng, t);
            extra[i] = Some(shared.clone());
            extra[j] = Some(shared);
        } else {
            extra[i] = Some(normal_series(&mut rng, t));
            extra[j] = Some(normal_series(&mut rng, t));
        }
    }

    let mut out = Matrix::zeros(t, n);
    for roi in 0..n {
        let c = cfg.community_of(roi);
        for step in 0..t {
            let mut v = cfg.sigma * rng.sample::<f64, _>(StandardNormal);
            if let Some(c) = c {
                v += cfg.alpha * community[c][step];
            }
            if let Some(e) = &extra[roi] {
                v += cfg.beta * e[step];
            }
            out.set(step, roi, v);
        }
    }
    Ok(out)
}

/// Subject seeds are drawn from a generator seeded by `cfg.seed`; subjects
/// alternate class 0 and class 1.
pub fn subject_seeds(cfg: &SynthConfig) -> Vec<(String, usize, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..2 * cfg.subjects_per_class)
        .map(|k| (format!("sub-{k:04}"), k % 2, rng.random::<u64>()))
        .collect()
}

pub fn generate_subjects(cfg: &SynthConfig) -> Result<Vec<LabeledSeries>> {
    cfg.validate()?;
    subject_seeds(cfg)
        .into_par_iter()
        .map(|(id, label, seed)| {
            Ok(LabeledSeries {
                table: TimeSeriesTable::new(id, generate_subject(cfg, label, seed)?)?,
                label,
            })
        })
        .collect()
}

/// Writes the dataset directory plus `synth_manifest.json` with the full config.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<DatasetManifest> {
    let subjects = generate_subjects(cfg)?;
    let manifest = write_dataset(dir, &cfg.name, &subjects)?;
    write_json(&dir.join(SYNTH_MANIFEST), cfg)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::pearson_matrix;

    fn small() -> SynthConfig {
        SynthConfig {
            n_rois: 12,
            timepoints: 400,
            subjects_per_class: 3,
            communities: 3,
            community_size: 4,
            planted_pairs: vec![(1, 9)],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = SynthConfig::default();
        cfg.validate().unwrap();
        for &(i, j) in &cfg.planted_pairs {
            assert!(ring_distance(i, j, 40) >= 10);
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = SynthConfig::default();
        let cases = [
            SynthConfig {
                planted_pairs: vec![(0, 5)],
                ..base.clone()
            },
            SynthConfig {
                planted_pairs: vec![(0, 40)],
                ..base.clone()
            },
            SynthConfig {
                planted_pairs: vec![(0, 20), (0, 25)],
                ..base.clone()
            },
            SynthConfig {
                beta: 0.0,
                ..base.clone()
            },
            SynthConfig {
                sigma: -1.0,
                ..base.clone()
            },
            SynthConfig {
                communities: 9,
                ..base.clone()
            },
            SynthConfig {
                active_pairs: Some(0),
                ..base.clone()
            },
            SynthConfig {
                active_pairs: Some(9),
                ..base.clone()
            },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert_eq!(ring_distance(2, 38, 40), 4);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small();
        assert_eq!(
            generate_subject(&cfg, 1, 7).unwrap(),
            generate_subject(&cfg, 1, 7).unwrap()
        );
        assert_ne!(
            generate_subject(&cfg, 1, 7).unwrap(),
            generate_subject(&cfg, 1, 8).unwrap()
        );
        let a = generate_subjects(&cfg).unwrap();
        let b = generate_subjects(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.iter().filter(|s| s.label == 1).count(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn vanishing_noise_makes_community_members_identical() {
        let cfg = SynthConfig { sigma: 1e-9, ..small() };
        let ts = TimeSeriesTable::new("s", generate_subject(&cfg, 0, 3).unwrap()).unwrap();
        let c = pearson_matrix(&ts).unwrap();
        assert!(c.get(4, 5) > 1.0 - 1e-9);
    }

    #[test]
    fn expected_correlation_closed_form() {
        let cfg = SynthConfig::default();
        // planted: beta² / (alpha² + beta² + sigma²)
        let want = 0.64 / (1.0 + 0.64 + 0.01);
        assert!((cfg.expected_correlation(2, 17, true) - want).abs() < 1e-15);
        assert_eq!(cfg.expected_correlation(2, 17, false), 0.0);
        assert!((cfg.expected_correlation(1, 3, false) - 1.0 / 1.01).abs() < 1e-15);
        let member = 1.0 / (1.01f64 * 1.65).sqrt();
        assert!((cfg.expected_correlation(0, 1, false) - member).abs() < 1e-15);
    }

    #[test]
    fn one_active_pair_per_subject() {
        let cfg = SynthConfig {
            timepoints: 2000,
            active_pairs: Some(1),
            ..SynthConfig::default()
        };
        for seed in 0..5 {
            let ts = TimeSeriesTable::new("s", generate_subject(&cfg, 1, seed).unwrap()).unwrap();
            let c = pearson_matrix(&ts).unwrap();
            let strong = cfg.planted_pairs.iter().filter(|&&(i, j)| c.get(i, j) > 0.3).count();
            assert_eq!(strong, 1);
        }
    }

    fn pair_correlation(cfg: &SynthConfig, label: usize, seed: u64, i: usize, j: usize) -> f64 {
        let m = generate_subject(cfg, label, seed).unwrap();
        let (a, b) = (m.col(i), m.col(j));
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn planted_pair_gap_matches_closed_form() {
        // every pair active, so each class-1 draw is the conditional "pair on" case
        let cfg = SynthConfig {
            active_pairs: None,
            ..SynthConfig::default()
        };
        let (i, j) = cfg.planted_pairs[4];
        let closed = cfg.expected_correlation(i, j, true) - cfg.expected_correlation(i, j, false);
        assert!(closed >= 0.2);
        let n = 5000;
        let mean = |label: usize| -> f64 {
            (0..n)
                .map(|s| pair_correlation(&cfg, label, 10_000 * label as u64 + s, i, j))
                .sum::<f64>()
                / n as f64
        };
        let gap = mean(1) - mean(0);
        // sample correlation is biased towards 0 by O(1/T)
        assert!((gap - closed).abs() < 0.01, "monte carlo {gap} vs closed form {closed}");
    }

    fn mean_correlation(cfg: &SynthConfig, label: usize, n: u64) -> Matrix {
        let mut acc = Matrix::zeros(cfg.n_rois, cfg.n_rois);
        for s in 0..n {
            let ts =
                TimeSeriesTable::new("s", generate_subject(cfg, label, 77 + 2 * s + label as u64).unwrap()).unwrap();
            acc.add_assign(&pearson_matrix(&ts).unwrap());
        }
        acc.scale(1.0 / n as f64)
    }

    #[test]
    fn classes_differ_only_on_planted_entries() {
        let cfg = SynthConfig::default();
        let diff = mean_correlation(&cfg, 1, 500)
            .sub(&mean_correlation(&cfg, 0, 500))
            .unwrap();
        let planted = |i: usize, j: usize| {
            cfg.planted_pairs
                .iter()
                .any(|&(a, b)| (a, b) == (i, j) || (b, a) == (i, j))
        };
        for i in 0..cfg.n_rois {
            for j in 0..cfg.n_rois {
                if !planted(i, j) {
                    assert!(diff.get(i, j).abs() < 0.05, "({i},{j}) differs by {}", diff.get(i, j));
                }
            }
        }
        // one of eight pairs is active per class-1 subject
        for &(i, j) in &cfg.planted_pairs {
            assert!(diff.get(i, j) > 0.02);
        }
    }

    #[test]
    fn negligible_beta_removes_the_signal() {
        let cfg = SynthConfig {
            beta: 1e-9,
            active_pairs: None,
            ..SynthConfig::default()
        };
        let diff = mean_correlation(&cfg, 1, 200)
            .sub(&mean_correlation(&cfg, 0, 200))
            .unwrap();
        assert!(diff.as_slice().iter().all(|d| d.abs() < 0.05));
    }

    #[test]
    fn dataset_regeneration_is_byte_identical() {
        let cfg = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = generate_dataset(&cfg, a.path()).unwrap();
        generate_dataset(&cfg, b.path()).unwrap();
        assert_eq!(m.subjects.len(), 6);
        for s in &m.subjects {
            let x = std::fs::read(a.path().join(&s.timeseries)).unwrap();
            let y = std::fs::read(b.path().join(&s.timeseries)).unwrap();
            assert_eq!(x, y);
        }
        let back: SynthConfig = crate::dataset::read_json(&a.path().join(SYNTH_MANIFEST)).unwrap();
        assert_eq!(back, cfg);
        let (_, series) = crate::dataset::load_series(a.path()).unwrap();
        assert_eq!(series, generate_subjects(&cfg).unwrap());
    }
}
