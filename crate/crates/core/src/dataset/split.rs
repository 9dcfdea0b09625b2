use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DatasetIndex, Sample, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    StratifiedRandom,
    GroupedBySubject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SplitSpec {
    /// (train, val, test)
    pub ratios: [f64; 3],
    pub seed: u64,
    pub strategy: SplitStrategy,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.70, 0.15, 0.15],
            seed: 42,
            strategy: SplitStrategy::StratifiedRandom,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Split {
    pub fn parts(&self) -> [(&'static str, &[Sample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn by_name(&self, name: &str) -> Option<&[Sample]> {
        self.parts().into_iter().find(|(n, _)| *n == name).map(|(_, s)| s)
    }
}

/// Partitions the index. Each partition comes back sorted by path.
pub fn split(index: &DatasetIndex, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Split::default();
    match spec.strategy {
        SplitStrategy::StratifiedRandom => {
            let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); NUM_CLASSES];
            for s in &index.samples {
                by_class[s.class_id].push(s);
            }
            for mut members in by_class {
                members.shuffle(&mut rng);
                let n = members.len() as f64;
                let n_train = (spec.ratios[0] * n).round() as usize;
                let n_val = ((spec.ratios[1] * n).round() as usize).min(members.len() - n_train);
                for (i, s) in members.into_iter().enumerate() {
                    let dst = if i < n_train {
                        &mut out.train
                    } else if i < n_train + n_val {
                        &mut out.val
                    } else {
                        &mut out.test
                    };
                    dst.push(s.clone());
                }
            }
        }
        SplitStrategy::GroupedBySubject => {
            let mut groups: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
            for s in &index.samples {
                let subject = s.subject.as_deref().ok_or_else(|| {
                    Error::Dataset(format!("grouped split needs subject ids; {} has none", s.path))
                })?;
                groups.entry(subject).or_default().push(s);
            }
            let mut groups: Vec<Vec<&Sample>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            let total = index.len() as f64;
            let mut filled = [0usize; 3];
            for group in groups {
                // Largest remaining relative deficit wins; ties go to the earlier partition.
                let part = (0..3)
                    .max_by(|&a, &b| {
                        let da = spec.ratios[a] - filled[a] as f64 / total;
                        let db = spec.ratios[b] - filled[b] as f64 / total;
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                filled[part] += group.len();
                let dst = [&mut out.train, &mut out.val, &mut out.test];
                dst.into_iter().nth(part).unwrap().extend(group.into_iter().cloned());
            }
        }
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_by(|a, b| a.path.cmp(&b.path));
    }
    Ok(out)
}

/// Writes `train.txt`, `val.txt` and `test.txt`, one relative path per line.
pub fn write_manifests(dir: impl AsRef<Path>, split: &Split) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (name, samples) in split.parts() {
        let mut text = String::new();
        for s in samples {
            text.push_str(&s.path);
            text.push('\n');
        }
        fs::write(dir.join(format!("{name}.txt")), text)?;
    }
    Ok(())
}

/// Reads a manifest back, resolving class ids from the leading `cN/` component.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let code = line.split('/').next().unwrap_or_default();
            let class_id = super::class_id(code)
                .ok_or_else(|| Error::Dataset(format!("manifest entry {line:?} has no class directory")))?;
            Ok(Sample {
                path: line.to_owned(),
                class_id,
                subject: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn index(per_class: usize, subjects: usize) -> DatasetIndex {
        let mut samples = Vec::new();
        for c in 0..NUM_CLASSES {
            for i in 0..per_class {
                samples.push(Sample {
                    path: format!("c{c}/img_{i:05}.jpg"),
                    class_id: c,
                    subject: (subjects > 0).then(|| format!("p{:03}", (i * 7 + c) % subjects)),
                });
            }
        }
        samples.sort_by(|a, b| a.path.cmp(&b.path));
        DatasetIndex {
            samples,
            ..Default::default()
        }
    }

    fn spec(seed: u64, strategy: SplitStrategy) -> SplitSpec {
        SplitSpec {
            seed,
            strategy,
            ..SplitSpec::default()
        }
    }

    #[test]
    fn stratified_exact_counts() {
        let s = split(&index(100, 0), &spec(1, SplitStrategy::StratifiedRandom)).unwrap();
        for c in 0..NUM_CLASSES {
            let count = |p: &[Sample]| p.iter().filter(|s| s.class_id == c).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (70, 15, 15));
        }
    }

    #[test]
    fn seeds_are_deterministic_and_distinct() {
        let idx = index(100, 0);
        let a = split(&idx, &spec(5, SplitStrategy::StratifiedRandom)).unwrap();
        let b = split(&idx, &spec(5, SplitStrategy::StratifiedRandom)).unwrap();
        let c = split(&idx, &spec(6, SplitStrategy::StratifiedRandom)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn grouped_is_subject_disjoint() {
        let idx = index(40, 10);
        let s = split(&idx, &spec(3, SplitStrategy::GroupedBySubject)).unwrap();
        let subjects = |p: &[Sample]| -> HashSet<String> { p.iter().filter_map(|s| s.subject.clone()).collect() };
        let (tr, va, te) = (subjects(&s.train), subjects(&s.val), subjects(&s.test));
        // Brute-force pairwise intersection.
        for a in &tr {
            assert!(!va.contains(a) && !te.contains(a));
        }
        for a in &va {
            assert!(!te.contains(a));
        }
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), idx.len());
        assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
    }

    #[test]
    fn grouped_without_subjects_fails() {
        assert!(split(&index(5, 0), &spec(0, SplitStrategy::GroupedBySubject)).is_err());
    }

    #[test]
    fn bad_ratios_rejected() {
        let mut sp = SplitSpec::default();
        sp.ratios = [0.7, 0.2, 0.2];
        assert!(split(&index(3, 0), &sp).is_err());
        sp.ratios = [1.0, 0.0, 0.0];
        assert!(split(&index(3, 0), &sp).is_err());
    }

    #[test]
    fn manifests_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = split(&index(10, 0), &SplitSpec::default()).unwrap();
        write_manifests(dir.path(), &s).unwrap();
        let test = read_manifest(dir.path().join("test.txt")).unwrap();
        assert_eq!(test.len(), s.test.len());
        assert_eq!(test[0].path, s.test[0].path);
        assert_eq!(test[0].class_id, s.test[0].class_id);
    }
}
