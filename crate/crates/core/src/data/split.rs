use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{seed, LabeledSample};
use crate::error::{Error, Result};

pub const MIN_SAMPLES_PER_CLASS: usize = 5;
pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

/// Assignment of every sample id to exactly one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    /// `(sample id, class)` in manifest order, per split.
    pub train: Vec<(String, usize)>,
    pub validation: Vec<(String, usize)>,
    pub test: Vec<(String, usize)>,
}

impl SplitManifest {
    pub fn part(&self, split: Split) -> &[(String, usize)] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// `counts[class] = [train, validation, test]`.
    pub fn class_counts(&self) -> Vec<[usize; 3]> {
        let k = Split::ALL
            .iter()
            .flat_map(|s| self.part(*s).iter().map(|(_, c)| c + 1))
            .max()
            .unwrap_or(0);
        let mut counts = vec![[0; 3]; k];
        for (i, s) in Split::ALL.iter().enumerate() {
            for (_, c) in self.part(*s) {
                counts[*c][i] += 1;
            }
        }
        counts
    }

    /// Samples of one split, in manifest order.
    pub fn select(&self, samples: &[LabeledSample], split: Split) -> Result<Vec<LabeledSample>> {
        let by_id: HashMap<&str, &LabeledSample> =
            samples.iter().map(|s| (s.source.as_str(), s)).collect();
        self.part(split)
            .iter()
            .map(|(id, _)| {
                by_id
                    .get(id.as_str())
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Dataset(format!("manifest sample {id:?} not in dataset")))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,class,split\n");
        for split in Split::ALL {
            for (id, class) in self.part(split) {
                writeln!(out, "{id},{class},{}", split.name()).unwrap();
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |reason: String| Error::Format {
            kind: "split manifest",
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        if lines.next() != Some("sample_id,class,split") {
            return Err(bad("missing header".into()));
        }
        let mut manifest = SplitManifest {
            seed: 0,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for line in lines.filter(|l| !l.is_empty()) {
            // ids may contain commas; the last two fields never do
            let mut fields = line.rsplitn(3, ',');
            let (Some(split), Some(class), Some(id)) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(bad(format!("bad row {line:?}")));
            };
            let class: usize = class.parse().map_err(|_| bad(format!("bad class in {line:?}")))?;
            let entry = (id.to_string(), class);
            match Split::parse(split).map_err(|e| bad(e.to_string()))? {
                Split::Train => manifest.train.push(entry),
                Split::Validation => manifest.validation.push(entry),
                Split::Test => manifest.test.push(entry),
            }
        }
        Ok(manifest)
    }
}

/// Largest-remainder allocation of `n` items over `ratios`. Ties in the
/// fractional part go to the earlier split.
pub fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    // the small slack absorbs representation error in products like 10 * 0.6
    let mut counts: [usize; 3] = std::array::from_fn(|i| (quotas[i] + 1e-9).floor() as usize);
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Per-class shuffled partition into train/validation/test.
pub fn stratified_split(samples: &[LabeledSample], ratios: [f64; 3], seed: u64) -> Result<SplitManifest> {
    if ratios.iter().any(|r| *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument(format!("bad split ratios {ratios:?}")));
    }
    let k = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); k];
    for s in samples {
        by_class[s.label].push(&s.source);
    }
    let mut manifest = SplitManifest {
        seed,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (class, ids) in by_class.iter_mut().enumerate() {
        if ids.len() < MIN_SAMPLES_PER_CLASS {
            return Err(Error::Dataset(format!(
                "class {class} has {} samples; stratified splitting needs at least {MIN_SAMPLES_PER_CLASS}",
                ids.len()
            )));
        }
        ids.sort_unstable();
        let mut rng = seed::stream(seed, "split", "", class as u64);
        ids.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(ids.len(), &ratios);
        for (i, id) in ids.iter().enumerate() {
            let entry = (id.to_string(), class);
            if i < n_train {
                manifest.train.push(entry);
            } else if i < n_train + n_val {
                manifest.validation.push(entry);
            } else {
                manifest.test.push(entry);
            }
        }
    }
    Ok(manifest)
}
