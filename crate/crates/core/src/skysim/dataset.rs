//! On-disk datasets: `manifest.json` plus `img_<id>.grid` / `src_<id>.json`
//! per sample.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{simulate_sample, CountMap, IntensityMap, SkyConfig, SkySample, SourceList};
use crate::error::{Error, Result};
use crate::grid::{write_atomic, GridData, RawGrid};

pub const DEFAULT_SPLIT: [f64; 3] = [0.72, 0.18, 0.10];
pub const MANIFEST_FORMAT: &str = "gammaspot-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub split: Split,
    pub n_sources: usize,
    pub image: String,
    pub sources: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config: SkyConfig,
    pub seed: u64,
    pub n_images: usize,
    pub split: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_template: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

/// Partition sizes: train and validation take the floor of their share, test
/// takes the remainder.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {fractions:?} must lie in [0, 1] and sum to 1"
        )));
    }
    let train = ((n as f64 * fractions[0]) + 1e-9).floor() as usize;
    let val = (((n as f64 * fractions[1]) + 1e-9).floor() as usize).min(n - train);
    Ok([train, val, n - train - val])
}

pub fn image_file(id: usize) -> String {
    format!("img_{id:05}.grid")
}

pub fn sources_file(id: usize) -> String {
    format!("src_{id:05}.json")
}

pub fn write_count_map(path: &Path, image: &CountMap) -> Result<()> {
    RawGrid::new(
        image.width,
        image.height,
        GridData::Counts(image.counts.clone()),
    )?
    .write(path)
}

pub fn read_count_map(path: &Path) -> Result<CountMap> {
    let grid = RawGrid::read(path)?;
    match grid.data {
        GridData::Counts(counts) => Ok(CountMap {
            width: grid.width,
            height: grid.height,
            counts,
        }),
        _ => Err(Error::format(path, "count maps must use dtype 0")),
    }
}

pub fn write_sources(path: &Path, sources: &SourceList) -> Result<()> {
    write_atomic(path, sources.to_json()?.as_bytes())
}

pub fn read_sources(path: &Path) -> Result<SourceList> {
    SourceList::from_json(&fs::read_to_string(path)?)
}

/// Simulates `n_images` samples and writes them under `out_dir`.
///
/// Output bytes depend only on `cfg` (including its seed), `n_images`,
/// `split` and the template, never on scheduling.
pub fn generate_dataset(
    cfg: &SkyConfig,
    n_images: usize,
    split: [f64; 3],
    out_dir: &Path,
    template: Option<(&str, &IntensityMap)>,
) -> Result<DatasetManifest> {
    use rayon::prelude::*;

    cfg.validate()?;
    if n_images == 0 {
        return Err(Error::config("a dataset needs at least one image"));
    }
    let [n_train, n_val, _] = split_counts(n_images, split)?;
    fs::create_dir_all(out_dir)?;
    let bg = template.map(|(_, m)| m);

    let entries = (0..n_images)
        .into_par_iter()
        .map(|id| {
            let sample = simulate_sample(cfg, id as u64, bg)?;
            let entry = ManifestEntry {
                id,
                split: if id < n_train {
                    Split::Train
                } else if id < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                },
                n_sources: sample.truth.len(),
                image: image_file(id),
                sources: sources_file(id),
            };
            write_count_map(&out_dir.join(&entry.image), &sample.image)?;
            write_sources(&out_dir.join(&entry.sources), &sample.truth)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.to_string(),
        config: cfg.clone(),
        seed: cfg.seed,
        n_images,
        split,
        background_template: template.map(|(name, _)| name.to_string()),
        entries,
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub train: Vec<SkySample>,
    pub val: Vec<SkySample>,
    pub test: Vec<SkySample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SkySample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Entry ids of a split, aligned with [`Dataset::split`].
    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.manifest
            .entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.id)
            .collect()
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported format {:?}", manifest.format),
        ));
    }
    let mut ds = Dataset {
        dir: dir.to_path_buf(),
        manifest: manifest.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for entry in &manifest.entries {
        let image = read_count_map(&dir.join(&entry.image))?;
        let truth = read_sources(&dir.join(&entry.sources))?;
        truth.check_bounds(image.width, image.height)?;
        let sample = SkySample {
            image,
            truth,
            intensity: None,
        };
        match entry.split {
            Split::Train => ds.train.push(sample),
            Split::Val => ds.val.push(sample),
            Split::Test => ds.test.push(sample),
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_then_remainder() {
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(split_counts(4099, DEFAULT_SPLIT).unwrap(), [2951, 737, 411]);
        assert!(split_counts(10, [0.5, 0.2, 0.2]).is_err());
        assert!(split_counts(10, [1.2, -0.1, -0.1]).is_err());
    }

    #[test]
    fn regenerated_dataset_is_byte_identical() {
        let cfg = SkyConfig {
            width: 24,
            height: 24,
            seed: 99,
            ..SkyConfig::desk()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(&cfg, 10, [0.8, 0.1, 0.1], a.path(), None).unwrap();
        generate_dataset(&cfg, 10, [0.8, 0.1, 0.1], b.path(), None).unwrap();
        let splits: Vec<Split> = ma.entries.iter().map(|e| e.split).collect();
        assert_eq!(splits.iter().filter(|&&s| s == Split::Train).count(), 8);
        assert_eq!(splits.iter().filter(|&&s| s == Split::Val).count(), 1);
        for name in ["manifest.json", "img_00003.grid", "src_00009.json"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
        let ds = load_dataset(a.path()).unwrap();
        assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (8, 1, 1));
        let direct = simulate_sample(&cfg, 9, None).unwrap();
        assert_eq!(ds.test[0].image, direct.image);
        assert_eq!(ds.test[0].truth, direct.truth);
    }
}
