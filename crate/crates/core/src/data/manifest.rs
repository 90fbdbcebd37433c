//! Dataset manifests and seeded partitioning.
//!
//! A manifest is a UTF-8 CSV with header `image,mask,client`, one row per
//! sample, paths relative to the manifest's directory. Paths must not
//! contain commas; no quoting is performed.

use std::path::{Path, PathBuf};

use super::pgm::read_pgm;
use super::Sample;
use crate::error::{Error, Result};
use crate::rng::Xoshiro256pp;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Image path relative to the manifest directory.
    pub image: String,
    /// Mask path relative to the manifest directory.
    pub mask: String,
    pub client: usize,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.csv";

impl Manifest {
    /// Build a manifest in memory, checking the client-id invariant
    /// (contiguous from 0).
    pub fn new(dir: PathBuf, entries: Vec<ManifestEntry>) -> Result<Manifest> {
        if entries.is_empty() {
            return Err(Error::InvalidData("manifest has no entries".to_string()));
        }
        let max_client = entries.iter().map(|e| e.client).max().unwrap();
        for c in 0..=max_client {
            if !entries.iter().any(|e| e.client == c) {
                return Err(Error::InvalidData(format!(
                    "client ids not contiguous: {c} missing (max {max_client})"
                )));
            }
        }
        Ok(Manifest { dir, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_clients(&self) -> usize {
        self.entries.iter().map(|e| e.client).max().unwrap_or(0) + 1
    }

    /// Sample count per client id.
    pub fn client_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_clients()];
        for e in &self.entries {
            counts[e.client] += 1;
        }
        counts
    }

    /// Load `dir/manifest.csv` (or an explicit CSV path), verifying every
    /// referenced file exists.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "image,mask,client")) => {}
            Some((_, other)) => {
                return Err(Error::InvalidData(format!(
                    "{}: bad header {other:?}, expected \"image,mask,client\"",
                    path.display()
                )))
            }
            None => {
                return Err(Error::InvalidData(format!(
                    "{}: empty manifest",
                    path.display()
                )))
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidData(format!(
                    "{} line {}: expected 3 fields, got {}",
                    path.display(),
                    i + 1,
                    fields.len()
                )));
            }
            let client = fields[2].parse::<usize>().map_err(|_| {
                Error::InvalidData(format!(
                    "{} line {}: bad client id {:?}",
                    path.display(),
                    i + 1,
                    fields[2]
                ))
            })?;
            for rel in [fields[0], fields[1]] {
                let full = dir.join(rel);
                if !full.is_file() {
                    return Err(Error::InvalidData(format!(
                        "{} line {}: referenced file {} does not exist",
                        path.display(),
                        i + 1,
                        full.display()
                    )));
                }
            }
            entries.push(ManifestEntry {
                image: fields[0].to_string(),
                mask: fields[1].to_string(),
                client,
            });
        }
        Manifest::new(dir, entries)
    }

    /// Write `dir/manifest.csv`.
    pub fn save(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = String::from("image,mask,client\n");
        for e in &self.entries {
            if e.image.contains(',') || e.mask.contains(',') {
                return Err(Error::InvalidData(format!(
                    "path contains a comma: {} / {}",
                    e.image, e.mask
                )));
            }
            text.push_str(&format!("{},{},{}\n", e.image, e.mask, e.client));
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Read every referenced image/mask pair into memory.
    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|e| {
                let image = read_pgm(&self.dir.join(&e.image))?;
                let mask = read_pgm(&self.dir.join(&e.mask))?;
                Sample::new(image, mask)
            })
            .collect()
    }
}

/// Assign `n_samples` to `k_clients` shards: seeded shuffle, contiguous
/// split, sizes differing by at most one (earlier shards take the
/// remainder). Returns the client id of each sample.
pub fn partition(n_samples: usize, k_clients: usize, seed: u64) -> Result<Vec<usize>> {
    if k_clients < 1 {
        return Err(Error::InvalidConfig("k_clients must be >= 1".to_string()));
    }
    if k_clients > n_samples {
        return Err(Error::InvalidConfig(format!(
            "k_clients {k_clients} exceeds sample count {n_samples}"
        )));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = Xoshiro256pp::seeded(seed);
    rng.shuffle(&mut order);

    let base = n_samples / k_clients;
    let extra = n_samples % k_clients;
    let mut assignment = vec![0usize; n_samples];
    let mut cursor = 0usize;
    for client in 0..k_clients {
        let size = base + usize::from(client < extra);
        for &sample in &order[cursor..cursor + size] {
            assignment[sample] = client;
        }
        cursor += size;
    }
    Ok(assignment)
}

/// Seeded, disjoint, exhaustive train/validation split over `0..n`.
/// Validation takes `round(n * val_fraction)` samples.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidConfig(format!(
            "split of {n} samples at {val_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Xoshiro256pp::seeded(seed);
    rng.shuffle(&mut order);
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    Ok((train, val))
}

/// Manifest-level train/validation split.
pub fn split_train_val(
    manifest: &Manifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest)> {
    let (train_idx, val_idx) = split_indices(manifest.len(), val_fraction, seed)?;
    let pick = |idx: &[usize]| {
        idx.iter()
            .map(|&i| manifest.entries[i].clone())
            .collect::<Vec<_>>()
    };
    Ok((
        Manifest {
            dir: manifest.dir.clone(),
            entries: pick(&train_idx),
        },
        Manifest {
            dir: manifest.dir.clone(),
            entries: pick(&val_idx),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_1000_by_4_is_250_each() {
        let assignment = partition(1000, 4, 7).unwrap();
        let mut counts = [0usize; 4];
        for c in &assignment {
            counts[*c] += 1;
        }
        assert_eq!(counts, [250, 250, 250, 250]);
    }

    #[test]
    fn partition_10_by_3_is_4_3_3() {
        let assignment = partition(10, 3, 7).unwrap();
        let mut counts = [0usize; 3];
        for c in &assignment {
            counts[*c] += 1;
        }
        assert_eq!(counts, [4, 3, 3]);
    }

    #[test]
    fn partition_single_client_assigns_all_to_zero() {
        let assignment = partition(10, 1, 3).unwrap();
        assert!(assignment.iter().all(|&c| c == 0));
    }

    #[test]
    fn partition_rejects_more_clients_than_samples() {
        assert!(partition(3, 4, 0).is_err());
        assert!(partition(3, 0, 0).is_err());
    }

    #[test]
    fn partition_is_seeded() {
        assert_eq!(partition(100, 4, 9).unwrap(), partition(100, 4, 9).unwrap());
        assert_ne!(partition(100, 4, 9).unwrap(), partition(100, 4, 10).unwrap());
    }

    #[test]
    fn split_1000_at_point1_is_900_100() {
        let (train, val) = split_indices(1000, 0.1, 5).unwrap();
        assert_eq!(train.len(), 900);
        assert_eq!(val.len(), 100);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let (train, val) = split_indices(57, 0.2, 5).unwrap();
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_seeded() {
        assert_eq!(
            split_indices(100, 0.1, 5).unwrap(),
            split_indices(100, 0.1, 5).unwrap()
        );
    }

    #[test]
    fn split_rejects_degenerate_sides() {
        assert!(split_indices(5, 0.01, 0).is_err()); // val would be empty
        assert!(split_indices(5, 0.99, 0).is_err()); // train would be empty
        assert!(split_indices(5, 0.0, 0).is_err());
        assert!(split_indices(5, 1.0, 0).is_err());
    }

    #[test]
    fn manifest_rejects_non_contiguous_clients() {
        let entries = vec![
            ManifestEntry {
                image: "a.pgm".into(),
                mask: "b.pgm".into(),
                client: 0,
            },
            ManifestEntry {
                image: "c.pgm".into(),
                mask: "d.pgm".into(),
                client: 2,
            },
        ];
        assert!(Manifest::new(PathBuf::from("."), entries).is_err());
    }

    #[test]
    fn manifest_load_rejects_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        std::fs::write(&path, "image,mask,client\nnope.pgm,nope2.pgm,0\n").unwrap();
        let err = Manifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn manifest_round_trip() {
        use crate::data::{write_dataset, SynthConfig};
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            seed: 3,
            count: 6,
            size: 16,
            noise_sigma: 0.0,
        };
        let m = write_dataset(dir.path(), &cfg, 2).unwrap();
        let loaded = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.entries(), m.entries());
        assert_eq!(loaded.client_counts(), vec![3, 3]);
        let samples = loaded.load_samples().unwrap();
        assert_eq!(samples.len(), 6);
        // masks stay exactly binary through the PGM round trip
        for s in &samples {
            assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}
