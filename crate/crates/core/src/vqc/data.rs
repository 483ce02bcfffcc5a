use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Features, VqcError, N_FEATURES};

pub const IRIS_CSV: &str = include_str!("../../fixtures/iris.csv");

/// Dimension of the synthetic genomic samples before projection.
pub const GENOMIC_RAW_DIM: usize = 32;

/// Fraction of each device shard held out for validation.
const DEVICE_VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Features>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<Features>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, VqcError> {
        if features.len() != labels.len() {
            return Err(VqcError::Data(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(VqcError::Label { label, n_classes });
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Rows in a seeded random order.
    fn shuffled_indices(&self, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx
    }
}

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: Features,
    pub std: Features,
}

impl Standardizer {
    /// Population statistics of `data`; constant features keep scale 1.
    pub fn fit(data: &Dataset) -> Result<Self, VqcError> {
        if data.is_empty() {
            return Err(VqcError::EmptySplit);
        }
        let n = data.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for x in &data.features {
            for k in 0..N_FEATURES {
                mean[k] += x[k] / n;
            }
        }
        for x in &data.features {
            for k in 0..N_FEATURES {
                std[k] += (x[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        let features = data
            .features
            .iter()
            .map(|x| std::array::from_fn(|k| (x[k] - self.mean[k]) / self.std[k]))
            .collect();
        Dataset {
            features,
            labels: data.labels.clone(),
            n_classes: data.n_classes,
        }
    }
}

fn parse_dataset_csv(text: &str) -> Result<Dataset, VqcError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let width = reader
        .headers()
        .map_err(|e| VqcError::Data(e.to_string()))?
        .len();
    if width != N_FEATURES + 1 {
        return Err(VqcError::Data(format!(
            "expected {} columns, found {width}",
            N_FEATURES + 1
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for row in reader.deserialize::<(f64, f64, f64, f64, usize)>() {
        let (a, b, c, d, y) = row.map_err(|e| VqcError::Data(e.to_string()))?;
        features.push([a, b, c, d]);
        labels.push(y);
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, n_classes)
}

/// Reads a headed CSV of four feature columns and an integer label.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset, VqcError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VqcError::Data(format!("{}: {e}", path.display())))?;
    parse_dataset_csv(&text)
}

/// The bundled IRIS table: 150 rows, 4 features, 3 classes.
pub fn load_iris() -> Result<Dataset, VqcError> {
    parse_dataset_csv(IRIS_CSV)
}

/// Shuffles and holds out `round(server_fraction * n)` rows for the server.
/// Returns `(device_pool, server_set)`.
pub fn train_server_split(
    data: &Dataset,
    server_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), VqcError> {
    if !(0.0..1.0).contains(&server_fraction) {
        return Err(VqcError::Data(format!(
            "server fraction {server_fraction} outside [0, 1)"
        )));
    }
    let idx = data.shuffled_indices(seed);
    let n_server = (server_fraction * data.len() as f64).round() as usize;
    let (server, pool) = idx.split_at(n_server);
    Ok((data.subset(pool), data.subset(server)))
}

/// Two-class Gaussian mixture in `GENOMIC_RAW_DIM` dimensions reduced to
/// the four highest-variance coordinates of the training draw.
///
/// Each coordinate carries unit noise plus a class-dependent shift whose
/// size decays geometrically over a seeded ordering of the coordinates, so
/// the retained coordinates are the most informative ones. Returns
/// `(train, server)`.
pub fn synth_genomic(
    n_train: usize,
    n_server: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), VqcError> {
    if n_train == 0 || n_server == 0 {
        return Err(VqcError::EmptySplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..GENOMIC_RAW_DIM).collect();
    order.shuffle(&mut rng);
    let mut shift = [0.0; GENOMIC_RAW_DIM];
    for (rank, &d) in order.iter().enumerate() {
        shift[d] = 1.5 * 0.75f64.powi(rank as i32);
    }

    let mut draw = |n: usize| -> (Vec<[f64; GENOMIC_RAW_DIM]>, Vec<usize>) {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let y: usize = rng.gen_range(0..2);
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let x: [f64; GENOMIC_RAW_DIM] = std::array::from_fn(|d| {
                let z: f64 = rng.sample(StandardNormal);
                z + sign * shift[d]
            });
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    };
    let (train_raw, train_y) = draw(n_train);
    let (server_raw, server_y) = draw(n_server);

    let n = n_train as f64;
    let var: Vec<f64> = (0..GENOMIC_RAW_DIM)
        .map(|d| {
            let m = train_raw.iter().map(|x| x[d]).sum::<f64>() / n;
            train_raw.iter().map(|x| (x[d] - m).powi(2)).sum::<f64>() / n
        })
        .collect();
    let mut ranked: Vec<usize> = (0..GENOMIC_RAW_DIM).collect();
    ranked.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let keep: [usize; N_FEATURES] = std::array::from_fn(|k| ranked[k]);

    let project = |raw: &[[f64; GENOMIC_RAW_DIM]]| -> Vec<Features> {
        raw.iter()
            .map(|x| std::array::from_fn(|k| x[keep[k]]))
            .collect()
    };
    Ok((
        Dataset::new(project(&train_raw), train_y, 2)?,
        Dataset::new(project(&server_raw), server_y, 2)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSplit {
    pub train: Dataset,
    pub val: Dataset,
}

/// Shuffles, deals rows into `n_devices` near-equal disjoint shards, and
/// splits each shard 80/20 into train and validation.
pub fn partition_iid(
    data: &Dataset,
    n_devices: usize,
    seed: u64,
) -> Result<Vec<DeviceSplit>, VqcError> {
    if n_devices == 0 || n_devices > data.len() {
        return Err(VqcError::TooManyDevices {
            devices: n_devices,
            samples: data.len(),
        });
    }
    let idx = data.shuffled_indices(seed);
    let base = data.len() / n_devices;
    let extra = data.len() % n_devices;
    let mut start = 0;
    let mut out = Vec::with_capacity(n_devices);
    for d in 0..n_devices {
        let size = base + usize::from(d < extra);
        let shard = &idx[start..start + size];
        start += size;
        let n_val = if size >= 2 {
            ((DEVICE_VAL_FRACTION * size as f64).round() as usize).clamp(1, size - 1)
        } else {
            0
        };
        let (val, train) = shard.split_at(n_val);
        out.push(DeviceSplit {
            train: data.subset(train),
            val: data.subset(val),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iris_shape() {
        let iris = load_iris().unwrap();
        assert_eq!(iris.len(), 150);
        assert_eq!(iris.n_classes, 3);
        for c in 0..3 {
            assert_eq!(iris.labels.iter().filter(|&&l| l == c).count(), 50);
        }
        assert_eq!(iris.features[0], [5.1, 3.5, 1.4, 0.2]);
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = load_dataset_csv(Path::new("/nonexistent/iris.csv"));
        assert!(matches!(err, Err(VqcError::Data(_))));
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let iris = load_iris().unwrap();
        let s = Standardizer::fit(&iris).unwrap();
        let z = s.transform(&iris);
        for k in 0..N_FEATURES {
            let m: f64 = z.features.iter().map(|x| x[k]).sum::<f64>() / 150.0;
            let v: f64 = z.features.iter().map(|x| x[k] * x[k]).sum::<f64>() / 150.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_disjoint_and_covering() {
        let iris = load_iris().unwrap();
        let tag = |x: &Features| x.map(f64::to_bits);
        let shards = partition_iid(&iris, 3, 11).unwrap();
        assert_eq!(shards.len(), 3);
        let sizes: Vec<usize> = shards.iter().map(|s| s.train.len() + s.val.len()).collect();
        assert_eq!(sizes, [50, 50, 50]);
        assert!(shards.iter().all(|s| s.val.len() == 10));
        let mut seen: Vec<_> = shards
            .iter()
            .flat_map(|s| s.train.features.iter().chain(&s.val.features))
            .map(tag)
            .collect();
        let mut all: Vec<_> = iris.features.iter().map(tag).collect();
        seen.sort();
        all.sort();
        assert_eq!(seen, all);

        let one = partition_iid(&iris, 1, 0).unwrap();
        assert_eq!(one[0].train.len() + one[0].val.len(), 150);
        assert!(partition_iid(&iris, 151, 0).is_err());
        assert!(partition_iid(&iris, 0, 0).is_err());
    }

    #[test]
    fn server_split_sizes() {
        let iris = load_iris().unwrap();
        let (pool, server) = train_server_split(&iris, 0.2, 1).unwrap();
        assert_eq!((pool.len(), server.len()), (120, 30));
    }

    #[test]
    fn genomic_labels_binary_and_seeded() {
        let (train, server) = synth_genomic(500, 150, 3).unwrap();
        assert_eq!((train.len(), server.len()), (500, 150));
        assert!(train.labels.iter().chain(&server.labels).all(|&y| y < 2));
        assert_eq!(synth_genomic(500, 150, 3).unwrap().0, train);
        let shards = partition_iid(&train, 20, 0).unwrap();
        assert_eq!(shards.len(), 20);
    }
}
