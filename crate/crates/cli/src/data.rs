//! Dataset ingestion: the CIFAR-10 binary format, CSV files, and synthetic
//! generators.
//!
//! The CIFAR-10 binary layout is fixed: records of exactly 3073 bytes, one
//! label byte in `[0, 9]` followed by 3072 channel-major pixel bytes
//! (red plane, green plane, blue plane of a 32x32 image). Pixels are scaled
//! to `[0, 1]`.

use crate::error::{CliError, Result};
use proxprop_core::rng::{self, Rng};
use proxprop_core::tensor::Tensor;
use proxprop_core::Dataset;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CIFAR_RECORD_BYTES: usize = 3073;
pub const CIFAR_FEATURES: usize = 3072;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_IMAGE_SHAPE: (usize, usize, usize) = (3, 32, 32);

/// Loads the first `subset_size` records from the `.bin` batch files in
/// `dir`, in lexicographic file order (`data_batch_1.bin` .. before
/// `test_batch.bin` in a standard layout).
pub fn load_cifar10(dir: &Path, subset_size: usize) -> Result<Dataset> {
    if subset_size == 0 {
        return Err(CliError::Config("subset size must be positive".into()));
    }
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Format(format!(
            "no .bin batch files found in {}",
            dir.display()
        )));
    }
    let mut x = Tensor::zeros(&[CIFAR_FEATURES, subset_size]);
    let mut labels = Vec::with_capacity(subset_size);
    let mut loaded = 0usize;
    'files: for file in &files {
        let bytes = fs::read(file).map_err(|e| CliError::io(file, e))?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(CliError::Format(format!(
                "{}: size {} is not a multiple of {CIFAR_RECORD_BYTES}",
                file.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            let label = record[0];
            if label as usize >= CIFAR_CLASSES {
                return Err(CliError::Format(format!(
                    "{}: label {label} outside [0, 9] at record {loaded}",
                    file.display()
                )));
            }
            let xd = x.data_mut();
            for (f, &b) in record[1..].iter().enumerate() {
                xd[f * subset_size + loaded] = b as f64 / 255.0;
            }
            labels.push(label as usize);
            loaded += 1;
            if loaded == subset_size {
                break 'files;
            }
        }
    }
    if loaded < subset_size {
        return Err(CliError::Format(format!(
            "requested {subset_size} records but the batch files hold only {loaded}"
        )));
    }
    Ok(Dataset::new(x, labels)?.with_image_shape(CIFAR_IMAGE_SHAPE))
}

/// Loads `feature,...,feature,label` rows; a non-numeric first row is
/// treated as a header and skipped.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        if record.len() < 2 {
            return Err(CliError::Format(format!(
                "{}: row {i} has {} fields, need at least 2",
                path.display(),
                record.len()
            )));
        }
        let parsed: Option<Vec<f64>> = record
            .iter()
            .take(record.len() - 1)
            .map(|s| s.trim().parse::<f64>().ok())
            .collect();
        let label = record[record.len() - 1].trim().parse::<usize>().ok();
        match (parsed, label) {
            (Some(features), Some(label)) => rows.push((features, label)),
            _ if i == 0 => continue, // header row
            _ => {
                return Err(CliError::Format(format!(
                    "{}: row {i} is not numeric",
                    path.display()
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Format(format!("{}: no data rows", path.display())));
    }
    let dim = rows[0].0.len();
    let n = rows.len();
    let mut x = Tensor::zeros(&[dim, n]);
    let mut labels = Vec::with_capacity(n);
    for (j, (features, label)) in rows.iter().enumerate() {
        if features.len() != dim {
            return Err(CliError::Format(format!(
                "{}: row {j} has {} features, expected {dim}",
                path.display(),
                features.len()
            )));
        }
        for (i, &v) in features.iter().enumerate() {
            x[(i, j)] = v;
        }
        labels.push(*label);
    }
    Ok(Dataset::new(x, labels)?)
}

/// Gaussian blobs centered on a circle, balanced over `classes`.
pub fn synth_blobs(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(CliError::Config(format!(
            "blobs need n >= classes, got n={n} classes={classes}"
        )));
    }
    let mut r = rng::seeded(seed);
    let mut x = Tensor::zeros(&[2, n]);
    let mut labels = Vec::with_capacity(n);
    let radius = 5.0;
    for j in 0..n {
        let c = j % classes;
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        let (gx, gy) = gaussian_pair(&mut r);
        x[(0, j)] = radius * angle.cos() + gx;
        x[(1, j)] = radius * angle.sin() + gy;
        labels.push(c);
    }
    Ok(Dataset::new(x, labels)?)
}

/// Two interleaved half-moon arcs with Gaussian jitter. With zero noise the
/// points lie exactly on the arcs `(cos t, sin t)` and
/// `(1 - cos t, 0.5 - sin t)` for `t` in `[0, pi]`.
pub fn synth_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(CliError::Config("moons need at least 2 samples".into()));
    }
    let mut r = rng::seeded(seed);
    let mut x = Tensor::zeros(&[2, n]);
    let mut labels = Vec::with_capacity(n);
    let half = n / 2 + n % 2;
    for j in 0..n {
        let class = usize::from(j >= half);
        let count = if class == 0 { half } else { n - half };
        let pos = if class == 0 { j } else { j - half };
        let t = std::f64::consts::PI * pos as f64 / (count.max(2) - 1) as f64;
        let (px, py) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let (gx, gy) = gaussian_pair(&mut r);
        x[(0, j)] = px + noise * gx;
        x[(1, j)] = py + noise * gy;
        labels.push(class);
    }
    Ok(Dataset::new(x, labels)?)
}

/// Box-Muller standard normal pair from the deterministic stream.
fn gaussian_pair<R: Rng>(r: &mut R) -> (f64, f64) {
    let u1 = rng::uniform(r, f64::MIN_POSITIVE, 1.0);
    let u2 = rng::uniform(r, 0.0, 1.0);
    let mag = (-2.0 * u1.ln()).sqrt();
    let angle = 2.0 * std::f64::consts::PI * u2;
    (mag * angle.cos(), mag * angle.sin())
}

/// Writes a deterministic corpus of natural-image-like 32x32 RGB samples in
/// the CIFAR-10 binary batch format: smooth class-specific frequency
/// patterns and color/gradient cues under shared low-frequency clutter,
/// shifts, and pixel noise. Useful wherever the real dataset is not on disk;
/// the statistics (strong low-frequency energy over a small noise floor)
/// reproduce the severe Gram ill-conditioning of photographic data.
pub fn write_synthetic_cifar(dir: &Path, records: usize, seed: u64) -> Result<()> {
    if records == 0 {
        return Err(CliError::Config("need at least one record".into()));
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut r = rng::seeded(seed);

    // fixed per-class cues
    let mut class_freq = [(0usize, 0usize); CIFAR_CLASSES];
    let mut class_tint = [[0.0f64; 3]; CIFAR_CLASSES];
    let mut class_grad = [[0.0f64; 3]; CIFAR_CLASSES];
    let mut class_mean = [[0.0f64; 3]; CIFAR_CLASSES];
    for c in 0..CIFAR_CLASSES {
        class_freq[c] = (1 + c % 3, 1 + c / 3);
        for ch in 0..3 {
            class_tint[c][ch] = rng::uniform(&mut r, 0.5, 1.0) * sign(&mut r);
            class_grad[c][ch] = rng::uniform(&mut r, 0.4, 1.0) * sign(&mut r);
            class_mean[c][ch] = 0.5 + 0.06 * rng::uniform(&mut r, -1.0, 1.0);
        }
    }

    const SIDE: usize = 32;
    const PER_FILE: usize = 10_000;
    let files = records.div_ceil(PER_FILE);
    let mut written = 0usize;
    for fi in 0..files {
        let path = dir.join(format!("data_batch_{}.bin", fi + 1));
        let in_file = PER_FILE.min(records - written);
        let mut bytes = Vec::with_capacity(in_file * CIFAR_RECORD_BYTES);
        for _ in 0..in_file {
            let c = written % CIFAR_CLASSES;
            bytes.push(c as u8);
            let (fy, fx) = class_freq[c];
            let dy = rng::uniform(&mut r, -4.0, 4.0);
            let dx = rng::uniform(&mut r, -4.0, 4.0);
            let two_pi = 2.0 * std::f64::consts::PI;
            let ty: Vec<f64> = (0..SIDE)
                .map(|y| (two_pi * fy as f64 * (y as f64 + dy) / SIDE as f64).cos())
                .collect();
            let tx: Vec<f64> = (0..SIDE)
                .map(|x| (two_pi * fx as f64 * (x as f64 + dx) / SIDE as f64).cos())
                .collect();
            // shared clutter: three smooth modes with random orientation
            let mut clutter_y = [[0.0f64; SIDE]; 3];
            let mut clutter_x = [[0.0f64; SIDE]; 3];
            let mut clutter_w = [[0.0f64; 3]; 3];
            for (m, (cy, cx)) in clutter_y.iter_mut().zip(clutter_x.iter_mut()).enumerate() {
                let gy = 1 + (r.next_u64() % 4) as usize;
                let gx = 1 + (r.next_u64() % 4) as usize;
                let py = rng::uniform(&mut r, 0.0, two_pi);
                let px = rng::uniform(&mut r, 0.0, two_pi);
                for i in 0..SIDE {
                    cy[i] = (two_pi * gy as f64 * i as f64 / SIDE as f64 + py).cos();
                    cx[i] = (two_pi * gx as f64 * i as f64 / SIDE as f64 + px).cos();
                }
                for ch in 0..3 {
                    clutter_w[m][ch] = rng::uniform(&mut r, -1.0, 1.0);
                }
            }
            for ch in 0..3 {
                for y in 0..SIDE {
                    for x in 0..SIDE {
                        let mut v = class_mean[c][ch];
                        v += 0.16 * class_tint[c][ch] * ty[y] * tx[x];
                        v += 0.08
                            * class_grad[c][ch]
                            * (x as f64 / SIDE as f64 - 0.5 + y as f64 / SIDE as f64 - 0.5);
                        for m in 0..3 {
                            v += 0.10 * clutter_w[m][ch] * clutter_y[m][y] * clutter_x[m][x];
                        }
                        v += 0.04 * rng::uniform(&mut r, -1.0, 1.0);
                        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            written += 1;
        }
        let mut f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn sign<R: Rng>(r: &mut R) -> f64 {
    if r.next_u64() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}
