//! Synthetic Gaussian-blob classification data.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Distance scale of blob centres; features are `centre + spread * N(0, I)`.
const CENTER_SCALE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// Row-major `samples x dims`.
    pub features: Vec<f64>,
    pub dims: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Stratified blobs: sample `i` belongs to class `i % classes`.
pub fn make_blobs(classes: usize, dims: usize, samples: usize, spread: f64, seed: u64) -> Result<SyntheticDataset> {
    if classes < 2 || dims == 0 || samples < classes {
        return Err(invalid(format!("invalid blob sizes: classes={classes}, dims={dims}, samples={samples}")));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(invalid("spread must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..classes * dims).map(|_| CENTER_SCALE * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut features = Vec::with_capacity(samples * dims);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes;
        labels.push(c);
        for d in 0..dims {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(centers[c * dims + d] + spread * noise);
        }
    }
    Ok(SyntheticDataset { features, dims, labels, num_classes: classes, batch_size: samples, seed })
}

impl SyntheticDataset {
    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || !self.samples().is_multiple_of(batch_size) {
            return Err(invalid(format!("batch size {batch_size} does not divide {} samples", self.samples())));
        }
        self.batch_size = batch_size;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// CSV with header `f0,...,f{d-1},label`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dims).map(|d| format!("f{d}")).collect();
        writeln!(w, "{},label", header.join(","))?;
        for i in 0..self.samples() {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", row.join(","), self.labels[i])?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads the CSV written by [`SyntheticDataset::write_csv`]. Batch size defaults to the full set.
    pub fn read_csv<R: BufRead>(r: R, seed: u64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset CSV".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let dims = cols.len().saturating_sub(1);
        let expected: Vec<String> = (0..dims).map(|d| format!("f{d}")).chain(["label".to_string()]).collect();
        if dims == 0 || cols != expected {
            return Err(Error::Parse(format!("unexpected dataset header '{header}'")));
        }
        let (mut features, mut labels) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dims + 1 {
                return Err(Error::Parse(format!("line {}: expected {} fields", n + 2, dims + 1)));
            }
            for f in &fields[..dims] {
                features.push(f.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?);
            }
            labels.push(fields[dims].parse::<usize>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?);
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let batch_size = labels.len();
        Ok(Self { features, dims, labels, num_classes, batch_size, seed })
    }

    pub fn load_csv(path: &Path, seed: u64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_histogram() {
        let d = make_blobs(4, 10, 4000, 1.0, 1).unwrap();
        assert_eq!(d.label_histogram(), vec![1000; 4]);
        assert_eq!(d.features.len(), 4000 * 10);
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(make_blobs(3, 2, 30, 0.5, 9).unwrap(), make_blobs(3, 2, 30, 0.5, 9).unwrap());
        assert_ne!(make_blobs(3, 2, 30, 0.5, 9).unwrap().features, make_blobs(3, 2, 30, 0.5, 10).unwrap().features);
    }

    #[test]
    fn zero_spread_collapses_to_centres() {
        let d = make_blobs(2, 3, 10, 0.0, 4).unwrap();
        assert_eq!(d.row(0), d.row(2));
        assert_ne!(d.row(0), d.row(1));
    }

    #[test]
    fn invalid_sizes() {
        assert!(make_blobs(1, 2, 10, 1.0, 0).is_err());
        assert!(make_blobs(2, 0, 10, 1.0, 0).is_err());
        assert!(make_blobs(2, 2, 10, -1.0, 0).is_err());
        assert!(make_blobs(2, 2, 10, 1.0, 0).unwrap().with_batch_size(3).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = make_blobs(3, 2, 12, 0.7, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,label\n"));
        let back = SyntheticDataset::read_csv(std::io::Cursor::new(buf), 2).unwrap();
        assert_eq!(back.features, d.features);
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.num_classes, 3);
    }
}
