use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfl_tensor::Tensor;

use super::io::{read_manifest, read_pgm, write_manifest, write_pgm, ManifestRow};
use super::render::{render_sample, CorpusSpec, Sample};
use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST: &str = "manifest.tsv";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    samples: Vec<Sample>,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.samples.iter().map(Sample::count).collect()
    }

    /// `hist[l]` is the number of samples of length `l`.
    pub fn length_histogram(&self) -> Vec<usize> {
        let max = self.lengths().into_iter().max().unwrap_or(0);
        let mut hist = vec![0; max + 1];
        for l in self.lengths() {
            hist[l] += 1;
        }
        hist
    }

    /// Images `[b, 1, h, w]` in `[0, 1]` and transcriptions for `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<String>)> {
        let first = indices
            .first()
            .map(|&i| &self.samples[i])
            .ok_or_else(|| Error::EmptyCorpus("empty batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(indices.len() * h * w);
        let mut texts = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            if (s.height, s.width) != (h, w) {
                return Err(Error::Config(format!(
                    "sample {i} is {}x{}, batch is {h}x{w}",
                    s.height, s.width
                )));
            }
            data.extend(s.pixels.iter().map(|&p| f64::from(p) / 255.0));
            texts.push(s.text.clone());
        }
        Ok((Tensor::new(&[indices.len(), 1, h, w], data)?, texts))
    }
}

/// Length uniform over the spec range, then characters uniform over the
/// alphabet.
pub fn sample_text(spec: &CorpusSpec, rng: &mut impl Rng) -> String {
    let chars: Vec<char> = spec.alphabet.chars().collect();
    let len = rng.random_range(spec.min_len..=spec.max_len);
    (0..len)
        .map(|_| chars[rng.random_range(0..chars.len())])
        .collect()
}

/// Renders `spec.count` samples; sample `i` draws from its own stream
/// derived from `(spec.seed, i)`.
pub fn generate_samples(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let samples = (0..spec.count)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed::derive_indexed(spec.seed, "sample", i as u64));
            let text = sample_text(spec, &mut rng);
            render_sample(spec, &text, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(Corpus::new(samples))
}

/// Writes `images/NNNNNN.pgm` files and `manifest.tsv` under `dir`; returns
/// the manifest path.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    let images = dir.join(IMAGE_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut rows = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.samples().iter().enumerate() {
        let rel = PathBuf::from(IMAGE_DIR).join(format!("{i:06}.pgm"));
        write_pgm(&dir.join(&rel), s.width, s.height, &s.pixels)?;
        rows.push(ManifestRow {
            image: rel,
            text: s.text.clone(),
        });
    }
    let manifest = dir.join(MANIFEST);
    write_manifest(&rows, &manifest)?;
    Ok(manifest)
}

pub fn generate_corpus(spec: &CorpusSpec, dir: &Path) -> Result<(PathBuf, Vec<usize>)> {
    let corpus = generate_samples(spec)?;
    let manifest = write_corpus(&corpus, dir)?;
    Ok((manifest, corpus.length_histogram()))
}

/// Reads a manifest and every image it lists. Paths are relative to the
/// manifest's directory.
pub fn load_corpus(manifest: &Path) -> Result<Corpus> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let samples = read_manifest(manifest)?
        .into_iter()
        .map(|row| {
            let (width, height, pixels) = read_pgm(&base.join(&row.image))?;
            Ok(Sample {
                text: row.text,
                height,
                width,
                pixels,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Corpus::new(samples))
}

/// Fraction of `probe` samples whose text also occurs in `reference`.
pub fn text_overlap(reference: &Corpus, probe: &Corpus) -> f64 {
    if probe.is_empty() {
        return 0.0;
    }
    let seen: HashSet<&str> = reference
        .samples()
        .iter()
        .map(|s| s.text.as_str())
        .collect();
    let hits = probe
        .samples()
        .iter()
        .filter(|s| seen.contains(s.text.as_str()))
        .count();
    hits as f64 / probe.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(count: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            count,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn labels_respect_length_range() {
        let c = generate_samples(&spec(100, 7)).unwrap();
        assert_eq!(c.len(), 100);
        assert!(c.lengths().iter().all(|l| (1..=7).contains(l)));
        assert_eq!(c.length_histogram().iter().sum::<usize>(), 100);
        assert_eq!(c.length_histogram()[0], 0);
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_samples(&spec(12, 3)).unwrap();
        let manifest = write_corpus(&c, dir.path()).unwrap();
        assert_eq!(load_corpus(&manifest).unwrap(), c);
    }

    #[test]
    fn missing_image_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_samples(&spec(2, 3)).unwrap();
        let manifest = write_corpus(&c, dir.path()).unwrap();
        fs::remove_file(dir.path().join("images/000001.pgm")).unwrap();
        let err = load_corpus(&manifest).unwrap_err().to_string();
        assert!(err.contains("000001.pgm"), "{err}");
    }

    #[test]
    fn batch_layout() {
        let c = generate_samples(&spec(3, 1)).unwrap();
        let (x, texts) = c.batch(&[2, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 32, 100]);
        assert_eq!(
            texts,
            vec![c.samples()[2].text.clone(), c.samples()[0].text.clone()]
        );
        assert_eq!(x.data()[5], c.samples()[2].intensity(0, 5));
        assert!(c.batch(&[]).is_err());
    }
}
