use rand::Rng;

use super::font::{glyph, GLYPH_HEIGHT, GLYPH_WIDTH};
use crate::error::{Error, Result};

/// Parameters of a procedurally rendered corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub alphabet: String,
    pub min_len: usize,
    pub max_len: usize,
    pub count: usize,
    /// Half-width of the additive uniform noise, in intensity units.
    pub noise: f64,
    pub min_scale: usize,
    pub max_scale: usize,
    /// Extra pixels added at random to each inter-glyph gap.
    pub gap_jitter: usize,
    /// Random shift of the whole word from the centered anchor.
    pub shift_jitter: usize,
    /// Random vertical offset of each glyph.
    pub vertical_jitter: usize,
    pub invert_prob: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            alphabet: "abcdefghij".into(),
            min_len: 1,
            max_len: 7,
            count: 1000,
            noise: 0.1,
            min_scale: 2,
            max_scale: 4,
            gap_jitter: 2,
            shift_jitter: 4,
            vertical_jitter: 2,
            invert_prob: 0.5,
            height: 32,
            width: 100,
            seed: 0,
        }
    }
}

/// A rendered grayscale word image with its transcription.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub text: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Sample {
    /// Counting label.
    pub fn count(&self) -> usize {
        self.text.chars().count()
    }

    /// Intensity in `[0, 1]` at row `y`, column `x`.
    pub fn intensity(&self, y: usize, x: usize) -> f64 {
        f64::from(self.pixels[y * self.width + x]) / 255.0
    }
}

/// Minimum word width at scale `s`: glyphs plus one scale unit between each.
fn min_width(len: usize, s: usize) -> usize {
    len * GLYPH_WIDTH * s + len.saturating_sub(1) * s
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alphabet.is_empty() {
            return bad("corpus alphabet is empty".into());
        }
        if let Some(c) = self.alphabet.chars().find(|&c| glyph(c).is_none()) {
            return bad(format!("no glyph for `{c}`; the font covers a-z and 0-9"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!(
                "length range {}..={} is empty or includes 0",
                self.min_len, self.max_len
            ));
        }
        if self.min_scale == 0 || self.min_scale > self.max_scale {
            return bad(format!(
                "scale range {}..={} is invalid",
                self.min_scale, self.max_scale
            ));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.invert_prob) {
            return bad("noise and invert_prob must lie in [0, 1]".into());
        }
        if GLYPH_HEIGHT * self.min_scale > self.height {
            return bad(format!(
                "glyph height {} at scale {} exceeds canvas height {}",
                GLYPH_HEIGHT * self.min_scale,
                self.min_scale,
                self.height
            ));
        }
        let need = min_width(self.max_len, self.min_scale);
        if need > self.width {
            return bad(format!(
                "{} glyphs need {need} px at scale {} but the canvas is {} px wide",
                self.max_len, self.min_scale, self.width
            ));
        }
        Ok(())
    }

    /// Scales at which a word of `len` glyphs fits the canvas.
    pub fn feasible_scales(&self, len: usize) -> Vec<usize> {
        (self.min_scale..=self.max_scale)
            .filter(|&s| GLYPH_HEIGHT * s <= self.height && min_width(len, s) <= self.width)
            .collect()
    }
}

fn jitter(rng: &mut impl Rng, amount: usize) -> i64 {
    if amount == 0 {
        0
    } else {
        rng.random_range(-(amount as i64)..=amount as i64)
    }
}

/// Renders `text` with all randomness drawn from `rng`.
///
/// The word is centered, then shifted; gaps are at least one scale unit;
/// polarity inversion happens before noise; values are quantized to 8 bits.
pub fn render_sample(spec: &CorpusSpec, text: &str, rng: &mut impl Rng) -> Result<Sample> {
    let masks = text
        .chars()
        .map(|c| {
            if !spec.alphabet.contains(c) {
                return Err(Error::Label(
                    text.into(),
                    format!("`{c}` not in corpus alphabet"),
                ));
            }
            glyph(c).ok_or_else(|| Error::Label(text.into(), format!("no glyph for `{c}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = masks.len();
    if n == 0 {
        return Err(Error::Label(text.into(), "empty text".into()));
    }
    let scales = spec.feasible_scales(n);
    if scales.is_empty() {
        return Err(Error::Label(
            text.into(),
            format!(
                "{n} glyphs do not fit a {}x{} canvas",
                spec.height, spec.width
            ),
        ));
    }
    let s = scales[rng.random_range(0..scales.len())];
    let (gw, gh) = (GLYPH_WIDTH * s, GLYPH_HEIGHT * s);
    let slack = spec.width - min_width(n, s);
    let per_gap = if n > 1 {
        spec.gap_jitter.min(slack / (n - 1))
    } else {
        0
    };
    let gaps: Vec<usize> = (1..n).map(|_| s + rng.random_range(0..=per_gap)).collect();
    let total = n * gw + gaps.iter().sum::<usize>();
    let room = (spec.width - total) as i64;
    let x0 = (room / 2 + jitter(rng, spec.shift_jitter)).clamp(0, room) as usize;
    let y_room = (spec.height - gh) as i64;
    let y_center = y_room / 2;

    let mut ink = vec![false; spec.height * spec.width];
    let mut x = x0;
    for (i, mask) in masks.iter().enumerate() {
        let y0 = (y_center + jitter(rng, spec.vertical_jitter)).clamp(0, y_room) as usize;
        for (r, row) in mask.iter().enumerate() {
            for (c, &on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                for dy in 0..s {
                    let base = (y0 + r * s + dy) * spec.width + x + c * s;
                    ink[base..base + s].iter_mut().for_each(|p| *p = true);
                }
            }
        }
        x += gw + gaps.get(i).copied().unwrap_or(0);
    }

    let invert = spec.invert_prob > 0.0 && rng.random::<f64>() < spec.invert_prob;
    let pixels = ink
        .iter()
        .map(|&on| {
            let mut v = if on != invert { 1.0 } else { 0.0 };
            if spec.noise > 0.0 {
                v += spec.noise * (2.0 * rng.random::<f64>() - 1.0);
            }
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    Ok(Sample {
        text: text.to_string(),
        height: spec.height,
        width: spec.width,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn clean() -> CorpusSpec {
        CorpusSpec {
            noise: 0.0,
            gap_jitter: 0,
            shift_jitter: 0,
            vertical_jitter: 0,
            invert_prob: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn count_label_is_text_length() {
        let spec = CorpusSpec {
            alphabet: "cnt".into(),
            ..Default::default()
        };
        let s = render_sample(&spec, "cnt", &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.count(), 3);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = CorpusSpec::default();
        let a = render_sample(&spec, "abcj", &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = render_sample(&spec, "abcj", &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let c = render_sample(&spec, "abcj", &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn clean_render_is_binary_with_centered_ink() {
        let s = render_sample(&clean(), "e", &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(s.pixels.iter().all(|&p| p == 0 || p == 255));
        let cols: Vec<usize> = (0..s.width)
            .filter(|&x| (0..s.height).any(|y| s.pixels[y * s.width + x] == 255))
            .collect();
        let (lo, hi) = (cols[0], *cols.last().unwrap());
        let right = s.width - 1 - hi;
        assert!(lo.abs_diff(right) <= 1, "ink centered: {lo} vs {right}");
    }

    #[test]
    fn too_long_text_is_rejected() {
        let spec = clean();
        assert!(render_sample(
            &spec,
            "abcdefghijabcdefghij",
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
        assert!(render_sample(&spec, "xyz", &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(CorpusSpec {
            max_len: 30,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(CorpusSpec::default().validate().is_ok());
    }

    #[test]
    fn feasible_scales_shrink_with_length() {
        let spec = CorpusSpec::default();
        assert_eq!(spec.feasible_scales(1), vec![2, 3, 4]);
        assert_eq!(spec.feasible_scales(7), vec![2]);
    }
}
