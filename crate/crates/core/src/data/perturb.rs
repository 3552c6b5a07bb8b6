use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MIN_TOKENS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    DeleteSpan,
    SwapSpans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub mode: PerturbMode,
    pub span_frac_low: f64,
    pub span_frac_high: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            mode: PerturbMode::DeleteSpan,
            span_frac_low: 0.1,
            span_frac_high: 0.3,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.span_frac_low, self.span_frac_high);
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "span fractions need 0 < low <= high < 1, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// `ceil(frac · len)`, tolerant of rounding just above an integer.
fn span_len(len: usize, frac: f64) -> usize {
    (frac * len as f64 - 1e-9).ceil().max(1.0) as usize
}

pub fn delete_span_at<T: Clone>(tokens: &[T], start: usize, len: usize) -> Vec<T> {
    let mut out = tokens[..start].to_vec();
    out.extend_from_slice(&tokens[start + len..]);
    out
}

/// Exchanges `tokens[a..a+len]` with `tokens[b..b+len]`; the spans must not overlap.
pub fn swap_spans_at<T: Clone>(tokens: &[T], a: usize, b: usize, len: usize) -> Vec<T> {
    let (a, b) = (a.min(b), a.max(b));
    assert!(a + len <= b && b + len <= tokens.len(), "spans overlap or overrun");
    let mut out = tokens.to_vec();
    for i in 0..len {
        out.swap(a + i, b + i);
    }
    out
}

/// Deletes one span or swaps two equal-length spans of whitespace tokens.
/// The result always differs from the input.
pub fn perturb_positive<R: Rng + ?Sized>(text: &str, cfg: &PerturbConfig, rng: &mut R) -> Result<String> {
    cfg.validate()?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let l = tokens.len();
    if l < MIN_TOKENS {
        return Err(Error::TooShort {
            len: l,
            min: MIN_TOKENS,
        });
    }
    let frac = rng.random_range(cfg.span_frac_low..=cfg.span_frac_high);
    let out = match cfg.mode {
        PerturbMode::DeleteSpan => {
            let len = span_len(l, frac).min(l - 1);
            let start = rng.random_range(0..=l - len);
            delete_span_at(&tokens, start, len)
        }
        PerturbMode::SwapSpans => {
            let len = span_len(l, frac).min(l / 2);
            let a = rng.random_range(0..=l - 2 * len);
            let b = rng.random_range(a + len..=l - len);
            let swapped = swap_spans_at(&tokens, a, b, len);
            if swapped != tokens {
                swapped
            } else {
                // Equal spans; fall back to the first pair of differing tokens.
                let j = (1..l).find(|&j| tokens[j] != tokens[0]).ok_or_else(|| Error::Domain {
                    op: "perturb_positive",
                    detail: "every token is identical, no swap can change the text".into(),
                })?;
                swap_spans_at(&tokens, 0, j, 1)
            }
        }
    };
    Ok(out.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn span_length_counts() {
        assert_eq!(span_len(10, 0.2), 2);
        assert_eq!(span_len(10, 0.21), 3);
        assert_eq!(span_len(10, 0.3), 3);
        let t: Vec<u32> = (0..10).collect();
        assert_eq!(delete_span_at(&t, 3, span_len(10, 0.2)).len(), 8);
    }

    #[test]
    fn swap_hand_trace() {
        assert_eq!(swap_spans_at(&["a", "b", "c", "d"], 0, 2, 1), vec!["c", "b", "a", "d"]);
    }

    #[test]
    fn too_short_and_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            perturb_positive("a b c", &PerturbConfig::default(), &mut rng),
            Err(Error::TooShort { len: 3, .. })
        ));
        let swap = PerturbConfig {
            mode: PerturbMode::SwapSpans,
            ..Default::default()
        };
        assert!(perturb_positive("x x x x x", &swap, &mut rng).is_err());
        let out = perturb_positive("x x x x y", &swap, &mut rng).unwrap();
        assert_ne!(out, "x x x x y");
    }

    #[test]
    fn seeded_and_changing() {
        let text = "one two three four five six seven eight nine ten";
        for mode in [PerturbMode::DeleteSpan, PerturbMode::SwapSpans] {
            let cfg = PerturbConfig {
                mode,
                ..Default::default()
            };
            for s in 0..50 {
                let a = perturb_positive(text, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
                let b = perturb_positive(text, &cfg, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
                assert_eq!(a, b);
                assert_ne!(a, text);
                let n = a.split_whitespace().count();
                match mode {
                    PerturbMode::DeleteSpan => assert!((7..=9).contains(&n)),
                    PerturbMode::SwapSpans => assert_eq!(n, 10),
                }
            }
        }
    }
}
