/// Width of the hashed character-trigram embedding.
pub const TRIGRAM_DIM: usize = 256;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Scales `v` to unit length; the zero vector becomes the first basis vector.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return v;
    }
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Deterministic bag of lowercase character trigrams (word-boundary padded),
/// hashed into [`TRIGRAM_DIM`] buckets and unit-normalized.
pub fn trigram_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; TRIGRAM_DIM];
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    for word in cleaned.split_whitespace() {
        let padded: Vec<char> = format!(" {word} ").chars().collect();
        for w in padded.windows(3) {
            let gram: String = w.iter().collect();
            let h = fnv1a(gram.as_bytes());
            v[(h % TRIGRAM_DIM as u64) as usize] += 1.0;
        }
    }
    normalize(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigram_is_deterministic_and_unit() {
        let a = trigram_embedding("I'm late for the train.");
        assert_eq!(a, trigram_embedding("I'm late for the train."));
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(trigram_embedding("abc"), trigram_embedding("abd"));
    }

    #[test]
    fn punctuation_and_case_do_not_matter() {
        assert_eq!(trigram_embedding("Drive  aggressively!"), trigram_embedding("drive aggressively"));
    }

    #[test]
    fn empty_text_still_has_unit_norm() {
        let v = trigram_embedding("...");
        assert_eq!(v.iter().map(|x| x * x).sum::<f64>(), 1.0);
    }
}
