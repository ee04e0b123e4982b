//! Tokenization and hashing helpers shared by every stage.

use std::hash::Hasher;

use fnv::FnvHasher;

/// Splits text into word tokens and single-character punctuation tokens.
///
/// A word is a run of alphanumeric characters; an apostrophe between two
/// alphanumerics stays inside the word (`don't`, `it's`). Every other
/// non-whitespace character becomes its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let inner_apostrophe = (c == '\'' || c == '\u{2019}')
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// True when the token carries at least one alphanumeric character.
pub fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

/// Case-folded word tokens with punctuation removed.
pub fn vocab_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| is_word(t))
        .map(|t| t.to_lowercase())
        .collect()
}

/// Collapses internal whitespace runs to one space and trims the ends.
pub fn normalize_space(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 64-bit FNV-1a of a namespace and a value, separated by a unit separator.
pub fn hash_feature(namespace: &str, value: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(namespace.as_bytes());
    h.write(&[0x1f]);
    h.write(value.as_bytes());
    mix64(h.finish())
}

/// SplitMix64 finalizer; a cheap bijective scrambler.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive combination of two hashes.
pub fn combine(a: u64, b: u64) -> u64 {
    mix64(a.rotate_left(17) ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
