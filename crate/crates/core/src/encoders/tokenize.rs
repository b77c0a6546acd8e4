/// Splits on whitespace; tokens containing non-ASCII characters fall back to
/// one token per character, which covers unsegmented CJK text.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        if word.is_ascii() {
            out.push(word.to_ascii_lowercase());
        } else {
            out.extend(word.chars().map(|c| c.to_lowercase().collect::<String>()));
        }
    }
    out
}

/// 64-bit FNV-1a.
pub fn hash_token(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn token_ids(text: &str, vocab_size: usize) -> Vec<usize> {
    tokenize(text)
        .iter()
        .map(|t| (hash_token(t) % vocab_size as u64) as usize)
        .collect()
}
