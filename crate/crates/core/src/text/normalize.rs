/// Symbols that stay attached to an adjacent letter or digit, so blends such
/// as `100%`, `t-shirt` or `usb/c` survive as one word.
const BLEND_SYMBOLS: &[char] = &['%', '-', '/', '+', '&', '#'];

/// Lowercases, collapses whitespace and splits standalone punctuation into
/// separate words. Deterministic; empty input gives empty output.
pub fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut words: Vec<String> = Vec::new();
    for chunk in lowered.split_whitespace() {
        split_chunk(chunk, &mut words);
    }
    words.join(" ")
}

/// Whitespace-delimited words of an already normalized string.
pub fn words(normalized: &str) -> impl Iterator<Item = &str> {
    normalized.split_whitespace()
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        if attaches(c, prev, next) {
            current.push(c);
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(c.to_string());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
}

fn attaches(c: char, prev: Option<char>, next: Option<char>) -> bool {
    if c.is_alphanumeric() {
        return true;
    }
    let alnum = |x: Option<char>| x.is_some_and(char::is_alphanumeric);
    let digit = |x: Option<char>| x.is_some_and(|ch| ch.is_ascii_digit());
    if BLEND_SYMBOLS.contains(&c) {
        return alnum(prev) || alnum(next);
    }
    // decimal point inside a number
    c == '.' && digit(prev) && digit(next)
}
