//! Text cleaning for raw encyclopedia-style records.

use std::sync::LazyLock;

use regex::Regex;

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>]*>").unwrap());
static TEMPLATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{[^{}]*\}\}").unwrap());
static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:https?|ftp)://\S*|www\.\S+").unwrap());

/// Remove markup, templates, URLs and control characters, normalize
/// full-width punctuation to half-width, and collapse whitespace.
///
/// The result is a fixed point: `clean_text(&clean_text(x)) == clean_text(x)`.
pub fn clean_text(raw: &str) -> String {
    let mut text: String = raw.chars().filter_map(normalize_char).collect();

    // removing one construct can expose another ("<<b>b>", "ht<i>tp://")
    loop {
        let next = strip_once(&text);
        if next == text {
            break;
        }
        text = next;
    }

    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn strip_once(text: &str) -> String {
    let t = TEMPLATE.replace_all(text, "");
    let t = TAG.replace_all(&t, "");
    URL.replace_all(&t, "").into_owned()
}

/// Map one input character to its canonical form, or drop it.
fn normalize_char(ch: char) -> Option<char> {
    match ch {
        '\u{3000}' => Some(' '),
        '\u{3001}' => Some(','),
        '\u{3002}' => Some('.'),
        // full-width ASCII block
        '\u{FF01}'..='\u{FF5E}' => char::from_u32(ch as u32 - 0xFF01 + 0x21),
        // zero-width and byte-order marks
        '\u{200B}'..='\u{200F}' | '\u{2060}' | '\u{FEFF}' => None,
        c if c.is_whitespace() => Some(' '),
        c if c.is_control() => None,
        c => Some(c),
    }
}
