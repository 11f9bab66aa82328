use serde::{Deserialize, Serialize};

/// Normalisation rules shared by questions, schema names, and cell values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub strip_plurals: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            strip_plurals: true,
        }
    }
}

/// A normalised question with the byte span of each token in `raw`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTokens {
    pub raw: String,
    pub tokens: Vec<String>,
    pub spans: Vec<(usize, usize)>,
}

impl QuestionTokens {
    pub fn new(raw: &str, cfg: TokenizerConfig) -> Self {
        let pieces = split_pieces(raw);
        let mut tokens = Vec::with_capacity(pieces.len());
        let mut spans = Vec::with_capacity(pieces.len());
        for (start, end) in pieces {
            tokens.push(normalize_piece(&raw[start..end], cfg));
            spans.push((start, end));
        }
        QuestionTokens {
            raw: raw.to_string(),
            tokens,
            spans,
        }
    }

    /// Builds tokens directly from already-normalised words (spans index into the joined string).
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let raw = words.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
        let mut spans = Vec::new();
        let mut pos = 0;
        for w in words {
            let w = w.as_ref();
            spans.push((pos, pos + w.len()));
            pos += w.len() + 1;
        }
        QuestionTokens {
            raw,
            tokens: words.iter().map(|w| w.as_ref().to_string()).collect(),
            spans,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Normalised words of a name or free text: lowercase, split on whitespace,
/// punctuation, underscores and camel-case boundaries, numbers canonicalised.
pub fn normalize_words(text: &str, cfg: TokenizerConfig) -> Vec<String> {
    split_pieces(text)
        .into_iter()
        .map(|(s, e)| normalize_piece(&text[s..e], cfg))
        .collect()
}

/// Canonical rendering of a numeric literal: `4.0` → `4`, `4.50` → `4.5`.
pub fn canonical_number(text: &str) -> Option<String> {
    let v: f64 = text.trim().parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    if v.fract() == 0.0 && v.abs() < 1e15 {
        Some(format!("{}", v as i64))
    } else {
        Some(format!("{v}"))
    }
}

fn is_number_piece(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_digit() || c == '.') && s.chars().any(|c| c.is_ascii_digit())
}

fn normalize_piece(piece: &str, cfg: TokenizerConfig) -> String {
    if is_number_piece(piece) {
        return canonical_number(piece).unwrap_or_else(|| piece.to_string());
    }
    let lower = piece.to_lowercase();
    if cfg.strip_plurals {
        strip_plural(&lower)
    } else {
        lower
    }
}

/// Suffix rule standing in for lemmatisation of plural nouns.
pub fn strip_plural(word: &str) -> String {
    let n = word.len();
    if n <= 3 || !word.is_ascii() || word.chars().any(|c| c.is_ascii_digit()) {
        return word.to_string();
    }
    if word.ends_with("ies") && n > 4 {
        return format!("{}y", &word[..n - 3]);
    }
    if word.ends_with("sses") {
        return word[..n - 2].to_string();
    }
    if word.ends_with("ches") || word.ends_with("shes") || word.ends_with("xes") {
        return word[..n - 2].to_string();
    }
    if word.ends_with("ss") || word.ends_with("us") || word.ends_with("is") {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix('s') {
        return stem.to_string();
    }
    word.to_string()
}

/// Byte spans of raw word pieces. Decimal points inside numbers are kept.
fn split_pieces(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let end_of = |k: usize| chars.get(k).map_or(text.len(), |(b, _)| *b);
    for k in 0..chars.len() {
        let (b, c) = chars[k];
        let prev = if k > 0 { Some(chars[k - 1].1) } else { None };
        let next = chars.get(k + 1).map(|x| x.1);
        let in_number_dot = c == '.'
            && prev.is_some_and(|p| p.is_ascii_digit())
            && next.is_some_and(|n| n.is_ascii_digit());
        if c.is_alphanumeric() || in_number_dot {
            if let Some(s) = start {
                // camelCase: lower → upper
                let boundary = prev.is_some_and(|p| p.is_lowercase() && c.is_uppercase());
                if boundary {
                    out.push((s, b));
                    start = Some(b);
                }
            } else {
                start = Some(b);
            }
        } else if let Some(s) = start.take() {
            out.push((s, end_of(k)));
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        normalize_words(s, TokenizerConfig::default())
    }

    #[test]
    fn splits_underscores_and_camel_case() {
        assert_eq!(words("cars_data"), ["car", "data"]);
        assert_eq!(words("modelId"), ["model", "id"]);
        assert_eq!(words("Horsepower"), ["horsepower"]);
    }

    #[test]
    fn numbers_are_canonical() {
        assert_eq!(words("4.0 cylinders"), ["4", "cylinder"]);
        assert_eq!(words("3.50"), ["3.5"]);
        assert_eq!(canonical_number("10"), Some("10".into()));
    }

    #[test]
    fn plural_rules() {
        assert_eq!(strip_plural("countries"), "country");
        assert_eq!(strip_plural("classes"), "class");
        assert_eq!(strip_plural("status"), "status");
        assert_eq!(strip_plural("cars"), "car");
        assert_eq!(strip_plural("bus"), "bus");
    }

    #[test]
    fn question_spans_are_ordered() {
        let q = QuestionTokens::new(
            "For the cars with 4 cylinders, which model has the largest horsepower?",
            TokenizerConfig::default(),
        );
        assert_eq!(q.tokens[2], "car");
        assert_eq!(q.tokens[4], "4");
        assert_eq!(&q.raw[q.spans[5].0..q.spans[5].1], "cylinders");
        assert!(q.spans.windows(2).all(|w| w[0].1 <= w[1].0));
    }

    #[test]
    fn blank_question_has_no_tokens() {
        assert!(QuestionTokens::new("  ?! ", TokenizerConfig::default()).is_empty());
    }
}
