//! Word-level tokenization shared by the TF-IDF matcher and the n-gram oracle.

/// Lowercases `text` and splits it on every non-alphanumeric character.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Maps each token of `tokens` to its `[start, end)` range in `text`, measured in
/// UTF-16 code units (the unit browsers use for selection offsets).
///
/// Tokens are located left to right with a case-insensitive search. Returns
/// `None` if some token cannot be found after the previous one.
pub fn token_offsets_utf16(text: &str, tokens: &[String]) -> Option<Vec<(usize, usize)>> {
    let lowered: Vec<(usize, char)> = text
        .char_indices()
        .flat_map(|(i, c)| c.to_lowercase().map(move |l| (i, l)))
        .collect();
    let mut out = Vec::with_capacity(tokens.len());
    let mut cursor = 0usize;
    for token in tokens {
        let needle: Vec<char> = token.to_lowercase().chars().collect();
        if needle.is_empty() {
            return None;
        }
        let pos = (cursor..lowered.len().saturating_sub(needle.len() - 1)).find(|&start| {
            needle
                .iter()
                .enumerate()
                .all(|(j, c)| lowered[start + j].1 == *c)
        })?;
        let byte_start = lowered[pos].0;
        let last = lowered[pos + needle.len() - 1].0;
        let byte_end = last + text[last..].chars().next().map_or(0, char::len_utf8);
        out.push((utf16_len(&text[..byte_start]), utf16_len(&text[..byte_end])));
        cursor = pos + needle.len();
    }
    Some(out)
}

fn utf16_len(s: &str) -> usize {
    s.chars().map(char::len_utf16).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            word_tokens("Did you know, Shakespeare's works?"),
            vec!["did", "you", "know", "shakespeare", "s", "works"]
        );
        assert!(word_tokens("  ...  ").is_empty());
    }

    #[test]
    fn offsets_cover_tokens() {
        let text = "Yes, that sounds COOL.";
        let tokens = word_tokens(text);
        let offsets = token_offsets_utf16(text, &tokens).unwrap();
        assert_eq!(offsets, vec![(0, 3), (5, 9), (10, 16), (17, 21)]);
    }

    #[test]
    fn offsets_count_utf16_units() {
        let text = "é 😀 ok";
        let offsets = token_offsets_utf16(text, &["é".into(), "ok".into()]).unwrap();
        assert_eq!(offsets, vec![(0, 1), (5, 7)]);
        assert!(token_offsets_utf16(text, &["missing".into()]).is_none());
    }
}
