/// Word-level tokenization used for alignment and Jaccard distance.
///
/// Text is case-folded, split on whitespace, and every character that is
/// neither alphanumeric nor whitespace becomes a token of its own. This
/// matches the basic (pre-wordpiece) splitting of BERT-style tokenizers, so
/// word indices line up with what those models see.
pub fn word_tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_folds() {
        assert_eq!(
            word_tokenize("Tiger Woods announces return to SEX"),
            vec!["tiger", "woods", "announces", "return", "to", "sex"]
        );
    }

    #[test]
    fn punctuation_is_its_own_token() {
        assert_eq!(
            word_tokenize("obama's plan: 'fine'"),
            vec!["obama", "'", "s", "plan", ":", "'", "fine", "'"]
        );
    }

    #[test]
    fn blank_is_empty() {
        assert!(word_tokenize("  \t ").is_empty());
    }
}
