use std::collections::{BTreeSet, HashMap};

/// Small English stoplist for keyword extraction.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by",
    "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each", "either", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his",
    "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "may", "me", "might", "more",
    "most", "must", "my", "no", "nor", "not", "of", "off", "on", "once", "one", "only", "or", "other",
    "our", "ours", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "within", "would", "you", "your",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '\''
}

/// Candidate phrases: maximal runs of non-stopwords, broken at stopwords and
/// at any punctuation.
fn candidates(text: &str, stopwords: &BTreeSet<String>) -> Vec<Vec<String>> {
    let mut phrases = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut word = String::new();
    let flush_word = |word: &mut String, current: &mut Vec<String>, phrases: &mut Vec<Vec<String>>| {
        if word.is_empty() {
            return;
        }
        let w = std::mem::take(word).to_lowercase();
        let w = w.trim_matches(|c| c == '-' || c == '\'').to_string();
        if w.is_empty() {
            return;
        }
        if stopwords.contains(&w) {
            if !current.is_empty() {
                phrases.push(std::mem::take(current));
            }
        } else {
            current.push(w);
        }
    };
    for c in text.chars() {
        if is_word_char(c) {
            word.push(c);
            continue;
        }
        flush_word(&mut word, &mut current, &mut phrases);
        if !c.is_whitespace() && !current.is_empty() {
            phrases.push(std::mem::take(&mut current));
        }
    }
    flush_word(&mut word, &mut current, &mut phrases);
    if !current.is_empty() {
        phrases.push(current);
    }
    phrases
}

/// RAKE: word score is degree/frequency over all candidate occurrences,
/// phrase score the sum of its word scores. Highest first; ties keep first
/// occurrence order.
pub fn rake_keywords(text: &str, stopwords: &BTreeSet<String>) -> Vec<(String, f64)> {
    let phrases = candidates(text, stopwords);
    let mut freq: HashMap<&str, f64> = HashMap::new();
    let mut degree: HashMap<&str, f64> = HashMap::new();
    for p in &phrases {
        for w in p {
            *freq.entry(w).or_default() += 1.0;
            *degree.entry(w).or_default() += p.len() as f64;
        }
    }
    let mut seen = BTreeSet::new();
    let mut out: Vec<(String, f64)> = Vec::new();
    for p in &phrases {
        let phrase = p.join(" ");
        if !seen.insert(phrase.clone()) {
            continue;
        }
        let score = p.iter().map(|w| degree[w.as_str()] / freq[w.as_str()]).sum();
        out.push((phrase, score));
    }
    // stable sort keeps first-occurrence order among equal scores
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stops(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_candidate() {
        let out = rake_keywords("elements collide with each other", &stops(&["with", "each", "other"]));
        assert_eq!(out, vec![("elements collide".to_string(), 4.0)]);
    }

    #[test]
    fn only_stopwords() {
        assert!(rake_keywords("with each other", &stops(&["with", "each", "other"])).is_empty());
        assert!(rake_keywords("", &stops(&["a"])).is_empty());
    }

    #[test]
    fn punctuation_splits() {
        let out = rake_keywords("fixed width, overflow hidden", &stops(&["a"]));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].0, "fixed width");
        assert_eq!(out[1].0, "overflow hidden");
    }

    #[test]
    fn hyphenated_words_stay_whole() {
        let out = rake_keywords("set box-sizing to border-box", &stops(&["to"]));
        assert_eq!(out[0].0, "set box-sizing");
        assert_eq!(out[1].0, "border-box");
    }
}
