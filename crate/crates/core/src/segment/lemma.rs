use std::collections::HashMap;

/// Maps a lower-cased token to its lemma.
pub trait Lemmatizer: Send + Sync {
    fn lemma(&self, token: &str) -> String;
}

/// Returns tokens unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityLemmatizer;

impl Lemmatizer for IdentityLemmatizer {
    fn lemma(&self, token: &str) -> String {
        token.to_string()
    }
}

const EXCEPTIONS: &[(&str, &str)] = &[
    ("am", "be"), ("is", "be"), ("are", "be"), ("was", "be"), ("were", "be"), ("been", "be"), ("being", "be"),
    ("has", "have"), ("had", "have"), ("having", "have"),
    ("does", "do"), ("did", "do"), ("done", "do"),
    ("went", "go"), ("gone", "go"), ("goes", "go"),
    ("said", "say"), ("says", "say"), ("made", "make"), ("took", "take"), ("taken", "take"),
    ("came", "come"), ("saw", "see"), ("seen", "see"), ("knew", "know"), ("known", "know"),
    ("got", "get"), ("gotten", "get"), ("gave", "give"), ("given", "give"), ("found", "find"),
    ("thought", "think"), ("told", "tell"), ("felt", "feel"), ("left", "leave"), ("kept", "keep"),
    ("brought", "bring"), ("began", "begin"), ("begun", "begin"), ("ran", "run"), ("wrote", "write"),
    ("written", "write"), ("sat", "sit"), ("stood", "stand"), ("heard", "hear"), ("meant", "mean"),
    ("met", "meet"), ("paid", "pay"), ("sent", "send"), ("built", "build"), ("lost", "lose"),
    ("fell", "fall"), ("fallen", "fall"), ("ate", "eat"), ("eaten", "eat"), ("drank", "drink"),
    ("bought", "buy"), ("caught", "catch"), ("taught", "teach"), ("fought", "fight"), ("spoke", "speak"),
    ("spoken", "speak"), ("broke", "break"), ("broken", "break"), ("chose", "choose"), ("chosen", "choose"),
    ("forgot", "forget"), ("forgotten", "forget"), ("won", "win"), ("held", "hold"), ("slept", "sleep"),
    ("men", "man"), ("women", "woman"), ("children", "child"), ("people", "person"), ("feet", "foot"),
    ("teeth", "tooth"), ("mice", "mouse"), ("lives", "life"), ("wives", "wife"), ("knives", "knife"),
    ("this", "this"), ("his", "his"), ("its", "its"), ("us", "us"), ("yes", "yes"), ("news", "news"),
    ("always", "always"), ("perhaps", "perhaps"), ("thus", "thus"), ("was", "be"), ("bus", "bus"),
    ("nothing", "nothing"), ("something", "something"), ("anything", "anything"), ("everything", "everything"),
    ("morning", "morning"), ("evening", "evening"), ("thing", "thing"), ("king", "king"), ("ring", "ring"),
    ("sing", "sing"), ("bring", "bring"), ("during", "during"), ("need", "need"), ("feed", "feed"),
    ("speed", "speed"), ("indeed", "indeed"), ("bed", "bed"), ("red", "red"), ("shed", "shed"),
];

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Suffix-stripping lemmatizer for English: plural `-s/-es/-ies`, `-ing`,
/// `-ed`, plus an exception table of irregular forms.
#[derive(Debug, Clone)]
pub struct RuleLemmatizer {
    exceptions: HashMap<String, String>,
}

impl Default for RuleLemmatizer {
    fn default() -> Self {
        Self {
            exceptions: EXCEPTIONS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

impl RuleLemmatizer {
    pub fn with_exception(mut self, form: &str, lemma: &str) -> Self {
        self.exceptions.insert(form.to_string(), lemma.to_string());
        self
    }

    fn undouble(stem: &str) -> String {
        let b = stem.as_bytes();
        let n = b.len();
        if n >= 3 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
            stem[..n - 1].to_string()
        } else {
            stem.to_string()
        }
    }
}

impl Lemmatizer for RuleLemmatizer {
    fn lemma(&self, token: &str) -> String {
        if let Some(l) = self.exceptions.get(token) {
            return l.clone();
        }
        if !token.is_ascii() || !token.bytes().all(|b| b.is_ascii_alphabetic()) {
            return token.to_string();
        }
        let n = token.len();
        if n > 4 && token.ends_with("ies") {
            return format!("{}y", &token[..n - 3]);
        }
        if n > 4 && (token.ends_with("sses") || token.ends_with("shes") || token.ends_with("ches") || token.ends_with("xes")) {
            return token[..n - 2].to_string();
        }
        if n > 3 && token.ends_with('s') && !token.ends_with("ss") && !token.ends_with("us") && !token.ends_with("is") {
            return token[..n - 1].to_string();
        }
        if n > 5 && token.ends_with("ing") {
            let stem = &token[..n - 3];
            if stem.bytes().any(is_vowel) {
                return Self::undouble(stem);
            }
        }
        if n > 4 && token.ends_with("ied") {
            return format!("{}y", &token[..n - 3]);
        }
        if n > 4 && token.ends_with("ed") {
            let stem = &token[..n - 2];
            if stem.bytes().any(is_vowel) {
                if token.ends_with("eed") {
                    return token[..n - 1].to_string();
                }
                return Self::undouble(stem);
            }
        }
        token.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        let l = RuleLemmatizer::default();
        for (form, lemma) in [
            ("cats", "cat"), ("parties", "party"), ("kisses", "kiss"), ("running", "run"), ("walking", "walk"),
            ("stopped", "stop"), ("worked", "work"), ("carried", "carry"), ("sat", "sit"), ("was", "be"),
            ("glass", "glass"), ("this", "this"), ("thing", "thing"), ("agreed", "agree"), ("calling", "call"),
        ] {
            assert_eq!(l.lemma(form), lemma, "{form}");
        }
    }

    #[test]
    fn non_alphabetic_tokens_pass_through() {
        assert_eq!(RuleLemmatizer::default().lemma("?"), "?");
        assert_eq!(RuleLemmatizer::default().lemma("don't"), "don't");
    }
}
