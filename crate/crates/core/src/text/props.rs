use proptest::prelude::*;

use super::*;

fn char_vocab() -> Vocabulary {
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let alphabet = "abcdefghijklmnopqrstuvwxyz0123456789%-/+&#.";
    for c in alphabet.chars() {
        tokens.push(c.to_string());
        tokens.push(format!("##{c}"));
    }
    tokens.extend(["blue", "##tooth", "wat", "##er", "##proof", "ab", "##cd"].map(String::from));
    Vocabulary::from_tokens(tokens).unwrap()
}

fn text() -> impl Strategy<Value = String> {
    proptest::collection::vec("[a-zA-Z0-9%/.-]{1,12}", 0..8).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn detokenize_reproduces_normalized(s in text()) {
        let t = wordpiece_tokenize(&s, &char_vocab());
        prop_assert!(!t.has_unk());
        prop_assert_eq!(t.detokenize(), normalize(&s));
    }

    #[test]
    fn extension_never_increases_count(s in text(), corpus in proptest::collection::vec(text(), 1..4), k in 0usize..20) {
        let base = char_vocab();
        let refs: Vec<&str> = corpus.iter().map(String::as_str).chain([s.as_str()]).collect();
        let ext = build_extended_vocab(&word_frequencies(refs), &base, k);
        prop_assert!(wordpiece_tokenize(&s, &ext).len() <= wordpiece_tokenize(&s, &base).len());
    }

    #[test]
    fn tags_constant_within_word(s in text()) {
        let mut lex = TermLexicon::new();
        for (i, w) in normalize(&s).split(' ').filter(|w| !w.is_empty()).enumerate() {
            if i % 2 == 0 {
                lex.insert(w, NerCategory::ALL[i % 6]).unwrap();
            }
        }
        let t = Tokenizer::new(char_vocab(), lex).encode(&s);
        prop_assert_eq!(t.ner.len(), t.len());
        for i in 1..t.len() {
            if t.word_index[i] == t.word_index[i - 1] {
                prop_assert_eq!(t.ner[i], t.ner[i - 1]);
            } else {
                prop_assert_eq!(t.word_index[i], t.word_index[i - 1] + 1);
            }
        }
    }

    #[test]
    fn extension_is_deterministic(corpus in proptest::collection::vec(text(), 1..4), k in 0usize..10) {
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let f = word_frequencies(refs);
        prop_assert_eq!(build_extended_vocab(&f, &char_vocab(), k), build_extended_vocab(&f, &char_vocab(), k));
    }
}
