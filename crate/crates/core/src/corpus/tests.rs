use super::*;
use proptest::prelude::*;

fn inventory() -> Inventory {
    Inventory::from_entries([
        ("a".to_string(), TokenKind::Phoneme),
        ("b".to_string(), TokenKind::Phoneme),
        ("k".to_string(), TokenKind::Phoneme),
        ("_".to_string(), TokenKind::WordBoundary),
        (",".to_string(), TokenKind::Punctuation),
        (".".to_string(), TokenKind::Punctuation),
    ])
}

fn fixture_utterance() -> Utterance {
    UtteranceBuilder::new("u1", "spk")
        .word("w0", &[("k", 5.0), ("a", 7.0)])
        .boundary(0.0)
        .word("w1", &[("b", 4.0)])
        .punct(",", 20.0)
        .word("w2", &[("a", 6.0), ("b", 3.0)])
        .punct(".", 30.0)
        .build()
}

fn fixture_corpus(utts: Vec<Utterance>) -> Corpus {
    let mut wf = WordFeatureTable::new(2);
    let mut sp = SpeakerTable::new(3);
    for u in &utts {
        for w in 0..u.words.len() {
            wf.insert(&u.id, w, vec![w as f64, 0.5]).unwrap();
        }
        sp.insert(&u.speaker_id, &u.id, vec![1.0, -2.0, 0.25]).unwrap();
    }
    Corpus {
        utterances: utts,
        inventory: inventory(),
        word_features: wf,
        speakers: sp,
    }
}

#[test]
fn minimal_fixture_loads() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture_corpus(vec![fixture_utterance()]);
    corpus.save(dir.path()).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    let u = &back.utterances[0];
    assert_eq!(u.num_tokens(), 8);
    assert_eq!(u.total_frames(), 75.0);
    assert_eq!(u.total_frames(), u.durations().iter().sum::<f64>());
    assert_eq!(back, corpus);
}

#[test]
fn negative_duration_names_the_utterance() {
    let dir = tempfile::tempdir().unwrap();
    fixture_corpus(vec![fixture_utterance()]).save(dir.path()).unwrap();
    let path = dir.path().join(UTTERANCES_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"duration\":5", "\"duration\":-1", 1)).unwrap();
    let err = Corpus::load(dir.path()).unwrap_err();
    assert!(matches!(err, CorpusError::NegativeDuration { ref utterance, .. } if utterance == "u1"), "{err}");
    assert!(err.to_string().contains("u1"));
}

#[test]
fn missing_word_feature_is_rejected() {
    let mut corpus = fixture_corpus(vec![fixture_utterance()]);
    corpus.word_features.vectors.remove(&("u1".to_string(), 2));
    assert!(matches!(
        corpus.validate(),
        Err(CorpusError::MissingWordFeature { word: 2, .. })
    ));
}

#[test]
fn unknown_symbol_is_rejected() {
    let mut u = fixture_utterance();
    u.tokens[0].symbol = "zz".into();
    let corpus = fixture_corpus(vec![u]);
    assert!(matches!(corpus.validate(), Err(CorpusError::UnknownSymbol { .. })));
}

#[test]
fn structural_violations_are_rejected() {
    let inv = inventory();
    let mut u = fixture_utterance();
    u.tokens[1].duration = 0.0;
    assert!(u.validate(&inv).is_err(), "zero-length phoneme");

    let mut u = fixture_utterance();
    u.words[1].start = 1;
    assert!(u.validate(&inv).is_err(), "overlapping words");

    let mut u = fixture_utterance();
    u.tokens.insert(3, u.tokens[2].clone());
    for w in &mut u.words[1..] {
        w.start += 1;
        w.end += 1;
    }
    assert!(u.validate(&inv).is_err(), "two separators in a row");

    let u = UtteranceBuilder::new("x", "s").boundary(0.0).word("w", &[("a", 1.0)]).build();
    assert!(u.validate(&inv).is_err(), "separator before first word");
}

#[test]
fn pause_labels_follow_separator_durations() {
    let u = fixture_utterance();
    assert_eq!(extract_pause_labels(&u, 4.0), vec![false, true, true]);
    let no_trailing = UtteranceBuilder::new("x", "s")
        .word("w0", &[("a", 3.0)])
        .punct(",", 20.0)
        .word("w1", &[("b", 3.0)])
        .build();
    assert_eq!(extract_pause_labels(&no_trailing, 4.0), vec![true, false]);
}

proptest! {
    #[test]
    fn pause_labels_are_monotone_in_threshold(durs in proptest::collection::vec(0u32..60, 1..12), lo in 1u32..30, bump in 0u32..30) {
        let mut b = UtteranceBuilder::new("p", "s");
        for (i, d) in durs.iter().enumerate() {
            b = b.word(format!("w{i}"), &[("a", 2.0)]).boundary(f64::from(*d));
        }
        let u = b.build();
        let low = extract_pause_labels(&u, f64::from(lo));
        let high = extract_pause_labels(&u, f64::from(lo + bump));
        for (l, h) in low.iter().zip(&high) {
            prop_assert!(!h || *l);
        }
    }

    #[test]
    fn upsampled_length_is_total_duration(durs in proptest::collection::vec(0usize..6, 0..20)) {
        let items: Vec<usize> = (0..durs.len()).collect();
        let out = upsample_by_durations(&items, &durs).unwrap();
        prop_assert_eq!(out.len(), durs.iter().sum::<usize>());
    }

    #[test]
    fn save_load_is_identity(durs in proptest::collection::vec(1u32..40, 3..30), feat in -1e3f64..1e3) {
        let mut b = UtteranceBuilder::new("r", "spk");
        for (i, d) in durs.iter().enumerate() {
            b = b.word(format!("w{i}"), &[("a", f64::from(*d)), ("b", 1.0)]);
            if i % 3 == 0 {
                b = b.punct(",", f64::from(*d % 7));
            } else {
                b = b.boundary(f64::from(*d % 2));
            }
        }
        let mut corpus = fixture_corpus(vec![b.build()]);
        corpus.word_features.vectors.values_mut().for_each(|v| v[1] = feat / 7.0);
        let dir = tempfile::tempdir().unwrap();
        corpus.save(dir.path()).unwrap();
        prop_assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive(n in 1usize..200, seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let train = a;
        let dev = (1.0 - a) * b;
        let test = 1.0 - train - dev;
        let s = split_corpus(n, seed, [train, dev, test]).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn upsample_examples() {
    assert_eq!(upsample_by_durations(&['a', 'b'], &[2, 1]).unwrap(), vec!['a', 'a', 'b']);
    assert_eq!(upsample_by_durations(&['a', 'b'], &[0, 3]).unwrap(), vec!['b', 'b', 'b']);
    assert!(upsample_by_durations(&['a'], &[1, 2]).is_err());
}

fn utterance_with(words: usize, frames: f64, pauses: usize) -> Utterance {
    let mut b = UtteranceBuilder::new(format!("u{words}-{pauses}"), "s");
    let per_word = frames / words as f64;
    for w in 0..words {
        b = b.word(format!("w{w}"), &[("a", per_word)]);
        if w < pauses {
            b = b.punct(",", 0.0);
        }
    }
    b.build()
}

#[test]
fn corpus_stats_examples() {
    // 10 words in 4.0 s = 320 frames.
    let u = utterance_with(10, 320.0, 0);
    let mut u_pause = utterance_with(10, 320.0, 1);
    u_pause.tokens[0].duration -= 4.0;
    u_pause.tokens[1].duration = 4.0;
    assert_eq!(u_pause.total_frames(), 320.0);
    let stats = corpus_stats([&u_pause], DEFAULT_PAUSE_THRESHOLD).unwrap();
    assert!((stats.mean_speech_rate - 2.5).abs() < 1e-12);

    // 12 words, 2 pauses.
    let mut v = utterance_with(12, 480.0, 2);
    for t in v.tokens.iter_mut().filter(|t| t.kind.is_separator()) {
        t.duration = 10.0;
    }
    let stats = corpus_stats([&v], DEFAULT_PAUSE_THRESHOLD).unwrap();
    assert_eq!(stats.mean_pause_rate, 6.0);

    // Pause-free utterances are excluded from the pause-rate mean.
    let stats = corpus_stats([&v, &u], DEFAULT_PAUSE_THRESHOLD).unwrap();
    assert_eq!(stats.mean_pause_rate, 6.0);

    assert!(matches!(corpus_stats([&u], 4.0), Err(CorpusError::NoPauses)));
    assert!(matches!(corpus_stats(std::iter::empty(), 4.0), Err(CorpusError::Empty(_))));
}

#[test]
fn split_examples() {
    let s = split_corpus(10, 3, [1.0, 0.0, 0.0]).unwrap();
    assert_eq!(s.train, (0..10).collect::<Vec<_>>());
    assert!(s.dev.is_empty() && s.test.is_empty());
    assert_eq!(split_corpus(50, 9, [0.8, 0.1, 0.1]).unwrap(), split_corpus(50, 9, [0.8, 0.1, 0.1]).unwrap());
    assert_ne!(split_corpus(50, 9, [0.8, 0.1, 0.1]).unwrap(), split_corpus(50, 10, [0.8, 0.1, 0.1]).unwrap());
    assert!(split_corpus(0, 1, [1.0, 0.0, 0.0]).is_err());
    assert!(split_corpus(5, 1, [0.5, 0.6, 0.0]).is_err());
}
