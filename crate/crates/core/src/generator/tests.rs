use super::*;
use crate::autodiff::Tape;
use crate::corpus::{corpus_from_text, Corpus, CorpusFormat, Tone, BOS, RESERVED};
use crate::model::{ClueMode, ExtKind, Extension, ModelConfig};

const TOY: &str = include_str!("../../tests/data/toy20.txt");
const LEXICON: &str = include_str!("../../tests/data/toy20_lexicon.tsv");

struct Fixture {
    corpus: Corpus,
    tfidf: TfIdfTable,
    lexicon: ToneLexicon,
}

fn fixture() -> Fixture {
    let corpus = corpus_from_text(TOY, CorpusFormat::Pipe, 0).unwrap();
    let tfidf = TfIdfTable::build(&corpus.train, corpus.vocab.len());
    let lexicon = ToneLexicon::parse(LEXICON).unwrap().lexicon;
    Fixture {
        corpus,
        tfidf,
        lexicon,
    }
}

fn small_model(vocab: usize, clue: ClueMode, ext: ExtKind) -> Model<f64> {
    let cfg = ModelConfig {
        vocab_size: vocab,
        embedding_dim: 6,
        encoder_hidden: 5,
        decoder_hidden: 7,
        attention_dim: 5,
        clue_dim: 6,
        ssi_slot_dim: 3,
        intent_dim: 4,
        style_dim: 3,
        maxout_dim: 6,
        clue,
        ext,
        ..ModelConfig::default()
    };
    Model::new(cfg, 21, 0.6).unwrap()
}

fn lines(text: &[&str]) -> Vec<String> {
    text.iter().map(|s| s.to_string()).collect()
}

fn lexicon_of(entries: &[(char, Tone, Option<u32>)]) -> ToneLexicon {
    let mut l = ToneLexicon::new();
    for &(c, tone, rhyme) in entries {
        l.insert(c, ToneEntry { tone, rhyme });
    }
    l
}

// ---- patterns and form checks -------------------------------------------------------

#[test]
fn standard_table_shapes() {
    let t = PatternTable::standard();
    assert_eq!(t.templates(Form::Wujue).len(), 4);
    assert_eq!(t.templates(Form::Qijue).len(), 4);
    for form in Form::ALL {
        for tpl in t.templates(form) {
            assert_eq!(tpl.lines.len(), 4);
            assert!(tpl.lines.iter().all(|l| l.len() == form.line_len()));
            // lines 2 and 4 end level
            assert_eq!(tpl.lines[1].last(), Some(&ToneSlot::Ping));
            assert_eq!(tpl.lines[3].last(), Some(&ToneSlot::Ping));
        }
    }
    assert_eq!(t.templates(Form::Wujue)[0].to_string(), "*ZPPZ/*PZZP/*PPZZ/*ZZPP");
    assert_eq!(t.templates(Form::Qijue)[0].to_string(), "*P*ZPPZ/*Z*PZZP/*Z*PPZZ/*P*ZZPP");
    assert!(PatternTable::new(vec![], t.templates(Form::Qijue).to_vec()).is_none());
}

/// Lexicon for "abcde..." style test poems: `p*` characters level, `z*` oblique.
fn pz_lexicon() -> ToneLexicon {
    let mut e = Vec::new();
    for (i, c) in "平坪萍评瓶".chars().enumerate() {
        e.push((c, Tone::Ping, Some(i as u32 % 2)));
    }
    for c in "仄侧测厕".chars() {
        e.push((c, Tone::Ze, Some(9)));
    }
    lexicon_of(&e)
}

#[test]
fn matching_poem_passes_every_check() {
    // *ZPPZ / *PZZP / *PPZZ / *ZZPP with lines 2 and 4 ending in group 0
    let poem = lines(&["平仄平平仄", "平平仄仄平", "仄平平仄仄", "平仄仄平萍"]);
    let r = check_form(&poem, Form::Wujue, &pz_lexicon(), &PatternTable::standard());
    assert!(r.length_ok && r.tone_ok && r.rhyme_ok, "{r:?}");
    assert_eq!(r.tone_ok_per_template, vec![true, false, false, false]);
    assert!(r.all_ok());
    assert_eq!(r.first_line_rhymes, Some(false));
}

#[test]
fn rhyme_mismatch_is_flagged() {
    let poem = lines(&["平仄平平仄", "平平仄仄平", "仄平平仄仄", "平仄仄平坪"]);
    let r = check_form(&poem, Form::Wujue, &pz_lexicon(), &PatternTable::standard());
    assert!(r.tone_ok);
    assert!(!r.rhyme_ok);
}

#[test]
fn tone_and_length_violations_are_flagged() {
    let lex = pz_lexicon();
    let p = PatternTable::standard();
    let bad_tone = lines(&["平平平平平", "平平仄仄平", "仄平平仄仄", "平仄仄平萍"]);
    assert!(!check_form(&bad_tone, Form::Wujue, &lex, &p).tone_ok);
    let short = lines(&["平仄平平仄", "平平仄仄平", "仄平平仄"]);
    let r = check_form(&short, Form::Wujue, &lex, &p);
    assert!(!r.length_ok && !r.tone_ok);
    let wrong_len = lines(&["平仄平平仄", "平平仄仄平", "仄平平仄仄", "平仄仄平萍"]);
    assert!(!check_form(&wrong_len, Form::Qijue, &lex, &p).length_ok);
}

#[test]
fn unknown_tones_are_wildcards() {
    let poem = lines(&["一二三四五", "六七八九十", "甲乙丙丁戊", "己庚辛壬癸"]);
    let r = check_form(&poem, Form::Wujue, &ToneLexicon::new(), &PatternTable::standard());
    assert!(r.tone_ok && r.rhyme_ok);
    assert_eq!(r.first_line_rhymes, None);

    // only rhyme groups known, and they disagree
    let lex = lexicon_of(&[('十', Tone::Unknown, Some(1)), ('癸', Tone::Unknown, Some(2))]);
    let r = check_form(&poem, Form::Wujue, &lex, &PatternTable::standard());
    assert!(r.tone_ok && !r.rhyme_ok);
}

// ---- pruning ---------------------------------------------------------------------------

fn hyp(tape: &Tape<f64>, chars: &[u32], lp: f64) -> Hypothesis {
    let z = tape.constant(crate::autodiff::Tensor::zeros(&[1]));
    Hypothesis {
        chars: chars.to_vec(),
        log_prob: lp,
        state: crate::model::DecoderState { h: z, c: z },
        rows: Vec::new(),
    }
}

fn tone_entries() -> Vec<ToneEntry> {
    // ids 0..4 reserved, 4..8 level (groups 0,1,0,1), 8..12 oblique, 12 unknown
    let mut t = vec![ToneEntry::default(); 4];
    for g in [0, 1, 0, 1] {
        t.push(ToneEntry {
            tone: Tone::Ping,
            rhyme: Some(g),
        });
    }
    for _ in 0..4 {
        t.push(ToneEntry {
            tone: Tone::Ze,
            rhyme: Some(5),
        });
    }
    t.push(ToneEntry::default());
    t
}

#[test]
fn any_slot_prunes_nothing() {
    let tape = Tape::new();
    let tones = tone_entries();
    let slots = [ToneSlot::Any; 5];
    let c = LineConstraint {
        patterns: vec![&slots],
        rhyme: None,
        tones: &tones,
    };
    let hyps: Vec<_> = (4..13).map(|i| hyp(&tape, &[i], -(i as f64))).collect();
    assert_eq!(prune_beam(hyps, 0, &c).len(), 9);
}

#[test]
fn level_slot_prunes_oblique() {
    let tape = Tape::new();
    let tones = tone_entries();
    let slots = [ToneSlot::Ping, ToneSlot::Ze];
    let c = LineConstraint {
        patterns: vec![&slots],
        rhyme: None,
        tones: &tones,
    };
    let kept = prune_beam(vec![hyp(&tape, &[9], -1.0), hyp(&tape, &[5], -2.0), hyp(&tape, &[12], -3.0)], 0, &c);
    let ids: Vec<u32> = kept.iter().map(|h| h.chars[0]).collect();
    assert_eq!(ids, vec![5, 12]);
}

#[test]
fn final_position_enforces_rhyme() {
    let tape = Tape::new();
    let tones = tone_entries();
    let slots = [ToneSlot::Any, ToneSlot::Ping];
    let c = LineConstraint {
        patterns: vec![&slots],
        rhyme: Some(1),
        tones: &tones,
    };
    let hyps = vec![hyp(&tape, &[8, 4], -1.0), hyp(&tape, &[8, 5], -2.0), hyp(&tape, &[8, 12], -3.0)];
    let ids: Vec<u32> = prune_beam(hyps, 1, &c).iter().map(|h| h.chars[1]).collect();
    assert_eq!(ids, vec![5, 12]);
}

#[test]
fn pruning_matches_predicate_scan() {
    use rand::{Rng, SeedableRng};
    let tape = Tape::new();
    let tones = tone_entries();
    let a = [ToneSlot::Ze, ToneSlot::Ping, ToneSlot::Any];
    let b = [ToneSlot::Ping, ToneSlot::Ping, ToneSlot::Ze];
    let c = LineConstraint {
        patterns: vec![&a, &b],
        rhyme: Some(0),
        tones: &tones,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for round in 0..50 {
        let len = 1 + round % 3;
        let hyps: Vec<Hypothesis> = (0..20)
            .map(|k| {
                let chars: Vec<u32> = (0..len).map(|_| rng.gen_range(4..13)).collect();
                hyp(&tape, &chars, -(k as f64))
            })
            .collect();
        let fits = |chars: &[u32]| {
            let ok = |p: &[ToneSlot]| {
                chars.iter().enumerate().all(|(i, &ch)| {
                    let t = tones[ch as usize].tone;
                    p[i] == ToneSlot::Any || t == Tone::Unknown || (p[i] == ToneSlot::Ping) == (t == Tone::Ping)
                })
            };
            let tone = ok(&a) || ok(&b);
            let last = tones[*chars.last().unwrap() as usize].rhyme;
            let rhyme = chars.len() < 3 || last.is_none() || last == Some(0);
            tone && rhyme
        };
        let want: Vec<Vec<u32>> = hyps.iter().filter(|h| fits(&h.chars)).map(|h| h.chars.clone()).collect();
        let got: Vec<Vec<u32>> = prune_beam(hyps, len - 1, &c).into_iter().map(|h| h.chars).collect();
        assert_eq!(got, want);
    }
}

// ---- beam search -------------------------------------------------------------------------

fn zero_cond(m: &Model<f64>, tape: &Tape<f64>) -> crate::model::Conditioning {
    let clue = ClueState::new(m.config(), Form::Wujue);
    m.conditioning(tape, &clue, &Extension::none()).unwrap()
}

fn step_logp(m: &Model<f64>, tape: &Tape<f64>, src: &crate::model::EncodedSource, prefix: &[u32]) -> Vec<f64> {
    let cond = zero_cond(m, tape);
    let mut state = m.initial_state(tape);
    let mut prev = BOS;
    let mut out = None;
    for &c in prefix.iter().chain(std::iter::once(&u32::MAX)) {
        let s = m.decode_step(tape, src, state, prev, cond).unwrap();
        if c == u32::MAX {
            out = Some(s);
            break;
        }
        state = s.state;
        prev = c;
    }
    m.distribution(tape, &out.unwrap()).iter().map(|p| p.ln()).collect()
}

#[test]
fn beam_two_matches_exhaustive_reachable_search() {
    // vocabulary of four content characters (ids 4..8), lines of two characters
    for seed in 0..5 {
        let cfg = ModelConfig {
            vocab_size: RESERVED + 4,
            embedding_dim: 3,
            encoder_hidden: 2,
            decoder_hidden: 3,
            attention_dim: 2,
            clue_dim: 2,
            maxout_dim: 3,
            ..ModelConfig::default()
        };
        let m: Model<f64> = Model::new(cfg, seed, 1.5).unwrap();
        let tape = Tape::new();
        let src = m.encode(&tape, &[5, 6, 7]).unwrap();
        let got = beam_search_line(&tape, &m, &src, zero_cond(&m, &tape), 2, 2, None).unwrap();

        let first = step_logp(&m, &tape, &src, &[]);
        let mut order: Vec<u32> = (4..8).collect();
        order.sort_by(|&a, &b| first[b as usize].total_cmp(&first[a as usize]).then(a.cmp(&b)));
        let reachable = &order[..2];
        let mut best: Option<(f64, Vec<u32>)> = None;
        for a in 4..8u32 {
            for b in 4..8u32 {
                if !reachable.contains(&a) {
                    continue;
                }
                let lp = first[a as usize] + step_logp(&m, &tape, &src, &[a])[b as usize];
                if best.as_ref().is_none_or(|(s, _)| lp > *s) {
                    best = Some((lp, vec![a, b]));
                }
            }
        }
        let (lp, seq) = best.unwrap();
        assert_eq!(got[0].chars, seq, "seed {seed}");
        assert!((got[0].log_prob - lp).abs() < 1e-12);
        assert!(got[0].log_prob >= got[1].log_prob);
    }
}

#[test]
fn beam_one_is_greedy() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let src = m.encode(&tape, &fx.corpus.train[0].lines[0]).unwrap();
    let got = beam_search_line(&tape, &m, &src, zero_cond(&m, &tape), 5, 1, None).unwrap();
    let mut greedy = Vec::new();
    for _ in 0..5 {
        let lp = step_logp(&m, &tape, &src, &greedy);
        let best = (RESERVED as u32..lp.len() as u32)
            .fold(RESERVED as u32, |b, c| if lp[c as usize] > lp[b as usize] { c } else { b });
        greedy.push(best);
    }
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].chars, greedy);
}

#[test]
fn reserved_ids_are_never_generated() {
    let fx = fixture();
    let mut m = small_model(fx.corpus.vocab.len(), ClueMode::Sdu, ExtKind::None);
    // make the reserved ids overwhelmingly likely
    let id = m.param_id("output.b");
    for r in 0..RESERVED {
        m.params_mut().get_mut(id).data_mut()[r] = 50.0;
    }
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, None);
    let opts = GenerateOptions {
        constraints: false,
        beam: 3,
        ..GenerateOptions::default()
    };
    let p = g.generate("明月", &opts).unwrap();
    assert!(p.ids.iter().flatten().all(|&c| c >= RESERVED as u32));
}

// ---- whole poems ----------------------------------------------------------------------------

#[test]
fn unconstrained_generation_has_form_lengths() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Ssi, ExtKind::Intent);
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, None);
    for form in Form::ALL {
        let opts = GenerateOptions {
            form,
            beam: 4,
            constraints: false,
            ..GenerateOptions::default()
        };
        let p = g.generate("春风", &opts).unwrap();
        assert_eq!(p.lines.len(), 4);
        assert!(p.lines.iter().all(|l| l.chars().count() == form.line_len()));
        assert_eq!(p.saliency.len(), 3);
        for (i, s) in p.saliency.iter().enumerate() {
            assert_eq!(s.line, i + 2);
            assert_eq!(s.source, p.lines[i]);
            assert_eq!(s.scores.len(), form.line_len());
            assert!(s.selected.iter().all(|&j| j < form.line_len()));
            assert!(s.selected.len() <= m.config().k(form));
        }
        assert!((p.log_prob - p.line_log_probs.iter().sum::<f64>()).abs() < 1e-12);
        assert!(p.log_prob < 0.0);
        assert!(!p.constraints.enabled);
    }
}

#[test]
fn constrained_generation_passes_form_check() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Sdu, ExtKind::None);
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, Some(&fx.lexicon));
    for (kw, form) in [("明月", Form::Wujue), ("山水", Form::Qijue), ("江雪", Form::Wujue)] {
        let opts = GenerateOptions {
            form,
            beam: 5,
            ..GenerateOptions::default()
        };
        let p = g.generate(kw, &opts).unwrap();
        let again = check_form(&p.lines, form, &fx.lexicon, &g.patterns);
        assert!(again.all_ok(), "{kw}: {:?} {again:?}", p.lines);
        assert_eq!(again, p.form_check);
        assert!(p.constraints.template.is_some());
        assert!(p.constraints.rhyme_group.is_some());
    }
}

#[test]
fn generation_is_deterministic() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Ssi, ExtKind::IntentStyle);
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, Some(&fx.lexicon));
    let opts = GenerateOptions {
        beam: 3,
        style: Some(Style::Romantic),
        seed: 4,
        ..GenerateOptions::default()
    };
    let a = g.generate("孤舟", &opts).unwrap();
    let b = g.generate("孤舟", &opts).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn exhausted_beam_names_line_and_template() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Sdu, ExtKind::None);
    let mut all_oblique = ToneLexicon::new();
    for &c in fx.corpus.vocab.chars() {
        all_oblique.insert(c, ToneEntry { tone: Tone::Ze, rhyme: Some(0) });
    }
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, Some(&all_oblique));
    let opts = GenerateOptions {
        beam: 2,
        ..GenerateOptions::default()
    };
    match g.generate("明月", &opts) {
        Err(Error::BeamExhausted { line, template }) => {
            assert_eq!(line, 1);
            assert!(template.contains("4 templates"));
        }
        other => panic!("{other:?}"),
    }
    let free = GenerateOptions {
        constraints: false,
        ..opts
    };
    assert!(g.generate("明月", &free).is_ok());
}

#[test]
fn invalid_requests_are_rejected() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Sdu, ExtKind::None);
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, None);
    let opts = GenerateOptions::default();
    assert!(matches!(g.generate("明月", &opts), Err(Error::Invalid(_))));
    let free = GenerateOptions {
        constraints: false,
        beam: 2,
        ..GenerateOptions::default()
    };
    assert!(g.generate("", &free).is_err());
    let styled = GenerateOptions {
        style: Some(Style::Pastoral),
        ..free.clone()
    };
    assert!(matches!(g.generate("明月", &styled), Err(Error::Invalid(_))));
    let zero = GenerateOptions { beam: 0, ..free };
    assert!(g.generate("明月", &zero).is_err());
}

#[test]
fn unknown_keyword_chars_use_unk() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Sdu, ExtKind::None);
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, None);
    let opts = GenerateOptions {
        constraints: false,
        beam: 2,
        ..GenerateOptions::default()
    };
    let p = g.generate("龘月", &opts).unwrap();
    assert_eq!(p.unknown_keyword_chars, 1);
}

#[test]
fn record_has_expected_fields() {
    let fx = fixture();
    let m = small_model(fx.corpus.vocab.len(), ClueMode::Sdu, ExtKind::Style);
    let g = Generator::new(&m, &fx.corpus.vocab, &fx.tfidf, Some(&fx.lexicon));
    let opts = GenerateOptions {
        beam: 2,
        style: Some(Style::Battlefield),
        ..GenerateOptions::default()
    };
    let p = g.generate("明月", &opts).unwrap();
    let v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
    for key in ["lines", "keyword", "style", "form", "saliency", "log_prob", "form_check", "constraints"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["style"], "battlefield");
    assert_eq!(v["form"], "wujue");
    assert_eq!(v["constraints"]["mode"], "in-search pruning");
    assert!(v.get("ids").is_none());
}
