use super::*;
use crate::autodiff::{Tape, Var};
use crate::corpus::{Form, Style, TfIdfTable, Vocabulary, BOS};
use crate::Error;

fn tiny(clue: ClueMode, ext: ExtKind) -> ModelConfig {
    ModelConfig {
        vocab_size: 9,
        embedding_dim: 3,
        encoder_hidden: 2,
        decoder_hidden: 3,
        attention_dim: 3,
        clue_dim: 4,
        ssi_slot_dim: 2,
        intent_dim: 3,
        style_dim: 2,
        maxout_pieces: 2,
        maxout_dim: 3,
        clue,
        ext,
        ..ModelConfig::default()
    }
}

fn model(clue: ClueMode, ext: ExtKind) -> Model<f64> {
    Model::new(tiny(clue, ext), 7, 0.5).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn sel(indices: &[usize], r: &[f64]) -> Selection<f64> {
    Selection {
        indices: indices.to_vec(),
        scores: indices.iter().map(|&i| r[i]).collect(),
    }
}

// ---- plain-f64 reference network ----------------------------------------

struct Ref<'a>(&'a Model<f64>);

impl Ref<'_> {
    fn t(&self, name: &str) -> &Tensor<f64> {
        self.0.param(name).unwrap()
    }

    fn mv(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let w = self.t(name);
        (0..w.rows())
            .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn affine(&self, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
        let mut y = self.mv(w, x);
        for (yi, bi) in y.iter_mut().zip(self.t(b).data()) {
            *yi += bi;
        }
        y
    }

    fn emb(&self, id: u32) -> Vec<f64> {
        self.t("embedding").row(id as usize).to_vec()
    }

    fn lstm(&self, w: &str, b: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let z = self.affine(w, b, &xh);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for k in 0..n {
            let (i, f, g, o) = (sig(z[k]), sig(z[n + k]), z[2 * n + k].tanh(), sig(z[3 * n + k]));
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    fn encode(&self, line: &[u32]) -> Vec<Vec<f64>> {
        let n = self.0.config().encoder_hidden;
        let mut fwd = Vec::new();
        let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
        for &x in line {
            (h, c) = self.lstm("encoder.forward.w", "encoder.forward.b", &self.emb(x), &h, &c);
            fwd.push(h.clone());
        }
        let mut bwd = vec![Vec::new(); line.len()];
        let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
        for t in (0..line.len()).rev() {
            (h, c) = self.lstm("encoder.backward.w", "encoder.backward.b", &self.emb(line[t]), &h, &c);
            bwd[t] = h.clone();
        }
        fwd.into_iter().zip(bwd).map(|(f, b)| [f, b].concat()).collect()
    }

    /// Returns (attention, probabilities) for the first decoder step.
    fn first_step(&self, states: &[Vec<f64>], cond: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.0.config().decoder_hidden;
        let (h0, c0) = (vec![0.0; hd], vec![0.0; hd]);
        let q = self.mv("attention.query", &h0);
        let v = self.t("attention.score").data().to_vec();
        let scores: Vec<f64> = states
            .iter()
            .map(|s| {
                let k = self.affine("attention.key", "attention.bias", s);
                v.iter().zip(q.iter().zip(&k)).map(|(vi, (a, b))| vi * (a + b).tanh()).sum()
            })
            .collect();
        let alpha = softmax(&scores);
        let mut ctx = vec![0.0; states[0].len()];
        for (a, s) in alpha.iter().zip(states) {
            for (ci, si) in ctx.iter_mut().zip(s) {
                *ci += a * si;
            }
        }
        let e = self.emb(BOS);
        let x: Vec<f64> = e.iter().chain(&ctx).copied().collect();
        let (h, _) = self.lstm("decoder.w", "decoder.b", &x, &h0, &c0);
        let feats: Vec<f64> = [h, e, ctx, cond.to_vec()].concat();
        let pre = self.affine("readout.w", "readout.b", &feats);
        let d = self.0.config().maxout_dim;
        let m: Vec<f64> = (0..d).map(|j| pre[j].max(pre[d + j])).collect();
        let logits = self.affine("output.w", "output.b", &m);
        (alpha, softmax(&logits))
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn zero_cond(m: &Model<f64>, tape: &Tape<f64>) -> Conditioning {
    let clue = ClueState::new(m.config(), Form::Wujue);
    m.conditioning(tape, &clue, &Extension::none()).unwrap()
}

// ---- encoder / decoder ----------------------------------------------------

#[test]
fn encoder_state_shapes() {
    let cfg = ModelConfig {
        vocab_size: 12,
        ..ModelConfig::default()
    };
    let m: Model<f64> = Model::new(cfg, 1, INIT_SCALE).unwrap();
    let tape = Tape::new();
    let enc = m.encode(&tape, &[4, 5, 6, 7, 8]).unwrap();
    assert_eq!(enc.len(), 5);
    for &s in &enc.states {
        assert_eq!(tape.shape(s), vec![512]);
    }
}

#[test]
fn encoder_rejects_empty_line() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    assert!(m.encode(&Tape::new(), &[]).is_err());
}

#[test]
fn mirrored_encoder_is_reversal_symmetric() {
    let mut m = model(ClueMode::Sdu, ExtKind::None);
    let (fw, fb) = (m.param_id("encoder.forward.w"), m.param_id("encoder.forward.b"));
    let (bw, bb) = (m.param_id("encoder.backward.w"), m.param_id("encoder.backward.b"));
    let w = m.params().get(fw).clone();
    let b = m.params().get(fb).clone();
    *m.params_mut().get_mut(bw) = w;
    *m.params_mut().get_mut(bb) = b;

    let tape = Tape::new();
    let line = [4u32, 6, 5, 8];
    let rev: Vec<u32> = line.iter().rev().copied().collect();
    let a = m.encode(&tape, &line).unwrap();
    let r = m.encode(&tape, &rev).unwrap();
    let he = m.config().encoder_hidden;
    for t in 0..line.len() {
        let x = tape.data(a.states[t]);
        let y = tape.data(r.states[line.len() - 1 - t]);
        close(&x[..he], &y[he..], 1e-15);
        close(&x[he..], &y[..he], 1e-15);
    }
}

#[test]
fn zero_weights_give_zero_states() {
    let mut m = model(ClueMode::Sdu, ExtKind::None);
    let ids: Vec<_> = m.params().ids().collect();
    for id in ids {
        let t = m.params_mut().get_mut(id);
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let tape = Tape::new();
    let enc = m.encode(&tape, &[4, 5, 6]).unwrap();
    for &s in &enc.states {
        assert!(tape.data(s).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn decode_step_gives_distribution() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let enc = m.encode(&tape, &[4, 5, 6, 7, 8]).unwrap();
    let step = m
        .decode_step(&tape, &enc, m.initial_state(&tape), BOS, zero_cond(&m, &tape))
        .unwrap();
    let p = m.distribution(&tape, &step);
    assert_eq!(p.len(), 9);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|&x| x > 0.0));
    let a = tape.data(step.attention);
    assert_eq!(a.len(), 5);
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn single_source_char_gets_all_attention() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let enc = m.encode(&tape, &[6]).unwrap();
    let step = m
        .decode_step(&tape, &enc, m.initial_state(&tape), BOS, zero_cond(&m, &tape))
        .unwrap();
    assert_eq!(tape.data(step.attention), vec![1.0]);
}

#[test]
fn forward_matches_reference() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let r = Ref(&m);
    let line = [4u32, 7, 5];
    let tape = Tape::new();
    let enc = m.encode(&tape, &line).unwrap();
    let states = r.encode(&line);
    for (s, want) in enc.states.iter().zip(&states) {
        close(&tape.data(*s), want, 1e-13);
    }
    let step = m
        .decode_step(&tape, &enc, m.initial_state(&tape), BOS, zero_cond(&m, &tape))
        .unwrap();
    let (alpha, probs) = r.first_step(&states, &vec![0.0; m.config().clue_width()]);
    close(&tape.data(step.attention), &alpha, 1e-13);
    close(&m.distribution(&tape, &step), &probs, 1e-13);
}

#[test]
fn teacher_forced_nll_is_sum_of_step_losses() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let enc = m.encode(&tape, &[4, 5, 6]).unwrap();
    let target = [7u32, 8, 4];
    let out = m.decode_line(&tape, &enc, &target, zero_cond(&m, &tape)).unwrap();
    let want: f64 = out
        .steps
        .iter()
        .zip(&target)
        .map(|(s, &y)| -m.distribution(&tape, s)[y as usize].ln())
        .sum();
    assert!((tape.item(out.nll) - want).abs() < 1e-12);
    assert_eq!(out.trace.rows.len(), 3);
}

#[test]
fn conditioning_checks_mode_and_extension() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let ssi_clue = ClueState::new(&tiny(ClueMode::Ssi, ExtKind::None), Form::Wujue);
    assert!(m.conditioning(&tape, &ssi_clue, &Extension::none()).is_err());

    let styled = model(ClueMode::Sdu, ExtKind::Style);
    let clue = ClueState::new(styled.config(), Form::Wujue);
    assert!(styled.conditioning(&tape, &clue, &Extension::none()).is_err());
}

// ---- saliency ---------------------------------------------------------------

/// Attention for a five-character source whose column mass puts 0.53 on
/// the first character and 0.17 on the second.
fn salient_attention() -> Vec<Vec<f64>> {
    let a = vec![0.6, 0.1, 0.1, 0.1, 0.1];
    let b = vec![0.46, 0.24, 0.14, 0.1, 0.06];
    let c = vec![0.53, 0.17, 0.12, 0.10, 0.08];
    vec![a.clone(), b.clone(), c, a, b]
}

#[test]
fn naive_saliency_of_identity_is_uniform() {
    let a: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| f64::from(i == j)).collect()).collect();
    assert_eq!(saliency_naive(&a), vec![0.25; 4]);
}

#[test]
fn naive_saliency_of_one_hot_column() {
    let a = vec![vec![0.0, 1.0, 0.0]; 5];
    assert_eq!(saliency_naive(&a), vec![0.0, 1.0, 0.0]);
}

#[test]
fn naive_saliency_of_fixture() {
    let r = saliency_naive(&salient_attention());
    close(&r, &[0.53, 0.17, 0.12, 0.10, 0.08], 1e-12);
    let s = select_salient(&r, 2);
    assert_eq!(s.indices, vec![0]);
}

#[test]
fn tfidf_saliency_with_unit_weights_is_column_sums() {
    let a = salient_attention();
    let r = saliency_tfidf(&a, &[1.0; 5], &[1.0; 5]).unwrap();
    close(&r, &[2.65, 0.85, 0.6, 0.5, 0.4], 1e-12);
}

#[test]
fn tfidf_saliency_zero_input_weight_annihilates() {
    let a = salient_attention();
    let r = saliency_tfidf(&a, &[0.0, 1.0, 1.0, 1.0, 1.0], &[0.3, 0.9, 1.0, 0.2, 0.5]).unwrap();
    assert_eq!(r[0], 0.0);
    assert!(r[1] > 0.0);
}

#[test]
fn tfidf_saliency_matches_double_loop() {
    let a = salient_attention();
    let w_in = [0.2, 1.0, 0.0, 0.7, 0.4];
    let w_out = [1.0, 0.5, 0.25, 0.0, 0.9];
    let r = saliency_tfidf(&a, &w_in, &w_out).unwrap();
    for j in 0..5 {
        let mut acc = 0.0;
        for i in 0..5 {
            acc += w_out[i] * a[i][j];
        }
        assert!((r[j] - acc * w_in[j]).abs() < 1e-14);
    }
}

#[test]
fn tfidf_saliency_rejects_mismatched_weights() {
    let a = salient_attention();
    let e = saliency_tfidf(&a, &[1.0; 4], &[1.0; 5]).unwrap_err();
    assert!(matches!(e, Error::Shape { op: "saliency_tfidf", .. }));
}

#[test]
fn tape_saliency_matches_pure_functions() {
    let tape = Tape::new();
    let a = salient_attention();
    let rows: Vec<Var> = a.iter().map(|r| tape.input(Tensor::vector(r.clone()))).collect();
    let states: Vec<Var> = (0..5).map(|_| tape.constant(Tensor::zeros(&[2]))).collect();
    let trace = AttentionTrace { rows, states };
    let w_in = [0.2, 1.0, 0.0, 0.7, 0.4];
    let w_out = [1.0, 0.5, 0.25, 0.0, 0.9];

    let mut cfg = tiny(ClueMode::Sdu, ExtKind::None);
    let m: Model<f64> = Model::new(cfg.clone(), 1, 0.1).unwrap();
    let r = m.saliency_var(&tape, &trace, &w_in, &w_out).unwrap();
    close(&tape.data(r), &saliency_tfidf(&a, &w_in, &w_out).unwrap(), 1e-15);

    cfg.saliency = SaliencyMode::Naive;
    let m: Model<f64> = Model::new(cfg, 1, 0.1).unwrap();
    let r = m.saliency_var(&tape, &trace, &w_in, &w_out).unwrap();
    close(&tape.data(r), &saliency_naive(&a), 1e-15);
}

#[test]
fn selection_hand_traces() {
    assert_eq!(select_salient(&[0.53, 0.17, 0.12, 0.10, 0.08], 2).indices, vec![0]);
    assert_eq!(select_salient(&[0.2; 5], 2).indices, vec![0, 1]);
    assert!(select_salient(&[1.0, 1.0, 1.0, 1.0, 1.0, 0.0], 2).is_empty());
    assert_eq!(select_salient(&[0.1; 7], 3).indices, vec![0, 1, 2]);
}

#[test]
fn selection_decays_threshold() {
    // mean 0.3, std ~0.3367: thresholds ~0.468, 0.289, 0.179, 0.111
    let r = [0.0, 0.5, 0.9, 0.0, 0.4, 0.0];
    let s = select_salient(&r, 5);
    assert_eq!(s.indices, vec![2, 1, 4]);
    assert_eq!(s.scores, vec![0.9, 0.5, 0.4]);
    // 0.25 would pass the decayed threshold but not the initial one
    assert!(select_salient(&[0.25, 0.0, 0.0, 0.0], 2).indices == vec![0]);
}

#[test]
fn selection_of_empty_and_short_inputs() {
    assert!(select_salient::<f64>(&[], 3).is_empty());
    assert_eq!(select_salient(&[0.4], 3).indices, vec![0]);
    assert!(select_salient(&[0.4, 0.1], 0).is_empty());
}

// ---- clue updates ------------------------------------------------------------

fn state_vars(tape: &Tape<f64>, rows: &[&[f64]]) -> Vec<Var> {
    rows.iter().map(|r| tape.input(Tensor::vector(r.to_vec()))).collect()
}

#[test]
fn salient_average_of_single_selection_is_the_state() {
    let tape = Tape::new();
    let states = state_vars(&tape, &[&[1.0, 2.0], &[-3.0, 0.5], &[4.0, 4.0]]);
    let rv = [0.1, 0.7, 0.2];
    let r = tape.input(Tensor::vector(rv.to_vec()));
    let s = salient_average(&tape, &sel(&[1], &rv), r, &states).unwrap();
    assert_eq!(tape.data(s), vec![-3.0, 0.5]);
}

#[test]
fn salient_average_with_equal_scores_is_the_mean() {
    let tape = Tape::new();
    let states = state_vars(&tape, &[&[1.0, 2.0], &[-3.0, 0.5], &[4.0, 4.0]]);
    let rv = [0.25, 0.25, 0.25];
    let r = tape.input(Tensor::vector(rv.to_vec()));
    let s = salient_average(&tape, &sel(&[0, 1, 2], &rv), r, &states).unwrap();
    close(&tape.data(s), &[2.0 / 3.0, 6.5 / 3.0], 1e-15);
}

#[test]
fn salient_average_weights_by_score() {
    let tape = Tape::new();
    let rows: [&[f64]; 4] = [&[1.0, 0.0, 2.0], &[0.0, 1.0, -1.0], &[3.0, 3.0, 3.0], &[9.0, 9.0, 9.0]];
    let states = state_vars(&tape, &rows);
    let rv = [0.5, 0.3, 0.2, 0.0];
    let r = tape.input(Tensor::vector(rv.to_vec()));
    let s = salient_average(&tape, &sel(&[0, 1, 2], &rv), r, &states).unwrap();
    let mut want = [0.0; 3];
    for m in 0..3 {
        for d in 0..3 {
            want[d] += rv[m] * rows[m][d];
        }
    }
    close(&tape.data(s), &want, 1e-15);
}

#[test]
fn salient_average_with_zero_scores_falls_back_to_mean() {
    let tape = Tape::new();
    let states = state_vars(&tape, &[&[1.0, 2.0], &[3.0, 0.0]]);
    let rv = [0.0, 0.0];
    let r = tape.input(Tensor::vector(rv.to_vec()));
    let s = salient_average(&tape, &sel(&[0, 1], &rv), r, &states).unwrap();
    assert_eq!(tape.data(s), vec![2.0, 1.0]);
}

#[test]
fn sdu_update_matches_reference() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let rows: [&[f64]; 3] = [&[0.1, 0.2, 0.3, 0.4], &[-0.5, 0.5, 0.0, 1.0], &[0.9, -0.9, 0.2, 0.1]];
    let states = state_vars(&tape, &rows);
    let rv = [0.2, 0.6, 0.2];
    let r = tape.input(Tensor::vector(rv.to_vec()));
    let clue = ClueState::new(m.config(), Form::Wujue);

    let next = m.update_clue_sdu(&tape, &clue, &sel(&[1], &rv), r, &states).unwrap();
    assert_eq!(next.line(), 1);
    let x: Vec<f64> = [vec![0.0; 4], rows[1].to_vec()].concat();
    let want: Vec<f64> = Ref(&m).affine("sdu.w", "sdu.b", &x).iter().map(|v| v.tanh()).collect();
    close(&tape.data(next.vector(&tape).unwrap()), &want, 1e-15);

    let same = m.update_clue_sdu(&tape, &next, &sel(&[], &rv), r, &states).unwrap();
    assert_eq!(same.line(), 1);
    assert_eq!(tape.data(same.vector(&tape).unwrap()), want);
}

#[test]
fn ssi_capacity_and_cursor() {
    let cfg = ModelConfig {
        vocab_size: 10,
        clue: ClueMode::Ssi,
        ..ModelConfig::default()
    };
    assert_eq!(cfg.ssi_capacity(Form::Wujue), 600);
    assert_eq!(cfg.ssi_capacity(Form::Qijue), 900);
    assert_eq!(cfg.clue_width(), 900);

    let m = model(ClueMode::Ssi, ExtKind::None);
    let tape = Tape::new();
    let states = state_vars(&tape, &[&[0.1, 0.2, 0.3, 0.4], &[0.5, 0.6, 0.7, 0.8], &[0.0; 4]]);
    let rv = [0.5, 0.3, 0.2];
    let mut clue = ClueState::new(m.config(), Form::Wujue);
    assert_eq!((clue.cursor(), clue.capacity()), (Some(0), Some(12)));
    assert_eq!(tape.data(clue.vector(&tape).unwrap()), vec![0.0; 12]);

    clue = m.update_clue_ssi(&tape, &clue, &sel(&[1, 0], &rv), &states).unwrap();
    assert_eq!(clue.cursor(), Some(4));
    let v = tape.data(clue.vector(&tape).unwrap());
    assert_eq!(v.len(), 12);
    let r = Ref(&m);
    let slot = |i: usize| -> Vec<f64> {
        let h = tape.data(states[i]);
        r.affine("ssi.w", "ssi.b", &h).iter().map(|x| x.tanh()).collect()
    };
    close(&v[..2], &slot(1), 1e-15);
    close(&v[2..4], &slot(0), 1e-15);
    assert!(v[4..].iter().all(|&x| x == 0.0));

    clue = m.update_clue_ssi(&tape, &clue, &sel(&[], &rv), &states).unwrap();
    assert_eq!(clue.cursor(), Some(4));
    clue = m.update_clue_ssi(&tape, &clue, &sel(&[2, 1], &rv), &states).unwrap();
    clue = m.update_clue_ssi(&tape, &clue, &sel(&[0, 2], &rv), &states).unwrap();
    assert_eq!(clue.cursor(), Some(12));
    let e = m.update_clue_ssi(&tape, &clue, &sel(&[0], &rv), &states).unwrap_err();
    assert!(matches!(e, Error::ClueOverflow { cursor: 12, needed: 2, capacity: 12 }));
}

#[test]
fn ssi_clue_is_padded_to_widest_form() {
    let m = model(ClueMode::Ssi, ExtKind::None);
    assert_eq!(m.config().clue_width(), 18);
    let tape = Tape::new();
    let cond = zero_cond(&m, &tape);
    assert_eq!(tape.shape(cond.vector), vec![18]);
}

#[test]
fn advance_clue_uses_form_k() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let enc = m.encode(&tape, &[4, 5, 6, 7, 8]).unwrap();
    let out = m.decode_line(&tape, &enc, &[5, 6, 7, 8, 4], zero_cond(&m, &tape)).unwrap();
    let clue = ClueState::new(m.config(), Form::Wujue);
    let (next, selection, scores) = m
        .advance_clue(&tape, &clue, &out.trace, &[1.0; 5], &[1.0; 5])
        .unwrap();
    assert_eq!(scores.len(), 5);
    assert!(selection.len() <= 2);
    assert_eq!(selection, select_salient(&scores, 2));
    assert_eq!(next.line(), usize::from(!selection.is_empty()));
}

#[test]
fn gradients_reach_attention_through_the_clue() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    let src = m.encode(&tape, &[4, 5, 6, 7, 8]).unwrap();
    let first = m.decode_line(&tape, &src, &[5, 6, 7, 8, 4], zero_cond(&m, &tape)).unwrap();
    let clue = ClueState::new(m.config(), Form::Wujue);
    let (clue, selection, _) = m
        .advance_clue(&tape, &clue, &first.trace, &[1.0; 5], &[1.0; 5])
        .unwrap();
    assert!(!selection.is_empty());
    let cond = m.conditioning(&tape, &clue, &Extension::none()).unwrap();
    let src2 = m.encode(&tape, &[5, 6, 7, 8, 4]).unwrap();
    let second = m.decode_line(&tape, &src2, &[6, 7, 8, 4, 5], cond).unwrap();

    let grads = tape.backward(second.nll).unwrap();
    let g = grads.param(m.param_id("sdu.w")).unwrap();
    assert!(g.data().iter().any(|&x| x != 0.0));
    let first_src = grads.wrt(first.trace.rows[0]).into_data();
    assert!(first_src.iter().any(|&x| x != 0.0));

    let mut detached = clue.clone();
    detached.detach(&tape);
    let cond = m.conditioning(&tape, &detached, &Extension::none()).unwrap();
    let third = m.decode_line(&tape, &src2, &[6, 7, 8, 4, 5], cond).unwrap();
    let grads = tape.backward(third.nll).unwrap();
    assert!(grads.param(m.param_id("sdu.w")).is_none_or(|g| g.data().iter().all(|&x| x == 0.0)));
}

// ---- extensions ---------------------------------------------------------------

#[test]
fn intent_of_single_char_keyword() {
    let m = model(ClueMode::Sdu, ExtKind::Intent);
    let tape = Tape::new();
    let e = m.make_intent_vector(&tape, &[6]).unwrap();
    let r = Ref(&m);
    let h = &r.encode(&[6])[0];
    let want: Vec<f64> = r.affine("intent.w", "intent.b", h).iter().map(|x| x.tanh()).collect();
    close(&tape.data(e), &want, 1e-14);
    assert!(m.make_intent_vector(&tape, &[]).is_err());
}

#[test]
fn intent_averages_keyword_states() {
    let m = model(ClueMode::Sdu, ExtKind::Intent);
    let tape = Tape::new();
    let e = m.make_intent_vector(&tape, &[6, 4]).unwrap();
    let r = Ref(&m);
    let hs = r.encode(&[6, 4]);
    let mean: Vec<f64> = hs[0].iter().zip(&hs[1]).map(|(a, b)| (a + b) / 2.0).collect();
    let want: Vec<f64> = r.affine("intent.w", "intent.b", &mean).iter().map(|x| x.tanh()).collect();
    close(&tape.data(e), &want, 1e-14);
}

#[test]
fn default_extension_widths() {
    let cfg = ModelConfig {
        vocab_size: 10,
        embedding_dim: 4,
        encoder_hidden: 4,
        decoder_hidden: 4,
        attention_dim: 4,
        clue_dim: 4,
        maxout_dim: 4,
        ext: ExtKind::IntentStyle,
        ..ModelConfig::default()
    };
    let m: Model<f64> = Model::new(cfg, 3, INIT_SCALE).unwrap();
    let tape = Tape::new();
    let kw = m.encode(&tape, &[5, 6]).unwrap();
    assert_eq!(tape.shape(m.intent_vector(&tape, &kw).unwrap()), vec![128]);
    assert_eq!(tape.shape(m.make_style_vector(&tape, 2).unwrap()), vec![64]);
    let ext = m.extension(&tape, &kw, Some(Style::Romantic)).unwrap();
    assert_eq!(tape.shape(ext.vector.unwrap()), vec![192]);
}

#[test]
fn style_vectors_are_table_rows() {
    let m = model(ClueMode::Sdu, ExtKind::Style);
    let tape = Tape::new();
    let table = m.param("style.table").unwrap();
    for id in 0..STYLE_ROWS {
        let v = m.make_style_vector(&tape, id).unwrap();
        assert_eq!(tape.data(v), table.row(id));
    }
    let a = tape.data(m.make_style_vector(&tape, 1).unwrap());
    let b = tape.data(m.make_style_vector(&tape, 1).unwrap());
    assert_eq!(a, b);
    assert!(matches!(m.make_style_vector(&tape, 4), Err(Error::Invalid(_))));
    let enc = m.encode(&tape, &[4]).unwrap();
    let ext = m.extension(&tape, &enc, None).unwrap();
    assert_eq!(tape.data(ext.vector.unwrap()), table.row(Style::None.id()));
}

#[test]
fn extension_requires_weights() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let tape = Tape::new();
    assert!(m.make_style_vector(&tape, 0).is_err());
    assert!(m.make_intent_vector(&tape, &[4]).is_err());
}

#[test]
fn adding_an_extension_preserves_outputs() {
    let base = model(ClueMode::Sdu, ExtKind::Intent);
    let styled = base.with_extension(ExtKind::IntentStyle, 11, 0.5).unwrap();
    assert_eq!(styled.config().ext, ExtKind::IntentStyle);
    assert_ne!(styled.param("style.table").unwrap().data(), &[0.0; 8][..]);

    let run = |m: &Model<f64>| {
        let tape = Tape::new();
        let kw = m.encode(&tape, &[5, 6]).unwrap();
        let ext = m.extension(&tape, &kw, Some(Style::Battlefield)).unwrap();
        let clue = ClueState::new(m.config(), Form::Wujue);
        let cond = m.conditioning(&tape, &clue, &ext).unwrap();
        let step = m.decode_step(&tape, &kw, m.initial_state(&tape), BOS, cond).unwrap();
        m.distribution(&tape, &step)
    };
    close(&run(&base), &run(&styled), 1e-15);
}

// ---- parameters and checkpoints -------------------------------------------------

#[test]
fn parameters_are_seeded() {
    let a = model(ClueMode::Ssi, ExtKind::IntentStyle);
    let b = model(ClueMode::Ssi, ExtKind::IntentStyle);
    let c: Model<f64> = Model::new(tiny(ClueMode::Ssi, ExtKind::IntentStyle), 8, 0.5).unwrap();
    for ((_, n, x), (_, _, y)) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(x, y, "{n}");
    }
    assert_ne!(a.param("embedding"), c.param("embedding"));
    assert!(a.param("decoder.b").unwrap().data().iter().all(|&x| x == 0.0));
    assert!(a.param("embedding").unwrap().data().iter().all(|x| x.abs() <= 0.5));
}

#[test]
fn from_params_rejects_wrong_shapes() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let mut other = tiny(ClueMode::Sdu, ExtKind::None);
    other.clue_dim = 5;
    assert!(matches!(
        Model::from_params(other, m.params().clone()),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = model(ClueMode::Ssi, ExtKind::IntentStyle);
    let vocab = Vocabulary::from_chars("春风花草香".chars().collect()).unwrap();
    assert_eq!(vocab.len(), 9);
    let tfidf = TfIdfTable::from_parts(3, vec![0, 0, 0, 0, 1, 2, 3, 1, 1], 1.0f64.ln() + 0.1);
    let mut config = std::collections::BTreeMap::new();
    config.insert("learning_rate".to_owned(), "0.001".to_owned());
    let ck = Checkpoint {
        model: m,
        vocab,
        tfidf,
        config,
    };
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..8], b"SALCLUE\0");
    let back: Checkpoint<f64> = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    for ((_, n, x), (_, _, y)) in ck.model.params().iter().zip(back.model.params().iter()) {
        let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb, "{n}");
    }
    assert_eq!(back.tfidf.unk_idf().to_bits(), ck.tfidf.unk_idf().to_bits());
    assert_eq!(back.vocab, ck.vocab);
    assert_eq!(back.config, ck.config);
    assert_eq!(back.model.config(), ck.model.config());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(Checkpoint::<f64>::load(dir.path().join("missing")).is_err());
    assert!(Checkpoint::<f64>::from_bytes(b"nonsense").is_err());
}

#[test]
fn f32_model_tracks_f64() {
    let m = model(ClueMode::Sdu, ExtKind::None);
    let m32: Model<f32> = m.cast();
    let t64 = Tape::new();
    let t32 = Tape::new();
    let e64 = m.encode(&t64, &[4, 5, 6]).unwrap();
    let e32 = m32.encode(&t32, &[4, 5, 6]).unwrap();
    let c64 = zero_cond(&m, &t64);
    let clue = ClueState::new(m32.config(), Form::Wujue);
    let c32 = m32.conditioning(&t32, &clue, &Extension::none()).unwrap();
    let p64 = m.distribution(&t64, &m.decode_step(&t64, &e64, m.initial_state(&t64), BOS, c64).unwrap());
    let s32 = m32.decode_step(&t32, &e32, m32.initial_state(&t32), BOS, c32).unwrap();
    let p32 = m32.distribution(&t32, &s32);
    for (a, b) in p64.iter().zip(&p32) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn row_stochastic() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..7, 1usize..7).prop_flat_map(|(rows, cols)| {
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, cols), rows).prop_map(|m| {
                m.into_iter()
                    .map(|r| {
                        let z: f64 = r.iter().sum();
                        r.into_iter().map(|x| x / z).collect()
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn naive_scores_sum_to_one(a in row_stochastic()) {
            let r = saliency_naive(&a);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn selection_is_scale_covariant(
            r in prop::collection::vec(0.0f64..1.0, 1..10),
            k in 1usize..5,
            p in -8i32..8,
        ) {
            let c = 2f64.powi(p);
            let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
            prop_assert_eq!(select_salient(&r, k).indices, select_salient(&scaled, k).indices);
        }

        #[test]
        fn selection_is_bounded_and_descending(
            r in prop::collection::vec(0.0f64..1.0, 0..10),
            k in 0usize..5,
        ) {
            let s = select_salient(&r, k);
            prop_assert!(s.len() <= k.min(r.len()));
            for w in s.scores.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
