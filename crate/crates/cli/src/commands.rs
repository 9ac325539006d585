use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use salient_clue::autodiff::Tape;
use salient_clue::corpus::{
    load_corpus, load_tone_lexicon, parse_corpus, Form, RawPoem, Style, TfIdfTable, ToneLexicon,
};
use salient_clue::eval::{corpus_bleu, innovation, saliency_jaccard};
use salient_clue::generator::{check_form, GenerateOptions, GeneratedPoem, Generator, PatternTable};
use salient_clue::model::{Checkpoint, Model};
use salient_clue::trainer::{build_chain, finetune_style, poem_keyword, train, LossCurve, TrainConfig};
use salient_clue::{Checkpoint64, Result};
use serde_json::json;

use crate::inputs::{self, read_text, write_text};
use crate::{invalid, Command, EXIT_INVALID, EXIT_OK};

pub(crate) fn dispatch(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(a, out, err),
        Command::FinetuneStyle(a) => cmd_finetune(a, out, err),
        Command::Generate(a) => cmd_generate(a, out),
        Command::EvalBleu(a) => cmd_bleu(a, out),
        Command::EvalSaliency(a) => cmd_saliency(a, out),
        Command::EvalInnovation(a) => cmd_innovation(a, out),
        Command::InspectSaliency(a) => cmd_inspect(a, out),
        Command::CheckForm(a) => cmd_check_form(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|source| salient_clue::Error::Io {
        path: "<stdout>".into(),
        source,
    })
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn finish_training(curve: &LossCurve, curve_path: Option<&Path>, out: &mut dyn Write, ckpt: &Path) -> Result<i32> {
    if let Some(p) = curve_path {
        curve.write_csv(p)?;
    }
    let last = curve.last_train_loss().unwrap_or(f64::NAN);
    emit(
        out,
        &format!("steps {}  final train loss {last:.6}  checkpoint {}\n", curve.points.len(), ckpt.display()),
    )?;
    Ok(EXIT_OK)
}

fn warn_rejections(err: &mut dyn Write, rejected: &[salient_clue::corpus::Rejection]) {
    for r in rejected {
        let _ = writeln!(err, "skipped row {} (line {}): {}", r.row, r.line + 1, r.reason);
    }
}

fn cmd_train(a: &crate::TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(c) = a.clue {
        cfg.model.clue = c.into();
    }
    if let Some(e) = a.ext {
        cfg.model.ext = e.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    let corpus = load_corpus(&a.corpus, inputs::corpus_format(&a.corpus), cfg.validation_poems)?;
    warn_rejections(err, &corpus.rejected);
    let outcome = train::<f64>(&corpus, &cfg)?;
    outcome.checkpoint.save(&a.out)?;
    finish_training(&outcome.curve, a.curve.as_deref(), out, &a.out)
}

fn cmd_finetune(a: &crate::FinetuneArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    let base = Checkpoint64::load(&a.checkpoint)?;
    let text = read_text(&a.corpus)?;
    let (raw, rejected) = parse_corpus(&text, inputs::corpus_format(&a.corpus));
    warn_rejections(err, &rejected);
    let poems: Vec<_> = raw.iter().map(|p| p.encode(&base.vocab)).collect();
    let outcome = finetune_style(&base, &poems, &cfg)?;
    outcome.checkpoint.save(&a.out)?;
    finish_training(&outcome.curve, a.curve.as_deref(), out, &a.out)
}

fn load_lexicon(path: &Path) -> Result<ToneLexicon> {
    Ok(load_tone_lexicon(path)?.lexicon)
}

fn cmd_generate(a: &crate::GenerateArgs, out: &mut dyn Write) -> Result<i32> {
    if a.jobs == 0 {
        return Err(invalid("--jobs must be at least 1"));
    }
    let mut keywords = a.keyword.clone();
    if let Some(p) = &a.keywords {
        let text = read_text(p)?;
        keywords.extend(inputs::rows(&text).map(|(_, l)| l.trim().to_owned()));
    }
    if keywords.is_empty() {
        return Err(invalid("no keywords given"));
    }
    let ckpt = Checkpoint64::load(&a.checkpoint)?;
    let lexicon = a.lexicon.as_deref().map(load_lexicon).transpose()?;
    let constraints = match a.constraints {
        Some(s) => s == crate::Switch::On,
        None => lexicon.is_some(),
    };
    let opts = GenerateOptions {
        form: a.form.into(),
        beam: a.beam,
        constraints,
        style: a.style.map(Style::from),
        seed: a.seed,
    };
    let gen = Generator::new(&ckpt.model, &ckpt.vocab, &ckpt.tfidf, lexicon.as_ref());
    let poems = generate_all(&gen, &keywords, &opts, a.jobs)?;
    let mut text = String::new();
    for p in &poems {
        text.push_str(&p.to_json());
        text.push('\n');
    }
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => emit(out, &text)?,
    }
    Ok(EXIT_OK)
}

/// One poem per keyword, keyword order preserved; sessions share the model.
fn generate_all(
    gen: &Generator<f64>,
    keywords: &[String],
    opts: &GenerateOptions,
    jobs: usize,
) -> Result<Vec<GeneratedPoem>> {
    if jobs <= 1 || keywords.len() <= 1 {
        return keywords.iter().map(|k| gen.generate(k, opts)).collect();
    }
    let chunk = keywords.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<GeneratedPoem>>> = std::thread::scope(|s| {
        let handles: Vec<_> = keywords
            .chunks(chunk)
            .map(|ks| s.spawn(move || ks.iter().map(|k| gen.generate(k, opts)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
    });
    let mut all = Vec::with_capacity(keywords.len());
    for p in parts {
        all.extend(p?);
    }
    Ok(all)
}

fn write_report(path: Option<&Path>, report: &serde_json::Value) -> Result<()> {
    if let Some(p) = path {
        write_text(p, &format!("{}\n", serde_json::to_string_pretty(report)?))?;
    }
    Ok(())
}

fn cmd_bleu(a: &crate::EvalBleuArgs, out: &mut dyn Write) -> Result<i32> {
    let hyps = inputs::hypothesis_segments(&read_text(&a.hyp)?)?;
    let refs = inputs::reference_segments(&read_text(&a.reference)?)?;
    if hyps.len() != refs.len() {
        return Err(invalid(format!(
            "{} hypothesis lines but {} reference lines",
            hyps.len(),
            refs.len()
        )));
    }
    let r = corpus_bleu(&hyps, &refs)?;
    let mut t = String::new();
    let _ = writeln!(t, "BLEU  {:.2}", r.bleu);
    for n in 0..r.precisions.len() {
        let _ = writeln!(
            t,
            "p{}    {:.4}  ({}/{})",
            n + 1,
            r.precisions[n],
            r.matches[n],
            r.totals[n]
        );
    }
    let _ = writeln!(t, "BP    {:.4}  (hyp {}, ref {})", r.brevity_penalty, r.hyp_len, r.ref_len);
    emit(out, &t)?;
    write_report(
        a.out.as_deref(),
        &json!({
            "bleu": r.bleu,
            "precisions": r.precisions,
            "matches": r.matches,
            "totals": r.totals,
            "brevity_penalty": r.brevity_penalty,
            "hyp_len": r.hyp_len,
            "ref_len": r.ref_len,
            "segments": hyps.len(),
        }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_saliency(a: &crate::EvalSaliencyArgs, out: &mut dyn Write) -> Result<i32> {
    let (model, gold) = match (&a.annotations, &a.checkpoint, &a.gold) {
        (Some(p), _, _) => inputs::annotation_pairs(&read_text(p)?)?,
        (None, Some(c), Some(g)) => {
            let ckpt = Checkpoint64::load(c)?;
            let mut model = Vec::new();
            let mut gold = Vec::new();
            for gp in inputs::gold_poems(&read_text(g)?)? {
                let table = inspect_saliency_table(&ckpt, &gp.record, None, gp.record.style)?;
                for (t, sel) in table.transitions.iter().zip(gp.selected) {
                    model.push(t.selected.clone());
                    gold.push(sel);
                }
            }
            (model, gold)
        }
        _ => return Err(invalid("give --annotations, or --checkpoint with --gold")),
    };
    let score = saliency_jaccard(&model, &gold)?;
    emit(out, &format!("lines    {}\njaccard  {score:.6}\n", model.len()))?;
    write_report(a.out.as_deref(), &json!({ "lines": model.len(), "jaccard": score }))?;
    Ok(EXIT_OK)
}

fn cmd_innovation(a: &crate::EvalInnovationArgs, out: &mut dyn Write) -> Result<i32> {
    let poems: Vec<String> = inputs::loose_poems(&read_text(&a.hyp)?)?
        .into_iter()
        .map(|lines| lines.concat())
        .collect();
    let score = innovation(&poems)?;
    emit(out, &format!("poems       {}\ninnovation  {score:.6}\n", poems.len()))?;
    write_report(a.out.as_deref(), &json!({ "poems": poems.len(), "innovation": score }))?;
    Ok(EXIT_OK)
}

/// Saliency of one line transition (`from` and `to` are 1-based line numbers).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionTable {
    pub from: usize,
    pub to: usize,
    pub source: String,
    pub scores: Vec<f64>,
    /// Selected source positions, most salient first.
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InspectTable {
    pub form: Form,
    pub keyword: String,
    pub style: Option<Style>,
    pub saliency: String,
    pub k: usize,
    pub transitions: Vec<TransitionTable>,
}

impl InspectTable {
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(
            t,
            "form {}  keyword {}  saliency {}  K {}",
            self.form, self.keyword, self.saliency, self.k
        );
        for tr in &self.transitions {
            let _ = writeln!(t, "\nline {} -> {}  source {}", tr.from, tr.to, tr.source);
            let _ = writeln!(t, "pos  char  score");
            for (j, (c, s)) in tr.source.chars().zip(&tr.scores).enumerate() {
                let mark = if tr.selected.contains(&j) { "  *" } else { "" };
                let _ = writeln!(t, "{j:<4} {c}    {s:.6}{mark}");
            }
            let sel: Vec<String> = tr.selected.iter().map(usize::to_string).collect();
            let _ = writeln!(t, "selected [{}]", sel.join(", "));
        }
        t
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "form": self.form,
            "keyword": self.keyword,
            "style": self.style,
            "saliency": self.saliency,
            "k": self.k,
            "transitions": self.transitions.iter().map(|t| json!({
                "from": t.from,
                "to": t.to,
                "source": t.source,
                "scores": t.scores,
                "selected": t.selected,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Teacher-forces `poem` through the checkpoint and reports the saliency
/// scores and selection of every line transition.
pub fn inspect_saliency_table(
    ckpt: &Checkpoint<f64>,
    poem: &RawPoem,
    keyword: Option<&str>,
    style: Option<Style>,
) -> Result<InspectTable> {
    for line in &poem.lines {
        if let Some(c) = line.chars().find(|&c| ckpt.vocab.get(c).is_none()) {
            return Err(invalid(format!("character {c:?} is not in the checkpoint vocabulary")));
        }
    }
    let model: &Model<f64> = &ckpt.model;
    let mut encoded = poem.encode(&ckpt.vocab);
    encoded.style = style;
    let tfidf: &TfIdfTable = &ckpt.tfidf;
    let kw_ids = match keyword {
        Some(k) if !k.is_empty() => ckpt.vocab.encode(k),
        Some(_) => return Err(invalid("empty keyword")),
        None => poem_keyword(&encoded, tfidf),
    };
    let tape = Tape::new();
    let chain = build_chain(&tape, model, &encoded, &kw_ids, tfidf, true)?;
    let transitions = chain
        .transitions
        .iter()
        .map(|t| TransitionTable {
            from: t.line + 1,
            to: t.line + 2,
            source: poem.lines[t.line].clone(),
            scores: t.scores.clone(),
            selected: t.selection.indices.clone(),
        })
        .collect();
    Ok(InspectTable {
        form: poem.form,
        keyword: ckpt.vocab.decode(&kw_ids),
        style: if model.config().ext.has_style() { Some(style.unwrap_or(Style::None)) } else { None },
        saliency: model.config().saliency.to_string(),
        k: model.config().k(poem.form),
        transitions,
    })
}

fn cmd_inspect(a: &crate::InspectArgs, out: &mut dyn Write) -> Result<i32> {
    let poem = inputs::single_poem(&read_text(&a.poem)?)?;
    if let Some(f) = a.form {
        let f = Form::from(f);
        if f != poem.form {
            return Err(invalid(format!("poem is {}, expected {f}", poem.form)));
        }
    }
    let ckpt = Checkpoint64::load(&a.checkpoint)?;
    let style = a.style.map(Style::from).or(poem.style);
    let keyword = a.keyword.as_deref().or(poem.keyword.as_deref());
    let table = inspect_saliency_table(&ckpt, &poem, keyword, style)?;
    emit(out, &table.to_text())?;
    write_report(a.out.as_deref(), &table.to_json())?;
    Ok(EXIT_OK)
}

fn cmd_check_form(a: &crate::CheckFormArgs, out: &mut dyn Write) -> Result<i32> {
    let lexicon = load_lexicon(&a.lexicon)?;
    let poems = inputs::loose_poems(&read_text(&a.poem)?)?;
    if poems.is_empty() {
        return Err(invalid("no poems to check"));
    }
    let patterns = PatternTable::standard();
    let mut failed = 0;
    let mut t = String::new();
    for (i, lines) in poems.iter().enumerate() {
        let form = match a.form {
            Some(f) => f.into(),
            None => lines
                .first()
                .and_then(|l| Form::from_line_len(l.chars().count()))
                .unwrap_or(Form::Wujue),
        };
        let r = check_form(lines, form, &lexicon, &patterns);
        let verdict = if r.all_ok() { "ok" } else { "FAIL" };
        if !r.all_ok() {
            failed += 1;
        }
        let _ = writeln!(
            t,
            "{:<4} {form}  length {}  tone {}  rhyme {}  {verdict}  {}",
            i + 1,
            flag(r.length_ok),
            flag(r.tone_ok),
            flag(r.rhyme_ok),
            lines.join("|")
        );
    }
    let _ = writeln!(t, "{} of {} poems pass", poems.len() - failed, poems.len());
    emit(out, &t)?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_INVALID })
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "no"
    }
}
