//! ARPA backoff-model files. Values are written with 17 significant digits
//! so that every stored log10 value reads back bit-for-bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::{Entry, NGramModel, Smoothing, MAX_ORDER};
use crate::corpus::{Vocabulary, END, START, UNK};
use crate::{Error, Result};

/// Plain decimal rendering with 17 significant digits.
fn sig17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (16 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_arpa_string(model: &NGramModel) -> String {
    let vocab = model.vocab();
    let mut out = String::from("\n\\data\\\n");
    for k in 1..=model.order() {
        let _ = writeln!(out, "ngram {k}={}", model.entries(k).len());
    }
    for k in 1..=model.order() {
        let _ = write!(out, "\n\\{k}-grams:\n");
        let mut grams: Vec<(&Vec<u32>, &Entry)> = model.entries(k).iter().collect();
        grams.sort_unstable_by(|a, b| a.0.cmp(b.0));
        for (g, e) in grams {
            out.push_str(&sig17(e.log10_prob));
            out.push('\t');
            let words: Vec<&str> = g.iter().map(|&id| vocab.token(id)).collect();
            out.push_str(&words.join(" "));
            if let Some(b) = e.log10_bow {
                out.push('\t');
                out.push_str(&sig17(b));
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

pub fn write_arpa(model: &NGramModel, path: &Path) -> Result<()> {
    std::fs::write(path, write_arpa_string(model)).map_err(|e| Error::io(path, e))
}

pub fn read_arpa(path: &Path) -> Result<NGramModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arpa(&text)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

struct RawEntry {
    line: usize,
    words: Vec<String>,
    log10_prob: f64,
    log10_bow: Option<f64>,
}

pub fn parse_arpa(text: &str) -> Result<NGramModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    // header
    loop {
        match lines.next() {
            Some((_, "\\data\\")) => break,
            Some(_) => continue,
            None => return Err(parse_err(0, "missing \\data\\ section")),
        }
    }
    let mut declared: Vec<usize> = Vec::new();
    let mut pending: Option<(usize, &str)> = None;
    for (n, line) in lines.by_ref() {
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            let (k, c) = rest
                .split_once('=')
                .ok_or_else(|| parse_err(n, format!("malformed count line {line:?}")))?;
            let k: usize = k.trim().parse().map_err(|_| parse_err(n, "bad order"))?;
            let c: usize = c.trim().parse().map_err(|_| parse_err(n, "bad count"))?;
            if k != declared.len() + 1 {
                return Err(parse_err(n, format!("expected ngram {} count", declared.len() + 1)));
            }
            declared.push(c);
        } else {
            pending = Some((n, line));
            break;
        }
    }
    let order = declared.len();
    if order == 0 || order > MAX_ORDER {
        return Err(parse_err(0, format!("unsupported order {order}")));
    }

    let mut sections: Vec<Vec<RawEntry>> = (0..order).map(|_| Vec::new()).collect();
    let mut current: Option<usize> = None;
    let mut ended = false;
    let rest = pending.into_iter().chain(lines);
    for (n, line) in rest {
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            ended = true;
            break;
        }
        if let Some(k) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
            let k: usize = k.parse().map_err(|_| parse_err(n, format!("bad section header {line:?}")))?;
            if k == 0 || k > order {
                return Err(parse_err(n, format!("section {k} beyond declared order {order}")));
            }
            current = Some(k);
            continue;
        }
        let k = current.ok_or_else(|| parse_err(n, "entry outside an n-gram section"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != k + 1 && fields.len() != k + 2 {
            return Err(parse_err(n, format!("expected {} or {} fields, got {}", k + 1, k + 2, fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .ok_or_else(|| parse_err(n, format!("bad number {s:?}")))
        };
        sections[k - 1].push(RawEntry {
            line: n,
            words: fields[1..=k].iter().map(|s| s.to_string()).collect(),
            log10_prob: num(fields[0])?,
            log10_bow: if fields.len() == k + 2 { Some(num(fields[k + 1])?) } else { None },
        });
    }
    if !ended {
        return Err(parse_err(text.lines().count(), "missing \\end\\ marker"));
    }
    for (k, (sec, &want)) in sections.iter().zip(&declared).enumerate() {
        if sec.len() != want {
            let line = sec.last().map_or(0, |e| e.line);
            return Err(parse_err(
                line,
                format!("ngram {} declared {want} entries, found {}", k + 1, sec.len()),
            ));
        }
    }

    let vocab = Arc::new(Vocabulary::from_words(
        sections[0]
            .iter()
            .map(|e| e.words[0].clone())
            .filter(|w| w != START && w != END && w != UNK),
    ));
    let mut tables: Vec<HashMap<Vec<u32>, Entry>> = vec![HashMap::new(); order];
    for (k, sec) in sections.into_iter().enumerate() {
        for e in sec {
            let mut ids = Vec::with_capacity(e.words.len());
            for w in &e.words {
                let id = vocab
                    .get(w)
                    .ok_or_else(|| parse_err(e.line, format!("token {w:?} missing from unigrams")))?;
                ids.push(id);
            }
            if tables[k]
                .insert(
                    ids,
                    Entry {
                        log10_prob: e.log10_prob,
                        log10_bow: e.log10_bow,
                    },
                )
                .is_some()
            {
                return Err(parse_err(e.line, "duplicate entry"));
            }
        }
    }
    Ok(NGramModel::from_tables(order, vocab, tables, Smoothing::External))
}
