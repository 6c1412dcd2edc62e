use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokens::{self, BOS_FORM, EOS_FORM, PAD_FORM, UNK_FORM};

/// Surface form <-> id map.
///
/// Id layout: `<pad>`=0, `<unk>`=1, `<s>`=2, `</s>`=3, then language tags
/// `<2xx>`, then length tokens `<len_1>..<len_L>` (source-token mode only),
/// then corpus tokens in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    forms: Vec<String>,
    index: HashMap<String, usize>,
    n_tags: usize,
    n_len_tokens: usize,
}

pub fn tag_form(lang: &str) -> String {
    format!("<2{lang}>")
}

pub fn len_form(j: usize) -> String {
    format!("<len_{j}>")
}

fn is_tag_form(s: &str) -> bool {
    s.starts_with("<2") && s.ends_with('>') && s.len() > 3
}

fn len_form_value(s: &str) -> Option<usize> {
    s.strip_prefix("<len_")?.strip_suffix('>')?.parse().ok()
}

impl Vocabulary {
    pub fn build<'a>(
        languages: &[&str],
        max_len_tokens: Option<usize>,
        corpus: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut forms: Vec<String> = [PAD_FORM, UNK_FORM, BOS_FORM, EOS_FORM].iter().map(|s| s.to_string()).collect();
        forms.extend(languages.iter().map(|l| tag_form(l)));
        let n_len_tokens = max_len_tokens.unwrap_or(0);
        forms.extend((1..=n_len_tokens).map(len_form));
        let mut v = Vocabulary { index: HashMap::new(), forms: Vec::new(), n_tags: languages.len(), n_len_tokens };
        for f in forms {
            v.push(f)?;
        }
        for tok in corpus {
            if !v.index.contains_key(tok) {
                if tok.starts_with('<') && tok.ends_with('>') {
                    return Err(Error::data(format!("corpus token '{tok}' collides with reserved syntax")));
                }
                v.push(tok.to_string())?;
            }
        }
        Ok(v)
    }

    fn push(&mut self, form: String) -> Result<()> {
        if self.index.contains_key(&form) {
            return Err(Error::data(format!("duplicate vocabulary entry '{form}'")));
        }
        self.index.insert(form.clone(), self.forms.len());
        self.forms.push(form);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn id(&self, form: &str) -> Option<usize> {
        self.index.get(form).copied()
    }

    /// Id of `form`, or `<unk>`.
    pub fn id_or_unk(&self, form: &str) -> usize {
        self.id(form).unwrap_or(tokens::UNK)
    }

    pub fn form(&self, id: usize) -> &str {
        self.forms.get(id).map(String::as_str).unwrap_or(UNK_FORM)
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }

    pub fn encode(&self, forms: &[impl AsRef<str>]) -> Vec<usize> {
        forms.iter().map(|f| self.id_or_unk(f.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.form(i).to_string()).collect()
    }

    pub fn tag(&self, lang: &str) -> Result<usize> {
        self.id(&tag_form(lang)).ok_or_else(|| Error::data(format!("unknown language '{lang}'")))
    }

    pub fn max_len_token(&self) -> usize {
        self.n_len_tokens
    }

    pub fn len_token(&self, j: usize) -> Result<usize> {
        if j == 0 || j > self.n_len_tokens {
            return Err(Error::data(format!("no length token for J={j} (vocabulary covers 1..={})", self.n_len_tokens)));
        }
        Ok(self.first_len_id() + j - 1)
    }

    fn first_len_id(&self) -> usize {
        4 + self.n_tags
    }

    /// First id of an ordinary corpus token.
    pub fn first_corpus_id(&self) -> usize {
        4 + self.n_tags + self.n_len_tokens
    }

    pub fn is_corpus(&self, id: usize) -> bool {
        id >= self.first_corpus_id() && id < self.forms.len()
    }

    pub fn is_tag(&self, id: usize) -> bool {
        (4..4 + self.n_tags).contains(&id)
    }

    pub fn is_len_token(&self, id: usize) -> bool {
        (self.first_len_id()..self.first_corpus_id()).contains(&id)
    }

    /// True for corpus tokens whose surface form ends in the `@@` marker.
    pub fn is_continuation(&self, id: usize) -> bool {
        self.is_corpus(id) && tokens::is_continuation(&self.forms[id])
    }

    /// Ids the decoder may emit: EOS and corpus tokens.
    pub fn output_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| i == tokens::EOS || self.is_corpus(i)).collect()
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.forms {
            s.push_str(f);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let reserved = [PAD_FORM, UNK_FORM, BOS_FORM, EOS_FORM];
        if lines.len() < 4 || lines[..4] != reserved {
            return Err(Error::data("vocabulary must start with <pad>, <unk>, <s>, </s>"));
        }
        let n_tags = lines[4..].iter().take_while(|l| is_tag_form(l)).count();
        let n_len = lines[4 + n_tags..]
            .iter()
            .enumerate()
            .take_while(|(i, l)| len_form_value(l) == Some(i + 1))
            .count();
        let mut v = Vocabulary { index: HashMap::new(), forms: Vec::new(), n_tags, n_len_tokens: n_len };
        for l in lines {
            v.push(l.to_string())?;
        }
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
