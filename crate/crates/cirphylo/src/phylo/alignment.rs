//! Character alphabets and multiple sequence alignments, read from FASTA or
//! sequential PHYLIP.

use crate::error::{Error, Result};
use std::collections::HashMap;

/// A finite character alphabet with case-insensitive lookup; '-' and '?' act
/// as gap/unknown symbols in any alphabet.
#[derive(Debug, Clone)]
pub struct Alphabet {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new(chars: &[char]) -> Self {
        let mut index = HashMap::new();
        for (i, &c) in chars.iter().enumerate() {
            index.insert(c.to_ascii_uppercase(), i);
            index.insert(c.to_ascii_lowercase(), i);
        }
        Alphabet {
            chars: chars.to_vec(),
            index,
        }
    }

    pub fn dna() -> Self {
        Self::new(&['A', 'C', 'G', 'T'])
    }

    pub fn n(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// State index, `None` for a gap, error otherwise.
    pub fn encode(&self, c: char) -> Result<Option<usize>> {
        if c == '-' || c == '?' {
            return Ok(None);
        }
        self.index
            .get(&c)
            .copied()
            .map(Some)
            .ok_or_else(|| Error::input(format!("character {c:?} is not in the alphabet")))
    }

    pub fn decode(&self, state: usize) -> char {
        self.chars[state]
    }
}

/// Taxon-labeled sequences of equal length; `None` entries are gaps.
#[derive(Debug, Clone)]
pub struct Alignment {
    taxa: Vec<String>,
    seqs: Vec<Vec<Option<usize>>>,
    n_sites: usize,
}

impl Alignment {
    pub fn new(taxa: Vec<String>, seqs: Vec<Vec<Option<usize>>>) -> Result<Self> {
        if taxa.len() != seqs.len() {
            return Err(Error::input(format!(
                "{} taxon names but {} sequences",
                taxa.len(),
                seqs.len()
            )));
        }
        if taxa.is_empty() {
            return Err(Error::input("alignment has no sequences"));
        }
        let n_sites = seqs[0].len();
        for (t, s) in taxa.iter().zip(&seqs) {
            if s.len() != n_sites {
                return Err(Error::input(format!(
                    "sequence for taxon {t:?} has length {}, expected {n_sites}",
                    s.len()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for t in &taxa {
            if !seen.insert(t.clone()) {
                return Err(Error::input(format!("duplicate taxon name {t:?}")));
            }
        }
        Ok(Alignment {
            taxa,
            seqs,
            n_sites,
        })
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn sequence(&self, taxon: usize) -> &[Option<usize>] {
        &self.seqs[taxon]
    }

    /// One column as (taxon index -> state) in taxon order.
    pub fn column(&self, site: usize) -> Vec<Option<usize>> {
        self.seqs.iter().map(|s| s[site]).collect()
    }

    pub fn taxon_index(&self, name: &str) -> Option<usize> {
        self.taxa.iter().position(|t| t == name)
    }

    pub fn write_fasta(&self, alphabet: &Alphabet) -> String {
        let mut out = String::new();
        for (t, s) in self.taxa.iter().zip(&self.seqs) {
            out.push('>');
            out.push_str(t);
            out.push('\n');
            for state in s {
                out.push(match state {
                    Some(i) => alphabet.decode(*i),
                    None => '-',
                });
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentFormat {
    Fasta,
    Phylip,
}

/// Parses FASTA or sequential PHYLIP text into a validated alignment.
/// Character errors name the taxon and 1-based column.
pub fn read_alignment(
    text: &str,
    format: AlignmentFormat,
    alphabet: &Alphabet,
) -> Result<Alignment> {
    match format {
        AlignmentFormat::Fasta => read_fasta(text, alphabet),
        AlignmentFormat::Phylip => read_phylip(text, alphabet),
    }
}

fn encode_seq(name: &str, raw: &str, alphabet: &Alphabet) -> Result<Vec<Option<usize>>> {
    raw.chars()
        .enumerate()
        .map(|(col, c)| {
            alphabet.encode(c).map_err(|_| {
                Error::input(format!(
                    "taxon {name:?}, column {}: character {c:?} is not in the alphabet",
                    col + 1
                ))
            })
        })
        .collect()
}

fn read_fasta(text: &str, alphabet: &Alphabet) -> Result<Alignment> {
    let mut taxa = Vec::new();
    let mut raw: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('>') {
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::input("FASTA header with empty name"));
            }
            taxa.push(name.to_string());
            raw.push(String::new());
        } else {
            match raw.last_mut() {
                Some(seq) => seq.push_str(line.trim()),
                None => {
                    return Err(Error::input("FASTA sequence data before the first '>' header"))
                }
            }
        }
    }
    if taxa.is_empty() {
        return Err(Error::input("no FASTA records found"));
    }
    let expected = raw[0].len();
    for (t, r) in taxa.iter().zip(&raw) {
        if r.len() != expected {
            return Err(Error::input(format!(
                "sequence for taxon {t:?} has length {}, expected {expected}",
                r.len()
            )));
        }
    }
    let seqs = taxa
        .iter()
        .zip(&raw)
        .map(|(t, r)| encode_seq(t, r, alphabet))
        .collect::<Result<Vec<_>>>()?;
    Alignment::new(taxa, seqs)
}

fn read_phylip(text: &str, alphabet: &Alphabet) -> Result<Alignment> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::input("empty PHYLIP input"))?;
    let mut parts = header.split_whitespace();
    let n_taxa: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::input("PHYLIP header must start with the taxon count"))?;
    let n_sites: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::input("PHYLIP header must give the site count"))?;
    if parts.next().is_some() {
        return Err(Error::input("PHYLIP header has trailing fields"));
    }

    let mut taxa = Vec::with_capacity(n_taxa);
    let mut raw: Vec<String> = Vec::with_capacity(n_taxa);
    for line in lines {
        let line = line.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let needs_more = raw.last().map(|r: &String| r.len() < n_sites).unwrap_or(false);
        if needs_more {
            // Sequential layout: continuation lines hold sequence only.
            raw.last_mut().unwrap().push_str(&line.split_whitespace().collect::<String>());
        } else {
            if taxa.len() == n_taxa {
                return Err(Error::input(format!(
                    "PHYLIP input has more than the declared {n_taxa} taxa"
                )));
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().expect("non-empty line");
            taxa.push(name.to_string());
            raw.push(fields.collect::<String>());
        }
    }
    if taxa.len() != n_taxa {
        return Err(Error::input(format!(
            "PHYLIP header declares {n_taxa} taxa but {} were found",
            taxa.len()
        )));
    }
    for (t, r) in taxa.iter().zip(&raw) {
        if r.len() != n_sites {
            return Err(Error::input(format!(
                "sequence for taxon {t:?} has length {}, expected {n_sites}",
                r.len()
            )));
        }
    }
    let seqs = taxa
        .iter()
        .zip(&raw)
        .map(|(t, r)| encode_seq(t, r, alphabet))
        .collect::<Result<Vec<_>>>()?;
    Alignment::new(taxa, seqs)
}
