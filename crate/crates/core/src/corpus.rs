//! Line-oriented corpus files.
//!
//! ```text
//! duohand-corpus 1 <kind> <config-hash> <record-count>
//! <id> <scenario> <seed> <109 clean> <109 penetrated> <depth>
//! ...
//! sha256 <hex digest of every preceding byte>
//! ```
//!
//! Values are written with `{:.16e}` (17 significant digits), which
//! round-trips every finite `f64`. Left roots are not stored; states are
//! rooted at the origin.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::state::{StateVector, TwoHandState, STATE_DIM};
use crate::synth::CorpusRecord;

pub const MAGIC: &str = "duohand-corpus";
pub const VERSION: u32 = 1;
const FIELDS: usize = 3 + 2 * STATE_DIM + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusKind {
    /// Clean ground truth and its penetrated condition.
    Synthetic,
    /// Ground truth and the refined output in the second state column;
    /// depth is the refined state's.
    Refined,
}

impl CorpusKind {
    pub fn name(self) -> &'static str {
        match self {
            CorpusKind::Synthetic => "synthetic",
            CorpusKind::Refined => "refined",
        }
    }
}

impl FromStr for CorpusKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(CorpusKind::Synthetic),
            "refined" => Ok(CorpusKind::Refined),
            other => Err(CoreError::Corpus(format!("unknown corpus kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub kind: CorpusKind,
    /// Hex digest of the configuration that produced the records.
    pub config_hash: String,
    pub records: Vec<CorpusRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn push_state(line: &mut String, v: &StateVector) {
    for x in v {
        let _ = write!(line, " {x:.16e}");
    }
}

pub fn to_bytes(corpus: &Corpus) -> Result<Vec<u8>> {
    if corpus.config_hash.is_empty() || corpus.config_hash.contains(char::is_whitespace) {
        return Err(CoreError::Corpus("config hash must be a non-empty token".into()));
    }
    let mut text = format!(
        "{MAGIC} {VERSION} {} {} {}\n",
        corpus.kind.name(),
        corpus.config_hash,
        corpus.records.len()
    );
    for r in &corpus.records {
        let _ = write!(text, "{} {} {}", r.id, r.scenario.name(), r.seed);
        push_state(&mut text, &r.clean.to_vector());
        push_state(&mut text, &r.penetrated.to_vector());
        let _ = writeln!(text, " {:.16e}", r.penetration_depth);
    }
    let digest = sha256_hex(text.as_bytes());
    text.push_str("sha256 ");
    text.push_str(&digest);
    text.push('\n');
    Ok(text.into_bytes())
}

fn parse<T: FromStr>(tok: &str, what: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| CoreError::Corpus(format!("line {line}: bad {what} `{tok}`")))
}

fn parse_state(toks: &[&str], line: usize) -> Result<TwoHandState> {
    let mut v = [0.0; STATE_DIM];
    for (x, t) in v.iter_mut().zip(toks) {
        *x = parse::<f64>(t, "value", line)?;
        if !x.is_finite() {
            return Err(CoreError::Corpus(format!("line {line}: non-finite value")));
        }
    }
    Ok(TwoHandState::from_vector(&v, Vector3::zeros()))
}

/// Parses and verifies a corpus. The checksum is checked before anything
/// else, so truncation and corruption surface as [`CoreError::Checksum`].
pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Corpus> {
    let text = std::str::from_utf8(bytes).map_err(|_| CoreError::Corpus(format!("{source}: not UTF-8")))?;
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| CoreError::Checksum(source.to_string()))?;
    let (body, trailer) = text.split_at(body_end);
    let expected = trailer.strip_prefix("sha256 ").map(str::trim_end);
    if expected != Some(sha256_hex(body.as_bytes()).as_str()) || !text.ends_with('\n') {
        return Err(CoreError::Checksum(source.to_string()));
    }

    let mut lines = body.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
    if header.len() != 5 || header[0] != MAGIC {
        return Err(CoreError::Corpus(format!("{source}: missing corpus header")));
    }
    let version: u32 = parse(header[1], "version", 1)?;
    if version != VERSION {
        return Err(CoreError::Corpus(format!(
            "{source}: format version {version}, this build reads {VERSION}"
        )));
    }
    let kind: CorpusKind = header[2].parse()?;
    let config_hash = header[3].to_string();
    let count: usize = parse(header[4], "record count", 1)?;

    let mut records = Vec::with_capacity(count);
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != FIELDS {
            return Err(CoreError::Corpus(format!(
                "{source} line {lineno}: {} fields, expected {FIELDS}",
                toks.len()
            )));
        }
        let clean = parse_state(&toks[3..3 + STATE_DIM], lineno)?;
        let penetrated = parse_state(&toks[3 + STATE_DIM..3 + 2 * STATE_DIM], lineno)?;
        records.push(CorpusRecord {
            id: parse(toks[0], "id", lineno)?,
            scenario: toks[1].parse()?,
            seed: parse(toks[2], "seed", lineno)?,
            clean,
            penetrated,
            penetration_depth: parse(toks[FIELDS - 1], "depth", lineno)?,
        });
    }
    if records.len() != count {
        return Err(CoreError::Corpus(format!(
            "{source}: header announces {count} records, found {}",
            records.len()
        )));
    }
    Ok(Corpus { kind, config_hash, records })
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(corpus)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in [CorpusKind::Synthetic, CorpusKind::Refined] {
            assert_eq!(k.name().parse::<CorpusKind>().unwrap(), k);
        }
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
