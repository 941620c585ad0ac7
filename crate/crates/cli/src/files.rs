//! Dataset, gazetteer, POS-lexicon, and vocabulary files, plus atomic
//! output writing. Datasets are UTF-8 JSON lines with fields `text_a`,
//! `text_b`, `label`, and optional `keywords_a`/`keywords_b` span arrays.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dcmatch_core::corpus::{SentencePair, Vocab};
use dcmatch_core::labeler::{Gazetteer, PosLexicon, PosTag};
use dcmatch_core::scheme::LabelScheme;
use serde::Serialize;

use crate::error::CliError;

/// Writes through a sibling temp file and renames, so aborted runs never
/// leave partial outputs.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("{} has no file name", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    body.push('\n');
    atomic_write(path, body.as_bytes())
}

pub fn load_dataset(path: &Path, scheme: &LabelScheme) -> Result<Vec<SentencePair>, CliError> {
    let body = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut pairs = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: SentencePair = serde_json::from_str(line).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("malformed record: {e}"),
        })?;
        pair.validate(scheme).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn save_dataset(path: &Path, pairs: &[SentencePair]) -> Result<(), CliError> {
    let mut body = String::new();
    for pair in pairs {
        body.push_str(&serde_json::to_string(pair).map_err(|e| {
            CliError::Runtime(format!("serializing dataset record: {e}"))
        })?);
        body.push('\n');
    }
    atomic_write(path, body.as_bytes())
}

/// One lowercased term per line; blank lines are skipped.
pub fn load_gazetteer(path: &Path) -> Result<Gazetteer, CliError> {
    let body = fs::read_to_string(path).map_err(CliError::io(path))?;
    let terms: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    Gazetteer::new(terms).map_err(CliError::from)
}

pub fn save_gazetteer(path: &Path, terms: &[String]) -> Result<(), CliError> {
    let mut body = terms.join("\n");
    body.push('\n');
    atomic_write(path, body.as_bytes())
}

fn pos_tag_name(tag: PosTag) -> &'static str {
    match tag {
        PosTag::Noun => "NOUN",
        PosTag::Verb => "VERB",
        PosTag::Adj => "ADJ",
        PosTag::Other => "OTHER",
    }
}

fn parse_pos_tag(text: &str) -> Option<PosTag> {
    match text.to_ascii_uppercase().as_str() {
        "NOUN" => Some(PosTag::Noun),
        "VERB" => Some(PosTag::Verb),
        "ADJ" => Some(PosTag::Adj),
        "OTHER" => Some(PosTag::Other),
        _ => None,
    }
}

/// Lines of `word<TAB>TAG` with TAG one of NOUN, VERB, ADJ, OTHER.
pub fn load_pos_lexicon(path: &Path) -> Result<PosLexicon, CliError> {
    let body = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut lexicon = PosLexicon::new();
    for (idx, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_error = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (word, tag_text) = line
            .split_once('\t')
            .ok_or_else(|| parse_error("expected word<TAB>TAG".into()))?;
        let tag = parse_pos_tag(tag_text.trim())
            .ok_or_else(|| parse_error(format!("unknown POS tag {:?}", tag_text.trim())))?;
        lexicon.insert(word.trim(), tag);
    }
    Ok(lexicon)
}

pub fn save_pos_lexicon(path: &Path, entries: &[(String, PosTag)]) -> Result<(), CliError> {
    let mut body = String::new();
    for (word, tag) in entries {
        body.push_str(word);
        body.push('\t');
        body.push_str(pos_tag_name(*tag));
        body.push('\n');
    }
    atomic_write(path, body.as_bytes())
}

/// Vocabulary file: a JSON object mapping token to id, reserved tokens
/// included.
pub fn load_vocab(path: &Path) -> Result<Vocab, CliError> {
    let body = fs::read_to_string(path).map_err(CliError::io(path))?;
    let entries: BTreeMap<String, u32> = serde_json::from_str(&body).map_err(|e| {
        CliError::Parse { path: path.to_path_buf(), line: 1, message: format!("{e}") }
    })?;
    Vocab::from_entries(entries).map_err(CliError::from)
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<(), CliError> {
    let map: BTreeMap<&str, u32> = vocab.entries().collect();
    write_json(path, &map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn dataset_round_trip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let scheme = LabelScheme::binary();
        let mut pair = SentencePair::new("a b", "a c", 1);
        pair.keyword_spans_a = Some(vec![(0, 1)]);
        pair.keyword_spans_b = Some(vec![]);
        save_dataset(&path, std::slice::from_ref(&pair)).unwrap();
        let loaded = load_dataset(&path, &scheme).unwrap();
        assert_eq!(loaded, vec![pair]);
    }

    #[test]
    fn record_count_matches_line_count() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut body = String::new();
        for i in 0..10 {
            body.push_str(&format!("{{\"text_a\":\"a {i}\",\"text_b\":\"b\",\"label\":{}}}\n", i % 3));
        }
        fs::write(&path, &body).unwrap();
        let pairs = load_dataset(&path, &LabelScheme::three_way()).unwrap();
        assert_eq!(pairs.len(), 10);
        assert!(pairs.iter().all(|p| p.label < 3));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        fs::write(
            &path,
            "{\"text_a\":\"a\",\"text_b\":\"b\",\"label\":0}\nnot json\n",
        )
        .unwrap();
        let err = load_dataset(&path, &LabelScheme::binary()).unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_names_the_record() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        fs::write(&path, "{\"text_a\":\"a\",\"text_b\":\"b\",\"label\":3}\n").unwrap();
        let err = load_dataset(&path, &LabelScheme::three_way()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains(":1:"), "{text}");
        assert!(text.contains("label 3 out of range"), "{text}");
    }

    #[test]
    fn extra_dataset_fields_are_tolerated() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        fs::write(&path, "{\"text_a\":\"a\",\"text_b\":\"b\",\"label\":0,\"zzz\":1}\n").unwrap();
        assert_eq!(load_dataset(&path, &LabelScheme::binary()).unwrap().len(), 1);
    }

    #[test]
    fn pos_lexicon_round_trip_and_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        let entries =
            vec![("cell".to_string(), PosTag::Noun), ("quickly".to_string(), PosTag::Other)];
        save_pos_lexicon(&path, &entries).unwrap();
        let lexicon = load_pos_lexicon(&path).unwrap();
        assert_eq!(lexicon.tag("cell"), PosTag::Noun);
        assert_eq!(lexicon.tag("unseen"), PosTag::Other);

        fs::write(&path, "cell NOUN\n").unwrap();
        assert!(matches!(load_pos_lexicon(&path), Err(CliError::Parse { .. })));
        fs::write(&path, "cell\tWHAT\n").unwrap();
        assert!(matches!(load_pos_lexicon(&path), Err(CliError::Parse { .. })));
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let pairs = [SentencePair::new("x y", "z", 0)];
        let vocab = Vocab::build(&pairs, 1).unwrap();
        save_vocab(&path, &vocab).unwrap();
        let loaded = load_vocab(&path).unwrap();
        assert_eq!(loaded, vocab);
        assert_eq!(loaded.fingerprint(), vocab.fingerprint());
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("out.json");
        atomic_write(&path, b"{}").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"{}");
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names, vec!["out.json"]);
    }
}
