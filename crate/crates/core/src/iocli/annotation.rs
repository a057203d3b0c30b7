use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schema tag written into every generated annotation.
pub const ANNOTATION_SCHEMA: &str = "chuk_peds_parts_phrase_v1";

/// Fallback tokens an annotator emits when evidence is missing.
pub const CONTROLLED_TOKENS: [&str; 3] = ["none", "unknown", "not_visible"];

/// Default phrase budget for ingested real data.
pub const DEFAULT_INGEST_PHRASES: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clothing {
    #[serde(default)]
    pub upper_body: Vec<String>,
    #[serde(default)]
    pub lower_body: Vec<String>,
    #[serde(default)]
    pub footwear: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accessories {
    /// Categorical: any entry other than a controlled token means "backpack".
    #[serde(default)]
    pub backpack: Vec<String>,
    #[serde(default)]
    pub others: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyAppearance {
    #[serde(default)]
    pub gender: Vec<String>,
    #[serde(default)]
    pub pose_motion: Vec<String>,
    #[serde(default)]
    pub height_impression: Vec<String>,
}

/// One per-sample phrase annotation document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseAnnotation {
    pub schema: Vec<String>,
    #[serde(default)]
    pub clothing: Clothing,
    #[serde(default)]
    pub accessories: Accessories,
    #[serde(default)]
    pub body_appearance: BodyAppearance,
    #[serde(default)]
    pub hair_head: Vec<String>,
}

fn is_controlled(phrase: &str) -> bool {
    CONTROLLED_TOKENS.contains(&phrase.trim())
}

impl PhraseAnnotation {
    /// Valid phrases in flattening order: upper_body, lower_body, footwear,
    /// backpack, others, gender, pose_motion, height_impression, hair_head.
    pub fn flatten(&self) -> Vec<String> {
        let mut out = Vec::new();
        let push_all = |list: &[String], out: &mut Vec<String>| {
            for s in list {
                let s = s.trim();
                if !s.is_empty() && !is_controlled(s) {
                    out.push(s.to_string());
                }
            }
        };
        push_all(&self.clothing.upper_body, &mut out);
        push_all(&self.clothing.lower_body, &mut out);
        push_all(&self.clothing.footwear, &mut out);
        if self
            .accessories
            .backpack
            .iter()
            .any(|s| !s.trim().is_empty() && !is_controlled(s))
        {
            out.push("backpack".to_string());
        }
        push_all(&self.accessories.others, &mut out);
        push_all(&self.body_appearance.gender, &mut out);
        push_all(&self.body_appearance.pose_motion, &mut out);
        push_all(&self.body_appearance.height_impression, &mut out);
        push_all(&self.hair_head, &mut out);
        out
    }
}

/// Phrase strings and slot mask of an ingested collection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestedPhrases {
    /// Up to `P` phrases per kept sample.
    pub phrases: Vec<Vec<String>>,
    /// `P` slots per kept sample.
    pub mask: Vec<Vec<bool>>,
    /// Index of each kept sample in the input.
    pub source_index: Vec<usize>,
    /// Kept samples left without any valid phrase.
    pub empty: Vec<usize>,
    /// Input samples that failed to parse, with the parser message.
    pub skipped: Vec<(usize, String)>,
}

/// Flattens every document and truncates to `p` slots.
///
/// Malformed documents are skipped with a log entry.
pub fn ingest_phrases(documents: &[serde_json::Value], p: usize) -> Result<IngestedPhrases> {
    if p == 0 {
        return Err(Error::param("phrase budget must be at least 1"));
    }
    let mut out = IngestedPhrases {
        phrases: Vec::new(),
        mask: Vec::new(),
        source_index: Vec::new(),
        empty: Vec::new(),
        skipped: Vec::new(),
    };
    for (idx, doc) in documents.iter().enumerate() {
        let ann: PhraseAnnotation = match serde_json::from_value(doc.clone()) {
            Ok(a) => a,
            Err(e) => {
                warn!("annotation {idx} skipped: {e}");
                out.skipped.push((idx, e.to_string()));
                continue;
            }
        };
        let mut phrases = ann.flatten();
        phrases.truncate(p);
        if phrases.is_empty() {
            warn!("annotation {idx} has no valid phrase");
            out.empty.push(out.phrases.len());
        }
        let mut mask = vec![false; p];
        mask[..phrases.len()].iter_mut().for_each(|m| *m = true);
        out.phrases.push(phrases);
        out.mask.push(mask);
        out.source_index.push(idx);
    }
    Ok(out)
}

/// Parses a JSON array of documents or one document per line.
pub fn parse_annotation_documents(text: &str) -> Result<Vec<serde_json::Value>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| Error::data(format!("annotation array: {e}")));
    }
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => docs.push(v),
            Err(e) => {
                // keep the slot so indices line up; ingestion skips it
                warn!("annotation line {} is not valid JSON: {e}", n + 1);
                docs.push(serde_json::Value::Null);
            }
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn example_two() -> serde_json::Value {
        json!({
          "schema": ["chuk_peds_parts_phrase_v1"],
          "clothing": {
            "upper_body": ["black jacket"],
            "lower_body": ["green jeans"],
            "footwear": ["black and white sneakers", "mixed footwear"]
          },
          "accessories": {"backpack": ["backpack"], "others": ["belt"]},
          "body_appearance": {
            "gender": ["male"],
            "pose_motion": ["walking"],
            "height_impression": ["unknown"]
          },
          "hair_head": ["short black hair", "no hat", "no glasses"]
        })
    }

    #[test]
    fn supplement_example_two() {
        let got = ingest_phrases(&[example_two()], 16).unwrap();
        assert_eq!(
            got.phrases[0],
            vec![
                "black jacket",
                "green jeans",
                "black and white sneakers",
                "mixed footwear",
                "backpack",
                "belt",
                "male",
                "walking",
                "short black hair",
                "no hat",
                "no glasses",
            ]
        );
        assert_eq!(got.mask[0].iter().filter(|&&m| m).count(), 11);
        assert!(got.mask[0][..11].iter().all(|&m| m));
        assert!(got.empty.is_empty());
    }

    #[test]
    fn none_backpack_dropped() {
        let mut doc = example_two();
        doc["accessories"]["backpack"] = json!(["none"]);
        let got = ingest_phrases(&[doc], 16).unwrap();
        assert!(!got.phrases[0].iter().any(|p| p == "backpack" || p == "none"));
    }

    #[test]
    fn only_controlled_tokens() {
        let doc = json!({
            "schema": ["chuk_peds_parts_phrase_v1"],
            "clothing": {"upper_body": ["none"], "lower_body": ["unknown"], "footwear": ["not_visible"]},
            "accessories": {"backpack": ["none"], "others": []},
            "hair_head": ["unknown"]
        });
        let got = ingest_phrases(&[doc], 6).unwrap();
        assert!(got.phrases[0].is_empty());
        assert_eq!(got.mask[0], vec![false; 6]);
        assert_eq!(got.empty, vec![0]);
    }

    #[test]
    fn truncation_follows_flattening_order() {
        let upper: Vec<String> = (0..10).map(|i| format!("phrase {i}")).collect();
        let doc = json!({"schema": ["s"], "clothing": {"upper_body": upper}});
        let got = ingest_phrases(&[doc], 6).unwrap();
        assert_eq!(got.phrases[0], upper[..6].to_vec());
        assert_eq!(got.mask[0], vec![true; 6]);
    }

    #[test]
    fn malformed_documents_are_skipped() {
        let bad = json!({"schema": ["s"], "clothing": {"upper_body": "not a list"}});
        let got = ingest_phrases(&[bad, json!(null), example_two()], 16).unwrap();
        assert_eq!(got.phrases.len(), 1);
        assert_eq!(got.source_index, vec![2]);
        assert_eq!(got.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn ingestion_is_order_stable() {
        let docs = vec![example_two(), example_two()];
        let a = ingest_phrases(&docs, 4).unwrap();
        let b = ingest_phrases(&docs, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.phrases[0], a.phrases[1]);
    }

    #[test]
    fn jsonl_and_array_inputs() {
        let line = serde_json::to_string(&example_two()).unwrap();
        let jsonl = format!("{line}\n\n{line}\n");
        assert_eq!(parse_annotation_documents(&jsonl).unwrap().len(), 2);
        let arr = format!("[{line},{line},{line}]");
        assert_eq!(parse_annotation_documents(&arr).unwrap().len(), 3);
        let broken = format!("{line}\n{{oops\n");
        let docs = parse_annotation_documents(&broken).unwrap();
        assert_eq!(ingest_phrases(&docs, 16).unwrap().skipped.len(), 1);
    }

    #[test]
    fn serde_round_trip() {
        let ann: PhraseAnnotation = serde_json::from_value(example_two()).unwrap();
        let back: PhraseAnnotation =
            serde_json::from_str(&serde_json::to_string(&ann).unwrap()).unwrap();
        assert_eq!(ann, back);
    }
}
