use serde::{Deserialize, Serialize};

use crate::schema_graph::{LinkMatrix, MatchLevel, QuestionTokens, Schema};

pub const MAX_NGRAM: usize = 5;

/// Per (question token, column) and (question token, table) match levels.
pub type NameLinkResult = LinkMatrix;

/// How an n-gram has to sit inside a name to count as a partial match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsequenceMode {
    /// Order-preserving, gaps allowed.
    #[default]
    Subsequence,
    /// A contiguous run of name tokens.
    Contiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkerConfig {
    pub mode: SubsequenceMode,
    pub max_ngram: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            mode: SubsequenceMode::default(),
            max_ngram: MAX_NGRAM,
        }
    }
}

fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|w| it.any(|h| h == w))
}

fn is_contiguous(needle: &[String], hay: &[String]) -> bool {
    needle.len() <= hay.len() && hay.windows(needle.len()).any(|w| w == needle)
}

fn match_level(ngram: &[String], name: &[String], mode: SubsequenceMode) -> MatchLevel {
    if ngram == name {
        return MatchLevel::ExactMatch;
    }
    let partial = match mode {
        SubsequenceMode::Subsequence => is_subsequence(ngram, name),
        SubsequenceMode::Contiguous => is_contiguous(ngram, name),
    };
    if partial {
        MatchLevel::PartialMatch
    } else {
        MatchLevel::NoMatch
    }
}

/// Links every question n-gram (length 1 to `max_ngram`) against every column
/// and table name. Each token of a matching n-gram receives the match; the
/// strongest level wins per pair.
pub fn name_link(question: &QuestionTokens, schema: &Schema, cfg: LinkerConfig) -> NameLinkResult {
    let nq = question.len();
    let mut columns = vec![vec![MatchLevel::NoMatch; schema.num_columns()]; nq];
    let mut tables = vec![vec![MatchLevel::NoMatch; schema.num_tables()]; nq];
    let toks = &question.tokens;
    for n in 1..=cfg.max_ngram.min(nq) {
        for start in 0..=nq - n {
            let gram = &toks[start..start + n];
            for c in &schema.columns {
                let level = match_level(gram, &c.words, cfg.mode);
                if level != MatchLevel::NoMatch {
                    for row in &mut columns[start..start + n] {
                        row[c.id] = row[c.id].max(level);
                    }
                }
            }
            for t in &schema.tables {
                let level = match_level(gram, &t.words, cfg.mode);
                if level != MatchLevel::NoMatch {
                    for row in &mut tables[start..start + n] {
                        row[t.id] = row[t.id].max(level);
                    }
                }
            }
        }
    }
    LinkMatrix { columns, tables }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema_graph::TokenizerConfig;

    fn q(s: &str) -> QuestionTokens {
        QuestionTokens::new(s, TokenizerConfig::default())
    }

    #[test]
    fn exact_and_partial() {
        let s = crate::fixtures::car_schema();
        let l = name_link(&q(crate::fixtures::CAR_QUESTION), &s, LinkerConfig::default());
        // token 5 = "cylinder", column 2 = cylinders
        assert_eq!(l.columns[5][2], MatchLevel::ExactMatch);
        // token 2 = "car" vs table cars_data → partial
        assert_eq!(l.tables[2][0], MatchLevel::PartialMatch);
        // "model" vs model_id (column 8) → partial, vs model (column 6) → exact
        assert_eq!(l.columns[7][8], MatchLevel::PartialMatch);
        assert_eq!(l.columns[7][6], MatchLevel::ExactMatch);
    }

    #[test]
    fn unmatched_token_and_empty_question() {
        let s = crate::fixtures::car_schema();
        let l = name_link(&q("zebra"), &s, LinkerConfig::default());
        assert!(l.columns[0].iter().all(|&m| m == MatchLevel::NoMatch));
        assert!(l.tables[0].iter().all(|&m| m == MatchLevel::NoMatch));
        let e = name_link(&q(""), &s, LinkerConfig::default());
        assert!(e.columns.is_empty() && e.tables.is_empty());
    }

    #[test]
    fn multiword_exact_covers_every_token() {
        let s = crate::fixtures::car_schema();
        let l = name_link(&q("which model id"), &s, LinkerConfig::default());
        assert_eq!(l.columns[1][8], MatchLevel::ExactMatch);
        assert_eq!(l.columns[2][8], MatchLevel::ExactMatch);
        assert_eq!(l.columns[0][8], MatchLevel::NoMatch);
    }

    #[test]
    fn contiguous_mode_rejects_gaps() {
        let w = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let name = w("first middle last");
        assert_eq!(
            match_level(&w("first last"), &name, SubsequenceMode::Subsequence),
            MatchLevel::PartialMatch
        );
        assert_eq!(
            match_level(&w("first last"), &name, SubsequenceMode::Contiguous),
            MatchLevel::NoMatch
        );
    }
}
