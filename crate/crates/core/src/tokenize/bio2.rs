//! BIO2 tags over subword positions. There is no O tag: in stand-alone
//! correction every subword belongs to a word.

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    B,
    I,
}

/// One subword label: a role plus the gold/predicted word id (into the word
/// vocabulary). Serialized as `B-<word>` / `I-<word>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bio2Tag {
    pub role: Role,
    pub word_id: usize,
}

impl Bio2Tag {
    pub fn display(&self, word_vocab: &Vocabulary) -> String {
        let role = match self.role {
            Role::B => "B",
            Role::I => "I",
        };
        format!("{role}-{}", word_vocab.entry(self.word_id))
    }
}

/// First subword of word k gets `B-gold[k]`, the rest `I-gold[k]`.
pub fn bio2_labels(word_spans: &[(usize, usize)], gold_words: &[usize]) -> Result<Vec<Bio2Tag>> {
    if word_spans.len() != gold_words.len() {
        return Err(Error::TagSpanMismatch {
            tags: gold_words.len(),
            subwords: word_spans.len(),
        });
    }
    let total = word_spans.last().map_or(0, |&(_, e)| e);
    let mut tags = Vec::with_capacity(total);
    for (&(start, end), &gold) in word_spans.iter().zip(gold_words) {
        for pos in start..end {
            tags.push(Bio2Tag {
                role: if pos == start { Role::B } else { Role::I },
                word_id: gold,
            });
        }
    }
    Ok(tags)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bio2DecodeCounters {
    /// I-positions whose word id disagrees with the span's B-position.
    pub disagreements: usize,
    /// Span-initial positions whose role is I rather than B.
    pub malformed_roles: usize,
}

/// Decodes tags back to one word id per span: the tag at the span's first
/// subword wins, regardless of role or of disagreement at I positions.
/// Total: never fails, but counts anomalies.
pub fn bio2_decode(
    tags: &[Bio2Tag],
    word_spans: &[(usize, usize)],
) -> (Vec<usize>, Bio2DecodeCounters) {
    let mut counters = Bio2DecodeCounters::default();
    let mut words = Vec::with_capacity(word_spans.len());
    for &(start, end) in word_spans {
        let head = tags[start];
        if head.role == Role::I {
            counters.malformed_roles += 1;
        }
        for pos in start + 1..end {
            if tags[pos].word_id != head.word_id {
                counters.disagreements += 1;
            }
        }
        words.push(head.word_id);
    }
    (words, counters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VocabKind;

    #[test]
    fn two_piece_word_gets_b_then_i() {
        let tags = bio2_labels(&[(0, 2)], &[7]).unwrap();
        assert_eq!(
            tags,
            vec![
                Bio2Tag { role: Role::B, word_id: 7 },
                Bio2Tag { role: Role::I, word_id: 7 },
            ]
        );
        let v = Vocabulary::new(
            VocabKind::Word,
            (0..=5).map(|i| format!("w{i}")).chain(["mistake".into()]),
        );
        assert_eq!(tags[0].display(&v), "B-w5");
    }

    #[test]
    fn one_piece_word_is_b_only() {
        let tags = bio2_labels(&[(0, 1)], &[3]).unwrap();
        assert_eq!(tags, vec![Bio2Tag { role: Role::B, word_id: 3 }]);
    }

    #[test]
    fn roles_follow_span_structure() {
        let tags = bio2_labels(&[(0, 1), (1, 3), (3, 6)], &[1, 2, 3]).unwrap();
        let roles: Vec<Role> = tags.iter().map(|t| t.role).collect();
        assert_eq!(
            roles,
            vec![Role::B, Role::B, Role::I, Role::B, Role::I, Role::I]
        );
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(bio2_labels(&[(0, 1)], &[1, 2]).is_err());
    }

    #[test]
    fn decode_takes_the_b_position() {
        let tags = vec![
            Bio2Tag { role: Role::B, word_id: 10 },
            Bio2Tag { role: Role::I, word_id: 10 },
        ];
        let (words, counters) = bio2_decode(&tags, &[(0, 2)]);
        assert_eq!(words, vec![10]);
        assert_eq!(counters, Bio2DecodeCounters::default());
    }

    #[test]
    fn decode_counts_disagreements() {
        // [B-apple, I-banana] -> "apple", one disagreement.
        let tags = vec![
            Bio2Tag { role: Role::B, word_id: 10 },
            Bio2Tag { role: Role::I, word_id: 11 },
        ];
        let (words, counters) = bio2_decode(&tags, &[(0, 2)]);
        assert_eq!(words, vec![10]);
        assert_eq!(counters.disagreements, 1);
    }

    #[test]
    fn decode_is_total_over_malformed_roles() {
        let tags = vec![Bio2Tag { role: Role::I, word_id: 4 }];
        let (words, counters) = bio2_decode(&tags, &[(0, 1)]);
        assert_eq!(words, vec![4]);
        assert_eq!(counters.malformed_roles, 1);
    }

    #[test]
    fn label_decode_round_trip() {
        let spans = [(0, 2), (2, 3), (3, 7)];
        let gold = [5, 9, 2];
        let tags = bio2_labels(&spans, &gold).unwrap();
        let (back, counters) = bio2_decode(&tags, &spans);
        assert_eq!(back, gold);
        assert_eq!(counters, Bio2DecodeCounters::default());
    }
}
