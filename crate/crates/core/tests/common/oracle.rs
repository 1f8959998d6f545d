//! Independent recomputations used to check the library. Written without
//! calling into the code under test.

use chrono::{Duration, TimeZone, Utc};
use lbt_core::domain::{DialogueTurn, Language, MCQuestion, Role, Test, TestKind, Transcript};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn words(s: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in s.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let mut a = words(a);
    let mut b = words(b);
    a.sort();
    a.dedup();
    b.sort();
    b.dedup();
    let inter = a.iter().filter(|w| b.contains(w)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn is_dup(candidate: &str, history: &[String], threshold: f64) -> bool {
    let c = words(candidate).join(" ");
    history
        .iter()
        .any(|h| words(h).join(" ") == c || jaccard(candidate, h) >= threshold)
}

pub struct Recount {
    pub correct: Vec<bool>,
    pub score: f64,
    pub block_correct: Vec<usize>,
}

#[allow(clippy::needless_range_loop)]
pub fn grade(test: &Test, answers: &[usize]) -> Recount {
    let mut correct = Vec::new();
    for i in 0..test.questions.len() {
        correct.push(answers[i] == test.questions[i].correct_index);
    }
    let n_correct = correct.iter().filter(|c| **c).count();
    let score = if correct.is_empty() {
        0.0
    } else {
        n_correct as f64 * 100.0 / correct.len() as f64
    };
    let mut block_correct = Vec::new();
    let mut i = 0;
    while i < correct.len() {
        let end = (i + 10).min(correct.len());
        block_correct.push(correct[i..end].iter().filter(|c| **c).count());
        i = end;
    }
    Recount {
        correct,
        score,
        block_correct,
    }
}

pub fn avg_words(transcripts: &[Transcript], language: Language) -> Option<f64> {
    let mut total = 0usize;
    let mut turns = 0usize;
    for t in transcripts {
        for turn in &t.turns {
            if turn.role != Role::Teacher {
                continue;
            }
            turns += 1;
            total += match language {
                Language::English => {
                    let mut n = 0;
                    let mut in_word = false;
                    for c in turn.text.chars() {
                        if c.is_whitespace() {
                            in_word = false;
                        } else if !in_word {
                            in_word = true;
                            n += 1;
                        }
                    }
                    n
                }
                Language::Japanese => turn
                    .text
                    .chars()
                    .filter(|c| !c.is_whitespace() && !c.is_ascii_punctuation() && c.is_alphanumeric())
                    .count(),
            };
        }
    }
    (turns > 0).then(|| total as f64 / turns as f64)
}

pub fn repeat_rate(transcripts: &[Transcript], threshold: f64) -> Option<f64> {
    let mut dups = 0usize;
    let mut n = 0usize;
    for t in transcripts {
        let qs: Vec<String> = t
            .turns
            .iter()
            .filter(|x| x.role == Role::Student)
            .map(|x| x.text.clone())
            .collect();
        n += qs.len();
        for i in 1..qs.len() {
            if is_dup(&qs[i], &qs[..i], threshold) {
                dups += 1;
            }
        }
    }
    (n > 0).then(|| dups as f64 / n as f64)
}

const VOCAB: [&str; 24] = [
    "I", "see", "why", "is", "overthrow", "wrong", "which", "word", "should", "use", "instead", "of", "what",
    "does", "mean", "can", "you", "give", "an", "example", "add", "mix", "throw", "please",
];
const VOCAB_JA: [&str; 8] = ["なるほど", "どうして", "単語", "使う", "意味", "例文", "、", "。"];

pub fn random_sentence(rng: &mut ChaCha8Rng, language: Language, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    match language {
        Language::English => (0..n)
            .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())])
            .collect::<Vec<_>>()
            .join(if rng.gen_bool(0.2) { "  " } else { " " }),
        Language::Japanese => (0..n).map(|_| VOCAB_JA[rng.gen_range(0..VOCAB_JA.len())]).collect(),
    }
}

/// A well-formed random transcript: student first, alternating roles.
pub fn random_transcript(rng: &mut ChaCha8Rng, language: Language) -> Transcript {
    let t0 = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let n = rng.gen_range(1..12);
    let turns = (0..n)
        .map(|i| DialogueTurn {
            role: if i % 2 == 0 { Role::Student } else { Role::Teacher },
            text: random_sentence(rng, if i % 2 == 0 { Language::English } else { language }, 8),
            at: t0 + Duration::seconds(i as i64 * 7),
            elapsed_lbt_seconds: (i * 7) as f64,
        })
        .collect();
    Transcript { turns }
}

/// A random test of up to 34 questions with 2 to 5 options each, plus a
/// random answer sheet.
pub fn random_test(rng: &mut ChaCha8Rng) -> (Test, Vec<usize>) {
    let kind = TestKind::ALL[rng.gen_range(0..TestKind::ALL.len())];
    let n = rng.gen_range(0..35);
    let mut answers = Vec::with_capacity(n);
    let questions = (0..n)
        .map(|i| {
            let k = rng.gen_range(2..6);
            answers.push(rng.gen_range(0..k));
            MCQuestion {
                id: format!("q{i}"),
                keyword_id: format!("k{i}"),
                test_kind: kind,
                language: Language::English,
                stem: format!("s{i}"),
                options: (0..k).map(|o| format!("o{o}")).collect(),
                correct_index: rng.gen_range(0..k),
                explanation: format!("e{i}"),
            }
        })
        .collect();
    (Test { kind, seed: rng.gen(), questions }, answers)
}
