//! Deterministic providers for tests and offline runs.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::prompts::{section, MATERIAL_MARKER, MCQ_MARKER, STUDENT_MARKER};
use super::{CompletionProvider, PromptRequest, ProviderError};
use crate::text::normalize_text;

/// Key of a request in a fixture file: hex SHA-256 over the prompt text and
/// the optional user message. Temperature and retry settings are not part of
/// the key.
pub fn request_hash(request: &PromptRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.system_or_user_text.as_bytes());
    hasher.update([0u8]);
    if let Some(user) = &request.user_text {
        hasher.update(user.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Canned responses keyed by [`request_hash`], with an optional fallback for
/// requests the table does not cover.
#[derive(Default, Clone)]
pub struct MockProvider {
    table: HashMap<String, String>,
    fallback: Option<Arc<dyn CompletionProvider>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a JSON object mapping request hash to response text.
    pub fn from_fixture_file(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let table: HashMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(MockProvider { table, fallback: None })
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn CompletionProvider>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn insert(&mut self, request: &PromptRequest, response: impl Into<String>) {
        self.table.insert(request_hash(request), response.into());
    }

    pub fn insert_hash(&mut self, hash: impl Into<String>, response: impl Into<String>) {
        self.table.insert(hash.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl CompletionProvider for MockProvider {
    fn complete_once(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        let hash = request_hash(request);
        match (self.table.get(&hash), &self.fallback) {
            (Some(text), _) => Ok(text.clone()),
            (None, Some(fallback)) => fallback.complete_once(request),
            (None, None) => Err(ProviderError::MissingFixture(hash)),
        }
    }
}

/// Replays a fixed sequence of responses, one per call. Once the script runs
/// out the last entry repeats.
pub struct ScriptedProvider {
    script: Mutex<VecDeque<Result<String, ProviderError>>>,
    last: Mutex<Option<Result<String, ProviderError>>>,
    calls: AtomicUsize,
    seen: Mutex<Vec<PromptRequest>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_results(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results<I>(results: I) -> Self
    where
        I: IntoIterator<Item = Result<String, ProviderError>>,
    {
        ScriptedProvider {
            script: Mutex::new(results.into_iter().collect()),
            last: Mutex::new(None),
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests received so far, in order.
    pub fn requests(&self) -> Vec<PromptRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete_once(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request.clone());
        let next = self.script.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        match next {
            Some(r) => {
                *last = Some(r.clone());
                r
            }
            None => last
                .clone()
                .unwrap_or_else(|| Err(ProviderError::Fatal("empty script".into()))),
        }
    }
}

const FILLER_WORDS: [&str; 12] = [
    "fix", "move", "paint", "clean", "repair", "carry", "wash", "polish", "lift", "push", "check", "sell",
];

const DISTRACTORS: [&str; 16] = [
    "abandon", "coincide", "deter", "flourish", "hinder", "yield", "endure", "persuade", "reluctant",
    "obscure", "vivid", "scarce", "comply", "dispose", "refrain", "undergo",
];

const STUDENT_EN: [&str; 12] = [
    "I see. Why is \"{kw}\" wrong in this sentence?",
    "I understand. Which word should I use instead of \"{kw}\"?",
    "Oh, I see. Can you make a new sentence with \"{kw}\" for me?",
    "Okay. What does \"{kw}\" really mean?",
    "I got it. Is \"{w}\" a common word in daily conversation?",
    "Hmm, I see. When do people use \"{kw}\" correctly?",
    "Right. Can I say \"{w}\" in a letter to my friend?",
    "That makes sense. Is there an easy way to remember \"{kw}\"?",
    "Ah, okay. Why did you choose \"{w}\" in your explanation?",
    "I see, thank you. Is \"{kw}\" a formal word or a casual word?",
    "Interesting. Could you tell me a synonym for \"{w}\"?",
    "Oh, really? What is the opposite of \"{kw}\"?",
];

const STUDENT_JA: [&str; 6] = [
    "なるほど。どうして\"{kw}\"はこの文で間違いなのですか？",
    "わかりました。\"{kw}\"の代わりにどの単語を使えばいいですか？",
    "そうなんですね。\"{kw}\"を使った正しい例文を教えてください。",
    "なるほど。\"{kw}\"は日常会話でよく使いますか？",
    "はい、わかりました。\"{kw}\"を覚える簡単な方法はありますか？",
    "へえ、そうなんですね。\"{w}\"はどういう意味ですか？",
];

/// Offline stand-in for a real model. Recognizes the material, student and
/// MCQ prompts and answers each with well-formed output derived from a hash
/// of the request, so identical requests always get identical answers while
/// a changed temperature picks a different student question.
#[derive(Debug, Clone, Default)]
pub struct SyntheticProvider {
    pub seed: u64,
}

impl SyntheticProvider {
    pub fn new(seed: u64) -> Self {
        SyntheticProvider { seed }
    }

    fn digest(&self, request: &PromptRequest) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(request.temperature.to_bits().to_le_bytes());
        hasher.update(request_hash(request).as_bytes());
        let out = hasher.finalize();
        u64::from_le_bytes(out[..8].try_into().unwrap())
    }

    fn material(&self, request: &PromptRequest, h: u64) -> Result<String, ProviderError> {
        let keyword = section(&request.system_or_user_text, "Keyword")
            .ok_or_else(|| ProviderError::Fatal("material prompt without keyword".into()))?;
        let norm_kw = normalize_text(keyword);
        let pool: Vec<&str> = FILLER_WORDS
            .iter()
            .copied()
            .filter(|w| normalize_text(w) != norm_kw)
            .collect();
        let n = 2 + (h % 2) as usize;
        let start = (h / 7) as usize % pool.len();
        let conversions: Vec<_> = (0..n)
            .map(|i| json!({"incorrect": keyword, "correct": pool[(start + i) % pool.len()]}))
            .collect();
        Ok(json!({
            "title": format!("Misuse of the \"{keyword}\""),
            "content": format!(
                "Yesterday my younger brother tried to {keyword} the old wooden chair in the garden because he believed it would make our small family dinner much more comfortable."
            ),
            "evidence": format!(
                "\"{keyword}\" does not describe what the brother did to the chair, so a plain action verb fits the sentence better."
            ),
            "conversion": conversions,
        })
        .to_string())
    }

    fn mcq(&self, request: &PromptRequest, h: u64) -> Result<String, ProviderError> {
        let text = &request.system_or_user_text;
        let keyword = section(text, "Keyword")
            .ok_or_else(|| ProviderError::Fatal("mcq prompt without keyword".into()))?;
        let meaning = section(text, "Meaning").unwrap_or("");
        let kind = section(text, "Test").unwrap_or("");
        let n_options = text
            .split("Provide exactly ")
            .nth(1)
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|n| n.parse::<usize>().ok())
            .unwrap_or(4);
        let norm_kw = normalize_text(keyword);
        let pool: Vec<&str> = DISTRACTORS
            .iter()
            .copied()
            .filter(|w| normalize_text(w) != norm_kw)
            .collect();
        let start = h as usize % pool.len();
        let mut options = vec![keyword.to_string()];
        options.extend((0..n_options.saturating_sub(1)).map(|i| pool[(start + i) % pool.len()].to_string()));
        let rotate = (h >> 8) as usize % options.len();
        options.rotate_left(rotate);
        let stem = match kind {
            "posttest2" => format!("Choose the word that best fits the meaning \"{meaning}\": ( )"),
            "posttest3" => format!("Which expression means \"{meaning}\"? ( )"),
            _ => format!("Fill in the blank with the word meaning \"{meaning}\": ( )"),
        };
        let explanation = if text.contains("must be written in Japanese") {
            format!("「{keyword}」は「{meaning}」という意味です。")
        } else {
            format!("\"{keyword}\" means {meaning}.")
        };
        Ok(json!({
            "stem": stem,
            "options": options,
            "answer": keyword,
            "explanation": explanation,
        })
        .to_string())
    }

    fn student(&self, request: &PromptRequest, h: u64) -> Result<String, ProviderError> {
        let text = &request.system_or_user_text;
        let keyword = text
            .split("the word \"")
            .nth(1)
            .and_then(|rest| rest.split("\" is used incorrectly").next())
            .ok_or_else(|| ProviderError::Fatal("student prompt without keyword".into()))?;
        let explanation = request
            .user_text
            .as_deref()
            .and_then(|u| u.split("Explanation: ").nth(1))
            .unwrap_or("");
        let words: Vec<&str> = explanation
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
            .filter(|w| w.chars().count() > 3)
            .collect();
        let word = if words.is_empty() {
            keyword
        } else {
            words[(h >> 16) as usize % words.len()]
        };
        let templates: &[&str] = if text.contains("must be written in Japanese") {
            &STUDENT_JA
        } else {
            &STUDENT_EN
        };
        let template = templates[h as usize % templates.len()];
        Ok(template.replace("{kw}", keyword).replace("{w}", word))
    }
}

impl CompletionProvider for SyntheticProvider {
    fn complete_once(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        let h = self.digest(request);
        let text = &request.system_or_user_text;
        if text.contains(MATERIAL_MARKER) {
            self.material(request, h)
        } else if text.contains(MCQ_MARKER) {
            self.mcq(request, h)
        } else if text.contains(STUDENT_MARKER) {
            self.student(request, h)
        } else {
            Err(ProviderError::Fatal("unrecognized prompt".into()))
        }
    }
}
