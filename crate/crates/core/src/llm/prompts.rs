//! Prompt templates. The material and student templates are reproduced
//! verbatim, typos included; the golden files under `tests/golden` pin them.

use thiserror::Error;

use crate::domain::{Language, TestKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("keyword must not be empty")]
    EmptyKeyword,
    #[error("material content must not be empty")]
    EmptyMaterial,
    #[error("option count must be at least 2, got {0}")]
    TooFewOptions(usize),
}

/// Instructions for generating a wrong sentence around a keyword. The
/// template itself has no keyword slot, so the keyword follows it in its own
/// section.
pub const MATERIAL_TEMPLATE: &str = r#"You are an expert in English language learning.
Please make a wrong English sentence including the given keyword.
Please follow these notes when making the sentence.

# Notes
- You will be given a keyword.
- The sentence must include the given keyword.
- You must use incorrectly but plausibly the given keyword in the sentence.
- The length of the sentence must be around 30 words.
- You must also provide a detailed reason why the sentence is incorrect.
- You must also provide a list of words with the incorrect keyword corrected to correct ones.
- When there are multiple correct words, you must provide all of them.
- The output must follow the JSON format below.

# JSON format
{
    "title": Please follow the format below: Misuse of the "(keyword)",
    "content": Incorrect English sentence including the given keyword,
    "evidence": Reason why the sentence is incorrect in detail,
    "conversion": [
        {
            "incorrect": Keyword which is used incorrectly,
            "correct": One of the word correcting the keyword used incorrectly
        }
        ...
    ]
}"#;

/// Marker that identifies a rendered material prompt.
pub const MATERIAL_MARKER: &str = "Please make a wrong English sentence including the given keyword.";
/// Marker that identifies a rendered student prompt.
pub const STUDENT_MARKER: &str = "You are a student taking an English class.";
/// Marker that identifies a rendered MCQ prompt.
pub const MCQ_MARKER: &str = "Please make one multiple-choice vocabulary question";

pub fn render_material_prompt(keyword: &str) -> Result<String, PromptError> {
    if keyword.trim().is_empty() {
        return Err(PromptError::EmptyKeyword);
    }
    Ok(format!("{MATERIAL_TEMPLATE}\n\n# Keyword\n{keyword}"))
}

/// Renders the beginner-student persona prompt.
///
/// `recent_inquiries` are joined with `", "`; an empty list leaves the slot
/// empty.
pub fn render_student_prompt<S: AsRef<str>>(
    material_content: &str,
    keyword: &str,
    recent_inquiries: &[S],
    language: Language,
) -> Result<String, PromptError> {
    if keyword.trim().is_empty() {
        return Err(PromptError::EmptyKeyword);
    }
    if material_content.trim().is_empty() {
        return Err(PromptError::EmptyMaterial);
    }
    let inquiries = recent_inquiries
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!(
        r#"You are a student taking an English class.
Please follow the settings and instructions to create a question.

# Settings
- Your characteristics as a student are as follows:
    - You are a beginner English learner.
    - You have a habit of putting on an agreement, such as "I see" or "I understand" before asking a question.
- Your English proficiency is as follows:.
    - Vocabulary: Knows words and phrases for basic everyday conversation, but vocabulary is limited.
    - Grammar: The student has begun to understand basic grammatical rules, but there are still many inaccuracies.
    - Reading Comprehension: Can understand basic sentences and short paragraphs, but at a slower rate.
    - Writing: Can write simple sentences with many errors.

# Instructions
- The learning material for the class is the following sentence: {material_content}.
- In the sentence, the word "{keyword}" is used incorrectly.
- Yow will be given the following information by your teacher:
    - You will be given a question and an explanation of the mistake in the sentence from your teacher.
    - You need to make another question based on the question and explanation given by the teacher.
    - The question you make must be related to the student's characteristics regarding English proficiency.
- You must not create the same inquiry as the previous inquiries.
    - The previous inquiries are as follows: {inquiries}.

# Notes
- Output should be the question only.
- Use a variety of types of agreements in addition to those listed in the examples.
- Make the output as natural as if an actual student were speaking.
- The question must be written in {language}. But the keyword should be written in English."#,
        language = language.name(),
    ))
}

/// The teacher's side of an exchange, sent alongside the student prompt.
pub fn render_teacher_message(question: &str, explanation: &str) -> String {
    format!("Question: {question}\nExplanation: {explanation}")
}

/// Prompt for a posttest question. Not part of the original study material;
/// the test kind is included so each retention test gets its own stem.
pub fn render_mcq_prompt(
    keyword: &str,
    meaning: &str,
    kind: TestKind,
    language: Language,
    n_options: usize,
) -> Result<String, PromptError> {
    if keyword.trim().is_empty() {
        return Err(PromptError::EmptyKeyword);
    }
    if n_options < 2 {
        return Err(PromptError::TooFewOptions(n_options));
    }
    Ok(format!(
        r#"You are an expert in English language testing.
{MCQ_MARKER} that tests the given keyword.
Please follow these notes when making the question.

# Notes
- The stem must be an English sentence with a blank "( )" where the keyword fits.
- Provide exactly {n_options} options. One option must be the keyword itself; the others must be plausible but wrong.
- All options must be different from each other.
- The explanation must be written in {language}. But English words should be written in English.
- The output must follow the JSON format below.

# JSON format
{{
    "stem": Sentence with a blank,
    "options": [Option, ...],
    "answer": The option that correctly fills the blank,
    "explanation": Why the answer is correct
}}

# Keyword
{keyword}

# Meaning
{meaning}

# Test
{kind}"#,
        language = language.name(),
    ))
}

/// Reads the value under a `# Heading` line of a rendered prompt.
pub fn section<'a>(prompt: &'a str, heading: &str) -> Option<&'a str> {
    let marker = format!("# {heading}\n");
    let start = prompt.find(&marker)? + marker.len();
    let rest = &prompt[start..];
    let end = rest.find("\n\n").unwrap_or(rest.len());
    Some(rest[..end].trim_end())
}
