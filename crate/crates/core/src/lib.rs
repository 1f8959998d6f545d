pub mod agent;
pub mod analytics;
pub mod clock;
pub mod domain;
pub mod llm;
pub mod materials;
pub mod protocol;
pub mod service;
pub mod store;
pub mod text;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/materials.md")]
    mod materials {}
    #[doc = include_str!("../../../book/src/student-agent.md")]
    mod student_agent {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
}
