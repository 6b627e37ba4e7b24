pub mod harness;
pub mod kb;
pub mod layout;
pub mod llm;
pub mod patch;
pub mod prompt;
pub mod repair;
pub mod retriever;
pub mod sweep;
