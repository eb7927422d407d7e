//! Test support: brute-force references that share no code with the
//! implementations they check, plus synthetic corpora.

pub mod corpus;
pub mod oracle;
