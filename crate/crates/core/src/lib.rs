pub mod fixtures;
pub mod ingestion;
pub mod model;
pub mod owlxml;
pub mod par;
pub mod reasoner;
pub mod rules;
pub mod taxonomy;
pub mod validator;
pub mod vocab;
