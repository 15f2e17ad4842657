//! HTTP adapters for the `sigrl` oracle traits, speaking the
//! OpenAI-compatible chat-completions protocol.
//!
//! Each role (doctor policy, understanding summaries, simulated patient,
//! fact checker, answer scorer) can target its own endpoint; unset roles
//! reuse the policy endpoint.
//!
//! ```no_run
//! use sigrl_http::{Endpoints, HttpChecker};
//! use sigrl::oracle::FactChecker;
//! use sigrl::model::AtomicFact;
//!
//! let mut endpoints = Endpoints::default();
//! endpoints.policy.base_url = "http://localhost:8000".into();
//! let checker = HttpChecker::new(&endpoints)?;
//! let fact = AtomicFact { id: 0, text: "The patient is 55 years old.".into(), is_relevant: true };
//! let ok = checker.entails("A 55-year-old man with chest pain.", &fact)?;
//! # let _ = ok;
//! # Ok::<(), sigrl::Error>(())
//! ```

pub mod client;
pub mod config;
pub mod oracles;

pub use client::{ChatClient, ChatOptions, ChatResponse, Message};
pub use config::{EndpointConfig, Endpoints};
pub use oracles::{HttpChecker, HttpPatient, HttpPolicy, HttpScorer};
