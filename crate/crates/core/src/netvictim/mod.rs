//! The victim as a remote hard-label service over newline-delimited JSON, and
//! the matching client.

mod client;
mod server;
pub mod wire;

pub use client::{remote_query, RemoteVictim};
pub use server::{serve, ServiceHandle, DEDUP_WINDOW};
