//! Subcommands of the `flowguard` tool and the websocket drive server.

pub mod commands;
pub mod ws;
