pub mod agent;
pub mod config;
pub mod oracle;
mod quad;
pub mod sim;
pub mod waterfill;
