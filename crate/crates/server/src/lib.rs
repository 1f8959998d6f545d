pub mod config;
pub mod routes;
pub mod scheduler;

pub use config::{ProviderConfig, ServerConfig};
pub use routes::{router, AppState, SIM_TIME_HEADER};
