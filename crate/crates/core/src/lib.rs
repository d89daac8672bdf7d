pub mod agentloop;
pub mod corpus;
pub mod evalkit;
pub mod http;
pub mod lexindex;
pub mod pipeline;
pub mod toolsvc;
pub mod tracestore;
