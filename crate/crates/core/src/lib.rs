pub mod clock;
pub mod gateway;
pub mod templates;
pub mod plan;
pub mod proposal;
pub mod tags;
pub mod sandbox;
pub mod agent;
pub mod trajectory;
pub mod stub;
pub mod pipeline;
pub mod adapt;
pub mod demo;
pub mod config;
