pub mod bench;
pub mod datagen;
pub mod dfs;
pub mod engine;
pub mod exec;
pub mod expr;
pub mod lang;
pub mod matcher;
pub mod plan;
pub mod reference;
pub mod repository;
pub mod schema;
pub mod subjob;
pub mod value;
pub mod workloads;
