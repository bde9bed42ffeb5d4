pub mod attention;
pub mod conv;
pub(crate) mod elementwise;
pub mod pool;
