pub mod gradcheck;
pub mod model_check;
pub mod oracles;
