pub mod rof;
