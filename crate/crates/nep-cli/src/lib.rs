//! Support library of the `nep` command-line driver: config parsing, table
//! serialization, and VTK field output. Kept as a library target so the
//! integration tests exercise the same code paths the binary uses.

pub mod config;
pub mod table;
pub mod vtk;
