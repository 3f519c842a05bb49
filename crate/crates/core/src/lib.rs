//! Quantum Reed-Muller toolkit.
//!
//! Punctured quantum Reed-Muller codes built from the hypercube encoding
//! circuit, together with the machinery needed to study them at circuit
//! level: an SCL decoder, strict fault-tolerance checks for permuted
//! preparation protocols, a Pauli-frame simulator with ancilla pools for
//! extended rectangles, logical Clifford synthesis for high-rate codes and
//! atom-array movement programs.

pub mod gf2;
pub mod rm_codes;
pub mod circuit;
pub mod decoder;
pub mod ft_prep;
pub mod exrec;
pub mod highrate;
pub mod layout;
pub mod mask_serde;

pub use gf2::{F2Matrix, F2Vector, Gf2Error};
