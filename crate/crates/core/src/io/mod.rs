//! File formats: named f64 arrays (shared by archives and checkpoints),
//! 16-bit PGM images, PBM masks and CSV tables.

mod archive;
mod array;
mod image;
mod table;

pub use archive::{decode_archive, encode_archive, read_archive, write_archive, ARCHIVE_MAGIC};
pub use array::{decode_arrays, encode_array, NamedArray};
pub use image::{encode_pbm, encode_pgm, write_pbm, write_pgm, PgmRange};
pub use table::{format_float, write_csv, Table};
