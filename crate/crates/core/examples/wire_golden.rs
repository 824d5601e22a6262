//! Prints the canonical rest message in wire form.
//!
//! cargo run -p sonopipe --example wire_golden > docs/wire/golden.ndjson

use std::io::Write;

fn main() -> std::io::Result<()> {
    let line = sonopipe::PoseMessage::canonical_rest()
        .encode()
        .expect("canonical message is finite");
    std::io::stdout().write_all(&line)
}
