//! The checked-in fuzz seeds stay meaningful: valid ones decode or parse.

use std::fs;
use std::path::Path;

use retromfg_core::expr::Expr;
use retromfg_core::io::{decode_field, encode_field, FormatError};

fn corpus(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(name)
}

#[test]
fn field_seeds_round_trip() {
    for name in ["spatial_1d", "spacetime_2d"] {
        let bytes = fs::read(corpus("field_decode").join(name)).unwrap();
        let f = decode_field(&bytes).unwrap();
        assert_eq!(encode_field(&f), bytes);
    }
    let bytes = fs::read(corpus("field_decode").join("truncated")).unwrap();
    assert!(matches!(decode_field(&bytes), Err(FormatError::Truncated { .. })));
}

#[test]
fn expression_seeds_parse() {
    for entry in fs::read_dir(corpus("expr_parse")).unwrap() {
        let src = fs::read_to_string(entry.unwrap().path()).unwrap();
        Expr::parse(&src).unwrap();
    }
}
