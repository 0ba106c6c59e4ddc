#![no_main]

use jointspace::embeddings::{parse_text, write_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok((vocab, table)) = parse_text(text, "xx") else {
        return;
    };
    assert_eq!(vocab.len(), table.rows());
    assert!(table.as_slice().iter().all(|v| v.is_finite()));
    // Anything that writes must read back to the same model.
    let mut out = Vec::new();
    if write_text(&mut out, &vocab, &table).is_ok() {
        let again = parse_text(std::str::from_utf8(&out).unwrap(), "xx").unwrap();
        assert_eq!(again.0, vocab);
        assert_eq!(again.1, table);
    }
});
