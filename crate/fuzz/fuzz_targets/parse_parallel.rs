#![no_main]

use jointspace::corpus::{parse_parallel, tokenize};
use jointspace::vocab::build_vocab;
use libfuzzer_sys::fuzz_target;

// Input is `source NUL target`. Vocabularies come from the first half of each
// side so that unknown tokens get exercised too.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (a, b) = text.split_once('\0').unwrap_or((text, ""));
    let va = build_vocab(a.lines().take(a.lines().count() / 2 + 1).map(tokenize));
    let vb = build_vocab(b.lines().take(b.lines().count() / 2 + 1).map(tokenize));
    if let Ok(pairs) = parse_parallel(a, b, &va, &vb) {
        for (i, pair) in pairs.iter().enumerate() {
            assert_eq!(pair.index, i);
            assert!(pair.source.len() > 0 && pair.target.len() > 0);
            assert!(pair.source.tokens().iter().all(|&id| (id as usize) < va.len()));
            assert!(pair.target.tokens().iter().all(|&id| (id as usize) < vb.len()));
        }
    }
});
