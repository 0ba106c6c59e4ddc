#![no_main]

use jointspace::corpus::tokenize;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for token in tokenize(text) {
        assert!(!token.is_empty());
        assert!(!token.chars().any(char::is_whitespace));
    }
});
